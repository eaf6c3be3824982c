fn main() {
    std::process::exit(usp_cli::run(std::env::args_os()));
}
