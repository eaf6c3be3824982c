//! Discrete Fourier transform for arbitrary lengths.
//!
//! Power-of-two lengths use an iterative radix-2 kernel; every other length
//! goes through Bluestein's chirp-z algorithm on a padded power-of-two
//! convolution. The inverse transform carries the `1/N` factor.

use num_complex::Complex64;
use std::f64::consts::PI;

/// Forward (`inverse = false`) or inverse DFT of `signal`.
///
/// Forward: `X[k] = sum_n x[n] exp(-2 pi i k n / N)`.
/// Inverse: `x[n] = (1/N) sum_k X[k] exp(+2 pi i k n / N)`.
pub fn fft(signal: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = signal.len();
    if n <= 1 {
        return signal.to_vec();
    }
    let mut out = signal.to_vec();
    if n.is_power_of_two() {
        radix2_in_place(&mut out, inverse);
    } else {
        out = bluestein(signal, inverse);
    }
    if inverse {
        let scale = 1.0 / n as f64;
        out.iter_mut().for_each(|v| *v *= scale);
    }
    out
}

/// Forward DFT of a real sequence.
pub fn fft_real(signal: &[f64]) -> Vec<Complex64> {
    let buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft(&buf, false)
}

/// Unscaled in-place radix-2 transform. `data.len()` must be a power of two.
fn radix2_in_place(data: &mut [Complex64], inverse: bool) {
    let n = data.len();
    debug_assert!(n.is_power_of_two());
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            data.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        // twiddles computed directly per index to avoid recurrence drift
        let twiddles: Vec<Complex64> = (0..half)
            .map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / len as f64))
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = data[start + k];
                let b = data[start + k + half] * twiddles[k];
                data[start + k] = a + b;
                data[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

/// Unscaled DFT of arbitrary length via chirp-z.
fn bluestein(signal: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = signal.len();
    let m = (2 * n - 1).next_power_of_two();
    let sign = if inverse { 1.0 } else { -1.0 };
    // k^2 reduced mod 2n keeps the chirp argument small
    let two_n = 2 * n as u128;
    let chirp: Vec<Complex64> = (0..n)
        .map(|k| {
            let k2 = (k as u128 * k as u128) % two_n;
            Complex64::from_polar(1.0, sign * PI * k2 as f64 / n as f64)
        })
        .collect();

    let mut a = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        a[k] = signal[k] * chirp[k];
    }
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    b[0] = chirp[0].conj();
    for k in 1..n {
        b[k] = chirp[k].conj();
        b[m - k] = chirp[k].conj();
    }
    radix2_in_place(&mut a, false);
    radix2_in_place(&mut b, false);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    radix2_in_place(&mut a, true);
    let scale = 1.0 / m as f64;
    (0..n).map(|k| a[k] * scale * chirp[k]).collect()
}
