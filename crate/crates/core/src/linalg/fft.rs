//! Unnormalized forward DFT: radix-2 for power-of-two lengths, Bluestein's
//! chirp-z otherwise.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{KaeError, Result};

/// Row-major complex 2-D array.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

impl ComplexField {
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }
}

/// `exp(-2πi·k/n)` with exact values on the quarter turns.
pub fn twiddle(k: usize, n: usize) -> Complex64 {
    let k = k % n;
    if (4 * k).is_multiple_of(n) {
        return match 4 * k / n {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, -1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, 1.0),
        };
    }
    let angle = -2.0 * PI * k as f64 / n as f64;
    Complex64::new(angle.cos(), angle.sin())
}

/// In-place forward DFT of any length.
pub fn fft_in_place(buf: &mut [Complex64]) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2(buf);
    } else {
        bluestein(buf);
    }
}

fn radix2(buf: &mut [Complex64]) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = twiddle(k * step, n);
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

fn bluestein(buf: &mut [Complex64]) {
    let n = buf.len();
    let m = (2 * n - 1).next_power_of_two();
    // chirp[k] = exp(-iπk²/n); k² taken mod 2n keeps the angle small.
    let chirp: Vec<Complex64> = (0..n).map(|k| twiddle((k * k) % (2 * n), 2 * n)).collect();
    let mut a = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        a[k] = buf[k] * chirp[k];
    }
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    b[0] = chirp[0].conj();
    for k in 1..n {
        b[k] = chirp[k].conj();
        b[m - k] = chirp[k].conj();
    }
    radix2(&mut a);
    radix2(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    // Inverse transform via conjugation.
    for x in a.iter_mut() {
        *x = x.conj();
    }
    radix2(&mut a);
    let scale = 1.0 / m as f64;
    for k in 0..n {
        buf[k] = a[k].conj() * scale * chirp[k];
    }
}

/// Unnormalized forward 2-D DFT of a real `height × width` field.
pub fn fft2(field: &[f64], height: usize, width: usize) -> Result<ComplexField> {
    if height == 0 || width == 0 {
        return Err(KaeError::InvalidArgument(format!(
            "fft2 extents must be >= 1, got {height}x{width}"
        )));
    }
    if field.len() != height * width {
        return Err(KaeError::shape(
            "fft2",
            format!("{height}x{width} field with {} values", field.len()),
        ));
    }
    if field.iter().any(|v| !v.is_finite()) {
        return Err(KaeError::InvalidArgument(
            "fft2 of a non-finite field".into(),
        ));
    }
    let mut data: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for row in data.chunks_exact_mut(width) {
        fft_in_place(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); height];
    for c in 0..width {
        for r in 0..height {
            column[r] = data[r * width + c];
        }
        fft_in_place(&mut column);
        for r in 0..height {
            data[r * width + c] = column[r];
        }
    }
    Ok(ComplexField {
        height,
        width,
        data,
    })
}
