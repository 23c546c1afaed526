//! Interchangeable 1D DFT kernels.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::registry::Registry;

/// An unnormalized 1D transform: `X[k] = Σ_x x[x]·e^{∓2πi·kx/n}`
/// (`-` forward, `+` inverse).
pub trait DftBackend: Send + Sync {
    fn name(&self) -> &'static str;
    fn transform(&self, x: &[Complex64], inverse: bool) -> Vec<Complex64>;
}

/// `e^{sign·2πi·(k·x mod n)/n}`; reducing the product first keeps the angle
/// exact for large indices.
///
/// Angles are taken in `(-π, π]` and quarter turns are exact, so modes `k`
/// and `n − k` get bitwise-conjugate factors and the spectrum of a real
/// signal is exactly Hermitian.
pub fn twiddle(k: usize, x: usize, n: usize, sign: f64) -> Complex64 {
    let r = (k * x) % n;
    if (4 * r) % n == 0 {
        let (re, im) = match 4 * r / n {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        };
        return Complex64::new(re, sign * im);
    }
    let r = if 2 * r > n { r as f64 - n as f64 } else { r as f64 };
    let theta = sign * 2.0 * PI * r / n as f64;
    Complex64::new(theta.cos(), theta.sin())
}

/// Direct O(n²) evaluation of the defining sum.
pub struct NaiveDft;

impl DftBackend for NaiveDft {
    fn name(&self) -> &'static str {
        "naive"
    }

    fn transform(&self, x: &[Complex64], inverse: bool) -> Vec<Complex64> {
        let n = x.len();
        let sign = if inverse { 1.0 } else { -1.0 };
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, &v)| v * twiddle(k, j, n, sign))
                    .sum()
            })
            .collect()
    }
}

/// Iterative radix-2 Cooley-Tukey; lengths that are not powers of two fall
/// back to the direct sum.
pub struct Radix2Fft;

impl DftBackend for Radix2Fft {
    fn name(&self) -> &'static str {
        "radix2"
    }

    fn transform(&self, x: &[Complex64], inverse: bool) -> Vec<Complex64> {
        let n = x.len();
        if n <= 1 || !n.is_power_of_two() {
            return NaiveDft.transform(x, inverse);
        }
        let sign = if inverse { 1.0 } else { -1.0 };
        let bits = n.trailing_zeros();
        let mut a: Vec<Complex64> = (0..n)
            .map(|i| x[i.reverse_bits() >> (usize::BITS - bits)])
            .collect();
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for j in 0..half {
                    let w = twiddle(j * stride, 1, n, sign);
                    let u = a[start + j];
                    let v = a[start + j + half] * w;
                    a[start + j] = u + v;
                    a[start + j + half] = u - v;
                }
            }
            len <<= 1;
        }
        a
    }
}

pub fn dft_backends() -> Registry<dyn DftBackend> {
    let mut reg: Registry<dyn DftBackend> = Registry::new("DFT backend");
    reg.register("naive", "direct O(n^2) sum (reference)", |_| Ok(Box::new(NaiveDft)))
        .register("radix2", "radix-2 FFT for power-of-two lengths", |_| {
            Ok(Box::new(Radix2Fft))
        });
    reg
}
