//! Discrete Fourier transforms, mode truncation and per-mode channel mixing.
//!
//! The functions here are reference implementations over plain tensors. The
//! differentiable, truncation-aware versions used inside the model live in
//! [`diff`] and are checked against these.
//!
//! Conventions: forward transforms are unnormalized, inverse transforms carry
//! `1/n`, and a truncated spectrum is zero-padded back to full length before
//! inversion.

pub mod backend;
pub mod diff;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::{numel, Storage, Tensor};

pub use backend::{dft_backends, DftBackend, NaiveDft, Radix2Fft};

/// Spectrum of a length-`len` signal, one column per channel.
#[derive(Clone, Debug)]
pub struct Spectrum1d {
    /// complex `[len, d]` (or `[len]` for a single channel)
    pub coeffs: Tensor,
    pub len: usize,
}

/// Spectrum of an `h × w` field, one plane per channel.
#[derive(Clone, Debug)]
pub struct Spectrum2d {
    /// complex `[h, w, d]` (or `[h, w]`)
    pub coeffs: Tensor,
    pub h: usize,
    pub w: usize,
}

fn to_complex(x: &Tensor) -> Vec<Complex64> {
    match x.storage() {
        Storage::Real(v) => v.iter().map(|&r| Complex64::new(r, 0.0)).collect(),
        Storage::Complex(v) => v.clone(),
    }
}

/// Real part of a complex tensor (identity on real tensors).
pub fn real_part(x: &Tensor) -> Tensor {
    match x.storage() {
        Storage::Real(_) => x.clone(),
        Storage::Complex(v) => Tensor::real_unchecked(x.shape().to_vec(), v.iter().map(|z| z.re).collect()),
    }
}

/// Applies `backend` along `axis` of a row-major buffer.
fn transform_axis(
    data: &[Complex64],
    shape: &[usize],
    axis: usize,
    inverse: bool,
    backend: &dyn DftBackend,
) -> Vec<Complex64> {
    let n = shape[axis];
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for o in 0..outer {
        for i in 0..inner {
            for (x, slot) in line.iter_mut().enumerate() {
                *slot = data[(o * n + x) * inner + i];
            }
            for (k, v) in backend.transform(&line, inverse).into_iter().enumerate() {
                out[(o * n + k) * inner + i] = v;
            }
        }
    }
    out
}

/// `X[k,c] = Σ_x x[x,c]·e^{-2πi·kx/M}` with the reference kernel.
pub fn dft1d(x: &Tensor) -> Result<Spectrum1d> {
    dft1d_with(x, &NaiveDft)
}

pub fn dft1d_with(x: &Tensor, backend: &dyn DftBackend) -> Result<Spectrum1d> {
    if x.rank() == 0 || x.rank() > 2 || x.shape()[0] == 0 {
        return Err(Error::Shape(format!("dft1d expects [M] or [M,d] with M ≥ 1, got {:?}", x.shape())));
    }
    let data = transform_axis(&to_complex(x), x.shape(), 0, false, backend);
    Ok(Spectrum1d {
        coeffs: Tensor::complex_unchecked(x.shape().to_vec(), data),
        len: x.shape()[0],
    })
}

/// Inverse DFT with `1/M` normalization. Coefficients beyond those stored in
/// `s` are treated as zero. The result is complex; see [`real_part`].
pub fn idft1d(s: &Spectrum1d, len: usize) -> Result<Tensor> {
    let stored = s.coeffs.shape()[0];
    if stored > len || len == 0 {
        return Err(Error::Shape(format!("{stored} coefficients cannot be inverted to length {len}")));
    }
    let mut shape = s.coeffs.shape().to_vec();
    let inner = numel(&shape[1..]);
    shape[0] = len;
    let mut padded = vec![Complex64::new(0.0, 0.0); len * inner];
    padded[..stored * inner].copy_from_slice(s.coeffs.cdata());
    let scale = 1.0 / len as f64;
    let data = transform_axis(&padded, &shape, 0, true, &NaiveDft)
        .into_iter()
        .map(|z| z * scale)
        .collect();
    Ok(Tensor::complex_unchecked(shape, data))
}

/// Zeroes every mode `k ≥ m`.
pub fn truncate_modes(s: &Spectrum1d, m: usize) -> Result<Spectrum1d> {
    let len = s.coeffs.shape()[0];
    if m == 0 || m > len {
        return Err(Error::Config(format!("mode count {m} outside 1..={len}")));
    }
    let inner = numel(&s.coeffs.shape()[1..]);
    let mut data = s.coeffs.cdata().to_vec();
    for z in &mut data[m * inner..] {
        *z = Complex64::new(0.0, 0.0);
    }
    Ok(Spectrum1d {
        coeffs: Tensor::complex_unchecked(s.coeffs.shape().to_vec(), data),
        len: s.len,
    })
}

/// `û[k,c'] = Σ_c ŝ[k,c]·W[k,c,c']` for `k < m`; higher modes are zero.
pub fn frequency_mix(s: &Spectrum1d, weights: &Tensor) -> Result<Spectrum1d> {
    let cs = s.coeffs.shape();
    let ws = weights.shape();
    let d = if cs.len() == 2 { cs[1] } else { 1 };
    if ws.len() != 3 || ws[1] != d || ws[0] > cs[0] || !weights.is_complex() {
        return Err(Error::Shape(format!(
            "frequency_mix weights {ws:?} incompatible with spectrum {cs:?}"
        )));
    }
    let (m, e) = (ws[0], ws[2]);
    let (sd, wd) = (s.coeffs.cdata(), weights.cdata());
    let mut out = vec![Complex64::new(0.0, 0.0); cs[0] * e];
    for k in 0..m {
        for c in 0..d {
            let v = sd[k * d + c];
            for o in 0..e {
                out[k * e + o] += v * wd[(k * d + c) * e + o];
            }
        }
    }
    Ok(Spectrum1d {
        coeffs: Tensor::complex_unchecked(vec![cs[0], e], out),
        len: s.len,
    })
}

fn check_field(x: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    match s.len() {
        2 => Ok((s[0], s[1], 1)),
        3 => Ok((s[0], s[1], s[2])),
        _ => Err(Error::Shape(format!("{what} expects [H,W] or [H,W,d], got {s:?}"))),
    }
}

/// Separable 2D DFT: along rows (the `W` axis), then along columns.
pub fn dft2d(x: &Tensor) -> Result<Spectrum2d> {
    let (h, w, d) = check_field(x, "dft2d")?;
    let shape = [h, w, d];
    let rows = transform_axis(&to_complex(x), &shape, 1, false, &NaiveDft);
    let full = transform_axis(&rows, &shape, 0, false, &NaiveDft);
    Ok(Spectrum2d {
        coeffs: Tensor::complex_unchecked(x.shape().to_vec(), full),
        h,
        w,
    })
}

/// Inverse of [`dft2d`] with `1/(H·W)` normalization; complex result.
pub fn idft2d(s: &Spectrum2d) -> Result<Tensor> {
    let (h, w, d) = check_field(&s.coeffs, "idft2d")?;
    let shape = [h, w, d];
    let cols = transform_axis(s.coeffs.cdata(), &shape, 0, true, &NaiveDft);
    let scale = 1.0 / (h * w) as f64;
    let data = transform_axis(&cols, &shape, 1, true, &NaiveDft)
        .into_iter()
        .map(|z| z * scale)
        .collect();
    Ok(Tensor::complex_unchecked(s.coeffs.shape().to_vec(), data))
}

/// Index of the conjugate partner of mode `(kh, kw)`.
pub fn conjugate_partner(kh: usize, kw: usize, h: usize, w: usize) -> (usize, usize) {
    ((h - kh) % h, (w - kw) % w)
}

fn check_modes2d(h: usize, w: usize, mh: usize, mw: usize) -> Result<()> {
    if mh == 0 || mw == 0 || mh > h || mw > w {
        return Err(Error::Config(format!(
            "2D mode counts ({mh}, {mw}) must lie in 1..={h} × 1..={w}"
        )));
    }
    Ok(())
}

/// Keeps the `mh × mw` low-frequency corner and the conjugate partners of
/// those modes; everything else is zeroed.
pub fn truncate_modes2d(s: &Spectrum2d, mh: usize, mw: usize) -> Result<Spectrum2d> {
    let (h, w, d) = check_field(&s.coeffs, "truncate_modes2d")?;
    check_modes2d(h, w, mh, mw)?;
    let src = s.coeffs.cdata();
    let mut out = vec![Complex64::new(0.0, 0.0); src.len()];
    for kh in 0..mh {
        for kw in 0..mw {
            let (ph, pw) = conjugate_partner(kh, kw, h, w);
            for c in 0..d {
                out[(kh * w + kw) * d + c] = src[(kh * w + kw) * d + c];
                out[(ph * w + pw) * d + c] = src[(ph * w + pw) * d + c];
            }
        }
    }
    Ok(Spectrum2d {
        coeffs: Tensor::complex_unchecked(s.coeffs.shape().to_vec(), out),
        h,
        w,
    })
}

/// Mixes channels of every corner mode with `weights: [mh, mw, d, e]` and
/// fills the conjugate partners so that the inverse of a real field's
/// spectrum stays real.
pub fn frequency_mix2d(s: &Spectrum2d, weights: &Tensor) -> Result<Spectrum2d> {
    let (h, w, d) = check_field(&s.coeffs, "frequency_mix2d")?;
    let ws = weights.shape();
    if ws.len() != 4 || ws[2] != d || !weights.is_complex() {
        return Err(Error::Shape(format!(
            "frequency_mix2d weights {ws:?} incompatible with spectrum {:?}",
            s.coeffs.shape()
        )));
    }
    let (mh, mw, e) = (ws[0], ws[1], ws[3]);
    check_modes2d(h, w, mh, mw)?;
    let (sd, wd) = (s.coeffs.cdata(), weights.cdata());
    let mut out = vec![Complex64::new(0.0, 0.0); h * w * e];
    let in_corner = |kh: usize, kw: usize| kh < mh && kw < mw;
    for kh in 0..mh {
        for kw in 0..mw {
            let mut mixed = vec![Complex64::new(0.0, 0.0); e];
            for c in 0..d {
                let v = sd[(kh * w + kw) * d + c];
                for (o, slot) in mixed.iter_mut().enumerate() {
                    *slot += v * wd[(((kh * mw) + kw) * d + c) * e + o];
                }
            }
            out[(kh * w + kw) * e..][..e].copy_from_slice(&mixed);
            let (ph, pw) = conjugate_partner(kh, kw, h, w);
            if !in_corner(ph, pw) {
                for (o, z) in mixed.iter().enumerate() {
                    out[(ph * w + pw) * e + o] = z.conj();
                }
            }
        }
    }
    Ok(Spectrum2d {
        coeffs: Tensor::complex_unchecked(vec![h, w, e], out),
        h,
        w,
    })
}

/// `Σ|z|²` over a tensor.
pub fn energy(x: &Tensor) -> f64 {
    match x.storage() {
        Storage::Real(v) => v.iter().map(|a| a * a).sum(),
        Storage::Complex(v) => v.iter().map(|z| z.norm_sqr()).sum(),
    }
}
