//! Differentiable truncated transforms for real signals.
//!
//! Only the retained non-negative modes are ever computed. Inverses rebuild
//! the conjugate half implicitly, so the output is real. Backward passes use
//! the adjoint (conjugate-transpose) of each linear map.

use num_complex::Complex64;

use super::backend::twiddle;
use super::conjugate_partner;
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// `out[o, j, i] = Σ_x mat[j, x]·input[o, x, i]` on row-major buffers.
fn apply_axis(
    input: &[Complex64],
    outer: usize,
    n_in: usize,
    inner: usize,
    mat: &[Complex64],
    n_out: usize,
) -> Vec<Complex64> {
    debug_assert_eq!(input.len(), outer * n_in * inner);
    debug_assert_eq!(mat.len(), n_out * n_in);
    let mut out = vec![ZERO; outer * n_out * inner];
    for o in 0..outer {
        let src = &input[o * n_in * inner..][..n_in * inner];
        let dst = &mut out[o * n_out * inner..][..n_out * inner];
        for j in 0..n_out {
            let row = &mut dst[j * inner..][..inner];
            for x in 0..n_in {
                let coef = mat[j * n_in + x];
                for (r, &v) in row.iter_mut().zip(&src[x * inner..][..inner]) {
                    *r += coef * v;
                }
            }
        }
    }
    out
}

/// `[rows × cols]` matrix with entries `e^{sign·2πi·(row·col)/n}`.
fn dft_matrix(rows: usize, cols: usize, n: usize, sign: f64) -> Vec<Complex64> {
    let mut m = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            m.push(twiddle(r, c, n, sign));
        }
    }
    m
}

fn real_to_complex(x: &[f64]) -> Vec<Complex64> {
    x.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// Multiplicity of mode `k` in a real signal's spectrum: 1 when the mode is
/// its own conjugate partner, 2 otherwise.
fn multiplicity(self_partner: bool) -> f64 {
    if self_partner {
        1.0
    } else {
        2.0
    }
}

/// Largest number of leading modes whose conjugate partners stay outside
/// the retained set: `⌊n/2⌋ + 1`.
pub fn max_real_modes(n: usize) -> usize {
    n / 2 + 1
}

fn check_real_modes(m: usize, n: usize, what: &str) -> Result<()> {
    if m == 0 || m > max_real_modes(n) {
        return Err(Error::Config(format!(
            "{what}: {m} retained modes for length {n} (must lie in 1..={})",
            max_real_modes(n)
        )));
    }
    Ok(())
}

/// Rejects 2D corner blocks holding a mode together with its distinct
/// conjugate partner.
pub fn check_corner(mh: usize, mw: usize, h: usize, w: usize) -> Result<()> {
    if mh == 0 || mw == 0 || mh > h || mw > w {
        return Err(Error::Config(format!(
            "2D mode counts ({mh}, {mw}) must lie in 1..={h} × 1..={w}"
        )));
    }
    for kh in 0..mh {
        for kw in 0..mw {
            let (ph, pw) = conjugate_partner(kh, kw, h, w);
            if (ph, pw) != (kh, kw) && ph < mh && pw < mw {
                return Err(Error::Config(format!(
                    "2D mode block ({mh}, {mw}) on a {h}×{w} grid contains conjugate pair ({kh},{kw})/({ph},{pw})"
                )));
            }
        }
    }
    Ok(())
}

fn shape3(v: &Var<'_>, what: &str) -> Result<(usize, usize, usize)> {
    let s = v.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("{what} expects [batch, n, d], got {s:?}")));
    }
    Ok((s[0], s[1], s[2]))
}

fn shape4(v: &Var<'_>, what: &str) -> Result<(usize, usize, usize, usize)> {
    let s = v.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!("{what} expects [batch, h, w, d], got {s:?}")));
    }
    Ok((s[0], s[1], s[2], s[3]))
}

/// First `m` DFT coefficients along axis 1 of a real `[batch, M, d]` signal.
pub fn rdft_modes<'t>(x: Var<'t>, m: usize) -> Result<Var<'t>> {
    let (b, len, d) = shape3(&x, "rdft_modes")?;
    check_real_modes(m, len, "rdft_modes")?;
    let fwd = dft_matrix(m, len, len, -1.0);
    let xv = x.value();
    let out = apply_axis(&real_to_complex(xv.data()), b, len, d, &fwd, m);
    let out = Tensor::complex_unchecked(vec![b, m, d], out);
    Ok(x.tape().push(out, &[x], move || {
        Box::new(move |g: &Tensor| {
            let adj = dft_matrix(len, m, len, 1.0);
            let gx = apply_axis(g.cdata(), b, m, d, &adj, len);
            vec![Some(Tensor::real_unchecked(
                vec![b, len, d],
                gx.into_iter().map(|z| z.re).collect(),
            ))]
        })
    }))
}

/// Real signal of length `len` whose non-negative spectrum is `X[.., :m, ..]`
/// (zero elsewhere, conjugate-symmetric negative half).
pub fn irdft_modes<'t>(spec: Var<'t>, len: usize) -> Result<Var<'t>> {
    let (b, m, d) = shape3(&spec, "irdft_modes")?;
    check_real_modes(m, len, "irdft_modes")?;
    let weights: Vec<f64> = (0..m)
        .map(|k| multiplicity((2 * k) % len == 0) / len as f64)
        .collect();
    let sv = spec.value();
    let scaled: Vec<Complex64> = sv
        .cdata()
        .iter()
        .enumerate()
        .map(|(i, &z)| z * weights[(i / d) % m])
        .collect();
    let inv = dft_matrix(len, m, len, 1.0);
    let out = apply_axis(&scaled, b, m, d, &inv, len);
    let out = Tensor::real_unchecked(vec![b, len, d], out.into_iter().map(|z| z.re).collect());
    Ok(spec.tape().push(out, &[spec], move || {
        Box::new(move |g: &Tensor| {
            let fwd = dft_matrix(m, len, len, -1.0);
            let gs = apply_axis(&real_to_complex(g.data()), b, len, d, &fwd, m);
            let gs = gs
                .into_iter()
                .enumerate()
                .map(|(i, z)| z * weights[(i / d) % m])
                .collect();
            vec![Some(Tensor::complex_unchecked(vec![b, m, d], gs))]
        })
    }))
}

/// Low-frequency `mh × mw` corner of the 2D DFT of a real `[N, H, W, d]`
/// field (transform over axes 1 and 2).
pub fn rdft2_modes<'t>(x: Var<'t>, mh: usize, mw: usize) -> Result<Var<'t>> {
    let (n, h, w, d) = shape4(&x, "rdft2_modes")?;
    check_corner(mh, mw, h, w)?;
    let fw = dft_matrix(mw, w, w, -1.0);
    let fh = dft_matrix(mh, h, h, -1.0);
    let xv = x.value();
    let stage = apply_axis(&real_to_complex(xv.data()), n * h, w, d, &fw, mw);
    let out = apply_axis(&stage, n, h, mw * d, &fh, mh);
    let out = Tensor::complex_unchecked(vec![n, mh, mw, d], out);
    Ok(x.tape().push(out, &[x], move || {
        Box::new(move |g: &Tensor| {
            let bh = dft_matrix(h, mh, h, 1.0);
            let bw = dft_matrix(w, mw, w, 1.0);
            let stage = apply_axis(g.cdata(), n, mh, mw * d, &bh, h);
            let gx = apply_axis(&stage, n * h, mw, d, &bw, w);
            vec![Some(Tensor::real_unchecked(
                vec![n, h, w, d],
                gx.into_iter().map(|z| z.re).collect(),
            ))]
        })
    }))
}

/// Real `[N, H, W, d]` field whose spectrum is the given corner plus its
/// conjugate partners.
pub fn irdft2_modes<'t>(spec: Var<'t>, h: usize, w: usize) -> Result<Var<'t>> {
    let (n, mh, mw, d) = shape4(&spec, "irdft2_modes")?;
    check_corner(mh, mw, h, w)?;
    let norm = 1.0 / (h * w) as f64;
    let mut weights = vec![0.0; mh * mw];
    for kh in 0..mh {
        for kw in 0..mw {
            let self_partner = conjugate_partner(kh, kw, h, w) == (kh, kw);
            weights[kh * mw + kw] = multiplicity(self_partner) * norm;
        }
    }
    let sv = spec.value();
    let scaled: Vec<Complex64> = sv
        .cdata()
        .iter()
        .enumerate()
        .map(|(i, &z)| z * weights[(i / d) % (mh * mw)])
        .collect();
    let bh = dft_matrix(h, mh, h, 1.0);
    let bw = dft_matrix(w, mw, w, 1.0);
    let stage = apply_axis(&scaled, n, mh, mw * d, &bh, h);
    let out = apply_axis(&stage, n * h, mw, d, &bw, w);
    let out = Tensor::real_unchecked(vec![n, h, w, d], out.into_iter().map(|z| z.re).collect());
    Ok(spec.tape().push(out, &[spec], move || {
        Box::new(move |g: &Tensor| {
            let fw = dft_matrix(mw, w, w, -1.0);
            let fh = dft_matrix(mh, h, h, -1.0);
            let stage = apply_axis(&real_to_complex(g.data()), n * h, w, d, &fw, mw);
            let gs = apply_axis(&stage, n, h, mw * d, &fh, mh);
            let gs = gs
                .into_iter()
                .enumerate()
                .map(|(i, z)| z * weights[(i / d) % (mh * mw)])
                .collect();
            vec![Some(Tensor::complex_unchecked(vec![n, mh, mw, d], gs))]
        })
    }))
}

/// Per-mode channel mixing: `out[b,k,e] = Σ_c x[b,k,c]·w[k,c,e]` over complex
/// `x: [batch, K, d]` and `w: [K, d, e]`.
pub fn mode_mix<'t>(x: Var<'t>, w: Var<'t>) -> Result<Var<'t>> {
    let (xv, wv) = (x.value(), w.value());
    let (xs, ws) = (xv.shape().to_vec(), wv.shape().to_vec());
    if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[0] || xs[2] != ws[1] || !xv.is_complex() || !wv.is_complex() {
        return Err(Error::Shape(format!(
            "mode_mix expects complex x [batch,K,d] and w [K,d,e], got {xs:?} and {ws:?}"
        )));
    }
    let (b, k, d, e) = (xs[0], xs[1], xs[2], ws[2]);
    let mut out = vec![ZERO; b * k * e];
    {
        let (xd, wd) = (xv.cdata(), wv.cdata());
        for bi in 0..b {
            for ki in 0..k {
                let dst = &mut out[(bi * k + ki) * e..][..e];
                for c in 0..d {
                    let v = xd[(bi * k + ki) * d + c];
                    for (o, slot) in dst.iter_mut().enumerate() {
                        *slot += v * wd[(ki * d + c) * e + o];
                    }
                }
            }
        }
    }
    let out = Tensor::complex_unchecked(vec![b, k, e], out);
    Ok(x.tape().push(out, &[x, w], move || {
        Box::new(move |g: &Tensor| {
            let (xd, wd, gd) = (xv.cdata(), wv.cdata(), g.cdata());
            let mut gx = vec![ZERO; xd.len()];
            let mut gw = vec![ZERO; wd.len()];
            for bi in 0..b {
                for ki in 0..k {
                    let grow = &gd[(bi * k + ki) * e..][..e];
                    for c in 0..d {
                        let xi = (bi * k + ki) * d + c;
                        let xc = xd[xi].conj();
                        let wrow = &wd[(ki * d + c) * e..][..e];
                        let mut acc = ZERO;
                        for o in 0..e {
                            acc += grow[o] * wrow[o].conj();
                        }
                        gx[xi] += acc;
                        let gwrow = &mut gw[(ki * d + c) * e..][..e];
                        for o in 0..e {
                            gwrow[o] += xc * grow[o];
                        }
                    }
                }
            }
            vec![
                Some(Tensor::complex_unchecked(xs, gx)),
                Some(Tensor::complex_unchecked(ws, gw)),
            ]
        })
    }))
}
