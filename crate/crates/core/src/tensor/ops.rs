//! Differentiable operations on [`Var`].

use num_complex::Complex64;

use super::tape::Var;
use super::{broadcast_index, broadcast_shape, numel, reduce_broadcast, MatmulPlan, Tensor};
use crate::error::{Error, Result};

/// Pointwise real functions with known derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Exp,
    Expm1,
    Log1p,
    Neg,
    Reciprocal,
    Abs,
    Sigmoid,
    Silu,
    /// tanh approximation.
    Gelu,
    Relu,
    Softplus,
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 11] = [
        UnaryOp::Exp,
        UnaryOp::Expm1,
        UnaryOp::Log1p,
        UnaryOp::Neg,
        UnaryOp::Reciprocal,
        UnaryOp::Abs,
        UnaryOp::Sigmoid,
        UnaryOp::Silu,
        UnaryOp::Gelu,
        UnaryOp::Relu,
        UnaryOp::Softplus,
    ];

    pub fn eval(self, x: f64) -> f64 {
        match self {
            UnaryOp::Exp => x.exp(),
            UnaryOp::Expm1 => x.exp_m1(),
            UnaryOp::Log1p => x.ln_1p(),
            UnaryOp::Neg => -x,
            UnaryOp::Reciprocal => 1.0 / x,
            UnaryOp::Abs => x.abs(),
            UnaryOp::Sigmoid => sigmoid(x),
            UnaryOp::Silu => x * sigmoid(x),
            UnaryOp::Gelu => 0.5 * x * (1.0 + gelu_inner(x).tanh()),
            UnaryOp::Relu => x.max(0.0),
            UnaryOp::Softplus => softplus(x),
        }
    }

    /// `f'(x)`, given `y = f(x)`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryOp::Exp => y,
            UnaryOp::Expm1 => y + 1.0,
            UnaryOp::Log1p => 1.0 / (1.0 + x),
            UnaryOp::Neg => -1.0,
            UnaryOp::Reciprocal => -y * y,
            // subgradient 0 at the kink
            UnaryOp::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            UnaryOp::Sigmoid => y * (1.0 - y),
            UnaryOp::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            UnaryOp::Gelu => {
                let t = gelu_inner(x).tanh();
                let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
            }
            UnaryOp::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryOp::Softplus => sigmoid(x),
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu_inner(x: f64) -> f64 {
    GELU_C * (x + 0.044715 * x * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow for large `x` or underflow to zero
/// for very negative `x`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn silu(x: f64) -> f64 {
    UnaryOp::Silu.eval(x)
}

fn binary_broadcast<'t>(
    a: Var<'t>,
    b: Var<'t>,
    f: impl Fn(f64, f64) -> f64,
) -> Result<(Tensor, Tensor, Tensor, Vec<usize>, Vec<usize>, Vec<usize>)> {
    let (av, bv) = (a.value(), b.value());
    let out_shape = broadcast_shape(av.shape(), bv.shape())?;
    let ia = broadcast_index(av.shape(), &out_shape);
    let ib = broadcast_index(bv.shape(), &out_shape);
    let (ad, bd) = (av.data(), bv.data());
    let out: Vec<f64> = ia.iter().zip(&ib).map(|(&i, &j)| f(ad[i], bd[j])).collect();
    Ok((
        Tensor::real_unchecked(out_shape.clone(), out),
        av,
        bv,
        out_shape,
        ia,
        ib,
    ))
}

impl<'t> Var<'t> {
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let (out, av, bv, out_shape, _, _) = binary_broadcast(self, other, |x, y| x + y)?;
        Ok(self.tape().push(out, &[self, other], move || {
            Box::new(move |g: &Tensor| {
                let gd = g.data();
                vec![
                    Some(Tensor::real_unchecked(
                        av.shape().to_vec(),
                        reduce_broadcast(gd, av.shape(), &out_shape),
                    )),
                    Some(Tensor::real_unchecked(
                        bv.shape().to_vec(),
                        reduce_broadcast(gd, bv.shape(), &out_shape),
                    )),
                ]
            })
        }))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.add(other.neg())
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (out, av, bv, out_shape, ia, ib) = binary_broadcast(self, other, |x, y| x * y)?;
        Ok(self.tape().push(out, &[self, other], move || {
            Box::new(move |g: &Tensor| {
                let gd = g.data();
                let (ad, bd) = (av.data(), bv.data());
                let mut ga = vec![0.0; av.numel()];
                let mut gb = vec![0.0; bv.numel()];
                for (k, (&i, &j)) in ia.iter().zip(&ib).enumerate() {
                    ga[i] += gd[k] * bd[j];
                    gb[j] += gd[k] * ad[i];
                }
                let _ = out_shape;
                vec![
                    Some(Tensor::real_unchecked(av.shape().to_vec(), ga)),
                    Some(Tensor::real_unchecked(bv.shape().to_vec(), gb)),
                ]
            })
        }))
    }

    pub fn unary(self, op: UnaryOp) -> Var<'t> {
        let x = self.value();
        let y = x.map(|v| op.eval(v));
        let saved_y = y.clone();
        self.tape().push(y, &[self], move || {
            Box::new(move |g: &Tensor| {
                let data = x
                    .data()
                    .iter()
                    .zip(saved_y.data())
                    .zip(g.data())
                    .map(|((&xv, &yv), &gv)| gv * op.derivative(xv, yv))
                    .collect();
                vec![Some(Tensor::real_unchecked(x.shape().to_vec(), data))]
            })
        })
    }

    pub fn neg(self) -> Var<'t> {
        self.unary(UnaryOp::Neg)
    }
    pub fn exp(self) -> Var<'t> {
        self.unary(UnaryOp::Exp)
    }
    pub fn expm1(self) -> Var<'t> {
        self.unary(UnaryOp::Expm1)
    }
    pub fn log1p(self) -> Var<'t> {
        self.unary(UnaryOp::Log1p)
    }
    pub fn reciprocal(self) -> Var<'t> {
        self.unary(UnaryOp::Reciprocal)
    }
    pub fn abs(self) -> Var<'t> {
        self.unary(UnaryOp::Abs)
    }
    pub fn silu(self) -> Var<'t> {
        self.unary(UnaryOp::Silu)
    }
    pub fn softplus(self) -> Var<'t> {
        self.unary(UnaryOp::Softplus)
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let y = self.value().map(|v| v * s);
        self.tape().push(y, &[self], move || {
            Box::new(move |g: &Tensor| vec![Some(g.map(|v| v * s))])
        })
    }

    /// Batched matrix product; see [`Tensor::matmul`] for accepted shapes.
    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), rhs.value());
        let plan = MatmulPlan::new(a.shape(), b.shape())?;
        let out = Tensor::real_unchecked(plan.out_shape.clone(), plan.forward(a.data(), b.data()));
        Ok(self.tape().push(out, &[self, rhs], move || {
            Box::new(move |g: &Tensor| {
                let (ga, gb) = plan.backward(a.data(), b.data(), g.data());
                vec![
                    Some(Tensor::real_unchecked(a.shape().to_vec(), ga)),
                    Some(Tensor::real_unchecked(b.shape().to_vec(), gb)),
                ]
            })
        }))
    }

    /// `x·W (+ b)` over the last axis: `[.., in] → [.., out]` with
    /// `W: [in, out]`, `b: [out]`.
    pub fn linear(self, weight: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
        let shape = self.shape();
        let fan_in = *shape.last().ok_or_else(|| Error::Shape("linear on a scalar".into()))?;
        let rows = numel(&shape) / fan_in.max(1);
        let flat = self.reshape(&[rows, fan_in])?;
        let mut y = flat.matmul(weight)?;
        if let Some(b) = bias {
            y = y.add(b)?;
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = weight.shape()[1];
        y.reshape(&out_shape)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let y = x.reshape(shape)?;
        let in_shape = x.shape().to_vec();
        Ok(self.tape().push(y, &[self], move || {
            Box::new(move |g: &Tensor| vec![Some(g.reshape(&in_shape).expect("same numel"))])
        }))
    }

    /// Sum of every element, as a scalar.
    pub fn sum(self) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.tape().push(Tensor::scalar(x.sum()), &[self], move || {
            Box::new(move |g: &Tensor| vec![Some(Tensor::full(&shape, g.item()))])
        })
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().numel().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// The slice `start..start + len` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::Shape(format!(
                "narrow({axis}, {start}, {len}) out of range for {shape:?}"
            )));
        }
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let n = shape[axis];
        let xd = x.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&xd[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        Ok(self.tape().push(Tensor::real_unchecked(out_shape, out), &[self], move || {
            Box::new(move |g: &Tensor| {
                let gd = g.data();
                let mut gx = vec![0.0; numel(&shape)];
                for o in 0..outer {
                    gx[(o * n + start) * inner..(o * n + start + len) * inner]
                        .copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(Tensor::real_unchecked(shape, gx))]
            })
        }))
    }

    /// Depthwise causal convolution over the time axis.
    ///
    /// `x: [B, L, M]`, `kernel: [M, k]`; `y[b,t,m] = Σ_j kernel[m,j]·x[b,t-j,m]`
    /// with zeros before `t = 0`, so `kernel[m,0]` weights the current step.
    pub fn conv1d_causal(self, kernel: Var<'t>) -> Result<Var<'t>> {
        let (x, w) = (self.value(), kernel.value());
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 3 || ws.len() != 2 || ws[0] != xs[2] {
            return Err(Error::Shape(format!(
                "conv1d expects x [B,L,M] and kernel [M,k], got {xs:?} and {ws:?}"
            )));
        }
        let (b, l, m, k) = (xs[0], xs[1], xs[2], ws[1]);
        if k == 0 {
            return Err(Error::Config("conv1d kernel width must be at least 1".into()));
        }
        let (xd, wd) = (x.data(), w.data());
        let mut y = vec![0.0; b * l * m];
        for bi in 0..b {
            for t in 0..l {
                let dst = &mut y[(bi * l + t) * m..][..m];
                for j in 0..k.min(t + 1) {
                    let src = &xd[(bi * l + t - j) * m..][..m];
                    for c in 0..m {
                        dst[c] += wd[c * k + j] * src[c];
                    }
                }
            }
        }
        let out = Tensor::real_unchecked(vec![b, l, m], y);
        Ok(self.tape().push(out, &[self, kernel], move || {
            Box::new(move |g: &Tensor| {
                let gd = g.data();
                let (xd, wd) = (x.data(), w.data());
                let mut gx = vec![0.0; xd.len()];
                let mut gw = vec![0.0; wd.len()];
                for bi in 0..b {
                    for t in 0..l {
                        let gt = &gd[(bi * l + t) * m..][..m];
                        for j in 0..k.min(t + 1) {
                            let row = (bi * l + t - j) * m;
                            for c in 0..m {
                                gx[row + c] += wd[c * k + j] * gt[c];
                                gw[c * k + j] += xd[row + c] * gt[c];
                            }
                        }
                    }
                }
                vec![
                    Some(Tensor::real_unchecked(x.shape().to_vec(), gx)),
                    Some(Tensor::real_unchecked(w.shape().to_vec(), gw)),
                ]
            })
        }))
    }

    /// Root-mean-square normalization over the last axis with a learnable
    /// per-feature gain.
    pub fn rms_norm(self, gain: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let (x, gn) = (self.value(), gain.value());
        let m = *x.shape().last().unwrap_or(&1);
        if gn.shape() != [m] {
            return Err(Error::Shape(format!(
                "rms_norm gain {:?} does not match feature width {m}",
                gn.shape()
            )));
        }
        let rows = x.numel() / m;
        let (xd, gd) = (x.data(), gn.data());
        let mut inv = vec![0.0; rows];
        let mut y = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * m..][..m];
            let ms = row.iter().map(|v| v * v).sum::<f64>() / m as f64;
            inv[r] = 1.0 / (ms + eps).sqrt();
            for c in 0..m {
                y[r * m + c] = row[c] * inv[r] * gd[c];
            }
        }
        let out = Tensor::real_unchecked(x.shape().to_vec(), y);
        Ok(self.tape().push(out, &[self, gain], move || {
            Box::new(move |g: &Tensor| {
                let (xd, gnd, gy) = (x.data(), gn.data(), g.data());
                let mut gx = vec![0.0; xd.len()];
                let mut ggain = vec![0.0; m];
                for r in 0..rows {
                    let s = inv[r];
                    let mut dot = 0.0;
                    for c in 0..m {
                        let u = xd[r * m + c] * s;
                        let gu = gy[r * m + c] * gnd[c];
                        ggain[c] += gy[r * m + c] * u;
                        dot += gu * u;
                    }
                    dot /= m as f64;
                    for c in 0..m {
                        let u = xd[r * m + c] * s;
                        let gu = gy[r * m + c] * gnd[c];
                        gx[r * m + c] = (gu - u * dot) * s;
                    }
                }
                vec![
                    Some(Tensor::real_unchecked(x.shape().to_vec(), gx)),
                    Some(Tensor::real_unchecked(vec![m], ggain)),
                ]
            })
        }))
    }

    /// Combines real and imaginary parts into a complex tensor.
    pub fn complex(re: Var<'t>, im: Var<'t>) -> Result<Var<'t>> {
        let (r, i) = (re.value(), im.value());
        if r.shape() != i.shape() {
            return Err(Error::Shape(format!(
                "complex parts differ in shape: {:?} vs {:?}",
                r.shape(),
                i.shape()
            )));
        }
        let z: Vec<Complex64> = r
            .data()
            .iter()
            .zip(i.data())
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect();
        let shape = r.shape().to_vec();
        let out = Tensor::complex_unchecked(shape.clone(), z);
        Ok(re.tape().push(out, &[re, im], move || {
            Box::new(move |g: &Tensor| {
                let gd = g.cdata();
                vec![
                    Some(Tensor::real_unchecked(shape.clone(), gd.iter().map(|z| z.re).collect())),
                    Some(Tensor::real_unchecked(shape, gd.iter().map(|z| z.im).collect())),
                ]
            })
        }))
    }
}
