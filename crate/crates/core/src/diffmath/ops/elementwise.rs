//! Elementwise binary/unary ops with same-rank broadcasting.

use crate::diffmath::tape::{accumulate, GradMap, Record, Tape};
use crate::diffmath::tensor::{broadcast_shape, strides_of, Tensor};
use crate::error::Result;

/// Inputs to `ln` are clamped below at this value so downstream losses
/// stay finite.
pub const LOG_CLAMP: f64 = 1e-6;

/// Guard for the sqrt gradient at 0 (the kink): keeps backward finite on
/// exactly-zero outputs instead of poisoning the whole pass with NaN.
const SQRT_GRAD_GUARD: f64 = 1e-12;

/// Effective strides for broadcasting: size-1 dims contribute stride 0.
fn bcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let s = strides_of(shape);
    shape
        .iter()
        .zip(&s)
        .zip(out_shape)
        .map(|((&d, &st), &od)| if d == 1 && od != 1 { 0 } else { st })
        .collect()
}

/// Apply `f` elementwise over the broadcast of `a` and `b`.
fn zip_broadcast(
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    let n: usize = out_shape.iter().product();
    let sa = bcast_strides(a.shape(), &out_shape);
    let sb = bcast_strides(b.shape(), &out_shape);
    let ad = a.data();
    let bd = b.data();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let mut oa = 0usize;
    let mut ob = 0usize;
    for _ in 0..n {
        out.push(f(ad[oa], bd[ob]));
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
        }
    }
    Ok((out_shape, out))
}

/// Sum `grad` (shaped `grad_shape`) down to `target_shape` over the dims
/// that were broadcast.
pub(crate) fn reduce_to_shape(grad: &[f64], grad_shape: &[usize], target_shape: &[usize]) -> Vec<f64> {
    if grad_shape == target_shape {
        return grad.to_vec();
    }
    let tn: usize = target_shape.iter().product();
    let mut out = vec![0.0; tn];
    let st = bcast_strides(target_shape, grad_shape);
    let mut idx = vec![0usize; grad_shape.len()];
    let mut ot = 0usize;
    for &g in grad {
        out[ot] += g;
        for d in (0..grad_shape.len()).rev() {
            idx[d] += 1;
            ot += st[d];
            if idx[d] < grad_shape[d] {
                break;
            }
            idx[d] = 0;
            ot -= st[d] * grad_shape[d];
        }
    }
    out
}

fn unary(
    tape: &Tape,
    a: &Tensor,
    f: impl Fn(f64) -> f64,
    make: impl FnOnce(Tensor, Tensor) -> Record,
) -> Tensor {
    let data: Vec<f64> = a.data().iter().map(|&v| f(v)).collect();
    let mut out = Tensor::new(a.shape().to_vec(), data).expect("unary shape");
    if tape.tracks(&[a]) {
        out = out.with_grad();
        tape.push(make(a.clone(), out.clone()));
    }
    out
}

impl Tape {
    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (shape, data) = zip_broadcast(a, b, |x, y| x + y)?;
        let mut out = Tensor::new(shape, data)?;
        if self.tracks(&[a, b]) {
            out = out.with_grad();
            self.push(Record::Add { a: a.clone(), b: b.clone(), out: out.id() });
        }
        Ok(out)
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (shape, data) = zip_broadcast(a, b, |x, y| x - y)?;
        let mut out = Tensor::new(shape, data)?;
        if self.tracks(&[a, b]) {
            out = out.with_grad();
            self.push(Record::Sub { a: a.clone(), b: b.clone(), out: out.id() });
        }
        Ok(out)
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (shape, data) = zip_broadcast(a, b, |x, y| x * y)?;
        let mut out = Tensor::new(shape, data)?;
        if self.tracks(&[a, b]) {
            out = out.with_grad();
            self.push(Record::Mul { a: a.clone(), b: b.clone(), out: out.id() });
        }
        Ok(out)
    }

    pub fn div(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (shape, data) = zip_broadcast(a, b, |x, y| x / y)?;
        let mut out = Tensor::new(shape, data)?;
        if self.tracks(&[a, b]) {
            out = out.with_grad();
            self.push(Record::Div { a: a.clone(), b: b.clone(), out: out.id() });
        }
        Ok(out)
    }

    pub fn add_scalar(&self, a: &Tensor, k: f64) -> Tensor {
        let data: Vec<f64> = a.data().iter().map(|v| v + k).collect();
        let mut out = Tensor::new(a.shape().to_vec(), data).expect("add_scalar shape");
        if self.tracks(&[a]) {
            out = out.with_grad();
            self.push(Record::AddScalar { a: a.clone(), out: out.id() });
        }
        out
    }

    pub fn mul_scalar(&self, a: &Tensor, k: f64) -> Tensor {
        let data: Vec<f64> = a.data().iter().map(|v| v * k).collect();
        let mut out = Tensor::new(a.shape().to_vec(), data).expect("mul_scalar shape");
        if self.tracks(&[a]) {
            out = out.with_grad();
            self.push(Record::MulScalar { a: a.clone(), k, out: out.id() });
        }
        out
    }

    pub fn neg(&self, a: &Tensor) -> Tensor {
        self.mul_scalar(a, -1.0)
    }

    pub fn abs(&self, a: &Tensor) -> Tensor {
        unary(self, a, f64::abs, |a, out| Record::Abs { a, out: out.id() })
    }

    pub fn exp(&self, a: &Tensor) -> Tensor {
        let data: Vec<f64> = a.data().iter().map(|v| v.exp()).collect();
        let mut out = Tensor::new(a.shape().to_vec(), data).expect("exp shape");
        if self.tracks(&[a]) {
            out = out.with_grad();
            self.push(Record::Exp { a: a.clone(), y: out.clone(), out: out.id() });
        }
        out
    }

    /// Natural log with the input clamped below at [`LOG_CLAMP`].
    pub fn ln(&self, a: &Tensor) -> Tensor {
        unary(self, a, |v| v.max(LOG_CLAMP).ln(), |a, out| Record::Ln { a, out: out.id() })
    }

    pub fn sqrt(&self, a: &Tensor) -> Tensor {
        let data: Vec<f64> = a.data().iter().map(|v| v.sqrt()).collect();
        let mut out = Tensor::new(a.shape().to_vec(), data).expect("sqrt shape");
        if self.tracks(&[a]) {
            out = out.with_grad();
            self.push(Record::Sqrt { a: a.clone(), y: out.clone(), out: out.id() });
        }
        out
    }

    /// Elementwise `a^p` for scalar `p`. Intended for non-negative bases.
    pub fn pow_scalar(&self, a: &Tensor, p: f64) -> Tensor {
        unary(self, a, |v| v.powf(p), move |a, out| Record::PowScalar { a, p, out: out.id() })
    }

    pub fn relu(&self, a: &Tensor) -> Tensor {
        unary(self, a, |v| v.max(0.0), |a, out| Record::Relu { a, out: out.id() })
    }

    /// Clamp into `[lo, hi]`; gradient passes only strictly inside the range.
    pub fn clamp(&self, a: &Tensor, lo: f64, hi: f64) -> Tensor {
        unary(self, a, |v| v.clamp(lo, hi), move |a, out| Record::Clamp {
            a,
            lo,
            hi,
            out: out.id(),
        })
    }
}

pub(crate) fn backprop_add(a: &Tensor, b: &Tensor, gout: &Tensor, grads: &mut GradMap) {
    accumulate(grads, a, &reduce_to_shape(gout.data(), gout.shape(), a.shape()));
    accumulate(grads, b, &reduce_to_shape(gout.data(), gout.shape(), b.shape()));
}

pub(crate) fn backprop_sub(a: &Tensor, b: &Tensor, gout: &Tensor, grads: &mut GradMap) {
    accumulate(grads, a, &reduce_to_shape(gout.data(), gout.shape(), a.shape()));
    let neg: Vec<f64> = gout.data().iter().map(|g| -g).collect();
    accumulate(grads, b, &reduce_to_shape(&neg, gout.shape(), b.shape()));
}

pub(crate) fn backprop_mul(a: &Tensor, b: &Tensor, gout: &Tensor, grads: &mut GradMap) {
    if a.requires_grad() {
        let (_, ga) = zip_broadcast(gout, b, |g, y| g * y).expect("mul grad shape");
        accumulate(grads, a, &reduce_to_shape(&ga, gout.shape(), a.shape()));
    }
    if b.requires_grad() {
        let (_, gb) = zip_broadcast(gout, a, |g, x| g * x).expect("mul grad shape");
        accumulate(grads, b, &reduce_to_shape(&gb, gout.shape(), b.shape()));
    }
}

pub(crate) fn backprop_div(a: &Tensor, b: &Tensor, gout: &Tensor, grads: &mut GradMap) {
    if a.requires_grad() {
        let (_, ga) = zip_broadcast(gout, b, |g, y| g / y).expect("div grad shape");
        accumulate(grads, a, &reduce_to_shape(&ga, gout.shape(), a.shape()));
    }
    if b.requires_grad() {
        // d(a/b)/db = -a / b^2; recompute a/b over the broadcast grid.
        let (_, q) = zip_broadcast(a, b, |x, y| x / y).expect("div grad shape");
        let (_, gb0) = zip_broadcast(gout, b, |g, y| g / y).expect("div grad shape");
        let gb: Vec<f64> = gb0.iter().zip(&q).map(|(g, qv)| -g * qv).collect();
        accumulate(grads, b, &reduce_to_shape(&gb, gout.shape(), b.shape()));
    }
}

pub(crate) fn backprop_abs(a: &Tensor, gout: &Tensor, grads: &mut GradMap) {
    let contrib: Vec<f64> = gout
        .data()
        .iter()
        .zip(a.data())
        .map(|(g, &v)| {
            if v > 0.0 {
                *g
            } else if v < 0.0 {
                -*g
            } else {
                0.0
            }
        })
        .collect();
    accumulate(grads, a, &contrib);
}

pub(crate) fn backprop_exp(a: &Tensor, y: &Tensor, gout: &Tensor, grads: &mut GradMap) {
    let contrib: Vec<f64> = gout.data().iter().zip(y.data()).map(|(g, y)| g * y).collect();
    accumulate(grads, a, &contrib);
}

pub(crate) fn backprop_ln(a: &Tensor, gout: &Tensor, grads: &mut GradMap) {
    let contrib: Vec<f64> = gout
        .data()
        .iter()
        .zip(a.data())
        .map(|(g, &v)| if v > LOG_CLAMP { g / v } else { 0.0 })
        .collect();
    accumulate(grads, a, &contrib);
}

pub(crate) fn backprop_sqrt(a: &Tensor, y: &Tensor, gout: &Tensor, grads: &mut GradMap) {
    let contrib: Vec<f64> = gout
        .data()
        .iter()
        .zip(y.data())
        .map(|(g, &yv)| g / (2.0 * yv.max(SQRT_GRAD_GUARD)))
        .collect();
    accumulate(grads, a, &contrib);
}

pub(crate) fn backprop_pow_scalar(a: &Tensor, p: f64, gout: &Tensor, grads: &mut GradMap) {
    if p == 0.0 {
        // derivative of the constant 1
        accumulate(grads, a, &vec![0.0; a.numel()]);
        return;
    }
    let contrib: Vec<f64> = gout
        .data()
        .iter()
        .zip(a.data())
        .map(|(g, &v)| g * p * v.powf(p - 1.0))
        .collect();
    accumulate(grads, a, &contrib);
}

pub(crate) fn backprop_relu(a: &Tensor, gout: &Tensor, grads: &mut GradMap) {
    let contrib: Vec<f64> = gout
        .data()
        .iter()
        .zip(a.data())
        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
        .collect();
    accumulate(grads, a, &contrib);
}

pub(crate) fn backprop_clamp(a: &Tensor, lo: f64, hi: f64, gout: &Tensor, grads: &mut GradMap) {
    let contrib: Vec<f64> = gout
        .data()
        .iter()
        .zip(a.data())
        .map(|(g, &v)| if v > lo && v < hi { *g } else { 0.0 })
        .collect();
    accumulate(grads, a, &contrib);
}
