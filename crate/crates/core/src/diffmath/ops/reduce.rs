//! Reductions and softmax.

use crate::diffmath::tape::{accumulate, GradMap, Record, Tape};
use crate::diffmath::tensor::Tensor;
use crate::error::{Error, Result};

/// Slice geometry for iterating along one axis: `outer` blocks of `len`
/// elements spaced by `inner`.
fn axis_geometry(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Vec<usize> {
    let mut s = shape.to_vec();
    if keepdim {
        s[axis] = 1;
    } else {
        s.remove(axis);
    }
    s
}

impl Tape {
    pub fn sum_all(&self, a: &Tensor) -> Result<Tensor> {
        let total: f64 = a.data().iter().sum();
        let mut out = Tensor::scalar(total);
        if self.tracks(&[a]) {
            out = out.with_grad();
            self.push(Record::SumAll { a: a.clone(), out: out.id() });
        }
        Ok(out)
    }

    pub fn mean_all(&self, a: &Tensor) -> Result<Tensor> {
        if a.numel() == 0 {
            return Err(Error::Contract("mean of empty tensor".into()));
        }
        let total: f64 = a.data().iter().sum();
        let mut out = Tensor::scalar(total / a.numel() as f64);
        if self.tracks(&[a]) {
            out = out.with_grad();
            self.push(Record::MeanAll { a: a.clone(), out: out.id() });
        }
        Ok(out)
    }

    pub fn sum_axis(&self, a: &Tensor, axis: usize, keepdim: bool) -> Result<Tensor> {
        let data = reduce_axis_forward(a, axis)?;
        let mut out = Tensor::new(reduced_shape(a.shape(), axis, keepdim), data)?;
        if self.tracks(&[a]) {
            out = out.with_grad();
            self.push(Record::SumAxis { a: a.clone(), axis, keepdim, out: out.id() });
        }
        Ok(out)
    }

    pub fn mean_axis(&self, a: &Tensor, axis: usize, keepdim: bool) -> Result<Tensor> {
        let n = *a
            .shape()
            .get(axis)
            .ok_or_else(|| Error::Dim(format!("axis {axis} out of range for {:?}", a.shape())))?;
        let mut data = reduce_axis_forward(a, axis)?;
        for v in &mut data {
            *v /= n as f64;
        }
        let mut out = Tensor::new(reduced_shape(a.shape(), axis, keepdim), data)?;
        if self.tracks(&[a]) {
            out = out.with_grad();
            self.push(Record::MeanAxis { a: a.clone(), axis, keepdim, out: out.id() });
        }
        Ok(out)
    }

    /// Numerically stabilized softmax along `axis`: every slice sums to 1.
    pub fn softmax(&self, a: &Tensor, axis: usize) -> Result<Tensor> {
        if axis >= a.rank() {
            return Err(Error::Dim(format!(
                "softmax axis {axis} out of range for {:?}",
                a.shape()
            )));
        }
        let (outer, len, inner) = axis_geometry(a.shape(), axis);
        let src = a.data();
        let mut data = vec![0.0; a.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = f64::NEG_INFINITY;
                for k in 0..len {
                    max = max.max(src[base + k * inner]);
                }
                let mut sum = 0.0;
                for k in 0..len {
                    let e = (src[base + k * inner] - max).exp();
                    data[base + k * inner] = e;
                    sum += e;
                }
                for k in 0..len {
                    data[base + k * inner] /= sum;
                }
            }
        }
        let mut out = Tensor::new(a.shape().to_vec(), data)?;
        if self.tracks(&[a]) {
            out = out.with_grad();
            self.push(Record::Softmax { a: a.clone(), y: out.clone(), axis, out: out.id() });
        }
        Ok(out)
    }
}

fn reduce_axis_forward(a: &Tensor, axis: usize) -> Result<Vec<f64>> {
    if axis >= a.rank() {
        return Err(Error::Dim(format!(
            "reduction axis {axis} out of range for {:?}",
            a.shape()
        )));
    }
    let (outer, len, inner) = axis_geometry(a.shape(), axis);
    let src = a.data();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for k in 0..len {
            let base = o * len * inner + k * inner;
            let dst = &mut out[o * inner..(o + 1) * inner];
            for i in 0..inner {
                dst[i] += src[base + i];
            }
        }
    }
    Ok(out)
}

pub(crate) fn backprop_sum_all(a: &Tensor, gout: &Tensor, grads: &mut GradMap) {
    let g = gout.item();
    accumulate(grads, a, &vec![g; a.numel()]);
}

pub(crate) fn backprop_mean_all(a: &Tensor, gout: &Tensor, grads: &mut GradMap) {
    let g = gout.item() / a.numel() as f64;
    accumulate(grads, a, &vec![g; a.numel()]);
}

pub(crate) fn backprop_sum_axis(
    a: &Tensor,
    axis: usize,
    _keepdim: bool,
    mean: bool,
    gout: &Tensor,
    grads: &mut GradMap,
) {
    let (outer, len, inner) = axis_geometry(a.shape(), axis);
    let scale = if mean { 1.0 / len as f64 } else { 1.0 };
    let g = gout.data();
    let mut contrib = vec![0.0; a.numel()];
    for o in 0..outer {
        for k in 0..len {
            let base = o * len * inner + k * inner;
            for i in 0..inner {
                contrib[base + i] = g[o * inner + i] * scale;
            }
        }
    }
    accumulate(grads, a, &contrib);
}

pub(crate) fn backprop_softmax(a: &Tensor, y: &Tensor, axis: usize, gout: &Tensor, grads: &mut GradMap) {
    let (outer, len, inner) = axis_geometry(a.shape(), axis);
    let yd = y.data();
    let g = gout.data();
    let mut contrib = vec![0.0; a.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = 0.0;
            for k in 0..len {
                let off = base + k * inner;
                dot += g[off] * yd[off];
            }
            for k in 0..len {
                let off = base + k * inner;
                contrib[off] = yd[off] * (g[off] - dot);
            }
        }
    }
    accumulate(grads, a, &contrib);
}
