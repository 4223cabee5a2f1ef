//! Matrix products and shape manipulation.

use crate::diffmath::tape::{accumulate, GradMap, Record, Tape};
use crate::diffmath::tensor::{strides_of, Tensor};
use crate::error::{Error, Result};

/// `out[m x n] += A[m x k] * B[k x n]` over flat slices.
fn matmul_kernel(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] += aik * brow[j];
            }
        }
    }
}

/// `dB[k x n] += A^T[k x m] * G[m x n]`.
fn matmul_at_g(a: &[f64], g: &[f64], db: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let brow = &mut db[kk * n..(kk + 1) * n];
            for j in 0..n {
                brow[j] += aik * grow[j];
            }
        }
    }
}

/// `dA[m x k] += G[m x n] * B^T[n x k]`.
fn matmul_g_bt(g: &[f64], b: &[f64], da: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        let arow = &mut da[i * k..(i + 1) * k];
        for kk in 0..k {
            let brow = &b[kk * n..(kk + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += grow[j] * brow[j];
            }
            arow[kk] += acc;
        }
    }
}

impl Tape {
    /// 2-D matrix product `[m x k] * [k x n] -> [m x n]`.
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
            return Err(Error::Dim(format!(
                "matmul expects rank-2 inputs, got {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        };
        if k != k2 {
            return Err(Error::Dim(format!(
                "matmul inner dims disagree: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let mut data = vec![0.0; m * n];
        matmul_kernel(a.data(), b.data(), &mut data, m, k, n);
        let mut out = Tensor::new(vec![m, n], data)?;
        if self.tracks(&[a, b]) {
            out = out.with_grad();
            self.push(Record::Matmul { a: a.clone(), b: b.clone(), out: out.id() });
        }
        Ok(out)
    }

    /// Batched matrix product `[B x m x k] * [B x k x n] -> [B x m x n]`.
    pub fn bmm(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (&[ba, m, k], &[bb, k2, n]) = (a.shape(), b.shape()) else {
            return Err(Error::Dim(format!(
                "bmm expects rank-3 inputs, got {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        };
        if ba != bb || k != k2 {
            return Err(Error::Dim(format!(
                "bmm shapes disagree: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let mut data = vec![0.0; ba * m * n];
        for bi in 0..ba {
            matmul_kernel(
                &a.data()[bi * m * k..(bi + 1) * m * k],
                &b.data()[bi * k * n..(bi + 1) * k * n],
                &mut data[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut out = Tensor::new(vec![ba, m, n], data)?;
        if self.tracks(&[a, b]) {
            out = out.with_grad();
            self.push(Record::Bmm { a: a.clone(), b: b.clone(), out: out.id() });
        }
        Ok(out)
    }

    /// Same elements, new shape (element count must match).
    pub fn reshape(&self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != a.numel() {
            return Err(Error::Dim(format!(
                "reshape {:?} -> {:?} changes element count",
                a.shape(),
                shape
            )));
        }
        let mut out = Tensor::new(shape.to_vec(), a.data().to_vec())?;
        if self.tracks(&[a]) {
            out = out.with_grad();
            self.push(Record::Reshape { a: a.clone(), out: out.id() });
        }
        Ok(out)
    }

    /// Permute axes, materializing the result.
    pub fn permute(&self, a: &Tensor, axes: &[usize]) -> Result<Tensor> {
        let r = a.rank();
        let mut seen = vec![false; r];
        if axes.len() != r || axes.iter().any(|&ax| ax >= r || std::mem::replace(&mut seen[ax], true)) {
            return Err(Error::Dim(format!(
                "invalid permutation {:?} for rank {}",
                axes, r
            )));
        }
        let data = permute_data(a.data(), a.shape(), axes);
        let new_shape: Vec<usize> = axes.iter().map(|&ax| a.shape()[ax]).collect();
        let mut out = Tensor::new(new_shape, data)?;
        if self.tracks(&[a]) {
            out = out.with_grad();
            self.push(Record::Permute { a: a.clone(), axes: axes.to_vec(), out: out.id() });
        }
        Ok(out)
    }

    /// Concatenate along `axis`; all other dims must agree.
    pub fn concat(&self, parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let r = first.rank();
        if axis >= r {
            return Err(Error::Dim(format!("concat axis {axis} out of range")));
        }
        let mut axis_total = 0;
        for p in parts {
            if p.rank() != r
                || p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .any(|(d, (x, y))| d != axis && x != y)
            {
                return Err(Error::Dim(format!(
                    "concat shapes disagree off-axis: {:?} vs {:?}",
                    p.shape(),
                    first.shape()
                )));
            }
            axis_total += p.shape()[axis];
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = axis_total;
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let len = p.shape()[axis] * inner;
                data.extend_from_slice(&p.data()[o * len..(o + 1) * len]);
            }
        }
        let mut out = Tensor::new(shape, data)?;
        let refs: Vec<&Tensor> = parts.to_vec();
        if self.tracks(&refs) {
            out = out.with_grad();
            self.push(Record::Concat {
                inputs: parts.iter().map(|&p| p.clone()).collect(),
                axis,
                out: out.id(),
            });
        }
        Ok(out)
    }
}

pub(crate) fn permute_data(src: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let new_shape: Vec<usize> = axes.iter().map(|&ax| shape[ax]).collect();
    let src_strides = strides_of(shape);
    // stride in src per new-shape dim
    let step: Vec<usize> = axes.iter().map(|&ax| src_strides[ax]).collect();
    let n: usize = shape.iter().product();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; new_shape.len()];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(src[off]);
        for d in (0..new_shape.len()).rev() {
            idx[d] += 1;
            off += step[d];
            if idx[d] < new_shape[d] {
                break;
            }
            idx[d] = 0;
            off -= step[d] * new_shape[d];
        }
    }
    out
}

pub(crate) fn backprop_matmul(a: &Tensor, b: &Tensor, gout: &Tensor, grads: &mut GradMap) {
    let [m, k] = [a.shape()[0], a.shape()[1]];
    let n = b.shape()[1];
    if a.requires_grad() {
        let mut da = vec![0.0; m * k];
        matmul_g_bt(gout.data(), b.data(), &mut da, m, k, n);
        accumulate(grads, a, &da);
    }
    if b.requires_grad() {
        let mut db = vec![0.0; k * n];
        matmul_at_g(a.data(), gout.data(), &mut db, m, k, n);
        accumulate(grads, b, &db);
    }
}

pub(crate) fn backprop_bmm(a: &Tensor, b: &Tensor, gout: &Tensor, grads: &mut GradMap) {
    let [bs, m, k] = [a.shape()[0], a.shape()[1], a.shape()[2]];
    let n = b.shape()[2];
    if a.requires_grad() {
        let mut da = vec![0.0; bs * m * k];
        for bi in 0..bs {
            matmul_g_bt(
                &gout.data()[bi * m * n..(bi + 1) * m * n],
                &b.data()[bi * k * n..(bi + 1) * k * n],
                &mut da[bi * m * k..(bi + 1) * m * k],
                m,
                k,
                n,
            );
        }
        accumulate(grads, a, &da);
    }
    if b.requires_grad() {
        let mut db = vec![0.0; bs * k * n];
        for bi in 0..bs {
            matmul_at_g(
                &a.data()[bi * m * k..(bi + 1) * m * k],
                &gout.data()[bi * m * n..(bi + 1) * m * n],
                &mut db[bi * k * n..(bi + 1) * k * n],
                m,
                k,
                n,
            );
        }
        accumulate(grads, b, &db);
    }
}

pub(crate) fn backprop_permute(a: &Tensor, axes: &[usize], gout: &Tensor, grads: &mut GradMap) {
    let mut inverse = vec![0usize; axes.len()];
    for (i, &ax) in axes.iter().enumerate() {
        inverse[ax] = i;
    }
    let contrib = permute_data(gout.data(), gout.shape(), &inverse);
    accumulate(grads, a, &contrib);
}

pub(crate) fn backprop_concat(inputs: &[Tensor], axis: usize, gout: &Tensor, grads: &mut GradMap) {
    let inner: usize = gout.shape()[axis + 1..].iter().product();
    let outer: usize = gout.shape()[..axis].iter().product();
    let total_axis = gout.shape()[axis];
    let mut offset = 0;
    for p in inputs {
        let len = p.shape()[axis];
        if p.requires_grad() {
            let mut contrib = Vec::with_capacity(p.numel());
            for o in 0..outer {
                let base = (o * total_axis + offset) * inner;
                contrib.extend_from_slice(&gout.data()[base..base + len * inner]);
            }
            accumulate(grads, p, &contrib);
        }
        offset += len;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::tape::backward;

    #[test]
    fn matmul_identity() {
        let tape = Tape::new();
        let i2 = Tensor::eye(2);
        let b = Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap();
        let c = tape.matmul(&i2, &b).unwrap();
        assert_eq!(c.data(), b.data());
    }

    #[test]
    fn matmul_hand_oracle() {
        // [[1,0],[0,1],[1,1]] * [[2],[3]] = [[2],[3],[5]]
        let tape = Tape::new();
        let a = Tensor::new(vec![3, 2], vec![1., 0., 0., 1., 1., 1.]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![2., 3.]).unwrap();
        let c = tape.matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[3, 1]);
        assert_eq!(c.data(), &[2., 3., 5.]);
    }

    #[test]
    fn matmul_grad_wrt_a_is_ones_bt() {
        let tape = Tape::new();
        let a = Tensor::new(vec![2, 3], vec![0.5, -1., 2., 0., 1., 3.]).unwrap().with_grad();
        let b = Tensor::new(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let c = tape.matmul(&a, &b).unwrap();
        let loss = tape.sum_all(&c).unwrap();
        let grads = backward(&loss, &tape).unwrap();
        // d sum(AB) / dA = ones * B^T; row sums of B
        assert_eq!(grads[&a.id()].data(), &[3., 7., 11., 3., 7., 11.]);
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let tape = Tape::new();
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        assert!(matches!(tape.matmul(&a, &b), Err(Error::Dim(_))));
    }

    #[test]
    fn permute_roundtrip() {
        let tape = Tape::new();
        let a = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        let p = tape.permute(&a, &[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        let back = tape.permute(&p, &[1, 2, 0]).unwrap();
        assert_eq!(back.data(), a.data());
    }

    #[test]
    fn concat_and_split_grad() {
        let tape = Tape::new();
        let a = Tensor::new(vec![2, 1], vec![1., 2.]).unwrap().with_grad();
        let b = Tensor::new(vec![2, 2], vec![3., 4., 5., 6.]).unwrap().with_grad();
        let c = tape.concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.data(), &[1., 3., 4., 2., 5., 6.]);
        let w = Tensor::new(vec![2, 3], vec![1., 10., 100., 1000., 10000., 100000.]).unwrap();
        let loss = tape.sum_all(&tape.mul(&c, &w).unwrap()).unwrap();
        let grads = backward(&loss, &tape).unwrap();
        assert_eq!(grads[&a.id()].data(), &[1., 1000.]);
        assert_eq!(grads[&b.id()].data(), &[10., 100., 10000., 100000.]);
    }

    #[test]
    fn bmm_matches_per_slice_matmul() {
        let tape = Tape::new();
        let a = Tensor::from_fn(&[2, 2, 3], |i| (i as f64) * 0.5 - 1.0);
        let b = Tensor::from_fn(&[2, 3, 2], |i| (i as f64) * 0.25 + 0.1);
        let c = tape.bmm(&a, &b).unwrap();
        for bi in 0..2 {
            let a2 = Tensor::new(vec![2, 3], a.data()[bi * 6..(bi + 1) * 6].to_vec()).unwrap();
            let b2 = Tensor::new(vec![3, 2], b.data()[bi * 6..(bi + 1) * 6].to_vec()).unwrap();
            let c2 = tape.matmul(&a2, &b2).unwrap();
            assert_eq!(&c.data()[bi * 4..(bi + 1) * 4], c2.data());
        }
    }
}
