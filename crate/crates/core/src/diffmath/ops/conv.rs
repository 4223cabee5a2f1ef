//! 2-D convolution and average pooling.

use crate::diffmath::tape::{accumulate, GradMap, Record, Tape};
use crate::diffmath::tensor::Tensor;
use crate::error::{Error, Result};

/// Output extent of a conv dim: `floor((len + 2p - k) / stride) + 1`.
fn conv_out_dim(len: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = len + 2 * padding;
    if padded < k {
        return Err(Error::Config(format!(
            "kernel {k} does not fit input {len} with padding {padding}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Range of output positions whose receptive field hits in-bounds input
/// for a given kernel offset: returns `(lo, hi_exclusive)`.
fn out_range(len: usize, k_off: usize, stride: usize, padding: usize, out_len: usize) -> (usize, usize) {
    // input coord: i = o*stride + k_off - padding, need 0 <= i < len
    let lo = if padding > k_off {
        (padding - k_off).div_ceil(stride)
    } else {
        0
    };
    let hi = if len + padding > k_off {
        (((len + padding - k_off - 1) / stride) + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

impl Tape {
    /// Convolution of `input [C x H x W]` with `kernel [O x C x kh x kw]`
    /// plus optional per-channel `bias [O]`, zero padding.
    pub fn conv2d(
        &self,
        input: &Tensor,
        kernel: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let (&[c, h, w], &[o, kc, kh, kw]) = (input.shape(), kernel.shape()) else {
            return Err(Error::Dim(format!(
                "conv2d expects [C,H,W] input and [O,C,kh,kw] kernel, got {:?} and {:?}",
                input.shape(),
                kernel.shape()
            )));
        };
        if kc != c {
            return Err(Error::Dim(format!(
                "conv2d channel mismatch: input C={c}, kernel C={kc}"
            )));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        if let Some(b) = bias {
            if b.shape() != [o] {
                return Err(Error::Dim(format!(
                    "conv2d bias shape {:?} does not match {o} output channels",
                    b.shape()
                )));
            }
        }
        let ho = conv_out_dim(h, kh, stride, padding)?;
        let wo = conv_out_dim(w, kw, stride, padding)?;

        let src = input.data();
        let ker = kernel.data();
        let mut data = vec![0.0; o * ho * wo];
        for oc in 0..o {
            for ic in 0..c {
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = out_range(h, ky, stride, padding, ho);
                    for kx in 0..kw {
                        let kval = ker[((oc * c + ic) * kh + ky) * kw + kx];
                        if kval == 0.0 {
                            continue;
                        }
                        let (ox_lo, ox_hi) = out_range(w, kx, stride, padding, wo);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - padding;
                            let irow = (ic * h + iy) * w;
                            let orow = (oc * ho + oy) * wo;
                            for ox in ox_lo..ox_hi {
                                let ix = ox * stride + kx - padding;
                                data[orow + ox] += kval * src[irow + ix];
                            }
                        }
                    }
                }
            }
            if let Some(b) = bias {
                let bv = b.data()[oc];
                for v in &mut data[oc * ho * wo..(oc + 1) * ho * wo] {
                    *v += bv;
                }
            }
        }
        let mut out = Tensor::new(vec![o, ho, wo], data)?;
        let mut tracked: Vec<&Tensor> = vec![input, kernel];
        if let Some(b) = bias {
            tracked.push(b);
        }
        if self.tracks(&tracked) {
            out = out.with_grad();
            self.push(Record::Conv2d {
                input: input.clone(),
                kernel: kernel.clone(),
                bias: bias.cloned(),
                stride,
                padding,
                out: out.id(),
            });
        }
        Ok(out)
    }

    /// 3x3 mean pooling with stride 1 over the last two dims (no padding):
    /// `[..., H, W] -> [..., H-2, W-2]`.
    pub fn avg_pool3x3(&self, a: &Tensor) -> Result<Tensor> {
        let r = a.rank();
        if r < 2 {
            return Err(Error::Dim(format!(
                "avg_pool3x3 needs rank >= 2, got {:?}",
                a.shape()
            )));
        }
        let h = a.shape()[r - 2];
        let w = a.shape()[r - 1];
        if h < 3 || w < 3 {
            return Err(Error::Dim(format!(
                "avg_pool3x3 needs spatial dims >= 3, got {h}x{w}"
            )));
        }
        let chans: usize = a.shape()[..r - 2].iter().product();
        let (ho, wo) = (h - 2, w - 2);
        let src = a.data();
        let mut data = vec![0.0; chans * ho * wo];
        for ch in 0..chans {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for dy in 0..3 {
                        let row = (ch * h + oy + dy) * w + ox;
                        acc += src[row] + src[row + 1] + src[row + 2];
                    }
                    data[(ch * ho + oy) * wo + ox] = acc / 9.0;
                }
            }
        }
        let mut shape = a.shape().to_vec();
        shape[r - 2] = ho;
        shape[r - 1] = wo;
        let mut out = Tensor::new(shape, data)?;
        if self.tracks(&[a]) {
            out = out.with_grad();
            self.push(Record::AvgPool3x3 { a: a.clone(), out: out.id() });
        }
        Ok(out)
    }
}

pub(crate) fn backprop_conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
    gout: &Tensor,
    grads: &mut GradMap,
) {
    let [c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let [o, _, kh, kw] = [
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    ];
    let [ho, wo] = [gout.shape()[1], gout.shape()[2]];
    let g = gout.data();
    let src = input.data();
    let ker = kernel.data();

    let mut dinput = if input.requires_grad() {
        Some(vec![0.0; input.numel()])
    } else {
        None
    };
    let mut dkernel = if kernel.requires_grad() {
        Some(vec![0.0; kernel.numel()])
    } else {
        None
    };

    for oc in 0..o {
        for ic in 0..c {
            for ky in 0..kh {
                let (oy_lo, oy_hi) = out_range(h, ky, stride, padding, ho);
                for kx in 0..kw {
                    let kidx = ((oc * c + ic) * kh + ky) * kw + kx;
                    let kval = ker[kidx];
                    let (ox_lo, ox_hi) = out_range(w, kx, stride, padding, wo);
                    let mut kacc = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - padding;
                        let irow = (ic * h + iy) * w;
                        let orow = (oc * ho + oy) * wo;
                        for ox in ox_lo..ox_hi {
                            let ix = ox * stride + kx - padding;
                            let gv = g[orow + ox];
                            if let Some(di) = dinput.as_mut() {
                                di[irow + ix] += kval * gv;
                            }
                            kacc += src[irow + ix] * gv;
                        }
                    }
                    if let Some(dk) = dkernel.as_mut() {
                        dk[kidx] += kacc;
                    }
                }
            }
        }
    }
    if let Some(di) = dinput {
        accumulate(grads, input, &di);
    }
    if let Some(dk) = dkernel {
        accumulate(grads, kernel, &dk);
    }
    if let Some(b) = bias {
        if b.requires_grad() {
            let mut db = vec![0.0; o];
            for (oc, dbv) in db.iter_mut().enumerate() {
                *dbv = g[oc * ho * wo..(oc + 1) * ho * wo].iter().sum();
            }
            accumulate(grads, b, &db);
        }
    }
}

pub(crate) fn backprop_avg_pool3x3(a: &Tensor, gout: &Tensor, grads: &mut GradMap) {
    let r = a.rank();
    let h = a.shape()[r - 2];
    let w = a.shape()[r - 1];
    let chans: usize = a.shape()[..r - 2].iter().product();
    let (ho, wo) = (h - 2, w - 2);
    let g = gout.data();
    let mut contrib = vec![0.0; a.numel()];
    for ch in 0..chans {
        for oy in 0..ho {
            for ox in 0..wo {
                let gv = g[(ch * ho + oy) * wo + ox] / 9.0;
                for dy in 0..3 {
                    let row = (ch * h + oy + dy) * w + ox;
                    contrib[row] += gv;
                    contrib[row + 1] += gv;
                    contrib[row + 2] += gv;
                }
            }
        }
    }
    accumulate(grads, a, &contrib);
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent direct convolution used as the test oracle.
    fn conv_oracle(
        input: &Tensor,
        kernel: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Vec<f64> {
        let [c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
        let [o, _, kh, kw] = [
            kernel.shape()[0],
            kernel.shape()[1],
            kernel.shape()[2],
            kernel.shape()[3],
        ];
        let ho = (h + 2 * padding - kh) / stride + 1;
        let wo = (w + 2 * padding - kw) / stride + 1;
        let mut out = vec![0.0; o * ho * wo];
        for oc in 0..o {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                                    acc += input.at(&[ic, iy as usize, ix as usize])
                                        * kernel.at(&[oc, ic, ky, kx]);
                                }
                            }
                        }
                    }
                    out[(oc * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_1x1_kernel() {
        let tape = Tape::new();
        let x = Tensor::from_fn(&[1, 3, 4], |i| i as f64);
        let k = Tensor::ones(&[1, 1, 1, 1]);
        let y = tape.conv2d(&x, &k, None, 1, 0).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn all_ones_3x3_on_ones_has_interior_nine() {
        let tape = Tape::new();
        let x = Tensor::ones(&[1, 5, 5]);
        let k = Tensor::ones(&[1, 1, 3, 3]);
        let y = tape.conv2d(&x, &k, None, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 5, 5]);
        // interior counts all 9 taps, corners 4, edges 6
        assert_eq!(y.at(&[0, 2, 2]), 9.0);
        assert_eq!(y.at(&[0, 0, 0]), 4.0);
        assert_eq!(y.at(&[0, 0, 2]), 6.0);
        assert_eq!(y.data(), conv_oracle(&x, &k, 1, 1).as_slice());
    }

    #[test]
    fn random_conv_matches_oracle_strided() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let tape = Tape::new();
        let x = Tensor::randn(&[3, 7, 9], &mut rng);
        let k = Tensor::randn(&[4, 3, 3, 3], &mut rng);
        for (stride, padding) in [(1, 0), (1, 1), (2, 1), (2, 0)] {
            let y = tape.conv2d(&x, &k, None, stride, padding).unwrap();
            let oracle = conv_oracle(&x, &k, stride, padding);
            for (a, b) in y.data().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12, "stride={stride} pad={padding}");
            }
        }
    }

    #[test]
    fn kernel_too_large_errors() {
        let tape = Tape::new();
        let x = Tensor::ones(&[1, 2, 2]);
        let k = Tensor::ones(&[1, 1, 5, 5]);
        assert!(matches!(tape.conv2d(&x, &k, None, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn bias_adds_per_channel() {
        let tape = Tape::new();
        let x = Tensor::zeros(&[1, 2, 2]);
        let k = Tensor::zeros(&[2, 1, 1, 1]);
        let b = Tensor::new(vec![2], vec![0.5, -1.5]).unwrap();
        let y = tape.conv2d(&x, &k, Some(&b), 1, 0).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5, 0.5, 0.5, -1.5, -1.5, -1.5, -1.5]);
    }

    #[test]
    fn avg_pool_constant_is_constant() {
        let tape = Tape::new();
        let x = Tensor::full(&[2, 4, 5], 0.7);
        let y = tape.avg_pool3x3(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2, 3]);
        for &v in y.data() {
            assert!((v - 0.7).abs() < 1e-15);
        }
    }
}
