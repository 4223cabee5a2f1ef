//! Horizontal bilinear warping and 2x bilinear upsampling.

use crate::diffmath::tape::{accumulate, GradMap, Record, Tape};
use crate::diffmath::tensor::Tensor;
use crate::error::{Error, Result};

/// Direction of the horizontal sampling shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarpSign {
    /// Sample at `x + d`.
    Pos,
    /// Sample at `x - d`.
    Neg,
}

impl WarpSign {
    pub fn factor(self) -> f64 {
        match self {
            WarpSign::Pos => 1.0,
            WarpSign::Neg => -1.0,
        }
    }
}

/// Sample coordinate and interpolation weights for one output pixel, or
/// `None` when the source lies outside the image.
#[inline]
fn sample_1d(x: usize, d: f64, sign: f64, w: usize) -> Option<(usize, usize, f64)> {
    let sx = x as f64 + sign * d;
    if !(0.0..=(w - 1) as f64).contains(&sx) {
        return None;
    }
    let x0 = sx.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    Some((x0, x1, sx - x0 as f64))
}

impl Tape {
    /// Warp `img [C x H x W]` horizontally by per-pixel `disparity [H x W]`:
    /// `out[c,y,x] = img[c, y, x + sign * d[y,x]]` with linear interpolation.
    ///
    /// Returns the warped image and a validity map (1 where the source
    /// location was inside the image, 0 where the output was zero-filled).
    /// Differentiable in both `img` and `disparity`; the validity map is a
    /// constant.
    pub fn bilinear_warp_1d(
        &self,
        img: &Tensor,
        disparity: &Tensor,
        sign: WarpSign,
    ) -> Result<(Tensor, Tensor)> {
        let &[c, h, w] = img.shape() else {
            return Err(Error::Dim(format!(
                "bilinear_warp_1d expects [C,H,W] image, got {:?}",
                img.shape()
            )));
        };
        if disparity.shape() != [h, w] {
            return Err(Error::Dim(format!(
                "disparity shape {:?} does not match image {h}x{w}",
                disparity.shape()
            )));
        }
        let s = sign.factor();
        let src = img.data();
        let d = disparity.data();
        let mut data = vec![0.0; c * h * w];
        let mut valid = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let Some((x0, x1, f)) = sample_1d(x, d[y * w + x], s, w) else {
                    continue;
                };
                valid[y * w + x] = 1.0;
                for ch in 0..c {
                    let row = (ch * h + y) * w;
                    data[row + x] = (1.0 - f) * src[row + x0] + f * src[row + x1];
                }
            }
        }
        let mut out = Tensor::new(vec![c, h, w], data)?;
        let valid = Tensor::new(vec![h, w], valid)?;
        if self.tracks(&[img, disparity]) {
            out = out.with_grad();
            self.push(Record::Warp1d {
                img: img.clone(),
                disp: disparity.clone(),
                sign: s,
                out: out.id(),
            });
        }
        Ok((out, valid))
    }

    /// Bilinear 2x spatial upsampling of a `[H x W]` map (half-pixel
    /// aligned, borders replicated). Constant maps stay constant.
    pub fn upsample_bilinear_2x(&self, a: &Tensor) -> Result<Tensor> {
        let &[h, w] = a.shape() else {
            return Err(Error::Dim(format!(
                "upsample_bilinear_2x expects [H,W], got {:?}",
                a.shape()
            )));
        };
        let src = a.data();
        let (ho, wo) = (2 * h, 2 * w);
        let mut data = vec![0.0; ho * wo];
        for oy in 0..ho {
            let (y0, y1, fy) = up2_source(oy, h);
            for ox in 0..wo {
                let (x0, x1, fx) = up2_source(ox, w);
                data[oy * wo + ox] = (1.0 - fy) * (1.0 - fx) * src[y0 * w + x0]
                    + (1.0 - fy) * fx * src[y0 * w + x1]
                    + fy * (1.0 - fx) * src[y1 * w + x0]
                    + fy * fx * src[y1 * w + x1];
            }
        }
        let mut out = Tensor::new(vec![ho, wo], data)?;
        if self.tracks(&[a]) {
            out = out.with_grad();
            self.push(Record::Upsample2x { a: a.clone(), out: out.id() });
        }
        Ok(out)
    }
}

/// Source row/col pair and weight for 2x upsampling output index `o`.
#[inline]
fn up2_source(o: usize, len: usize) -> (usize, usize, f64) {
    let pos = (o as f64 + 0.5) / 2.0 - 0.5;
    let clamped = pos.clamp(0.0, (len - 1) as f64);
    let i0 = clamped.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, clamped - i0 as f64)
}

pub(crate) fn backprop_warp1d(
    img: &Tensor,
    disp: &Tensor,
    sign: f64,
    gout: &Tensor,
    grads: &mut GradMap,
) {
    let [c, h, w] = [img.shape()[0], img.shape()[1], img.shape()[2]];
    let src = img.data();
    let d = disp.data();
    let g = gout.data();
    let mut dimg = if img.requires_grad() {
        Some(vec![0.0; img.numel()])
    } else {
        None
    };
    let mut ddisp = if disp.requires_grad() {
        Some(vec![0.0; disp.numel()])
    } else {
        None
    };
    for y in 0..h {
        for x in 0..w {
            let Some((x0, x1, f)) = sample_1d(x, d[y * w + x], sign, w) else {
                continue;
            };
            let mut slope_dot = 0.0;
            for ch in 0..c {
                let row = (ch * h + y) * w;
                let gv = g[row + x];
                if let Some(di) = dimg.as_mut() {
                    di[row + x0] += (1.0 - f) * gv;
                    di[row + x1] += f * gv;
                }
                slope_dot += gv * (src[row + x1] - src[row + x0]);
            }
            if let Some(dd) = ddisp.as_mut() {
                dd[y * w + x] += sign * slope_dot;
            }
        }
    }
    if let Some(di) = dimg {
        accumulate(grads, img, &di);
    }
    if let Some(dd) = ddisp {
        accumulate(grads, disp, &dd);
    }
}

pub(crate) fn backprop_upsample2x(a: &Tensor, gout: &Tensor, grads: &mut GradMap) {
    let [h, w] = [a.shape()[0], a.shape()[1]];
    let g = gout.data();
    let wo = 2 * w;
    let mut contrib = vec![0.0; a.numel()];
    for oy in 0..2 * h {
        let (y0, y1, fy) = up2_source(oy, h);
        for ox in 0..wo {
            let (x0, x1, fx) = up2_source(ox, w);
            let gv = g[oy * wo + ox];
            contrib[y0 * w + x0] += (1.0 - fy) * (1.0 - fx) * gv;
            contrib[y0 * w + x1] += (1.0 - fy) * fx * gv;
            contrib[y1 * w + x0] += fy * (1.0 - fx) * gv;
            contrib[y1 * w + x1] += fy * fx * gv;
        }
    }
    accumulate(grads, a, &contrib);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column_ramp(c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_fn(&[c, h, w], |i| (i % w) as f64)
    }

    #[test]
    fn zero_disparity_is_identity_with_full_validity() {
        let tape = Tape::new();
        let img = Tensor::from_fn(&[2, 3, 4], |i| (i as f64).sin());
        let d = Tensor::zeros(&[3, 4]);
        let (out, valid) = tape.bilinear_warp_1d(&img, &d, WarpSign::Pos).unwrap();
        assert_eq!(out.data(), img.data());
        assert!(valid.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn unit_disparity_shifts_ramp_by_one() {
        let tape = Tape::new();
        let img = column_ramp(1, 2, 4); // each row: 0 1 2 3
        let d = Tensor::ones(&[2, 4]);
        let (out, valid) = tape.bilinear_warp_1d(&img, &d, WarpSign::Pos).unwrap();
        // interior: out[x] = img[x+1]
        assert_eq!(out.at(&[0, 0, 0]), 1.0);
        assert_eq!(out.at(&[0, 0, 1]), 2.0);
        assert_eq!(out.at(&[0, 0, 2]), 3.0);
        // x=3 samples x=4: out of bounds
        assert_eq!(out.at(&[0, 0, 3]), 0.0);
        assert_eq!(valid.at(&[0, 3]), 0.0);
        assert_eq!(valid.at(&[0, 2]), 1.0);
    }

    #[test]
    fn half_disparity_interpolates_midpoints() {
        let tape = Tape::new();
        let img = column_ramp(1, 1, 4);
        let d = Tensor::full(&[1, 4], 0.5);
        let (out, valid) = tape.bilinear_warp_1d(&img, &d, WarpSign::Pos).unwrap();
        assert_eq!(out.at(&[0, 0, 0]), 0.5);
        assert_eq!(out.at(&[0, 0, 1]), 1.5);
        assert_eq!(out.at(&[0, 0, 2]), 2.5);
        assert_eq!(valid.at(&[0, 3]), 0.0);
    }

    #[test]
    fn negative_sign_shifts_left() {
        let tape = Tape::new();
        let img = column_ramp(1, 1, 4);
        let d = Tensor::ones(&[1, 4]);
        let (out, valid) = tape.bilinear_warp_1d(&img, &d, WarpSign::Neg).unwrap();
        assert_eq!(valid.at(&[0, 0]), 0.0); // samples x=-1
        assert_eq!(out.at(&[0, 0, 1]), 0.0);
        assert_eq!(out.at(&[0, 0, 3]), 2.0);
    }

    #[test]
    fn upsample_constant_stays_constant() {
        let tape = Tape::new();
        let a = Tensor::full(&[3, 5], 2.5);
        let up = tape.upsample_bilinear_2x(&a).unwrap();
        assert_eq!(up.shape(), &[6, 10]);
        for &v in up.data() {
            assert!((v - 2.5).abs() < 1e-15);
        }
    }

    #[test]
    fn upsample_preserves_mean_structure() {
        let tape = Tape::new();
        let a = Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
        let up = tape.upsample_bilinear_2x(&a).unwrap();
        assert_eq!(up.shape(), &[2, 4]);
        // samples at x = -0.25, 0.25, 0.75, 1.25 clamped into [0,1]
        let row: Vec<f64> = up.data()[..4].to_vec();
        assert_eq!(row, vec![0.0, 0.25, 0.75, 1.0]);
    }
}
