//! Multi-scale image features and projection to the matching dimension.
//!
//! Feature maps flow through the pipeline channels-last (`[h, w, C]`);
//! convolutions permute to `[C, h, w]` internally. The scale contract is
//! fixed: the coarse map is `image/8`, the fine map exactly twice that.

mod pca;
mod provider;

pub use pca::pca_variance_report;
pub use provider::{load_feature_tensor, toy_encoder, EncoderProvider, ToyEncoderWeights, TOY_C_RAW};

use rand::Rng;

use crate::diffmath::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Where a raw feature map came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    File,
    ToyEncoder,
}

/// Pre-projection feature maps at the two pipeline scales.
#[derive(Debug, Clone)]
pub struct RawFeatureMap {
    /// `[h', w', C_raw]` with `h' = H/4`.
    pub fine: Tensor,
    /// `[h, w, C_raw]` with `h = H/8`.
    pub coarse: Tensor,
    pub source: FeatureSource,
    pub c_raw: usize,
}

impl RawFeatureMap {
    /// Enforce the scale contract: fine dims exactly twice coarse dims,
    /// and (when the image size is known) coarse dims exactly image/8.
    pub fn validate(&self, image_hw: Option<(usize, usize)>) -> Result<()> {
        let (&[fh, fw, fc], &[ch, cw, cc]) = (self.fine.shape(), self.coarse.shape()) else {
            return Err(Error::Contract(format!(
                "feature maps must be rank-3 [h,w,C], got {:?} and {:?}",
                self.fine.shape(),
                self.coarse.shape()
            )));
        };
        if fc != cc || fc != self.c_raw || self.c_raw == 0 {
            return Err(Error::Contract(format!(
                "channel counts disagree: fine {fc}, coarse {cc}, declared {}",
                self.c_raw
            )));
        }
        if fh != 2 * ch || fw != 2 * cw {
            return Err(Error::Contract(format!(
                "scale contract violated: fine {fh}x{fw} is not twice coarse {ch}x{cw}"
            )));
        }
        if let Some((ih, iw)) = image_hw {
            if ch * 8 != ih || cw * 8 != iw {
                return Err(Error::Contract(format!(
                    "coarse map {ch}x{cw} does not match image {ih}x{iw} at 1/8 scale"
                )));
            }
        }
        Ok(())
    }
}

/// Projected features ready for matching.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    /// `[h', w', D]`.
    pub fine: Tensor,
    /// `[h, w, D]`.
    pub coarse: Tensor,
    pub dim: usize,
}

/// Two 1x1 conv layers with a ReLU in the middle; the same head is applied
/// to both images and both scales.
#[derive(Debug, Clone)]
pub struct ProjectionHead {
    pub w1: Tensor, // [D, C_raw, 1, 1]
    pub b1: Tensor, // [D]
    pub w2: Tensor, // [D, D, 1, 1]
    pub b2: Tensor, // [D]
}

impl ProjectionHead {
    pub fn init(c_raw: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let s1 = (2.0 / c_raw as f64).sqrt();
        let s2 = (2.0 / dim as f64).sqrt();
        let scale = |t: Tensor, s: f64| {
            let data = t.data().iter().map(|v| v * s).collect();
            Tensor::new(t.shape().to_vec(), data).expect("init shape")
        };
        ProjectionHead {
            w1: scale(Tensor::randn(&[dim, c_raw, 1, 1], rng), s1),
            b1: Tensor::zeros(&[dim]),
            w2: scale(Tensor::randn(&[dim, dim, 1, 1], rng), s2),
            b2: Tensor::zeros(&[dim]),
        }
    }

    pub fn register(&self, store: &mut ParamStore) {
        store.insert("proj.w1", self.w1.clone());
        store.insert("proj.b1", self.b1.clone());
        store.insert("proj.w2", self.w2.clone());
        store.insert("proj.b2", self.b2.clone());
    }

    pub fn from_store(store: &ParamStore) -> Result<Self> {
        Ok(ProjectionHead {
            w1: store.get("proj.w1")?,
            b1: store.get("proj.b1")?,
            w2: store.get("proj.w2")?,
            b2: store.get("proj.b2")?,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.w1.shape()[1]
    }
}

/// Apply the projection head to one channels-last map.
fn project_map(tape: &Tape, head: &ProjectionHead, map: &Tensor) -> Result<Tensor> {
    let chw = tape.permute(map, &[2, 0, 1])?;
    let mid = tape.relu(&tape.conv2d(&chw, &head.w1, Some(&head.b1), 1, 0)?);
    let out = tape.conv2d(&mid, &head.w2, Some(&head.b2), 1, 0)?;
    tape.permute(&out, &[1, 2, 0])
}

/// Project both scales with the shared head.
pub fn project(tape: &Tape, raw: &RawFeatureMap, head: &ProjectionHead) -> Result<FeaturePyramid> {
    if head.in_dim() != raw.c_raw {
        return Err(Error::Dim(format!(
            "projection head expects {} input channels, features have {}",
            head.in_dim(),
            raw.c_raw
        )));
    }
    Ok(FeaturePyramid {
        fine: project_map(tape, head, &raw.fine)?,
        coarse: project_map(tape, head, &raw.coarse)?,
        dim: head.out_dim(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::backward;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_head(dim: usize) -> ProjectionHead {
        let mut w = vec![0.0; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        ProjectionHead {
            w1: Tensor::new(vec![dim, dim, 1, 1], w.clone()).unwrap(),
            b1: Tensor::zeros(&[dim]),
            w2: Tensor::new(vec![dim, dim, 1, 1], w).unwrap(),
            b2: Tensor::zeros(&[dim]),
        }
    }

    fn raw_map(h: usize, w: usize, c: usize, f: impl FnMut(usize) -> f64 + Copy) -> RawFeatureMap {
        RawFeatureMap {
            fine: Tensor::from_fn(&[2 * h, 2 * w, c], f),
            coarse: Tensor::from_fn(&[h, w, c], f),
            source: FeatureSource::File,
            c_raw: c,
        }
    }

    #[test]
    fn identity_head_is_relu_composition() {
        let tape = Tape::new();
        let raw = raw_map(2, 3, 4, |i| (i as f64 * 0.37).sin());
        let pyr = project(&tape, &raw, &identity_head(4)).unwrap();
        for (out, inp) in pyr.coarse.data().iter().zip(raw.coarse.data()) {
            assert_eq!(*out, inp.max(0.0));
        }
        for (out, inp) in pyr.fine.data().iter().zip(raw.fine.data()) {
            assert_eq!(*out, inp.max(0.0));
        }
    }

    #[test]
    fn projection_shapes_match_declared_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tape = Tape::new();
        let head = ProjectionHead::init(384, 128, &mut rng);
        let raw = raw_map(3, 5, 384, |i| ((i % 97) as f64) / 97.0);
        let pyr = project(&tape, &raw, &head).unwrap();
        assert_eq!(pyr.coarse.shape(), &[3, 5, 128]);
        assert_eq!(pyr.fine.shape(), &[6, 10, 128]);
        assert_eq!(pyr.dim, 128);
    }

    #[test]
    fn channel_mismatch_is_dim_error() {
        let tape = Tape::new();
        let raw = raw_map(2, 2, 8, |_| 0.0);
        assert!(matches!(
            project(&tape, &raw, &identity_head(4)),
            Err(Error::Dim(_))
        ));
    }

    #[test]
    fn head_parameters_receive_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tape = Tape::new();
        let mut store = ParamStore::new();
        ProjectionHead::init(6, 4, &mut rng).register(&mut store);
        let head = ProjectionHead::from_store(&store).unwrap();
        let raw = raw_map(2, 2, 6, |i| ((i * 31 % 17) as f64 - 8.0) / 8.0);
        let pyr = project(&tape, &raw, &head).unwrap();
        let joined = tape.concat(&[&pyr.fine, &pyr.coarse], 0).unwrap_or(pyr.fine.clone());
        let loss = tape.mean_all(&tape.mul(&joined, &joined).unwrap()).unwrap();
        let grads = backward(&loss, &tape).unwrap();
        let gw1 = &grads[&head.w1.id()];
        assert!(gw1.data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn projection_is_per_cell_permutation_equivariant() {
        // permuting spatial positions of the input permutes the output
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tape = Tape::new();
        let head = ProjectionHead::init(5, 3, &mut rng);
        let coarse = Tensor::randn(&[2, 3, 5], &mut rng);
        let raw = RawFeatureMap {
            fine: Tensor::randn(&[4, 6, 5], &mut rng),
            coarse: coarse.clone(),
            source: FeatureSource::File,
            c_raw: 5,
        };
        let out = project(&tape, &raw, &head).unwrap().coarse;

        // reverse the flattened cell order
        let (h, w, c) = (2, 3, 5);
        let rev = Tensor::from_fn(&[h, w, c], |i| {
            let cell = i / c;
            let ch = i % c;
            coarse.data()[(h * w - 1 - cell) * c + ch]
        });
        let raw_rev = RawFeatureMap { coarse: rev, ..raw.clone() };
        let out_rev = project(&tape, &raw_rev, &head).unwrap().coarse;
        let d_out = 3;
        for cell in 0..h * w {
            for ch in 0..d_out {
                assert_eq!(
                    out.data()[cell * d_out + ch],
                    out_rev.data()[(h * w - 1 - cell) * d_out + ch]
                );
            }
        }
    }

    #[test]
    fn scale_contract_violations_are_caught() {
        let bad = RawFeatureMap {
            fine: Tensor::zeros(&[5, 6, 4]), // not 2x coarse
            coarse: Tensor::zeros(&[2, 3, 4]),
            source: FeatureSource::File,
            c_raw: 4,
        };
        assert!(matches!(bad.validate(None), Err(Error::Contract(_))));

        let good = raw_map(2, 3, 4, |_| 0.0);
        assert!(good.validate(None).is_ok());
        assert!(good.validate(Some((16, 24))).is_ok());
        assert!(matches!(good.validate(Some((16, 32))), Err(Error::Contract(_))));
    }
}
