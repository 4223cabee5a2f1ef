//! Feature providers: container-file ingestion and the toy trainable
//! encoder.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::diffmath::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::features::{FeatureSource, RawFeatureMap};
use crate::io::container::{find_slot, read_container};
use crate::params::ParamStore;

/// Raw channel count of the toy encoder.
pub const TOY_C_RAW: usize = 64;
const TOY_MID: usize = 32;

/// Which encoder backs the pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EncoderProvider {
    /// Trainable strided-conv stack.
    Toy,
    /// Precomputed feature tensors under `<dir>/{left,right}/<stem>.nslt`.
    Files { dir: PathBuf },
}

/// Load one precomputed feature map. Slots `"fine"` and `"coarse"` hold
/// channels-last `[h, w, C]` tensors; the scale contract is checked
/// against `image_hw` when given.
pub fn load_feature_tensor(path: &Path, image_hw: Option<(usize, usize)>) -> Result<RawFeatureMap> {
    let slots = read_container(path)?;
    let fine = find_slot(&slots, "fine")?;
    let coarse = find_slot(&slots, "coarse")?;
    if fine.dims.len() != 3 || coarse.dims.len() != 3 {
        return Err(Error::Format(format!(
            "feature slots must be rank-3 [h,w,C], got {:?} and {:?}",
            fine.dims, coarse.dims
        )));
    }
    let raw = RawFeatureMap {
        fine: fine.to_tensor()?,
        coarse: coarse.to_tensor()?,
        source: FeatureSource::File,
        c_raw: fine.dims[2],
    };
    raw.validate(image_hw)?;
    Ok(raw)
}

/// Weights of the toy encoder: three stride-2 3x3 convs, the first two
/// feeding the fine (1/4) map and the last the coarse (1/8) map.
#[derive(Debug, Clone)]
pub struct ToyEncoderWeights {
    pub w1: Tensor, // [32, 3, 3, 3]
    pub b1: Tensor,
    pub w2: Tensor, // [64, 32, 3, 3]
    pub b2: Tensor,
    pub w3: Tensor, // [64, 64, 3, 3]
    pub b3: Tensor,
}

fn he_init(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let fan_in: usize = shape[1..].iter().product();
    let s = (2.0 / fan_in as f64).sqrt();
    let t = Tensor::randn(shape, rng);
    let data = t.data().iter().map(|v| v * s).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

impl ToyEncoderWeights {
    pub fn init(rng: &mut impl Rng) -> Self {
        let he = he_init;
        ToyEncoderWeights {
            w1: he(&[TOY_MID, 3, 3, 3], rng),
            b1: Tensor::zeros(&[TOY_MID]),
            w2: he(&[TOY_C_RAW, TOY_MID, 3, 3], rng),
            b2: Tensor::zeros(&[TOY_C_RAW]),
            w3: he(&[TOY_C_RAW, TOY_C_RAW, 3, 3], rng),
            b3: Tensor::zeros(&[TOY_C_RAW]),
        }
    }

    pub fn register(&self, store: &mut ParamStore) {
        store.insert("enc.w1", self.w1.clone());
        store.insert("enc.b1", self.b1.clone());
        store.insert("enc.w2", self.w2.clone());
        store.insert("enc.b2", self.b2.clone());
        store.insert("enc.w3", self.w3.clone());
        store.insert("enc.b3", self.b3.clone());
    }

    pub fn from_store(store: &ParamStore) -> Result<Self> {
        Ok(ToyEncoderWeights {
            w1: store.get("enc.w1")?,
            b1: store.get("enc.b1")?,
            w2: store.get("enc.w2")?,
            b2: store.get("enc.b2")?,
            w3: store.get("enc.w3")?,
            b3: store.get("enc.b3")?,
        })
    }
}

/// Encode an `[3, H, W]` image (H, W divisible by 8) into raw fine/coarse
/// feature maps. Differentiable through the weights and the image.
pub fn toy_encoder(tape: &Tape, weights: &ToyEncoderWeights, image: &Tensor) -> Result<RawFeatureMap> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::Dim(format!(
            "toy_encoder expects [3,H,W], got {:?}",
            image.shape()
        )));
    };
    if c != 3 {
        return Err(Error::Dim(format!("toy_encoder expects 3 channels, got {c}")));
    }
    if h % 8 != 0 || w % 8 != 0 {
        return Err(Error::Config(format!(
            "toy_encoder needs dims divisible by 8, got {h}x{w}"
        )));
    }
    let s1 = tape.relu(&tape.conv2d(image, &weights.w1, Some(&weights.b1), 2, 1)?);
    let fine_chw = tape.relu(&tape.conv2d(&s1, &weights.w2, Some(&weights.b2), 2, 1)?);
    let coarse_chw = tape.relu(&tape.conv2d(&fine_chw, &weights.w3, Some(&weights.b3), 2, 1)?);
    let raw = RawFeatureMap {
        fine: tape.permute(&fine_chw, &[1, 2, 0])?,
        coarse: tape.permute(&coarse_chw, &[1, 2, 0])?,
        source: FeatureSource::ToyEncoder,
        c_raw: TOY_C_RAW,
    };
    raw.validate(Some((h, w)))?;
    Ok(raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::backward;
    use crate::io::container::{write_container, Dtype, Slot};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn toy_encoder_scale_contract_192x320() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let weights = ToyEncoderWeights::init(&mut rng);
        let tape = Tape::no_grad();
        let img = Tensor::uniform(&[3, 192, 320], 0.0, 1.0, &mut rng);
        let raw = toy_encoder(&tape, &weights, &img).unwrap();
        assert_eq!(raw.fine.shape(), &[48, 80, 64]);
        assert_eq!(raw.coarse.shape(), &[24, 40, 64]);
    }

    #[test]
    fn toy_encoder_16x16() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let weights = ToyEncoderWeights::init(&mut rng);
        let tape = Tape::no_grad();
        let img = Tensor::uniform(&[3, 16, 16], 0.0, 1.0, &mut rng);
        let raw = toy_encoder(&tape, &weights, &img).unwrap();
        assert_eq!(raw.fine.shape(), &[4, 4, 64]);
        assert_eq!(raw.coarse.shape(), &[2, 2, 64]);
    }

    #[test]
    fn indivisible_dims_are_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let weights = ToyEncoderWeights::init(&mut rng);
        let tape = Tape::no_grad();
        let img = Tensor::zeros(&[3, 20, 16]);
        assert!(matches!(
            toy_encoder(&tape, &weights, &img),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn every_pixel_reaches_some_feature() {
        // nonzero gradient flows from the image into the feature sum
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let weights = ToyEncoderWeights::init(&mut rng);
        let tape = Tape::new();
        let img = Tensor::uniform(&[3, 16, 16], 0.1, 0.9, &mut rng).with_grad();
        let raw = toy_encoder(&tape, &weights, &img).unwrap();
        let sq = tape.mul(&raw.fine, &raw.fine).unwrap();
        let loss = tape.sum_all(&sq).unwrap();
        let grads = backward(&loss, &tape).unwrap();
        let g = &grads[&img.id()];
        let nonzero = g.data().iter().filter(|&&v| v != 0.0).count();
        // ReLUs may silence individual channels, but the vast majority of
        // pixels must influence the features.
        assert!(nonzero > g.numel() / 2, "only {nonzero} of {} pixels reach features", g.numel());
    }

    fn write_feature_file(path: &Path, fine_dims: [usize; 3], coarse_dims: [usize; 3]) {
        let slot = |dims: [usize; 3]| Slot {
            dims: dims.to_vec(),
            dtype: Dtype::F32,
            data: vec![0.5; dims.iter().product()],
        };
        write_container(
            path,
            &[
                ("fine".to_string(), slot(fine_dims)),
                ("coarse".to_string(), slot(coarse_dims)),
            ],
        )
        .unwrap();
    }

    #[test]
    fn load_accepts_contract_shapes_for_192x320() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.nslt");
        write_feature_file(&path, [48, 80, 384], [24, 40, 384]);
        let raw = load_feature_tensor(&path, Some((192, 320))).unwrap();
        assert_eq!(raw.c_raw, 384);
        assert_eq!(raw.source, FeatureSource::File);
    }

    #[test]
    fn load_rejects_scale_contract_violation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.nslt");
        // fine is not exactly twice coarse
        write_feature_file(&path, [47, 80, 384], [24, 40, 384]);
        assert!(matches!(
            load_feature_tensor(&path, None),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn feature_file_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.nslt");
        let fine = Slot {
            dims: vec![4, 6, 5],
            dtype: Dtype::F64,
            data: (0..120).map(|i| (i as f64 * 0.731).sin()).collect(),
        };
        let coarse = Slot {
            dims: vec![2, 3, 5],
            dtype: Dtype::F64,
            data: (0..30).map(|i| (i as f64 * 1.13).cos()).collect(),
        };
        write_container(
            &path,
            &[("fine".to_string(), fine.clone()), ("coarse".to_string(), coarse.clone())],
        )
        .unwrap();
        let raw = load_feature_tensor(&path, None).unwrap();
        assert_eq!(raw.fine.data(), fine.data.as_slice());
        assert_eq!(raw.coarse.data(), coarse.data.as_slice());
    }
}
