//! Central finite-difference verification of every registered op.
//!
//! Each check builds small deterministic inputs, evaluates the op under a
//! fixed random linear functional, and compares analytic gradients against
//! central differences in 64-bit arithmetic. Sample points are kept away
//! from non-differentiable kinks (abs/relu at 0, warp at integer
//! coordinates, clamp boundaries).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffmath::ops::WarpSign;
use crate::diffmath::tape::{backward, Tape};
use crate::diffmath::tensor::Tensor;
use crate::error::Result;

const FD_STEP: f64 = 1e-5;
/// Relative-error floor: below this magnitude the comparison is absolute.
const REL_FLOOR: f64 = 1e-3;

/// Result of one op check. The check never panics or errors out of the
/// runner; failures surface as a non-finite or over-threshold error.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub threshold: f64,
    pub error: Option<String>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.max_rel_err.is_finite() && self.max_rel_err < self.threshold
    }
}

/// Maximum relative error between analytic and central-difference
/// gradients of `sum(op(inputs) * U)` for a fixed random `U`.
pub fn max_rel_err(
    op: impl Fn(&Tape, &[Tensor]) -> Result<Tensor>,
    inputs: &[Tensor],
    seed: u64,
) -> Result<f64> {
    let tape = Tape::new();
    let tracked: Vec<Tensor> = inputs.iter().map(|t| t.clone().with_grad()).collect();
    let out = op(&tape, &tracked)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let proj = Tensor::uniform(out.shape(), -1.0, 1.0, &mut rng);
    let loss = tape.sum_all(&tape.mul(&out, &proj)?)?;
    let grads = backward(&loss, &tape)?;

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let t = Tape::no_grad();
        let out = op(&t, xs)?;
        let loss = t.sum_all(&t.mul(&out, &proj)?)?;
        Ok(loss.item())
    };

    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads.get(&tracked[i].id());
        for j in 0..x.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * FD_STEP);
            let a = analytic.map_or(0.0, |g| g.data()[j]);
            let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

struct Case {
    name: &'static str,
    threshold: f64,
    run: Box<dyn Fn(u64) -> Result<f64>>,
}

fn rng_for(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(salt.wrapping_mul(0x2545_F491_4F6C_DD1D)))
}

/// Random values bounded away from zero: |v| in [0.2, 1.2].
fn offset_randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let t = Tensor::randn(shape, rng);
    let data: Vec<f64> = t
        .data()
        .iter()
        .map(|&v| v.signum() * (0.2 + v.abs().min(1.0)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("offset shape")
}

fn cases() -> Vec<Case> {
    let mut cs: Vec<Case> = Vec::new();
    let mut add = |name: &'static str, threshold: f64, run: Box<dyn Fn(u64) -> Result<f64>>| {
        cs.push(Case { name, threshold, run });
    };

    add("matmul_3x4_4x2", 1e-6, Box::new(|s| {
        let mut r = rng_for(s, 1);
        let a = Tensor::randn(&[3, 4], &mut r);
        let b = Tensor::randn(&[4, 2], &mut r);
        max_rel_err(|t, x| t.matmul(&x[0], &x[1]), &[a, b], s)
    }));
    add("bmm_2x3x4_2x4x2", 1e-6, Box::new(|s| {
        let mut r = rng_for(s, 2);
        let a = Tensor::randn(&[2, 3, 4], &mut r);
        let b = Tensor::randn(&[2, 4, 2], &mut r);
        max_rel_err(|t, x| t.bmm(&x[0], &x[1]), &[a, b], s)
    }));
    add("softmax_len7", 1e-6, Box::new(|s| {
        let mut r = rng_for(s, 3);
        let x = Tensor::randn(&[7], &mut r);
        max_rel_err(|t, x| t.softmax(&x[0], 0), &[x], s)
    }));
    add("softmax_3d_axis2", 1e-6, Box::new(|s| {
        let mut r = rng_for(s, 4);
        let x = Tensor::randn(&[2, 3, 5], &mut r);
        max_rel_err(|t, x| t.softmax(&x[0], 2), &[x], s)
    }));
    add("conv2d_3x3_s1_p1", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 5);
        let x = Tensor::randn(&[2, 5, 6], &mut r);
        let k = Tensor::randn(&[3, 2, 3, 3], &mut r);
        let b = Tensor::randn(&[3], &mut r);
        max_rel_err(|t, v| t.conv2d(&v[0], &v[1], Some(&v[2]), 1, 1), &[x, k, b], s)
    }));
    add("conv2d_3x3_s2_p1", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 6);
        let x = Tensor::randn(&[2, 6, 8], &mut r);
        let k = Tensor::randn(&[2, 2, 3, 3], &mut r);
        max_rel_err(|t, v| t.conv2d(&v[0], &v[1], None, 2, 1), &[x, k], s)
    }));
    add("conv2d_1x1", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 7);
        let x = Tensor::randn(&[4, 3, 3], &mut r);
        let k = Tensor::randn(&[2, 4, 1, 1], &mut r);
        let b = Tensor::randn(&[2], &mut r);
        max_rel_err(|t, v| t.conv2d(&v[0], &v[1], Some(&v[2]), 1, 0), &[x, k, b], s)
    }));
    add("bilinear_warp_1d_offgrid", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 8);
        let img = Tensor::randn(&[2, 3, 6], &mut r);
        // fractional parts in [0.05, 0.55]: clear of integer-coordinate kinks
        let d = Tensor::from_fn(&[3, 6], |i| 0.3 + 0.25 * ((i as f64 * 1.7).sin()));
        max_rel_err(
            |t, v| Ok(t.bilinear_warp_1d(&v[0], &v[1], WarpSign::Pos)?.0),
            &[img, d],
            s,
        )
    }));
    add("bilinear_warp_1d_neg", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 9);
        let img = Tensor::randn(&[1, 2, 6], &mut r);
        let d = Tensor::from_fn(&[2, 6], |i| 0.4 + 0.2 * ((i as f64 * 2.3).cos()));
        max_rel_err(
            |t, v| Ok(t.bilinear_warp_1d(&v[0], &v[1], WarpSign::Neg)?.0),
            &[img, d],
            s,
        )
    }));
    add("add_broadcast", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 10);
        let a = Tensor::randn(&[3, 4], &mut r);
        let b = Tensor::randn(&[1, 4], &mut r);
        max_rel_err(|t, v| t.add(&v[0], &v[1]), &[a, b], s)
    }));
    add("sub", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 11);
        let a = Tensor::randn(&[2, 3], &mut r);
        let b = Tensor::randn(&[2, 3], &mut r);
        max_rel_err(|t, v| t.sub(&v[0], &v[1]), &[a, b], s)
    }));
    add("mul_broadcast", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 12);
        let a = Tensor::randn(&[2, 3, 4], &mut r);
        let b = Tensor::randn(&[2, 1, 4], &mut r);
        max_rel_err(|t, v| t.mul(&v[0], &v[1]), &[a, b], s)
    }));
    add("div_bounded_denominator", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 13);
        let a = Tensor::randn(&[3, 3], &mut r);
        let b = offset_randn(&[3, 3], &mut r);
        max_rel_err(|t, v| t.div(&v[0], &v[1]), &[a, b], s)
    }));
    add("add_scalar", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 14);
        let a = Tensor::randn(&[5], &mut r);
        max_rel_err(|t, v| Ok(t.add_scalar(&v[0], 0.37)), &[a], s)
    }));
    add("mul_scalar", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 15);
        let a = Tensor::randn(&[5], &mut r);
        max_rel_err(|t, v| Ok(t.mul_scalar(&v[0], -2.5)), &[a], s)
    }));
    add("abs_away_from_zero", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 16);
        let a = offset_randn(&[6], &mut r);
        max_rel_err(|t, v| Ok(t.abs(&v[0])), &[a], s)
    }));
    add("exp", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 17);
        let a = Tensor::randn(&[6], &mut r);
        max_rel_err(|t, v| Ok(t.exp(&v[0])), &[a], s)
    }));
    add("ln_positive", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 18);
        let a = Tensor::uniform(&[6], 0.1, 2.0, &mut r);
        max_rel_err(|t, v| Ok(t.ln(&v[0])), &[a], s)
    }));
    add("sqrt_positive", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 19);
        let a = Tensor::uniform(&[6], 0.3, 2.0, &mut r);
        max_rel_err(|t, v| Ok(t.sqrt(&v[0])), &[a], s)
    }));
    add("pow_scalar_2", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 20);
        let a = Tensor::uniform(&[6], 0.1, 1.0, &mut r);
        max_rel_err(|t, v| Ok(t.pow_scalar(&v[0], 2.0)), &[a], s)
    }));
    add("relu_away_from_zero", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 21);
        let a = offset_randn(&[8], &mut r);
        max_rel_err(|t, v| Ok(t.relu(&v[0])), &[a], s)
    }));
    add("clamp_interior_points", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 22);
        // strictly inside (0, 1) and strictly outside, clear of boundaries
        let a = Tensor::uniform(&[6], 0.1, 0.9, &mut r);
        let b = Tensor::uniform(&[4], 1.2, 2.0, &mut r);
        let joined = {
            let t = Tape::no_grad();
            t.concat(&[&a, &b], 0)?
        };
        max_rel_err(|t, v| Ok(t.clamp(&v[0], 0.0, 1.0)), &[joined], s)
    }));
    add("sum_all", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 23);
        let a = Tensor::randn(&[3, 4], &mut r);
        max_rel_err(|t, v| t.sum_all(&v[0]), &[a], s)
    }));
    add("mean_all", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 24);
        let a = Tensor::randn(&[3, 4], &mut r);
        max_rel_err(|t, v| t.mean_all(&v[0]), &[a], s)
    }));
    add("sum_axis_keepdim", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 25);
        let a = Tensor::randn(&[2, 3, 4], &mut r);
        max_rel_err(|t, v| t.sum_axis(&v[0], 1, true), &[a], s)
    }));
    add("mean_axis", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 26);
        let a = Tensor::randn(&[2, 3, 4], &mut r);
        max_rel_err(|t, v| t.mean_axis(&v[0], 2, false), &[a], s)
    }));
    add("avg_pool3x3", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 27);
        let a = Tensor::randn(&[2, 5, 6], &mut r);
        max_rel_err(|t, v| t.avg_pool3x3(&v[0]), &[a], s)
    }));
    add("upsample_bilinear_2x", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 28);
        let a = Tensor::randn(&[3, 4], &mut r);
        max_rel_err(|t, v| t.upsample_bilinear_2x(&v[0]), &[a], s)
    }));
    add("permute", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 29);
        let a = Tensor::randn(&[2, 3, 4], &mut r);
        max_rel_err(|t, v| t.permute(&v[0], &[2, 0, 1]), &[a], s)
    }));
    add("reshape", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 30);
        let a = Tensor::randn(&[3, 4], &mut r);
        max_rel_err(|t, v| t.reshape(&v[0], &[2, 6]), &[a], s)
    }));
    add("concat_axis1", 1e-4, Box::new(|s| {
        let mut r = rng_for(s, 31);
        let a = Tensor::randn(&[2, 2], &mut r);
        let b = Tensor::randn(&[2, 3], &mut r);
        max_rel_err(|t, v| t.concat(&[&v[0], &v[1]], 1), &[a, b], s)
    }));
    cs
}

/// Run every registered gradient check. Reports, never panics.
pub fn run_registered_checks(seed: u64) -> Vec<CheckReport> {
    cases()
        .into_iter()
        .map(|c| match (c.run)(seed) {
            Ok(err) => CheckReport {
                name: c.name.to_string(),
                max_rel_err: err,
                threshold: c.threshold,
                error: None,
            },
            Err(e) => CheckReport {
                name: c.name.to_string(),
                max_rel_err: f64::INFINITY,
                threshold: c.threshold,
                error: Some(e.to_string()),
            },
        })
        .collect()
}
