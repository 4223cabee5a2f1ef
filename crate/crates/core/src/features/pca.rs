//! PCA explained-variance probe (diagnostic only).

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Fraction of total variance captured by the first `k` principal
/// components of `features` (rows are samples). Returns a value in
/// `[0, 1]`; degenerate zero-variance data reports 1.0.
pub fn pca_variance_report(features: &[Vec<f64>], k: usize) -> Result<f64> {
    let n = features.len();
    let d = features.first().map(|f| f.len()).unwrap_or(0);
    if n < k || k == 0 || d == 0 {
        return Err(Error::Contract(format!(
            "pca needs at least k={k} samples with nonzero dim, got {n} of dim {d}"
        )));
    }
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::Contract("pca: inconsistent feature dims".into()));
    }
    let mut mean = vec![0.0; d];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for f in features {
        for i in 0..d {
            let ci = f[i] - mean[i];
            for j in i..d {
                cov[(i, j)] += ci * (f[j] - mean[j]) / denom;
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut lambdas: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    lambdas.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
    let total: f64 = lambdas.iter().sum();
    if total <= f64::EPSILON {
        return Ok(1.0);
    }
    let top: f64 = lambdas.iter().take(k.min(d)).sum();
    Ok((top / total).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rank_one_data_is_fully_explained_by_one_component() {
        let base = vec![1.0, -2.0, 0.5, 3.0];
        let features: Vec<Vec<f64>> = (0..20)
            .map(|i| base.iter().map(|v| v * (i as f64 - 10.0)).collect())
            .collect();
        let r = pca_variance_report(&features, 1).unwrap();
        assert!((r - 1.0).abs() < 1e-9);
    }

    #[test]
    fn isotropic_gaussian_splits_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let features: Vec<Vec<f64>> = (0..10_000)
            .map(|_| {
                (0..2)
                    .map(|_| {
                        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                        let u2: f64 = rng.gen();
                        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                    })
                    .collect()
            })
            .collect();
        let r = pca_variance_report(&features, 1).unwrap();
        assert!((r - 0.5).abs() < 0.05, "got {r}");
    }

    #[test]
    fn all_components_explain_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let features: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let r = pca_variance_report(&features, 5).unwrap();
        assert!((r - 1.0).abs() < 1e-9);
    }

    #[test]
    fn monotone_in_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let features: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut prev = 0.0;
        for k in 1..=6 {
            let r = pca_variance_report(&features, k).unwrap();
            assert!(r >= prev - 1e-12);
            prev = r;
        }
        assert!((prev - 1.0).abs() < 1e-9);
    }

    #[test]
    fn too_few_samples_is_contract_error() {
        let features = vec![vec![1.0, 2.0]];
        assert!(pca_variance_report(&features, 2).is_err());
    }
}
