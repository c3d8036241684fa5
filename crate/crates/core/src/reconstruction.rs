//! Box growth through a linear embedding and reconstruction `x ↦ U_k U_kᵀ x`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::{half_gamma_ratio, per_sample, sample_haar_columns, Matrix, Rng, Vector};

const ORTHONORMAL_TOL: f64 = 1e-8;

/// Layer-wise radius `|U_k| |U_k|ᵀ ε 1` and optimal radius `|U_k U_kᵀ| ε 1`.
pub fn reconstruction_radii(u_k: &Matrix, eps: f64) -> Result<(Vector, Vector)> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let (d, k) = u_k.shape();
    if k > d {
        return Err(Error::InvalidArgument(format!("U_k is {d}x{k}, need k <= d")));
    }
    let gram = u_k.transpose().matmul(u_k)?;
    let dev = gram.max_abs_diff(&Matrix::identity(k));
    if dev > ORTHONORMAL_TOL {
        return Err(Error::InvalidArgument(format!(
            "columns are not orthonormal (max |UᵀU - I| = {dev:e})"
        )));
    }
    let abs = u_k.abs();
    let col_sums: Vec<f64> = (0..k).map(|j| (0..d).map(|i| abs[(i, j)]).sum::<f64>() * eps).collect();
    let layerwise = abs.matvec(&col_sums)?;
    let projector = u_k.matmul(&u_k.transpose())?;
    let optimal = (0..d)
        .map(|i| projector.row(i).iter().map(|v| v.abs()).sum::<f64>() * eps)
        .collect();
    Ok((layerwise, optimal))
}

/// Large-`d` limit of the expected optimal growth,
/// `(2/√π) Γ((k+1)/2) / Γ(k/2)`.
pub fn theory_optimal_growth(k: usize) -> f64 {
    assert!(k >= 1, "k must be positive");
    2.0 / PI.sqrt() * half_gamma_ratio(k as f64).expect("k >= 1")
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionResult {
    pub d: usize,
    pub k: usize,
    /// Mean of `δ_i / ε` over dims and samples.
    pub layerwise_growth: f64,
    /// Mean of `δ*_i / ε` over dims and samples.
    pub optimal_growth: f64,
    /// `layerwise_growth / k`.
    pub c_estimate: f64,
    pub samples: usize,
    pub layerwise_stderr: f64,
    pub optimal_stderr: f64,
    pub c_stderr: f64,
}

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

/// Monte-Carlo growth over Haar-distributed `U_k`; sample `s` uses stream `s`.
pub fn mc_reconstruction(rng: &Rng, d: usize, k: usize, samples: usize) -> Result<ReconstructionResult> {
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= d, got k={k}, d={d}")));
    }
    if samples < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 samples, got {samples}")));
    }
    let per: Vec<(f64, f64)> = per_sample(rng, samples, |mut r| {
        let u = sample_haar_columns(&mut r, d, k);
        let (lw, opt) = reconstruction_radii(&u, 1.0).expect("Haar sample is orthonormal");
        (lw.mean(), opt.mean())
    });
    let lw: Vec<f64> = per.iter().map(|p| p.0).collect();
    let opt: Vec<f64> = per.iter().map(|p| p.1).collect();
    let (layerwise_growth, layerwise_stderr) = mean_and_stderr(&lw);
    let (optimal_growth, optimal_stderr) = mean_and_stderr(&opt);
    Ok(ReconstructionResult {
        d,
        k,
        layerwise_growth,
        optimal_growth,
        c_estimate: layerwise_growth / k as f64,
        samples,
        layerwise_stderr,
        optimal_stderr,
        c_stderr: layerwise_stderr / k as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_lossless() {
        let (lw, opt) = reconstruction_radii(&Matrix::identity(5), 0.3).unwrap();
        assert!(lw.iter().chain(opt.iter()).all(|&v| v == 0.3));
    }

    #[test]
    fn positive_single_column() {
        let s = 0.5f64.sqrt();
        let u = Matrix::from_rows(&[[s], [s]]).unwrap();
        let (lw, opt) = reconstruction_radii(&u, 0.2).unwrap();
        for v in lw.iter().chain(opt.iter()) {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let u = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        assert!(matches!(reconstruction_radii(&u, 1.0), Err(Error::InvalidArgument(_))));
        assert!(reconstruction_radii(&Matrix::identity(2), 0.0).is_err());
        assert!(mc_reconstruction(&Rng::new(0, 0), 5, 6, 100).is_err());
        assert!(mc_reconstruction(&Rng::new(0, 0), 5, 2, 10).is_err());
    }

    #[test]
    fn optimal_never_exceeds_layerwise() {
        for seed in 0..1000 {
            let mut rng = Rng::new(seed, 0);
            let d = 2 + rng.below(12);
            let k = 1 + rng.below(d);
            let u = sample_haar_columns(&mut rng, d, k);
            let (lw, opt) = reconstruction_radii(&u, 1.0).unwrap();
            assert!(opt.iter().zip(lw.iter()).all(|(o, l)| *o <= l + 1e-12));
        }
    }

    #[test]
    fn growth_scales_with_eps() {
        let u = sample_haar_columns(&mut Rng::new(3, 0), 10, 4);
        let (a, b) = reconstruction_radii(&u, 1.0).unwrap();
        let (c, e) = reconstruction_radii(&u, 0.25).unwrap();
        assert!(a.iter().zip(c.iter()).all(|(x, y)| (x * 0.25 - y).abs() < 1e-15));
        assert!(b.iter().zip(e.iter()).all(|(x, y)| (x * 0.25 - y).abs() < 1e-15));
    }

    #[test]
    fn theory_values() {
        assert!((theory_optimal_growth(1) - 2.0 / PI).abs() < 1e-14);
        // 40-digit references
        let table = [
            (5, 1.697_652_726_313_550_2),
            (20, 3.523_941_040_039_062_5),
            (50, 5.613_758_632_960_852_4),
            (100, 7.958_923_738_717_876_1),
        ];
        for (k, want) in table {
            assert!((theory_optimal_growth(k) / want - 1.0).abs() < 1e-12, "k = {k}");
        }
        // Stirling: (2/√π) √(k/2) (1 − 1/(4k))
        let k = 100.0f64;
        let stirling = 2.0 / PI.sqrt() * (k / 2.0).sqrt();
        assert!((theory_optimal_growth(100) / stirling - 1.0).abs() < 0.01);
        for k in [50, 100, 400] {
            let r = theory_optimal_growth(4 * k) / theory_optimal_growth(k);
            assert!((r - 2.0).abs() < 0.04, "k = {k}: {r}");
        }
    }

    #[test]
    fn single_column_growth_matches_at_k_one() {
        // k = 1: layerwise and optimal coincide sample by sample
        let r = mc_reconstruction(&Rng::new(5, 0), 60, 1, 400).unwrap();
        assert!((r.layerwise_growth - r.optimal_growth).abs() < 1e-12);
        assert!((r.optimal_growth - 2.0 / PI).abs() < 4.0 * r.optimal_stderr + 0.02);
    }

    #[test]
    fn reproducible() {
        let a = mc_reconstruction(&Rng::new(9, 0), 30, 5, 100).unwrap();
        let b = mc_reconstruction(&Rng::new(9, 0), 30, 5, 100).unwrap();
        assert_eq!(a, b);
    }
}
