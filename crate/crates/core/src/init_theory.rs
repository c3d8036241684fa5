//! Expected tightness of randomly initialised networks: closed forms and
//! Monte-Carlo estimators.

use std::f64::consts::PI;

use crate::dln::{global_tightness, Dln};
use crate::error::{Error, Result};
use crate::numerics::{half_gamma_ratio, per_sample, sample_gaussian_matrix, Matrix, Rng};

/// Expected tightness of a two-layer Gaussian linear network with inner
/// width `d1`: `√π Γ((d1+1)/2) / (d1 Γ(d1/2))`.
pub fn tau_width(d1: usize) -> f64 {
    assert!(d1 >= 1, "width must be positive");
    let n = d1 as f64;
    PI.sqrt() * half_gamma_ratio(n).expect("n >= 1") / n
}

/// `1 / tau_width(n)`.
pub fn g(n: usize) -> f64 {
    1.0 / tau_width(n)
}

/// Upper bound `tau_min^⌊L/2⌋` on the expected tightness of an `L`-layer
/// network whose narrowest internal width has two-layer tightness `tau_min`.
pub fn depth_bound(tau_min: f64, layers: usize) -> f64 {
    assert!(layers >= 1, "depth must be positive");
    tau_min.powi((layers / 2) as i32)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitTightnessEstimate {
    pub analytic: f64,
    /// Ratio of the sample means of optimal and layer-wise radius.
    pub mc_mean: f64,
    /// Delta-method standard error of `mc_mean`.
    pub mc_stderr: f64,
    pub samples: usize,
    /// Mean of the per-sample ratios, for comparison only.
    pub per_sample_mean: f64,
}

/// Ratio of means `Σa / Σb` with its delta-method standard error, plus the
/// mean of `a_i / b_i` over samples with `b_i > 0`.
pub(crate) fn ratio_of_means(pairs: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let ratio = ma / mb;
    let (mut va, mut vb, mut cab) = (0.0, 0.0, 0.0);
    for &(a, b) in pairs {
        va += (a - ma) * (a - ma);
        vb += (b - mb) * (b - mb);
        cab += (a - ma) * (b - mb);
    }
    let dof = (n - 1.0).max(1.0);
    let var = (va - 2.0 * ratio * cab + ratio * ratio * vb) / dof / (n * mb * mb);
    let used: Vec<f64> = pairs.iter().filter(|p| p.1 > 0.0).map(|p| p.0 / p.1).collect();
    let per_sample = used.iter().sum::<f64>() / used.len().max(1) as f64;
    (ratio, var.max(0.0).sqrt(), per_sample)
}

fn dim_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Monte-Carlo tightness of Gaussian linear networks with `dims = [d0, …, dL]`,
/// unit input radius and one standard deviation per layer. Sample `s` is drawn
/// from stream `s` of `rng`'s seed.
pub fn mc_init_tightness_dln(
    rng: &Rng,
    dims: &[usize],
    sigmas: &[f64],
    samples: usize,
) -> Result<InitTightnessEstimate> {
    if samples < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 samples, got {samples}")));
    }
    // validate once up front so workers cannot fail
    Dln::gaussian(dims, sigmas, &mut rng.fork(0))?;
    let eps = vec![1.0; dims[0]];
    let pairs = per_sample(rng, samples, |mut r| {
        let f = Dln::gaussian(dims, sigmas, &mut r).unwrap();
        let t = global_tightness(&f, &eps).unwrap();
        (dim_mean(&t.optimal_radius), dim_mean(&t.layerwise_radius))
    });
    let (mc_mean, mc_stderr, per_sample_mean) = ratio_of_means(&pairs);
    let mut analytic = 1.0;
    if dims.len() == 3 {
        analytic = tau_width(dims[1]);
    } else if let Some(&d_min) = dims[1..dims.len() - 1].iter().min() {
        analytic = depth_bound(tau_width(d_min), dims.len() - 1);
    }
    Ok(InitTightnessEstimate {
        analytic,
        mc_mean,
        mc_stderr,
        samples,
        per_sample_mean,
    })
}

/// Local tightness of `W2 · ReLU(W1 x)` at standard Gaussian `x` (no biases),
/// relative to the linear two-layer value `tau_width(d1)`.
///
/// `mc_mean` and `per_sample_mean` are already divided by `tau_width(d1)`;
/// `analytic` is the asymptotic factor `√2`.
pub fn mc_relu_init_factor(
    rng: &Rng,
    d0: usize,
    d1: usize,
    d2: usize,
    samples: usize,
) -> Result<InitTightnessEstimate> {
    if samples < 1000 {
        return Err(Error::InvalidArgument(format!("need at least 1000 samples, got {samples}")));
    }
    if d0 == 0 || d1 == 0 || d2 == 0 {
        return Err(Error::InvalidArgument("widths must be positive".into()));
    }
    let eps = vec![1.0; d0];
    let pairs = per_sample(rng, samples, |mut r| {
        let w1 = sample_gaussian_matrix(&mut r, d1, d0, (2.0 / d0 as f64).sqrt());
        let w2 = sample_gaussian_matrix(&mut r, d2, d1, (2.0 / d1 as f64).sqrt());
        let x: Vec<f64> = (0..d0).map(|_| r.standard_normal()).collect();
        let pre = w1.matvec(&x).unwrap();
        let masked = Matrix::from_fn(d1, d0, |k, j| if pre[k] > 0.0 { w1[(k, j)] } else { 0.0 });
        let t = global_tightness(&Dln::new(vec![masked, w2]).unwrap(), &eps).unwrap();
        (dim_mean(&t.optimal_radius), dim_mean(&t.layerwise_radius))
    });
    let (ratio, stderr, per_sample_mean) = ratio_of_means(&pairs);
    let tau = tau_width(d1);
    Ok(InitTightnessEstimate {
        analytic: 2f64.sqrt(),
        mc_mean: ratio / tau,
        mc_stderr: stderr / tau,
        samples,
        per_sample_mean: per_sample_mean / tau,
    })
}
