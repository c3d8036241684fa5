use crate::dln::Dln;
use crate::error::{Error, Result};
use crate::net::{signum0, Gradients};
use crate::numerics::{Matrix, Rng};

use super::loss::{loss_ce_point, loss_robust_ce};

/// Fixed inputs and labels over which the surrogate risk is averaged.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeBatch {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<usize>,
}

const PROBE_BATCH_SIZE: usize = 16;

/// 16 points uniform in `[0, 1]^d0` from a fixed seed, labels cycling
/// through the classes.
pub fn default_probe_batch(input_dim: usize, classes: usize) -> ProbeBatch {
    let mut rng = Rng::new(0x5eed, 0);
    let inputs = (0..PROBE_BATCH_SIZE)
        .map(|_| (0..input_dim).map(|_| rng.uniform(0.0, 1.0)).collect())
        .collect();
    let targets = (0..PROBE_BATCH_SIZE).map(|i| i % classes.max(1)).collect();
    ProbeBatch { inputs, targets }
}

/// `⟨∇θ(R(ε) − R(0)), ∇θ τ⟩` for a two-layer linear network on the default
/// batch, where `R` is the mean robust cross-entropy and `τ` the
/// output-averaged tightness. Negative values mean a descent step on the
/// robust surplus also raises tightness.
pub fn gradient_alignment_probe(dln: &Dln, eps: f64) -> Result<f64> {
    let batch = default_probe_batch(dln.input_dim(), dln.output_dim());
    probe_with_batch(dln, eps, &batch)
}

pub fn probe_with_batch(dln: &Dln, eps: f64, batch: &ProbeBatch) -> Result<f64> {
    probe_scaled(dln, eps, batch, 1.0)
}

/// `scale` multiplies the risk surplus before differentiation.
pub(crate) fn probe_scaled(dln: &Dln, eps: f64, batch: &ProbeBatch, scale: f64) -> Result<f64> {
    if dln.depth() != 2 {
        return Err(Error::Unsupported(format!(
            "alignment probe needs a 2-layer network, got depth {}",
            dln.depth()
        )));
    }
    if batch.inputs.is_empty() || batch.inputs.len() != batch.targets.len() {
        return Err(Error::InvalidArgument("probe batch must be nonempty with one target per input".into()));
    }
    let net = dln.to_relu_net();
    let mut risk = Gradients::zeros_like(&net);
    for (x, &t) in batch.inputs.iter().zip(&batch.targets) {
        risk.add_scaled(&loss_robust_ce(&net, x, eps, t)?.grads, 1.0);
        risk.add_scaled(&loss_ce_point(&net, x, t)?.1, -1.0);
    }
    risk.scale(scale / batch.inputs.len() as f64);
    let (g2, g1) = tightness_gradient(&dln.weights()[1], &dln.weights()[0])?;
    let mut sum = 0.0;
    for (pg, g) in risk.layers.iter().zip([&g1, &g2]) {
        let pg = pg.as_ref().expect("linear layers carry parameters");
        sum += dot(&pg.weight, g.data());
    }
    Ok(sum)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient of the mean tightness of `W2 W1` with respect to `(W2, W1)`.
/// Rows with zero layerwise radius have constant τ and contribute nothing.
pub(crate) fn tightness_gradient(w2: &Matrix, w1: &Matrix) -> Result<(Matrix, Matrix)> {
    let m = w2.matmul(w1)?;
    let (a2, a1) = (w2.abs(), w1.abs());
    let a = a2.matmul(&a1)?;
    let (rows, cols) = (m.rows(), m.cols());
    let inv = 1.0 / rows as f64;
    let mut gm = Matrix::zeros(rows, cols);
    let mut ga = Matrix::zeros(rows, cols);
    for i in 0..rows {
        let l: f64 = a.row(i).iter().sum();
        if l <= 0.0 {
            continue;
        }
        let o: f64 = m.row(i).iter().map(|v| v.abs()).sum();
        for j in 0..cols {
            gm[(i, j)] = inv * signum0(m[(i, j)]) / l;
            ga[(i, j)] = -inv * o / (l * l);
        }
    }
    let mut g2 = gm.matmul(&w1.transpose())?;
    let via_a2 = ga.matmul(&a1.transpose())?;
    for (g, (v, w)) in g2.data_mut().iter_mut().zip(via_a2.data().iter().zip(w2.data())) {
        *g += v * signum0(*w);
    }
    let mut g1 = w2.transpose().matmul(&gm)?;
    let via_a1 = a2.transpose().matmul(&ga)?;
    for (g, (v, w)) in g1.data_mut().iter_mut().zip(via_a1.data().iter().zip(w1.data())) {
        *g += v * signum0(*w);
    }
    Ok((g2, g1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_tau(w2: &Matrix, w1: &Matrix) -> f64 {
        let m = w2.matmul(w1).unwrap();
        let a = w2.abs().matmul(&w1.abs()).unwrap();
        (0..m.rows())
            .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>() / a.row(i).iter().sum::<f64>())
            .sum::<f64>()
            / m.rows() as f64
    }

    #[test]
    fn tightness_gradient_matches_finite_differences() {
        let mut rng = Rng::new(4, 0);
        for _ in 0..10 {
            let f = Dln::gaussian(&[3, 4, 2], &[1.0, 1.0], &mut rng).unwrap();
            let (w1, w2) = (f.weights()[0].clone(), f.weights()[1].clone());
            let (g2, g1) = tightness_gradient(&w2, &w1).unwrap();
            let h = 1e-6;
            for k in 0..w2.data().len() {
                let (mut p, mut q) = (w2.clone(), w2.clone());
                p.data_mut()[k] += h;
                q.data_mut()[k] -= h;
                let fd = (mean_tau(&p, &w1) - mean_tau(&q, &w1)) / (2.0 * h);
                assert!((fd - g2.data()[k]).abs() < 1e-6, "W2[{k}]: {fd} vs {}", g2.data()[k]);
            }
            for k in 0..w1.data().len() {
                let (mut p, mut q) = (w1.clone(), w1.clone());
                p.data_mut()[k] += h;
                q.data_mut()[k] -= h;
                let fd = (mean_tau(&w2, &p) - mean_tau(&w2, &q)) / (2.0 * h);
                assert!((fd - g1.data()[k]).abs() < 1e-6, "W1[{k}]: {fd} vs {}", g1.data()[k]);
            }
        }
    }

    #[test]
    fn nonnegative_weights_give_zero_probe() {
        let mut rng = Rng::new(5, 0);
        let w1 = Matrix::from_fn(4, 3, |_, _| rng.uniform(0.1, 1.0));
        let w2 = Matrix::from_fn(2, 4, |_, _| rng.uniform(0.1, 1.0));
        let f = Dln::new(vec![w1, w2]).unwrap();
        assert!(gradient_alignment_probe(&f, 0.1).unwrap().abs() < 1e-14);
    }

    #[test]
    fn antisymmetric_under_loss_negation() {
        let mut rng = Rng::new(6, 0);
        for _ in 0..20 {
            let f = Dln::gaussian(&[3, 5, 3], &[1.0, 1.0], &mut rng).unwrap();
            let b = default_probe_batch(3, 3);
            let p = probe_scaled(&f, 0.05, &b, 1.0).unwrap();
            let n = probe_scaled(&f, 0.05, &b, -1.0).unwrap();
            assert_eq!(p, -n);
        }
    }

    #[test]
    fn rejects_other_depths() {
        let f = Dln::gaussian(&[2, 2, 2, 2], &[1.0; 3], &mut Rng::new(0, 0)).unwrap();
        assert!(matches!(gradient_alignment_probe(&f, 0.1), Err(Error::Unsupported(_))));
    }
}
