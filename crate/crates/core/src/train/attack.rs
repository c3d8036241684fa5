use crate::error::{Error, Result};
use crate::net::{backward_point, ReluNet};
use crate::numerics::Rng;

use super::loss::loss_ce;

#[derive(Clone, Debug, PartialEq)]
pub struct PgdParams {
    pub steps: usize,
    pub step_size: f64,
    pub restarts: usize,
    /// Valid input range, applied to every coordinate.
    pub domain: (f64, f64),
}

impl PgdParams {
    /// 8 sign steps of size `ε/4`, one restart, pixel domain `[0, 1]`.
    pub fn default_for(eps: f64) -> Self {
        PgdParams {
            steps: 8,
            step_size: eps / 4.0,
            restarts: 1,
            domain: (0.0, 1.0),
        }
    }
}

/// Point in `B^ε(x) ∩ domain` maximising the cross-entropy found by projected
/// sign-gradient ascent from uniform random starts. `x` itself is the first
/// candidate, so the returned loss is never below the clean loss.
pub fn pgd_attack(
    net: &ReluNet,
    x: &[f64],
    eps: f64,
    target: usize,
    params: &PgdParams,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be nonnegative, got {eps}")));
    }
    let (dlo, dhi) = params.domain;
    let bounds: Vec<(f64, f64)> = x
        .iter()
        .map(|&v| {
            let (a, b) = ((v - eps).max(dlo), (v + eps).min(dhi));
            // a point outside the domain keeps its own ball
            if a <= b {
                (a, b)
            } else {
                (v - eps, v + eps)
            }
        })
        .collect();
    let loss_at = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (l, g) = loss_ce(&net.forward(p)?, target);
        Ok((l, g))
    };

    let mut best = x.to_vec();
    let (mut best_loss, _) = loss_at(x)?;
    if eps == 0.0 {
        return Ok(best);
    }
    for _ in 0..params.restarts {
        let mut p: Vec<f64> = bounds.iter().map(|&(a, b)| rng.uniform(a, b)).collect();
        for step in 0..=params.steps {
            let (l, g_logits) = loss_at(&p)?;
            if l > best_loss {
                best_loss = l;
                best.clone_from(&p);
            }
            if step == params.steps {
                break;
            }
            let g = backward_point(net, &p, &g_logits)?.input;
            for ((v, gi), &(a, b)) in p.iter_mut().zip(g.iter()).zip(&bounds) {
                let s = if *gi > 0.0 {
                    1.0
                } else if *gi < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *v = (*v + params.step_size * s).clamp(a, b);
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Layer, Shape};
    use crate::numerics::{Matrix, Vector};

    fn linear_binary() -> ReluNet {
        let w = Matrix::from_rows(&[[0.5, -1.0, 2.0], [-0.5, 1.5, 0.25]]).unwrap();
        ReluNet::new(Shape::Flat(3), vec![Layer::affine(w, Vector::new(vec![0.1, -0.2])).unwrap()]).unwrap()
    }

    #[test]
    fn zero_eps_returns_input() {
        let x = [0.3, 0.4, 0.5];
        let adv = pgd_attack(&linear_binary(), &x, 0.0, 0, &PgdParams::default_for(0.0), &mut Rng::new(0, 0)).unwrap();
        assert_eq!(adv, x.to_vec());
    }

    #[test]
    fn one_step_reaches_linear_worst_case() {
        let net = linear_binary();
        let x = [0.4, 0.5, 0.6];
        let eps = 0.1;
        // target 0: loss grows with y_1 − y_0, whose weight row is (−1, 2.5, −1.75)
        let w_diff = [-1.0, 2.5, -1.75];
        let params = PgdParams {
            steps: 1,
            step_size: 2.0 * eps,
            restarts: 1,
            domain: (0.0, 1.0),
        };
        for seed in 0..20 {
            let adv = pgd_attack(&net, &x, eps, 0, &params, &mut Rng::new(seed, 0)).unwrap();
            for ((a, xi), w) in adv.iter().zip(&x).zip(&w_diff) {
                assert!((a - (xi + eps * f64::signum(*w))).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn stays_in_ball_and_domain_and_never_loses() {
        let mut rng = Rng::new(3, 0);
        let net = ReluNet::mlp(&[4, 8, 3], &mut rng).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.uniform(0.0, 1.0)).collect();
            let eps = rng.uniform(0.0, 0.5);
            let t = rng.below(3);
            let adv = pgd_attack(&net, &x, eps, t, &PgdParams::default_for(eps), &mut rng).unwrap();
            for (a, xi) in adv.iter().zip(&x) {
                assert!((a - xi).abs() <= eps + 1e-15 && (0.0..=1.0).contains(a));
            }
            let clean = loss_ce(&net.forward(&x).unwrap(), t).0;
            let attacked = loss_ce(&net.forward(&adv).unwrap(), t).0;
            assert!(attacked >= clean - 1e-12);
        }
    }

    #[test]
    fn attack_loss_grows_with_eps() {
        // nested balls; for a linear two-class model one step of 2ε lands on
        // the optimal corner, so the attained loss cannot shrink as ε grows
        let mut rng = Rng::new(9, 0);
        for _ in 0..100 {
            let w = Matrix::from_fn(2, 4, |_, _| rng.normal(1.0));
            let net = ReluNet::new(Shape::Flat(4), vec![Layer::affine(w, Vector::zeros(2)).unwrap()]).unwrap();
            let x: Vec<f64> = (0..4).map(|_| rng.uniform(0.0, 1.0)).collect();
            let t = rng.below(2);
            let mut prev = f64::NEG_INFINITY;
            for eps in [0.0, 0.05, 0.1, 0.2, 0.4] {
                let params = PgdParams {
                    steps: 1,
                    step_size: 2.0 * eps,
                    restarts: 1,
                    domain: (f64::NEG_INFINITY, f64::INFINITY),
                };
                let adv = pgd_attack(&net, &x, eps, t, &params, &mut rng).unwrap();
                let l = loss_ce(&net.forward(&adv).unwrap(), t).0;
                assert!(l >= prev - 1e-12);
                prev = l;
            }
        }
    }
}
