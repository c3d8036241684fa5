use crate::bounds::{affine_transform, elide_final_layer, final_affine, ibp_forward_prefix, Hyperbox};
use crate::error::{Error, Result};
use crate::net::{backward::backward_box_from, backward_point, Gradients, Layer, ReluNet};
use crate::numerics::{Rng, Vector};

use super::attack::{pgd_attack, PgdParams};

/// Cross-entropy `ln Σ_i exp(y_i − y_t)` and its gradient with respect to the
/// logits.
pub fn loss_ce(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    assert!(target < logits.len(), "target out of range");
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&y| (y - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() + m - logits[target];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / z).collect();
    grad[target] -= 1.0;
    (loss, grad)
}

/// Loss, parameter gradient and logit-difference upper bounds.
#[derive(Clone, Debug)]
pub struct RobustLoss {
    pub loss: f64,
    pub grads: Gradients,
    /// `ȳ_i − y_t` bounds for `i ≠ t`, in class order.
    pub diff_upper: Vector,
}

impl RobustLoss {
    pub fn certified(&self) -> bool {
        self.diff_upper.iter().all(|&u| u < 0.0)
    }
}

/// Cross-entropy on the logit-difference upper bounds over `input`, with the
/// target's own difference fixed at 0.
pub fn robust_ce_box(net: &ReluNet, input: &Hyperbox, target: usize) -> Result<RobustLoss> {
    let (weight, bias) = final_affine(net)?;
    let classes = weight.rows();
    if target >= classes {
        return Err(Error::InvalidArgument(format!("target {target} out of range for {classes} classes")));
    }
    let last = net.layers().len() - 1;
    let trace = ibp_forward_prefix(net, input, last)?;
    let penult = trace.output();
    let (diff_w, diff_b) = elide_final_layer(weight, bias, target);
    let out = affine_transform(penult, &diff_w, &diff_b)?;
    let upper = out.upper();

    let mut z = Vec::with_capacity(classes);
    let mut it = upper.iter();
    for i in 0..classes {
        z.push(if i == target { 0.0 } else { *it.next().unwrap() });
    }
    let (loss, gz) = loss_ce(&z, target);
    // d(upper)/d(center) = d(upper)/d(radius) = 1
    let gu: Vec<f64> = (0..classes).filter(|&i| i != target).map(|i| gz[i]).collect();

    let elided = Layer::affine(diff_w, diff_b.into()).expect("consistent elided shapes");
    let mut diff_grad = crate::net::ParamGrad {
        weight: vec![0.0; elided_len(&elided)],
        bias: vec![0.0; classes - 1],
    };
    elided.accumulate_grad(&gu, penult.center(), false, true, &mut diff_grad);
    elided.accumulate_grad(&gu, penult.radius(), true, false, &mut diff_grad);
    let gc = elided.linear_transpose(&gu, false);
    let gr = elided.linear_transpose(&gu, true);

    let mut grads = Gradients::zeros_like(net);
    {
        let acc = grads.layers[last].as_mut().unwrap();
        let cols = weight.cols();
        for (m, i) in (0..classes).filter(|&i| i != target).enumerate() {
            let row = &diff_grad.weight[m * cols..(m + 1) * cols];
            for (j, &g) in row.iter().enumerate() {
                acc.weight[i * cols + j] += g;
                acc.weight[target * cols + j] -= g;
            }
            acc.bias[i] += diff_grad.bias[m];
            acc.bias[target] -= diff_grad.bias[m];
        }
    }
    backward_box_from(net, trace.boxes(), last, gc, gr, &mut grads);
    Ok(RobustLoss {
        loss,
        grads,
        diff_upper: upper,
    })
}

fn elided_len(layer: &Layer) -> usize {
    match layer {
        Layer::Affine { weight, .. } => weight.rows() * weight.cols(),
        _ => unreachable!(),
    }
}

/// Robust cross-entropy over `B^ε(x)`.
pub fn loss_robust_ce(net: &ReluNet, x: &[f64], eps: f64, target: usize) -> Result<RobustLoss> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be nonnegative, got {eps}")));
    }
    robust_ce_box(net, &Hyperbox::around(x, eps)?, target)
}

/// Standard cross-entropy at `x` with parameter gradients.
pub fn loss_ce_point(net: &ReluNet, x: &[f64], target: usize) -> Result<(f64, Gradients)> {
    let logits = net.forward(x)?;
    if target >= logits.len() {
        return Err(Error::InvalidArgument(format!("target {target} out of range")));
    }
    let (loss, g) = loss_ce(&logits, target);
    Ok((loss, backward_point(net, x, &g)?.params))
}

/// Center selection for small-box propagation: PGD inside `B^{ε−τ}(x)`, then
/// per-coordinate clamping so `B^τ(x*) ⊆ B^ε(x)` and, where the domain
/// leaves room, `B^τ(x*) ⊆ [lo, hi]`.
pub fn sabr_center(
    net: &ReluNet,
    x: &[f64],
    eps: f64,
    lambda: f64,
    target: usize,
    pgd: &PgdParams,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let tau = lambda * eps;
    if lambda == 1.0 {
        return Ok(x.to_vec());
    }
    let shrink = eps - tau;
    let mut center = pgd_attack(net, x, shrink, target, pgd, rng)?;
    let (lo, hi) = pgd.domain;
    for (c, &xi) in center.iter_mut().zip(x) {
        let (ball_lo, ball_hi) = (xi - shrink, xi + shrink);
        let (a, b) = (ball_lo.max(lo + tau), ball_hi.min(hi - tau));
        *c = if a <= b { c.clamp(a, b) } else { c.clamp(ball_lo, ball_hi) };
    }
    Ok(center)
}

#[derive(Clone, Debug)]
pub struct SabrLoss {
    pub robust: RobustLoss,
    pub center: Vec<f64>,
    /// Half-width `λε` of the propagated box.
    pub radius: f64,
}

pub fn loss_sabr(
    net: &ReluNet,
    x: &[f64],
    eps: f64,
    lambda: f64,
    target: usize,
    pgd: &PgdParams,
    rng: &mut Rng,
) -> Result<SabrLoss> {
    let center = sabr_center(net, x, eps, lambda, target, pgd, rng)?;
    let radius = lambda * eps;
    let robust = robust_ce_box(net, &Hyperbox::around(&center, radius)?, target)?;
    Ok(SabrLoss {
        robust,
        center,
        radius,
    })
}
