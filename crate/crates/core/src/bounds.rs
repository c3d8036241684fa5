//! The box (interval) domain: affine and ReLU transformers, layer-wise
//! propagation through a [`ReluNet`] and exact-certification predicates.

use crate::error::{Error, Result};
use crate::net::{Layer, ReluNet};
use crate::numerics::{Matrix, Vector};

/// Axis-aligned box stored as center and nonnegative radius.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyperbox {
    center: Vector,
    radius: Vector,
}

impl Hyperbox {
    pub fn new(center: Vector, radius: Vector) -> Result<Self> {
        if center.len() != radius.len() {
            return Err(Error::shape(
                "Hyperbox::new",
                format!("center has {} dims, radius {}", center.len(), radius.len()),
            ));
        }
        if radius.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::InvalidArgument("box radius must be nonnegative".into()));
        }
        if !center.is_finite() || !radius.is_finite() {
            return Err(Error::Domain("non-finite box".into()));
        }
        Ok(Hyperbox { center, radius })
    }

    /// `B^ε(x)`: the ℓ∞ ball of radius `eps` around `x`.
    pub fn around(x: &[f64], eps: f64) -> Result<Self> {
        Hyperbox::new(x.into(), Vector::filled(x.len(), eps))
    }

    pub fn point(x: &[f64]) -> Self {
        Hyperbox {
            center: x.into(),
            radius: Vector::zeros(x.len()),
        }
    }

    pub fn from_bounds(lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::shape("Hyperbox::from_bounds", "length mismatch"));
        }
        if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidArgument("lower bound exceeds upper bound".into()));
        }
        let center = lower.iter().zip(upper).map(|(l, u)| 0.5 * (u + l)).collect();
        let radius = lower.iter().zip(upper).map(|(l, u)| 0.5 * (u - l)).collect();
        Hyperbox::new(center, radius)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &Vector {
        &self.center
    }

    pub fn radius(&self) -> &Vector {
        &self.radius
    }

    pub fn lower(&self) -> Vector {
        self.center.iter().zip(self.radius.iter()).map(|(c, r)| c - r).collect()
    }

    pub fn upper(&self) -> Vector {
        self.center.iter().zip(self.radius.iter()).map(|(c, r)| c + r).collect()
    }

    /// True if `p` lies in the box enlarged by `slack` in every dimension.
    pub fn contains(&self, p: &[f64], slack: f64) -> bool {
        p.len() == self.dim()
            && p
                .iter()
                .zip(self.center.iter().zip(self.radius.iter()))
                .all(|(v, (c, r))| (v - c).abs() <= r + slack)
    }

    /// True if `other ⊆ self` up to `slack`.
    pub fn contains_box(&self, other: &Hyperbox, slack: f64) -> bool {
        other.dim() == self.dim()
            && other
                .lower()
                .iter()
                .zip(other.upper().iter())
                .zip(self.lower().iter().zip(self.upper().iter()))
                .all(|((ol, ou), (l, u))| *ol >= l - slack && *ou <= u + slack)
    }
}

/// Box image under `x ↦ W x + b`: center `W c + b`, radius `|W| r`.
pub fn affine_transform(b: &Hyperbox, w: &Matrix, bias: &[f64]) -> Result<Hyperbox> {
    if w.cols() != b.dim() || bias.len() != w.rows() {
        return Err(Error::shape(
            "affine_transform",
            format!(
                "W is {}x{}, box has {} dims, bias {}",
                w.rows(),
                w.cols(),
                b.dim(),
                bias.len()
            ),
        ));
    }
    let mut center = w.matvec(&b.center)?;
    center.iter_mut().zip(bias).for_each(|(c, b)| *c += b);
    let radius = (0..w.rows())
        .map(|i| w.row(i).iter().zip(b.radius.iter()).map(|(a, r)| a.abs() * r).sum())
        .collect();
    Ok(Hyperbox { center, radius })
}

/// Box image under ReLU: bounds clamp independently at zero.
pub fn relu_transform(b: &Hyperbox) -> Hyperbox {
    let (center, radius) = b
        .center
        .iter()
        .zip(b.radius.iter())
        .map(|(&c, &r)| {
            let lo = (c - r).max(0.0);
            let hi = (c + r).max(0.0);
            (0.5 * (hi + lo), 0.5 * (hi - lo))
        })
        .unzip::<f64, f64, Vec<f64>, Vec<f64>>();
    Hyperbox {
        center: center.into(),
        radius: radius.into(),
    }
}

pub(crate) fn layer_transform(layer: &Layer, b: &Hyperbox) -> Hyperbox {
    match layer {
        Layer::Relu => relu_transform(b),
        Layer::Flatten => b.clone(),
        _ => {
            let mut center = layer.linear(&b.center, false);
            layer.add_bias(&mut center);
            let radius = layer.linear(&b.radius, true);
            Hyperbox {
                center: center.into(),
                radius: radius.into(),
            }
        }
    }
}

/// Boxes after every layer of a network, input first.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationTrace {
    boxes: Vec<Hyperbox>,
}

impl PropagationTrace {
    pub fn boxes(&self) -> &[Hyperbox] {
        &self.boxes
    }

    pub fn input(&self) -> &Hyperbox {
        &self.boxes[0]
    }

    pub fn output(&self) -> &Hyperbox {
        self.boxes.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// Layer-wise (IBP) propagation of `input` through `net`.
pub fn ibp_forward(net: &ReluNet, input: &Hyperbox) -> Result<PropagationTrace> {
    ibp_forward_prefix(net, input, net.layers().len())
}

/// IBP through the first `upto` layers only.
pub(crate) fn ibp_forward_prefix(
    net: &ReluNet,
    input: &Hyperbox,
    upto: usize,
) -> Result<PropagationTrace> {
    net.check_input(input.dim(), "ibp_forward")?;
    let mut boxes = Vec::with_capacity(upto + 1);
    boxes.push(input.clone());
    for layer in &net.layers()[..upto] {
        let next = layer_transform(layer, boxes.last().unwrap());
        boxes.push(next);
    }
    Ok(PropagationTrace { boxes })
}

/// Rows `W_i − W_t` and offsets `b_i − b_t` for every `i ≠ t`, in class order.
pub(crate) fn elide_final_layer(
    weight: &Matrix,
    bias: &[f64],
    target: usize,
) -> (Matrix, Vec<f64>) {
    let classes = weight.rows();
    let cols = weight.cols();
    let wt = weight.row(target);
    let mut data = Vec::with_capacity((classes - 1) * cols);
    let mut offs = Vec::with_capacity(classes - 1);
    for i in (0..classes).filter(|&i| i != target) {
        data.extend(weight.row(i).iter().zip(wt).map(|(a, b)| a - b));
        offs.push(bias[i] - bias[target]);
    }
    (
        Matrix::new(classes - 1, cols, data).expect("finite elided weights"),
        offs,
    )
}

pub(crate) fn final_affine(net: &ReluNet) -> Result<(&Matrix, &Vector)> {
    match net.layers().last() {
        Some(Layer::Affine { weight, bias }) if weight.rows() >= 2 => Ok((weight, bias)),
        Some(Layer::Affine { .. }) => Err(Error::InvalidArgument(
            "logit differences need at least two classes".into(),
        )),
        _ => Err(Error::Unsupported(
            "logit differences need a network ending in an affine layer".into(),
        )),
    }
}

/// Upper bounds on `y_i − y_t` for all `i ≠ t` over `input`.
///
/// The final affine layer is replaced by its difference rows before the last
/// box step, so each difference is bounded jointly instead of as
/// `ȳ_i − y̲_t`.
pub fn logit_diff_upper(net: &ReluNet, input: &Hyperbox, target: usize) -> Result<Vector> {
    let (weight, bias) = final_affine(net)?;
    if target >= weight.rows() {
        return Err(Error::InvalidArgument(format!(
            "target {target} out of range for {} classes",
            weight.rows()
        )));
    }
    let trace = ibp_forward_prefix(net, input, net.layers().len() - 1)?;
    let (diff_w, diff_b) = elide_final_layer(weight, bias, target);
    Ok(affine_transform(trace.output(), &diff_w, &diff_b)?.upper())
}

/// True iff every logit-difference upper bound over `B^ε(x)` is strictly
/// negative.
pub fn certify(net: &ReluNet, x: &[f64], eps: f64, target: usize) -> Result<bool> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be nonnegative, got {eps}")));
    }
    let bounds = logit_diff_upper(net, &Hyperbox::around(x, eps)?, target)?;
    Ok(bounds.iter().all(|&u| u < 0.0))
}
