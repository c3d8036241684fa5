//! Reverse-mode gradients through point evaluation and through IBP.

use super::{Gradients, Layer, ReluNet};
use crate::bounds::{Hyperbox, PropagationTrace};
use crate::error::{Error, Result};
use crate::numerics::Vector;

#[derive(Clone, Debug, PartialEq)]
pub struct PointGrad {
    pub params: Gradients,
    pub input: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoxGrad {
    pub params: Gradients,
    pub input_center: Vector,
    pub input_radius: Vector,
}

/// Gradient of `upstream · f(x)` with respect to the parameters and `x`.
/// The ReLU subgradient at zero is taken to be zero.
pub fn backward_point(net: &ReluNet, x: &[f64], upstream: &[f64]) -> Result<PointGrad> {
    if upstream.len() != net.output_len() {
        return Err(Error::shape(
            "backward_point",
            format!("upstream has {} entries, output {}", upstream.len(), net.output_len()),
        ));
    }
    let acts = net.forward_trace(x)?;
    let mut params = Gradients::zeros_like(net);
    let mut g = upstream.to_vec();
    for (k, layer) in net.layers().iter().enumerate().rev() {
        let input = &acts[k];
        g = match layer {
            Layer::Relu => g
                .iter()
                .zip(input)
                .map(|(gi, &v)| if v > 0.0 { *gi } else { 0.0 })
                .collect(),
            Layer::Flatten => g,
            _ => {
                let acc = params.layers[k].as_mut().unwrap();
                layer.accumulate_grad(&g, input, false, true, acc);
                layer.linear_transpose(&g, false)
            }
        };
    }
    Ok(PointGrad {
        params,
        input: g.into(),
    })
}

/// Gradient of `g_center · c_out + g_radius · r_out` through the box
/// propagation recorded in `trace`.
pub fn backward_box(
    net: &ReluNet,
    trace: &PropagationTrace,
    g_center: &[f64],
    g_radius: &[f64],
) -> Result<BoxGrad> {
    let n = net.layers().len();
    if trace.len() != n + 1 {
        return Err(Error::shape(
            "backward_box",
            format!("trace has {} boxes, network {} layers", trace.len(), n),
        ));
    }
    if g_center.len() != net.output_len() || g_radius.len() != net.output_len() {
        return Err(Error::shape("backward_box", "upstream length differs from output"));
    }
    let mut params = Gradients::zeros_like(net);
    let (c, r) = backward_box_from(
        net,
        trace.boxes(),
        n,
        g_center.to_vec(),
        g_radius.to_vec(),
        &mut params,
    );
    Ok(BoxGrad {
        params,
        input_center: c.into(),
        input_radius: r.into(),
    })
}

/// Propagates box gradients from `boxes[upto]` back to the input through
/// layers `upto-1, …, 0`, accumulating parameter gradients into `params`.
pub(crate) fn backward_box_from(
    net: &ReluNet,
    boxes: &[Hyperbox],
    upto: usize,
    mut gc: Vec<f64>,
    mut gr: Vec<f64>,
    params: &mut Gradients,
) -> (Vec<f64>, Vec<f64>) {
    for k in (0..upto).rev() {
        let layer = &net.layers()[k];
        let input = &boxes[k];
        match layer {
            Layer::Relu => {
                for (i, (c, r)) in input.center().iter().zip(input.radius().iter()).enumerate() {
                    let gu = if c + r > 0.0 { 0.5 * (gc[i] + gr[i]) } else { 0.0 };
                    let gl = if c - r > 0.0 { 0.5 * (gc[i] - gr[i]) } else { 0.0 };
                    gc[i] = gu + gl;
                    gr[i] = gu - gl;
                }
            }
            Layer::Flatten => {}
            _ => {
                let acc = params.layers[k].as_mut().unwrap();
                layer.accumulate_grad(&gc, input.center(), false, true, acc);
                layer.accumulate_grad(&gr, input.radius(), true, false, acc);
                gc = layer.linear_transpose(&gc, false);
                gr = layer.linear_transpose(&gr, true);
            }
        }
    }
    (gc, gr)
}
