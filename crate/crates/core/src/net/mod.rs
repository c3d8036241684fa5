//! Small ReLU networks: dense and convolutional layers, point and box
//! gradients, and a binary checkpoint format.

pub(crate) mod backward;
mod conv;
pub mod io;

pub use backward::{backward_box, backward_point, BoxGrad, PointGrad};
pub use conv::Conv2d;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng, Vector};

/// Logical shape of an activation; data is always stored flat.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Flat(usize),
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Flat(n) => n,
            Shape::Image {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Affine { weight: Matrix, bias: Vector },
    Relu,
    Conv2d(Conv2d),
    Flatten,
}

impl Layer {
    pub fn affine(weight: Matrix, bias: Vector) -> Result<Layer> {
        if weight.rows() != bias.len() {
            return Err(Error::shape(
                "Layer::affine",
                format!("weight has {} rows, bias {} entries", weight.rows(), bias.len()),
            ));
        }
        Ok(Layer::Affine { weight, bias })
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Affine { .. } | Layer::Conv2d(_))
    }

    fn output_shape(&self, input: Shape) -> Result<Shape> {
        match (self, input) {
            (Layer::Affine { weight, .. }, Shape::Flat(n)) if n == weight.cols() => {
                Ok(Shape::Flat(weight.rows()))
            }
            (Layer::Affine { weight, .. }, s) => Err(Error::shape(
                "ReluNet",
                format!("affine layer expects Flat({}), got {s:?}", weight.cols()),
            )),
            (Layer::Relu, s) => Ok(s),
            (Layer::Flatten, s) => Ok(Shape::Flat(s.len())),
            (
                Layer::Conv2d(c),
                Shape::Image {
                    channels,
                    height,
                    width,
                },
            ) if channels == c.in_channels && height == c.in_height && width == c.in_width => {
                Ok(Shape::Image {
                    channels: c.out_channels,
                    height: c.out_height(),
                    width: c.out_width(),
                })
            }
            (Layer::Conv2d(c), s) => Err(Error::shape(
                "ReluNet",
                format!(
                    "conv expects {}x{}x{} image, got {s:?}",
                    c.in_channels, c.in_height, c.in_width
                ),
            )),
        }
    }

    /// Linear part `W x` (or `|W| x` when `abs`), without bias. Identity for
    /// `Flatten`; not defined for `Relu`.
    pub(crate) fn linear(&self, x: &[f64], abs: bool) -> Vec<f64> {
        match self {
            Layer::Affine { weight, .. } => (0..weight.rows())
                .map(|i| {
                    let row = weight.row(i);
                    if abs {
                        row.iter().zip(x).map(|(w, v)| w.abs() * v).sum()
                    } else {
                        row.iter().zip(x).map(|(w, v)| w * v).sum()
                    }
                })
                .collect(),
            Layer::Conv2d(c) => {
                if abs {
                    let k: Vec<f64> = c.weight.iter().map(|w| w.abs()).collect();
                    c.apply_kernel(&k, x)
                } else {
                    c.apply_kernel(&c.weight, x)
                }
            }
            Layer::Flatten => x.to_vec(),
            Layer::Relu => unreachable!("relu has no linear part"),
        }
    }

    /// Transposed linear part `Wᵀ g` (or `|W|ᵀ g`).
    pub(crate) fn linear_transpose(&self, g: &[f64], abs: bool) -> Vec<f64> {
        match self {
            Layer::Affine { weight, .. } => {
                let mut out = vec![0.0; weight.cols()];
                for (i, &gi) in g.iter().enumerate() {
                    if gi == 0.0 {
                        continue;
                    }
                    for (o, &w) in out.iter_mut().zip(weight.row(i)) {
                        *o += if abs { w.abs() } else { w } * gi;
                    }
                }
                out
            }
            Layer::Conv2d(c) => {
                if abs {
                    let k: Vec<f64> = c.weight.iter().map(|w| w.abs()).collect();
                    c.apply_kernel_transpose(&k, g)
                } else {
                    c.apply_kernel_transpose(&c.weight, g)
                }
            }
            Layer::Flatten => g.to_vec(),
            Layer::Relu => unreachable!("relu has no linear part"),
        }
    }

    pub(crate) fn add_bias(&self, y: &mut [f64]) {
        match self {
            Layer::Affine { bias, .. } => y.iter_mut().zip(bias.iter()).for_each(|(v, b)| *v += b),
            Layer::Conv2d(c) => {
                let plane = c.out_height() * c.out_width();
                for (o, &b) in c.bias.iter().enumerate() {
                    y[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v += b);
                }
            }
            _ => {}
        }
    }

    /// Adds `g xᵀ` into the weight gradient (times `sign(W)` when `signed`),
    /// and `g` into the bias gradient when `with_bias`.
    pub(crate) fn accumulate_grad(
        &self,
        g: &[f64],
        x: &[f64],
        signed: bool,
        with_bias: bool,
        acc: &mut ParamGrad,
    ) {
        match self {
            Layer::Affine { weight, .. } => {
                let cols = weight.cols();
                for (i, &gi) in g.iter().enumerate() {
                    if gi == 0.0 {
                        continue;
                    }
                    let w_row = weight.row(i);
                    let acc_row = &mut acc.weight[i * cols..(i + 1) * cols];
                    for ((a, &xj), &w) in acc_row.iter_mut().zip(x).zip(w_row) {
                        *a += if signed { signum0(w) } else { 1.0 } * gi * xj;
                    }
                }
                if with_bias {
                    acc.bias.iter_mut().zip(g).for_each(|(a, gi)| *a += gi);
                }
            }
            Layer::Conv2d(c) => {
                if signed {
                    let mut raw = vec![0.0; c.weight.len()];
                    c.accumulate_kernel_grad(g, x, &mut raw);
                    for ((a, r), w) in acc.weight.iter_mut().zip(raw).zip(&c.weight) {
                        *a += signum0(*w) * r;
                    }
                } else {
                    c.accumulate_kernel_grad(g, x, &mut acc.weight);
                }
                if with_bias {
                    let plane = c.out_height() * c.out_width();
                    for (o, a) in acc.bias.iter_mut().enumerate() {
                        *a += g[o * plane..(o + 1) * plane].iter().sum::<f64>();
                    }
                }
            }
            _ => {}
        }
    }

    fn param_slices(&self) -> Option<(&[f64], &[f64])> {
        match self {
            Layer::Affine { weight, bias } => Some((weight.data(), bias.as_slice())),
            Layer::Conv2d(c) => Some((&c.weight, &c.bias)),
            _ => None,
        }
    }

    fn param_slices_mut(&mut self) -> Option<(&mut [f64], &mut [f64])> {
        match self {
            Layer::Affine { weight, bias } => Some((weight.data_mut(), &mut bias[..])),
            Layer::Conv2d(c) => Some((&mut c.weight, &mut c.bias)),
            _ => None,
        }
    }
}

/// `sign` with `sign(0) = 0`.
pub(crate) fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of one parametric layer, laid out like its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Per-layer parameter gradients; `None` for layers without parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<ParamGrad>>,
}

impl Gradients {
    pub fn zeros_like(net: &ReluNet) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    l.param_slices().map(|(w, b)| ParamGrad {
                        weight: vec![0.0; w.len()],
                        bias: vec![0.0; b.len()],
                    })
                })
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|p| p.weight.iter().chain(&p.bias).copied())
            .collect()
    }

    pub fn l2_norm(&self) -> f64 {
        self.layers
            .iter()
            .flatten()
            .flat_map(|p| p.weight.iter().chain(&p.bias))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for p in self.layers.iter_mut().flatten() {
            p.weight.iter_mut().chain(p.bias.iter_mut()).for_each(|v| *v *= c);
        }
    }

    /// `self += c · other`.
    pub fn add_scaled(&mut self, other: &Gradients, c: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (a, b) {
                a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += c * y);
                a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += c * y);
            }
        }
    }

    pub fn dot(&self, other: &Gradients) -> f64 {
        self.flatten().iter().zip(other.flatten()).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .all(|p| p.weight.iter().chain(&p.bias).all(|v| v.is_finite()))
    }
}

/// A feed-forward network of affine, convolutional, flatten and ReLU layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ReluNet {
    input_shape: Shape,
    layers: Vec<Layer>,
    shapes: Vec<Shape>,
}

impl ReluNet {
    pub fn new(input_shape: Shape, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        let mut shapes = vec![input_shape];
        for layer in &layers {
            let next = layer.output_shape(*shapes.last().unwrap())?;
            shapes.push(next);
        }
        for layer in &layers {
            if let Some((w, b)) = layer.param_slices() {
                if w.iter().chain(b).any(|v| !v.is_finite()) {
                    return Err(Error::Domain("non-finite network parameter".into()));
                }
            }
        }
        Ok(ReluNet {
            input_shape,
            layers,
            shapes,
        })
    }

    /// Fully connected ReLU network with `dims = [in, h1, …, out]`, Gaussian
    /// fan-in initialisation (σ² = 2/fan_in) and zero biases.
    pub fn mlp(dims: &[usize], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad mlp dims {dims:?}")));
        }
        let mut layers = Vec::new();
        for (i, pair) in dims.windows(2).enumerate() {
            let sigma = (2.0 / pair[0] as f64).sqrt();
            let w = Matrix::from_fn(pair[1], pair[0], |_, _| rng.normal(sigma));
            layers.push(Layer::affine(w, Vector::zeros(pair[1]))?);
            if i + 2 < dims.len() {
                layers.push(Layer::Relu);
            }
        }
        ReluNet::new(Shape::Flat(dims[0]), layers)
    }

    /// Two strided convolutions followed by a dense classifier, for
    /// `channels × side × side` images.
    pub fn cnn3(channels: usize, side: usize, classes: usize, rng: &mut Rng) -> Result<Self> {
        let conv = |rng: &mut Rng, cin: usize, cout: usize, h: usize| -> Result<Conv2d> {
            let (k, s, p) = (4, 2, 1);
            let sigma = (2.0 / (cin * k * k) as f64).sqrt();
            let w = (0..cout * cin * k * k).map(|_| rng.normal(sigma)).collect();
            Conv2d::new(cin, cout, k, s, p, h, h, w, vec![0.0; cout])
        };
        let c1 = conv(rng, channels, 8, side)?;
        let h1 = c1.out_height();
        let c2 = conv(rng, 8, 8, h1)?;
        let flat = c2.out_len();
        let sigma = (2.0 / flat as f64).sqrt();
        let fc = Matrix::from_fn(classes, flat, |_, _| rng.normal(sigma));
        ReluNet::new(
            Shape::Image {
                channels,
                height: side,
                width: side,
            },
            vec![
                Layer::Conv2d(c1),
                Layer::Relu,
                Layer::Conv2d(c2),
                Layer::Relu,
                Layer::Flatten,
                Layer::affine(fc, Vector::zeros(classes))?,
            ],
        )
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.len()
    }

    pub fn output_len(&self) -> usize {
        self.shapes.last().unwrap().len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Activation shapes, input first.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.param_slices())
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .filter_map(|l| l.param_slices())
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::shape(
                "set_flat_params",
                format!("expected {} values, got {}", self.num_params(), params.len()),
            ));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            if let Some((w, b)) = layer.param_slices_mut() {
                w.copy_from_slice(&params[offset..offset + w.len()]);
                offset += w.len();
                b.copy_from_slice(&params[offset..offset + b.len()]);
                offset += b.len();
            }
        }
        Ok(())
    }

    /// `θ ← θ + c · g`.
    pub fn apply_update(&mut self, grads: &Gradients, c: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            if let (Some((w, b)), Some(g)) = (layer.param_slices_mut(), g) {
                w.iter_mut().zip(&g.weight).for_each(|(p, d)| *p += c * d);
                b.iter_mut().zip(&g.bias).for_each(|(p, d)| *p += c * d);
            }
        }
    }

    pub(crate) fn check_input(&self, len: usize, op: &'static str) -> Result<()> {
        if len != self.input_len() {
            return Err(Error::shape(
                op,
                format!("network takes {} inputs, got {len}", self.input_len()),
            ));
        }
        Ok(())
    }

    /// All activations from input to output (length = layers + 1).
    pub fn forward_trace(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x.len(), "forward")?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let prev = acts.last().unwrap();
            let next = match layer {
                Layer::Relu => prev.iter().map(|&v| v.max(0.0)).collect(),
                _ => {
                    let mut y = layer.linear(prev, false);
                    layer.add_bias(&mut y);
                    y
                }
            };
            acts.push(next);
        }
        Ok(acts)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vector> {
        Ok(self.forward_trace(x)?.pop().unwrap().into())
    }

    /// Index of the largest logit (first on ties).
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
