//! Deep linear networks: optimal versus layer-wise box propagation,
//! tightness, and sign conditions for propagation invariance.

use crate::bounds::{ibp_forward, Hyperbox};
use crate::error::{Error, Result};
use crate::net::{backward_point, Layer, ReluNet, Shape};
use crate::numerics::{sample_gaussian_matrix, Matrix, Rng, Vector};

/// `f(x) = W_L ⋯ W_1 x`. `weights[0]` is applied first.
#[derive(Clone, Debug, PartialEq)]
pub struct Dln {
    weights: Vec<Matrix>,
}

impl Dln {
    pub fn new(weights: Vec<Matrix>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("a linear network needs at least one layer".into()));
        }
        for (k, pair) in weights.windows(2).enumerate() {
            if pair[1].cols() != pair[0].rows() {
                return Err(Error::shape(
                    "Dln::new",
                    format!(
                        "layer {} has {} columns but layer {} has {} rows",
                        k + 2,
                        pair[1].cols(),
                        k + 1,
                        pair[0].rows()
                    ),
                ));
            }
        }
        Ok(Dln { weights })
    }

    /// I.i.d. Gaussian layers for `dims = [d0, d1, …, dL]` with one standard
    /// deviation per layer.
    pub fn gaussian(dims: &[usize], sigmas: &[f64], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 || sigmas.len() != dims.len() - 1 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "need L+1 positive dims and L sigmas, got {dims:?} and {sigmas:?}"
            )));
        }
        if sigmas.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidArgument("sigmas must be positive".into()));
        }
        let weights = dims
            .windows(2)
            .zip(sigmas)
            .map(|(p, &s)| sample_gaussian_matrix(rng, p[1], p[0], s))
            .collect();
        Dln::new(weights)
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().unwrap().rows()
    }

    /// `W_L ⋯ W_1`.
    pub fn collapse(&self) -> Matrix {
        let mut m = self.weights[0].clone();
        for w in &self.weights[1..] {
            m = w.matmul(&m).expect("chain checked at construction");
        }
        m
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vector> {
        let mut v: Vector = x.into();
        for w in &self.weights {
            v = w.matvec(&v)?;
        }
        Ok(v)
    }

    /// Bias-free network without activations computing the same map.
    pub fn to_relu_net(&self) -> ReluNet {
        let layers = self
            .weights
            .iter()
            .map(|w| Layer::affine(w.clone(), Vector::zeros(w.rows())).unwrap())
            .collect();
        ReluNet::new(Shape::Flat(self.input_dim()), layers).expect("chain checked at construction")
    }
}

fn check_eps(f: &Dln, eps: &[f64]) -> Result<()> {
    if eps.len() != f.input_dim() {
        return Err(Error::shape(
            "tightness",
            format!("eps has {} entries, network input {}", eps.len(), f.input_dim()),
        ));
    }
    if eps.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
        return Err(Error::InvalidArgument("eps must be finite and nonnegative".into()));
    }
    Ok(())
}

/// Radius of the tightest box around `f(B^ε(x))`: `|Π W| ε`.
pub fn optimal_radius(f: &Dln, eps: &[f64]) -> Result<Vector> {
    check_eps(f, eps)?;
    f.collapse().abs().matvec(eps)
}

/// Radius reached by propagating boxes one layer at a time: `(Π |W|) ε`.
pub fn layerwise_radius(f: &Dln, eps: &[f64]) -> Result<Vector> {
    check_eps(f, eps)?;
    let mut r: Vector = eps.into();
    for w in f.weights() {
        r = w.abs().matvec(&r)?;
    }
    Ok(r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TightnessReport {
    pub optimal_radius: Vector,
    pub layerwise_radius: Vector,
    pub tau: Vector,
    pub mean_tau: f64,
    /// Output dims where the layer-wise radius is zero; `tau` is 1 there.
    pub degenerate: Vec<bool>,
}

impl TightnessReport {
    pub fn from_radii(optimal: Vector, layerwise: Vector) -> Self {
        let degenerate: Vec<bool> = layerwise.iter().map(|&l| l == 0.0).collect();
        let tau: Vector = optimal
            .iter()
            .zip(layerwise.iter())
            .map(|(&o, &l)| if l == 0.0 { 1.0 } else { o / l })
            .collect();
        let mean_tau = tau.mean();
        TightnessReport {
            optimal_radius: optimal,
            layerwise_radius: layerwise,
            tau,
            mean_tau,
            degenerate,
        }
    }

    pub fn all_degenerate(&self) -> bool {
        self.degenerate.iter().all(|&d| d)
    }
}

pub fn global_tightness(f: &Dln, eps: &[f64]) -> Result<TightnessReport> {
    Ok(TightnessReport::from_radii(
        optimal_radius(f, eps)?,
        layerwise_radius(f, eps)?,
    ))
}

/// Result of the two-layer sign test, one flag per entry of `W2 W1`.
#[derive(Clone, Debug, PartialEq)]
pub struct PiCheck {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<bool>,
    pub overall: bool,
}

impl PiCheck {
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.cols + j]
    }
}

/// For every `(i, j)`, true iff the products `W2[i,k] W1[k,j]` share a sign.
/// Products with `|p| ≤ tol · Σ_k |p_k|` count as zero and match either sign.
pub fn is_propagation_invariant_2layer(w2: &Matrix, w1: &Matrix, tol: f64) -> Result<PiCheck> {
    if w2.cols() != w1.rows() {
        return Err(Error::shape(
            "is_propagation_invariant_2layer",
            format!("W2 is {}x{}, W1 is {}x{}", w2.rows(), w2.cols(), w1.rows(), w1.cols()),
        ));
    }
    let (rows, cols, inner) = (w2.rows(), w1.cols(), w2.cols());
    let mut entries = Vec::with_capacity(rows * cols);
    let mut products = vec![0.0; inner];
    for i in 0..rows {
        for j in 0..cols {
            for (k, p) in products.iter_mut().enumerate() {
                *p = w2[(i, k)] * w1[(k, j)];
            }
            let scale: f64 = products.iter().map(|p| p.abs()).sum();
            let cutoff = tol * scale;
            let has_pos = products.iter().any(|&p| p > cutoff);
            let has_neg = products.iter().any(|&p| p < -cutoff);
            entries.push(!(has_pos && has_neg));
        }
    }
    let overall = entries.iter().all(|&e| e);
    Ok(PiCheck {
        rows,
        cols,
        entries,
        overall,
    })
}

/// First 2×2 block `(i, i′, j, j′)` of `m` whose four entries multiply to a
/// negative number, if any.
pub fn non_invariance_witness(m: &Matrix) -> Option<(usize, usize, usize, usize)> {
    let (rows, cols) = m.shape();
    for i in 0..rows {
        for i2 in i + 1..rows {
            let mut first_pos = None;
            let mut first_neg = None;
            for j in 0..cols {
                let s = m[(i, j)] * m[(i2, j)];
                if s > 0.0 && first_pos.is_none() {
                    first_pos = Some(j);
                } else if s < 0.0 && first_neg.is_none() {
                    first_neg = Some(j);
                }
                if let (Some(a), Some(b)) = (first_pos, first_neg) {
                    return Some((i, i2, a.min(b), a.max(b)));
                }
            }
        }
    }
    None
}

fn check_signs(v: &[f64], what: &str) -> Result<()> {
    if v.is_empty() || v.iter().any(|&s| s != 1.0 && s != -1.0) {
        return Err(Error::InvalidArgument(format!("{what} must be a nonempty ±1 vector")));
    }
    Ok(())
}

/// Completes a sign matrix from its first row and first column with
/// `s(i+1, j+1) = s(i, j) · s(i, j+1) · s(i+1, j)`.
pub fn synthesize_pi_signs(row_signs: &[f64], col_signs: &[f64]) -> Result<Matrix> {
    check_signs(row_signs, "row signs")?;
    check_signs(col_signs, "column signs")?;
    if row_signs[0] != col_signs[0] {
        return Err(Error::InvalidArgument(
            "first row and first column disagree on the corner entry".into(),
        ));
    }
    let (rows, cols) = (col_signs.len(), row_signs.len());
    let mut s = Matrix::zeros(rows, cols);
    for j in 0..cols {
        s[(0, j)] = row_signs[j];
    }
    for i in 0..rows {
        s[(i, 0)] = col_signs[i];
    }
    for i in 0..rows - 1 {
        for j in 0..cols - 1 {
            s[(i + 1, j + 1)] = s[(i, j)] * s[(i, j + 1)] * s[(i + 1, j)];
        }
    }
    Ok(s)
}

/// Factors `W2 = diag(r) |G2|` and `W1 = |G1| diag(c)` whose product has the
/// sign pattern `signs` (as produced by [`synthesize_pi_signs`]) and which
/// satisfy the two-layer sign condition for any magnitudes `G2`, `G1`.
pub fn pi_factors(signs: &Matrix, g2: &Matrix, g1: &Matrix) -> Result<(Matrix, Matrix)> {
    if g2.rows() != signs.rows() || g1.cols() != signs.cols() || g2.cols() != g1.rows() {
        return Err(Error::shape("pi_factors", "magnitude shapes do not match the sign matrix"));
    }
    let corner = signs[(0, 0)];
    let w2 = Matrix::from_fn(g2.rows(), g2.cols(), |i, k| signs[(i, 0)] * g2[(i, k)].abs());
    let w1 = Matrix::from_fn(g1.rows(), g1.cols(), |k, j| {
        signs[(0, j)] * corner * g1[(k, j)].abs()
    });
    Ok((w2, w1))
}

/// ReLU on/off state recorded at each `Relu` layer, in layer order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivationPattern {
    pub layers: Vec<Vec<bool>>,
}

impl ActivationPattern {
    /// `d = 1` iff the pre-activation is strictly positive.
    pub fn of(net: &ReluNet, x: &[f64]) -> Result<Self> {
        let acts = net.forward_trace(x)?;
        let layers = net
            .layers()
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Relu))
            .map(|(k, _)| acts[k].iter().map(|&v| v > 0.0).collect())
            .collect();
        Ok(ActivationPattern { layers })
    }

    pub fn active_fraction(&self) -> f64 {
        let total: usize = self.layers.iter().map(Vec::len).sum();
        if total == 0 {
            return 1.0;
        }
        let on: usize = self.layers.iter().map(|l| l.iter().filter(|&&d| d).count()).sum();
        on as f64 / total as f64
    }
}

/// Tightness of the linear map obtained by freezing the activation pattern
/// at `x`, with unit input radius.
pub fn local_tightness(net: &ReluNet, x: &[f64]) -> Result<TightnessReport> {
    let pattern = ActivationPattern::of(net, x)?;
    let outputs = net.output_len();

    let mut optimal = Vec::with_capacity(outputs);
    let mut unit = vec![0.0; outputs];
    for i in 0..outputs {
        unit[i] = 1.0;
        let g = backward_point(net, x, &unit)?;
        optimal.push(g.input.iter().map(|v| v.abs()).sum::<f64>());
        unit[i] = 0.0;
    }

    let mut r = vec![1.0; net.input_len()];
    let mut masks = pattern.layers.iter();
    for layer in net.layers() {
        r = match layer {
            Layer::Relu => {
                let d = masks.next().unwrap();
                r.iter().zip(d).map(|(v, &on)| if on { *v } else { 0.0 }).collect()
            }
            _ => layer.linear(&r, true),
        };
    }
    Ok(TightnessReport::from_radii(optimal.into(), r.into()))
}

/// Grid lower bound on the optimal output radius over `B^ε(x)`, divided by
/// the IBP radius. Each axis is split into `grid_points` intervals, so the
/// corners are always evaluated and doubling `grid_points` only adds points.
pub fn finite_eps_tightness_oracle(
    net: &ReluNet,
    x: &[f64],
    eps: f64,
    grid_points: usize,
) -> Result<Vector> {
    let d = net.input_len();
    if d > 3 {
        return Err(Error::Unsupported(format!(
            "grid oracle is limited to 3 input dims, network has {d}"
        )));
    }
    if grid_points == 0 {
        return Err(Error::InvalidArgument("grid_points must be positive".into()));
    }
    net.check_input(x.len(), "finite_eps_tightness_oracle")?;
    let ibp = ibp_forward(net, &Hyperbox::around(x, eps)?)?;
    let outputs = net.output_len();
    let mut lo = vec![f64::INFINITY; outputs];
    let mut hi = vec![f64::NEG_INFINITY; outputs];
    let per_axis = grid_points + 1;
    let mut idx = vec![0usize; d];
    let mut p = vec![0.0; d];
    loop {
        for a in 0..d {
            let t = idx[a] as f64 / grid_points as f64;
            p[a] = x[a] - eps + 2.0 * eps * t;
        }
        let y = net.forward(&p)?;
        for o in 0..outputs {
            lo[o] = lo[o].min(y[o]);
            hi[o] = hi[o].max(y[o]);
        }
        let mut a = 0;
        loop {
            if a == d {
                let tau = (0..outputs)
                    .map(|o| {
                        let r = ibp.output().radius()[o];
                        if r == 0.0 {
                            1.0
                        } else {
                            0.5 * (hi[o] - lo[o]) / r
                        }
                    })
                    .collect();
                return Ok(tau);
            }
            idx[a] += 1;
            if idx[a] < per_axis {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::{prop_assert, proptest};

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::new(rows.len(), rows[0].len(), rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    fn example() -> Dln {
        Dln::new(vec![m(&[&[1.0, 1.0], &[1.0, -1.0]]), m(&[&[1.0, 1.0]])]).unwrap()
    }

    #[test]
    fn collapse_cases() {
        let single = Dln::new(vec![m(&[&[2.0, -1.0]])]).unwrap();
        assert_eq!(single.collapse(), m(&[&[2.0, -1.0]]));
        assert_eq!(example().collapse(), m(&[&[2.0, 0.0]]));
        assert!(Dln::new(vec![m(&[&[1.0, 1.0]]), m(&[&[1.0, 1.0]])]).is_err());
        assert!(Dln::new(vec![]).is_err());
    }

    #[test]
    fn collapse_matches_forward() {
        let mut rng = Rng::new(3, 0);
        let f = Dln::gaussian(&[4, 6, 5, 3], &[1.0, 0.5, 2.0], &mut rng).unwrap();
        let c = f.collapse();
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.normal(1.0)).collect();
            let a = c.matvec(&x).unwrap();
            let b = f.forward(&x).unwrap();
            assert!(a.iter().zip(b.iter()).all(|(u, v)| (u - v).abs() < 1e-10));
        }
    }

    #[test]
    fn radii_of_the_worked_example() {
        let f = example();
        assert_eq!(optimal_radius(&f, &[1.0, 1.0]).unwrap().as_slice(), &[2.0]);
        assert_eq!(layerwise_radius(&f, &[1.0, 1.0]).unwrap().as_slice(), &[4.0]);
        let t = global_tightness(&f, &[1.0, 1.0]).unwrap();
        assert_eq!(t.tau.as_slice(), &[0.5]);
        assert_eq!(t.mean_tau, 0.5);
        assert_eq!(optimal_radius(&f, &[0.0, 0.0]).unwrap().as_slice(), &[0.0]);
        assert!(optimal_radius(&f, &[1.0]).is_err());
        assert!(optimal_radius(&f, &[1.0, -1.0]).is_err());
    }

    #[test]
    fn optimal_radius_matches_corner_maximum() {
        // brute force: the image of a box under a linear map is extremal at corners.
        let mut rng = Rng::new(8, 0);
        let f = Dln::gaussian(&[3, 4, 2], &[1.0, 1.0], &mut rng).unwrap();
        let eps = [0.3, 0.1, 0.7];
        let opt = optimal_radius(&f, &eps).unwrap();
        for o in 0..2 {
            let mut hi = f64::MIN;
            for mask in 0..8 {
                let x: Vec<f64> = (0..3).map(|a| if mask >> a & 1 == 1 { eps[a] } else { -eps[a] }).collect();
                hi = hi.max(f.forward(&x).unwrap()[o]);
            }
            assert!((hi - opt[o]).abs() < 1e-12);
        }
    }

    #[test]
    fn nonnegative_weights_are_tight() {
        let mut rng = Rng::new(1, 0);
        let f = Dln::gaussian(&[5, 7, 6, 3], &[1.0; 3], &mut rng).unwrap();
        let pos = Dln::new(f.weights().iter().map(|w| w.abs()).collect()).unwrap();
        let t = global_tightness(&pos, &[0.2; 5]).unwrap();
        assert!(t.tau.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(t.degenerate.iter().all(|&d| !d));
        let single = Dln::new(vec![f.weights()[0].clone()]).unwrap();
        assert_eq!(
            optimal_radius(&single, &[0.2; 5]).unwrap(),
            layerwise_radius(&single, &[0.2; 5]).unwrap()
        );
    }

    #[test]
    fn degenerate_dims_are_flagged() {
        let f = Dln::new(vec![m(&[&[1.0, 0.0], &[0.0, 0.0]])]).unwrap();
        let t = global_tightness(&f, &[1.0, 1.0]).unwrap();
        assert_eq!(t.degenerate, vec![false, true]);
        assert_eq!(t.tau.as_slice(), &[1.0, 1.0]);
        assert!(!t.all_degenerate());
    }

    #[test]
    fn layerwise_equals_ibp_on_equivalent_net() {
        let mut rng = Rng::new(4, 0);
        let f = Dln::gaussian(&[3, 5, 4, 2], &[1.0; 3], &mut rng).unwrap();
        let eps = [0.1, 0.2, 0.3];
        let ibp = ibp_forward(&f.to_relu_net(), &Hyperbox::new(vec![0.5; 3].into(), eps.to_vec().into()).unwrap()).unwrap();
        let lw = layerwise_radius(&f, &eps).unwrap();
        assert!(ibp.output().radius().iter().zip(lw.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn sign_test_examples() {
        let f = example();
        let check = is_propagation_invariant_2layer(&f.weights()[1], &f.weights()[0], 1e-12).unwrap();
        assert!(check.get(0, 0));
        assert!(!check.get(0, 1));
        assert!(!check.overall);
        let pos = is_propagation_invariant_2layer(&m(&[&[1.0, 2.0]]), &m(&[&[1.0], &[3.0]]), 1e-12).unwrap();
        assert!(pos.overall);
        // zero products are compatible with both signs
        let z = is_propagation_invariant_2layer(&m(&[&[1.0, 0.0]]), &m(&[&[1.0], &[-3.0]]), 1e-12).unwrap();
        assert!(z.overall);
    }

    #[test]
    fn witness_examples() {
        assert_eq!(non_invariance_witness(&m(&[&[1.0, 1.0], &[1.0, 1.0]])), None);
        assert_eq!(non_invariance_witness(&m(&[&[1.0, 1.0], &[1.0, -1.0]])), Some((0, 1, 0, 1)));
    }

    #[test]
    fn synthesis_examples() {
        let s = synthesize_pi_signs(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]).unwrap();
        assert!(s.data().iter().all(|&v| v == 1.0));
        let s = synthesize_pi_signs(&[1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(s, m(&[&[1.0, -1.0], &[1.0, -1.0]]));
        assert!(synthesize_pi_signs(&[1.0, 1.0], &[-1.0, 1.0]).is_err());
        assert!(synthesize_pi_signs(&[1.0, 0.5], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn synthesized_signs_are_rank_one() {
        let mut rng = Rng::new(12, 0);
        for _ in 0..100 {
            let d = 1 + rng.below(8);
            let mut row: Vec<f64> = (0..d).map(|_| rng.sign()).collect();
            let mut col: Vec<f64> = (0..d).map(|_| rng.sign()).collect();
            col[0] = row[0];
            row[0] = col[0];
            let s = synthesize_pi_signs(&row, &col).unwrap();
            assert_eq!(non_invariance_witness(&s), None);
            for i in 0..d {
                for j in 0..d {
                    assert_eq!(s[(i, j)], col[i] * row[j] * row[0]);
                }
            }
        }
    }

    #[test]
    fn pi_factors_give_unit_tightness() {
        let mut rng = Rng::new(13, 0);
        for _ in 0..50 {
            let (d, h) = (1 + rng.below(6), 1 + rng.below(6));
            let row: Vec<f64> = (0..d).map(|_| rng.sign()).collect();
            let mut col: Vec<f64> = (0..d).map(|_| rng.sign()).collect();
            col[0] = row[0];
            let s = synthesize_pi_signs(&row, &col).unwrap();
            let g2 = sample_gaussian_matrix(&mut rng, d, h, 1.0);
            let g1 = sample_gaussian_matrix(&mut rng, h, d, 1.0);
            let (w2, w1) = pi_factors(&s, &g2, &g1).unwrap();
            let f = Dln::new(vec![w1.clone(), w2.clone()]).unwrap();
            let t = global_tightness(&f, &vec![1.0; d]).unwrap();
            assert!(t.tau.iter().all(|&v| (v - 1.0).abs() < 1e-9));
            assert!(is_propagation_invariant_2layer(&w2, &w1, 1e-12).unwrap().overall);
            let c = f.collapse();
            for i in 0..d {
                for j in 0..d {
                    assert!(c[(i, j)] * s[(i, j)] > 0.0);
                }
            }
        }
    }

    #[test]
    fn sign_test_agrees_with_unit_tightness() {
        let mut rng = Rng::new(14, 0);
        for _ in 0..300 {
            let dims = [1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4)];
            let f = Dln::gaussian(&dims, &[1.0, 1.0], &mut rng).unwrap();
            let check = is_propagation_invariant_2layer(&f.weights()[1], &f.weights()[0], 1e-12).unwrap();
            let t = global_tightness(&f, &vec![1.0; dims[0]]).unwrap();
            assert_eq!(check.overall, t.tau.iter().all(|&v| v >= 1.0 - 1e-9));
        }
    }

    fn small_relu_net(rng: &mut Rng, dims: &[usize]) -> ReluNet {
        let mut layers = Vec::new();
        for (i, p) in dims.windows(2).enumerate() {
            let w = sample_gaussian_matrix(rng, p[1], p[0], (2.0 / p[0] as f64).sqrt());
            let b: Vector = (0..p[1]).map(|_| rng.normal(0.1)).collect();
            layers.push(Layer::affine(w, b).unwrap());
            if i + 2 < dims.len() {
                layers.push(Layer::Relu);
            }
        }
        ReluNet::new(Shape::Flat(dims[0]), layers).unwrap()
    }

    #[test]
    fn local_tightness_special_cases() {
        let mut rng = Rng::new(15, 0);
        // nonnegative weights, positive inputs and biases: everything active
        let dims = [3, 5, 4];
        let layers = vec![
            Layer::affine(sample_gaussian_matrix(&mut rng, 5, 3, 1.0).abs(), Vector::filled(5, 0.1)).unwrap(),
            Layer::Relu,
            Layer::affine(sample_gaussian_matrix(&mut rng, 4, 5, 1.0).abs(), Vector::zeros(4)).unwrap(),
        ];
        let net = ReluNet::new(Shape::Flat(dims[0]), layers).unwrap();
        let t = local_tightness(&net, &[0.2, 0.4, 0.6]).unwrap();
        assert!(t.tau.iter().all(|&v| (v - 1.0).abs() < 1e-12));

        // one affine layer: always tight
        let one = ReluNet::new(
            Shape::Flat(3),
            vec![Layer::affine(sample_gaussian_matrix(&mut rng, 2, 3, 1.0), Vector::zeros(2)).unwrap()],
        )
        .unwrap();
        let t = local_tightness(&one, &[0.1, -0.2, 0.3]).unwrap();
        assert!(t.tau.iter().all(|&v| (v - 1.0).abs() < 1e-12));

        // everything dead
        let dead = ReluNet::new(
            Shape::Flat(2),
            vec![
                Layer::affine(Matrix::identity(2), Vector::filled(2, -5.0)).unwrap(),
                Layer::Relu,
                Layer::affine(Matrix::identity(2), Vector::zeros(2)).unwrap(),
            ],
        )
        .unwrap();
        assert!(local_tightness(&dead, &[0.0, 0.0]).unwrap().all_degenerate());
    }

    #[test]
    fn fully_active_net_matches_global_tightness() {
        let mut rng = Rng::new(16, 0);
        let w1 = sample_gaussian_matrix(&mut rng, 6, 3, 1.0);
        let w2 = sample_gaussian_matrix(&mut rng, 2, 6, 1.0);
        let net = ReluNet::new(
            Shape::Flat(3),
            vec![
                Layer::affine(w1.clone(), Vector::filled(6, 100.0)).unwrap(),
                Layer::Relu,
                Layer::affine(w2.clone(), Vector::zeros(2)).unwrap(),
            ],
        )
        .unwrap();
        let pattern = ActivationPattern::of(&net, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(pattern.active_fraction(), 1.0);
        let local = local_tightness(&net, &[0.1, 0.2, 0.3]).unwrap();
        let global = global_tightness(&Dln::new(vec![w1, w2]).unwrap(), &[1.0; 3]).unwrap();
        assert!(local.tau.iter().zip(global.tau.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn zero_preactivation_counts_as_inactive() {
        let net = ReluNet::new(
            Shape::Flat(1),
            vec![Layer::affine(Matrix::identity(1), Vector::zeros(1)).unwrap(), Layer::Relu],
        )
        .unwrap();
        assert_eq!(ActivationPattern::of(&net, &[0.0]).unwrap().layers, vec![vec![false]]);
    }

    #[test]
    fn oracle_on_linear_net_matches_closed_form() {
        let mut rng = Rng::new(17, 0);
        let f = Dln::gaussian(&[2, 5, 3], &[1.0, 1.0], &mut rng).unwrap();
        let tau = finite_eps_tightness_oracle(&f.to_relu_net(), &[0.3, -0.1], 0.05, 4).unwrap();
        let want = global_tightness(&f, &[0.05, 0.05]).unwrap();
        assert!(tau.iter().zip(want.tau.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn oracle_matches_local_tightness_at_small_eps() {
        let mut rng = Rng::new(18, 0);
        let mut checked = 0;
        while checked < 20 {
            let net = small_relu_net(&mut rng, &[2, 8, 8, 2]);
            let x = [rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)];
            let eps = 1e-6;
            // skip points whose activation pattern is not constant on the ball
            let ibp = ibp_forward(&net, &Hyperbox::around(&x, eps).unwrap()).unwrap();
            let stable = net.layers().iter().enumerate().filter(|(_, l)| matches!(l, Layer::Relu)).all(|(k, _)| {
                let b = &ibp.boxes()[k];
                b.lower().iter().zip(b.upper().iter()).all(|(l, u)| *l > 0.0 || *u < 0.0)
            });
            if !stable {
                continue;
            }
            let oracle = finite_eps_tightness_oracle(&net, &x, eps, 2).unwrap();
            let local = local_tightness(&net, &x).unwrap();
            for (a, b) in oracle.iter().zip(local.tau.iter()) {
                assert!((a - b).abs() < 1e-3, "{a} vs {b}");
            }
            checked += 1;
        }
    }

    #[test]
    fn oracle_refines_with_grid() {
        let mut rng = Rng::new(19, 0);
        let net = small_relu_net(&mut rng, &[2, 8, 8, 2]);
        let x = [0.4, 0.6];
        let mut prev = finite_eps_tightness_oracle(&net, &x, 0.3, 1).unwrap();
        for g in [2, 4, 8, 16] {
            let next = finite_eps_tightness_oracle(&net, &x, 0.3, g).unwrap();
            assert!(next.iter().zip(prev.iter()).all(|(a, b)| a >= b));
            prev = next;
        }
        let wide = small_relu_net(&mut rng, &[4, 3, 2]);
        assert!(matches!(
            finite_eps_tightness_oracle(&wide, &[0.0; 4], 0.1, 2),
            Err(Error::Unsupported(_))
        ));
    }

    proptest! {
        #[test]
        fn tightness_bounded_and_scale_invariant(seed in 0u64..500, c in 0.01f64..100.0) {
            let mut rng = Rng::new(seed, 0);
            let f = Dln::gaussian(&[3, 4, 5, 2], &[1.0; 3], &mut rng).unwrap();
            let t = global_tightness(&f, &[1.0, 0.5, 2.0]).unwrap();
            for (o, l) in t.optimal_radius.iter().zip(t.layerwise_radius.iter()) {
                prop_assert!(*o <= l + 1e-12);
            }
            prop_assert!(t.tau.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
            let mut ws = f.weights().to_vec();
            ws[1] = ws[1].scale(c);
            let scaled = global_tightness(&Dln::new(ws).unwrap(), &[1.0, 0.5, 2.0]).unwrap();
            for (a, b) in t.tau.iter().zip(scaled.tau.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
