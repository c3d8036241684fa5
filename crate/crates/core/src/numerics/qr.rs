use super::matrix::Matrix;

/// Thin Householder QR of a tall `d × k` matrix, returning the `d × k` factor
/// `Q` with columns flipped so that `diag(R) ≥ 0`.
pub fn thin_q_positive(a: &Matrix) -> Matrix {
    let (d, k) = a.shape();
    assert!(k <= d, "thin QR needs rows >= cols");
    let mut work = a.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut r_diag = vec![0.0; k];

    for j in 0..k {
        let norm = (j..d).map(|i| work[(i, j)].powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        let x0 = work[(j, j)];
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (j..d).map(|i| work[(i, j)]).collect();
        v[0] -= alpha;
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            r_diag[j] = alpha;
            reflectors.push(Vec::new());
            continue;
        }
        v.iter_mut().for_each(|x| *x /= vnorm);
        for c in j..k {
            let dot: f64 = v.iter().enumerate().map(|(t, vi)| vi * work[(j + t, c)]).sum();
            for (t, vi) in v.iter().enumerate() {
                work[(j + t, c)] -= 2.0 * vi * dot;
            }
        }
        r_diag[j] = alpha;
        reflectors.push(v);
    }

    // Q = H_0 H_1 … H_{k−1} applied to the first k columns of the identity.
    let mut q = Matrix::from_fn(d, k, |i, j| if i == j { 1.0 } else { 0.0 });
    for j in (0..k).rev() {
        let v = &reflectors[j];
        if v.is_empty() {
            continue;
        }
        for c in 0..k {
            let dot: f64 = v.iter().enumerate().map(|(t, vi)| vi * q[(j + t, c)]).sum();
            if dot != 0.0 {
                for (t, vi) in v.iter().enumerate() {
                    q[(j + t, c)] -= 2.0 * vi * dot;
                }
            }
        }
    }
    for (j, &r) in r_diag.iter().enumerate() {
        if r < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::super::rng::{sample_gaussian_matrix, sample_haar_columns, sample_haar_orthogonal, Rng};
    use super::*;

    fn gram_deviation(q: &Matrix) -> f64 {
        let g = q.transpose().matmul(q).unwrap();
        g.max_abs_diff(&Matrix::identity(q.cols()))
    }

    #[test]
    fn reconstructs_input() {
        // a = Q R with R = Qᵀ a upper triangular and positive on the diagonal.
        let mut rng = Rng::new(11, 0);
        let a = sample_gaussian_matrix(&mut rng, 7, 4, 1.0);
        let q = thin_q_positive(&a);
        assert!(gram_deviation(&q) < 1e-12);
        let r = q.transpose().matmul(&a).unwrap();
        for i in 0..4 {
            assert!(r[(i, i)] > 0.0);
            for j in 0..i {
                assert!(r[(i, j)].abs() < 1e-12);
            }
        }
        let back = q.matmul(&r).unwrap();
        assert!(back.max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn orthogonal_samples() {
        for seed in 0..20 {
            let mut rng = Rng::new(seed, 0);
            let u = sample_haar_orthogonal(&mut rng, 1 + (seed as usize % 30));
            assert!(gram_deviation(&u) < 1e-10);
        }
    }

    #[test]
    fn thin_columns_match_full_prefix() {
        let full = sample_haar_orthogonal(&mut Rng::new(9, 4), 12);
        let mut rng = Rng::new(9, 4);
        let g = sample_gaussian_matrix(&mut rng, 12, 12, 1.0);
        let prefix = Matrix::from_fn(12, 5, |i, j| g[(i, j)]);
        let thin = thin_q_positive(&prefix);
        let lead = Matrix::from_fn(12, 5, |i, j| full[(i, j)]);
        assert!(thin.max_abs_diff(&lead) < 1e-12);
        let _ = sample_haar_columns(&mut Rng::new(0, 0), 12, 5);
    }

    #[test]
    fn one_dimensional_sign_balance() {
        let n = 10_000;
        let positive = (0..n)
            .filter(|&s| sample_haar_orthogonal(&mut Rng::new(s, 0), 1)[(0, 0)] > 0.0)
            .count();
        let frac = positive as f64 / n as f64;
        assert!((frac - 0.5).abs() <= 0.02, "fraction {frac}");
        let u = sample_haar_orthogonal(&mut Rng::new(0, 0), 1);
        assert_eq!(u[(0, 0)].abs(), 1.0);
    }

    #[test]
    fn first_column_is_approximately_gaussian() {
        let d = 100;
        let samples = 10_000u64;
        let mut values: Vec<f64> = Vec::with_capacity(d * samples as usize);
        for s in 0..samples {
            let u = sample_haar_columns(&mut Rng::new(2024, s), d, 1);
            values.extend((0..d).map(|i| u[(i, 0)] * (d as f64).sqrt()));
        }
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = values.len() as f64;
        let cdf = |x: f64| 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
        let ks = values
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "Kolmogorov distance {ks}");
    }
}
