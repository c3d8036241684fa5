use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::matrix::Matrix;

/// Counter-based random stream identified by `(seed, stream)`.
///
/// Two generators built from the same pair yield bit-identical sequences on
/// every platform. Monte-Carlo drivers give each sample its own stream id so
/// results do not depend on how the work is scheduled.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh generator with the same seed and a different stream.
    pub fn fork(&self, stream: u64) -> Rng {
        Rng::new(self.seed, stream)
    }

    /// Derives a child seed from this stream, for nesting independent
    /// experiments (e.g. one per training run).
    pub fn derive_seed(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal(&mut self, sigma: f64) -> f64 {
        sigma * self.standard_normal()
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn sign(&mut self) -> f64 {
        if self.inner.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}

/// Runs `f` once per sample index on its own stream `rng.fork(index)`, in
/// parallel, and returns the results in index order.
pub fn per_sample<T, F>(rng: &Rng, samples: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Rng) -> T + Sync,
{
    use rayon::prelude::*;
    (0..samples as u64).into_par_iter().map(|s| f(rng.fork(s))).collect()
}

/// Matrix with i.i.d. N(0, σ²) entries, drawn in row-major order.
pub fn sample_gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize, sigma: f64) -> Matrix {
    assert!(sigma > 0.0, "sigma must be positive");
    Matrix::from_fn(rows, cols, |_, _| rng.normal(sigma))
}

/// Haar-distributed `d × d` orthogonal matrix.
pub fn sample_haar_orthogonal(rng: &mut Rng, d: usize) -> Matrix {
    sample_haar_columns(rng, d, d)
}

/// The first `k` columns of a Haar-distributed `d × d` orthogonal matrix.
///
/// Sign-corrected QR of a Gaussian matrix: the first `k` columns of `Q` only
/// depend on the first `k` Gaussian columns, so a thin factorisation of a
/// `d × k` draw gives exactly the leading columns of the full sample.
pub fn sample_haar_columns(rng: &mut Rng, d: usize, k: usize) -> Matrix {
    assert!(k >= 1 && k <= d, "need 1 <= k <= d");
    let g = sample_gaussian_matrix(rng, d, k, 1.0);
    super::qr::thin_q_positive(&g)
}
