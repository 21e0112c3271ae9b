//! Seeded parallel Monte Carlo.
//!
//! `n` samples are split over `workers` workers; worker `i` draws
//! `n / workers + (i < n % workers)` samples from its own ChaCha8 stream
//! `(seed, stream = i)`. Worker results are combined in worker order, so the
//! outcome depends only on `(seed, workers)` and not on thread scheduling.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Seed and worker count of a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub seed: u64,
    pub workers: usize,
}

impl McConfig {
    pub const DEFAULT_WORKERS: usize = 8;

    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            workers: Self::DEFAULT_WORKERS,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }
}

pub fn worker_rng(seed: u64, worker: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(worker as u64);
    rng
}

pub fn split_counts(n: usize, workers: usize) -> Vec<usize> {
    let workers = workers.max(1);
    (0..workers)
        .map(|i| n / workers + usize::from(i < n % workers))
        .collect()
}

/// Runs `f(rng, count)` once per worker in parallel and returns the results in
/// worker order.
pub fn run_workers<T, F>(n: usize, config: McConfig, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync,
{
    split_counts(n, config.workers)
        .into_par_iter()
        .enumerate()
        .map(|(i, count)| {
            let mut rng = worker_rng(config.seed, i);
            f(&mut rng, count)
        })
        .collect()
}

/// Mean and standard error of a real estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: u64,
}

/// Mean and standard errors (per component) of a complex estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexEstimate {
    pub mean: Complex64,
    pub se_re: f64,
    pub se_im: f64,
    pub n: u64,
}

impl ComplexEstimate {
    /// True when both components lie within `k` standard errors of `target`
    /// (plus `eps` to absorb zero-variance estimators).
    pub fn agrees_with(&self, target: Complex64, k: f64, eps: f64) -> bool {
        (self.mean.re - target.re).abs() <= k * self.se_re + eps
            && (self.mean.im - target.im).abs() <= k * self.se_im + eps
    }
}

impl RealEstimate {
    pub fn agrees_with(&self, target: f64, k: f64, eps: f64) -> bool {
        (self.mean - target).abs() <= k * self.se + eps
    }
}

/// Running sums for a real estimator; mergeable across workers.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RealAccumulator {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RealAccumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RealAccumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64) * (other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn estimate(&self) -> RealEstimate {
        let var = if self.n > 1 {
            self.m2 / (self.n - 1) as f64
        } else {
            0.0
        };
        RealEstimate {
            mean: self.mean,
            se: (var / self.n.max(1) as f64).sqrt(),
            n: self.n,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ComplexAccumulator {
    re: RealAccumulator,
    im: RealAccumulator,
}

impl ComplexAccumulator {
    pub fn push(&mut self, z: Complex64) {
        self.re.push(z.re);
        self.im.push(z.im);
    }

    pub fn merge(&mut self, other: &ComplexAccumulator) {
        self.re.merge(&other.re);
        self.im.merge(&other.im);
    }

    pub fn estimate(&self) -> ComplexEstimate {
        let (re, im) = (self.re.estimate(), self.im.estimate());
        ComplexEstimate {
            mean: Complex64::new(re.mean, im.mean),
            se_re: re.se,
            se_im: im.se,
            n: re.n,
        }
    }
}

pub fn merge_complex(parts: &[ComplexAccumulator]) -> ComplexEstimate {
    let mut total = ComplexAccumulator::default();
    for p in parts {
        total.merge(p);
    }
    total.estimate()
}

pub fn merge_real(parts: &[RealAccumulator]) -> RealEstimate {
    let mut total = RealAccumulator::default();
    for p in parts {
        total.merge(p);
    }
    total.estimate()
}

/// Streaming estimate of `E[v_i conj(v_j)]` for all index pairs of a complex
/// vector of fixed length.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceAccumulator {
    dim: usize,
    cells: Vec<ComplexAccumulator>,
}

impl CovarianceAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            cells: vec![ComplexAccumulator::default(); dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn push(&mut self, v: &[Complex64]) {
        assert_eq!(v.len(), self.dim, "covariance accumulator: length mismatch");
        for i in 0..self.dim {
            for j in 0..self.dim {
                self.cells[i * self.dim + j].push(v[i] * v[j].conj());
            }
        }
    }

    pub fn merge(&mut self, other: &CovarianceAccumulator) {
        assert_eq!(self.dim, other.dim);
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            a.merge(b);
        }
    }

    pub fn estimate(&self, i: usize, j: usize) -> ComplexEstimate {
        self.cells[i * self.dim + j].estimate()
    }

    /// Largest `|emp - exact| / (SE + eps)` over all cells and both components,
    /// i.e. the worst deviation in units of standard error.
    pub fn max_standardized_error(&self, exact: impl Fn(usize, usize) -> Complex64, eps: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let e = self.estimate(i, j);
                let target = exact(i, j);
                worst = worst
                    .max((e.mean.re - target.re).abs() / (e.se_re + eps))
                    .max((e.mean.im - target.im).abs() / (e.se_im + eps));
            }
        }
        worst
    }
}
