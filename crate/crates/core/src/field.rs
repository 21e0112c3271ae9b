//! Gaussian fields with covariance `(1 - alpha) G`.
//!
//! With i.i.d. real standard normal drivers `gfrak_r`,
//!
//! ```text
//! g_x = q^{-d/2} sum_r sqrt(lambda_r) theta^{x.r} gfrak_r
//! ```
//!
//! has `E[g_x conj(g_y)] = (1 - alpha) G(x, y)`. The weights are real only when
//! `rho` is, so every construction here rejects non-reversible walks.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::green::{green_eigenvalue, torus_box, TorusIndexSet, WrappedLaw};
use crate::krawtchouk::KrawtchoukTable;
use crate::mc::{run_workers, CovarianceAccumulator, McConfig};
use crate::walk::Spectrum;
use crate::zqd::{dft_in_place, Direction, Lattice, RootTable};

const REAL_TOL: f64 = 1e-12;

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Range(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    Ok(())
}

fn real_weight(lambda: Complex64, what: &str) -> Result<f64> {
    if lambda.im.abs() > REAL_TOL {
        return Err(Error::Reversibility(format!(
            "{what} has non-real eigenvalue {lambda}; the walk is not reversible"
        )));
    }
    Ok(lambda.re.max(0.0).sqrt())
}

fn standard_normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Synthesis map `driver -> g` for one `(spectrum, alpha)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSynth {
    lattice: Lattice,
    alpha: f64,
    weights: Vec<f64>,
}

/// One field with the driver that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub g: Vec<Complex64>,
    pub driver: Vec<f64>,
    pub alpha: f64,
}

impl FieldSynth {
    pub fn new(spec: &Spectrum, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !spec.is_real() {
            return Err(Error::Reversibility("field needs a real spectrum".into()));
        }
        let weights = spec
            .values()
            .iter()
            .map(|&rho| real_weight(green_eigenvalue(Complex64::new(rho.re, 0.0), alpha), "spectrum"))
            .collect::<Result<_>>()?;
        Ok(Self {
            lattice: spec.lattice(),
            alpha,
            weights,
        })
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `sqrt(lambda_r)` by rank of `r`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn synthesize(&self, driver: &[f64]) -> Result<FieldSample> {
        if driver.len() != self.lattice.size() {
            return Err(Error::Shape(format!(
                "driver has {} entries, expected {}",
                driver.len(),
                self.lattice.size()
            )));
        }
        let mut g: Vec<Complex64> = driver
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| Complex64::new(z * w, 0.0))
            .collect();
        dft_in_place(&mut g, self.lattice, Direction::Inverse);
        Ok(FieldSample {
            g,
            driver: driver.to_vec(),
            alpha: self.alpha,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> FieldSample {
        let driver = standard_normals(rng, self.lattice.size());
        self.synthesize(&driver).expect("driver has the lattice size")
    }

    /// Recovers the driver: `gfrak_r = q^{-d/2} sum_x theta^{-x.r} g_x / sqrt(lambda_r)`.
    /// Frequencies with `lambda_r = 0` carry no information and return 0.
    pub fn invert(&self, g: &[Complex64]) -> Result<Vec<Complex64>> {
        if g.len() != self.lattice.size() {
            return Err(Error::Shape("field length does not match the lattice".into()));
        }
        let mut v = g.to_vec();
        dft_in_place(&mut v, self.lattice, Direction::Forward);
        Ok(v.iter()
            .zip(&self.weights)
            .map(|(&z, &w)| if w > 0.0 { z / w } else { Complex64::new(0.0, 0.0) })
            .collect())
    }

    /// Exact `E[g_x conj(g_y)] = q^{-d} sum_r lambda_r theta^{(x-y).r}`.
    pub fn covariance(&self, x: usize, y: usize) -> Complex64 {
        let roots = RootTable::new(self.lattice.q());
        let z = self.lattice.sub_rank(x, y);
        let s: Complex64 = self
            .weights
            .iter()
            .enumerate()
            .map(|(r, &w)| roots.pow(self.lattice.dot_mod(z, r)) * (w * w))
            .sum();
        s / self.lattice.size() as f64
    }
}

/// `n_samples` fields; worker `i` draws from stream `i` of `mc.seed`.
pub fn sample_field(spec: &Spectrum, alpha: f64, n_samples: usize, mc: McConfig) -> Result<Vec<FieldSample>> {
    let synth = FieldSynth::new(spec, alpha)?;
    let parts = run_workers(n_samples, mc, |rng, count| {
        (0..count).map(|_| synth.sample(rng)).collect::<Vec<_>>()
    });
    Ok(parts.into_iter().flatten().collect())
}

/// Streams `n_samples` fields through a covariance accumulator without storing
/// them; `map` turns a field into the vector whose covariance is wanted.
pub fn field_covariance_mc(
    synth: &FieldSynth,
    n_samples: usize,
    mc: McConfig,
    dim: usize,
    map: impl Fn(&FieldSample) -> Vec<Complex64> + Sync,
) -> CovarianceAccumulator {
    let parts = run_workers(n_samples, mc, |rng, count| {
        let mut acc = CovarianceAccumulator::new(dim);
        for _ in 0..count {
            acc.push(&map(&synth.sample(rng)));
        }
        acc
    });
    let mut total = CovarianceAccumulator::new(dim);
    for p in &parts {
        total.merge(p);
    }
    total
}

/// Inverts a sample back to its driver.
pub fn invert_field(synth: &FieldSynth, sample: &FieldSample) -> Result<Vec<Complex64>> {
    synth.invert(&sample.g)
}

/// `g*_y = sum_r theta^{y.r} gfrak_r`.
pub fn unweighted_field(lattice: Lattice, driver: &[f64]) -> Vec<Complex64> {
    let mut v: Vec<Complex64> = driver.iter().map(|&z| Complex64::new(z, 0.0)).collect();
    dft_in_place(&mut v, lattice, Direction::Inverse);
    let scale = (lattice.size() as f64).sqrt();
    v.iter().map(|z| z * scale).collect()
}

/// Both sides of the equivalence between `g*` and `g`: the direct
/// `sum_y b_y g*_y`, and the same linear functional written through `g` via
/// `sum_y b_y sum_r theta^{y.r} q^{-d/2} lambda_r^{-1/2} sum_x theta^{-x.r} g_x`.
/// Requires every `lambda_r > 0`.
pub fn equivalence_sides(synth: &FieldSynth, sample: &FieldSample, b: &[Complex64]) -> Result<(Complex64, Complex64)> {
    let lattice = synth.lattice;
    if b.len() != lattice.size() {
        return Err(Error::Shape("coefficient vector does not match the lattice".into()));
    }
    if synth.weights.contains(&0.0) {
        return Err(Error::Contract("equivalence needs every lambda_r > 0".into()));
    }
    let roots = RootTable::new(lattice.q());
    let n = lattice.size();
    let star = unweighted_field(lattice, &sample.driver);
    let direct: Complex64 = b.iter().zip(&star).map(|(bi, s)| bi * s).sum();

    let scale = (n as f64).sqrt().recip();
    let mut coef = vec![Complex64::new(0.0, 0.0); n];
    for (r, c) in coef.iter_mut().enumerate() {
        let inner: Complex64 = (0..n)
            .map(|x| roots.pow(lattice.dot_mod(lattice.neg_rank(x), r)) * sample.g[x])
            .sum();
        *c = inner * scale / synth.weights[r];
    }
    let via_g: Complex64 = (0..n)
        .map(|y| {
            let s: Complex64 = (0..n).map(|r| roots.pow(lattice.dot_mod(y, r)) * coef[r]).sum();
            b[y] * s
        })
        .sum();
    Ok((direct, via_g))
}

/// Synthesis over count vectors with weights `sqrt(h_l lambda_l)`.
#[derive(Debug, Clone)]
pub struct CountFieldSynth<'a> {
    table: &'a KrawtchoukTable,
    alpha: f64,
    weights: Vec<f64>,
}

/// One count-indexed field, in the count-vector order of the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountFieldSample {
    pub g: Vec<Complex64>,
    pub driver: Vec<f64>,
}

impl<'a> CountFieldSynth<'a> {
    pub fn new(kappa: &[Complex64], table: &'a KrawtchoukTable, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if kappa.len() != table.degrees().len() {
            return Err(Error::Shape("one eigenvalue per degree index is required".into()));
        }
        if !table.is_complete() {
            return Err(Error::Contract("count field needs every degree up to d".into()));
        }
        let weights = kappa
            .iter()
            .enumerate()
            .map(|(li, &k)| {
                if k.im.abs() > REAL_TOL {
                    return Err(Error::Reversibility(format!("kappa_l = {k} is not real")));
                }
                Ok(real_weight(green_eigenvalue(k, alpha), "kappa")? * table.h(li).sqrt())
            })
            .collect::<Result<_>>()?;
        Ok(Self { table, alpha, weights })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `sqrt(h_l lambda_l)` by degree index.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn synthesize(&self, driver: &[f64]) -> Result<CountFieldSample> {
        let table = self.table;
        if driver.len() != table.degrees().len() {
            return Err(Error::Shape("driver needs one entry per degree index".into()));
        }
        let scale = (table.q() as f64).powf(-(table.d() as f64) / 2.0);
        let g = (0..table.counts().len())
            .map(|mi| {
                driver
                    .iter()
                    .zip(&self.weights)
                    .enumerate()
                    .map(|(li, (&z, &w))| table.value(li, mi) * (w * z))
                    .sum::<Complex64>()
                    * scale
            })
            .collect();
        Ok(CountFieldSample {
            g,
            driver: driver.to_vec(),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CountFieldSample {
        let driver = standard_normals(rng, self.table.degrees().len());
        self.synthesize(&driver).expect("driver has one entry per degree")
    }
}

pub fn sample_count_field(
    kappa: &[Complex64],
    table: &KrawtchoukTable,
    alpha: f64,
    seed: u64,
) -> Result<CountFieldSample> {
    let synth = CountFieldSynth::new(kappa, table, alpha)?;
    Ok(synth.sample(&mut crate::mc::worker_rng(seed, 0)))
}

/// Averages a lattice field over each type class, in the count-vector order
/// of `table`.
pub fn class_mean_field(g: &[Complex64], lattice: Lattice, table: &KrawtchoukTable) -> Result<Vec<Complex64>> {
    if g.len() != lattice.size() || lattice.q() != table.q() || lattice.d() != table.d() {
        return Err(Error::Shape("field, lattice and table disagree".into()));
    }
    let n = table.counts().len();
    let (mut sums, mut sizes) = (vec![Complex64::new(0.0, 0.0); n], vec![0usize; n]);
    for (x, &v) in g.iter().enumerate() {
        let mi = table.count_index(&lattice.type_counts(x)).expect("every type is a count vector");
        sums[mi] += v;
        sizes[mi] += 1;
    }
    Ok(sums.iter().zip(&sizes).map(|(s, &c)| s / c as f64).collect())
}

/// Ranked classes `r_>=` (non-increasing vectors in `{0..q-1}^d`).
pub fn ranked_classes(q: usize, d: usize) -> Vec<Vec<usize>> {
    fn rec(left: usize, cap: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(prefix.clone());
            return;
        }
        for v in (0..=cap).rev() {
            prefix.push(v);
            rec(left - 1, v, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, q - 1, &mut Vec::with_capacity(d), &mut out);
    out
}

fn ranked(lattice: Lattice, r: usize) -> Vec<usize> {
    let mut v = lattice.digits(r);
    v.sort_unstable_by(|a, b| b.cmp(a));
    v
}

fn check_ranked(lattice: Lattice, class: &[usize]) -> Result<()> {
    if class.len() != lattice.d()
        || class.iter().any(|&v| v >= lattice.q())
        || class.windows(2).any(|w| w[0] < w[1])
    {
        return Err(Error::Shape(format!("{class:?} is not a ranked vector")));
    }
    Ok(())
}

/// `sum_{r in [r_>=]} theta^{r.x} gfrak_r`.
pub fn ranked_class_sum(lattice: Lattice, driver: &[f64], x: usize, class: &[usize]) -> Result<Complex64> {
    check_ranked(lattice, class)?;
    if driver.len() != lattice.size() {
        return Err(Error::Shape("driver does not match the lattice".into()));
    }
    let roots = RootTable::new(lattice.q());
    Ok((0..lattice.size())
        .filter(|&r| ranked(lattice, r) == class)
        .map(|r| roots.pow(lattice.dot_mod(x, r)) * driver[r])
        .sum())
}

/// `sum_{r in [r_>=]} theta^{z.r}`.
pub fn class_character_sum(lattice: Lattice, z: usize, class: &[usize]) -> Result<Complex64> {
    check_ranked(lattice, class)?;
    let roots = RootTable::new(lattice.q());
    Ok((0..lattice.size())
        .filter(|&r| ranked(lattice, r) == class)
        .map(|r| roots.pow(lattice.dot_mod(z, r)))
        .sum())
}

/// Binary Krawtchouk `K_j(k; d) = sum_i (-1)^i C(k, i) C(d - k, j - i)`.
pub fn binary_krawtchouk(d: usize, j: usize, k: usize) -> i128 {
    let c = |n: usize, r: usize| crate::combinatorics::binomial_exact(n as u64, r as u64).map_or(0, |v| v as i128);
    (0..=j.min(k))
        .filter(|&i| j - i <= d - k)
        .map(|i| if i % 2 == 0 { 1 } else { -1 } * c(k, i) * c(d - k, j - i))
        .sum()
}

/// Field on a grid of `[0, 1)^d`:
/// `g_b = sum_{r in box} sqrt(lambda_r) e^{2 pi i b.r} gfrak_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusFieldSynth {
    frequencies: Vec<Vec<i64>>,
    weights: Vec<f64>,
    alpha: f64,
}

impl TorusFieldSynth {
    pub fn new(law: &WrappedLaw, alpha: f64, radius: usize, index_set: TorusIndexSet) -> Result<Self> {
        check_alpha(alpha)?;
        let frequencies = torus_box(law.d(), radius, index_set);
        let weights = frequencies
            .iter()
            .map(|r| real_weight(green_eigenvalue(law.char_fn(r), alpha), "wrapped law"))
            .collect::<Result<_>>()?;
        Ok(Self {
            frequencies,
            weights,
            alpha,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn frequencies(&self) -> &[Vec<i64>] {
        &self.frequencies
    }

    pub fn synthesize(&self, driver: &[f64], points: &[Vec<f64>]) -> Result<Vec<Complex64>> {
        if driver.len() != self.frequencies.len() {
            return Err(Error::Shape("driver needs one entry per frequency".into()));
        }
        points
            .iter()
            .map(|b| {
                if b.len() != self.frequencies[0].len() {
                    return Err(Error::Shape("grid point has the wrong dimension".into()));
                }
                Ok(self
                    .frequencies
                    .iter()
                    .zip(&self.weights)
                    .zip(driver)
                    .map(|((r, &w), &z)| {
                        let phase: f64 = b.iter().zip(r).map(|(x, &k)| x * k as f64).sum();
                        Complex64::from_polar(w * z, 2.0 * PI * phase)
                    })
                    .sum())
            })
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, points: &[Vec<f64>]) -> Result<Vec<Complex64>> {
        let driver = standard_normals(rng, self.frequencies.len());
        self.synthesize(&driver, points)
    }
}

/// The regular grid `{0, 1/n, ..., (n-1)/n}^d`.
pub fn torus_grid(d: usize, n: usize) -> Vec<Vec<f64>> {
    let total = n.pow(d as u32);
    (0..total)
        .map(|mut i| {
            (0..d)
                .map(|_| {
                    let v = (i % n) as f64 / n as f64;
                    i /= n;
                    v
                })
                .collect()
        })
        .collect()
}

/// One torus field per seed stream on the given points.
pub fn sample_torus_field(
    law: &WrappedLaw,
    alpha: f64,
    radius: usize,
    index_set: TorusIndexSet,
    points: &[Vec<f64>],
    seed: u64,
) -> Result<Vec<Complex64>> {
    let synth = TorusFieldSynth::new(law, alpha, radius, index_set)?;
    synth.sample(&mut crate::mc::worker_rng(seed, 0), points)
}
