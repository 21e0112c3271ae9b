//! Killed-walk Green functions.
//!
//! With `G(x, y; alpha) = sum_{t >= 0} alpha^t P^t(x, y)` the normalized kernel
//! `(1 - alpha) G` has eigenvalues
//!
//! ```text
//! lambda_r = 1 / (1 + alpha / (1 - alpha) (1 - rho_r)) = (1 - alpha) / (1 - alpha rho_r)
//! ```
//!
//! and is the law of `X_T` for a geometric killing time `T`. The shifted
//! variant `sum_t alpha^t P^{t+1}` is available as [`green_shifted`].

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::krawtchouk::KrawtchoukTable;
use crate::mc::{run_workers, McConfig};
use crate::walk::{
    ct_exponents, killed_endpoint, normalize_histograms, AtomicMeasure, IncrementLaw, KillingLaw, Spectrum,
    DENSE_LIMIT,
};
use crate::zqd::{dft, ComplexLattice, Direction, Lattice, MultiIndex, RootTable};

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Range(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    Ok(())
}

/// `lambda = 1 / (1 + alpha / (1 - alpha) (1 - rho))`.
#[inline]
pub fn green_eigenvalue(rho: Complex64, alpha: f64) -> Complex64 {
    (Complex64::new(1.0, 0.0) + (Complex64::new(1.0, 0.0) - rho) * (alpha / (1.0 - alpha))).inv()
}

/// A circulant operator given by its eigenvalues; for [`green_exact`] it is
/// `(1 - alpha) G`.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenOperator {
    alpha: f64,
    lambda: ComplexLattice,
    /// `kernel[z]` is the entry at `x - y = z`.
    kernel: ComplexLattice,
}

impl GreenOperator {
    pub fn from_eigenvalues(lambda: ComplexLattice, alpha: f64) -> Self {
        let scale = (lambda.len() as f64).sqrt().recip();
        let kernel = dft(&lambda, Direction::Inverse).map(|z| z * scale);
        Self { alpha, lambda, kernel }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lattice(&self) -> Lattice {
        self.lambda.lattice()
    }

    pub fn lambda(&self) -> &ComplexLattice {
        &self.lambda
    }

    #[inline]
    pub fn entry(&self, x: usize, y: usize) -> Complex64 {
        self.kernel.values()[self.lattice().sub_rank(x, y)]
    }

    pub fn row(&self, x: usize) -> Vec<Complex64> {
        (0..self.lattice().size()).map(|y| self.entry(x, y)).collect()
    }

    /// Constant diagonal value `q^{-d} sum_r lambda_r`.
    pub fn diagonal(&self) -> Complex64 {
        self.kernel.values()[0]
    }

    /// Average of `entry(x, y)` over all `y` with type counts `n`.
    pub fn class_average(&self, x: usize, n: &[usize]) -> Complex64 {
        let lattice = self.lattice();
        let (mut sum, mut count) = (Complex64::new(0.0, 0.0), 0usize);
        for y in 0..lattice.size() {
            if lattice.type_counts(y) == n {
                sum += self.entry(x, y);
                count += 1;
            }
        }
        sum / count.max(1) as f64
    }

    pub fn to_dense(&self) -> Result<DMatrix<Complex64>> {
        let n = self.lattice().size();
        if n > DENSE_LIMIT {
            return Err(Error::Range(format!("{n} states exceed the dense limit {DENSE_LIMIT}")));
        }
        Ok(DMatrix::from_fn(n, n, |x, y| self.entry(x, y)))
    }
}

/// `(1 - alpha) G` from the eigenvalues of the walk.
pub fn green_exact(spec: &Spectrum, alpha: f64) -> Result<GreenOperator> {
    check_alpha(alpha)?;
    Ok(GreenOperator::from_eigenvalues(
        spec.rho().map(|r| green_eigenvalue(r, alpha)),
        alpha,
    ))
}

/// `(1 - alpha) P G`, i.e. the definition summing `P^{t+1}`.
pub fn green_shifted(spec: &Spectrum, alpha: f64) -> Result<GreenOperator> {
    check_alpha(alpha)?;
    Ok(GreenOperator::from_eigenvalues(
        spec.rho().map(|r| r * green_eigenvalue(r, alpha)),
        alpha,
    ))
}

/// Real form of one entry: `cosine - sine` with
/// `cosine = q^{-d} sum_r Re(lambda_r) cos(2 pi (x-y).r / q)` and
/// `sine = q^{-d} sum_r Im(lambda_r) sin(2 pi (x-y).r / q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealForm {
    pub value: f64,
    pub cosine: f64,
    pub sine: f64,
}

pub fn green_real_form(spec: &Spectrum, alpha: f64, x: &MultiIndex, y: &MultiIndex) -> Result<RealForm> {
    check_alpha(alpha)?;
    let lattice = spec.lattice();
    let (x, y) = (lattice.rank(x)?, lattice.rank(y)?);
    let z = lattice.sub_rank(x, y);
    let q = lattice.q() as f64;
    let (mut cosine, mut sine) = (0.0, 0.0);
    for (r, &rho) in spec.values().iter().enumerate() {
        let lambda = green_eigenvalue(rho, alpha);
        let angle = 2.0 * PI * lattice.dot_mod(z, r) as f64 / q;
        cosine += lambda.re * angle.cos();
        sine += lambda.im * angle.sin();
    }
    let n = lattice.size() as f64;
    Ok(RealForm {
        value: (cosine - sine) / n,
        cosine: cosine / n,
        sine: sine / n,
    })
}

/// Grouped Green function
/// `q^{-d} sum_l h_l lambda_l Q_l(m) conj(Q_l(n))`, with
/// `lambda_l = 1 / (1 + alpha/(1-alpha) (1 - kappa_l))`.
///
/// For an exchangeable walk this is the average of `(1 - alpha) G(x, y)` over
/// all `y` of type `n`, for any fixed `x` of type `m`. It coincides with the
/// individual entry when the class of `n` is a single point.
pub fn green_grouped(
    kappa: &[Complex64],
    table: &KrawtchoukTable,
    alpha: f64,
    m: &[usize],
    n: &[usize],
) -> Result<Complex64> {
    check_alpha(alpha)?;
    let d = table.d();
    for v in [m, n] {
        if v.len() != table.q() || v.iter().sum::<usize>() != d {
            return Err(Error::Shape(format!("{v:?} is not a count vector with |m| = {d}")));
        }
    }
    if kappa.len() != table.degrees().len() {
        return Err(Error::Shape("one eigenvalue per degree index is required".into()));
    }
    let mi = table.count_index(m).expect("validated count vector");
    let ni = table.count_index(n).expect("validated count vector");
    let sum: Complex64 = kappa
        .iter()
        .enumerate()
        .map(|(li, &k)| green_eigenvalue(k, alpha) * table.h(li) * table.value(li, mi) * table.value(li, ni).conj())
        .sum();
    Ok(sum / (table.q() as f64).powi(d as i32))
}

/// Empirical law of `X_T` over `n_walks` killed walks started at `x0`.
pub fn green_mc(law: &IncrementLaw, alpha: f64, x0: &MultiIndex, n_walks: usize, mc: McConfig) -> Result<Vec<f64>> {
    if n_walks == 0 {
        return Err(Error::Range("n_walks must be >= 1".into()));
    }
    let killing = KillingLaw::geometric(alpha)?;
    let sampler = law.sampler(x0.q(), x0.d())?;
    let lattice = sampler.lattice();
    let start = lattice.rank(x0)?;
    let parts = run_workers(n_walks, mc, |rng, count| {
        let mut hist = vec![0u64; lattice.size()];
        let mut scratch = vec![0; lattice.d()];
        for _ in 0..count {
            hist[killed_endpoint(&sampler, start, &killing, rng, &mut scratch)] += 1;
        }
        hist
    });
    Ok(normalize_histograms(&parts, lattice.size(), n_walks))
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Resolvent `u^varkappa = int e^{-varkappa tau} P_tau d tau` of the
/// Poisson-embedded walk; `varkappa u^varkappa` is `(1 - alpha) G` with
/// `alpha = 1 / (1 + varkappa)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolvent {
    varkappa: f64,
    scaled: GreenOperator,
}

impl Resolvent {
    pub fn varkappa(&self) -> f64 {
        self.varkappa
    }

    pub fn alpha(&self) -> f64 {
        self.scaled.alpha()
    }

    /// The operator `varkappa u^varkappa`.
    pub fn scaled(&self) -> &GreenOperator {
        &self.scaled
    }

    /// `u^varkappa(x, y)`.
    pub fn entry(&self, x: usize, y: usize) -> Complex64 {
        self.scaled.entry(x, y) / self.varkappa
    }
}

fn check_varkappa(varkappa: f64) -> Result<()> {
    if !(varkappa.is_finite() && varkappa > 0.0) {
        return Err(Error::Range(format!("varkappa must be > 0, got {varkappa}")));
    }
    Ok(())
}

pub fn resolvent(spec: &Spectrum, varkappa: f64) -> Result<Resolvent> {
    check_varkappa(varkappa)?;
    let alpha = 1.0 / (1.0 + varkappa);
    let lambda = spec.rho().map(|r| varkappa / (varkappa + 1.0 - r));
    Ok(Resolvent {
        varkappa,
        scaled: GreenOperator::from_eigenvalues(lambda, alpha),
    })
}

/// Resolvent of the continuous-time semigroup `rho_r(tau) = e^{tau psi_r}`
/// built from an atomic measure: eigenvalues `varkappa / (varkappa - psi_r)`.
pub fn resolvent_ct(beta: &AtomicMeasure<Vec<f64>>, q: usize, d: usize, varkappa: f64) -> Result<Resolvent> {
    check_varkappa(varkappa)?;
    let psi = ct_exponents(beta, q, d)?;
    let lambda = psi.map(|p| Complex64::new(varkappa, 0.0) / (Complex64::new(varkappa, 0.0) - p));
    Ok(Resolvent {
        varkappa,
        scaled: GreenOperator::from_eigenvalues(lambda, 1.0 / (1.0 + varkappa)),
    })
}

/// One component of a law on the torus `[0, 1)^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WrappedComponent {
    PointMass { point: Vec<f64> },
    Uniform,
    WrappedNormal { mean: Vec<f64>, sd: f64 },
}

/// Finite mixture of wrapped components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrappedLaw {
    d: usize,
    components: Vec<(f64, WrappedComponent)>,
}

impl WrappedLaw {
    pub fn new(d: usize, components: Vec<(f64, WrappedComponent)>) -> Result<Self> {
        if d < 1 || components.is_empty() {
            return Err(Error::InvalidLaw("wrapped law needs d >= 1 and a component".into()));
        }
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if components.iter().any(|(w, _)| !(w.is_finite() && *w > 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidLaw("wrapped weights must be > 0 and sum to 1".into()));
        }
        for (_, c) in &components {
            match c {
                WrappedComponent::PointMass { point } if point.len() != d => {
                    return Err(Error::Shape("point mass has the wrong dimension".into()))
                }
                WrappedComponent::WrappedNormal { mean, sd } if mean.len() != d || sd.is_nan() || *sd < 0.0 => {
                    return Err(Error::InvalidLaw("wrapped normal needs a d-vector mean and sd >= 0".into()))
                }
                _ => {}
            }
        }
        Ok(Self { d, components })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// `E[e^{2 pi i V.r}]` at an integer frequency.
    pub fn char_fn(&self, r: &[i64]) -> Complex64 {
        let dot = |x: &[f64]| x.iter().zip(r).map(|(a, &b)| a * b as f64).sum::<f64>();
        let norm2 = r.iter().map(|&v| (v * v) as f64).sum::<f64>();
        self.components
            .iter()
            .map(|(w, c)| {
                *w * match c {
                    WrappedComponent::PointMass { point } => Complex64::from_polar(1.0, 2.0 * PI * dot(point)),
                    WrappedComponent::Uniform => {
                        Complex64::new(if r.iter().all(|&v| v == 0) { 1.0 } else { 0.0 }, 0.0)
                    }
                    WrappedComponent::WrappedNormal { mean, sd } => {
                        Complex64::from_polar((-2.0 * PI * PI * sd * sd * norm2).exp(), 2.0 * PI * dot(mean))
                    }
                }
            })
            .sum()
    }

    /// Upper bound on `sum_{r outside box} |rho_r|`, `None` when not summable.
    fn tail_mass(&self, radius: usize, index_set: TorusIndexSet) -> Option<f64> {
        let mut total = 0.0;
        for (w, c) in &self.components {
            match c {
                WrappedComponent::Uniform => {}
                WrappedComponent::PointMass { .. } => return None,
                WrappedComponent::WrappedNormal { sd, .. } => {
                    if *sd == 0.0 {
                        return None;
                    }
                    let c = 2.0 * PI * PI * sd * sd;
                    let term = |n: i64| (-c * (n * n) as f64).exp();
                    let box_1d: f64 = match index_set {
                        TorusIndexSet::Integers => (-(radius as i64)..=radius as i64).map(term).sum(),
                        TorusIndexSet::Naturals => (0..=radius as i64).map(term).sum(),
                    };
                    let mut beyond = 0.0;
                    let mut n = radius as i64 + 1;
                    loop {
                        let t = term(n);
                        beyond += t;
                        if t < 1e-18 * (1.0 + beyond) || n > 10_000_000 {
                            break;
                        }
                        n += 1;
                    }
                    let side = match index_set {
                        TorusIndexSet::Integers => 2.0 * beyond,
                        TorusIndexSet::Naturals => beyond,
                    };
                    total += w * ((box_1d + side).powi(self.d as i32) - box_1d.powi(self.d as i32));
                }
            }
        }
        Some(total)
    }
}

/// Index set of the torus expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TorusIndexSet {
    /// Box `{-R..R}^d` in `Z^d`.
    #[default]
    Integers,
    /// Box `{0..R}^d` in `N^d`.
    Naturals,
}

/// Truncated torus Green function at `(a, b)`.
///
/// `partial_sum = sum_box lambda_r e^{2 pi i (a-b).r}` splits as
/// `regular + (1 - alpha) sum_box e^{2 pi i (a-b).r}`; only the regular part
/// converges as the box grows, and `tail_bound` bounds its remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusGreen {
    pub partial_sum: Complex64,
    pub regular: Complex64,
    pub delta_mass: f64,
    pub tail_bound: Option<f64>,
    pub delta_singular: bool,
    pub terms: usize,
}

pub(crate) fn torus_box(d: usize, radius: usize, index_set: TorusIndexSet) -> Vec<Vec<i64>> {
    let values: Vec<i64> = match index_set {
        TorusIndexSet::Integers => (-(radius as i64)..=radius as i64).collect(),
        TorusIndexSet::Naturals => (0..=radius as i64).collect(),
    };
    let side = values.len();
    let total = side.pow(d as u32);
    (0..total)
        .map(|mut i| {
            (0..d)
                .map(|_| {
                    let v = values[i % side];
                    i /= side;
                    v
                })
                .collect()
        })
        .collect()
}

pub fn torus_green_truncated(
    law: &WrappedLaw,
    alpha: f64,
    a: &[f64],
    b: &[f64],
    radius: usize,
    index_set: TorusIndexSet,
) -> Result<TorusGreen> {
    check_alpha(alpha)?;
    let d = law.d();
    if a.len() != d || b.len() != d {
        return Err(Error::Shape(format!("points must have d = {d} entries")));
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mut partial = Complex64::new(0.0, 0.0);
    let mut regular = Complex64::new(0.0, 0.0);
    let points = torus_box(d, radius, index_set);
    for r in &points {
        let lambda = green_eigenvalue(law.char_fn(r), alpha);
        let phase = Complex64::from_polar(1.0, 2.0 * PI * diff.iter().zip(r).map(|(x, &k)| x * k as f64).sum::<f64>());
        partial += lambda * phase;
        regular += (lambda - (1.0 - alpha)) * phase;
    }
    Ok(TorusGreen {
        partial_sum: partial,
        regular,
        delta_mass: 1.0 - alpha,
        tail_bound: law.tail_mass(radius, index_set).map(|t| alpha * t),
        delta_singular: diff.iter().all(|v| (v - v.round()).abs() < 1e-15),
        terms: points.len(),
    })
}

/// Root table helper for callers that evaluate single Green entries.
pub fn green_entry_direct(spec: &Spectrum, alpha: f64, x: usize, y: usize) -> Result<Complex64> {
    check_alpha(alpha)?;
    let lattice = spec.lattice();
    let roots = RootTable::new(lattice.q());
    let z = lattice.sub_rank(x, y);
    let s: Complex64 = spec
        .values()
        .iter()
        .enumerate()
        .map(|(r, &rho)| green_eigenvalue(rho, alpha) * roots.pow(lattice.dot_mod(z, r)))
        .sum();
    Ok(s / lattice.size() as f64)
}
