//! Hamiltonian of the scaled field, its partition function, the `d -> infinity`
//! rate of `log Z`, and Potts-type Hamiltonians driven by the field.
//!
//! With `g_x(alpha) = sqrt(alpha / (1 - alpha)) g_x` the Hamiltonian is
//! `(1/2 alpha) conj(g)^T (I - alpha P) g`, diagonal in the driver:
//! `H = (1/2) sum_r gfrak_r^2`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::asymptotics::gauss_hermite;
use crate::error::{Error, Result};
use crate::field::{FieldSample, FieldSynth};
use crate::krawtchouk::{kappa, KrawtchoukTable};
use crate::mc::{merge_complex, merge_real, run_workers, ComplexAccumulator, ComplexEstimate, McConfig, RealAccumulator, RealEstimate};
use crate::walk::{transition_matrix, AtomicMeasure, CirculantKernel, IncrementLaw, Spectrum};
use crate::zqd::{dft_in_place, Direction, Lattice, RootTable};

const GIBBS_REAL_TOL: f64 = 1e-9;

fn real_rho(spec: &Spectrum) -> Result<Vec<f64>> {
    if !spec.is_real() {
        return Err(Error::Reversibility("quadratic form needs a real spectrum".into()));
    }
    Ok(spec.values().iter().map(|z| z.re).collect())
}

fn check_open_alpha(alpha: f64) -> Result<()> {
    if alpha == 0.0 {
        return Err(Error::Undefined("the identity divides by alpha = 0".into()));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Range(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// `K = I - alpha P` for a reversible walk, eigenvalues `1 - alpha rho_r`.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    lattice: Lattice,
    alpha: f64,
    rho: Vec<f64>,
    kernel: CirculantKernel,
}

impl QuadraticForm {
    pub fn new(spec: &Spectrum, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Range(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        let rho = real_rho(spec)?;
        Ok(Self {
            lattice: spec.lattice(),
            alpha,
            rho,
            kernel: transition_matrix(spec)?,
        })
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn q(&self) -> usize {
        self.lattice.q()
    }

    pub fn d(&self) -> usize {
        self.lattice.d()
    }

    pub fn kernel(&self) -> &CirculantKernel {
        &self.kernel
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.rho.iter().map(|r| 1.0 - self.alpha * r).collect()
    }

    /// `K g` by direct matrix application.
    pub fn apply(&self, g: &[Complex64]) -> Vec<Complex64> {
        let pg = self.kernel.apply(g);
        g.iter().zip(pg).map(|(x, p)| x - p * self.alpha).collect()
    }

    /// `conj(g)^T K g`, real because `K` is Hermitian.
    pub fn form(&self, g: &[Complex64]) -> f64 {
        g.iter().zip(self.apply(g)).map(|(x, k)| (x.conj() * k).re).sum()
    }

    /// `sum_r (1 - alpha rho_r) |ghat_r|^2` with the unitary transform.
    pub fn spectral_form(&self, g: &[Complex64]) -> f64 {
        let mut hat = g.to_vec();
        dft_in_place(&mut hat, self.lattice, Direction::Forward);
        hat.iter().zip(&self.rho).map(|(h, r)| (1.0 - self.alpha * r) * h.norm_sqr()).sum()
    }

    pub fn to_dense(&self) -> Result<nalgebra::DMatrix<f64>> {
        let p = self.kernel.to_dense()?;
        let n = self.lattice.size();
        Ok(nalgebra::DMatrix::identity(n, n) - p * self.alpha)
    }
}

/// Both sides of the gradient identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// `(1/4) sum P(y|x)(g_x - g_y)^2 + (1/2)((1-alpha)/alpha) sum g^2` against
/// `(1/2 alpha) g^T (I - alpha P) g`, the right side evaluated spectrally.
pub fn hamiltonian_identity_check(spec: &Spectrum, alpha: f64, g: &[f64]) -> Result<IdentityCheck> {
    check_open_alpha(alpha)?;
    let form = QuadraticForm::new(spec, alpha)?;
    let n = form.lattice.size();
    if g.len() != n {
        return Err(Error::Shape(format!("vector has {} entries, expected {n}", g.len())));
    }
    let mut gradient = 0.0;
    for x in 0..n {
        for y in 0..n {
            let diff = g[x] - g[y];
            gradient += form.kernel.entry(x, y) * diff * diff;
        }
    }
    let mass: f64 = g.iter().map(|v| v * v).sum();
    let lhs = gradient / 4.0 + 0.5 * (1.0 - alpha) / alpha * mass;
    let gc: Vec<Complex64> = g.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let rhs = form.spectral_form(&gc) / (2.0 * alpha);
    Ok(IdentityCheck {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
    })
}

/// Weights `(1/alpha - rho_r)^{-1/2}` of the scaled field.
pub fn scaled_weights(spec: &Spectrum, alpha: f64) -> Result<Vec<f64>> {
    check_open_alpha(alpha)?;
    Ok(real_rho(spec)?
        .into_iter()
        .map(|r| (1.0 / alpha - r).sqrt().recip())
        .collect())
}

/// Scaled field `g(alpha) = q^{-d/2} sum_r theta^{x.r} gfrak_r / sqrt(1/alpha - rho_r)`.
pub fn scaled_field(spec: &Spectrum, alpha: f64, driver: &[f64]) -> Result<Vec<Complex64>> {
    let w = scaled_weights(spec, alpha)?;
    if driver.len() != w.len() {
        return Err(Error::Shape(format!("driver has {} entries, expected {}", driver.len(), w.len())));
    }
    let mut g: Vec<Complex64> = driver.iter().zip(&w).map(|(z, w)| Complex64::new(z * w, 0.0)).collect();
    dft_in_place(&mut g, spec.lattice(), Direction::Inverse);
    Ok(g)
}

/// `(1/2 alpha) conj(g)^T (I - alpha P) g` at the scaled field of `driver`,
/// by direct matrix application.
pub fn hamiltonian_value(driver: &[f64], spec: &Spectrum, alpha: f64) -> Result<f64> {
    let g = scaled_field(spec, alpha, driver)?;
    Ok(QuadraticForm::new(spec, alpha)?.form(&g) / (2.0 * alpha))
}

/// `J` and `Z = (2 pi / beta)^{q^d/2} J`, kept in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub log_j: f64,
    pub log_z: f64,
    /// `None` when `J` over- or underflows `f64`.
    pub j: Option<f64>,
    pub z: Option<f64>,
}

fn representable(log: f64) -> Option<f64> {
    let v = log.exp();
    (v.is_finite() && v > 0.0).then_some(v)
}

fn partition_from_log_j(log_j: f64, n: f64, beta: f64) -> Partition {
    let log_z = n / 2.0 * (2.0 * PI / beta).ln() + log_j;
    Partition {
        log_j,
        log_z,
        j: representable(log_j),
        z: representable(log_z),
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::Range(format!("beta must be > 0, got {beta}")));
    }
    Ok(())
}

/// `log J = (q^d/2) log alpha - (1/2) sum_r log(1 - alpha rho_r)`.
pub fn partition_function(spec: &Spectrum, alpha: f64, beta: f64) -> Result<Partition> {
    check_open_alpha(alpha)?;
    check_beta(beta)?;
    let rho = real_rho(spec)?;
    let n = rho.len() as f64;
    let log_det: f64 = rho.iter().map(|r| (1.0 - alpha * r).ln()).sum();
    Ok(partition_from_log_j(n / 2.0 * alpha.ln() - 0.5 * log_det, n, beta))
}

/// `-(1/2) q^{-d} sum_l multinomial(d; l+) log(1 - alpha kappa_l)` for an
/// exchangeable law.
pub fn grouped_log_det(law: &IncrementLaw, q: usize, d: usize, alpha: f64) -> Result<f64> {
    let table = KrawtchoukTable::new(q, d)?;
    let kap = kappa(law, &table)?;
    let ln_q = (q as f64).ln();
    let mut total = 0.0;
    for (li, k) in kap.iter().enumerate() {
        if k.im.abs() > 1e-10 {
            return Err(Error::Reversibility(format!("grouped eigenvalue {k} is not real")));
        }
        let weight = (-table.h(li).ln() - d as f64 * ln_q).exp();
        total += weight * (1.0 - alpha * k.re).ln();
    }
    Ok(-0.5 * total)
}

/// Partition function of an exchangeable law through the grouped eigenvalues;
/// no `q^d` enumeration.
pub fn partition_function_grouped(law: &IncrementLaw, q: usize, d: usize, alpha: f64, beta: f64) -> Result<Partition> {
    check_open_alpha(alpha)?;
    check_beta(beta)?;
    let n = (q as f64).powi(d as i32);
    let log_j = n / 2.0 * alpha.ln() + n * grouped_log_det(law, q, d, alpha)?;
    Ok(partition_from_log_j(log_j, n, beta))
}

/// Variance of the reference Gaussian that dominates `e^{-beta H}`.
fn reference_variance(alpha: f64, beta: f64) -> f64 {
    alpha / (beta * (1.0 - alpha))
}

/// Tensor-product Gauss quadrature of `int e^{-beta H} dg` over `R^{q^d}`,
/// `nodes` points per axis. Returns `log Z`.
pub fn partition_quadrature(spec: &Spectrum, alpha: f64, beta: f64, nodes: usize) -> Result<f64> {
    check_open_alpha(alpha)?;
    check_beta(beta)?;
    let form = QuadraticForm::new(spec, alpha)?;
    let n = form.lattice.size();
    if n > 6 {
        return Err(Error::Range(format!("quadrature over {n} dimensions is not supported")));
    }
    let s2 = reference_variance(alpha, beta);
    let (x, w) = gauss_hermite(nodes, s2);
    let mut idx = vec![0usize; n];
    let excess = Excess::new(&form, beta, s2);
    let mut g = vec![0.0; n];
    let mut total = 0.0;
    loop {
        let mut weight = 1.0;
        for (k, &i) in idx.iter().enumerate() {
            g[k] = x[i];
            weight *= w[i];
        }
        total += weight * excess.eval(&g);
        let mut k = 0;
        loop {
            if k == n {
                return Ok(total.ln() + n as f64 / 2.0 * (2.0 * PI * s2).ln());
            }
            idx[k] += 1;
            if idx[k] < nodes {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// `exp{-(beta/2 alpha) g^T K g + |g|^2 / (2 s2)}` for real `g`, bounded by 1.
struct Excess {
    n: usize,
    m: Vec<f64>,
}

impl Excess {
    fn new(form: &QuadraticForm, beta: f64, s2: f64) -> Self {
        let n = form.lattice.size();
        let c = beta / (2.0 * form.alpha);
        let m = (0..n * n)
            .map(|i| {
                let (x, y) = (i / n, i % n);
                let k = if x == y { 1.0 } else { 0.0 } - form.alpha * form.kernel.entry(x, y);
                c * k - if x == y { 0.5 / s2 } else { 0.0 }
            })
            .collect();
        Self { n, m }
    }

    fn eval(&self, g: &[f64]) -> f64 {
        let mut s = 0.0;
        for x in 0..self.n {
            let row = &self.m[x * self.n..(x + 1) * self.n];
            s += g[x] * row.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
        }
        (-s).exp()
    }
}

/// Monte Carlo check of the Gaussian integral on the reference scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionMc {
    /// Estimate of `Z (2 pi s2)^{-q^d/2}`.
    pub estimate: RealEstimate,
    /// Closed form on the same scale.
    pub exact: f64,
}

pub fn partition_mc(spec: &Spectrum, alpha: f64, beta: f64, n_samples: usize, mc: McConfig) -> Result<PartitionMc> {
    let closed = partition_function(spec, alpha, beta)?;
    let form = QuadraticForm::new(spec, alpha)?;
    let n = form.lattice.size();
    let s2 = reference_variance(alpha, beta);
    let excess = Excess::new(&form, beta, s2);
    let parts = run_workers(n_samples, mc, |rng, count| {
        let mut acc = RealAccumulator::default();
        let mut g = vec![0.0; n];
        for _ in 0..count {
            for v in g.iter_mut() {
                *v = rng.sample::<f64, _>(StandardNormal) * s2.sqrt();
            }
            acc.push(excess.eval(&g));
        }
        acc
    });
    Ok(PartitionMc {
        estimate: merge_real(&parts),
        exact: (closed.log_z - n as f64 / 2.0 * (2.0 * PI * s2).ln()).exp(),
    })
}

/// Limit constant `(2q - 1)/q` in the exponent `e^{-c |z|}` as displayed with
/// the `log Z` limit. Direct evaluation of the root-of-unity sums gives 1.
pub fn displayed_limit_constant(q: usize) -> f64 {
    (2 * q - 1) as f64 / q as f64
}

/// Value of `lim (2/q^d) log Z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogZLimit {
    pub value: f64,
    /// Whether the `alpha -> 1` limit stays finite: no mass at `|z| = 0`.
    pub finite_at_alpha_one: bool,
}

/// `log(2 pi alpha / beta) + E[-log(1 - alpha e^{-c |Z|})]` over a probability
/// measure on `|Z| >= 0`.
pub fn log_z_limit(z_atoms: &AtomicMeasure<f64>, alpha: f64, beta: f64, c: f64) -> Result<LogZLimit> {
    check_beta(beta)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Range(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if (z_atoms.total_mass() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidMeasure(format!("|Z| law has mass {}", z_atoms.total_mass())));
    }
    let mut expectation = 0.0;
    for atom in z_atoms.atoms() {
        if atom.point < 0.0 {
            return Err(Error::InvalidMeasure(format!("atom {} is negative", atom.point)));
        }
        if atom.weight == 0.0 {
            continue;
        }
        let s = alpha * (-c * atom.point).exp();
        if s >= 1.0 {
            return Err(Error::LogSingularity(format!("alpha e^(-c |z|) = {s} at |z| = {}", atom.point)));
        }
        expectation -= atom.weight * (-s).ln_1p();
    }
    Ok(LogZLimit {
        value: (2.0 * PI * alpha / beta).ln() + expectation,
        finite_at_alpha_one: z_atoms.atoms().iter().all(|a| a.weight == 0.0 || a.point > 0.0),
    })
}

/// Step law with independent coordinates, `P(V[i] = j) = z[j]/d` for `j >= 1`,
/// so the expected type counts of `V` are `d z`.
pub fn sparse_type_law(q: usize, d: usize, z: &[f64]) -> Result<IncrementLaw> {
    if z.len() + 1 != q {
        return Err(Error::Shape("type fractions must have q - 1 entries".into()));
    }
    let total: f64 = z.iter().sum();
    if z.iter().any(|&v| v < 0.0) || total > d as f64 {
        return Err(Error::Range(format!("type fractions {z:?} need 0 <= |z| <= d = {d}")));
    }
    let mut p = vec![1.0 - total / d as f64];
    p.extend(z.iter().map(|&v| v / d as f64));
    Ok(IncrementLaw::ProductIid { p })
}

/// Exact `(2/q^d) log Z` under [`sparse_type_law`].
pub fn finite_log_z_rate(q: usize, d: usize, z: &[f64], alpha: f64, beta: f64) -> Result<f64> {
    let law = sparse_type_law(q, d, z)?;
    let part = partition_function_grouped(&law, q, d, alpha, beta)?;
    Ok(2.0 * part.log_z / (q as f64).powi(d as i32))
}

/// `c` solving `log(2 pi alpha / beta) - log(1 - alpha e^{-c |z|}) = rate`.
pub fn invert_limit_constant(rate: f64, z_norm: f64, alpha: f64, beta: f64) -> Result<f64> {
    if z_norm <= 0.0 {
        return Err(Error::Undefined("the constant is not identified at |z| = 0".into()));
    }
    let excess = rate - (2.0 * PI * alpha / beta).ln();
    let s = -(-excess).exp_m1() / alpha;
    if !(s > 0.0 && s < 1.0 / alpha) {
        return Err(Error::Undefined(format!("rate {rate} is outside the range of the limit form")));
    }
    Ok(-s.ln() / z_norm)
}

/// Finite-`d` rates, the constants `c_d` they imply, and a fit
/// `c_d = c + a/d` with a bootstrap interval for `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitConstantFit {
    pub ds: Vec<usize>,
    pub rates: Vec<f64>,
    pub c_d: Vec<f64>,
    pub c: f64,
    pub slope: f64,
    /// 2.5% and 97.5% bootstrap quantiles of `c`.
    pub interval: (f64, f64),
    pub displayed_constant: f64,
    pub gaps_displayed: Vec<f64>,
    pub gaps_unit: Vec<f64>,
    /// The candidate (displayed or 1) with the smaller gap at the largest `d`.
    pub better_constant: f64,
}

impl LimitConstantFit {
    pub fn better_gaps(&self) -> &[f64] {
        if self.better_constant == 1.0 {
            &self.gaps_unit
        } else {
            &self.gaps_displayed
        }
    }

    pub fn gaps_decrease(&self) -> bool {
        self.better_gaps().windows(2).all(|w| w[1] < w[0])
    }
}

fn line_fit(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn fit_limit_constant(
    q: usize,
    z: &[f64],
    alpha: f64,
    beta: f64,
    ds: &[usize],
    bootstrap: usize,
    seed: u64,
) -> Result<LimitConstantFit> {
    if ds.len() < 2 {
        return Err(Error::Range("need at least two dimensions to fit".into()));
    }
    let z_norm: f64 = z.iter().sum();
    let rates = ds
        .iter()
        .map(|&d| finite_log_z_rate(q, d, z, alpha, beta))
        .collect::<Result<Vec<_>>>()?;
    let c_d = rates
        .iter()
        .map(|&r| invert_limit_constant(r, z_norm, alpha, beta))
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<(f64, f64)> = ds.iter().zip(&c_d).map(|(&d, &c)| (1.0 / d as f64, c)).collect();
    let (c, slope) = line_fit(&points).ok_or_else(|| Error::Range("dimensions must differ".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(bootstrap);
    while draws.len() < bootstrap {
        let resample: Vec<(f64, f64)> = (0..points.len()).map(|_| *points.choose(&mut rng).expect("non-empty")).collect();
        if let Some((ci, _)) = line_fit(&resample) {
            draws.push(ci);
        }
    }
    draws.sort_by(f64::total_cmp);
    let interval = if draws.is_empty() {
        (c, c)
    } else {
        (quantile(&draws, 0.025), quantile(&draws, 0.975))
    };
    let single = |c: f64| AtomicMeasure::from_pairs(vec![(z_norm, 1.0)]).and_then(|m| log_z_limit(&m, alpha, beta, c));
    let displayed_constant = displayed_limit_constant(q);
    let limit_displayed = single(displayed_constant)?.value;
    let limit_unit = single(1.0)?.value;
    let gaps_displayed: Vec<f64> = rates.iter().map(|r| (r - limit_displayed).abs()).collect();
    let gaps_unit: Vec<f64> = rates.iter().map(|r| (r - limit_unit).abs()).collect();
    let better_constant = if gaps_unit.last() <= gaps_displayed.last() { 1.0 } else { displayed_constant };
    Ok(LimitConstantFit {
        ds: ds.to_vec(),
        rates,
        c_d,
        c,
        slope,
        interval,
        displayed_constant,
        gaps_displayed,
        gaps_unit,
        better_constant,
    })
}

/// Coefficients `b(y, x)` of a Potts-type Hamiltonian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// `b(y, x) = delta_xy`.
    Delta,
    /// Row-major `b[y * q^d + x]`.
    Dense(Vec<Complex64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PottsSpec {
    pub coupling: Coupling,
    pub beta: f64,
}

impl PottsSpec {
    pub fn new(coupling: Coupling, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        if let Coupling::Dense(b) = &coupling {
            if b.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
                return Err(Error::Range("coupling entries must be finite".into()));
            }
        }
        Ok(Self { coupling, beta })
    }

    pub fn delta(beta: f64) -> Result<Self> {
        Self::new(Coupling::Delta, beta)
    }

    fn check(&self, n: usize) -> Result<()> {
        match &self.coupling {
            Coupling::Dense(b) if b.len() != n * n => {
                Err(Error::Shape(format!("coupling has {} entries, expected {}", b.len(), n * n)))
            }
            _ => Ok(()),
        }
    }

    fn b(&self, n: usize, y: usize, x: usize) -> Complex64 {
        match &self.coupling {
            Coupling::Delta => Complex64::new(if x == y { 1.0 } else { 0.0 }, 0.0),
            Coupling::Dense(b) => b[y * n + x],
        }
    }
}

/// `H_y = -sum_x b(y, x) g_x`.
pub fn potts_hamiltonian(pspec: &PottsSpec, sample: &FieldSample, y: usize) -> Result<Complex64> {
    let n = sample.g.len();
    pspec.check(n)?;
    if y >= n {
        return Err(Error::Range(format!("configuration {y} outside 0..{n}")));
    }
    Ok(match &pspec.coupling {
        Coupling::Delta => -sample.g[y],
        Coupling::Dense(b) => -(0..n).map(|x| b[y * n + x] * sample.g[x]).sum::<Complex64>(),
    })
}

pub fn potts_hamiltonians(pspec: &PottsSpec, sample: &FieldSample) -> Result<Vec<Complex64>> {
    (0..sample.g.len()).map(|y| potts_hamiltonian(pspec, sample, y)).collect()
}

/// Random bonds `J_r = q^{-d/2} sqrt(lambda_r) gfrak_r`.
pub fn bonds(synth: &FieldSynth, sample: &FieldSample) -> Vec<f64> {
    let scale = (synth.lattice().size() as f64).sqrt().recip();
    sample.driver.iter().zip(synth.weights()).map(|(z, w)| scale * w * z).collect()
}

/// `H_y = -sum_r J_r sum_x b(y, x) theta^{x.r}`.
pub fn potts_hamiltonian_bonds(pspec: &PottsSpec, synth: &FieldSynth, sample: &FieldSample, y: usize) -> Result<Complex64> {
    let lattice = synth.lattice();
    let n = lattice.size();
    pspec.check(n)?;
    let roots = RootTable::new(lattice.q());
    let j = bonds(synth, sample);
    let mut h = Complex64::new(0.0, 0.0);
    for (r, &jr) in j.iter().enumerate() {
        let s: Complex64 = (0..n)
            .map(|x| pspec.b(n, y, x) * roots.pow(lattice.dot_mod(x, r)))
            .sum();
        h -= s * jr;
    }
    Ok(h)
}

/// Interaction terms of `H_y` for `b = delta`: `-J_r prod_k (theta^{y[k]})^{r[k]}`
/// for every `r`, with `r` as digits.
pub fn potts_expansion(synth: &FieldSynth, sample: &FieldSample, y: usize) -> Vec<(Vec<usize>, Complex64)> {
    let lattice = synth.lattice();
    let roots = RootTable::new(lattice.q());
    let yd = lattice.digits(y);
    bonds(synth, sample)
        .into_iter()
        .enumerate()
        .map(|(r, jr)| {
            let rd = lattice.digits(r);
            let spins: Complex64 = yd.iter().zip(&rd).map(|(&yk, &rk)| roots.pow(yk * rk)).product();
            (rd, -spins * jr)
        })
        .collect()
}

/// Gibbs law `P(y) = e^{beta H_y} / Z` for real Hamiltonians.
pub fn gibbs(pspec: &PottsSpec, sample: &FieldSample) -> Result<Vec<f64>> {
    let h = potts_hamiltonians(pspec, sample)?;
    if let Some(bad) = h.iter().find(|v| v.im.abs() > GIBBS_REAL_TOL) {
        return Err(Error::Contract(format!("Gibbs law needs real H_y, found {bad}")));
    }
    let logits: Vec<f64> = h.iter().map(|v| pspec.beta * v.re).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// `C(z) = q^{-d} sum_r lambda_r theta^{z.r}`, so `E[g_x conj g_y] = C(x - y)`
/// and `E[g_x g_y] = C(x + y)`.
fn covariance_table(synth: &FieldSynth) -> Vec<Complex64> {
    let lattice = synth.lattice();
    let scale = (lattice.size() as f64).sqrt().recip();
    let mut c: Vec<Complex64> = synth.weights().iter().map(|w| Complex64::new(w * w * scale, 0.0)).collect();
    dft_in_place(&mut c, lattice, Direction::Inverse);
    c
}

/// `E[H_y H_y']` (no conjugation) for all pairs, row-major.
fn pair_moments(pspec: &PottsSpec, synth: &FieldSynth) -> Result<Vec<Complex64>> {
    let lattice = synth.lattice();
    let n = lattice.size();
    pspec.check(n)?;
    let c = covariance_table(synth);
    let mut out = vec![Complex64::new(0.0, 0.0); n * n];
    match &pspec.coupling {
        Coupling::Delta => {
            for y in 0..n {
                for yy in 0..n {
                    out[y * n + yy] = c[lattice.add_rank(y, yy)];
                }
            }
        }
        Coupling::Dense(b) => {
            for y in 0..n {
                for yy in 0..n {
                    let mut s = Complex64::new(0.0, 0.0);
                    for x in 0..n {
                        for xx in 0..n {
                            s += b[y * n + x] * b[yy * n + xx] * c[lattice.add_rank(x, xx)];
                        }
                    }
                    out[y * n + yy] = s;
                }
            }
        }
    }
    Ok(out)
}

/// `E[|H_y|^2] = sum_{x,x'} b(y,x) conj(b(y,x')) Cov(x, x')`.
pub fn hamiltonian_second_moment(pspec: &PottsSpec, synth: &FieldSynth, y: usize) -> Result<f64> {
    let lattice = synth.lattice();
    let n = lattice.size();
    pspec.check(n)?;
    let c = covariance_table(synth);
    let mut s = Complex64::new(0.0, 0.0);
    for x in 0..n {
        for xx in 0..n {
            s += pspec.b(n, y, x) * pspec.b(n, y, xx).conj() * c[lattice.sub_rank(x, xx)];
        }
    }
    Ok(s.re)
}

/// `log E[Z] = log sum_y exp{(beta^2/2) E[H_y^2]}`, from
/// `E[e^{t J_r}] = e^{t^2 lambda_r / (2 q^d)}` for complex `t`.
pub fn log_expected_partition(pspec: &PottsSpec, synth: &FieldSynth) -> Result<Complex64> {
    let n = synth.lattice().size();
    let pairs = pair_moments(pspec, synth)?;
    let exponents: Vec<Complex64> = (0..n).map(|y| pairs[y * n + y] * (pspec.beta * pspec.beta / 2.0)).collect();
    let max = exponents.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
    let s: Complex64 = exponents.iter().map(|e| (e - max).exp()).sum();
    Ok(s.ln() + max)
}

/// `(d/beta) log q + (beta / 2 q^d) sum_y E[H_y^2] - (beta / 2 q^{2d}) E[(sum_y H_y)^2]`.
pub fn free_energy_expansion(pspec: &PottsSpec, synth: &FieldSynth) -> Result<Complex64> {
    let lattice = synth.lattice();
    let n = lattice.size();
    let pairs = pair_moments(pspec, synth)?;
    let diag: Complex64 = (0..n).map(|y| pairs[y * n + y]).sum();
    let total: Complex64 = pairs.iter().sum();
    let nf = n as f64;
    let beta = pspec.beta;
    Ok(Complex64::new(lattice.d() as f64 * (lattice.q() as f64).ln() / beta, 0.0) + diag * (beta / (2.0 * nf))
        - total * (beta / (2.0 * nf * nf)))
}

/// Per-configuration Monte Carlo moments of `H_y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PottsMoments {
    pub mean: Vec<ComplexEstimate>,
    pub second: Vec<RealEstimate>,
}

pub fn potts_moments_mc(pspec: &PottsSpec, synth: &FieldSynth, n_samples: usize, mc: McConfig) -> Result<PottsMoments> {
    let n = synth.lattice().size();
    pspec.check(n)?;
    let parts = run_workers(n_samples, mc, |rng, count| {
        let mut mean = vec![ComplexAccumulator::default(); n];
        let mut second = vec![RealAccumulator::default(); n];
        for _ in 0..count {
            let sample = synth.sample(rng);
            let h = potts_hamiltonians(pspec, &sample).expect("checked shape");
            for y in 0..n {
                mean[y].push(h[y]);
                second[y].push(h[y].norm_sqr());
            }
        }
        (mean, second)
    });
    let mean = (0..n)
        .map(|y| merge_complex(&parts.iter().map(|p| p.0[y]).collect::<Vec<_>>()))
        .collect();
    let second = (0..n)
        .map(|y| merge_real(&parts.iter().map(|p| p.1[y]).collect::<Vec<_>>()))
        .collect();
    Ok(PottsMoments { mean, second })
}

/// Monte Carlo of `E[Z] = E[sum_y e^{beta H_y}]`.
pub fn expected_partition_mc(pspec: &PottsSpec, synth: &FieldSynth, n_samples: usize, mc: McConfig) -> Result<ComplexEstimate> {
    pspec.check(synth.lattice().size())?;
    let parts = run_workers(n_samples, mc, |rng, count| {
        let mut acc = ComplexAccumulator::default();
        for _ in 0..count {
            let sample = synth.sample(rng);
            let h = potts_hamiltonians(pspec, &sample).expect("checked shape");
            acc.push(h.iter().map(|v| (v * pspec.beta).exp()).sum());
        }
        acc
    });
    Ok(merge_complex(&parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walk::Atom;
    use proptest::prelude::*;
    use rand::Rng;

    fn spectrum(law: &IncrementLaw, q: usize, d: usize) -> Spectrum {
        law.spectrum(q, d).unwrap()
    }

    fn lazy(q: usize) -> IncrementLaw {
        IncrementLaw::lazy(q, &[(0.4, 0.3), (0.6, 0.8)]).unwrap()
    }

    #[test]
    fn swap_identity_worked_value() {
        let spec = spectrum(&IncrementLaw::Deterministic { v: vec![1] }, 2, 1);
        let check = hamiltonian_identity_check(&spec, 0.5, &[1.0, 0.0]).unwrap();
        assert!((check.lhs - 1.0).abs() < 1e-14);
        assert!((check.rhs - 1.0).abs() < 1e-14);
    }

    #[test]
    fn constant_vector_identity() {
        let (q, d, alpha, c) = (3, 2, 0.4, 1.7);
        let spec = spectrum(&lazy(q), q, d);
        let g = vec![c; 9];
        let check = hamiltonian_identity_check(&spec, alpha, &g).unwrap();
        let want = (1.0 - alpha) / (2.0 * alpha) * 9.0 * c * c;
        assert!((check.lhs - want).abs() < 1e-12 && (check.rhs - want).abs() < 1e-12);
    }

    #[test]
    fn identity_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = spectrum(&lazy(3), 3, 2);
        for _ in 0..100 {
            let g: Vec<f64> = (0..9).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let check = hamiltonian_identity_check(&spec, 0.7, &g).unwrap();
            assert!(check.residual <= 1e-10 * (1.0 + check.lhs.abs()));
            let scaled: Vec<f64> = g.iter().map(|v| 3.0 * v).collect();
            let again = hamiltonian_identity_check(&spec, 0.7, &scaled).unwrap();
            assert!((again.lhs - 9.0 * check.lhs).abs() <= 1e-10 * again.lhs.abs().max(1.0));
        }
    }

    #[test]
    fn identity_rejects_bad_inputs() {
        let spec = spectrum(&lazy(2), 2, 2);
        assert!(matches!(hamiltonian_identity_check(&spec, 0.0, &[0.0; 4]), Err(Error::Undefined(_))));
        let skew = spectrum(&IncrementLaw::Deterministic { v: vec![1, 1] }, 3, 2);
        assert!(matches!(hamiltonian_identity_check(&skew, 0.5, &[0.0; 9]), Err(Error::Reversibility(_))));
    }

    #[test]
    fn hamiltonian_diagonalizes() {
        let spec = spectrum(&lazy(2), 2, 3);
        let mut one_hot = vec![0.0; 8];
        one_hot[5] = 1.0;
        assert!((hamiltonian_value(&one_hot, &spec, 0.6).unwrap() - 0.5).abs() < 1e-12);
        assert!(hamiltonian_value(&[0.0; 8], &spec, 0.6).unwrap().abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let driver: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
            let want = 0.5 * driver.iter().map(|v| v * v).sum::<f64>();
            assert!((hamiltonian_value(&driver, &spec, 0.6).unwrap() - want).abs() < 1e-10);
        }
    }

    #[test]
    fn scaled_field_covariance_is_alpha_green() {
        // Var(g_x(alpha)) = alpha G(x, x) = alpha/(1-alpha) (1-alpha) G(x, x).
        let spec = spectrum(&lazy(3), 3, 1);
        let alpha = 0.45;
        let w = scaled_weights(&spec, alpha).unwrap();
        let synth = FieldSynth::new(&spec, alpha).unwrap();
        for (a, b) in w.iter().zip(synth.weights()) {
            assert!((a * a - alpha / (1.0 - alpha) * b * b).abs() < 1e-14);
        }
    }

    #[test]
    fn worked_partition_values() {
        let spec = spectrum(&IncrementLaw::Deterministic { v: vec![1] }, 2, 1);
        let part = partition_function(&spec, 0.5, 1.0).unwrap();
        assert!((part.j.unwrap() - 0.5 / 0.75f64.sqrt()).abs() < 1e-15);
        assert!((part.j.unwrap() - 0.5773503).abs() < 1e-6);
        let part = partition_function(&spec, 0.5, 2.0 * PI).unwrap();
        assert!((part.z.unwrap() - part.j.unwrap()).abs() < 1e-15);
    }

    #[test]
    fn partition_matches_quadrature() {
        for (law, q, d) in [
            (IncrementLaw::Deterministic { v: vec![1] }, 2, 1),
            (lazy(2), 2, 2),
            (IncrementLaw::Uniform, 2, 2),
        ] {
            let spec = spectrum(&law, q, d);
            for (alpha, beta) in [(0.5, 1.0), (0.8, 3.0), (0.3, 0.5)] {
                let exact = partition_function(&spec, alpha, beta).unwrap().log_z;
                let quad = partition_quadrature(&spec, alpha, beta, 48).unwrap();
                assert!((exact.exp() - quad.exp()).abs() <= 1e-6 * exact.exp().max(1.0), "{exact} {quad}");
            }
        }
    }

    #[test]
    fn partition_matches_mc() {
        let spec = spectrum(&lazy(2), 2, 4);
        let mc = partition_mc(&spec, 0.6, 1.5, 200_000, McConfig::new(11)).unwrap();
        assert!(mc.estimate.agrees_with(mc.exact, 4.0, 1e-12), "{mc:?}");
    }

    #[test]
    fn grouped_log_det_matches_spectrum() {
        for (q, d) in [(2, 3), (2, 4), (3, 2), (3, 4)] {
            let p = if q == 2 { vec![0.7, 0.3] } else { vec![0.6, 0.2, 0.2] };
            for law in [lazy(q), IncrementLaw::Uniform, IncrementLaw::ProductIid { p }] {
                let spec = spectrum(&law, q, d);
                let n = (q as f64).powi(d as i32);
                let direct = -0.5 * spec.values().iter().map(|r| (1.0 - 0.7 * r.re).ln()).sum::<f64>() / n;
                let grouped = grouped_log_det(&law, q, d, 0.7).unwrap();
                assert!((direct - grouped).abs() < 1e-10, "q={q} d={d}");
                let a = partition_function(&spec, 0.7, 2.0).unwrap();
                let b = partition_function_grouped(&law, q, d, 0.7, 2.0).unwrap();
                assert!((a.log_z - b.log_z).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn log_z_limit_examples() {
        let point = AtomicMeasure::from_pairs(vec![(0.8, 1.0)]).unwrap();
        let (alpha, beta, c) = (0.6, 2.0, 1.5);
        let v = log_z_limit(&point, alpha, beta, c).unwrap();
        let want = (2.0 * PI * alpha / beta).ln() - (1.0 - alpha * (-c * 0.8f64).exp()).ln();
        assert!((v.value - want).abs() < 1e-15);
        assert!(v.finite_at_alpha_one);
        let tiny = log_z_limit(&point, 1e-12, beta, c).unwrap();
        assert!((tiny.value - (2.0 * PI * 1e-12 / beta).ln()).abs() < 1e-11);
        let with_zero = AtomicMeasure::from_pairs(vec![(0.0, 0.5), (1.0, 0.5)]).unwrap();
        assert!(!log_z_limit(&with_zero, 0.5, 1.0, 1.0).unwrap().finite_at_alpha_one);
        assert!(matches!(log_z_limit(&with_zero, 1.0, 1.0, 1.0), Err(Error::LogSingularity(_))));
    }

    #[test]
    fn finite_rate_approaches_unit_constant() {
        let fit = fit_limit_constant(2, &[0.5], 0.5, 1.0, &[4, 6, 8, 10, 12], 500, 7).unwrap();
        assert_eq!(fit.better_constant, 1.0);
        assert!(fit.gaps_decrease(), "{fit:?}");
        assert!((fit.c - 1.0).abs() < 0.05, "{fit:?}");
        assert!(fit.interval.0 <= fit.c && fit.c <= fit.interval.1);
    }

    #[test]
    fn finite_rate_matches_enumeration() {
        let (q, d, z) = (2, 6, [0.5]);
        let law = sparse_type_law(q, d, &z).unwrap();
        let spec = spectrum(&law, q, d);
        let direct = 2.0 * partition_function(&spec, 0.5, 1.0).unwrap().log_z / 64.0;
        assert!((direct - finite_log_z_rate(q, d, &z, 0.5, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn root_of_unity_sum_gives_unit_constant() {
        // (1/q) sum_{k=1}^{q-1} (-|z| + sum_j z[j] theta_k^j) = -|z|.
        for q in 2..7 {
            let roots = RootTable::new(q);
            let z: Vec<f64> = (1..q).map(|j| 0.1 * j as f64).collect();
            let norm: f64 = z.iter().sum();
            let s: Complex64 = (1..q)
                .map(|k| {
                    Complex64::new(-norm, 0.0) + (1..q).map(|j| roots.pow(k * j) * z[j - 1]).sum::<Complex64>()
                })
                .sum::<Complex64>()
                / q as f64;
            assert!((s.re + norm).abs() < 1e-13 && s.im.abs() < 1e-13);
        }
    }

    fn field(law: &IncrementLaw, q: usize, d: usize, alpha: f64) -> FieldSynth {
        FieldSynth::new(&spectrum(law, q, d), alpha).unwrap()
    }

    #[test]
    fn delta_coupling_is_minus_field() {
        let synth = field(&lazy(3), 3, 2, 0.5);
        let sample = synth.sample(&mut ChaCha8Rng::seed_from_u64(1));
        let p = PottsSpec::delta(1.0).unwrap();
        for y in 0..9 {
            let h = potts_hamiltonian(&p, &sample, y).unwrap();
            assert_eq!(h, -sample.g[y]);
            assert!((potts_hamiltonian_bonds(&p, &synth, &sample, y).unwrap() - h).norm() < 1e-12);
        }
    }

    #[test]
    fn nine_bond_expansion() {
        let synth = field(&lazy(3), 3, 2, 0.5);
        let sample = synth.sample(&mut ChaCha8Rng::seed_from_u64(2));
        let j = bonds(&synth, &sample);
        let theta = RootTable::new(3);
        let lattice = synth.lattice();
        for y in 0..9 {
            let terms = potts_expansion(&synth, &sample, y);
            assert_eq!(terms.len(), 9);
            let yd = lattice.digits(y);
            for (r, term) in &terms {
                let rank = lattice.rank(&crate::zqd::MultiIndex::new(r.clone(), 3).unwrap()).unwrap();
                let want = -theta.pow(yd[0] * r[0]) * theta.pow(yd[1] * r[1]) * j[rank];
                assert!((term - want).norm() < 1e-14);
            }
            let total: Complex64 = terms.iter().map(|t| t.1).sum();
            assert!((total + sample.g[y]).norm() < 1e-12);
        }
    }

    #[test]
    fn dense_coupling_matches_bond_form() {
        let synth = field(&lazy(2), 2, 2, 0.3);
        let sample = synth.sample(&mut ChaCha8Rng::seed_from_u64(4));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b: Vec<Complex64> = (0..16).map(|_| Complex64::new(rng.random(), rng.random())).collect();
        let p = PottsSpec::new(Coupling::Dense(b), 0.5).unwrap();
        for y in 0..4 {
            let a = potts_hamiltonian(&p, &sample, y).unwrap();
            let c = potts_hamiltonian_bonds(&p, &synth, &sample, y).unwrap();
            assert!((a - c).norm() < 1e-12);
        }
        assert!(matches!(gibbs(&p, &sample), Err(Error::Contract(_))));
    }

    #[test]
    fn gibbs_normalizes() {
        let synth = field(&lazy(2), 2, 3, 0.5);
        let sample = synth.sample(&mut ChaCha8Rng::seed_from_u64(6));
        let pmf = gibbs(&PottsSpec::delta(2.0).unwrap(), &sample).unwrap();
        assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let flat = gibbs(&PottsSpec::delta(1e-300).unwrap(), &sample).unwrap();
        assert!(flat.iter().all(|p| (p - 0.125).abs() < 1e-14));
        let complex = field(&lazy(3), 3, 2, 0.5).sample(&mut ChaCha8Rng::seed_from_u64(6));
        assert!(matches!(gibbs(&PottsSpec::delta(1.0).unwrap(), &complex), Err(Error::Contract(_))));
    }

    #[test]
    fn binary_expected_partition_closed_form() {
        for d in 1..5 {
            for alpha in [0.0, 0.4, 0.9] {
                let synth = field(&IncrementLaw::Uniform, 2, d, alpha);
                let beta = 0.3;
                let sigma2 = (1.0 - alpha) + alpha / 2f64.powi(d as i32);
                assert!((synth.covariance(0, 0).re - sigma2).abs() < 1e-14);
                let got = log_expected_partition(&PottsSpec::delta(beta).unwrap(), &synth).unwrap();
                let want = d as f64 * 2f64.ln() + beta * beta / 2.0 * sigma2;
                assert!((got.re - want).abs() < 1e-13 && got.im.abs() < 1e-13);
            }
        }
        let synth = field(&lazy(3), 3, 2, 0.5);
        let small = log_expected_partition(&PottsSpec::delta(1e-8).unwrap(), &synth).unwrap();
        assert!((small - 9f64.ln()).norm() < 1e-12);
    }

    #[test]
    fn binary_free_energy_display() {
        let (d, alpha, beta) = (3, 0.6, 0.2);
        let synth = field(&lazy(2), 2, d, alpha);
        let n = 8.0;
        let sigma2 = synth.covariance(0, 0).re;
        let off: f64 = (0..8)
            .flat_map(|x| (0..8).map(move |y| (x, y)))
            .filter(|(x, y)| x != y)
            .map(|(x, y)| synth.covariance(x, y).re)
            .sum();
        let want = d as f64 * 2f64.ln() / beta + beta / 2.0 * ((1.0 - 1.0 / n) * sigma2 - off / (n * n));
        let got = free_energy_expansion(&PottsSpec::delta(beta).unwrap(), &synth).unwrap();
        assert!((got.re - want).abs() < 1e-13 && got.im.abs() < 1e-13);
    }

    #[test]
    fn hamiltonian_moments_by_sampling() {
        let synth = field(&lazy(3), 3, 2, 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let b: Vec<Complex64> = (0..81).map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        let p = PottsSpec::new(Coupling::Dense(b), 1.0).unwrap();
        let m = potts_moments_mc(&p, &synth, 40_000, McConfig::new(21)).unwrap();
        for y in 0..9 {
            assert!(m.mean[y].agrees_with(Complex64::new(0.0, 0.0), 4.5, 1e-12));
            let exact = hamiltonian_second_moment(&p, &synth, y).unwrap();
            assert!(m.second[y].agrees_with(exact, 4.5, 1e-12), "{y}: {:?} vs {exact}", m.second[y]);
        }
    }

    #[test]
    fn hamiltonian_variance_trend() {
        let d = 3;
        let p = PottsSpec::delta(1.0).unwrap();
        for alpha in [0.0, 0.5, 0.99] {
            let synth = field(&IncrementLaw::Uniform, 2, d, alpha);
            let m = potts_moments_mc(&p, &synth, 40_000, McConfig::new(8)).unwrap();
            let want = (1.0 - alpha) + alpha / 8.0;
            assert!(m.second[0].agrees_with(want, 4.0, 1e-12), "{alpha}: {:?}", m.second[0]);
        }
    }

    #[test]
    fn expected_partition_by_sampling() {
        let synth = field(&lazy(2), 2, 2, 0.5);
        let p = PottsSpec::delta(0.3).unwrap();
        let est = expected_partition_mc(&p, &synth, 100_000, McConfig::new(30)).unwrap();
        let exact = log_expected_partition(&p, &synth).unwrap().exp();
        assert!(est.agrees_with(exact, 4.0, 1e-12), "{est:?} vs {exact}");
    }

    proptest! {
        #[test]
        fn identity_holds_for_any_vector(
            g in proptest::collection::vec(-3.0f64..3.0, 8),
            alpha in 0.05f64..0.95,
        ) {
            let spec = spectrum(&lazy(2), 2, 3);
            let check = hamiltonian_identity_check(&spec, alpha, &g).unwrap();
            prop_assert!(check.residual <= 1e-10 * (1.0 + check.lhs.abs()));
        }

        #[test]
        fn form_eigenvalues_are_bounded(alpha in 0.0f64..1.0) {
            let form = QuadraticForm::new(&spectrum(&lazy(3), 3, 2), alpha).unwrap();
            for e in form.eigenvalues() {
                prop_assert!(e >= 1.0 - alpha - 1e-12 && e <= 1.0 + alpha + 1e-12);
            }
        }

        #[test]
        fn log_z_limit_increases_in_alpha(z in 0.01f64..3.0, a in 0.05f64..0.9) {
            let m = AtomicMeasure::new(vec![Atom { point: z, weight: 1.0 }]).unwrap();
            let lo = log_z_limit(&m, a, 1.0, 1.0).unwrap().value;
            let hi = log_z_limit(&m, a + 0.05, 1.0, 1.0).unwrap().value;
            prop_assert!(hi > lo);
        }
    }
}
