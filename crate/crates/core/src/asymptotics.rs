//! The `d -> infinity` limit of the count-vector picture.
//!
//! A uniform multinomial count `M = d/q + sqrt(d) Mfrak` has
//! `Mfrak -> N(0, (1/q)(I - J/q))`, singular on `sum_j Mfrak[j] = 0`. Scaled
//! Krawtchouk polynomials `Q_l(m; d) d^{-|l|/2}` converge to the limit
//! polynomials `Q_l(mfrak; infinity)`, the coefficients of `w^l` in
//!
//! ```text
//! exp{ -1/(2q) sum_j s_j^2 + sum_j mfrak[j] s_j },  s_j = sum_k w_k theta^{kj},
//! ```
//!
//! and the grouped Green function, suitably rescaled, converges to a density
//! on `R^{q-1}`.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::combinatorics::{bounded_vectors, compositions, factorial, ln_multinomial, uniform_multinomial_pmf};
use crate::error::{Error, Result};
use crate::krawtchouk::{kappa, krawtchouk_eval, KrawtchoukTable};
use crate::mc::{merge_complex, run_workers, ComplexAccumulator, ComplexEstimate, McConfig};
use crate::pointproc::{y_moment, PointProcessSpec};
use crate::walk::{IncrementLaw, KillingLaw};
use crate::zqd::RootTable;

/// Default truncation degree of the limit series.
pub const DEFAULT_MAX_DEGREE: usize = 8;

/// `H_k(x; q)` with generating function `exp{-z^2/(2q) + x z}`, orthogonal
/// under `N(0, 1/q)`.
pub fn hermite_chebycheff(k: usize, x: f64, q: usize) -> f64 {
    hermite_all(k, x, q)[k]
}

/// `[H_0(x; q), ..., H_kmax(x; q)]` by `H_{k+1} = x H_k - (k/q) H_{k-1}`.
pub fn hermite_all(kmax: usize, x: f64, q: usize) -> Vec<f64> {
    let mut h = Vec::with_capacity(kmax + 1);
    h.push(1.0);
    if kmax >= 1 {
        h.push(x);
    }
    for k in 1..kmax {
        h.push(x * h[k] - (k as f64 / q as f64) * h[k - 1]);
    }
    h
}

/// `n`-point Gauss quadrature for `N(0, variance)` by Golub-Welsch: nodes are
/// the eigenvalues of the Hermite Jacobi matrix, weights the squared first
/// components of its eigenvectors.
pub fn gauss_hermite(n: usize, variance: f64) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let scale = variance.sqrt();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i] * scale, eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Largest `|E[H_j H_k] - delta_jk k!/q^k| / sqrt(h_j h_k)` over `j, k <= max_k`,
/// with `h_k = k!/q^k`, by exact Gauss quadrature.
pub fn hermite_orthogonality_residual(max_k: usize, q: usize) -> f64 {
    let (nodes, weights) = gauss_hermite(max_k + 4, 1.0 / q as f64);
    let table: Vec<Vec<f64>> = nodes.iter().map(|&x| hermite_all(max_k, x, q)).collect();
    let norm = |k: usize| factorial(k) / (q as f64).powi(k as i32);
    let mut worst: f64 = 0.0;
    for j in 0..=max_k {
        for k in 0..=max_k {
            let e: f64 = table.iter().zip(&weights).map(|(h, w)| w * h[j] * h[k]).sum();
            let want = if j == k { norm(k) } else { 0.0 };
            worst = worst.max((e - want).abs() / (norm(j) * norm(k)).sqrt());
        }
    }
    worst
}

/// Residual of the complex-argument identity
/// `E[exp{i (i a + b) X}] = exp{-(i a + b)^2 / 2}` for `X ~ N(0, 1)`,
/// with the left side by Gauss quadrature.
pub fn complex_gaussian_residual(a: f64, b: f64) -> f64 {
    let (nodes, weights) = gauss_hermite(80, 1.0);
    let z = Complex64::new(b, a);
    let lhs: Complex64 = nodes
        .iter()
        .zip(&weights)
        .map(|(&x, &w)| (Complex64::i() * z * x).exp() * w)
        .sum();
    (lhs - (-z * z / 2.0).exp()).norm()
}

fn check_q(q: usize) -> Result<()> {
    if q < 2 {
        return Err(Error::Range(format!("q must be >= 2, got {q}")));
    }
    Ok(())
}

/// Full vector `(-sum mfrak_+, mfrak_+)`.
pub fn full_type_vector(m_plus: &[f64]) -> Vec<f64> {
    let mut m = Vec::with_capacity(m_plus.len() + 1);
    m.push(-m_plus.iter().sum::<f64>());
    m.extend_from_slice(m_plus);
    m
}

/// Density of `Mfrak_+`:
/// `q^{q/2} (2 pi)^{-(q-1)/2} exp{-(q/2) sum_{a,b} (delta_ab + 1) m[a] m[b]}`.
pub fn limit_density(m_plus: &[f64]) -> f64 {
    let q = m_plus.len() + 1;
    let sum: f64 = m_plus.iter().sum();
    let quad: f64 = m_plus.iter().map(|v| v * v).sum::<f64>() + sum * sum;
    (q as f64).powf(q as f64 / 2.0) / (2.0 * PI).powf((q - 1) as f64 / 2.0) * (-(q as f64) / 2.0 * quad).exp()
}

/// `E[e^{i omega . Mfrak}] = exp{-(1/2q) sum omega^2 + (1/2q^2) (sum omega)^2}`
/// for `omega` of length `q`.
pub fn gaussian_char_fn(omega: &[f64]) -> f64 {
    let q = omega.len() as f64;
    let s: f64 = omega.iter().sum();
    let s2: f64 = omega.iter().map(|v| v * v).sum();
    (-s2 / (2.0 * q) + s * s / (2.0 * q * q)).exp()
}

/// Draws `Mfrak = (I - J/q) Z / sqrt(q)` into `out` (length `q`).
pub fn sample_gaussian_type<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    let q = out.len() as f64;
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    let mean = out.iter().sum::<f64>() / q;
    let scale = q.sqrt().recip();
    for v in out.iter_mut() {
        *v = (*v - mean) * scale;
    }
}

/// Limit polynomials up to degree `max_degree` in the Hermite product basis:
/// `Q_l(mfrak; infinity) = sum_{|a| = |l|} c_{l,a} prod_j H_{a[j]}(mfrak[j]; q)`
/// with `c_{l,a} = Q_{a^+}((0, l); |l|) / prod_k l[k]!`.
#[derive(Debug, Clone)]
pub struct LimitPolyTable {
    q: usize,
    max_degree: usize,
    degrees: Vec<Vec<usize>>,
    lookup: HashMap<Vec<usize>, usize>,
    terms: Vec<Vec<(Vec<usize>, Complex64)>>,
}

impl LimitPolyTable {
    pub fn new(q: usize, max_degree: usize) -> Result<Self> {
        check_q(q)?;
        let degrees = bounded_vectors(q - 1, max_degree);
        let lookup = degrees.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        let terms = degrees
            .iter()
            .map(|l| {
                let n: usize = l.iter().sum();
                let mut as_counts = vec![0];
                as_counts.extend_from_slice(l);
                let l_fact: f64 = l.iter().map(|&v| factorial(v)).product();
                compositions(n, q)
                    .into_iter()
                    .map(|a| {
                        let q_val = krawtchouk_eval(&as_counts, &a[1..])?.value;
                        Ok((a, q_val / l_fact))
                    })
                    .filter(|t| t.as_ref().map_or(true, |(_, c)| c.norm() > 1e-300))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            q,
            max_degree,
            degrees,
            lookup,
            terms,
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn degrees(&self) -> &[Vec<usize>] {
        &self.degrees
    }

    pub fn degree_index(&self, l: &[usize]) -> Option<usize> {
        self.lookup.get(l).copied()
    }

    /// Hermite-basis coefficients `(a, c_{l,a})` of degree index `li`.
    pub fn terms(&self, li: usize) -> &[(Vec<usize>, Complex64)] {
        &self.terms[li]
    }

    fn hermite_rows(&self, m: &[f64]) -> Vec<Vec<f64>> {
        m.iter().map(|&x| hermite_all(self.max_degree, x, self.q)).collect()
    }

    fn check_point(&self, m: &[f64]) -> Result<()> {
        if m.len() != self.q {
            return Err(Error::Shape(format!("type vector has {} entries, expected q = {}", m.len(), self.q)));
        }
        Ok(())
    }

    /// `Q_l(mfrak; infinity)` for every degree index at a full type vector.
    pub fn values(&self, m: &[f64]) -> Result<Vec<Complex64>> {
        self.check_point(m)?;
        let h = self.hermite_rows(m);
        Ok(self
            .terms
            .iter()
            .map(|terms| {
                terms
                    .iter()
                    .map(|(a, c)| c * a.iter().enumerate().map(|(j, &aj)| h[j][aj]).product::<f64>())
                    .sum()
            })
            .collect())
    }

    pub fn value(&self, l: &[usize], m: &[f64]) -> Result<Complex64> {
        let li = self
            .degree_index(l)
            .ok_or_else(|| Error::Range(format!("{l:?} is beyond the table degree {}", self.max_degree)))?;
        self.check_point(m)?;
        let h = self.hermite_rows(m);
        Ok(self.terms[li]
            .iter()
            .map(|(a, c)| c * a.iter().enumerate().map(|(j, &aj)| h[j][aj]).product::<f64>())
            .sum())
    }
}

/// Truncated multivariate power series in `w_1..w_{q-1}`.
struct Series {
    monomials: Vec<Vec<usize>>,
    lookup: HashMap<Vec<usize>, usize>,
    max_degree: usize,
}

impl Series {
    fn new(vars: usize, max_degree: usize) -> Self {
        let monomials = bounded_vectors(vars, max_degree);
        let lookup = monomials.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Self {
            monomials,
            lookup,
            max_degree,
        }
    }

    fn mul(&self, a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); a.len()];
        let deg = |i: usize| self.monomials[i].iter().sum::<usize>();
        for (i, &ai) in a.iter().enumerate().filter(|(_, v)| v.norm() > 0.0) {
            let di = deg(i);
            for (j, &bj) in b.iter().enumerate().filter(|(_, v)| v.norm() > 0.0) {
                if di + deg(j) > self.max_degree {
                    continue;
                }
                let key: Vec<usize> = self.monomials[i].iter().zip(&self.monomials[j]).map(|(x, y)| x + y).collect();
                out[self.lookup[&key]] += ai * bj;
            }
        }
        out
    }

    /// `exp(p)` for `p` without constant term.
    fn exp(&self, p: &[Complex64]) -> Vec<Complex64> {
        let mut result = vec![Complex64::new(0.0, 0.0); p.len()];
        result[0] = Complex64::new(1.0, 0.0);
        let mut term = result.clone();
        for n in 1..=self.max_degree {
            term = self.mul(&term, p).into_iter().map(|v| v / n as f64).collect();
            for (r, t) in result.iter_mut().zip(&term) {
                *r += t;
            }
        }
        result
    }
}

/// Route A: every `Q_l(mfrak; infinity)` with `|l| <= max_degree` as a series
/// coefficient of the exponential generating function. Ordered like
/// [`LimitPolyTable::degrees`].
pub fn limit_krawtchouk_series(m: &[f64], max_degree: usize) -> Result<Vec<Complex64>> {
    let q = m.len();
    check_q(q)?;
    let roots = RootTable::new(q);
    let series = Series::new(q - 1, max_degree);
    let mut exponent = vec![Complex64::new(0.0, 0.0); series.monomials.len()];
    let unit = |k: usize| {
        let mut e = vec![0; q - 1];
        e[k] = 1;
        e
    };
    if max_degree >= 1 {
        for k in 1..q {
            let lin: Complex64 = (0..q).map(|j| roots.pow(k * j) * m[j]).sum();
            exponent[series.lookup[&unit(k - 1)]] += lin;
        }
    }
    if max_degree >= 2 {
        for k in 1..q {
            for kk in 1..q {
                let quad: Complex64 = (0..q).map(|j| roots.pow((k + kk) * j)).sum::<Complex64>() / (-2.0 * q as f64);
                let mut key = unit(k - 1);
                key[kk - 1] += 1;
                exponent[series.lookup[&key]] += quad;
            }
        }
    }
    Ok(series.exp(&exponent))
}

/// Route B at a single degree index.
pub fn limit_krawtchouk(m: &[f64], l: &[usize]) -> Result<Complex64> {
    let q = m.len();
    if l.len() + 1 != q {
        return Err(Error::Shape("degree index must have q - 1 entries".into()));
    }
    LimitPolyTable::new(q, l.iter().sum())?.value(l, m)
}

/// Count vector nearest to `d/q + sqrt(d) mfrak` (entries `1..q-1` rounded,
/// entry 0 absorbing the remainder) and the exact `mfrak` it corresponds to.
pub fn count_vector_near(q: usize, d: usize, m_plus: &[f64]) -> Result<(Vec<usize>, Vec<f64>)> {
    check_q(q)?;
    if m_plus.len() + 1 != q {
        return Err(Error::Shape("mfrak_+ must have q - 1 entries".into()));
    }
    let centre = d as f64 / q as f64;
    let root = (d as f64).sqrt();
    let mut m = vec![0usize; q];
    for (k, &v) in m_plus.iter().enumerate() {
        let x = (centre + root * v).round();
        if x < 0.0 {
            return Err(Error::Range(format!("mfrak {v} is outside the simplex at d = {d}")));
        }
        m[k + 1] = x as usize;
    }
    let rest: usize = m[1..].iter().sum();
    if rest > d {
        return Err(Error::Range(format!("mfrak_+ {m_plus:?} is outside the simplex at d = {d}")));
    }
    m[0] = d - rest;
    let frak = m.iter().map(|&v| (v as f64 - centre) / root).collect();
    Ok((m, frak))
}

/// `Q_l(m; d) d^{-|l|/2}`.
pub fn scaled_krawtchouk(m: &[usize], l: &[usize]) -> Result<Complex64> {
    let d: usize = m.iter().sum();
    let n: usize = l.iter().sum();
    Ok(krawtchouk_eval(m, l)?.value * (d as f64).powf(-(n as f64) / 2.0))
}

/// `|Q_l(m; d) d^{-|l|/2} - Q_l(mfrak; infinity)|` for each `d`, with `m` the
/// nearest count vector and `mfrak` recomputed from it.
pub fn finite_d_krawtchouk_errors(q: usize, l: &[usize], m_plus: &[f64], ds: &[usize]) -> Result<Vec<f64>> {
    let table = LimitPolyTable::new(q, l.iter().sum())?;
    ds.iter()
        .map(|&d| {
            let (m, frak) = count_vector_near(q, d, m_plus)?;
            Ok((scaled_krawtchouk(&m, l)? - table.value(l, &frak)?).norm())
        })
        .collect()
}

/// `E[e^{i omega . Mfrak}] (i/q)^{|l|} prod_k (sum_a omega[a] theta_k^a)^{l[k]} / l[k]!`.
pub fn transform_closed_form(omega: &[f64], l: &[usize]) -> Result<Complex64> {
    let q = omega.len();
    check_q(q)?;
    if l.len() + 1 != q {
        return Err(Error::Shape("degree index must have q - 1 entries".into()));
    }
    let roots = RootTable::new(q);
    let n: usize = l.iter().sum();
    let mut value = Complex64::new(gaussian_char_fn(omega), 0.0) * (Complex64::i() / q as f64).powu(n as u32);
    for (i, &lk) in l.iter().enumerate() {
        let k = i + 1;
        let s: Complex64 = omega.iter().enumerate().map(|(a, &w)| roots.pow(k * a) * w).sum();
        value *= s.powu(lk as u32) / factorial(lk);
    }
    Ok(value)
}

/// Monte Carlo of `E[e^{i omega . Mfrak} Q_l(Mfrak; infinity)]`.
pub fn transform_mc(omega: &[f64], l: &[usize], n: usize, mc: McConfig) -> Result<ComplexEstimate> {
    let q = omega.len();
    let table = LimitPolyTable::new(q, l.iter().sum())?;
    let li = table.degree_index(l).ok_or_else(|| Error::Shape("bad degree index".into()))?;
    let parts = run_workers(n, mc, |rng, count| {
        let mut acc = ComplexAccumulator::default();
        let mut m = vec![0.0; q];
        for _ in 0..count {
            sample_gaussian_type(rng, &mut m);
            let phase: f64 = omega.iter().zip(&m).map(|(a, b)| a * b).sum();
            let poly = table.value(&table.degrees[li], &m).expect("validated shape");
            acc.push(Complex64::from_polar(1.0, phase) * poly);
        }
        acc
    });
    Ok(merge_complex(&parts))
}

/// Result of a closed-form versus Monte Carlo comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McCheck {
    pub closed_form: Complex64,
    pub estimate: ComplexEstimate,
    /// Largest component deviation in standard errors (0 when both are exact).
    pub standardized: f64,
}

impl McCheck {
    pub fn new(closed_form: Complex64, estimate: ComplexEstimate) -> Self {
        let z = |diff: f64, se: f64| if diff <= 1e-12 { 0.0 } else { diff / se.max(1e-300) };
        let standardized = z((estimate.mean.re - closed_form.re).abs(), estimate.se_re)
            .max(z((estimate.mean.im - closed_form.im).abs(), estimate.se_im));
        Self {
            closed_form,
            estimate,
            standardized,
        }
    }
}

pub fn transform_identity_check(omega: &[f64], l: &[usize], n: usize, mc: McConfig) -> Result<McCheck> {
    Ok(McCheck::new(transform_closed_form(omega, l)?, transform_mc(omega, l, n, mc)?))
}

/// Monte Carlo of the Gaussian characteristic function.
pub fn char_fn_check(omega: &[f64], n: usize, mc: McConfig) -> Result<McCheck> {
    let q = omega.len();
    check_q(q)?;
    let parts = run_workers(n, mc, |rng, count| {
        let mut acc = ComplexAccumulator::default();
        let mut m = vec![0.0; q];
        for _ in 0..count {
            sample_gaussian_type(rng, &mut m);
            let phase: f64 = omega.iter().zip(&m).map(|(a, b)| a * b).sum();
            acc.push(Complex64::from_polar(1.0, phase));
        }
        acc
    });
    Ok(McCheck::new(Complex64::new(gaussian_char_fn(omega), 0.0), merge_complex(&parts)))
}

/// Monte Carlo of `E[Q_l(Mfrak) conj(Q_l'(Mfrak))]` for all `|l|, |l'| <= max_degree`;
/// returns the worst deviation from `delta_ll' / prod l!` in standard errors.
pub fn biorthogonality_mc(q: usize, max_degree: usize, n: usize, mc: McConfig) -> Result<f64> {
    let table = LimitPolyTable::new(q, max_degree)?;
    let nd = table.degrees.len();
    let parts = run_workers(n, mc, |rng, count| {
        let mut acc = crate::mc::CovarianceAccumulator::new(nd);
        let mut m = vec![0.0; q];
        for _ in 0..count {
            sample_gaussian_type(rng, &mut m);
            acc.push(&table.values(&m).expect("validated shape"));
        }
        acc
    });
    let mut acc = crate::mc::CovarianceAccumulator::new(nd);
    parts.iter().for_each(|p| acc.merge(p));
    let target = |i: usize, j: usize| {
        if i == j {
            Complex64::new(1.0 / table.degrees[i].iter().map(|&v| factorial(v)).product::<f64>(), 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    };
    Ok(acc.max_standardized_error(target, 1e-12))
}

/// Truncated limit Green density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitGreen {
    pub value: Complex64,
    /// `alpha = 0`: every `lambda_l = 1` and the series is a reproducing kernel,
    /// so only the truncated value is meaningful.
    pub degenerate: bool,
    pub terms: usize,
}

/// `phi(m_+) phi(n_+) {1 + sum_{1 <= |l| <= L} (prod l!) lambda_l Q_l(m) conj Q_l(n)}`
/// with `lambda_l = E[prod Y^l]` from `spec`.
pub fn limit_green_density(m_plus: &[f64], n_plus: &[f64], spec: &PointProcessSpec, max_degree: usize) -> Result<LimitGreen> {
    let q = spec.q();
    if m_plus.len() + 1 != q || n_plus.len() + 1 != q {
        return Err(Error::Shape("type vectors must have q - 1 entries".into()));
    }
    let table = LimitPolyTable::new(q, max_degree)?;
    let qm = table.values(&full_type_vector(m_plus))?;
    let qn = table.values(&full_type_vector(n_plus))?;
    let mut series = Complex64::new(0.0, 0.0);
    for (li, l) in table.degrees.iter().enumerate() {
        let lam = y_moment(spec, l)?.value;
        let fact: f64 = l.iter().map(|&v| factorial(v)).product();
        series += lam * fact * qm[li] * qn[li].conj();
    }
    Ok(LimitGreen {
        value: series * limit_density(m_plus) * limit_density(n_plus),
        degenerate: spec.alpha() == 0.0,
        terms: table.degrees.len(),
    })
}

/// Rescaled finite-`d` grouped Green function at the counts nearest to
/// `(mfrak, nfrak)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteLimitGreen {
    pub value: Complex64,
    pub m: Vec<usize>,
    pub n: Vec<usize>,
    pub m_frak: Vec<f64>,
    pub n_frak: Vec<f64>,
}

/// `d^{q-1} p(m) p(n) sum_{|l| <= L} h_l lambda_l Q_l(m) conj Q_l(n)`, with
/// `p` the uniform multinomial pmf.
pub fn limit_green_finite_d(
    law: &IncrementLaw,
    q: usize,
    d: usize,
    alpha: f64,
    m_plus: &[f64],
    n_plus: &[f64],
    max_degree: usize,
) -> Result<FiniteLimitGreen> {
    KillingLaw::geometric(alpha)?;
    let (m, m_frak) = count_vector_near(q, d, m_plus)?;
    let (n, n_frak) = count_vector_near(q, d, n_plus)?;
    let table = KrawtchoukTable::with_max_degree(q, d, max_degree)?;
    let kap = kappa(law, &table)?;
    let mi = table.count_index(&m).expect("count vector");
    let ni = table.count_index(&n).expect("count vector");
    let sum: Complex64 = kap
        .iter()
        .enumerate()
        .map(|(li, &k)| {
            crate::green::green_eigenvalue(k, alpha) * table.h(li) * table.value(li, mi) * table.value(li, ni).conj()
        })
        .sum();
    let scale = (d as f64).powi(q as i32 - 1) * uniform_multinomial_pmf(&m) * uniform_multinomial_pmf(&n);
    Ok(FiniteLimitGreen {
        value: sum * scale,
        m,
        n,
        m_frak,
        n_frak,
    })
}

/// Covariance of the transformed limit field with its truncation diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformCov {
    pub value: Complex64,
    /// Route B only: `sum |term|` over `|l| = L+1, L+2`.
    pub tail: Option<f64>,
}

fn transform_coefficients(omega: &[f64], psi: &[f64], q: usize) -> Result<Vec<Complex64>> {
    if omega.len() != q || psi.len() != q {
        return Err(Error::Shape(format!("omega and psi must have q = {q} entries")));
    }
    if omega[0] != 0.0 || psi[0] != 0.0 {
        return Err(Error::Contract("omega[0] and psi[0] must be 0".into()));
    }
    let roots = RootTable::new(q);
    Ok((1..q)
        .map(|k| {
            let a: Complex64 = (1..q).map(|j| roots.pow(k * j) * omega[j]).sum();
            let b: Complex64 = (1..q).map(|j| roots.pow_signed(-((k * j) as i64)) * psi[j]).sum();
            a * b / (q * q) as f64
        })
        .collect())
}

fn check_real_xi(spec: &PointProcessSpec) -> Result<()> {
    if spec.nu().iter().any(|a| a.xi().iter().any(|x| x.im.abs() > 1e-12)) {
        return Err(Error::Contract("transform covariance needs real xi atoms".into()));
    }
    Ok(())
}

fn gaussian_prefactor(omega: &[f64], psi: &[f64]) -> f64 {
    gaussian_char_fn(omega) * gaussian_char_fn(psi)
}

/// Route A: `E[e^{i Mfrak.omega}] E[e^{-i Mfrak.psi}] E[exp{sum_k Y[k] c_k}]`
/// with the expectation over `Y` summed exactly over the horizon and the
/// multiset of atoms drawn, until the horizon mass reaches `1 - 1e-12`.
/// `omega[0] = psi[0] = 0`.
pub fn transform_field_cov_closed(omega: &[f64], psi: &[f64], spec: &PointProcessSpec) -> Result<TransformCov> {
    let q = spec.q();
    check_real_xi(spec)?;
    let c = transform_coefficients(omega, psi, q)?;
    let atoms = spec.nu();
    let ln_w: Vec<f64> = atoms.iter().map(|a| a.weight().ln()).collect();
    let pmf = spec.killing().truncated_pmf(1.0 - 1e-12);
    let mut inner = Complex64::new(0.0, 0.0);
    for (t, &pt) in pmf.iter().enumerate() {
        let mut at_t = Complex64::new(0.0, 0.0);
        for counts in compositions(t, atoms.len()) {
            if counts.iter().zip(atoms).any(|(&n, a)| n > 0 && a.weight() == 0.0) {
                continue;
            }
            let ln_p = ln_multinomial(&counts)
                + counts.iter().zip(&ln_w).filter(|(&n, _)| n > 0).map(|(&n, lw)| n as f64 * lw).sum::<f64>();
            let exponent: Complex64 = (1..q)
                .map(|k| {
                    let y: f64 = counts.iter().zip(atoms).map(|(&n, a)| a.xi()[k].re.powi(n as i32)).product();
                    c[k - 1] * y
                })
                .sum();
            at_t += exponent.exp() * ln_p.exp();
        }
        inner += at_t * pt;
    }
    Ok(TransformCov {
        value: inner * gaussian_prefactor(omega, psi),
        tail: None,
    })
}

/// Route B: `sum_{|l| <= L} E[prod Y^l] prod_k c_k^{l[k]} / l[k]!` times the
/// Gaussian prefactor.
pub fn transform_field_cov_series(
    omega: &[f64],
    psi: &[f64],
    spec: &PointProcessSpec,
    max_degree: usize,
) -> Result<TransformCov> {
    let q = spec.q();
    check_real_xi(spec)?;
    let c = transform_coefficients(omega, psi, q)?;
    let term = |l: &[usize]| -> Result<Complex64> {
        let lam = y_moment(spec, l)?.value;
        Ok(l.iter()
            .zip(&c)
            .fold(lam, |acc, (&lk, ck)| acc * ck.powu(lk as u32) / factorial(lk)))
    };
    let mut value = Complex64::new(0.0, 0.0);
    let mut tail = 0.0;
    for l in bounded_vectors(q - 1, max_degree + 2) {
        let n: usize = l.iter().sum();
        let t = term(&l)?;
        if n <= max_degree {
            value += t;
        } else {
            tail += t.norm();
        }
    }
    let pre = gaussian_prefactor(omega, psi);
    Ok(TransformCov {
        value: value * pre,
        tail: Some(tail * pre),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinatorics::binomial;
    use proptest::prelude::*;

    #[test]
    fn hermite_low_orders() {
        assert_eq!(hermite_chebycheff(0, 0.7, 3), 1.0);
        assert_eq!(hermite_chebycheff(1, 0.7, 3), 0.7);
        assert!((hermite_chebycheff(2, 0.0, 2) + 0.5).abs() < 1e-15);
        // z^3 coefficient of exp{-z^2/(2q) + xz} times 3!: x^3 - 3x/q.
        let (x, q) = (1.3, 4);
        assert!((hermite_chebycheff(3, x, q) - (x * x * x - 3.0 * x / q as f64)).abs() < 1e-14);
    }

    #[test]
    fn hermite_orthogonality() {
        for q in [2, 3, 4] {
            assert!(hermite_orthogonality_residual(8, q) <= 1e-10, "q = {q}");
        }
    }

    #[test]
    fn quadrature_integrates_moments() {
        let (nodes, weights) = gauss_hermite(10, 0.25);
        let m4: f64 = nodes.iter().zip(&weights).map(|(x, w)| w * x.powi(4)).sum();
        assert!((m4 - 3.0 * 0.25 * 0.25).abs() < 1e-14);
        assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn complex_argument_identity() {
        for (a, b) in [(0.0, 0.0), (0.5, -1.0), (1.5, 0.3), (-2.0, 2.0)] {
            assert!(complex_gaussian_residual(a, b) <= 1e-8, "{a} {b}");
        }
    }

    #[test]
    fn density_normalizes_and_matches_covariance() {
        // q = 2: Mfrak[1] ~ N(0, 1/4), density 2/sqrt(2 pi) exp(-2 m^2).
        let m = 0.3;
        let want = 2.0 / (2.0 * PI).sqrt() * (-2.0f64 * m * m).exp();
        assert!((limit_density(&[m]) - want).abs() < 1e-15);
        // q = 3 by a product trapezoid rule.
        let h = 0.01;
        let mut total = 0.0;
        for i in -300..=300 {
            for j in -300..=300 {
                total += limit_density(&[i as f64 * h, j as f64 * h]) * h * h;
            }
        }
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn route_a_matches_route_b() {
        for q in [2, 3, 4, 5] {
            let l_max = if q <= 3 { 7 } else { 4 };
            let m_plus: Vec<f64> = (1..q).map(|k| 0.17 * k as f64 - 0.2).collect();
            let m = full_type_vector(&m_plus);
            let table = LimitPolyTable::new(q, l_max).unwrap();
            let a = limit_krawtchouk_series(&m, l_max).unwrap();
            let b = table.values(&m).unwrap();
            for (i, (x, y)) in a.iter().zip(&b).enumerate() {
                assert!((x - y).norm() <= 1e-9 * (1.0 + y.norm()), "q={q} l={:?}: {x} vs {y}", table.degrees()[i]);
            }
        }
    }

    #[test]
    fn first_order_limit_polynomials() {
        let q = 4;
        let m = full_type_vector(&[0.2, -0.1, 0.35]);
        let roots = RootTable::new(q);
        for k in 1..q {
            let mut l = vec![0; q - 1];
            l[k - 1] = 1;
            let want: Complex64 = (0..q).map(|j| roots.pow(k * j) * m[j]).sum();
            assert!((limit_krawtchouk(&m, &l).unwrap() - want).norm() < 1e-13);
        }
        assert_eq!(limit_krawtchouk(&m, &[0, 0, 0]).unwrap(), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn binary_limit_is_hermite() {
        // For q = 2 the limit is Q_l = (2 mfrak[1]... ) expressed through H_l at
        // m[0] - m[1] = -2 mfrak[1]: the series gives H_l(-2 m_1; 1/4 scaling).
        let m1 = 0.37;
        let m = full_type_vector(&[m1]);
        for l in 0..7 {
            // Generating function exp{-w^2/2 + (m0 - m1) w}: He_l(m0 - m1) / l!.
            let he = hermite_chebycheff(l, m[0] - m[1], 1) / factorial(l);
            assert!((limit_krawtchouk(&m, &[l]).unwrap().re - he).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_d_polynomials_converge() {
        let errs = finite_d_krawtchouk_errors(3, &[1, 1], &[0.15, -0.1], &[40, 80, 160]).unwrap();
        assert!(errs[2] < errs[0], "{errs:?}");
        let errs = finite_d_krawtchouk_errors(2, &[3], &[0.2], &[40, 80, 160]).unwrap();
        assert!(errs[2] < errs[0], "{errs:?}");
    }

    #[test]
    fn count_vector_rounding() {
        let (m, frak) = count_vector_near(3, 90, &[0.5, -0.5]).unwrap();
        assert_eq!(m.iter().sum::<usize>(), 90);
        assert_eq!(m, vec![30, 35, 25]);
        assert!((frak.iter().sum::<f64>()).abs() < 1e-12);
        assert!(count_vector_near(2, 4, &[5.0]).is_err());
    }

    #[test]
    fn transform_trivial_cases() {
        assert_eq!(transform_closed_form(&[0.0, 0.0, 0.0], &[1, 0]).unwrap(), Complex64::new(0.0, 0.0));
        let omega = [0.3, -0.2, 0.5];
        assert!((transform_closed_form(&omega, &[0, 0]).unwrap().re - gaussian_char_fn(&omega)).abs() < 1e-15);
    }

    #[test]
    fn transform_identity_binary() {
        let check = transform_identity_check(&[0.0, 1.0], &[1], 1_000_000, McConfig::new(17)).unwrap();
        assert!(check.standardized <= 4.0, "{check:?}");
    }

    #[test]
    fn char_fn_matches_sampling() {
        let check = char_fn_check(&[0.0, 1.2, -0.7], 400_000, McConfig::new(19)).unwrap();
        assert!(check.standardized <= 4.0, "{check:?}");
    }

    fn lazy_spec(q: usize, alpha: f64) -> PointProcessSpec {
        let law = IncrementLaw::lazy(q, &[(0.3, 0.2), (0.7, 0.9)]).unwrap();
        PointProcessSpec::from_law(&law, q, alpha, 1.0).unwrap()
    }

    #[test]
    fn limit_green_at_origin_is_monotone_in_truncation() {
        let spec = lazy_spec(3, 0.5);
        let law = IncrementLaw::lazy(3, &[(1.0, 0.4)]).unwrap();
        let positive = PointProcessSpec::from_law(&law, 3, 0.5, 1.0).unwrap();
        let mut last = 0.0;
        for big_l in 0..7 {
            let v = limit_green_density(&[0.0, 0.0], &[0.0, 0.0], &positive, big_l).unwrap().value;
            assert!(v.im.abs() < 1e-12);
            assert!(v.re >= last - 1e-15);
            last = v.re;
        }
        let zero = limit_green_density(&[0.1, 0.0], &[0.0, 0.2], &spec.with_phi(1.0).unwrap(), 0).unwrap();
        assert!((zero.value.re - limit_density(&[0.1, 0.0]) * limit_density(&[0.0, 0.2])).abs() < 1e-15);
        let frozen = PointProcessSpec::new(0.0, 1.0, spec.nu().to_vec()).unwrap();
        assert!(limit_green_density(&[0.0, 0.0], &[0.0, 0.0], &frozen, 3).unwrap().degenerate);
    }

    #[test]
    fn finite_d_green_approaches_limit() {
        let law = IncrementLaw::lazy(2, &[(0.3, 0.2), (0.7, 0.9)]).unwrap();
        let spec = lazy_spec(2, 0.5);
        let (m, n) = ([0.1], [-0.15]);
        let mut errs = Vec::new();
        for d in [40, 80, 160] {
            let finite = limit_green_finite_d(&law, 2, d, 0.5, &m, &n, 6).unwrap();
            let limit = limit_green_density(&finite.m_frak[1..], &finite.n_frak[1..], &spec, 6).unwrap();
            errs.push(((finite.value - limit.value) / limit.value).norm());
        }
        assert!(errs[2] < errs[0], "{errs:?}");
        assert!(errs[2] < 0.05, "{errs:?}");
    }

    #[test]
    fn scale_constant_asymptotics() {
        // h_l d^{|l|} -> prod l!: check the binary case directly.
        let d = 4000usize;
        for l in 1..5 {
            let h = 1.0 / binomial(d, l);
            assert!((h * (d as f64).powi(l as i32) / factorial(l) - 1.0).abs() < 5e-3);
        }
    }

    #[test]
    fn transform_cov_routes_agree() {
        let spec = lazy_spec(2, 0.5);
        let (omega, psi) = ([0.0, 0.3], [0.0, 0.5]);
        let a = transform_field_cov_closed(&omega, &psi, &spec).unwrap();
        let b = transform_field_cov_series(&omega, &psi, &spec, 12).unwrap();
        assert!((a.value - b.value).norm() <= 1e-6);
        assert!((a.value - b.value).norm() <= 1e-8f64.max(b.tail.unwrap()));

        let spec = lazy_spec(4, 0.7);
        let (omega, psi) = ([0.0, 0.8, -0.4, 1.1], [0.0, -0.6, 0.9, 0.2]);
        let a = transform_field_cov_closed(&omega, &psi, &spec).unwrap();
        let b = transform_field_cov_series(&omega, &psi, &spec, 10).unwrap();
        assert!((a.value - b.value).norm() <= 1e-8f64.max(b.tail.unwrap()));
    }

    #[test]
    fn transform_cov_trivial_cases() {
        let spec = lazy_spec(3, 0.6);
        let zero = [0.0; 3];
        let a = transform_field_cov_closed(&zero, &zero, &spec).unwrap();
        assert!((a.value - 1.0).norm() < 1e-11);
        // Uniform p: Y[k] = 0 once an atom is drawn, so the inner expectation is
        // P(T = 0) e^{sum c} + P(T >= 1).
        let alpha = 0.6;
        let uniform = PointProcessSpec::from_law(&IncrementLaw::Uniform, 3, alpha, 1.0).unwrap();
        let (omega, psi) = ([0.0, 0.7, 0.2], [0.0, -0.3, 0.9]);
        let c = transform_coefficients(&omega, &psi, 3).unwrap();
        let inner = Complex64::new(1.0 - alpha, 0.0) * c.iter().sum::<Complex64>().exp() + alpha;
        let want = inner * gaussian_prefactor(&omega, &psi);
        let got = transform_field_cov_closed(&omega, &psi, &uniform).unwrap();
        assert!((got.value - want).norm() < 1e-12);
        let complex = PointProcessSpec::from_law(&IncrementLaw::ProductIid { p: vec![0.5, 0.3, 0.2] }, 3, 0.5, 1.0).unwrap();
        assert!(matches!(transform_field_cov_closed(&omega, &psi, &complex), Err(Error::Contract(_))));
    }

    proptest! {
        #[test]
        fn limit_polynomials_have_degree_l(scale in 0.5f64..4.0, m1 in -1.0f64..1.0, m2 in -1.0f64..1.0) {
            // The top-degree part scales like scale^{|l|} for large arguments.
            let table = LimitPolyTable::new(3, 3).unwrap();
            let m = full_type_vector(&[m1 * 1e3, m2 * 1e3]);
            let ms = full_type_vector(&[m1 * 1e3 * scale, m2 * 1e3 * scale]);
            let (v, vs) = (table.values(&m).unwrap(), table.values(&ms).unwrap());
            for (li, l) in table.degrees().iter().enumerate() {
                let n: usize = l.iter().sum();
                if v[li].norm() > 1e-6 * 1e3f64.powi(n as i32) {
                    let ratio = vs[li].norm() / v[li].norm();
                    prop_assert!((ratio / scale.powi(n as i32) - 1.0).abs() < 1e-3);
                }
            }
        }
    }
}
