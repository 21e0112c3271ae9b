//! The de Finetti point-process layer.
//!
//! A law of `V` whose coordinates are i.i.d. `p` given a random `p ~ mu` is
//! pushed forward to the random vector `xi[k] = sum_j theta^{kj} p[j]`. With a
//! negative-binomial horizon `T ~ NB(alpha, phi)` and i.i.d. atoms
//! `xi_1, ..., xi_T`, the products `Y[k] = prod_t xi_t[k]` have moments
//!
//! ```text
//! E[prod_k Y[k]^{l_k}] = (1 + alpha/(1-alpha) (1 - kappa_l))^{-phi},
//! kappa_l = E[prod_k xi[k]^{l_k}],
//! ```
//!
//! which for `phi = 1` are the Green eigenvalues and for `phi = 1/2` their
//! square roots.

use num_complex::Complex64;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::{merge_complex, merge_real, run_workers, ComplexAccumulator, ComplexEstimate, McConfig, RealAccumulator, RealEstimate};
use crate::walk::{xi_transform, IncrementLaw, KillingLaw};
use crate::zqd::RootTable;

const WEIGHT_TOL: f64 = 1e-12;
const NON_REAL_TOL: f64 = 1e-14;

/// One atom of `nu`: the transform `xi` of a pmf `p` on `Z_q`, with its mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiAtom {
    xi: Vec<Complex64>,
    p: Vec<f64>,
    weight: f64,
}

impl XiAtom {
    pub fn from_pmf(p: &[f64], weight: f64) -> Result<Self> {
        if p.len() < 2 {
            return Err(Error::InvalidLaw("xi atom needs q >= 2".into()));
        }
        if p.iter().any(|&v| !v.is_finite() || v < 0.0) || (p.iter().sum::<f64>() - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidLaw(format!("xi atom pmf {p:?} is not a probability vector")));
        }
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::InvalidLaw(format!("xi atom weight {weight} must be >= 0")));
        }
        let roots = RootTable::new(p.len());
        Ok(Self {
            xi: xi_transform(p, &roots),
            p: p.to_vec(),
            weight,
        })
    }

    pub fn q(&self) -> usize {
        self.p.len()
    }

    pub fn xi(&self) -> &[Complex64] {
        &self.xi
    }

    pub fn pmf(&self) -> &[f64] {
        &self.p
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// `prod_{k=1}^{q-1} xi[k]^{l[k-1]}`.
    pub fn monomial(&self, l: &[usize]) -> Complex64 {
        l.iter()
            .enumerate()
            .map(|(i, &e)| self.xi[i + 1].powu(e as u32))
            .product()
    }
}

/// Inverse transform `p[j] = (1/q) sum_k theta^{-kj} xi[k]`; complex in general.
pub fn pmf_from_xi(xi: &[Complex64]) -> Vec<Complex64> {
    let q = xi.len();
    let roots = RootTable::new(q);
    (0..q)
        .map(|j| xi.iter().enumerate().map(|(k, &x)| roots.pow_signed(-((k * j) as i64)) * x).sum::<Complex64>() / q as f64)
        .collect()
}

/// `(alpha, phi, nu)` with `nu` a finite measure on `xi`-vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointProcessSpec {
    alpha: f64,
    phi: f64,
    nu: Vec<XiAtom>,
}

/// A moment value together with whether it left the real axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moment {
    pub value: Complex64,
    pub non_real: bool,
}

/// How the points of one de Finetti sequence are dealt to the `q - 1`
/// processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    /// Process `k` takes the next `l_k` points after those of process `k - 1`.
    Consecutive,
    /// Point `j` goes to process `1 + j mod (q - 1)`.
    Interleaved,
}

impl PointProcessSpec {
    pub fn new(alpha: f64, phi: f64, nu: Vec<XiAtom>) -> Result<Self> {
        KillingLaw::new(alpha, phi)?;
        let Some(first) = nu.first() else {
            return Err(Error::InvalidLaw("nu has no atoms".into()));
        };
        let q = first.q();
        if nu.iter().any(|a| a.q() != q) {
            return Err(Error::InvalidLaw("nu atoms have different q".into()));
        }
        let total: f64 = nu.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidLaw(format!("nu weights sum to {total}, not 1")));
        }
        Ok(Self { alpha, phi, nu })
    }

    /// The pushforward of a de Finetti law: `uniform`, `product_iid`,
    /// `de_finetti_mixture`, or a constant `deterministic` step.
    pub fn from_law(law: &IncrementLaw, q: usize, alpha: f64, phi: f64) -> Result<Self> {
        let atoms = match law {
            IncrementLaw::Uniform => vec![XiAtom::from_pmf(&vec![1.0 / q as f64; q], 1.0)?],
            IncrementLaw::ProductIid { p } => vec![XiAtom::from_pmf(p, 1.0)?],
            IncrementLaw::DeFinettiMixture { components } => components
                .iter()
                .map(|c| XiAtom::from_pmf(&c.p, c.weight))
                .collect::<Result<_>>()?,
            IncrementLaw::Deterministic { v } if law.is_exchangeable() => {
                let mut p = vec![0.0; q];
                p[*v.first().ok_or_else(|| Error::InvalidLaw("empty step".into()))? % q] = 1.0;
                vec![XiAtom::from_pmf(&p, 1.0)?]
            }
            _ => {
                return Err(Error::Contract(
                    "only i.i.d. mixtures have a xi-representation".into(),
                ))
            }
        };
        if atoms.iter().any(|a| a.q() != q) {
            return Err(Error::InvalidLaw(format!("law is not on Z_{q}")));
        }
        Self::new(alpha, phi, atoms)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn nu(&self) -> &[XiAtom] {
        &self.nu
    }

    pub fn q(&self) -> usize {
        self.nu[0].q()
    }

    pub fn with_phi(&self, phi: f64) -> Result<Self> {
        Self::new(self.alpha, phi, self.nu.clone())
    }

    pub fn killing(&self) -> KillingLaw {
        KillingLaw::new(self.alpha, self.phi).expect("validated on construction")
    }

    fn check_degree(&self, l: &[usize]) -> Result<()> {
        if l.len() + 1 != self.q() {
            return Err(Error::Shape(format!(
                "degree has {} entries, expected q - 1 = {}",
                l.len(),
                self.q() - 1
            )));
        }
        Ok(())
    }

    /// `kappa_l = sum_atoms w prod_k xi[k]^{l_k}`.
    pub fn kappa(&self, l: &[usize]) -> Result<Complex64> {
        self.check_degree(l)?;
        Ok(self.nu.iter().map(|a| a.monomial(l) * a.weight).sum())
    }

    fn atom_index(&self) -> WeightedIndex<f64> {
        WeightedIndex::new(self.nu.iter().map(|a| a.weight)).expect("weights sum to 1")
    }
}

/// `(1 + alpha/(1-alpha) (1 - kappa_l))^{-phi}`, principal branch.
pub fn y_moment(spec: &PointProcessSpec, l: &[usize]) -> Result<Moment> {
    let kappa = spec.kappa(l)?;
    let value = spec.killing().pgf(kappa);
    Ok(Moment {
        value,
        non_real: kappa.im.abs() > NON_REAL_TOL,
    })
}

/// Monte Carlo of `E[prod_k Y[k]^{l_k}]` at the level of `xi`: draws `T`, then
/// `T` independent atoms, and multiplies their monomials.
pub fn y_moment_mc(spec: &PointProcessSpec, l: &[usize], n: usize, mc: McConfig) -> Result<ComplexEstimate> {
    spec.check_degree(l)?;
    let monomials: Vec<Complex64> = spec.nu.iter().map(|a| a.monomial(l)).collect();
    let pick = spec.atom_index();
    let killing = spec.killing();
    let parts = run_workers(n, mc, |rng, count| {
        let mut acc = ComplexAccumulator::default();
        for _ in 0..count {
            acc.push(sample_product(rng, &killing, &pick, &monomials));
        }
        acc
    });
    Ok(merge_complex(&parts))
}

fn sample_product<R: Rng + ?Sized>(
    rng: &mut R,
    killing: &KillingLaw,
    pick: &WeightedIndex<f64>,
    monomials: &[Complex64],
) -> Complex64 {
    let t = killing.sample(rng);
    (0..t).map(|_| monomials[pick.sample(rng)]).product()
}

/// Sequence positions read by process `k` (1-based) under `scheme`.
pub fn partition_positions(l: &[usize], scheme: PartitionScheme) -> Vec<Vec<usize>> {
    let classes = l.len();
    match scheme {
        PartitionScheme::Consecutive => {
            let mut start = 0;
            l.iter()
                .map(|&lk| {
                    let block = (start..start + lk).collect();
                    start += lk;
                    block
                })
                .collect()
        }
        PartitionScheme::Interleaved => l
            .iter()
            .enumerate()
            .map(|(k, &lk)| (0..lk).map(|i| k + i * classes).collect())
            .collect(),
    }
}

/// Monte Carlo of the same moment from simulated de Finetti sequences: per
/// epoch an atom `p` is drawn, then a sequence `V_1, V_2, ...` i.i.d. `p`, and
/// process `k` contributes `theta^{k V_j}` for each of its first `l_k` points.
pub fn y_moment_sequence_mc(
    spec: &PointProcessSpec,
    l: &[usize],
    scheme: PartitionScheme,
    n: usize,
    mc: McConfig,
) -> Result<ComplexEstimate> {
    spec.check_degree(l)?;
    let q = spec.q();
    let roots = RootTable::new(q);
    let positions = partition_positions(l, scheme);
    let len = positions.iter().flatten().map(|&j| j + 1).max().unwrap_or(0);
    let owner: Vec<Option<usize>> = {
        let mut owner = vec![None; len];
        for (k, block) in positions.iter().enumerate() {
            for &j in block {
                owner[j] = Some(k + 1);
            }
        }
        owner
    };
    let samplers: Vec<WeightedIndex<f64>> = spec
        .nu
        .iter()
        .map(|a| WeightedIndex::new(&a.p).expect("validated pmf"))
        .collect();
    let pick = spec.atom_index();
    let killing = spec.killing();
    let parts = run_workers(n, mc, |rng, count| {
        let mut acc = ComplexAccumulator::default();
        for _ in 0..count {
            let t = killing.sample(rng);
            let mut exponent = 0usize;
            for _ in 0..t {
                let p = &samplers[pick.sample(rng)];
                for own in &owner {
                    let v = p.sample(rng);
                    if let Some(k) = own {
                        exponent += k * v;
                    }
                }
            }
            acc.push(roots.pow(exponent));
        }
        acc
    });
    Ok(merge_complex(&parts))
}

/// `|E[Y_{1/2}^l]^2 - E[Y^l]|` from the closed forms.
pub fn half_process_identity(spec: &PointProcessSpec, l: &[usize]) -> Result<f64> {
    let half = y_moment(&spec.with_phi(0.5)?, l)?.value;
    let one = y_moment(&spec.with_phi(1.0)?, l)?.value;
    Ok((half * half - one).norm())
}

/// Monte Carlo of `E[Y_{1/2}^l] E[Y'_{1/2}^l]` as the mean of products of two
/// independent half-process samples.
pub fn half_process_mc(spec: &PointProcessSpec, l: &[usize], n: usize, mc: McConfig) -> Result<ComplexEstimate> {
    let half = spec.with_phi(0.5)?;
    half.check_degree(l)?;
    let monomials: Vec<Complex64> = half.nu.iter().map(|a| a.monomial(l)).collect();
    let pick = half.atom_index();
    let killing = half.killing();
    let parts = run_workers(n, mc, |rng, count| {
        let mut acc = ComplexAccumulator::default();
        for _ in 0..count {
            let a = sample_product(rng, &killing, &pick, &monomials);
            let b = sample_product(rng, &killing, &pick, &monomials);
            acc.push(a * b);
        }
        acc
    });
    Ok(merge_complex(&parts))
}

fn abs_power_product(atom: &XiAtom, varphi: &[f64]) -> f64 {
    varphi
        .iter()
        .enumerate()
        .map(|(i, &f)| if f == 0.0 { 1.0 } else { atom.xi[i + 1].norm().powf(f) })
        .product()
}

fn check_varphi(spec: &PointProcessSpec, varphi: &[f64]) -> Result<()> {
    if varphi.len() + 1 != spec.q() {
        return Err(Error::Shape(format!("varphi has {} entries, expected q - 1", varphi.len())));
    }
    if varphi.iter().any(|&f| !(f.is_finite() && f >= 0.0)) {
        return Err(Error::Range("varphi entries must be >= 0".into()));
    }
    Ok(())
}

/// Joint Laplace transform of `(-log|Y[k]|)_k` at `varphi`:
/// `(1 + alpha/(1-alpha) sum_atoms w (1 - prod_k |xi[k]|^{varphi_k}))^{-phi}`.
pub fn log_laplace(spec: &PointProcessSpec, varphi: &[f64]) -> Result<f64> {
    check_varphi(spec, varphi)?;
    let mean: f64 = spec.nu.iter().map(|a| a.weight * (1.0 - abs_power_product(a, varphi))).sum();
    Ok((1.0 + spec.alpha / (1.0 - spec.alpha) * mean).powf(-spec.phi))
}

/// Monte Carlo of `E[prod_k |Y[k]|^{varphi_k}]`.
pub fn log_laplace_mc(spec: &PointProcessSpec, varphi: &[f64], n: usize, mc: McConfig) -> Result<RealEstimate> {
    check_varphi(spec, varphi)?;
    let factors: Vec<f64> = spec.nu.iter().map(|a| abs_power_product(a, varphi)).collect();
    let pick = spec.atom_index();
    let killing = spec.killing();
    let parts = run_workers(n, mc, |rng, count| {
        let mut acc = RealAccumulator::default();
        for _ in 0..count {
            let t = killing.sample(rng);
            acc.push((0..t).map(|_| factors[pick.sample(rng)]).product());
        }
        acc
    });
    Ok(merge_real(&parts))
}
