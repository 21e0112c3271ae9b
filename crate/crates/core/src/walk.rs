//! Increment laws on `V_{q,d}`, their eigenvalues `rho_r = E[theta^{V.r}]`,
//! the circulant transition kernel, walk simulation with killing, and the
//! continuous-time eigenvalue forms.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::combinatorics::binomial;
use crate::error::{Error, Result};
use crate::krawtchouk::KrawtchoukTable;
use crate::mc::{run_workers, McConfig};
use crate::zqd::{dft, ComplexLattice, Direction, Lattice, MultiIndex, RootTable};

const PMF_TOL: f64 = 1e-12;
/// Kernel entries in `(-CLAMP_SILENT, 0)` are roundoff and clamped quietly.
const CLAMP_SILENT: f64 = 1e-12;
/// Kernel entries below `-KERNEL_ERROR` mean `rho` is not a moment sequence.
const KERNEL_ERROR: f64 = 1e-8;
const IMAG_TOL: f64 = 1e-10;

/// One component of a de Finetti mixture: entries of `V` are i.i.d. `p`
/// given that this component was drawn (with probability `weight`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub p: Vec<f64>,
}

/// Law of the increment `V` of the walk `X_{t+1} = X_t + V_t mod q`.
///
/// JSON form is tagged by `"variant"`:
///
/// ```json
/// {"variant": "uniform"}
/// {"variant": "deterministic", "v": [1, 1]}
/// {"variant": "product_iid", "p": [0.5, 0.25, 0.25]}
/// {"variant": "de_finetti_mixture", "components": [{"weight": 1.0, "p": [0.75, 0.25]}]}
/// {"variant": "sparse_exchangeable", "c": 1, "joint": [0.5, 0.5]}
/// {"variant": "lazy", "q": 3, "atoms": [{"weight": 1.0, "gamma": 0.5}]}
/// ```
///
/// `lazy` is read-only shorthand for the lazy-walk mixture and is stored as a
/// `de_finetti_mixture`. The `joint` of a sparse law is indexed by rank on
/// `Z_q^c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", try_from = "LawDoc")]
pub enum IncrementLaw {
    Uniform,
    Deterministic { v: Vec<usize> },
    ProductIid { p: Vec<f64> },
    DeFinettiMixture { components: Vec<MixtureComponent> },
    SparseExchangeable { c: usize, joint: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct LazyAtom {
    weight: f64,
    gamma: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
enum LawDoc {
    Uniform {},
    Deterministic { v: Vec<usize> },
    ProductIid { p: Vec<f64> },
    DeFinettiMixture { components: Vec<MixtureComponent> },
    SparseExchangeable { c: usize, joint: Vec<f64> },
    Lazy { q: usize, atoms: Vec<LazyAtom> },
}

impl TryFrom<LawDoc> for IncrementLaw {
    type Error = Error;

    fn try_from(doc: LawDoc) -> Result<Self> {
        let law = match doc {
            LawDoc::Uniform {} => IncrementLaw::Uniform,
            LawDoc::Deterministic { v } => IncrementLaw::Deterministic { v },
            LawDoc::ProductIid { p } => IncrementLaw::ProductIid { p },
            LawDoc::DeFinettiMixture { components } => IncrementLaw::DeFinettiMixture { components },
            LawDoc::SparseExchangeable { c, joint } => IncrementLaw::SparseExchangeable { c, joint },
            LawDoc::Lazy { q, atoms } => {
                let atoms: Vec<(f64, f64)> = atoms.iter().map(|a| (a.weight, a.gamma)).collect();
                return IncrementLaw::lazy(q, &atoms);
            }
        };
        law.check_intrinsic()?;
        Ok(law)
    }
}

fn check_pmf(p: &[f64], what: &str) -> Result<()> {
    if p.len() < 2 {
        return Err(Error::InvalidLaw(format!("{what}: pmf needs at least 2 entries")));
    }
    if p.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::InvalidLaw(format!("{what}: pmf has a negative or non-finite entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PMF_TOL {
        return Err(Error::InvalidLaw(format!("{what}: pmf sums to {s}, not 1")));
    }
    Ok(())
}

/// `xi[k] = sum_j theta^{kj} p[j]`, `k = 0..q`.
pub fn xi_transform(p: &[f64], roots: &RootTable) -> Vec<Complex64> {
    let q = p.len();
    (0..q)
        .map(|k| p.iter().enumerate().map(|(j, &pj)| roots.pow(k * j) * pj).sum())
        .collect()
}

impl IncrementLaw {
    /// Lazy-walk mixture: given `gamma`, `p[0] = 1 - gamma` and
    /// `p[1] = p[q-1] = gamma / 2` (for `q = 2` both land on `p[1] = gamma`),
    /// with `gamma` drawn from the weighted atoms.
    pub fn lazy(q: usize, atoms: &[(f64, f64)]) -> Result<Self> {
        if q < 2 {
            return Err(Error::Range(format!("lazy walk needs q >= 2, got {q}")));
        }
        if atoms.is_empty() {
            return Err(Error::InvalidLaw("lazy walk needs at least one gamma atom".into()));
        }
        let components = atoms
            .iter()
            .map(|&(weight, gamma)| {
                if !(0.0..=1.0).contains(&gamma) {
                    return Err(Error::InvalidLaw(format!("lazy gamma {gamma} not in [0, 1]")));
                }
                let mut p = vec![0.0; q];
                p[0] = 1.0 - gamma;
                p[1] += gamma / 2.0;
                p[q - 1] += gamma / 2.0;
                Ok(MixtureComponent { weight, p })
            })
            .collect::<Result<Vec<_>>>()?;
        let law = IncrementLaw::DeFinettiMixture { components };
        law.check_intrinsic()?;
        Ok(law)
    }

    /// Checks that do not need `(q, d)`.
    fn check_intrinsic(&self) -> Result<()> {
        match self {
            IncrementLaw::Uniform => Ok(()),
            IncrementLaw::Deterministic { v } => {
                if v.is_empty() {
                    Err(Error::InvalidLaw("deterministic step is empty".into()))
                } else {
                    Ok(())
                }
            }
            IncrementLaw::ProductIid { p } => check_pmf(p, "product_iid"),
            IncrementLaw::DeFinettiMixture { components } => {
                if components.is_empty() {
                    return Err(Error::InvalidLaw("mixture has no components".into()));
                }
                let q = components[0].p.len();
                let mut total = 0.0;
                for (i, comp) in components.iter().enumerate() {
                    if !(comp.weight.is_finite() && comp.weight > 0.0) {
                        return Err(Error::InvalidLaw(format!("component {i} weight must be > 0")));
                    }
                    if comp.p.len() != q {
                        return Err(Error::InvalidLaw("mixture components have different q".into()));
                    }
                    check_pmf(&comp.p, &format!("component {i}"))?;
                    total += comp.weight;
                }
                if (total - 1.0).abs() > PMF_TOL {
                    return Err(Error::InvalidLaw(format!("mixture weights sum to {total}")));
                }
                Ok(())
            }
            IncrementLaw::SparseExchangeable { c, joint } => {
                if *c < 1 {
                    return Err(Error::InvalidLaw("sparse law needs c >= 1".into()));
                }
                check_pmf(joint, "sparse joint")
            }
        }
    }

    /// Full validation against a state space. `q^d` may exceed `usize`.
    pub fn validate(&self, q: usize, d: usize) -> Result<()> {
        if q < 2 {
            return Err(Error::Range(format!("modulus q must be >= 2, got {q}")));
        }
        if d < 1 {
            return Err(Error::Range(format!("dimension d must be >= 1, got {d}")));
        }
        self.check_intrinsic()?;
        let wrong_q = |len: usize| Error::InvalidLaw(format!("pmf has {len} entries but q = {q}"));
        match self {
            IncrementLaw::Uniform => Ok(()),
            IncrementLaw::Deterministic { v } => {
                if v.len() != d {
                    return Err(Error::Shape(format!("step has {} entries but d = {d}", v.len())));
                }
                MultiIndex::new(v.clone(), q).map(|_| ())
            }
            IncrementLaw::ProductIid { p } => {
                if p.len() != q {
                    return Err(wrong_q(p.len()));
                }
                Ok(())
            }
            IncrementLaw::DeFinettiMixture { components } => {
                if components[0].p.len() != q {
                    return Err(wrong_q(components[0].p.len()));
                }
                Ok(())
            }
            IncrementLaw::SparseExchangeable { c, joint } => {
                if *c > d {
                    return Err(Error::InvalidLaw(format!("sparse law needs c <= d, got c={c}, d={d}")));
                }
                let inner = Lattice::new(q, *c)?;
                if joint.len() != inner.size() {
                    return Err(Error::InvalidLaw(format!(
                        "sparse joint has {} entries, expected q^c = {}",
                        joint.len(),
                        inner.size()
                    )));
                }
                // Exchangeable: invariant under swapping neighbouring coordinates.
                for u in 0..inner.size() {
                    let digits = inner.digits(u);
                    for k in 0..c.saturating_sub(1) {
                        let mut swapped = digits.clone();
                        swapped.swap(k, k + 1);
                        let v = MultiIndex::new(swapped, q)?.rank();
                        if (joint[u] - joint[v]).abs() > PMF_TOL {
                            return Err(Error::InvalidLaw("sparse joint is not exchangeable".into()));
                        }
                    }
                }
                Ok(())
            }
        }
    }

    /// Jump symmetry `P(V = v) = P(V = -v)`, checked per mixture component.
    pub fn has_symmetric_jumps(&self, q: usize) -> bool {
        let sym = |p: &[f64]| (0..q).all(|j| (p[j] - p[(q - j) % q]).abs() <= 1e-14);
        match self {
            IncrementLaw::Uniform => true,
            IncrementLaw::Deterministic { v } => v.iter().all(|&e| (2 * e) % q == 0),
            IncrementLaw::ProductIid { p } => sym(p),
            IncrementLaw::DeFinettiMixture { components } => components.iter().all(|c| sym(&c.p)),
            IncrementLaw::SparseExchangeable { c, joint } => {
                let inner = match Lattice::new(q, *c) {
                    Ok(l) => l,
                    Err(_) => return false,
                };
                (0..inner.size()).all(|u| (joint[u] - joint[inner.neg_rank(u)]).abs() <= 1e-14)
            }
        }
    }

    /// Whether the coordinates of `V` are exchangeable.
    pub fn is_exchangeable(&self) -> bool {
        match self {
            IncrementLaw::Deterministic { v } => v.iter().all(|&e| e == v[0]),
            _ => true,
        }
    }

    /// `rho_r` at a single frequency by the closed form of the variant.
    pub fn rho_at(&self, q: usize, d: usize, r: &[usize]) -> Result<Complex64> {
        self.validate(q, d)?;
        if r.len() != d {
            return Err(Error::Shape(format!("frequency has {} entries, d = {d}", r.len())));
        }
        let roots = RootTable::new(q);
        Ok(match self {
            IncrementLaw::Uniform => {
                if r.iter().all(|&e| e == 0) {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }
            IncrementLaw::Deterministic { v } => {
                roots.pow(v.iter().zip(r).map(|(a, b)| a * b).sum::<usize>())
            }
            IncrementLaw::ProductIid { p } => {
                let xi = xi_transform(p, &roots);
                r.iter().map(|&k| xi[k]).product()
            }
            IncrementLaw::DeFinettiMixture { components } => components
                .iter()
                .map(|comp| {
                    let xi = xi_transform(&comp.p, &roots);
                    comp.weight * r.iter().map(|&k| xi[k]).product::<Complex64>()
                })
                .sum(),
            IncrementLaw::SparseExchangeable { c, joint } => {
                let support: Vec<usize> = r.iter().copied().filter(|&e| e != 0).collect();
                if support.len() > *c {
                    return Ok(Complex64::new(0.0, 0.0));
                }
                let inner = Lattice::new(q, *c)?;
                let mut t = support.clone();
                t.resize(*c, 0);
                let phi: Complex64 = (0..inner.size())
                    .map(|u| roots.pow(inner.dot_mod(u, MultiIndex::new(t.clone(), q).unwrap().rank())) * joint[u])
                    .sum();
                phi * sparse_factor(d, *c, support.len())
            }
        })
    }

    /// The full eigenvalue array.
    pub fn spectrum(&self, q: usize, d: usize) -> Result<Spectrum> {
        self.validate(q, d)?;
        let lattice = Lattice::new(q, d)?;
        let roots = RootTable::new(q);
        let product_of = |xi: &[Complex64], r: usize| -> Complex64 {
            let mut r = r;
            let mut acc = Complex64::new(1.0, 0.0);
            for _ in 0..d {
                acc *= xi[r % q];
                r /= q;
            }
            acc
        };
        let rho = match self {
            IncrementLaw::Uniform => ComplexLattice::from_fn(lattice, |r| {
                Complex64::new(if r == 0 { 1.0 } else { 0.0 }, 0.0)
            }),
            IncrementLaw::Deterministic { v } => {
                let v_rank = MultiIndex::new(v.clone(), q)?.rank();
                ComplexLattice::from_fn(lattice, |r| roots.pow(lattice.dot_mod(v_rank, r)))
            }
            IncrementLaw::ProductIid { p } => {
                let xi = xi_transform(p, &roots);
                ComplexLattice::from_fn(lattice, |r| product_of(&xi, r))
            }
            IncrementLaw::DeFinettiMixture { components } => {
                let xis: Vec<(f64, Vec<Complex64>)> = components
                    .iter()
                    .map(|c| (c.weight, xi_transform(&c.p, &roots)))
                    .collect();
                ComplexLattice::from_fn(lattice, |r| {
                    xis.iter().map(|(w, xi)| product_of(xi, r) * *w).sum()
                })
            }
            IncrementLaw::SparseExchangeable { c, joint } => {
                let inner = Lattice::new(q, *c)?;
                // phi(t) = E[theta^{U.t}] over the joint, for every t in Z_q^c.
                let joint_lattice = ComplexLattice::from_real(inner, joint)?;
                let scale = (inner.size() as f64).sqrt();
                let phi = dft(&joint_lattice, Direction::Inverse).map(|z| z * scale);
                let mut digits = vec![0; d];
                ComplexLattice::from_fn(lattice, |r| {
                    lattice.digits_into(r, &mut digits);
                    let mut t_rank = 0;
                    let mut place = 1;
                    let mut s = 0;
                    for &e in digits.iter().filter(|&&e| e != 0) {
                        s += 1;
                        if s > *c {
                            return Complex64::new(0.0, 0.0);
                        }
                        t_rank += e * place;
                        place *= q;
                    }
                    phi.values()[t_rank] * sparse_factor(d, *c, s)
                })
            }
        };
        Spectrum::new(rho)
    }

    /// Probability mass function of `V` over `V_{q,d}` in rank order.
    pub fn pmf(&self, q: usize, d: usize) -> Result<Vec<f64>> {
        let kernel = transition_matrix(&self.spectrum(q, d)?)?;
        Ok(kernel.kernel().to_vec())
    }

    pub fn sampler(&self, q: usize, d: usize) -> Result<LawSampler> {
        self.validate(q, d)?;
        let weighted = |w: &[f64]| {
            WeightedIndex::new(w.iter().copied())
                .map_err(|e| Error::InvalidLaw(format!("cannot sample pmf: {e}")))
        };
        let kind = match self {
            IncrementLaw::Uniform => SamplerKind::Uniform,
            IncrementLaw::Deterministic { v } => SamplerKind::Deterministic(v.clone()),
            IncrementLaw::ProductIid { p } => SamplerKind::Product(weighted(p)?),
            IncrementLaw::DeFinettiMixture { components } => SamplerKind::Mixture {
                pick: weighted(&components.iter().map(|c| c.weight).collect::<Vec<_>>())?,
                coords: components
                    .iter()
                    .map(|c| weighted(&c.p))
                    .collect::<Result<Vec<_>>>()?,
            },
            IncrementLaw::SparseExchangeable { c, joint } => SamplerKind::Sparse {
                c: *c,
                inner: Lattice::new(q, *c)?,
                joint: weighted(joint)?,
            },
        };
        Ok(LawSampler {
            lattice: Lattice::new(q, d)?,
            kind,
        })
    }

    /// Built-in law families used by the verification suites: every variant,
    /// with fixed non-trivial parameters.
    pub fn builtin_families(q: usize, d: usize) -> Vec<(String, IncrementLaw)> {
        let ramp: Vec<f64> = {
            let total = (q * (q + 1) / 2) as f64;
            (0..q).map(|j| (j + 1) as f64 / total).collect()
        };
        let mut out = vec![
            ("uniform".to_string(), IncrementLaw::Uniform),
            ("deterministic".to_string(), IncrementLaw::Deterministic { v: vec![1; d] }),
            ("product_iid".to_string(), IncrementLaw::ProductIid { p: ramp.clone() }),
            (
                "lazy".to_string(),
                IncrementLaw::lazy(q, &[(0.3, 0.2), (0.7, 0.9)]).expect("valid lazy atoms"),
            ),
        ];
        let flat = vec![1.0 / q as f64; q];
        out.push((
            "de_finetti_mixture".to_string(),
            IncrementLaw::DeFinettiMixture {
                components: vec![
                    MixtureComponent { weight: 0.25, p: ramp.clone() },
                    MixtureComponent { weight: 0.75, p: {
                        let mut p: Vec<f64> = flat.iter().map(|v| v * 0.5).collect();
                        p[0] += 0.5;
                        p
                    } },
                ],
            },
        ));
        for c in 1..=d.min(2) {
            let inner = Lattice::new(q, c).expect("q^c <= q^d");
            let joint: Vec<f64> = (0..inner.size())
                .map(|u| inner.digits(u).iter().map(|&j| ramp[j]).product())
                .collect();
            out.push((format!("sparse_c{c}"), IncrementLaw::SparseExchangeable { c, joint }));
        }
        out
    }
}

/// `C(d - s, c - s) / C(d, c)`: chance that a uniform `c`-subset covers a
/// fixed set of `s` coordinates.
fn sparse_factor(d: usize, c: usize, s: usize) -> f64 {
    binomial(d - s, c - s) / binomial(d, c)
}

enum SamplerKind {
    Uniform,
    Deterministic(Vec<usize>),
    Product(WeightedIndex<f64>),
    Mixture {
        pick: WeightedIndex<f64>,
        coords: Vec<WeightedIndex<f64>>,
    },
    Sparse {
        c: usize,
        inner: Lattice,
        joint: WeightedIndex<f64>,
    },
}

/// Precomputed sampler for an increment law on a fixed lattice.
pub struct LawSampler {
    lattice: Lattice,
    kind: SamplerKind,
}

impl LawSampler {
    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [usize]) {
        let q = self.lattice.q();
        match &self.kind {
            SamplerKind::Uniform => out.iter_mut().for_each(|e| *e = rng.random_range(0..q)),
            SamplerKind::Deterministic(v) => out.copy_from_slice(v),
            SamplerKind::Product(p) => out.iter_mut().for_each(|e| *e = p.sample(rng)),
            SamplerKind::Mixture { pick, coords } => {
                let p = &coords[pick.sample(rng)];
                out.iter_mut().for_each(|e| *e = p.sample(rng));
            }
            SamplerKind::Sparse { c, inner, joint } => {
                out.iter_mut().for_each(|e| *e = rng.random_range(0..q));
                let mut positions = rand::seq::index::sample(rng, out.len(), *c).into_vec();
                positions.sort_unstable();
                let u = inner.digits(joint.sample(rng));
                for (pos, val) in positions.into_iter().zip(u) {
                    out[pos] = val;
                }
            }
        }
    }

    pub fn sample_rank<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut [usize]) -> usize {
        self.sample_into(rng, scratch);
        scratch.iter().rev().fold(0, |acc, &e| acc * self.lattice.q() + e)
    }
}

/// Eigenvalues `rho_r` of a walk, with reality and boundedness flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    rho: ComplexLattice,
    is_real: bool,
    is_unit_bounded: bool,
}

impl Spectrum {
    /// Wraps raw eigenvalues; `rho_0` must be 1.
    pub fn new(rho: ComplexLattice) -> Result<Self> {
        let r0 = rho.values()[0];
        if (r0 - Complex64::new(1.0, 0.0)).norm() > 1e-10 {
            return Err(Error::Contract(format!("rho_0 = {r0}, expected 1")));
        }
        let is_real = rho.max_imag() < IMAG_TOL;
        let is_unit_bounded = rho.values().iter().all(|v| v.norm() <= 1.0 + 1e-12);
        Ok(Self {
            rho,
            is_real,
            is_unit_bounded,
        })
    }

    pub fn rho(&self) -> &ComplexLattice {
        &self.rho
    }

    pub fn values(&self) -> &[Complex64] {
        self.rho.values()
    }

    pub fn lattice(&self) -> Lattice {
        self.rho.lattice()
    }

    pub fn is_real(&self) -> bool {
        self.is_real
    }

    pub fn is_unit_bounded(&self) -> bool {
        self.is_unit_bounded
    }

    pub fn nonzero_count(&self, tol: f64) -> usize {
        self.values().iter().filter(|v| v.norm() > tol).count()
    }
}

/// Transition kernel `P_{xy} = P(V = y - x)`, stored as the single vector
/// `k(z) = P(V = z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CirculantKernel {
    lattice: Lattice,
    kernel: Vec<f64>,
    raw_min: f64,
    clamped: usize,
}

/// Largest state space for which dense matrices are materialized.
pub const DENSE_LIMIT: usize = 4096;

/// Rebuilds `P` from its eigenvalues: `P_{xy} = q^{-d} sum_r rho_r theta^{(x-y).r}`.
pub fn transition_matrix(spec: &Spectrum) -> Result<CirculantKernel> {
    let lattice = spec.lattice();
    let scale = (lattice.size() as f64).sqrt().recip();
    let k = dft(spec.rho(), Direction::Forward).map(|z| z * scale);
    let imag = k.max_imag();
    if imag > IMAG_TOL {
        return Err(Error::NotTransitionKernel(format!(
            "kernel has imaginary residue {imag:e}"
        )));
    }
    let raw: Vec<f64> = k.values().iter().map(|z| z.re).collect();
    let raw_min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    if raw_min < -KERNEL_ERROR {
        return Err(Error::NotTransitionKernel(format!(
            "kernel entry {raw_min:e} is negative"
        )));
    }
    if raw_min < -CLAMP_SILENT {
        log::warn!("clamping kernel entries down to {raw_min:e} to zero");
    }
    let clamped = raw.iter().filter(|&&v| v < 0.0).count();
    let kernel = raw.into_iter().map(|v| v.max(0.0)).collect();
    Ok(CirculantKernel {
        lattice,
        kernel,
        raw_min,
        clamped,
    })
}

impl CirculantKernel {
    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    /// `k(z) = P(V = z)`.
    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    /// Smallest entry before clamping.
    pub fn raw_min(&self) -> f64 {
        self.raw_min
    }

    pub fn clamped_count(&self) -> usize {
        self.clamped
    }

    #[inline]
    pub fn entry(&self, x: usize, y: usize) -> f64 {
        self.kernel[self.lattice.sub_rank(y, x)]
    }

    pub fn row(&self, x: usize) -> Vec<f64> {
        (0..self.lattice.size()).map(|y| self.entry(x, y)).collect()
    }

    /// Every row is a permutation of the kernel vector, so all row and column
    /// sums equal this value.
    pub fn row_sum(&self) -> f64 {
        self.kernel.iter().sum()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.lattice.size())
            .all(|z| (self.kernel[z] - self.kernel[self.lattice.neg_rank(z)]).abs() <= tol)
    }

    pub fn to_dense(&self) -> Result<nalgebra::DMatrix<f64>> {
        let n = self.lattice.size();
        if n > DENSE_LIMIT {
            return Err(Error::Range(format!("{n} states exceed the dense limit {DENSE_LIMIT}")));
        }
        Ok(nalgebra::DMatrix::from_fn(n, n, |x, y| self.entry(x, y)))
    }

    /// `(P v)_x = sum_y P_{xy} v_y`.
    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = self.lattice.size();
        (0..n)
            .map(|x| (0..n).map(|y| v[y] * self.entry(x, y)).sum())
            .collect()
    }

    /// `(v^T P)_y = sum_x v_x P_{xy}`.
    pub fn apply_left(&self, v: &[f64]) -> Vec<f64> {
        let n = self.lattice.size();
        (0..n)
            .map(|y| (0..n).map(|x| v[x] * self.entry(x, y)).sum())
            .collect()
    }
}

/// Killing horizon `T` with `P(T = t) = (1-alpha)^phi alpha^t (phi)_t / t!`
/// (geometric when `phi = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KillingLaw {
    alpha: f64,
    phi: f64,
}

impl KillingLaw {
    pub fn new(alpha: f64, phi: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::Range(format!("alpha must lie in [0, 1), got {alpha}")));
        }
        if !(phi.is_finite() && phi > 0.0) {
            return Err(Error::Range(format!("phi must be > 0, got {phi}")));
        }
        Ok(Self { alpha, phi })
    }

    pub fn geometric(alpha: f64) -> Result<Self> {
        Self::new(alpha, 1.0)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// `P(T = t)` for `t = 0, 1, ...` until the cumulative mass reaches `mass`.
    pub fn truncated_pmf(&self, mass: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let mut p = (1.0 - self.alpha).powf(self.phi);
        let mut cdf = 0.0;
        let mut t = 0usize;
        loop {
            out.push(p);
            cdf += p;
            if cdf >= mass || self.alpha == 0.0 || p < 1e-300 {
                break;
            }
            p *= self.alpha * (self.phi + t as f64) / (t + 1) as f64;
            t += 1;
        }
        out
    }

    /// `E[s^T] = ((1 - alpha) / (1 - alpha s))^phi`, principal branch.
    pub fn pgf(&self, s: Complex64) -> Complex64 {
        let base = Complex64::new(1.0, 0.0) + (Complex64::new(1.0, 0.0) - s) * (self.alpha / (1.0 - self.alpha));
        base.powf(-self.phi)
    }

    /// Draws `T` by inversion of the cumulative distribution.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.alpha == 0.0 {
            return 0;
        }
        let u: f64 = rng.random();
        let mut p = (1.0 - self.alpha).powf(self.phi);
        let mut cdf = p;
        let mut t = 0usize;
        while u >= cdf && p > 1e-300 {
            p *= self.alpha * (self.phi + t as f64) / (t + 1) as f64;
            t += 1;
            cdf += p;
        }
        t
    }
}

/// Path `X_0 = x0, X_1, ..., X_steps`.
pub fn simulate_walk(
    law: &IncrementLaw,
    x0: &MultiIndex,
    steps: usize,
    seed: u64,
) -> Result<Vec<MultiIndex>> {
    let (q, d) = (x0.q(), x0.d());
    let sampler = law.sampler(q, d)?;
    let lattice = sampler.lattice();
    let mut rng = crate::mc::worker_rng(seed, 0);
    let mut scratch = vec![0; d];
    let mut x = x0.rank();
    let mut path = Vec::with_capacity(steps + 1);
    path.push(x0.clone());
    for _ in 0..steps {
        x = lattice.add_rank(x, sampler.sample_rank(&mut rng, &mut scratch));
        path.push(lattice.unrank(x)?);
    }
    Ok(path)
}

/// Endpoint `X_T` of one killed walk from rank `x0`.
pub fn killed_endpoint<R: Rng + ?Sized>(
    sampler: &LawSampler,
    x0: usize,
    killing: &KillingLaw,
    rng: &mut R,
    scratch: &mut [usize],
) -> usize {
    let lattice = sampler.lattice();
    let t = killing.sample(rng);
    let mut x = x0;
    for _ in 0..t {
        x = lattice.add_rank(x, sampler.sample_rank(rng, scratch));
    }
    x
}

pub fn simulate_killed(
    law: &IncrementLaw,
    x0: &MultiIndex,
    killing: &KillingLaw,
    seed: u64,
) -> Result<MultiIndex> {
    let sampler = law.sampler(x0.q(), x0.d())?;
    let mut rng = crate::mc::worker_rng(seed, 0);
    let mut scratch = vec![0; x0.d()];
    let end = killed_endpoint(&sampler, x0.rank(), killing, &mut rng, &mut scratch);
    sampler.lattice().unrank(end)
}

/// Empirical one-step law of `x0 + V` from `n` samples.
pub fn empirical_step(law: &IncrementLaw, x0: &MultiIndex, n: usize, mc: McConfig) -> Result<Vec<f64>> {
    let sampler = law.sampler(x0.q(), x0.d())?;
    let lattice = sampler.lattice();
    let parts = run_workers(n, mc, |rng, count| {
        let mut hist = vec![0u64; lattice.size()];
        let mut scratch = vec![0; lattice.d()];
        for _ in 0..count {
            hist[lattice.add_rank(x0.rank(), sampler.sample_rank(rng, &mut scratch))] += 1;
        }
        hist
    });
    Ok(normalize_histograms(&parts, lattice.size(), n))
}

pub(crate) fn normalize_histograms(parts: &[Vec<u64>], size: usize, n: usize) -> Vec<f64> {
    let mut total = vec![0u64; size];
    for part in parts {
        for (t, h) in total.iter_mut().zip(part) {
            *t += h;
        }
    }
    total.iter().map(|&c| c as f64 / n.max(1) as f64).collect()
}

/// A weighted point mass of a finite measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom<P> {
    pub point: P,
    pub weight: f64,
}

/// Finite atomic measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicMeasure<P> {
    atoms: Vec<Atom<P>>,
}

impl<P> AtomicMeasure<P> {
    pub fn new(atoms: Vec<Atom<P>>) -> Result<Self> {
        if atoms.iter().any(|a| !(a.weight.is_finite() && a.weight >= 0.0)) {
            return Err(Error::InvalidMeasure("atom weights must be finite and >= 0".into()));
        }
        Ok(Self { atoms })
    }

    pub fn from_pairs(pairs: Vec<(P, f64)>) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .map(|(point, weight)| Atom { point, weight })
                .collect(),
        )
    }

    pub fn atoms(&self) -> &[Atom<P>] {
        &self.atoms
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }
}

/// Exponents `psi_r = sum_atoms w (e^{2 pi i xi.r} - 1) / |xi|` for atoms
/// `xi` in `[0,1)^d`, with `|xi| = sum_k xi[k]`. Then `rho_r(tau) = e^{tau psi_r}`.
pub fn ct_exponents(beta: &AtomicMeasure<Vec<f64>>, q: usize, d: usize) -> Result<ComplexLattice> {
    let lattice = Lattice::new(q, d)?;
    for atom in beta.atoms() {
        if atom.point.len() != d {
            return Err(Error::Shape(format!("atom has {} entries, d = {d}", atom.point.len())));
        }
        if atom.point.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidMeasure("atom coordinates must lie in [0, 1]".into()));
        }
        if atom.point.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidMeasure("atom with |xi| = 0".into()));
        }
    }
    let mut digits = vec![0; d];
    Ok(ComplexLattice::from_fn(lattice, |r| {
        lattice.digits_into(r, &mut digits);
        beta.atoms()
            .iter()
            .map(|a| {
                let phase: f64 = a.point.iter().zip(&digits).map(|(x, &k)| x * k as f64).sum();
                let norm: f64 = a.point.iter().sum();
                (Complex64::from_polar(1.0, 2.0 * PI * phase) - 1.0) * (a.weight / norm)
            })
            .sum()
    }))
}

pub fn ct_eigenvalues(beta: &AtomicMeasure<Vec<f64>>, q: usize, d: usize, tau: f64) -> Result<Spectrum> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::Range(format!("tau must be >= 0, got {tau}")));
    }
    let psi = ct_exponents(beta, q, d)?;
    Spectrum::new(psi.map(|z| (z * tau).exp()))
}

/// Poisson embedding at unit rate: eigenvalues `exp(-tau (1 - rho_r))`.
pub fn poisson_eigenvalues(spec: &Spectrum, tau: f64) -> Result<Spectrum> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::Range(format!("tau must be >= 0, got {tau}")));
    }
    Spectrum::new(spec.rho().map(|r| ((r - 1.0) * tau).exp()))
}

/// Grouped continuous-time eigenvalues, one per degree index of `table`:
/// `exp{tau sum_atoms c (h_l Q_l(zeta) - 1) / (d - zeta[0])}`, where an atom
/// with `zeta[0] = d` uses 1 in place of the ratio's denominator.
pub fn ct_grouped_eigenvalues(
    gamma: &AtomicMeasure<Vec<usize>>,
    tau: f64,
    table: &KrawtchoukTable,
) -> Result<Vec<Complex64>> {
    let (q, d) = (table.q(), table.d());
    let mut idx = Vec::with_capacity(gamma.atoms().len());
    for atom in gamma.atoms() {
        if atom.point.len() != q || atom.point.iter().sum::<usize>() != d {
            return Err(Error::Shape(format!(
                "count vector {:?} does not have q = {q} entries summing to d = {d}",
                atom.point
            )));
        }
        idx.push(table.count_index(&atom.point).expect("table holds every count vector"));
    }
    Ok((0..table.degrees().len())
        .map(|li| {
            let exponent: Complex64 = gamma
                .atoms()
                .iter()
                .zip(&idx)
                .map(|(a, &mi)| {
                    let denom = (d - a.point[0]).max(1) as f64;
                    (table.value(li, mi) * table.h(li) - 1.0) * (a.weight / denom)
                })
                .sum();
            (exponent * tau).exp()
        })
        .collect())
}
