//! Multivariate Krawtchouk polynomials on the uniform multinomial with the
//! root-of-unity basis.
//!
//! `Q_l(m)` is the coefficient of `w_1^{l[1]} ... w_{q-1}^{l[q-1]}` in
//!
//! ```text
//! prod_{j=0}^{q-1} (1 + sum_{k=1}^{q-1} w_k theta^{kj})^{m[j]}
//! ```
//!
//! for a count vector `m` (length `q`, sum `d`) and a degree index `l`
//! (length `q - 1`). Equivalently `Q_l(m(x)) = sum_{r of type l} theta^{x.r}`,
//! which is why they diagonalize every exchangeable walk on count vectors.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::combinatorics::{compositions, bounded_vectors, multinomial_exact, ln_multinomial, uniform_multinomial_pmf};
use crate::error::{Error, Result};
use crate::walk::{xi_transform, IncrementLaw};
use crate::zqd::{Lattice, RootTable};

/// Largest number of count vectors a table will enumerate.
pub const MAX_COUNT_VECTORS: usize = 100_000;

/// All count vectors of length `q` summing to `d`, in table order.
pub fn count_vectors(q: usize, d: usize) -> Vec<Vec<usize>> {
    compositions(d, q)
}

/// `h_l^{-1} = d! / ((d - |l|)! prod_k l[k]!)`, exact when it fits in `u128`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleConstant {
    pub inverse_exact: Option<u128>,
    pub ln_inverse: f64,
}

impl ScaleConstant {
    pub fn inverse(&self) -> f64 {
        match self.inverse_exact {
            Some(v) => v as f64,
            None => self.ln_inverse.exp(),
        }
    }

    pub fn h(&self) -> f64 {
        match self.inverse_exact {
            Some(v) => 1.0 / v as f64,
            None => (-self.ln_inverse).exp(),
        }
    }
}

pub fn scale_constant(d: usize, l: &[usize]) -> Result<ScaleConstant> {
    let total: usize = l.iter().sum();
    if total > d {
        return Err(Error::Range(format!("|l| = {total} exceeds d = {d}")));
    }
    let mut parts = Vec::with_capacity(l.len() + 1);
    parts.push(d - total);
    parts.extend_from_slice(l);
    Ok(ScaleConstant {
        inverse_exact: multinomial_exact(&parts),
        ln_inverse: ln_multinomial(&parts),
    })
}

/// Result of a single polynomial evaluation. `beyond_degree` is set when
/// `|l| > d`, where the polynomial vanishes identically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrawtchoukValue {
    pub value: Complex64,
    pub beyond_degree: bool,
}

fn check_count_vector(m: &[usize]) -> Result<(usize, usize)> {
    if m.len() < 2 {
        return Err(Error::Shape("count vector needs q >= 2 entries".into()));
    }
    Ok((m.len(), m.iter().sum()))
}

/// Coefficient extraction by dynamic programming over the box of
/// multidegrees `a <= l` (componentwise).
pub fn krawtchouk_eval(m: &[usize], l: &[usize]) -> Result<KrawtchoukValue> {
    let (q, d) = check_count_vector(m)?;
    if l.len() != q - 1 {
        return Err(Error::Shape(format!("degree index has {} entries, expected {}", l.len(), q - 1)));
    }
    if l.iter().sum::<usize>() > d {
        return Ok(KrawtchoukValue {
            value: Complex64::new(0.0, 0.0),
            beyond_degree: true,
        });
    }
    let roots = RootTable::new(q);
    // Mixed-radix layout of the box prod (l[k] + 1).
    let dims: Vec<usize> = l.iter().map(|&v| v + 1).collect();
    let size: usize = dims.iter().product();
    let mut strides = vec![1usize; q - 1];
    for k in 1..q - 1 {
        strides[k] = strides[k - 1] * dims[k - 1];
    }
    let mut poly = vec![Complex64::new(0.0, 0.0); size];
    poly[0] = Complex64::new(1.0, 0.0);
    let mut digits = vec![0usize; q - 1];
    for (j, &mj) in m.iter().enumerate() {
        let coeffs: Vec<Complex64> = (1..q).map(|k| roots.pow(k * j)).collect();
        for _ in 0..mj {
            // Descending index order keeps lower-degree entries unmodified.
            for idx in (0..size).rev() {
                let mut rest = idx;
                for k in 0..q - 1 {
                    digits[k] = rest % dims[k];
                    rest /= dims[k];
                }
                let mut acc = poly[idx];
                for k in 0..q - 1 {
                    if digits[k] > 0 {
                        acc += coeffs[k] * poly[idx - strides[k]];
                    }
                }
                poly[idx] = acc;
            }
        }
    }
    Ok(KrawtchoukValue {
        value: poly[size - 1],
        beyond_degree: false,
    })
}

/// Exact binary case: coefficient of `w^l` in `(1 + w)^{m0} (1 - w)^{m1}` by
/// the same recurrence in `i128`. `None` on overflow.
pub fn krawtchouk_exact_q2(m0: usize, m1: usize, l: usize) -> Option<i128> {
    let d = m0 + m1;
    if l > d {
        return Some(0);
    }
    let mut poly = vec![0i128; l + 1];
    poly[0] = 1;
    for sign in std::iter::repeat_n(1i128, m0).chain(std::iter::repeat_n(-1i128, m1)) {
        for a in (1..=l).rev() {
            poly[a] = poly[a].checked_add(sign.checked_mul(poly[a - 1])?)?;
        }
    }
    Some(poly[l])
}

/// `Q_l(m)` for every count vector `m` with `|m| = d` and every degree index
/// `l` with `|l| <= max_degree`, plus the scale constants `h_l`.
#[derive(Debug, Clone)]
pub struct KrawtchoukTable {
    q: usize,
    d: usize,
    max_degree: usize,
    degrees: Vec<Vec<usize>>,
    counts: Vec<Vec<usize>>,
    degree_lookup: HashMap<Vec<usize>, usize>,
    count_lookup: HashMap<Vec<usize>, usize>,
    values: Vec<Complex64>,
    scales: Vec<ScaleConstant>,
}

impl KrawtchoukTable {
    pub fn new(q: usize, d: usize) -> Result<Self> {
        Self::with_max_degree(q, d, d)
    }

    pub fn with_max_degree(q: usize, d: usize, max_degree: usize) -> Result<Self> {
        Lattice::new(q, 1)?;
        if d < 1 {
            return Err(Error::Range("d must be >= 1".into()));
        }
        let max_degree = max_degree.min(d);
        let counts = count_vectors(q, d);
        if counts.len() > MAX_COUNT_VECTORS {
            return Err(Error::Range(format!(
                "{} count vectors exceed the enumeration limit {MAX_COUNT_VECTORS}",
                counts.len()
            )));
        }
        let degrees = bounded_vectors(q - 1, max_degree);
        let degree_lookup: HashMap<Vec<usize>, usize> =
            degrees.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        let count_lookup: HashMap<Vec<usize>, usize> =
            counts.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        // down[i][k] = index of degrees[i] - e_k.
        let down: Vec<Vec<Option<usize>>> = degrees
            .iter()
            .map(|a| {
                (0..q - 1)
                    .map(|k| {
                        (a[k] > 0).then(|| {
                            let mut b = a.clone();
                            b[k] -= 1;
                            degree_lookup[&b]
                        })
                    })
                    .collect()
            })
            .collect();
        let roots = RootTable::new(q);
        let n_deg = degrees.len();
        let mut values = vec![Complex64::new(0.0, 0.0); n_deg * counts.len()];
        for (mi, m) in counts.iter().enumerate() {
            let mut poly = vec![Complex64::new(0.0, 0.0); n_deg];
            poly[0] = Complex64::new(1.0, 0.0);
            for (j, &mj) in m.iter().enumerate() {
                let coeffs: Vec<Complex64> = (1..q).map(|k| roots.pow(k * j)).collect();
                for _ in 0..mj {
                    for i in (1..n_deg).rev() {
                        let mut acc = poly[i];
                        for (k, lower) in down[i].iter().enumerate() {
                            if let Some(lo) = lower {
                                acc += coeffs[k] * poly[*lo];
                            }
                        }
                        poly[i] = acc;
                    }
                }
            }
            for (li, v) in poly.into_iter().enumerate() {
                values[li * counts.len() + mi] = v;
            }
        }
        let scales = degrees
            .iter()
            .map(|l| scale_constant(d, l))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            q,
            d,
            max_degree,
            degrees,
            counts,
            degree_lookup,
            count_lookup,
            values,
            scales,
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn is_complete(&self) -> bool {
        self.max_degree == self.d
    }

    pub fn degrees(&self) -> &[Vec<usize>] {
        &self.degrees
    }

    pub fn counts(&self) -> &[Vec<usize>] {
        &self.counts
    }

    pub fn degree_index(&self, l: &[usize]) -> Option<usize> {
        self.degree_lookup.get(l).copied()
    }

    pub fn count_index(&self, m: &[usize]) -> Option<usize> {
        self.count_lookup.get(m).copied()
    }

    /// `Q_{degrees[li]}(counts[mi])`.
    #[inline]
    pub fn value(&self, li: usize, mi: usize) -> Complex64 {
        self.values[li * self.counts.len() + mi]
    }

    pub fn h(&self, li: usize) -> f64 {
        self.scales[li].h()
    }

    pub fn scale(&self, li: usize) -> ScaleConstant {
        self.scales[li]
    }

    /// `p(m; d)` under the uniform multinomial.
    pub fn count_probability(&self, mi: usize) -> f64 {
        uniform_multinomial_pmf(&self.counts[mi])
    }
}

/// Largest deviation of `sum_m p(m) Q_l(m) conj(Q_{l'}(m))` from
/// `delta_{ll'} h_l^{-1}` over all `|l|, |l'| <= max_degree`.
pub fn orthogonality_check(q: usize, d: usize, max_degree: usize) -> Result<f64> {
    let table = KrawtchoukTable::with_max_degree(q, d, max_degree)?;
    let probs: Vec<f64> = (0..table.counts().len()).map(|mi| table.count_probability(mi)).collect();
    let n = table.degrees().len();
    let mut worst: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            let s: Complex64 = probs
                .iter()
                .enumerate()
                .map(|(mi, p)| table.value(a, mi) * table.value(b, mi).conj() * p)
                .sum();
            let target = if a == b { table.scale(a).inverse() } else { 0.0 };
            worst = worst.max((s - target).norm());
        }
    }
    Ok(worst)
}

/// `|h_{m^-}^{-1} Q_l(m) - h_l^{-1} Q_{m^-}(l^+)|` with `m^- = m[1..]` and
/// `l^+ = (d - |l|, l)`. Needs a complete table.
pub fn duality_residual(table: &KrawtchoukTable, m: &[usize], l: &[usize]) -> Result<f64> {
    if !table.is_complete() {
        return Err(Error::Contract("duality needs a table with every degree up to d".into()));
    }
    let d = table.d();
    let l_total: usize = l.iter().sum();
    if l_total > d {
        return Err(Error::Range(format!("|l| = {l_total} exceeds d = {d}")));
    }
    let mi = table.count_index(m).ok_or_else(|| Error::Shape(format!("{m:?} is not a count vector of the table")))?;
    let li = table.degree_index(l).ok_or_else(|| Error::Shape(format!("{l:?} is not a degree index of the table")))?;
    let m_minus = &m[1..];
    let mut l_plus = vec![d - l_total];
    l_plus.extend_from_slice(l);
    let li2 = table.degree_index(m_minus).expect("tail of a count vector is a degree index");
    let mi2 = table.count_index(&l_plus).expect("l^+ is a count vector");
    let lhs = table.value(li, mi) * scale_constant(d, m_minus)?.inverse();
    let rhs = table.value(li2, mi2) * table.scale(li).inverse();
    Ok((lhs - rhs).norm())
}

/// Largest duality residual over every `(m, l)` pair of a complete table.
pub fn duality_check(q: usize, d: usize) -> Result<f64> {
    let table = KrawtchoukTable::new(q, d)?;
    let mut worst: f64 = 0.0;
    for m in table.counts().to_vec() {
        for l in table.degrees().to_vec() {
            worst = worst.max(duality_residual(&table, &m, &l)?);
        }
    }
    Ok(worst)
}

/// Law of the type-count vector `n_V` of an exchangeable increment, aligned
/// with [`count_vectors`].
pub fn count_pmf(law: &IncrementLaw, q: usize, d: usize) -> Result<Vec<f64>> {
    law.validate(q, d)?;
    if !law.is_exchangeable() {
        return Err(Error::Contract("grouped eigenvalues need an exchangeable law".into()));
    }
    let counts = count_vectors(q, d);
    let iid = |p: &[f64], m: &[usize]| -> f64 {
        let ln_coef = ln_multinomial(m);
        let mut prod = ln_coef.exp();
        for (pj, &mj) in p.iter().zip(m) {
            prod *= pj.powi(mj as i32);
        }
        prod
    };
    Ok(match law {
        IncrementLaw::Uniform => counts.iter().map(|m| uniform_multinomial_pmf(m)).collect(),
        IncrementLaw::Deterministic { v } => counts
            .iter()
            .map(|m| if m[v[0]] == d { 1.0 } else { 0.0 })
            .collect(),
        IncrementLaw::ProductIid { p } => counts.iter().map(|m| iid(p, m)).collect(),
        IncrementLaw::DeFinettiMixture { components } => counts
            .iter()
            .map(|m| components.iter().map(|c| c.weight * iid(&c.p, m)).sum())
            .collect(),
        IncrementLaw::SparseExchangeable { c, joint } => {
            let inner = Lattice::new(q, *c)?;
            let mut joint_counts: HashMap<Vec<usize>, f64> = HashMap::new();
            for (u, &pu) in joint.iter().enumerate() {
                *joint_counts.entry(inner.type_counts(u)).or_default() += pu;
            }
            counts
                .iter()
                .map(|m| {
                    joint_counts
                        .iter()
                        .filter(|(a, _)| a.iter().zip(m).all(|(x, y)| x <= y))
                        .map(|(a, pa)| {
                            let rest: Vec<usize> = m.iter().zip(a).map(|(x, y)| x - y).collect();
                            pa * uniform_multinomial_pmf(&rest)
                        })
                        .sum()
                })
                .collect()
        }
    })
}

/// Canonical frequency of type `l^+`: `l[1]` ones, then `l[2]` twos, and so on,
/// padded with zeros.
pub fn representative_frequency(q: usize, d: usize, l: &[usize]) -> Result<Vec<usize>> {
    if l.len() != q - 1 || l.iter().sum::<usize>() > d {
        return Err(Error::Shape(format!("{l:?} is not a degree index for q={q}, d={d}")));
    }
    let mut r = Vec::with_capacity(d);
    for (k, &lk) in l.iter().enumerate() {
        r.extend(std::iter::repeat_n(k + 1, lk));
    }
    r.resize(d, 0);
    Ok(r)
}

/// Grouped eigenvalues by route A: `kappa_l = h_l E[Q_l(n_V)]`.
pub fn kappa_route_a(law: &IncrementLaw, table: &KrawtchoukTable) -> Result<Vec<Complex64>> {
    let pmf = count_pmf(law, table.q(), table.d())?;
    Ok((0..table.degrees().len())
        .map(|li| {
            let mean: Complex64 = pmf.iter().enumerate().map(|(mi, p)| table.value(li, mi) * p).sum();
            mean * table.h(li)
        })
        .collect())
}

/// Grouped eigenvalue by route B: `sum_i w_i prod_k xi_i[k]^{l[k]}` for
/// mixtures and product laws, otherwise `rho` at the canonical frequency.
pub fn kappa_route_b(law: &IncrementLaw, q: usize, d: usize, l: &[usize]) -> Result<Complex64> {
    law.validate(q, d)?;
    if !law.is_exchangeable() {
        return Err(Error::Contract("grouped eigenvalues need an exchangeable law".into()));
    }
    let r = representative_frequency(q, d, l)?;
    let roots = RootTable::new(q);
    let xi_product = |p: &[f64]| -> Complex64 {
        let xi = xi_transform(p, &roots);
        l.iter()
            .enumerate()
            .map(|(k, &lk)| xi[k + 1].powu(lk as u32))
            .product()
    };
    match law {
        IncrementLaw::ProductIid { p } => Ok(xi_product(p)),
        IncrementLaw::DeFinettiMixture { components } => {
            Ok(components.iter().map(|c| xi_product(&c.p) * c.weight).sum())
        }
        _ => law.rho_at(q, d, &r),
    }
}

/// Route-B eigenvalues for every degree of `table`.
pub fn kappa(law: &IncrementLaw, table: &KrawtchoukTable) -> Result<Vec<Complex64>> {
    table
        .degrees()
        .iter()
        .map(|l| kappa_route_b(law, table.q(), table.d(), l))
        .collect()
}

/// `t`-step kernel of the type-count chain:
/// `K_t(m, n) = p(n) sum_l kappa_l^t h_l Q_l(m) conj(Q_l(n))`.
pub fn count_chain_kernel(kappa: &[Complex64], table: &KrawtchoukTable, t: u32) -> Result<DMatrix<f64>> {
    if !table.is_complete() {
        return Err(Error::Contract("count-chain kernel needs every degree up to d".into()));
    }
    if kappa.len() != table.degrees().len() {
        return Err(Error::Shape(format!(
            "{} eigenvalues for {} degree indices",
            kappa.len(),
            table.degrees().len()
        )));
    }
    let n = table.counts().len();
    let weights: Vec<Complex64> = kappa
        .iter()
        .enumerate()
        .map(|(li, k)| k.powu(t) * table.h(li))
        .collect();
    let mut out = DMatrix::zeros(n, n);
    for mi in 0..n {
        for ni in 0..n {
            let s: Complex64 = weights
                .iter()
                .enumerate()
                .map(|(li, w)| w * table.value(li, mi) * table.value(li, ni).conj())
                .sum();
            out[(mi, ni)] = table.count_probability(ni) * s.re;
        }
    }
    let min = out.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -1e-9 {
        return Err(Error::InvalidKappa(format!("kernel entry {min:e} is negative")));
    }
    for mi in 0..n {
        let s: f64 = out.row(mi).sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidKappa(format!("row {mi} sums to {s}")));
        }
    }
    Ok(out)
}

/// Lumps a full-state matrix by type counts: row `m` is the row of any state
/// of type `m`, summed over the states of each type `n`.
pub fn lump_by_type(p: &DMatrix<f64>, q: usize, d: usize) -> Result<DMatrix<f64>> {
    let lattice = Lattice::new(q, d)?;
    if p.nrows() != lattice.size() || p.ncols() != lattice.size() {
        return Err(Error::Shape("matrix does not match q^d".into()));
    }
    let counts = count_vectors(q, d);
    let lookup: HashMap<Vec<usize>, usize> = counts.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
    let types: Vec<usize> = (0..lattice.size()).map(|x| lookup[&lattice.type_counts(x)]).collect();
    let mut representative = vec![usize::MAX; counts.len()];
    for (x, &t) in types.iter().enumerate() {
        if representative[t] == usize::MAX {
            representative[t] = x;
        }
    }
    let mut out = DMatrix::zeros(counts.len(), counts.len());
    for (mi, &x) in representative.iter().enumerate() {
        for (y, &ni) in types.iter().enumerate() {
            out[(mi, ni)] += p[(x, y)];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walk::{transition_matrix, MixtureComponent};

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn binary_first_degree() {
        for m0 in 0..=5 {
            let m = [m0, 5 - m0];
            let v = krawtchouk_eval(&m, &[1]).unwrap().value;
            assert!(close(v, Complex64::new(m0 as f64 - (5 - m0) as f64, 0.0), 1e-13));
        }
    }

    #[test]
    fn ternary_single_site() {
        let roots = RootTable::new(3);
        for a in 0..3 {
            let mut m = vec![0; 3];
            m[a] = 1;
            let v = krawtchouk_eval(&m, &[1, 0]).unwrap().value;
            assert!(close(v, roots.pow(a), 1e-14));
        }
    }

    #[test]
    fn zero_degree_is_one_and_beyond_degree_flagged() {
        let table = KrawtchoukTable::new(4, 5).unwrap();
        let l0 = table.degree_index(&[0, 0, 0]).unwrap();
        for mi in 0..table.counts().len() {
            assert_eq!(table.value(l0, mi), Complex64::new(1.0, 0.0));
        }
        let out = krawtchouk_eval(&[1, 1], &[3]).unwrap();
        assert!(out.beyond_degree && out.value == Complex64::new(0.0, 0.0));
    }

    #[test]
    fn table_agrees_with_box_dp() {
        let table = KrawtchoukTable::new(3, 4).unwrap();
        for (mi, m) in table.counts().iter().enumerate() {
            for (li, l) in table.degrees().iter().enumerate() {
                let v = krawtchouk_eval(m, l).unwrap().value;
                assert!(close(v, table.value(li, mi), 1e-11), "{m:?} {l:?}");
            }
        }
    }

    #[test]
    fn table_agrees_with_frequency_sum() {
        // Q_l(m(x)) = sum over r of type l of theta^{x.r}.
        let (q, d) = (3, 3);
        let lattice = Lattice::new(q, d).unwrap();
        let roots = RootTable::new(q);
        let table = KrawtchoukTable::new(q, d).unwrap();
        for x in 0..lattice.size() {
            let mi = table.count_index(&lattice.type_counts(x)).unwrap();
            for (li, l) in table.degrees().iter().enumerate() {
                let s: Complex64 = (0..lattice.size())
                    .filter(|&r| lattice.type_counts(r)[1..] == l[..])
                    .map(|r| roots.pow(lattice.dot_mod(x, r)))
                    .sum();
                assert!(close(s, table.value(li, mi), 1e-11));
            }
        }
    }

    #[test]
    fn exact_q2_matches_float() {
        let table = KrawtchoukTable::new(2, 12).unwrap();
        for (mi, m) in table.counts().iter().enumerate() {
            for l in 0..=12 {
                let exact = krawtchouk_exact_q2(m[0], m[1], l).unwrap();
                let li = table.degree_index(&[l]).unwrap();
                let v = table.value(li, mi);
                assert!((v.re - exact as f64).abs() <= 1e-12 * (1.0 + (exact as f64).abs()));
                assert!(v.im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn orthogonality_small_cases() {
        // q=2, d=3, l=(1): values 3,1,-1,-3 with weights 1,3,3,1 over 8.
        let table = KrawtchoukTable::new(2, 3).unwrap();
        let li = table.degree_index(&[1]).unwrap();
        let s: f64 = (0..table.counts().len())
            .map(|mi| table.count_probability(mi) * table.value(li, mi).norm_sqr())
            .sum();
        assert!((s - 3.0).abs() < 1e-12);
        assert_eq!(scale_constant(4, &[1, 1]).unwrap().inverse_exact, Some(12));
        assert!(orthogonality_check(3, 4, 4).unwrap() < 1e-10);
    }

    #[test]
    fn duality_full_enumeration_q2_d3() {
        assert!(duality_check(2, 3).unwrap() <= 1e-10);
        let table = KrawtchoukTable::new(3, 3).unwrap();
        // l = 0: both sides equal h_{m^-}^{-1}.
        let r = duality_residual(&table, &[1, 1, 1], &[0, 0]).unwrap();
        assert!(r < 1e-12);
    }

    #[test]
    fn kappa_routes_agree() {
        let law = IncrementLaw::lazy(3, &[(1.0, 0.5)]).unwrap();
        let table = KrawtchoukTable::new(3, 3).unwrap();
        let a = kappa_route_a(&law, &table).unwrap();
        let li = table.degree_index(&[2, 1]).unwrap();
        let b = kappa_route_b(&law, 3, 3, &[2, 1]).unwrap();
        assert!(close(a[li], b, 1e-10));
    }

    #[test]
    fn kappa_binary_mixture_and_uniform_component() {
        let law = IncrementLaw::DeFinettiMixture {
            components: vec![
                MixtureComponent { weight: 0.4, p: vec![0.9, 0.1] },
                MixtureComponent { weight: 0.6, p: vec![0.3, 0.7] },
            ],
        };
        for l in 0..=4usize {
            let expected = 0.4 * (1.0 - 0.2f64).powi(l as i32) + 0.6 * (1.0 - 1.4f64).powi(l as i32);
            let k = kappa_route_b(&law, 2, 4, &[l]).unwrap();
            assert!(close(k, Complex64::new(expected, 0.0), 1e-14));
        }
        let flat = IncrementLaw::DeFinettiMixture {
            components: vec![MixtureComponent { weight: 1.0, p: vec![0.25; 4] }],
        };
        let table = KrawtchoukTable::new(4, 2).unwrap();
        let k = kappa(&flat, &table).unwrap();
        assert!(close(k[0], Complex64::new(1.0, 0.0), 1e-14));
        assert!(k[1..].iter().all(|v| v.norm() < 1e-14));
    }

    #[test]
    fn non_exchangeable_law_is_rejected() {
        let law = IncrementLaw::Deterministic { v: vec![0, 1] };
        let table = KrawtchoukTable::new(2, 2).unwrap();
        assert!(matches!(kappa_route_a(&law, &table), Err(Error::Contract(_))));
    }

    #[test]
    fn count_chain_lumping_q2_d3() {
        let law = IncrementLaw::lazy(2, &[(0.5, 0.3), (0.5, 0.8)]).unwrap();
        let (q, d) = (2, 3);
        let table = KrawtchoukTable::new(q, d).unwrap();
        let p = transition_matrix(&law.spectrum(q, d).unwrap()).unwrap().to_dense().unwrap();
        let k2 = count_chain_kernel(&kappa(&law, &table).unwrap(), &table, 2).unwrap();
        let lumped = lump_by_type(&(&p * &p), q, d).unwrap();
        assert!((k2 - lumped).abs().max() < 1e-12);
    }

    #[test]
    fn count_chain_trivial_cases() {
        let law = IncrementLaw::lazy(3, &[(1.0, 0.6)]).unwrap();
        let table = KrawtchoukTable::new(3, 2).unwrap();
        let k0 = count_chain_kernel(&kappa(&law, &table).unwrap(), &table, 0).unwrap();
        assert!((k0 - DMatrix::<f64>::identity(table.counts().len(), table.counts().len())).abs().max() < 1e-12);
        // d = 1: count vectors are the states themselves.
        let table1 = KrawtchoukTable::new(3, 1).unwrap();
        let k1 = count_chain_kernel(&kappa(&law, &table1).unwrap(), &table1, 1).unwrap();
        let p = transition_matrix(&law.spectrum(3, 1).unwrap()).unwrap();
        for (mi, m) in table1.counts().iter().enumerate() {
            let x = m.iter().position(|&v| v == 1).unwrap();
            for (ni, n) in table1.counts().iter().enumerate() {
                let y = n.iter().position(|&v| v == 1).unwrap();
                assert!((k1[(mi, ni)] - p.entry(x, y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_kappa_is_rejected() {
        let table = KrawtchoukTable::new(2, 2).unwrap();
        let bad = vec![Complex64::new(1.0, 0.0), Complex64::new(3.0, 0.0), Complex64::new(0.0, 0.0)];
        assert!(matches!(count_chain_kernel(&bad, &table, 1), Err(Error::InvalidKappa(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(50))]

            #[test]
            fn kappa_routes_agree_on_random_mixtures(
                raw in proptest::collection::vec((0.05f64..1.0, proptest::collection::vec(0.01f64..1.0, 3)), 1..4),
                d in 1usize..=4,
            ) {
                let total: f64 = raw.iter().map(|(w, _)| w).sum();
                let mut components: Vec<MixtureComponent> = raw
                    .iter()
                    .map(|(w, p)| {
                        let s: f64 = p.iter().sum();
                        let mut p: Vec<f64> = p.iter().map(|v| v / s).collect();
                        let tail: f64 = p[1..].iter().sum();
                        p[0] = 1.0 - tail;
                        MixtureComponent { weight: w / total, p }
                    })
                    .collect();
                let head: f64 = components[1..].iter().map(|c| c.weight).sum();
                components[0].weight = 1.0 - head;
                let law = IncrementLaw::DeFinettiMixture { components };
                let table = KrawtchoukTable::new(3, d).unwrap();
                let a = kappa_route_a(&law, &table).unwrap();
                let b = kappa(&law, &table).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).norm() < 1e-10);
                }
            }
        }
    }
}
