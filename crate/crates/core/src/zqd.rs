//! Index arithmetic on `V_{q,d} = {0..q-1}^d`, roots of unity and the unitary
//! discrete Fourier transform over `Z_q^d`.
//!
//! Points are ranked little-endian: entry `k` is base-`q` digit `k`, so
//! `rank(x) = sum_k x[k] q^k`. Every lattice-valued array in the crate is
//! stored in this order.
//!
//! The transform is unitary:
//!
//! ```text
//! forward:  c_r = q^{-d/2} sum_x f_x theta^{-x.r}
//! inverse:  f_x = q^{-d/2} sum_r c_r theta^{x.r}
//! ```
//!
//! and is evaluated as `d` successive length-`q` transforms along each axis.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the state space: modulus `q` and dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Lattice {
    q: usize,
    d: usize,
    size: usize,
}

impl Lattice {
    pub fn new(q: usize, d: usize) -> Result<Self> {
        if q < 2 {
            return Err(Error::Range(format!("modulus q must be >= 2, got {q}")));
        }
        if d < 1 {
            return Err(Error::Range(format!("dimension d must be >= 1, got {d}")));
        }
        let size = u32::try_from(d)
            .ok()
            .and_then(|d| q.checked_pow(d))
            .ok_or_else(|| Error::Range(format!("q^d overflows for q={q}, d={d}")))?;
        Ok(Self { q, d, size })
    }

    #[inline]
    pub fn q(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of states `q^d`.
    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn rank(&self, x: &MultiIndex) -> Result<usize> {
        if x.q != self.q || x.entries.len() != self.d {
            return Err(Error::Shape(format!(
                "index with q={}, d={} used on lattice q={}, d={}",
                x.q,
                x.entries.len(),
                self.q,
                self.d
            )));
        }
        Ok(x.rank())
    }

    pub fn unrank(&self, i: usize) -> Result<MultiIndex> {
        MultiIndex::unrank(i, self.q, self.d)
    }

    /// Writes the digits of rank `i` into `out` (length `d`). No range check.
    #[inline]
    pub fn digits_into(&self, mut i: usize, out: &mut [usize]) {
        for slot in out.iter_mut() {
            *slot = i % self.q;
            i /= self.q;
        }
    }

    pub fn digits(&self, i: usize) -> Vec<usize> {
        let mut out = vec![0; self.d];
        self.digits_into(i, &mut out);
        out
    }

    /// Rank of `x - y mod q` given the ranks of `x` and `y`.
    pub fn sub_rank(&self, x: usize, y: usize) -> usize {
        let (mut x, mut y) = (x, y);
        let (mut out, mut place) = (0, 1);
        for _ in 0..self.d {
            let digit = (x % self.q + self.q - y % self.q) % self.q;
            out += digit * place;
            place *= self.q;
            x /= self.q;
            y /= self.q;
        }
        out
    }

    /// Rank of `x + y mod q`.
    pub fn add_rank(&self, x: usize, y: usize) -> usize {
        let (mut x, mut y) = (x, y);
        let (mut out, mut place) = (0, 1);
        for _ in 0..self.d {
            let digit = (x % self.q + y % self.q) % self.q;
            out += digit * place;
            place *= self.q;
            x /= self.q;
            y /= self.q;
        }
        out
    }

    /// Rank of `-x mod q`.
    pub fn neg_rank(&self, x: usize) -> usize {
        self.sub_rank(0, x)
    }

    /// `x . r mod q` given ranks.
    pub fn dot_mod(&self, x: usize, r: usize) -> usize {
        let (mut x, mut r) = (x, r);
        let mut acc = 0;
        for _ in 0..self.d {
            acc = (acc + (x % self.q) * (r % self.q)) % self.q;
            x /= self.q;
            r /= self.q;
        }
        acc
    }

    /// Type counts of the point with rank `i`: `m[j] = #{k : x[k] = j}`.
    pub fn type_counts(&self, i: usize) -> Vec<usize> {
        let mut counts = vec![0; self.q];
        let mut i = i;
        for _ in 0..self.d {
            counts[i % self.q] += 1;
            i /= self.q;
        }
        counts
    }

    /// Number of nonzero entries of the point with rank `i`.
    pub fn support_size(&self, i: usize) -> usize {
        let mut i = i;
        let mut n = 0;
        for _ in 0..self.d {
            if !i.is_multiple_of(self.q) {
                n += 1;
            }
            i /= self.q;
        }
        n
    }

    pub fn points(&self) -> impl Iterator<Item = MultiIndex> + '_ {
        (0..self.size).map(move |i| MultiIndex::unrank(i, self.q, self.d).expect("rank in range"))
    }
}

/// A point (or frequency) of `V_{q,d}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex {
    entries: Vec<usize>,
    q: usize,
}

impl MultiIndex {
    pub fn new(entries: Vec<usize>, q: usize) -> Result<Self> {
        if q < 2 {
            return Err(Error::Range(format!("modulus q must be >= 2, got {q}")));
        }
        if entries.is_empty() {
            return Err(Error::Range("a multi-index needs at least one entry".into()));
        }
        if let Some(bad) = entries.iter().find(|&&e| e >= q) {
            return Err(Error::Range(format!("entry {bad} not in [0, {q})")));
        }
        Ok(Self { entries, q })
    }

    pub fn zeros(q: usize, d: usize) -> Self {
        Self {
            entries: vec![0; d],
            q,
        }
    }

    pub fn unrank(i: usize, q: usize, d: usize) -> Result<Self> {
        let lattice = Lattice::new(q, d)?;
        if i >= lattice.size() {
            return Err(Error::Range(format!(
                "rank {i} not in [0, {}) for q={q}, d={d}",
                lattice.size()
            )));
        }
        Ok(Self {
            entries: lattice.digits(i),
            q,
        })
    }

    pub fn rank(&self) -> usize {
        self.entries
            .iter()
            .rev()
            .fold(0, |acc, &digit| acc * self.q + digit)
    }

    pub fn entries(&self) -> &[usize] {
        &self.entries
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn d(&self) -> usize {
        self.entries.len()
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        debug_assert_eq!(self.q, other.q);
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a + b) % self.q)
            .collect();
        MultiIndex { entries, q: self.q }
    }

    pub fn sub(&self, other: &MultiIndex) -> MultiIndex {
        debug_assert_eq!(self.q, other.q);
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a + self.q - b) % self.q)
            .collect();
        MultiIndex { entries, q: self.q }
    }

    pub fn neg(&self) -> MultiIndex {
        MultiIndex::zeros(self.q, self.d()).sub(self)
    }

    /// `x . r mod q`.
    pub fn dot_mod(&self, other: &MultiIndex) -> usize {
        self.entries
            .iter()
            .zip(&other.entries)
            .fold(0, |acc, (a, b)| (acc + a * b) % self.q)
    }

    /// Counts of each value `0..q` among the entries.
    pub fn type_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.q];
        for &e in &self.entries {
            counts[e] += 1;
        }
        counts
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, e) in self.entries.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

/// Powers `theta^j`, `j = 0..q`, of the primitive root `theta = e^{2 pi i / q}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RootTable {
    q: usize,
    powers: Vec<Complex64>,
}

impl RootTable {
    pub fn new(q: usize) -> Self {
        assert!(q >= 1, "root table needs q >= 1");
        let powers = (0..q)
            .map(|j| Complex64::from_polar(1.0, 2.0 * PI * j as f64 / q as f64))
            .collect();
        Self { q, powers }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// `theta^e` for any nonnegative exponent.
    #[inline]
    pub fn pow(&self, e: usize) -> Complex64 {
        self.powers[e % self.q]
    }

    /// `theta^e` for a signed exponent.
    #[inline]
    pub fn pow_signed(&self, e: i64) -> Complex64 {
        self.powers[e.rem_euclid(self.q as i64) as usize]
    }

    pub fn powers(&self) -> &[Complex64] {
        &self.powers
    }
}

/// A complex array indexed by `V_{q,d}` in rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexLattice {
    lattice: Lattice,
    values: Vec<Complex64>,
}

impl ComplexLattice {
    pub fn new(lattice: Lattice, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != lattice.size() {
            return Err(Error::Shape(format!(
                "expected {} values for q={}, d={}, got {}",
                lattice.size(),
                lattice.q(),
                lattice.d(),
                values.len()
            )));
        }
        Ok(Self { lattice, values })
    }

    pub fn zeros(lattice: Lattice) -> Self {
        Self {
            lattice,
            values: vec![Complex64::new(0.0, 0.0); lattice.size()],
        }
    }

    pub fn from_fn(lattice: Lattice, mut f: impl FnMut(usize) -> Complex64) -> Self {
        Self {
            lattice,
            values: (0..lattice.size()).map(&mut f).collect(),
        }
    }

    pub fn from_real(lattice: Lattice, values: &[f64]) -> Result<Self> {
        Self::new(
            lattice,
            values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn get(&self, x: &MultiIndex) -> Complex64 {
        self.values[x.rank()]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs_diff(&self, other: &ComplexLattice) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn max_imag(&self) -> f64 {
        self.values.iter().map(|v| v.im.abs()).fold(0.0, f64::max)
    }

    /// Pointwise map keeping the same lattice.
    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> ComplexLattice {
        ComplexLattice {
            lattice: self.lattice,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Inverse,
}

impl Direction {
    fn sign(self) -> i64 {
        match self {
            Direction::Forward => -1,
            Direction::Inverse => 1,
        }
    }
}

/// Unitary DFT, axis-factored: `d` passes of length-`q` transforms, total
/// cost `O(d q^{d+1})`.
pub fn dft(f: &ComplexLattice, direction: Direction) -> ComplexLattice {
    let mut values = f.values.clone();
    dft_in_place(&mut values, f.lattice, direction);
    ComplexLattice {
        lattice: f.lattice,
        values,
    }
}

/// Length-checked transform of a raw slice.
pub fn dft_slice(
    values: &[Complex64],
    q: usize,
    d: usize,
    direction: Direction,
) -> Result<Vec<Complex64>> {
    let lattice = Lattice::new(q, d)?;
    let f = ComplexLattice::new(lattice, values.to_vec())?;
    Ok(dft(&f, direction).into_values())
}

pub fn dft_in_place(values: &mut [Complex64], lattice: Lattice, direction: Direction) {
    let q = lattice.q();
    assert_eq!(values.len(), lattice.size(), "dft_in_place: length mismatch");
    let roots = RootTable::new(q);
    let sign = direction.sign();
    let scale = 1.0 / (q as f64).sqrt();
    // twiddle[j * q + k] = theta^{sign * j * k}; only built for moderate q.
    let twiddle: Option<Vec<Complex64>> = (q <= 256).then(|| {
        (0..q * q)
            .map(|jk| roots.pow_signed(sign * ((jk / q) * (jk % q)) as i64))
            .collect()
    });

    let mut fiber = vec![Complex64::new(0.0, 0.0); q];
    let mut stride = 1;
    for _axis in 0..lattice.d() {
        let block = stride * q;
        for base in (0..values.len()).step_by(block) {
            for offset in 0..stride {
                let start = base + offset;
                for (j, slot) in fiber.iter_mut().enumerate() {
                    *slot = values[start + j * stride];
                }
                for k in 0..q {
                    let mut acc = Complex64::new(0.0, 0.0);
                    match &twiddle {
                        Some(tw) => {
                            let row = &tw[k * q..(k + 1) * q];
                            for (v, w) in fiber.iter().zip(row) {
                                acc += v * w;
                            }
                        }
                        None => {
                            let mut e = 0usize;
                            for v in fiber.iter() {
                                acc += v * roots.pow_signed(sign * e as i64);
                                e = (e + k) % q;
                            }
                        }
                    }
                    values[start + k * stride] = acc * scale;
                }
            }
        }
        stride = block;
    }
}

/// Reference `O(q^{2d})` double sum, kept for testing the factored path.
pub fn dft_naive(f: &ComplexLattice, direction: Direction) -> ComplexLattice {
    let lattice = f.lattice;
    let roots = RootTable::new(lattice.q());
    let sign = direction.sign();
    let scale = (lattice.size() as f64).sqrt().recip();
    ComplexLattice::from_fn(lattice, |r| {
        let mut acc = Complex64::new(0.0, 0.0);
        for (x, v) in f.values.iter().enumerate() {
            acc += v * roots.pow_signed(sign * lattice.dot_mod(x, r) as i64);
        }
        acc * scale
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_lattice(lattice: Lattice, seed: u64) -> ComplexLattice {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexLattice::from_fn(lattice, |_| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    #[test]
    fn rank_examples() {
        let l = Lattice::new(3, 2).unwrap();
        assert_eq!(l.rank(&MultiIndex::new(vec![0, 0], 3).unwrap()).unwrap(), 0);
        assert_eq!(l.rank(&MultiIndex::new(vec![1, 2], 3).unwrap()).unwrap(), 7);
    }

    #[test]
    fn unrank_roundtrip_q3_d4() {
        let l = Lattice::new(3, 4).unwrap();
        assert_eq!(l.size(), 81);
        for i in 0..81 {
            let x = l.unrank(i).unwrap();
            assert_eq!(x.rank(), i);
            assert_eq!(MultiIndex::unrank(x.rank(), 3, 4).unwrap(), x);
        }
    }

    #[test]
    fn unrank_out_of_range() {
        assert!(matches!(MultiIndex::unrank(9, 3, 2), Err(Error::Range(_))));
        assert!(matches!(MultiIndex::new(vec![3], 3), Err(Error::Range(_))));
        assert!(Lattice::new(1, 2).is_err());
        assert!(Lattice::new(2, 0).is_err());
    }

    #[test]
    fn rank_arithmetic_matches_index_arithmetic() {
        let l = Lattice::new(4, 3).unwrap();
        for x in 0..l.size() {
            for y in [0, 5, 17, 63] {
                let (a, b) = (l.unrank(x).unwrap(), l.unrank(y).unwrap());
                assert_eq!(l.sub_rank(x, y), a.sub(&b).rank());
                assert_eq!(l.add_rank(x, y), a.add(&b).rank());
                assert_eq!(l.dot_mod(x, y), a.dot_mod(&b));
            }
            assert_eq!(l.neg_rank(x), l.unrank(x).unwrap().neg().rank());
        }
    }

    #[test]
    fn root_table_invariants() {
        for q in 2..=12 {
            let roots = RootTable::new(q);
            for j in 0..q {
                assert!((roots.pow(j).norm() - 1.0).abs() < 1e-14);
            }
            let theta = roots.pow(1);
            assert!((theta.powu(q as u32) - Complex64::new(1.0, 0.0)).norm() < 1e-14);
            for k in 0..2 * q {
                let s: Complex64 = (0..q).map(|j| roots.pow(j * k)).sum();
                let expected = if k % q == 0 { q as f64 } else { 0.0 };
                assert!((s - Complex64::new(expected, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_of_delta_is_constant() {
        let l = Lattice::new(2, 3).unwrap();
        let mut delta = ComplexLattice::zeros(l);
        delta.values_mut()[0] = Complex64::new(1.0, 0.0);
        let c = dft(&delta, Direction::Forward);
        let expected = 2f64.powf(-1.5);
        for v in c.values() {
            assert!((v - Complex64::new(expected, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn inverse_after_forward_is_identity() {
        let l = Lattice::new(3, 3).unwrap();
        let f = random_lattice(l, 7);
        let back = dft(&dft(&f, Direction::Forward), Direction::Inverse);
        assert!(back.max_abs_diff(&f) < 1e-12);
    }

    #[test]
    fn parseval_q4_d2() {
        let l = Lattice::new(4, 2).unwrap();
        let f = random_lattice(l, 11);
        let c = dft(&f, Direction::Forward);
        assert!((f.norm_sqr() - c.norm_sqr()).abs() < 1e-12);
    }

    #[test]
    fn factored_matches_naive_q3_d3() {
        let l = Lattice::new(3, 3).unwrap();
        let f = random_lattice(l, 3);
        for dir in [Direction::Forward, Direction::Inverse] {
            assert!(dft(&f, dir).max_abs_diff(&dft_naive(&f, dir)) < 1e-11);
        }
    }

    #[test]
    fn large_modulus_path_matches_naive() {
        // q > 256 exercises the table-free branch.
        let l = Lattice::new(300, 1).unwrap();
        let f = random_lattice(l, 5);
        let diff = dft(&f, Direction::Forward).max_abs_diff(&dft_naive(&f, Direction::Forward));
        assert!(diff < 1e-10, "diff {diff}");
    }

    #[test]
    fn dft_slice_rejects_bad_length() {
        let v = vec![Complex64::new(1.0, 0.0); 5];
        assert!(matches!(
            dft_slice(&v, 2, 2, Direction::Forward),
            Err(Error::Shape(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn shapes() -> impl Strategy<Value = (usize, usize)> {
            (2usize..=16, 1usize..=12)
                .prop_filter("q^d <= 4096", |&(q, d)| (q as f64).powi(d as i32) <= 4096.0)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn unitary_roundtrip_and_parseval((q, d) in shapes(), seed in any::<u64>()) {
                let l = Lattice::new(q, d).unwrap();
                let f = random_lattice(l, seed);
                let c = dft(&f, Direction::Forward);
                prop_assert!((f.norm_sqr() - c.norm_sqr()).abs() < 1e-10 * (1.0 + f.norm_sqr()));
                let back = dft(&c, Direction::Inverse);
                prop_assert!(back.max_abs_diff(&f) < 1e-10);
            }

            #[test]
            fn rank_roundtrip((q, d) in shapes(), frac in 0.0f64..1.0) {
                let l = Lattice::new(q, d).unwrap();
                let i = ((l.size() as f64) * frac) as usize % l.size();
                prop_assert_eq!(l.unrank(i).unwrap().rank(), i);
            }
        }
    }
}
