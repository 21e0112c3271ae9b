//! Exact counting helpers: binomials, multinomials, log-factorials and
//! enumeration of count vectors / degree indices.

/// `C(n, k)` in `u128`, `None` on overflow.
pub fn binomial_exact(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step.
        acc = acc.checked_mul(u128::from(n - i))? / u128::from(i + 1);
    }
    Some(acc)
}

/// `C(n, k)` as a float (exact when representable, log-space otherwise).
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    match binomial_exact(n as u64, k as u64) {
        Some(v) => v as f64,
        None => (ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)).exp(),
    }
}

/// `n! / prod_k parts[k]!` where `n = sum parts`, exact in `u128`.
pub fn multinomial_exact(parts: &[usize]) -> Option<u128> {
    let mut acc: u128 = 1;
    let mut total: u64 = 0;
    for &p in parts {
        total += p as u64;
        acc = acc.checked_mul(binomial_exact(total, p as u64)?)?;
    }
    Some(acc)
}

pub fn ln_multinomial(parts: &[usize]) -> f64 {
    let n: usize = parts.iter().sum();
    ln_factorial(n) - parts.iter().map(|&p| ln_factorial(p)).sum::<f64>()
}

pub fn multinomial(parts: &[usize]) -> f64 {
    match multinomial_exact(parts) {
        Some(v) => v as f64,
        None => ln_multinomial(parts).exp(),
    }
}

/// `ln n!`, summed directly for small `n` and by Stirling's series beyond.
pub fn ln_factorial(n: usize) -> f64 {
    if n < 256 {
        (2..=n).map(|k| (k as f64).ln()).sum()
    } else {
        let x = n as f64 + 1.0;
        // ln Gamma(x) with three correction terms; error far below 1e-15 here.
        (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + 1.0 / (12.0 * x)
            - 1.0 / (360.0 * x.powi(3))
            + 1.0 / (1260.0 * x.powi(5))
    }
}

pub fn factorial(n: usize) -> f64 {
    if n <= 170 {
        (1..=n).map(|k| k as f64).product()
    } else {
        f64::INFINITY
    }
}

/// Multinomial probability `p(m; d) = d! / prod m_j! * q^{-d}` of a count vector
/// under uniform sampling of `d` entries from `q` symbols.
pub fn uniform_multinomial_pmf(m: &[usize]) -> f64 {
    let d: usize = m.iter().sum();
    let q = m.len() as f64;
    (ln_multinomial(m) - d as f64 * q.ln()).exp()
}

/// All length-`parts` vectors of nonnegative integers summing to `total`,
/// in reverse-lexicographic order (first entry largest first).
pub fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if parts == 0 {
        if total == 0 {
            out.push(Vec::new());
        }
        return out;
    }
    let mut current = vec![0; parts];
    fill_compositions(total, 0, &mut current, &mut out);
    out
}

fn fill_compositions(remaining: usize, pos: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(current.clone());
        return;
    }
    for v in (0..=remaining).rev() {
        current[pos] = v;
        fill_compositions(remaining - v, pos + 1, current, out);
    }
    current[pos] = 0;
}

/// All length-`parts` vectors with entry sum at most `max_total`, ordered by
/// total degree and then reverse-lexicographically within each degree.
pub fn bounded_vectors(parts: usize, max_total: usize) -> Vec<Vec<usize>> {
    (0..=max_total)
        .flat_map(|t| compositions(t, parts))
        .collect()
}
