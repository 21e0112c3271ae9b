use num_complex::Complex64;
use serde_json::{json, Value};

use qfield::asymptotics::{
    full_type_vector, hermite_orthogonality_residual, limit_green_density, limit_green_finite_d, LimitPolyTable, DEFAULT_MAX_DEGREE,
};
use qfield::combinatorics::bounded_vectors;
use qfield::field::{sample_field, FieldSynth};
use qfield::green::{green_eigenvalue, green_entry_direct, green_exact, green_mc, total_variation};
use qfield::hamiltonian::{
    expected_partition_mc, fit_limit_constant, free_energy_expansion, gibbs, hamiltonian_identity_check,
    hamiltonian_value, log_expected_partition, partition_function, partition_function_grouped,
    partition_mc, partition_quadrature, PottsSpec,
};
use qfield::krawtchouk::{duality_check, kappa, kappa_route_a, orthogonality_check, KrawtchoukTable};
use qfield::pointproc::{half_process_identity, y_moment, y_moment_mc, PointProcessSpec};
use qfield::walk::{transition_matrix, IncrementLaw, DENSE_LIMIT};
use qfield::zqd::{dft, dft_naive, ComplexLattice, Direction, Lattice, MultiIndex};

use crate::config::Settings;
use crate::output::{complex, complexes, Report};
use crate::CliError;

fn check(name: &str, value: f64, tol: f64) -> Value {
    json!({ "name": name, "value": value, "tol": tol, "pass": value <= tol })
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn standardized(diff: f64, se: f64) -> f64 {
    if diff.abs() < 1e-10 {
        0.0
    } else if se > 0.0 {
        diff.abs() / se
    } else {
        f64::INFINITY
    }
}

fn all_pass(checks: &[Value]) -> bool {
    checks.iter().all(|c| c["pass"] == json!(true))
}

fn dense_guard(settings: &Settings) -> Result<usize, CliError> {
    let n = settings.law.spectrum(settings.q, settings.d)?.lattice().size();
    if n > DENSE_LIMIT {
        return Err(CliError::Config(format!("/d: {n} states exceed the dense limit {DENSE_LIMIT}")));
    }
    Ok(n)
}

/// Deterministic probe vectors for the quadratic-form checks.
pub fn probe_vectors(n: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![1.0; n]];
    for k in 0..3 {
        out.push((0..n).map(|x| (1.7 * x as f64 + 0.3 + k as f64).cos()).collect());
    }
    let mut one_hot = vec![0.0; n];
    one_hot[n / 2] = 1.0;
    out.push(one_hot);
    out
}

pub fn eigen(s: &Settings) -> Result<Report, CliError> {
    let spec = s.law.spectrum(s.q, s.d)?;
    let rows = spec
        .values()
        .iter()
        .enumerate()
        .map(|(r, z)| vec![r.to_string(), num(z.re), num(z.im)])
        .collect();
    Ok(Report::Csv {
        header: vec!["r".into(), "re".into(), "im".into()],
        rows,
    })
}

pub fn green(s: &Settings) -> Result<Report, CliError> {
    let n = dense_guard(s)?;
    let g = green_exact(&s.law.spectrum(s.q, s.d)?, s.alpha)?;
    let mut header = vec!["x".to_string()];
    for y in 0..n {
        header.push(format!("re_{y}"));
        header.push(format!("im_{y}"));
    }
    let rows = (0..n)
        .map(|x| {
            let mut row = vec![x.to_string()];
            for z in g.row(x) {
                row.push(num(z.re));
                row.push(num(z.im));
            }
            row
        })
        .collect();
    Ok(Report::Csv { header, rows })
}

pub fn mc_green(s: &Settings) -> Result<Report, CliError> {
    let x0 = match &s.config.x0 {
        Some(v) => MultiIndex::new(v.clone(), s.q).map_err(|e| CliError::Config(format!("/x0: {e}")))?,
        None => MultiIndex::zeros(s.q, s.d),
    };
    if x0.d() != s.d {
        return Err(CliError::Config(format!("/x0: needs {} entries", s.d)));
    }
    let emp = green_mc(&s.law, s.alpha, &x0, s.n_samples(100_000), s.mc()?)?;
    let exact: Vec<f64> = green_exact(&s.law.spectrum(s.q, s.d)?, s.alpha)?
        .row(x0.rank())
        .iter()
        .map(|z| z.re)
        .collect();
    eprintln!("total variation {:.3e}", total_variation(&emp, &exact));
    let rows = emp
        .iter()
        .zip(&exact)
        .enumerate()
        .map(|(y, (e, x))| vec![y.to_string(), num(*e), num(*x)])
        .collect();
    Ok(Report::Csv {
        header: vec!["y".into(), "empirical".into(), "exact".into()],
        rows,
    })
}

pub fn sample_field_cmd(s: &Settings) -> Result<Report, CliError> {
    let spec = s.law.spectrum(s.q, s.d)?;
    let samples = sample_field(&spec, s.alpha, s.n_samples(1), s.mc()?)?;
    let mut rows = Vec::new();
    for (i, sample) in samples.iter().enumerate() {
        for (x, z) in sample.g.iter().enumerate() {
            rows.push(vec![i.to_string(), x.to_string(), num(z.re), num(z.im)]);
        }
    }
    Ok(Report::Csv {
        header: vec!["sample".into(), "x".into(), "re".into(), "im".into()],
        rows,
    })
}

pub fn krawtchouk(s: &Settings) -> Result<Report, CliError> {
    let degree = s.degree(s.d.min(4));
    let table = KrawtchoukTable::with_max_degree(s.q, s.d, degree)?;
    let values: Vec<Value> = (0..table.degrees().len())
        .map(|li| {
            let row: Vec<Complex64> = (0..table.counts().len()).map(|mi| table.value(li, mi)).collect();
            complexes(&row)
        })
        .collect();
    let h: Vec<f64> = (0..table.degrees().len()).map(|li| table.h(li)).collect();
    let checks = vec![check("orthogonality", orthogonality_check(s.q, s.d, degree)?, s.tol(1e-9))];
    Ok(Report::Json(json!({
        "q": s.q,
        "d": s.d,
        "degrees": table.degrees(),
        "counts": table.counts(),
        "h": h,
        "values": values,
        "pass": all_pass(&checks),
        "checks": checks,
    })))
}

pub fn kappa_cmd(s: &Settings) -> Result<Report, CliError> {
    let table = KrawtchoukTable::with_max_degree(s.q, s.d, s.degree(s.d))?;
    let b = kappa(&s.law, &table)?;
    let mut checks = Vec::new();
    let route_a = if table.is_complete() {
        let a = kappa_route_a(&s.law, &table)?;
        let gap = a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        checks.push(check("route_a_vs_route_b", gap, s.tol(1e-10)));
        Some(complexes(&a))
    } else {
        None
    };
    let lambda: Vec<Complex64> = b.iter().map(|&k| green_eigenvalue(k, s.alpha)).collect();
    Ok(Report::Json(json!({
        "q": s.q,
        "d": s.d,
        "alpha": s.alpha,
        "degrees": table.degrees(),
        "kappa": complexes(&b),
        "kappa_route_a": route_a,
        "lambda": complexes(&lambda),
        "pass": all_pass(&checks),
        "checks": checks,
    })))
}

fn degree_list(s: &Settings, default_degree: usize) -> Result<Vec<Vec<usize>>, CliError> {
    match &s.config.l {
        Some(l) if l.len() + 1 != s.q => Err(CliError::Config(format!("/l: needs q - 1 = {} entries", s.q - 1))),
        Some(l) => Ok(vec![l.clone()]),
        None => Ok(bounded_vectors(s.q - 1, s.degree(default_degree))),
    }
}

pub fn pointproc(s: &Settings) -> Result<Report, CliError> {
    let spec = PointProcessSpec::from_law(&s.law, s.q, s.alpha, s.phi)?;
    let degrees = degree_list(s, 3)?;
    let mc = match s.config.seed {
        Some(_) => Some(s.mc()?),
        None => None,
    };
    let mut worst_half: f64 = 0.0;
    let mut moments = Vec::new();
    for l in &degrees {
        let m = y_moment(&spec, l)?;
        worst_half = worst_half.max(half_process_identity(&spec, l)?);
        let est = match mc {
            Some(mc) => {
                let e = y_moment_mc(&spec, l, s.n_samples(100_000), mc)?;
                json!({ "mean": complex(e.mean), "se_re": e.se_re, "se_im": e.se_im, "n": e.n })
            }
            None => Value::Null,
        };
        moments.push(json!({ "l": l, "moment": complex(m.value), "non_real": m.non_real, "mc": est }));
    }
    let checks = vec![check("half_process_identity", worst_half, s.tol(1e-12))];
    Ok(Report::Json(json!({
        "q": s.q,
        "alpha": s.alpha,
        "phi": s.phi,
        "moments": moments,
        "pass": all_pass(&checks),
        "checks": checks,
    })))
}

fn partition_json(s: &Settings) -> Result<Value, CliError> {
    let p = partition_function(&s.law.spectrum(s.q, s.d)?, s.alpha, s.beta)?;
    Ok(json!({ "J": p.j, "logJ": p.log_j, "Z": p.z, "logZ": p.log_z }))
}

pub fn hamiltonian(s: &Settings) -> Result<Report, CliError> {
    let spec = s.law.spectrum(s.q, s.d)?;
    let n = dense_guard(s)?;
    let mut identity: f64 = 0.0;
    let mut diagonal: f64 = 0.0;
    for g in probe_vectors(n) {
        let c = hamiltonian_identity_check(&spec, s.alpha, &g)?;
        identity = identity.max(c.residual / (1.0 + c.lhs.abs()));
        let h = hamiltonian_value(&g, &spec, s.alpha)?;
        diagonal = diagonal.max((h - 0.5 * g.iter().map(|v| v * v).sum::<f64>()).abs());
    }
    let tol = s.tol(1e-10);
    let checks = vec![check("identity", identity, tol), check("diagonalization", diagonal, tol)];
    let mut out = partition_json(s)?;
    out["pass"] = json!(all_pass(&checks));
    out["checks"] = json!(checks);
    Ok(Report::Json(out))
}

pub fn partition(s: &Settings) -> Result<Report, CliError> {
    let spec = s.law.spectrum(s.q, s.d)?;
    let part = partition_function(&spec, s.alpha, s.beta)?;
    let mut checks = Vec::new();
    if spec.lattice().size() <= 4 {
        let zq = partition_quadrature(&spec, s.alpha, s.beta, 48)?.exp();
        let z = part.log_z.exp();
        checks.push(check("quadrature", (z - zq).abs() / z.max(1.0), s.tol(1e-6)));
    }
    if s.law.is_exchangeable() && spec.is_real() {
        let grouped = partition_function_grouped(&s.law, s.q, s.d, s.alpha, s.beta)?;
        checks.push(check(
            "multinomial_grouping",
            (grouped.log_z - part.log_z).abs() / part.log_z.abs().max(1.0),
            s.tol(1e-10),
        ));
    }
    if s.config.seed.is_some() && spec.lattice().size() <= 16 {
        let est = partition_mc(&spec, s.alpha, s.beta, s.n_samples(100_000), s.mc()?)?;
        checks.push(check(
            "partition_mc_se",
            standardized(est.estimate.mean - est.exact, est.estimate.se),
            s.tol(4.0),
        ));
    }
    let mut out = partition_json(s)?;
    out["pass"] = json!(all_pass(&checks));
    out["checks"] = json!(checks);
    Ok(Report::Json(out))
}

pub fn potts(s: &Settings) -> Result<Report, CliError> {
    let spec = s.law.spectrum(s.q, s.d)?;
    dense_guard(s)?;
    let synth = FieldSynth::new(&spec, s.alpha)?;
    let pspec = PottsSpec::delta(s.beta)?;
    let log_ez = log_expected_partition(&pspec, &synth)?;
    let free = free_energy_expansion(&pspec, &synth)?;
    let mut checks = Vec::new();
    let mut sample_gibbs = Value::Null;
    let mut mc_json = Value::Null;
    if s.config.seed.is_some() {
        let mc = s.mc()?;
        let one = sample_field(&spec, s.alpha, 1, mc)?.remove(0);
        sample_gibbs = match gibbs(&pspec, &one) {
            Ok(pmf) => json!(pmf),
            Err(e) => json!({ "unavailable": e.to_string() }),
        };
        let est = expected_partition_mc(&pspec, &synth, s.n_samples(100_000), mc)?;
        let exact = log_ez.exp();
        let z = standardized(est.mean.re - exact.re, est.se_re).max(standardized(est.mean.im - exact.im, est.se_im));
        checks.push(check("expected_partition_mc_se", z, s.tol(4.0)));
        mc_json = json!({ "mean": complex(est.mean), "se_re": est.se_re, "se_im": est.se_im, "n": est.n });
    }
    let mut out = partition_json(s)?;
    out["log_expected_partition"] = complex(log_ez);
    out["free_energy_expansion"] = complex(free);
    out["gibbs"] = sample_gibbs;
    out["expected_partition_mc"] = mc_json;
    out["pass"] = json!(all_pass(&checks));
    out["checks"] = json!(checks);
    Ok(Report::Json(out))
}

pub fn limit(s: &Settings) -> Result<Report, CliError> {
    let q = s.q;
    let big_l = s.degree(DEFAULT_MAX_DEGREE);
    let m = s.vector("/m", &s.config.m, q - 1, 0.0)?;
    let n = s.vector("/n", &s.config.n, q - 1, 0.0)?;
    let table = LimitPolyTable::new(q, big_l)?;
    let values = table.values(&full_type_vector(&m))?;
    let spec = PointProcessSpec::from_law(&s.law, q, s.alpha, 1.0)?;
    let lg = limit_green_density(&m, &n, &spec, big_l)?;
    let finite = if q == 2 {
        let f = limit_green_finite_d(&s.law, q, s.d, s.alpha, &m, &n, big_l)?;
        json!({ "d": s.d, "value": complex(f.value), "m": f.m, "n": f.n })
    } else {
        Value::Null
    };
    let log_z = if s.alpha > 0.0 {
        let z = s.vector("/z", &s.config.z, q - 1, 0.5)?;
        let ds: Vec<usize> = if q == 2 { vec![4, 6, 8, 10, 12] } else { vec![4, 6, 8] };
        let fit = fit_limit_constant(q, &z, s.alpha, s.beta, &ds, 1000, s.config.seed.unwrap_or(0))?;
        serde_json::to_value(fit).expect("fit serializes")
    } else {
        Value::Null
    };
    Ok(Report::Json(json!({
        "q": q,
        "degree": big_l,
        "m": m,
        "n": n,
        "limit_krawtchouk": { "degrees": table.degrees(), "values": complexes(&values) },
        "limit_green": { "value": complex(lg.value), "degenerate": lg.degenerate, "terms": lg.terms },
        "finite_d_green": finite,
        "log_z_fit": log_z,
    })))
}

/// Deterministic regression suite at `(q, d)`: each entry is a residual
/// compared against its tolerance (`--tol` overrides all of them).
pub fn verify(s: &Settings) -> Result<Report, CliError> {
    let (q, d) = (s.q, s.d);
    let lattice = Lattice::new(q, d)?;
    let n = lattice.size();
    if n > DENSE_LIMIT {
        return Err(CliError::Config(format!("/d: {n} states exceed the dense limit {DENSE_LIMIT}")));
    }
    let alpha = if s.alpha > 0.0 { s.alpha } else { 0.5 };
    let mut checks = Vec::new();

    let f = ComplexLattice::from_fn(lattice, |x| Complex64::new((0.7 * x as f64).sin(), (0.3 * x as f64).cos()));
    let back = dft(&dft(&f, Direction::Forward), Direction::Inverse);
    checks.push(check("dft_round_trip", back.max_abs_diff(&f), s.tol(1e-10)));
    if n <= 256 {
        let fast = dft(&f, Direction::Forward);
        checks.push(check("dft_fast_vs_naive", fast.max_abs_diff(&dft_naive(&f, Direction::Forward)), s.tol(1e-10)));
    }

    let mut row_sum: f64 = 0.0;
    let mut green_rows: f64 = 0.0;
    let mut green_direct: f64 = 0.0;
    let mut kappa_gap: f64 = 0.0;
    let mut half: f64 = 0.0;
    let mut identity: f64 = 0.0;
    let mut grouped: f64 = 0.0;
    let table = KrawtchoukTable::new(q, d)?;
    for (_, law) in IncrementLaw::builtin_families(q, d) {
        let spec = law.spectrum(q, d)?;
        row_sum = row_sum.max((transition_matrix(&spec)?.row_sum() - 1.0).abs());
        let g = green_exact(&spec, alpha)?;
        for x in [0, n / 2, n - 1] {
            let total: Complex64 = g.row(x).iter().sum();
            green_rows = green_rows.max((total - 1.0).norm());
            for y in [0, n - 1] {
                green_direct = green_direct.max((g.entry(x, y) - green_entry_direct(&spec, alpha, x, y)?).norm());
            }
        }
        if law.is_exchangeable() {
            let a = kappa_route_a(&law, &table)?;
            let b = kappa(&law, &table)?;
            kappa_gap = kappa_gap.max(a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max));
        }
        if let Ok(pspec) = PointProcessSpec::from_law(&law, q, alpha, 1.0) {
            for l in bounded_vectors(q - 1, 2) {
                half = half.max(half_process_identity(&pspec, &l)?);
            }
        }
        if spec.is_real() {
            for g in probe_vectors(n) {
                let c = hamiltonian_identity_check(&spec, alpha, &g)?;
                identity = identity.max(c.residual / (1.0 + c.lhs.abs()));
            }
            if law.is_exchangeable() {
                let direct = partition_function(&spec, alpha, s.beta)?.log_z;
                let by_class = partition_function_grouped(&law, q, d, alpha, s.beta)?.log_z;
                grouped = grouped.max((direct - by_class).abs() / direct.abs().max(1.0));
            }
        }
    }
    checks.push(check("kernel_row_sums", row_sum, s.tol(1e-12)));
    checks.push(check("green_row_sums", green_rows, s.tol(1e-10)));
    checks.push(check("green_direct_entries", green_direct, s.tol(1e-10)));
    checks.push(check("kappa_routes", kappa_gap, s.tol(1e-10)));
    checks.push(check("half_process_identity", half, s.tol(1e-12)));
    checks.push(check("hamiltonian_identity", identity, s.tol(1e-10)));
    checks.push(check("multinomial_grouping", grouped, s.tol(1e-10)));
    checks.push(check("krawtchouk_orthogonality", orthogonality_check(q, d, d)?, s.tol(1e-8)));
    checks.push(check("krawtchouk_duality", duality_check(q, d)?, s.tol(1e-8)));
    checks.push(check("hermite_orthogonality", hermite_orthogonality_residual(6, q), s.tol(1e-8)));

    Ok(Report::Json(json!({
        "q": q,
        "d": d,
        "alpha": alpha,
        "pass": all_pass(&checks),
        "checks": checks,
    })))
}
