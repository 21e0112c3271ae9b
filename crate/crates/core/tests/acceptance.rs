//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use qfield::asymptotics::{
    full_type_vector, hermite_orthogonality_residual, limit_krawtchouk_series, transform_field_cov_closed,
    transform_field_cov_series, transform_identity_check, LimitPolyTable,
};
use qfield::field::{field_covariance_mc, invert_field, FieldSynth};
use qfield::green::{green_exact, green_mc, total_variation};
use qfield::hamiltonian::{
    expected_partition_mc, fit_limit_constant, hamiltonian_identity_check, hamiltonian_value, log_expected_partition,
    partition_function, partition_quadrature, PottsSpec,
};
use qfield::krawtchouk::{count_chain_kernel, duality_check, kappa, lump_by_type, orthogonality_check, KrawtchoukTable};
use qfield::mc::McConfig;
use qfield::pointproc::{
    half_process_identity, log_laplace, log_laplace_mc, y_moment, y_moment_mc, PointProcessSpec, XiAtom,
};
use qfield::walk::{transition_matrix, IncrementLaw};
use qfield::zqd::{Lattice, MultiIndex};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn lazy(q: usize) -> IncrementLaw {
    IncrementLaw::lazy(q, &[(0.3, 0.2), (0.7, 0.9)]).unwrap()
}

fn kernel_validity() -> Outcome {
    let mut worst_row: f64 = 0.0;
    let mut worst_neg: f64 = 0.0;
    let mut cases = 0;
    for q in [2, 3, 4, 5, 6, 7, 8, 16, 64, 4096] {
        let mut d = 1;
        while Lattice::new(q, d).is_ok_and(|l| l.size() <= 4096) {
            for (_, law) in IncrementLaw::builtin_families(q, d) {
                let kernel = transition_matrix(&law.spectrum(q, d).unwrap()).unwrap();
                worst_row = worst_row.max((kernel.row_sum() - 1.0).abs());
                worst_neg = worst_neg.max(-kernel.raw_min());
                cases += 1;
            }
            d += 1;
        }
    }
    Outcome::new(
        worst_row <= 1e-10 && worst_neg <= 1e-12,
        format!("{cases} kernels, max |row sum - 1| = {worst_row:.1e}, max negativity = {worst_neg:.1e}"),
    )
}

fn green_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut bound_ok = true;
    for q in 2..=3 {
        for d in 1..=3 {
            for (_, law) in IncrementLaw::builtin_families(q, d) {
                let spec = law.spectrum(q, d).unwrap();
                let p = transition_matrix(&spec).unwrap().to_dense().unwrap();
                for alpha in [0.3f64, 0.6, 0.9] {
                    let steps = ((1e-14f64).ln() / alpha.ln()).ceil() as i32;
                    let n = p.nrows();
                    let mut power = DMatrix::<f64>::identity(n, n);
                    let mut series = DMatrix::<f64>::zeros(n, n);
                    for t in 0..=steps {
                        series += &power * alpha.powi(t);
                        power = &power * &p;
                    }
                    series *= 1.0 - alpha;
                    let exact = green_exact(&spec, alpha).unwrap().to_dense().unwrap();
                    let err = (0..n * n)
                        .map(|i| (exact[i] - Complex64::new(series[i], 0.0)).norm())
                        .fold(0.0, f64::max);
                    let tail = alpha.powi(steps + 1);
                    bound_ok &= err <= tail + 1e-12;
                    worst = worst.max(err);
                }
            }
        }
    }
    Outcome::new(worst <= 1e-9 && bound_ok, format!("max entry error {worst:.1e}"))
}

fn mc_green() -> Outcome {
    let law = lazy(2);
    let x0 = MultiIndex::zeros(2, 2);
    let emp = green_mc(&law, 0.6, &x0, 1_000_000, McConfig::new(2024)).unwrap();
    let row: Vec<f64> = green_exact(&law.spectrum(2, 2).unwrap(), 0.6)
        .unwrap()
        .row(0)
        .iter()
        .map(|z| z.re)
        .collect();
    let tv = total_variation(&emp, &row);
    Outcome::new(tv <= 0.005, format!("TV = {tv:.2e}"))
}

fn krawtchouk_orthogonality() -> Outcome {
    let mut orth: f64 = 0.0;
    let mut dual: f64 = 0.0;
    for q in 2..=4 {
        for d in 1..=6 {
            orth = orth.max(orthogonality_check(q, d, 4).unwrap());
            dual = dual.max(duality_check(q, d).unwrap());
        }
    }
    Outcome::new(
        orth <= 1e-9 && dual <= 1e-9,
        format!("orthogonality {orth:.1e}, duality {dual:.1e}"),
    )
}

fn count_chain_lumping() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for q in 2..=3 {
        for d in 1..=4 {
            let table = KrawtchoukTable::new(q, d).unwrap();
            for (_, law) in IncrementLaw::builtin_families(q, d) {
                if !law.is_exchangeable() {
                    continue;
                }
                let kap = kappa(&law, &table).unwrap();
                let p = transition_matrix(&law.spectrum(q, d).unwrap()).unwrap().to_dense().unwrap();
                let mut power = p.clone();
                for t in 1..=3u32 {
                    let lumped = lump_by_type(&power, q, d).unwrap();
                    let grouped = count_chain_kernel(&kap, &table, t).unwrap();
                    worst = worst.max((lumped - grouped).abs().max());
                    power = &power * &p;
                    cases += 1;
                }
            }
        }
    }
    Outcome::new(worst <= 1e-9, format!("{cases} kernels, max error {worst:.1e}"))
}

fn random_pmf(rng: &mut ChaCha8Rng, q: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..q).map(|_| rng.random::<f64>() + 0.05).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn point_process_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst_z: f64 = 0.0;
    let mut worst_half: f64 = 0.0;
    let mut worst_laplace: f64 = 0.0;
    for case in 0..10u64 {
        let q = rng.random_range(2..=4);
        let atoms = rng.random_range(1..=3);
        let weights = random_pmf(&mut rng, atoms);
        let nu: Vec<XiAtom> = weights
            .iter()
            .map(|&w| XiAtom::from_pmf(&random_pmf(&mut rng, q), w).unwrap())
            .collect();
        let alpha = rng.random_range(0.1..0.8);
        let spec = PointProcessSpec::new(alpha, 1.0, nu).unwrap();
        let l: Vec<usize> = (1..q).map(|_| rng.random_range(0..=2)).collect();
        let exact = y_moment(&spec, &l).unwrap().value;
        let est = y_moment_mc(&spec, &l, 1_000_000, McConfig::new(1000 + case)).unwrap();
        let z = |diff: f64, se: f64| if diff <= 1e-12 { 0.0 } else { diff / se };
        worst_z = worst_z
            .max(z((est.mean.re - exact.re).abs(), est.se_re))
            .max(z((est.mean.im - exact.im).abs(), est.se_im));
        worst_half = worst_half.max(half_process_identity(&spec, &l).unwrap());
        let varphi: Vec<f64> = (1..q).map(|_| rng.random_range(0.0..2.0)).collect();
        let lap = log_laplace(&spec, &varphi).unwrap();
        let lap_mc = log_laplace_mc(&spec, &varphi, 1_000_000, McConfig::new(2000 + case)).unwrap();
        worst_laplace = worst_laplace.max(z((lap_mc.mean - lap).abs(), lap_mc.se));
    }
    Outcome::new(
        worst_z <= 4.0 && worst_half <= 1e-12 && worst_laplace <= 4.0,
        format!("moments {worst_z:.2} SE, half-process {worst_half:.1e}, Laplace {worst_laplace:.2} SE"),
    )
}

fn field_covariance() -> Outcome {
    let mut worst_se: f64 = 0.0;
    let mut worst_trip: f64 = 0.0;
    for (q, d) in [(2, 3), (3, 2)] {
        let synth = FieldSynth::new(&lazy(q).spectrum(q, d).unwrap(), 0.6).unwrap();
        let n = synth.lattice().size();
        let acc = field_covariance_mc(&synth, 100_000, McConfig::new(77), n, |s| s.g.clone());
        worst_se = worst_se.max(acc.max_standardized_error(|x, y| synth.covariance(x, y), 1e-12));
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        for _ in 0..20 {
            let sample = synth.sample(&mut rng);
            let back = invert_field(&synth, &sample).unwrap();
            let err = back
                .iter()
                .zip(&sample.driver)
                .map(|(b, z)| (b - z).norm())
                .fold(0.0, f64::max);
            worst_trip = worst_trip.max(err);
        }
    }
    Outcome::new(
        worst_se <= 5.0 && worst_trip <= 1e-10,
        format!("covariance {worst_se:.2} SE, round trip {worst_trip:.1e}"),
    )
}

fn hamiltonian_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut identity: f64 = 0.0;
    let mut diagonal: f64 = 0.0;
    for q in 2..=3 {
        for d in 1..=3 {
            let spec = lazy(q).spectrum(q, d).unwrap();
            let n = spec.lattice().size();
            for _ in 0..100 {
                let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                let check = hamiltonian_identity_check(&spec, 0.6, &g).unwrap();
                identity = identity.max(check.residual / (1.0 + check.lhs.abs()));
                let h = hamiltonian_value(&g, &spec, 0.6).unwrap();
                diagonal = diagonal.max((h - 0.5 * g.iter().map(|v| v * v).sum::<f64>()).abs());
            }
        }
    }
    let mut quad: f64 = 0.0;
    for (law, q, d) in [
        (IncrementLaw::Deterministic { v: vec![1] }, 2, 1),
        (lazy(2), 2, 1),
        (lazy(2), 2, 2),
        (IncrementLaw::Uniform, 2, 2),
    ] {
        let spec = law.spectrum(q, d).unwrap();
        for (alpha, beta) in [(0.5, 1.0), (0.3, 2.0), (0.8, 0.7)] {
            let z = partition_function(&spec, alpha, beta).unwrap().log_z.exp();
            let zq = partition_quadrature(&spec, alpha, beta, 48).unwrap().exp();
            quad = quad.max((z - zq).abs() / z.max(1.0));
        }
    }
    let swap = IncrementLaw::Deterministic { v: vec![1] }.spectrum(2, 1).unwrap();
    let j = partition_function(&swap, 0.5, 1.0).unwrap().j.unwrap();
    let j_err = (j - 0.5773503).abs();
    Outcome::new(
        identity <= 1e-10 && diagonal <= 1e-10 && quad <= 1e-6 && j_err <= 1e-6,
        format!("identity {identity:.1e}, diagonalization {diagonal:.1e}, quadrature {quad:.1e}, J = {j:.7}"),
    )
}

fn log_z_limit() -> Outcome {
    let fit = fit_limit_constant(2, &[0.5], 0.5, 1.0, &[4, 6, 8, 10, 12], 2000, 909).unwrap();
    let gaps: Vec<String> = fit.better_gaps().iter().map(|g| format!("{g:.2e}")).collect();
    Outcome::new(
        fit.gaps_decrease(),
        format!(
            "fitted c = {:.4} [{:.4}, {:.4}], better constant {} (displayed {:.3}), gaps {}",
            fit.c,
            fit.interval.0,
            fit.interval.1,
            fit.better_constant,
            fit.displayed_constant,
            gaps.join(" ")
        ),
    )
}

fn clt_layer() -> Outcome {
    let hermite = (2..=4).map(|q| hermite_orthogonality_residual(8, q)).fold(0.0, f64::max);
    let mut routes: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    for q in 2..=4 {
        let table = LimitPolyTable::new(q, 6).unwrap();
        for _ in 0..5 {
            let m_plus: Vec<f64> = (1..q).map(|_| rng.random_range(-0.8..0.8)).collect();
            let m = full_type_vector(&m_plus);
            let a = limit_krawtchouk_series(&m, 6).unwrap();
            let b = table.values(&m).unwrap();
            routes = routes.max(a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max));
        }
    }
    let transform = transform_identity_check(&[0.0, 1.0], &[1], 1_000_000, McConfig::new(1011))
        .unwrap()
        .standardized;
    let spec = PointProcessSpec::from_law(&lazy(2), 2, 0.5, 1.0).unwrap();
    let a = transform_field_cov_closed(&[0.0, 0.3], &[0.0, 0.5], &spec).unwrap();
    let b = transform_field_cov_series(&[0.0, 0.3], &[0.0, 0.5], &spec, 12).unwrap();
    let cov = (a.value - b.value).norm();
    Outcome::new(
        hermite <= 1e-10 && routes <= 1e-9 && transform <= 4.0 && cov <= 1e-6,
        format!("Hermite {hermite:.1e}, routes {routes:.1e}, transform {transform:.2} SE, field covariance {cov:.1e}"),
    )
}

fn potts() -> Outcome {
    let (d, beta) = (2, 0.3);
    let mut closed: f64 = 0.0;
    let mut worst_se: f64 = 0.0;
    for (i, law) in [IncrementLaw::Uniform, lazy(2)].into_iter().enumerate() {
        let synth = FieldSynth::new(&law.spectrum(2, d).unwrap(), 0.5).unwrap();
        let sigma2 = synth.covariance(0, 0).re;
        let pspec = PottsSpec::delta(beta).unwrap();
        let log_ez = log_expected_partition(&pspec, &synth).unwrap();
        let want = d as f64 * 2f64.ln() + beta * beta / 2.0 * sigma2;
        closed = closed.max((log_ez.re - want).abs() + log_ez.im.abs());
        let est = expected_partition_mc(&pspec, &synth, 100_000, McConfig::new(1100 + i as u64)).unwrap();
        worst_se = worst_se.max((est.mean.re - want.exp()).abs() / est.se_re);
    }
    Outcome::new(
        closed <= 1e-12 && worst_se <= 4.0,
        format!("closed form {closed:.1e}, Monte Carlo {worst_se:.2} SE"),
    )
}

type Criterion = (&'static str, f64, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("kernel validity", 10.0, kernel_validity),
        ("green exactness", 10.0, green_exactness),
        ("MC green", 30.0, mc_green),
        ("Krawtchouk orthogonality", 60.0, krawtchouk_orthogonality),
        ("count-chain lumping", 30.0, count_chain_lumping),
        ("point-process identities", 60.0, point_process_identities),
        ("field covariance", 60.0, field_covariance),
        ("Hamiltonian identity and diagonalization", 30.0, hamiltonian_checks),
        ("log Z limit", 120.0, log_z_limit),
        ("CLT layer", 120.0, clt_layer),
        ("Potts", 60.0, potts),
    ];
    let mut failures = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Outcome::new(false, format!("panicked: {msg}"))
            });
        let secs = start.elapsed().as_secs_f64();
        let pass = outcome.pass && secs <= *budget;
        if !pass {
            failures += 1;
        }
        println!(
            "{} {:>2} {name}: {} ({secs:.1} s of {budget:.0} s)",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            outcome.detail
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
