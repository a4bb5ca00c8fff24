//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use lmlc::divergence::{divergence, PhiFunction};
use lmlc::estimate::{asymptotics, fit, fit_shared, h_matrix_partitioned, FitOptions};
use lmlc::inference::{chisq_cdf, chisq_quantile, gof_df, nested_df, tstar, tstar_nested};
use lmlc::model::{build_square_model, LmlcSpec, ModelKind, SamplingScheme};
use lmlc::simulate::{
    gamma_gradient, run_power_study, run_size_study, sample_multinomial, Fixtures,
    SimulationConfig, Strategy,
};
use lmlc::table::ContingencyTable;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PRINTED_PROBABILITIES: [f64; 16] = [
    0.08161, 0.03156, 0.01647, 0.01050, //
    0.03156, 0.21104, 0.05204, 0.01418, //
    0.01647, 0.05204, 0.22186, 0.03156, //
    0.01050, 0.01418, 0.03156, 0.17278,
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn square(kind: ModelKind) -> LmlcSpec {
    build_square_model(kind, 4, SamplingScheme::multinomial(16)).unwrap()
}

fn truth() -> DVector<f64> {
    Fixtures::default().null_probabilities().unwrap()
}

fn theta_at(spec: &LmlcSpec, m: &DVector<f64>) -> DVector<f64> {
    spec.theta_for_log_means(&m.map(f64::ln)).unwrap()
}

fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

fn random_square_table(rng: &mut ChaCha8Rng, lo: u64, hi: u64) -> ContingencyTable {
    let counts = (0..16).map(|_| rng.random_range(lo..=hi)).collect();
    ContingencyTable::new(counts, vec![4, 4]).unwrap()
}

// ---------------------------------------------------------------------------

fn c1_fixture_probabilities() -> Outcome {
    let f = Fixtures::default();
    let dev = |p: DVector<f64>| {
        p.iter()
            .zip(PRINTED_PROBABILITIES)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let s = dev(f.null_probabilities().unwrap());
    let mh = dev(f.mh_probabilities().unwrap());
    outcome(
        s <= 5e-5 && mh <= 5e-5,
        format!("max |p - reference|: symmetry basis {s:.2e}, reference-cell basis {mh:.2e} (tol 5e-5)"),
    )
}

fn c2_degrees_of_freedom() -> Outcome {
    let side = 4usize;
    let m = truth();
    let mut worst: f64 = 0.0;
    let mut ok = true;
    let mut parts = Vec::new();
    for (kind, expected) in [
        (ModelKind::MarginalHomogeneity, side - 1),
        (ModelKind::QuasiSymmetry, (side - 1) * (side - 2) / 2),
        (ModelKind::OrdinalQuasiSymmetry, (side + 1) * (side - 2) / 2),
    ] {
        let spec = square(kind);
        let tr = tstar(&spec, &theta_at(&spec, &m), 1.0).unwrap().trace();
        worst = worst.max((tr - expected as f64).abs());
        ok &= (tr - expected as f64).abs() <= 1e-8 && gof_df(&spec).unwrap() == expected;
        parts.push(format!("{kind} {tr:.10}"));
    }
    let s = square(ModelKind::Symmetry);
    let th_s = theta_at(&s, &m);
    for (outer, expected) in [
        (ModelKind::QuasiSymmetry, (side - 1) * (side - 2) / 2),
        (ModelKind::OrdinalQuasiSymmetry, 1),
    ] {
        let o = square(outer);
        let tr = tstar_nested(&o, &s, &th_s, 1.0).unwrap().trace();
        worst = worst.max((tr - expected as f64).abs());
        ok &= (tr - expected as f64).abs() <= 1e-8 && nested_df(&o, &s).unwrap() == expected;
        parts.push(format!("S|{outer} {tr:.10}"));
    }
    outcome(ok, format!("{}; max deviation {worst:.1e} (tol 1e-8)", parts.join(", ")))
}

fn c3_projector_algebra() -> Outcome {
    let m = truth();
    let mut worst: f64 = 0.0;
    for kind in [
        ModelKind::Saturated,
        ModelKind::Symmetry,
        ModelKind::OrdinalQuasiSymmetry,
        ModelKind::QuasiSymmetry,
        ModelKind::MarginalHomogeneity,
    ] {
        let spec = square(kind);
        let t = tstar(&spec, &theta_at(&spec, &m), 1.0).unwrap().tstar;
        worst = worst.max(max_abs(&(&t * &t - &t))).max(max_abs(&(&t - t.transpose())));
    }
    let (sat, oqs, s) = (
        square(ModelKind::Saturated),
        square(ModelKind::OrdinalQuasiSymmetry),
        square(ModelKind::Symmetry),
    );
    let tb = tstar_nested(&sat, &oqs, &theta_at(&oqs, &m), 1.0).unwrap().tstar;
    let tb1 = tstar_nested(&oqs, &s, &theta_at(&s, &m), 1.0).unwrap().tstar;
    let orth = max_abs(&(&tb1 * &tb));
    outcome(
        worst <= 1e-8 && orth <= 1e-8,
        format!("idempotency/symmetry {worst:.1e}, chain orthogonality {orth:.1e} (tol 1e-8)"),
    )
}

/// `I⁻¹ − I⁻¹ B (Bᵀ I⁻¹ B)⁻¹ Bᵀ I⁻¹` from scratch.
fn h_general(x: &DMatrix<f64>, l: &DMatrix<f64>, ms: &DVector<f64>) -> DMatrix<f64> {
    let d = DMatrix::from_diagonal(ms);
    let fi = (x.transpose() * &d * x).try_inverse().unwrap();
    let b = x.transpose() * &d * l;
    let inner = (b.transpose() * &fi * &b).try_inverse().unwrap();
    &fi - &fi * &b * inner * b.transpose() * &fi
}

fn c4_partitioned_forms() -> Outcome {
    let m = truth();
    let spec = square(ModelKind::MarginalHomogeneity).with_leading_constraints().unwrap();
    let th = theta_at(&spec, &m);
    let (x, l) = (spec.design().clone(), spec.l_matrix());
    let q = l.ncols();
    let d = DMatrix::from_diagonal(&m);
    let xx = (x.transpose() * &d * &x).try_inverse().unwrap();
    let ll = (l.transpose() * &d * &l).try_inverse().unwrap();
    let mut oracle = xx;
    let mut corner = oracle.view_mut((0, 0), (q, q));
    corner -= ll;
    let general = h_general(&x, &l, &m);
    let lib = asymptotics(&spec, &th, 1.0).unwrap().h_matrix;
    let part = h_matrix_partitioned(&spec, &th, 1.0).unwrap();
    let e_mh = max_abs(&(&lib - &oracle))
        .max(max_abs(&(&part - &oracle)))
        .max(max_abs(&(&general - &oracle)));

    // Multinomial loglinear model: H = (Xᵀ D X)⁻¹ − 1 ⊕ 0.
    let s = square(ModelKind::Symmetry);
    let xs = s.design().clone();
    let mut single_stratum = (xs.transpose() * &d * &xs).try_inverse().unwrap();
    single_stratum[(0, 0)] -= 1.0;
    let lib_s = asymptotics(&s, &theta_at(&s, &m), 1.0).unwrap().h_matrix;
    let e_s = max_abs(&(&lib_s - &single_stratum));
    outcome(
        e_mh <= 1e-10 && e_s <= 1e-10,
        format!("constrained H vs partitioned form {e_mh:.1e}, single-stratum form {e_s:.1e} (tol 1e-10)"),
    )
}

fn kl(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| if x > 0.0 { x * (x / y).ln() } else { 0.0 } - x + y)
        .sum()
}

fn c5_likelihood_decomposition() -> Outcome {
    let (s, qs) = (Arc::new(square(ModelKind::Symmetry)), Arc::new(square(ModelKind::QuasiSymmetry)));
    let phi = PhiFunction::kullback();
    let opts = FitOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0034);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = random_square_table(&mut rng, 1, 20);
        let nv = n.to_vector();
        let fs = fit_shared(s.clone(), &n, &phi, &opts).unwrap();
        let fq = fit_shared(qs.clone(), &n, &phi, &opts).unwrap();
        if !(fs.converged && fq.converged) {
            return outcome(false, "a fit did not converge");
        }
        let gap = kl(&nv, &fs.m_hat) - kl(&nv, &fq.m_hat) - kl(&fq.m_hat, &fs.m_hat);
        worst = worst.max(gap.abs());
    }
    outcome(worst <= 1e-8, format!("max |dD - D(m_QS, m_S)| {worst:.1e} over 200 tables (tol 1e-8)"))
}

fn c6_closed_forms() -> Outcome {
    let s = square(ModelKind::Symmetry);
    let sat = square(ModelKind::Saturated);
    let opts = FitOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0006);
    let mut sym: f64 = 0.0;
    let mut satd: f64 = 0.0;
    for _ in 0..100 {
        let n = random_square_table(&mut rng, 1, 30);
        let c = n.counts();
        let f = fit(&s, &n, &PhiFunction::kullback(), &opts).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expected = (c[4 * i + j] + c[4 * j + i]) as f64 / 2.0;
                sym = sym.max((f.m_hat[4 * i + j] - expected).abs());
            }
        }
    }
    for _ in 0..20 {
        let n = random_square_table(&mut rng, 1, 30);
        for lambda in [-0.5, 0.0, 2.0 / 3.0, 1.0, 2.0] {
            let f = fit(&sat, &n, &PhiFunction::power(lambda), &opts).unwrap();
            satd = satd.max((&f.m_hat - n.to_vector()).amax());
        }
    }
    outcome(
        sym <= 1e-6 && satd <= 1e-10,
        format!("symmetry MLE {sym:.1e} (tol 1e-6), saturated {satd:.1e} (tol 1e-10)"),
    )
}

fn c7_estimator_covariance() -> Outcome {
    let spec = Arc::new(square(ModelKind::Symmetry));
    let p = truth();
    let total = 5000u64;
    let nf = total as f64;
    let theta0 = theta_at(&spec, &(&p * nf));
    let h = asymptotics(&spec, &theta0, nf).unwrap().h_matrix;
    let reps = 2000;
    let t = spec.t();
    let mut draws = DMatrix::zeros(reps, t);
    let opts = FitOptions {
        validate: false,
        ..FitOptions::default()
    };
    for r in 0..reps {
        let n = sample_multinomial(&p, total, vec![4, 4], 7_000 + r as u64).unwrap();
        let f = fit_shared(spec.clone(), &n, &PhiFunction::kullback(), &opts).unwrap();
        let z = (&f.theta_hat - &theta0) * nf.sqrt();
        draws.row_mut(r).copy_from(&z.transpose());
    }
    let mean = draws.row_mean();
    let mut cov = DMatrix::zeros(t, t);
    for r in 0..reps {
        let c = draws.row(r) - &mean;
        cov += c.transpose() * c;
    }
    cov /= (reps - 1) as f64;
    let rel = (&cov - &h).norm() / h.norm();
    outcome(rel <= 0.15, format!("relative Frobenius error {rel:.4} (tol 0.15)"))
}

fn sim_config(
    lambda1: Vec<f64>,
    lambda2: Vec<f64>,
    strategy: Strategy,
    points: Vec<usize>,
) -> SimulationConfig {
    SimulationConfig {
        n_grid: vec![550],
        replicates: 10_000,
        alpha: 0.05,
        lambda1_grid: lambda1,
        lambda2_grid: lambda2,
        master_seed: 1,
        strategies: vec![strategy],
        power_points: points,
        workers: None,
    }
}

/// Sizes within `ε` of `α` on the logit scale.
fn logit_band(alpha: f64, eps: f64) -> (f64, f64) {
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let inv = |z: f64| 1.0 / (1.0 + (-z).exp());
    let c = logit(1.0 - alpha);
    (1.0 - inv(c + eps), 1.0 - inv(c - eps))
}

fn c8_simulated_sizes() -> Outcome {
    let cfg = sim_config(vec![0.0, 1.0], vec![0.0, 2.0 / 3.0], Strategy::Unconditional, vec![]);
    let report = run_size_study(&cfg, &Fixtures::default()).unwrap();
    let (lo, hi) = logit_band(0.05, 0.35);
    let mut ok = true;
    let mut parts = Vec::new();
    for (l1, l2, target) in [(1.0, 2.0 / 3.0, 0.0480), (0.0, 0.0, 0.0530)] {
        let size = report.size(Strategy::Unconditional, l1, l2, 550).unwrap().size;
        ok &= (size - target).abs() <= 0.010 && (lo..=hi).contains(&size);
        parts.push(format!("({l1:.3},{l2:.3}) {size:.4} vs {target:.4}"));
    }
    outcome(ok, format!("{}; tol 0.010, band [{lo:.4}, {hi:.4}]", parts.join(", ")))
}

fn c9_simulated_powers() -> Outcome {
    let cfg = sim_config(vec![0.0], vec![2.0 / 3.0], Strategy::ConditionalOqs, vec![3, 9]);
    let report = run_power_study(&cfg, &Fixtures::default()).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (point, target) in [(3, 0.7292), (9, 0.9630)] {
        let p = report
            .power(Strategy::ConditionalOqs, 0.0, 2.0 / 3.0, 550, point)
            .unwrap()
            .power;
        ok &= (p - target).abs() <= 0.015;
        parts.push(format!("i={point} {p:.4} vs {target:.4}"));
    }
    outcome(ok, format!("{} (tol 0.015)", parts.join(", ")))
}

fn c10_gamma_cross_check() -> Outcome {
    let size = 0.0418;
    let powers = [
        0.1258, 0.3942, 0.6995, 0.1096, 0.3984, 0.7074, //
        0.4147, 0.7191, 0.9598, 0.4480, 0.7651, 0.9797,
    ];
    let displacements = [0.45, 0.7, 0.9, 0.45, 0.7, 0.9, 0.5, 0.7, 1.0, -0.5, -0.7, -1.0];
    let g = gamma_gradient(size, &powers, &displacements).unwrap();
    let oracle = (powers
        .iter()
        .zip(displacements)
        .map(|(b, d)| ((b - size) / d).powi(2))
        .sum::<f64>()
        / 12.0)
        .sqrt()
        / size;
    let target = 18.3816;
    outcome(
        (g - target).abs() <= 0.05 && (g - oracle).abs() <= 1e-12,
        format!("gamma {g:.4} (direct evaluation {oracle:.4}) vs {target} (tol 0.05)"),
    )
}

/// Lanczos `ln Γ`.
fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma by series or continued fraction.
fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let front = (-x + a * x.ln() - ln_gamma(a)).exp();
    if x < a + 1.0 {
        let (mut term, mut sum, mut ap) = (1.0 / a, 1.0 / a, a);
        while term.abs() > sum.abs() * 1e-17 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
        }
        sum * front
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            d = if d.abs() < tiny { tiny } else { d };
            c = b + an / c;
            c = if c.abs() < tiny { tiny } else { c };
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        1.0 - front * h
    }
}

fn oracle_quantile(p: f64, df: usize) -> f64 {
    let a = df as f64 / 2.0;
    let (mut lo, mut hi) = (0.0, 1.0);
    while gamma_p(a, hi / 2.0) < p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gamma_p(a, mid / 2.0) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn c11_chi_square() -> Outcome {
    let q = chisq_quantile(0.95, 3).unwrap();
    let oracle = oracle_quantile(0.95, 3);
    let mut round_trip: f64 = 0.0;
    let mut vs_oracle: f64 = 0.0;
    for df in [1, 2, 3, 4, 5, 7, 10, 15, 20, 30, 50] {
        for p in [0.001, 0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.975, 0.99, 0.999] {
            let x = chisq_quantile(p, df).unwrap();
            round_trip = round_trip.max((chisq_cdf(x, df).unwrap() - p).abs());
            vs_oracle = vs_oracle.max((x - oracle_quantile(p, df)).abs() / x.max(1.0));
        }
    }
    outcome(
        (q - 7.814728).abs() <= 1e-5 && (q - oracle).abs() <= 1e-5 && round_trip <= 1e-8,
        format!(
            "q(0.95, 3) = {q:.6} (oracle {oracle:.6}); round trip {round_trip:.1e} (tol 1e-8); grid vs oracle {vs_oracle:.1e}"
        ),
    )
}

fn c12_divergence_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0012);
    let mut negative = 0usize;
    let mut identity = 0usize;
    let mut cont: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.random_range(2..=10);
        let a: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..10.0)).collect();
        let b: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..10.0)).collect();
        let mut z = a.clone();
        z[0] = 0.0;
        let lambda = rng.random_range(-1.0..=3.0);
        let phi = PhiFunction::power(lambda);
        for (x, y) in [(&a, &b), (&z, &b), (&b, &z)] {
            if divergence(x, y, &phi).unwrap() < 0.0 {
                negative += 1;
            }
        }
        if divergence(&a, &a, &phi).unwrap() != 0.0 || divergence(&a, &b, &phi).unwrap() <= 0.0 {
            identity += 1;
        }
        let kull: f64 = a.iter().zip(&b).map(|(x, y)| x * (x / y).ln() - x + y).sum();
        let ml: f64 = a.iter().zip(&b).map(|(x, y)| y * (y / x).ln() - y + x).sum();
        let d0 = divergence(&a, &b, &PhiFunction::power(1e-6)).unwrap();
        let d1 = divergence(&a, &b, &PhiFunction::power(-1.0 + 1e-6)).unwrap();
        cont = cont.max((d0 - kull).abs() / (1.0 + kull)).max((d1 - ml).abs() / (1.0 + ml));
    }
    outcome(
        negative == 0 && identity == 0 && cont <= 1e-4,
        format!("negative {negative}, identity violations {identity}, continuity {cont:.1e} (tol 1e-4)"),
    )
}

fn main() -> ExitCode {
    let secs = |s: u64| Some(Duration::from_secs(s));
    let criteria = [
        Criterion { id: 1, name: "fixture probabilities", budget: secs(1), run: c1_fixture_probabilities },
        Criterion { id: 2, name: "degrees of freedom", budget: secs(1), run: c2_degrees_of_freedom },
        Criterion { id: 3, name: "projector algebra", budget: secs(1), run: c3_projector_algebra },
        Criterion { id: 4, name: "partitioned covariance forms", budget: secs(1), run: c4_partitioned_forms },
        Criterion { id: 5, name: "likelihood ratio decomposition", budget: None, run: c5_likelihood_decomposition },
        Criterion { id: 6, name: "closed-form estimates", budget: None, run: c6_closed_forms },
        Criterion { id: 7, name: "estimator covariance", budget: None, run: c7_estimator_covariance },
        Criterion { id: 8, name: "simulated sizes", budget: None, run: c8_simulated_sizes },
        Criterion { id: 9, name: "simulated powers", budget: None, run: c9_simulated_powers },
        Criterion { id: 10, name: "average gradient", budget: secs(1), run: c10_gamma_cross_check },
        Criterion { id: 11, name: "chi-square numerics", budget: secs(1), run: c11_chi_square },
        Criterion { id: 12, name: "divergence properties", budget: secs(1), run: c12_divergence_properties },
    ];
    let mut failed = 0;
    for c in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                outcome(false, format!("panicked: {msg}"))
            });
        let elapsed = start.elapsed();
        let in_budget = c.budget.is_none_or(|b| elapsed <= b);
        let pass = result.pass && in_budget;
        if !pass {
            failed += 1;
        }
        println!(
            "{} {:>2} {:<32} {}{} [{:.2} s]",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            result.detail,
            if in_budget { "" } else { " (over time budget)" },
            elapsed.as_secs_f64()
        );
    }
    println!("{} of 12 criteria passed", 12 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
