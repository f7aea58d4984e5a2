//! Acceptance gate: ten numbered criteria, each printed as one PASS/FAIL line.
//! Run a subset by passing substrings of the criterion names as arguments.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use kmslab::discretization::{lq_norm, weak_residual_dual_norm, Equation, Field, Grid};
use kmslab::experiments::{
    apriori_scaling_sweep, fit_log_log, linf_scaling_probe, nontriviality_check, proof_chain_check, Datum,
    Verdict, DEFAULT_SLACK,
};
use kmslab::exponents::*;
use kmslab::nonlinearity::{pow_abs, verify_growth_bounds, Evaluator, GrowthConstants, NonlinearitySpec, Weight};
use kmslab::plaplace::{norm_monotonicity_check, pairing_lower_bound, pointwise_monotonicity_gap};
use kmslab::solver::{inner_scalar_solve, k_continuation, picard_system_solve, SolveConfig};
use kmslab::KmsError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

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

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(f64::MIN_POSITIVE)
}

fn params(n: f64, p: f64, r: f64, theta: f64, m: f64) -> ProblemParams {
    ProblemParams::new(n, p, r, theta, m).expect("well-formed parameters")
}

// Expected values below were derived by hand and frozen.
fn exponent_golden_table() -> Outcome {
    let mut cases: Vec<(&str, f64, f64)> = Vec::new();
    let mut flags: Vec<(&str, bool)> = Vec::new();

    cases.push(("p*(2,3)", sobolev_conjugate(2.0, 3.0).unwrap(), 6.0));
    cases.push(("p*(2,4)", sobolev_conjugate(2.0, 4.0).unwrap(), 4.0));
    cases.push(("p*(1.5,3)", sobolev_conjugate(1.5, 3.0).unwrap(), 3.0));
    cases.push(("conj(2)", holder_conjugate(2.0).unwrap(), 2.0));
    cases.push(("conj(6)", holder_conjugate(6.0).unwrap(), 1.2));
    cases.push(("conj(7.5)", holder_conjugate(7.5).unwrap(), 15.0 / 13.0));
    for (tau, p, n, lo, hi) in [
        (1.0, 2.0, 3.0, 1.5, 3.0),
        (1.0, 2.0, 4.0, 4.0 / 3.0, 2.0),
        (1.2, 2.0, 3.0, 2.0, 6.0),
    ] {
        let (a, b) = regularized_exponents(tau, p, n).unwrap();
        cases.push(("tau*", a, lo));
        cases.push(("tau**", b, hi));
    }
    cases.push(("sigma m=1.1", sigma_exponent(&params(3.0, 2.0, 6.0, 0.5, 1.1)), 4.0 / 3.0));
    cases.push(("sigma m=2", sigma_exponent(&params(3.0, 2.0, 6.0, 0.5, 2.0)), 1.0 / 6.5));
    // m' = r+theta+1 = 3.5 exactly at m = 1.4.
    cases.push(("sigma tie", sigma_exponent(&params(3.0, 2.0, 2.0, 0.5, 1.4)), 4.0 / 3.0));
    cases.push(("q(2,2,0.5)", eta_threshold_exponent(2.0, 2.0, 0.5).unwrap(), 11.75));
    cases.push(("q(2,3,0.5)", eta_threshold_exponent(2.0, 3.0, 0.5).unwrap(), 16.75));
    cases.push(("q(2,1,0+)", eta_threshold_exponent(2.0, 1.0, 1e-300).unwrap(), 5.0));

    let z = zone_classify(&params(3.0, 2.0, 6.0, 0.5, 1.18)).unwrap();
    cases.push(("zone I m*", z.m_star_p, 3.54 / 1.82));
    cases.push(("zone I m**", z.m_double_star_p, 3.54 / 0.64));
    cases.push(("zone I t_v", z.t_v, 45.0 / 39.75));
    cases.push(("zone I upper", z.lebesgue_upper, 1.25));
    flags.push(("zone I", z.zone == Zone::SobolevRegularized && z.v_sobolev));
    let z2 = zone_classify(&params(3.0, 2.0, 6.0, 0.5, 1.22)).unwrap();
    flags.push(("zone II", z2.zone == Zone::LebesgueRegularized));
    let z3 = zone_classify(&params(3.0, 2.0, 3.0, 0.5, 1.3)).unwrap();
    flags.push(("outside", z3.zone == Zone::OutsideRegularizingZone && !z3.v_sobolev));
    flags.push(("adm", admissibility_check(&params(3.0, 2.0, 6.0, 0.5, 1.18)).admissible));
    flags.push(("theta>=p-1", !admissibility_check(&params(3.0, 2.0, 6.0, 1.5, 1.18)).admissible));
    flags.push(("m>=N/p", !admissibility_check(&params(3.0, 2.0, 6.0, 0.5, 1.6)).admissible));

    let bad: Vec<String> = cases
        .iter()
        .filter(|(_, got, want)| !rel_close(*got, *want, 1e-12))
        .map(|(n, got, want)| format!("{n}: {got} != {want}"))
        .chain(flags.iter().filter(|f| !f.1).map(|f| format!("{} flag", f.0)))
        .collect();
    outcome(
        bad.is_empty(),
        format!("{} numeric + {} classification cases; mismatches: {:?}", cases.len(), flags.len(), bad),
    )
}

fn random_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
    (0..d).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()
}

fn monotonicity_suite() -> Outcome {
    const PAIRS: usize = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(20_241);
    let mut worst = f64::INFINITY;
    let mut violations = 0usize;
    let mut p2_worst: f64 = 0.0;
    for &p in &[1.2, 1.5, 2.0, 3.0, 4.0] {
        for d in 1..=3 {
            for _ in 0..PAIRS {
                let a = random_vector(&mut rng, d);
                let b = if rng.gen_bool(0.1) { a.iter().map(|x| x * rng.gen_range(0.9..1.1)).collect() } else { random_vector(&mut rng, d) };
                let gap = pointwise_monotonicity_gap(&a, &b, p).unwrap();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                let floor = -1e-10 * (1.0 + na + nb).powf(p);
                let scaled = gap / (1.0 + na + nb).powf(p);
                worst = worst.min(scaled);
                if gap < floor {
                    violations += 1;
                }
                if p == 2.0 {
                    let rhs = pairing_lower_bound(&a, &b, p);
                    if rhs > 0.0 {
                        p2_worst = p2_worst.max(gap.abs() / rhs);
                    }
                }
            }
        }
    }
    let mut field_fail = 0;
    let mut p2_field: f64 = 0.0;
    let grids: Vec<Arc<Grid>> = vec![Grid::unit(1, 17).unwrap(), Grid::unit(2, 9).unwrap(), Grid::unit(3, 5).unwrap()];
    for trial in 0..1000 {
        let p = [1.2, 1.5, 2.0, 3.0, 4.0][trial % 5];
        let g = &grids[trial % 3];
        let s1 = 10f64.powf(rng.gen_range(-2.0..2.0));
        let s2 = 10f64.powf(rng.gen_range(-2.0..2.0));
        let u1 = Field::from_fn(g, |_| s1 * rng.gen_range(-1.0..1.0));
        let u2 = Field::from_fn(g, |_| s2 * rng.gen_range(-1.0..1.0));
        let r = norm_monotonicity_check(&u1, &u2, p).unwrap();
        if !r.holds(1e-10) {
            field_fail += 1;
        }
        if p == 2.0 {
            p2_field = p2_field.max((r.lhs - r.rhs).abs() / r.rhs);
        }
    }
    outcome(
        violations == 0 && p2_worst <= 1e-12 && field_fail == 0 && p2_field <= 1e-12,
        format!(
            "15e6 pairs, worst scaled gap {worst:.3e}, violations {violations}; p=2 rel defect {p2_worst:.1e}; \
             field pairs failing {field_fail}/1000, p=2 field rel defect {p2_field:.1e}"
        ),
    )
}

fn manufactured_convergence() -> Outcome {
    let zero_spec = NonlinearitySpec::zero_coupling(2.0, 0.5).unwrap();
    let ns = [33usize, 65, 129, 257];
    let solve = |n: usize, p: f64| -> (f64, f64) {
        let g = Grid::unit(1, n).unwrap();
        let (src, exact): (Field, Field) = if p == 2.0 {
            (Field::from_fn(&g, |x| PI * PI * (PI * x[0]).sin()), Field::from_fn(&g, |x| (PI * x[0]).sin()))
        } else {
            (Field::from_fn(&g, |x| 4.0 * (1.0 - 2.0 * x[0]).abs()), Field::from_fn(&g, |x| x[0] * (1.0 - x[0])))
        };
        let cfg = SolveConfig::new(f64::INFINITY, p);
        let z = Field::zeros(&g);
        let s = inner_scalar_solve(1.0, &z, Equation::First, &src, &zero_spec, p, &cfg, None).unwrap();
        assert!(s.converged, "inner solve failed at n={n}, p={p}");
        (1.0 / (n - 1) as f64, lq_norm(&s.field.sub(&exact).unwrap(), 2.0).unwrap())
    };
    let p2: Vec<(f64, f64)> = ns.iter().map(|&n| solve(n, 2.0)).collect();
    let fit = fit_log_log(&p2.iter().map(|e| e.0).collect::<Vec<_>>(), &p2.iter().map(|e| e.1).collect::<Vec<_>>()).unwrap();
    let p3: Vec<f64> = ns.iter().map(|&n| solve(n, 3.0).1).collect();
    let mono = p3.windows(2).all(|w| w[1] < w[0]);
    outcome(
        (fit.slope - 2.0).abs() <= 0.2 && mono,
        format!("p=2 L2 slope {:.4}; p=3 errors {:?}", fit.slope, p3.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>()),
    )
}

fn coupled_fixed_point() -> Outcome {
    let spec = NonlinearitySpec::prototype(2.0, 0.5).unwrap();
    let run = |n: usize, relax: f64| {
        let g = Grid::unit(1, n).unwrap();
        let f = Field::from_fn(&g, |_| 1.0);
        let cfg = SolveConfig {
            relax,
            ..SolveConfig::new(10.0, 2.0)
        };
        (f.clone(), picard_system_solve(&f, &spec, 2.0, &cfg).unwrap())
    };
    let (f, a) = run(129, 0.5);
    let (_, b) = run(129, 0.5);
    let (_, c) = run(257, 0.25);
    let r1 = weak_residual_dual_norm(&a.u, &a.v, &f, &spec, 2.0, Equation::First, 10.0, 0.0).unwrap();
    let r2 = weak_residual_dual_norm(&a.u, &a.v, &f, &spec, 2.0, Equation::Second, 10.0, 0.0).unwrap();
    let bitwise = a.u.values().iter().zip(b.u.values()).all(|(x, y)| x.to_bits() == y.to_bits())
        && a.v.values().iter().zip(b.v.values()).all(|(x, y)| x.to_bits() == y.to_bits())
        && a.a_k.to_bits() == b.a_k.to_bits();
    let rel = (a.a_k - c.a_k).abs() / c.a_k;
    let pass = a.converged
        && c.converged
        && r1 <= 1e-8
        && r2 <= 1e-8
        && a.positivity.min_u >= -1e-10
        && a.positivity.min_v >= -1e-10
        && rel <= 5e-4
        && bitwise;
    outcome(
        pass,
        format!(
            "converged {} in {} outer iterations, residuals {r1:.2e}/{r2:.2e}, min u {:.2e}, min v {:.2e}, \
             A_k {:.6} vs {:.6} (rel {rel:.1e}), bitwise repeat {bitwise}",
            a.converged,
            a.outer_iterations,
            a.positivity.min_u,
            a.positivity.min_v,
            a.a_k,
            c.a_k
        ),
    )
}

fn apriori_scaling() -> Outcome {
    let prm = params(3.0, 2.0, 2.0, 0.5, 1.3);
    let lambdas = [1.0, 2.0, 4.0, 8.0, 16.0];
    let g = Grid::unit(1, 129).unwrap();
    let f0 = Field::from_fn(&g, |_| 1.0);
    let spec = NonlinearitySpec::prototype(prm.r, prm.theta).unwrap();
    let rep = apriori_scaling_sweep(&f0, &lambdas, &spec, &prm, &SolveConfig::new(100.0, 2.0), DEFAULT_SLACK).unwrap();
    let sigma = rep.exponents.sigma;
    let s1 = rep.slope("u_coupling_norm").and_then(|s| s.slope()).unwrap_or(f64::NAN);
    let s2 = rep.slope("energy_total").and_then(|s| s.slope()).unwrap_or(f64::NAN);

    let zero = NonlinearitySpec::zero_coupling(prm.r, prm.theta).unwrap();
    let null = apriori_scaling_sweep(&f0, &lambdas, &zero, &prm, &SolveConfig::new(1e8, 2.0), DEFAULT_SLACK).unwrap();
    let s0 = null.slope("u_coupling_norm").and_then(|s| s.slope()).unwrap_or(f64::NAN);
    let pass = rel_close(sigma, 4.0 / 3.0, 1e-15)
        && rep.failures.is_empty()
        && s1 <= 4.0 / 3.0 + 0.1
        && s2 <= sigma + 1.0 + 0.1
        && (s0 - 1.0 / 3.0).abs() <= 0.02;
    outcome(
        pass,
        format!(
            "sigma {sigma:.4}: u-norm slope {s1:.4} (<= {:.4}), energy slope {s2:.4} (<= {:.4}); null-coupling slope {s0:.5} (1/3 +- 0.02)",
            4.0 / 3.0 + 0.1,
            sigma + 1.1
        ),
    )
}

fn linf_scaling() -> Outcome {
    let g = Grid::unit(1, 129).unwrap();
    let f0 = Field::from_fn(&g, |x| 1.0 + x[0]);
    let lambdas = [1.0, 2.0, 4.0, 8.0, 16.0];
    let slope = |p: f64| {
        let rep = linf_scaling_probe(&f0, &lambdas, 4.0, p, 3.0, &SolveConfig::new(f64::INFINITY, p), DEFAULT_SLACK).unwrap();
        rep.slopes[0].slope().unwrap()
    };
    let (s2, s3) = (slope(2.0), slope(3.0));
    let na = matches!(
        linf_scaling_probe(&f0, &lambdas, 1.5, 2.0, 3.0, &SolveConfig::new(f64::INFINITY, 2.0), DEFAULT_SLACK),
        Err(KmsError::NotApplicable(_))
    );
    outcome(
        (s2 - 1.0).abs() <= 1e-6 && (s3 - 0.5).abs() <= 0.05 && na,
        format!("p=2 slope {s2:.9}, p=3 slope {s3:.6}, t = N/p rejected as not applicable: {na}"),
    )
}

fn k_continuation_cauchy() -> Outcome {
    let g = Grid::unit(1, 129).unwrap();
    let f = Field::from_fn(&g, |_| 1.0);
    let spec = NonlinearitySpec::prototype(2.0, 0.5).unwrap();
    let cont = k_continuation(&f, &spec, 2.0, &[1.0, 4.0, 16.0, 64.0], &SolveConfig::new(1.0, 2.0)).unwrap();
    let all_conv = cont.error.is_none() && cont.results.iter().all(|r| r.converged);
    let du: Vec<String> = cont.cauchy.iter().map(|c| format!("{:.3e}", c.du)).collect();
    let dv: Vec<String> = cont.cauchy.iter().map(|c| format!("{:.3e}", c.dv)).collect();
    outcome(
        all_conv && cont.cauchy.len() == 3 && cont.cauchy_decreasing(),
        format!("du {du:?}, dv {dv:?}, A_k {:?}", cont.a_trajectory.iter().map(|a| format!("{a:.5}")).collect::<Vec<_>>()),
    )
}

fn proof_chain() -> Outcome {
    let spec = NonlinearitySpec::prototype(2.0, 0.5).unwrap();
    let g = Grid::unit(1, 129).unwrap();
    let data = [
        Field::from_fn(&g, |_| 1.0),
        Field::from_fn(&g, |x| 5.0 * (1.0 + (3.0 * PI * x[0]).sin())),
        Field::from_fn(&g, |x| 40.0 * (x[0] - 0.3).abs().powf(-0.4)),
    ];
    let mut ok = true;
    let mut notes = Vec::new();
    for f in &data {
        let res = picard_system_solve(f, &spec, 2.0, &SolveConfig::new(10.0, 2.0)).unwrap();
        let rep = proof_chain_check(&res.u, &res.v, f, &spec, 2.0, 0.5, 8).unwrap();
        let margin = rep
            .levels
            .iter()
            .map(|l| l.majorant - l.reaction)
            .fold(f64::INFINITY, f64::min);
        ok &= res.converged && rep.all_hold && rep.levels.len() == 8;
        notes.push(format!("min margin {margin:.3e}, c1*mixed {:.4e} <= int f u {:.4e}", rep.c1_mixed, rep.f_u));
    }
    outcome(ok, notes.join("; "))
}

fn nontriviality() -> Outcome {
    let prm = params(3.0, 2.0, 6.0, 0.5, 1.18);
    let spec = NonlinearitySpec::prototype(prm.r, prm.theta).unwrap();
    let cfg = SolveConfig::new(100.0, 2.0);
    let singular = Datum::Singular {
        center: vec![0.5, 0.5],
        gamma: 1.68,
        amplitude: 1.0,
    };
    let levels = [17, 33, 65];
    let s = nontriviality_check(&singular, &prm, &spec, 2, &levels, &cfg).unwrap();
    let c = nontriviality_check(&Datum::Zero, &prm, &spec, 2, &levels, &cfg).unwrap();
    let l1: Vec<String> = s.levels.iter().map(|l| format!("({:.4e}, {:.4e})", l.l1_u, l.l1_v)).collect();
    outcome(
        s.verdict == Verdict::Pass && s.datum_in_lm && !s.datum_in_pstar_conj && c.verdict == Verdict::Fail,
        format!(
            "singular datum L1 (u, v) per level {l1:?}: {:?}; zero-datum control: {:?} (u nontrivial {})",
            s.verdict, c.verdict, c.u_nontrivial
        ),
    )
}

fn hypothesis_verifier() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let proto = NonlinearitySpec::prototype(6.0, 0.5).unwrap();
    let rp = verify_growth_bounds(&proto, &mut rng, 3, 100_000);
    let unit = rp.all_passed && rp.hypotheses.iter().all(|h| h.worst_ratio == 1.0);

    let v1: Weight = Arc::new(|x: &[f64]| 1.5 + 0.5 * (2.0 * PI * x[0]).sin());
    let v2: Weight = Arc::new(|x: &[f64]| 2.0 + x.iter().sum::<f64>().cos());
    let e1 = 1.0;
    let osc = NonlinearitySpec::weighted_oscillatory(2.0, 0.5, v1, v2, e1, 1.0, 2.0, 3.0).unwrap();
    let ro = verify_growth_bounds(&osc, &mut rng, 3, 100_000);
    let osc_ok = ro.all_passed && osc.constants.c1 >= e1 * (PI - 1.0);

    let theta = 0.5;
    let g: Evaluator = Arc::new(move |_, s, t| -s * pow_abs(t, theta + 1.0));
    let h: Evaluator = Arc::new(move |_, s, t| t.signum() * pow_abs(s, 2.0) * pow_abs(t, theta));
    let bad = NonlinearitySpec::custom(2.0, theta, g, h, GrowthConstants::UNIT).unwrap();
    let rb = verify_growth_bounds(&bad, &mut rng, 3, 100_000);
    let witness = rb.hypotheses.iter().find(|h| !h.passed).and_then(|h| h.witness.clone());
    let rejected = !rb.all_passed && witness.is_some();
    outcome(
        unit && osc_ok && rejected,
        format!(
            "prototype unit ratios {unit}; oscillatory passes {osc_ok} (c1 = {:.6}); sign-violating rejected {rejected}, witness {:?}",
            osc.constants.c1, witness
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("exponent_golden_table", exponent_golden_table),
        ("monotonicity_suite", monotonicity_suite),
        ("manufactured_convergence", manufactured_convergence),
        ("coupled_fixed_point", coupled_fixed_point),
        ("apriori_scaling", apriori_scaling),
        ("linf_scaling", linf_scaling),
        ("k_continuation_cauchy", k_continuation_cauchy),
        ("proof_chain_inequalities", proof_chain),
        ("nontriviality", nontriviality),
        ("hypothesis_verifier", hypothesis_verifier),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let out = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if out.pass { "PASS" } else { "FAIL" };
        if !out.pass {
            failed += 1;
        }
        println!("criterion {:>2} {tag} {name} [{:.1}s]: {}", i + 1, start.elapsed().as_secs_f64(), out.detail);
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
