//! One function per subcommand. Each writes its artifacts through [`Run`] and
//! leaves the manifest to the caller.

use kmslab::experiments::{nontriviality_check, regularity_probe, Datum};
use kmslab::exponents::{holder_conjugate, regularized_exponents};
use kmslab::solver::{k_continuation, picard_system_solve, SolveResult};
use kmslab::{
    admissibility_check, apriori_scaling_sweep, eta_threshold_exponent, linf_scaling_probe, sigma_exponent,
    verify_growth_bounds, zone_classify, Field,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::{ProbeKind, RunConfig, SweepMode};
use crate::output::Run;
use crate::{CliError, Outcome, EXIT_HYPOTHESIS, EXIT_INADMISSIBLE, EXIT_OK};

const DEFAULT_SAMPLES: usize = 100_000;
const DEFAULT_Q_GRID: [f64; 4] = [2.0, 4.0, 8.0, 16.0];

/// Fails before any output is created when a section the command needs is
/// absent.
pub fn check_sections(command: &str, cfg: &RunConfig) -> Result<(), CliError> {
    let solve_like = ["problem", "nonlinearity", "grid", "solve", "datum"];
    let needed: Vec<&str> = match command {
        "zones" => vec!["problem"],
        "check-nl" => vec!["nonlinearity"],
        "solve" => solve_like.to_vec(),
        "sweep" | "continuation" => [&solve_like[..], &["sweep"]].concat(),
        "probe" => {
            let mut v = [&solve_like[..], &["probe"]].concat();
            if cfg.probe.as_ref().is_some_and(|p| p.kind == ProbeKind::Nontriviality) {
                v.push("sweep");
            }
            v
        }
        other => return Err(CliError::config(format!("unknown command {other}"))),
    };
    let present = |s: &str| match s {
        "problem" => cfg.problem.is_some(),
        "nonlinearity" => cfg.nonlinearity.is_some(),
        "grid" => cfg.grid.is_some(),
        "solve" => cfg.solve.is_some(),
        "datum" => cfg.datum.is_some(),
        "sweep" => cfg.sweep.is_some(),
        "probe" => cfg.probe.is_some(),
        _ => unreachable!(),
    };
    let absent: Vec<String> = needed.iter().filter(|s| !present(s)).map(|s| format!("[{s}]")).collect();
    if absent.is_empty() {
        Ok(())
    } else {
        Err(CliError::config(format!("`{command}` needs the section(s) {}", absent.join(", "))))
    }
}

fn fmt_opt(v: Result<f64, kmslab::KmsError>) -> String {
    v.map_or_else(|_| "n/a".to_string(), |x| x.to_string())
}

pub fn zones(cfg: &RunConfig, run: &mut Run) -> Result<Outcome, CliError> {
    let params = cfg.problem("zones")?;
    let verdict = admissibility_check(&params);
    let q = params.coupling_exponent();
    let regularized = regularized_exponents(params.m, params.p, params.n_dim);
    let mut rows: Vec<(String, String)> = vec![
        ("N".into(), params.n_dim.to_string()),
        ("p".into(), params.p.to_string()),
        ("r".into(), params.r.to_string()),
        ("theta".into(), params.theta.to_string()),
        ("m".into(), params.m.to_string()),
        ("p_star".into(), params.p_star().to_string()),
        ("p_star_conj".into(), fmt_opt(holder_conjugate(params.p_star()))),
        ("m_conj".into(), fmt_opt(holder_conjugate(params.m))),
        ("coupling_exponent".into(), q.to_string()),
        ("coupling_conj".into(), fmt_opt(holder_conjugate(q))),
        ("m_star_p".into(), fmt_opt(regularized.clone().map(|r| r.0))),
        ("m_double_star_p".into(), fmt_opt(regularized.clone().map(|r| r.1))),
        ("sigma".into(), sigma_exponent(&params).to_string()),
        ("eta_threshold_q".into(), fmt_opt(eta_threshold_exponent(params.p, params.r, params.theta))),
        ("admissible".into(), verdict.admissible.to_string()),
    ];
    let zone = if verdict.admissible {
        let z = zone_classify(&params)?;
        rows.push(("zone".into(), format!("{:?}", z.zone)));
        rows.push(("v_sobolev".into(), z.v_sobolev.to_string()));
        rows.push(("t_v".into(), z.t_v.to_string()));
        rows.push(("lebesgue_upper".into(), z.lebesgue_upper.to_string()));
        rows.push(("near_thresholds".into(), z.near_thresholds.join("; ")));
        Some(z)
    } else {
        rows.push(("zone".into(), "n/a".into()));
        rows.push(("reasons".into(), verdict.reasons().join("; ")));
        None
    };
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    for (k, v) in &rows {
        println!("{k:<width$}  {v}");
    }
    run.write_with("zones.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["quantity", "value"])?;
        for (k, v) in &rows {
            w.write_record([k, v])?;
        }
        w.flush()
    })?;
    run.write_json(
        "report.json",
        &json!({ "seed": cfg.seed, "admissibility": verdict, "zone": zone }),
    )?;
    if verdict.admissible {
        Ok(Outcome::ok())
    } else {
        eprintln!("inadmissible: {}", verdict.reasons().join("; "));
        Ok(Outcome {
            exit_code: EXIT_INADMISSIBLE,
            converged: None,
        })
    }
}

pub fn check_nl(cfg: &RunConfig, run: &mut Run) -> Result<Outcome, CliError> {
    let spec = cfg.nonlinearity("check-nl")?;
    let nl = cfg.nonlinearity.as_ref().expect("checked by nonlinearity()");
    let samples = nl.samples.unwrap_or(DEFAULT_SAMPLES);
    let dim = nl.sample_dim.or(cfg.grid.as_ref().map(|g| g.d)).unwrap_or(3);
    if samples == 0 || !(1..=3).contains(&dim) {
        return Err(CliError::config("need samples >= 1 and sample_dim in 1..=3"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let report = verify_growth_bounds(&spec, &mut rng, dim, samples);
    for h in &report.hypotheses {
        println!(
            "{} {:<4} worst ratio {:.6e} (claimed {})",
            if h.passed { "PASS" } else { "FAIL" },
            h.name,
            h.worst_ratio,
            h.claimed
        );
        if let Some(w) = &h.witness {
            println!("     witness x = {:?}, s = {:e}, t = {:e}, ratio = {:e}", w.x, w.s, w.t, w.ratio);
        }
    }
    run.write_json("report.json", &json!({ "seed": cfg.seed, "report": report }))?;
    Ok(Outcome {
        exit_code: if report.all_passed { EXIT_OK } else { EXIT_HYPOTHESIS },
        converged: None,
    })
}

fn write_fields(run: &mut Run, fields: &[(&str, &Field)]) -> Result<(), CliError> {
    for (name, f) in fields {
        run.write_with(&format!("fields/{name}.csv"), |buf| f.write_csv(buf))?;
    }
    Ok(())
}

fn solve_summary(res: &SolveResult) -> serde_json::Value {
    json!({
        "status": res.status,
        "converged": res.converged,
        "a_k": res.a_k,
        "outer_iterations": res.outer_iterations,
        "residual_first": res.residual_first,
        "residual_second": res.residual_second,
        "positivity": res.positivity,
        "possibly_degenerate": res.possibly_degenerate,
    })
}

fn print_solve(res: &SolveResult) {
    println!(
        "status {:?} after {} outer iterations, A_k = {:.10e}, residuals {:.3e} / {:.3e}",
        res.status, res.outer_iterations, res.a_k, res.residual_first, res.residual_second
    );
    println!(
        "min u = {:.3e}, min v = {:.3e}{}",
        res.positivity.min_u,
        res.positivity.min_v,
        if res.possibly_degenerate { ", coefficient possibly degenerate" } else { "" }
    );
}

fn warn_inadmissible(cfg: &RunConfig) -> serde_json::Value {
    let Some(params) = cfg.problem else {
        return json!(null);
    };
    let verdict = admissibility_check(&params);
    if !verdict.admissible {
        println!("warning: parameters outside the existence range: {}", verdict.reasons().join("; "));
    }
    json!(verdict)
}

pub fn solve(cfg: &RunConfig, run: &mut Run) -> Result<Outcome, CliError> {
    let params = cfg.problem("solve")?;
    let spec = cfg.nonlinearity("solve")?;
    let grid = cfg.grid("solve")?;
    let config = cfg.solve_config("solve", params.p)?;
    let f = cfg.datum("solve")?.sample(&grid)?;
    let admissibility = warn_inadmissible(cfg);
    let res = picard_system_solve(&f, &spec, params.p, &config)?;
    print_solve(&res);
    write_fields(run, &[("f", &f), ("u", &res.u), ("v", &res.v)])?;
    run.write_json(
        "report.json",
        &json!({
            "seed": cfg.seed,
            "nonlinearity": spec.label,
            "admissibility": admissibility,
            "summary": solve_summary(&res),
            "history": res.history_json(),
        }),
    )?;
    Ok(Outcome::solved(res.converged))
}

pub fn sweep(cfg: &RunConfig, run: &mut Run) -> Result<Outcome, CliError> {
    let params = cfg.problem("sweep")?;
    let spec = cfg.nonlinearity("sweep")?;
    let grid = cfg.grid("sweep")?;
    let config = cfg.solve_config("sweep", params.p)?;
    let section = cfg.sweep("sweep")?;
    let lambdas = section
        .lambdas
        .as_ref()
        .ok_or_else(|| CliError::config("sweep needs `lambdas`"))?;
    let f0 = cfg.datum("sweep")?.sample(&grid)?;
    let report = match section.mode {
        SweepMode::Apriori => apriori_scaling_sweep(&f0, lambdas, &spec, &params, &config, section.slack())?,
        SweepMode::Linf => {
            let t = section
                .t
                .ok_or_else(|| CliError::config("the linf sweep needs the datum exponent `t`"))?;
            linf_scaling_probe(&f0, lambdas, t, params.p, params.n_dim, &config, section.slack())?
        }
    };
    for s in &report.slopes {
        let slope = s.slope().map_or("n/a".to_string(), |x| format!("{x:.6}"));
        println!("{:<16} slope {slope} target {:.6} (+{}) {:?}", s.quantity, s.target, s.slack, s.verdict);
    }
    for (l, why) in &report.failures {
        println!("lambda {l}: {why}");
    }
    run.write_with("sweep.csv", |buf| report.write_csv(buf))?;
    let mut summary = report.summary_json();
    summary["seed"] = json!(cfg.seed);
    summary["mode"] = json!(section.mode);
    summary["rows"] = json!(report.rows);
    run.write_json("report.json", &summary)?;
    Ok(Outcome::solved(report.failures.is_empty()))
}

#[derive(Serialize)]
struct CauchyRow {
    k_from: f64,
    k_to: f64,
    du: f64,
    dv: f64,
}

pub fn continuation(cfg: &RunConfig, run: &mut Run) -> Result<Outcome, CliError> {
    let params = cfg.problem("continuation")?;
    let spec = cfg.nonlinearity("continuation")?;
    let grid = cfg.grid("continuation")?;
    let config = cfg.solve_config("continuation", params.p)?;
    let ks = cfg
        .sweep("continuation")?
        .k_schedule
        .as_ref()
        .ok_or_else(|| CliError::config("continuation needs `sweep.k_schedule`"))?;
    let f = cfg.datum("continuation")?.sample(&grid)?;
    let cont = k_continuation(&f, &spec, params.p, ks, &config)?;
    for (k, res) in ks.iter().zip(&cont.results) {
        println!("k = {k}: {:?}, A_k = {:.10e}", res.status, res.a_k);
    }
    for c in &cont.cauchy {
        println!("k {} -> {}: du {:.6e} dv {:.6e}", c.k_from, c.k_to, c.du, c.dv);
    }
    run.write_with("sweep.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        for c in &cont.cauchy {
            w.serialize(CauchyRow {
                k_from: c.k_from,
                k_to: c.k_to,
                du: c.du,
                dv: c.dv,
            })?;
        }
        w.flush()
    })?;
    if let Some(last) = cont.results.last() {
        write_fields(run, &[("u", &last.u), ("v", &last.v)])?;
    }
    let stages: Vec<serde_json::Value> = ks
        .iter()
        .zip(&cont.results)
        .map(|(k, r)| json!({ "k": k, "summary": solve_summary(r) }))
        .collect();
    let all_converged = cont.error.is_none() && cont.results.iter().all(|r| r.converged);
    run.write_json(
        "report.json",
        &json!({
            "seed": cfg.seed,
            "k_schedule": ks,
            "stages": stages,
            "a_trajectory": cont.a_trajectory,
            "cauchy": cont.cauchy,
            "cauchy_decreasing": cont.cauchy_decreasing(),
            "error": cont.error.as_ref().map(|e| e.to_string()),
        }),
    )?;
    if let Some(e) = &cont.error {
        eprintln!("continuation stopped: {e}");
    }
    Ok(Outcome::solved(all_converged))
}

pub fn probe(cfg: &RunConfig, run: &mut Run) -> Result<Outcome, CliError> {
    let params = cfg.problem("probe")?;
    let spec = cfg.nonlinearity("probe")?;
    let grid = cfg.grid("probe")?;
    let config = cfg.solve_config("probe", params.p)?;
    let datum: &Datum = cfg.datum("probe")?;
    let section = cfg.probe("probe")?;
    match section.kind {
        ProbeKind::Nontriviality => {
            let levels = cfg
                .sweep("probe")?
                .n_grid
                .as_ref()
                .ok_or_else(|| CliError::config("the nontriviality probe needs `sweep.n_grid`"))?;
            let v = nontriviality_check(datum, &params, &spec, grid.dim(), levels, &config)?;
            for l in &v.levels {
                println!("n = {}: |u|_1 = {:.6e}, |v|_1 = {:.6e}, converged {}", l.n_per_axis, l.l1_u, l.l1_v, l.converged);
            }
            println!("verdict {:?} (u nontrivial {}, v nontrivial {})", v.verdict, v.u_nontrivial, v.v_nontrivial);
            run.write_with("sweep.csv", |buf| {
                let mut w = csv::Writer::from_writer(buf);
                for l in &v.levels {
                    w.serialize(l)?;
                }
                w.flush()
            })?;
            run.write_json("report.json", &json!({ "seed": cfg.seed, "nontriviality": v }))?;
            Ok(Outcome::solved(v.levels.iter().all(|l| l.converged)))
        }
        ProbeKind::Regularity => {
            let q_grid = section.q_grid.clone().unwrap_or_else(|| DEFAULT_Q_GRID.to_vec());
            let f = datum.sample(&grid)?;
            let res = picard_system_solve(&f, &spec, params.p, &config)?;
            print_solve(&res);
            let report = regularity_probe(&res.u, &q_grid)?;
            for (q, n) in &report.norms {
                println!("|u|_{q} = {n:.6e}");
            }
            match report.tail_exponent {
                Some(s) => println!("tail exponent {s:.4} ({:?})", report.verdict),
                None => println!("tail exponent not resolved ({:?})", report.verdict),
            }
            write_fields(run, &[("f", &f), ("u", &res.u), ("v", &res.v)])?;
            run.write_json(
                "report.json",
                &json!({ "seed": cfg.seed, "summary": solve_summary(&res), "regularity": report }),
            )?;
            Ok(Outcome::solved(res.converged))
        }
    }
}
