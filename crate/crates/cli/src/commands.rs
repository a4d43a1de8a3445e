//! The four subcommands: solve, simulate, compare, oracle.
//!
//! Outputs are self-describing (they embed the resolved config and seed)
//! and written atomically via a temp file rename, so failed runs leave no
//! partial files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use serde_json::json;

use mot_envelope::envelope::write_face_csv;
use mot_envelope::oracle::call_spread_value;
use mot_envelope::simulator::{mc_value, run_path, OptimalPolicy};
use mot_envelope::strategy::{optimal_direction, PlanJson, PlanOrStop};
use mot_envelope::{
    solve_recursive, EnvelopeMethod, EnvelopeSolution, Face, McEstimate, ModifiedCost, PayoffSpec,
    ProbabilityVector, SpreadParams,
};

use crate::config::{MethodChoice, Resolved};

/// Exit codes promised by the interface contract.
pub const EXIT_SCHEMA: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_UNRELIABLE: i32 = 4;
pub const EXIT_COMPARE: i32 = 5;

pub fn atomic_write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn face_label(face: &Face) -> String {
    face.indices()
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("-")
}

fn config_header(res: &Resolved) -> String {
    format!(
        "# config: {}\n# master_seed: {}\n",
        serde_json::to_string(&res.config).expect("config serializes"),
        res.config.mc.master_seed
    )
}

fn method_name(m: EnvelopeMethod) -> &'static str {
    match m {
        EnvelopeMethod::Hull => "hull",
        EnvelopeMethod::Obstacle => "obstacle",
    }
}

#[derive(Serialize)]
struct FaceSummary {
    face: Vec<usize>,
    order: usize,
    nodes: usize,
    sweeps: usize,
    residual: f64,
    range: f64,
    csv: String,
}

pub fn cmd_solve(res: &Resolved, out_dir: &Path) -> anyhow::Result<i32> {
    let mut solutions = Vec::new();
    for method in res.config.method.methods() {
        let sol = solve_recursive(&res.grid, &res.cost, res.config.m, method, &res.tol)?;
        solutions.push(sol);
    }
    // build every artifact in memory first so a failure writes nothing
    let header = config_header(res);
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut summaries = Vec::new();
    for sol in &solutions {
        let mut face_rows = Vec::new();
        for (face, field) in sol.fields() {
            let name = format!("{}_face_{}.csv", method_name(sol.method()), face_label(face));
            let mut buf = header.clone().into_bytes();
            write_face_csv(field, &mut buf)?;
            files.push((name.clone(), buf));
            face_rows.push(FaceSummary {
                face: face.indices().to_vec(),
                order: face.order(),
                nodes: field.grid().node_count(),
                sweeps: field.stats().sweeps,
                residual: field.stats().residual,
                range: field.range(),
                csv: name,
            });
        }
        let value = sol.value_at(&res.initial)?;
        summaries.push(json!({
            "method": method_name(sol.method()),
            "value_at_initial": value,
            "faces": face_rows,
        }));
    }
    let agreement = if solutions.len() == 2 {
        Some(agreement_report(&solutions[0], &solutions[1])?)
    } else {
        None
    };
    let summary = json!({
        "config": res.config,
        "master_seed": res.config.mc.master_seed,
        "methods": summaries,
        "agreement": agreement,
    });
    files.push((
        "solve_summary.json".to_string(),
        serde_json::to_string_pretty(&summary)?.into_bytes(),
    ));
    for (name, bytes) in files {
        atomic_write(&out_dir.join(name), &bytes)?;
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(0)
}

fn agreement_report(a: &EnvelopeSolution, b: &EnvelopeSolution) -> anyhow::Result<serde_json::Value> {
    let mut per_face = Vec::new();
    let mut global: f64 = 0.0;
    for (face, fa) in a.fields() {
        let fb = b.field(face)?;
        let mut max_diff: f64 = 0.0;
        for (x, y) in fa.values().iter().zip(fb.values()) {
            max_diff = max_diff.max((x - y).abs());
        }
        global = global.max(max_diff);
        per_face.push(json!({"face": face.indices(), "max_abs_diff": max_diff}));
    }
    Ok(json!({"max_abs_diff": global, "per_face": per_face}))
}

pub fn cmd_simulate(res: &Resolved, out_dir: &Path, trace_paths: u64) -> anyhow::Result<i32> {
    let method = match res.config.method {
        MethodChoice::Obstacle => EnvelopeMethod::Obstacle,
        _ => EnvelopeMethod::Hull,
    };
    let sol = solve_recursive(&res.grid, &res.cost, res.config.m, method, &res.tol)?;
    let policy = OptimalPolicy::new(&sol, &res.tol)?;
    let mc = ModifiedCost::new(res.grid.clone(), res.face.clone(), res.cost.clone())?;
    let est = mc_value(
        &policy,
        &mc,
        &res.initial,
        res.config.mc.n_paths,
        res.config.mc.master_seed,
        res.config.mc.dt,
        &res.tol,
    )?;
    let envelope_value = sol.value_at(&res.initial)?;
    let out = json!({
        "config": res.config,
        "estimate": est,
        "envelope_value": envelope_value,
        "abs_diff": (est.mean - envelope_value).abs(),
        "within_3se": (est.mean - envelope_value).abs() <= 3.0 * est.std_error + 1e-9,
    });
    atomic_write(
        &out_dir.join("simulate.json"),
        serde_json::to_string_pretty(&out)?.as_bytes(),
    )?;
    println!("{}", serde_json::to_string_pretty(&out)?);
    if trace_paths > 0 {
        let mut buf = config_header(res).into_bytes();
        write!(buf, "path_id,stage,r")?;
        for i in 0..res.face.order() {
            write!(buf, ",w{i}")?;
        }
        writeln!(buf, ",stopped")?;
        for path in 0..trace_paths {
            let outcome = run_path(
                &policy,
                &mc,
                &res.initial,
                path,
                res.config.mc.master_seed,
                res.config.mc.dt,
                &res.tol,
                true,
            )?;
            for row in outcome.trace.as_deref().unwrap_or(&[]) {
                write!(buf, "{path},{},{}", row.stage, row.r)?;
                for w in &row.weights {
                    write!(buf, ",{w}")?;
                }
                writeln!(buf, ",{}", u8::from(row.stopped))?;
            }
        }
        atomic_write(&out_dir.join("traces.csv"), &buf)?;
    }
    Ok(if est.unreliable { EXIT_UNRELIABLE } else { 0 })
}

/// Whether the closed-form call-spread surface applies to this run.
fn oracle_params(res: &Resolved) -> Option<(f64, f64)> {
    if res.grid.atoms() != [-1.0, 0.0, 1.0] || res.face.order() != 3 {
        return None;
    }
    match res.config.payoff {
        PayoffSpec::CallSpread { k1, k2 }
            if (-1.0..1.0).contains(&k1) && (0.0..1.0).contains(&k2) =>
        {
            Some((k1, k2))
        }
        _ => None,
    }
}

pub fn cmd_compare(res: &Resolved, out_dir: &Path) -> anyhow::Result<i32> {
    let hull = solve_recursive(&res.grid, &res.cost, res.config.m, EnvelopeMethod::Hull, &res.tol)?;
    let obstacle = solve_recursive(
        &res.grid,
        &res.cost,
        res.config.m,
        EnvelopeMethod::Obstacle,
        &res.tol,
    )?;
    let oracle = oracle_params(res);
    let cmp = &res.config.compare;

    // grid-wide solver agreement
    let agreement = agreement_report(&hull, &obstacle)?;
    let max_hull_obstacle = agreement["max_abs_diff"].as_f64().unwrap_or(f64::NAN);

    // closed form against both solvers over the full-face grid
    let mut max_oracle_diff: Option<f64> = None;
    if let Some((k1, k2)) = oracle {
        let field = hull.field(&res.face)?;
        let obs_field = obstacle.field(&res.face)?;
        let mut worst: f64 = 0.0;
        for idx in 0..field.grid().node_count() {
            let w = field.grid().node_weights(idx);
            let reference = call_spread_value(k1, k2, w[1], w[2]);
            worst = worst.max((field.values()[idx] - reference).abs());
            worst = worst.max((obs_field.values()[idx] - reference).abs());
        }
        max_oracle_diff = Some(worst);
    }

    // pointwise table with MC and the strategy dump
    let policy = OptimalPolicy::new(&hull, &res.tol)?;
    let mc_base = ModifiedCost::new(res.grid.clone(), res.face.clone(), res.cost.clone())?;
    let n_paths = cmp.n_paths.min(res.config.mc.n_paths).max(100);
    // between lattice nodes the interpolated envelope undershoots the true
    // one by up to a Lipschitz cell width; MC rides the true value
    let max_atom = mc_base
        .face_atoms()
        .iter()
        .fold(0.0f64, |a, x| a.max(x.abs()));
    let interp_margin = res.cost.lipschitz_constant() * max_atom * std::f64::consts::SQRT_2
        / res.config.m as f64;
    let mut rows = Vec::new();
    let mut mc_ok = true;
    for weights in sample_points(&res.initial) {
        let z = ProbabilityVector::new(res.face.clone(), weights.clone())?;
        let hull_v = hull.value_at(&z)?;
        let obst_v = obstacle.value_at(&z)?;
        let oracle_v = oracle.map(|(k1, k2)| call_spread_value(k1, k2, weights[1], weights[2]));
        let est: McEstimate = mc_value(
            &policy,
            &mc_base,
            &z,
            n_paths,
            res.config.mc.master_seed,
            res.config.mc.dt,
            &res.tol,
        )?;
        let mc_dev = (est.mean - hull_v).abs();
        let mc_tol = cmp.mc_sigmas * est.std_error + cmp.mc_slack + interp_margin;
        mc_ok &= mc_dev <= mc_tol;
        let field = hull.field(&res.face)?;
        let strategy = match optimal_direction(field, &mc_base, &z, &res.tol)? {
            PlanOrStop::Stop => json!({"stop": true}),
            PlanOrStop::Plan(plan) => serde_json::to_value(PlanJson::new(&weights, &plan, &mc_base)?)?,
        };
        rows.push(json!({
            "point": weights,
            "hull": hull_v,
            "obstacle": obst_v,
            "oracle": oracle_v,
            "mc": est,
            "mc_abs_dev": mc_dev,
            "strategy": strategy,
        }));
    }

    let solver_ok = max_hull_obstacle <= cmp.hull_obstacle_tol;
    let oracle_ok = max_oracle_diff.is_none_or(|d| d <= cmp.oracle_tol);
    let pass = solver_ok && oracle_ok && mc_ok;
    let out = json!({
        "config": res.config,
        "master_seed": res.config.mc.master_seed,
        "agreement": agreement,
        "max_oracle_diff": max_oracle_diff,
        "rows": rows,
        "pass": {
            "hull_obstacle": solver_ok,
            "oracle": oracle_ok,
            "mc": mc_ok,
            "all": pass,
        },
    });
    atomic_write(
        &out_dir.join("compare.json"),
        serde_json::to_string_pretty(&out)?.as_bytes(),
    )?;

    println!(
        "{:<30} {:>12} {:>12} {:>12} {:>12} {:>10}",
        "point", "hull", "obstacle", "oracle", "mc", "mc_se"
    );
    for row in &rows {
        let pt = row["point"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| format!("{:.3}", v.as_f64().unwrap()))
            .collect::<Vec<_>>()
            .join(",");
        println!(
            "{:<30} {:>12.6} {:>12.6} {:>12} {:>12.6} {:>10.2e}",
            pt,
            row["hull"].as_f64().unwrap(),
            row["obstacle"].as_f64().unwrap(),
            row["oracle"]
                .as_f64()
                .map_or("-".to_string(), |v| format!("{v:.6}")),
            row["mc"]["mean"].as_f64().unwrap(),
            row["mc"]["std_error"].as_f64().unwrap(),
        );
    }
    println!(
        "max |hull - obstacle| = {max_hull_obstacle:.3e} (tol {:.1e}); oracle diff = {:?}; pass = {pass}",
        cmp.hull_obstacle_tol, max_oracle_diff
    );
    Ok(if pass { 0 } else { EXIT_COMPARE })
}

/// The initial point plus a deterministic fan of interior and boundary
/// probes on the same face.
fn sample_points(initial: &ProbabilityVector) -> Vec<Vec<f64>> {
    let order = initial.face().order();
    let mut points = vec![initial.weights().to_vec()];
    points.push(vec![1.0 / order as f64; order]);
    for r in 0..order {
        let mut w = vec![0.0; order];
        w[r] = 1.0;
        points.push(w);
    }
    // midpoint between the initial point and each vertex
    for r in 0..order {
        let w: Vec<f64> = initial
            .weights()
            .iter()
            .enumerate()
            .map(|(i, &x)| 0.5 * x + if i == r { 0.5 } else { 0.0 })
            .collect();
        points.push(w);
    }
    points
}

pub fn cmd_oracle(
    k1: f64,
    k2: f64,
    beta: Option<f64>,
    gamma: Option<f64>,
    grid: Option<usize>,
    out: Option<PathBuf>,
) -> anyhow::Result<i32> {
    if let Some(m) = grid {
        let m = m.max(2);
        let mut buf = format!("# call spread surface: k1 = {k1}, k2 = {k2}, grid = {m}\n")
            .into_bytes();
        writeln!(buf, "beta,gamma,fbar,value")?;
        for i in 0..=m {
            for j in 0..=(m - i) {
                let beta = i as f64 / m as f64;
                let gamma = j as f64 / m as f64;
                let s = 2.0 * gamma + beta - 1.0;
                let fbar = (s - k1).max(0.0) - (s - k2).max(0.0);
                let value = call_spread_value(k1, k2, beta, gamma);
                writeln!(buf, "{beta},{gamma},{fbar},{value}")?;
            }
        }
        let path = out.unwrap_or_else(|| PathBuf::from("call_spread_surface.csv"));
        atomic_write(&path, &buf)?;
        println!("wrote {}", path.display());
        return Ok(0);
    }
    let (beta, gamma) = match (beta, gamma) {
        (Some(b), Some(g)) => (b, g),
        _ => anyhow::bail!("oracle needs either --beta and --gamma or --grid"),
    };
    let params = SpreadParams::new(k1, k2, beta, gamma).map_err(anyhow::Error::from)?;
    let strategy = params.strategy();
    let out_json = json!({
        "k1": k1, "k2": k2, "beta": beta, "gamma": gamma,
        "value": params.value(),
        "strategy": strategy,
    });
    println!("{}", serde_json::to_string_pretty(&out_json)?);
    Ok(0)
}
