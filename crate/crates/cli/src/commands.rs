//! Subcommand implementations.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use mfe_core::analysis::{
    build_report, forward_joint_law, percentile_y_node, ForwardLaw, ReportOptions, MEASURES,
};
use mfe_core::config::{preset, ScenarioFile, PRESET_NAMES};
use mfe_core::convergence::convergence_study;
use mfe_core::lattice::StockIndexing;
use mfe_core::market::{validate_scenario, Scenario};
use mfe_core::solver::{solve, EquilibriumSolution, SolveOptions, CLEARING_TOLERANCE};
use mfe_core::MfeError;

use crate::args::{Command, CommonArgs, CompareArgs, ConvergeArgs};
use crate::output::{ensure_dir, fmt_f, write_json, CsvOut};
use crate::{CliError, CliResult};

/// Tolerance of the forward-law normalisation check reported in manifests.
const NORMALIZATION_TOLERANCE: f64 = 1e-10;

pub fn dispatch(cmd: &Command) -> CliResult<()> {
    match cmd {
        Command::Solve(a) => cmd_solve(a).map(drop),
        Command::Analyze(a) => cmd_analyze(a).map(drop),
        Command::Converge(a) => cmd_converge(a).map(drop),
        Command::Compare(a) => cmd_compare(a).map(drop),
    }
}

/// A scenario after overrides, validation and hashing.
pub struct Resolved {
    pub file: ScenarioFile,
    pub scenario: Scenario,
    pub hash: String,
    pub source: String,
}

/// Load a scenario from a file or preset name and apply the command-line overrides.
pub fn resolve(source: &str, args: &CommonArgs) -> CliResult<Resolved> {
    let path = Path::new(source);
    let mut file = if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::ScenarioRead {
            path: path.to_path_buf(),
            source: e,
        })?;
        ScenarioFile::from_json(&text)?
    } else if PRESET_NAMES.contains(&source) {
        preset(source)?
    } else {
        return Err(CliError::Usage(format!(
            "scenario {source:?} is neither a file nor a preset (presets: {})",
            PRESET_NAMES.join(", ")
        )));
    };
    let a = &mut file.analysis;
    if let Some(s) = args.seed {
        a.seed = s;
    }
    if let Some(c) = args.percentile_convention {
        a.percentile_convention = c.into();
    }
    if let Some(c) = args.excess_return_convention {
        a.excess_return_convention = c.into();
    }
    a.path_mode |= args.path_mode;
    let scenario = validate_scenario(&file)?;
    let hash = file.content_hash();
    Ok(Resolved {
        file,
        scenario,
        hash,
        source: source.to_string(),
    })
}

pub fn solve_options(file: &ScenarioFile) -> SolveOptions {
    let base = SolveOptions {
        path_cap: file.analysis.path_cap,
        ..SolveOptions::default()
    };
    if file.analysis.path_mode {
        base.path()
    } else {
        base
    }
}

pub fn solve_resolved(r: &Resolved) -> CliResult<EquilibriumSolution> {
    Ok(solve(&r.scenario, &solve_options(&r.file))?)
}

fn indexing_label(i: StockIndexing) -> &'static str {
    match i {
        StockIndexing::Node => "node",
        StockIndexing::Path => "path",
    }
}

fn manifest(command: &str, r: &Resolved, files: &[PathBuf], extra: Value) -> Value {
    let mut names: Vec<String> = files
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    names.sort();
    json!({
        "command": command,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "scenario_hash": r.hash,
        "scenario_name": r.file.name,
        "scenario_source": r.source,
        "files": names,
        "details": extra,
    })
}

fn write_scenario_copy(dir: &Path, r: &Resolved) -> CliResult<PathBuf> {
    let v = serde_json::to_value(&r.file).expect("scenario documents serialise");
    write_json(dir, "scenario.json", &v)
}

/// Invariant checks of a solved scenario, in manifest form.
fn solution_checks(sol: &EquilibriumSolution, law: &ForwardLaw) -> Value {
    let mut p_inside = true;
    for n in 0..sol.n_steps() {
        p_inside &= sol.p_table(n).iter().all(|&p| p > 0.0 && p < 1.0);
    }
    let norm_err = (0..=law.n_steps())
        .map(|n| (law.table(n).iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    json!({
        "clearing_residual": fmt_f(sol.max_clearing_residual),
        "clearing_pass": sol.max_clearing_residual <= CLEARING_TOLERANCE,
        "probabilities_inside_unit_interval": p_inside,
        "forward_law_normalization_error": fmt_f(norm_err),
        "forward_law_normalization_pass": norm_err <= NORMALIZATION_TOLERANCE,
    })
}

/// Decision steps at which the full position table is written: report steps clamped below `N`.
fn phi_steps(r: &Resolved) -> Vec<usize> {
    let big_n = r.scenario.lattice.n_steps;
    if big_n == 0 {
        return Vec::new();
    }
    let mut v: Vec<usize> = r
        .file
        .report_steps()
        .into_iter()
        .map(|n| n.min(big_n - 1))
        .collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// `solve`: p table, position tables and manifest. Returns the written paths.
pub fn cmd_solve(a: &CommonArgs) -> CliResult<Vec<PathBuf>> {
    let r = resolve(&a.scenario, a)?;
    let sol = solve_resolved(&r)?;
    let law = forward_joint_law(&sol, &r.scenario.y_chain)?;
    ensure_dir(&a.out)?;
    let mut files = vec![write_scenario_copy(&a.out, &r)?];

    let mut w = CsvOut::create(
        &a.out,
        "p_table.csv",
        &r.hash,
        &["n", "stock_idx", "y_idx", "p_up"],
    )?;
    for n in 0..sol.n_steps() {
        let ny = sol.ny[n];
        for (i, &p) in sol.p_table(n).iter().enumerate() {
            w.row([
                n.to_string(),
                (i / ny).to_string(),
                (i % ny).to_string(),
                fmt_f(p),
            ])?;
        }
    }
    files.push(w.finish()?);

    let mut w = CsvOut::create(
        &a.out,
        "positions.csv",
        &r.hash,
        &["n", "stock_idx", "y_idx", "mean_phi", "rms_phi"],
    )?;
    for n in 0..sol.n_steps() {
        let ny = sol.ny[n];
        let weights: Vec<Vec<f64>> = sol.populations.iter().map(|p| p.cell_weights(n)).collect();
        for s in 0..sol.stock_count(n) {
            for y in 0..ny {
                let mut second = 0.0;
                for (ps, wt) in sol.populations.iter().zip(&weights) {
                    let cells = ps.phi_cells(n, ny, s, y);
                    second += ps.weight * cells.iter().zip(wt).map(|(f, w)| w * f * f).sum::<f64>();
                }
                w.row([
                    n.to_string(),
                    s.to_string(),
                    y.to_string(),
                    fmt_f(sol.mean_position(n, s, y)),
                    fmt_f(second.sqrt()),
                ])?;
            }
        }
    }
    files.push(w.finish()?);

    let steps = phi_steps(&r);
    let mut w = CsvOut::create(
        &a.out,
        "phi_table.csv",
        &r.hash,
        &[
            "n",
            "stock_idx",
            "y_idx",
            "population",
            "z_idx",
            "type_idx",
            "phi",
        ],
    )?;
    for &n in &steps {
        let ny = sol.ny[n];
        for s in 0..sol.stock_count(n) {
            for y in 0..ny {
                for (pi, ps) in sol.populations.iter().enumerate() {
                    let nt = ps.n_types();
                    for (c, &phi) in ps.phi_cells(n, ny, s, y).iter().enumerate() {
                        w.row([
                            n.to_string(),
                            s.to_string(),
                            y.to_string(),
                            pi.to_string(),
                            (c / nt).to_string(),
                            (c % nt).to_string(),
                            fmt_f(phi),
                        ])?;
                    }
                }
            }
        }
    }
    files.push(w.finish()?);

    let details = json!({
        "n_steps": sol.n_steps(),
        "indexing": indexing_label(sol.indexing),
        "populations": sol.populations.len(),
        "phi_table_steps": steps,
        "checks": solution_checks(&sol, &law),
    });
    let m = manifest("solve", &r, &files, details);
    files.push(write_json(&a.out, "manifest.json", &m)?);
    Ok(files)
}

/// `analyze`: the distributions, expected paths, excess returns and volumes.
pub fn cmd_analyze(a: &CommonArgs) -> CliResult<Vec<PathBuf>> {
    let r = resolve(&a.scenario, a)?;
    let sol = solve_resolved(&r)?;
    let an = &r.file.analysis;
    let opts = ReportOptions {
        report_steps: r.file.report_steps(),
        percentiles: an.percentiles,
        percentile_convention: an.percentile_convention,
        excess_return_convention: an.excess_return_convention,
    };
    let rep = build_report(&r.scenario, &sol, &opts)?;
    let law = forward_joint_law(&sol, &r.scenario.y_chain)?;
    let lat = &r.scenario.lattice;
    ensure_dir(&a.out)?;
    let mut files = vec![write_scenario_copy(&a.out, &r)?];

    let mut w = CsvOut::create(
        &a.out,
        "distributions.csv",
        &r.hash,
        &["n", "time", "measure", "s", "prob"],
    )?;
    for (label, d) in &rep.distributions {
        for (s, p) in d.prices.iter().zip(&d.probs) {
            w.row([
                d.step.to_string(),
                fmt_f(lat.time(d.step)),
                label.clone(),
                fmt_f(*s),
                fmt_f(*p),
            ])?;
        }
    }
    files.push(w.finish()?);

    let [lo, hi] = an.percentiles;
    let y_node =
        |n: usize, q: f64| percentile_y_node(&r.scenario.y_chain, n, q, an.percentile_convention);
    let header = [
        "n",
        "time",
        MEASURES[0],
        MEASURES[1],
        MEASURES[2],
        MEASURES[3],
        "y_top_idx",
        "y_bottom_idx",
    ];
    let mut w = CsvOut::create(&a.out, "expected_path.csv", &r.hash, &header)?;
    for row in &rep.expected_path {
        w.row([
            row.step.to_string(),
            fmt_f(row.time),
            fmt_f(row.p),
            fmt_f(row.q),
            fmt_f(row.p_top),
            fmt_f(row.p_bottom),
            y_node(row.step, hi)?.to_string(),
            y_node(row.step, lo)?.to_string(),
        ])?;
    }
    files.push(w.finish()?);

    let mut w = CsvOut::create(&a.out, "excess_return.csv", &r.hash, &header[..6])?;
    for row in &rep.excess_return {
        w.row([
            row.step.to_string(),
            fmt_f(row.time),
            fmt_f(row.p),
            fmt_f(row.q),
            fmt_f(row.p_top),
            fmt_f(row.p_bottom),
        ])?;
    }
    files.push(w.finish()?);

    let mut w = CsvOut::create(
        &a.out,
        "volume.csv",
        &r.hash,
        &["n", "time", "P", "P|Ytop", "P|Ybottom"],
    )?;
    for v in &rep.volume {
        w.row([
            v.step.to_string(),
            fmt_f(v.time),
            fmt_f(v.marginal),
            fmt_f(v.top),
            fmt_f(v.bottom),
        ])?;
    }
    files.push(w.finish()?);

    let details = json!({
        "n_steps": sol.n_steps(),
        "indexing": indexing_label(sol.indexing),
        "report_steps": opts.report_steps,
        "percentiles": an.percentiles,
        "percentile_convention": an.percentile_convention,
        "excess_return_convention": an.excess_return_convention,
        "checks": solution_checks(&sol, &law),
    });
    let m = manifest("analyze", &r, &files, details);
    files.push(write_json(&a.out, "manifest.json", &m)?);
    Ok(files)
}

/// `converge`: per-replication excess-demand MSE and the fitted log-log slope.
pub fn cmd_converge(a: &ConvergeArgs) -> CliResult<Vec<PathBuf>> {
    let r = resolve(&a.common.scenario, &a.common)?;
    let an = &r.file.analysis;
    let sizes = a.sizes.clone().unwrap_or_else(|| an.converge_sizes.clone());
    let reps = a.replications.unwrap_or(an.replications);
    let step = a.step.or(an.converge_step);
    let sol = solve_resolved(&r)?;
    let law = forward_joint_law(&sol, &r.scenario.y_chain)?;
    let rep = convergence_study(&sol, &law, &sizes, reps, an.seed, step)?;
    let out = &a.common.out;
    ensure_dir(out)?;
    let mut files = vec![write_scenario_copy(out, &r)?];

    let mut w = CsvOut::create(
        out,
        "convergence.csv",
        &r.hash,
        &["n_agents", "replication", "mse"],
    )?;
    for row in &rep.rows {
        w.row([
            row.n_agents.to_string(),
            row.replication.to_string(),
            fmt_f(row.mse),
        ])?;
    }
    files.push(w.finish()?);

    let summary = json!({
        "scenario_hash": r.hash,
        "seed": rep.seed,
        "replications": rep.replications,
        "step": rep.step,
        "degenerate": rep.degenerate,
        "slope": rep.slope.map(fmt_f),
        "slope_ci95": rep.slope_ci.map(|(l, h)| [fmt_f(l), fmt_f(h)]),
        "sizes": rep.sizes.iter().map(|s| json!({
            "n_agents": s.n_agents,
            "mean_mse": fmt_f(s.mean_mse),
            "std_error": fmt_f(s.std_error),
        })).collect::<Vec<_>>(),
    });
    files.push(write_json(out, "convergence_summary.json", &summary)?);
    let m = manifest("converge", &r, &files, json!({ "sizes": sizes }));
    files.push(write_json(out, "manifest.json", &m)?);
    Ok(files)
}

/// `compare`: paired marginal distributions and moment / tail-mass differences (B minus A).
pub fn cmd_compare(a: &CompareArgs) -> CliResult<Vec<PathBuf>> {
    let ra = resolve(&a.common.scenario, &a.common)?;
    let rb = resolve(&a.against, &a.common)?;
    if ra.scenario.lattice != rb.scenario.lattice {
        return Err(MfeError::Input("compared scenarios must share a lattice".into()).into());
    }
    let [lo, hi] = match a.tail_thresholds.as_deref() {
        Some(&[l, h]) => [l, h],
        Some(_) => return Err(CliError::Usage("--tail-thresholds takes two values".into())),
        None => ra.file.analysis.tail_thresholds,
    };
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(CliError::Usage(format!(
            "tail thresholds must satisfy lo < hi, got {lo}, {hi}"
        )));
    }
    let law_a = forward_joint_law(&solve_resolved(&ra)?, &ra.scenario.y_chain)?;
    let law_b = forward_joint_law(&solve_resolved(&rb)?, &rb.scenario.y_chain)?;
    let lat = &ra.scenario.lattice;
    let hash = format!("{}+{}", ra.hash, rb.hash);
    let out = &a.common.out;
    ensure_dir(out)?;
    let mut files = Vec::new();

    let mut w = CsvOut::create(
        out,
        "compare_distributions.csv",
        &hash,
        &["n", "s", "prob_a", "prob_b", "diff"],
    )?;
    for n in ra.file.report_steps() {
        let da = law_a.marginal_price_distribution(n)?;
        let db = law_b.marginal_price_distribution(n)?;
        for ((s, pa), pb) in da.prices.iter().zip(&da.probs).zip(&db.probs) {
            w.row([
                n.to_string(),
                fmt_f(*s),
                fmt_f(*pa),
                fmt_f(*pb),
                fmt_f(pb - pa),
            ])?;
        }
    }
    files.push(w.finish()?);

    let header = [
        "n",
        "time",
        "mean_a",
        "mean_b",
        "mean_diff",
        "var_a",
        "var_b",
        "var_diff",
        "lower_tail_a",
        "lower_tail_b",
        "lower_tail_diff",
        "upper_tail_a",
        "upper_tail_b",
        "upper_tail_diff",
    ];
    let mut w = CsvOut::create(out, "compare_moments.csv", &hash, &header)?;
    for n in 0..=lat.n_steps {
        let da = law_a.marginal_price_distribution(n)?;
        let db = law_b.marginal_price_distribution(n)?;
        let pairs = [
            (da.mean(), db.mean()),
            (da.variance(), db.variance()),
            (da.mass_below(lo), db.mass_below(lo)),
            (da.mass_above(hi), db.mass_above(hi)),
        ];
        let mut row = vec![n.to_string(), fmt_f(lat.time(n))];
        for (x, y) in pairs {
            row.extend([fmt_f(x), fmt_f(y), fmt_f(y - x)]);
        }
        w.row(row)?;
    }
    files.push(w.finish()?);

    let details = json!({
        "scenario_b_hash": rb.hash,
        "scenario_b_source": rb.source,
        "tail_thresholds": [lo, hi],
    });
    let m = manifest("compare", &ra, &files, details);
    files.push(write_json(out, "manifest.json", &m)?);
    Ok(files)
}
