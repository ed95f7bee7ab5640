//! The four subcommands. Each returns an [`Outcome`] instead of exiting so
//! tests can drive them in-process.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mfc_core::controllers::{epsilon_bounds, ultimate_radius, ControlMode};
use mfc_core::ctrlmath::stability_margins;
use mfc_core::reference::reference_bound;
use mfc_core::sim::{box_grid, peaking_experiment, run_closed_loop, SimError, SimResult};
use mfc_core::vehicle::fit_perturbation_bound;
use rayon::prelude::*;

use crate::config::{declared_bound, parse_mode, ConfigError, Resolved, ScenarioConfig, System};
use crate::csv::write_csv;
use crate::report::{RunRecord, RunReport, Verdict};

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_GUARD: i32 = 2;

/// Relative tolerance for the efficient/classical equivalence check.
pub const EQUIVALENCE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub exit_code: i32,
    pub text: String,
    pub report: Option<RunReport>,
}

impl Outcome {
    fn config_error(err: ConfigError) -> Self {
        Self {
            exit_code: EXIT_CONFIG,
            text: format!("error: {err}"),
            report: None,
        }
    }
}

/// Command-line values that take precedence over the scenario file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub step: Option<f64>,
    pub horizon: Option<f64>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(dir) = &self.out {
            cfg.output.dir = dir.display().to_string();
        }
        if let Some(h) = self.step {
            cfg.sim.step = h;
        }
        if let Some(t) = self.horizon {
            cfg.sim.horizon = Some(t);
        }
        if let (Some(seed), Some(sweep)) = (self.seed, cfg.sweep.as_mut()) {
            sweep.seed = seed;
        }
    }
}

fn io_error(path: &Path, source: std::io::Error) -> ConfigError {
    ConfigError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn output_dir(cfg: &ScenarioConfig) -> Result<PathBuf, ConfigError> {
    let dir = PathBuf::from(&cfg.output.dir);
    fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    Ok(dir)
}

fn write_run_csv(result: &SimResult, path: &Path) -> Result<(), ConfigError> {
    let file = fs::File::create(path).map_err(|e| io_error(path, e))?;
    write_csv(result, std::io::BufWriter::new(file)).map_err(|e| io_error(path, e))
}

fn write_report(report: &RunReport, path: &Path) -> Result<(), ConfigError> {
    fs::write(path, report.to_json()).map_err(|e| io_error(path, e))
}

fn simulate(resolved: &Resolved, mode: ControlMode, epsilon: f64) -> Result<SimResult, String> {
    let scenario = resolved.scenario(mode, epsilon)?;
    let init = if mode.has_model() {
        resolved.initial_condition()
    } else {
        mfc_core::sim::InitialCondition::new(
            resolved.xi0.clone(),
            resolved.eta0.clone(),
            mfc_core::sim::ModelInit::Exact,
        )
    };
    run_closed_loop(&scenario, &init, &resolved.sim).map_err(|e: SimError| e.to_string())
}

fn record(resolved: &Resolved, result: &SimResult, epsilon: f64) -> RunRecord {
    RunRecord::from_result(result, epsilon, resolved.tail_start, resolved.config.sim.peak_window)
}

fn abort_line(result: &SimResult) -> Option<String> {
    result
        .aborted
        .as_ref()
        .map(|a| format!("run aborted at t = {:.6}: {:?}", a.time, a.reason))
}

/// `run`: one simulation, CSV trajectory and JSON report.
pub fn cmd_run(cfg: &ScenarioConfig) -> Outcome {
    match run_inner(cfg) {
        Ok(o) => o,
        Err(e) => Outcome::config_error(e),
    }
}

fn run_inner(cfg: &ScenarioConfig) -> Result<Outcome, ConfigError> {
    let resolved = cfg.resolve()?;
    let dir = output_dir(cfg)?;
    let eps = resolved.epsilon();
    let result = simulate(&resolved, resolved.mode, eps).map_err(|e| ConfigError::Invalid {
        field: "controller".into(),
        message: e,
    })?;
    let csv_path = dir.join(format!("{}.csv", cfg.name));
    write_run_csv(&result, &csv_path)?;

    let mut report = RunReport::new("run", cfg);
    let mut rec = record(&resolved, &result, eps);
    rec.csv = Some(csv_path.display().to_string());
    report.verdicts.push(Verdict::new(
        "bounded",
        !rec.guard_tripped,
        &[("eta_sup", rec.eta_sup), ("sup_abs_u", rec.sup_abs_u)],
    ));
    if let Some(r_inf) = cfg.design.and_then(|d| d.r_inf) {
        report.verdicts.push(Verdict::new(
            "tail error <= r_inf",
            rec.tail_tracking_error <= r_inf,
            &[("tail_tracking_error", rec.tail_tracking_error), ("r_inf", r_inf)],
        ));
    }
    let mut text = String::new();
    let _ = writeln!(
        text,
        "{} {} eps={:.6}: sup|u|={:.6e} tail_error={:.6e} settled={}",
        cfg.name, rec.mode, eps, rec.sup_abs_u, rec.tail_tracking_error, rec.settled
    );
    if let Some(flags) = rec.monitor_flags.filter(|f| *f > 0) {
        let _ = writeln!(text, "monitor flagged {flags} samples");
    }
    if let Some(line) = abort_line(&result) {
        let _ = writeln!(text, "{line}");
    }
    report.runs.push(rec);
    for v in &report.verdicts {
        let _ = writeln!(text, "{}", v.line());
    }
    let _ = writeln!(text, "wrote {}", csv_path.display());
    write_report(&report, &dir.join(format!("{}.report.json", cfg.name)))?;
    Ok(Outcome {
        exit_code: if result.aborted.is_some() { EXIT_GUARD } else { EXIT_OK },
        text,
        report: Some(report),
    })
}

fn eps_tag(eps: f64) -> String {
    format!("{eps}").replace('.', "p")
}

/// `compare`: every (mode, ε) pair, a summary table and verdicts.
pub fn cmd_compare(cfg: &ScenarioConfig, modes: Option<&[String]>, epsilons: Option<&[f64]>) -> Outcome {
    match compare_inner(cfg, modes, epsilons) {
        Ok(o) => o,
        Err(e) => Outcome::config_error(e),
    }
}

fn compare_inner(
    cfg: &ScenarioConfig,
    modes: Option<&[String]>,
    epsilons: Option<&[f64]>,
) -> Result<Outcome, ConfigError> {
    let resolved = cfg.resolve()?;
    let section = cfg.compare.clone();
    let mode_names: Vec<String> = match (modes, &section) {
        (Some(m), _) => m.to_vec(),
        (None, Some(c)) => c.modes.clone(),
        (None, None) => vec![cfg.controller.mode.clone()],
    };
    let mode_list = mode_names
        .iter()
        .enumerate()
        .map(|(i, m)| parse_mode(&format!("--modes[{i}]"), m))
        .collect::<Result<Vec<_>, _>>()?;
    let mut eps_list: Vec<f64> = match (epsilons, &section) {
        (Some(e), _) => e.to_vec(),
        (None, Some(c)) if !c.epsilons.is_empty() => c.epsilons.clone(),
        _ => vec![resolved.epsilon()],
    };
    for (i, e) in eps_list.iter().enumerate() {
        if !(*e > 0.0 && *e < 1.0) {
            return Err(ConfigError::Invalid {
                field: format!("--eps[{i}]"),
                message: format!("epsilon = {e} must lie in the open interval (0, 1)"),
            });
        }
    }
    eps_list.dedup();
    let dir = output_dir(cfg)?;

    let jobs: Vec<(ControlMode, f64)> = mode_list
        .iter()
        .flat_map(|m| eps_list.iter().map(move |e| (*m, *e)))
        .collect();
    let results: Vec<Result<SimResult, String>> = jobs
        .par_iter()
        .map(|(mode, eps)| simulate(&resolved, *mode, *eps))
        .collect();

    let mut report = RunReport::new("compare", cfg);
    let mut summary = String::from("mode,epsilon,sup_abs_u,initial_peak,tail_tracking_error,settled,guard_tripped\n");
    let mut text = String::new();
    let _ = writeln!(
        text,
        "{:<16} {:>8} {:>14} {:>14} {:>14} {:>8} {:>8}",
        "mode", "epsilon", "sup|u|", "peak[0,w]", "tail error", "settled", "tripped"
    );
    let mut finished: Vec<(ControlMode, f64, SimResult)> = Vec::new();
    let mut tripped = false;
    for ((mode, eps), result) in jobs.iter().zip(results) {
        match result {
            Ok(res) => {
                let path = dir.join(format!("{}_{}_eps{}.csv", cfg.name, mode.name(), eps_tag(*eps)));
                write_run_csv(&res, &path)?;
                let mut rec = record(&resolved, &res, *eps);
                rec.csv = Some(path.display().to_string());
                tripped |= rec.guard_tripped;
                let _ = writeln!(
                    text,
                    "{:<16} {:>8.4} {:>14.6e} {:>14.6e} {:>14.6e} {:>8} {:>8}",
                    rec.mode,
                    eps,
                    rec.sup_abs_u,
                    rec.initial_peak,
                    rec.tail_tracking_error,
                    rec.settled,
                    rec.guard_tripped
                );
                let _ = writeln!(
                    summary,
                    "{},{},{:.8e},{:.8e},{:.8e},{},{}",
                    rec.mode,
                    eps,
                    rec.sup_abs_u,
                    rec.initial_peak,
                    rec.tail_tracking_error,
                    rec.settled,
                    rec.guard_tripped
                );
                report.runs.push(rec);
                finished.push((*mode, *eps, res));
            }
            Err(e) => report.errors.push(format!("{} eps={eps}: {e}", mode.name())),
        }
    }
    report.verdicts = compare_verdicts(&finished, &report.runs, &eps_list);
    report.verdicts.push(Verdict::new(
        "all runs bounded",
        report.runs.iter().all(|r| !r.guard_tripped),
        &[("runs", report.runs.len() as f64)],
    ));
    for v in &report.verdicts {
        let _ = writeln!(text, "{}", v.line());
    }
    for e in &report.errors {
        let _ = writeln!(text, "error: {e}");
    }
    let summary_path = dir.join(format!("{}.compare.csv", cfg.name));
    fs::write(&summary_path, summary).map_err(|e| io_error(&summary_path, e))?;
    write_report(&report, &dir.join(format!("{}.compare.json", cfg.name)))?;
    let exit_code = if tripped {
        EXIT_GUARD
    } else if report.runs.is_empty() {
        EXIT_CONFIG
    } else {
        EXIT_OK
    };
    Ok(Outcome {
        exit_code,
        text,
        report: Some(report),
    })
}

fn compare_verdicts(
    finished: &[(ControlMode, f64, SimResult)],
    records: &[RunRecord],
    eps_list: &[f64],
) -> Vec<Verdict> {
    let find = |mode: ControlMode, eps: f64| finished.iter().position(|(m, e, _)| *m == mode && *e == eps);
    let mut out = Vec::new();
    for &eps in eps_list {
        let mfc = find(ControlMode::MfcEfficient, eps).or_else(|| find(ControlMode::MfcClassical, eps));
        if let (Some(m), Some(s)) = (mfc, find(ControlMode::SingleLoop, eps)) {
            let (a, b) = (records[m].sup_abs_u, records[s].sup_abs_u);
            out.push(Verdict::new(
                format!("MFC peak < SL peak at eps={eps}"),
                a < b,
                &[("mfc_sup_abs_u", a), ("single_loop_sup_abs_u", b)],
            ));
        }
        if let (Some(a), Some(b)) = (
            find(ControlMode::MfcEfficient, eps),
            find(ControlMode::MfcClassical, eps),
        ) {
            let (ua, ub) = (&finished[a].2.u, &finished[b].2.u);
            let diff = ua.iter().zip(ub).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            let scale = ua.iter().chain(ub).fold(0.0f64, |m, x| m.max(x.abs()));
            out.push(Verdict::new(
                format!("efficient and classical MFC inputs agree at eps={eps}"),
                ua.len() == ub.len() && diff <= EQUIVALENCE_TOLERANCE * scale,
                &[("max_abs_difference", diff), ("max_abs_u", scale)],
            ));
        }
    }
    if eps_list.len() >= 2 {
        let largest = eps_list.iter().copied().fold(f64::MIN, f64::max);
        let smallest = eps_list.iter().copied().fold(f64::MAX, f64::min);
        for mode in ControlMode::ALL.into_iter().filter(|m| !m.is_pi()) {
            if let (Some(hi), Some(lo)) = (find(mode, largest), find(mode, smallest)) {
                let (a, b) = (records[lo].tail_tracking_error, records[hi].tail_tracking_error);
                out.push(Verdict::new(
                    format!(
                        "{} tail error smaller at eps={smallest} than at eps={largest}",
                        mode.name()
                    ),
                    a < b,
                    &[("tail_small_eps", a), ("tail_large_eps", b)],
                ));
            }
        }
    }
    out
}

/// `design`: Lyapunov data, ε limits and PI margins.
pub fn cmd_design(cfg: &ScenarioConfig) -> Outcome {
    match design_inner(cfg) {
        Ok(o) => o,
        Err(e) => Outcome::config_error(e),
    }
}

fn design_inner(cfg: &ScenarioConfig) -> Result<Outcome, ConfigError> {
    let resolved = cfg.resolve()?;
    let d = &resolved.design;
    let mut text = String::new();
    let mut report = RunReport::new("design", cfg);
    let p = d.lyapunov();
    let _ = writeln!(
        text,
        "k = {:?}, eps = {:.6}, scaled k = {:?}",
        d.k(),
        d.epsilon(),
        d.k_scaled()
    );
    let _ = writeln!(text, "P =");
    for i in 0..p.rows() {
        let row: Vec<String> = p.row(i).iter().map(|v| format!("{v:>14.8}")).collect();
        let _ = writeln!(text, "  [{}]", row.join(" "));
    }
    let _ = writeln!(
        text,
        "lambda_min(P) = {:.8}, lambda_max(P) = {:.8}, |PB| = {:.8}, p = {:.8}",
        d.lambda_min(),
        d.lambda_max(),
        d.pb_norm(),
        d.p_ratio()
    );

    let reference = resolved.reference();
    let r_d = reference_bound(&reference, resolved.sim.horizon, 0.0);
    let bound = match declared_bound(cfg, &resolved.system)? {
        Some(b) => Some(b),
        None => match &resolved.system {
            System::Vehicle(case) => {
                let run =
                    simulate(&resolved, ControlMode::MfcEfficient, d.epsilon()).map_err(|e| ConfigError::Invalid {
                        field: "design".into(),
                        message: e,
                    })?;
                let fitted = fit_perturbation_bound(&case.perturbation_samples(&run), r_d);
                let _ = writeln!(text, "perturbation bound fitted along an MFC run");
                Some(fitted)
            }
            System::Toy { .. } => None,
        },
    };
    if let Some(b) = bound {
        let _ = writeln!(
            text,
            "delta = {:.8e}, L = {:.8e}, reference radius r_d = {:.8}",
            b.delta0, b.lipschitz, r_d
        );
        if let Some(r_inf) = cfg.design.and_then(|x| x.r_inf) {
            let eb = epsilon_bounds(d, &b, r_d, r_inf).map_err(|e| ConfigError::Invalid {
                field: "design.r_inf".into(),
                message: e.to_string(),
            })?;
            let _ = writeln!(
                text,
                "eps_stability = {:.5}, eps_precision = {:.5} for r_inf = {r_inf}",
                eb.stability, eb.precision
            );
            report.verdicts.push(Verdict::new(
                "chosen eps meets the precision bound",
                d.epsilon() <= eb.precision,
                &[
                    ("epsilon", d.epsilon()),
                    ("eps_precision", eb.precision),
                    ("eps_stability", eb.stability),
                ],
            ));
        }
        match ultimate_radius(d, &b, r_d) {
            Ok(r) => {
                let _ = writeln!(text, "predicted ultimate radius at eps = {:.6}: {:.8e}", d.epsilon(), r);
            }
            Err(e) => {
                let _ = writeln!(text, "no ultimate bound: {e}");
            }
        }
    } else {
        let _ = writeln!(
            text,
            "no perturbation bound available; set design.delta and design.lipschitz"
        );
    }
    if let Some(pi) = resolved.pi {
        let margins = pi
            .open_loop()
            .and_then(|l| stability_margins(&l))
            .map_err(|e| ConfigError::Invalid {
                field: "controller.pi".into(),
                message: e.to_string(),
            })?;
        let _ = writeln!(
            text,
            "PI loop: PM {:.1}° at {:.2} rad/s",
            margins.phase_margin_deg, margins.crossover
        );
        report.verdicts.push(Verdict::new(
            "PI phase margin positive",
            margins.phase_margin_deg > 0.0,
            &[
                ("phase_margin_deg", margins.phase_margin_deg),
                ("crossover", margins.crossover),
            ],
        ));
    }
    for v in &report.verdicts {
        let _ = writeln!(text, "{}", v.line());
    }
    Ok(Outcome {
        exit_code: EXIT_OK,
        text,
        report: Some(report),
    })
}

/// `sweep`: peak inputs over a grid of initial external states for each ε.
pub fn cmd_sweep(cfg: &ScenarioConfig) -> Outcome {
    match sweep_inner(cfg) {
        Ok(o) => o,
        Err(e) => Outcome::config_error(e),
    }
}

fn sweep_inner(cfg: &ScenarioConfig) -> Result<Outcome, ConfigError> {
    let resolved = cfg.resolve()?;
    let sweep = cfg.sweep.clone().ok_or_else(|| ConfigError::Invalid {
        field: "sweep".into(),
        message: "the scenario has no [sweep] table".into(),
    })?;
    let jitter = (sweep.jitter > 0.0).then_some((sweep.seed, sweep.jitter));
    let sim_err = |e: SimError| ConfigError::Invalid {
        field: "sweep".into(),
        message: e.to_string(),
    };
    let points = box_grid(&resolved.xi0, &sweep.half_widths, sweep.points, jitter).map_err(sim_err)?;
    let grid: Vec<(Vec<f64>, Vec<f64>)> = points.into_iter().map(|xi| (xi, resolved.eta0.clone())).collect();
    let table = peaking_experiment(
        |mode, eps| resolved.scenario(mode, eps).map_err(SimError::InvalidConfig),
        &grid,
        &sweep.epsilons,
        &resolved.sim,
    )
    .map_err(sim_err)?;

    let dir = output_dir(cfg)?;
    let mut report = RunReport::new("sweep", cfg);
    let mut csv = String::from(
        "epsilon,mfc_max,single_loop_max,single_loop_initial_max,mfc_guard_tripped,single_loop_guard_tripped\n",
    );
    let mut text = format!("{} grid points per epsilon\n", grid.len());
    let _ = writeln!(
        text,
        "{:>8} {:>14} {:>14} {:>14} {:>8} {:>8}",
        "epsilon", "MFC max", "SL max", "SL |u(0)|", "MFC trip", "SL trip"
    );
    let mut tripped = false;
    for row in &table.rows {
        tripped |= row.mfc_guard_tripped || row.single_loop_guard_tripped;
        let _ = writeln!(
            text,
            "{:>8.4} {:>14.6e} {:>14.6e} {:>14.6e} {:>8} {:>8}",
            row.epsilon,
            row.mfc_max,
            row.single_loop_max,
            row.single_loop_initial_max,
            row.mfc_guard_tripped,
            row.single_loop_guard_tripped
        );
        let _ = writeln!(
            csv,
            "{},{:.8e},{:.8e},{:.8e},{},{}",
            row.epsilon,
            row.mfc_max,
            row.single_loop_max,
            row.single_loop_initial_max,
            row.mfc_guard_tripped,
            row.single_loop_guard_tripped
        );
        report.verdicts.push(Verdict::new(
            format!("MFC peak < SL peak at eps={}", row.epsilon),
            row.mfc_below_single_loop(),
            &[("mfc_max", row.mfc_max), ("single_loop_max", row.single_loop_max)],
        ));
    }
    match table.crossover_epsilon {
        Some(eps) => {
            let _ = writeln!(text, "MFC stays below single-loop for eps <= {eps}");
        }
        None => {
            let _ = writeln!(text, "MFC does not stay below single-loop at the smallest eps");
        }
    }
    for v in &report.verdicts {
        let _ = writeln!(text, "{}", v.line());
    }
    let path = dir.join(format!("{}.sweep.csv", cfg.name));
    fs::write(&path, csv).map_err(|e| io_error(&path, e))?;
    write_report(&report, &dir.join(format!("{}.sweep.json", cfg.name)))?;
    Ok(Outcome {
        exit_code: if tripped { EXIT_GUARD } else { EXIT_OK },
        text,
        report: Some(report),
    })
}
