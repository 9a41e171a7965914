//! Subcommands of the `isaacs-lab` binary.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use isaacs_core::{
    audit_assumptions, build_lattice, lattice_grid_restricted_lower, lattice_lower_value, lattice_upper_value,
    mc_payoff, solve_upper_isaacs_with, synthesize_markov_counter_strategy, synthesize_markov_strategy, Axis,
    ControlSource, Error as CoreError, LatticeMode, LatticeSpec, SimConfig, SolveOptions, TimeGrid,
};
use serde_json::{json, Value};

use crate::config::{read_model_file, ExperimentConfig};
use crate::error::{LabError, LabResult, StageExt};
use crate::experiments::{run_convergence_study, run_saddle_check, solve_for_meshes, ConvergenceStudy, Verdict};
use crate::report::{
    counter_csv, emit_report, gaps_csv, gaps_svg, lattice_csv, saddle_csv, strategy_csv, value_csv, Report,
};

pub const OUT_ENV: &str = "ISAACS_LAB_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "isaacs-lab",
    version,
    about = "Experiments on stochastic zero-sum differential games"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Anything left unset falls back to the
/// model file's `[solver]` and `[experiment]` tables, then to built-in defaults.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Model file (TOML).
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory.
    #[arg(long, env = OUT_ENV, default_value = "isaacs-out")]
    pub out: PathBuf,
    /// Master seed for every random source.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte Carlo paths per estimate.
    #[arg(long)]
    pub paths: Option<usize>,
    /// Euler-Maruyama step.
    #[arg(long = "dt-sim")]
    pub dt_sim: Option<f64>,
    /// Spatial step of the solver grid.
    #[arg(long)]
    pub dx: Option<f64>,
    /// Number of intervals of the strategy time grid (defaults to the finest mesh).
    #[arg(long = "pi-steps")]
    pub pi_steps: Option<usize>,
    /// Interval counts of the mesh sequence, e.g. `4,8,16,32`.
    #[arg(long, value_delimiter = ',')]
    pub meshes: Option<Vec<usize>>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the lower Isaacs equation and write the value on the strategy time grid.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Synthesise the simple Markov strategy and counter-strategy.
    Synthesize {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Estimate the payoff of the synthesised pair at the reporting points.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Restricted values against the solver for every mesh.
    Converge {
        #[command(flatten)]
        common: CommonArgs,
        /// Target used to report the largest mesh whose gaps stay below it.
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
    },
    /// Monte Carlo saddle check of the synthesised pair.
    Saddle {
        #[command(flatten)]
        common: CommonArgs,
        /// Saddle target; defaults to the measured gap at the chosen mesh.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Sample Lipschitz, growth and continuity diagnostics of the coefficients.
    Audit {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 4096)]
        samples: usize,
        /// Radius of the sampled ball; defaults to the larger solver bound.
        #[arg(long)]
        radius: Option<f64>,
    },
    /// Lattice game values by exact dynamic programming, compared with the solver.
    Oracle {
        #[command(flatten)]
        common: CommonArgs,
    },
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Solve { common }
            | Command::Synthesize { common }
            | Command::Simulate { common }
            | Command::Converge { common, .. }
            | Command::Saddle { common, .. }
            | Command::Audit { common, .. }
            | Command::Oracle { common } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Solve { .. } => "solve",
            Command::Synthesize { .. } => "synthesize",
            Command::Simulate { .. } => "simulate",
            Command::Converge { .. } => "converge",
            Command::Saddle { .. } => "saddle",
            Command::Audit { .. } => "audit",
            Command::Oracle { .. } => "oracle",
        }
    }
}

/// What a subcommand produced. Any entry in `violations` makes the exit code 1.
#[derive(Debug, Default)]
pub struct Outcome {
    pub summary: Vec<String>,
    pub violations: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        i32::from(!self.violations.is_empty())
    }
}

pub fn experiment_config(common: &CommonArgs) -> LabResult<ExperimentConfig> {
    let file = read_model_file(&common.model)?;
    let mut cfg = ExperimentConfig::from_model_file(&file, Some(common.model.display().to_string()));
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(n) = common.paths {
        cfg.paths = n;
    }
    if let Some(dt) = common.dt_sim {
        cfg.dt_sim = dt;
    }
    if let Some(dx) = common.dx {
        cfg.solver.dx = dx;
    }
    if let Some(m) = &common.meshes {
        cfg.meshes = m.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pi_steps(common: &CommonArgs, cfg: &ExperimentConfig) -> LabResult<usize> {
    match common.pi_steps {
        Some(0) => Err(LabError::Config("--pi-steps must be positive".into())),
        Some(n) => Ok(n),
        None => Ok(*cfg.meshes.last().expect("validated mesh sequence is non-empty")),
    }
}

fn axes_json(axes: &[Axis]) -> Value {
    Value::Array(
        axes.iter()
            .map(|a| json!({"min": a.min, "max": a.max, "count": a.count}))
            .collect(),
    )
}

/// Run metadata shared by every subcommand; `extra` is merged on top.
pub fn meta_json(command: &str, cfg: &ExperimentConfig, extra: Value) -> Value {
    let src = &cfg.source;
    let mut meta = json!({
        "tool": {"name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION")},
        "command": command,
        "model": {
            "path": cfg.model_path,
            "d": src.d,
            "d_prime": src.d_prime,
            "T": src.horizon,
            "b": src.drift,
            "sigma": src.sigma,
            "g": src.payoff,
            "u_grid": axes_json(&src.u_axes),
            "v_grid": axes_json(&src.v_axes),
        },
        "solver": {"x_min": cfg.solver.x_min, "x_max": cfg.solver.x_max, "dx": cfg.solver.dx},
        "meshes": cfg.meshes,
        "points": cfg.points,
        "monte_carlo": {"paths": cfg.paths, "dt_sim": cfg.dt_sim, "seed": cfg.seed},
    });
    if let (Value::Object(base), Value::Object(more)) = (&mut meta, extra) {
        base.extend(more);
    }
    meta
}

/// Runs a parsed command and writes its files into `--out`.
pub fn run(cli: &Cli) -> LabResult<Outcome> {
    let common = cli.command.common();
    let cfg = experiment_config(common)?;
    let mut report = Report::default();
    let mut outcome = Outcome::default();
    let name = cli.command.name();
    let extra = match &cli.command {
        Command::Solve { .. } => solve(common, &cfg, &mut report, &mut outcome)?,
        Command::Synthesize { .. } => synthesize(common, &cfg, &mut report, &mut outcome)?,
        Command::Simulate { .. } => simulate(common, &cfg, &mut report, &mut outcome)?,
        Command::Converge { eps, .. } => converge(&cfg, *eps, &mut report, &mut outcome)?,
        Command::Saddle { eps, .. } => saddle(common, &cfg, *eps, &mut report, &mut outcome)?,
        Command::Audit { samples, radius, .. } => audit(&cfg, *samples, *radius, &mut report, &mut outcome)?,
        Command::Oracle { .. } => oracle(common, &cfg, &mut report, &mut outcome)?,
    };
    let mut extra = extra;
    if let Value::Object(o) = &mut extra {
        o.insert("violations".into(), json!(outcome.violations));
    }
    report.add_json("meta.json", &meta_json(name, &cfg, extra));
    outcome.files = emit_report(&report, &common.out)?;
    Ok(outcome)
}

fn pi_times(cfg: &ExperimentConfig, n: usize) -> LabResult<Vec<f64>> {
    Ok(TimeGrid::uniform(0.0, cfg.model.horizon(), n)
        .stage("time grid")?
        .times()
        .to_vec())
}

fn solve(common: &CommonArgs, cfg: &ExperimentConfig, report: &mut Report, out: &mut Outcome) -> LabResult<Value> {
    let n = pi_steps(common, cfg)?;
    let grid = cfg.grid()?;
    let solved = solve_for_meshes(&cfg.model, &grid, &[n])?;
    let upper = solve_upper_isaacs_with(
        &cfg.model,
        &grid,
        0.0,
        SolveOptions {
            steps: Some(solved.steps),
        },
    )
    .stage("upper solve")?;
    let times = pi_times(cfg, n)?;
    report.add("value.csv", value_csv(&solved.value, Some(&times)));
    report.add("upper_value.csv", value_csv(&upper, Some(&times)));

    let terminal = &solved.value.levels()[0];
    let (g_min, g_max) = terminal
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let slack = 1e-12 * (1.0 + g_max.abs().max(g_min.abs()));
    let outside = solved
        .value
        .levels()
        .iter()
        .flatten()
        .chain(upper.levels().iter().flatten())
        .filter(|&&v| v < g_min - slack || v > g_max + slack)
        .count();
    if outside > 0 {
        out.violations.push(format!(
            "{outside} node values leave the terminal range [{g_min}, {g_max}]"
        ));
    }
    let mut rows = Vec::new();
    for x in &cfg.points {
        let lo = solved.value.value(0.0, x).stage("solve")?;
        let hi = upper.value(0.0, x).stage("upper solve")?;
        out.summary.push(format!("x = {x:?}: lower {lo:.6}, upper {hi:.6}"));
        rows.push(json!({"x": x, "lower": lo, "upper": hi}));
    }
    Ok(json!({
        "pi_steps": n,
        "time_steps": solved.steps,
        "dt": solved.dt,
        "values_at_start": rows,
    }))
}

fn synthesize(common: &CommonArgs, cfg: &ExperimentConfig, report: &mut Report, out: &mut Outcome) -> LabResult<Value> {
    let n = pi_steps(common, cfg)?;
    let grid = cfg.grid()?;
    let solved = solve_for_meshes(&cfg.model, &grid, &[n])?;
    let pi = TimeGrid::uniform(0.0, cfg.model.horizon(), n).stage("time grid")?;
    let alpha = synthesize_markov_strategy(&cfg.model, &solved.value, &pi).stage("synthesize")?;
    let gamma = synthesize_markov_counter_strategy(&cfg.model, &solved.value, &pi).stage("synthesize")?;
    report.add("value.csv", value_csv(&solved.value, Some(pi.times())));
    report.add("strategy.csv", strategy_csv(&alpha));
    report.add("counter_strategy.csv", counter_csv(&gamma));
    out.summary
        .push(format!("synthesised on {n} intervals over {} nodes", grid.len()));
    Ok(json!({"pi_steps": n, "time_steps": solved.steps, "dt": solved.dt}))
}

fn simulate(common: &CommonArgs, cfg: &ExperimentConfig, report: &mut Report, out: &mut Outcome) -> LabResult<Value> {
    let n = pi_steps(common, cfg)?;
    let m = &cfg.model;
    let grid = cfg.grid()?;
    let solved = solve_for_meshes(m, &grid, &[n])?;
    let pi = TimeGrid::uniform(0.0, m.horizon(), n).stage("time grid")?;
    let alpha = synthesize_markov_strategy(m, &solved.value, &pi).stage("synthesize")?;
    let gamma = synthesize_markov_counter_strategy(m, &solved.value, &pi).stage("synthesize")?;
    let (u, v) = (ControlSource::Markov(&alpha), ControlSource::Counter(&gamma));
    let mut csv = String::from("x,u_source,v_source,mean,std_err,n_paths,seed,dt_sim,v_fd\n");
    for x in &cfg.points {
        let sim = SimConfig::new(0.0, x.clone(), cfg.dt_sim);
        let est = mc_payoff(m, &u, &v, &sim, cfg.paths, cfg.seed).stage("simulate")?;
        let v_fd = solved.value.value(0.0, x).stage("solve")?;
        let xs = x.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";");
        csv.push_str(&format!(
            "{xs},markov strategy,counter-strategy,{},{},{},{},{},{v_fd}\n",
            est.mean, est.std_err, est.n_paths, est.seed, est.dt
        ));
        out.summary.push(format!(
            "x = {x:?}: E[g] = {:.6} +- {:.6} (V_fd {v_fd:.6})",
            est.mean, est.std_err
        ));
    }
    report.add("estimates.csv", csv);
    Ok(json!({
        "pi_steps": n,
        "time_steps": solved.steps,
        "dt": solved.dt,
        "battery": {"u": ["markov strategy"], "v": ["counter-strategy"]},
    }))
}

fn study_json(study: &ConvergenceStudy) -> Value {
    json!({
        "time_steps": study.steps,
        "dt": study.dt,
        "tol": study.tol,
        "tol_method": "max |V(dx) - V(dx/2)| over the reporting points",
        "summary": study.summary,
    })
}

fn converge(cfg: &ExperimentConfig, eps: f64, report: &mut Report, out: &mut Outcome) -> LabResult<Value> {
    let study = run_convergence_study(cfg)?;
    report.add("gaps.csv", gaps_csv(&study.table));
    report.add("gaps.svg", gaps_svg(&study.summary));
    let violations = study.table.violations();
    if violations > 0 {
        out.violations.push(format!(
            "{violations} gap rows break v_pi^- <= V_fd <= v_pi^+ beyond tol {:e}",
            study.tol
        ));
    }
    for s in &study.summary {
        out.summary.push(format!(
            "T/{}: max gap {:.6}, max lower gap {:.6}",
            s.intervals, s.max_gap, s.max_lower_gap
        ));
    }
    let delta = study
        .summary
        .iter()
        .filter(|s| s.max_gap <= eps)
        .map(|s| s.mesh)
        .fold(None, |a: Option<f64>, m| Some(a.map_or(m, |a| a.max(m))));
    out.summary.push(match delta {
        Some(d) => format!("largest mesh with gaps <= {eps}: {d}"),
        None => format!("no tested mesh has gaps <= {eps}"),
    });
    let mut v = study_json(&study);
    v["eps"] = json!(eps);
    v["delta_estimate"] = json!(delta);
    Ok(v)
}

fn saddle(
    common: &CommonArgs,
    cfg: &ExperimentConfig,
    eps: Option<f64>,
    report: &mut Report,
    out: &mut Outcome,
) -> LabResult<Value> {
    let n = pi_steps(common, cfg)?;
    let mut cfg = cfg.clone();
    if !cfg.meshes.contains(&n) {
        cfg.meshes.push(n);
        cfg.meshes.sort_unstable();
    }
    let study = run_convergence_study(&cfg)?;
    let gap = study.gap_at(n).expect("the chosen mesh is part of the study");
    let eps = eps.unwrap_or(gap.max(0.0));
    if gap > eps {
        out.summary
            .push(format!("warning: measured gap {gap:.6} at T/{n} exceeds eps = {eps}"));
    }
    let r = run_saddle_check(&cfg, eps, n, &study.solved, study.tol)?;
    report.add("gaps.csv", gaps_csv(&study.table));
    report.add("saddle.csv", saddle_csv(&r));
    for p in &r.points {
        out.summary.push(format!(
            "x = {:?}: base {:.6}, worst u {:.6}, worst v {:.6}, slacks {:.6} / {:.6}",
            p.x, p.base_mean, p.worst_u, p.worst_v, p.slack_u, p.slack_v
        ));
    }
    match &r.verdict {
        Verdict::Pass => out.summary.push(format!(
            "all {} inequalities hold at each of {} points",
            r.battery_u.len() + r.battery_v.len(),
            r.points.len()
        )),
        Verdict::Fail => out
            .violations
            .push(format!("{} saddle inequalities fail", r.failures())),
        Verdict::Inconclusive(why) => out.summary.push(format!("inconclusive: {why}")),
    }
    let mut v = study_json(&study);
    v["measured_gap"] = json!(gap);
    v["saddle"] = serde_json::to_value(&r).expect("saddle reports serialise");
    Ok(v)
}

fn audit(
    cfg: &ExperimentConfig,
    samples: usize,
    radius: Option<f64>,
    report: &mut Report,
    out: &mut Outcome,
) -> LabResult<Value> {
    let radius = radius.unwrap_or(cfg.solver.x_min.abs().max(cfg.solver.x_max.abs()));
    let a = audit_assumptions(&cfg.model, samples, radius, cfg.seed).stage("audit")?;
    let flags: Vec<Value> = a
        .continuity
        .iter()
        .map(|f| json!({"coefficient": f.coefficient, "continuous": f.continuous, "max_jump": f.max_jump}))
        .collect();
    for f in a.continuity.iter().filter(|f| !f.continuous) {
        out.violations
            .push(format!("{} looks discontinuous (jump {:e})", f.coefficient, f.max_jump));
    }
    out.summary.push(format!(
        "radius {radius}: Lipschitz ~ {:.4}, growth ~ {:.4}, bound C ~ {:.4}",
        a.lipschitz_estimate, a.growth_constant, a.coefficient_bound
    ));
    let body = json!({
        "radius": a.radius,
        "lipschitz_estimate": a.lipschitz_estimate,
        "growth_constant": a.growth_constant,
        "coefficient_bound": a.coefficient_bound,
        "continuity": flags,
        "samples_used": a.samples_used,
        "seed": a.seed,
    });
    report.add_json("audit.json", &body);
    Ok(json!({ "audit": body }))
}

/// Smallest micro-step count, a multiple of `pi`, for which the lattice builds;
/// the trinomial chain is tried before the drift-upwind one.
fn lattice_for(cfg: &ExperimentConfig, pi: usize) -> LabResult<(isaacs_core::LatticeGame, LatticeSpec)> {
    let s = cfg.solver;
    let n_x = ((s.x_max - s.x_min) / s.dx).round() as usize + 1;
    let base = (cfg.model.horizon() / (s.dx * s.dx)).ceil().max(1.0) as usize;
    let mut last = None;
    for mode in [LatticeMode::Trinomial, LatticeMode::DriftUpwind] {
        let mut n = base.div_ceil(pi) * pi;
        for _ in 0..8 {
            let spec = LatticeSpec {
                start: 0.0,
                n_steps: n,
                x_min: s.x_min,
                x_max: s.x_max,
                n_x,
                mode,
            };
            match build_lattice(&cfg.model, spec) {
                Ok(l) => return Ok((l, spec)),
                Err(e @ CoreError::Probability { .. }) => last = Some(e),
                Err(e) => {
                    return Err(LabError::Stage {
                        stage: "lattice",
                        source: e,
                    })
                }
            }
            n *= 2;
        }
    }
    Err(LabError::Stage {
        stage: "lattice",
        source: last.expect("at least one build was attempted"),
    })
}

fn oracle(common: &CommonArgs, cfg: &ExperimentConfig, report: &mut Report, out: &mut Outcome) -> LabResult<Value> {
    let n = pi_steps(common, cfg)?;
    let m = &cfg.model;
    let (lattice, spec) = lattice_for(cfg, n)?;
    let lower = lattice_lower_value(&lattice);
    let upper = lattice_upper_value(&lattice);
    let pi = TimeGrid::uniform(0.0, m.horizon(), n).stage("time grid")?;
    let restricted = lattice_grid_restricted_lower(&lattice, &pi).stage("lattice restricted value")?;
    report.add("lattice.csv", lattice_csv(&lower));
    report.add("lattice_upper.csv", lattice_csv(&upper));

    let slack = 1e-12;
    let crossed = lower
        .levels
        .iter()
        .flatten()
        .zip(upper.levels.iter().flatten())
        .filter(|(lo, hi)| **lo > **hi + slack)
        .count();
    if crossed > 0 {
        out.violations.push(format!(
            "lattice lower value exceeds the upper value at {crossed} nodes"
        ));
    }
    let start = lower.levels.first().expect("lattice values have a start level");
    let above = restricted.levels[0]
        .iter()
        .zip(start)
        .filter(|(r, l)| **r > **l + slack)
        .count();
    if above > 0 {
        out.violations.push(format!(
            "restricted lattice value exceeds the lower value at {above} nodes"
        ));
    }

    let grid = cfg.grid()?;
    let solved = solve_for_meshes(m, &grid, &[n])?;
    let mut rows = Vec::new();
    for x in &cfg.points {
        let x1 = x[0];
        let lo = lower.initial(x1).stage("lattice")?;
        let hi = upper.initial(x1).stage("lattice")?;
        let re = restricted.initial(x1).stage("lattice")?;
        let fd = solved.value.value(0.0, x).stage("solve")?;
        out.summary.push(format!(
            "x = {x1}: lattice lower {lo:.6}, upper {hi:.6}, restricted {re:.6}, solver {fd:.6}, |lattice - solver| {:.2e}",
            (lo - fd).abs()
        ));
        rows.push(json!({
            "x": x1,
            "lattice_lower": lo,
            "lattice_upper": hi,
            "lattice_restricted_lower": re,
            "v_fd": fd,
            "abs_diff": (lo - fd).abs(),
        }));
    }
    Ok(json!({
        "pi_steps": n,
        "lattice": {
            "mode": format!("{:?}", spec.mode),
            "n_steps": spec.n_steps,
            "h": lattice.step_length(),
            "n_x": spec.n_x,
            "dx": lattice.spacing(),
        },
        "solver_time_steps": solved.steps,
        "comparison": rows,
    }))
}
