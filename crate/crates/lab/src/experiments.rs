//! Convergence study, saddle check and the supporting solves.

use isaacs_core::simulator::PayoffEstimate;
use isaacs_core::solver::steps_for;
use isaacs_core::{
    adversary_best_response_value, cfl_step, controller_best_response_value, mc_payoff_samples, sandwich_report,
    solve_lower_isaacs_with, synthesize_markov_counter_strategy, synthesize_markov_strategy, AugmentedValue,
    ControlSource, GameModel, GapTable, RestrictedOptions, SimConfig, SimpleMarkovCounterStrategy,
    SimpleMarkovStrategy, SolveOptions, SpatialGrid, TimeGrid, ValueFeedback, ValueFunction,
};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{LabError, LabResult, StageExt};

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(xs: &[usize]) -> usize {
    xs.iter().fold(1, |acc, &x| acc / gcd(acc, x) * x)
}

/// Lower value solved with a step count that every mesh divides, so
/// restricted values can reuse the exact same time step.
#[derive(Debug, Clone)]
pub struct Solved {
    pub value: ValueFunction,
    pub steps: usize,
    pub dt: f64,
}

pub fn solve_for_meshes(m: &GameModel, grid: &SpatialGrid, meshes: &[usize]) -> LabResult<Solved> {
    let period = lcm(meshes);
    if period == 0 || period > 1 << 20 {
        return Err(LabError::Config(format!(
            "mesh counts {meshes:?} have no usable common multiple"
        )));
    }
    let dt_max = cfl_step(m, grid).stage("solve")?;
    let base = steps_for(m.horizon(), 0.0, dt_max);
    let steps = base.div_ceil(period) * period;
    let value = solve_lower_isaacs_with(m, grid, 0.0, SolveOptions { steps: Some(steps) }).stage("solve")?;
    Ok(Solved {
        value,
        steps,
        dt: m.horizon() / steps as f64,
    })
}

/// `max |V(dx) - V(dx/2)|` over the reporting points, a measured estimate of
/// the scheme error at the working resolution.
pub fn scheme_tolerance(cfg: &ExperimentConfig, solved: &Solved) -> LabResult<f64> {
    let s = cfg.solver;
    let fine = SpatialGrid::cube(cfg.model.dim(), s.x_min, s.x_max, s.dx / 2.0)?;
    let vf = solve_lower_isaacs_with(&cfg.model, &fine, 0.0, SolveOptions::default()).stage("tolerance solve")?;
    let mut worst: f64 = 0.0;
    for x in &cfg.points {
        let a = solved.value.value(0.0, x).stage("tolerance solve")?;
        let b = vf.value(0.0, x).stage("tolerance solve")?;
        worst = worst.max((a - b).abs());
    }
    Ok(worst.max(1e-9))
}

#[derive(Debug, Clone)]
pub struct MeshRun {
    pub intervals: usize,
    pub alpha: SimpleMarkovStrategy,
    pub gamma: SimpleMarkovCounterStrategy,
    pub lower: AugmentedValue,
    pub upper: AugmentedValue,
}

pub fn run_mesh(m: &GameModel, solved: &Solved, intervals: usize) -> LabResult<MeshRun> {
    let pi = TimeGrid::uniform(0.0, m.horizon(), intervals).stage("time grid")?;
    let alpha = synthesize_markov_strategy(m, &solved.value, &pi).stage("synthesize")?;
    let gamma = synthesize_markov_counter_strategy(m, &solved.value, &pi).stage("synthesize")?;
    let opts = RestrictedOptions { dt: Some(solved.dt) };
    let lower = adversary_best_response_value(m, &alpha, opts).stage("lower restricted value")?;
    let upper = controller_best_response_value(m, &gamma, opts).stage("upper restricted value")?;
    Ok(MeshRun {
        intervals,
        alpha,
        gamma,
        lower,
        upper,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MeshSummary {
    pub intervals: usize,
    pub mesh: f64,
    /// `max (v_pi^+ - v_pi^-)` over the reporting points.
    pub max_gap: f64,
    /// `max (V_fd - v_pi^-)` over the reporting points.
    pub max_lower_gap: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub table: GapTable,
    pub summary: Vec<MeshSummary>,
    pub tol: f64,
    pub steps: usize,
    pub dt: f64,
    pub solved: Solved,
    pub runs: Vec<MeshRun>,
}

impl ConvergenceStudy {
    pub fn gap_at(&self, intervals: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.intervals == intervals)
            .map(|s| s.max_gap)
    }
}

/// For each mesh: synthesise both strategies from the solved value, compute
/// the two restricted values and tabulate them against the solver.
pub fn run_convergence_study(cfg: &ExperimentConfig) -> LabResult<ConvergenceStudy> {
    cfg.validate()?;
    let m = &cfg.model;
    let grid = cfg.grid()?;
    let solved = solve_for_meshes(m, &grid, &cfg.meshes)?;
    let tol = scheme_tolerance(cfg, &solved)?;
    let mut runs = Vec::with_capacity(cfg.meshes.len());
    for &k in &cfg.meshes {
        runs.push(run_mesh(m, &solved, k)?);
    }
    let lowers: Vec<AugmentedValue> = runs.iter().map(|r| r.lower.clone()).collect();
    let uppers: Vec<AugmentedValue> = runs.iter().map(|r| r.upper.clone()).collect();
    let table = sandwich_report(&solved.value, &lowers, &uppers, &cfg.points, tol).stage("sandwich report")?;
    let summary = cfg
        .meshes
        .iter()
        .map(|&k| {
            let mesh = m.horizon() / k as f64;
            let rows = table.rows.iter().filter(|r| r.mesh == mesh);
            let (mut gap, mut lower_gap) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for r in rows {
                gap = gap.max(r.v_pi_plus - r.v_pi_minus);
                lower_gap = lower_gap.max(r.gap_lo);
            }
            MeshSummary {
                intervals: k,
                mesh,
                max_gap: gap,
                max_lower_gap: lower_gap,
            }
        })
        .collect();
    Ok(ConvergenceStudy {
        table,
        summary,
        tol,
        steps: solved.steps,
        dt: solved.dt,
        solved,
        runs,
    })
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq, Eq)]
pub enum Side {
    /// U deviates against the counter-strategy.
    U,
    /// V deviates against the strategy.
    V,
}

#[derive(Debug, Clone, Serialize)]
pub struct BatteryEntry {
    pub side: Side,
    pub source: String,
    pub mean: f64,
    pub std_err: f64,
    /// Mean of the paired difference against the (strategy, counter-strategy) run.
    pub diff_mean: f64,
    pub diff_std_err: f64,
    /// The bound the paired difference is held to.
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SaddlePoint {
    pub x: Vec<f64>,
    pub base_mean: f64,
    pub base_std_err: f64,
    pub entries: Vec<BatteryEntry>,
    /// Largest mean over the U battery.
    pub worst_u: f64,
    /// Smallest mean over the V battery.
    pub worst_v: f64,
    /// `base + 2 eps - worst_u`.
    pub slack_u: f64,
    /// `worst_v - (base - 2 eps)`.
    pub slack_v: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// No hard verdict, with the reason.
    Inconclusive(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct SaddleReport {
    pub eps: f64,
    pub intervals: usize,
    pub tol: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub dt_sim: f64,
    pub battery_u: Vec<String>,
    pub battery_v: Vec<String>,
    pub points: Vec<SaddlePoint>,
    pub verdict: Verdict,
}

impl SaddleReport {
    pub fn failures(&self) -> usize {
        self.points.iter().flat_map(|p| &p.entries).filter(|e| !e.pass).count()
    }
}

fn paired(samples: &[f64], base: &[f64], seed: u64, dt: f64) -> PayoffEstimate {
    let diff: Vec<f64> = samples.iter().zip(base).map(|(a, b)| a - b).collect();
    PayoffEstimate::from_samples(&diff, seed, dt)
}

/// Monte Carlo check that `(alpha, gamma)` synthesised at `intervals` is a
/// `2 eps`-saddle point against two batteries of deviations. All runs share
/// the master seed, so differences use common random numbers. `tol` is the
/// solver tolerance added to every threshold.
pub fn run_saddle_check(
    cfg: &ExperimentConfig,
    eps: f64,
    intervals: usize,
    solved: &Solved,
    tol: f64,
) -> LabResult<SaddleReport> {
    if !(eps >= 0.0) {
        return Err(LabError::Config(format!("eps must be non-negative, got {eps}")));
    }
    let m = &cfg.model;
    let pi = TimeGrid::uniform(0.0, m.horizon(), intervals).stage("time grid")?;
    let alpha = synthesize_markov_strategy(m, &solved.value, &pi).stage("synthesize")?;
    let gamma = synthesize_markov_counter_strategy(m, &solved.value, &pi).stage("synthesize")?;
    let feedback = ValueFeedback {
        model: m,
        value: &solved.value,
    };
    let per_interval = ((m.horizon() / intervals as f64) / cfg.dt_sim).round().max(1.0) as usize;
    let seed = cfg.seed;
    let mut u_battery: Vec<(String, ControlSource<'_>)> = (0..m.u_grid().len())
        .map(|i| (format!("constant u#{i}"), ControlSource::Constant(i)))
        .collect();
    u_battery.push((
        "random per step".into(),
        ControlSource::Random {
            seed: seed ^ 0x11,
            hold: 1,
        },
    ));
    u_battery.push((
        "random per interval".into(),
        ControlSource::Random {
            seed: seed ^ 0x12,
            hold: per_interval,
        },
    ));
    u_battery.push(("markov strategy".into(), ControlSource::Markov(&alpha)));
    u_battery.push(("hamiltonian feedback".into(), ControlSource::Feedback(&feedback)));
    let mut v_battery: Vec<(String, ControlSource<'_>)> = (0..m.v_grid().len())
        .map(|i| (format!("constant v#{i}"), ControlSource::Constant(i)))
        .collect();
    v_battery.push((
        "random per step".into(),
        ControlSource::Random {
            seed: seed ^ 0x21,
            hold: 1,
        },
    ));
    v_battery.push((
        "random per interval".into(),
        ControlSource::Random {
            seed: seed ^ 0x22,
            hold: per_interval,
        },
    ));
    v_battery.push(("counter-strategy".into(), ControlSource::Counter(&gamma)));
    v_battery.push(("counter response feedback".into(), ControlSource::Feedback(&feedback)));

    let alpha_src = ControlSource::Markov(&alpha);
    let gamma_src = ControlSource::Counter(&gamma);
    let mut points = Vec::with_capacity(cfg.points.len());
    for x in &cfg.points {
        let sim = SimConfig::new(0.0, x.clone(), cfg.dt_sim);
        let base = mc_payoff_samples(m, &alpha_src, &gamma_src, &sim, cfg.paths, seed).stage("saddle simulation")?;
        let base_est = PayoffEstimate::from_samples(&base, seed, cfg.dt_sim);
        let mut entries = Vec::new();
        for (side, battery) in [(Side::U, &u_battery), (Side::V, &v_battery)] {
            for (name, src) in battery.iter() {
                let samples = match side {
                    Side::U => mc_payoff_samples(m, src, &gamma_src, &sim, cfg.paths, seed),
                    Side::V => mc_payoff_samples(m, &alpha_src, src, &sim, cfg.paths, seed),
                }
                .stage("saddle simulation")?;
                let est = PayoffEstimate::from_samples(&samples, seed, cfg.dt_sim);
                let diff = paired(&samples, &base, seed, cfg.dt_sim);
                let threshold = 2.0 * eps + tol + 3.0 * diff.std_err;
                let pass = match side {
                    Side::U => diff.mean <= threshold,
                    Side::V => diff.mean >= -threshold,
                };
                entries.push(BatteryEntry {
                    side,
                    source: name.clone(),
                    mean: est.mean,
                    std_err: est.std_err,
                    diff_mean: diff.mean,
                    diff_std_err: diff.std_err,
                    threshold,
                    pass,
                });
            }
        }
        let worst_u = entries
            .iter()
            .filter(|e| e.side == Side::U)
            .map(|e| e.mean)
            .fold(f64::NEG_INFINITY, f64::max);
        let worst_v = entries
            .iter()
            .filter(|e| e.side == Side::V)
            .map(|e| e.mean)
            .fold(f64::INFINITY, f64::min);
        points.push(SaddlePoint {
            x: x.clone(),
            base_mean: base_est.mean,
            base_std_err: base_est.std_err,
            slack_u: base_est.mean + 2.0 * eps - worst_u,
            slack_v: worst_v - (base_est.mean - 2.0 * eps),
            worst_u,
            worst_v,
            entries,
        });
    }
    let failed = points.iter().flat_map(|p| &p.entries).any(|e| !e.pass);
    let verdict = if eps == 0.0 {
        Verdict::Inconclusive("eps = 0: numerical tolerance dominates, no hard verdict".into())
    } else if failed {
        Verdict::Fail
    } else {
        Verdict::Pass
    };
    Ok(SaddleReport {
        eps,
        intervals,
        tol,
        n_paths: cfg.paths,
        seed,
        dt_sim: cfg.dt_sim,
        battery_u: u_battery.iter().map(|(n, _)| n.clone()).collect(),
        battery_v: v_battery.iter().map(|(n, _)| n.clone()).collect(),
        points,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{load_model_file, ExperimentConfig};

    fn config(text: &str) -> ExperimentConfig {
        let f = load_model_file(text).unwrap();
        let mut cfg = ExperimentConfig::from_model_file(&f, None);
        cfg.solver.dx = 0.125;
        cfg.meshes = vec![2, 4];
        cfg.paths = 2000;
        cfg.dt_sim = 1.0 / 64.0;
        cfg
    }

    const FROZEN: &str = r#"
[dynamics]
d = 1
d_prime = 1
T = 1.0
b = ["0"]
sigma = [["0"]]
g = "cos(x1)"

[actions]
u_grid = { min = -1.0, max = 1.0, count = 3 }
v_grid = { min = -1.0, max = 1.0, count = 3 }
"#;

    #[test]
    fn lcm_of_meshes() {
        assert_eq!(lcm(&[4, 8, 16, 32]), 32);
        assert_eq!(lcm(&[4, 6]), 12);
    }

    #[test]
    fn frozen_model_saddle_has_full_slack() {
        let cfg = config(FROZEN);
        let study = run_convergence_study(&cfg).unwrap();
        let r = run_saddle_check(&cfg, 0.05, 4, &study.solved, study.tol).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        for p in &r.points {
            assert!((p.base_mean - p.x[0].cos()).abs() < 1e-14);
            assert!(p
                .entries
                .iter()
                .all(|e| e.mean == p.base_mean && e.diff_mean == 0.0 && e.diff_std_err == 0.0));
            assert!((p.slack_u - 0.1).abs() < 1e-15 && (p.slack_v - 0.1).abs() < 1e-15);
        }
        assert_eq!(r.battery_u.len(), 7);
        assert_eq!(r.battery_v.len(), 7);
        let zero = run_saddle_check(&cfg, 0.0, 4, &study.solved, study.tol).unwrap();
        assert!(matches!(zero.verdict, Verdict::Inconclusive(_)));
    }

    #[test]
    fn inert_controller_has_no_lower_gap() {
        let text = FROZEN
            .replace("b = [\"0\"]", "b = [\"v1\"]")
            .replace("sigma = [[\"0\"]]", "sigma = [[\"1\"]]");
        let study = run_convergence_study(&config(&text)).unwrap();
        for s in &study.summary {
            assert!(s.max_lower_gap.abs() <= study.tol, "{s:?}");
        }
        assert_eq!(study.table.violations(), 0);
    }
}
