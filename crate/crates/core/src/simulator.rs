//! Euler-Maruyama simulation of the controlled state under any pairing of
//! control sources, Monte Carlo payoff estimates, and the exit-frequency,
//! gauge and martingale-defect diagnostics.
//!
//! Path `i` of a run with master seed `s` draws its normals from
//! `CounterRng::new(s).stream(i)`, keyed by step and noise coordinate, so
//! every path is reproducible on its own and estimates do not depend on the
//! number of threads.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::hamiltonian::OperatorEval;
use crate::model::GameModel;
use crate::par;
use crate::rng::{mix64, CounterRng};
use crate::solver::ValueFunction;
use crate::special::normal_tail;
use crate::strategy::{SimpleMarkovCounterStrategy, SimpleMarkovStrategy};

/// The part of a path visible to a feedback rule at step `step`.
#[derive(Debug, Clone, Copy)]
pub struct PathView<'a> {
    pub start: f64,
    pub dt: f64,
    pub dim: usize,
    /// Flattened states `X_0, ..., X_step`.
    pub states: &'a [f64],
}

impl PathView<'_> {
    pub fn step(&self) -> usize {
        self.states.len() / self.dim - 1
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }

    pub fn current(&self) -> &[f64] {
        self.state(self.step())
    }
}

/// A non-anticipative rule choosing an action index from the path so far.
/// `opponent` carries the U index in force when the rule plays for V.
pub trait PathFeedback: Sync {
    fn action(&self, t: f64, path: &PathView<'_>, opponent: Option<usize>) -> Result<usize>;
}

pub enum ControlSource<'a> {
    Constant(usize),
    /// `(from, action)` pairs sorted by time; the last entry with `from <= t` applies.
    Schedule(Vec<(f64, usize)>),
    /// Uniform random action, redrawn every `hold` simulation steps.
    Random {
        seed: u64,
        hold: usize,
    },
    /// U side only.
    Markov(&'a SimpleMarkovStrategy),
    /// V side only.
    Counter(&'a SimpleMarkovCounterStrategy),
    Feedback(&'a dyn PathFeedback),
}

impl core::fmt::Debug for ControlSource<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ControlSource::Constant(i) => write!(f, "Constant({i})"),
            ControlSource::Schedule(s) => write!(f, "Schedule({s:?})"),
            ControlSource::Random { seed, hold } => write!(f, "Random {{ seed: {seed}, hold: {hold} }}"),
            ControlSource::Markov(_) => f.write_str("Markov"),
            ControlSource::Counter(_) => f.write_str("Counter"),
            ControlSource::Feedback(_) => f.write_str("Feedback"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub start: f64,
    pub x0: Vec<f64>,
    /// Simulation step; must divide `end - start` and land on every grid time in play.
    pub dt: f64,
    /// Defaults to the horizon.
    pub end: Option<f64>,
}

impl SimConfig {
    pub fn new(start: f64, x0: Vec<f64>, dt: f64) -> Self {
        SimConfig {
            start,
            x0,
            dt,
            end: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub times: Vec<f64>,
    /// Flattened `(steps + 1) x d`.
    pub states: Vec<f64>,
    pub u: Vec<usize>,
    pub v: Vec<usize>,
    /// Flattened `steps x d'` standard normal draws.
    pub normals: Vec<f64>,
    pub seed: u64,
    pub index: u64,
    pub payoff: f64,
}

impl Path {
    pub fn state(&self, j: usize) -> &[f64] {
        let d = self.states.len() / self.times.len();
        &self.states[j * d..(j + 1) * d]
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.times.len() - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayoffEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub dt: f64,
}

impl PayoffEstimate {
    pub fn from_samples(samples: &[f64], seed: u64, dt: f64) -> Self {
        let n = samples.len();
        let mean = par::pairwise_sum(samples) / n as f64;
        let sq: Vec<f64> = samples.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = if n > 1 {
            par::pairwise_sum(&sq) / (n - 1) as f64
        } else {
            0.0
        };
        PayoffEstimate {
            mean,
            std_err: libm::sqrt(var / n as f64),
            n_paths: n,
            seed,
            dt,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    U,
    V,
}

struct Plan<'m, 's> {
    model: &'m GameModel,
    u: &'s ControlSource<'s>,
    v: &'s ControlSource<'s>,
    start: f64,
    end: f64,
    steps: usize,
    dt: f64,
    x0: Vec<f64>,
    seed: u64,
    /// Per source side, the grid interval of each step and its snapshot step.
    u_grid: Option<GridPlan>,
    v_grid: Option<GridPlan>,
}

struct GridPlan {
    interval: Vec<usize>,
    snapshot: Vec<usize>,
}

fn grid_plan(pi: &TimeGrid, start: f64, end: f64, steps: usize) -> Result<GridPlan> {
    let dt = (end - start) / steps as f64;
    let slack = 1e-9 * (end - start).max(1.0);
    if pi.start() > start + slack || pi.end() < end - slack {
        return Err(Error::GridMismatch(format!(
            "strategy grid [{}, {}] does not cover [{start}, {end}]",
            pi.start(),
            pi.end()
        )));
    }
    for &tk in pi.times() {
        if tk > start + slack && tk < end - slack {
            let r = (tk - start) / dt;
            if libm::fabs(r - libm::round(r)) > 1e-6 {
                return Err(Error::GridMismatch(format!(
                    "simulation step {dt} does not land on grid time {tk}"
                )));
            }
        }
    }
    let mut interval = Vec::with_capacity(steps);
    for j in 0..steps {
        interval.push(pi.interval_of(start + (j as f64 + 0.5) * dt)?);
    }
    let snapshot = pi.times()[..pi.intervals()]
        .iter()
        .map(|&t| {
            if t <= start {
                0
            } else {
                libm::round((t - start) / dt) as usize
            }
        })
        .collect();
    Ok(GridPlan { interval, snapshot })
}

impl<'m, 's> Plan<'m, 's> {
    fn new(
        model: &'m GameModel,
        u: &'s ControlSource<'s>,
        v: &'s ControlSource<'s>,
        cfg: &SimConfig,
        seed: u64,
    ) -> Result<Self> {
        let end = cfg.end.unwrap_or(model.horizon());
        if cfg.x0.len() != model.dim() {
            return Err(Error::DimensionMismatch {
                what: "initial state".into(),
                expected: model.dim(),
                found: cfg.x0.len(),
            });
        }
        if !(cfg.start >= 0.0 && cfg.start < end && end <= model.horizon() + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "simulation window [{}, {end}] must satisfy 0 <= start < end <= {}",
                cfg.start,
                model.horizon()
            )));
        }
        if !(cfg.dt > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "simulation step must be positive, got {}",
                cfg.dt
            )));
        }
        let r = (end - cfg.start) / cfg.dt;
        let steps = libm::round(r);
        if steps < 1.0 || libm::fabs(r - steps) > 1e-6 {
            return Err(Error::GridMismatch(format!(
                "simulation step {} does not divide [{}, {end}]",
                cfg.dt, cfg.start
            )));
        }
        let steps = steps as usize;
        let mut plan = Plan {
            model,
            u,
            v,
            start: cfg.start,
            end,
            steps,
            dt: (end - cfg.start) / steps as f64,
            x0: cfg.x0.clone(),
            seed,
            u_grid: None,
            v_grid: None,
        };
        plan.u_grid = plan.check(u, Side::U)?;
        plan.v_grid = plan.check(v, Side::V)?;
        Ok(plan)
    }

    fn check(&self, src: &ControlSource<'_>, side: Side) -> Result<Option<GridPlan>> {
        let m = self.model;
        let n = match side {
            Side::U => m.u_grid().len(),
            Side::V => m.v_grid().len(),
        };
        let bad = |i: usize| Error::InvalidArgument(format!("action index {i} out of range for {n} actions"));
        match src {
            ControlSource::Constant(i) if *i >= n => Err(bad(*i)),
            ControlSource::Schedule(s) => {
                if s.is_empty() {
                    return Err(Error::InvalidArgument("empty action schedule".into()));
                }
                match s.iter().find(|(_, i)| *i >= n) {
                    Some((_, i)) => Err(bad(*i)),
                    None => Ok(None),
                }
            }
            ControlSource::Random { hold: 0, .. } => Err(Error::InvalidArgument("random hold must be positive".into())),
            ControlSource::Markov(alpha) => {
                if side != Side::U {
                    return Err(Error::InvalidArgument("a Markov strategy drives the U side".into()));
                }
                if alpha.spatial_grid().dim() != m.dim() {
                    return Err(Error::GridMismatch(
                        "strategy grid dimension differs from the model".into(),
                    ));
                }
                if alpha.tables().iter().flatten().any(|&i| i >= n) {
                    return Err(Error::GridMismatch(
                        "strategy table refers to a missing U action".into(),
                    ));
                }
                grid_plan(alpha.time_grid(), self.start, self.end, self.steps).map(Some)
            }
            ControlSource::Counter(gamma) => {
                if side != Side::V {
                    return Err(Error::InvalidArgument("a counter-strategy drives the V side".into()));
                }
                if gamma.u_grid() != m.u_grid() || gamma.spatial_grid().dim() != m.dim() {
                    return Err(Error::GridMismatch(
                        "counter-strategy was built for a different model".into(),
                    ));
                }
                if gamma.tables().iter().flatten().any(|&i| i >= n) {
                    return Err(Error::GridMismatch(
                        "counter-strategy table refers to a missing V action".into(),
                    ));
                }
                grid_plan(gamma.time_grid(), self.start, self.end, self.steps).map(Some)
            }
            _ => Ok(None),
        }
    }

    fn time(&self, j: usize) -> f64 {
        if j == self.steps {
            self.end
        } else {
            self.start + (self.end - self.start) * j as f64 / self.steps as f64
        }
    }

    fn choose(
        &self,
        src: &ControlSource<'_>,
        side: Side,
        j: usize,
        index: u64,
        states: &[f64],
        opponent: Option<usize>,
    ) -> Result<usize> {
        let d = self.model.dim();
        let t = self.time(j);
        let n = match side {
            Side::U => self.model.u_grid().len(),
            Side::V => self.model.v_grid().len(),
        };
        let snap = |plan: &GridPlan| {
            let k = plan.interval[j];
            let s = plan.snapshot[k - 1];
            (k, &states[s * d..(s + 1) * d])
        };
        let a = match src {
            ControlSource::Constant(i) => *i,
            ControlSource::Schedule(s) => {
                let pos = s.partition_point(|(from, _)| *from <= t + 1e-12);
                s[pos.saturating_sub(1)].1
            }
            ControlSource::Random { seed, hold } => CounterRng::new(*seed ^ mix64(self.seed))
                .stream(index)
                .index((j / hold) as u64, n),
            ControlSource::Markov(alpha) => {
                let (k, x) = snap(self.u_grid.as_ref().unwrap());
                alpha.table_action(k, alpha.spatial_grid().nearest_node(x))
            }
            ControlSource::Counter(gamma) => {
                let (k, x) = snap(self.v_grid.as_ref().unwrap());
                gamma.table_action(k, gamma.spatial_grid().nearest_node(x), opponent.unwrap_or(0))
            }
            ControlSource::Feedback(fb) => {
                let view = PathView {
                    start: self.start,
                    dt: self.dt,
                    dim: d,
                    states,
                };
                let a = fb.action(t, &view, opponent)?;
                if a >= n {
                    return Err(Error::PathFault {
                        step: j,
                        reason: format!("feedback returned action {a} of {n}"),
                    });
                }
                a
            }
        };
        Ok(a)
    }

    fn run(&self, index: u64, record: bool) -> Result<Path> {
        let m = self.model;
        let (d, dp) = (m.dim(), m.noise_dim());
        let rng = CounterRng::new(self.seed).stream(index);
        let sq = libm::sqrt(self.dt);
        let mut states = Vec::with_capacity((self.steps + 1) * d);
        states.extend_from_slice(&self.x0);
        let mut us = Vec::with_capacity(if record { self.steps } else { 0 });
        let mut vs = Vec::with_capacity(us.capacity());
        let mut normals = Vec::with_capacity(if record { self.steps * dp } else { 0 });
        let mut b = vec![0.0; d];
        let mut s = vec![0.0; d * dp];
        let mut z = vec![0.0; dp];
        let mut x = self.x0.clone();
        for j in 0..self.steps {
            let t = self.time(j);
            let ui = self.choose(self.u, Side::U, j, index, &states, None)?;
            let vi = self.choose(self.v, Side::V, j, index, &states, Some(ui))?;
            let fault = |e: Error| Error::PathFault {
                step: j,
                reason: format!("{e}"),
            };
            m.drift_into(t, &x, ui, vi, &mut b).map_err(fault)?;
            m.sigma_into(t, &x, ui, vi, &mut s).map_err(fault)?;
            for (c, zc) in z.iter_mut().enumerate() {
                *zc = rng.normal((j * dp + c) as u64);
            }
            for i in 0..d {
                let mut next = x[i] + b[i] * self.dt;
                for c in 0..dp {
                    next += s[i * dp + c] * sq * z[c];
                }
                x[i] = next;
            }
            if x.iter().any(|c| !c.is_finite()) {
                return Err(Error::PathFault {
                    step: j,
                    reason: String::from("state became non-finite"),
                });
            }
            states.extend_from_slice(&x);
            if record {
                us.push(ui);
                vs.push(vi);
                normals.extend_from_slice(&z);
            }
        }
        Ok(Path {
            times: (0..=self.steps).map(|j| self.time(j)).collect(),
            states,
            u: us,
            v: vs,
            normals,
            seed: self.seed,
            index,
            payoff: f64::NAN,
        })
    }

    /// Runs `n` paths and maps each through `f`, failing if any path fails.
    fn batch<T, F>(&self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&Path) -> Result<T> + Sync + Send,
    {
        let out = par::map_indexed(n, |i| self.run(i as u64, false).and_then(|p| f(&p)));
        let failed = out.iter().filter(|r| r.is_err()).count();
        if failed > 0 {
            let (i, first) = out
                .iter()
                .enumerate()
                .find_map(|(i, r)| r.as_ref().err().map(|e| (i, e)))
                .unwrap();
            let step = match first {
                Error::PathFault { step, .. } => *step,
                _ => 0,
            };
            return Err(Error::PathFault {
                step,
                reason: format!("{failed} of {n} paths failed; path {i}: {first}"),
            });
        }
        Ok(out.into_iter().map(|r| r.unwrap()).collect())
    }
}

/// Path `index` of the run with master `seed`, with actions and draws recorded.
pub fn simulate_path(
    m: &GameModel,
    u: &ControlSource<'_>,
    v: &ControlSource<'_>,
    cfg: &SimConfig,
    seed: u64,
    index: u64,
) -> Result<Path> {
    let plan = Plan::new(m, u, v, cfg, seed)?;
    let mut path = plan.run(index, true)?;
    path.payoff = m.payoff(path.terminal())?;
    Ok(path)
}

/// Terminal payoffs of paths `0..n_paths`, in path order.
pub fn mc_payoff_samples(
    m: &GameModel,
    u: &ControlSource<'_>,
    v: &ControlSource<'_>,
    cfg: &SimConfig,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_paths < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 paths, got {n_paths}")));
    }
    let plan = Plan::new(m, u, v, cfg, seed)?;
    plan.batch(n_paths, |p| m.payoff(p.terminal()))
}

pub fn mc_payoff(
    m: &GameModel,
    u: &ControlSource<'_>,
    v: &ControlSource<'_>,
    cfg: &SimConfig,
    n_paths: usize,
    seed: u64,
) -> Result<PayoffEstimate> {
    let samples = mc_payoff_samples(m, u, v, cfg, n_paths, seed)?;
    Ok(PayoffEstimate::from_samples(&samples, seed, cfg.dt))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitEstimate {
    pub frequency: f64,
    /// Binomial standard error `sqrt(f (1 - f) / n)`.
    pub std_err: f64,
    pub exits: usize,
    pub n_paths: usize,
    /// `gauge_tail_bound(t - r, eps, c, d)`.
    pub bound: f64,
}

/// Fraction of paths started at `(r, x0)` whose discretely monitored
/// `max |X_t' - x0|_inf` over `[r, t]` reaches `eps / 2`. The window
/// `[cfg.start, cfg.end]` is `[r, t]` and must satisfy
/// `t - r <= min(eps / 2, eps / (4 c))`.
pub fn exit_frequency(
    m: &GameModel,
    u: &ControlSource<'_>,
    v: &ControlSource<'_>,
    cfg: &SimConfig,
    eps: f64,
    c: f64,
    n_paths: usize,
    seed: u64,
) -> Result<ExitEstimate> {
    let end = cfg.end.unwrap_or(m.horizon());
    let len = end - cfg.start;
    let bound = gauge_tail_bound(len, eps, c, m.dim())?;
    let limit = (eps / 2.0).min(eps / (4.0 * c));
    if len > limit * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "window length {len} exceeds min(eps/2, eps/(4C)) = {limit}"
        )));
    }
    if n_paths < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 paths, got {n_paths}")));
    }
    let plan = Plan::new(m, u, v, cfg, seed)?;
    let d = m.dim();
    let half = eps / 2.0;
    let flags = plan.batch(n_paths, |p| {
        let exited = p
            .states
            .chunks(d)
            .any(|x| x.iter().zip(&cfg.x0).any(|(a, b)| libm::fabs(a - b) >= half));
        Ok(exited)
    })?;
    let exits = flags.iter().filter(|&&e| e).count();
    let f = exits as f64 / n_paths as f64;
    Ok(ExitEstimate {
        frequency: f,
        std_err: libm::sqrt(f * (1.0 - f) / n_paths as f64),
        exits,
        n_paths,
        bound,
    })
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

/// `4 d P(N(0,1) >= eps / (4 C sqrt(t - r)))`.
pub fn gauge_tail_bound(t_minus_r: f64, eps: f64, c: f64, d: usize) -> Result<f64> {
    positive("t - r", t_minus_r)?;
    positive("eps", eps)?;
    positive("C", c)?;
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    Ok(4.0 * d as f64 * normal_tail(eps / (4.0 * c * libm::sqrt(t_minus_r))))
}

/// `2 |v|_inf C' / t * P(N(0,1) >= eps / (4 C sqrt(t)))`.
pub fn gauge_function(t: f64, eps: f64, c: f64, c_prime: f64, sup_norm: f64) -> Result<f64> {
    positive("t", t)?;
    positive("eps", eps)?;
    positive("C", c)?;
    positive("C'", c_prime)?;
    positive("sup norm", sup_norm)?;
    Ok(2.0 * sup_norm * c_prime / t * normal_tail(eps / (4.0 * c * libm::sqrt(t))))
}

/// The constant `C'` of the exit bound, `4 d`.
pub fn exit_constant(d: usize) -> f64 {
    4.0 * d as f64
}

/// Estimates `E[w(t, X_t) - w(r, x0)]` with U holding `xi_k(x0)` over
/// `[r, t]`, where `k` is the grid interval containing `r` (`t_{k-1} <= r < t_k`).
pub fn martingale_defect(
    w: &ValueFunction,
    m: &GameModel,
    alpha: &SimpleMarkovStrategy,
    v: &ControlSource<'_>,
    cfg: &SimConfig,
    n_paths: usize,
    seed: u64,
) -> Result<PayoffEstimate> {
    let r = cfg.start;
    let t = cfg.end.unwrap_or(m.horizon());
    let pi = alpha.time_grid();
    if !(r >= pi.start() && r < pi.end()) {
        return Err(Error::InvalidArgument(format!(
            "start time {r} is outside [{}, {})",
            pi.start(),
            pi.end()
        )));
    }
    let k = pi.times().partition_point(|&tk| tk <= r);
    let held = alpha.table_action(k, alpha.spatial_grid().nearest_node(&cfg.x0));
    let base = w.value(r, &cfg.x0)?;
    if n_paths < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 paths, got {n_paths}")));
    }
    let u = ControlSource::Constant(held);
    let plan = Plan::new(m, &u, v, cfg, seed)?;
    let samples = plan.batch(n_paths, |p| Ok(w.value(t, p.terminal())? - base))?;
    Ok(PayoffEstimate::from_samples(&samples, seed, cfg.dt))
}

/// Feedback read off a value function at the current state: for U the
/// maximiser of the lower Hamiltonian, for V the counter response to the U
/// action in force.
pub struct ValueFeedback<'a> {
    pub model: &'a GameModel,
    pub value: &'a ValueFunction,
}

impl PathFeedback for ValueFeedback<'_> {
    fn action(&self, t: f64, path: &PathView<'_>, opponent: Option<usize>) -> Result<usize> {
        let x = path.current();
        let vf = self.value;
        let tq = t.clamp(vf.start_time(), vf.final_time());
        let dp = vf.node_derivatives(vf.nearest_level(tq), vf.grid().nearest_node(x));
        let mut ev = OperatorEval::new(self.model);
        match opponent {
            None => Ok(ev.lower(t, x, &dp)?.best_u),
            Some(ui) => Ok(ev.counter_response(t, x, &dp, ui)?.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpatialGrid;
    use crate::model::fixtures::{cancellation, model};
    use crate::model::Axis;
    use crate::solver::solve_lower_isaacs;
    use crate::strategy::{synthesize_markov_counter_strategy, synthesize_markov_strategy};

    fn inert(b: &str, sigma: &str, g: &str) -> GameModel {
        let a = Axis::new(-1.0, 1.0, 3);
        model(b, sigma, g, a, a)
    }

    #[test]
    fn frozen_dynamics_keep_the_start() {
        let m = inert("0", "0", "x1^2 + 1");
        let cfg = SimConfig::new(0.0, vec![0.7], 0.1);
        let p = simulate_path(&m, &ControlSource::Constant(0), &ControlSource::Constant(0), &cfg, 1, 0).unwrap();
        assert!(p.states.iter().all(|&x| x == 0.7));
        assert_eq!(p.payoff, 0.7 * 0.7 + 1.0);
        let est = mc_payoff(
            &m,
            &ControlSource::Constant(0),
            &ControlSource::Constant(2),
            &cfg,
            10,
            1,
        )
        .unwrap();
        assert_eq!((est.mean, est.std_err), (0.7 * 0.7 + 1.0, 0.0));
    }

    #[test]
    fn constant_drift_is_integrated_exactly() {
        let m = inert("u1", "0", "x1");
        let cfg = SimConfig::new(0.0, vec![0.0], 0.1);
        let p = simulate_path(&m, &ControlSource::Constant(2), &ControlSource::Constant(0), &cfg, 9, 3).unwrap();
        assert!((p.terminal()[0] - 1.0).abs() < 1e-12);
        assert_eq!(p.times.len(), 11);
    }

    #[test]
    fn euler_recursion_replays_from_recorded_draws() {
        let m = model(
            "sin(x1) + u1 * v1",
            "1 + 0.5 * cos(x1 * v1)",
            "x1",
            Axis::new(-1.0, 1.0, 3),
            Axis::new(-1.0, 1.0, 2),
        );
        let cfg = SimConfig::new(0.25, vec![0.3], 1.0 / 64.0);
        let u = ControlSource::Random { seed: 5, hold: 3 };
        let v = ControlSource::Random { seed: 6, hold: 1 };
        let p = simulate_path(&m, &u, &v, &cfg, 11, 4).unwrap();
        let mut b = [0.0];
        let mut s = [0.0];
        for j in 0..p.u.len() {
            let x = p.state(j);
            m.drift_into(p.times[j], x, p.u[j], p.v[j], &mut b).unwrap();
            m.sigma_into(p.times[j], x, p.u[j], p.v[j], &mut s).unwrap();
            let next = x[0] + b[0] * cfg.dt + s[0] * libm::sqrt(cfg.dt) * p.normals[j];
            assert_eq!(next, p.state(j + 1)[0]);
        }
        // hold of 3 steps
        assert!(p.u.chunks(3).all(|c| c.iter().all(|&a| a == c[0])));
        let again = simulate_path(&m, &u, &v, &cfg, 11, 4).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn markov_actions_are_constant_per_interval() {
        let m = cancellation(3);
        let g = SpatialGrid::cube(1, -6.0, 6.0, 0.125).unwrap();
        let vf = solve_lower_isaacs(&m, &g, 0.0).unwrap();
        let pi = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let alpha = synthesize_markov_strategy(&m, &vf, &pi).unwrap();
        let gamma = synthesize_markov_counter_strategy(&m, &vf, &pi).unwrap();
        let cfg = SimConfig::new(0.0, vec![0.4], 1.0 / 32.0);
        let fb = ValueFeedback { model: &m, value: &vf };
        for v in [
            ControlSource::Counter(&gamma),
            ControlSource::Feedback(&fb),
            ControlSource::Random { seed: 1, hold: 1 },
        ] {
            let p = simulate_path(&m, &ControlSource::Markov(&alpha), &v, &cfg, 2, 0).unwrap();
            for k in 0..4 {
                let block = &p.u[8 * k..8 * (k + 1)];
                assert!(block.iter().all(|&a| a == block[0]));
                assert_eq!(block[0], alpha.action(pi.times()[k + 1], p.state(8 * k)).unwrap());
            }
        }
        let bad = SimConfig::new(0.0, vec![0.4], 0.1);
        assert!(matches!(
            simulate_path(
                &m,
                &ControlSource::Markov(&alpha),
                &ControlSource::Constant(0),
                &bad,
                2,
                0
            ),
            Err(Error::GridMismatch(_))
        ));
        assert!(simulate_path(
            &m,
            &ControlSource::Counter(&gamma),
            &ControlSource::Constant(0),
            &cfg,
            2,
            0
        )
        .is_err());
    }

    #[test]
    fn brownian_moments() {
        let m = inert("0", "1", "x1");
        let cfg = SimConfig::new(0.0, vec![0.0], 1.0 / 16.0);
        let src = ControlSource::Constant(0);
        let est = mc_payoff(&m, &src, &src, &cfg, 20_000, 42).unwrap();
        assert!(est.mean.abs() < 3.0 * est.std_err, "{est:?}");
        let sq = inert("0", "1", "x1^2");
        let est = mc_payoff(&sq, &src, &src, &cfg, 20_000, 42).unwrap();
        assert!((est.mean - 1.0).abs() < 3.0 * est.std_err, "{est:?}");
        let late = SimConfig::new(0.5, vec![0.0], 1.0 / 16.0);
        let samples = mc_payoff_samples(&m, &src, &src, &late, 20_000, 7).unwrap();
        let e = PayoffEstimate::from_samples(&samples, 7, late.dt);
        let var = samples.iter().map(|x| (x - e.mean).powi(2)).sum::<f64>() / (samples.len() - 1) as f64;
        assert!((var - 0.5).abs() < 0.05 * 0.5, "{var}");
    }

    #[test]
    fn path_faults_are_counted() {
        let m = inert("1 / x1", "0", "x1");
        let cfg = SimConfig::new(0.0, vec![0.0], 0.05);
        let src = ControlSource::Constant(0);
        match mc_payoff(&m, &src, &src, &cfg, 4, 1) {
            Err(Error::PathFault { reason, .. }) => assert!(reason.starts_with("4 of 4"), "{reason}"),
            other => panic!("{other:?}"),
        }
        assert!(mc_payoff(&m, &src, &src, &cfg, 1, 1).is_err());
    }

    #[test]
    fn gauge_values() {
        assert!((gauge_tail_bound(0.01, 0.4, 1.0, 1).unwrap() - 0.634621015725828).abs() < 1e-12);
        assert!((gauge_tail_bound(0.0025, 0.4, 1.0, 1).unwrap() - 0.0910005277927168).abs() < 1e-12);
        assert_eq!(
            gauge_tail_bound(0.01, 0.4, 1.0, 2).unwrap(),
            2.0 * gauge_tail_bound(0.01, 0.4, 1.0, 1).unwrap()
        );
        assert!(gauge_tail_bound(1e-6, 0.4, 1.0, 1).unwrap() < 1e-100);
        assert!(gauge_tail_bound(0.0, 0.4, 1.0, 1).is_err());
        assert!(gauge_tail_bound(0.01, 0.4, 1.0, 0).is_err());
        let g = gauge_function(0.01, 0.4, 1.0, exit_constant(1), 1.0).unwrap();
        assert!((g - 126.92420314516564).abs() < 1e-9);
        let tiny = gauge_function(1e-4, 0.4, 1.0, 4.0, 1.0).unwrap();
        assert!((tiny / 6.0958824193284e-19 - 1.0).abs() < 1e-9);
        assert!(gauge_function(0.01, -0.4, 1.0, 4.0, 1.0).is_err());
        // eventually decreasing to zero
        let ts: Vec<f64> = (0..40).map(|i| libm::pow(10.0, -1.0 - i as f64 * 0.1)).collect();
        let vals: Vec<f64> = ts
            .iter()
            .map(|&t| gauge_function(t, 0.4, 1.0, 4.0, 1.0).unwrap())
            .collect();
        assert!(vals[20..].windows(2).all(|w| w[1] <= w[0]));
        assert!(*vals.last().unwrap() < 1e-30);
    }

    #[test]
    fn drift_alone_never_exits() {
        let m = inert("u1", "0", "x1");
        let cfg = SimConfig {
            start: 0.2,
            x0: vec![0.0],
            dt: 0.01,
            end: Some(0.3),
        };
        let est = exit_frequency(
            &m,
            &ControlSource::Constant(2),
            &ControlSource::Constant(0),
            &cfg,
            0.4,
            1.0,
            100,
            1,
        )
        .unwrap();
        assert_eq!(est.frequency, 0.0);
        let long = SimConfig { end: Some(0.5), ..cfg };
        assert!(exit_frequency(
            &m,
            &ControlSource::Constant(2),
            &ControlSource::Constant(0),
            &long,
            0.4,
            1.0,
            100,
            1
        )
        .is_err());
    }

    #[test]
    fn martingale_defect_of_frozen_state_is_zero_and_shift_invariant() {
        let m = inert("0", "0", "cos(x1)");
        let g = SpatialGrid::cube(1, -4.0, 4.0, 0.125).unwrap();
        let vf = solve_lower_isaacs(&m, &g, 0.0).unwrap();
        let pi = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let alpha = synthesize_markov_strategy(&m, &vf, &pi).unwrap();
        let cfg = SimConfig {
            start: 0.25,
            x0: vec![0.3],
            dt: 1.0 / 64.0,
            end: Some(0.5),
        };
        let e = martingale_defect(&vf, &m, &alpha, &ControlSource::Constant(1), &cfg, 8, 3).unwrap();
        assert_eq!((e.mean, e.std_err), (0.0, 0.0));

        let c = cancellation(3);
        let vf = solve_lower_isaacs(&c, &g, 0.0).unwrap();
        let alpha = synthesize_markov_strategy(&c, &vf, &pi).unwrap();
        let shifted = vf.map_values(|v| v + 0.75);
        let src = ControlSource::Random { seed: 2, hold: 1 };
        let a = martingale_defect(&vf, &c, &alpha, &src, &cfg, 500, 3).unwrap();
        let b = martingale_defect(&shifted, &c, &alpha, &src, &cfg, 500, 3).unwrap();
        assert!((a.mean - b.mean).abs() < 1e-12);
    }
}
