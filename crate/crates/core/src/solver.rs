//! Backward explicit solver for the terminal-value lower Isaacs equation
//! `-v_t - H^-(t, x, v_x, v_xx) = 0`, `v(T, .) = g`, on a truncated box.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::SpatialGrid;
use crate::hamiltonian::DerivativePair;
use crate::model::GameModel;
use crate::scheme::{Control, Field};

/// Fraction of the monotonicity limit used when choosing a time step.
pub const CFL_SAFETY: f64 = 0.9;

/// Closure applied on the faces of the truncated box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryMode {
    /// Second derivative across the face is zero; outward drift is dropped.
    ZeroSecondDerivative,
}

/// Numerical value function on a space-time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    grid: SpatialGrid,
    /// Solver times from `T` down to `s`.
    times: Vec<f64>,
    /// One nodal array per entry of `times`.
    values: Vec<Vec<f64>>,
    boundary: BoundaryMode,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolveOptions {
    /// Fixed number of time steps; defaults to the smallest count meeting [`cfl_step`].
    pub steps: Option<usize>,
}

/// Largest stable explicit step: `CFL_SAFETY / max rate`, where the rate at a
/// node and action pair is the total stencil weight
/// (`sigma^2 / dx^2 + |b| / dx` in one dimension). Returns infinity when there
/// are no dynamics at all.
pub fn cfl_step(m: &GameModel, grid: &SpatialGrid) -> Result<f64> {
    let mut field = Field::new(m, grid)?;
    let samples = if m.is_time_dependent() { 33 } else { 1 };
    let mut rate: f64 = 0.0;
    for i in 0..samples {
        let t = if samples == 1 {
            0.0
        } else {
            m.horizon() * i as f64 / (samples - 1) as f64
        };
        rate = rate.max(field.max_rate_at(t)?);
    }
    Ok(if rate > 0.0 { CFL_SAFETY / rate } else { f64::INFINITY })
}

/// Number of equal steps covering `[lo, hi]` without exceeding `dt_max`.
pub fn steps_for(hi: f64, lo: f64, dt_max: f64) -> usize {
    if !dt_max.is_finite() {
        return 1;
    }
    let n = libm::ceil((hi - lo) / dt_max - 1e-9);
    (n as usize).max(1)
}

pub fn solve_lower_isaacs(m: &GameModel, grid: &SpatialGrid, s: f64) -> Result<ValueFunction> {
    solve_lower_isaacs_with(m, grid, s, SolveOptions::default())
}

pub fn solve_lower_isaacs_with(m: &GameModel, grid: &SpatialGrid, s: f64, opts: SolveOptions) -> Result<ValueFunction> {
    solve_with_control(m, grid, s, opts, Control::Lower)
}

/// Same scheme with `H^+` (inf over V of sup over U).
pub fn solve_upper_isaacs_with(m: &GameModel, grid: &SpatialGrid, s: f64, opts: SolveOptions) -> Result<ValueFunction> {
    solve_with_control(m, grid, s, opts, Control::Upper)
}

fn solve_with_control(
    m: &GameModel,
    grid: &SpatialGrid,
    s: f64,
    opts: SolveOptions,
    control: Control<'_>,
) -> Result<ValueFunction> {
    let horizon = m.horizon();
    if !(s < horizon && s >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "start time {s} must lie in [0, {horizon})"
        )));
    }
    let n = match opts.steps {
        Some(0) => return Err(Error::InvalidArgument("steps must be positive".into())),
        Some(n) => n,
        None => steps_for(horizon, s, cfl_step(m, grid)?),
    };
    let terminal = terminal_values(m, grid)?;
    let mut field = Field::new(m, grid)?;
    let values = field.march(terminal, horizon, s, n, control, true)?;
    let times = (0..=n)
        .map(|j| {
            if j == n {
                s
            } else {
                horizon - (horizon - s) * j as f64 / n as f64
            }
        })
        .collect();
    Ok(ValueFunction {
        grid: grid.clone(),
        times,
        values,
        boundary: BoundaryMode::ZeroSecondDerivative,
    })
}

pub(crate) fn terminal_values(m: &GameModel, grid: &SpatialGrid) -> Result<Vec<f64>> {
    let mut x = vec![0.0; grid.dim()];
    (0..grid.len())
        .map(|node| {
            grid.coords_into(node, &mut x);
            m.payoff(&x)
        })
        .collect()
}

impl ValueFunction {
    /// Builds a value function from explicit levels (times descending).
    pub fn from_levels(grid: SpatialGrid, times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() < 2 || times.len() != values.len() {
            return Err(Error::InvalidArgument("need at least two levels, one per time".into()));
        }
        if times.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::InvalidArgument("times must be strictly decreasing".into()));
        }
        if values.iter().any(|v| v.len() != grid.len()) {
            return Err(Error::GridMismatch("level size differs from grid size".into()));
        }
        Ok(ValueFunction {
            grid,
            times,
            values,
            boundary: BoundaryMode::ZeroSecondDerivative,
        })
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn boundary_mode(&self) -> BoundaryMode {
        self.boundary
    }

    pub fn start_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn final_time(&self) -> f64 {
        self.times[0]
    }

    /// Nodal values at the start time `s`.
    pub fn initial_slice(&self) -> &[f64] {
        self.values.last().unwrap()
    }

    /// Same grid and times with `f` applied to every value.
    pub fn map_values<F: Fn(f64) -> f64>(&self, f: F) -> ValueFunction {
        ValueFunction {
            values: self.values.iter().map(|l| l.iter().map(|&v| f(v)).collect()).collect(),
            ..self.clone()
        }
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let (lo, hi) = (self.start_time(), self.final_time());
        let slack = 1e-12 * (hi - lo);
        if t < lo - slack || t > hi + slack || !t.is_finite() {
            return Err(Error::OutOfDomain(format!("t = {t} outside [{lo}, {hi}]")));
        }
        Ok(())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if !self.grid.contains(x) {
            return Err(Error::OutOfDomain(format!("x = {x:?} outside the spatial grid")));
        }
        Ok(())
    }

    /// Bracketing levels `(j, j + 1)` and the weight of level `j`.
    fn bracket(&self, t: f64) -> (usize, f64) {
        // times are descending
        let n = self.times.len();
        let j = self.times.partition_point(|&tau| tau > t).min(n - 1);
        if j == 0 {
            return (0, 1.0);
        }
        let (hi, lo) = (self.times[j - 1], self.times[j]);
        let w_hi = ((t - lo) / (hi - lo)).clamp(0.0, 1.0);
        (j - 1, w_hi)
    }

    /// Index of the time level closest to `t`.
    pub fn nearest_level(&self, t: f64) -> usize {
        let (j, w) = self.bracket(t);
        if w >= 0.5 || j + 1 >= self.times.len() {
            j
        } else {
            j + 1
        }
    }

    /// Interpolated value (linear in time, multilinear in space).
    pub fn value(&self, t: f64, x: &[f64]) -> Result<f64> {
        self.check_time(t)?;
        self.check_point(x)?;
        Ok(self.value_unchecked(t, x))
    }

    pub(crate) fn value_unchecked(&self, t: f64, x: &[f64]) -> f64 {
        let (j, w) = self.bracket(t);
        let hi = self.grid.interpolate(&self.values[j], x);
        if w == 1.0 || j + 1 >= self.values.len() {
            return hi;
        }
        w * hi + (1.0 - w) * self.grid.interpolate(&self.values[j + 1], x)
    }

    /// Value and finite-difference derivatives. Derivatives are central
    /// differences at the nearest node of the nearest time level; on a face
    /// the normal first derivative is one-sided and second derivatives across
    /// it are zero.
    pub fn query(&self, t: f64, x: &[f64]) -> Result<(f64, DerivativePair)> {
        self.check_time(t)?;
        self.check_point(x)?;
        let value = self.value_unchecked(t, x);
        let level = self.nearest_level(t);
        let node = self.grid.nearest_node(x);
        Ok((value, self.node_derivatives(level, node)))
    }

    pub fn node_derivatives(&self, level: usize, node: usize) -> DerivativePair {
        let g = &self.grid;
        let d = g.dim();
        let v = &self.values[level];
        let h = g.spacing();
        let mut p = vec![0.0; d];
        let mut m = vec![0.0; d * d];
        let at_lo = |n: usize, a: usize| g.axis_index(n, a) == 0;
        let at_hi = |n: usize, a: usize| g.axis_index(n, a) + 1 == g.count()[a];
        for i in 0..d {
            let s = g.stride(i);
            let (lo, hi) = (at_lo(node, i), at_hi(node, i));
            p[i] = match (lo, hi) {
                (false, false) => (v[node + s] - v[node - s]) / (2.0 * h[i]),
                (true, _) => (v[node + s] - v[node]) / h[i],
                (_, true) => (v[node] - v[node - s]) / h[i],
            };
            if !(lo || hi) {
                m[i * d + i] = (v[node + s] - 2.0 * v[node] + v[node - s]) / (h[i] * h[i]);
            }
        }
        for i in 0..d {
            for j in i + 1..d {
                if at_lo(node, i) || at_hi(node, i) || at_lo(node, j) || at_hi(node, j) {
                    continue;
                }
                let (si, sj) = (g.stride(i), g.stride(j));
                let c = (v[node + si + sj] - v[node + si - sj] - v[node - si + sj] + v[node - si - sj])
                    / (4.0 * h[i] * h[j]);
                m[i * d + j] = c;
                m[j * d + i] = c;
            }
        }
        DerivativePair { p, m }
    }
}

pub fn query_value(vf: &ValueFunction, t: f64, x: &[f64]) -> Result<(f64, DerivativePair)> {
    vf.query(t, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{cancellation, model};
    use crate::model::Axis;

    fn inert(b: &str, sigma: &str, g: &str) -> GameModel {
        let a = Axis::new(0.0, 0.0, 1);
        model(b, sigma, g, a, a)
    }

    #[test]
    fn cfl_examples() {
        let g = SpatialGrid::cube(1, -1.0, 1.0, 0.1).unwrap();
        let dt = cfl_step(&inert("0", "1", "x1"), &g).unwrap();
        assert!((dt - 0.009).abs() < 1e-15);
        let drift_only = cfl_step(&inert("1", "0", "x1"), &g).unwrap();
        assert!((drift_only - 0.09).abs() < 1e-15);
        let fine = SpatialGrid::cube(1, -1.0, 1.0, 0.05).unwrap();
        let dt2 = cfl_step(&inert("0", "1", "x1"), &fine).unwrap();
        assert!((dt / dt2 - 4.0).abs() < 1e-12);
        assert_eq!(cfl_step(&inert("0", "0", "x1"), &g).unwrap(), f64::INFINITY);
    }

    #[test]
    fn frozen_dynamics_keep_the_payoff() {
        let m = inert("0", "0", "sin(x1) + x1^2");
        let g = SpatialGrid::cube(1, -2.0, 2.0, 0.25).unwrap();
        let vf = solve_lower_isaacs(&m, &g, 0.0).unwrap();
        let term = terminal_values(&m, &g).unwrap();
        assert_eq!(vf.initial_slice(), &term[..]);
        assert_eq!(vf.levels()[0], term);
    }

    #[test]
    fn cfl_violation_is_reported() {
        let m = inert("0", "1", "cos(x1)");
        let g = SpatialGrid::cube(1, -2.0, 2.0, 0.1).unwrap();
        let err = solve_lower_isaacs_with(&m, &g, 0.0, SolveOptions { steps: Some(10) }).unwrap_err();
        assert!(matches!(err, Error::CflViolation { .. }));
    }

    #[test]
    fn payoff_faults_surface() {
        let m = inert("0", "1", "1 / x1");
        let g = SpatialGrid::cube(1, -1.0, 1.0, 0.5).unwrap();
        assert!(matches!(solve_lower_isaacs(&m, &g, 0.0), Err(Error::EvalFault { .. })));
        assert!(solve_lower_isaacs(&inert("0", "1", "x1"), &g, 1.0).is_err());
    }

    #[test]
    fn query_at_nodes_and_out_of_domain() {
        let m = cancellation(3);
        let g = SpatialGrid::cube(1, -3.0, 3.0, 0.25).unwrap();
        let vf = solve_lower_isaacs(&m, &g, 0.0).unwrap();
        let level = vf.times().len() - 1;
        for node in [0, 5, 12, 24] {
            let x = g.coords(node);
            assert_eq!(vf.value(0.0, &x).unwrap(), vf.levels()[level][node]);
            assert_eq!(vf.value(1.0, &x).unwrap(), vf.levels()[0][node]);
        }
        assert!(matches!(vf.query(0.5, &[3.5]), Err(Error::OutOfDomain(_))));
        assert!(matches!(vf.query(1.5, &[0.0]), Err(Error::OutOfDomain(_))));
        assert!(matches!(vf.query(-0.1, &[0.0]), Err(Error::OutOfDomain(_))));
    }

    #[test]
    fn constant_payoff_stays_constant() {
        let a = Axis::new(-1.0, 1.0, 3);
        let m = model("u1 * x1 - v1", "1 + 0.5 * sin(x1 * v1)", "2.5", a, a);
        let g = SpatialGrid::cube(1, -2.0, 2.0, 0.125).unwrap();
        let vf = solve_lower_isaacs(&m, &g, 0.0).unwrap();
        assert!(vf.levels().iter().all(|l| l.iter().all(|&v| v == 2.5)));
    }

    #[test]
    fn two_dimensional_heat_is_separable() {
        // E[cos(X1) cos(X2)] with independent unit noises: e^{-T}
        let a = Axis::new(0.0, 0.0, 1);
        let src = crate::model::fixtures::source(
            2,
            &["0", "0"],
            &[&["1", "0"], &["0", "1"]],
            "cos(x1) * cos(x2)",
            &[a],
            &[a],
        );
        let m = GameModel::from_source(&ModelSourceExt::with_horizon(src, 0.5)).unwrap();
        let g = SpatialGrid::cube(2, -6.0, 6.0, 0.125).unwrap();
        let vf = solve_lower_isaacs(&m, &g, 0.0).unwrap();
        let v = vf.value(0.0, &[0.0, 0.0]).unwrap();
        assert!((v - libm::exp(-0.5)).abs() < 2e-3, "{v}");
    }

    #[test]
    fn correlated_noise_is_monotone_and_bounded() {
        let a = Axis::new(0.0, 0.0, 1);
        let src = crate::model::fixtures::source(
            2,
            &["0", "0"],
            &[&["1", "0"], &["0.5", "0.8"]],
            "cos(x1 + x2)",
            &[a],
            &[a],
        );
        let m = GameModel::from_source(&ModelSourceExt::with_horizon(src, 0.25)).unwrap();
        let g = SpatialGrid::cube(2, -4.0, 4.0, 0.25).unwrap();
        let vf = solve_lower_isaacs(&m, &g, 0.0).unwrap();
        assert!(vf.levels().iter().flatten().all(|v| v.abs() <= 1.0 + 1e-12));
        // x1 + x2 has variance (1 + 0.25 + 0.64 + 2*0.5) * T = 2.89 * 0.25
        let v = vf.value(0.0, &[0.0, 0.0]).unwrap();
        assert!((v - libm::exp(-0.5 * 2.89 * 0.25)).abs() < 0.03, "{v}");
        let strong = crate::model::fixtures::source(2, &["0", "0"], &[&["1", "1"], &["1", "1"]], "x1", &[a], &[a]);
        let strong = GameModel::from_source(&strong).unwrap();
        // a_12 = 2 = a_11 = a_22: dominance holds with equality on a uniform grid
        assert!(cfl_step(&strong, &g).is_ok());
        let skew = crate::model::fixtures::source(2, &["0", "0"], &[&["2", "0"], &["1", "0.1"]], "x1", &[a], &[a]);
        let skew = GameModel::from_source(&skew).unwrap();
        assert!(matches!(cfl_step(&skew, &g), Err(Error::NonMonotone { .. })));
    }

    trait ModelSourceExt {
        fn with_horizon(self, t: f64) -> Self;
    }

    impl ModelSourceExt for crate::model::ModelSource {
        fn with_horizon(mut self, t: f64) -> Self {
            self.horizon = t;
            self
        }
    }
}
