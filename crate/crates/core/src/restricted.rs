//! Values of the game when one side is restricted to a simple Markov
//! (counter-)strategy on a time grid, computed through augmented PDEs with a
//! frozen coordinate.
//!
//! * Against `xi`, the frozen coordinate is the U action `a` held over the
//!   interval and the opponent minimises: `-W_t - min_v L(t, x, a, v, DW, D^2 W) = 0`.
//! * Against `eta`, the frozen coordinate is the snapshot node `x^` and U
//!   maximises over `u` with `v = eta_k(x^, u)`. Snapshots sharing a table row
//!   share one solve.
//!
//! At every grid time the reset `Phi_{k-1}(x) = W_k(t_{k-1}, x, frozen(x))`
//! re-derives the frozen coordinate from the current state.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{SpatialGrid, TimeGrid};
use crate::model::GameModel;
use crate::scheme::{Control, Field};
use crate::solver::{cfl_step, steps_for, terminal_values, ValueFunction};
use crate::strategy::{SimpleMarkovCounterStrategy, SimpleMarkovStrategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrozenCoordinate {
    /// One entry per U action.
    ControllerAction,
    /// One entry per snapshot node.
    SnapshotNode,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RestrictedOptions {
    /// Target time step; defaults to the stability limit of the scheme. Pass
    /// the step used by the unrestricted solver to make the comparison exact.
    pub dt: Option<f64>,
}

/// Augmented solution on one interval `(t_{k-1}, t_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSolution {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
    /// Frozen coordinate to solve group.
    pub key: Vec<usize>,
    /// Per group, `W_k(t_{k-1}, .)` over the nodes.
    pub groups: Vec<Vec<f64>>,
    /// Reset value at `t_k`, the terminal data of this interval.
    pub end_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedValue {
    kind: FrozenCoordinate,
    spatial: SpatialGrid,
    grid: TimeGrid,
    intervals: Vec<IntervalSolution>,
    start_values: Vec<f64>,
}

fn check_grid(m: &GameModel, pi: &TimeGrid) -> Result<()> {
    let horizon = m.horizon();
    if (pi.end() - horizon).abs() > 1e-12 * horizon.max(1.0) || pi.start() < 0.0 {
        return Err(Error::GridMismatch(format!(
            "time grid [{}, {}] must end at the horizon {horizon}",
            pi.start(),
            pi.end()
        )));
    }
    Ok(())
}

fn interval_steps(len: f64, dt: f64) -> usize {
    let r = len / dt;
    let n = libm::round(r);
    if n >= 1.0 && (r - n).abs() <= 1e-9 * n {
        n as usize
    } else {
        steps_for(len, 0.0, dt)
    }
}

fn resolve_dt(m: &GameModel, grid: &SpatialGrid, opts: RestrictedOptions) -> Result<f64> {
    match opts.dt {
        Some(dt) if !(dt > 0.0) => Err(Error::InvalidArgument(format!("time step must be positive, got {dt}"))),
        Some(dt) => Ok(dt),
        None => cfl_step(m, grid),
    }
}

/// `v_pi^-`: best response of V to the strategy `alpha`.
pub fn adversary_best_response_value(
    m: &GameModel,
    alpha: &SimpleMarkovStrategy,
    opts: RestrictedOptions,
) -> Result<AugmentedValue> {
    let pi = alpha.time_grid();
    check_grid(m, pi)?;
    let grid = alpha.spatial_grid();
    let dt = resolve_dt(m, grid, opts)?;
    let mut field = Field::new(m, grid)?;
    let nu = m.u_grid().len();
    let mut phi = terminal_values(m, grid)?;
    let mut intervals = Vec::with_capacity(pi.intervals());
    for k in (1..=pi.intervals()).rev() {
        let (lo, hi) = (pi.times()[k - 1], pi.times()[k]);
        let steps = interval_steps(hi - lo, dt);
        let mut groups = Vec::with_capacity(nu);
        for a in 0..nu {
            let mut levels = field.march(phi.clone(), hi, lo, steps, Control::FrozenU(a), false)?;
            groups.push(levels.pop().unwrap());
        }
        let table = &alpha.tables()[k - 1];
        let next: Vec<f64> = (0..grid.len()).map(|node| groups[table[node]][node]).collect();
        intervals.push(IntervalSolution {
            start: lo,
            end: hi,
            steps,
            key: (0..nu).collect(),
            groups,
            end_values: core::mem::replace(&mut phi, next),
        });
    }
    intervals.reverse();
    Ok(AugmentedValue {
        kind: FrozenCoordinate::ControllerAction,
        spatial: grid.clone(),
        grid: pi.clone(),
        intervals,
        start_values: phi,
    })
}

/// `v_pi^+`: best response of U to the counter-strategy `gamma`. One space
/// dimension only, since the frozen snapshot doubles the state dimension.
pub fn controller_best_response_value(
    m: &GameModel,
    gamma: &SimpleMarkovCounterStrategy,
    opts: RestrictedOptions,
) -> Result<AugmentedValue> {
    if m.dim() != 1 {
        return Err(Error::Unsupported(format!(
            "the counter-strategy best response is implemented for d = 1, model has d = {}",
            m.dim()
        )));
    }
    if gamma.u_grid() != m.u_grid() {
        return Err(Error::GridMismatch(
            "counter-strategy was built for a different U grid".into(),
        ));
    }
    let pi = gamma.time_grid();
    check_grid(m, pi)?;
    let grid = gamma.spatial_grid();
    let dt = resolve_dt(m, grid, opts)?;
    let mut field = Field::new(m, grid)?;
    let mut phi = terminal_values(m, grid)?;
    let mut intervals = Vec::with_capacity(pi.intervals());
    for k in (1..=pi.intervals()).rev() {
        let (lo, hi) = (pi.times()[k - 1], pi.times()[k]);
        let steps = interval_steps(hi - lo, dt);
        let mut rows: BTreeMap<&[usize], usize> = BTreeMap::new();
        let mut order: Vec<&[usize]> = Vec::new();
        let key: Vec<usize> = (0..grid.len())
            .map(|snap| {
                let row = gamma.row(k, snap);
                *rows.entry(row).or_insert_with(|| {
                    order.push(row);
                    order.len() - 1
                })
            })
            .collect();
        let mut groups = Vec::with_capacity(order.len());
        for row in order {
            let mut levels = field.march(phi.clone(), hi, lo, steps, Control::Response(row), false)?;
            groups.push(levels.pop().unwrap());
        }
        let next: Vec<f64> = (0..grid.len()).map(|node| groups[key[node]][node]).collect();
        intervals.push(IntervalSolution {
            start: lo,
            end: hi,
            steps,
            key,
            groups,
            end_values: core::mem::replace(&mut phi, next),
        });
    }
    intervals.reverse();
    Ok(AugmentedValue {
        kind: FrozenCoordinate::SnapshotNode,
        spatial: grid.clone(),
        grid: pi.clone(),
        intervals,
        start_values: phi,
    })
}

impl AugmentedValue {
    pub fn kind(&self) -> FrozenCoordinate {
        self.kind
    }

    pub fn spatial_grid(&self) -> &SpatialGrid {
        &self.spatial
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn intervals(&self) -> &[IntervalSolution] {
        &self.intervals
    }

    /// The restricted value at the start of the grid, over the nodes.
    pub fn start_values(&self) -> &[f64] {
        &self.start_values
    }

    /// `W_k(t_{k-1}, node, frozen)`, `k` 1-based.
    pub fn interval_start_value(&self, k: usize, node: usize, frozen: usize) -> f64 {
        let iv = &self.intervals[k - 1];
        iv.groups[iv.key[frozen]][node]
    }

    /// Restricted value at the grid start, interpolated at `x`.
    pub fn value_at(&self, x: &[f64]) -> Result<f64> {
        if !self.spatial.contains(x) {
            return Err(Error::OutOfDomain(format!("point {x:?} is outside the grid")));
        }
        Ok(self.spatial.interpolate(&self.start_values, x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub mesh: f64,
    pub x: Vec<f64>,
    pub v_pi_minus: f64,
    pub v_fd: f64,
    pub v_pi_plus: f64,
    /// `v_fd - v_pi_minus`.
    pub gap_lo: f64,
    /// `v_pi_plus - v_fd`.
    pub gap_hi: f64,
    pub tol: f64,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GapTable {
    pub rows: Vec<GapRow>,
}

impl GapTable {
    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| r.violation).count()
    }

    pub fn meshes(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.mesh) {
                out.push(r.mesh);
            }
        }
        out
    }

    /// Largest `v_pi^+ - v_pi^-` over the reporting points at one mesh.
    pub fn max_gap(&self, mesh: f64) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.mesh == mesh)
            .map(|r| r.v_pi_plus - r.v_pi_minus)
            .fold(None, |acc, g| Some(acc.map_or(g, |a: f64| a.max(g))))
    }
}

/// Checks `v_pi^- <= V_fd <= v_pi^+` (within `tol`) at every reporting point
/// for each mesh. `lowers[i]` and `uppers[i]` must share a time grid.
pub fn sandwich_report(
    vf: &ValueFunction,
    lowers: &[AugmentedValue],
    uppers: &[AugmentedValue],
    points: &[Vec<f64>],
    tol: f64,
) -> Result<GapTable> {
    if lowers.len() != uppers.len() {
        return Err(Error::GridMismatch(format!(
            "{} lower and {} upper restricted values",
            lowers.len(),
            uppers.len()
        )));
    }
    let mut rows = Vec::with_capacity(lowers.len() * points.len());
    for (lo, hi) in lowers.iter().zip(uppers) {
        if lo.time_grid() != hi.time_grid() || lo.spatial_grid() != hi.spatial_grid() {
            return Err(Error::GridMismatch(
                "paired restricted values use different grids".into(),
            ));
        }
        let s = lo.time_grid().start();
        for x in points {
            let v_fd = vf.value(s, x)?;
            let v_pi_minus = lo.value_at(x)?;
            let v_pi_plus = hi.value_at(x)?;
            let gap_lo = v_fd - v_pi_minus;
            let gap_hi = v_pi_plus - v_fd;
            rows.push(GapRow {
                mesh: lo.time_grid().mesh(),
                x: x.clone(),
                v_pi_minus,
                v_fd,
                v_pi_plus,
                gap_lo,
                gap_hi,
                tol,
                violation: gap_lo < -tol || gap_hi < -tol,
            });
        }
    }
    Ok(GapTable { rows })
}
