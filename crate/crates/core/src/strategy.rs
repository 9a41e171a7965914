//! Simple Markov strategies and counter-strategies synthesised from a value
//! function.
//!
//! On the interval `(t_{k-1}, t_k]` a strategy plays `xi_k(y(t_{k-1}))` and a
//! counter-strategy plays `eta_k(y(t_{k-1}), u)`, where `y(t_{k-1})` is the
//! state snapshot at the left grid time. Both are stored as lookup tables over
//! the solver's nodes; off-node snapshots snap to the nearest node.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{SpatialGrid, TimeGrid};
use crate::hamiltonian::OperatorEval;
use crate::model::{ActionGrid, GameModel};
use crate::par;
use crate::solver::ValueFunction;

#[derive(Debug, Clone, PartialEq)]
pub struct SimpleMarkovStrategy {
    grid: TimeGrid,
    spatial: SpatialGrid,
    /// `tables[k - 1][node]` is the U index of `xi_k` at that node.
    tables: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimpleMarkovCounterStrategy {
    grid: TimeGrid,
    spatial: SpatialGrid,
    u_grid: ActionGrid,
    /// `tables[k - 1][node * |U| + u]` is the V index of `eta_k`.
    tables: Vec<Vec<usize>>,
}

fn check_span(vf: &ValueFunction, pi: &TimeGrid) -> Result<()> {
    let slack = 1e-12 * (vf.final_time() - vf.start_time()).max(1.0);
    if pi.start() < vf.start_time() - slack || pi.end() > vf.final_time() + slack {
        return Err(Error::OutOfDomain(format!(
            "time grid [{}, {}] is not inside the value function span [{}, {}]",
            pi.start(),
            pi.end(),
            vf.start_time(),
            vf.final_time()
        )));
    }
    Ok(())
}

/// `xi_k(x) = argmax_u min_v L(t_{k-1}, x, u, v, Dv, D^2 v)` at every node.
pub fn synthesize_markov_strategy(m: &GameModel, vf: &ValueFunction, pi: &TimeGrid) -> Result<SimpleMarkovStrategy> {
    synthesize_markov_strategy_scaled(m, vf, pi, 1.0)
}

/// As [`synthesize_markov_strategy`] with every queried `(p, M)` multiplied by `scale`.
pub fn synthesize_markov_strategy_scaled(
    m: &GameModel,
    vf: &ValueFunction,
    pi: &TimeGrid,
    scale: f64,
) -> Result<SimpleMarkovStrategy> {
    check_span(vf, pi)?;
    let grid = vf.grid();
    let mut tables = Vec::with_capacity(pi.intervals());
    for &t in &pi.times()[..pi.intervals()] {
        let level = vf.nearest_level(t);
        let row = par::map_indexed(grid.len(), |node| -> Result<usize> {
            let x = grid.coords(node);
            let dp = vf.node_derivatives(level, node).scaled(scale);
            Ok(OperatorEval::new(m).lower(t, &x, &dp)?.best_u)
        });
        tables.push(row.into_iter().collect::<Result<Vec<_>>>()?);
    }
    Ok(SimpleMarkovStrategy {
        grid: pi.clone(),
        spatial: grid.clone(),
        tables,
    })
}

/// `eta_k(x, u) = argmin_v L(t_{k-1}, x, u, v, Dv, D^2 v)` at every node and U action.
pub fn synthesize_markov_counter_strategy(
    m: &GameModel,
    vf: &ValueFunction,
    pi: &TimeGrid,
) -> Result<SimpleMarkovCounterStrategy> {
    synthesize_markov_counter_strategy_scaled(m, vf, pi, 1.0)
}

pub fn synthesize_markov_counter_strategy_scaled(
    m: &GameModel,
    vf: &ValueFunction,
    pi: &TimeGrid,
    scale: f64,
) -> Result<SimpleMarkovCounterStrategy> {
    check_span(vf, pi)?;
    let grid = vf.grid();
    let nu = m.u_grid().len();
    let mut tables = Vec::with_capacity(pi.intervals());
    for &t in &pi.times()[..pi.intervals()] {
        let level = vf.nearest_level(t);
        let rows = par::map_indexed(grid.len(), |node| -> Result<Vec<usize>> {
            let x = grid.coords(node);
            let dp = vf.node_derivatives(level, node).scaled(scale);
            let mut ev = OperatorEval::new(m);
            (0..nu).map(|ui| Ok(ev.counter_response(t, &x, &dp, ui)?.0)).collect()
        });
        let mut table = Vec::with_capacity(grid.len() * nu);
        for r in rows {
            table.extend(r?);
        }
        tables.push(table);
    }
    Ok(SimpleMarkovCounterStrategy {
        grid: pi.clone(),
        spatial: grid.clone(),
        u_grid: m.u_grid().clone(),
        tables,
    })
}

impl SimpleMarkovStrategy {
    pub fn from_tables(grid: TimeGrid, spatial: SpatialGrid, tables: Vec<Vec<usize>>) -> Result<Self> {
        if tables.len() != grid.intervals() || tables.iter().any(|t| t.len() != spatial.len()) {
            return Err(Error::GridMismatch(
                "strategy tables do not cover every interval and node".into(),
            ));
        }
        Ok(SimpleMarkovStrategy { grid, spatial, tables })
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn spatial_grid(&self) -> &SpatialGrid {
        &self.spatial
    }

    pub fn tables(&self) -> &[Vec<usize>] {
        &self.tables
    }

    /// `xi_k` at a node, `k` 1-based.
    pub fn table_action(&self, k: usize, node: usize) -> usize {
        self.tables[k - 1][node]
    }

    /// U index played at time `t in (s, T]` given the snapshot at the left grid time.
    pub fn action(&self, t: f64, snapshot: &[f64]) -> Result<usize> {
        let k = self.grid.interval_of(t)?;
        Ok(self.tables[k - 1][self.spatial.nearest_node(snapshot)])
    }
}

impl SimpleMarkovCounterStrategy {
    pub fn from_tables(
        grid: TimeGrid,
        spatial: SpatialGrid,
        u_grid: ActionGrid,
        tables: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let width = spatial.len() * u_grid.len();
        if tables.len() != grid.intervals() || tables.iter().any(|t| t.len() != width) {
            return Err(Error::GridMismatch(
                "counter-strategy tables do not cover every interval, node and U action".into(),
            ));
        }
        Ok(SimpleMarkovCounterStrategy {
            grid,
            spatial,
            u_grid,
            tables,
        })
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn spatial_grid(&self) -> &SpatialGrid {
        &self.spatial
    }

    pub fn u_grid(&self) -> &ActionGrid {
        &self.u_grid
    }

    pub fn tables(&self) -> &[Vec<usize>] {
        &self.tables
    }

    /// Row `eta_k(node, .)` over all U indices, `k` 1-based.
    pub fn row(&self, k: usize, node: usize) -> &[usize] {
        let nu = self.u_grid.len();
        &self.tables[k - 1][node * nu..(node + 1) * nu]
    }

    pub fn table_action(&self, k: usize, node: usize, ui: usize) -> usize {
        self.row(k, node)[ui]
    }

    /// V index at time `t` for U index `ui`, given the left-grid-time snapshot.
    pub fn action_index(&self, t: f64, snapshot: &[f64], ui: usize) -> Result<usize> {
        let k = self.grid.interval_of(t)?;
        if ui >= self.u_grid.len() {
            return Err(Error::InvalidArgument(format!("U index {ui} out of range")));
        }
        Ok(self.table_action(k, self.spatial.nearest_node(snapshot), ui))
    }

    /// V index for an arbitrary U action, projected onto the nearest U grid point.
    pub fn action(&self, t: f64, snapshot: &[f64], u: &[f64]) -> Result<usize> {
        self.action_index(t, snapshot, self.u_grid.nearest(u))
    }
}

pub fn strategy_action(alpha: &SimpleMarkovStrategy, t: f64, snapshot: &[f64]) -> Result<usize> {
    alpha.action(t, snapshot)
}

pub fn counter_action(gamma: &SimpleMarkovCounterStrategy, t: f64, snapshot: &[f64], u: &[f64]) -> Result<usize> {
    gamma.action(t, snapshot, u)
}
