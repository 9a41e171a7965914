//! Numerical toolkit for stochastic zero-sum differential games.
//!
//! The pieces fit together as follows:
//!
//! * [`model`] holds the controlled SDE `dX = b dt + sigma dW` with terminal
//!   payoff `g`, parsed from a small expression language ([`expr`]).
//! * [`hamiltonian`] evaluates `L = b.p + 1/2 Tr(sigma sigma^T M)` and the
//!   lower/upper Hamiltonians by enumeration over finite action grids.
//! * [`solver`] marches the lower Isaacs equation backward with an explicit
//!   monotone upwind scheme.
//! * [`strategy`] turns a solved value function into simple Markov strategies
//!   (actions change only at grid times and read only the last snapshot) and
//!   counter-strategies (which also read the opponent's current action).
//! * [`restricted`] computes the exact best-response values against those
//!   strategies, giving the grid-restricted lower and upper values.
//! * [`simulator`] runs Euler–Maruyama paths with counter-based normals and
//!   implements the exit-probability and martingale-defect diagnostics.
//! * [`lattice`] is an independent Markov-chain oracle solved by exact
//!   dynamic programming.
//!
//! The crate is `no_std` + `alloc` without the default `std` feature; the
//! `parallel` feature spreads node updates and paths over rayon without
//! changing any result bit.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

extern crate alloc;

pub mod error;
pub mod expr;
pub mod grid;
pub mod hamiltonian;
pub mod lattice;
pub mod model;
pub mod par;
pub mod restricted;
pub mod rng;
mod scheme;
pub mod simulator;
pub mod solver;
pub mod special;
pub mod strategy;

pub use error::{Error, Result};
pub use expr::{parse_expression, Expr, Scope};
pub use grid::{SpatialGrid, TimeGrid};
pub use hamiltonian::{
    counter_response, isaacs_gap, lower_hamiltonian, running_cost_operator, upper_hamiltonian, DerivativePair,
    HamiltonianResult, UpperHamiltonianResult,
};
pub use lattice::{
    build_lattice, lattice_grid_restricted_lower, lattice_lower_value, lattice_upper_value, LatticeGame, LatticeMode,
    LatticeSpec, LatticeValues,
};
pub use model::{audit_assumptions, ActionGrid, AuditReport, Axis, GameModel, ModelSource, Player};
pub use restricted::{
    adversary_best_response_value, controller_best_response_value, sandwich_report, AugmentedValue, GapRow, GapTable,
    RestrictedOptions,
};
pub use simulator::{
    exit_frequency, gauge_function, gauge_tail_bound, martingale_defect, mc_payoff, mc_payoff_samples, simulate_path,
    ControlSource, ExitEstimate, Path, PathFeedback, PayoffEstimate, SimConfig, ValueFeedback,
};
pub use solver::{
    cfl_step, query_value, solve_lower_isaacs, solve_lower_isaacs_with, solve_upper_isaacs_with, SolveOptions,
    ValueFunction,
};
pub use strategy::{
    counter_action, strategy_action, synthesize_markov_counter_strategy, synthesize_markov_strategy,
    SimpleMarkovCounterStrategy, SimpleMarkovStrategy,
};
