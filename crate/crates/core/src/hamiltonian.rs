//! The operator `L = b.p + 1/2 Tr(sigma sigma^T M)` and the lower/upper
//! Hamiltonians obtained by exhaustive search over the action grids.
//!
//! Ties are broken by the lowest grid index in every max and min.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::GameModel;

/// Gradient `p` and symmetric Hessian `M` (row-major `d x d`).
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativePair {
    pub p: Vec<f64>,
    pub m: Vec<f64>,
}

impl DerivativePair {
    pub fn new(p: Vec<f64>, m: Vec<f64>) -> Self {
        debug_assert_eq!(m.len(), p.len() * p.len());
        DerivativePair { p, m }
    }

    pub fn zero(d: usize) -> Self {
        DerivativePair {
            p: vec![0.0; d],
            m: vec![0.0; d * d],
        }
    }

    /// 1-D shorthand.
    pub fn scalar(p: f64, m: f64) -> Self {
        DerivativePair { p: vec![p], m: vec![m] }
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        DerivativePair {
            p: self.p.iter().map(|c| c * lambda).collect(),
            m: self.m.iter().map(|c| c * lambda).collect(),
        }
    }
}

/// `sup_u inf_v L`, with the maximising `u` and the minimising response to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianResult {
    pub value: f64,
    pub best_u: usize,
    pub worst_v_given_best_u: usize,
}

/// `inf_v sup_u L`, with the minimising `v` and the maximising response to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpperHamiltonianResult {
    pub value: f64,
    pub best_v: usize,
    pub best_u_given_best_v: usize,
}

/// Reusable coefficient buffers for repeated operator evaluations.
#[derive(Debug, Clone)]
pub struct OperatorEval<'m> {
    model: &'m GameModel,
    b: Vec<f64>,
    s: Vec<f64>,
    a: Vec<f64>,
}

impl<'m> OperatorEval<'m> {
    pub fn new(model: &'m GameModel) -> Self {
        let d = model.dim();
        OperatorEval {
            model,
            b: vec![0.0; d],
            s: vec![0.0; d * model.noise_dim()],
            a: vec![0.0; d * d],
        }
    }

    pub fn model(&self) -> &'m GameModel {
        self.model
    }

    pub fn operator(&mut self, t: f64, x: &[f64], ui: usize, vi: usize, dp: &DerivativePair) -> Result<f64> {
        let m = self.model;
        m.drift_into(t, x, ui, vi, &mut self.b)?;
        m.diffusion_into(t, x, ui, vi, &mut self.s, &mut self.a)?;
        let drift: f64 = self.b.iter().zip(&dp.p).map(|(b, p)| b * p).sum();
        let trace: f64 = self.a.iter().zip(&dp.m).map(|(a, h)| a * h).sum();
        Ok(drift + 0.5 * trace)
    }

    /// `argmin_v L(u, v)` and its value.
    pub fn counter_response(&mut self, t: f64, x: &[f64], dp: &DerivativePair, ui: usize) -> Result<(usize, f64)> {
        let mut best = (0, f64::INFINITY);
        for vi in 0..self.model.v_grid().len() {
            let l = self.operator(t, x, ui, vi, dp)?;
            if l < best.1 {
                best = (vi, l);
            }
        }
        Ok(best)
    }

    pub fn lower(&mut self, t: f64, x: &[f64], dp: &DerivativePair) -> Result<HamiltonianResult> {
        let mut best = HamiltonianResult {
            value: f64::NEG_INFINITY,
            best_u: 0,
            worst_v_given_best_u: 0,
        };
        for ui in 0..self.model.u_grid().len() {
            let (vi, value) = self.counter_response(t, x, dp, ui)?;
            if value > best.value {
                best = HamiltonianResult {
                    value,
                    best_u: ui,
                    worst_v_given_best_u: vi,
                };
            }
        }
        Ok(best)
    }

    pub fn upper(&mut self, t: f64, x: &[f64], dp: &DerivativePair) -> Result<UpperHamiltonianResult> {
        let mut best = UpperHamiltonianResult {
            value: f64::INFINITY,
            best_v: 0,
            best_u_given_best_v: 0,
        };
        for vi in 0..self.model.v_grid().len() {
            let mut inner = (0, f64::NEG_INFINITY);
            for ui in 0..self.model.u_grid().len() {
                let l = self.operator(t, x, ui, vi, dp)?;
                if l > inner.1 {
                    inner = (ui, l);
                }
            }
            if inner.1 < best.value {
                best = UpperHamiltonianResult {
                    value: inner.1,
                    best_v: vi,
                    best_u_given_best_v: inner.0,
                };
            }
        }
        Ok(best)
    }
}

pub fn running_cost_operator(
    m: &GameModel,
    t: f64,
    x: &[f64],
    ui: usize,
    vi: usize,
    dp: &DerivativePair,
) -> Result<f64> {
    OperatorEval::new(m).operator(t, x, ui, vi, dp)
}

pub fn lower_hamiltonian(m: &GameModel, t: f64, x: &[f64], dp: &DerivativePair) -> Result<HamiltonianResult> {
    OperatorEval::new(m).lower(t, x, dp)
}

pub fn upper_hamiltonian(m: &GameModel, t: f64, x: &[f64], dp: &DerivativePair) -> Result<UpperHamiltonianResult> {
    OperatorEval::new(m).upper(t, x, dp)
}

/// Index of the V action minimising `L(t, x, u#ui, ., p, M)`.
pub fn counter_response(m: &GameModel, t: f64, x: &[f64], dp: &DerivativePair, ui: usize) -> Result<usize> {
    Ok(OperatorEval::new(m).counter_response(t, x, dp, ui)?.0)
}

/// `max (H+ - H-)` over a cloud of `(t, x, (p, M))` points.
pub fn isaacs_gap(m: &GameModel, cloud: &[(f64, Vec<f64>, DerivativePair)]) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::InvalidArgument(
            "isaacs_gap needs a non-empty sample cloud".into(),
        ));
    }
    let mut ev = OperatorEval::new(m);
    let mut gap = f64::NEG_INFINITY;
    for (t, x, dp) in cloud {
        let hi = ev.upper(*t, x, dp)?.value;
        let lo = ev.lower(*t, x, dp)?.value;
        gap = gap.max(hi - lo);
    }
    Ok(gap)
}
