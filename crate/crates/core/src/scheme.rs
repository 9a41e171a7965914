//! Explicit monotone upwind stencil shared by the value solver and the
//! frozen-action best-response solvers.
//!
//! For a fixed action pair the discrete operator is `sum_k w_k (W_k - W)` with
//! every `w_k >= 0`: first differences upwinded by the sign of each drift
//! component, central second differences, and the split cross-derivative
//! stencil for off-diagonal diffusion. At a face of the box the second
//! derivative across that face is taken as zero and drift pointing out of the
//! box contributes nothing, which keeps the closure monotone.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::SpatialGrid;
use crate::model::GameModel;
use crate::par;

/// How the action pair is chosen at each node.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Control<'a> {
    /// `max_u min_v`.
    Lower,
    /// `min_v max_u`.
    Upper,
    /// `u` frozen, `min_v`.
    FrozenU(usize),
    /// `v = row[u]`, `max_u`.
    Response(&'a [usize]),
}

pub(crate) struct Stencil {
    d: usize,
    k: usize,
    nu: usize,
    nv: usize,
    neighbors: Vec<usize>,
}

pub(crate) struct Weights {
    data: Vec<f64>,
    max_rate: f64,
}

impl Weights {
    pub(crate) fn max_rate(&self) -> f64 {
        self.max_rate
    }
}

impl Stencil {
    pub(crate) fn new(model: &GameModel, grid: &SpatialGrid) -> Result<Self> {
        let d = grid.dim();
        if d != model.dim() {
            return Err(Error::GridMismatch(alloc::format!(
                "grid has dimension {d}, model has {}",
                model.dim()
            )));
        }
        let k = 2 * d * d;
        let n = grid.len();
        let mut neighbors = vec![0usize; n * k];
        for node in 0..n {
            let shift = |node: usize, axis: usize, up: bool| -> Option<usize> {
                let i = grid.axis_index(node, axis);
                if up {
                    (i + 1 < grid.count()[axis]).then(|| node + grid.stride(axis))
                } else {
                    (i > 0).then(|| node - grid.stride(axis))
                }
            };
            let slots = &mut neighbors[node * k..(node + 1) * k];
            for axis in 0..d {
                slots[2 * axis] = shift(node, axis, false).unwrap_or(node);
                slots[2 * axis + 1] = shift(node, axis, true).unwrap_or(node);
            }
            let mut slot = 2 * d;
            for i in 0..d {
                for j in i + 1..d {
                    for (si, sj) in [(true, true), (false, false), (true, false), (false, true)] {
                        slots[slot] = shift(node, i, si).and_then(|m| shift(m, j, sj)).unwrap_or(node);
                        slot += 1;
                    }
                }
            }
        }
        Ok(Stencil {
            d,
            k,
            nu: model.u_grid().len(),
            nv: model.v_grid().len(),
            neighbors,
        })
    }

    pub(crate) fn pairs(&self) -> usize {
        self.nu * self.nv
    }

    /// Stencil weights for every node and action pair at time `t`.
    pub(crate) fn weights(&self, model: &GameModel, grid: &SpatialGrid, t: f64) -> Result<Weights> {
        let (d, k, pairs) = (self.d, self.k, self.pairs());
        let h = grid.spacing();
        let per_node = par::map_indexed(grid.len(), |node| -> Result<(Vec<f64>, f64)> {
            let x = grid.coords(node);
            let lo: Vec<bool> = (0..d).map(|a| grid.axis_index(node, a) == 0).collect();
            let hi: Vec<bool> = (0..d)
                .map(|a| grid.axis_index(node, a) + 1 == grid.count()[a])
                .collect();
            let mut b = vec![0.0; d];
            let mut s = vec![0.0; d * model.noise_dim()];
            let mut a = vec![0.0; d * d];
            let mut out = vec![0.0; pairs * k];
            let mut max_rate: f64 = 0.0;
            for ui in 0..self.nu {
                for vi in 0..self.nv {
                    model.drift_into(t, &x, ui, vi, &mut b)?;
                    model.diffusion_into(t, &x, ui, vi, &mut s, &mut a)?;
                    let w = &mut out[(ui * self.nv + vi) * k..(ui * self.nv + vi + 1) * k];
                    for i in 0..d {
                        let up = b[i].max(0.0) / h[i];
                        let down = (-b[i]).max(0.0) / h[i];
                        let diff = if lo[i] || hi[i] {
                            0.0
                        } else {
                            0.5 * a[i * d + i] / (h[i] * h[i])
                        };
                        w[2 * i] = if lo[i] { 0.0 } else { down + diff };
                        w[2 * i + 1] = if hi[i] { 0.0 } else { up + diff };
                    }
                    let mut slot = 2 * d;
                    for i in 0..d {
                        for j in i + 1..d {
                            let aij = 0.5 * (a[i * d + j] + a[j * d + i]);
                            let active = !(lo[i] || hi[i] || lo[j] || hi[j]) && aij != 0.0;
                            let c = if active {
                                libm::fabs(aij) / (2.0 * h[i] * h[j])
                            } else {
                                0.0
                            };
                            let (same, opposite) = if aij > 0.0 { (c, 0.0) } else { (0.0, c) };
                            w[slot] = same;
                            w[slot + 1] = same;
                            w[slot + 2] = opposite;
                            w[slot + 3] = opposite;
                            slot += 4;
                            for axis in [i, j] {
                                w[2 * axis] -= c;
                                w[2 * axis + 1] -= c;
                            }
                        }
                    }
                    if w.iter().any(|&c| c < -1e-12 * (1.0 + max_rate)) {
                        return Err(Error::NonMonotone { node });
                    }
                    let rate: f64 = w.iter().map(|c| c.max(0.0)).sum();
                    max_rate = max_rate.max(rate);
                }
            }
            Ok((out, max_rate))
        });
        let mut data = Vec::with_capacity(grid.len() * pairs * k);
        let mut max_rate: f64 = 0.0;
        for item in per_node {
            let (w, r) = item?;
            data.extend(w.into_iter().map(|c| c.max(0.0)));
            max_rate = max_rate.max(r);
        }
        Ok(Weights { data, max_rate })
    }

    #[inline]
    fn pair_operator(&self, w: &Weights, vals: &[f64], node: usize, pair: usize) -> f64 {
        let k = self.k;
        let ws = &w.data[(node * self.pairs() + pair) * k..(node * self.pairs() + pair + 1) * k];
        let nb = &self.neighbors[node * k..(node + 1) * k];
        let center = vals[node];
        let mut acc = 0.0;
        for (wk, &m) in ws.iter().zip(nb) {
            acc += wk * (vals[m] - center);
        }
        acc
    }

    /// Discrete Hamiltonian at `node` under `control`.
    pub(crate) fn hamiltonian(&self, w: &Weights, vals: &[f64], node: usize, control: Control<'_>) -> f64 {
        let nv = self.nv;
        match control {
            Control::Lower => {
                let mut best = f64::NEG_INFINITY;
                for ui in 0..self.nu {
                    let mut inner = f64::INFINITY;
                    for vi in 0..nv {
                        inner = inner.min(self.pair_operator(w, vals, node, ui * nv + vi));
                    }
                    best = best.max(inner);
                }
                best
            }
            Control::Upper => {
                let mut best = f64::INFINITY;
                for vi in 0..nv {
                    let mut inner = f64::NEG_INFINITY;
                    for ui in 0..self.nu {
                        inner = inner.max(self.pair_operator(w, vals, node, ui * nv + vi));
                    }
                    best = best.min(inner);
                }
                best
            }
            Control::FrozenU(ui) => {
                let mut inner = f64::INFINITY;
                for vi in 0..nv {
                    inner = inner.min(self.pair_operator(w, vals, node, ui * nv + vi));
                }
                inner
            }
            Control::Response(row) => {
                let mut best = f64::NEG_INFINITY;
                for (ui, &vi) in row.iter().enumerate() {
                    best = best.max(self.pair_operator(w, vals, node, ui * nv + vi));
                }
                best
            }
        }
    }
}

/// Stencil plus weights, cached for time-independent coefficients.
pub(crate) struct Field<'m> {
    model: &'m GameModel,
    grid: SpatialGrid,
    stencil: Stencil,
    cached: Option<(f64, Weights)>,
}

impl<'m> Field<'m> {
    pub(crate) fn new(model: &'m GameModel, grid: &SpatialGrid) -> Result<Self> {
        Ok(Field {
            model,
            grid: grid.clone(),
            stencil: Stencil::new(model, grid)?,
            cached: None,
        })
    }

    fn refresh(&mut self, t: f64) -> Result<()> {
        let stale = match &self.cached {
            None => true,
            Some((at, _)) => self.model.is_time_dependent() && *at != t,
        };
        if stale {
            let w = self.stencil.weights(self.model, &self.grid, t)?;
            self.cached = Some((t, w));
        }
        Ok(())
    }

    pub(crate) fn max_rate_at(&mut self, t: f64) -> Result<f64> {
        self.refresh(t)?;
        Ok(self.cached.as_ref().unwrap().1.max_rate())
    }

    /// One explicit backward step from the level at `t_hi` to `t_hi - dt`.
    pub(crate) fn step(&mut self, vals: &[f64], t_hi: f64, dt: f64, control: Control<'_>) -> Result<Vec<f64>> {
        self.refresh(t_hi)?;
        let w = &self.cached.as_ref().unwrap().1;
        if dt * w.max_rate() > 1.0 + 1e-12 {
            return Err(Error::CflViolation {
                dt,
                limit: 1.0 / w.max_rate(),
            });
        }
        let stencil = &self.stencil;
        Ok(par::map_indexed(vals.len(), |node| {
            vals[node] + dt * stencil.hamiltonian(w, vals, node, control)
        }))
    }

    /// Marches `n` equal steps backward from `t_hi` to `t_lo`, returning every
    /// level (first = `init` at `t_hi`) when `record` is set, else only the last.
    pub(crate) fn march(
        &mut self,
        init: Vec<f64>,
        t_hi: f64,
        t_lo: f64,
        n: usize,
        control: Control<'_>,
        record: bool,
    ) -> Result<Vec<Vec<f64>>> {
        let dt = (t_hi - t_lo) / n as f64;
        let mut levels = Vec::with_capacity(if record { n + 1 } else { 1 });
        let mut cur = init;
        for j in 0..n {
            let t = if j == 0 {
                t_hi
            } else {
                t_hi - (t_hi - t_lo) * j as f64 / n as f64
            };
            let next = self.step(&cur, t, dt, control)?;
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    level: j + 1,
                    time: t - dt,
                });
            }
            if record {
                levels.push(core::mem::replace(&mut cur, next));
            } else {
                cur = next;
            }
        }
        levels.push(cur);
        Ok(levels)
    }
}
