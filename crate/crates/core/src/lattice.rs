//! Markov-chain approximation of a one-dimensional game on a trinomial
//! lattice, solved exactly by backward induction.
//!
//! Each micro-step of length `h` moves the state one node left, keeps it, or
//! moves it one node right. Boundary nodes reflect: mass that would leave the
//! lattice stays put.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::GameModel;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatticeMode {
    /// `p_+- = (sigma^2 h / dx^2 +- b h / dx) / 2`.
    Trinomial,
    /// `p_+- = sigma^2 h / (2 dx^2) + (+-b)^+ h / dx`; valid without diffusion.
    DriftUpwind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSpec {
    pub start: f64,
    pub n_steps: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub n_x: usize,
    pub mode: LatticeMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeGame {
    start: f64,
    h: f64,
    n_steps: usize,
    x_min: f64,
    dx: f64,
    n_x: usize,
    nu: usize,
    nv: usize,
    /// `[slice][node][u * nv + v]` as `[left, stay, right]`; one slice unless
    /// the coefficients depend on time.
    probs: Vec<Vec<[f64; 3]>>,
    terminal: Vec<f64>,
}

/// Values at a sequence of times over the lattice nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeValues {
    pub times: Vec<f64>,
    pub levels: Vec<Vec<f64>>,
    x_min: f64,
    dx: f64,
}

impl LatticeValues {
    pub fn node_x(&self, i: usize) -> f64 {
        self.x_min + self.dx * i as f64
    }

    /// Value at level `level`, linearly interpolated in `x`.
    pub fn value(&self, level: usize, x: f64) -> Result<f64> {
        let vals = &self.levels[level];
        let r = (x - self.x_min) / self.dx;
        let last = (vals.len() - 1) as f64;
        if !(r >= -1e-9 && r <= last + 1e-9) {
            return Err(Error::OutOfDomain(format!("x = {x} is outside the lattice")));
        }
        let r = r.clamp(0.0, last);
        let i = (libm::floor(r) as usize).min(vals.len() - 2);
        let f = r - i as f64;
        Ok(if f == 0.0 {
            vals[i]
        } else {
            (1.0 - f) * vals[i] + f * vals[i + 1]
        })
    }

    /// Value at the first time.
    pub fn initial(&self, x: f64) -> Result<f64> {
        self.value(0, x)
    }
}

pub fn build_lattice(m: &GameModel, spec: LatticeSpec) -> Result<LatticeGame> {
    if m.dim() != 1 {
        return Err(Error::Unsupported(format!(
            "lattices are one-dimensional, model has d = {}",
            m.dim()
        )));
    }
    let LatticeSpec {
        start,
        n_steps,
        x_min,
        x_max,
        n_x,
        mode,
    } = spec;
    if n_steps == 0 || n_x < 3 || !(x_min < x_max) {
        return Err(Error::DegenerateGrid(format!(
            "need n_steps >= 1, n_x >= 3 and x_min < x_max (got {n_steps}, {n_x}, [{x_min}, {x_max}])"
        )));
    }
    if !(start >= 0.0 && start < m.horizon()) {
        return Err(Error::InvalidArgument(format!(
            "start time {start} must lie in [0, {})",
            m.horizon()
        )));
    }
    let h = (m.horizon() - start) / n_steps as f64;
    let dx = (x_max - x_min) / (n_x - 1) as f64;
    let (nu, nv) = (m.u_grid().len(), m.v_grid().len());
    let slices = if m.is_time_dependent() { n_steps } else { 1 };
    let mut probs = Vec::with_capacity(slices);
    for j in 0..slices {
        let t = start + h * j as f64;
        let rows = par::map_indexed(n_x, |node| -> Result<Vec<[f64; 3]>> {
            let x = [x_min + dx * node as f64];
            let mut b = [0.0];
            let mut s = vec![0.0; m.noise_dim()];
            let mut a = [0.0];
            let mut out = Vec::with_capacity(nu * nv);
            for u in 0..nu {
                for v in 0..nv {
                    m.drift_into(t, &x, u, v, &mut b)?;
                    m.diffusion_into(t, &x, u, v, &mut s, &mut a)?;
                    let diff = a[0] * h / (dx * dx);
                    let drift = b[0] * h / dx;
                    let (mut down, mut up) = match mode {
                        LatticeMode::Trinomial => (0.5 * (diff - drift), 0.5 * (diff + drift)),
                        LatticeMode::DriftUpwind => (0.5 * diff + (-drift).max(0.0), 0.5 * diff + drift.max(0.0)),
                    };
                    let stay = 1.0 - down - up;
                    let p = [down, stay, up];
                    if p.iter().any(|q| !(*q >= -1e-15 && *q <= 1.0 + 1e-15)) {
                        let hint = if down < 0.0 || up < 0.0 {
                            format!(
                                "drift dominates diffusion; use dx <= sigma^2 / |b| = {} or the drift-upwind mode",
                                a[0] / libm::fabs(b[0])
                            )
                        } else {
                            format!(
                                "step too long for the spacing; use dx >= {} or more steps",
                                libm::sqrt(a[0] * h) + libm::fabs(b[0]) * h
                            )
                        };
                        return Err(Error::Probability {
                            node,
                            u,
                            v,
                            probs: p,
                            hint,
                        });
                    }
                    down = down.max(0.0);
                    up = up.max(0.0);
                    let mut p = [down, 0.0, up];
                    if node == 0 {
                        p[0] = 0.0;
                    }
                    if node + 1 == n_x {
                        p[2] = 0.0;
                    }
                    p[1] = 1.0 - p[0] - p[2];
                    out.push(p);
                }
            }
            Ok(out)
        });
        probs.push(rows.into_iter().collect::<Result<Vec<_>>>()?.concat());
    }
    let terminal = (0..n_x)
        .map(|i| m.payoff(&[x_min + dx * i as f64]))
        .collect::<Result<Vec<_>>>()?;
    Ok(LatticeGame {
        start,
        h,
        n_steps,
        x_min,
        dx,
        n_x,
        nu,
        nv,
        probs,
        terminal,
    })
}

impl LatticeGame {
    pub fn step_length(&self) -> f64 {
        self.h
    }

    pub fn spacing(&self) -> f64 {
        self.dx
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn time(&self, j: usize) -> f64 {
        self.start + self.h * j as f64
    }

    pub fn node_x(&self, i: usize) -> f64 {
        self.x_min + self.dx * i as f64
    }

    /// `[left, stay, right]` at micro-step `j`.
    pub fn probabilities(&self, j: usize, node: usize, u: usize, v: usize) -> [f64; 3] {
        let slice = if self.probs.len() == 1 { 0 } else { j };
        self.probs[slice][node * self.nu * self.nv + u * self.nv + v]
    }

    pub fn terminal(&self) -> &[f64] {
        &self.terminal
    }

    #[inline]
    fn expect(&self, j: usize, next: &[f64], node: usize, u: usize, v: usize) -> f64 {
        let p = self.probabilities(j, node, u, v);
        let lo = node.saturating_sub(1);
        let hi = (node + 1).min(self.n_x - 1);
        p[0] * next[lo] + p[1] * next[node] + p[2] * next[hi]
    }

    fn sweep<F: Fn(usize, &[f64], usize) -> f64 + Sync + Send>(&self, next: &[f64], f: F) -> Vec<f64> {
        par::map_indexed(self.n_x, |node| f(node, next, node))
    }

    fn lower_step(&self, j: usize, next: &[f64]) -> Vec<f64> {
        self.sweep(next, |node, next, _| {
            let mut best = f64::NEG_INFINITY;
            for u in 0..self.nu {
                let mut inner = f64::INFINITY;
                for v in 0..self.nv {
                    inner = inner.min(self.expect(j, next, node, u, v));
                }
                best = best.max(inner);
            }
            best
        })
    }

    fn upper_step(&self, j: usize, next: &[f64]) -> Vec<f64> {
        self.sweep(next, |node, next, _| {
            let mut best = f64::INFINITY;
            for v in 0..self.nv {
                let mut inner = f64::NEG_INFINITY;
                for u in 0..self.nu {
                    inner = inner.max(self.expect(j, next, node, u, v));
                }
                best = best.min(inner);
            }
            best
        })
    }

    fn frozen_step(&self, j: usize, next: &[f64], u: usize) -> Vec<f64> {
        self.sweep(next, |node, next, _| {
            let mut inner = f64::INFINITY;
            for v in 0..self.nv {
                inner = inner.min(self.expect(j, next, node, u, v));
            }
            inner
        })
    }

    fn induct(&self, step: impl Fn(usize, &[f64]) -> Vec<f64>) -> LatticeValues {
        let mut levels = vec![Vec::new(); self.n_steps + 1];
        levels[self.n_steps] = self.terminal.clone();
        for j in (0..self.n_steps).rev() {
            levels[j] = step(j, &levels[j + 1]);
        }
        LatticeValues {
            times: (0..=self.n_steps).map(|j| self.time(j)).collect(),
            levels,
            x_min: self.x_min,
            dx: self.dx,
        }
    }
}

/// Both players act every micro-step, U first: `max_u min_v E[V_{j+1}]`.
pub fn lattice_lower_value(l: &LatticeGame) -> LatticeValues {
    l.induct(|j, next| l.lower_step(j, next))
}

/// `min_v max_u E[V_{j+1}]`.
pub fn lattice_upper_value(l: &LatticeGame) -> LatticeValues {
    l.induct(|j, next| l.upper_step(j, next))
}

/// U holds one action per interval of `pi`, chosen from the snapshot node;
/// V acts every micro-step. Levels are returned at the times of `pi`.
pub fn lattice_grid_restricted_lower(l: &LatticeGame, pi: &TimeGrid) -> Result<LatticeValues> {
    let total = l.h * l.n_steps as f64;
    let tol = 1e-9 * total.max(1.0);
    if (pi.start() - l.start).abs() > tol || (pi.end() - l.time(l.n_steps)).abs() > tol {
        return Err(Error::GridMismatch(format!(
            "time grid [{}, {}] does not span the lattice [{}, {}]",
            pi.start(),
            pi.end(),
            l.start,
            l.time(l.n_steps)
        )));
    }
    let mut marks = Vec::with_capacity(pi.times().len());
    for &t in pi.times() {
        let r = (t - l.start) / l.h;
        let j = libm::round(r);
        if libm::fabs(r - j) > 1e-6 {
            return Err(Error::GridMismatch(format!(
                "grid time {t} is not a multiple of the micro-step {}",
                l.h
            )));
        }
        marks.push(j as usize);
    }
    let mut levels = vec![Vec::new(); marks.len()];
    let mut phi = l.terminal.clone();
    levels[marks.len() - 1] = phi.clone();
    for k in (1..marks.len()).rev() {
        let mut best = vec![f64::NEG_INFINITY; l.n_x];
        for u in 0..l.nu {
            let mut w = phi.clone();
            for j in (marks[k - 1]..marks[k]).rev() {
                w = l.frozen_step(j, &w, u);
            }
            for (b, c) in best.iter_mut().zip(&w) {
                if *c > *b {
                    *b = *c;
                }
            }
        }
        phi = best;
        levels[k - 1] = phi.clone();
    }
    Ok(LatticeValues {
        times: pi.times().to_vec(),
        levels,
        x_min: l.x_min,
        dx: l.dx,
    })
}
