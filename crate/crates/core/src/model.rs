//! Game models: coefficients, payoff, action grids, and a sampled audit of the
//! Lipschitz / linear-growth / continuity assumptions.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::expr::{parse_expression, Env, Expr, Scope, Var};
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Player {
    U,
    V,
}

impl fmt::Display for Player {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Player::U => "U",
            Player::V => "V",
        })
    }
}

/// One axis of a product action grid: `count` evenly spaced points on `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, count: usize) -> Self {
        Axis { min, max, count }
    }

    fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.count - 1) as f64;
        (0..self.count)
            .map(|i| {
                if i + 1 == self.count {
                    self.max
                } else {
                    self.min + step * i as f64
                }
            })
            .collect()
    }
}

/// Finite action set. Point order is the tie-breaking order everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionGrid {
    label: Player,
    dim: usize,
    points: Vec<f64>,
}

impl ActionGrid {
    pub fn new(label: Player, dim: usize, points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::ActionGrid(format!("{label} grid is empty")));
        }
        let mut flat = Vec::with_capacity(points.len() * dim);
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::ActionGrid(format!(
                    "{label} point #{i} has {} components, expected {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::ActionGrid(format!("{label} point #{i} is not finite")));
            }
            if points[..i].iter().any(|q| q == p) {
                return Err(Error::ActionGrid(format!("{label} point #{i} is a duplicate")));
            }
            flat.extend_from_slice(p);
        }
        Ok(ActionGrid {
            label,
            dim,
            points: flat,
        })
    }

    /// Product of evenly spaced axes, first axis varying slowest.
    pub fn product(label: Player, axes: &[Axis]) -> Result<Self> {
        let mut points: Vec<Vec<f64>> = vec![Vec::new()];
        for (j, axis) in axes.iter().enumerate() {
            if axis.count == 0 {
                return Err(Error::ActionGrid(format!("{label} axis {} has count 0", j + 1)));
            }
            if !(axis.min.is_finite() && axis.max.is_finite()) || axis.min > axis.max {
                return Err(Error::ActionGrid(format!("{label} axis {} has min > max", j + 1)));
            }
            if axis.count > 1 && axis.min == axis.max {
                return Err(Error::ActionGrid(format!(
                    "{label} axis {} repeats a single point",
                    j + 1
                )));
            }
            let coords = axis.points();
            points = points
                .into_iter()
                .flat_map(|p| {
                    coords.iter().map(move |&c| {
                        let mut q = p.clone();
                        q.push(c);
                        q
                    })
                })
                .collect();
        }
        ActionGrid::new(label, axes.len(), points)
    }

    /// A player with no action components: a single empty action.
    pub fn inert(label: Player) -> Self {
        ActionGrid {
            label,
            dim: 0,
            points: Vec::new(),
        }
    }

    pub fn label(&self) -> Player {
        self.label
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            1
        } else {
            self.points.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Nearest grid point (Euclidean), lowest index on ties.
    pub fn nearest(&self, a: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for i in 0..self.len() {
            let d2: f64 = self.point(i).iter().zip(a).map(|(p, q)| (p - q) * (p - q)).sum();
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        best.0
    }
}

/// Text form of a model before parsing.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSource {
    pub d: usize,
    pub d_prime: usize,
    pub horizon: f64,
    pub drift: Vec<String>,
    /// `d` rows of `d_prime` entries.
    pub sigma: Vec<Vec<String>>,
    pub payoff: String,
    pub u_axes: Vec<Axis>,
    pub v_axes: Vec<Axis>,
}

/// `dX = b(t,X,u,v) dt + sigma(t,X,u,v) dW` on `[0, T]` with terminal payoff `g(X_T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GameModel {
    d: usize,
    d_prime: usize,
    horizon: f64,
    drift: Vec<Expr>,
    sigma: Vec<Expr>,
    payoff: Expr,
    u: ActionGrid,
    v: ActionGrid,
    time_dependent: bool,
}

impl GameModel {
    /// `sigma` is row-major `d x d_prime`.
    pub fn new(
        d: usize,
        d_prime: usize,
        horizon: f64,
        drift: Vec<Expr>,
        sigma: Vec<Expr>,
        payoff: Expr,
        u: ActionGrid,
        v: ActionGrid,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("state dimension d must be at least 1".into()));
        }
        if d_prime == 0 {
            return Err(Error::InvalidArgument(
                "noise dimension d_prime must be at least 1".into(),
            ));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon T must be positive, got {horizon}"
            )));
        }
        if drift.len() != d {
            return Err(Error::DimensionMismatch {
                what: "drift components".into(),
                expected: d,
                found: drift.len(),
            });
        }
        if sigma.len() != d * d_prime {
            return Err(Error::DimensionMismatch {
                what: "sigma entries".into(),
                expected: d * d_prime,
                found: sigma.len(),
            });
        }
        if u.label() != Player::U || v.label() != Player::V {
            return Err(Error::ActionGrid("action grids are swapped".into()));
        }
        let scope = Scope::new(d, u.dim(), v.dim());
        for (i, e) in drift.iter().enumerate() {
            check_scope(e, &scope, &format!("b[{}]", i + 1))?;
        }
        for (i, e) in sigma.iter().enumerate() {
            check_scope(e, &scope, &format!("sigma[{}][{}]", i / d_prime + 1, i % d_prime + 1))?;
        }
        let state_only = Scope::new(d, 0, 0);
        if payoff.uses_time() {
            return Err(Error::UndeclaredVariable {
                field: "g".into(),
                name: "t".into(),
            });
        }
        check_scope(&payoff, &state_only, "g")?;
        let time_dependent = drift.iter().chain(&sigma).any(Expr::uses_time);
        Ok(GameModel {
            d,
            d_prime,
            horizon,
            drift,
            sigma,
            payoff,
            u,
            v,
            time_dependent,
        })
    }

    /// Parses every expression of `src` against the declared dimensions.
    pub fn from_source(src: &ModelSource) -> Result<Self> {
        let u = if src.u_axes.is_empty() {
            ActionGrid::inert(Player::U)
        } else {
            ActionGrid::product(Player::U, &src.u_axes)?
        };
        let v = if src.v_axes.is_empty() {
            ActionGrid::inert(Player::V)
        } else {
            ActionGrid::product(Player::V, &src.v_axes)?
        };
        let scope = Scope::new(src.d, u.dim(), v.dim());
        let field = |name: String, text: &str| {
            parse_expression(text, &scope).map_err(|e| match e {
                Error::UnknownIdentifier { name: id, .. } => Error::UndeclaredVariable { field: name, name: id },
                other => other,
            })
        };
        if src.drift.len() != src.d {
            return Err(Error::DimensionMismatch {
                what: "drift components".into(),
                expected: src.d,
                found: src.drift.len(),
            });
        }
        if src.sigma.len() != src.d {
            return Err(Error::DimensionMismatch {
                what: "sigma rows".into(),
                expected: src.d,
                found: src.sigma.len(),
            });
        }
        let drift = src
            .drift
            .iter()
            .enumerate()
            .map(|(i, s)| field(format!("b[{}]", i + 1), s))
            .collect::<Result<Vec<_>>>()?;
        let mut sigma = Vec::with_capacity(src.d * src.d_prime);
        for (i, row) in src.sigma.iter().enumerate() {
            if row.len() != src.d_prime {
                return Err(Error::DimensionMismatch {
                    what: format!("sigma row {} entries", i + 1),
                    expected: src.d_prime,
                    found: row.len(),
                });
            }
            for (j, s) in row.iter().enumerate() {
                sigma.push(field(format!("sigma[{}][{}]", i + 1, j + 1), s)?);
            }
        }
        let payoff = field("g".into(), &src.payoff)?;
        GameModel::new(src.d, src.d_prime, src.horizon, drift, sigma, payoff, u, v)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn noise_dim(&self) -> usize {
        self.d_prime
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn drift(&self) -> &[Expr] {
        &self.drift
    }

    pub fn sigma(&self) -> &[Expr] {
        &self.sigma
    }

    pub fn payoff_expr(&self) -> &Expr {
        &self.payoff
    }

    pub fn u_grid(&self) -> &ActionGrid {
        &self.u
    }

    pub fn v_grid(&self) -> &ActionGrid {
        &self.v
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }

    /// True when no coefficient reads any `u` component.
    pub fn is_u_inert(&self) -> bool {
        !self.drift.iter().chain(&self.sigma).any(Expr::uses_u)
    }

    /// True when no coefficient reads any `v` component.
    pub fn is_v_inert(&self) -> bool {
        !self.drift.iter().chain(&self.sigma).any(Expr::uses_v)
    }

    /// Writes `b(t, x, u#ui, v#vi)` into `out` (length `d`).
    pub fn drift_into(&self, t: f64, x: &[f64], ui: usize, vi: usize, out: &mut [f64]) -> Result<()> {
        let env = self.env(t, x, ui, vi);
        for (o, e) in out.iter_mut().zip(&self.drift) {
            *o = e.eval(&env).map_err(|_| self.fault(e, t, x, ui, vi))?;
        }
        Ok(())
    }

    /// Writes `sigma(t, x, u#ui, v#vi)` row-major into `out` (length `d * d_prime`).
    pub fn sigma_into(&self, t: f64, x: &[f64], ui: usize, vi: usize, out: &mut [f64]) -> Result<()> {
        let env = self.env(t, x, ui, vi);
        for (o, e) in out.iter_mut().zip(&self.sigma) {
            *o = e.eval(&env).map_err(|_| self.fault(e, t, x, ui, vi))?;
        }
        Ok(())
    }

    /// Writes `sigma sigma^T` row-major into `out` (length `d * d`), using `scratch`
    /// (length `d * d_prime`) for sigma.
    pub fn diffusion_into(
        &self,
        t: f64,
        x: &[f64],
        ui: usize,
        vi: usize,
        scratch: &mut [f64],
        out: &mut [f64],
    ) -> Result<()> {
        self.sigma_into(t, x, ui, vi, scratch)?;
        let (d, k) = (self.d, self.d_prime);
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = (0..k).map(|l| scratch[i * k + l] * scratch[j * k + l]).sum();
            }
        }
        Ok(())
    }

    pub fn payoff(&self, x: &[f64]) -> Result<f64> {
        let env = Env {
            t: self.horizon,
            x,
            u: &[],
            v: &[],
        };
        self.payoff.eval(&env).map_err(|_| Error::EvalFault {
            expr: self.payoff.to_string(),
            point: format!("x={x:?}"),
        })
    }

    fn env<'a>(&'a self, t: f64, x: &'a [f64], ui: usize, vi: usize) -> Env<'a> {
        Env {
            t,
            x,
            u: self.u.point(ui),
            v: self.v.point(vi),
        }
    }

    fn fault(&self, e: &Expr, t: f64, x: &[f64], ui: usize, vi: usize) -> Error {
        Error::EvalFault {
            expr: e.to_string(),
            point: format!("t={t}, x={x:?}, u={:?}, v={:?}", self.u.point(ui), self.v.point(vi)),
        }
    }
}

fn check_scope(e: &Expr, scope: &Scope, field: &str) -> Result<()> {
    match e.undeclared(scope) {
        Some(var) => Err(Error::UndeclaredVariable {
            field: field.to_string(),
            name: var_name(var),
        }),
        None => Ok(()),
    }
}

fn var_name(var: Var) -> String {
    format!("{var}")
}

/// Sampled continuity verdict for one coefficient expression.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityFlag {
    pub coefficient: String,
    pub continuous: bool,
    /// Largest `|f(p + h) - f(p)| / (1 + |f(p)|)` seen at the probe offset.
    pub max_jump: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub radius: f64,
    /// Sampled `sup (|b(x)-b(y)| + |sigma(x)-sigma(y)|) / |x-y|` over `|x|, |y| <= K`.
    pub lipschitz_estimate: f64,
    /// Sampled `sup (|b| + |sigma|) / (1 + |x|)`.
    pub growth_constant: f64,
    /// Sampled `sup (|b| + |sigma|)` over the ball, usable as the bound `C` on the box.
    pub coefficient_bound: f64,
    pub continuity: Vec<ContinuityFlag>,
    pub samples_used: usize,
    pub seed: u64,
}

const PROBE: f64 = 1e-7;
const JUMP_TOLERANCE: f64 = 1e-3;

/// Monte Carlo audit of the standing assumptions on the ball `|x| <= radius`.
///
/// Sample `i` depends only on `(seed, i)`, so every estimate is a running
/// maximum that can only grow with `n_samples`.
pub fn audit_assumptions(m: &GameModel, n_samples: usize, radius: f64, seed: u64) -> Result<AuditReport> {
    if n_samples < 2 {
        return Err(Error::InvalidArgument("audit needs at least 2 samples".into()));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "audit radius must be positive, got {radius}"
        )));
    }
    let d = m.dim();
    let nb = d;
    let ns = d * m.noise_dim();
    let root = CounterRng::new(seed);

    let mut names: Vec<String> = (0..nb).map(|i| format!("b[{}]", i + 1)).collect();
    for i in 0..ns {
        names.push(format!("sigma[{}][{}]", i / m.noise_dim() + 1, i % m.noise_dim() + 1));
    }
    names.push("g".into());
    let mut jumps = vec![0.0f64; names.len()];

    let mut lip: f64 = 0.0;
    let mut growth: f64 = 0.0;
    let mut bound: f64 = 0.0;
    let (mut bx, mut by) = (vec![0.0; nb], vec![0.0; nb]);
    let (mut sx, mut sy) = (vec![0.0; ns], vec![0.0; ns]);

    for i in 0..n_samples {
        let rng = root.stream(i as u64);
        let mut c = 0u64;
        let mut next = || {
            c += 1;
            c - 1
        };
        let t = m.horizon() * rng.uniform(next());
        let ui = rng.index(next(), m.u_grid().len());
        let vi = rng.index(next(), m.v_grid().len());
        let x = ball_point(&rng, &mut next, d, radius);
        let y = if i % 2 == 0 {
            ball_point(&rng, &mut next, d, radius)
        } else {
            // local pair: captures the derivative near x
            let dir = unit_vector(&rng, &mut next, d);
            let h = radius * 1e-3 * rng.uniform(next());
            let mut y: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + h * b).collect();
            let n = norm(&y);
            if n > radius {
                y.iter_mut().for_each(|c| *c *= radius / n);
            }
            y
        };
        m.drift_into(t, &x, ui, vi, &mut bx)?;
        m.drift_into(t, &y, ui, vi, &mut by)?;
        m.sigma_into(t, &x, ui, vi, &mut sx)?;
        m.sigma_into(t, &y, ui, vi, &mut sy)?;

        let dist = dist(&x, &y);
        if dist > 0.0 {
            let num = dist_vec(&bx, &by) + dist_vec(&sx, &sy);
            lip = lip.max(num / dist);
        }
        for (p, b, s) in [(&x, &bx, &sx), (&y, &by, &sy)] {
            let size = norm(b) + norm(s);
            bound = bound.max(size);
            growth = growth.max(size / (1.0 + norm(p)));
        }

        // continuity probe along a random direction
        let dir = unit_vector(&rng, &mut next, d);
        let xp: Vec<f64> = x
            .iter()
            .zip(&dir)
            .map(|(a, b)| a + PROBE * (1.0 + radius) * b)
            .collect();
        let (mut bp, mut sp) = (vec![0.0; nb], vec![0.0; ns]);
        m.drift_into(t, &xp, ui, vi, &mut bp)?;
        m.sigma_into(t, &xp, ui, vi, &mut sp)?;
        let g0 = m.payoff(&x)?;
        let gp = m.payoff(&xp)?;
        let base = bx.iter().chain(&sx).chain(core::iter::once(&g0));
        let probe = bp.iter().chain(&sp).chain(core::iter::once(&gp));
        for (slot, (a, b)) in jumps.iter_mut().zip(base.zip(probe)) {
            *slot = slot.max(libm::fabs(b - a) / (1.0 + libm::fabs(*a)));
        }
    }

    let continuity = names
        .into_iter()
        .zip(jumps)
        .map(|(coefficient, max_jump)| ContinuityFlag {
            coefficient,
            continuous: max_jump <= JUMP_TOLERANCE,
            max_jump,
        })
        .collect();
    Ok(AuditReport {
        radius,
        lipschitz_estimate: lip,
        growth_constant: growth,
        coefficient_bound: bound,
        continuity,
        samples_used: n_samples,
        seed,
    })
}

fn unit_vector(rng: &CounterRng, next: &mut impl FnMut() -> u64, d: usize) -> Vec<f64> {
    loop {
        let z: Vec<f64> = (0..d).map(|_| rng.normal(next())).collect();
        let n = norm(&z);
        if n > 1e-12 {
            return z.into_iter().map(|c| c / n).collect();
        }
    }
}

fn ball_point(rng: &CounterRng, next: &mut impl FnMut() -> u64, d: usize, radius: f64) -> Vec<f64> {
    let dir = unit_vector(rng, next, d);
    let r = radius * libm::pow(rng.uniform(next()), 1.0 / d as f64);
    dir.into_iter().map(|c| c * r).collect()
}

fn norm(a: &[f64]) -> f64 {
    libm::sqrt(a.iter().map(|c| c * c).sum())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum())
}

fn dist_vec(a: &[f64], b: &[f64]) -> f64 {
    dist(a, b)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn source(d: usize, b: &[&str], sigma: &[&[&str]], g: &str, u: &[Axis], v: &[Axis]) -> ModelSource {
        ModelSource {
            d,
            d_prime: sigma.first().map_or(1, |r| r.len()),
            horizon: 1.0,
            drift: b.iter().map(|s| s.to_string()).collect(),
            sigma: sigma
                .iter()
                .map(|r| r.iter().map(|s| s.to_string()).collect())
                .collect(),
            payoff: g.to_string(),
            u_axes: u.to_vec(),
            v_axes: v.to_vec(),
        }
    }

    pub fn model(b: &str, sigma: &str, g: &str, u: Axis, v: Axis) -> GameModel {
        GameModel::from_source(&source(1, &[b], &[&[sigma]], g, &[u], &[v])).unwrap()
    }

    /// `b = u1 + v1`, `sigma = 1`, `g = cos(x1)` on 3-point grids.
    pub fn cancellation(count: usize) -> GameModel {
        let a = Axis::new(-1.0, 1.0, count);
        model("u1 + v1", "1", "cos(x1)", a, a)
    }

    /// `b = u1 * v1` with `U = V = {-1, 1}`.
    pub fn sign_game(sigma: &str) -> GameModel {
        let a = Axis::new(-1.0, 1.0, 2);
        model("u1 * v1", sigma, "cos(x1)", a, a)
    }
}
