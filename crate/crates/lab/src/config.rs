//! TOML model files and experiment settings.
//!
//! ```toml
//! [dynamics]
//! d = 1
//! d_prime = 1
//! T = 1.0
//! b = ["u1 + v1"]
//! sigma = [["1"]]
//! g = "cos(x1)"
//!
//! [actions]
//! u_grid = { min = -1.0, max = 1.0, count = 3 }
//! v_grid = [{ min = -1.0, max = 1.0, count = 3 }]
//!
//! [solver]          # optional
//! x_min = -6.0
//! x_max = 6.0
//! dx = 0.0625
//!
//! [experiment]      # optional
//! meshes = [4, 8, 16, 32]
//! points = [[-1.0], [0.0], [1.0]]
//! paths = 100000
//! dt_sim = 0.0078125
//! seed = 20240601
//! ```

use std::path::Path;

use isaacs_core::{Axis, GameModel, ModelSource, SpatialGrid};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileFormat {
    dynamics: Dynamics,
    actions: Actions,
    #[serde(default)]
    solver: Option<SolverSection>,
    #[serde(default)]
    experiment: Option<ExperimentSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Dynamics {
    d: usize,
    d_prime: usize,
    #[serde(rename = "T")]
    horizon: f64,
    b: Vec<String>,
    sigma: Vec<Vec<String>>,
    g: String,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum AxisList {
    One(AxisSpec),
    Many(Vec<AxisSpec>),
}

impl AxisList {
    fn axes(&self) -> Vec<Axis> {
        let list: &[AxisSpec] = match self {
            AxisList::One(a) => std::slice::from_ref(a),
            AxisList::Many(v) => v,
        };
        list.iter().map(|a| Axis::new(a.min, a.max, a.count)).collect()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Actions {
    u_grid: AxisList,
    v_grid: AxisList,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            x_min: -6.0,
            x_max: 6.0,
            dx: 1.0 / 16.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub meshes: Option<Vec<usize>>,
    pub points: Option<Vec<Vec<f64>>>,
    pub paths: Option<usize>,
    pub dt_sim: Option<f64>,
    pub seed: Option<u64>,
}

/// A parsed model file.
#[derive(Debug, Clone)]
pub struct ModelFile {
    pub model: GameModel,
    pub source: ModelSource,
    pub solver: SolverSection,
    pub experiment: ExperimentSection,
}

fn parse(text: &str) -> LabResult<FileFormat> {
    toml::from_str(text).map_err(|e| LabError::Config(e.message().to_string()))
}

/// Builds the model described by `text`.
pub fn load_model(text: &str) -> LabResult<GameModel> {
    Ok(load_model_file(text)?.model)
}

pub fn load_model_file(text: &str) -> LabResult<ModelFile> {
    let f = parse(text)?;
    let source = ModelSource {
        d: f.dynamics.d,
        d_prime: f.dynamics.d_prime,
        horizon: f.dynamics.horizon,
        drift: f.dynamics.b,
        sigma: f.dynamics.sigma,
        payoff: f.dynamics.g,
        u_axes: f.actions.u_grid.axes(),
        v_axes: f.actions.v_grid.axes(),
    };
    let model = GameModel::from_source(&source)?;
    Ok(ModelFile {
        model,
        source,
        solver: f.solver.unwrap_or_default(),
        experiment: f.experiment.unwrap_or_default(),
    })
}

pub fn read_model_file(path: &Path) -> LabResult<ModelFile> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    load_model_file(&text).map_err(|e| match e {
        LabError::Config(m) => LabError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Everything an experiment needs besides the model.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: GameModel,
    pub source: ModelSource,
    pub model_path: Option<String>,
    pub solver: SolverSection,
    /// Interval counts of the uniform time grids, increasing (so meshes decrease).
    pub meshes: Vec<usize>,
    pub points: Vec<Vec<f64>>,
    pub paths: usize,
    pub dt_sim: f64,
    pub seed: u64,
}

pub const DEFAULT_MESHES: [usize; 4] = [4, 8, 16, 32];
pub const DEFAULT_PATHS: usize = 20_000;
pub const DEFAULT_SEED: u64 = 20_240_601;

impl ExperimentConfig {
    /// Defaults: meshes T/{4,8,16,32}, points -1, 0, 1 on the first axis,
    /// `dt_sim = T / 256`.
    pub fn from_model_file(file: &ModelFile, path: Option<String>) -> Self {
        let d = file.model.dim();
        let e = &file.experiment;
        let points = e.points.clone().unwrap_or_else(|| {
            [-1.0, 0.0, 1.0]
                .iter()
                .map(|&c| {
                    let mut x = vec![0.0; d];
                    x[0] = c;
                    x
                })
                .collect()
        });
        ExperimentConfig {
            model: file.model.clone(),
            source: file.source.clone(),
            model_path: path,
            solver: file.solver,
            meshes: e.meshes.clone().unwrap_or_else(|| DEFAULT_MESHES.to_vec()),
            points,
            paths: e.paths.unwrap_or(DEFAULT_PATHS),
            dt_sim: e.dt_sim.unwrap_or(file.model.horizon() / 256.0),
            seed: e.seed.unwrap_or(DEFAULT_SEED),
        }
    }

    pub fn grid(&self) -> LabResult<SpatialGrid> {
        let s = self.solver;
        Ok(SpatialGrid::cube(self.model.dim(), s.x_min, s.x_max, s.dx)?)
    }

    /// Checks the mesh sequence and that reporting points lie in the inner
    /// half of the solver box.
    pub fn validate(&self) -> LabResult<()> {
        if self.meshes.is_empty() {
            return Err(LabError::Config("the mesh sequence is empty".into()));
        }
        if self.meshes.contains(&0) || self.meshes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LabError::Config(format!(
                "mesh interval counts must be positive and strictly increasing, got {:?}",
                self.meshes
            )));
        }
        if self.points.is_empty() {
            return Err(LabError::Config("no reporting points".into()));
        }
        let (lo, hi) = (self.solver.x_min, self.solver.x_max);
        let (mid, quarter) = (0.5 * (lo + hi), 0.25 * (hi - lo));
        for x in &self.points {
            if x.len() != self.model.dim() {
                return Err(LabError::Config(format!(
                    "reporting point {x:?} has {} coordinates, model has d = {}",
                    x.len(),
                    self.model.dim()
                )));
            }
            if x.iter().any(|c| (c - mid).abs() > quarter + 1e-12) {
                return Err(LabError::Config(format!(
                    "reporting point {x:?} is outside the inner domain [{}, {}]",
                    mid - quarter,
                    mid + quarter
                )));
            }
        }
        if !(self.dt_sim > 0.0) {
            return Err(LabError::Config(format!(
                "dt_sim must be positive, got {}",
                self.dt_sim
            )));
        }
        if self.paths < 2 {
            return Err(LabError::Config(format!("need at least 2 paths, got {}", self.paths)));
        }
        self.grid()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const CANCELLATION: &str = r#"
[dynamics]
d = 1
d_prime = 1
T = 1.0
b = ["u1 + v1"]
sigma = [["1"]]
g = "cos(x1)"

[actions]
u_grid = { min = -1.0, max = 1.0, count = 3 }
v_grid = [{ min = -1.0, max = 1.0, count = 3 }]
"#;

    #[test]
    fn cancellation_file_loads() {
        let m = load_model(CANCELLATION).unwrap();
        assert_eq!((m.dim(), m.u_grid().len(), m.v_grid().len()), (1, 3, 3));
        assert_eq!(m.horizon(), 1.0);
        let f = load_model_file(CANCELLATION).unwrap();
        assert_eq!(f.solver, SolverSection::default());
    }

    #[test]
    fn missing_payoff_is_reported() {
        let text = CANCELLATION.replace("g = \"cos(x1)\"\n", "");
        match load_model(&text) {
            Err(LabError::Config(m)) => assert!(m.contains("missing field `g`"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn undeclared_state_variable_is_reported() {
        let text = CANCELLATION.replace("u1 + v1", "x2");
        match load_model(&text) {
            Err(LabError::Core(isaacs_core::Error::UndeclaredVariable { field, name })) => {
                assert_eq!((field.as_str(), name.as_str()), ("b[1]", "x2"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn experiment_validation() {
        let f = load_model_file(CANCELLATION).unwrap();
        let mut cfg = ExperimentConfig::from_model_file(&f, None);
        cfg.validate().unwrap();
        cfg.meshes.clear();
        assert!(matches!(cfg.validate(), Err(LabError::Config(_))));
        cfg.meshes = vec![8, 4];
        assert!(cfg.validate().is_err());
        cfg.meshes = vec![4, 8];
        cfg.points = vec![vec![5.0]];
        assert!(cfg.validate().is_err());
    }
}
