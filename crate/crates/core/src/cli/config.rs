//! Experiment configuration (JSON).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField};
use crate::potential::{ModulusDescriptor, PotentialSpec};
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Solve,
    Modulus,
    Estimate,
    VerifyLemmas,
    Sweep,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Solve => "solve",
            Pipeline::Modulus => "modulus",
            Pipeline::Estimate => "estimate",
            Pipeline::VerifyLemmas => "verify-lemmas",
            Pipeline::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub m: u32,
    /// Lower corner; one entry per dimension.
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl GridConfig {
    pub fn to_grid(&self) -> Result<GridSpec> {
        if self.lo.len() != self.dim || self.hi.len() != self.dim {
            return Err(Error::Config("grid lo/hi need one entry per dimension".into()));
        }
        let limit = if self.dim == 1 { 14 } else { 10 };
        if self.m > limit {
            return Err(Error::Config(format!(
                "m = {} exceeds the desk-scale limit {limit} for dimension {}",
                self.m, self.dim
            )));
        }
        let pt = |v: &[f64]| -> Point { [v[0], v.get(1).copied().unwrap_or(0.0)] };
        GridSpec::new(self.dim, self.m, pt(&self.lo), pt(&self.hi))
    }
}

/// Dirichlet data on the box boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryConfig {
    /// `value + gradient · x`
    Affine {
        value: f64,
        #[serde(default)]
        gradient: Vec<f64>,
    },
    /// `amplitude · (1 − |x − center|² / width²)₊`
    Bump {
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
    },
    /// A field CSV whose grid must equal the configured grid; its mask is kept.
    Table { path: PathBuf },
}

impl BoundaryConfig {
    /// Boundary field; interior values are zero and ignored by the solver.
    pub fn build(&self, grid: &GridSpec, base_dir: &Path) -> Result<ScalarField> {
        let coords = |v: &[f64]| -> Point { [v.first().copied().unwrap_or(0.0), v.get(1).copied().unwrap_or(0.0)] };
        let f = match self {
            BoundaryConfig::Affine { value, gradient } => {
                let g = coords(gradient);
                ScalarField::from_fn(*grid, |x| value + g[0] * x[0] + g[1] * x[1])?
            }
            BoundaryConfig::Bump {
                amplitude,
                center,
                width,
            } => {
                if !(*width > 0.0) {
                    return Err(Error::Config("bump width must be positive".into()));
                }
                let c = coords(center);
                ScalarField::from_fn(*grid, |x| {
                    let d2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
                    amplitude * (1.0 - d2 / (width * width)).max(0.0)
                })?
            }
            BoundaryConfig::Table { path } => {
                let p = base_dir.join(path);
                let file = std::fs::File::open(&p)
                    .map_err(|e| Error::Config(format!("boundary table {}: {e}", p.display())))?;
                let f = ScalarField::from_csv(std::io::BufReader::new(file))?;
                if f.grid != *grid {
                    return Err(Error::Config("boundary table grid differs from the configured grid".into()));
                }
                return Ok(f);
            }
        };
        let mut f = f;
        for (v, b) in f.values.iter_mut().zip(&f.boundary) {
            if !b {
                *v = 0.0;
            }
        }
        Ok(f)
    }
}

/// Parameters shared by the pipelines; each pipeline reads the ones it needs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// Flatness parameter for the C¹ check; calibrated from `epsilon` when absent.
    pub delta: Option<f64>,
    /// Flatness target; enables the calibration of `delta` in `estimate`.
    pub epsilon: Option<f64>,
    /// Renormalization depth `K`.
    pub depth: Option<usize>,
    pub order: Option<u8>,
    /// Modulus for the `modulus` pipeline; derived from the potential when absent.
    pub modulus: Option<ModulusDescriptor>,
    pub radii: Option<Vec<f64>>,
    /// Free-boundary threshold; `10⁻⁶ sup|u|` when absent.
    pub tau: Option<f64>,
    /// Estimation centre; the first detected free-boundary point when absent.
    pub center: Option<Vec<f64>>,
    pub tol: Option<f64>,
    pub max_sweeps: Option<usize>,
    pub line_search_grid: Option<usize>,
    /// Calibration sample count.
    pub samples: Option<usize>,
    /// Optional assertions of the estimate pipeline.
    pub expected_exponent: Option<f64>,
    pub exponent_tolerance: Option<f64>,
    pub expected_constant: Option<f64>,
    pub constant_rel_tolerance: Option<f64>,
    /// Sweep axes: dotted config path → list of values.
    pub sweep: Option<Vec<SweepAxis>>,
    /// Pipeline run for each sweep point.
    pub sweep_pipeline: Option<Pipeline>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// Dotted path into the config, e.g. `potential.params.gamma` or `grid.m`.
    pub path: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// When present, must name the subcommand that runs the config.
    #[serde(default)]
    pub pipeline: Option<Pipeline>,
    #[serde(default = "default_potential")]
    pub potential: PotentialSpec,
    pub grid: GridConfig,
    #[serde(default)]
    pub boundary: Option<BoundaryConfig>,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_potential() -> PotentialSpec {
    PotentialSpec::zero()
}

impl ExperimentConfig {
    pub fn from_value(v: Value) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        c.grid.to_grid()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<(Self, Value)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        Ok((Self::from_value(v.clone())?, v))
    }
}

/// Sets the value at a dotted path, creating objects on the way.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, key) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{path}`: `{key}` is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert((*key).to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry((*key).to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::Config("empty sweep path".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn parses_minimal_config() {
        let v = json!({
            "name": "t",
            "potential": {"family": "alt_phillips", "params": {"gamma": 0.5, "lambda": 1.0}},
            "grid": {"dim": 1, "m": 6, "lo": [0.0], "hi": [1.0]},
            "boundary": {"kind": "affine", "value": 1.0, "gradient": [-1.0]}
        });
        let c = ExperimentConfig::from_value(v).unwrap();
        let g = c.grid.to_grid().unwrap();
        let b = c.boundary.unwrap().build(&g, Path::new(".")).unwrap();
        assert_eq!(b.values[0], 1.0);
        assert_eq!(*b.values.last().unwrap(), 0.0);
    }

    #[test]
    fn rejects_oversized_grid() {
        let v = json!({"name": "t", "grid": {"dim": 2, "m": 11, "lo": [0.0, 0.0], "hi": [1.0, 1.0]}});
        assert!(matches!(ExperimentConfig::from_value(v), Err(Error::Config(_))));
    }

    #[test]
    fn sets_nested_paths() {
        let mut v = json!({"potential": {"params": {"gamma": 0.5}}});
        set_path(&mut v, "potential.params.gamma", json!(0.25)).unwrap();
        set_path(&mut v, "grid.m", json!(7)).unwrap();
        assert_eq!(v["potential"]["params"]["gamma"], 0.25);
        assert_eq!(v["grid"]["m"], 7);
    }
}
