//! Experiment configuration: a TOML file with one table per model component.
//!
//! ```toml
//! seed = 7
//!
//! [grid]
//! t_final = 1.0
//! n = 500
//! t0 = 0.2
//! t1 = 0.3
//!
//! [operator]
//! length = 3.141592653589793
//! modes = 4
//!
//! [kernel]
//! family = "tempered"
//! alpha = 0.5
//! lambda = 1.0
//! ```
//!
//! Every other table is optional. `--override grid.t1=0.35` edits a dotted
//! key before the file is checked.

use crate::error::CliError;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Initial coefficients `u_k(0)`; missing modes start at 0.
    #[serde(default)]
    pub initial: Vec<f64>,
    pub grid: GridSpec,
    pub operator: OperatorSpec,
    #[serde(default)]
    pub measure: MeasureSpec,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub source: SourceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional: Option<FunctionalSpec>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub regularization: RegularizationSpec,
    #[serde(default)]
    pub relaxation: RelaxationSpec,
    #[serde(default)]
    pub fit: FitSpec,
    #[serde(default)]
    pub uniqueness: UniquenessSpec,
    #[serde(default)]
    pub output: OutputSpec,
    /// Read mode data written by `simulate` instead of generating it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSpec>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub t_final: f64,
    pub n: usize,
    /// Start of the observation window.
    pub t0: f64,
    /// End of the source gap.
    pub t1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub length: f64,
    pub modes: usize,
    #[serde(default)]
    pub potential: PotentialSpec,
    /// Finite-difference mesh; analytic sine modes when absent and the potential is constant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PotentialSpec {
    Constant(f64),
    /// Samples on a uniform mesh over `[0, L]`.
    Samples(Vec<f64>),
}

impl Default for PotentialSpec {
    fn default() -> Self {
        PotentialSpec::Constant(0.0)
    }
}

/// Order measure of the distributed power `A = int B^beta d rho(beta)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureSpec {
    /// `(beta, kappa)` pairs with increasing `beta`.
    pub atoms: Vec<(f64, f64)>,
    /// Shift `eta` added to the base eigenvalues by `recover-measure`.
    pub shift: f64,
    pub shift_search: bool,
    pub max_atoms: usize,
}

impl Default for MeasureSpec {
    fn default() -> Self {
        Self {
            atoms: vec![(1.0, 1.0)],
            shift: 0.0,
            shift_search: false,
            max_atoms: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    PowerLaw {
        #[serde(default = "one")]
        c: f64,
        alpha: f64,
    },
    Tempered {
        #[serde(default = "one")]
        c: f64,
        alpha: f64,
        lambda: f64,
    },
    Distributed {
        atoms: Vec<(f64, f64)>,
    },
    /// Two-column CSV `t, M(t)`.
    Tabulated {
        csv: PathBuf,
    },
    /// `M = 1`, the heat equation.
    Unit,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryProfile {
    #[default]
    None,
    /// `f_k(t) = amplitude sin(pi t / t0) / k` on `[0, t0]`.
    Sine,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    #[serde(default)]
    pub history: HistoryProfile,
    #[serde(default = "one")]
    pub history_amplitude: f64,
    #[serde(default)]
    pub blocks: Vec<BlockSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSpec {
    Indicator,
    Hat,
    Ramp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub profile: ProfileSpec,
    pub start: f64,
    pub end: f64,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalSpec {
    Point { x0: f64 },
    Mean { a: f64, b: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Standard deviation relative to the maximum of each data row.
    pub level: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodSpec {
    #[default]
    Lavrentiev,
    Tikhonov,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EliminationSpec {
    /// Subtract the simulated history response.
    #[default]
    Exact,
    /// Assume zero state and source before `t0`.
    Zero,
    /// Fit an exponential sum on the gap.
    Surrogate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizationSpec {
    pub method: MethodSpec,
    /// Fixed parameter, used unless `discrepancy` is set.
    pub epsilon: f64,
    pub discrepancy: bool,
    /// Pass `noise.level` to the discrepancy principle instead of estimating it.
    pub known_noise: bool,
    pub elimination: EliminationSpec,
    pub surrogate_terms: usize,
    pub history_weight: f64,
    pub history_rho: f64,
}

impl Default for RegularizationSpec {
    fn default() -> Self {
        Self {
            method: MethodSpec::Lavrentiev,
            epsilon: 1e-12,
            discrepancy: false,
            known_noise: true,
            elimination: EliminationSpec::Exact,
            surrogate_terms: 4,
            history_weight: 1e-8,
            history_rho: 0.01,
        }
    }
}

/// Scalar relaxation `v + lambda M * v = 1` used by `ml` and `invert`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelaxationSpec {
    /// Order for `ml`.
    pub alpha: f64,
    pub lambda: f64,
    pub contour_nodes: usize,
}

impl Default for RelaxationSpec {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            lambda: 1.0,
            contour_nodes: 48,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilySpec {
    PowerLaw,
    #[default]
    Tempered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSpec {
    pub family: FamilySpec,
    pub grid_points: usize,
    pub refine_starts: usize,
}

impl Default for FitSpec {
    fn default() -> Self {
        Self {
            family: FamilySpec::Tempered,
            grid_points: 8,
            refine_starts: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniquenessSpec {
    /// Power-law orders of the two compared kernels.
    pub alphas: (f64, f64),
}

impl Default for UniquenessSpec {
    fn default() -> Self {
        Self { alphas: (0.4, 0.6) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    /// Times at which `simulate` writes field snapshots.
    pub snapshots: Vec<f64>,
    pub field_points: usize,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            snapshots: Vec::new(),
            field_points: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// Directory with `mode_<k>.csv` and, for exact elimination, `history_<k>.csv`.
    pub dir: PathBuf,
}

fn schema(path: &str, message: impl Into<String>) -> CliError {
    CliError::Schema {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Parses a scalar override value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key v"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| schema(spec, "override must have the form key=value"))?;
    let key = key.trim();
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| schema(key, "empty key"))?;
    let mut node = table;
    for (i, p) in parts.iter().enumerate() {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| schema(&parts[..=i].join("."), "not a table"))?;
    }
    node.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    /// Parses and validates a configuration text after applying `overrides`.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| schema("<file>", e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(table))
            .map_err(|e| {
                let path = e.path().to_string();
                schema(
                    if path == "." { "<root>" } else { &path },
                    e.into_inner().to_string(),
                )
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            schema(
                &path.display().to_string(),
                format!("cannot read config: {e}"),
            )
        })?;
        Self::parse(&text, overrides)
    }

    /// Canonical TOML text with every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.grid;
        if g.n < 64 {
            return Err(schema("grid.n", format!("{} is below 64", g.n)));
        }
        if !(g.t_final > 0.0 && g.t_final.is_finite()) {
            return Err(schema("grid.t_final", "must be positive"));
        }
        if !(0.0 < g.t0 && g.t0 < g.t1 && g.t1 < g.t_final) {
            return Err(schema(
                "grid.t1",
                format!("need 0 < t0 < t1 < T, got {} {} {}", g.t0, g.t1, g.t_final),
            ));
        }
        let op = &self.operator;
        if !(op.length > 0.0) {
            return Err(schema("operator.length", "must be positive"));
        }
        if op.modes == 0 {
            return Err(schema("operator.modes", "must be at least 1"));
        }
        let nonpositive = match &op.potential {
            PotentialSpec::Constant(a) => *a <= 0.0,
            PotentialSpec::Samples(s) => s.len() >= 2 && s.iter().all(|a| *a <= 0.0),
        };
        if !nonpositive {
            return Err(schema(
                "operator.potential",
                "must be <= 0 (two or more samples when sampled)",
            ));
        }
        if self.initial.len() > op.modes {
            return Err(schema(
                "initial",
                format!("{} values for {} modes", self.initial.len(), op.modes),
            ));
        }
        for (i, b) in self.source.blocks.iter().enumerate() {
            if b.weights.len() != op.modes {
                return Err(schema(
                    &format!("source.blocks[{i}].weights"),
                    format!("{} weights for {} modes", b.weights.len(), op.modes),
                ));
            }
        }
        if !(self.noise.level >= 0.0) {
            return Err(schema("noise.level", "must be nonnegative"));
        }
        if let Some(FunctionalSpec::Point { x0 }) = self.functional {
            if !(x0 > 0.0 && x0 < op.length) {
                return Err(schema("functional.x0", "must lie inside (0, length)"));
            }
        }
        if let Some(FunctionalSpec::Mean { a, b }) = self.functional {
            if !(0.0 <= a && a < b && b <= op.length) {
                return Err(schema("functional", "need 0 <= a < b <= length"));
            }
        }
        let r = &self.relaxation;
        if !(r.alpha > 0.0 && r.alpha <= 1.0) {
            return Err(schema("relaxation.alpha", "must lie in (0, 1]"));
        }
        if !(r.lambda >= 0.0) {
            return Err(schema("relaxation.lambda", "must be nonnegative"));
        }
        let (a, b) = self.uniqueness.alphas;
        if !(a > 0.0 && a < 1.0 && b > 0.0 && b < 1.0 && a != b) {
            return Err(schema(
                "uniqueness.alphas",
                "need two distinct orders in (0, 1)",
            ));
        }
        Ok(())
    }
}
