//! Run configuration document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wavecascade::cascade::DiagnosticsSpec;
use wavecascade::collision::OperatorToggles;
use wavecascade::evolve::StepControl;
use wavecascade::kernelmodel::{CouplingConstants, DispersionLaw, KernelExponents, KernelModel};
use wavecascade::spectrum::{
    from_csv, init_power_law_tail, FrequencyGrid, RepChoice, Spacing, SpectralState, TailClosure,
};

use crate::CliError;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub theta: f64,
    #[serde(default = "one")]
    pub c_omega: f64,
    pub varpi1: f64,
    pub varpi2: f64,
    pub varpi3: f64,
    pub kappa2: f64,
    pub gamma: f64,
    pub alpha: f64,
    #[serde(default = "one")]
    pub c_p: f64,
    #[serde(default = "one")]
    pub c_r: f64,
    #[serde(default = "one")]
    pub c_q: f64,
    #[serde(default = "one")]
    pub c_rprime: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub kind: Spacing,
    pub omega_min: f64,
    pub omega_max: f64,
    pub cells: usize,
    /// Defaults to the midpoint on uniform grids and the geometric mean on
    /// geometric grids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rep: Option<RepChoice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    /// Energy tail `amplitude * R^(-c_in)` above `r0`.
    PowerLawTail {
        amplitude: f64,
        c_in: f64,
        r0: f64,
        #[serde(default)]
        beyond_grid: TailClosure,
    },
    /// Cell masses from a snapshot file on the same grid.
    Table {
        path: PathBuf,
        /// Tail exponent used for the cascade thresholds, if known.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c_in: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub kernel: KernelSection,
    #[serde(default)]
    pub coupling: CouplingConstants,
    #[serde(default)]
    pub operators: OperatorToggles,
    pub grid: GridSpec,
    pub initial: InitialSpec,
    pub step: StepControl,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

impl RunConfig {
    /// Reads a config file. Unreadable or unparseable documents are usage
    /// errors; a relative table path is resolved against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let doc = read_document(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_document(doc, base)
    }

    pub fn from_document(doc: toml::Value, base_dir: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig = doc
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("invalid config: {}", e.message())))?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(CliError::Usage(format!(
                "unsupported config schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        if let InitialSpec::Table { path, .. } = &mut cfg.initial {
            if path.is_relative() {
                *path = base_dir.join(&*path);
            }
        }
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let doc: toml::Value =
            toml::from_str(text).map_err(|e| CliError::Usage(format!("cannot parse config: {}", e.message())))?;
        Self::from_document(doc, base_dir)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn model(&self) -> Result<KernelModel, CliError> {
        let k = &self.kernel;
        let model = KernelModel::new(
            DispersionLaw { theta: k.theta, c_omega: k.c_omega },
            KernelExponents {
                varpi1: k.varpi1,
                varpi2: k.varpi2,
                varpi3: k.varpi3,
                kappa2: k.kappa2,
                gamma: k.gamma,
                alpha: k.alpha,
                c_p: k.c_p,
                c_r: k.c_r,
                c_q: k.c_q,
                c_rprime: k.c_rprime,
            },
            self.coupling,
        )?;
        Ok(model)
    }

    pub fn grid(&self) -> Result<FrequencyGrid, CliError> {
        let g = &self.grid;
        let rep = g.rep.unwrap_or_else(|| g.kind.default_rep());
        Ok(FrequencyGrid::make_with_reps(g.kind, g.omega_min, g.omega_max, g.cells, rep)?)
    }

    /// Tail exponent for the cascade thresholds (0 when unknown).
    pub fn c_in(&self) -> f64 {
        match &self.initial {
            InitialSpec::PowerLawTail { c_in, .. } => *c_in,
            InitialSpec::Table { c_in, .. } => c_in.unwrap_or(0.0),
        }
    }

    pub fn initial_state(&self, grid: &FrequencyGrid) -> Result<SpectralState, CliError> {
        match &self.initial {
            InitialSpec::PowerLawTail { amplitude, c_in, r0, beyond_grid } => {
                Ok(init_power_law_tail(grid, *amplitude, *c_in, *r0, *beyond_grid)?)
            }
            InitialSpec::Table { path, .. } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read initial table {}: {e}", path.display())))?;
                let (mut state, table_grid) = from_csv(&text)?;
                if table_grid.edges() != grid.edges() || table_grid.reps() != grid.reps() {
                    return Err(CliError::Usage(format!(
                        "initial table {} is not on the configured grid",
                        path.display()
                    )));
                }
                state.time = 0.0;
                Ok(state)
            }
        }
    }

    /// Semantic checks beyond parsing.
    pub fn check(&self) -> Result<(), CliError> {
        self.model()?;
        let grid = self.grid()?;
        self.step.check()?;
        self.diagnostics.check()?;
        if self.diagnostics.probe_r.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(CliError::Usage("probe_r values must be finite and >= 0".into()));
        }
        if let InitialSpec::PowerLawTail { r0, .. } = &self.initial {
            if *r0 < grid.omega_min() {
                return Err(CliError::Usage(format!("initial.r0 = {r0} lies below grid.omega_min")));
            }
        }
        Ok(())
    }
}

pub fn read_document(path: &Path) -> Result<toml::Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("cannot parse config {}: {}", path.display(), e.message())))
}

/// Parses a command-line value as a TOML literal, falling back to a string.
pub fn parse_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets a dotted key such as `initial.c_in`, creating intermediate tables.
pub fn set_dotted(doc: &mut toml::Value, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("malformed key {key:?}")));
    }
    let mut node = doc;
    for p in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("{key:?}: {p:?} is not inside a table")))?;
        node = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| CliError::Usage(format!("{key:?} does not name a table entry")))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const EXAMPLE: &str = r#"
schema_version = 1

[kernel]
theta = 0.25
varpi1 = -0.375
varpi2 = -0.25
varpi3 = -0.375
kappa2 = 0.25
gamma = 0.25
alpha = 0.8

[grid]
kind = "geometric"
omega_min = 1.0
omega_max = 1024.0
cells = 16

[initial]
kind = "power_law_tail"
amplitude = 1.0
c_in = 0.001
r0 = 1.0

[step]
dt_init = 1e-4
dt_min = 1e-12
dt_max = 1e-2
t_end = 0.0
"#;

    #[test]
    fn parses_and_builds() {
        let cfg = RunConfig::from_toml_str(EXAMPLE, Path::new(".")).unwrap();
        cfg.check().unwrap();
        assert_eq!(cfg.model().unwrap(), KernelModel::reference_set(0.8));
        assert_eq!(cfg.grid().unwrap().len(), 16);
        assert_eq!(cfg.c_in(), 0.001);
        assert!(cfg.operators.include_ro);
        let again = RunConfig::from_toml_str(&cfg.to_toml(), Path::new(".")).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_and_bad_schema_are_usage_errors() {
        let typo = EXAMPLE.replace("varpi1", "varpi_1");
        assert!(matches!(RunConfig::from_toml_str(&typo, Path::new(".")), Err(CliError::Usage(_))));
        let v2 = EXAMPLE.replace("schema_version = 1", "schema_version = 2");
        assert!(matches!(RunConfig::from_toml_str(&v2, Path::new(".")), Err(CliError::Usage(_))));
        assert!(matches!(RunConfig::from_toml_str("not toml [", Path::new(".")), Err(CliError::Usage(_))));
    }

    #[test]
    fn dotted_overrides() {
        let mut doc: toml::Value = toml::from_str(EXAMPLE).unwrap();
        set_dotted(&mut doc, "initial.c_in", parse_value("0.004")).unwrap();
        set_dotted(&mut doc, "diagnostics.upsilon", parse_value("2")).unwrap();
        set_dotted(&mut doc, "step.method", parse_value("euler")).unwrap();
        let cfg = RunConfig::from_document(doc, Path::new(".")).unwrap();
        assert_eq!(cfg.c_in(), 0.004);
        assert_eq!(cfg.diagnostics.upsilon, Some(2));
        assert_eq!(cfg.step.method, wavecascade::evolve::Method::Euler);
        let mut doc: toml::Value = toml::from_str(EXAMPLE).unwrap();
        assert!(set_dotted(&mut doc, "kernel..theta", parse_value("1")).is_err());
        assert!(set_dotted(&mut doc, "kernel.theta.x", parse_value("1")).is_err());
    }
}
