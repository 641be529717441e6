//! On-disk layout of a run directory.
//!
//! ```text
//! manifest.toml          schema, status, ledger summary, snapshot list, config
//! constraints.txt        validator table
//! trajectory.csv         one row per step
//! snapshots/NNNNNN.csv   stored states
//! cascade_report.toml    cascade diagnostics
//! cascade_series.csv     per-snapshot concentration and flux-bound terms
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wavecascade::cascade::CascadeReport;
use wavecascade::evolve::Trajectory;
use wavecascade::spectrum::{from_csv, to_csv, FrequencyGrid, SpectralState};

use crate::config::RunConfig;
use crate::CliError;

pub const MANIFEST_SCHEMA: &str = "wavecascade.manifest/1";
pub const TRAJECTORY_SCHEMA: &str = "wavecascade.trajectory/1";
pub const REPORT_SCHEMA: &str = "wavecascade.cascade_report/1";
pub const SERIES_SCHEMA: &str = "wavecascade.cascade_series/1";

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CONSTRAINTS_FILE: &str = "constraints.txt";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const REPORT_FILE: &str = "cascade_report.toml";
pub const SERIES_FILE: &str = "cascade_series.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub index: usize,
    pub time: f64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub steps: usize,
    pub t_final: f64,
    pub initial_mass: f64,
    pub final_mass: f64,
    pub initial_energy: f64,
    pub final_energy_grid: f64,
    pub final_overflow_energy: f64,
    pub final_overflow_mass: f64,
    pub final_condensate_mass: f64,
    /// `max |(E_grid + E_overflow)(t) - (E_grid + E_overflow)(0)|` over all steps.
    pub max_energy_ledger_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub tool_version: String,
    /// `completed` or `failed`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub constraints_passed: bool,
    pub trajectory_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_file: Option<String>,
    pub ledger: LedgerSummary,
    pub snapshots: Vec<SnapshotEntry>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| wavecascade::Error::Data(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| wavecascade::Error::Data(format!("corrupt manifest {}: {}", path.display(), e.message())).into())
    }
}

pub fn ledger_summary(traj: &Trajectory) -> LedgerSummary {
    let first = &traj.series[0];
    let last = traj.series.last().expect("trajectory has an initial row");
    let e0 = first.energy_grid + first.overflow_energy;
    let drift = traj
        .series
        .iter()
        .map(|r| ((r.energy_grid + r.overflow_energy) - e0).abs())
        .fold(0.0, f64::max);
    let fin = traj.final_state();
    LedgerSummary {
        steps: traj.steps(),
        t_final: last.t,
        initial_mass: first.mass,
        final_mass: last.mass,
        initial_energy: e0,
        final_energy_grid: last.energy_grid,
        final_overflow_energy: last.overflow_energy,
        final_overflow_mass: last.overflow_mass,
        final_condensate_mass: fin.condensate_mass,
        max_energy_ledger_drift: drift,
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(CliError::io(format!("cannot write {}", path.display())))
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    format!("# schema={TRAJECTORY_SCHEMA}\n{}", traj.series_csv())
}

pub fn report_toml(report: &CascadeReport) -> String {
    #[derive(Serialize)]
    struct File<'a> {
        schema: &'a str,
        report: &'a CascadeReport,
    }
    toml::to_string(&File { schema: REPORT_SCHEMA, report }).expect("report serializes")
}

pub fn series_csv(report: &CascadeReport) -> String {
    format!("# schema={SERIES_SCHEMA}\n# level_set_integrand={}\n{}", report.level_set_integrand, report.series_csv())
}

pub fn snapshot_file(index: usize) -> String {
    format!("{SNAPSHOT_DIR}/{index:06}.csv")
}

/// Writes everything except the manifest.
pub fn write_trajectory(dir: &Path, traj: &Trajectory) -> Result<Vec<SnapshotEntry>, CliError> {
    fs::create_dir_all(dir.join(SNAPSHOT_DIR)).map_err(CliError::io(format!("cannot create {}", dir.display())))?;
    write(&dir.join(TRAJECTORY_FILE), &trajectory_csv(traj))?;
    let mut entries = Vec::with_capacity(traj.snapshots.len());
    for (index, s) in traj.snapshots.iter().enumerate() {
        let file = snapshot_file(index);
        write(&dir.join(&file), &to_csv(s, &traj.grid)?)?;
        entries.push(SnapshotEntry { index, time: s.time, file });
    }
    Ok(entries)
}

pub fn write_report(dir: &Path, report: &CascadeReport) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(format!("cannot create {}", dir.display())))?;
    write(&dir.join(REPORT_FILE), &report_toml(report))?;
    write(&dir.join(SERIES_FILE), &series_csv(report))
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), CliError> {
    let text = toml::to_string(manifest).expect("manifest serializes");
    write(&dir.join(MANIFEST_FILE), &text)
}

pub fn write_constraints(dir: &Path, text: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(format!("cannot create {}", dir.display())))?;
    write(&dir.join(CONSTRAINTS_FILE), text)
}

/// Reads the stored snapshots listed in a manifest and checks them against
/// the configured grid.
pub fn load_snapshots(dir: &Path, manifest: &Manifest, grid: &FrequencyGrid) -> Result<Vec<SpectralState>, CliError> {
    if manifest.snapshots.is_empty() {
        return Err(wavecascade::Error::Data(format!("{} lists no snapshots", dir.display())).into());
    }
    manifest
        .snapshots
        .iter()
        .map(|entry| {
            let path: PathBuf = dir.join(&entry.file);
            let text = fs::read_to_string(&path)
                .map_err(|e| wavecascade::Error::Data(format!("cannot read snapshot {}: {e}", path.display())))?;
            let (state, g) = from_csv(&text)?;
            if g.reps() != grid.reps() || g.edges() != grid.edges() {
                return Err(wavecascade::Error::Data(format!("snapshot {} is on a different grid", path.display())).into());
            }
            if state.time != entry.time {
                return Err(wavecascade::Error::Data(format!("snapshot {} time does not match manifest", path.display())).into());
            }
            Ok(state)
        })
        .collect()
}
