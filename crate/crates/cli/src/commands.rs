//! Subcommand implementations.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use wavecascade::cascade::{analyze, CascadeReport, DiagnosticsSpec};
use wavecascade::collision::CollisionTables;
use wavecascade::evolve::run;
use wavecascade::kernelmodel::{validate_constraints, ConstraintReport};

use crate::config::{parse_value, set_dotted, RunConfig};
use crate::output::{
    ledger_summary, load_snapshots, write_constraints, write_manifest, write_report,
    write_trajectory, Manifest, MANIFEST_SCHEMA, REPORT_FILE, TRAJECTORY_FILE,
};
use crate::{with_workers, CliError};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub workers: Option<usize>,
    pub allow_invalid: bool,
    pub upsilon: Option<u32>,
}

/// Constraint report and the exit code of `validate`.
pub fn cmd_validate(cfg: &RunConfig) -> Result<(ConstraintReport, i32), CliError> {
    let report = validate_constraints(&cfg.model()?, cfg.c_in());
    let code = if report.all_passed() { 0 } else { 1 };
    Ok((report, code))
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub report: Option<CascadeReport>,
    pub constraints: ConstraintReport,
}

fn diagnostics(cfg: &RunConfig, upsilon: Option<u32>) -> DiagnosticsSpec {
    let mut d = cfg.diagnostics.clone();
    if upsilon.is_some() {
        d.upsilon = upsilon;
    }
    d
}

/// Validates, integrates and writes a run directory. On an integration
/// failure the partial trajectory, its report and a `failed` manifest are
/// still written before the error is returned.
pub fn cmd_run(cfg: &RunConfig, out: &Path, opts: &RunOptions) -> Result<RunSummary, CliError> {
    cfg.check()?;
    let model = cfg.model()?;
    let constraints = validate_constraints(&model, cfg.c_in());
    if !constraints.all_passed() && !opts.allow_invalid {
        return Err(CliError::Constraints(constraints.failures().map(|r| r.name.clone()).collect()));
    }
    let grid = cfg.grid()?;
    let initial = cfg.initial_state(&grid)?;
    let spec = diagnostics(cfg, opts.upsilon);
    write_constraints(out, &constraints.render())?;

    let outcome = with_workers(opts.workers, || {
        let tables = CollisionTables::build_unchecked(&grid, &model, cfg.operators)?;
        Ok::<_, CliError>(run(&initial, &tables, &cfg.step, &spec.probe_r))
    })??;
    let (traj, failure) = match outcome {
        Ok(t) => (t, None),
        Err(f) => (f.trajectory, Some(f.error)),
    };
    let snapshots = write_trajectory(out, &traj)?;
    let report = if traj.snapshots.is_empty() {
        None
    } else {
        let r = with_workers(opts.workers, || analyze(&traj.snapshots, &grid, &model, cfg.c_in(), &spec))??;
        write_report(out, &r)?;
        Some(r)
    };
    let mut embedded = cfg.clone();
    embedded.diagnostics = spec;
    embedded.output.dir = out.to_path_buf();
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        status: if failure.is_some() { "failed" } else { "completed" }.to_string(),
        error: failure.as_ref().map(|e| e.to_string()),
        constraints_passed: constraints.all_passed(),
        trajectory_file: TRAJECTORY_FILE.to_string(),
        report_file: report.as_ref().map(|_| REPORT_FILE.to_string()),
        ledger: ledger_summary(&traj),
        snapshots,
        config: embedded,
    };
    write_manifest(out, &manifest)?;
    if let Some(e) = failure {
        return Err(CliError::Run(e.to_string()));
    }
    Ok(RunSummary { dir: out.to_path_buf(), manifest, report, constraints })
}

/// Recomputes the cascade report from a run directory. `diagnostics`
/// replaces the run's own diagnostics section when given.
pub fn cmd_analyze(
    dir: &Path,
    diagnostics: Option<DiagnosticsSpec>,
    upsilon: Option<u32>,
    workers: Option<usize>,
) -> Result<CascadeReport, CliError> {
    let manifest = Manifest::load(dir)?;
    let cfg = &manifest.config;
    let model = cfg.model()?;
    let grid = cfg.grid()?;
    let snapshots = load_snapshots(dir, &manifest, &grid)?;
    let mut spec = diagnostics.unwrap_or_else(|| cfg.diagnostics.clone());
    if upsilon.is_some() {
        spec.upsilon = upsilon;
    }
    Ok(with_workers(workers, || analyze(&snapshots, &grid, &model, cfg.c_in(), &spec))??)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

impl std::str::FromStr for Axis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let (key, vals) = s
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("axis {s:?} must look like key=v1,v2,...")))?;
        let key = key.trim();
        let values: Vec<String> = vals
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(String::from)
            .collect();
        if key.is_empty() || values.is_empty() {
            return Err(CliError::Usage(format!("axis {s:?} has no key or no values")));
        }
        Ok(Axis { key: key.to_string(), values })
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub index: usize,
    pub dir: PathBuf,
    pub assignment: Vec<(String, String)>,
    pub status: String,
    pub constraints_passed: Option<bool>,
    pub immediate_cascade: Option<bool>,
    pub tstar: Option<f64>,
    pub final_overflow_fraction: Option<f64>,
}

pub const SWEEP_SCHEMA: &str = "wavecascade.sweep/1";
pub const SWEEP_FILE: &str = "aggregate.csv";

fn cartesian(axes: &[Axis]) -> Vec<Vec<(String, String)>> {
    let mut points = vec![Vec::new()];
    for axis in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((axis.key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

/// Runs the Cartesian product of `axes` over the template document, one
/// directory per point, and writes `aggregate.csv`. Individual failures
/// are recorded and do not stop the sweep.
pub fn cmd_sweep(
    template: &toml::Value,
    base_dir: &Path,
    axes: &[Axis],
    out: &Path,
    opts: &RunOptions,
) -> Result<Vec<SweepPoint>, CliError> {
    if axes.is_empty() {
        return Err(CliError::Usage("sweep needs at least one --axis".into()));
    }
    let points = cartesian(axes);
    std::fs::create_dir_all(out).map_err(CliError::io(format!("cannot create {}", out.display())))?;
    let run_one = |index: usize, assignment: &Vec<(String, String)>| -> SweepPoint {
        let dir = out.join(format!("point_{index:04}"));
        let mut point = SweepPoint {
            index,
            dir: dir.clone(),
            assignment: assignment.clone(),
            status: String::new(),
            constraints_passed: None,
            immediate_cascade: None,
            tstar: None,
            final_overflow_fraction: None,
        };
        let cfg = (|| {
            let mut doc = template.clone();
            for (k, v) in assignment {
                set_dotted(&mut doc, k, parse_value(v))?;
            }
            RunConfig::from_document(doc, base_dir)
        })();
        let cfg = match cfg {
            Ok(c) => c,
            Err(e) => {
                point.status = format!("error: {e}");
                return point;
            }
        };
        if let Ok(model) = cfg.model() {
            let c = validate_constraints(&model, cfg.c_in());
            point.constraints_passed = Some(c.all_passed());
            point.immediate_cascade = Some(c.immediate_cascade);
        }
        // runs already execute concurrently, so each one is sequential inside
        let inner = RunOptions { workers: Some(1), ..opts.clone() };
        match cmd_run(&cfg, &dir, &inner) {
            Ok(summary) => {
                point.status = "ok".into();
                point.tstar = summary.report.as_ref().and_then(|r| r.tstar);
                let e0 = summary.manifest.ledger.initial_energy;
                point.final_overflow_fraction =
                    Some(if e0 > 0.0 { summary.manifest.ledger.final_overflow_energy / e0 } else { 0.0 });
            }
            Err(e) => {
                point.status = format!("error: {e}");
            }
        }
        point
    };
    let results: Vec<SweepPoint> = with_workers(opts.workers, || {
        points.par_iter().enumerate().map(|(i, a)| run_one(i, a)).collect()
    })?;

    let opt_bool = |b: Option<bool>| b.map_or(String::new(), |b| b.to_string());
    let opt_f = |x: Option<f64>| x.map_or(String::new(), |x| format!("{x:e}"));
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["point".to_string(), "dir".to_string()];
    header.extend(axes.iter().map(|a| a.key.clone()));
    header.extend(
        ["status", "constraints_passed", "immediate_cascade", "tstar", "final_overflow_fraction"].map(String::from),
    );
    let csv_err = |e: csv::Error| CliError::Run(format!("cannot format {SWEEP_FILE}: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for p in &results {
        let mut row = vec![p.index.to_string(), p.dir.file_name().unwrap().to_string_lossy().into_owned()];
        row.extend(p.assignment.iter().map(|(_, v)| v.clone()));
        row.extend([
            p.status.clone(),
            opt_bool(p.constraints_passed),
            opt_bool(p.immediate_cascade),
            opt_f(p.tstar),
            opt_f(p.final_overflow_fraction),
        ]);
        w.write_record(&row).map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| CliError::Run(format!("cannot format {SWEEP_FILE}: {e}")))?;
    let mut text = format!("# schema={SWEEP_SCHEMA}\n").into_bytes();
    text.extend(body);
    std::fs::write(out.join(SWEEP_FILE), text).map_err(CliError::io(format!("cannot write {}", out.display())))?;
    Ok(results)
}
