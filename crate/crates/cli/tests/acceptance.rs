//! End-to-end acceptance suite. Runs without the libtest harness so that
//! every criterion prints exactly one PASS/FAIL line; exits non-zero if any
//! criterion fails.

#[path = "../../core/tests/common/oracle.rs"]
mod oracle;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wavecascade::cascade::{build_partition, Interval};
use wavecascade::collision::{apply, weak_eval, CollisionTables, Operator, OperatorToggles};
use wavecascade::evolve::{run, Method, StepControl, Trajectory};
use wavecascade::kernelmodel::{validate_constraints, KernelModel};
use wavecascade::spectrum::{
    convex_tail_functional, head_energy, init_power_law_tail, FrequencyGrid, Spacing, SpectralState, TailClosure,
};
use wavecascade_cli::commands::{cmd_run, RunOptions};
use wavecascade_cli::config::RunConfig;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

static STATES_CHECKED: AtomicUsize = AtomicUsize::new(0);
static NEGATIVE_CELLS: AtomicUsize = AtomicUsize::new(0);

/// Counts every stored state and its negative cells; used by every
/// trajectory in the suite.
fn record_positivity(traj: &Trajectory) {
    let mut neg = 0;
    for s in &traj.snapshots {
        neg += s.masses.iter().filter(|m| !(**m >= 0.0)).count();
        neg += [s.condensate_mass, s.overflow_mass, s.overflow_energy].iter().filter(|m| !(**m >= 0.0)).count();
    }
    STATES_CHECKED.fetch_add(traj.snapshots.len(), Ordering::Relaxed);
    NEGATIVE_CELLS.fetch_add(neg, Ordering::Relaxed);
}

fn control(method: Method, dt: f64, t_end: f64) -> StepControl {
    StepControl {
        method,
        dt_init: dt,
        dt_min: 1e-14,
        dt_max: dt,
        safety: 0.5,
        t_end,
        snapshot_stride: 1,
        max_steps: None,
    }
}

fn reference() -> KernelModel {
    KernelModel::reference_set(0.8)
}

fn random_grid(rng: &mut ChaCha8Rng, max_cells: usize) -> FrequencyGrid {
    let n = rng.gen_range(2..=max_cells);
    if rng.gen_bool(0.5) {
        let lo = rng.gen_range(0.0..2.0);
        FrequencyGrid::make(Spacing::Uniform, lo, lo + rng.gen_range(1.0..20.0), n).unwrap()
    } else {
        let lo = rng.gen_range(0.1..2.0);
        FrequencyGrid::make(Spacing::Geometric, lo, lo * rng.gen_range(2.0..200.0), n).unwrap()
    }
}

fn random_state(rng: &mut ChaCha8Rng, n: usize) -> SpectralState {
    let masses = (0..n)
        .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..1.0) })
        .collect();
    SpectralState::from_masses(masses).unwrap()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for op in Operator::ALL {
        for case in 0..120 {
            let grid = random_grid(&mut rng, 8);
            let mut model = reference();
            model.exponents.c_p = rng.gen_range(0.2..3.0);
            model.exponents.c_q = rng.gen_range(0.2..3.0);
            model.exponents.c_r = rng.gen_range(0.2..3.0);
            model.coupling.c12 = rng.gen_range(0.1..2.0);
            model.coupling.c22 = rng.gen_range(0.1..2.0);
            model.coupling.c31 = rng.gen_range(0.1..2.0);
            let state = random_state(&mut rng, grid.len());
            let toggles = OperatorToggles { include_ro: rng.gen_bool(0.7), ..OperatorToggles::only(op) };
            let tables = CollisionTables::build(&grid, &model, toggles).unwrap();
            let got = apply(&state, &tables).unwrap();
            let led = got.operator(op);
            let want = oracle::oracle_rates(&model, grid.reps(), &state.masses, op, toggles);
            let mut pairs: Vec<(f64, f64, f64)> =
                (0..grid.len()).map(|i| (led.dm[i], want.dm[i], want.scale[i])).collect();
            pairs.push((led.condensate_rate, want.condensate, want.scale_acc[0]));
            pairs.push((led.overflow_mass_rate, want.overflow_mass, want.scale_acc[1]));
            pairs.push((led.overflow_energy_rate, want.overflow_energy, want.scale_acc[2]));
            for (a, b, scale) in pairs {
                let rel = if scale > 0.0 { (a - b).abs() / scale } else { (a - b).abs() };
                worst = worst.max(rel);
                ensure!(rel <= 1e-12, "{op:?} case {case}: {a} vs {b} (relative error {rel:e})");
            }
            cases += 1;
        }
    }
    Ok(format!("{cases} cases, worst relative error {worst:.1e}"))
}

fn criterion_2() -> Outcome {
    let grid = FrequencyGrid::make(Spacing::Geometric, 1.0, 65536.0, 64).unwrap();
    let tables = CollisionTables::build(&grid, &reference(), OperatorToggles::all()).unwrap();
    let state = init_power_law_tail(&grid, 1.0, 0.001, 1.0, TailClosure::Lump).unwrap();
    let dt = 2e-5;
    let mut c = control(Method::Heun, dt, 1000.0 * dt);
    c.snapshot_stride = 50;
    let traj = run(&state, &tables, &c, &[]).map_err(|e| e.to_string())?;
    record_positivity(&traj);
    ensure!(traj.steps() >= 1000, "only {} steps", traj.steps());
    let e0 = traj.series[0].energy_grid + traj.series[0].overflow_energy;
    let drift = traj
        .series
        .iter()
        .map(|r| (r.energy_grid + r.overflow_energy - e0).abs())
        .fold(0.0, f64::max);
    ensure!(drift <= 1e-9 * e0, "ledger drift {drift:e} against initial energy {e0:e}");
    let last = traj.series.last().unwrap();
    ensure!(last.overflow_energy > 0.0, "scenario never reached the overflow");
    Ok(format!(
        "{} steps, drift {:.1e} relative, {:.1}% of energy in overflow",
        traj.steps(),
        drift / e0,
        100.0 * last.overflow_energy / e0
    ))
}

fn criterion_3() -> Outcome {
    let grid = FrequencyGrid::make(Spacing::Geometric, 1.0, 65536.0, 32).unwrap();
    let tables = CollisionTables::build(&grid, &reference(), OperatorToggles::all()).unwrap();
    let cutoff = grid.omega_max() / 8.0;
    let masses = grid.reps().iter().map(|&w| if w <= 4.0 { 0.05 } else { 0.0 }).collect();
    let state = SpectralState::from_masses(masses).unwrap();
    ensure!(
        grid.edges()[1..].iter().zip(&state.masses).all(|(&hi, &m)| m == 0.0 || hi <= cutoff),
        "support not compact"
    );
    let mut worst: f64 = 0.0;
    for method in [Method::Euler, Method::Heun] {
        let traj = run(&state, &tables, &control(method, 1e-3, 3e-3), &[]).map_err(|e| e.to_string())?;
        record_positivity(&traj);
        let e0 = traj.series[0].energy_grid;
        for rec in &traj.series {
            ensure!(
                rec.overflow_energy == 0.0 && rec.overflow_mass == 0.0,
                "{method:?}: overflow reached at t = {}",
                rec.t
            );
            let rel = (rec.energy_grid - e0).abs() / e0;
            worst = worst.max(rel);
            ensure!(rel <= 1e-9, "{method:?}: grid energy moved by {rel:e} at t = {}", rec.t);
        }
    }
    Ok(format!("zero overflow, grid energy constant to {worst:.1e}"))
}

fn criterion_4() -> Outcome {
    let model = reference();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let states = 150;
    let mut checks = 0usize;
    for k in 0..states {
        let grid = random_grid(&mut rng, 10);
        let state = random_state(&mut rng, grid.len());
        for op in [Operator::C12, Operator::C31] {
            let t = CollisionTables::build(&grid, &model, OperatorToggles::only(op)).unwrap();
            let w = weak_eval(&state, &t, |_| 1.0).unwrap();
            ensure!(w.operator(op) <= 0.0, "state {k}: {op:?} mass rate {} > 0", w.operator(op));
            checks += 1;
        }
        let t = CollisionTables::build(&grid, &model, OperatorToggles::only(Operator::C22)).unwrap();
        let w = weak_eval(&state, &t, |_| 1.0).unwrap();
        ensure!(
            w.c22.abs() <= 1e-12 * w.gross_mass_flux.max(f64::MIN_POSITIVE),
            "state {k}: C22 mass rate {}",
            w.c22
        );
        checks += 1;
        let t = CollisionTables::build(&grid, &model, OperatorToggles::all()).unwrap();
        for &r in grid.edges().iter().chain(grid.reps()) {
            let w = weak_eval(&state, &t, move |x| (x - r).max(0.0)).unwrap();
            ensure!(w.total() >= -1e-12 * w.gross_energy_flux, "state {k}, R = {r}: {}", w.total());
            checks += 1;
        }
    }
    let mut trajectories = 0;
    for k in 0..24 {
        let grid = random_grid(&mut rng, 12);
        let state = random_state(&mut rng, grid.len());
        let toggles = match k % 4 {
            0 => OperatorToggles::only(Operator::C12),
            1 => OperatorToggles::only(Operator::C22),
            2 => OperatorToggles::only(Operator::C31),
            _ => OperatorToggles::all(),
        };
        let method = if k % 2 == 0 { Method::Euler } else { Method::Heun };
        let t = CollisionTables::build(&grid, &model, toggles).unwrap();
        let traj = run(&state, &t, &control(method, 1e-3, 0.05), &[]).map_err(|e| e.to_string())?;
        record_positivity(&traj);
        for w in traj.series.windows(2) {
            ensure!(
                w[1].mass <= w[0].mass * (1.0 + 1e-14),
                "trajectory {k}: total mass rose from {} to {} at t = {}",
                w[0].mass,
                w[1].mass,
                w[1].t
            );
        }
        trajectories += 1;
    }
    Ok(format!("{states} random states, {checks} sign checks, {trajectories} trajectories with non-increasing mass"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let model = reference();
    for k in 0..20 {
        let grid = random_grid(&mut rng, 16);
        // sparse data stresses the loss-limited step control
        let masses = (0..grid.len()).map(|_| if rng.gen_bool(0.6) { 0.0 } else { rng.gen_range(0.0..2.0) }).collect();
        let state = SpectralState::from_masses(masses).unwrap();
        let method = if k % 2 == 0 { Method::Euler } else { Method::Heun };
        let t = CollisionTables::build(&grid, &model, OperatorToggles::all()).unwrap();
        let mut c = control(method, 0.05, 0.5);
        c.dt_max = 0.05;
        let traj = run(&state, &t, &c, &[]).map_err(|e| e.to_string())?;
        record_positivity(&traj);
    }
    let checked = STATES_CHECKED.load(Ordering::Relaxed);
    let negative = NEGATIVE_CELLS.load(Ordering::Relaxed);
    ensure!(negative == 0, "{negative} negative entries in {checked} stored states");
    Ok(format!("{checked} stored states so far, no negative entries"))
}

fn criterion_6() -> Outcome {
    let base = validate_constraints(&reference(), 0.001);
    ensure!(base.inequalities.len() == 9, "{} inequalities", base.inequalities.len());
    ensure!(base.all_passed(), "reference set fails: {:?}", base.failures().map(|r| &r.name).collect::<Vec<_>>());
    type Tweak = fn(&mut KernelModel);
    let cases: [(&str, Tweak); 9] = [
        ("4ϖ₃+3θ+α > 0", |m| m.exponents.varpi3 = -0.5),
        ("3ϖ₁+3θ+α > 0", |m| m.exponents.varpi1 = -0.6),
        ("4ϖ₂+3+α+γ > 0", |m| m.exponents.varpi2 = -1.05),
        ("3ϖ₂+2−2θ > 0", |m| m.exponents.varpi2 = -0.6),
        ("γ+κ₂ ≥ 0", |m| m.exponents.kappa2 = -0.5),
        ("3θ+2ϖ₁ ≤ 0", |m| m.exponents.varpi1 = 0.0),
        ("2θ+2ϖ₂ ≤ 0", |m| m.exponents.varpi2 = -0.1),
        ("3θ+2ϖ₃ ≤ 0", |m| m.exponents.varpi3 = 0.0),
        ("2ϖ₂+θ+γ ≥ 0", |m| m.exponents.gamma = 0.0),
    ];
    for (i, (name, tweak)) in cases.iter().enumerate() {
        ensure!(base.inequalities[i].name == *name, "inequality {i} is named {:?}", base.inequalities[i].name);
        let mut m = reference();
        tweak(&mut m);
        let r = validate_constraints(&m, 0.001);
        ensure!(!r.all_passed(), "{name}: perturbation not rejected");
        ensure!(
            r.failures().any(|f| f.name == *name),
            "{name}: not flagged (failures: {:?})",
            r.failures().map(|f| &f.name).collect::<Vec<_>>()
        );
    }
    let th = base.cin_threshold_immediate;
    ensure!((th - 0.001667).abs() <= 1e-6, "immediate threshold {th}");
    ensure!(base.immediate_cascade, "c_in = 0.001 not below the threshold");
    Ok(format!("9/9 perturbations flagged, immediate threshold {th:.7}"))
}

fn criterion_7() -> Outcome {
    let model = reference();
    let inf = f64::INFINITY;
    let iv = |lo, hi| Interval { lo, hi };
    let p = build_partition(8, &model, 0.01, None).map_err(|e| e.to_string())?;
    ensure!(p.upsilon == 0 && p.omega == 256.0 && p.delta == 256.0, "level 8: {p:?}");
    ensure!(p.non_overlapping == vec![iv(256.0, inf)], "level 8 D: {:?}", p.non_overlapping);
    let p = build_partition(4, &model, 0.01, Some(2)).map_err(|e| e.to_string())?;
    ensure!(p.upsilon == 2 && p.omega == 16.0 && p.delta == 4.0, "level 4: {p:?}");
    ensure!(
        p.non_overlapping == vec![iv(28.0, inf), iv(24.0, 28.0), iv(20.0, 24.0), iv(16.0, 20.0)],
        "level 4 D: {:?}",
        p.non_overlapping
    );
    ensure!(
        p.overlapping == vec![iv(24.0, inf), iv(20.0, inf), iv(16.0, 28.0), iv(16.0, 24.0)],
        "level 4 S: {:?}",
        p.overlapping
    );
    Ok("level 8 (formula) and level 4 (override 2) exact".into())
}

const CASCADE_CONFIG: &str = r#"
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
omega_max = 65536.0
cells = 128

[initial]
kind = "power_law_tail"
amplitude = 1.0
c_in = 0.001
r0 = 1.0

[step]
method = "heun"
dt_init = 1e-4
dt_min = 1e-12
dt_max = 1e-2
t_end = 0.05
snapshot_stride = 1

[diagnostics]
probe_r = [16.0, 256.0, 4096.0]
levels = [4, 8]
tol = 0.01
"#;

fn criterion_8() -> Outcome {
    let cfg = RunConfig::from_toml_str(CASCADE_CONFIG, Path::new(".")).map_err(|e| e.to_string())?;
    let constraints = validate_constraints(&cfg.model().unwrap(), cfg.c_in());
    ensure!(
        cfg.c_in() < constraints.cin_threshold_immediate,
        "c_in {} not below {}",
        cfg.c_in(),
        constraints.cin_threshold_immediate
    );
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let summary = cmd_run(&cfg, dir.path(), &RunOptions::default()).map_err(|e| e.to_string())?;
    let grid = cfg.grid().unwrap();
    let model = cfg.model().unwrap();
    let tables = CollisionTables::build(&grid, &model, cfg.operators).unwrap();
    let traj = run(&cfg.initial_state(&grid).unwrap(), &tables, &cfg.step, &cfg.diagnostics.probe_r)
        .map_err(|e| e.to_string())?;
    record_positivity(&traj);
    ensure!(
        traj.series.len() == summary.manifest.ledger.steps + 1,
        "stored run and in-memory run differ"
    );

    // (a) overflow energy strictly increasing once first positive
    let first = traj.series.iter().position(|r| r.overflow_energy > 0.0).ok_or("overflow never positive")?;
    for w in traj.series[first..].windows(2) {
        ensure!(w[1].overflow_energy > w[0].overflow_energy, "(a) overflow energy stalled at t = {}", w[1].t);
    }
    // (b) convex tails non-decreasing for every probe
    for &r in &cfg.diagnostics.probe_r {
        for pair in traj.snapshots.windows(2) {
            let a = convex_tail_functional(&pair[0], &grid, r);
            let b = convex_tail_functional(&pair[1], &grid, r);
            ensure!(b >= a - 1e-12 * a.abs(), "(b) R = {r}: {b} < {a} at t = {}", pair[1].time);
        }
    }
    // (c) finite T*
    let report = summary.report.as_ref().ok_or("no cascade report")?;
    let tstar = report.tstar.ok_or("(c) T* not reached")?;
    ensure!(tstar.is_finite() && tstar <= cfg.step.t_end, "(c) T* = {tstar}");
    // (d) head energy decreases for each fixed probe
    let (s0, s1) = (traj.initial_state(), traj.final_state());
    let mut heads = Vec::new();
    for &r in &cfg.diagnostics.probe_r {
        let (h0, h1) = (head_energy(s0, &grid, r), head_energy(s1, &grid, r));
        ensure!(h1 < h0, "(d) R = {r}: head energy {h0} -> {h1}");
        heads.push(format!("{r}: {h0:.4e}->{h1:.4e}"));
    }
    ensure!(NEGATIVE_CELLS.load(Ordering::Relaxed) == 0, "negative masses in the cascade run");
    let last = traj.series.last().unwrap();
    let e0 = traj.series[0].energy_grid;
    Ok(format!(
        "{} steps, T* = {tstar:.3e}, overflow fraction {:.3}, heads [{}]",
        traj.steps(),
        last.overflow_energy / e0,
        heads.join(", ")
    ))
}

fn criterion_9() -> Outcome {
    let text = CASCADE_CONFIG
        .replace("cells = 128", "cells = 48")
        .replace("t_end = 0.05", "t_end = 0.01")
        .replace("snapshot_stride = 1", "snapshot_stride = 3");
    let cfg = RunConfig::from_toml_str(&text, Path::new(".")).map_err(|e| e.to_string())?;
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for workers in [1, 2, 8, 1] {
        let dir = root.path().join(format!("w{workers}_{}", outputs.len()));
        let opts = RunOptions { workers: Some(workers), ..RunOptions::default() };
        cmd_run(&cfg, &dir, &opts).map_err(|e| e.to_string())?;
        outputs.push((workers, csv_files(&dir)));
    }
    let (_, reference) = &outputs[0];
    ensure!(reference.len() >= 3, "only {} CSV files", reference.len());
    for (workers, files) in &outputs[1..] {
        ensure!(files.len() == reference.len(), "{workers} workers: file count differs");
        for ((name_a, a), (name_b, b)) in reference.iter().zip(files) {
            ensure!(name_a == name_b && a == b, "{workers} workers: {name_b} differs");
        }
    }
    Ok(format!("{} CSV files identical across 1, 2, 8 workers and a rerun", reference.len()))
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                let name = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((name, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("oracle equivalence", criterion_1),
        ("energy ledger", criterion_2),
        ("exact conservation regime", criterion_3),
        ("sign and monotonicity", criterion_4),
        ("positivity", criterion_5),
        ("validator fidelity", criterion_6),
        ("partition arithmetic", criterion_7),
        ("cascade demonstration", criterion_8),
        ("determinism", criterion_9),
    ];
    let limits = [10.0, 60.0, 60.0, 120.0, 120.0, 10.0, 10.0, 600.0, 300.0];
    let mut failed = 0;
    for (k, ((name, f), limit)) in criteria.iter().zip(limits).enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > Duration::from_secs_f64(limit) => {
                Err(format!("{detail}; took {:.1}s, limit {limit}s", elapsed.as_secs_f64()))
            }
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}; {:.1}s)", k + 1, elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why}; {:.1}s)", k + 1, elapsed.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 9 criteria failed");
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
