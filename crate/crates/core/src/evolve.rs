//! Explicit time integration with a positivity guard.
//!
//! The step size is bounded by `safety * min m_i / L_i` over cells with a
//! positive gross loss rate `L_i`. If a stage still produces a negative
//! mass the step is halved and retried; masses are never clipped.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::collision::{apply, CollisionTables, RateResult};
use crate::spectrum::{moments_with_tails, FrequencyGrid, SpectralState};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Euler,
    #[default]
    Heun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    #[serde(default)]
    pub method: Method,
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    #[serde(default = "default_safety")]
    pub safety: f64,
    pub t_end: f64,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    #[serde(default)]
    pub max_steps: Option<usize>,
}

fn default_safety() -> f64 {
    0.5
}

fn default_stride() -> usize {
    1
}

/// Step-size growth factor after a step that needed no halving.
const GROWTH: f64 = 1.5;

impl StepControl {
    pub fn check(&self) -> Result<()> {
        let ok = self.dt_min > 0.0
            && self.dt_min <= self.dt_init
            && self.dt_init <= self.dt_max
            && self.dt_max.is_finite();
        if !ok {
            return Err(Error::Config(format!(
                "need 0 < dt_min <= dt_init <= dt_max, got {}, {}, {}",
                self.dt_min, self.dt_init, self.dt_max
            )));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(Error::Config(format!("safety must lie in (0, 1], got {}", self.safety)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!("t_end must be finite and >= 0, got {}", self.t_end)));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::Config("snapshot_stride must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: SpectralState,
    pub dt: f64,
    /// Proposal for the next step.
    pub dt_next: f64,
    pub halvings: usize,
}

/// `safety * min m_i / L_i` and the cell attaining it.
fn positivity_bound(state: &SpectralState, rates: &RateResult, safety: f64) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, (&m, &l)) in state.masses.iter().zip(&rates.total.loss).enumerate() {
        if l > 0.0 {
            let b = safety * m / l;
            if best.is_none_or(|(v, _)| b < v) {
                best = Some((b, i));
            }
        }
    }
    best
}

fn euler_update(state: &SpectralState, rates: &RateResult, dt: f64) -> SpectralState {
    let t = &rates.total;
    SpectralState {
        masses: state.masses.iter().zip(&t.dm).map(|(m, d)| m + dt * d).collect(),
        condensate_mass: state.condensate_mass + dt * t.condensate_rate,
        overflow_mass: state.overflow_mass + dt * t.overflow_mass_rate,
        overflow_energy: state.overflow_energy + dt * t.overflow_energy_rate,
        time: state.time + dt,
    }
}

fn heun_update(state: &SpectralState, r0: &RateResult, r1: &RateResult, dt: f64) -> SpectralState {
    let (a, b) = (&r0.total, &r1.total);
    let h = 0.5 * dt;
    SpectralState {
        masses: state
            .masses
            .iter()
            .zip(a.dm.iter().zip(&b.dm))
            .map(|(m, (d0, d1))| m + h * (d0 + d1))
            .collect(),
        condensate_mass: state.condensate_mass + h * (a.condensate_rate + b.condensate_rate),
        overflow_mass: state.overflow_mass + h * (a.overflow_mass_rate + b.overflow_mass_rate),
        overflow_energy: state.overflow_energy + h * (a.overflow_energy_rate + b.overflow_energy_rate),
        time: state.time + dt,
    }
}

fn nonnegative(s: &SpectralState) -> bool {
    s.masses.iter().all(|m| *m >= 0.0 && m.is_finite())
}

/// Advances `state` by at most `dt_proposed`, given the rates at `state`.
pub fn step_with_rates(
    state: &SpectralState,
    rates: &RateResult,
    tables: &CollisionTables,
    control: &StepControl,
    dt_proposed: f64,
) -> Result<StepOutcome> {
    let bound = positivity_bound(state, rates, control.safety);
    let mut dt = match bound {
        Some((b, _)) => dt_proposed.min(b),
        None => dt_proposed,
    };
    let mut halvings = 0;
    let stiff = |dt: f64| {
        let (cell, mass, loss_rate) = bound
            .map(|(_, i)| (i, state.masses[i], rates.total.loss[i]))
            .unwrap_or((0, 0.0, 0.0));
        Error::Stiffness { t: state.time, dt, dt_min: control.dt_min, cell, mass, loss_rate }
    };
    loop {
        if dt < control.dt_min && dt < dt_proposed {
            return Err(stiff(dt));
        }
        let next = match control.method {
            Method::Euler => Some(euler_update(state, rates, dt)),
            Method::Heun => {
                let pred = euler_update(state, rates, dt);
                if nonnegative(&pred) {
                    let r1 = apply(&pred, tables)?;
                    Some(heun_update(state, rates, &r1, dt))
                } else {
                    None
                }
            }
        };
        match next {
            Some(s) if nonnegative(&s) => {
                let dt_next = if halvings == 0 && bound.is_none_or(|(b, _)| dt < b) {
                    (dt * GROWTH).min(control.dt_max)
                } else {
                    dt.min(control.dt_max)
                };
                return Ok(StepOutcome { state: s, dt, dt_next, halvings });
            }
            _ => {
                dt *= 0.5;
                halvings += 1;
            }
        }
    }
}

/// One step from `state`, evaluating the rates first.
pub fn step(
    state: &SpectralState,
    tables: &CollisionTables,
    control: &StepControl,
    dt_proposed: f64,
) -> Result<StepOutcome> {
    let rates = apply(state, tables)?;
    step_with_rates(state, &rates, tables, control, dt_proposed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    /// Size of the step that produced this row; 0 for the initial row.
    pub dt: f64,
    pub mass: f64,
    pub energy_grid: f64,
    pub overflow_mass: f64,
    pub overflow_energy: f64,
    /// Gross energy flux of each operator at this state.
    pub flux_c12: f64,
    pub flux_c22: f64,
    pub flux_c31: f64,
    pub tail_energy: Vec<f64>,
}

impl StepRecord {
    fn new(state: &SpectralState, grid: &FrequencyGrid, dt: f64, rates: &RateResult, probes: &[f64]) -> Self {
        let mo = moments_with_tails(state, grid, probes);
        Self {
            t: state.time,
            dt,
            mass: mo.mass,
            energy_grid: mo.energy,
            overflow_mass: mo.overflow_mass,
            overflow_energy: mo.overflow_energy,
            flux_c12: rates.c12.gross_energy_flux,
            flux_c22: rates.c22.gross_energy_flux,
            flux_c31: rates.c31.gross_energy_flux,
            tail_energy: mo.tails.into_iter().map(|(_, e)| e).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: FrequencyGrid,
    pub probes: Vec<f64>,
    pub snapshots: Vec<SpectralState>,
    pub series: Vec<StepRecord>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.series.len().saturating_sub(1)
    }

    pub fn final_state(&self) -> &SpectralState {
        self.snapshots.last().expect("trajectory holds the initial snapshot")
    }

    pub fn initial_state(&self) -> &SpectralState {
        &self.snapshots[0]
    }

    pub fn series_csv(&self) -> String {
        let mut out = String::from(
            "t,dt,mass,energy_grid,overflow_mass,overflow_energy,flux_c12,flux_c22,flux_c31",
        );
        for r in &self.probes {
            let _ = write!(out, ",tail_E@{r:e}");
        }
        out.push('\n');
        for rec in &self.series {
            let _ = write!(
                out,
                "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                rec.t,
                rec.dt,
                rec.mass,
                rec.energy_grid,
                rec.overflow_mass,
                rec.overflow_energy,
                rec.flux_c12,
                rec.flux_c22,
                rec.flux_c31
            );
            for e in &rec.tail_energy {
                let _ = write!(out, ",{e:e}");
            }
            out.push('\n');
        }
        out
    }
}

/// A failed run together with everything computed before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub trajectory: Trajectory,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} steps)", self.error, self.trajectory.steps())
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Integrates from `initial.time` to `control.t_end`, recording every step
/// and storing every `snapshot_stride`-th state plus the final one.
pub fn run(
    initial: &SpectralState,
    tables: &CollisionTables,
    control: &StepControl,
    probes: &[f64],
) -> std::result::Result<Trajectory, RunFailure> {
    let grid = tables.grid().clone();
    let mut traj = Trajectory {
        grid: grid.clone(),
        probes: probes.to_vec(),
        snapshots: Vec::new(),
        series: Vec::new(),
    };
    macro_rules! attempt {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => return Err(RunFailure { error, trajectory: traj }),
            }
        };
    }
    attempt!(control.check());
    let mut state = initial.clone();
    let mut rates = attempt!(apply(&state, tables));
    traj.series.push(StepRecord::new(&state, &grid, 0.0, &rates, probes));
    traj.snapshots.push(state.clone());
    let mut dt_prop = control.dt_init;
    let mut steps = 0usize;
    while state.time < control.t_end {
        if control.max_steps.is_some_and(|cap| steps >= cap) {
            let error = Error::StepLimit { t: state.time, steps };
            if traj.snapshots.last().map(|s| s.time) != Some(state.time) {
                traj.snapshots.push(state.clone());
            }
            return Err(RunFailure { error, trajectory: traj });
        }
        let remaining = control.t_end - state.time;
        // absorb a sliver left over by accumulated rounding into this step
        let proposal = if dt_prop * (1.0 + 1e-9) >= remaining { remaining } else { dt_prop };
        let out = match step_with_rates(&state, &rates, tables, control, proposal) {
            Ok(o) => o,
            Err(error) => {
                if traj.snapshots.last().map(|s| s.time) != Some(state.time) {
                    traj.snapshots.push(state);
                }
                return Err(RunFailure { error, trajectory: traj });
            }
        };
        state = out.state;
        if out.dt == remaining {
            state.time = control.t_end;
        }
        steps += 1;
        rates = attempt!(apply(&state, tables));
        traj.series.push(StepRecord::new(&state, &grid, out.dt, &rates, probes));
        if steps.is_multiple_of(control.snapshot_stride) || state.time >= control.t_end {
            traj.snapshots.push(state.clone());
        }
        dt_prop = out.dt_next;
    }
    Ok(traj)
}
