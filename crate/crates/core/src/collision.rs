//! Discrete collision operators acting on cell-mass spectra.
//!
//! Each cell `i` is an atom of mass `m_i` at its representative frequency
//! `w_i`. The weak forms then reduce to finite sums over interacting
//! tuples; every interaction removes mass from its input cells, returns
//! mass to its spectator cells, and deposits its output at an exact target
//! frequency. Targets that fall between representatives are split over the
//! two neighbouring cells preserving mass and first moment. Targets below
//! the first representative split against the condensate at `w = 0`, and
//! targets above the last representative go to the overflow ledger, which
//! records both mass and exact energy.
//!
//! | operator        | inputs (loss)  | spectators (gain) | output          |
//! |-----------------|----------------|-------------------|-----------------|
//! | C12 forward     | i, j           |                   | w_i + w_j       |
//! | C12 backward    | i              | j                 | w_i - w_j       |
//! | C22             | i, j           | l                 | w_i + w_j - w_l |
//! | C31 forward     | i, j, l        |                   | w_i + w_j + w_l |
//! | C31 backward    | i              | j, l              | w_i - w_j - w_l |
//!
//! Symmetric index pairs are enumerated once with their multiplicity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kernelmodel::{validate_constraints, KernelModel, WeightLaws};
use crate::spectrum::{Deposit, FrequencyGrid, SpectralState};
use crate::sum::NeumaierSum;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorToggles {
    #[serde(default = "yes")]
    pub c12: bool,
    #[serde(default = "yes")]
    pub c22: bool,
    #[serde(default = "yes")]
    pub c31: bool,
    /// Include the `max(w, w1, w2, w3)^gamma` factor in the C22 weight.
    #[serde(default = "yes")]
    pub include_ro: bool,
}

fn yes() -> bool {
    true
}

impl Default for OperatorToggles {
    fn default() -> Self {
        Self::all()
    }
}

impl OperatorToggles {
    pub fn all() -> Self {
        Self { c12: true, c22: true, c31: true, include_ro: true }
    }

    pub fn only(op: Operator) -> Self {
        Self {
            c12: op == Operator::C12,
            c22: op == Operator::C22,
            c31: op == Operator::C31,
            include_ro: true,
        }
    }

    pub fn enabled(&self, op: Operator) -> bool {
        match op {
            Operator::C12 => self.c12,
            Operator::C22 => self.c22,
            Operator::C31 => self.c31,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operator {
    C12,
    C22,
    C31,
}

impl Operator {
    pub const ALL: [Operator; 3] = [Operator::C12, Operator::C22, Operator::C31];
}

#[derive(Debug, Clone, Copy)]
struct PairEntry {
    target: f64,
    /// Kernel weight at the target (`P(w_i + w_j)` or `P(w_i - w_j)`).
    weight: f64,
    deposit: Deposit,
}

/// Per-cell kernel factors and the pairwise target cache for one grid and
/// one kernel model.
#[derive(Debug, Clone)]
pub struct CollisionTables {
    grid: FrequencyGrid,
    model: KernelModel,
    laws: WeightLaws,
    toggles: OperatorToggles,
    bar_p: Vec<f64>,
    bar_q: Vec<f64>,
    /// `barR(w_i) / |k|(w_i)`
    bar_r_over_k: Vec<f64>,
    k: Vec<f64>,
    /// `w_i^gamma`
    ro: Vec<f64>,
    /// Row-major `n x n`; entry `(i, j)` holds `w_i + w_j` for `i <= j` and
    /// `w_i - w_j` for `i > j`.
    pairs: Vec<PairEntry>,
}

impl CollisionTables {
    /// Builds the tables after checking that the model satisfies every
    /// parameter inequality.
    pub fn build(grid: &FrequencyGrid, model: &KernelModel, toggles: OperatorToggles) -> Result<Self> {
        let report = validate_constraints(model, 0.0);
        if !report.all_passed() {
            let names: Vec<_> = report.failures().map(|r| r.name.clone()).collect();
            return Err(Error::Config(format!(
                "kernel model violates parameter constraints: {}",
                names.join(", ")
            )));
        }
        Self::build_unchecked(grid, model, toggles)
    }

    /// Builds the tables without the parameter-inequality check.
    pub fn build_unchecked(grid: &FrequencyGrid, model: &KernelModel, toggles: OperatorToggles) -> Result<Self> {
        model.check()?;
        let laws = model.weight_laws();
        let reps = grid.reps();
        if reps[0] <= 0.0 {
            return Err(Error::Config("grid representatives must be positive".into()));
        }
        let n = reps.len();
        let k: Vec<f64> = reps.iter().map(|&w| laws.k.eval(w)).collect();
        let bar_r_over_k = reps.iter().zip(&k).map(|(&w, &kk)| laws.bar_r.eval(w) / kk).collect();
        let mut pairs = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let target = if i <= j { reps[i] + reps[j] } else { reps[i] - reps[j] };
                pairs.push(PairEntry {
                    target,
                    weight: laws.p.eval(target),
                    deposit: grid.locate(target),
                });
            }
        }
        let tables = Self {
            grid: grid.clone(),
            model: *model,
            laws,
            toggles,
            bar_p: reps.iter().map(|&w| laws.bar_p.eval(w)).collect(),
            bar_q: reps.iter().map(|&w| laws.bar_q.eval(w)).collect(),
            bar_r_over_k,
            k,
            ro: reps.iter().map(|&w| w.powf(laws.ro_exponent)).collect(),
            pairs,
        };
        let finite = tables
            .bar_p
            .iter()
            .chain(&tables.bar_q)
            .chain(&tables.bar_r_over_k)
            .chain(&tables.k)
            .chain(&tables.ro)
            .all(|v| v.is_finite() && *v >= 0.0);
        if !finite {
            return Err(Error::Config("kernel factors are not finite on this grid".into()));
        }
        Ok(tables)
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn model(&self) -> &KernelModel {
        &self.model
    }

    pub fn toggles(&self) -> OperatorToggles {
        self.toggles
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Cached split of the pair target: `w_i + w_j` if `i <= j`, else `w_i - w_j`.
    pub fn pair_deposit(&self, i: usize, j: usize) -> (f64, Deposit) {
        let e = &self.pairs[i * self.len() + j];
        (e.target, e.deposit)
    }

    fn check_state(&self, state: &SpectralState) -> Result<()> {
        state.check_grid(&self.grid)?;
        state.check()
    }
}

/// Rate ledger of one operator (or of their sum).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OperatorLedger {
    /// Net mass rate per cell.
    pub dm: Vec<f64>,
    /// Gross loss rate per cell (non-negative).
    pub loss: Vec<f64>,
    pub condensate_rate: f64,
    pub overflow_mass_rate: f64,
    pub overflow_energy_rate: f64,
    /// Total mass leaving input cells per unit time.
    pub gross_mass_flux: f64,
    /// Total energy leaving input cells per unit time.
    pub gross_energy_flux: f64,
}

impl OperatorLedger {
    pub fn zeros(n: usize) -> Self {
        Self { dm: vec![0.0; n], loss: vec![0.0; n], ..Default::default() }
    }

    fn merge(&mut self, other: &Self) {
        for (a, b) in self.dm.iter_mut().zip(&other.dm) {
            *a += b;
        }
        for (a, b) in self.loss.iter_mut().zip(&other.loss) {
            *a += b;
        }
        self.condensate_rate += other.condensate_rate;
        self.overflow_mass_rate += other.overflow_mass_rate;
        self.overflow_energy_rate += other.overflow_energy_rate;
        self.gross_mass_flux += other.gross_mass_flux;
        self.gross_energy_flux += other.gross_energy_flux;
    }

    /// `sum_i dm_i w_i + overflow_energy_rate`; zero up to roundoff.
    pub fn energy_residual(&self, grid: &FrequencyGrid) -> f64 {
        let mut acc = NeumaierSum::new();
        for (d, w) in self.dm.iter().zip(grid.reps()) {
            acc.add(d * w);
        }
        acc.add(self.overflow_energy_rate);
        acc.value()
    }

    /// Rate of change of total mass including both accumulators.
    pub fn mass_rate(&self) -> f64 {
        let mut acc = NeumaierSum::new();
        for d in &self.dm {
            acc.add(*d);
        }
        acc.add(self.condensate_rate);
        acc.add(self.overflow_mass_rate);
        acc.value()
    }

    /// `sum_i Xi(w_i) dm_i + Xi(0) condensate_rate + overflow term`, where the
    /// overflow term uses `(w - R)_+` semantics: `overflow_energy_rate -
    /// R overflow_mass_rate` for test functions of that form. Provided for
    /// the convex tail functionals only.
    pub fn convex_tail_rate(&self, grid: &FrequencyGrid, r: f64) -> f64 {
        let mut acc = NeumaierSum::new();
        for (d, w) in self.dm.iter().zip(grid.reps()) {
            acc.add(d * (w - r).max(0.0));
        }
        acc.add(self.overflow_energy_rate);
        acc.add(-r * self.overflow_mass_rate);
        acc.value()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateResult {
    pub c12: OperatorLedger,
    pub c22: OperatorLedger,
    pub c31: OperatorLedger,
    pub total: OperatorLedger,
}

impl RateResult {
    pub fn operator(&self, op: Operator) -> &OperatorLedger {
        match op {
            Operator::C12 => &self.c12,
            Operator::C22 => &self.c22,
            Operator::C31 => &self.c31,
        }
    }

    pub fn dm(&self) -> &[f64] {
        &self.total.dm
    }
}

/// One interaction as seen by an accumulator.
trait Sink {
    fn event(&mut self, rho: f64, losses: &[usize], gains: &[usize], target: f64, deposit: Deposit);
}

impl Sink for OperatorLedger {
    #[inline]
    fn event(&mut self, rho: f64, losses: &[usize], gains: &[usize], target: f64, deposit: Deposit) {
        for &c in losses {
            self.dm[c] -= rho;
            self.loss[c] += rho;
        }
        for &c in gains {
            self.dm[c] += rho;
        }
        match deposit {
            Deposit::Cells { lo, frac_lo } => {
                if frac_lo >= 1.0 {
                    self.dm[lo] += rho;
                } else {
                    self.dm[lo] += frac_lo * rho;
                    self.dm[lo + 1] += (1.0 - frac_lo) * rho;
                }
            }
            Deposit::Condensate { frac_cell0 } => {
                self.dm[0] += frac_cell0 * rho;
                self.condensate_rate += (1.0 - frac_cell0) * rho;
            }
            Deposit::Overflow => {
                self.overflow_mass_rate += rho;
                self.overflow_energy_rate += rho * target;
            }
        }
        self.gross_mass_flux += rho * losses.len() as f64;
    }
}

/// Applies the test function at exact (unsplit) frequencies.
struct WeakSink<'a, F: Fn(f64) -> f64> {
    reps: &'a [f64],
    xi_reps: &'a [f64],
    xi: &'a F,
    acc: NeumaierSum,
    gross_mass: f64,
    gross_energy: f64,
}

impl<F: Fn(f64) -> f64> Sink for WeakSink<'_, F> {
    #[inline]
    fn event(&mut self, rho: f64, losses: &[usize], gains: &[usize], target: f64, _deposit: Deposit) {
        let mut gained = (self.xi)(target);
        for &c in gains {
            gained += self.xi_reps[c];
        }
        let mut lost = 0.0;
        let mut lost_energy = 0.0;
        for &c in losses {
            lost += self.xi_reps[c];
            lost_energy += self.reps[c];
        }
        self.acc.add(rho * (gained - lost));
        self.gross_mass += rho * losses.len() as f64;
        self.gross_energy += rho * lost_energy;
    }
}

/// Energy flux is accumulated separately so the hot loops only pass cell
/// indices; this wrapper adds it for ledgers.
struct LedgerSink<'a> {
    ledger: OperatorLedger,
    reps: &'a [f64],
}

impl Sink for LedgerSink<'_> {
    #[inline]
    fn event(&mut self, rho: f64, losses: &[usize], gains: &[usize], target: f64, deposit: Deposit) {
        let mut lost_energy = 0.0;
        for &c in losses {
            lost_energy += self.reps[c];
        }
        self.ledger.gross_energy_flux += rho * lost_energy;
        self.ledger.event(rho, losses, gains, target, deposit);
    }
}

fn c12_for<S: Sink>(t: &CollisionTables, m: &[f64], i: usize, sink: &mut S) {
    let n = m.len();
    let reps = t.grid.reps();
    let c = t.model.coupling.c12;
    let base_i = c * m[i] * t.bar_p[i];
    // forward: unordered {i, j}, j >= i
    for j in i..n {
        if m[j] == 0.0 {
            continue;
        }
        let e = &t.pairs[i * n + j];
        let sym = if i == j { 1.0 } else { 2.0 };
        let rho = sym * base_i * m[j] * t.bar_p[j] * e.weight;
        sink.event(rho, &[i, j], &[], e.target, e.deposit);
    }
    // backward: w_i > w_j, i splits into j and w_i - w_j
    for j in 0..i {
        if m[j] == 0.0 {
            continue;
        }
        let e = &t.pairs[i * n + j];
        let rho = 2.0 * base_i * m[j] * t.bar_p[j] * e.weight;
        debug_assert!(e.target == reps[i] - reps[j]);
        sink.event(rho, &[i], &[j], e.target, e.deposit);
    }
}

fn c22_for<S: Sink>(t: &CollisionTables, m: &[f64], i: usize, sink: &mut S) {
    let n = m.len();
    let reps = t.grid.reps();
    let laws = &t.laws;
    let with_ro = t.toggles.include_ro;
    let base_i = t.model.coupling.c22 * m[i] * t.bar_r_over_k[i];
    for j in i..n {
        if m[j] == 0.0 {
            continue;
        }
        let sym = if i == j { 1.0 } else { 2.0 };
        let base_ij = sym * base_i * m[j] * t.bar_r_over_k[j];
        let s = reps[i] + reps[j];
        for l in 0..n {
            let w4 = s - reps[l];
            if w4 <= 0.0 {
                break;
            }
            if m[l] == 0.0 {
                continue;
            }
            let ln4 = w4.ln();
            let r4 = laws.r.eval_ln(ln4);
            // w_i <= w_j, so the extremes are among (w_j, w_l, w4) and (w_i, w_l, w4)
            let ro = if !with_ro {
                1.0
            } else if w4 > reps[j].max(reps[l]) {
                (laws.ro_exponent * ln4).exp()
            } else if reps[j] >= reps[l] {
                t.ro[j]
            } else {
                t.ro[l]
            };
            let kmin = if w4 < reps[i].min(reps[l]) {
                laws.k.eval_ln(ln4)
            } else if reps[i] <= reps[l] {
                t.k[i]
            } else {
                t.k[l]
            };
            let rho = base_ij * m[l] * t.bar_r_over_k[l] * r4 * ro * kmin;
            sink.event(rho, &[i, j], &[l], w4, t.grid.locate(w4));
        }
    }
}

fn c31_for<S: Sink>(t: &CollisionTables, m: &[f64], i: usize, sink: &mut S) {
    let n = m.len();
    let reps = t.grid.reps();
    let q = &t.laws.q;
    let c = t.model.coupling.c31;
    let last = t.grid.last_rep();
    let base_i = c * m[i] * t.bar_q[i];
    // forward: unordered {i <= j <= l}
    for j in i..n {
        if m[j] == 0.0 {
            continue;
        }
        let base_ij = base_i * m[j] * t.bar_q[j];
        for l in j..n {
            if m[l] == 0.0 {
                continue;
            }
            let mult = match (i == j, j == l) {
                (true, true) => 1.0,
                (false, false) if i != l => 6.0,
                _ => 3.0,
            };
            let target = reps[i] + reps[j] + reps[l];
            let rho = mult * base_ij * m[l] * t.bar_q[l] * q.eval(target);
            let deposit = if target > last { Deposit::Overflow } else { t.grid.locate(target) };
            sink.event(rho, &[i, j, l], &[], target, deposit);
        }
    }
    // backward: w_i > w_j + w_l, unordered {j <= l}
    for j in 0..n {
        if reps[i] - 2.0 * reps[j] <= 0.0 {
            break;
        }
        if m[j] == 0.0 {
            continue;
        }
        let base_ij = 3.0 * base_i * m[j] * t.bar_q[j];
        for l in j..n {
            let target = reps[i] - reps[j] - reps[l];
            if target <= 0.0 {
                break;
            }
            if m[l] == 0.0 {
                continue;
            }
            let sym = if j == l { 1.0 } else { 2.0 };
            let rho = sym * base_ij * m[l] * t.bar_q[l] * q.eval(target);
            sink.event(rho, &[i], &[j, l], target, t.grid.locate(target));
        }
    }
}

fn enumerate_for<S: Sink>(op: Operator, t: &CollisionTables, m: &[f64], i: usize, sink: &mut S) {
    match op {
        Operator::C12 => c12_for(t, m, i, sink),
        Operator::C22 => c22_for(t, m, i, sink),
        Operator::C31 => c31_for(t, m, i, sink),
    }
}

fn operator_ledger(op: Operator, t: &CollisionTables, m: &[f64]) -> OperatorLedger {
    let n = m.len();
    if !t.toggles.enabled(op) {
        return OperatorLedger::zeros(n);
    }
    let reps = t.grid.reps();
    let parts: Vec<Option<OperatorLedger>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if m[i] == 0.0 {
                return None;
            }
            let mut sink = LedgerSink { ledger: OperatorLedger::zeros(n), reps };
            enumerate_for(op, t, m, i, &mut sink);
            Some(sink.ledger)
        })
        .collect();
    let mut total = OperatorLedger::zeros(n);
    for p in parts.iter().flatten() {
        total.merge(p);
    }
    total
}

/// Rates of change of every cell and accumulator.
///
/// Evaluation is parallel over the first interaction index; per-index
/// ledgers are merged in index order, so the result does not depend on
/// the number of worker threads.
pub fn apply(state: &SpectralState, tables: &CollisionTables) -> Result<RateResult> {
    tables.check_state(state)?;
    let m = &state.masses;
    let c12 = operator_ledger(Operator::C12, tables, m);
    let c22 = operator_ledger(Operator::C22, tables, m);
    let c31 = operator_ledger(Operator::C31, tables, m);
    let mut total = OperatorLedger::zeros(m.len());
    total.merge(&c12);
    total.merge(&c22);
    total.merge(&c31);
    Ok(RateResult { c12, c22, c31, total })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WeakRates {
    pub c12: f64,
    pub c22: f64,
    pub c31: f64,
    pub gross_mass_flux: f64,
    pub gross_energy_flux: f64,
}

impl WeakRates {
    pub fn total(&self) -> f64 {
        self.c12 + self.c22 + self.c31
    }

    pub fn operator(&self, op: Operator) -> f64 {
        match op {
            Operator::C12 => self.c12,
            Operator::C22 => self.c22,
            Operator::C31 => self.c31,
        }
    }
}

/// `d/dt <F, Xi>` with `Xi` applied at the exact interaction frequencies.
/// `Xi` must be defined on every reachable target, including those above
/// `omega_max`.
pub fn weak_eval<F>(state: &SpectralState, tables: &CollisionTables, xi: F) -> Result<WeakRates>
where
    F: Fn(f64) -> f64 + Sync,
{
    tables.check_state(state)?;
    let m = &state.masses;
    let n = m.len();
    let reps = tables.grid.reps();
    let xi_reps: Vec<f64> = reps.iter().map(|&w| xi(w)).collect();
    let mut out = WeakRates::default();
    for op in Operator::ALL {
        if !tables.toggles.enabled(op) {
            continue;
        }
        let parts: Vec<(f64, f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                if m[i] == 0.0 {
                    return (0.0, 0.0, 0.0);
                }
                let mut sink = WeakSink {
                    reps,
                    xi_reps: &xi_reps,
                    xi: &xi,
                    acc: NeumaierSum::new(),
                    gross_mass: 0.0,
                    gross_energy: 0.0,
                };
                enumerate_for(op, tables, m, i, &mut sink);
                (sink.acc.value(), sink.gross_mass, sink.gross_energy)
            })
            .collect();
        let mut acc = NeumaierSum::new();
        for (v, gm, ge) in parts {
            acc.add(v);
            out.gross_mass_flux += gm;
            out.gross_energy_flux += ge;
        }
        match op {
            Operator::C12 => out.c12 = acc.value(),
            Operator::C22 => out.c22 = acc.value(),
            Operator::C31 => out.c31 = acc.value(),
        }
    }
    Ok(out)
}
