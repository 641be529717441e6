//! Post-hoc cascade diagnostics on stored snapshots.
//!
//! At level `l` the tail `[Omega, inf)`, `Omega = 2^l`, is cut into
//! `2^U` subdomains of width `Delta = Omega / 2^U`. `D_i` are the disjoint
//! pieces, numbered from the top (`D_0` is the unbounded one), and `S_i` is
//! the union of `D_i` with its existing neighbours. Level-set measures count
//! the time during which the tail (or a subdomain `S_i`) carries at least a
//! threshold amount of mass or energy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kernelmodel::{validate_constraints, KernelModel};
use crate::spectrum::{FrequencyGrid, SpectralState};
use crate::sum::NeumaierSum;
use crate::{Error, Result};

/// Half-open interval `[lo, hi)`; `hi` may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, w: f64) -> bool {
        w >= self.lo && w < self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdmPartition {
    pub ell: u32,
    pub omega: f64,
    pub upsilon: u32,
    pub delta: f64,
    /// `non_overlapping[i]` is `D_i`.
    pub non_overlapping: Vec<Interval>,
    /// `overlapping[i]` is `S_i = D_{i-1} u D_i u D_{i+1}`.
    pub overlapping: Vec<Interval>,
}

impl DdmPartition {
    pub fn subdomains(&self) -> usize {
        self.non_overlapping.len()
    }
}

/// `floor(min{ l/4 (4 varpi2 + alpha + gamma), l eps / 16 })`.
pub fn upsilon_formula(ell: u32, model: &KernelModel, epsilon: f64) -> Result<u32> {
    let e = &model.exponents;
    let l = f64::from(ell);
    let a = l / 4.0 * (4.0 * e.varpi2 + e.alpha + e.gamma);
    let b = l * epsilon / 16.0;
    if !(a >= 0.0 && b >= 0.0) {
        return Err(Error::Config(format!(
            "subdomain count exponent is negative at level {ell}: \
             l/4 (4 varpi2 + alpha + gamma) = {a}, l eps / 16 = {b}; \
             set an explicit upsilon override"
        )));
    }
    Ok(a.min(b).floor() as u32)
}

pub fn build_partition(
    ell: u32,
    model: &KernelModel,
    epsilon: f64,
    upsilon_override: Option<u32>,
) -> Result<DdmPartition> {
    if !(1..=60).contains(&ell) {
        return Err(Error::Config(format!("level must lie in 1..=60, got {ell}")));
    }
    let upsilon = match upsilon_override {
        Some(u) if u <= ell => u,
        Some(u) => {
            return Err(Error::Config(format!("upsilon {u} exceeds level {ell}")));
        }
        None => upsilon_formula(ell, model, epsilon)?,
    };
    let omega = 2f64.powi(ell as i32);
    let count = 1usize << upsilon;
    let delta = omega / count as f64;
    let non_overlapping: Vec<Interval> = (0..count)
        .map(|i| {
            let p = (count - 1 - i) as f64;
            let lo = omega + p * delta;
            let hi = if i == 0 { f64::INFINITY } else { omega + (p + 1.0) * delta };
            Interval { lo, hi }
        })
        .collect();
    let overlapping = (0..count)
        .map(|i| {
            let top = i.saturating_sub(1);
            let bottom = (i + 1).min(count - 1);
            Interval { lo: non_overlapping[bottom].lo, hi: non_overlapping[top].hi }
        })
        .collect();
    Ok(DdmPartition { ell, omega, upsilon, delta, non_overlapping, overlapping })
}

fn integral(state: &SpectralState, grid: &FrequencyGrid, iv: Interval, use_energy: bool) -> f64 {
    let mut acc = NeumaierSum::new();
    for (m, &w) in state.masses.iter().zip(grid.reps()) {
        if iv.contains(w) {
            acc.add(if use_energy { m * w } else { *m });
        }
    }
    acc.value()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSetMeasures {
    pub horizon: f64,
    pub m: f64,
    pub m_i: Vec<f64>,
    pub n: f64,
    pub p: f64,
    pub q: f64,
    /// Largest snapshot spacing; bounds the quadrature error of each measure.
    pub max_spacing: f64,
}

fn trapezoid(times: &[f64], ind: &[bool]) -> f64 {
    let mut acc = NeumaierSum::new();
    for k in 1..times.len() {
        let v = f64::from(u8::from(ind[k - 1])) + f64::from(u8::from(ind[k]));
        acc.add(0.5 * v * (times[k] - times[k - 1]));
    }
    acc.value()
}

fn check_snapshots(snapshots: &[SpectralState], grid: &FrequencyGrid) -> Result<()> {
    if snapshots.is_empty() {
        return Err(Error::Data("no snapshots to analyze".into()));
    }
    for s in snapshots {
        if s.len() != grid.len() {
            return Err(Error::Data(format!(
                "snapshot at t = {} has {} cells, grid has {}",
                s.time,
                s.len(),
                grid.len()
            )));
        }
    }
    if snapshots.windows(2).any(|w| w[1].time <= w[0].time) {
        return Err(Error::Data("snapshot times are not strictly increasing".into()));
    }
    Ok(())
}

/// Time measures of the level sets, by the trapezoid rule on snapshot
/// indicators. The overflow ledger is not counted as tail content.
pub fn level_sets(
    snapshots: &[SpectralState],
    grid: &FrequencyGrid,
    partition: &DdmPartition,
    c_o: f64,
    sigma: f64,
    use_energy: bool,
) -> Result<LevelSetMeasures> {
    check_snapshots(snapshots, grid)?;
    if !(c_o > 0.0 && sigma > 0.0) {
        return Err(Error::Config(format!("need c_o > 0 and sigma > 0, got {c_o}, {sigma}")));
    }
    let times: Vec<f64> = snapshots.iter().map(|s| s.time).collect();
    let tail = Interval { lo: partition.omega, hi: f64::INFINITY };
    let thr = c_o * partition.omega.powf(-sigma);
    let thr_i = c_o * (2.0 * partition.omega).powf(-sigma);
    let count = partition.subdomains();
    let in_m: Vec<bool> = snapshots.iter().map(|s| integral(s, grid, tail, use_energy) >= thr).collect();
    let in_mi: Vec<Vec<bool>> = snapshots
        .iter()
        .map(|s| {
            partition
                .overlapping
                .iter()
                .map(|&iv| integral(s, grid, iv, use_energy) >= thr_i)
                .collect()
        })
        .collect();
    let half = count / 2;
    let p_range = half.saturating_sub(1)..count;
    let q_end = half.saturating_sub(1); // exclusive: i <= half - 2
    let column = |f: &dyn Fn(&[bool]) -> bool| -> Vec<bool> { in_mi.iter().map(|row| f(row)).collect() };
    let any_i = column(&|row| row.iter().any(|b| *b));
    let in_n: Vec<bool> = in_m.iter().zip(&any_i).map(|(m, a)| *m && !*a).collect();
    let in_p = column(&|row| row[p_range.clone()].iter().any(|b| *b));
    let in_q = column(&|row| row[..q_end].iter().any(|b| *b));
    let m_i = (0..count)
        .map(|i| trapezoid(&times, &column(&|row| row[i])))
        .collect();
    Ok(LevelSetMeasures {
        horizon: times[times.len() - 1] - times[0],
        m: trapezoid(&times, &in_m),
        m_i,
        n: trapezoid(&times, &in_n),
        p: trapezoid(&times, &in_p),
        q: trapezoid(&times, &in_q),
        max_spacing: times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Concentration {
    Concentrated,
    Spread,
}

/// Spread iff every `S_i` carries strictly less than `1 - lambda` of the
/// tail energy. A state with no tail energy is concentrated.
pub fn classify_concentration(
    state: &SpectralState,
    grid: &FrequencyGrid,
    partition: &DdmPartition,
    lambda: f64,
) -> Concentration {
    let tail = integral(state, grid, Interval { lo: partition.omega, hi: f64::INFINITY }, true);
    let bound = (1.0 - lambda) * tail;
    let spread = partition
        .overlapping
        .iter()
        .all(|&iv| integral(state, grid, iv, true) < bound);
    if spread {
        Concentration::Spread
    } else {
        Concentration::Concentrated
    }
}

/// Default concentration parameter `1 - 2^(-sigma)`.
pub fn default_lambda(sigma: f64) -> f64 {
    1.0 - 2f64.powf(-sigma)
}

/// The three lower-bound integrands on the tail `[Omega, inf)`, with the
/// unknown universal constant set to 1.
pub fn flux_bound_terms(
    state: &SpectralState,
    grid: &FrequencyGrid,
    partition: &DdmPartition,
    model: &KernelModel,
    lambda: f64,
) -> [f64; 3] {
    let e = &model.exponents;
    let c = &model.coupling;
    let th = model.dispersion.theta;
    let omega = partition.omega;
    let (mw, w): (Vec<f64>, Vec<f64>) = state
        .masses
        .iter()
        .zip(grid.reps())
        .filter(|(m, &w)| w >= omega && **m > 0.0)
        .map(|(m, &w)| (m * w, w))
        .unzip();
    let n = w.len();
    if n == 0 {
        return [0.0; 3];
    }
    let a12 = 3.0 * th + e.varpi1 + e.alpha - 2.0;
    let a31 = 3.0 * th + e.varpi3 + e.alpha - 2.0;
    let p1: Vec<f64> = w.iter().map(|x| x.powf(e.varpi1 + 1.0)).collect();
    let p3: Vec<f64> = w.iter().map(|x| x.powf(e.varpi3)).collect();

    let t12: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = NeumaierSum::new();
            for j in 0..n {
                acc.add(mw[i] * mw[j] * (w[i] + w[j]).powf(a12) * p1[i] * p1[j]);
            }
            acc.value()
        })
        .collect();
    let t31: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = NeumaierSum::new();
            for j in i..n {
                for l in j..n {
                    let mult = match (i == j, j == l) {
                        (true, true) => 1.0,
                        (false, false) => 6.0,
                        _ => 3.0,
                    };
                    let s = w[i] + w[j] + w[l];
                    let pair = w[i] * w[j] + w[j] * w[l] + w[l] * w[i];
                    acc.add(mult * mw[i] * mw[j] * mw[l] * s.powf(a31) * p3[i] * p3[j] * p3[l] * pair);
                }
            }
            acc.value()
        })
        .collect();
    let tail_energy = crate::sum::compensated_sum(mw.iter().copied());
    let c22 = lambda.powi(4)
        * partition.delta.powi(2)
        * omega.powf(4.0 * e.varpi2 - 2.0 + e.alpha + e.gamma)
        * tail_energy.powi(3);
    [
        c.c12 * crate::sum::compensated_sum(t12),
        c.c22 * c22,
        c.c31 * crate::sum::compensated_sum(t31),
    ]
}

/// First time at which `energy` drops below `(1 - tol) e0`, linearly
/// interpolated between samples.
pub fn tstar_from_series(times: &[f64], energy: &[f64], e0: f64, tol: f64) -> Option<f64> {
    let target = (1.0 - tol) * e0;
    for k in 0..times.len() {
        if energy[k] < target {
            if k == 0 {
                return Some(times[0]);
            }
            let (t0, t1, a, b) = (times[k - 1], times[k], energy[k - 1], energy[k]);
            return Some(t0 + (t1 - t0) * (a - target) / (a - b));
        }
    }
    None
}

/// Estimated end of energy conservation: grid energy first drops below
/// `(1 - tol)` times the initial total energy.
pub fn estimate_tstar(snapshots: &[SpectralState], grid: &FrequencyGrid, tol: f64) -> Result<Option<f64>> {
    check_snapshots(snapshots, grid)?;
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::Config(format!("tol must lie in (0, 1), got {tol}")));
    }
    let energy: Vec<f64> = snapshots
        .iter()
        .map(|s| crate::spectrum::moments(s, grid).energy)
        .collect();
    let times: Vec<f64> = snapshots.iter().map(|s| s.time).collect();
    let e0 = energy[0] + snapshots[0].overflow_energy;
    Ok(tstar_from_series(&times, &energy, e0, tol))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsSpec {
    pub probe_r: Vec<f64>,
    pub levels: Vec<u32>,
    /// Concentration parameter; `1 - 2^(-sigma)` when absent.
    pub lambda: Option<f64>,
    pub sigma: f64,
    pub c_o: f64,
    pub tol: f64,
    pub upsilon: Option<u32>,
    pub epsilon: f64,
    /// Weight the level-set integrand by `w`.
    pub use_energy: bool,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        Self {
            probe_r: Vec::new(),
            levels: Vec::new(),
            lambda: None,
            sigma: 1e-3,
            c_o: 1e-3,
            tol: 0.01,
            upsilon: None,
            epsilon: 0.01,
            use_energy: false,
        }
    }
}

impl DiagnosticsSpec {
    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or_else(|| default_lambda(self.sigma))
    }

    pub fn check(&self) -> Result<()> {
        let lambda = self.lambda();
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::Config(format!("lambda must lie in (0, 1), got {lambda}")));
        }
        if !(self.sigma > 0.0 && self.c_o > 0.0 && self.epsilon > 0.0) {
            return Err(Error::Config("sigma, c_o and epsilon must be positive".into()));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::Config(format!("tol must lie in (0, 1), got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub partition: DdmPartition,
    pub measures: LevelSetMeasures,
    /// Concentration class per snapshot.
    pub concentration: Vec<Concentration>,
    /// Flux-bound terms (C12, C22, C31) per snapshot.
    pub flux_terms: Vec<[f64; 3]>,
    /// Trapezoid time integral of the flux-bound terms over spread snapshots.
    pub flux_terms_spread_integral: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeReport {
    pub tstar: Option<f64>,
    pub tol: f64,
    /// `"mass"` or `"energy"`.
    pub level_set_integrand: String,
    pub lambda: f64,
    pub sigma: f64,
    pub c_o: f64,
    pub times: Vec<f64>,
    pub levels: Vec<LevelReport>,
    pub cin_threshold_immediate: f64,
    pub cin_threshold_finite: f64,
    pub sigma_upper_bound: f64,
    pub epsilon_upper_bound: f64,
}

impl CascadeReport {
    /// One row per snapshot: time, then per level the concentration flag
    /// (1 = spread) and the three flux-bound terms.
    pub fn series_csv(&self) -> String {
        use std::fmt::Write;
        let mut out = String::from("t");
        for lv in &self.levels {
            let l = lv.partition.ell;
            let _ = write!(out, ",spread@{l},flux_c12@{l},flux_c22@{l},flux_c31@{l}");
        }
        out.push('\n');
        for (k, t) in self.times.iter().enumerate() {
            let _ = write!(out, "{t:e}");
            for lv in &self.levels {
                let spread = u8::from(lv.concentration[k] == Concentration::Spread);
                let [a, b, c] = lv.flux_terms[k];
                let _ = write!(out, ",{spread},{a:e},{b:e},{c:e}");
            }
            out.push('\n');
        }
        out
    }
}

/// Runs every cascade diagnostic on a stored trajectory.
pub fn analyze(
    snapshots: &[SpectralState],
    grid: &FrequencyGrid,
    model: &KernelModel,
    c_in: f64,
    spec: &DiagnosticsSpec,
) -> Result<CascadeReport> {
    check_snapshots(snapshots, grid)?;
    spec.check()?;
    let lambda = spec.lambda();
    let times: Vec<f64> = snapshots.iter().map(|s| s.time).collect();
    let levels = spec
        .levels
        .iter()
        .map(|&ell| {
            let partition = build_partition(ell, model, spec.epsilon, spec.upsilon)?;
            let measures = level_sets(snapshots, grid, &partition, spec.c_o, spec.sigma, spec.use_energy)?;
            let concentration: Vec<Concentration> = snapshots
                .iter()
                .map(|s| classify_concentration(s, grid, &partition, lambda))
                .collect();
            let flux_terms: Vec<[f64; 3]> = snapshots
                .iter()
                .map(|s| flux_bound_terms(s, grid, &partition, model, lambda))
                .collect();
            let mut integral = [0.0; 3];
            for k in 1..snapshots.len() {
                let dt = times[k] - times[k - 1];
                for (op, acc) in integral.iter_mut().enumerate() {
                    let at = |j: usize| {
                        if concentration[j] == Concentration::Spread {
                            flux_terms[j][op]
                        } else {
                            0.0
                        }
                    };
                    *acc += 0.5 * dt * (at(k - 1) + at(k));
                }
            }
            Ok(LevelReport { partition, measures, concentration, flux_terms, flux_terms_spread_integral: integral })
        })
        .collect::<Result<Vec<_>>>()?;
    let constraints = validate_constraints(model, c_in);
    Ok(CascadeReport {
        tstar: estimate_tstar(snapshots, grid, spec.tol)?,
        tol: spec.tol,
        level_set_integrand: if spec.use_energy { "energy" } else { "mass" }.to_string(),
        lambda,
        sigma: spec.sigma,
        c_o: spec.c_o,
        times,
        levels,
        cin_threshold_immediate: constraints.cin_threshold_immediate,
        cin_threshold_finite: constraints.cin_threshold_finite,
        sigma_upper_bound: constraints.sigma_upper_bound,
        epsilon_upper_bound: constraints.epsilon_upper_bound,
    })
}
