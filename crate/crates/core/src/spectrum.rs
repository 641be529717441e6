//! Frequency grid, cell-mass spectra, moments and initial data.

use serde::{Deserialize, Serialize};

use crate::sum::NeumaierSum;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Uniform,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepChoice {
    Midpoint,
    GeometricMean,
}

impl Spacing {
    pub fn default_rep(self) -> RepChoice {
        match self {
            Spacing::Uniform => RepChoice::Midpoint,
            Spacing::Geometric => RepChoice::GeometricMean,
        }
    }
}

/// Where the mass of an interaction output at some frequency ends up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Deposit {
    /// `frac_lo` to cell `lo`, the rest to cell `lo + 1`.
    Cells { lo: usize, frac_lo: f64 },
    /// Between the zero-frequency condensate and cell 0; `frac_cell0` to cell 0.
    Condensate { frac_cell0: f64 },
    /// Above the last representative frequency.
    Overflow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    edges: Vec<f64>,
    reps: Vec<f64>,
    spacing: Spacing,
}

impl FrequencyGrid {
    pub fn make(spacing: Spacing, omega_min: f64, omega_max: f64, cells: usize) -> Result<Self> {
        Self::make_with_reps(spacing, omega_min, omega_max, cells, spacing.default_rep())
    }

    pub fn make_with_reps(
        spacing: Spacing,
        omega_min: f64,
        omega_max: f64,
        cells: usize,
        rep: RepChoice,
    ) -> Result<Self> {
        if cells < 2 {
            return Err(Error::Config(format!("grid needs at least 2 cells, got {cells}")));
        }
        if !(omega_min >= 0.0 && omega_min < omega_max && omega_max.is_finite()) {
            return Err(Error::Config(format!(
                "grid bounds must satisfy 0 <= omega_min < omega_max, got [{omega_min}, {omega_max}]"
            )));
        }
        let edges: Vec<f64> = match spacing {
            Spacing::Uniform => {
                let h = (omega_max - omega_min) / cells as f64;
                (0..=cells)
                    .map(|i| if i == cells { omega_max } else { omega_min + h * i as f64 })
                    .collect()
            }
            Spacing::Geometric => {
                if omega_min <= 0.0 {
                    return Err(Error::Config("geometric grid requires omega_min > 0".into()));
                }
                let ratio = (omega_max / omega_min).ln() / cells as f64;
                (0..=cells)
                    .map(|i| match i {
                        0 => omega_min,
                        i if i == cells => omega_max,
                        i => omega_min * (ratio * i as f64).exp(),
                    })
                    .collect()
            }
        };
        Self::from_edges(edges, spacing, rep)
    }

    pub fn from_edges(edges: Vec<f64>, spacing: Spacing, rep: RepChoice) -> Result<Self> {
        if edges.len() < 3 {
            return Err(Error::Config("grid needs at least 2 cells".into()));
        }
        if rep == RepChoice::GeometricMean && !(edges[0] > 0.0) {
            return Err(Error::Config("geometric-mean representatives need omega_min > 0".into()));
        }
        let reps = edges
            .windows(2)
            .map(|w| match rep {
                RepChoice::Midpoint => 0.5 * (w[0] + w[1]),
                RepChoice::GeometricMean => (w[0] * w[1]).sqrt(),
            })
            .collect();
        Self::from_parts(edges, reps, spacing)
    }

    /// Grid with explicit representatives (used when loading snapshots).
    pub fn from_parts(edges: Vec<f64>, reps: Vec<f64>, spacing: Spacing) -> Result<Self> {
        if edges.len() < 3 || reps.len() + 1 != edges.len() {
            return Err(Error::Config("grid needs N >= 2 cells and N + 1 edges".into()));
        }
        if !(edges[0] >= 0.0) || edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::Config("grid edges must be finite and non-negative".into()));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("grid edges must be strictly increasing".into()));
        }
        for (i, &r) in reps.iter().enumerate() {
            if !(r >= edges[i] && r < edges[i + 1]) || (r == 0.0) {
                return Err(Error::Config(format!(
                    "representative {r} of cell {i} must lie in [{}, {}) and be positive",
                    edges[i],
                    edges[i + 1]
                )));
            }
        }
        Ok(Self { edges, reps, spacing })
    }

    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn reps(&self) -> &[f64] {
        &self.reps
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn omega_min(&self) -> f64 {
        self.edges[0]
    }

    pub fn omega_max(&self) -> f64 {
        *self.edges.last().unwrap()
    }

    pub fn last_rep(&self) -> f64 {
        *self.reps.last().unwrap()
    }

    /// First-moment-preserving two-point split of a point mass at `target`.
    pub fn locate(&self, target: f64) -> Deposit {
        let reps = &self.reps;
        let n = reps.len();
        if target <= 0.0 {
            return Deposit::Condensate { frac_cell0: 0.0 };
        }
        if target < reps[0] {
            return Deposit::Condensate { frac_cell0: target / reps[0] };
        }
        if target > reps[n - 1] {
            return Deposit::Overflow;
        }
        let lo = reps.partition_point(|&r| r <= target) - 1;
        if lo == n - 1 || reps[lo] == target {
            return Deposit::Cells { lo, frac_lo: 1.0 };
        }
        let hi = reps[lo + 1];
        Deposit::Cells { lo, frac_lo: (hi - target) / (hi - reps[lo]) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState {
    pub masses: Vec<f64>,
    pub condensate_mass: f64,
    pub overflow_mass: f64,
    pub overflow_energy: f64,
    pub time: f64,
}

impl SpectralState {
    pub fn zeros(cells: usize) -> Self {
        Self {
            masses: vec![0.0; cells],
            condensate_mass: 0.0,
            overflow_mass: 0.0,
            overflow_energy: 0.0,
            time: 0.0,
        }
    }

    pub fn from_masses(masses: Vec<f64>) -> Result<Self> {
        let s = Self { masses, ..Self::zeros(0) };
        s.check()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    /// All masses and accumulators finite and non-negative.
    pub fn check(&self) -> Result<()> {
        if let Some((i, m)) = self.masses.iter().enumerate().find(|(_, m)| !(**m >= 0.0 && m.is_finite())) {
            return Err(Error::State(format!("cell {i} has invalid mass {m}")));
        }
        for (name, v) in [
            ("condensate_mass", self.condensate_mass),
            ("overflow_mass", self.overflow_mass),
            ("overflow_energy", self.overflow_energy),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::State(format!("{name} is invalid: {v}")));
            }
        }
        Ok(())
    }

    pub fn check_grid(&self, grid: &FrequencyGrid) -> Result<()> {
        if self.masses.len() != grid.len() {
            return Err(Error::State(format!(
                "state has {} cells but grid has {}",
                self.masses.len(),
                grid.len()
            )));
        }
        Ok(())
    }

    /// Cellwise sum; time is taken from `self`.
    pub fn combined(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::State("cannot add states of different length".into()));
        }
        Ok(Self {
            masses: self.masses.iter().zip(&other.masses).map(|(a, b)| a + b).collect(),
            condensate_mass: self.condensate_mass + other.condensate_mass,
            overflow_mass: self.overflow_mass + other.overflow_mass,
            overflow_energy: self.overflow_energy + other.overflow_energy,
            time: self.time,
        })
    }

    pub fn negative_cells(&self) -> usize {
        self.masses.iter().filter(|m| !(**m >= 0.0)).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    /// Grid mass plus both accumulators.
    pub mass: f64,
    pub grid_mass: f64,
    pub condensate_mass: f64,
    pub overflow_mass: f64,
    /// `sum m_i w_i` over the grid; overflow energy is reported separately.
    pub energy: f64,
    pub overflow_energy: f64,
    /// `(R, tail_energy(R))` for each requested `R`.
    pub tails: Vec<(f64, f64)>,
}

impl Moments {
    pub fn total_energy(&self) -> f64 {
        self.energy + self.overflow_energy
    }
}

fn grid_sum(state: &SpectralState, grid: &FrequencyGrid, mut xi: impl FnMut(f64) -> f64) -> NeumaierSum {
    let mut acc = NeumaierSum::new();
    for (m, &w) in state.masses.iter().zip(grid.reps()) {
        acc.add(m * xi(w));
    }
    acc
}

pub fn moments(state: &SpectralState, grid: &FrequencyGrid) -> Moments {
    moments_with_tails(state, grid, &[])
}

pub fn moments_with_tails(state: &SpectralState, grid: &FrequencyGrid, probes: &[f64]) -> Moments {
    let grid_mass = grid_sum(state, grid, |_| 1.0).value();
    let energy = grid_sum(state, grid, |w| w).value();
    let mut mass = NeumaierSum::new();
    mass.add(grid_mass);
    mass.add(state.condensate_mass);
    mass.add(state.overflow_mass);
    Moments {
        mass: mass.value(),
        grid_mass,
        condensate_mass: state.condensate_mass,
        overflow_mass: state.overflow_mass,
        energy,
        overflow_energy: state.overflow_energy,
        tails: probes.iter().map(|&r| (r, tail_energy(state, grid, r))).collect(),
    }
}

/// `sum_{w_i >= R} m_i w_i`.
pub fn tail_energy(state: &SpectralState, grid: &FrequencyGrid, r: f64) -> f64 {
    grid_sum(state, grid, |w| if w >= r { w } else { 0.0 }).value()
}

/// `sum_{w_i >= R} m_i`.
pub fn tail_mass(state: &SpectralState, grid: &FrequencyGrid, r: f64) -> f64 {
    grid_sum(state, grid, |w| if w >= r { 1.0 } else { 0.0 }).value()
}

/// `sum_{w_i < R} m_i w_i`.
pub fn head_energy(state: &SpectralState, grid: &FrequencyGrid, r: f64) -> f64 {
    grid_sum(state, grid, |w| if w < r { w } else { 0.0 }).value()
}

/// `<F, Xi> = sum m_i Xi(w_i) + condensate Xi(0)`.
pub fn weighted_functional(state: &SpectralState, grid: &FrequencyGrid, xi: impl Fn(f64) -> f64) -> f64 {
    let mut acc = grid_sum(state, grid, &xi);
    if state.condensate_mass != 0.0 {
        acc.add(state.condensate_mass * xi(0.0));
    }
    acc.value()
}

/// `<F, (w - R)_+>` on the whole line, counting the overflow ledger at its
/// exact deposit frequencies. Overflow deposits all lie above the last
/// representative, so the result is exact for `R <= last_rep`.
pub fn convex_tail_functional(state: &SpectralState, grid: &FrequencyGrid, r: f64) -> f64 {
    let mut acc = grid_sum(state, grid, |w| (w - r).max(0.0));
    acc.add(state.overflow_energy);
    acc.add(-r * state.overflow_mass);
    acc.value()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailClosure {
    /// Place the energy of the density above `omega_max` in the last cell.
    #[default]
    Lump,
    /// Discard the density above `omega_max`.
    Truncate,
}

/// Cell masses of the density `c_in * C_in * w^(-c_in - 2)` on `[r0, inf)`,
/// whose energy tail is `int_R^inf w F dw = C_in R^(-c_in)` for `R >= r0`.
///
/// With [`TailClosure::Lump`] the energy of the density above `omega_max`,
/// `C_in omega_max^(-c_in)`, is deposited in the last cell, so the discrete
/// tail energy tracks `C_in R^(-c_in)` up to binning error for all `R` below
/// the last cell. With `Truncate` the bound only holds while
/// `R^(-c_in) - omega_max^(-c_in)` is comparable to `R^(-c_in)`.
pub fn init_power_law_tail(
    grid: &FrequencyGrid,
    amplitude: f64,
    c_in: f64,
    r0: f64,
    closure: TailClosure,
) -> Result<SpectralState> {
    if !(amplitude > 0.0 && amplitude.is_finite()) {
        return Err(Error::Config(format!("tail amplitude C_in must be positive, got {amplitude}")));
    }
    if !(c_in > 0.0 && c_in.is_finite()) {
        return Err(Error::Config(format!("tail exponent c_in must be positive, got {c_in}")));
    }
    if !(r0 >= grid.omega_min() && r0 < grid.omega_max() && r0 > 0.0) {
        return Err(Error::Config(format!(
            "tail start r0 = {r0} must lie in [omega_min, omega_max) and be positive"
        )));
    }
    let p = -c_in - 1.0;
    let scale = c_in * amplitude / (c_in + 1.0);
    let masses = grid
        .edges()
        .windows(2)
        .map(|w| {
            let lo = w[0].max(r0);
            if w[1] <= lo {
                0.0
            } else {
                scale * (lo.powf(p) - w[1].powf(p))
            }
        })
        .collect::<Vec<_>>();
    let mut state = SpectralState::from_masses(masses)?;
    if closure == TailClosure::Lump {
        let beyond = amplitude * grid.omega_max().powf(-c_in);
        *state.masses.last_mut().unwrap() += beyond / grid.last_rep();
    }
    Ok(state)
}

pub const SNAPSHOT_SCHEMA: &str = "wavecascade.snapshot/1";
pub const SNAPSHOT_HEADER: &str = "i,omega_lo,omega_hi,omega_rep,mass";

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotRow {
    i: usize,
    omega_lo: f64,
    omega_hi: f64,
    omega_rep: f64,
    mass: f64,
}

fn csv_error(e: csv::Error) -> Error {
    Error::Data(format!("snapshot table: {e}"))
}

/// Snapshot CSV: schema and accumulator comment lines, then one row per cell.
pub fn to_csv(state: &SpectralState, grid: &FrequencyGrid) -> Result<String> {
    use std::fmt::Write;
    state.check_grid(grid)?;
    let mut out = String::new();
    let _ = writeln!(out, "# schema={SNAPSHOT_SCHEMA}");
    let _ = writeln!(out, "# spacing={}", match grid.spacing() {
        Spacing::Uniform => "uniform",
        Spacing::Geometric => "geometric",
    });
    let _ = writeln!(out, "# time={:e}", state.time);
    let _ = writeln!(out, "# condensate_mass={:e}", state.condensate_mass);
    let _ = writeln!(out, "# overflow_mass={:e}", state.overflow_mass);
    let _ = writeln!(out, "# overflow_energy={:e}", state.overflow_energy);
    let mut w = csv::Writer::from_writer(Vec::new());
    let e = grid.edges();
    for (i, (&mass, &omega_rep)) in state.masses.iter().zip(grid.reps()).enumerate() {
        w.serialize(SnapshotRow { i, omega_lo: e[i], omega_hi: e[i + 1], omega_rep, mass })
            .map_err(csv_error)?;
    }
    let body = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    out.push_str(std::str::from_utf8(&body).expect("csv output is utf-8"));
    Ok(out)
}

pub fn from_csv(text: &str) -> Result<(SpectralState, FrequencyGrid)> {
    let bad = |msg: String| Error::Data(msg);
    let mut meta = std::collections::BTreeMap::new();
    for line in text.lines() {
        if let Some(rest) = line.trim().strip_prefix('#') {
            if let Some((k, v)) = rest.trim().split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
    }
    if meta.get("schema").map(String::as_str) != Some(SNAPSHOT_SCHEMA) {
        return Err(bad("missing or unsupported snapshot schema".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_error)?.iter().collect::<Vec<_>>().join(",");
    if header != SNAPSHOT_HEADER {
        return Err(bad(format!("unexpected snapshot header {header:?}")));
    }
    let mut edges = Vec::new();
    let mut reps = Vec::new();
    let mut masses = Vec::new();
    for row in reader.deserialize::<SnapshotRow>() {
        let row = row.map_err(csv_error)?;
        if row.i != masses.len() {
            return Err(bad(format!("cell index {} out of order", row.i)));
        }
        match edges.last() {
            Some(&prev_hi) if prev_hi != row.omega_lo => {
                return Err(bad(format!("cell {}: edges are not contiguous", row.i)));
            }
            Some(_) => {}
            None => edges.push(row.omega_lo),
        }
        edges.push(row.omega_hi);
        reps.push(row.omega_rep);
        masses.push(row.mass);
    }
    let spacing = match meta.get("spacing").map(String::as_str) {
        Some("geometric") => Spacing::Geometric,
        _ => Spacing::Uniform,
    };
    let field = |k: &str| -> Result<f64> {
        let v = meta.get(k).ok_or_else(|| bad(format!("missing {k}")))?;
        v.parse::<f64>().map_err(|_| bad(format!("cannot parse {k} from {v:?}")))
    };
    let grid = FrequencyGrid::from_parts(edges, reps, spacing).map_err(|e| bad(e.to_string()))?;
    let state = SpectralState {
        masses,
        condensate_mass: field("condensate_mass")?,
        overflow_mass: field("overflow_mass")?,
        overflow_energy: field("overflow_energy")?,
        time: field("time")?,
    };
    state.check().map_err(|e| bad(e.to_string()))?;
    Ok((state, grid))
}
