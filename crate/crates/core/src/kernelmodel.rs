//! Dispersion relation, kernel weights and the parameter validator.
//!
//! The dispersion is the power law `w(k) = C_w |k|^(1/theta)`. Every weight
//! function used by the collision operators is then an exact power law of
//! the frequency:
//!
//! | weight         | definition                 | exponent            |
//! |----------------|----------------------------|---------------------|
//! | `Gamma(w)`     | `|k|^2 / w'(|k|)`          | `3 theta - 1`       |
//! | `barP(w)`      | `C_P w^(1 + varpi1)`       | `1 + varpi1`        |
//! | `P(w)`         | `Gamma(w) barP(w)`         | `3 theta + varpi1`  |
//! | `Q(w)`         | `Gamma(w) barQ(w)`         | `3 theta + varpi3`  |
//! | `R(w)`         | `Gamma(w) barR(w) / |k|`   | `2 theta + varpi2`  |
//!
//! The lower and upper amplitude bounds of the kernel assumptions are taken
//! equal, so each `C_*` is a single amplitude.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionLaw {
    pub theta: f64,
    pub c_omega: f64,
}

impl DispersionLaw {
    pub fn new(theta: f64, c_omega: f64) -> Result<Self> {
        let law = Self { theta, c_omega };
        law.check()?;
        Ok(law)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::Config(format!(
                "dispersion exponent theta must lie in (0,1), got {}",
                self.theta
            )));
        }
        if !(self.c_omega > 0.0 && self.c_omega.is_finite()) {
            return Err(Error::Config(format!(
                "dispersion amplitude c_omega must be positive, got {}",
                self.c_omega
            )));
        }
        Ok(())
    }

    pub fn omega_of_k(&self, k_mag: f64) -> Result<f64> {
        if !(k_mag >= 0.0) {
            return Err(Error::Domain(format!("wavenumber must be >= 0, got {k_mag}")));
        }
        Ok(self.c_omega * k_mag.powf(1.0 / self.theta))
    }

    pub fn k_of_omega(&self, omega: f64) -> Result<f64> {
        if !(omega >= 0.0) {
            return Err(Error::Domain(format!("frequency must be >= 0, got {omega}")));
        }
        Ok((omega / self.c_omega).powf(self.theta))
    }

    /// `Gamma(w) = |k|^2 / w'(|k|)`, evaluated from the definition.
    pub fn gamma_weight(&self, omega: f64) -> Result<f64> {
        if !(omega > 0.0) {
            return Err(Error::Domain(format!(
                "Gamma is only evaluated at positive frequency, got {omega}"
            )));
        }
        let k = self.k_of_omega(omega)?;
        let derivative = self.c_omega / self.theta * k.powf(1.0 / self.theta - 1.0);
        Ok(k * k / derivative)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelExponents {
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

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingConstants {
    #[serde(default = "one")]
    pub c12: f64,
    #[serde(default = "one")]
    pub c22: f64,
    #[serde(default = "one")]
    pub c31: f64,
}

impl Default for CouplingConstants {
    fn default() -> Self {
        Self { c12: 1.0, c22: 1.0, c31: 1.0 }
    }
}

/// `c * w^p`, with the value at `w = 0` taken as the limit for `p > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLaw {
    pub coef: f64,
    pub exponent: f64,
}

impl PowerLaw {
    #[inline]
    pub fn eval(&self, omega: f64) -> f64 {
        self.coef * omega.powf(self.exponent)
    }

    /// Evaluate from a precomputed `ln(w)`.
    #[inline]
    pub fn eval_ln(&self, ln_omega: f64) -> f64 {
        self.coef * (self.exponent * ln_omega).exp()
    }
}

/// Closed-form power laws for every per-frequency weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightLaws {
    pub k: PowerLaw,
    pub gamma: PowerLaw,
    pub bar_p: PowerLaw,
    pub bar_q: PowerLaw,
    pub bar_r: PowerLaw,
    pub p: PowerLaw,
    pub q: PowerLaw,
    pub r: PowerLaw,
    /// Exponent of the four-frequency factor `max(...)^gamma`.
    pub ro_exponent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelModel {
    pub dispersion: DispersionLaw,
    pub exponents: KernelExponents,
    #[serde(default)]
    pub coupling: CouplingConstants,
}

impl KernelModel {
    /// Checks the hard domain requirements that every evaluation relies on.
    /// The modelling inequalities are reported by [`validate_constraints`]
    /// instead of being rejected here.
    pub fn new(
        dispersion: DispersionLaw,
        exponents: KernelExponents,
        coupling: CouplingConstants,
    ) -> Result<Self> {
        let model = Self { dispersion, exponents, coupling };
        model.check()?;
        Ok(model)
    }

    /// Worked example: `w = |k|^4` with `varpi1 = varpi3 = -3/8`,
    /// `varpi2 = -1/4`, `kappa2 = gamma = 1/4`, unit amplitudes.
    pub fn reference_set(alpha: f64) -> Self {
        Self {
            dispersion: DispersionLaw { theta: 0.25, c_omega: 1.0 },
            exponents: KernelExponents {
                varpi1: -0.375,
                varpi2: -0.25,
                varpi3: -0.375,
                kappa2: 0.25,
                gamma: 0.25,
                alpha,
                c_p: 1.0,
                c_r: 1.0,
                c_q: 1.0,
                c_rprime: 1.0,
            },
            coupling: CouplingConstants::default(),
        }
    }

    pub fn check(&self) -> Result<()> {
        self.dispersion.check()?;
        let e = &self.exponents;
        for (name, v) in [
            ("varpi1", e.varpi1),
            ("varpi2", e.varpi2),
            ("varpi3", e.varpi3),
            ("kappa2", e.kappa2),
            ("gamma", e.gamma),
            ("alpha", e.alpha),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite, got {v}")));
            }
        }
        for (name, v) in [("c_p", e.c_p), ("c_r", e.c_r), ("c_q", e.c_q), ("c_rprime", e.c_rprime)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("amplitude {name} must be positive, got {v}")));
            }
        }
        let c = &self.coupling;
        for (name, v) in [("c12", c.c12), ("c22", c.c22), ("c31", c.c31)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("coupling {name} must be >= 0, got {v}")));
            }
        }
        if !(c.c12 + c.c22 + c.c31 > 0.0) {
            return Err(Error::Config("at least one coupling constant must be positive".into()));
        }
        Ok(())
    }

    pub fn omega_of_k(&self, k_mag: f64) -> Result<f64> {
        self.dispersion.omega_of_k(k_mag)
    }

    pub fn k_of_omega(&self, omega: f64) -> Result<f64> {
        self.dispersion.k_of_omega(omega)
    }

    pub fn gamma_weight(&self, omega: f64) -> Result<f64> {
        self.dispersion.gamma_weight(omega)
    }

    pub fn bar_p(&self, omega: f64) -> Result<f64> {
        nonneg(omega)?;
        Ok(self.exponents.c_p * omega.powf(1.0 + self.exponents.varpi1))
    }

    pub fn bar_q(&self, omega: f64) -> Result<f64> {
        nonneg(omega)?;
        Ok(self.exponents.c_q * omega.powf(1.0 + self.exponents.varpi3))
    }

    pub fn bar_r(&self, omega: f64) -> Result<f64> {
        nonneg(omega)?;
        Ok(self.exponents.c_r * omega.powf(1.0 + self.exponents.varpi2))
    }

    /// `P(w) = Gamma(w) barP(w)`; zero at `w = 0`.
    pub fn weight_p(&self, omega: f64) -> Result<f64> {
        nonneg(omega)?;
        if omega == 0.0 {
            return Ok(0.0);
        }
        Ok(self.gamma_weight(omega)? * self.bar_p(omega)?)
    }

    /// `Q(w) = Gamma(w) barQ(w)`; zero at `w = 0`.
    pub fn weight_q(&self, omega: f64) -> Result<f64> {
        nonneg(omega)?;
        if omega == 0.0 {
            return Ok(0.0);
        }
        Ok(self.gamma_weight(omega)? * self.bar_q(omega)?)
    }

    /// `R(w) = Gamma(w) barR(w) / |k|(w)`; zero at `w = 0`.
    pub fn weight_r(&self, omega: f64) -> Result<f64> {
        nonneg(omega)?;
        if omega == 0.0 {
            return Ok(0.0);
        }
        Ok(self.gamma_weight(omega)? * self.bar_r(omega)? / self.k_of_omega(omega)?)
    }

    /// `max(w, w1, w2, w3)^gamma`.
    pub fn weight_ro(&self, w: f64, w1: f64, w2: f64, w3: f64) -> f64 {
        let m = w.max(w1).max(w2).max(w3);
        if self.exponents.gamma == 0.0 {
            return 1.0;
        }
        m.powf(self.exponents.gamma)
    }

    /// Closed forms of all weights. `Gamma = theta C^(-3 theta) w^(3 theta - 1)`.
    pub fn weight_laws(&self) -> WeightLaws {
        let th = self.dispersion.theta;
        let cw = self.dispersion.c_omega;
        let e = &self.exponents;
        let gamma_coef = th * cw.powf(-3.0 * th);
        WeightLaws {
            k: PowerLaw { coef: cw.powf(-th), exponent: th },
            gamma: PowerLaw { coef: gamma_coef, exponent: 3.0 * th - 1.0 },
            bar_p: PowerLaw { coef: e.c_p, exponent: 1.0 + e.varpi1 },
            bar_q: PowerLaw { coef: e.c_q, exponent: 1.0 + e.varpi3 },
            bar_r: PowerLaw { coef: e.c_r, exponent: 1.0 + e.varpi2 },
            p: PowerLaw { coef: gamma_coef * e.c_p, exponent: 3.0 * th + e.varpi1 },
            q: PowerLaw { coef: gamma_coef * e.c_q, exponent: 3.0 * th + e.varpi3 },
            r: PowerLaw {
                coef: th * cw.powf(-2.0 * th) * e.c_r,
                exponent: 2.0 * th + e.varpi2,
            },
            ro_exponent: e.gamma,
        }
    }
}

fn nonneg(omega: f64) -> Result<()> {
    if omega >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("frequency must be >= 0, got {omega}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    /// `lhs > 0`
    Positive,
    /// `lhs >= 0`
    NonNegative,
    /// `lhs <= 0`
    NonPositive,
}

impl Relation {
    fn holds(self, lhs: f64) -> bool {
        match self {
            Relation::Positive => lhs > 0.0,
            Relation::NonNegative => lhs >= 0.0,
            Relation::NonPositive => lhs <= 0.0,
        }
    }

    /// Distance to the boundary, positive on the admissible side.
    fn slack(self, lhs: f64) -> f64 {
        match self {
            Relation::Positive | Relation::NonNegative => lhs,
            Relation::NonPositive => -lhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityRecord {
    pub name: String,
    pub lhs: f64,
    pub relation: Relation,
    pub satisfied: bool,
    pub slack: f64,
}

impl InequalityRecord {
    fn new(name: &str, lhs: f64, relation: Relation) -> Self {
        Self {
            name: name.to_string(),
            lhs,
            relation,
            satisfied: relation.holds(lhs),
            slack: relation.slack(lhs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    /// The nine parameter inequalities, in their canonical order.
    pub inequalities: Vec<InequalityRecord>,
    /// Positivity of the exponents of P, Q, R (so that they vanish at 0).
    pub vanishing_at_zero: Vec<InequalityRecord>,
    /// Interval constraints on the individual exponents.
    pub ranges: Vec<InequalityRecord>,
    pub c_in: f64,
    /// The four bracketed quantities of the immediate-cascade condition.
    pub immediate_terms: [f64; 4],
    pub cin_threshold_immediate: f64,
    pub cin_threshold_finite: f64,
    pub immediate_cascade: bool,
    pub finite_cascade: bool,
    /// Supremum of admissible `sigma`.
    pub sigma_upper_bound: f64,
    /// Binding bound on `epsilon + sigma`; equals the supremum of admissible
    /// `epsilon` as `sigma -> 0+`.
    pub epsilon_upper_bound: f64,
    pub kappa2: f64,
    /// Exponent of `R'(w)` obtained by differentiating the power-law `R`.
    pub r_derivative_exponent: f64,
}

impl ConstraintReport {
    pub fn all_passed(&self) -> bool {
        self.inequalities
            .iter()
            .chain(&self.vanishing_at_zero)
            .chain(&self.ranges)
            .all(|r| r.satisfied)
    }

    pub fn failures(&self) -> impl Iterator<Item = &InequalityRecord> {
        self.inequalities
            .iter()
            .chain(&self.vanishing_at_zero)
            .chain(&self.ranges)
            .filter(|r| !r.satisfied)
    }

    pub fn find(&self, name: &str) -> Option<&InequalityRecord> {
        self.inequalities
            .iter()
            .chain(&self.vanishing_at_zero)
            .chain(&self.ranges)
            .find(|r| r.name == name)
    }

    /// Admissible `epsilon` bound for a chosen `sigma`.
    pub fn epsilon_upper_bound_for(&self, sigma: f64) -> f64 {
        self.epsilon_upper_bound - sigma
    }

    /// Human-readable table.
    pub fn render(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let section = |title: &str, rows: &[InequalityRecord], out: &mut String| {
            let _ = writeln!(out, "{title}");
            for r in rows {
                let _ = writeln!(
                    out,
                    "  [{}] {:<18} lhs = {:>12.6e}  slack = {:>12.6e}",
                    if r.satisfied { "pass" } else { "FAIL" },
                    r.name,
                    r.lhs,
                    r.slack
                );
            }
        };
        section("parameter inequalities:", &self.inequalities, &mut out);
        section("kernels vanish at zero:", &self.vanishing_at_zero, &mut out);
        section("exponent ranges:", &self.ranges, &mut out);
        let _ = writeln!(out, "cascade thresholds (c_in = {}):", self.c_in);
        let _ = writeln!(
            out,
            "  immediate: c_in < {:.9}  -> {}",
            self.cin_threshold_immediate,
            if self.immediate_cascade { "yes" } else { "no" }
        );
        let _ = writeln!(
            out,
            "  finite:    c_in < {:.9}  -> {}",
            self.cin_threshold_finite,
            if self.finite_cascade { "yes" } else { "no" }
        );
        let _ = writeln!(out, "  sigma < {:.9}", self.sigma_upper_bound);
        let _ = writeln!(out, "  epsilon + sigma < {:.9}", self.epsilon_upper_bound);
        let _ = writeln!(
            out,
            "  kappa2 = {} (derivative exponent of R: {})",
            self.kappa2, self.r_derivative_exponent
        );
        out
    }
}

pub const INEQUALITY_NAMES: [&str; 9] = [
    "4ϖ₃+3θ+α > 0",
    "3ϖ₁+3θ+α > 0",
    "4ϖ₂+3+α+γ > 0",
    "3ϖ₂+2−2θ > 0",
    "γ+κ₂ ≥ 0",
    "3θ+2ϖ₁ ≤ 0",
    "2θ+2ϖ₂ ≤ 0",
    "3θ+2ϖ₃ ≤ 0",
    "2ϖ₂+θ+γ ≥ 0",
];

/// Evaluates the parameter inequalities and the cascade thresholds for the
/// initial-tail exponent `c_in`. Pure; failures are reported, not raised.
pub fn validate_constraints(model: &KernelModel, c_in: f64) -> ConstraintReport {
    use Relation::*;
    let th = model.dispersion.theta;
    let e = &model.exponents;
    let (w1, w2, w3, k2, g, a) = (e.varpi1, e.varpi2, e.varpi3, e.kappa2, e.gamma, e.alpha);

    let lhs = [
        (4.0 * w3 + 3.0 * th + a, Positive),
        (3.0 * w1 + 3.0 * th + a, Positive),
        (4.0 * w2 + 3.0 + a + g, Positive),
        (3.0 * w2 + 2.0 - 2.0 * th, Positive),
        (g + k2, NonNegative),
        (3.0 * th + 2.0 * w1, NonPositive),
        (2.0 * th + 2.0 * w2, NonPositive),
        (3.0 * th + 2.0 * w3, NonPositive),
        (2.0 * w2 + th + g, NonNegative),
    ];
    let inequalities = INEQUALITY_NAMES
        .iter()
        .zip(lhs)
        .map(|(name, (v, rel))| InequalityRecord::new(name, v, rel))
        .collect();

    let vanishing_at_zero = vec![
        InequalityRecord::new("3θ+ϖ₁ > 0", 3.0 * th + w1, Positive),
        InequalityRecord::new("3θ+ϖ₃ > 0", 3.0 * th + w3, Positive),
        InequalityRecord::new("2θ+ϖ₂ > 0", 2.0 * th + w2, Positive),
    ];

    let mut ranges = Vec::new();
    for (name, v) in [("ϖ₁", w1), ("ϖ₂", w2), ("ϖ₃", w3)] {
        ranges.push(InequalityRecord::new(&format!("{name}+1 ≥ 0"), v + 1.0, NonNegative));
        ranges.push(InequalityRecord::new(&format!("{name} ≤ 0"), v, NonPositive));
    }
    ranges.push(InequalityRecord::new("κ₂+1 ≥ 0", k2 + 1.0, NonNegative));
    ranges.push(InequalityRecord::new("γ ≥ 0", g, NonNegative));
    ranges.push(InequalityRecord::new("1−γ ≥ 0", 1.0 - g, NonNegative));
    ranges.push(InequalityRecord::new("α > 0", a, Positive));
    ranges.push(InequalityRecord::new("1−α > 0", 1.0 - a, Positive));

    let finite = 3.0 * w2 + 2.0 - 2.0 * th + k2 + g;
    let immediate_terms = [
        (4.0 * w3 + 3.0 * th + a) / 3.0,
        (3.0 * w1 + 3.0 * th + a) / 2.0,
        (4.0 * w2 + a + g) / 6.0,
        finite - c_in,
    ];
    let min_term = immediate_terms.iter().copied().fold(f64::INFINITY, f64::min);
    let cin_threshold_immediate = min_term / 5.0;

    let eps_terms = [3.0 * th + 3.0 * w1 + 1.0, finite - c_in, 3.0 * th + 4.0 * w3 + 1.0];
    let epsilon_upper_bound = eps_terms.iter().copied().fold(f64::INFINITY, f64::min) / 10.0;

    ConstraintReport {
        inequalities,
        vanishing_at_zero,
        ranges,
        c_in,
        immediate_terms,
        cin_threshold_immediate,
        cin_threshold_finite: finite,
        immediate_cascade: c_in > 0.0 && c_in < cin_threshold_immediate,
        finite_cascade: c_in > 0.0 && c_in < finite,
        sigma_upper_bound: cin_threshold_immediate,
        epsilon_upper_bound,
        kappa2: k2,
        r_derivative_exponent: 2.0 * th + w2 - 1.0,
    }
}
