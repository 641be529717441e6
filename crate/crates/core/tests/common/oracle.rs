//! Brute-force reference for the discrete collision rates.
//!
//! Every ordered tuple of atoms is visited and the weak form is evaluated
//! directly from the kernel model's pointwise weights. Cell rates are read
//! off by testing against tent functions centred at the representatives,
//! which reproduces the two-cell first-moment split of off-grid targets.

#![allow(dead_code)]

use wavecascade::collision::{Operator, OperatorToggles};
use wavecascade::kernelmodel::KernelModel;

/// Reference rates: `dm`, condensate, overflow mass, overflow energy, plus
/// per-slot gross rates of all interactions touching the slot, used as the
/// error scale.
#[derive(Debug, Clone)]
pub struct OracleRates {
    pub dm: Vec<f64>,
    pub condensate: f64,
    pub overflow_mass: f64,
    pub overflow_energy: f64,
    pub scale: Vec<f64>,
    pub scale_acc: [f64; 3],
}

/// Test functionals indexed by output slot: cells `0..n`, then condensate,
/// overflow mass, overflow energy.
struct Basis<'a> {
    reps: &'a [f64],
}

impl Basis<'_> {
    fn n(&self) -> usize {
        self.reps.len()
    }

    fn eval(&self, slot: usize, t: f64) -> f64 {
        let r = self.reps;
        let n = r.len();
        let last = r[n - 1];
        match slot {
            s if s < n => {
                if t > last || t <= 0.0 {
                    return 0.0;
                }
                let left = if s == 0 { 0.0 } else { r[s - 1] };
                if t == r[s] {
                    1.0
                } else if t < r[s] {
                    if t <= left {
                        0.0
                    } else {
                        (t - left) / (r[s] - left)
                    }
                } else if s + 1 < n && t < r[s + 1] {
                    (r[s + 1] - t) / (r[s + 1] - r[s])
                } else {
                    0.0
                }
            }
            s if s == n => (1.0 - t / r[0]).max(0.0),
            s if s == n + 1 => f64::from(u8::from(t > last)),
            _ => {
                if t > last {
                    t
                } else {
                    0.0
                }
            }
        }
    }

    /// Magnitude bound of `eval(slot, t)` over a neighbourhood of `t`, so that
    /// targets within roundoff of a representative count at full weight.
    fn reach(&self, slot: usize, t: f64) -> f64 {
        let r = self.reps;
        let n = r.len();
        let last = r[n - 1];
        match slot {
            s if s < n => {
                let left = if s == 0 { 0.0 } else { r[s - 1] };
                let right = if s + 1 < n { r[s + 1] } else { last };
                f64::from(u8::from(t >= left && t <= right))
            }
            s if s == n => f64::from(u8::from(t <= r[0])),
            s if s == n + 1 => f64::from(u8::from(t >= last)),
            _ => {
                if t >= last {
                    t
                } else {
                    0.0
                }
            }
        }
    }
}

fn ro(model: &KernelModel, w: [f64; 4], include: bool) -> f64 {
    if include {
        model.weight_ro(w[0], w[1], w[2], w[3])
    } else {
        1.0
    }
}

/// Calls `f(rate, [out..], [in..])` for every ordered interaction: `rate`
/// multiplies `sum Xi(out) - sum Xi(in)`.
fn interactions(
    model: &KernelModel,
    reps: &[f64],
    m: &[f64],
    op: Operator,
    include_ro: bool,
    f: &mut dyn FnMut(f64, &[f64], &[f64]),
) {
    let n = reps.len();
    let c = model.coupling;
    let bar_p = |w: f64| model.bar_p(w).unwrap();
    let bar_q = |w: f64| model.bar_q(w).unwrap();
    let p = |w: f64| model.weight_p(w).unwrap();
    let q = |w: f64| model.weight_q(w).unwrap();
    // R f = (barR / |k|) F
    let rf = |w: f64| model.bar_r(w).unwrap() / model.k_of_omega(w).unwrap();
    let r = |w: f64| model.weight_r(w).unwrap();
    let k = |w: f64| model.k_of_omega(w).unwrap();
    match op {
        Operator::C12 => {
            for a in 0..n {
                for b in 0..n {
                    let (wa, wb) = (reps[a], reps[b]);
                    // f1 f2 term: atoms at w1 = wa, w2 = wb, output wa + wb
                    let rate = c.c12 * m[a] * m[b] * bar_p(wa) * bar_p(wb) * p(wa + wb);
                    f(rate, &[wa + wb], &[wa, wb]);
                    // -f f1 and -f f2 terms: atoms at w and w1 (resp. w2), w > w1
                    if wa > wb {
                        let rate = c.c12 * m[a] * m[b] * bar_p(wa) * bar_p(wb) * p(wa - wb);
                        for _ in 0..2 {
                            f(rate, &[wb, wa - wb], &[wa]);
                        }
                    }
                }
            }
        }
        Operator::C22 => {
            for a in 0..n {
                for b in 0..n {
                    for d in 0..n {
                        let (w, w1, w2) = (reps[a], reps[b], reps[d]);
                        let w3 = w + w1 - w2;
                        if w3 <= 0.0 {
                            continue;
                        }
                        let kmin = k(w).min(k(w1)).min(k(w2)).min(k(w3));
                        let rate = c.c22
                            * m[a]
                            * m[b]
                            * m[d]
                            * rf(w)
                            * rf(w1)
                            * rf(w2)
                            * r(w3)
                            * kmin
                            * ro(model, [w, w1, w2, w3], include_ro);
                        f(rate, &[w2, w3], &[w, w1]);
                    }
                }
            }
        }
        Operator::C31 => {
            for a in 0..n {
                for b in 0..n {
                    for d in 0..n {
                        let (w1, w2, w3) = (reps[a], reps[b], reps[d]);
                        let mmm = m[a] * m[b] * m[d];
                        let rate = c.c31 * mmm * bar_q(w1) * bar_q(w2) * bar_q(w3) * q(w1 + w2 + w3);
                        f(rate, &[w1 + w2 + w3], &[w1, w2, w3]);
                        // -f f_i f_j terms (three of them): atoms at w = w1, and two
                        // of the outputs at w2, w3; the third output is the remainder
                        let rest = w1 - w2 - w3;
                        if rest > 0.0 {
                            let rate = c.c31 * mmm * bar_q(w1) * bar_q(w2) * bar_q(w3) * q(rest);
                            for _ in 0..3 {
                                f(rate, &[w2, w3, rest], &[w1]);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Discrete rates of one operator by brute force.
pub fn oracle_rates(
    model: &KernelModel,
    reps: &[f64],
    m: &[f64],
    op: Operator,
    toggles: OperatorToggles,
) -> OracleRates {
    let basis = Basis { reps };
    let n = basis.n();
    let mut out = vec![0.0; n + 3];
    let mut scale = vec![0.0; n + 3];
    if toggles.enabled(op) {
        interactions(model, reps, m, op, toggles.include_ro, &mut |rate, outs, ins| {
            for slot in 0..n + 3 {
                let mut v = 0.0;
                let mut s = 0.0;
                for &t in outs {
                    v += basis.eval(slot, t);
                    s += basis.reach(slot, t);
                }
                for &t in ins {
                    v -= basis.eval(slot, t);
                    s += basis.reach(slot, t);
                }
                out[slot] += rate * v;
                scale[slot] += rate.abs() * s;
            }
        });
    }
    OracleRates {
        dm: out[..n].to_vec(),
        condensate: out[n],
        overflow_mass: out[n + 1],
        overflow_energy: out[n + 2],
        scale: scale[..n].to_vec(),
        scale_acc: [scale[n], scale[n + 1], scale[n + 2]],
    }
}

/// `d/dt <F, Xi>` by brute force with `Xi` at exact frequencies.
pub fn oracle_weak(
    model: &KernelModel,
    reps: &[f64],
    m: &[f64],
    op: Operator,
    include_ro: bool,
    xi: &dyn Fn(f64) -> f64,
) -> f64 {
    let mut acc = 0.0;
    interactions(model, reps, m, op, include_ro, &mut |rate, outs, ins| {
        let v: f64 = outs.iter().map(|&t| xi(t)).sum::<f64>() - ins.iter().map(|&t| xi(t)).sum::<f64>();
        acc += rate * v;
    });
    acc
}
