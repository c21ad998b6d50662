//! Closed-form evaluation of the MDL generalization bounds and the
//! binary-entropy machinery behind them.
//!
//! Everything here is a pure function of scalars. The divergence
//! [`risk_divergence`] (twice the Jensen-Shannon divergence between two
//! Bernoulli distributions) measures the train/test risk discrepancy; the
//! correction [`entropy_correction`] absorbs the mismatch between the train
//! and ghost empirical label distributions. The in-expectation and tail
//! bound right-hand sides combine those with an `MDL/n` rate.
//!
//! Internally all entropies are computed in bits and converted, so a bound
//! evaluated in nats is exactly the bits value scaled by ln 2 when the
//! input rates are converted consistently.

use crate::error::{Error, Result};
use crate::numeric;
use alloc::vec::Vec;
use core::f64::consts::LN_2;

/// Logarithm base used for entropies, divergences, and rate terms within
/// one bound evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LogBase {
    #[default]
    Bits,
    Nats,
}

impl LogBase {
    /// Convert a value computed in bits into this base.
    #[inline]
    fn from_bits(self, bits: f64) -> f64 {
        match self {
            LogBase::Bits => bits,
            LogBase::Nats => bits * LN_2,
        }
    }

    /// Convert a value in this base into bits.
    #[inline]
    fn to_bits(self, value: f64) -> f64 {
        match self {
            LogBase::Bits => value,
            LogBase::Nats => value / LN_2,
        }
    }

    /// log of `x` in this base, derived from log2 so that the nats value is
    /// exactly the bits value times ln 2.
    #[inline]
    fn log(self, x: f64) -> f64 {
        self.from_bits(numeric::log2(x))
    }
}

/// Scalar plug-ins for one bound evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundInputs {
    /// Sample count; the bounds require `n >= 10`.
    pub n: u64,
    /// Number of classes, `>= 2`.
    pub num_classes: u32,
    /// MDL(Q)/n in the chosen base, nonnegative.
    pub mdl_rate: f64,
    /// Empirical risk on the training set, in [0, 1].
    pub emp_risk_train: f64,
    /// Empirical risk on the ghost/test set, in [0, 1].
    pub emp_risk_test: f64,
    /// Total-variation term between empirical label distributions, in [0, 2].
    pub tv: f64,
    /// Confidence level in (0, 1].
    pub delta: f64,
    pub base: LogBase,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::Domain {
                what: "n (must be >= 10)",
                value: self.n as f64,
            });
        }
        if self.num_classes < 2 {
            return Err(Error::Domain {
                what: "num_classes (must be >= 2)",
                value: self.num_classes as f64,
            });
        }
        check_range("mdl_rate", self.mdl_rate, 0.0, f64::INFINITY)?;
        check_range("emp_risk_train", self.emp_risk_train, 0.0, 1.0)?;
        check_range("emp_risk_test", self.emp_risk_test, 0.0, 1.0)?;
        check_range("tv", self.tv, 0.0, 2.0)?;
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Domain {
                what: "delta (must be in (0,1])",
                value: self.delta,
            });
        }
        Ok(())
    }
}

fn check_range(what: &'static str, x: f64, lo: f64, hi: f64) -> Result<()> {
    if x.is_nan() || x < lo || x > hi {
        return Err(Error::Domain { what, value: x });
    }
    Ok(())
}

/// Binary Shannon entropy in bits with the 0·log 0 := 0 convention.
#[inline]
fn h_bits(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * numeric::log2(x) - (1.0 - x) * numeric::log2(1.0 - x)
}

/// Binary Shannon entropy of `x ∈ [0, 1]`.
///
/// Symmetric about 0.5 with maximum 1 bit (ln 2 nats) there.
pub fn binary_entropy(x: f64, base: LogBase) -> Result<f64> {
    check_range("x", x, 0.0, 1.0)?;
    Ok(base.from_bits(h_bits(x)))
}

#[inline]
fn risk_divergence_bits(x1: f64, x2: f64) -> f64 {
    2.0 * h_bits(0.5 * (x1 + x2)) - h_bits(x1) - h_bits(x2)
}

/// Twice the Jensen-Shannon divergence between Bernoulli(`x1`) and
/// Bernoulli(`x2`); ranges over [0, 2] in bits.
pub fn risk_divergence(x1: f64, x2: f64, base: LogBase) -> Result<f64> {
    check_range("x1", x1, 0.0, 1.0)?;
    check_range("x2", x2, 0.0, 1.0)?;
    Ok(base.from_bits(risk_divergence_bits(x1, x2)))
}

#[inline]
fn entropy_correction_bits(x1: f64, x2: f64, eps: f64) -> f64 {
    let lo = x1.min(x2);
    let hi = x1.max(x2);
    // The objective e' -> h(lo+e') - h(lo) + h(hi-e') - h(hi) is
    // nondecreasing on [0, (hi-lo)/2] because h' is decreasing and
    // lo+e' <= hi-e' there, so the max sits at the right endpoint.
    let e = eps.min(0.5 * (hi - lo));
    (h_bits(lo + e) - h_bits(lo) + h_bits(hi - e) - h_bits(hi)).max(0.0)
}

/// Correction term absorbing the mismatch between the train and ghost
/// empirical label distributions: the maximum of
/// `h(min+e') - h(min) + h(max-e') - h(max)` over
/// `e' ∈ [0, min(eps, (max-min)/2)]`.
pub fn entropy_correction(x1: f64, x2: f64, eps: f64, base: LogBase) -> Result<f64> {
    check_range("x1", x1, 0.0, 1.0)?;
    check_range("x2", x2, 0.0, 1.0)?;
    check_range("eps", eps, 0.0, f64::INFINITY)?;
    Ok(base.from_bits(entropy_correction_bits(x1, x2, eps)))
}

/// Inverse of the risk divergence in its first argument:
/// `sup { x1 ∈ [0,1] : risk_divergence(x1, x2) <= y }`.
///
/// Since the divergence increases in `x1` on `[x2, 1]`, the result is 1
/// whenever `y` exceeds the value at 1, and is otherwise located by
/// bisection to within `tol`. The returned point satisfies
/// `risk_divergence(result, x2) <= y`.
pub fn risk_divergence_inverse(y: f64, x2: f64, base: LogBase, tol: f64) -> Result<f64> {
    check_range("y", y, 0.0, f64::INFINITY)?;
    check_range("x2", x2, 0.0, 1.0)?;
    if !(tol > 0.0) {
        return Err(Error::Domain {
            what: "tol (must be > 0)",
            value: tol,
        });
    }
    let y_bits = base.to_bits(y);
    if y_bits == 0.0 {
        // The divergence is strictly positive for x1 > x2, so the sublevel
        // set at y = 0 is exactly {x2}; bisecting would chase cancellation
        // noise around the diagonal.
        return Ok(x2);
    }
    if risk_divergence_bits(1.0, x2) <= y_bits {
        return Ok(1.0);
    }
    // Invariant: f(lo) <= y < f(hi) on [x2, 1].
    let mut lo = x2;
    let mut hi = 1.0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if risk_divergence_bits(mid, x2) <= y_bits {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Right-hand side of the in-expectation divergence bound:
/// `mdl_rate + log(n)/n + entropy_correction(risk_train, risk_test, tv/2)`.
///
/// The expectation over predictions is replaced by the scalar plug-ins
/// carried in [`BoundInputs`].
pub fn expected_bound_rhs(b: &BoundInputs) -> Result<f64> {
    b.validate()?;
    let n = b.n as f64;
    let rate = b.mdl_rate + b.base.log(n) / n;
    let corr = entropy_correction(b.emp_risk_train, b.emp_risk_test, 0.5 * b.tv, b.base)?;
    Ok(rate + corr)
}

/// Right-hand side of the tail divergence bound:
/// `(kl_value + log(n/delta))/n + residual`.
pub fn tail_bound_rhs(
    kl_value: f64,
    n: u64,
    delta: f64,
    residual: f64,
    base: LogBase,
) -> Result<f64> {
    if n < 10 {
        return Err(Error::Domain {
            what: "n (must be >= 10)",
            value: n as f64,
        });
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Domain {
            what: "delta (must be in (0,1])",
            value: delta,
        });
    }
    check_range("kl_value", kl_value, 0.0, f64::INFINITY)?;
    let nf = n as f64;
    Ok((kl_value + base.log(nf / delta)) / nf + residual)
}

/// Generalization-error bound implied by the in-expectation bound: the
/// supremum of the set of gaps `g ∈ [0, 1 - emp_risk]` for which
/// `risk_divergence(emp_risk + g, emp_risk)` stays below the bound's
/// right-hand side (which itself varies with `g` through the correction
/// term). The total-variation plug-in is `sqrt(C/n)`.
///
/// Both sides vary with `g` and the difference is not guaranteed monotone,
/// so the feasible set is scanned on a grid of step 1e-4 and the boundary
/// refined by local bisection.
pub fn expected_gen_bound(
    mdl_rate: f64,
    emp_risk: f64,
    n: u64,
    num_classes: u32,
    base: LogBase,
) -> Result<f64> {
    if n < 10 {
        return Err(Error::Domain {
            what: "n (must be >= 10)",
            value: n as f64,
        });
    }
    check_range("mdl_rate", mdl_rate, 0.0, f64::INFINITY)?;
    check_range("emp_risk", emp_risk, 0.0, 1.0)?;
    let nf = n as f64;
    let tv = numeric::sqrt(num_classes as f64 / nf);
    let const_bits = base.to_bits(mdl_rate) + numeric::log2(nf) / nf;
    let feasible = |g: f64| -> bool {
        risk_divergence_bits(emp_risk + g, emp_risk)
            <= const_bits + entropy_correction_bits(emp_risk, emp_risk + g, 0.5 * tv)
    };

    let g_max = 1.0 - emp_risk;
    if feasible(g_max) {
        return Ok(g_max);
    }
    const STEP: f64 = 1e-4;
    let steps = (g_max / STEP) as usize;
    // g = 0 is always feasible: both divergence and correction vanish there
    // while the rate term is positive.
    let mut best = 0.0;
    for k in 1..=steps {
        let g = k as f64 * STEP;
        if feasible(g) {
            best = g;
        }
    }
    let mut lo = best;
    let mut hi = (best + STEP).min(g_max);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Prior-art square-root bound `sqrt((2·mdl + C + 2)/n)`.
///
/// `mdl` is the total description length (not the per-sample rate).
pub fn sqrt_mdl_bound(mdl: f64, n: u64, num_classes: u32) -> f64 {
    let nf = n as f64;
    numeric::sqrt((2.0 * mdl + num_classes as f64 + 2.0) / nf)
}

/// Lossy variant of [`sqrt_mdl_bound`]: the same bound for the quantized
/// encoder plus the distortion level.
pub fn lossy_sqrt_mdl_bound(mdl_quantized: f64, n: u64, num_classes: u32, distortion: f64) -> f64 {
    sqrt_mdl_bound(mdl_quantized, n, num_classes) + distortion
}

/// Penalty for priors selected by an `eps_p`-differentially-private
/// mechanism: `eps_p²/2 + eps_p·sqrt(ln(4/delta)/(2n))`. Natural log; the
/// accompanying confidence term in the tail bound becomes `ln(2n/delta)/n`.
pub fn dp_penalty(eps_p: f64, n: u64, delta: f64) -> Result<f64> {
    check_range("eps_p", eps_p, 0.0, f64::INFINITY)?;
    if n == 0 {
        return Err(Error::Domain {
            what: "n (must be >= 1)",
            value: 0.0,
        });
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain {
            what: "delta (must be in (0,1))",
            value: delta,
        });
    }
    let nf = n as f64;
    Ok(0.5 * eps_p * eps_p + eps_p * numeric::sqrt(numeric::ln(4.0 / delta) / (2.0 * nf)))
}

/// Confidence term for partially symmetric priors:
/// `ln(delta·e^{2n} + n·e^{eps})/n`, evaluated as a log-sum-exp of
/// `{ln delta + 2n, ln n + eps}` so that `e^{2n}` is never materialized.
/// Natural log. Finite for all `delta ∈ [0, 1]` and `n >= 1`.
pub fn partial_symmetry_log_term(delta: f64, n: u64, eps: f64) -> f64 {
    let nf = n as f64;
    let a = numeric::ln(delta) + 2.0 * nf;
    let b = numeric::ln(nf) + eps;
    numeric::log_sum_exp2(a, b) / nf
}

/// One row of the residual curve: generalization gap and the correction
/// term at that gap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualRow {
    pub gen: f64,
    pub residual: f64,
}

/// Residual-curve generator: for each gap `g` in `gen_grid`, the value of
/// `entropy_correction(emp_risk, emp_risk + g; sqrt(C/n)/2)`.
pub fn residual_curve(
    n: u64,
    num_classes: u32,
    emp_risk: f64,
    gen_grid: &[f64],
    base: LogBase,
) -> Result<Vec<ResidualRow>> {
    if n < 1 {
        return Err(Error::Domain {
            what: "n (must be >= 1)",
            value: n as f64,
        });
    }
    check_range("emp_risk", emp_risk, 0.0, 1.0)?;
    let eps = 0.5 * numeric::sqrt(num_classes as f64 / n as f64);
    let mut rows = Vec::with_capacity(gen_grid.len());
    for &g in gen_grid {
        check_range("gen grid value", g, 0.0, 1.0)?;
        if emp_risk + g > 1.0 {
            return Err(Error::Domain {
                what: "emp_risk + gen (must be <= 1)",
                value: emp_risk + g,
            });
        }
        rows.push(ResidualRow {
            gen: g,
            residual: entropy_correction(emp_risk, emp_risk + g, eps, base)?,
        });
    }
    Ok(rows)
}

/// One row of the bound-comparison table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComparisonRow {
    pub mdl_rate: f64,
    pub emp_risk: f64,
    /// [`expected_gen_bound`] at this grid point.
    pub divergence_bound: f64,
    /// [`sqrt_mdl_bound`] with `mdl = mdl_rate * n` at this grid point.
    pub sqrt_bound: f64,
}

/// Bound-comparison generator pairing [`expected_gen_bound`] and
/// [`sqrt_mdl_bound`] on the product grid `mdl_rate_grid x emp_risks`.
/// Rows are emitted in grid order, mdl rate outermost.
pub fn bound_comparison(
    n: u64,
    num_classes: u32,
    emp_risks: &[f64],
    mdl_rate_grid: &[f64],
    base: LogBase,
) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::with_capacity(emp_risks.len() * mdl_rate_grid.len());
    for &rate in mdl_rate_grid {
        for &risk in emp_risks {
            rows.push(ComparisonRow {
                mdl_rate: rate,
                emp_risk: risk,
                divergence_bound: expected_gen_bound(rate, risk, n, num_classes, base)?,
                sqrt_bound: sqrt_mdl_bound(rate * n as f64, n, num_classes),
            });
        }
    }
    Ok(rows)
}
