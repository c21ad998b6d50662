//! Sandwich estimators for KL divergences that have no closed form:
//! a diagonal Gaussian (or mixture) against a Gaussian mixture.
//!
//! For a Gaussian `p` against a mixture `Q`, [`variational_upper`] is a
//! true upper bound and [`product_lower`] a true lower bound on
//! `KL(p ‖ Q)`; [`averaged_estimate`] is their midpoint. For two mixtures
//! the analogous formulas are approximations, neither bounds. All inner
//! exponentials live in log space, so widely separated components stay
//! finite. [`mc_kl`] is a plain Monte-Carlo reference oracle.
//!
//! All values are in nats.

use crate::error::{Error, Result};
use crate::gaussian::{kl_diag, log_product_normalizer, Density, DiagGaussian, GaussianMixture};
use crate::numeric;
use alloc::vec::Vec;
use rand::Rng;

fn check_dims(p_dim: usize, q: &GaussianMixture) -> Result<()> {
    if p_dim != q.dim() {
        return Err(Error::DimMismatch {
            expected: p_dim,
            got: q.dim(),
        });
    }
    Ok(())
}

/// Variational upper bound on `KL(p ‖ Q)`:
/// `-ln Σ_i α_i e^{-KL(p ‖ Q_i)}`.
pub fn variational_upper(p: &DiagGaussian, q: &GaussianMixture) -> Result<f64> {
    check_dims(p.dim(), q)?;
    let mut terms = Vec::with_capacity(q.len());
    for (c, &w) in q.components().iter().zip(q.weights()) {
        terms.push(numeric::ln(w) - kl_diag(p, c)?);
    }
    Ok(-numeric::log_sum_exp(&terms))
}

/// Product-of-Gaussians lower bound on `KL(p ‖ Q)`:
/// `-h(p) - ln Σ_i α_i t_i` with `t_i = ∫ p(x) Q_i(x) dx`.
///
/// Negative values are legal; this is a lower bound, not a divergence.
pub fn product_lower(p: &DiagGaussian, q: &GaussianMixture) -> Result<f64> {
    check_dims(p.dim(), q)?;
    let mut terms = Vec::with_capacity(q.len());
    for (c, &w) in q.components().iter().zip(q.weights()) {
        terms.push(numeric::ln(w) + log_product_normalizer(p, c)?);
    }
    Ok(-p.differential_entropy() - numeric::log_sum_exp(&terms))
}

/// Average of [`product_lower`] and [`variational_upper`].
pub fn averaged_estimate(p: &DiagGaussian, q: &GaussianMixture) -> Result<f64> {
    Ok(0.5 * (product_lower(p, q)? + variational_upper(p, q)?))
}

/// Variational approximation of `KL(P ‖ Q)` for two mixtures:
/// `Σ_j β_j [ ln Σ_{j'} β_{j'} e^{-KL(P_j ‖ P_{j'})} - ln Σ_i α_i e^{-KL(P_j ‖ Q_i)} ]`.
///
/// Unlike the Gaussian-vs-mixture case this is an approximation, not a bound.
pub fn variational_mm(p: &GaussianMixture, q: &GaussianMixture) -> Result<f64> {
    check_dims(p.dim(), q)?;
    let mut acc = 0.0;
    let mut num = Vec::with_capacity(p.len());
    let mut den = Vec::with_capacity(q.len());
    for (pj, &bj) in p.components().iter().zip(p.weights()) {
        num.clear();
        for (pk, &bk) in p.components().iter().zip(p.weights()) {
            num.push(numeric::ln(bk) - kl_diag(pj, pk)?);
        }
        den.clear();
        for (qi, &ai) in q.components().iter().zip(q.weights()) {
            den.push(numeric::ln(ai) - kl_diag(pj, qi)?);
        }
        acc += bj * (numeric::log_sum_exp(&num) - numeric::log_sum_exp(&den));
    }
    Ok(acc)
}

/// Product-of-Gaussians approximation of `KL(P ‖ Q)` for two mixtures,
/// with `E_{P_j}[·]` normalizer terms in place of the KL exponentials.
pub fn product_mm(p: &GaussianMixture, q: &GaussianMixture) -> Result<f64> {
    check_dims(p.dim(), q)?;
    let mut acc = 0.0;
    let mut num = Vec::with_capacity(p.len());
    let mut den = Vec::with_capacity(q.len());
    for (pj, &bj) in p.components().iter().zip(p.weights()) {
        num.clear();
        for (pk, &bk) in p.components().iter().zip(p.weights()) {
            num.push(numeric::ln(bk) + log_product_normalizer(pj, pk)?);
        }
        den.clear();
        for (qi, &ai) in q.components().iter().zip(q.weights()) {
            den.push(numeric::ln(ai) + log_product_normalizer(pj, qi)?);
        }
        acc += bj * (numeric::log_sum_exp(&num) - numeric::log_sum_exp(&den));
    }
    Ok(acc)
}

/// Average of [`product_mm`] and [`variational_mm`].
pub fn averaged_mm(p: &GaussianMixture, q: &GaussianMixture) -> Result<f64> {
    Ok(0.5 * (product_mm(p, q)? + variational_mm(p, q)?))
}

/// Monte-Carlo KL estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McKl {
    pub estimate: f64,
    pub std_error: f64,
}

/// Simple i.i.d. Monte-Carlo estimate of `KL(p ‖ Q)`: mean and standard
/// error of `ln p(X) - ln Q(X)` over `X ~ p`. Requires at least 1000
/// samples. This is a test oracle, not a product feature; no variance
/// reduction is applied.
pub fn mc_kl<P: Density, R: Rng + ?Sized>(
    p: &P,
    q: &GaussianMixture,
    samples: usize,
    rng: &mut R,
) -> Result<McKl> {
    if samples < 1000 {
        return Err(Error::InvalidArgument(
            "mc_kl needs at least 1000 samples".into(),
        ));
    }
    check_dims(p.dim(), q)?;
    // Welford running moments.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 0..samples {
        let x = p.draw(rng);
        let v = p.log_density(&x)? - q.log_pdf(&x)?;
        let delta = v - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (v - mean);
    }
    let var = m2 / (samples as f64 - 1.0);
    Ok(McKl {
        estimate: mean,
        std_error: numeric::sqrt(var / samples as f64),
    })
}
