//! Diagonal-Gaussian and mixture primitives.
//!
//! Variances (not standard deviations) are stored throughout, floored at
//! [`VAR_FLOOR`] on construction. All KL values are in nats; base
//! conversion happens only in [`crate::bounds`].

use crate::error::{Error, Result};
use crate::numeric;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use rand::Rng;
use rand_distr::StandardNormal;

/// Smallest representable variance; applied coordinate-wise at construction.
pub const VAR_FLOOR: f64 = 1e-8;

/// A d-dimensional Gaussian with diagonal covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl DiagGaussian {
    /// Build from a mean and per-coordinate variances. Variances are
    /// clamped to [`VAR_FLOOR`] from below.
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::DimMismatch {
                expected: mean.len(),
                got: var.len(),
            });
        }
        if mean.is_empty() {
            return Err(Error::InvalidArgument("zero-dimensional Gaussian".into()));
        }
        for &m in &mean {
            if !m.is_finite() {
                return Err(Error::NonFinite("Gaussian mean"));
            }
        }
        let mut var = var;
        for v in &mut var {
            if !v.is_finite() {
                return Err(Error::NonFinite("Gaussian variance"));
            }
            if *v < VAR_FLOOR {
                *v = VAR_FLOOR;
            }
        }
        Ok(Self { mean, var })
    }

    /// Standard normal in `dim` dimensions.
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    /// Exact log density at `x`, in nats.
    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut acc = 0.0;
        for j in 0..x.len() {
            let d = x[j] - self.mean[j];
            acc += -0.5 * numeric::ln(2.0 * PI * self.var[j]) - d * d / (2.0 * self.var[j]);
        }
        Ok(acc)
    }

    /// Differential entropy `0.5 * ln((2 pi e)^d * prod var_j)`, in nats.
    pub fn differential_entropy(&self) -> f64 {
        let mut acc = 0.0;
        for &v in &self.var {
            acc += numeric::ln(2.0 * PI * core::f64::consts::E * v);
        }
        0.5 * acc
    }

    /// One reparameterized draw `mean + sqrt(var) ⊙ xi`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for j in 0..self.dim() {
            let xi: f64 = rng.sample(StandardNormal);
            out.push(self.mean[j] + numeric::sqrt(self.var[j]) * xi);
        }
        out
    }

    /// `k` independent draws; deterministic given the generator state.
    pub fn sample_n<R: Rng + ?Sized>(&self, rng: &mut R, k: usize) -> Vec<Vec<f64>> {
        (0..k).map(|_| self.sample(rng)).collect()
    }
}

/// A weighted list of diagonal Gaussians sharing one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    components: Vec<DiagGaussian>,
    weights: Vec<f64>,
}

impl GaussianMixture {
    /// Build from components and weights. Weights must be nonnegative and
    /// sum to 1 within 1e-9; components must share a dimension.
    pub fn new(components: Vec<DiagGaussian>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyMixture);
        }
        if components.len() != weights.len() {
            return Err(Error::DimMismatch {
                expected: components.len(),
                got: weights.len(),
            });
        }
        let dim = components[0].dim();
        for c in &components {
            if c.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: c.dim(),
                });
            }
        }
        let mut sum = 0.0;
        for &w in &weights {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::BadWeights { sum: w });
            }
            sum += w;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::BadWeights { sum });
        }
        Ok(Self {
            components,
            weights,
        })
    }

    /// Single-component mixture.
    pub fn single(component: DiagGaussian) -> Self {
        Self {
            components: vec![component],
            weights: vec![1.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn components(&self) -> &[DiagGaussian] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mixture log density via log-sum-exp over components.
    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut terms = Vec::with_capacity(self.len());
        for (c, &w) in self.components.iter().zip(&self.weights) {
            terms.push(numeric::ln(w) + c.log_pdf(x)?);
        }
        Ok(numeric::log_sum_exp(&terms))
    }

    /// One draw: component index by weight, then a Gaussian draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut idx = self.len() - 1;
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                idx = i;
                break;
            }
        }
        self.components[idx].sample(rng)
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, rng: &mut R, k: usize) -> Vec<Vec<f64>> {
        (0..k).map(|_| self.sample(rng)).collect()
    }
}

/// Densities the Monte-Carlo KL oracle can sample from and score.
pub trait Density {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> Result<f64>;
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64>;
}

impl Density for DiagGaussian {
    fn dim(&self) -> usize {
        self.dim()
    }
    fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.log_pdf(x)
    }
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.sample(rng)
    }
}

impl Density for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim()
    }
    fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.log_pdf(x)
    }
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.sample(rng)
    }
}

/// Closed-form KL divergence between diagonal Gaussians, in nats:
/// `Σ_j [ ln(σ_q/σ_p) + (σ_p² + (μ_p - μ_q)²)/(2 σ_q²) - 1/2 ]`.
pub fn kl_diag(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    let mut acc = 0.0;
    for j in 0..p.dim() {
        let vp = p.var[j];
        let vq = q.var[j];
        let dm = p.mean[j] - q.mean[j];
        acc += 0.5 * numeric::ln(vq / vp) + (vp + dm * dm) / (2.0 * vq) - 0.5;
    }
    Ok(acc)
}

/// Log of the normalization constant of the product of two Gaussians,
/// `ln ∫ p(x) q(x) dx`:
/// `Σ_j [ -ln(2π(σ_p² + σ_q²))/2 - (μ_p - μ_q)²/(2(σ_p² + σ_q²)) ]`.
///
/// The variant that drops `σ_p²` (the cross term used by the averaged
/// lossless regularizer) is `q.log_pdf(p.mean())`.
pub fn log_product_normalizer(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    let mut acc = 0.0;
    for j in 0..p.dim() {
        let s = p.var[j] + q.var[j];
        let dm = p.mean[j] - q.mean[j];
        acc += -0.5 * numeric::ln(2.0 * PI * s) - dm * dm / (2.0 * s);
    }
    Ok(acc)
}

/// Linear-space product normalizer; underflows to 0 for widely separated
/// means, use [`log_product_normalizer`] where that matters.
pub fn product_normalizer(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64> {
    Ok(numeric::exp(log_product_normalizer(p, q)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn g1(mean: f64, var: f64) -> DiagGaussian {
        DiagGaussian::new(vec![mean], vec![var]).unwrap()
    }

    #[test]
    fn kl_known_values() {
        let p = g1(0.0, 1.0);
        assert_eq!(kl_diag(&p, &p).unwrap(), 0.0);
        assert_abs_diff_eq!(kl_diag(&p, &g1(1.0, 1.0)).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(
            kl_diag(&p, &g1(1.0, 2.0)).unwrap(),
            0.3465735902799727,
            epsilon = 1e-14
        );
        let q3 = DiagGaussian::new(vec![0.0, 0.0, 0.0], vec![1.0; 3]).unwrap();
        assert!(kl_diag(&p, &q3).is_err());
    }

    #[test]
    fn kl_nonnegative_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let d = rng.random_range(1..5usize);
            let mk = |rng: &mut ChaCha8Rng| {
                let mean = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
                let var = (0..d).map(|_| rng.random_range(0.05..4.0)).collect();
                DiagGaussian::new(mean, var).unwrap()
            };
            let p = mk(&mut rng);
            let q = mk(&mut rng);
            let kl = kl_diag(&p, &q).unwrap();
            assert!(kl >= -1e-12);
            assert_eq!(kl_diag(&p, &p).unwrap(), 0.0);
        }
    }

    #[test]
    fn product_normalizer_values() {
        let p = g1(0.0, 1.0);
        assert_abs_diff_eq!(
            product_normalizer(&p, &p).unwrap(),
            0.28209479177387814,
            epsilon = 1e-15
        );
        // t' variant: the density of q at p's mean.
        let t_prime = numeric::exp(g1(0.0, 1.0).log_pdf(&[0.0]).unwrap());
        assert_abs_diff_eq!(t_prime, 0.3989422804014327, epsilon = 1e-15);
        // Widely separated means underflow in linear space but stay finite
        // in log space.
        let far = g1(1e4, 1.0);
        assert_eq!(product_normalizer(&p, &far).unwrap(), 0.0);
        assert!(log_product_normalizer(&p, &far).unwrap().is_finite());
    }

    #[test]
    fn log_pdf_values() {
        let p = g1(0.0, 1.0);
        assert_abs_diff_eq!(
            p.log_pdf(&[0.0]).unwrap(),
            -0.9189385332046727,
            epsilon = 1e-15
        );
        assert!(p.log_pdf(&[0.0, 1.0]).is_err());

        let mix = GaussianMixture::new(vec![g1(0.0, 1.0), g1(5.0, 2.0)], vec![1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(
            mix.log_pdf(&[0.7]).unwrap(),
            g1(0.0, 1.0).log_pdf(&[0.7]).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn mixture_validation() {
        let comps = vec![g1(0.0, 1.0), g1(1.0, 1.0)];
        assert!(GaussianMixture::new(comps.clone(), vec![0.7]).is_err());
        assert!(GaussianMixture::new(comps.clone(), vec![0.7, 0.2]).is_err());
        assert!(GaussianMixture::new(comps.clone(), vec![-0.1, 1.1]).is_err());
        assert!(GaussianMixture::new(vec![], vec![]).is_err());
        assert!(GaussianMixture::new(comps, vec![0.5, 0.5]).is_ok());
    }

    #[test]
    fn var_floor_applied() {
        let g = DiagGaussian::new(vec![2.0], vec![0.0]).unwrap();
        assert_eq!(g.var()[0], VAR_FLOOR);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for x in g.sample_n(&mut rng, 100) {
            assert!((x[0] - 2.0).abs() < 1e-2);
        }
    }

    #[test]
    fn sampling_deterministic_and_calibrated() {
        let g = DiagGaussian::new(vec![0.0, 1.0], vec![1.0, 4.0]).unwrap();
        let a = g.sample_n(&mut ChaCha8Rng::seed_from_u64(42), 5);
        let b = g.sample_n(&mut ChaCha8Rng::seed_from_u64(42), 5);
        assert_eq!(a, b);

        // CLT check: sample mean of N(0,1) within 4/sqrt(k) of 0.
        let std = DiagGaussian::standard(1);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = 100_000;
        let mean: f64 = std.sample_n(&mut rng, k).iter().map(|v| v[0]).sum::<f64>() / k as f64;
        assert!(mean.abs() < 4.0 / (k as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn mixture_sampling_respects_weights() {
        let mix =
            GaussianMixture::new(vec![g1(-10.0, 0.01), g1(10.0, 0.01)], vec![0.25, 0.75]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = mix.sample_n(&mut rng, 4000);
        let frac_hi = draws.iter().filter(|x| x[0] > 0.0).count() as f64 / 4000.0;
        assert!((frac_hi - 0.75).abs() < 0.03, "frac {frac_hi}");
    }
}
