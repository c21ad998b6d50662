//! Data-dependent Gaussian-mixture prior bank: k-means++-style
//! initialization, streaming E/M updates, moving-average blending with
//! optional symmetry noise, and the regularizer evaluations with analytic
//! gradients.
//!
//! One mixture is kept per class. Three update/regularizer variants exist:
//!
//! - [`PriorMode::LosslessVar`]: the variational upper bound alone drives
//!   both the responsibilities and the regularizer (with a single
//!   component per class this is exactly the per-class Gaussian KL
//!   regularizer).
//! - [`PriorMode::LosslessEst`]: the averaged upper/lower estimate; the
//!   M-step mixes the variational responsibilities γ with the cross-term
//!   responsibilities β.
//! - [`PriorMode::Lossy`]: the same averaged machinery for a deliberately
//!   perturbed latent; the distortion `ε` appears only here, never in the
//!   decoder path.
//!
//! All responsibilities are computed as log-space softmaxes, and all
//! `exp(-KL)` style terms stay in log space. Values are in nats.

use crate::error::{Error, Result};
use crate::gaussian::{kl_diag, DiagGaussian, GaussianMixture};
use crate::numeric;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use rand::Rng;
use rand_distr::StandardNormal;

/// Which regularizer/update variant a bank step runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PriorMode {
    LosslessVar,
    LosslessEst,
    Lossy,
}

impl PriorMode {
    fn uses_beta(self) -> bool {
        !matches!(self, PriorMode::LosslessVar)
    }
}

/// Update hyperparameters carried by the bank.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BankHyper {
    /// Moving-average coefficient for component means (η1).
    pub eta_mean: f64,
    /// Moving-average coefficient for component variances (η2).
    pub eta_var: f64,
    /// Moving-average coefficient for mixture weights (η3).
    pub eta_weight: f64,
    /// Variance of the Gaussian noise injected into means (ζ1).
    pub noise_mean: f64,
    /// Variance of the Gaussian noise injected into variances (ζ2).
    pub noise_var: f64,
    /// Lossy distortion level ε.
    pub lossy_eps: f64,
    /// Lower clamp for component variances.
    pub var_floor: f64,
}

impl Default for BankHyper {
    fn default() -> Self {
        Self {
            eta_mean: 1e-2,
            eta_var: 5e-4,
            eta_weight: 1e-2,
            noise_mean: 0.0,
            noise_var: 0.0,
            lossy_eps: 0.1,
            var_floor: 1e-8,
        }
    }
}

impl BankHyper {
    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("eta_mean", self.eta_mean),
            ("eta_var", self.eta_var),
            ("eta_weight", self.eta_weight),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain { what, value: v });
            }
        }
        for (what, v) in [
            ("noise_mean", self.noise_mean),
            ("noise_var", self.noise_var),
            ("lossy_eps", self.lossy_eps),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Domain { what, value: v });
            }
        }
        if !(self.var_floor > 0.0) {
            return Err(Error::Domain {
                what: "var_floor",
                value: self.var_floor,
            });
        }
        Ok(())
    }
}

/// Bank shape and initialization parameters.
#[derive(Clone, Debug)]
pub struct BankConfig {
    pub num_classes: usize,
    pub components_per_class: usize,
    pub dim: usize,
    pub hyper: BankHyper,
    /// Size of the big batches used during initialization (b̃ >> b).
    pub init_batch_size: usize,
    /// How many batch draws to attempt before declaring a class missing.
    pub init_retries: usize,
}

impl BankConfig {
    pub fn new(num_classes: usize, components_per_class: usize, dim: usize) -> Self {
        Self {
            num_classes,
            components_per_class,
            dim,
            hyper: BankHyper::default(),
            init_batch_size: 2048,
            init_retries: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.components_per_class == 0 || self.dim == 0 {
            return Err(Error::InvalidArgument(
                "num_classes, components_per_class, and dim must be positive".into(),
            ));
        }
        if self.init_batch_size == 0 || self.init_retries == 0 {
            return Err(Error::InvalidArgument(
                "init_batch_size and init_retries must be positive".into(),
            ));
        }
        self.hyper.validate()
    }
}

/// A batch of per-input posteriors with their labels.
#[derive(Clone, Debug)]
pub struct PosteriorBatch {
    labels: Vec<usize>,
    posteriors: Vec<DiagGaussian>,
}

impl PosteriorBatch {
    pub fn new(labels: Vec<usize>, posteriors: Vec<DiagGaussian>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if labels.len() != posteriors.len() {
            return Err(Error::DimMismatch {
                expected: labels.len(),
                got: posteriors.len(),
            });
        }
        let dim = posteriors[0].dim();
        for p in &posteriors {
            if p.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: p.dim(),
                });
            }
        }
        Ok(Self { labels, posteriors })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.posteriors[0].dim()
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn posterior(&self, i: usize) -> &DiagGaussian {
        &self.posteriors[i]
    }
}

/// Per-sample, per-component softmax weights produced by the E-step.
#[derive(Clone, Debug)]
pub struct Responsibilities {
    mode: PriorMode,
    /// b x M rows on the simplex.
    gamma: Vec<Vec<f64>>,
    /// b x M rows on the simplex; present for the Est/Lossy variants.
    beta: Option<Vec<Vec<f64>>>,
}

impl Responsibilities {
    /// Build from raw rows, validating the simplex invariants.
    pub fn new(mode: PriorMode, gamma: Vec<Vec<f64>>, beta: Option<Vec<Vec<f64>>>) -> Result<Self> {
        if mode.uses_beta() != beta.is_some() {
            return Err(Error::InvalidArgument(
                "beta rows must match the mode".into(),
            ));
        }
        check_simplex_rows(&gamma)?;
        if let Some(b) = &beta {
            if b.len() != gamma.len() {
                return Err(Error::DimMismatch {
                    expected: gamma.len(),
                    got: b.len(),
                });
            }
            check_simplex_rows(b)?;
        }
        Ok(Self { mode, gamma, beta })
    }

    pub fn mode(&self) -> PriorMode {
        self.mode
    }

    pub fn gamma(&self) -> &[Vec<f64>] {
        &self.gamma
    }

    pub fn beta(&self) -> Option<&[Vec<f64>]> {
        self.beta.as_deref()
    }
}

fn check_simplex_rows(rows: &[Vec<f64>]) -> Result<()> {
    for row in rows {
        let mut sum = 0.0;
        for &g in row {
            if !(g >= 0.0) {
                return Err(Error::BadWeights { sum: g });
            }
            sum += g;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::BadWeights { sum });
        }
    }
    Ok(())
}

/// Closed-form proposals from one M-step, per (class, component).
#[derive(Clone, Debug)]
pub struct ProposedParams {
    pub means: Vec<Vec<Vec<f64>>>,
    pub vars: Vec<Vec<Vec<f64>>>,
    pub weights: Vec<Vec<f64>>,
}

/// Regularizer value (nats, summed over the batch) and its analytic
/// gradients with respect to each posterior mean and variance. Bank
/// parameters are treated as constants: no gradient flows into the prior.
#[derive(Clone, Debug)]
pub struct RegEval {
    pub value: f64,
    pub grad_mean: Vec<Vec<f64>>,
    pub grad_var: Vec<Vec<f64>>,
}

/// KL divergence of the perturbed latent against a perturbed component:
/// the mean part collapses to `‖μ_p - μ_c‖²/sqrt(d)` (both sides carry the
/// same `sqrt(d)/2` covariance) and the variance part is the KL between
/// centered Gaussians with `ε` added to both variances. As `ε` grows the
/// variance part vanishes.
pub fn lossy_kl(p: &DiagGaussian, component: &DiagGaussian, eps: f64) -> Result<f64> {
    if p.dim() != component.dim() {
        return Err(Error::DimMismatch {
            expected: p.dim(),
            got: component.dim(),
        });
    }
    let d = p.dim() as f64;
    let sqrt_d = numeric::sqrt(d);
    let mut mean_part = 0.0;
    let mut var_part = 0.0;
    for j in 0..p.dim() {
        let dm = p.mean()[j] - component.mean()[j];
        mean_part += dm * dm;
        let vp = p.var()[j] + eps;
        let vc = component.var()[j] + eps;
        var_part += 0.5 * numeric::ln(vc / vp) + vp / (2.0 * vc) - 0.5;
    }
    Ok(mean_part / sqrt_d + var_part)
}

/// The per-class Gaussian-mixture prior bank.
#[derive(Clone, Debug)]
pub struct PriorBank {
    num_classes: usize,
    components_per_class: usize,
    dim: usize,
    hyper: BankHyper,
    classes: Vec<GaussianMixture>,
}

impl PriorBank {
    /// Assemble a bank from per-class mixtures (all sharing one component
    /// count and dimension).
    pub fn from_classes(classes: Vec<GaussianMixture>, hyper: BankHyper) -> Result<Self> {
        hyper.validate()?;
        if classes.is_empty() {
            return Err(Error::EmptyMixture);
        }
        let m = classes[0].len();
        let dim = classes[0].dim();
        for q in &classes {
            if q.len() != m {
                return Err(Error::DimMismatch {
                    expected: m,
                    got: q.len(),
                });
            }
            if q.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: q.dim(),
                });
            }
        }
        Ok(Self {
            num_classes: classes.len(),
            components_per_class: m,
            dim,
            hyper,
            classes,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn components_per_class(&self) -> usize {
        self.components_per_class
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hyper(&self) -> &BankHyper {
        &self.hyper
    }

    pub fn class(&self, c: usize) -> &GaussianMixture {
        &self.classes[c]
    }

    pub fn classes(&self) -> &[GaussianMixture] {
        &self.classes
    }

    fn check_batch(&self, batch: &PosteriorBatch) -> Result<()> {
        if batch.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: batch.dim(),
            });
        }
        for i in 0..batch.len() {
            let y = batch.label(i);
            if y >= self.num_classes {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    num_classes: self.num_classes,
                });
            }
        }
        Ok(())
    }

    /// Distance used by the variational softmax for a given mode.
    fn divergence(
        &self,
        mode: PriorMode,
        p: &DiagGaussian,
        component: &DiagGaussian,
    ) -> Result<f64> {
        match mode {
            PriorMode::LosslessVar | PriorMode::LosslessEst => kl_diag(p, component),
            PriorMode::Lossy => lossy_kl(p, component, self.hyper.lossy_eps),
        }
    }

    /// Log cross-term behind the β responsibilities (without the weight).
    fn beta_log_kernel(&self, mode: PriorMode, p: &DiagGaussian, component: &DiagGaussian) -> f64 {
        match mode {
            PriorMode::LosslessEst => {
                let mut acc = 0.0;
                for j in 0..self.dim {
                    let dm = p.mean()[j] - component.mean()[j];
                    acc -= dm * dm / (2.0 * component.var()[j]);
                }
                acc
            }
            PriorMode::Lossy => {
                let sqrt_d = numeric::sqrt(self.dim as f64);
                let mut acc = 0.0;
                for j in 0..self.dim {
                    let dm = p.mean()[j] - component.mean()[j];
                    acc += dm * dm;
                }
                -acc / (2.0 * sqrt_d)
            }
            PriorMode::LosslessVar => 0.0,
        }
    }

    /// E-step: γ rows softmax `ln α - D` (D per mode), plus β rows for the
    /// Est/Lossy variants. All rows are exact simplex points.
    pub fn responsibilities(
        &self,
        batch: &PosteriorBatch,
        mode: PriorMode,
    ) -> Result<Responsibilities> {
        self.check_batch(batch)?;
        let m_count = self.components_per_class;
        let mut gamma = Vec::with_capacity(batch.len());
        let mut beta = if mode.uses_beta() {
            Some(Vec::with_capacity(batch.len()))
        } else {
            None
        };
        let mut lw = vec![0.0; m_count];
        let mut lb = vec![0.0; m_count];
        for i in 0..batch.len() {
            let p = batch.posterior(i);
            let q = &self.classes[batch.label(i)];
            for m in 0..m_count {
                let la = numeric::ln(q.weights()[m]);
                lw[m] = la - self.divergence(mode, p, &q.components()[m])?;
                if beta.is_some() {
                    lb[m] = la + self.beta_log_kernel(mode, p, &q.components()[m]);
                }
            }
            gamma.push(softmax_from_logs(&lw));
            if let Some(rows) = beta.as_mut() {
                rows.push(softmax_from_logs(&lb));
            }
        }
        Responsibilities::new(mode, gamma, beta)
    }

    /// M-step: the closed-form per-(class, component) proposals for the
    /// mode carried by `resp`. Components with zero responsibility mass in
    /// the batch keep their previous parameters; classes absent from the
    /// batch keep their previous weights.
    pub fn m_step(
        &self,
        batch: &PosteriorBatch,
        resp: &Responsibilities,
    ) -> Result<ProposedParams> {
        self.check_batch(batch)?;
        if resp.gamma.len() != batch.len() {
            return Err(Error::DimMismatch {
                expected: batch.len(),
                got: resp.gamma.len(),
            });
        }
        let mode = resp.mode;
        let c_count = self.num_classes;
        let m_count = self.components_per_class;
        let d = self.dim;

        // Responsibility masses and weighted sums, accumulated in sample
        // order for determinism.
        let mut mass_g = vec![vec![0.0; m_count]; c_count];
        let mut mass_mu = vec![vec![0.0; m_count]; c_count];
        let mut sum_mu = vec![vec![vec![0.0; d]; m_count]; c_count];
        let mut sum_var = vec![vec![vec![0.0; d]; m_count]; c_count];
        // Mass behind the weight update (γ for the var-only variant,
        // (γ+β)/2 otherwise).
        let mut mass_w = vec![vec![0.0; m_count]; c_count];

        for i in 0..batch.len() {
            let c = batch.label(i);
            let p = batch.posterior(i);
            let old = &self.classes[c];
            for m in 0..m_count {
                let g = resp.gamma[i][m];
                let b = resp.beta.as_ref().map(|rows| rows[i][m]).unwrap_or(0.0);
                let (w_mass, mu_mass) = match mode {
                    PriorMode::LosslessVar => (g, g),
                    PriorMode::LosslessEst => (0.5 * (g + b), 0.5 * (g + b)),
                    PriorMode::Lossy => (0.5 * (g + b), (2.0 * g + b) / 3.0),
                };
                mass_g[c][m] += g;
                mass_mu[c][m] += mu_mass;
                mass_w[c][m] += w_mass;
                let old_mean = old.components()[m].mean();
                for j in 0..d {
                    sum_mu[c][m][j] += mu_mass * p.mean()[j];
                    let dm = p.mean()[j] - old_mean[j];
                    sum_var[c][m][j] += match mode {
                        PriorMode::LosslessVar => g * (p.var()[j] + dm * dm),
                        PriorMode::LosslessEst => g * p.var()[j] + (g + b) * dm * dm,
                        PriorMode::Lossy => g * p.var()[j],
                    };
                }
            }
        }

        let mut means = Vec::with_capacity(c_count);
        let mut vars = Vec::with_capacity(c_count);
        let mut weights = Vec::with_capacity(c_count);
        for c in 0..c_count {
            let old = &self.classes[c];
            let class_w_mass: f64 = mass_w[c].iter().sum();
            let mut cm = Vec::with_capacity(m_count);
            let mut cv = Vec::with_capacity(m_count);
            let mut cw = Vec::with_capacity(m_count);
            for m in 0..m_count {
                let comp = &old.components()[m];
                cm.push(if mass_mu[c][m] > 0.0 {
                    sum_mu[c][m].iter().map(|s| s / mass_mu[c][m]).collect()
                } else {
                    comp.mean().to_vec()
                });
                cv.push(if mass_g[c][m] > 0.0 {
                    sum_var[c][m].iter().map(|s| s / mass_g[c][m]).collect()
                } else {
                    comp.var().to_vec()
                });
                cw.push(if class_w_mass > 0.0 {
                    mass_w[c][m] / class_w_mass
                } else {
                    old.weights()[m]
                });
            }
            means.push(cm);
            vars.push(cv);
            weights.push(cw);
        }
        Ok(ProposedParams {
            means,
            vars,
            weights,
        })
    }

    /// Moving-average blend of the bank towards `proposed`, with optional
    /// Gaussian noise on means and variances. Variances are clamped to the
    /// floor; weights receive no noise and are renormalized per class.
    pub fn apply_ma_update<R: Rng + ?Sized>(
        &self,
        proposed: &ProposedParams,
        rng: &mut R,
    ) -> Result<PriorBank> {
        if proposed.means.len() != self.num_classes {
            return Err(Error::DimMismatch {
                expected: self.num_classes,
                got: proposed.means.len(),
            });
        }
        let h = self.hyper;
        let noise_std_mean = numeric::sqrt(h.noise_mean);
        let noise_std_var = numeric::sqrt(h.noise_var);
        let mut classes = Vec::with_capacity(self.num_classes);
        for c in 0..self.num_classes {
            let old = &self.classes[c];
            let mut comps = Vec::with_capacity(self.components_per_class);
            let mut ws = Vec::with_capacity(self.components_per_class);
            let mut wsum = 0.0;
            for m in 0..self.components_per_class {
                let comp = &old.components()[m];
                let mut mean = Vec::with_capacity(self.dim);
                let mut var = Vec::with_capacity(self.dim);
                for j in 0..self.dim {
                    let mut mu =
                        (1.0 - h.eta_mean) * comp.mean()[j] + h.eta_mean * proposed.means[c][m][j];
                    if h.noise_mean > 0.0 {
                        let z: f64 = rng.sample(StandardNormal);
                        mu += noise_std_mean * z;
                    }
                    mean.push(mu);
                    let mut v =
                        (1.0 - h.eta_var) * comp.var()[j] + h.eta_var * proposed.vars[c][m][j];
                    if h.noise_var > 0.0 {
                        let z: f64 = rng.sample(StandardNormal);
                        v += noise_std_var * z;
                    }
                    var.push(v.max(h.var_floor));
                }
                comps.push(DiagGaussian::new(mean, var)?);
                let w =
                    (1.0 - h.eta_weight) * old.weights()[m] + h.eta_weight * proposed.weights[c][m];
                wsum += w;
                ws.push(w);
            }
            for w in &mut ws {
                *w /= wsum;
            }
            classes.push(GaussianMixture::new(comps, ws)?);
        }
        PriorBank::from_classes(classes, h)
    }

    /// Regularizer value and analytic gradients for a batch.
    ///
    /// - `LosslessVar`: `-Σ_i ln Σ_m α_m e^{-KL(P_i ‖ Q_m)}` — with a
    ///   single component this is exactly `Σ_i KL(P_i ‖ Q_1)`.
    /// - `LosslessEst`: the average of that and the product-side term built
    ///   from the cross terms `t'`.
    /// - `Lossy`: the same average for the perturbed latent.
    pub fn regularizer(&self, batch: &PosteriorBatch, mode: PriorMode) -> Result<RegEval> {
        self.check_batch(batch)?;
        let m_count = self.components_per_class;
        let d = self.dim;
        let sqrt_d = numeric::sqrt(d as f64);
        let eps = self.hyper.lossy_eps;
        let mut value = 0.0;
        let mut grad_mean = Vec::with_capacity(batch.len());
        let mut grad_var = Vec::with_capacity(batch.len());
        let mut lw = vec![0.0; m_count];
        let mut lt = vec![0.0; m_count];
        for i in 0..batch.len() {
            let p = batch.posterior(i);
            let q = &self.classes[batch.label(i)];
            let mut gm = vec![0.0; d];
            let mut gv = vec![0.0; d];

            // Variational side.
            for m in 0..m_count {
                lw[m] =
                    numeric::ln(q.weights()[m]) - self.divergence(mode, p, &q.components()[m])?;
            }
            let var_term = -numeric::log_sum_exp(&lw);
            let w = softmax_from_logs(&lw);
            let half = if mode == PriorMode::LosslessVar {
                1.0
            } else {
                0.5
            };
            for (m, &wm) in w.iter().enumerate() {
                let comp = &q.components()[m];
                match mode {
                    PriorMode::LosslessVar | PriorMode::LosslessEst => {
                        for j in 0..d {
                            let dm = p.mean()[j] - comp.mean()[j];
                            gm[j] += half * wm * dm / comp.var()[j];
                            gv[j] += half * wm * (0.5 / comp.var()[j] - 0.5 / p.var()[j]);
                        }
                    }
                    PriorMode::Lossy => {
                        for j in 0..d {
                            let dm = p.mean()[j] - comp.mean()[j];
                            gm[j] += half * wm * 2.0 * dm / sqrt_d;
                            gv[j] += half
                                * wm
                                * (0.5 / (comp.var()[j] + eps) - 0.5 / (p.var()[j] + eps));
                        }
                    }
                }
            }

            // Product side for the averaged variants.
            let total = match mode {
                PriorMode::LosslessVar => var_term,
                PriorMode::LosslessEst => {
                    for m in 0..m_count {
                        lt[m] = numeric::ln(q.weights()[m]) + log_cross_term(p, &q.components()[m]);
                    }
                    let mut entropy = 0.0;
                    for j in 0..d {
                        entropy += numeric::ln(2.0 * PI * core::f64::consts::E * p.var()[j]);
                    }
                    let prod_term = -(0.5 * entropy + numeric::log_sum_exp(&lt));
                    let u = softmax_from_logs(&lt);
                    for (m, &um) in u.iter().enumerate() {
                        let comp = &q.components()[m];
                        for j in 0..d {
                            let dm = p.mean()[j] - comp.mean()[j];
                            gm[j] += 0.5 * um * dm / comp.var()[j];
                        }
                    }
                    for j in 0..d {
                        gv[j] += 0.5 * (-0.5 / p.var()[j]);
                    }
                    0.5 * var_term + 0.5 * prod_term
                }
                PriorMode::Lossy => {
                    let df = d as f64;
                    for m in 0..m_count {
                        let comp = &q.components()[m];
                        let mut sq = 0.0;
                        for j in 0..d {
                            let dm = p.mean()[j] - comp.mean()[j];
                            sq += dm * dm;
                        }
                        lt[m] = numeric::ln(q.weights()[m])
                            - 0.5 * df * numeric::ln(2.0 * PI * sqrt_d)
                            - sq / (2.0 * sqrt_d);
                    }
                    let prod_term = -(0.5 * df * numeric::ln(PI * core::f64::consts::E * sqrt_d)
                        + numeric::log_sum_exp(&lt));
                    let u = softmax_from_logs(&lt);
                    for (m, &um) in u.iter().enumerate() {
                        let comp = &q.components()[m];
                        for j in 0..d {
                            let dm = p.mean()[j] - comp.mean()[j];
                            gm[j] += 0.5 * um * dm / sqrt_d;
                        }
                    }
                    0.5 * var_term + 0.5 * prod_term
                }
            };
            value += total;
            grad_mean.push(gm);
            grad_var.push(gv);
        }
        Ok(RegEval {
            value,
            grad_mean,
            grad_var,
        })
    }
}

/// `ln t'`: the log density of the component at the posterior mean (the
/// product normalizer with the posterior variance dropped).
fn log_cross_term(p: &DiagGaussian, component: &DiagGaussian) -> f64 {
    let mut acc = 0.0;
    for j in 0..p.dim() {
        let dm = p.mean()[j] - component.mean()[j];
        acc += -0.5 * numeric::ln(2.0 * PI * component.var()[j])
            - dm * dm / (2.0 * component.var()[j]);
    }
    acc
}

fn softmax_from_logs(lw: &[f64]) -> Vec<f64> {
    let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::with_capacity(lw.len());
    let mut sum = 0.0;
    for &x in lw {
        let e = numeric::exp(x - m);
        sum += e;
        out.push(e);
    }
    for x in &mut out {
        *x /= sum;
    }
    out
}

/// Frozen-coefficient variational objective
/// `Σ_i Σ_m γ_im (D_im + ln γ_im - ln α_m)` with the `0 ln 0 = 0`
/// convention. The E-step γ minimizes this over simplex rows and the
/// var-only M-step minimizes it over bank parameters.
pub fn variational_objective(
    batch: &PosteriorBatch,
    bank: &PriorBank,
    gamma: &[Vec<f64>],
    mode: PriorMode,
) -> Result<f64> {
    if gamma.len() != batch.len() {
        return Err(Error::DimMismatch {
            expected: batch.len(),
            got: gamma.len(),
        });
    }
    let mut acc = 0.0;
    for i in 0..batch.len() {
        let p = batch.posterior(i);
        let q = &bank.classes[batch.label(i)];
        for m in 0..bank.components_per_class {
            let g = gamma[i][m];
            if g == 0.0 {
                continue;
            }
            let div = bank.divergence(mode, p, &q.components()[m])?;
            acc += g * (div + numeric::ln(g) - numeric::ln(q.weights()[m]));
        }
    }
    Ok(acc)
}

/// Product-side objective for the averaged variants (no responsibilities
/// appear; the log-sum runs over components directly).
pub fn product_objective(batch: &PosteriorBatch, bank: &PriorBank, mode: PriorMode) -> Result<f64> {
    let d = bank.dim;
    let sqrt_d = numeric::sqrt(d as f64);
    let mut acc = 0.0;
    let mut lt = vec![0.0; bank.components_per_class];
    for i in 0..batch.len() {
        let p = batch.posterior(i);
        let q = &bank.classes[batch.label(i)];
        match mode {
            PriorMode::LosslessVar | PriorMode::LosslessEst => {
                for m in 0..bank.components_per_class {
                    lt[m] = numeric::ln(q.weights()[m]) + log_cross_term(p, &q.components()[m]);
                }
                let mut entropy = 0.0;
                for j in 0..d {
                    entropy += numeric::ln(2.0 * PI * core::f64::consts::E * p.var()[j]);
                }
                acc -= 0.5 * entropy + numeric::log_sum_exp(&lt);
            }
            PriorMode::Lossy => {
                let df = d as f64;
                for m in 0..bank.components_per_class {
                    let comp = &q.components()[m];
                    let mut sq = 0.0;
                    for j in 0..d {
                        let dm = p.mean()[j] - comp.mean()[j];
                        sq += dm * dm;
                    }
                    lt[m] = numeric::ln(q.weights()[m])
                        - 0.5 * df * numeric::ln(2.0 * PI * sqrt_d)
                        - sq / (2.0 * sqrt_d);
                }
                acc -= 0.5 * df * numeric::ln(PI * core::f64::consts::E * sqrt_d)
                    + numeric::log_sum_exp(&lt);
            }
        }
    }
    Ok(acc)
}

/// Frozen-coefficient averaged objective: the mean of the variational and
/// product objectives; the full-variant M-step targets this surrogate.
pub fn averaged_objective(
    batch: &PosteriorBatch,
    bank: &PriorBank,
    gamma: &[Vec<f64>],
    mode: PriorMode,
) -> Result<f64> {
    Ok(0.5 * variational_objective(batch, bank, gamma, mode)?
        + 0.5 * product_objective(batch, bank, mode)?)
}

/// Initialize a bank: uniform weights, squared-normal variances, first
/// center per class uniform over that class's posterior means, and each
/// further center drawn from a fresh big batch with probability
/// proportional to the squared distance to the centers already chosen
/// (k-means++ style). Degenerate all-zero distances fall back to uniform
/// sampling.
///
/// `draw` must produce a big batch of posteriors (size
/// `cfg.init_batch_size`, by contract of the caller). A batch containing
/// every class is requested per component round; after
/// `cfg.init_retries` failed draws the missing class is reported.
pub fn init_bank<R, F>(cfg: &BankConfig, mut draw: F, rng: &mut R) -> Result<PriorBank>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> PosteriorBatch,
{
    cfg.validate()?;
    let c_count = cfg.num_classes;
    let m_count = cfg.components_per_class;
    let d = cfg.dim;

    // Variances: a standard-normal draw squared, floored.
    let mut vars = vec![vec![vec![0.0; d]; m_count]; c_count];
    for class_vars in &mut vars {
        for comp_vars in class_vars {
            for v in comp_vars.iter_mut() {
                let s: f64 = rng.sample(StandardNormal);
                *v = s * s + cfg.hyper.var_floor;
            }
        }
    }

    let mut centers: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(m_count); c_count];
    for round in 0..m_count {
        let batch = draw_with_all_classes(cfg, &mut draw, rng)?;
        // Group candidate means by class, in batch order.
        let mut by_class: Vec<Vec<&[f64]>> = vec![Vec::new(); c_count];
        for i in 0..batch.len() {
            by_class[batch.label(i)].push(batch.posterior(i).mean());
        }
        for (c, candidates) in by_class.iter().enumerate() {
            let chosen = if round == 0 {
                candidates[rng.random_range(0..candidates.len())]
            } else {
                let weights: Vec<f64> = candidates
                    .iter()
                    .map(|mu| {
                        centers[c]
                            .iter()
                            .map(|ctr| squared_distance(mu, ctr))
                            .fold(f64::INFINITY, f64::min)
                    })
                    .collect();
                let total: f64 = weights.iter().sum();
                if total > 0.0 {
                    let mut u = rng.random::<f64>() * total;
                    let mut idx = candidates.len() - 1;
                    for (i, &w) in weights.iter().enumerate() {
                        if u < w {
                            idx = i;
                            break;
                        }
                        u -= w;
                    }
                    candidates[idx]
                } else {
                    candidates[rng.random_range(0..candidates.len())]
                }
            };
            centers[c].push(chosen.to_vec());
        }
    }

    let mut classes = Vec::with_capacity(c_count);
    let uniform = 1.0 / m_count as f64;
    for c in 0..c_count {
        let mut comps = Vec::with_capacity(m_count);
        for m in 0..m_count {
            comps.push(DiagGaussian::new(
                centers[c][m].clone(),
                vars[c][m].clone(),
            )?);
        }
        classes.push(GaussianMixture::new(comps, vec![uniform; m_count])?);
    }
    PriorBank::from_classes(classes, cfg.hyper)
}

fn draw_with_all_classes<R, F>(
    cfg: &BankConfig,
    draw: &mut F,
    rng: &mut R,
) -> Result<PosteriorBatch>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> PosteriorBatch,
{
    let mut missing = 0;
    for _ in 0..cfg.init_retries {
        let batch = draw(rng);
        let mut seen = vec![false; cfg.num_classes];
        for i in 0..batch.len() {
            let y = batch.label(i);
            if y >= cfg.num_classes {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    num_classes: cfg.num_classes,
                });
            }
            seen[y] = true;
        }
        match seen.iter().position(|&s| !s) {
            None => return Ok(batch),
            Some(c) => missing = c,
        }
    }
    Err(Error::MissingClass {
        class: missing,
        retries: cfg.init_retries,
    })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
