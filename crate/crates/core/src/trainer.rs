//! Desk-scale stochastic encoder/decoder training with selectable
//! regularizer and manual backpropagation.
//!
//! The encoder is an MLP (`input -> hidden` with tanh, then separate
//! affine heads for the posterior mean and pre-scale); the standard
//! deviation is `softplus` of the pre-scale head so it stays positive. The
//! decoder is a single affine layer with softmax. Latents are drawn with
//! the reparameterization trick; gradients flow through the decoder, the
//! sampling path, and the encoder, while the prior bank is treated as a
//! constant (it has its own update rule).
//!
//! For the lossy regularizer the *undistorted* latent feeds the decoder;
//! the distortion exists only inside the regularizer.

use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::gaussian::{DiagGaussian, VAR_FLOOR};
use crate::numeric;
use crate::prior::{
    init_bank, BankConfig, BankHyper, PosteriorBatch, PriorBank, PriorMode, RegEval,
};
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Which regularizer shapes the loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegKind {
    /// Plain cross-entropy.
    None,
    /// Per-sample KL to a fixed standard-normal prior.
    Vib,
    /// One learned Gaussian prior per class: the single-component
    /// specialization of the mixture engine.
    Cdvib,
    /// Gaussian-mixture prior, lossless variational regularizer. With one
    /// component per class this coincides with [`RegKind::Cdvib`] by
    /// construction.
    GmLossless,
    /// Gaussian-mixture prior, lossy averaged estimate (the headline
    /// regularizer).
    GmLossy,
}

impl RegKind {
    /// Prior-bank mode backing this kind, if any. The averaged lossless
    /// variant ([`PriorMode::LosslessEst`]) stays a library-level mode; the
    /// training kinds map to the variational lossless form and the lossy
    /// averaged form.
    pub fn prior_mode(self) -> Option<PriorMode> {
        match self {
            RegKind::Cdvib | RegKind::GmLossless => Some(PriorMode::LosslessVar),
            RegKind::GmLossy => Some(PriorMode::Lossy),
            RegKind::None | RegKind::Vib => None,
        }
    }
}

/// First-order optimizer choice. Adam coefficients default to the
/// moments used throughout the experiments; momentum SGD is the fallback.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Momentum { momentum: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Experiment description for one training run.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub latent_dim: usize,
    /// Mixture components per class (ignored by None/Vib; forced to 1 by
    /// Cdvib).
    pub mixture_size: usize,
    pub reg_kind: RegKind,
    /// Trade-off multiplier on the regularizer.
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub lr_decay: f64,
    pub optimizer: Optimizer,
    /// Latent samples per input during training.
    pub k_train: usize,
    /// Latent samples per input during evaluation.
    pub k_eval: usize,
    pub seed: u64,
    /// Bank hyperparameters (moving averages, noise, lossy ε, floor).
    pub bank: BankHyper,
    /// Big-batch size for bank initialization.
    pub init_batch_size: usize,
    pub init_retries: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            latent_dim: 16,
            mixture_size: 20,
            reg_kind: RegKind::None,
            beta: 0.0,
            epochs: 30,
            batch_size: 128,
            learning_rate: 1e-4,
            lr_decay: 0.97,
            optimizer: Optimizer::default(),
            k_train: 1,
            k_eval: 12,
            seed: 0,
            bank: BankHyper::default(),
            init_batch_size: 2048,
            init_retries: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.latent_dim == 0 || self.mixture_size == 0 {
            return Err(Error::InvalidArgument(
                "model dimensions must be positive".into(),
            ));
        }
        if self.batch_size == 0 || self.k_train == 0 || self.k_eval == 0 {
            return Err(Error::InvalidArgument(
                "batch size and sample counts must be positive".into(),
            ));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Domain {
                what: "beta",
                value: self.beta,
            });
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Domain {
                what: "learning_rate",
                value: self.learning_rate,
            });
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Domain {
                what: "lr_decay",
                value: self.lr_decay,
            });
        }
        self.bank.validate()
    }
}

/// Encoder MLP: affine + tanh into two affine heads (mean and pre-scale).
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    input_dim: usize,
    hidden_dim: usize,
    latent_dim: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w_mu: Vec<f64>,
    b_mu: Vec<f64>,
    w_rho: Vec<f64>,
    b_rho: Vec<f64>,
}

/// Single affine layer with softmax output.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderModel {
    latent_dim: usize,
    num_classes: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

fn xavier<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Vec<f64> {
    let limit = numeric::sqrt(6.0 / (rows + cols) as f64);
    (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit))
        .collect()
}

impl EncoderModel {
    /// Xavier-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        latent_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            input_dim,
            hidden_dim,
            latent_dim,
            w1: xavier(rng, hidden_dim, input_dim),
            b1: vec![0.0; hidden_dim],
            w_mu: xavier(rng, latent_dim, hidden_dim),
            b_mu: vec![0.0; latent_dim],
            w_rho: xavier(rng, latent_dim, hidden_dim),
            b_rho: vec![0.0; latent_dim],
        }
    }

    /// Build from explicit parameters (row-major weights).
    #[allow(clippy::too_many_arguments)]
    pub fn from_params(
        input_dim: usize,
        hidden_dim: usize,
        latent_dim: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w_mu: Vec<f64>,
        b_mu: Vec<f64>,
        w_rho: Vec<f64>,
        b_rho: Vec<f64>,
    ) -> Result<Self> {
        if w1.len() != hidden_dim * input_dim
            || b1.len() != hidden_dim
            || w_mu.len() != latent_dim * hidden_dim
            || b_mu.len() != latent_dim
            || w_rho.len() != latent_dim * hidden_dim
            || b_rho.len() != latent_dim
        {
            return Err(Error::InvalidArgument(
                "encoder parameter shapes do not match dims".into(),
            ));
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            latent_dim,
            w1,
            b1,
            w_mu,
            b_mu,
            w_rho,
            b_rho,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// Hidden activation plus the posterior parameters for one input.
    fn encode(&self, x: &[f64]) -> Result<EncoderState> {
        if x.len() != self.input_dim {
            return Err(Error::DimMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let h = self.hidden_dim;
        let d = self.latent_dim;
        let mut hidden = vec![0.0; h];
        for l in 0..h {
            let mut acc = self.b1[l];
            let row = &self.w1[l * self.input_dim..(l + 1) * self.input_dim];
            for (wx, &xv) in row.iter().zip(x) {
                acc += wx * xv;
            }
            hidden[l] = numeric::tanh(acc);
        }
        let mut mu = vec![0.0; d];
        let mut rho = vec![0.0; d];
        let mut sigma = vec![0.0; d];
        for j in 0..d {
            let mut am = self.b_mu[j];
            let mut ar = self.b_rho[j];
            let rm = &self.w_mu[j * h..(j + 1) * h];
            let rr = &self.w_rho[j * h..(j + 1) * h];
            for l in 0..h {
                am += rm[l] * hidden[l];
                ar += rr[l] * hidden[l];
            }
            mu[j] = am;
            rho[j] = ar;
            sigma[j] = softplus(ar);
        }
        Ok(EncoderState {
            hidden,
            mu,
            rho,
            sigma,
        })
    }

    /// Posterior distribution for one input.
    pub fn posterior(&self, x: &[f64]) -> Result<DiagGaussian> {
        let st = self.encode(x)?;
        DiagGaussian::new(st.mu.clone(), st.sigma.iter().map(|s| s * s).collect())
    }

    fn param_vecs_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w_mu,
            &mut self.b_mu,
            &mut self.w_rho,
            &mut self.b_rho,
        ]
    }

    fn num_params(&self) -> usize {
        self.w1.len()
            + self.b1.len()
            + self.w_mu.len()
            + self.b_mu.len()
            + self.w_rho.len()
            + self.b_rho.len()
    }
}

impl DecoderModel {
    pub fn init<R: Rng + ?Sized>(latent_dim: usize, num_classes: usize, rng: &mut R) -> Self {
        Self {
            latent_dim,
            num_classes,
            w: xavier(rng, num_classes, latent_dim),
            b: vec![0.0; num_classes],
        }
    }

    /// Build from explicit parameters (`w` is `num_classes x latent_dim`,
    /// row-major).
    pub fn from_params(
        latent_dim: usize,
        num_classes: usize,
        w: Vec<f64>,
        b: Vec<f64>,
    ) -> Result<Self> {
        if w.len() != num_classes * latent_dim || b.len() != num_classes {
            return Err(Error::InvalidArgument(
                "decoder parameter shapes do not match dims".into(),
            ));
        }
        Ok(Self {
            latent_dim,
            num_classes,
            w,
            b,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn logits(&self, u: &[f64], out: &mut [f64]) {
        for c in 0..self.num_classes {
            let mut acc = self.b[c];
            let row = &self.w[c * self.latent_dim..(c + 1) * self.latent_dim];
            for (wv, &uv) in row.iter().zip(u) {
                acc += wv * uv;
            }
            out[c] = acc;
        }
    }

    fn param_vecs_mut(&mut self) -> [&mut Vec<f64>; 2] {
        [&mut self.w, &mut self.b]
    }

    fn num_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

struct EncoderState {
    hidden: Vec<f64>,
    mu: Vec<f64>,
    rho: Vec<f64>,
    sigma: Vec<f64>,
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + numeric::ln_1p(numeric::exp(-libm::fabs(x)))
}

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + numeric::exp(-x))
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = numeric::exp(*x - m);
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Gradients mirroring the encoder and decoder parameter layout.
#[derive(Clone, Debug)]
pub struct ModelGrads {
    pub e_w1: Vec<f64>,
    pub e_b1: Vec<f64>,
    pub e_w_mu: Vec<f64>,
    pub e_b_mu: Vec<f64>,
    pub e_w_rho: Vec<f64>,
    pub e_b_rho: Vec<f64>,
    pub d_w: Vec<f64>,
    pub d_b: Vec<f64>,
}

impl ModelGrads {
    fn zeros(enc: &EncoderModel, dec: &DecoderModel) -> Self {
        Self {
            e_w1: vec![0.0; enc.w1.len()],
            e_b1: vec![0.0; enc.b1.len()],
            e_w_mu: vec![0.0; enc.w_mu.len()],
            e_b_mu: vec![0.0; enc.b_mu.len()],
            e_w_rho: vec![0.0; enc.w_rho.len()],
            e_b_rho: vec![0.0; enc.b_rho.len()],
            d_w: vec![0.0; dec.w.len()],
            d_b: vec![0.0; dec.b.len()],
        }
    }

    fn vecs(&self) -> [&Vec<f64>; 8] {
        [
            &self.e_w1,
            &self.e_b1,
            &self.e_w_mu,
            &self.e_b_mu,
            &self.e_w_rho,
            &self.e_b_rho,
            &self.d_w,
            &self.d_b,
        ]
    }

    /// Flattened copy in canonical parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for v in self.vecs() {
            out.extend_from_slice(v);
        }
        out
    }
}

/// Result of one loss evaluation over a batch.
pub struct BatchEval {
    /// Mean cross-entropy plus `beta * reg / b`, in nats.
    pub loss: f64,
    /// Raw regularizer value summed over the batch (0 when `beta == 0` or
    /// the kind carries no regularizer).
    pub reg_value: f64,
    pub grads: ModelGrads,
    /// The batch posteriors, for the bank update step.
    pub posteriors: PosteriorBatch,
    /// Argmax of the k-averaged class probabilities, per sample.
    pub predictions: Vec<usize>,
}

/// Stochastic forward pass: the posterior for `x` and the average of the
/// decoder softmax over `k` reparameterized latent samples.
pub fn forward<R: Rng + ?Sized>(
    enc: &EncoderModel,
    dec: &DecoderModel,
    x: &[f64],
    rng: &mut R,
    k: usize,
) -> Result<(DiagGaussian, Vec<f64>)> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    let st = enc.encode(x)?;
    let d = enc.latent_dim;
    let mut probs = vec![0.0; dec.num_classes];
    let mut logits = vec![0.0; dec.num_classes];
    let mut u = vec![0.0; d];
    for _ in 0..k {
        for j in 0..d {
            let xi: f64 = rng.sample(StandardNormal);
            u[j] = st.mu[j] + st.sigma[j] * xi;
        }
        dec.logits(&u, &mut logits);
        softmax_in_place(&mut logits);
        for (p, &l) in probs.iter_mut().zip(&logits) {
            *p += l;
        }
    }
    for p in &mut probs {
        *p /= k as f64;
    }
    let posterior = DiagGaussian::new(st.mu.clone(), st.sigma.iter().map(|s| s * s).collect())?;
    Ok((posterior, probs))
}

/// KL of every posterior against the fixed standard-normal prior, with
/// analytic gradients; the classic information-bottleneck regularizer.
pub fn vib_regularizer(batch: &PosteriorBatch) -> RegEval {
    let b = batch.len();
    let d = batch.dim();
    let mut value = 0.0;
    let mut grad_mean = Vec::with_capacity(b);
    let mut grad_var = Vec::with_capacity(b);
    for i in 0..b {
        let p = batch.posterior(i);
        let mut gm = vec![0.0; d];
        let mut gv = vec![0.0; d];
        for j in 0..d {
            let v = p.var()[j];
            let mu = p.mean()[j];
            value += -0.5 * numeric::ln(v) + 0.5 * (v + mu * mu) - 0.5;
            gm[j] = mu;
            gv[j] = 0.5 - 0.5 / v;
        }
        grad_mean.push(gm);
        grad_var.push(gv);
    }
    RegEval {
        value,
        grad_mean,
        grad_var,
    }
}

/// Loss and parameter gradients on a batch with the latent noise supplied
/// explicitly (`xi` is `b * k * d` standard normals). Exposed so gradient
/// oracles can re-evaluate the identical loss under perturbed parameters.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_grads_fixed_noise(
    enc: &EncoderModel,
    dec: &DecoderModel,
    xs: &[&[f64]],
    ys: &[usize],
    xi: &[f64],
    k: usize,
    reg_kind: RegKind,
    beta: f64,
    bank: Option<&PriorBank>,
) -> Result<BatchEval> {
    let b = xs.len();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    if ys.len() != b {
        return Err(Error::DimMismatch {
            expected: b,
            got: ys.len(),
        });
    }
    let d = enc.latent_dim;
    let c_count = dec.num_classes;
    if xi.len() != b * k * d {
        return Err(Error::DimMismatch {
            expected: b * k * d,
            got: xi.len(),
        });
    }
    for &y in ys {
        if y >= c_count {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_classes: c_count,
            });
        }
    }

    let mut grads = ModelGrads::zeros(enc, dec);
    let mut ce_total = 0.0;
    let mut predictions = Vec::with_capacity(b);
    let scale = 1.0 / (b * k) as f64;

    let mut states = Vec::with_capacity(b);
    let mut labels = Vec::with_capacity(b);
    let mut posts = Vec::with_capacity(b);
    for (i, x) in xs.iter().enumerate() {
        let st = enc.encode(x)?;
        posts.push(DiagGaussian::new(
            st.mu.clone(),
            st.sigma.iter().map(|s| s * s).collect(),
        )?);
        states.push(st);
        labels.push(ys[i]);
    }
    let posteriors = PosteriorBatch::new(labels, posts)?;

    // Regularizer on the posteriors; the bank is a constant here.
    let use_reg = beta > 0.0 && reg_kind != RegKind::None;
    let reg = if use_reg {
        Some(match reg_kind {
            RegKind::Vib => vib_regularizer(&posteriors),
            RegKind::Cdvib | RegKind::GmLossless | RegKind::GmLossy => {
                let bank = bank.ok_or_else(|| {
                    Error::InvalidArgument("regularizer kind requires a prior bank".into())
                })?;
                let mode = reg_kind.prior_mode().expect("bank-backed kind");
                bank.regularizer(&posteriors, mode)?
            }
            RegKind::None => unreachable!(),
        })
    } else {
        None
    };

    let mut logits = vec![0.0; c_count];
    let mut u = vec![0.0; d];
    let mut avg_probs = vec![0.0; c_count];
    let mut d_mu = vec![0.0; d];
    let mut d_sigma = vec![0.0; d];
    let mut d_hidden = vec![0.0; enc.hidden_dim];

    for i in 0..b {
        let st = &states[i];
        let x = xs[i];
        let y = ys[i];
        for v in avg_probs.iter_mut() {
            *v = 0.0;
        }
        for v in d_mu.iter_mut() {
            *v = 0.0;
        }
        for v in d_sigma.iter_mut() {
            *v = 0.0;
        }

        for t in 0..k {
            let noise = &xi[(i * k + t) * d..(i * k + t + 1) * d];
            for j in 0..d {
                u[j] = st.mu[j] + st.sigma[j] * noise[j];
            }
            dec.logits(&u, &mut logits);
            softmax_in_place(&mut logits);
            ce_total += -numeric::ln(logits[y]) * scale;
            for (ap, &p) in avg_probs.iter_mut().zip(&logits) {
                *ap += p / k as f64;
            }
            // dL/dlogits = (p - onehot) * scale
            for c in 0..c_count {
                let dl = (logits[c] - if c == y { 1.0 } else { 0.0 }) * scale;
                grads.d_b[c] += dl;
                let row = &dec.w[c * d..(c + 1) * d];
                let grow = &mut grads.d_w[c * d..(c + 1) * d];
                for j in 0..d {
                    grow[j] += dl * u[j];
                    d_mu[j] += dl * row[j];
                    d_sigma[j] += dl * row[j] * noise[j];
                }
            }
        }

        let mut best = 0usize;
        for c in 1..c_count {
            if avg_probs[c] > avg_probs[best] {
                best = c;
            }
        }
        predictions.push(best);

        if let Some(reg) = &reg {
            let w = beta / b as f64;
            for j in 0..d {
                d_mu[j] += w * reg.grad_mean[i][j];
                // Chain through var = sigma^2 unless the posterior variance
                // was clamped at the floor (then the clamp has zero slope).
                let s = st.sigma[j];
                if s * s >= VAR_FLOOR {
                    d_sigma[j] += w * reg.grad_var[i][j] * 2.0 * s;
                }
            }
        }

        // Heads back to the hidden layer.
        for v in d_hidden.iter_mut() {
            *v = 0.0;
        }
        let h = enc.hidden_dim;
        for j in 0..d {
            let d_rho = d_sigma[j] * logistic(st.rho[j]);
            grads.e_b_mu[j] += d_mu[j];
            grads.e_b_rho[j] += d_rho;
            let rm = &enc.w_mu[j * h..(j + 1) * h];
            let rr = &enc.w_rho[j * h..(j + 1) * h];
            let gm = &mut grads.e_w_mu[j * h..(j + 1) * h];
            let gr = &mut grads.e_w_rho[j * h..(j + 1) * h];
            for l in 0..h {
                gm[l] += d_mu[j] * st.hidden[l];
                gr[l] += d_rho * st.hidden[l];
                d_hidden[l] += d_mu[j] * rm[l] + d_rho * rr[l];
            }
        }
        let p_dim = enc.input_dim;
        for l in 0..h {
            let dz = (1.0 - st.hidden[l] * st.hidden[l]) * d_hidden[l];
            grads.e_b1[l] += dz;
            let gw = &mut grads.e_w1[l * p_dim..(l + 1) * p_dim];
            for (g, &xv) in gw.iter_mut().zip(x) {
                *g += dz * xv;
            }
        }
    }

    let reg_value = reg.as_ref().map(|r| r.value).unwrap_or(0.0);
    let loss = ce_total
        + if use_reg {
            beta * reg_value / b as f64
        } else {
            0.0
        };
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    Ok(BatchEval {
        loss,
        reg_value,
        grads,
        posteriors,
        predictions,
    })
}

/// [`loss_and_grads_fixed_noise`] with the latent noise drawn from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_grads<R: Rng + ?Sized>(
    enc: &EncoderModel,
    dec: &DecoderModel,
    xs: &[&[f64]],
    ys: &[usize],
    k: usize,
    rng: &mut R,
    reg_kind: RegKind,
    beta: f64,
    bank: Option<&PriorBank>,
) -> Result<BatchEval> {
    let n = xs.len() * k * enc.latent_dim;
    let mut xi = Vec::with_capacity(n);
    for _ in 0..n {
        xi.push(rng.sample::<f64, _>(StandardNormal));
    }
    loss_and_grads_fixed_noise(enc, dec, xs, ys, &xi, k, reg_kind, beta, bank)
}

struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimizerState {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step(
        &mut self,
        opt: &Optimizer,
        lr: f64,
        enc: &mut EncoderModel,
        dec: &mut DecoderModel,
        grads: &ModelGrads,
    ) {
        self.t += 1;
        let gvecs = grads.vecs();
        let params: Vec<&mut Vec<f64>> = enc
            .param_vecs_mut()
            .into_iter()
            .chain(dec.param_vecs_mut())
            .collect();
        let mut offset = 0usize;
        for (params, g) in params.into_iter().zip(gvecs) {
            match *opt {
                Optimizer::Adam { beta1, beta2, eps } => {
                    let bc1 = 1.0 - libm::pow(beta1, self.t as f64);
                    let bc2 = 1.0 - libm::pow(beta2, self.t as f64);
                    for (i, p) in params.iter_mut().enumerate() {
                        let gi = g[i];
                        let m = &mut self.m[offset + i];
                        let v = &mut self.v[offset + i];
                        *m = beta1 * *m + (1.0 - beta1) * gi;
                        *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                        *p -= lr * (*m / bc1) / (numeric::sqrt(*v / bc2) + eps);
                    }
                }
                Optimizer::Momentum { momentum } => {
                    for (i, p) in params.iter_mut().enumerate() {
                        let m = &mut self.m[offset + i];
                        *m = momentum * *m + g[i];
                        *p -= lr * *m;
                    }
                }
            }
            offset += params.len();
        }
    }
}

/// Per-epoch training record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Mean per-sample regularizer value over the epoch, in nats.
    pub reg_value: f64,
    /// train_acc - test_acc.
    pub gap: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub epochs: Vec<EpochRecord>,
}

/// Everything a finished run hands back.
pub struct TrainOutcome {
    pub metrics: RunMetrics,
    pub encoder: EncoderModel,
    pub decoder: DecoderModel,
    pub bank: Option<PriorBank>,
}

// Distinct, fixed stream tags so the independent RNG streams never alias.
const STREAM_MODEL: u64 = 0x243F_6A88_85A3_08D3;
const STREAM_BANK: u64 = 0x1319_8A2E_0370_7344;
const STREAM_NOISE: u64 = 0xA409_3822_299F_31D0;
const STREAM_EVAL: u64 = 0x082E_FA98_EC4E_6C89;

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ tag)
}

fn eval_stream(seed: u64, epoch: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ STREAM_EVAL ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Train an encoder/decoder pair on `train_ds`, evaluating on `test_ds`
/// after every epoch. Fully deterministic given `cfg.seed`. With a
/// bank-backed regularizer and `beta > 0`, every iteration is followed by
/// responsibilities → M-step → moving-average bank update; with
/// `beta == 0` the run degenerates to plain cross-entropy training and the
/// recorded regularizer value is 0 for every kind.
pub fn train(cfg: &TrainConfig, train_ds: &Dataset, test_ds: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_ds.is_empty() || test_ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train_ds.feature_dim() != test_ds.feature_dim() {
        return Err(Error::DimMismatch {
            expected: train_ds.feature_dim(),
            got: test_ds.feature_dim(),
        });
    }
    let num_classes = train_ds.num_classes();
    let mut model_rng = stream(cfg.seed, STREAM_MODEL);
    let mut enc = EncoderModel::init(
        train_ds.feature_dim(),
        cfg.hidden_dim,
        cfg.latent_dim,
        &mut model_rng,
    );
    let mut dec = DecoderModel::init(cfg.latent_dim, num_classes, &mut model_rng);

    let use_bank = cfg.reg_kind.prior_mode().is_some() && cfg.beta > 0.0;
    let mut bank_rng = stream(cfg.seed, STREAM_BANK);
    let mut bank = if use_bank {
        let m = if cfg.reg_kind == RegKind::Cdvib {
            1
        } else {
            cfg.mixture_size
        };
        let bank_cfg = BankConfig {
            num_classes,
            components_per_class: m,
            dim: cfg.latent_dim,
            hyper: cfg.bank,
            init_batch_size: cfg.init_batch_size.min(train_ds.len()).max(1),
            init_retries: cfg.init_retries,
        };
        let draw = |rng: &mut ChaCha8Rng| {
            let mut labels = Vec::with_capacity(bank_cfg.init_batch_size);
            let mut posts = Vec::with_capacity(bank_cfg.init_batch_size);
            for _ in 0..bank_cfg.init_batch_size {
                let i = rng.random_range(0..train_ds.len());
                labels.push(train_ds.label(i));
                posts.push(
                    enc.posterior(train_ds.row(i))
                        .expect("encoder matches dataset"),
                );
            }
            PosteriorBatch::new(labels, posts).expect("non-empty init batch")
        };
        Some(init_bank(&bank_cfg, draw, &mut bank_rng)?)
    } else {
        None
    };

    let mut noise_rng = stream(cfg.seed, STREAM_NOISE);
    let mut opt_state = OptimizerState::new(enc.num_params() + dec.num_params());
    let mode = cfg.reg_kind.prior_mode();
    let mut metrics = RunMetrics::default();

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate * libm::pow(cfg.lr_decay, epoch as f64);
        let mut epoch_loss = 0.0;
        let mut epoch_reg = 0.0;
        let mut correct = 0usize;
        for batch_idx in batches(train_ds.len(), cfg.batch_size, cfg.seed, epoch as u64) {
            let xs: Vec<&[f64]> = batch_idx.iter().map(|&i| train_ds.row(i)).collect();
            let ys: Vec<usize> = batch_idx.iter().map(|&i| train_ds.label(i)).collect();
            let eval = loss_and_grads(
                &enc,
                &dec,
                &xs,
                &ys,
                cfg.k_train,
                &mut noise_rng,
                cfg.reg_kind,
                cfg.beta,
                bank.as_ref(),
            )?;
            opt_state.step(&cfg.optimizer, lr, &mut enc, &mut dec, &eval.grads);
            if let (Some(bank_ref), Some(mode)) = (bank.as_mut(), mode) {
                if cfg.beta > 0.0 {
                    let resp = bank_ref.responsibilities(&eval.posteriors, mode)?;
                    let prop = bank_ref.m_step(&eval.posteriors, &resp)?;
                    *bank_ref = bank_ref.apply_ma_update(&prop, &mut bank_rng)?;
                }
            }
            let bsize = batch_idx.len() as f64;
            epoch_loss += eval.loss * bsize;
            epoch_reg += eval.reg_value;
            correct += eval
                .predictions
                .iter()
                .zip(&ys)
                .filter(|(p, y)| p == y)
                .count();
        }
        let n = train_ds.len() as f64;
        let train_acc = correct as f64 / n;
        let mut eval_rng = eval_stream(cfg.seed, epoch as u64);
        let test_acc = evaluate(&enc, &dec, test_ds, cfg.k_eval, &mut eval_rng)?;
        metrics.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / n,
            train_acc,
            test_acc,
            reg_value: epoch_reg / n,
            gap: train_acc - test_acc,
        });
    }

    Ok(TrainOutcome {
        metrics,
        encoder: enc,
        decoder: dec,
        bank,
    })
}

/// Accuracy of the argmax of `k_eval`-sample-averaged class probabilities.
pub fn evaluate<R: Rng + ?Sized>(
    enc: &EncoderModel,
    dec: &DecoderModel,
    ds: &Dataset,
    k_eval: usize,
    rng: &mut R,
) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for i in 0..ds.len() {
        let (_, probs) = forward(enc, dec, ds.row(i), rng, k_eval)?;
        let mut best = 0usize;
        for c in 1..probs.len() {
            if probs[c] > probs[best] {
                best = c;
            }
        }
        if best == ds.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Shape of the random instances used by the gradient master check.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckDims {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub num_classes: usize,
    pub mixture_size: usize,
    pub batch: usize,
}

impl Default for GradCheckDims {
    fn default() -> Self {
        Self {
            input_dim: 6,
            hidden_dim: 8,
            latent_dim: 4,
            num_classes: 3,
            mixture_size: 2,
            batch: 5,
        }
    }
}

/// Compare the analytic gradient of the full loss against central finite
/// differences (step `1e-5`) on a random small instance. Returns the
/// vector relative error `‖ga - gn‖ / (‖ga‖ + ‖gn‖)` over all encoder and
/// decoder parameters.
pub fn grad_check(kind: RegKind, seed: u64, dims: &GradCheckDims) -> Result<f64> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1));
    let enc = EncoderModel::init(dims.input_dim, dims.hidden_dim, dims.latent_dim, &mut rng);
    let dec = DecoderModel::init(dims.latent_dim, dims.num_classes, &mut rng);

    let beta = 0.7;
    let b = dims.batch;
    let xs_data: Vec<Vec<f64>> = (0..b)
        .map(|_| {
            (0..dims.input_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let ys: Vec<usize> = (0..b)
        .map(|_| rng.random_range(0..dims.num_classes))
        .collect();
    let k = 1usize;
    let xi: Vec<f64> = (0..b * k * dims.latent_dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();

    let bank = if kind.prior_mode().is_some() {
        let m = if kind == RegKind::Cdvib {
            1
        } else {
            dims.mixture_size
        };
        let mut classes = Vec::with_capacity(dims.num_classes);
        for _ in 0..dims.num_classes {
            let comps: Vec<DiagGaussian> = (0..m)
                .map(|_| {
                    let mean = (0..dims.latent_dim)
                        .map(|_| rng.random_range(-1.5..1.5))
                        .collect();
                    let var = (0..dims.latent_dim)
                        .map(|_| rng.random_range(0.4..2.0))
                        .collect();
                    DiagGaussian::new(mean, var).expect("valid component")
                })
                .collect();
            let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            let mix =
                crate::gaussian::GaussianMixture::new(comps, raw.iter().map(|w| w / sum).collect())
                    .expect("valid mixture");
            classes.push(mix);
        }
        Some(PriorBank::from_classes(classes, BankHyper::default())?)
    } else {
        None
    };

    let xs: Vec<&[f64]> = xs_data.iter().map(|v| v.as_slice()).collect();
    let eval = loss_and_grads_fixed_noise(&enc, &dec, &xs, &ys, &xi, k, kind, beta, bank.as_ref())?;
    let analytic = eval.grads.flatten();

    let h = 1e-5;
    let mut numeric_grad = Vec::with_capacity(analytic.len());
    let loss_at = |enc: &EncoderModel, dec: &DecoderModel| -> Result<f64> {
        Ok(loss_and_grads_fixed_noise(enc, dec, &xs, &ys, &xi, k, kind, beta, bank.as_ref())?.loss)
    };
    // Walk parameters in the same canonical order as `ModelGrads::flatten`.
    for vec_idx in 0..8 {
        let len = {
            let mut e = enc.clone();
            let mut d = dec.clone();
            param_vec_len(&mut e, &mut d, vec_idx)
        };
        for i in 0..len {
            let mut ep = enc.clone();
            let mut dp = dec.clone();
            *param_entry(&mut ep, &mut dp, vec_idx, i) += h;
            let up = loss_at(&ep, &dp)?;
            let mut em = enc.clone();
            let mut dm = dec.clone();
            *param_entry(&mut em, &mut dm, vec_idx, i) -= h;
            let down = loss_at(&em, &dm)?;
            numeric_grad.push((up - down) / (2.0 * h));
        }
    }

    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&a, &g) in analytic.iter().zip(&numeric_grad) {
        diff += (a - g) * (a - g);
        na += a * a;
        nb += g * g;
    }
    Ok(numeric::sqrt(diff) / (numeric::sqrt(na) + numeric::sqrt(nb) + 1e-300))
}

fn param_vec_len(enc: &mut EncoderModel, dec: &mut DecoderModel, vec_idx: usize) -> usize {
    if vec_idx < 6 {
        enc.param_vecs_mut()[vec_idx].len()
    } else {
        dec.param_vecs_mut()[vec_idx - 6].len()
    }
}

fn param_entry<'a>(
    enc: &'a mut EncoderModel,
    dec: &'a mut DecoderModel,
    vec_idx: usize,
    i: usize,
) -> &'a mut f64 {
    if vec_idx < 6 {
        &mut enc.param_vecs_mut()[vec_idx][i]
    } else {
        &mut dec.param_vecs_mut()[vec_idx - 6][i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_blobs, BlobConfig, Split};
    use approx::assert_abs_diff_eq;

    fn tiny_blobs(seed: u64, separation: f64) -> (Dataset, Dataset) {
        synth_blobs(&BlobConfig {
            num_classes: 3,
            feature_dim: 6,
            samples_per_class: 60,
            separation,
            noise: 0.6,
            seed,
        })
        .unwrap()
    }

    fn tiny_config(kind: RegKind, beta: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            hidden_dim: 12,
            latent_dim: 4,
            mixture_size: 2,
            reg_kind: kind,
            beta,
            epochs: 4,
            batch_size: 32,
            learning_rate: 5e-3,
            init_batch_size: 64,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn forward_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = EncoderModel::init(5, 8, 3, &mut rng);
        let dec = DecoderModel::init(3, 4, &mut rng);
        let x = [0.3, -0.5, 1.0, 0.0, 0.2];

        let (post, probs) = forward(&enc, &dec, &x, &mut ChaCha8Rng::seed_from_u64(7), 6).unwrap();
        let (post2, probs2) =
            forward(&enc, &dec, &x, &mut ChaCha8Rng::seed_from_u64(7), 6).unwrap();
        assert_eq!(post, post2);
        assert_eq!(probs, probs2);
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9);
        assert!(forward(&enc, &dec, &x[..3], &mut rng, 1).is_err());
    }

    #[test]
    fn forward_deterministic_latent_ignores_k() {
        // Pre-scale bias of -40 pins sigma at ~4e-18: the latent is its mean.
        let enc = EncoderModel::from_params(
            2,
            2,
            2,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0; 2],
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0; 2],
            vec![0.0; 4],
            vec![-40.0; 2],
        )
        .unwrap();
        let dec = DecoderModel::from_params(2, 2, vec![3.0, 0.0, -3.0, 0.0], vec![0.0; 2]).unwrap();
        let x = [0.8, -0.4];
        let (_, p1) = forward(&enc, &dec, &x, &mut ChaCha8Rng::seed_from_u64(1), 1).unwrap();
        let (_, p100) = forward(&enc, &dec, &x, &mut ChaCha8Rng::seed_from_u64(2), 100).unwrap();
        for (a, b) in p1.iter().zip(&p100) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn vib_regularizer_values_and_gradients() {
        let d = 4;
        let standard = DiagGaussian::standard(d);
        let batch = PosteriorBatch::new(vec![0], vec![standard]).unwrap();
        assert_eq!(vib_regularizer(&batch).value, 0.0);

        let shifted = DiagGaussian::new(vec![1.0; d], vec![1.0; d]).unwrap();
        let batch = PosteriorBatch::new(vec![0], vec![shifted]).unwrap();
        assert_abs_diff_eq!(vib_regularizer(&batch).value, 2.0, epsilon = 1e-14);

        // Central differences on the value.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let var: Vec<f64> = (0..d).map(|_| rng.random_range(0.3..2.0)).collect();
        let post = DiagGaussian::new(mean.clone(), var.clone()).unwrap();
        let batch = PosteriorBatch::new(vec![0], vec![post]).unwrap();
        let eval = vib_regularizer(&batch);
        let h = 1e-6;
        for j in 0..d {
            let perturb = |dm: f64, dv: f64| {
                let mut m2 = mean.clone();
                let mut v2 = var.clone();
                m2[j] += dm;
                v2[j] += dv;
                let b =
                    PosteriorBatch::new(vec![0], vec![DiagGaussian::new(m2, v2).unwrap()]).unwrap();
                vib_regularizer(&b).value
            };
            let gm = (perturb(h, 0.0) - perturb(-h, 0.0)) / (2.0 * h);
            let gv = (perturb(0.0, h) - perturb(0.0, -h)) / (2.0 * h);
            assert_abs_diff_eq!(gm, eval.grad_mean[0][j], epsilon = 1e-6);
            assert_abs_diff_eq!(gv, eval.grad_var[0][j], epsilon = 1e-6);
        }
    }

    #[test]
    fn clamped_variance_gradients_match_finite_differences() {
        // A pre-scale bias of -25 pins sigma^2 far below the variance
        // floor, so the posterior variance is clamped and the regularizer's
        // variance chain must carry zero slope. The analytic gradient has
        // to agree with central differences through that regime.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (p, h, d, c, b) = (4usize, 5usize, 3usize, 2usize, 4usize);
        let mut enc = EncoderModel::init(p, h, d, &mut rng);
        for v in enc.param_vecs_mut()[5].iter_mut() {
            *v = -25.0; // b_rho
        }
        let dec = DecoderModel::init(d, c, &mut rng);
        let xs_data: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let xs: Vec<&[f64]> = xs_data.iter().map(|v| v.as_slice()).collect();
        let ys: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
        let xi: Vec<f64> = (0..b * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();

        let eval = loss_and_grads_fixed_noise(
            &enc,
            &dec,
            &xs,
            &ys,
            &xi,
            1,
            RegKind::Vib,
            0.5,
            None,
        )
        .unwrap();
        // Sanity: variances really are clamped.
        assert!(eval.posteriors.posterior(0).var().iter().all(|&v| v == VAR_FLOOR));

        let analytic = eval.grads.flatten();
        let fd_h = 1e-5;
        let mut numeric_grad = Vec::with_capacity(analytic.len());
        for vec_idx in 0..8usize {
            let len = {
                let mut e = enc.clone();
                let mut dmut = dec.clone();
                param_vec_len(&mut e, &mut dmut, vec_idx)
            };
            for i in 0..len {
                let mut ep = enc.clone();
                let mut dp = dec.clone();
                *param_entry(&mut ep, &mut dp, vec_idx, i) += fd_h;
                let up = loss_and_grads_fixed_noise(
                    &ep, &dp, &xs, &ys, &xi, 1, RegKind::Vib, 0.5, None,
                )
                .unwrap()
                .loss;
                let mut em = enc.clone();
                let mut dm = dec.clone();
                *param_entry(&mut em, &mut dm, vec_idx, i) -= fd_h;
                let down = loss_and_grads_fixed_noise(
                    &em, &dm, &xs, &ys, &xi, 1, RegKind::Vib, 0.5, None,
                )
                .unwrap()
                .loss;
                numeric_grad.push((up - down) / (2.0 * fd_h));
            }
        }
        let mut diff = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for (&a, &g) in analytic.iter().zip(&numeric_grad) {
            diff += (a - g) * (a - g);
            na += a * a;
            nb += g * g;
        }
        let rel = diff.sqrt() / (na.sqrt() + nb.sqrt() + 1e-300);
        assert!(rel <= 1e-4, "clamped-variance gradient rel err {rel}");
    }

    #[test]
    fn momentum_fallback_trains() {
        let (train_ds, test_ds) = tiny_blobs(12, 3.0);
        let cfg = TrainConfig {
            optimizer: Optimizer::Momentum { momentum: 0.9 },
            learning_rate: 1e-2,
            ..tiny_config(RegKind::Vib, 0.01, 2)
        };
        let a = train(&cfg, &train_ds, &test_ds).unwrap();
        let b = train(&cfg, &train_ds, &test_ds).unwrap();
        assert_eq!(a.metrics, b.metrics);
        let last = a.metrics.epochs.last().unwrap();
        assert!(last.train_loss.is_finite());
        assert!(last.train_acc > 1.0 / 3.0, "momentum run did not learn");
    }

    #[test]
    fn beta_zero_runs_identical_across_kinds() {
        let (train_ds, test_ds) = tiny_blobs(5, 2.5);
        let reference = train(&tiny_config(RegKind::None, 0.0, 9), &train_ds, &test_ds).unwrap();
        for kind in [
            RegKind::Vib,
            RegKind::Cdvib,
            RegKind::GmLossless,
            RegKind::GmLossy,
        ] {
            let run = train(&tiny_config(kind, 0.0, 9), &train_ds, &test_ds).unwrap();
            assert_eq!(
                run.metrics, reference.metrics,
                "kind {kind:?} diverged at beta = 0"
            );
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (train_ds, test_ds) = tiny_blobs(6, 2.5);
        let cfg = tiny_config(RegKind::GmLossy, 0.05, 11);
        let a = train(&cfg, &train_ds, &test_ds).unwrap();
        let b = train(&cfg, &train_ds, &test_ds).unwrap();
        assert_eq!(a.metrics, b.metrics);
        let (ba, bb) = (a.bank.unwrap(), b.bank.unwrap());
        for c in 0..3 {
            assert_eq!(ba.class(c).components(), bb.class(c).components());
        }
    }

    #[test]
    fn zero_epochs_yields_empty_metrics_and_initialized_bank() {
        let (train_ds, test_ds) = tiny_blobs(7, 2.5);
        let mut cfg = tiny_config(RegKind::GmLossy, 0.1, 3);
        cfg.epochs = 0;
        let out = train(&cfg, &train_ds, &test_ds).unwrap();
        assert!(out.metrics.epochs.is_empty());
        let bank = out.bank.expect("bank initialized even with zero epochs");
        assert_eq!(bank.num_classes(), 3);
        assert_eq!(bank.components_per_class(), 2);
    }

    #[test]
    fn separable_blobs_reach_high_train_accuracy() {
        let (train_ds, test_ds) = synth_blobs(&BlobConfig {
            num_classes: 3,
            feature_dim: 6,
            samples_per_class: 100,
            separation: 4.0,
            noise: 0.4,
            seed: 2,
        })
        .unwrap();
        let cfg = TrainConfig {
            hidden_dim: 16,
            latent_dim: 4,
            reg_kind: RegKind::None,
            beta: 0.0,
            epochs: 20,
            batch_size: 32,
            learning_rate: 5e-3,
            seed: 1,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &train_ds, &test_ds).unwrap();
        let last = out.metrics.epochs.last().unwrap();
        assert!(last.train_acc >= 0.95, "train acc {}", last.train_acc);
        assert!(last.train_loss.is_finite());
    }

    #[test]
    fn shuffled_labels_stay_at_chance() {
        let (mut train_ds, test_ds) = tiny_blobs(8, 3.0);
        // Reassign labels deterministically, breaking any feature-label link.
        let shuffled: Vec<usize> = (0..train_ds.len()).map(|i| (i * 7 + 1) % 3).collect();
        let feats: Vec<f64> = (0..train_ds.len())
            .flat_map(|i| train_ds.row(i).to_vec())
            .collect();
        train_ds = Dataset::new(feats, 6, shuffled, 3, Split::Train).unwrap();
        let cfg = TrainConfig {
            hidden_dim: 8,
            latent_dim: 3,
            reg_kind: RegKind::None,
            epochs: 8,
            batch_size: 32,
            learning_rate: 2e-3,
            seed: 4,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &train_ds, &test_ds).unwrap();
        let acc = out.metrics.epochs.last().unwrap().test_acc;
        // Binomial noise around 1/C on the test split.
        let sigma = (1.0 / 3.0 * 2.0 / 3.0 / test_ds.len() as f64).sqrt();
        assert!((acc - 1.0 / 3.0).abs() <= 4.0 * sigma, "acc {acc}");
    }

    #[test]
    fn perfect_decoder_on_deterministic_latents_scores_one() {
        // Latents pinned at their means (sigma ~ 4e-18) and a decoder whose
        // sign decides the class: accuracy is exactly 1.
        let enc = EncoderModel::from_params(
            1,
            1,
            1,
            vec![1.0],
            vec![0.0],
            vec![1.0],
            vec![0.0],
            vec![0.0],
            vec![-40.0],
        )
        .unwrap();
        let dec = DecoderModel::from_params(1, 2, vec![-8.0, 8.0], vec![0.0, 0.0]).unwrap();
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..30 {
            let y = i % 2;
            feats.push(if y == 0 { -1.0 } else { 1.0 });
            labels.push(y);
        }
        let ds = Dataset::new(feats, 1, labels, 2, Split::Test).unwrap();
        let acc = evaluate(&enc, &dec, &ds, 12, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn more_eval_samples_reduce_accuracy_variance() {
        // Wide posteriors near the decision boundary: averaging over more
        // latent draws stabilizes the prediction.
        let n = 40;
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = i % 2;
            feats.push(if y == 0 { -0.3 } else { 0.3 });
            labels.push(y);
        }
        let ds = Dataset::new(feats, 1, labels, 2, Split::Test).unwrap();
        let enc = EncoderModel::from_params(
            1,
            1,
            1,
            vec![1.0],
            vec![0.0],
            vec![1.0],
            vec![0.0],
            vec![0.0],
            vec![1.0],
        )
        .unwrap();
        let dec = DecoderModel::from_params(1, 2, vec![-5.0, 5.0], vec![0.0, 0.0]).unwrap();
        let spread = |k: usize| -> f64 {
            let accs: Vec<f64> = (0..30)
                .map(|s| {
                    evaluate(&enc, &dec, &ds, k, &mut ChaCha8Rng::seed_from_u64(1000 + s)).unwrap()
                })
                .collect();
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (accs.len() - 1) as f64
        };
        assert!(spread(12) < spread(1), "12-sample variance not lower");
    }

    #[test]
    fn gradient_master_check_quick() {
        let dims = GradCheckDims::default();
        for kind in [
            RegKind::None,
            RegKind::Vib,
            RegKind::Cdvib,
            RegKind::GmLossless,
            RegKind::GmLossy,
        ] {
            for seed in 0..2u64 {
                let err = grad_check(kind, seed, &dims).unwrap();
                assert!(err <= 1e-4, "kind {kind:?} seed {seed}: rel err {err}");
            }
        }
    }

    #[test]
    fn cdvib_equals_single_component_lossless() {
        let (train_ds, test_ds) = tiny_blobs(10, 2.5);
        let mut a_cfg = tiny_config(RegKind::Cdvib, 0.2, 21);
        let mut b_cfg = tiny_config(RegKind::GmLossless, 0.2, 21);
        a_cfg.mixture_size = 1;
        b_cfg.mixture_size = 1;
        let a = train(&a_cfg, &train_ds, &test_ds).unwrap();
        let b = train(&b_cfg, &train_ds, &test_ds).unwrap();
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn error_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = EncoderModel::init(3, 4, 2, &mut rng);
        let dec = DecoderModel::init(2, 2, &mut rng);
        // Bank-backed kind without a bank.
        let x = [0.1, 0.2, 0.3];
        let err = loss_and_grads(
            &enc,
            &dec,
            &[&x],
            &[0],
            1,
            &mut rng,
            RegKind::GmLossy,
            0.5,
            None,
        );
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
        // Label out of range.
        let err = loss_and_grads(
            &enc,
            &dec,
            &[&x],
            &[5],
            1,
            &mut rng,
            RegKind::None,
            0.0,
            None,
        );
        assert!(matches!(err, Err(Error::LabelOutOfRange { .. })));
        // Empty batch.
        let err = loss_and_grads(&enc, &dec, &[], &[], 1, &mut rng, RegKind::None, 0.0, None);
        assert!(matches!(err, Err(Error::EmptyBatch)));
    }

    #[test]
    fn non_finite_loss_is_reported() {
        // A decoder with an overflowing weight drives the softmax to NaN.
        let enc = EncoderModel::from_params(
            1,
            1,
            1,
            vec![1.0],
            vec![0.0],
            vec![1e160],
            vec![1e160],
            vec![0.0],
            vec![0.0],
        )
        .unwrap();
        let dec = DecoderModel::from_params(1, 2, vec![1e200, -1e200], vec![0.0, 0.0]).unwrap();
        let x = [1.0];
        let err = loss_and_grads_fixed_noise(
            &enc,
            &dec,
            &[&x],
            &[0],
            &[0.0],
            1,
            RegKind::None,
            0.0,
            None,
        );
        assert!(err.is_err());
    }
}
