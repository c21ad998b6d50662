//! Command implementations. Every command validates its inputs, writes its
//! artifacts atomically under the output directory, and returns the
//! process exit code (0 success, 3 for a failed check).

use crate::bank_io::{bank_to_json, read_posterior_csv};
use crate::config::Settings;
use crate::datasets;
use crate::output::{config_error, fmt12, write_atomic};
use crate::sandwich;
use anyhow::{Context, Result};
use mdlreg_core::bounds::{bound_comparison, residual_curve};
use mdlreg_core::data::batches;
use mdlreg_core::prior::{init_bank, BankConfig, BankHyper, PosteriorBatch};
use mdlreg_core::trainer::{grad_check, train, GradCheckDims, Optimizer, RegKind, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::Path;

fn core_err(e: mdlreg_core::Error) -> anyhow::Error {
    config_error(e.to_string())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializable report");
    text.push('\n');
    text
}

/// `bounds-curve`: the bound-comparison table (divergence bound vs the
/// square-root bound) over the mdl-rate grid and empirical risks.
pub fn bounds_curve(s: &Settings) -> Result<i32> {
    let grid = Settings::grid(s.mdl_min, s.mdl_max, s.mdl_step);
    let rows =
        bound_comparison(s.n, s.classes, &s.emp_risks, &grid, s.base.base()).map_err(core_err)?;
    let mut csv = String::from("mdl_rate,emp_risk,thm1,sqrt\n");
    for r in rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            fmt12(r.mdl_rate),
            fmt12(r.emp_risk),
            fmt12(r.divergence_bound),
            fmt12(r.sqrt_bound)
        ));
    }
    write_text(&s.out.join("bounds_curve.csv"), &csv)?;
    Ok(0)
}

/// `bounds-residual`: the correction-term curve over the gap grid.
pub fn bounds_residual(s: &Settings) -> Result<i32> {
    let grid = Settings::grid(s.gen_min, s.gen_max, s.gen_step);
    let rows =
        residual_curve(s.n, s.classes, s.emp_risk, &grid, s.base.base()).map_err(core_err)?;
    let mut csv = String::from("gen,residual\n");
    for r in rows {
        csv.push_str(&format!("{},{}\n", fmt12(r.gen), fmt12(r.residual)));
    }
    write_text(&s.out.join("bounds_residual.csv"), &csv)?;
    Ok(0)
}

/// `kl-check`: sandwich report; exit 3 when the pass rate misses the
/// threshold.
pub fn kl_check(s: &Settings) -> Result<i32> {
    let report = sandwich::run(
        s.trials,
        s.mc_samples,
        s.max_dim,
        s.max_components,
        s.seeds[0],
    );
    write_text(&s.out.join("kl_check.json"), &to_pretty_json(&report))?;
    println!(
        "sandwich pass rate {:.4} over {} trials ({})",
        report.pass_rate,
        report.trials,
        if report.passed { "pass" } else { "FAIL" }
    );
    Ok(if report.passed { 0 } else { 3 })
}

#[derive(Serialize)]
struct GradKindReport {
    kind: &'static str,
    max_rel_error: f64,
}

#[derive(Serialize)]
struct GradReport {
    tolerance: f64,
    seeds: usize,
    kinds: Vec<GradKindReport>,
    max_rel_error: f64,
    passed: bool,
}

/// `gradcheck`: analytic vs central-difference gradients for every
/// regularizer kind; exit 3 when any kind is off.
pub fn gradcheck(s: &Settings) -> Result<i32> {
    let dims = GradCheckDims::default();
    let tolerance = 1e-4;
    let mut kinds = Vec::new();
    let mut overall = 0.0f64;
    for (kind, name) in [
        (RegKind::None, "none"),
        (RegKind::Vib, "vib"),
        (RegKind::Cdvib, "cdvib"),
        (RegKind::GmLossless, "gm-lossless"),
        (RegKind::GmLossy, "gm-lossy"),
    ] {
        let mut worst = 0.0f64;
        for seed in 0..s.gradcheck_seeds as u64 {
            let err = grad_check(kind, seed, &dims).map_err(core_err)?;
            worst = worst.max(err);
        }
        overall = overall.max(worst);
        kinds.push(GradKindReport {
            kind: name,
            max_rel_error: worst,
        });
    }
    let report = GradReport {
        tolerance,
        seeds: s.gradcheck_seeds,
        kinds,
        max_rel_error: overall,
        passed: overall <= tolerance,
    };
    write_text(&s.out.join("gradcheck.json"), &to_pretty_json(&report))?;
    println!(
        "max gradient relative error {overall:.3e} ({})",
        if report.passed { "pass" } else { "FAIL" }
    );
    Ok(if report.passed { 0 } else { 3 })
}

/// `prior-fit`: fit a prior bank to a static pool of posteriors read from
/// CSV, running the E/M/moving-average cycle over minibatches.
pub fn prior_fit(s: &Settings) -> Result<i32> {
    let input = s
        .input
        .as_ref()
        .ok_or_else(|| config_error("prior-fit requires --input <csv>"))?;
    let text =
        std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let (labels, posts) = read_posterior_csv(&text)?;
    let num_classes = labels.iter().max().map(|&m| m + 1).unwrap_or(0);
    let dim = posts[0].dim();
    let hyper = bank_hyper(s);
    let cfg = BankConfig {
        num_classes,
        components_per_class: s.components,
        dim,
        hyper,
        init_batch_size: s.init_batch.min(labels.len()),
        init_retries: 32,
    };
    let seed = s.seeds[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        let mut bl = Vec::with_capacity(cfg.init_batch_size);
        let mut bp = Vec::with_capacity(cfg.init_batch_size);
        for _ in 0..cfg.init_batch_size {
            let i = rng.random_range(0..labels.len());
            bl.push(labels[i]);
            bp.push(posts[i].clone());
        }
        PosteriorBatch::new(bl, bp).expect("non-empty draw")
    };
    let mut bank = init_bank(&cfg, draw, &mut rng).map_err(core_err)?;
    let mode = s.mode.mode();
    for epoch in 0..s.fit_epochs {
        for idx in batches(labels.len(), s.batch_size, seed, epoch as u64) {
            let bl: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let bp: Vec<_> = idx.iter().map(|&i| posts[i].clone()).collect();
            let batch = PosteriorBatch::new(bl, bp).map_err(core_err)?;
            let resp = bank.responsibilities(&batch, mode).map_err(core_err)?;
            let prop = bank.m_step(&batch, &resp).map_err(core_err)?;
            bank = bank.apply_ma_update(&prop, &mut rng).map_err(core_err)?;
        }
    }
    write_text(&s.out.join("prior_bank.json"), &bank_to_json(&bank))?;
    println!(
        "fitted bank: {} classes x {} components, dim {}",
        bank.num_classes(),
        bank.components_per_class(),
        bank.dim()
    );
    Ok(0)
}

fn bank_hyper(s: &Settings) -> BankHyper {
    BankHyper {
        eta_mean: s.eta_mean,
        eta_var: s.eta_var,
        eta_weight: s.eta_weight,
        noise_mean: s.noise_mean,
        noise_var: s.noise_var,
        lossy_eps: s.eps,
        var_floor: s.var_floor,
    }
}

pub fn train_config(s: &Settings, beta: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        hidden_dim: s.hidden_dim,
        latent_dim: s.latent_dim,
        mixture_size: s.components,
        reg_kind: s.reg.kind(),
        beta,
        epochs: s.epochs,
        batch_size: s.batch_size,
        learning_rate: s.learning_rate,
        lr_decay: s.lr_decay,
        optimizer: Optimizer::Adam {
            beta1: s.adam_beta1,
            beta2: s.adam_beta2,
            eps: 1e-8,
        },
        k_train: s.k_train,
        k_eval: s.k_eval,
        seed,
        bank: bank_hyper(s),
        init_batch_size: s.init_batch,
        init_retries: 32,
    }
}

pub fn metrics_csv(metrics: &mdlreg_core::trainer::RunMetrics) -> String {
    let mut csv = String::from("epoch,train_loss,train_acc,test_acc,reg_value,gap\n");
    for e in &metrics.epochs {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.epoch,
            fmt12(e.train_loss),
            fmt12(e.train_acc),
            fmt12(e.test_acc),
            fmt12(e.reg_value),
            fmt12(e.gap)
        ));
    }
    csv
}

#[derive(Serialize, Clone)]
struct RunSummary {
    reg: String,
    beta: f64,
    seed: u64,
    dataset: String,
    epochs: usize,
    final_train_loss: f64,
    final_train_acc: f64,
    final_test_acc: f64,
    best_test_acc: f64,
    final_reg_value: f64,
    final_gap: f64,
    metrics_file: String,
}

#[derive(Serialize)]
struct BetaSummary {
    beta: f64,
    seeds: usize,
    mean_final_test_acc: f64,
    std_final_test_acc: f64,
    mean_best_test_acc: f64,
    mean_final_gap: f64,
    mean_final_reg_value: f64,
}

#[derive(Serialize)]
struct TrainReport {
    reg: String,
    dataset: String,
    betas: Vec<f64>,
    seeds: Vec<u64>,
    runs: Vec<RunSummary>,
    by_beta: Vec<BetaSummary>,
    best_beta: f64,
    best_mean_final_test_acc: f64,
}

fn beta_tag(beta: f64) -> String {
    format!("{beta}")
}

/// `train`: the seed x beta grid for one regularizer kind, with per-run
/// metrics CSVs, per-run summary JSONs, and an aggregate report.
pub fn run_train(s: &Settings) -> Result<i32> {
    let (train_ds, test_ds, ds_name) = datasets::resolve(s)?;
    let mut runs: Vec<RunSummary> = Vec::new();
    for &beta in &s.betas {
        for &seed in &s.seeds {
            let cfg = train_config(s, beta, seed);
            let out = train(&cfg, &train_ds, &test_ds).map_err(core_err)?;
            let tag = format!("{}_beta{}_seed{}", s.reg.name(), beta_tag(beta), seed);
            let metrics_file = format!("metrics_{tag}.csv");
            write_text(&s.out.join(&metrics_file), &metrics_csv(&out.metrics))?;
            let last = out.metrics.epochs.last();
            let best = out
                .metrics
                .epochs
                .iter()
                .map(|e| e.test_acc)
                .fold(f64::NEG_INFINITY, f64::max);
            let summary = RunSummary {
                reg: s.reg.name().to_string(),
                beta,
                seed,
                dataset: ds_name.to_string(),
                epochs: s.epochs,
                final_train_loss: last.map(|e| e.train_loss).unwrap_or(f64::NAN),
                final_train_acc: last.map(|e| e.train_acc).unwrap_or(f64::NAN),
                final_test_acc: last.map(|e| e.test_acc).unwrap_or(f64::NAN),
                best_test_acc: if best.is_finite() { best } else { f64::NAN },
                final_reg_value: last.map(|e| e.reg_value).unwrap_or(f64::NAN),
                final_gap: last.map(|e| e.gap).unwrap_or(f64::NAN),
                metrics_file,
            };
            write_text(
                &s.out.join(format!("summary_{tag}.json")),
                &to_pretty_json(&summary),
            )?;
            runs.push(summary);
        }
    }

    let mut by_beta = Vec::new();
    let mut best_beta = s.betas[0];
    let mut best_mean = f64::NEG_INFINITY;
    for &beta in &s.betas {
        let group: Vec<&RunSummary> = runs.iter().filter(|r| r.beta == beta).collect();
        let k = group.len() as f64;
        let mean = group.iter().map(|r| r.final_test_acc).sum::<f64>() / k;
        let var = group
            .iter()
            .map(|r| (r.final_test_acc - mean).powi(2))
            .sum::<f64>()
            / (k - 1.0).max(1.0);
        let summary = BetaSummary {
            beta,
            seeds: group.len(),
            mean_final_test_acc: mean,
            std_final_test_acc: var.sqrt(),
            mean_best_test_acc: group.iter().map(|r| r.best_test_acc).sum::<f64>() / k,
            mean_final_gap: group.iter().map(|r| r.final_gap).sum::<f64>() / k,
            mean_final_reg_value: group.iter().map(|r| r.final_reg_value).sum::<f64>() / k,
        };
        if mean > best_mean {
            best_mean = mean;
            best_beta = beta;
        }
        by_beta.push(summary);
    }
    let report = TrainReport {
        reg: s.reg.name().to_string(),
        dataset: ds_name.to_string(),
        betas: s.betas.clone(),
        seeds: s.seeds.clone(),
        runs,
        by_beta,
        best_beta,
        best_mean_final_test_acc: best_mean,
    };
    write_text(&s.out.join("summary.json"), &to_pretty_json(&report))?;

    let mut csv = String::from(
        "reg,beta,seeds,mean_final_test_acc,std_final_test_acc,mean_best_test_acc,mean_final_gap\n",
    );
    for b in &report.by_beta {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            report.reg,
            fmt12(b.beta),
            b.seeds,
            fmt12(b.mean_final_test_acc),
            fmt12(b.std_final_test_acc),
            fmt12(b.mean_best_test_acc),
            fmt12(b.mean_final_gap)
        ));
    }
    write_text(&s.out.join("summary.csv"), &csv)?;
    println!(
        "best beta {} with mean final test accuracy {:.4} on {}",
        report.best_beta, report.best_mean_final_test_acc, report.dataset
    );
    Ok(0)
}

