//! Dataset representation, the sparse `label idx:val` text format,
//! synthetic blob generation, normalization, and deterministic batching.
//!
//! File-system access lives in the CLI crate; this module works on strings
//! and in-memory matrices only.

use crate::error::{Error, Result};
use crate::numeric;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// A dense feature matrix with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    rows: usize,
    cols: usize,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
}

impl Dataset {
    /// Build from a row-major feature buffer. All values must be finite and
    /// labels must lie in `[0, num_classes)`.
    pub fn new(
        features: Vec<f64>,
        cols: usize,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if cols == 0 || features.len() != labels.len() * cols {
            return Err(Error::DimMismatch {
                expected: labels.len() * cols,
                got: features.len(),
            });
        }
        for &x in &features {
            if !x.is_finite() {
                return Err(Error::NonFinite("dataset feature"));
            }
        }
        for &y in &labels {
            if y >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    num_classes,
                });
            }
        }
        Ok(Self {
            features,
            rows: labels.len(),
            cols,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.cols
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.cols..(i + 1) * self.cols]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Override the class count (e.g. when a file happens to miss the last
    /// label); fails if any label is out of range.
    pub fn with_num_classes(mut self, num_classes: usize) -> Result<Self> {
        for &y in &self.labels {
            if y >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    num_classes,
                });
            }
        }
        self.num_classes = num_classes;
        Ok(self)
    }
}

/// Per-feature normalization statistics, computed on the train split only.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Standardize `train` in place with its own statistics and apply the same
/// transform to `others`. Standard deviations are floored at 1e-6, so a
/// constant feature maps to 0 everywhere.
pub fn standardize(train: &mut Dataset, others: &mut [&mut Dataset]) -> Result<NormStats> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let p = train.cols;
    let n = train.rows as f64;
    let mut mean = vec![0.0; p];
    for i in 0..train.rows {
        for (j, m) in mean.iter_mut().enumerate() {
            *m += train.features[i * p + j];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut std = vec![0.0; p];
    for i in 0..train.rows {
        for (j, s) in std.iter_mut().enumerate() {
            let d = train.features[i * p + j] - mean[j];
            *s += d * d;
        }
    }
    for s in &mut std {
        *s = numeric::sqrt(*s / n).max(1e-6);
    }
    let stats = NormStats { mean, std };
    apply_stats(train, &stats)?;
    for ds in others {
        apply_stats(ds, &stats)?;
    }
    Ok(stats)
}

fn apply_stats(ds: &mut Dataset, stats: &NormStats) -> Result<()> {
    if ds.cols != stats.mean.len() {
        return Err(Error::DimMismatch {
            expected: stats.mean.len(),
            got: ds.cols,
        });
    }
    let p = ds.cols;
    for i in 0..ds.rows {
        for j in 0..p {
            let x = &mut ds.features[i * p + j];
            *x = (*x - stats.mean[j]) / stats.std[j];
        }
    }
    Ok(())
}

/// Parse the sparse `label idx:val idx:val ...` text format (1-based
/// indices). Unmentioned indices are 0. Parsing is strict: duplicate or
/// out-of-range indices and malformed fields are errors carrying the
/// 1-based line number. Labels are mapped to 0-based via `label_offset`.
pub fn parse_sparse(
    text: &str,
    n_features: usize,
    label_offset: i64,
    split: Split,
) -> Result<Dataset> {
    let mut features: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut max_label = 0usize;
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let label_txt = fields.next().expect("split_whitespace on non-empty line");
        let label = parse_label(label_txt, lineno)? - label_offset;
        if label < 0 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("label {label_txt} below offset {label_offset}"),
            });
        }
        let label = label as usize;
        max_label = max_label.max(label);

        let row_start = features.len();
        features.resize(row_start + n_features, 0.0);
        let mut seen = vec![false; n_features];
        for field in fields {
            let (idx_txt, val_txt) = field.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("expected idx:val, got {field:?}"),
            })?;
            let idx: usize = idx_txt.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad feature index {idx_txt:?}"),
            })?;
            if idx < 1 || idx > n_features {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("feature index {idx} outside [1, {n_features}]"),
                });
            }
            if seen[idx - 1] {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("duplicate index {idx}"),
                });
            }
            seen[idx - 1] = true;
            let val: f64 = val_txt.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad feature value {val_txt:?}"),
            })?;
            if !val.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "non-finite feature".to_string(),
                });
            }
            features[row_start + idx - 1] = val;
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(features, n_features, labels, max_label + 1, split)
}

fn parse_label(txt: &str, lineno: usize) -> Result<i64> {
    if let Ok(v) = txt.parse::<i64>() {
        return Ok(v);
    }
    // Some distributions format integer labels as floats ("6.0000000e+00").
    if let Ok(v) = txt.parse::<f64>() {
        let rounded = libm::round(v);
        if (v - rounded).abs() < 1e-9 && rounded.abs() < 9e15 {
            return Ok(rounded as i64);
        }
    }
    Err(Error::Parse {
        line: lineno,
        msg: format!("bad label {txt:?}"),
    })
}

/// Serialize a dataset back to the sparse text format. Zeros are omitted;
/// values are printed with Rust's shortest round-trip formatting so a
/// reload reproduces them bit-wise.
pub fn format_sparse(ds: &Dataset, label_offset: i64) -> String {
    let mut out = String::new();
    for i in 0..ds.len() {
        out.push_str(&format!("{}", ds.label(i) as i64 + label_offset));
        for (j, &v) in ds.row(i).iter().enumerate() {
            if v != 0.0 {
                out.push_str(&format!(" {}:{}", j + 1, v));
            }
        }
        out.push('\n');
    }
    out
}

/// Configuration for the synthetic blob generator.
#[derive(Clone, Debug)]
pub struct BlobConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub samples_per_class: usize,
    /// Distance of each class mean from the origin.
    pub separation: f64,
    /// Isotropic noise standard deviation.
    pub noise: f64,
    pub seed: u64,
}

/// Gaussian blobs around per-class means placed `separation` away from the
/// origin along orthonormal-ish directions (a seeded random rotation of
/// scaled basis vectors). With more classes than dimensions the surplus
/// directions are plain random unit vectors. Returns a deterministic 80/20
/// train/test split.
pub fn synth_blobs(cfg: &BlobConfig) -> Result<(Dataset, Dataset)> {
    if cfg.num_classes < 2 {
        return Err(Error::Domain {
            what: "num_classes (must be >= 2)",
            value: cfg.num_classes as f64,
        });
    }
    if !(cfg.separation >= 0.0) {
        return Err(Error::Domain {
            what: "separation",
            value: cfg.separation,
        });
    }
    if cfg.feature_dim == 0 || cfg.samples_per_class < 2 {
        return Err(Error::InvalidArgument(
            "need feature_dim >= 1 and samples_per_class >= 2".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p = cfg.feature_dim;

    // Orthonormalize the first min(C, p) directions; classes beyond the
    // dimension get independent random unit vectors.
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(cfg.num_classes);
    for c in 0..cfg.num_classes {
        let mut v: Vec<f64> = (0..p)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        if c < p {
            for prev in &dirs[..c.min(dirs.len())] {
                let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
                for (x, d) in v.iter_mut().zip(prev) {
                    *x -= dot * d;
                }
            }
        }
        let norm = numeric::sqrt(v.iter().map(|x| x * x).sum::<f64>()).max(1e-12);
        for x in &mut v {
            *x /= norm;
        }
        dirs.push(v);
    }

    let n_train_per_class = (cfg.samples_per_class * 4) / 5;
    let mut train_feats = Vec::new();
    let mut train_labels = Vec::new();
    let mut test_feats = Vec::new();
    let mut test_labels = Vec::new();
    for (c, dir) in dirs.iter().enumerate() {
        for i in 0..cfg.samples_per_class {
            let (feats, labels) = if i < n_train_per_class {
                (&mut train_feats, &mut train_labels)
            } else {
                (&mut test_feats, &mut test_labels)
            };
            for &dj in dir.iter() {
                let noise: f64 = rng.sample(StandardNormal);
                feats.push(cfg.separation * dj + cfg.noise * noise);
            }
            labels.push(c);
        }
    }

    // Shuffle the train rows once so class blocks do not line up with batches.
    let n_train = train_labels.len();
    let mut order: Vec<usize> = (0..n_train).collect();
    order.shuffle(&mut rng);
    let mut shuffled_feats = Vec::with_capacity(train_feats.len());
    let mut shuffled_labels = Vec::with_capacity(n_train);
    for &i in &order {
        shuffled_feats.extend_from_slice(&train_feats[i * p..(i + 1) * p]);
        shuffled_labels.push(train_labels[i]);
    }

    let train = Dataset::new(
        shuffled_feats,
        p,
        shuffled_labels,
        cfg.num_classes,
        Split::Train,
    )?;
    let test = Dataset::new(test_feats, p, test_labels, cfg.num_classes, Split::Test)?;
    Ok((train, test))
}

/// Minibatch index slices for one epoch: a seeded shuffle keyed by
/// `(seed, epoch)`, chunked into batches of `batch_size`, last partial
/// batch kept.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&epoch.to_le_bytes());
    key[16] = 0xB5;
    let mut rng = ChaCha8Rng::from_seed(key);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}
