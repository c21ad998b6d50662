//! Dataset resolution for the train command: the USPS sparse files (with
//! an optional binary cache) or synthetic blobs.

use crate::config::{DatasetArg, Settings};
use crate::output::data_error;
use anyhow::{Context, Result};
use mdlreg_core::data::{parse_sparse, standardize, synth_blobs, BlobConfig, Dataset, Split};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const USPS_FEATURES: usize = 256;
pub const USPS_LABEL_OFFSET: i64 = 1;
pub const USPS_CLASSES: usize = 10;

const CACHE_MAGIC: &[u8; 8] = b"MDLRGDS\x01";
const CACHE_VERSION: u32 = 1;

/// Load (or fall back) and standardize the train/test pair. Returns the
/// datasets and the name actually used.
pub fn resolve(settings: &Settings) -> Result<(Dataset, Dataset, &'static str)> {
    let (mut train, mut test, name) = match settings.dataset {
        DatasetArg::Usps => match load_usps(&settings.data_dir, settings.cache) {
            Ok(pair) => (pair.0, pair.1, "usps"),
            Err(e) => {
                eprintln!(
                    "warning: USPS files not usable ({e:#}); falling back to synthetic blobs. \
                     Place the sparse files at {}/usps and {}/usps.t (or set ${}).",
                    settings.data_dir.display(),
                    settings.data_dir.display(),
                    crate::DATA_DIR_ENV,
                );
                let pair = synth(settings)?;
                (pair.0, pair.1, "synth")
            }
        },
        DatasetArg::Synth => {
            let pair = synth(settings)?;
            (pair.0, pair.1, "synth")
        }
    };
    standardize(&mut train, &mut [&mut test]).map_err(|e| data_error(e.to_string()))?;
    Ok((train, test, name))
}

pub fn synth(settings: &Settings) -> Result<(Dataset, Dataset)> {
    synth_blobs(&BlobConfig {
        num_classes: settings.synth_classes,
        feature_dim: settings.synth_dim,
        samples_per_class: settings.synth_per_class,
        separation: settings.synth_separation,
        noise: settings.synth_noise,
        seed: settings.synth_seed,
    })
    .map_err(|e| data_error(e.to_string()))
}

/// Load the LIBSVM-style USPS pair (`usps`, `usps.t`) from `dir`. With
/// `cache` set, a binary sidecar (`<file>.cache`) is used when present and
/// written after a successful parse.
pub fn load_usps(dir: &Path, cache: bool) -> Result<(Dataset, Dataset)> {
    let train = load_sparse_file(&dir.join("usps"), Split::Train, cache)?;
    let test = load_sparse_file(&dir.join("usps.t"), Split::Test, cache)?;
    let train = train
        .with_num_classes(USPS_CLASSES)
        .map_err(|e| data_error(e.to_string()))?;
    let test = test
        .with_num_classes(USPS_CLASSES)
        .map_err(|e| data_error(e.to_string()))?;
    Ok((train, test))
}

/// Read one sparse text file into a dense dataset.
pub fn load_sparse_file(path: &Path, split: Split, cache: bool) -> Result<Dataset> {
    let cache_path = cache_sidecar(path);
    if cache {
        if let Ok(ds) = read_cache(&cache_path, split) {
            return Ok(ds);
        }
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let ds = parse_sparse(&text, USPS_FEATURES, USPS_LABEL_OFFSET, split)
        .map_err(|e| data_error(format!("{}: {e}", path.display())))?;
    if cache {
        if let Err(e) = write_cache(&cache_path, &ds) {
            eprintln!(
                "warning: could not write cache {}: {e}",
                cache_path.display()
            );
        }
    }
    Ok(ds)
}

fn cache_sidecar(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".cache");
    path.with_file_name(name)
}

/// Flat binary cache: 16-byte header (magic, version, reserved), then
/// rows/cols/classes/split and the raw label and feature words, all
/// little-endian.
pub fn write_cache(path: &Path, ds: &Dataset) -> std::io::Result<()> {
    let mut buf: Vec<u8> = Vec::with_capacity(16 + 25 + ds.len() * (8 + ds.feature_dim() * 8));
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    buf.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(ds.feature_dim() as u64).to_le_bytes());
    buf.extend_from_slice(&(ds.num_classes() as u64).to_le_bytes());
    buf.push(match ds.split() {
        Split::Train => 0,
        Split::Test => 1,
    });
    for i in 0..ds.len() {
        buf.extend_from_slice(&(ds.label(i) as u64).to_le_bytes());
    }
    for i in 0..ds.len() {
        for &x in ds.row(i) {
            buf.extend_from_slice(&x.to_bits().to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)
}

pub fn read_cache(path: &Path, expect_split: Split) -> Result<Dataset> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let fail = |msg: &str| data_error(format!("{}: {msg}", path.display()));
    if bytes.len() < 41 || &bytes[..8] != CACHE_MAGIC {
        return Err(fail("not a dataset cache"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(fail("unsupported cache version"));
    }
    let rows = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
    let classes = u64::from_le_bytes(bytes[32..40].try_into().unwrap()) as usize;
    let split = match bytes[40] {
        0 => Split::Train,
        1 => Split::Test,
        _ => return Err(fail("bad split tag")),
    };
    if split != expect_split {
        return Err(fail("cache split tag mismatch"));
    }
    let need = 41 + rows * 8 + rows * cols * 8;
    if bytes.len() != need {
        return Err(fail("truncated cache"));
    }
    let mut labels = Vec::with_capacity(rows);
    let mut off = 41;
    for _ in 0..rows {
        labels.push(u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize);
        off += 8;
    }
    let mut feats = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        feats.push(f64::from_bits(u64::from_le_bytes(
            bytes[off..off + 8].try_into().unwrap(),
        )));
        off += 8;
    }
    Dataset::new(feats, cols, labels, classes, split).map_err(|e| data_error(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(
            vec![0.5, -1.0, 0.0, 2.25, 1e-300, -0.0],
            2,
            vec![0, 1, 2],
            3,
            Split::Train,
        )
        .unwrap();
        let path = dir.path().join("ds.cache");
        write_cache(&path, &ds).unwrap();
        let back = read_cache(&path, Split::Train).unwrap();
        assert_eq!(ds, back);
        assert!(read_cache(&path, Split::Test).is_err());
    }

    #[test]
    fn sparse_file_with_cache() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("usps");
        fs::write(&path, "3 1:0.25 256:-1.5\n7 10:0.125\n").unwrap();
        let a = load_sparse_file(&path, Split::Train, true).unwrap();
        assert!(cache_sidecar(&path).exists());
        let b = load_sparse_file(&path, Split::Train, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.label(0), 2);
        assert_eq!(a.row(0)[255], -1.5);
    }
}
