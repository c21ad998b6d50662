//! Versioned JSON document for prior banks and the posterior CSV format
//! consumed by `prior-fit`.

use crate::output::{config_error, data_error};
use anyhow::Result;
use mdlreg_core::gaussian::{DiagGaussian, GaussianMixture};
use mdlreg_core::prior::{BankHyper, PriorBank};
use serde::{Deserialize, Serialize};

pub const BANK_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BankDoc {
    version: u32,
    num_classes: usize,
    components_per_class: usize,
    dim: usize,
    hyper: HyperDoc,
    classes: Vec<ClassDoc>,
}

#[derive(Serialize, Deserialize)]
struct HyperDoc {
    eta_mean: f64,
    eta_var: f64,
    eta_weight: f64,
    noise_mean: f64,
    noise_var: f64,
    lossy_eps: f64,
    var_floor: f64,
}

#[derive(Serialize, Deserialize)]
struct ClassDoc {
    components: Vec<ComponentDoc>,
}

#[derive(Serialize, Deserialize)]
struct ComponentDoc {
    weight: f64,
    mean: Vec<f64>,
    var: Vec<f64>,
}

pub fn bank_to_json(bank: &PriorBank) -> String {
    let h = bank.hyper();
    let doc = BankDoc {
        version: BANK_FORMAT_VERSION,
        num_classes: bank.num_classes(),
        components_per_class: bank.components_per_class(),
        dim: bank.dim(),
        hyper: HyperDoc {
            eta_mean: h.eta_mean,
            eta_var: h.eta_var,
            eta_weight: h.eta_weight,
            noise_mean: h.noise_mean,
            noise_var: h.noise_var,
            lossy_eps: h.lossy_eps,
            var_floor: h.var_floor,
        },
        classes: bank
            .classes()
            .iter()
            .map(|q| ClassDoc {
                components: q
                    .components()
                    .iter()
                    .zip(q.weights())
                    .map(|(c, &w)| ComponentDoc {
                        weight: w,
                        mean: c.mean().to_vec(),
                        var: c.var().to_vec(),
                    })
                    .collect(),
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("bank serializes");
    text.push('\n');
    text
}

pub fn bank_from_json(text: &str) -> Result<PriorBank> {
    let doc: BankDoc =
        serde_json::from_str(text).map_err(|e| data_error(format!("bank JSON: {e}")))?;
    if doc.version != BANK_FORMAT_VERSION {
        return Err(data_error(format!(
            "unsupported bank format version {} (expected {BANK_FORMAT_VERSION})",
            doc.version
        )));
    }
    let hyper = BankHyper {
        eta_mean: doc.hyper.eta_mean,
        eta_var: doc.hyper.eta_var,
        eta_weight: doc.hyper.eta_weight,
        noise_mean: doc.hyper.noise_mean,
        noise_var: doc.hyper.noise_var,
        lossy_eps: doc.hyper.lossy_eps,
        var_floor: doc.hyper.var_floor,
    };
    let mut classes = Vec::with_capacity(doc.classes.len());
    for class in doc.classes {
        let mut comps = Vec::with_capacity(class.components.len());
        let mut weights = Vec::with_capacity(class.components.len());
        for c in class.components {
            weights.push(c.weight);
            comps.push(DiagGaussian::new(c.mean, c.var).map_err(|e| data_error(e.to_string()))?);
        }
        classes.push(GaussianMixture::new(comps, weights).map_err(|e| data_error(e.to_string()))?);
    }
    let bank = PriorBank::from_classes(classes, hyper).map_err(|e| data_error(e.to_string()))?;
    if bank.num_classes() != doc.num_classes
        || bank.components_per_class() != doc.components_per_class
        || bank.dim() != doc.dim
    {
        return Err(data_error("bank JSON header does not match its contents"));
    }
    Ok(bank)
}

/// Parse a headerless posterior CSV with rows `label, mu_1..mu_d, var_1..var_d`.
pub fn read_posterior_csv(text: &str) -> Result<(Vec<usize>, Vec<DiagGaussian>)> {
    let mut labels = Vec::new();
    let mut posts: Vec<DiagGaussian> = Vec::new();
    let mut dim = 0usize;
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 3 || fields.len() % 2 == 0 {
            return Err(config_error(format!(
                "line {lineno}: expected label, mu_1..mu_d, var_1..var_d (odd field count >= 3)"
            )));
        }
        let d = (fields.len() - 1) / 2;
        if dim == 0 {
            dim = d;
        } else if d != dim {
            return Err(config_error(format!(
                "line {lineno}: dimension {d} != {dim}"
            )));
        }
        let label: usize = fields[0]
            .parse()
            .map_err(|_| config_error(format!("line {lineno}: bad label {:?}", fields[0])))?;
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| config_error(format!("line {lineno}: bad number {s:?}")))
        };
        let mean = fields[1..=d]
            .iter()
            .map(|s| parse(s))
            .collect::<Result<Vec<f64>>>()?;
        let var = fields[d + 1..]
            .iter()
            .map(|s| parse(s))
            .collect::<Result<Vec<f64>>>()?;
        labels.push(label);
        posts.push(DiagGaussian::new(mean, var).map_err(|e| config_error(e.to_string()))?);
    }
    if labels.is_empty() {
        return Err(config_error("posterior CSV is empty"));
    }
    Ok((labels, posts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bank_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut classes = Vec::new();
        for _ in 0..3 {
            let comps: Vec<DiagGaussian> = (0..2)
                .map(|_| {
                    DiagGaussian::new(
                        (0..4).map(|_| rng.random_range(-2.0..2.0)).collect(),
                        (0..4).map(|_| rng.random_range(0.1..2.0)).collect(),
                    )
                    .unwrap()
                })
                .collect();
            classes.push(GaussianMixture::new(comps, vec![0.25, 0.75]).unwrap());
        }
        let bank = PriorBank::from_classes(classes, BankHyper::default()).unwrap();
        let text = bank_to_json(&bank);
        let back = bank_from_json(&text).unwrap();
        assert_eq!(back.num_classes(), 3);
        assert_eq!(back.dim(), 4);
        for c in 0..3 {
            assert_eq!(back.class(c).components(), bank.class(c).components());
            assert_eq!(back.class(c).weights(), bank.class(c).weights());
        }
        // Serialization is reproducible byte for byte.
        assert_eq!(text, bank_to_json(&back));
    }

    #[test]
    fn bad_version_rejected() {
        let text = r#"{"version":9,"num_classes":1,"components_per_class":1,"dim":1,
            "hyper":{"eta_mean":0.01,"eta_var":0.0005,"eta_weight":0.01,"noise_mean":0.0,
            "noise_var":0.0,"lossy_eps":0.1,"var_floor":1e-8},
            "classes":[{"components":[{"weight":1.0,"mean":[0.0],"var":[1.0]}]}]}"#;
        assert!(bank_from_json(text).is_err());
    }

    #[test]
    fn posterior_csv_shapes() {
        let (labels, posts) =
            read_posterior_csv("0, 1.0, 2.0, 0.5, 0.25\n1, -1.0, 0.0, 1.0, 1.0\n").unwrap();
        assert_eq!(labels, vec![0, 1]);
        assert_eq!(posts[0].mean(), &[1.0, 2.0]);
        assert_eq!(posts[0].var(), &[0.5, 0.25]);
        assert!(read_posterior_csv("0, 1.0, 2.0, 0.5\n").is_err());
        assert!(read_posterior_csv("").is_err());
    }
}
