use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::pursuit::{
    derive_seed, mmse_estimate, omp, oracle_estimate, Dictionary, PursuitConfig, RandConfig,
};
use crate::training::{evaluate, summarize, InferenceMode, Model, TrainConfig};

/// Estimators compared on a synthetic test set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Trained LGM, stopping at `ε = σ√n`.
    Lgm,
    /// Trained LGM run for exactly the true cardinality.
    LgmTrueCard,
    /// Model trained as LGM-MMSE, with MMSE inference.
    LgmMmse,
    /// Model trained as plain LGM, with MMSE inference.
    LgmPostMmse,
    Lista,
    OmpTrueDict,
    OmpTrueDictCard,
    OmpTrueDictMmse,
    /// Least squares on the true support with the true dictionary.
    Oracle,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Lgm,
        Method::LgmTrueCard,
        Method::LgmMmse,
        Method::LgmPostMmse,
        Method::Lista,
        Method::OmpTrueDict,
        Method::OmpTrueDictCard,
        Method::OmpTrueDictMmse,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lgm => "lgm",
            Method::LgmTrueCard => "lgm-true-card",
            Method::LgmMmse => "lgm-mmse",
            Method::LgmPostMmse => "lgm-post-mmse",
            Method::Lista => "lista",
            Method::OmpTrueDict => "omp-true-dict",
            Method::OmpTrueDictCard => "omp-true-dict-card",
            Method::OmpTrueDictMmse => "omp-true-dict-mmse",
            Method::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

/// Trained models available to [`evaluate_methods`].
#[derive(Clone, Copy, Debug, Default)]
pub struct TrainedModels<'a> {
    pub lgm: Option<&'a Model>,
    pub lgm_mmse: Option<&'a Model>,
    pub lista: Option<&'a Model>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    /// Layer/iteration bound for the threshold-stopped methods.
    pub max_cardinality: usize,
    pub rand: RandConfig,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            max_cardinality: 15,
            rand: RandConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub sigma: f64,
    /// Mean `‖x* − x̂‖₂²` per signal.
    pub mse: f64,
    pub card_mean: f64,
    pub card_std: f64,
}

fn per_signal(
    data: &LabeledDataset,
    f: impl Fn(usize, &[f64]) -> Result<(Vector, usize)> + Sync,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let out: Vec<(f64, usize)> = (0..data.len())
        .into_par_iter()
        .map(|j| {
            let (xh, card) = f(j, &data.noisy.col(j))?;
            let err = xh
                .iter()
                .zip(data.clean.col(j))
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            Ok((err, card))
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().unzip())
}

fn nonzeros(code: &[f64]) -> usize {
    code.iter().filter(|v| **v != 0.0).count()
}

/// Evaluates every requested method on every dataset (one per σ). The
/// Oracle row is always included; a trained method without its model is an
/// error.
pub fn evaluate_methods(
    datasets: &[LabeledDataset],
    d_true: &Matrix,
    methods: &[Method],
    models: &TrainedModels<'_>,
    settings: &EvalSettings,
) -> Result<Vec<MethodResult>> {
    let mut list: Vec<Method> = Vec::new();
    for &m in methods.iter().chain(&[Method::Oracle]) {
        if !list.contains(&m) {
            list.push(m);
        }
    }
    let dict = Dictionary::new(d_true.clone())?;
    let mut rows = Vec::new();
    for data in datasets {
        if data.clean.rows() != dict.n() {
            return Err(Error::ShapeMismatch(format!(
                "signals of length {} for a {}-row dictionary",
                data.clean.rows(),
                dict.n()
            )));
        }
        let eps = data.sigma * (dict.n() as f64).sqrt();
        let threshold = PursuitConfig::new(settings.max_cardinality.min(dict.m()), eps);
        for &method in &list {
            let metrics = match method {
                Method::Lgm
                | Method::LgmTrueCard
                | Method::LgmMmse
                | Method::LgmPostMmse
                | Method::Lista => {
                    let (model, mode) = match method {
                        Method::Lgm | Method::LgmTrueCard => (models.lgm, InferenceMode::Lgm),
                        Method::LgmPostMmse => (models.lgm, InferenceMode::Mmse),
                        Method::LgmMmse => (models.lgm_mmse, InferenceMode::Mmse),
                        _ => (models.lista, InferenceMode::Lista),
                    };
                    let model = model.ok_or_else(|| {
                        Error::InvalidConfig(format!("method {method} needs a trained model"))
                    })?;
                    let cfg = TrainConfig {
                        max_cardinality: settings.max_cardinality,
                        true_cardinality: method == Method::LgmTrueCard,
                        mmse: settings.rand,
                        seed: settings.seed,
                        ..Default::default()
                    };
                    evaluate(model, mode, &cfg, data)?
                }
                Method::OmpTrueDict | Method::OmpTrueDictCard => {
                    let (errors, cards) = per_signal(data, |j, x| {
                        let cfg = if method == Method::OmpTrueDictCard {
                            PursuitConfig::exact(data.supports[j].len())
                        } else {
                            threshold
                        };
                        let r = omp(&dict, x, &cfg)?;
                        let card = r.code.cardinality();
                        Ok((r.reconstruction, card))
                    })?;
                    summarize(&errors, &cards)
                }
                Method::OmpTrueDictMmse => {
                    let stream = derive_seed(settings.seed, 0x33E5);
                    let (errors, cards) = per_signal(data, |j, x| {
                        let rand = RandConfig {
                            seed: derive_seed(stream, j as u64),
                            ..settings.rand
                        };
                        let est = mmse_estimate(&dict, None, x, &threshold, &rand, true)?;
                        Ok((est.reconstruction, nonzeros(&est.code)))
                    })?;
                    summarize(&errors, &cards)
                }
                Method::Oracle => {
                    let (errors, cards) = per_signal(data, |j, x| {
                        let s = &data.supports[j];
                        Ok((oracle_estimate(&dict, s, x)?, s.len()))
                    })?;
                    summarize(&errors, &cards)
                }
            };
            rows.push(MethodResult {
                method,
                sigma: data.sigma,
                mse: metrics.mse,
                card_mean: metrics.card_mean,
                card_std: metrics.card_std,
            });
        }
    }
    Ok(rows)
}

/// CSV with header `method,sigma,mse,card_mean,card_std`.
pub fn results_csv(rows: &[MethodResult]) -> String {
    let mut s = String::from("method,sigma,mse,card_mean,card_std\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.method, r.sigma, r.mse, r.card_mean, r.card_std
        );
    }
    s
}

pub fn write_results_csv(path: &Path, rows: &[MethodResult]) -> Result<()> {
    std::fs::write(path, results_csv(rows)).map_err(|e| Error::io(path, e))
}
