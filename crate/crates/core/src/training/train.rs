use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::coherence::coherence_with_grad;
use super::loss::{reconstruction_loss, LossConfig};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, sub, Matrix, Vector};
use crate::pursuit::{derive_seed, PursuitConfig, RandConfig, StopMode};
use crate::synthetic::{dictionary_distance, LabeledDataset};
use crate::unrolled::{
    lgm_backward_into, lgm_checkpoint, lgm_forward, lgm_forward_with, lgm_from_checkpoint,
    lista_backward_into, lista_checkpoint, lista_forward, lista_from_checkpoint, lmp_backward_into,
    lmp_forward, random_dictionary, Checkpoint, LgmGrad, LgmParams, ListaParams, Selection,
    UnrolledTrace,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    #[default]
    Lgm,
    Lmp,
    LgmMmse,
    Lista,
}

/// What LISTA is trained to match.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ListaTarget {
    /// Clean signal (denoising autoencoder).
    #[default]
    Signal,
    /// True sparse code.
    Code,
}

/// An atom is re-seeded when its analysis atom has cosine similarity above
/// `max_coherence` with an earlier atom, or when the epoch selected it fewer
/// than `min_usage` times the mean selection count. The usage rule spares
/// atoms re-seeded within the last `grace_epochs` epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AtomRefresh {
    pub max_coherence: f64,
    pub min_usage: f64,
    pub grace_epochs: usize,
}

impl Default for AtomRefresh {
    fn default() -> Self {
        Self {
            max_coherence: 0.99,
            min_usage: 0.3,
            grace_epochs: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelKind,
    /// Layer bound `s` for the greedy models.
    pub max_cardinality: usize,
    /// Stopping threshold `ε`; `None` means `σ√n` of the dataset.
    pub residual_threshold: Option<f64>,
    pub stop_mode: StopMode,
    /// Run exactly as many layers as each signal's true cardinality.
    pub true_cardinality: bool,
    pub loss: LossConfig,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Randomized runs for LGM-MMSE.
    pub mmse: RandConfig,
    pub lista_layers: usize,
    pub lista_lambda: f64,
    pub lista_target: ListaTarget,
    /// Re-seeding of degenerate atoms after each epoch (greedy models only).
    pub atom_refresh: Option<AtomRefresh>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Lgm,
            max_cardinality: 15,
            residual_threshold: None,
            stop_mode: StopMode::ThresholdOrMax,
            true_cardinality: false,
            loss: LossConfig::default(),
            optimizer: AdamConfig::default(),
            batch_size: 50,
            epochs: 10,
            seed: 0,
            mmse: RandConfig::default(),
            lista_layers: 7,
            lista_lambda: 0.1,
            lista_target: ListaTarget::Signal,
            atom_refresh: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if let Some(eps) = self.residual_threshold {
            if !(eps >= 0.0 && eps.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "ε = {eps} must be non-negative"
                )));
            }
        }
        if self.model == ModelKind::Lista && self.lista_layers == 0 {
            return Err(Error::InvalidConfig(
                "LISTA needs at least one layer".into(),
            ));
        }
        if let Some(r) = self.atom_refresh {
            if !(r.max_coherence > 0.0 && r.max_coherence <= 1.0) || !(r.min_usage >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "invalid atom refresh settings {r:?}"
                )));
            }
        }
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.mmse.validate()
    }

    /// Pursuit settings for signal `j` of `data`.
    fn pursuit(&self, data: &LabeledDataset, j: usize) -> PursuitConfig {
        if self.true_cardinality {
            return PursuitConfig::exact(data.supports[j].len());
        }
        let eps = self
            .residual_threshold
            .unwrap_or(data.sigma * (data.clean.rows() as f64).sqrt());
        PursuitConfig {
            max_cardinality: self.max_cardinality,
            residual_threshold: eps,
            stop_mode: self.stop_mode,
        }
    }
}

/// Trainable model.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    /// LGM, L-MP and LGM-MMSE share these parameters.
    Lgm(LgmParams),
    Lista(ListaParams),
}

impl Model {
    /// Random unit-norm dictionary shared by every model kind: `D = D₂` for
    /// the greedy models, the ISTA-tied parameters for LISTA.
    pub fn init(cfg: &TrainConfig, n: usize, m: usize) -> Result<Model> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX));
        let d = random_dictionary(n, m, &mut rng);
        Ok(match cfg.model {
            ModelKind::Lista => Model::Lista(ListaParams::from_dictionary(
                &d,
                cfg.lista_lambda,
                cfg.lista_layers,
            )?),
            _ => Model::Lgm(LgmParams::tied(d)?),
        })
    }

    fn flatten(&self) -> Vector {
        match self {
            Model::Lgm(p) => p.flatten(),
            Model::Lista(p) => p.flatten(),
        }
    }

    fn unflatten(&self, flat: &[f64]) -> Result<Model> {
        Ok(match self {
            Model::Lgm(p) => Model::Lgm(p.unflatten(flat)?),
            Model::Lista(p) => Model::Lista(p.unflatten(flat)?),
        })
    }

    /// Writes the parameters as a checkpoint (see [`crate::unrolled::Checkpoint`]).
    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            Model::Lgm(p) => lgm_checkpoint(p, None).save(path),
            Model::Lista(p) => lista_checkpoint(p).save(path),
        }
    }

    /// Reads a checkpoint written by [`Model::save`].
    pub fn load(path: &Path) -> Result<Model> {
        let c = Checkpoint::load(path)?;
        match c.meta.get("model").and_then(|v| v.as_str()) {
            Some("lista") => Ok(Model::Lista(lista_from_checkpoint(&c)?)),
            Some("lgm") => match lgm_from_checkpoint(&c)? {
                (p, None) => Ok(Model::Lgm(p)),
                (_, Some(_)) => Err(Error::UnsupportedFormat(
                    "checkpoint holds an attention network; load it as a denoiser".into(),
                )),
            },
            other => Err(Error::UnsupportedFormat(format!(
                "checkpoint model {other:?}"
            ))),
        }
    }

    /// Synthesis and analysis dictionaries, DC atom removed.
    fn dictionaries(&self) -> (Matrix, Matrix) {
        let strip = |d: &Matrix, dc: Option<usize>| match dc {
            Some(k) => {
                let keep: Vec<usize> = (0..d.cols()).filter(|&j| j != k).collect();
                d.select_columns(&keep)
            }
            None => d.clone(),
        };
        match self {
            Model::Lgm(p) => (
                strip(p.synthesis().atoms(), p.dc_index()),
                strip(p.analysis().atoms(), p.dc_index()),
            ),
            Model::Lista(p) => (p.d2.clone(), p.d1.clone()),
        }
    }
}

/// Output of one model evaluation on one signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub output: Vector,
    /// Nonzeros in the (possibly averaged) code.
    pub cardinality: usize,
}

/// LGM-MMSE: `rand.draws` randomized-selection passes plus the greedy pass.
pub fn lgm_mmse_traces(
    params: &LgmParams,
    x: &[f64],
    cfg: &PursuitConfig,
    rand: &RandConfig,
    seed: u64,
    record: bool,
) -> Result<Vec<UnrolledTrace>> {
    let mut traces = Vec::with_capacity(rand.draws + 1);
    for run in 0..rand.draws {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, run as u64));
        let selection = Selection::Random {
            tau_factor: rand.tau_factor,
            rng: &mut rng,
        };
        traces.push(lgm_forward_with(params, x, cfg, None, selection, record)?);
    }
    traces.push(lgm_forward(params, x, cfg, None, record)?);
    Ok(traces)
}

fn average_traces(traces: &[UnrolledTrace], m: usize) -> Inference {
    let k = traces.len() as f64;
    let mut output = vec![0.0; traces[0].output.len()];
    let mut code = vec![0.0; m];
    for t in traces {
        output
            .iter_mut()
            .zip(&t.output)
            .for_each(|(o, v)| *o += v / k);
        for (&i, &c) in t.code.support.iter().zip(&t.code.coeffs) {
            code[i] += c / k;
        }
    }
    Inference {
        output,
        cardinality: code.iter().filter(|v| **v != 0.0).count(),
    }
}

/// How a model is applied at inference time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InferenceMode {
    Lgm,
    Lmp,
    Mmse,
    Lista,
}

impl From<ModelKind> for InferenceMode {
    fn from(k: ModelKind) -> Self {
        match k {
            ModelKind::Lgm => InferenceMode::Lgm,
            ModelKind::Lmp => InferenceMode::Lmp,
            ModelKind::LgmMmse => InferenceMode::Mmse,
            ModelKind::Lista => InferenceMode::Lista,
        }
    }
}

pub fn infer(
    model: &Model,
    mode: InferenceMode,
    x: &[f64],
    pcfg: &PursuitConfig,
    rand: &RandConfig,
    seed: u64,
) -> Result<Inference> {
    match (model, mode) {
        (Model::Lista(p), _) => {
            let t = lista_forward(p, x, false)?;
            Ok(Inference {
                cardinality: t.code.iter().filter(|v| **v != 0.0).count(),
                output: t.output,
            })
        }
        (Model::Lgm(p), InferenceMode::Lmp) => {
            let t = lmp_forward(p, x, pcfg, false)?;
            Ok(Inference {
                cardinality: t.code.cardinality(),
                output: t.output,
            })
        }
        (Model::Lgm(p), InferenceMode::Mmse) => Ok(average_traces(
            &lgm_mmse_traces(p, x, pcfg, rand, seed, false)?,
            p.m(),
        )),
        (Model::Lgm(p), _) => {
            let t = lgm_forward(p, x, pcfg, None, false)?;
            Ok(Inference {
                cardinality: t.code.cardinality(),
                output: t.output,
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    /// Mean `‖x* − x̂‖₂²` per signal.
    pub mse: f64,
    pub card_mean: f64,
    pub card_std: f64,
}

pub(crate) fn summarize(errors: &[f64], cards: &[usize]) -> EvalMetrics {
    let r = errors.len().max(1) as f64;
    let mse = errors.iter().sum::<f64>() / r;
    let card_mean = cards.iter().sum::<usize>() as f64 / r;
    let card_var = cards
        .iter()
        .map(|&c| (c as f64 - card_mean).powi(2))
        .sum::<f64>()
        / r;
    EvalMetrics {
        mse,
        card_mean,
        card_std: card_var.sqrt(),
    }
}

/// Test-set metrics of `model` applied in `mode` under `cfg`'s pursuit settings.
pub fn evaluate(
    model: &Model,
    mode: InferenceMode,
    cfg: &TrainConfig,
    data: &LabeledDataset,
) -> Result<EvalMetrics> {
    let stream = derive_seed(cfg.seed, 0xE7A1);
    let results: Vec<(f64, usize)> = (0..data.len())
        .into_par_iter()
        .map(|j| {
            let x = data.noisy.col(j);
            let target = data.clean.col(j);
            let out = infer(
                model,
                mode,
                &x,
                &cfg.pursuit(data, j),
                &cfg.mmse,
                derive_seed(stream, j as u64),
            )?;
            let err: f64 = out
                .output
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            Ok((err, out.cardinality))
        })
        .collect::<Result<_>>()?;
    let (errors, cards): (Vec<f64>, Vec<usize>) = results.into_iter().unzip();
    Ok(summarize(&errors, &cards))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 holds the metrics before training.
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-signal `‖x* − x̂‖²` over the epoch's batches, each measured
    /// before its update (epoch 0: on the whole training set).
    pub train_loss: f64,
    pub test_mse: f64,
    pub card_mean: f64,
    pub card_std: f64,
    /// Distance of the synthesis dictionary to the true one.
    pub dict_distance: Option<f64>,
    /// Distance of the analysis (LISTA: in-loop) dictionary to the true one.
    pub analysis_distance: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub history: Vec<EpochRecord>,
}

impl TrainRun {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "epoch,lr,train_loss,test_mse,card_mean,card_std,dict_distance,analysis_distance\n",
        );
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.history {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.epoch,
                r.lr,
                r.train_loss,
                r.test_mse,
                r.card_mean,
                r.card_std,
                opt(r.dict_distance),
                opt(r.analysis_distance)
            );
        }
        s
    }
}

struct BatchOutcome {
    /// Squared error per signal of the batch.
    errors: Vec<f64>,
    /// How often each atom was selected (greedy models).
    usage: Vec<usize>,
    grad: Vector,
}

fn lgm_batch(
    params: &LgmParams,
    cfg: &TrainConfig,
    data: &LabeledDataset,
    batch: &[usize],
    stream: u64,
) -> Result<BatchOutcome> {
    let mode = InferenceMode::from(cfg.model);
    let forwards: Vec<Vec<UnrolledTrace>> = batch
        .par_iter()
        .map(|&j| {
            let x = data.noisy.col(j);
            let pcfg = cfg.pursuit(data, j);
            Ok(match mode {
                InferenceMode::Lmp => vec![lmp_forward(params, &x, &pcfg, true)?],
                InferenceMode::Mmse => {
                    let seed = derive_seed(stream, j as u64);
                    lgm_mmse_traces(params, &x, &pcfg, &cfg.mmse, seed, true)?
                }
                _ => vec![lgm_forward(params, &x, &pcfg, None, true)?],
            })
        })
        .collect::<Result<_>>()?;
    let mut usage = vec![0; params.m()];
    for t in forwards.iter().flatten() {
        for &i in &t.selected {
            usage[i] += 1;
        }
    }
    let outputs: Vec<Vector> = forwards
        .iter()
        .map(|ts| average_traces(ts, params.m()).output)
        .collect();
    let targets: Vec<Vector> = batch.iter().map(|&j| data.clean.col(j)).collect();
    let (_, seeds) = reconstruction_loss(&outputs, &targets, cfg.loss.kind)?;
    let errors = outputs
        .iter()
        .zip(&targets)
        .map(|(o, t)| o.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .collect();

    let grads: Vec<LgmGrad> = forwards
        .par_iter()
        .zip(&seeds)
        .map(|(traces, g)| {
            let share = 1.0 / traces.len() as f64;
            let g: Vec<f64> = g.iter().map(|v| v * share).collect();
            let mut grad = params.zero_grad();
            for t in traces {
                match mode {
                    InferenceMode::Lmp => lmp_backward_into(params, t, &g, &mut grad)?,
                    _ => lgm_backward_into(params, None, t, &g, &mut grad, None)?,
                }
            }
            Ok(grad)
        })
        .collect::<Result<_>>()?;
    let mut total = params.zero_grad();
    for g in &grads {
        total.add_assign(g);
    }
    if cfg.loss.xi > 0.0 {
        let (_, ga) = coherence_with_grad(params.analysis().atoms(), params.dc_index())?;
        let (_, gs) = coherence_with_grad(params.synthesis().atoms(), params.dc_index())?;
        let mut reg = params.zero_grad();
        reg.analysis = ga;
        reg.synthesis = gs;
        reg.scale(cfg.loss.xi);
        total.add_assign(&reg);
    }
    Ok(BatchOutcome {
        errors,
        usage,
        grad: total.flatten(),
    })
}

fn lista_batch(
    params: &ListaParams,
    cfg: &TrainConfig,
    data: &LabeledDataset,
    batch: &[usize],
) -> Result<BatchOutcome> {
    let traces: Vec<_> = batch
        .par_iter()
        .map(|&j| lista_forward(params, &data.noisy.col(j), true))
        .collect::<Result<_>>()?;
    let signal_targets: Vec<Vector> = batch.iter().map(|&j| data.clean.col(j)).collect();
    let errors = traces
        .iter()
        .zip(&signal_targets)
        .map(|(t, c)| {
            t.output
                .iter()
                .zip(c)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        })
        .collect();
    let (outputs, targets): (Vec<Vector>, Vec<Vector>) = match cfg.lista_target {
        ListaTarget::Signal => (
            traces.iter().map(|t| t.output.clone()).collect(),
            signal_targets,
        ),
        ListaTarget::Code => (
            traces.iter().map(|t| t.code.clone()).collect(),
            batch.iter().map(|&j| data.codes.col(j)).collect(),
        ),
    };
    let (_, seeds) = reconstruction_loss(&outputs, &targets, cfg.loss.kind)?;
    let grads: Vec<_> = traces
        .par_iter()
        .zip(&seeds)
        .map(|(t, g)| {
            let mut grad = params.zero_grad();
            match cfg.lista_target {
                ListaTarget::Signal => lista_backward_into(params, t, Some(g), None, &mut grad)?,
                ListaTarget::Code => lista_backward_into(params, t, None, Some(g), &mut grad)?,
            }
            Ok(grad)
        })
        .collect::<Result<_>>()?;
    let mut total = params.zero_grad();
    for g in &grads {
        total.add_assign(g);
    }
    Ok(BatchOutcome {
        errors,
        usage: Vec::new(),
        grad: total.flatten(),
    })
}

fn record(
    model: &Model,
    cfg: &TrainConfig,
    epoch: usize,
    lr: f64,
    train_loss: f64,
    test: &LabeledDataset,
    d_true: Option<&Matrix>,
) -> Result<EpochRecord> {
    let m = evaluate(model, cfg.model.into(), cfg, test)?;
    let (synth, analysis) = model.dictionaries();
    let (dict_distance, analysis_distance) = match d_true {
        Some(d) => (
            Some(dictionary_distance(d, &synth)?),
            Some(dictionary_distance(d, &analysis)?),
        ),
        None => (None, None),
    };
    Ok(EpochRecord {
        epoch,
        lr,
        train_loss,
        test_mse: m.mse,
        card_mean: m.card_mean,
        card_std: m.card_std,
        dict_distance,
        analysis_distance,
    })
}

/// Re-seeds the non-DC atoms selected by `rule`. Each replacement (in both
/// dictionaries) is the normalized error `clean − output` of the next worst
/// training signal by `errors`. Returns the new parameters and the replaced
/// indices.
fn refresh_atoms(
    params: &LgmParams,
    cfg: &TrainConfig,
    data: &LabeledDataset,
    errors: &[f64],
    usage: &[usize],
    protected: &[bool],
    rule: AtomRefresh,
) -> Result<(LgmParams, Vec<usize>)> {
    let d = params.analysis();
    let dc = params.dc_index();
    let m = params.m();
    let units: Vec<Vector> = (0..m)
        .map(|j| {
            let a = d.atom(j);
            let w = d.weights()[j];
            a.iter().map(|v| v * w).collect()
        })
        .collect();
    let active = m - usize::from(dc.is_some());
    let mean_usage = usage.iter().sum::<usize>() as f64 / active.max(1) as f64;
    let mut replaced: Vec<usize> = Vec::new();
    for j in 0..m {
        if Some(j) == dc {
            continue;
        }
        let rare = !protected[j]
            && (usage.get(j).copied().unwrap_or(0) as f64) < rule.min_usage * mean_usage;
        let duplicate = (0..j)
            .filter(|&i| Some(i) != dc && !replaced.contains(&i))
            .any(|i| dot(&units[i], &units[j]).abs() > rule.max_coherence);
        if rare || duplicate {
            replaced.push(j);
        }
    }
    if replaced.is_empty() {
        return Ok((params.clone(), replaced));
    }
    let mut ranked: Vec<usize> = (0..errors.len()).collect();
    ranked.sort_by(|&a, &b| errors[b].total_cmp(&errors[a]).then(a.cmp(&b)));
    let mut analysis = d.atoms().clone();
    let mut synthesis = params.synthesis().atoms().clone();
    let mut candidates = ranked.into_iter();
    let mut done = Vec::new();
    for &j in &replaced {
        let Some(k) = candidates.next() else { break };
        let x = data.noisy.col(k);
        let trace = lgm_forward(params, &x, &cfg.pursuit(data, k), None, false)?;
        let e = sub(&data.clean.col(k), &trace.output);
        let norm = norm2(&e);
        if norm == 0.0 {
            continue;
        }
        let unit: Vec<f64> = e.iter().map(|v| v / norm).collect();
        analysis.set_col(j, &unit);
        synthesis.set_col(j, &unit);
        done.push(j);
    }
    let next = LgmParams::from_parts(analysis, synthesis, dc, params.dc_scales())?;
    Ok((next, done))
}

/// Trains `model` with shuffled mini-batches and ADAM, evaluating on `test`
/// after every epoch. Deterministic given `cfg.seed`.
pub fn train(
    cfg: &TrainConfig,
    model: Model,
    train: &LabeledDataset,
    test: &LabeledDataset,
    d_true: Option<&Matrix>,
) -> Result<(Model, TrainRun)> {
    train_with(cfg, model, train, test, d_true, |_| {})
}

/// [`train`] with a callback after each recorded epoch.
pub fn train_with(
    cfg: &TrainConfig,
    mut model: Model,
    train: &LabeledDataset,
    test: &LabeledDataset,
    d_true: Option<&Matrix>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model, TrainRun)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    match (&model, cfg.model) {
        (Model::Lista(_), ModelKind::Lista) => {}
        (Model::Lgm(_), k) if k != ModelKind::Lista => {}
        _ => {
            return Err(Error::InvalidConfig(format!(
                "model parameters do not match model kind {:?}",
                cfg.model
            )))
        }
    }
    let mut run = TrainRun::default();
    let initial_train = evaluate(&model, cfg.model.into(), cfg, train)?.mse;
    let first = record(
        &model,
        cfg,
        0,
        cfg.optimizer.lr,
        initial_train,
        test,
        d_true,
    )?;
    on_epoch(&first);
    run.history.push(first);

    let mut adam = AdamState::new(cfg.optimizer, model.flatten().len())?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    // Epoch at which each atom was last re-seeded.
    let mut seeded: Vec<Option<usize>> = match &model {
        Model::Lgm(p) => vec![None; p.m()],
        Model::Lista(_) => Vec::new(),
    };
    for epoch in 0..cfg.epochs {
        let lr = cfg.optimizer.lr_at_epoch(epoch);
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2 * epoch as u64));
        order.shuffle(&mut shuffle_rng);
        let stream = derive_seed(cfg.seed, 2 * epoch as u64 + 1);
        let mut errors = vec![0.0; train.len()];
        let mut usage: Vec<usize> = Vec::new();
        for batch in order.chunks(cfg.batch_size) {
            let outcome = match &model {
                Model::Lgm(p) => lgm_batch(p, cfg, train, batch, stream)?,
                Model::Lista(p) => lista_batch(p, cfg, train, batch)?,
            };
            for (&j, e) in batch.iter().zip(outcome.errors) {
                errors[j] = e;
            }
            usage.resize(outcome.usage.len(), 0);
            for (u, c) in usage.iter_mut().zip(&outcome.usage) {
                *u += c;
            }
            let mut flat = model.flatten();
            adam.step(&mut flat, &outcome.grad, lr)?;
            model = model.unflatten(&flat)?;
        }
        if let (Some(rule), Model::Lgm(p)) = (cfg.atom_refresh, &model) {
            let protected: Vec<bool> = seeded
                .iter()
                .map(|e| e.is_some_and(|e| epoch < e + rule.grace_epochs))
                .collect();
            let (refreshed, replaced) =
                refresh_atoms(p, cfg, train, &errors, &usage, &protected, rule)?;
            for &j in &replaced {
                seeded[j] = Some(epoch);
            }
            let (n, m) = (p.n(), p.m());
            adam.reset(
                replaced
                    .iter()
                    .flat_map(|&j| (0..n).flat_map(move |row| [row * m + j, n * m + row * m + j])),
            );
            model = Model::Lgm(refreshed);
        }
        let error: f64 = errors.iter().sum();
        let rec = record(
            &model,
            cfg,
            epoch + 1,
            lr,
            error / train.len() as f64,
            test,
            d_true,
        )?;
        on_epoch(&rec);
        run.history.push(rec);
    }
    Ok((model, run))
}
