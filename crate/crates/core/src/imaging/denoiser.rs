use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::image::Image;
use super::patches::{
    accumulate, coverage, extract_patches, psnr, read_patch, reconstruct_average,
};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::pursuit::{derive_seed, PursuitConfig};
use crate::synthetic::make_dct_dictionary;
use crate::training::{
    coherence_with_grad, reconstruction_loss, AdamConfig, AdamState, LossConfig, LossKind, LrDecay,
};
use crate::unrolled::{
    lgm_backward_into, lgm_checkpoint, lgm_forward, lgm_from_checkpoint, AttentionParams,
    Checkpoint, LgmGrad, LgmParams, DC_SCALE_INIT,
};

/// Pixels are divided by this before entering the network.
pub const PIXEL_SCALE: f64 = 255.0;

/// Patches handled per work item; also fixes the gradient summation order.
const CHUNK: usize = 256;

/// Patch denoiser: an LGM with a DC atom and attention over its layers.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel {
    pub patch: usize,
    pub params: LgmParams,
    pub attention: AttentionParams,
}

impl DenoiserModel {
    /// Both dictionaries start as the `p² × 4p²` DCT with a DC atom appended
    /// (index `4p²`, scale 2.5); the attention network uses its default init.
    pub fn dct(patch: usize, layers: usize, seed: u64) -> Result<Self> {
        if patch == 0 || layers == 0 {
            return Err(Error::InvalidConfig(
                "patch size and layers must be positive".into(),
            ));
        }
        let n = patch * patch;
        let d = make_dct_dictionary(n, 4 * n);
        let params = LgmParams::with_dc(&d, &d, DC_SCALE_INIT)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let attention = AttentionParams::init(n, layers, &mut rng);
        Ok(Self {
            patch,
            params,
            attention,
        })
    }

    pub fn layers(&self) -> usize {
        self.attention.layers()
    }

    fn pursuit(&self) -> PursuitConfig {
        PursuitConfig::exact(self.layers())
    }

    pub fn denoise_patch(&self, x: &[f64]) -> Result<Vector> {
        Ok(lgm_forward(
            &self.params,
            x,
            &self.pursuit(),
            Some(&self.attention),
            false,
        )?
        .output)
    }

    fn denoise_patches(&self, patches: &Matrix) -> Result<Matrix> {
        let k = patches.cols();
        let chunks: Vec<Vec<Vector>> = (0..k.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                (c * CHUNK..((c + 1) * CHUNK).min(k))
                    .map(|j| self.denoise_patch(&patches.col(j)))
                    .collect()
            })
            .collect::<Result<_>>()?;
        let mut out = Matrix::zeros(patches.rows(), k);
        for (j, v) in chunks.iter().flatten().enumerate() {
            out.set_col(j, v);
        }
        Ok(out)
    }

    fn flatten(&self) -> Vector {
        let mut v = self.params.flatten();
        for s in self.attention.slices() {
            v.extend_from_slice(s);
        }
        v
    }

    fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        let k = self.params.flatten().len();
        let params = self.params.unflatten(&flat[..k])?;
        let mut attention = self.attention.clone();
        let mut pos = k;
        for s in attention.slices_mut() {
            s.copy_from_slice(&flat[pos..pos + s.len()]);
            pos += s.len();
        }
        Ok(Self {
            patch: self.patch,
            params,
            attention,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = lgm_checkpoint(&self.params, Some(&self.attention));
        c.meta.insert("model".into(), json!("lgm-denoiser"));
        c.meta.insert("patch".into(), json!(self.patch));
        c.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Checkpoint::load(path)?;
        let patch = c
            .meta
            .get("patch")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::CorruptHeader("checkpoint has no patch size".into()))?
            as usize;
        let (params, attention) = lgm_from_checkpoint(&c)?;
        let attention = attention
            .ok_or_else(|| Error::CorruptHeader("denoiser checkpoint lacks attention".into()))?;
        if params.n() != patch * patch || attention.signal_dim() != params.n() {
            return Err(Error::CorruptHeader(
                "tensor shapes do not match the patch size".into(),
            ));
        }
        Ok(Self {
            patch,
            params,
            attention,
        })
    }
}

/// Denoises every overlapping patch and averages the overlaps. The image
/// mean is removed first and restored afterwards. The noise level is the
/// one the model was trained for.
pub fn denoise(model: &DenoiserModel, img: &Image) -> Result<Image> {
    let p = model.patch;
    let mean = img.mean();
    let scaled = img.map(|v| (v - mean) / PIXEL_SCALE);
    let patches = extract_patches(&scaled, p)?;
    let out = model.denoise_patches(&patches)?;
    let rec = reconstruct_average(&out, img.height(), img.width(), p, 0.0, None)?;
    Ok(rec.map(|v| v * PIXEL_SCALE + mean))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserTrainConfig {
    /// Noise standard deviation on the 0..=255 scale.
    pub sigma: f64,
    pub crop: usize,
    pub crops_per_epoch: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossConfig,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        Self {
            sigma: 25.0,
            crop: 100,
            crops_per_epoch: 400,
            batch_size: 8,
            epochs: 60,
            loss: LossConfig {
                kind: LossKind::LogSumL2,
                xi: 1e-5,
            },
            optimizer: AdamConfig {
                lr: 0.002,
                decay: Some(LrDecay {
                    factor: 0.5,
                    every_epochs: 20,
                }),
                ..Default::default()
            },
            seed: 0,
        }
    }
}

impl DenoiserTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "σ = {} must be non-negative",
                self.sigma
            )));
        }
        if self.batch_size == 0 || self.crop == 0 {
            return Err(Error::InvalidConfig(
                "crop and batch sizes must be positive".into(),
            ));
        }
        self.loss.validate()?;
        self.optimizer.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserEpoch {
    pub epoch: usize,
    pub lr: f64,
    /// Mean loss over the epoch's batches (`NaN` for epoch 0).
    pub train_loss: f64,
    /// Mean PSNR over the test images, when any are given.
    pub test_psnr: Option<f64>,
}

/// Noisy copies of the test images, fixed for the whole run.
fn noisy_tests(tests: &[Image], cfg: &DenoiserTrainConfig) -> Vec<Image> {
    let stream = derive_seed(cfg.seed, 0x7E57);
    tests
        .iter()
        .enumerate()
        .map(|(i, img)| img.with_noise(cfg.sigma, derive_seed(stream, i as u64)))
        .collect()
}

/// Mean PSNR of the denoised noisy images against the clean ones.
pub fn mean_psnr(model: &DenoiserModel, clean: &[Image], noisy: &[Image]) -> Result<f64> {
    let mut total = 0.0;
    for (c, n) in clean.iter().zip(noisy) {
        total += psnr(&denoise(model, n)?, c, 255.0)?;
    }
    Ok(total / clean.len().max(1) as f64)
}

struct Crop {
    /// Clean crop minus the noisy crop's mean, scaled.
    target: Vec<f64>,
    noisy: Image,
}

fn sample_crop(images: &[Image], cfg: &DenoiserTrainConfig, seed: u64) -> Result<Crop> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = &images[rng.random_range(0..images.len())];
    let top = rng.random_range(0..=img.height() - cfg.crop);
    let left = rng.random_range(0..=img.width() - cfg.crop);
    let clean = img.crop(top, left, cfg.crop, cfg.crop)?;
    let noisy = clean.with_noise(cfg.sigma, rng.random());
    let mean = noisy.mean();
    Ok(Crop {
        target: clean
            .pixels()
            .iter()
            .map(|v| (v - mean) / PIXEL_SCALE)
            .collect(),
        noisy: noisy.map(|v| (v - mean) / PIXEL_SCALE),
    })
}

/// Loss and flattened gradient for one batch of crops. Each patch runs twice:
/// once to form the crop estimate, then again with a tape right before its
/// backward pass, so only one chunk of tapes is alive at a time.
fn batch_gradient(
    model: &DenoiserModel,
    crops: &[Crop],
    loss: &LossConfig,
) -> Result<(f64, Vector)> {
    let p = model.patch;
    let size = crops[0].noisy.height();
    let counts = coverage(size, size, p);
    let mut outputs = Vec::with_capacity(crops.len());
    let mut patch_sets = Vec::with_capacity(crops.len());
    for crop in crops {
        let patches = extract_patches(&crop.noisy, p)?;
        let out = model.denoise_patches(&patches)?;
        let acc = accumulate(&out, size, size, p);
        outputs.push(
            acc.iter()
                .zip(&counts)
                .map(|(a, n)| a / n)
                .collect::<Vector>(),
        );
        patch_sets.push(patches);
    }
    let targets: Vec<Vector> = crops.iter().map(|c| c.target.clone()).collect();
    let (value, seeds) = reconstruction_loss(&outputs, &targets, loss.kind)?;

    let cfg = model.pursuit();
    let mut grad = model.params.zero_grad();
    let mut att_grad = model.attention.zeros_like();
    for (patches, seed) in patch_sets.iter().zip(&seeds) {
        let g_img: Vec<f64> = seed.iter().zip(&counts).map(|(g, n)| g / n).collect();
        let k = patches.cols();
        let cols = size - p + 1;
        let parts: Vec<(LgmGrad, AttentionParams)> = (0..k.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut g = model.params.zero_grad();
                let mut ga = model.attention.zeros_like();
                let mut gp = vec![0.0; p * p];
                for j in c * CHUNK..((c + 1) * CHUNK).min(k) {
                    read_patch(&g_img, size, p, j / cols, j % cols, &mut gp);
                    let trace = lgm_forward(
                        &model.params,
                        &patches.col(j),
                        &cfg,
                        Some(&model.attention),
                        true,
                    )?;
                    lgm_backward_into(
                        &model.params,
                        Some(&model.attention),
                        &trace,
                        &gp,
                        &mut g,
                        Some(&mut ga),
                    )?;
                }
                Ok((g, ga))
            })
            .collect::<Result<_>>()?;
        for (g, ga) in &parts {
            grad.add_assign(g);
            att_grad.add_assign(ga);
        }
    }
    if loss.xi > 0.0 {
        let dc = model.params.dc_index();
        let (_, ga) = coherence_with_grad(model.params.analysis().atoms(), dc)?;
        let (_, gs) = coherence_with_grad(model.params.synthesis().atoms(), dc)?;
        let mut reg = model.params.zero_grad();
        reg.analysis = ga;
        reg.synthesis = gs;
        reg.scale(loss.xi);
        grad.add_assign(&reg);
    }
    let mut flat = grad.flatten();
    for s in att_grad.slices() {
        flat.extend_from_slice(s);
    }
    Ok((value, flat))
}

/// Trains the denoiser on random crops of `images` with fresh noise every
/// epoch; `tests` (clean) are evaluated after each epoch with fixed noise.
pub fn train_denoiser(
    model: DenoiserModel,
    cfg: &DenoiserTrainConfig,
    images: &[Image],
    tests: &[Image],
    mut on_epoch: impl FnMut(&DenoiserEpoch),
) -> Result<(DenoiserModel, Vec<DenoiserEpoch>)> {
    cfg.validate()?;
    if images.is_empty() || cfg.crops_per_epoch == 0 {
        return Err(Error::EmptyBatch);
    }
    for img in images {
        if img.height() < cfg.crop || img.width() < cfg.crop {
            return Err(Error::ImageTooSmall {
                height: img.height(),
                width: img.width(),
                patch: cfg.crop,
            });
        }
    }
    if cfg.crop < model.patch {
        return Err(Error::InvalidConfig(
            "crop is smaller than the patch".into(),
        ));
    }
    let noisy = noisy_tests(tests, cfg);
    let evaluate = |m: &DenoiserModel| -> Result<Option<f64>> {
        if tests.is_empty() {
            Ok(None)
        } else {
            mean_psnr(m, tests, &noisy).map(Some)
        }
    };
    let mut history = vec![DenoiserEpoch {
        epoch: 0,
        lr: cfg.optimizer.lr,
        train_loss: f64::NAN,
        test_psnr: evaluate(&model)?,
    }];
    on_epoch(&history[0]);

    let mut model = model;
    let mut adam = AdamState::new(cfg.optimizer, model.flatten().len())?;
    for epoch in 0..cfg.epochs {
        let lr = cfg.optimizer.lr_at_epoch(epoch);
        let stream = derive_seed(cfg.seed, epoch as u64);
        let mut total = 0.0;
        let mut batches = 0;
        let ids: Vec<usize> = (0..cfg.crops_per_epoch).collect();
        for chunk in ids.chunks(cfg.batch_size) {
            let crops: Vec<Crop> = chunk
                .iter()
                .map(|&i| sample_crop(images, cfg, derive_seed(stream, i as u64)))
                .collect::<Result<_>>()?;
            let (value, grad) = batch_gradient(&model, &crops, &cfg.loss)?;
            let mut flat = model.flatten();
            adam.step(&mut flat, &grad, lr)?;
            model = model.unflatten(&flat)?;
            total += value;
            batches += 1;
        }
        let rec = DenoiserEpoch {
            epoch: epoch + 1,
            lr,
            train_loss: total / batches as f64,
            test_psnr: evaluate(&model)?,
        };
        on_epoch(&rec);
        history.push(rec);
    }
    Ok((model, history))
}
