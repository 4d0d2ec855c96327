use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::pursuit::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n: usize,
    pub m: usize,
    pub cardinalities: Vec<usize>,
    pub train_per_cardinality: usize,
    pub test_per_cardinality: usize,
    pub sigmas: Vec<f64>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 100,
            m: 400,
            cardinalities: vec![10],
            train_per_cardinality: 10_000,
            test_per_cardinality: 2_000,
            sigmas: vec![0.04, 0.06, 0.08, 0.1, 0.12, 0.14],
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidConfig("n and m must be positive".into()));
        }
        if self.cardinalities.is_empty() {
            return Err(Error::InvalidConfig("no cardinalities given".into()));
        }
        if let Some(&k) = self.cardinalities.iter().find(|&&k| k == 0 || k > self.m) {
            return Err(Error::InvalidConfig(format!(
                "cardinality {k} must lie in 1..={}",
                self.m
            )));
        }
        if let Some(s) = self.sigmas.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "noise level {s} must be positive"
            )));
        }
        Ok(())
    }
}

/// Planted signals stored as columns.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub sigma: f64,
    /// `x*`, `n × r`.
    pub clean: Matrix,
    /// `x* + noise`, `n × r`.
    pub noisy: Matrix,
    /// Dense `α*`, `m × r`.
    pub codes: Matrix,
    /// True supports in increasing index order.
    pub supports: Vec<Vec<usize>>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.clean.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Train and test splits, one dataset per noise level. All noise levels
/// share the same clean signals.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub train: Vec<LabeledDataset>,
    pub test: Vec<LabeledDataset>,
}

struct Clean {
    clean: Matrix,
    codes: Matrix,
    supports: Vec<Vec<usize>>,
}

fn planted(spec: &SyntheticSpec, d_true: &Matrix, per_card: usize, rng: &mut ChaCha8Rng) -> Clean {
    let r = per_card * spec.cardinalities.len();
    let mut clean = Matrix::zeros(spec.n, r);
    let mut codes = Matrix::zeros(spec.m, r);
    let mut supports = Vec::with_capacity(r);
    let mut col = 0;
    for &k in &spec.cardinalities {
        for _ in 0..per_card {
            let mut support = sample(rng, spec.m, k).into_vec();
            support.sort_unstable();
            let coeffs: Vec<f64> = support
                .iter()
                .map(|_| {
                    // (0, 1]
                    let mag = 1.0 - rng.random::<f64>();
                    if rng.random::<bool>() {
                        mag
                    } else {
                        -mag
                    }
                })
                .collect();
            let mut x = vec![0.0; spec.n];
            for (&i, &c) in support.iter().zip(&coeffs) {
                for (row, xv) in x.iter_mut().enumerate() {
                    *xv += c * d_true[(row, i)];
                }
            }
            let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let scale = if scale > 0.0 { scale } else { 1.0 };
            for (row, v) in x.iter().enumerate() {
                clean[(row, col)] = v / scale;
            }
            for (&i, &c) in support.iter().zip(&coeffs) {
                codes[(i, col)] = c / scale;
            }
            supports.push(support);
            col += 1;
        }
    }
    Clean {
        clean,
        codes,
        supports,
    }
}

fn with_noise(c: &Clean, sigma: f64, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let mut noisy = c.clean.clone();
    for v in noisy.as_mut_slice() {
        *v += normal.sample(&mut rng);
    }
    LabeledDataset {
        sigma,
        clean: c.clean.clone(),
        noisy,
        codes: c.codes.clone(),
        supports: c.supports.clone(),
    }
}

/// Generates planted data from `d_true` (`n × m`). Deterministic in
/// `spec.seed`.
pub fn gen_dataset(spec: &SyntheticSpec, d_true: &Matrix) -> Result<SyntheticData> {
    spec.validate()?;
    if d_true.shape() != (spec.n, spec.m) {
        return Err(Error::ShapeMismatch(format!(
            "dictionary is {}x{}, spec asks for {}x{}",
            d_true.rows(),
            d_true.cols(),
            spec.n,
            spec.m
        )));
    }
    let mut train_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0));
    let mut test_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 1));
    let train = planted(spec, d_true, spec.train_per_cardinality, &mut train_rng);
    let test = planted(spec, d_true, spec.test_per_cardinality, &mut test_rng);
    let mut out = SyntheticData {
        train: Vec::new(),
        test: Vec::new(),
    };
    for (k, &sigma) in spec.sigmas.iter().enumerate() {
        let k = k as u64;
        out.train
            .push(with_noise(&train, sigma, derive_seed(spec.seed, 2 + 2 * k)));
        out.test
            .push(with_noise(&test, sigma, derive_seed(spec.seed, 3 + 2 * k)));
    }
    Ok(out)
}
