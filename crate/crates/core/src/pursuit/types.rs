use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;

/// Relative residual below which a signal counts as fully represented.
pub(crate) const ZERO_RESIDUAL: f64 = 1e-12;

/// Sparse code over an `ambient_dim`-dimensional coefficient space.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCode {
    pub ambient_dim: usize,
    pub support: Vec<usize>,
    pub coeffs: Vec<f64>,
}

impl SparseCode {
    pub fn empty(ambient_dim: usize) -> Self {
        Self {
            ambient_dim,
            support: Vec::new(),
            coeffs: Vec::new(),
        }
    }

    /// Nonzero entries of a dense vector, in index order.
    pub fn from_dense(alpha: &[f64]) -> Self {
        let (support, coeffs) = alpha
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .unzip();
        Self {
            ambient_dim: alpha.len(),
            support,
            coeffs,
        }
    }

    pub fn to_dense(&self) -> Vector {
        let mut out = vec![0.0; self.ambient_dim];
        for (&i, &c) in self.support.iter().zip(&self.coeffs) {
            out[i] += c;
        }
        out
    }

    /// Number of support entries.
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Count of distinct atoms carrying a nonzero coefficient.
    pub fn cardinality(&self) -> usize {
        self.to_dense().iter().filter(|v| **v != 0.0).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StopMode {
    /// Stop as soon as `‖r‖₂ ≤ ε` or the support reaches `s`.
    #[default]
    ThresholdOrMax,
    /// Ignore `ε`; run `s` iterations unless the residual vanishes first.
    ExactCardinality,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PursuitConfig {
    pub max_cardinality: usize,
    pub residual_threshold: f64,
    #[serde(default)]
    pub stop_mode: StopMode,
}

impl PursuitConfig {
    pub fn new(max_cardinality: usize, residual_threshold: f64) -> Self {
        Self {
            max_cardinality,
            residual_threshold,
            stop_mode: StopMode::ThresholdOrMax,
        }
    }

    pub fn exact(cardinality: usize) -> Self {
        Self {
            max_cardinality: cardinality,
            residual_threshold: 0.0,
            stop_mode: StopMode::ExactCardinality,
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.max_cardinality > m {
            return Err(Error::InvalidConfig(format!(
                "max cardinality {} exceeds the {m} available atoms",
                self.max_cardinality
            )));
        }
        if !self.residual_threshold.is_finite() || self.residual_threshold < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "residual threshold {} must be finite and non-negative",
                self.residual_threshold
            )));
        }
        Ok(())
    }

    /// Whether a greedy loop that has completed `k` iterations stops now.
    pub fn should_stop(&self, k: usize, residual_norm: f64, signal_norm: f64) -> bool {
        if k >= self.max_cardinality {
            return true;
        }
        match self.stop_mode {
            StopMode::ThresholdOrMax => residual_norm <= self.residual_threshold,
            StopMode::ExactCardinality => residual_norm <= ZERO_RESIDUAL * signal_norm,
        }
    }
}

/// Output of a pursuit engine.
#[derive(Clone, Debug, PartialEq)]
pub struct PursuitResult {
    pub code: SparseCode,
    pub reconstruction: Vector,
    /// `‖r_k‖₂` for `k = 0..=iterations`; entry 0 is the initial residual.
    pub residual_norms: Vec<f64>,
    pub iterations: usize,
    /// Set when an engine without a natural bound stopped on its safety cap.
    pub hit_iteration_cap: bool,
}

impl PursuitResult {
    pub fn final_residual_norm(&self) -> f64 {
        *self.residual_norms.last().unwrap_or(&0.0)
    }
}

/// Randomized atom selection for Rand-OMP.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandConfig {
    pub tau_factor: f64,
    pub draws: usize,
    pub seed: u64,
}

impl Default for RandConfig {
    fn default() -> Self {
        Self {
            tau_factor: 0.8,
            draws: 5,
            seed: 0,
        }
    }
}

impl RandConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_factor > 0.0 && self.tau_factor <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "tau factor {} must lie in (0, 1]",
                self.tau_factor
            )));
        }
        if self.draws == 0 {
            return Err(Error::InvalidConfig("at least one draw is required".into()));
        }
        Ok(())
    }
}

/// Index of the largest `|u_i|` among unmasked entries; ties go to the lowest index.
pub fn argmax_abs(u: &[f64], masked: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in u.iter().enumerate() {
        if masked.get(i).copied().unwrap_or(false) {
            continue;
        }
        let a = v.abs();
        match best {
            Some((_, b)) if a <= b => {}
            _ => best = Some((i, a)),
        }
    }
    best.map(|(i, _)| i)
}

/// Indices of the `k` largest `|u_i|` among unmasked entries, by descending
/// magnitude with ties broken by the lower index.
pub fn top_k_abs(u: &[f64], k: usize, masked: &[bool]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..u.len())
        .filter(|&i| !masked.get(i).copied().unwrap_or(false))
        .collect();
    idx.sort_by(|&a, &b| u[b].abs().total_cmp(&u[a].abs()).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax_abs(&[1.0, -3.0, 3.0], &[]), Some(1));
        assert_eq!(argmax_abs(&[0.0, 0.0], &[]), Some(0));
        assert_eq!(argmax_abs(&[5.0, 1.0, 1.0], &[true, false, false]), Some(1));
        assert_eq!(argmax_abs(&[5.0], &[true]), None);
    }

    #[test]
    fn top_k_order() {
        assert_eq!(top_k_abs(&[3.0, -5.0, 1.0], 2, &[]), vec![1, 0]);
        assert_eq!(top_k_abs(&[1.0, 1.0, 2.0], 3, &[]), vec![2, 0, 1]);
        assert_eq!(
            top_k_abs(&[1.0, 1.0, 2.0], 2, &[false, false, true]),
            vec![0, 1]
        );
    }

    #[test]
    fn code_dense_round_trip() {
        let c = SparseCode {
            ambient_dim: 4,
            support: vec![2, 0],
            coeffs: vec![1.5, -1.0],
        };
        assert_eq!(c.to_dense(), vec![-1.0, 0.0, 1.5, 0.0]);
        assert_eq!(SparseCode::from_dense(&c.to_dense()).support, vec![0, 2]);
        assert_eq!(c.cardinality(), 2);
    }

    #[test]
    fn config_validation() {
        assert!(PursuitConfig::new(5, 0.1).validate(4).is_err());
        assert!(PursuitConfig::new(2, -1.0).validate(4).is_err());
        assert!(PursuitConfig::new(2, 0.0).validate(4).is_ok());
        assert!(RandConfig {
            tau_factor: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RandConfig {
            draws: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
