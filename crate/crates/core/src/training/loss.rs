use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sub, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `Σ‖x* − x̂‖²`.
    #[default]
    SumL2,
    /// `log Σ‖x* − x̂‖²`.
    LogSumL2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Weight `ξ` of the coherence penalty.
    pub xi: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::SumL2,
            xi: 5e-5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "ξ = {} must be non-negative",
                self.xi
            )));
        }
        Ok(())
    }
}

/// Batch reconstruction loss and `∂L/∂x̂_i` for every output.
pub fn reconstruction_loss(
    outputs: &[Vector],
    targets: &[Vector],
    kind: LossKind,
) -> Result<(f64, Vec<Vector>)> {
    if outputs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if outputs.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} outputs for {} targets",
            outputs.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    let mut diffs = Vec::with_capacity(outputs.len());
    for (o, t) in outputs.iter().zip(targets) {
        if o.len() != t.len() {
            return Err(Error::ShapeMismatch(
                "output and target lengths differ".into(),
            ));
        }
        let d = sub(o, t);
        total += d.iter().map(|v| v * v).sum::<f64>();
        diffs.push(d);
    }
    let (value, scale) = match kind {
        LossKind::SumL2 => (total, 2.0),
        LossKind::LogSumL2 => {
            if !(total > 0.0) {
                return Err(Error::NonFinite("log of a zero reconstruction error"));
            }
            (total.ln(), 2.0 / total)
        }
    };
    for d in &mut diffs {
        d.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((value, diffs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_reconstruction_is_zero() {
        let x = vec![vec![1.0, 2.0]];
        let (l, g) = reconstruction_loss(&x, &x, LossKind::SumL2).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, vec![vec![0.0, 0.0]]);
        assert!(matches!(
            reconstruction_loss(&[], &[], LossKind::SumL2),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn log_loss_gradient() {
        let o = vec![vec![1.0, 0.0], vec![0.5, 0.5]];
        let t = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let (l, g) = reconstruction_loss(&o, &t, LossKind::LogSumL2).unwrap();
        assert!((l - 1.5f64.ln()).abs() < 1e-15);
        assert!((g[0][0] - 2.0 / 1.5).abs() < 1e-15);
    }
}
