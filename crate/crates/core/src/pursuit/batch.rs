use rayon::prelude::*;

use super::dictionary::Dictionary;
use super::omp::{grow_support, Support};
use super::types::{argmax_abs, PursuitConfig, PursuitResult, SparseCode};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, sub, Matrix};

/// Batch-OMP: OMP over the columns of `signals` (`n × r`), sharing the
/// precomputed `DᵀD` and `DᵀX` across the batch.
///
/// Correlations are updated as `Dᵀx − G_S α_S` and the residual energy as
/// `‖x‖² − α_Sᵀ D_Sᵀ x`, so the residual vector itself is never formed
/// inside the loop. Gram and projection entries are evaluated exactly as
/// [`super::omp`] evaluates them, which makes the least-squares
/// coefficients bit-identical whenever the supports agree.
pub fn batch_omp(
    dict: &Dictionary,
    signals: &Matrix,
    cfg: &PursuitConfig,
) -> Result<Vec<PursuitResult>> {
    if signals.rows() != dict.n() {
        return Err(Error::ShapeMismatch(format!(
            "signals have {} rows, dictionary has {}",
            signals.rows(),
            dict.n()
        )));
    }
    cfg.validate(dict.m())?;
    let gram = dict.gram();
    let columns: Vec<Vec<f64>> = (0..signals.cols()).map(|j| signals.col(j)).collect();
    columns
        .par_iter()
        .map(|x| {
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("signal"));
            }
            let projections: Vec<f64> = (0..dict.m()).map(|i| dot(dict.atom(i), x)).collect();
            single(dict, &gram, &projections, x, cfg)
        })
        .collect()
}

fn single(
    dict: &Dictionary,
    gram: &Matrix,
    projections: &[f64],
    x: &[f64],
    cfg: &PursuitConfig,
) -> Result<PursuitResult> {
    let energy = dot(x, x);
    let x_norm = energy.sqrt();
    let weights = dict.weights();
    let mut support = Support::new(dict.m());
    let mut coeffs: Vec<f64> = Vec::new();
    let mut norms = vec![x_norm];

    while !cfg.should_stop(support.indices.len(), *norms.last().unwrap(), x_norm) {
        let mut u = projections.to_vec();
        for (&j, &a) in support.indices.iter().zip(&coeffs) {
            for (ui, g) in u.iter_mut().zip(gram.row(j)) {
                *ui -= a * g;
            }
        }
        for (ui, w) in u.iter_mut().zip(weights) {
            *ui *= w;
        }
        grow_support(
            &mut support,
            &u,
            argmax_abs,
            |a, b| gram[(a, b)],
            |a| projections[a],
        )?;
        coeffs = support.solve();
        let explained = dot(&coeffs, &support.rhs);
        norms.push((energy - explained).max(0.0).sqrt());
    }

    let reconstruction = dict.synthesize(&support.indices, &coeffs);
    let iterations = norms.len() - 1;
    if iterations > 0 {
        *norms.last_mut().unwrap() = norm2(&sub(x, &reconstruction));
    }
    Ok(PursuitResult {
        code: SparseCode {
            ambient_dim: dict.m(),
            support: support.indices,
            coeffs,
        },
        reconstruction,
        residual_norms: norms,
        iterations,
        hit_iteration_cap: false,
    })
}
