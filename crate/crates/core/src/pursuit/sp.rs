use super::dictionary::Dictionary;
use super::omp::{check_signal, Support};
use super::types::{top_k_abs, PursuitResult, SparseCode};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, sub, Vector};

/// Default bound on SP refinement iterations.
pub const SP_ITERATION_CAP: usize = 50;

struct Fit {
    support: Vec<usize>,
    coeffs: Vector,
    reconstruction: Vector,
    residual: Vector,
    residual_norm: f64,
}

fn fit(dict: &Dictionary, synth: &Dictionary, x: &[f64], support: Vec<usize>) -> Result<Fit> {
    let mut s = Support::new(dict.m());
    for &i in &support {
        let col: Vec<f64> = s
            .indices
            .iter()
            .map(|&j| dot(dict.atom(j), dict.atom(i)))
            .collect();
        s.push(
            i,
            &col,
            dot(dict.atom(i), dict.atom(i)),
            dot(dict.atom(i), x),
        )
        .map_err(|_| Error::RankDeficientSupport { atom: i })?;
    }
    let coeffs = s.solve();
    let reconstruction = synth.synthesize(&support, &coeffs);
    let residual = sub(x, &reconstruction);
    let residual_norm = norm2(&residual);
    Ok(Fit {
        support,
        coeffs,
        reconstruction,
        residual,
        residual_norm,
    })
}

fn sorted(v: &[usize]) -> Vec<usize> {
    let mut v = v.to_vec();
    v.sort_unstable();
    v
}

/// Subspace Pursuit with cardinality exactly `s`, capped at
/// [`SP_ITERATION_CAP`] refinements.
pub fn sp(dict: &Dictionary, x: &[f64], s: usize) -> Result<PursuitResult> {
    sp_with_cap(dict, x, s, SP_ITERATION_CAP)
}

/// Subspace Pursuit.
///
/// Each refinement merges the `s` atoms most correlated with the residual
/// (excluding the current support) into a temporary `2s` support, fits it,
/// keeps the `s` atoms with the largest norm-weighted coefficients
/// `‖d_i‖·|α̃_i|` and refits. The loop ends when the residual grows (the
/// previous iterate is returned), when the support stops changing, or at
/// `cap` refinements, which sets [`PursuitResult::hit_iteration_cap`].
///
/// `residual_norms[0]` is the residual of the initial fit.
pub fn sp_with_cap(dict: &Dictionary, x: &[f64], s: usize, cap: usize) -> Result<PursuitResult> {
    sp_dual(dict, dict, x, s, cap)
}

/// SP whose reconstructions (and hence residuals) use `synth`, while
/// selection, least squares and pruning use `dict`.
pub(crate) fn sp_dual(
    dict: &Dictionary,
    synth: &Dictionary,
    x: &[f64],
    s: usize,
    cap: usize,
) -> Result<PursuitResult> {
    check_signal(dict, x)?;
    if s == 0 || s > dict.m() {
        return Err(Error::InvalidConfig(format!(
            "SP cardinality {s} must lie in 1..={}",
            dict.m()
        )));
    }
    let initial = top_k_abs(&dict.correlations(x), s, &[]);
    let mut current = fit(dict, synth, x, initial)?;
    let mut norms = vec![current.residual_norm];
    let mut hit_cap = true;

    for _ in 0..cap {
        let u = dict.correlations(&current.residual);
        let mut masked = vec![false; dict.m()];
        for &i in &current.support {
            masked[i] = true;
        }
        let mut merged = current.support.clone();
        merged.extend(top_k_abs(&u, s, &masked));
        let wide = fit(dict, synth, x, merged)?;

        let mut weighted = vec![0.0; dict.m()];
        let mut outside = vec![true; dict.m()];
        for (&i, &c) in wide.support.iter().zip(&wide.coeffs) {
            weighted[i] = dict.atom_norms()[i] * c;
            outside[i] = false;
        }
        let pruned = top_k_abs(&weighted, s, &outside);
        if sorted(&pruned) == sorted(&current.support) {
            hit_cap = false;
            break;
        }
        let next = fit(dict, synth, x, pruned)?;
        if next.residual_norm > current.residual_norm {
            hit_cap = false;
            break;
        }
        norms.push(next.residual_norm);
        current = next;
    }

    Ok(PursuitResult {
        code: SparseCode {
            ambient_dim: dict.m(),
            support: current.support,
            coeffs: current.coeffs,
        },
        reconstruction: current.reconstruction,
        iterations: norms.len() - 1,
        residual_norms: norms,
        hit_iteration_cap: hit_cap && cap > 0,
    })
}
