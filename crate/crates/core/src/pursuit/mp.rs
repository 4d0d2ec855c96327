use super::dictionary::Dictionary;
use super::omp::check_signal;
use super::types::{argmax_abs, PursuitConfig, PursuitResult, SparseCode};
use crate::error::Result;
use crate::linalg::{axpy, norm2};

/// Matching Pursuit: `α_k = α_{k−1} + W_D · MPT(W_D Dᵀ r_{k−1})`.
///
/// The coefficient added for atom `i` is `d_iᵀr / ‖d_i‖²`, i.e. the
/// projection onto the atom. Atoms may be picked repeatedly; the returned
/// code lists each atom once with its accumulated coefficient, so its
/// cardinality never exceeds the iteration count.
pub fn mp(dict: &Dictionary, x: &[f64], cfg: &PursuitConfig) -> Result<PursuitResult> {
    check_signal(dict, x)?;
    // `max_cardinality` bounds iterations here, and atoms may repeat.
    cfg.validate(usize::MAX)?;
    let x_norm = norm2(x);
    let mut alpha = vec![0.0; dict.m()];
    let mut order: Vec<usize> = Vec::new();
    let mut residual = x.to_vec();
    let mut norms = vec![x_norm];

    while !cfg.should_stop(norms.len() - 1, *norms.last().unwrap(), x_norm) {
        let u = dict.correlations(&residual);
        let i = argmax_abs(&u, &[]).expect("dictionary has atoms");
        if u[i] == 0.0 {
            break;
        }
        let c = dict.weights()[i] * u[i];
        if !order.contains(&i) {
            order.push(i);
        }
        alpha[i] += c;
        axpy(-c, dict.atom(i), &mut residual);
        norms.push(norm2(&residual));
    }

    let coeffs: Vec<f64> = order.iter().map(|&i| alpha[i]).collect();
    let reconstruction = dict.synthesize(&order, &coeffs);
    Ok(PursuitResult {
        code: SparseCode {
            ambient_dim: dict.m(),
            support: order,
            coeffs,
        },
        reconstruction,
        iterations: norms.len() - 1,
        residual_norms: norms,
        hit_iteration_cap: false,
    })
}
