use super::lgm::{check_input, Tape, UnrolledTrace};
use super::params::{LgmGrad, LgmParams};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm2, sub, Vector};
use crate::pursuit::{argmax_abs, PursuitConfig, SparseCode};

/// Intermediates of an L-MP forward pass.
#[derive(Clone, Debug)]
pub struct LmpTape {
    // Per layer: selected atom, coefficient increment, residual entering it.
    steps: Vec<(usize, f64, Vector)>,
}

/// L-MP forward pass: `α_k = α_{k−1} + W_D·MPT(W_D·Dᵀr_{k−1})`,
/// `x̂_k = D₂α_k`, `r_k = x − x̂_k`. `cfg.max_cardinality` bounds the number
/// of layers; atoms may repeat.
pub fn lmp_forward(
    params: &LgmParams,
    x: &[f64],
    cfg: &PursuitConfig,
    record: bool,
) -> Result<UnrolledTrace> {
    check_input(params, x)?;
    cfg.validate(usize::MAX)?;
    let d = params.analysis();
    let d2 = params.synthesis();
    let x_norm = norm2(x);
    let mut alpha = vec![0.0; params.m()];
    let mut order: Vec<usize> = Vec::new();
    let mut selected = Vec::new();
    let mut residual = x.to_vec();
    let mut norms = vec![x_norm];
    let mut outputs = Vec::new();
    let mut residuals = Vec::new();
    let mut steps = Vec::new();

    while !cfg.should_stop(selected.len(), *norms.last().unwrap(), x_norm) {
        let u = d.correlations(&residual);
        let i = argmax_abs(&u, &[]).expect("dictionary has atoms");
        if u[i] == 0.0 {
            break;
        }
        let c = d.weights()[i] * u[i];
        if record {
            steps.push((i, c, residual.clone()));
        }
        if !order.contains(&i) {
            order.push(i);
        }
        selected.push(i);
        alpha[i] += c;
        axpy(-c, d2.atom(i), &mut residual);
        norms.push(norm2(&residual));
        outputs.push(sub(x, &residual));
        residuals.push(residual.clone());
    }

    let coeffs: Vec<f64> = order.iter().map(|&i| alpha[i]).collect();
    let output = d2.synthesize(&order, &coeffs);
    Ok(UnrolledTrace {
        selected,
        layer_outputs: outputs,
        layer_residuals: residuals,
        residual_norms: norms,
        attention_weights: None,
        output,
        code: SparseCode {
            ambient_dim: params.m(),
            support: order,
            coeffs,
        },
        tape: record.then(|| Tape::Lmp(LmpTape { steps })),
    })
}

/// Reverse pass of [`lmp_forward`], accumulating into `grad`.
pub fn lmp_backward_into(
    params: &LgmParams,
    trace: &UnrolledTrace,
    output_grad: &[f64],
    grad: &mut LgmGrad,
) -> Result<()> {
    let Some(Tape::Lmp(tape)) = trace.tape.as_ref() else {
        return Err(Error::TapeMissing);
    };
    if output_grad.len() != params.n() {
        return Err(Error::ShapeMismatch(format!(
            "output gradient of length {} for signals of length {}",
            output_grad.len(),
            params.n()
        )));
    }
    let d = params.analysis();
    let d2 = params.synthesis();
    let dc = params.dc_index();
    // Gradient with respect to the running partial reconstruction.
    let mut g = output_grad.to_vec();
    for (i, c, r_prev) in tape.steps.iter().rev() {
        let (i, c) = (*i, *c);
        let dc_grad = dot(d2.atom(i), &g);
        for row in 0..params.n() {
            grad.synthesis[(row, i)] += c * g[row];
        }
        let atom = d.atom(i);
        let w2 = d.weights()[i] * d.weights()[i];
        let proj = dot(atom, r_prev);
        let norm_sq = d.atom_norms()[i] * d.atom_norms()[i];
        for row in 0..params.n() {
            let dw = if Some(i) == dc {
                0.0
            } else {
                -2.0 * atom[row] / (norm_sq * norm_sq)
            };
            grad.analysis[(row, i)] += dc_grad * (w2 * r_prev[row] + proj * dw);
        }
        axpy(-dc_grad * w2, atom, &mut g);
    }
    grad.fold_dc(dc);
    Ok(())
}

/// Reverse pass of [`lmp_forward`].
pub fn lmp_backward(
    params: &LgmParams,
    trace: &UnrolledTrace,
    output_grad: &[f64],
) -> Result<LgmGrad> {
    let mut grad = params.zero_grad();
    lmp_backward_into(params, trace, output_grad, &mut grad)?;
    Ok(grad)
}
