use rand::RngCore;

use super::attention::{attention_backward, attention_forward, AttentionParams, AttentionTape};
use super::params::{LgmGrad, LgmParams};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm2, sub, Matrix, Vector};
use crate::pursuit::{argmax_abs, grow_support, rmpt_select, PursuitConfig, SparseCode, Support};

/// How each layer picks its atom.
pub enum Selection<'a> {
    /// Largest weighted correlation.
    Greedy,
    /// Randomized thresholded choice, as in Rand-OMP.
    Random {
        tau_factor: f64,
        rng: &'a mut dyn RngCore,
    },
    /// Replay a recorded path.
    Fixed(&'a [usize]),
}

/// Per-layer record of an unrolled forward pass.
#[derive(Clone, Debug)]
pub struct UnrolledTrace {
    /// Atom chosen in each layer.
    pub selected: Vec<usize>,
    /// `x̂_k` per layer.
    pub layer_outputs: Vec<Vector>,
    /// Residual left by each layer, i.e. what the next layer correlates.
    pub layer_residuals: Vec<Vector>,
    /// Norms of the residuals, starting from `‖x‖₂`.
    pub residual_norms: Vec<f64>,
    pub attention_weights: Option<Vector>,
    pub output: Vector,
    /// Final code; with attention, the weighted sum of the per-layer codes.
    pub code: SparseCode,
    pub tape: Option<Tape>,
}

/// Recorded intermediates, by network kind.
#[derive(Clone, Debug)]
pub enum Tape {
    Lgm(LgmTape),
    Lmp(super::lmp::LmpTape),
}

impl UnrolledTrace {
    pub fn layers(&self) -> usize {
        self.selected.len()
    }
}

#[derive(Clone, Debug)]
struct LayerCache {
    g_inv: Matrix,
    alpha: Vector,
}

/// Intermediates needed to reverse an LGM forward pass.
#[derive(Clone, Debug)]
pub struct LgmTape {
    x: Vector,
    selected: Vec<usize>,
    // Without attention only the last layer reaches the output.
    layers: Vec<LayerCache>,
    attention: Option<AttentionTape>,
}

pub(crate) fn check_input(params: &LgmParams, x: &[f64]) -> Result<()> {
    if x.len() != params.n() {
        return Err(Error::ShapeMismatch(format!(
            "signal of length {} for dictionaries with {} rows",
            x.len(),
            params.n()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("signal"));
    }
    Ok(())
}

/// LGM forward pass with greedy selection.
pub fn lgm_forward(
    params: &LgmParams,
    x: &[f64],
    cfg: &PursuitConfig,
    attention: Option<&AttentionParams>,
    record: bool,
) -> Result<UnrolledTrace> {
    lgm_forward_with(params, x, cfg, attention, Selection::Greedy, record)
}

/// LGM forward pass.
///
/// Layer `k` correlates the residual `r_{k−1}` with the analysis atoms (norm
/// weighted), appends the chosen atom and solves least squares on the
/// analysis sub-dictionary. The residual `r_k = x − D_S α` stays in the
/// analysis domain, so it is orthogonal to the selected analysis atoms; the
/// layer output `x̂_k = D₂_S α` uses the matching synthesis atoms.
/// Without attention the loop follows `cfg`'s stopping rule on `‖r_k‖₂` and
/// returns the last `x̂_k`. With attention exactly `s` layers run and the
/// output is `Σ p_k x̂_k` with `p` computed from the residuals `r_k`.
pub fn lgm_forward_with(
    params: &LgmParams,
    x: &[f64],
    cfg: &PursuitConfig,
    attention: Option<&AttentionParams>,
    mut selection: Selection<'_>,
    record: bool,
) -> Result<UnrolledTrace> {
    check_input(params, x)?;
    cfg.validate(params.m())?;
    let d = params.analysis();
    let d2 = params.synthesis();
    let s = cfg.max_cardinality;
    if let Some(att) = attention {
        if s == 0 || att.layers() != s || att.signal_dim() != params.n() {
            return Err(Error::ShapeMismatch(format!(
                "attention network for {} layers over {} samples, model runs {s} layers over {}",
                att.layers(),
                att.signal_dim(),
                params.n()
            )));
        }
    }

    let x_norm = norm2(x);
    let mut support = Support::new(params.m());
    let mut residual = x.to_vec();
    let mut norms = vec![x_norm];
    let mut outputs: Vec<Vector> = Vec::new();
    let mut residuals: Vec<Vector> = Vec::new();
    let mut codes: Vec<Vector> = Vec::new();
    let mut caches = Vec::new();

    loop {
        let k = support.indices.len();
        let done = match attention {
            Some(_) => k >= s,
            None => cfg.should_stop(k, *norms.last().unwrap(), x_norm),
        };
        if done {
            break;
        }
        let u = d.correlations(&residual);
        let select = |u: &[f64], masked: &[bool]| -> Option<usize> {
            match &mut selection {
                Selection::Greedy => argmax_abs(u, masked),
                Selection::Random { tau_factor, rng } => rmpt_select(u, masked, *tau_factor, rng),
                Selection::Fixed(path) => path.get(k).copied(),
            }
        };
        grow_support(
            &mut support,
            &u,
            select,
            |a, b| dot(d.atom(a), d.atom(b)),
            |a| dot(d.atom(a), x),
        )?;
        let alpha = support.solve();
        residual = sub(x, &d.synthesize(&support.indices, &alpha));
        norms.push(norm2(&residual));
        residuals.push(residual.clone());
        if record {
            let cache = LayerCache {
                g_inv: support.factor.inverse(),
                alpha: alpha.clone(),
            };
            if attention.is_none() {
                caches.clear();
            }
            caches.push(cache);
        }
        outputs.push(d2.synthesize(&support.indices, &alpha));
        codes.push(alpha);
    }

    let selected = support.indices;
    let (output, code, weights, att_tape) = match attention {
        None => {
            let output = outputs
                .last()
                .cloned()
                .unwrap_or_else(|| vec![0.0; params.n()]);
            let code = SparseCode {
                ambient_dim: params.m(),
                support: selected.clone(),
                coeffs: codes.pop().unwrap_or_default(),
            };
            (output, code, None, None)
        }
        Some(att) => {
            let mut rows = Matrix::zeros(s, params.n());
            for (k, rk) in residuals.iter().enumerate() {
                rows.row_mut(k).copy_from_slice(rk);
            }
            let (p, tape) = attention_forward(&rows, att, record)?;
            let mut output = vec![0.0; params.n()];
            let mut dense = vec![0.0; params.m()];
            for (k, (xk, ak)) in outputs.iter().zip(&codes).enumerate() {
                axpy(p[k], xk, &mut output);
                for (&i, &a) in selected.iter().zip(ak) {
                    dense[i] += p[k] * a;
                }
            }
            (output, SparseCode::from_dense(&dense), Some(p), tape)
        }
    };

    let tape = record.then(|| {
        Tape::Lgm(LgmTape {
            x: x.to_vec(),
            selected: selected.clone(),
            layers: caches,
            attention: att_tape,
        })
    });
    Ok(UnrolledTrace {
        selected,
        layer_outputs: outputs,
        layer_residuals: residuals,
        residual_norms: norms,
        attention_weights: weights,
        output,
        code,
        tape,
    })
}

/// Reverse pass of [`lgm_forward`] for `∂L/∂x̂ = output_grad`, holding the
/// recorded selection path fixed.
pub fn lgm_backward(
    params: &LgmParams,
    attention: Option<&AttentionParams>,
    trace: &UnrolledTrace,
    output_grad: &[f64],
) -> Result<(LgmGrad, Option<AttentionParams>)> {
    let mut grad = params.zero_grad();
    let mut att_grad = attention.map(AttentionParams::zeros_like);
    lgm_backward_into(
        params,
        attention,
        trace,
        output_grad,
        &mut grad,
        att_grad.as_mut(),
    )?;
    Ok((grad, att_grad))
}

/// Like [`lgm_backward`], accumulating into existing gradients.
pub fn lgm_backward_into(
    params: &LgmParams,
    attention: Option<&AttentionParams>,
    trace: &UnrolledTrace,
    output_grad: &[f64],
    grad: &mut LgmGrad,
    att_grad: Option<&mut AttentionParams>,
) -> Result<()> {
    let Some(Tape::Lgm(tape)) = trace.tape.as_ref() else {
        return Err(Error::TapeMissing);
    };
    if output_grad.len() != params.n() {
        return Err(Error::ShapeMismatch(format!(
            "output gradient of length {} for signals of length {}",
            output_grad.len(),
            params.n()
        )));
    }
    if tape.layers.is_empty() {
        return Ok(());
    }
    match (attention, &tape.attention) {
        (None, _) => {
            let last = tape.layers.len() - 1;
            layer_backward(params, tape, last, trace.layers(), output_grad, None, grad);
        }
        (Some(att), Some(att_tape)) => {
            let p = trace.attention_weights.as_ref().ok_or(Error::TapeMissing)?;
            let dp: Vec<f64> = trace
                .layer_outputs
                .iter()
                .map(|xk| dot(xk, output_grad))
                .collect();
            let (ga, dr) = attention_backward(att, att_tape, &dp)?;
            if let Some(acc) = att_grad {
                acc.add_assign(&ga);
            }
            for k in 0..tape.layers.len() {
                let gk: Vec<f64> = output_grad.iter().map(|g| p[k] * g).collect();
                // r_k = x − D_S α_k feeds the attention network.
                let gr: Vec<f64> = dr.row(k).iter().map(|d| -d).collect();
                layer_backward(params, tape, k, k + 1, &gk, Some(&gr), grad);
            }
        }
        (Some(_), None) => return Err(Error::TapeMissing),
    }
    grad.fold_dc(params.dc_index());
    Ok(())
}

/// Gradient of a layer whose support is the first `len` selected atoms,
/// given `g = ∂L/∂(D₂_S α)` and optionally `h = ∂L/∂(D_S α)`, where
/// `α = (D_SᵀD_S)⁻¹ D_Sᵀ x`.
fn layer_backward(
    params: &LgmParams,
    tape: &LgmTape,
    cache_index: usize,
    len: usize,
    g: &[f64],
    h: Option<&[f64]>,
    grad: &mut LgmGrad,
) {
    let cache = &tape.layers[cache_index];
    let d = params.analysis();
    let d2 = params.synthesis();
    let support = &tape.selected[..len];
    let alpha = &cache.alpha;

    let g_alpha: Vec<f64> = support
        .iter()
        .map(|&i| dot(d2.atom(i), g) + h.map_or(0.0, |h| dot(d.atom(i), h)))
        .collect();
    let v = cache.g_inv.matvec(&g_alpha);
    let mut av = vec![0.0; params.n()];
    let mut a_alpha = vec![0.0; params.n()];
    for (j, &i) in support.iter().enumerate() {
        axpy(v[j], d.atom(i), &mut av);
        axpy(alpha[j], d.atom(i), &mut a_alpha);
    }
    let ls_residual = sub(&tape.x, &a_alpha);
    for (j, &i) in support.iter().enumerate() {
        for row in 0..params.n() {
            grad.synthesis[(row, i)] += alpha[j] * g[row];
            let direct = h.map_or(0.0, |h| alpha[j] * h[row]);
            grad.analysis[(row, i)] += v[j] * ls_residual[row] - alpha[j] * av[row] + direct;
        }
    }
}

/// Smallest gap, over all layers of `trace`, between the largest and the
/// second-largest unmasked `|u_i|`. Gradients are exact only while this
/// stays positive under the perturbation considered.
pub fn selection_margin(params: &LgmParams, x: &[f64], trace: &UnrolledTrace) -> f64 {
    let d = params.analysis();
    let mut masked = vec![false; params.m()];
    let mut margin = f64::INFINITY;
    for (k, &i) in trace.selected.iter().enumerate() {
        let u = if k == 0 {
            d.correlations(x)
        } else {
            d.correlations(&trace.layer_residuals[k - 1])
        };
        let top = u[i].abs();
        let second = u
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i && !masked[j])
            .map(|(_, v)| v.abs())
            .fold(0.0, f64::max);
        margin = margin.min(top - second);
        masked[i] = true;
    }
    margin
}
