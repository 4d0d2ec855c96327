use super::lgm::{check_input, UnrolledTrace};
use super::params::LgmParams;
use crate::error::Result;
use crate::linalg::sub;
use crate::pursuit::{sp_dual, SP_ITERATION_CAP};

/// L-SP inference: Subspace Pursuit driven by the analysis dictionary, with
/// every reconstruction (and so every residual) formed by the synthesis
/// dictionary. The support always has exactly `s` atoms.
pub fn lsp_forward(params: &LgmParams, x: &[f64], s: usize) -> Result<UnrolledTrace> {
    check_input(params, x)?;
    let r = sp_dual(
        params.analysis(),
        params.synthesis(),
        x,
        s,
        SP_ITERATION_CAP,
    )?;
    Ok(UnrolledTrace {
        selected: r.code.support.clone(),
        layer_outputs: vec![r.reconstruction.clone()],
        layer_residuals: vec![sub(x, &r.reconstruction)],
        residual_norms: r.residual_norms,
        attention_weights: None,
        output: r.reconstruction,
        code: r.code,
        tape: None,
    })
}
