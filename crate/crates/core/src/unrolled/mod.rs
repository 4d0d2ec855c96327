//! Unrolled networks built from greedy pursuits, and a LISTA baseline.

mod attention;
mod checkpoint;
mod lgm;
mod lista;
mod lmp;
mod lsp;
mod params;
mod units;

pub use attention::{
    attention_backward, attention_forward, AttentionBlock, AttentionParams, AttentionTape,
    ATTENTION_BLOCKS,
};
pub use checkpoint::{
    lgm_checkpoint, lgm_from_checkpoint, lista_checkpoint, lista_from_checkpoint, Checkpoint,
};
pub use lgm::{
    lgm_backward, lgm_backward_into, lgm_forward, lgm_forward_with, selection_margin, LgmTape,
    Selection, Tape, UnrolledTrace,
};
pub use lista::{lista_backward, lista_backward_into, lista_forward, ListaTrace};
pub use lmp::{lmp_backward, lmp_backward_into, lmp_forward, LmpTape};
pub use lsp::lsp_forward;
pub use params::{
    random_dictionary, spectral_norm_sq, LgmGrad, LgmParams, ListaGrad, ListaParams, DC_SCALE_INIT,
    POWER_ITERATIONS,
};
pub use units::{atos, atos_backward, mpt, mpt_backward, mpt_index, mspt, satos, soft_threshold};

#[cfg(test)]
mod tests;
