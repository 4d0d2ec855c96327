//! Losses, the ADAM optimizer and end-to-end training loops.

mod adam;
mod coherence;
mod loss;
mod train;

pub use adam::{AdamConfig, AdamState, LrDecay};
pub use coherence::{coherence_pair, coherence_with_grad, mutual_coherence};
pub use loss::{reconstruction_loss, LossConfig, LossKind};
pub(crate) use train::summarize;
pub use train::{
    evaluate, infer, lgm_mmse_traces, train, train_with, AtomRefresh, EpochRecord, EvalMetrics,
    Inference, InferenceMode, ListaTarget, Model, ModelKind, TrainConfig, TrainRun,
};

#[cfg(test)]
mod tests;
