//! Greedy pursuit engines.

mod batch;
mod csc;
mod dictionary;
mod mp;
mod omp;
mod random;
mod sp;
mod types;

pub use batch::batch_omp;
pub use csc::{gcmp, gcmp_traced, gmpt, CscDictionary};
pub use dictionary::Dictionary;
pub use mp::mp;
pub use omp::{omp, oracle_estimate};
pub use random::{derive_seed, mmse_estimate, rand_omp, rmpt_select, MmseEstimate};
pub use sp::{sp, sp_with_cap, SP_ITERATION_CAP};
pub use types::{
    argmax_abs, top_k_abs, PursuitConfig, PursuitResult, RandConfig, SparseCode, StopMode,
};

pub(crate) use omp::{grow_support, Support};
pub(crate) use sp::sp_dual;
