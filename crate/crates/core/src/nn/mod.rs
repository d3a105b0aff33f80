//! Small dense neural-network toolkit with hand-written backward passes.

mod adamw;
mod attention;
mod checkpoint;
mod gradcheck;
pub mod layers;
mod lstm;
mod params;
mod tensor;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use attention::{self_attention, softmax_rows, AttentionCache, MultiHeadAttention};
pub use checkpoint::{AgentKind, Checkpoint, CHECKPOINT_SCHEMA_VERSION};
pub use gradcheck::grad_check;
pub use lstm::{lstm_cell, LstmCell, LstmStepCache};
pub use params::{ParamId, ParamSet};
pub use tensor::{matmul, matmul_nt, matmul_tn, Tensor2};
