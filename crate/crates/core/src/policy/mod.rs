//! Fixed-window MLP policy over a discrete vocabulary with analytic
//! log-probability gradients.

pub mod checkpoint;
pub mod network;
pub mod vocab;

pub use network::{
    accumulate_backward, context_window, forward, forward_pass, init_params, logprob_and_grad, logprob_dlogits,
    sample, ForwardPass, PolicyDims, PolicyParams, TokenFilter, TokenId,
};
pub use vocab::{TokenGroup, PAD_ID, TokenKind, VocabLayout, Vocabulary};
