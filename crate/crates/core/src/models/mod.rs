//! BaseConv, linear-attention and Transformer stacks written against the
//! autodiff graph, plus initialization and checkpoint I/O.

pub mod checkpoint;
mod forward;
mod init;
mod spec;

pub use crate::autodiff::ParamStore;
pub use forward::{
    attention_mixer, baseconv_mixer, block, embed_input, forward, forward_states, layer_norm_affine, mlp, predict,
    project_out, readout, residual_states, ReadRows, Supervised,
};
pub use init::{baseconv_layer_forward, init_params, param_layout, BaseConvLayerParams, InitScheme, ParamKind};
pub use spec::{Arch, ModelSpec, PositionalEncoding};
