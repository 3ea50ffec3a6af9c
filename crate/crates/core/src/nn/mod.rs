//! Named parameters, a per-forward session binding them to a tape, and the
//! layers both recognizers share.

mod layers;
mod params;
mod session;

pub use layers::{
    attention, batch_norm, conv_stage, ffn, init_attention, init_batch_norm, init_conv_stage, init_ffn,
    init_layer_norm, init_linear, layer_norm, linear, positional_encoding, Activation, AttentionOutput, NORM_EPS,
};
pub use params::{Param, ParamKind, ParamStore};
pub use session::{Gradients, Mode, Session};
