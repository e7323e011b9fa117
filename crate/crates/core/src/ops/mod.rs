//! Differentiable primitives. Each op computes its forward value eagerly and
//! records a backward rule on the tape of its inputs.

mod basic;
mod channel;
mod conv;
mod loss;
mod norm;
mod pool;

pub use basic::{add, mean, mul, relu, reshape, scale, sum};
pub use channel::{
    channel_concat, channel_permute, channel_shuffle, channel_slice, channel_split,
    interleave_permutation, invert_permutation, seeded_permutation,
};
pub use conv::{dense, depthwise_temporal_conv, pointwise_conv, ConvSpec, Padding};
pub use loss::{bce_with_logits, sigmoid, softmax_ce, softmax_rows};
pub use norm::{batch_norm, Mode, NormState, NORM_EPS, NORM_MOMENTUM};
pub use pool::{spatial_avg_pool, temporal_max_pool, PoolSpec};

use crate::error::{Error, Result};

/// Splits a `[B, T, H, W, C]` shape into `(B, T, H*W, C)`.
pub(crate) fn video_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [b, t, h, w, c] => Ok((b, t, h * w, c)),
        _ => Err(Error::shape(op, format!("expected [B,T,H,W,C], got {shape:?}"))),
    }
}
