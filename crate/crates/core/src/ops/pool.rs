use serde::{Deserialize, Serialize};

use super::{video_dims, Padding};
use crate::error::{Error, Result};
use crate::tape::Var;
use crate::tensor::{Element, Tensor};

/// Temporal max-pooling geometry. `Same` pads the right edge with −∞, giving
/// `ceil(T / stride)` outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl PoolSpec {
    pub fn same(kernel_size: usize, stride: usize) -> Self {
        PoolSpec {
            kernel_size,
            stride,
            padding: Padding::Same,
        }
    }

    pub fn valid(kernel_size: usize, stride: usize) -> Self {
        PoolSpec {
            kernel_size,
            stride,
            padding: Padding::Valid,
        }
    }

    pub fn output_len(&self, t: usize) -> Result<usize> {
        if self.kernel_size == 0 || self.stride == 0 {
            return Err(Error::InvalidSpec(format!(
                "pool kernel and stride must be positive: {self:?}"
            )));
        }
        match self.padding {
            Padding::Same => Ok(t.div_ceil(self.stride)),
            Padding::Valid if self.kernel_size > t => Err(Error::InvalidSpec(format!(
                "pool kernel {} exceeds {t} steps",
                self.kernel_size
            ))),
            Padding::Valid => Ok((t - self.kernel_size) / self.stride + 1),
        }
    }
}

/// Max over temporal windows of `[B, T, H, W, C]` input. The gradient flows to
/// the first maximal element of each window.
pub fn temporal_max_pool<T: Element>(x: Var<'_, T>, spec: PoolSpec) -> Result<Var<'_, T>> {
    let xv = x.value();
    let (batch, t_in, space, c) = video_dims("temporal_max_pool", xv.shape())?;
    let t_out = spec.output_len(t_in)?;
    let row = space * c;
    let xd = xv.data();

    let mut out = Vec::with_capacity(batch * t_out * row);
    let mut argmax: Vec<u32> = Vec::with_capacity(batch * t_out * row);
    for bi in 0..batch {
        for t in 0..t_out {
            let start = t * spec.stride;
            let end = (start + spec.kernel_size).min(t_in);
            let first = &xd[(bi * t_in + start) * row..][..row];
            let base = out.len();
            out.extend_from_slice(first);
            argmax.extend(std::iter::repeat_n(start as u32, row));
            for src in start + 1..end {
                let cand = &xd[(bi * t_in + src) * row..][..row];
                for (i, &v) in cand.iter().enumerate() {
                    if v > out[base + i] {
                        out[base + i] = v;
                        argmax[base + i] = src as u32;
                    }
                }
            }
        }
    }
    let mut shape = xv.shape().to_vec();
    shape[1] = t_out;
    let in_shape = xv.shape().to_vec();
    let value = Tensor::from_parts(shape, out);

    Ok(x.tape().record(value, &[x], move |g| {
        let mut dx = vec![T::zero(); batch * t_in * row];
        for (o, (&gv, &src)) in g.data().iter().zip(&argmax).enumerate() {
            let bi = o / (t_out * row);
            let i = o % row;
            let slot = &mut dx[(bi * t_in + src as usize) * row + i];
            *slot = *slot + gv;
        }
        vec![Tensor::from_parts(in_shape.clone(), dx)]
    }))
}

/// Mean over the spatial axes: `[B, T, H, W, C] -> [B, T, C]`.
pub fn spatial_avg_pool<T: Element>(x: Var<'_, T>) -> Result<Var<'_, T>> {
    let xv = x.value();
    let (batch, t, space, c) = video_dims("spatial_avg_pool", xv.shape())?;
    let inv = T::one() / T::of(space as f64);
    let mut out = vec![T::zero(); batch * t * c];
    for (dst, frame) in out.chunks_exact_mut(c).zip(xv.data().chunks_exact(space * c)) {
        for pix in frame.chunks_exact(c) {
            for (d, &v) in dst.iter_mut().zip(pix) {
                *d = *d + v;
            }
        }
        for d in dst.iter_mut() {
            *d = *d * inv;
        }
    }
    let in_shape = xv.shape().to_vec();
    let value = Tensor::from_parts(vec![batch, t, c], out);
    Ok(x.tape().record(value, &[x], move |g| {
        let mut dx = Vec::with_capacity(batch * t * space * c);
        for grow in g.data().chunks_exact(c) {
            for _ in 0..space {
                dx.extend(grow.iter().map(|&v| v * inv));
            }
        }
        vec![Tensor::from_parts(in_shape.clone(), dx)]
    }))
}
