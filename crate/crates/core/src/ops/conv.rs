use serde::{Deserialize, Serialize};

use super::video_dims;
use crate::error::{Error, Result};
use crate::tape::Var;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding so the output keeps the input length.
    Same,
    /// No padding.
    Valid,
}

/// Temporal convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel_size: usize,
    pub dilation: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn same(kernel_size: usize, dilation: usize) -> Self {
        ConvSpec {
            kernel_size,
            dilation,
            padding: Padding::Same,
        }
    }

    pub fn valid(kernel_size: usize, dilation: usize) -> Self {
        ConvSpec {
            kernel_size,
            dilation,
            padding: Padding::Valid,
        }
    }

    pub fn receptive_field(&self) -> usize {
        (self.kernel_size - 1) * self.dilation + 1
    }

    /// Output length for an input of `t` steps, validating the geometry.
    pub fn output_len(&self, t: usize) -> Result<usize> {
        if self.kernel_size == 0 || self.dilation == 0 {
            return Err(Error::InvalidSpec(format!(
                "kernel size and dilation must be positive: {self:?}"
            )));
        }
        match self.padding {
            Padding::Same if self.kernel_size % 2 == 0 => Err(Error::UnsupportedKernel(format!(
                "even kernel size {} with same padding",
                self.kernel_size
            ))),
            Padding::Same => Ok(t),
            Padding::Valid if self.receptive_field() > t => Err(Error::InvalidSpec(format!(
                "receptive field {} exceeds {t} steps",
                self.receptive_field()
            ))),
            Padding::Valid => Ok(t - (self.receptive_field() - 1)),
        }
    }

    fn left_pad(&self) -> usize {
        match self.padding {
            Padding::Same => (self.kernel_size - 1) / 2 * self.dilation,
            Padding::Valid => 0,
        }
    }
}

/// Per-channel convolution along the time axis of `[B, T, H, W, C]` input with
/// kernel `w: [k, C]` and bias `b: [C]`. Channels never mix.
pub fn depthwise_temporal_conv<'t, T: Element>(
    x: Var<'t, T>,
    w: Var<'t, T>,
    b: Var<'t, T>,
    spec: ConvSpec,
) -> Result<Var<'t, T>> {
    const OP: &str = "depthwise_temporal_conv";
    let (xv, wv, bv) = (x.value(), w.value(), b.value());
    let (batch, t_in, space, c) = video_dims(OP, xv.shape())?;
    if wv.shape() != [spec.kernel_size, c] {
        return Err(Error::shape(
            OP,
            format!("kernel {:?} for k={} C={c}", wv.shape(), spec.kernel_size),
        ));
    }
    if bv.shape() != [c] {
        return Err(Error::shape(OP, format!("bias {:?} for C={c}", bv.shape())));
    }
    let t_out = spec.output_len(t_in)?;
    let pad = spec.left_pad() as isize;
    let row = space * c;

    // For tap j, output steps t_lo..t_hi read input steps t + shift[j], a
    // contiguous block, so each tap is one pass over a flat slice.
    let ranges: Vec<(usize, usize, usize, usize)> = (0..spec.kernel_size)
        .filter_map(|j| {
            let shift = (j * spec.dilation) as isize - pad;
            let lo = (-shift).clamp(0, t_out as isize) as usize;
            let hi = (t_in as isize - shift).clamp(lo as isize, t_out as isize) as usize;
            (hi > lo).then(|| (j, lo, hi, (lo as isize + shift) as usize))
        })
        .collect();

    let mut out: Vec<T> = bv.data().iter().copied().cycle().take(batch * t_out * row).collect();
    {
        let (xd, wd) = (xv.data(), wv.data());
        for bi in 0..batch {
            for &(j, lo, hi, src) in &ranges {
                let wrow = &wd[j * c..(j + 1) * c];
                let dst = &mut out[(bi * t_out + lo) * row..(bi * t_out + hi) * row];
                let inp = &xd[(bi * t_in + src) * row..][..dst.len()];
                for (dpix, ipix) in dst.chunks_exact_mut(c).zip(inp.chunks_exact(c)) {
                    for ((d, &i), &wk) in dpix.iter_mut().zip(ipix).zip(wrow) {
                        *d = *d + wk * i;
                    }
                }
            }
        }
    }
    let mut out_shape = xv.shape().to_vec();
    out_shape[1] = t_out;
    let value = Tensor::from_parts(out_shape, out);

    let k = spec.kernel_size;
    Ok(x.tape().record(value, &[x, w, b], move |g| {
        let (xd, wd, gd) = (xv.data(), wv.data(), g.data());
        let mut dx = vec![T::zero(); xd.len()];
        let mut dw = vec![T::zero(); k * c];
        let mut db = vec![T::zero(); c];
        for gpix in gd.chunks_exact(c) {
            for (acc, &gv) in db.iter_mut().zip(gpix) {
                *acc = *acc + gv;
            }
        }
        for bi in 0..batch {
            for &(j, lo, hi, src) in &ranges {
                let n = (hi - lo) * row;
                let grow = &gd[(bi * t_out + lo) * row..][..n];
                let xrow = &xd[(bi * t_in + src) * row..][..n];
                let dxrow = &mut dx[(bi * t_in + src) * row..][..n];
                let wrow = &wd[j * c..(j + 1) * c];
                let dwrow = &mut dw[j * c..(j + 1) * c];
                for ((gpix, xpix), dxpix) in grow
                    .chunks_exact(c)
                    .zip(xrow.chunks_exact(c))
                    .zip(dxrow.chunks_exact_mut(c))
                {
                    for ch in 0..c {
                        dxpix[ch] = dxpix[ch] + wrow[ch] * gpix[ch];
                        dwrow[ch] = dwrow[ch] + gpix[ch] * xpix[ch];
                    }
                }
            }
        }
        vec![
            Tensor::from_parts(xv.shape().to_vec(), dx),
            Tensor::from_parts(vec![k, c], dw),
            Tensor::from_parts(vec![c], db),
        ]
    }))
}

/// 1x1 convolution over the trailing channel axis: `y = x·w + b` at every
/// position, with `w: [C_in, C_out]` and `b: [C_out]`.
pub fn pointwise_conv<'t, T: Element>(
    x: Var<'t, T>,
    w: Var<'t, T>,
    b: Var<'t, T>,
) -> Result<Var<'t, T>> {
    affine("pointwise_conv", x, w, b)
}

/// Fully connected layer on `[B, F]` input.
pub fn dense<'t, T: Element>(x: Var<'t, T>, w: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    if x.shape().len() != 2 {
        return Err(Error::shape("dense", format!("expected [B,F], got {:?}", x.shape())));
    }
    affine("dense", x, w, b)
}

fn affine<'t, T: Element>(
    op: &'static str,
    x: Var<'t, T>,
    w: Var<'t, T>,
    b: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let (xv, wv, bv) = (x.value(), w.value(), b.value());
    let c_in = xv.last_dim();
    let [w_in, c_out] = *wv.shape() else {
        return Err(Error::shape(op, format!("weight must be 2-D, got {:?}", wv.shape())));
    };
    if w_in != c_in {
        return Err(Error::shape(op, format!("input has {c_in} channels, weight expects {w_in}")));
    }
    if bv.shape() != [c_out] {
        return Err(Error::shape(op, format!("bias {:?} for {c_out} outputs", bv.shape())));
    }
    let rows = xv.len() / c_in;
    let mut out: Vec<T> = Vec::with_capacity(rows * c_out);
    for _ in 0..rows {
        out.extend_from_slice(bv.data());
    }
    T::gemm(rows, c_in, c_out, xv.data(), (c_in, 1), wv.data(), (c_out, 1), T::one(), &mut out);
    let mut shape = xv.shape().to_vec();
    *shape.last_mut().expect("non-empty") = c_out;
    let value = Tensor::from_parts(shape, out);

    Ok(x.tape().record(value, &[x, w, b], move |g| {
        let gd = g.data();
        let mut dx = vec![T::zero(); rows * c_in];
        T::gemm(rows, c_out, c_in, gd, (c_out, 1), wv.data(), (1, c_out), T::zero(), &mut dx);
        let mut dw = vec![T::zero(); c_in * c_out];
        T::gemm(c_in, rows, c_out, xv.data(), (1, c_in), gd, (c_out, 1), T::zero(), &mut dw);
        let mut db = vec![T::zero(); c_out];
        for grow in gd.chunks_exact(c_out) {
            for (acc, &v) in db.iter_mut().zip(grow) {
                *acc = *acc + v;
            }
        }
        vec![
            Tensor::from_parts(xv.shape().to_vec(), dx),
            Tensor::from_parts(vec![c_in, c_out], dw),
            Tensor::from_parts(vec![c_out], db),
        ]
    }))
}
