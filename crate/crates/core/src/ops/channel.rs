use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tape::Var;
use crate::tensor::{Element, Rng, Tensor};

fn check_groups(channels: usize, groups: usize) -> Result<()> {
    if groups == 0 || channels % groups != 0 {
        return Err(Error::GroupDivisibility { channels, groups });
    }
    Ok(())
}

/// Channels `[start, start + len)` of the trailing axis.
pub fn channel_slice<T: Element>(x: Var<'_, T>, start: usize, len: usize) -> Result<Var<'_, T>> {
    let xv = x.value();
    let c = xv.last_dim();
    if len == 0 || start + len > c {
        return Err(Error::shape(
            "channel_slice",
            format!("[{start}, {}) outside {c} channels", start + len),
        ));
    }
    let mut out = Vec::with_capacity(xv.len() / c * len);
    for pix in xv.data().chunks_exact(c) {
        out.extend_from_slice(&pix[start..start + len]);
    }
    let in_shape = xv.shape().to_vec();
    let mut shape = in_shape.clone();
    *shape.last_mut().expect("non-empty") = len;
    let value = Tensor::from_parts(shape, out);
    Ok(x.tape().record(value, &[x], move |g| {
        let mut dx = vec![T::zero(); in_shape.iter().product()];
        for (dpix, gpix) in dx.chunks_exact_mut(c).zip(g.data().chunks_exact(len)) {
            dpix[start..start + len].copy_from_slice(gpix);
        }
        vec![Tensor::from_parts(in_shape.clone(), dx)]
    }))
}

/// Splits the channel axis into `groups` equal contiguous blocks.
pub fn channel_split<T: Element>(x: Var<'_, T>, groups: usize) -> Result<Vec<Var<'_, T>>> {
    let c = *x.shape().last().expect("non-empty");
    check_groups(c, groups)?;
    let width = c / groups;
    (0..groups)
        .map(|n| channel_slice(x, n * width, width))
        .collect()
}

/// Concatenates along the channel axis in list order.
pub fn channel_concat<'t, T: Element>(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("channel_concat", "no inputs"))?;
    let values: Vec<Tensor<T>> = parts.iter().map(Var::value).collect();
    let lead = &values[0].shape()[..values[0].rank() - 1];
    for v in &values[1..] {
        if &v.shape()[..v.rank() - 1] != lead {
            return Err(Error::shape(
                "channel_concat",
                format!("{:?} vs {:?}", values[0].shape(), v.shape()),
            ));
        }
    }
    let widths: Vec<usize> = values.iter().map(Tensor::last_dim).collect();
    let total: usize = widths.iter().sum();
    let positions = values[0].len() / widths[0];
    let mut out = Vec::with_capacity(positions * total);
    for p in 0..positions {
        for (v, &w) in values.iter().zip(&widths) {
            out.extend_from_slice(&v.data()[p * w..(p + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    let value = Tensor::from_parts(shape, out);
    let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
    Ok(first.tape().record(value, parts, move |g| {
        let mut grads: Vec<Vec<T>> = widths
            .iter()
            .map(|&w| Vec::with_capacity(positions * w))
            .collect();
        for gpix in g.data().chunks_exact(total) {
            let mut at = 0;
            for (dst, &w) in grads.iter_mut().zip(&widths) {
                dst.extend_from_slice(&gpix[at..at + w]);
                at += w;
            }
        }
        grads
            .into_iter()
            .zip(&shapes)
            .map(|(d, s)| Tensor::from_parts(s.clone(), d))
            .collect()
    }))
}

/// Reorders channels so that output channel `j` reads input channel `perm[j]`.
pub fn channel_permute<'t, T: Element>(x: Var<'t, T>, perm: Arc<Vec<usize>>) -> Result<Var<'t, T>> {
    let xv = x.value();
    let c = xv.last_dim();
    if perm.len() != c || !is_permutation(&perm) {
        return Err(Error::shape(
            "channel_permute",
            format!("not a permutation of {c} channels"),
        ));
    }
    let mut out = Vec::with_capacity(xv.len());
    for pix in xv.data().chunks_exact(c) {
        out.extend(perm.iter().map(|&src| pix[src]));
    }
    let shape = xv.shape().to_vec();
    let value = Tensor::from_parts(shape.clone(), out);
    Ok(x.tape().record(value, &[x], move |g| {
        let mut dx = vec![T::zero(); g.len()];
        for (dpix, gpix) in dx.chunks_exact_mut(c).zip(g.data().chunks_exact(c)) {
            for (&src, &gv) in perm.iter().zip(gpix) {
                dpix[src] = gv;
            }
        }
        vec![Tensor::from_parts(shape.clone(), dx)]
    }))
}

/// Interleaving shuffle across `groups`: viewing the channels as a
/// `groups x (C/groups)` grid, the output reads the transpose, so output
/// channel `j*groups + n` is input channel `n*(C/groups) + j`.
pub fn channel_shuffle<T: Element>(x: Var<'_, T>, groups: usize) -> Result<Var<'_, T>> {
    let c = *x.shape().last().expect("non-empty");
    let perm = interleave_permutation(c, groups)?;
    channel_permute(x, Arc::new(perm))
}

pub fn interleave_permutation(channels: usize, groups: usize) -> Result<Vec<usize>> {
    check_groups(channels, groups)?;
    let width = channels / groups;
    let mut perm = vec![0; channels];
    for n in 0..groups {
        for j in 0..width {
            perm[j * groups + n] = n * width + j;
        }
    }
    Ok(perm)
}

/// Uniformly random permutation, for shuffle ablations.
pub fn seeded_permutation(channels: usize, rng: &mut Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..channels).collect();
    rng.shuffle(&mut perm);
    perm
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (j, &src) in perm.iter().enumerate() {
        inv[src] = j;
    }
    inv
}

fn is_permutation(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    perm.iter().all(|&p| p < seen.len() && !std::mem::replace(&mut seen[p], true))
}
