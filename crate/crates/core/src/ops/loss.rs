use crate::error::{Error, Result};
use crate::tape::Var;
use crate::tensor::{Element, Tensor};

fn logits_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [b, k] => Ok((b, k)),
        _ => Err(Error::shape(op, format!("expected [B,K] logits, got {shape:?}"))),
    }
}

/// Mean binary cross-entropy over batch and classes, computed from logits as
/// `max(z, 0) - z*y + ln(1 + e^{-|z|})`.
pub fn bce_with_logits<'t, T: Element>(logits: Var<'t, T>, targets: &Tensor<T>) -> Result<Var<'t, T>> {
    let zv = logits.value();
    logits_dims("bce_with_logits", zv.shape())?;
    if targets.shape() != zv.shape() {
        return Err(Error::shape(
            "bce_with_logits",
            format!("targets {:?} vs logits {:?}", targets.shape(), zv.shape()),
        ));
    }
    if targets.data().iter().any(|&y| y != T::zero() && y != T::one()) {
        return Err(Error::Contract("bce targets must be 0 or 1".into()));
    }
    let count = T::of(zv.len() as f64);
    let total: T = zv
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&z, &y)| z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p())
        .sum();
    let targets = targets.clone();
    Ok(logits.tape().record(Tensor::scalar(total / count), &[logits], move |g| {
        let scale = g.data()[0] / count;
        vec![zv
            .zip_map(&targets, |z, y| (sigmoid_scalar(z) - y) * scale)
            .expect("same shape")]
    }))
}

/// Mean softmax cross-entropy against one class index per row.
pub fn softmax_ce<'t, T: Element>(logits: Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>> {
    let zv = logits.value();
    let (b, k) = logits_dims("softmax_ce", zv.shape())?;
    if labels.len() != b {
        return Err(Error::shape("softmax_ce", format!("{} labels for batch {b}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Contract(format!("label {bad} out of range for {k} classes")));
    }
    let probs = softmax_rows(&zv)?;
    let mut total = T::zero();
    for (row, &label) in zv.data().chunks_exact(k).zip(labels) {
        total = total + log_sum_exp(row) - row[label];
    }
    let bf = T::of(b as f64);
    let labels = labels.to_vec();
    Ok(logits.tape().record(Tensor::scalar(total / bf), &[logits], move |g| {
        let scale = g.data()[0] / bf;
        let mut d = probs.data().to_vec();
        for (row, &label) in d.chunks_exact_mut(k).zip(&labels) {
            row[label] = row[label] - T::one();
            row.iter_mut().for_each(|v| *v = *v * scale);
        }
        vec![Tensor::from_parts(vec![b, k], d)]
    }))
}

fn log_sum_exp<T: Element>(row: &[T]) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

fn sigmoid_scalar<T: Element>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Elementwise logistic function.
pub fn sigmoid<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Row-wise softmax of `[B, K]` values.
pub fn softmax_rows<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, k) = logits_dims("softmax", x.shape())?;
    let mut out = Vec::with_capacity(b * k);
    for row in x.data().chunks_exact(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
        let s: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / s));
    }
    Ok(Tensor::from_parts(vec![b, k], out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    #[test]
    fn zero_logit_positive_target_is_ln2() {
        let tape = Tape::<f64>::new();
        let z = tape.leaf(Tensor::zeros(&[2, 3]).unwrap());
        let y = Tensor::full(&[2, 3], 1.0).unwrap();
        let l = bce_with_logits(z, &y).unwrap().value().item().unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn saturated_logits_give_zero_loss() {
        let tape = Tape::<f64>::new();
        let z = tape.leaf(Tensor::from_f64(&[1, 2], &[800.0, -800.0]).unwrap());
        let y = Tensor::from_f64(&[1, 2], &[1.0, 0.0]).unwrap();
        let l = bce_with_logits(z, &y).unwrap().value().item().unwrap();
        assert!(l.abs() < 1e-300);
        let c = softmax_ce(z, &[0]).unwrap().value().item().unwrap();
        assert!(c.abs() < 1e-300);
    }

    #[test]
    fn non_binary_target_rejected() {
        let tape = Tape::<f64>::new();
        let z = tape.leaf(Tensor::zeros(&[1, 2]).unwrap());
        let y = Tensor::from_f64(&[1, 2], &[0.5, 1.0]).unwrap();
        assert!(matches!(bce_with_logits(z, &y), Err(Error::Contract(_))));
    }

    #[test]
    fn label_out_of_range_rejected() {
        let tape = Tape::<f64>::new();
        let z = tape.leaf(Tensor::zeros(&[1, 2]).unwrap());
        assert!(softmax_ce(z, &[2]).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::<f64>::from_f64(&[2, 4], &[0., 0., 0., 0., 1., 2., 3., 1000.]).unwrap();
        let p = softmax_rows(&x).unwrap();
        assert!(p.data()[..4].iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!((p.data()[4..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
