use crate::error::Result;
use crate::tape::Var;
use crate::tensor::{Element, Tensor};

pub fn add<'t, T: Element>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    let out = a.value().zip_map(&b.value(), |x, y| x + y)?;
    Ok(a.tape()
        .record(out, &[a, b], |g| vec![g.clone(), g.clone()]))
}

/// Elementwise product.
pub fn mul<'t, T: Element>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    let (av, bv) = (a.value(), b.value());
    let out = av.zip_map(&bv, |x, y| x * y)?;
    Ok(a.tape().record(out, &[a, b], move |g| {
        vec![
            g.zip_map(&bv, |g, y| g * y).expect("same shape"),
            g.zip_map(&av, |g, x| g * x).expect("same shape"),
        ]
    }))
}

pub fn scale<T: Element>(x: Var<'_, T>, factor: T) -> Var<'_, T> {
    let out = x.value().map(|v| v * factor);
    x.tape()
        .record(out, &[x], move |g| vec![g.map(|v| v * factor)])
}

/// Sum of all elements as a one-element tensor.
pub fn sum<T: Element>(x: Var<'_, T>) -> Var<'_, T> {
    let shape = x.shape();
    let out = Tensor::scalar(x.value().sum());
    x.tape().record(out, &[x], move |g| {
        vec![Tensor::full(&shape, g.data()[0]).expect("valid shape")]
    })
}

pub fn mean<T: Element>(x: Var<'_, T>) -> Var<'_, T> {
    let n = T::of(x.value().len() as f64);
    scale(sum(x), T::one() / n)
}

pub fn reshape<'t, T: Element>(x: Var<'t, T>, shape: &[usize]) -> Result<Var<'t, T>> {
    let old = x.shape();
    let out = x.value().reshape(shape)?;
    Ok(x.tape().record(out, &[x], move |g| {
        vec![g.reshape(&old).expect("same element count")]
    }))
}

pub fn relu<T: Element>(x: Var<'_, T>) -> Var<'_, T> {
    let xv = x.value();
    let out = xv.map(|v| if v > T::zero() { v } else { T::zero() });
    x.tape().record(out, &[x], move |g| {
        vec![g
            .zip_map(&xv, |g, v| if v > T::zero() { g } else { T::zero() })
            .expect("same shape")]
    })
}
