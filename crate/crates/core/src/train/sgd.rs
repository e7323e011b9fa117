use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Element, Precision, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HParams {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for HParams {
    /// Full-scale recipe: lr 0.1, momentum 0.9, weight decay 1e-5, batch 32, 100 epochs.
    fn default() -> Self {
        HParams {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-5,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl HParams {
    /// Settings for the synthetic desk task.
    pub fn desk() -> Self {
        HParams {
            lr: 0.01,
            epochs: 30,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Momentum buffers, one per parameter tensor.
#[derive(Debug, Clone)]
pub struct Velocity<T>(pub Vec<Tensor<T>>);

impl<T: Element> Velocity<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Velocity(
            store
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()).expect("parameter shapes are valid"))
                .collect(),
        )
    }
}

/// Parameters that receive weight decay: weight tensors only.
pub fn decayed_params<T: Element>(store: &ParamStore<T>) -> Vec<ParamId> {
    store
        .iter()
        .filter(|(_, m, _)| m.kind.is_weight())
        .map(|(id, _, _)| id)
        .collect()
}

/// One SGD update, in place: `v <- momentum*v + g + wd*p`, `p <- p - lr*v`,
/// with `wd` zero for biases and norm parameters.
pub fn sgd_step<T: Element>(
    store: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    velocity: &mut Velocity<T>,
    hp: &HParams,
) -> Result<()> {
    if grads.len() != store.len() || velocity.0.len() != store.len() {
        return Err(Error::Contract(format!(
            "{} gradients and {} velocities for {} parameters",
            grads.len(),
            velocity.0.len(),
            store.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if !g.all_finite() {
            return Err(Error::Numerical(format!(
                "non-finite gradient for {}",
                store.meta(ParamId(i)).name
            )));
        }
    }
    let (lr, mom) = (T::of(hp.lr), T::of(hp.momentum));
    for i in 0..store.len() {
        let wd = if store.meta(ParamId(i)).kind.is_weight() {
            T::of(hp.weight_decay)
        } else {
            T::zero()
        };
        let p = &mut store.tensors_mut()[i];
        let v = &mut velocity.0[i];
        let g = &grads[i];
        if g.shape() != p.shape() {
            return Err(Error::Contract(format!(
                "gradient shape {:?} for parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
        let vd = v.data_mut();
        for ((vj, &gj), &pj) in vd.iter_mut().zip(g.data()).zip(p.data()) {
            *vj = mom * *vj + gj + wd * pj;
        }
        for (pj, &vj) in p.data_mut().iter_mut().zip(vd.iter()) {
            *pj = *pj - lr * vj;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamKind;

    fn single(kind: ParamKind, values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("p", kind, Tensor::from_f64(&[values.len()], values).unwrap());
        s
    }

    #[test]
    fn vanilla_descent() {
        let mut store = single(ParamKind::Dense, &[1.0, -2.0]);
        let mut v = Velocity::zeros_like(&store);
        let hp = HParams {
            lr: 0.5,
            momentum: 0.0,
            weight_decay: 0.0,
            ..HParams::default()
        };
        let g = Tensor::from_f64(&[2], &[0.2, 0.4]).unwrap();
        sgd_step(&mut store, &[g], &mut v, &hp).unwrap();
        assert_eq!(store.tensors()[0].data(), &[0.9, -2.2]);
    }

    #[test]
    fn zero_gradient_decays_velocity() {
        let mut store = single(ParamKind::Dense, &[1.0]);
        let mut v = Velocity(vec![Tensor::from_f64(&[1], &[1.0]).unwrap()]);
        let hp = HParams {
            lr: 0.1,
            momentum: 0.5,
            weight_decay: 0.0,
            ..HParams::default()
        };
        let zero = Tensor::zeros(&[1]).unwrap();
        let mut p = 1.0;
        for step in 1..=4 {
            sgd_step(&mut store, &[zero.clone()], &mut v, &hp).unwrap();
            let vel = 0.5f64.powi(step);
            p -= 0.1 * vel;
            assert!((v.0[0].data()[0] - vel).abs() < 1e-15);
            assert!((store.tensors()[0].data()[0] - p).abs() < 1e-15);
        }
        // with lr·v → 0 the parameter settles
        let mut store = single(ParamKind::Dense, &[3.0]);
        let mut v = Velocity::zeros_like(&store);
        sgd_step(&mut store, &[zero], &mut v, &hp).unwrap();
        assert_eq!(store.tensors()[0].data(), &[3.0]);
    }

    #[test]
    fn decay_skips_bias_and_norm() {
        let hp = HParams {
            lr: 1.0,
            momentum: 0.0,
            weight_decay: 0.5,
            ..HParams::default()
        };
        for (kind, want) in [
            (ParamKind::Dense, 1.0),
            (ParamKind::Pointwise, 1.0),
            (ParamKind::Depthwise, 1.0),
            (ParamKind::Bias, 2.0),
            (ParamKind::NormScale, 2.0),
            (ParamKind::NormShift, 2.0),
        ] {
            let mut store = single(kind, &[2.0]);
            let mut v = Velocity::zeros_like(&store);
            sgd_step(&mut store, &[Tensor::zeros(&[1]).unwrap()], &mut v, &hp).unwrap();
            assert_eq!(store.tensors()[0].data(), &[want], "{kind:?}");
        }
    }

    #[test]
    fn nan_gradient_names_tensor() {
        let mut store = single(ParamKind::Dense, &[1.0]);
        let mut v = Velocity::zeros_like(&store);
        let g = Tensor::from_f64(&[1], &[f64::NAN]).unwrap();
        match sgd_step(&mut store, &[g], &mut v, &HParams::default()) {
            Err(Error::Numerical(msg)) => assert!(msg.contains('p')),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_hparams() {
        let mut hp = HParams::default();
        hp.momentum = 1.0;
        assert!(hp.validate().is_err());
        hp.momentum = 0.9;
        hp.lr = 0.0;
        assert!(hp.validate().is_err());
    }
}
