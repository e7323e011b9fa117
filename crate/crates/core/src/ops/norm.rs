use crate::error::{Error, Result};
use crate::tape::Var;
use crate::tensor::{Element, Tensor};

pub const NORM_EPS: f64 = 1e-5;
/// Weight kept on the previous running statistic at each update.
pub const NORM_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics of one batch-norm site.
#[derive(Debug, Clone, PartialEq)]
pub struct NormState {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub updates: u64,
}

impl NormState {
    pub fn new(channels: usize) -> Self {
        NormState {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            updates: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Per-channel normalization over every non-channel axis of a channel-last
/// tensor. Train mode normalizes with batch statistics and folds them into
/// `state`; eval mode uses `state` as is.
pub fn batch_norm<'t, T: Element>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    state: &mut NormState,
    mode: Mode,
) -> Result<Var<'t, T>> {
    let (xv, gv, bv) = (x.value(), gamma.value(), beta.value());
    let c = xv.last_dim();
    if gv.shape() != [c] || bv.shape() != [c] || state.channels() != c {
        return Err(Error::shape(
            "batch_norm",
            format!(
                "{c} channels, gamma {:?}, beta {:?}, state {}",
                gv.shape(),
                bv.shape(),
                state.channels()
            ),
        ));
    }
    let n = xv.len() / c;

    let (mean, inv_std) = match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::Contract(format!(
                    "batch_norm in train mode needs at least 2 values per channel, got {n}"
                )));
            }
            let mut mean = vec![0.0f64; c];
            for pix in xv.data().chunks_exact(c) {
                for (m, &v) in mean.iter_mut().zip(pix) {
                    *m += v.f64();
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0f64; c];
            for pix in xv.data().chunks_exact(c) {
                for ((s, &v), m) in var.iter_mut().zip(pix).zip(&mean) {
                    let d = v.f64() - m;
                    *s += d * d;
                }
            }
            var.iter_mut().for_each(|s| *s /= n as f64);
            let unbias = n as f64 / (n as f64 - 1.0);
            for ch in 0..c {
                state.mean[ch] = NORM_MOMENTUM * state.mean[ch] + (1.0 - NORM_MOMENTUM) * mean[ch];
                state.var[ch] =
                    NORM_MOMENTUM * state.var[ch] + (1.0 - NORM_MOMENTUM) * var[ch] * unbias;
            }
            state.updates += 1;
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
            (mean, inv_std)
        }
        Mode::Eval => {
            if state.updates == 0 {
                log::warn!("batch_norm evaluated before any training step; using initial statistics");
            }
            let inv_std = state.var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
            (state.mean.clone(), inv_std)
        }
    };

    let mean_t: Vec<T> = mean.iter().map(|&m| T::of(m)).collect();
    let inv_t: Vec<T> = inv_std.iter().map(|&s: &f64| T::of(s)).collect();
    let mut xhat = Vec::with_capacity(xv.len());
    let mut out = Vec::with_capacity(xv.len());
    for pix in xv.data().chunks_exact(c) {
        for ch in 0..c {
            let h = (pix[ch] - mean_t[ch]) * inv_t[ch];
            xhat.push(h);
            out.push(gv.data()[ch] * h + bv.data()[ch]);
        }
    }
    let shape = xv.shape().to_vec();
    let value = Tensor::from_parts(shape.clone(), out);
    let batch_stats = mode == Mode::Train;

    Ok(x.tape().record(value, &[x, gamma, beta], move |g| {
        let gd = g.data();
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for (gpix, hpix) in gd.chunks_exact(c).zip(xhat.chunks_exact(c)) {
            for ch in 0..c {
                dgamma[ch] = dgamma[ch] + gpix[ch] * hpix[ch];
                dbeta[ch] = dbeta[ch] + gpix[ch];
            }
        }
        let gamma = gv.data();
        let mut dx = Vec::with_capacity(gd.len());
        if batch_stats {
            let nf = T::of(n as f64);
            for (gpix, hpix) in gd.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                for ch in 0..c {
                    let scaled = nf * gpix[ch] - dbeta[ch] - hpix[ch] * dgamma[ch];
                    dx.push(gamma[ch] * inv_t[ch] / nf * scaled);
                }
            }
        } else {
            for gpix in gd.chunks_exact(c) {
                for ch in 0..c {
                    dx.push(gpix[ch] * gamma[ch] * inv_t[ch]);
                }
            }
        }
        vec![
            Tensor::from_parts(shape.clone(), dx),
            Tensor::from_parts(vec![c], dgamma),
            Tensor::from_parts(vec![c], dbeta),
        ]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use crate::tensor::Rng;

    #[test]
    fn train_mode_standardizes_channels() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::randn(&[4, 5, 3], &mut Rng::new(1), 3.0).unwrap());
        let gamma = tape.leaf(Tensor::full(&[3], 1.0).unwrap());
        let beta = tape.leaf(Tensor::zeros(&[3]).unwrap());
        let mut state = NormState::new(3);
        let y = batch_norm(x, gamma, beta, &mut state, Mode::Train).unwrap().value();
        for ch in 0..3 {
            let vals: Vec<f64> = y.data().iter().skip(ch).step_by(3).copied().collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-5, "var {v}");
        }
        assert_eq!(state.updates, 1);
    }

    #[test]
    fn constant_channel_maps_to_beta() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[6, 2], 4.0).unwrap());
        let gamma = tape.leaf(Tensor::full(&[2], 2.0).unwrap());
        let beta = tape.leaf(Tensor::from_f64(&[2], &[0.5, -1.0]).unwrap());
        let mut state = NormState::new(2);
        let y = batch_norm(x, gamma, beta, &mut state, Mode::Train).unwrap().value();
        for pix in y.data().chunks(2) {
            assert!((pix[0] - 0.5).abs() < 1e-9 && (pix[1] + 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn eval_before_training_uses_initial_stats() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[2, 1], &[1.0, -2.0]).unwrap());
        let gamma = tape.leaf(Tensor::full(&[1], 1.0).unwrap());
        let beta = tape.leaf(Tensor::zeros(&[1]).unwrap());
        let mut state = NormState::new(1);
        let y = batch_norm(x, gamma, beta, &mut state, Mode::Eval).unwrap().value();
        let s = 1.0 / (1.0 + NORM_EPS).sqrt();
        assert!((y.data()[0] - s).abs() < 1e-12 && (y.data()[1] + 2.0 * s).abs() < 1e-12);
        assert_eq!(state.updates, 0);
    }

    #[test]
    fn running_stats_follow_momentum() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[2, 1], &[1.0, 3.0]).unwrap());
        let gamma = tape.leaf(Tensor::full(&[1], 1.0).unwrap());
        let beta = tape.leaf(Tensor::zeros(&[1]).unwrap());
        let mut state = NormState::new(1);
        batch_norm(x, gamma, beta, &mut state, Mode::Train).unwrap();
        assert!((state.mean[0] - 0.2).abs() < 1e-12);
        // unbiased batch variance is 2
        assert!((state.var[0] - (0.9 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn single_value_train_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 3]).unwrap());
        let gamma = tape.leaf(Tensor::full(&[3], 1.0).unwrap());
        let beta = tape.leaf(Tensor::zeros(&[3]).unwrap());
        let mut state = NormState::new(3);
        assert!(batch_norm(x, gamma, beta, &mut state, Mode::Train).is_err());
    }
}
