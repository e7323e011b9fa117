//! Feature tensor to class logits: the layer stack, spatial averaging, a
//! full-length temporal kernel and a two-layer classifier.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{self, HeadConfig, ParamReport, Stack, TimeceptionConfig};
use crate::ops::{self, ConvSpec, Mode, NormState};
use crate::params::{Bound, ParamId, ParamKind, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Element, Precision, Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Independent sigmoid per class.
    #[default]
    Multilabel,
    /// One class per sample, softmax.
    Multiclass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub time_steps: usize,
    pub spatial: usize,
    pub timeception: TimeceptionConfig,
    pub hidden: usize,
    pub classes: usize,
    pub task: Task,
    pub precision: Precision,
}

impl ModelConfig {
    pub fn input_channels(&self) -> usize {
        self.timeception.input_channels
    }

    pub fn final_steps(&self) -> usize {
        self.time_steps >> self.timeception.num_layers
    }

    pub fn validate(&self) -> Result<()> {
        let layers = self.timeception.num_layers;
        if layers >= usize::BITS as usize || self.time_steps % (1usize << layers) != 0 {
            return Err(Error::Config(format!(
                "{} time steps not divisible by 2^{layers}",
                self.time_steps
            )));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.spatial == 0 || self.hidden == 0 || self.time_steps == 0 {
            return Err(Error::Config("spatial size, hidden width and steps must be positive".into()));
        }
        self.timeception.trajectory()?;
        Ok(())
    }

    pub fn head(&self) -> HeadConfig {
        HeadConfig {
            final_steps: self.final_steps(),
            hidden: self.hidden,
            classes: self.classes,
        }
    }

    pub fn param_report(&self) -> Result<ParamReport> {
        layer::count_params(&self.timeception, &self.head())
    }

    /// `(steps, channels)` at the input and after every layer.
    pub fn trajectory(&self) -> Result<Vec<(usize, usize)>> {
        let mut t = self.time_steps;
        let mut out = vec![(t, self.input_channels())];
        for s in self.timeception.trajectory()? {
            t = t.div_ceil(2);
            out.push((t, s.out_channels));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub temporal_w: ParamId,
    pub temporal_b: ParamId,
    pub norm1_scale: ParamId,
    pub norm1_shift: ParamId,
    pub hidden_w: ParamId,
    pub hidden_b: ParamId,
    pub norm2_scale: ParamId,
    pub norm2_shift: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub stack: Stack,
    pub head: Head,
    /// One state per stack layer, then the two head norms.
    pub norms: Vec<NormState>,
}

pub fn build_model<T: Element>(config: &ModelConfig, rng: &mut Rng) -> Result<Model<T>> {
    config.validate()?;
    let mut store = ParamStore::new();
    let stack = layer::build_stack(&config.timeception, &mut store, rng)?;
    let c_f = stack.output_channels();
    let t_f = config.final_steps();
    let (h, k) = (config.hidden, config.classes);

    let mut add = |name: &str, kind, t: Tensor<T>| store.add(name, kind, t);
    let head = Head {
        temporal_w: add(
            "head.temporal.weight",
            ParamKind::Depthwise,
            Tensor::randn(&[t_f, c_f], rng, (2.0 / t_f as f64).sqrt())?,
        ),
        temporal_b: add("head.temporal.bias", ParamKind::Bias, Tensor::zeros(&[c_f])?),
        norm1_scale: add("head.norm1.scale", ParamKind::NormScale, Tensor::full(&[c_f], T::one())?),
        norm1_shift: add("head.norm1.shift", ParamKind::NormShift, Tensor::zeros(&[c_f])?),
        hidden_w: add(
            "head.hidden.weight",
            ParamKind::Dense,
            Tensor::randn(&[c_f, h], rng, (2.0 / c_f as f64).sqrt())?,
        ),
        hidden_b: add("head.hidden.bias", ParamKind::Bias, Tensor::zeros(&[h])?),
        norm2_scale: add("head.norm2.scale", ParamKind::NormScale, Tensor::full(&[h], T::one())?),
        norm2_shift: add("head.norm2.shift", ParamKind::NormShift, Tensor::zeros(&[h])?),
        out_w: add(
            "head.out.weight",
            ParamKind::Dense,
            Tensor::randn(&[h, k], rng, (2.0 / h as f64).sqrt())?,
        ),
        out_b: add("head.out.bias", ParamKind::Bias, Tensor::zeros(&[k])?),
    };
    let mut norms = stack.norm_states();
    norms.push(NormState::new(c_f));
    norms.push(NormState::new(h));
    Ok(Model {
        config: config.clone(),
        store,
        stack,
        head,
        norms,
    })
}

impl<T: Element> Model<T> {
    pub fn param_report(&self) -> Result<ParamReport> {
        self.config.param_report()
    }

    /// Logits `[B, K]` for features `[B, T, L, L, C]`.
    pub fn forward<'t>(
        &self,
        x: Var<'t, T>,
        params: &Bound<'t, T>,
        norms: &mut [NormState],
        mode: Mode,
    ) -> Result<Var<'t, T>> {
        let cfg = &self.config;
        let shape = x.shape();
        let expected = [cfg.time_steps, cfg.spatial, cfg.spatial, cfg.input_channels()];
        if shape.len() != 5 || shape[1..] != expected {
            return Err(Error::shape(
                "model",
                format!("input {shape:?}, expected [B, {expected:?}]"),
            ));
        }
        let batch = shape[0];
        let layers = self.stack.layers.len();
        let (stack_norms, head_norms) = norms.split_at_mut(layers);

        let y = layer::stack_forward(x, &self.stack, params, stack_norms, mode)?;
        let y = ops::spatial_avg_pool(y)?;
        let [_, t_f, c_f] = y.shape()[..] else {
            unreachable!("spatial pooling yields rank 3");
        };
        let y = ops::reshape(y, &[batch, t_f, 1, 1, c_f])?;
        let h = &self.head;
        let y = ops::depthwise_temporal_conv(
            y,
            params.var(h.temporal_w),
            params.var(h.temporal_b),
            ConvSpec::valid(t_f, 1),
        )?;
        let y = ops::reshape(y, &[batch, c_f])?;
        let y = ops::batch_norm(
            y,
            params.var(h.norm1_scale),
            params.var(h.norm1_shift),
            &mut head_norms[0],
            mode,
        )?;
        let y = ops::relu(y);
        let y = ops::dense(y, params.var(h.hidden_w), params.var(h.hidden_b))?;
        let y = ops::batch_norm(
            y,
            params.var(h.norm2_scale),
            params.var(h.norm2_shift),
            &mut head_norms[1],
            mode,
        )?;
        let y = ops::relu(y);
        ops::dense(y, params.var(h.out_w), params.var(h.out_b))
    }

    /// Eval-mode logits without recording gradients.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::no_grad();
        let bound = self.store.bind(&tape);
        let mut norms = self.norms.clone();
        let xv = tape.leaf(x.clone());
        Ok(self.forward(xv, &bound, &mut norms, Mode::Eval)?.value())
    }

    /// Class probabilities: sigmoid per class or softmax per row.
    pub fn predict_scores(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let logits = self.logits(x)?;
        scores_from_logits(&logits, self.config.task)
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            store: self.store.cast(),
            stack: self.stack.clone(),
            head: self.head.clone(),
            norms: self.norms.clone(),
        }
    }
}

pub fn scores_from_logits<T: Element>(logits: &Tensor<T>, task: Task) -> Result<Tensor<T>> {
    match task {
        Task::Multilabel => Ok(ops::sigmoid(logits)),
        Task::Multiclass => ops::softmax_rows(logits),
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"TCPT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    config: ModelConfig,
    dtype: String,
    norm_updates: Vec<u64>,
}

/// Writes `TCPT` checkpoint: magic, version, JSON header length and bytes, tensor
/// count, then every parameter tensor followed by each norm's running mean and
/// variance. Each tensor is `rank, dims..` as u32 LE then LE values; parameters
/// use the width named by the header's `dtype`, norm statistics are f64.
pub fn save_checkpoint<T: Element>(model: &Model<T>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = serde_json::to_vec(&CheckpointHeader {
        config: model.config.clone(),
        dtype: T::NAME.to_string(),
        norm_updates: model.norms.iter().map(|n| n.updates).collect(),
    })?;
    let mut bytes = Vec::new();
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header);
    let count = model.store.len() + 2 * model.norms.len();
    bytes.extend_from_slice(&(count as u32).to_le_bytes());
    let wide = T::NAME == "f64";
    let mut put = |shape: &[usize], values: &mut dyn Iterator<Item = f64>, wide: bool| {
        bytes.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            bytes.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in values {
            if wide {
                bytes.extend_from_slice(&v.to_le_bytes());
            } else {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    };
    for t in model.store.tensors() {
        put(t.shape(), &mut t.data().iter().map(|v| v.f64()), wide);
    }
    for n in &model.norms {
        put(&[n.channels()], &mut n.mean.iter().copied(), true);
        put(&[n.channels()], &mut n.var.iter().copied(), true);
    }
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.at as u64,
                detail: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn load_checkpoint<T: Element>(path: &Path) -> Result<Model<T>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes, at: 0 };
    if cur.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: "bad checkpoint magic".into(),
        });
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: 4,
            detail: format!("unsupported checkpoint version {version}"),
        });
    }
    let len = cur.u32("header length")? as usize;
    let header_at = cur.at as u64;
    let header: CheckpointHeader =
        serde_json::from_slice(cur.take(len, "header")?).map_err(|e| Error::Format {
            offset: header_at,
            detail: format!("header: {e}"),
        })?;
    let param_wide = match header.dtype.as_str() {
        "f32" => false,
        "f64" => true,
        other => {
            return Err(Error::Format {
                offset: header_at,
                detail: format!("unknown dtype {other}"),
            })
        }
    };
    let mut model = build_model::<T>(&header.config, &mut Rng::new(0))?;
    if header.norm_updates.len() != model.norms.len() {
        return Err(Error::Format {
            offset: header_at,
            detail: "norm count does not match config".into(),
        });
    }
    let count = cur.u32("tensor count")? as usize;
    if count != model.store.len() + 2 * model.norms.len() {
        return Err(Error::Format {
            offset: cur.at as u64 - 4,
            detail: format!("{count} tensors, config implies {}", model.store.len() + 2 * model.norms.len()),
        });
    }
    let read_tensor = |cur: &mut Cursor, expect: &[usize], wide: bool| -> Result<Vec<f64>> {
        let at = cur.at as u64;
        let rank = cur.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32("dim")? as usize);
        }
        if shape != expect {
            return Err(Error::Format {
                offset: at,
                detail: format!("tensor shape {shape:?}, expected {expect:?}"),
            });
        }
        let n: usize = shape.iter().product();
        if wide {
            let raw = cur.take(8 * n, "tensor data")?;
            Ok(raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect())
        } else {
            let raw = cur.take(4 * n, "tensor data")?;
            Ok(raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect())
        }
    };
    for i in 0..model.store.len() {
        let shape = model.store.tensors()[i].shape().to_vec();
        let values = read_tensor(&mut cur, &shape, param_wide)?;
        model.store.tensors_mut()[i] = Tensor::from_f64(&shape, &values)?;
    }
    for (n, &updates) in model.norms.iter_mut().zip(&header.norm_updates) {
        let c = n.channels();
        n.mean = read_tensor(&mut cur, &[c], true)?;
        n.var = read_tensor(&mut cur, &[c], true)?;
        n.updates = updates;
    }
    if cur.at != bytes.len() {
        return Err(Error::Format {
            offset: cur.at as u64,
            detail: "trailing bytes after last tensor".into(),
        });
    }
    Ok(model)
}
