//! The grouped, multi-scale temporal convolution layer.
//!
//! A layer splits its `C` input channels into `N` groups. Each group of width
//! `g = C/N` runs the five-branch temporal convolution module:
//!
//! 1-3. pointwise `g -> r` then a depthwise temporal convolution,
//! 4.   pointwise `g -> r` then max-pooling (`k=2, s=1`),
//! 5.   pointwise `g -> r` alone,
//!
//! with `r = floor(g/M)`. The `5r` outputs of every group are concatenated,
//! shuffled across groups, max-pooled in time (`k=2, s=2`), batch-normalized
//! and rectified. A layer therefore maps `[B, T, H, W, C]` to
//! `[B, ceil(T/2), H, W, 5rN]`.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{self, ConvSpec, Mode, NormState, PoolSpec};
use crate::params::{Bound, ParamId, ParamKind, ParamStore};
use crate::tape::Var;
use crate::tensor::{Element, Rng, Tensor};

pub const BRANCHES: usize = 5;

/// Which temporal kernels fill the three convolution branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiScaleMode {
    /// `k ∈ {3, 5, 7}`, `d = 1`; the pointwise branch plays the `k = 1` role.
    #[default]
    MultiKernel,
    /// `k = 3`, `d ∈ {1, 2, 3}`.
    MultiDilation,
    /// `k = 3`, `d = 1` in all three.
    Fixed,
}

impl MultiScaleMode {
    pub const ALL: [MultiScaleMode; 3] = [
        MultiScaleMode::MultiKernel,
        MultiScaleMode::MultiDilation,
        MultiScaleMode::Fixed,
    ];

    pub fn branch_specs(self) -> [ConvSpec; 3] {
        match self {
            MultiScaleMode::MultiKernel => {
                [ConvSpec::same(3, 1), ConvSpec::same(5, 1), ConvSpec::same(7, 1)]
            }
            MultiScaleMode::MultiDilation => {
                [ConvSpec::same(3, 1), ConvSpec::same(3, 2), ConvSpec::same(3, 3)]
            }
            MultiScaleMode::Fixed => [ConvSpec::same(3, 1); 3],
        }
    }

    /// Sum of the three kernel sizes: weights per reduced channel.
    pub fn kernel_sum(self) -> usize {
        self.branch_specs().iter().map(|s| s.kernel_size).sum()
    }

    pub fn name(self) -> &'static str {
        match self {
            MultiScaleMode::MultiKernel => "multi_kernel",
            MultiScaleMode::MultiDilation => "multi_dilation",
            MultiScaleMode::Fixed => "fixed",
        }
    }
}

/// Cross-group channel permutation applied after concatenation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuffleKind {
    /// Deterministic transpose of the `N x 5r` channel grid.
    #[default]
    Interleave,
    /// A random permutation per layer drawn from the given seed.
    Seeded(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeceptionConfig {
    pub num_layers: usize,
    pub groups: usize,
    pub reduction: usize,
    pub mode: MultiScaleMode,
    pub input_channels: usize,
    #[serde(default)]
    pub shuffle: ShuffleKind,
}

impl TimeceptionConfig {
    pub fn new(input_channels: usize, groups: usize, num_layers: usize) -> Self {
        TimeceptionConfig {
            num_layers,
            groups,
            reduction: 4,
            mode: MultiScaleMode::MultiKernel,
            input_channels,
            shuffle: ShuffleKind::Interleave,
        }
    }

    pub fn with_mode(mut self, mode: MultiScaleMode) -> Self {
        self.mode = mode;
        self
    }

    /// Channel widths of every layer, following
    /// `C_{i+1} = 5 * floor(floor(C_i / N) / M) * N`.
    pub fn trajectory(&self) -> Result<Vec<LayerShape>> {
        if self.num_layers == 0 || self.groups == 0 || self.reduction == 0 {
            return Err(Error::Config(format!(
                "layers, groups and reduction must be positive: {self:?}"
            )));
        }
        let mut channels = self.input_channels;
        let mut shapes = Vec::with_capacity(self.num_layers);
        for index in 0..self.num_layers {
            if channels % self.groups != 0 {
                return Err(Error::LayerConfig {
                    layer: index,
                    detail: Error::GroupDivisibility {
                        channels,
                        groups: self.groups,
                    }
                    .to_string(),
                });
            }
            let group_width = channels / self.groups;
            if group_width < self.reduction {
                return Err(Error::LayerConfig {
                    layer: index,
                    detail: Error::DegenerateWidth {
                        width: group_width,
                        reduction: self.reduction,
                    }
                    .to_string(),
                });
            }
            let reduced = group_width / self.reduction;
            let out_channels = BRANCHES * reduced * self.groups;
            shapes.push(LayerShape {
                index,
                in_channels: channels,
                group_width,
                reduced,
                out_channels,
            });
            channels = out_channels;
        }
        Ok(shapes)
    }

    pub fn output_channels(&self) -> Result<usize> {
        Ok(self.trajectory()?.last().expect("num_layers > 0").out_channels)
    }

    /// Temporal extent after the stack: `T` halved (rounding up) per layer.
    pub fn output_steps(&self, steps: usize) -> usize {
        (0..self.num_layers).fold(steps, |t, _| t.div_ceil(2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub index: usize,
    pub in_channels: usize,
    pub group_width: usize,
    pub reduced: usize,
    pub out_channels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BranchOp {
    Conv {
        spec: ConvSpec,
        kernel: ParamId,
        bias: ParamId,
    },
    MaxPool,
    Reduce,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub reduce_w: ParamId,
    pub reduce_b: ParamId,
    pub op: BranchOp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupParams {
    pub branches: Vec<Branch>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub shape: LayerShape,
    pub groups: Vec<GroupParams>,
    pub permutation: Arc<Vec<usize>>,
    pub norm_scale: ParamId,
    pub norm_shift: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    pub config: TimeceptionConfig,
    pub layers: Vec<LayerParams>,
}

impl Stack {
    pub fn output_channels(&self) -> usize {
        self.layers.last().map_or(self.config.input_channels, |l| l.shape.out_channels)
    }

    pub fn norm_states(&self) -> Vec<NormState> {
        self.layers
            .iter()
            .map(|l| NormState::new(l.shape.out_channels))
            .collect()
    }
}

/// Allocates and initializes every layer's parameters in `store`.
///
/// Pointwise weights are drawn from `N(0, 2/fan_in)`, temporal kernels from
/// `N(0, 2/k)`; biases start at zero, norm scales at one.
pub fn build_stack<T: Element>(
    config: &TimeceptionConfig,
    store: &mut ParamStore<T>,
    rng: &mut Rng,
) -> Result<Stack> {
    let trajectory = config.trajectory()?;
    let specs = config.mode.branch_specs();
    let mut layers = Vec::with_capacity(trajectory.len());
    for shape in trajectory {
        let (g, r) = (shape.group_width, shape.reduced);
        let mut groups = Vec::with_capacity(config.groups);
        for n in 0..config.groups {
            let mut branches = Vec::with_capacity(BRANCHES);
            for b in 0..BRANCHES {
                let prefix = format!("layer{}.group{n}.branch{b}", shape.index);
                let reduce_w = store.add(
                    format!("{prefix}.reduce.weight"),
                    ParamKind::Pointwise,
                    Tensor::randn(&[g, r], rng, (2.0 / g as f64).sqrt())?,
                );
                let reduce_b = store.add(
                    format!("{prefix}.reduce.bias"),
                    ParamKind::Bias,
                    Tensor::zeros(&[r])?,
                );
                let op = match b {
                    0..=2 => {
                        let spec = specs[b];
                        let k = spec.kernel_size;
                        let kernel = store.add(
                            format!("{prefix}.temporal.weight"),
                            ParamKind::Depthwise,
                            Tensor::randn(&[k, r], rng, (2.0 / k as f64).sqrt())?,
                        );
                        let bias = store.add(
                            format!("{prefix}.temporal.bias"),
                            ParamKind::Bias,
                            Tensor::zeros(&[r])?,
                        );
                        BranchOp::Conv { spec, kernel, bias }
                    }
                    3 => BranchOp::MaxPool,
                    _ => BranchOp::Reduce,
                };
                branches.push(Branch {
                    reduce_w,
                    reduce_b,
                    op,
                });
            }
            groups.push(GroupParams { branches });
        }
        let c_out = shape.out_channels;
        let permutation = match config.shuffle {
            ShuffleKind::Interleave => ops::interleave_permutation(c_out, config.groups)?,
            ShuffleKind::Seeded(seed) => {
                ops::seeded_permutation(c_out, &mut Rng::new(seed ^ shape.index as u64))
            }
        };
        let norm_scale = store.add(
            format!("layer{}.norm.scale", shape.index),
            ParamKind::NormScale,
            Tensor::full(&[c_out], T::one())?,
        );
        let norm_shift = store.add(
            format!("layer{}.norm.shift", shape.index),
            ParamKind::NormShift,
            Tensor::zeros(&[c_out])?,
        );
        layers.push(LayerParams {
            shape,
            groups,
            permutation: Arc::new(permutation),
            norm_scale,
            norm_shift,
        });
    }
    Ok(Stack {
        config: config.clone(),
        layers,
    })
}

/// Five-branch module on one channel group: `[B,T,H,W,g] -> [B,T,H,W,5r]`.
pub fn temporal_conv_module<'t, T: Element>(
    x_group: Var<'t, T>,
    group: &GroupParams,
    params: &Bound<'t, T>,
) -> Result<Var<'t, T>> {
    let mut outputs = Vec::with_capacity(group.branches.len());
    for branch in &group.branches {
        let reduced = ops::pointwise_conv(
            x_group,
            params.var(branch.reduce_w),
            params.var(branch.reduce_b),
        )?;
        let out = match branch.op {
            BranchOp::Conv { spec, kernel, bias } => ops::depthwise_temporal_conv(
                reduced,
                params.var(kernel),
                params.var(bias),
                spec,
            )?,
            BranchOp::MaxPool => ops::temporal_max_pool(reduced, PoolSpec::same(2, 1))?,
            BranchOp::Reduce => reduced,
        };
        outputs.push(out);
    }
    ops::channel_concat(&outputs)
}

/// Group channels (before the shuffle) for every group of a layer.
pub fn grouped_modules<'t, T: Element>(
    x: Var<'t, T>,
    layer: &LayerParams,
    params: &Bound<'t, T>,
) -> Result<Var<'t, T>> {
    let groups = ops::channel_split(x, layer.groups.len())?;
    let outs = groups
        .into_iter()
        .zip(&layer.groups)
        .map(|(xg, gp)| temporal_conv_module(xg, gp, params))
        .collect::<Result<Vec<_>>>()?;
    ops::channel_concat(&outs)
}

pub fn timeception_layer<'t, T: Element>(
    x: Var<'t, T>,
    layer: &LayerParams,
    params: &Bound<'t, T>,
    norm: &mut NormState,
    mode: Mode,
) -> Result<Var<'t, T>> {
    let shape = x.shape();
    let (_, steps, _, c) = ops::video_dims("timeception_layer", &shape)?;
    if c != layer.shape.in_channels {
        return Err(Error::shape(
            "timeception_layer",
            format!("{c} input channels, layer expects {}", layer.shape.in_channels),
        ));
    }
    if steps < 2 {
        return Err(Error::shape("timeception_layer", format!("needs T >= 2, got {steps}")));
    }
    let y = grouped_modules(x, layer, params)?;
    let y = ops::channel_permute(y, Arc::clone(&layer.permutation))?;
    let y = ops::temporal_max_pool(y, PoolSpec::same(2, 2))?;
    let y = ops::batch_norm(
        y,
        params.var(layer.norm_scale),
        params.var(layer.norm_shift),
        norm,
        mode,
    )?;
    Ok(ops::relu(y))
}

pub fn stack_forward<'t, T: Element>(
    x: Var<'t, T>,
    stack: &Stack,
    params: &Bound<'t, T>,
    norms: &mut [NormState],
    mode: Mode,
) -> Result<Var<'t, T>> {
    stack
        .layers
        .iter()
        .zip(norms.iter_mut())
        .try_fold(x, |y, (layer, norm)| timeception_layer(y, layer, params, norm, mode))
}

/// Head dimensions entering the parameter count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Temporal extent reaching the final depthwise kernel.
    pub final_steps: usize,
    pub hidden: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCount {
    pub layer: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub pointwise: usize,
    pub depthwise: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamReport {
    pub convention: String,
    pub layers: Vec<LayerCount>,
    pub head_temporal: usize,
    pub head_hidden: usize,
    pub head_output: usize,
    pub total: usize,
}

pub const COUNT_CONVENTION: &str = "weights only: layer pointwise + depthwise kernels, final \
     temporal kernel, classifier matrices; biases and norm parameters excluded";

impl ParamReport {
    pub fn stack_total(&self) -> usize {
        self.layers.iter().map(|l| l.pointwise + l.depthwise).sum()
    }

    pub fn head_total(&self) -> usize {
        self.head_temporal + self.head_hidden + self.head_output
    }

    pub fn millions(&self) -> f64 {
        self.total as f64 / 1e6
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("component,in_channels,out_channels,pointwise,depthwise,total\n");
        for l in &self.layers {
            out += &format!(
                "layer{},{},{},{},{},{}\n",
                l.layer,
                l.in_channels,
                l.out_channels,
                l.pointwise,
                l.depthwise,
                l.pointwise + l.depthwise
            );
        }
        out += &format!("head_temporal,,,,,{}\n", self.head_temporal);
        out += &format!("head_hidden,,,,,{}\n", self.head_hidden);
        out += &format!("head_output,,,,,{}\n", self.head_output);
        out += &format!("total,,,,,{}\n", self.total);
        out += &format!("total_millions,,,,,{:.2}\n", self.millions());
        out
    }
}

/// Weight count of a stack plus head, computed from the configuration alone.
pub fn count_params(config: &TimeceptionConfig, head: &HeadConfig) -> Result<ParamReport> {
    let trajectory = config.trajectory()?;
    let ksum = config.mode.kernel_sum();
    let layers: Vec<LayerCount> = trajectory
        .iter()
        .map(|s| LayerCount {
            layer: s.index,
            in_channels: s.in_channels,
            out_channels: s.out_channels,
            pointwise: config.groups * BRANCHES * s.group_width * s.reduced,
            depthwise: config.groups * s.reduced * ksum,
        })
        .collect();
    let c_final = trajectory.last().expect("num_layers > 0").out_channels;
    let head_temporal = head.final_steps * c_final;
    let head_hidden = c_final * head.hidden;
    let head_output = head.hidden * head.classes;
    let stack: usize = layers.iter().map(|l| l.pointwise + l.depthwise).sum();
    Ok(ParamReport {
        convention: COUNT_CONVENTION.to_string(),
        total: stack + head_temporal + head_hidden + head_output,
        layers,
        head_temporal,
        head_hidden,
        head_output,
    })
}

/// Alternative temporal layers compared against the grouped multi-scale layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalVariant {
    /// Temporal kernel mixing all channels: `k·C·C`.
    SeparableJoint,
    /// Depthwise temporal kernel then a 1x1 convolution: `k·C + C·C`.
    GroupedPointwise,
    /// Grouped temporal kernel then a channel shuffle: `k·C·(C/groups)`.
    /// `groups = C` is the depthwise case, `k·C`.
    GroupedShuffle { groups: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: TemporalVariant,
    pub channels: usize,
    pub kernel_size: usize,
    pub per_layer: Vec<usize>,
    pub total: usize,
}

/// Weight count of `layers` comparison layers at constant width `channels`.
pub fn count_params_variant(
    variant: TemporalVariant,
    channels: usize,
    layers: usize,
    kernel_size: usize,
) -> Result<VariantReport> {
    let per = match variant {
        TemporalVariant::SeparableJoint => kernel_size * channels * channels,
        TemporalVariant::GroupedPointwise => kernel_size * channels + channels * channels,
        TemporalVariant::GroupedShuffle { groups } => {
            if groups == 0 || channels % groups != 0 {
                return Err(Error::GroupDivisibility { channels, groups });
            }
            kernel_size * channels * (channels / groups)
        }
    };
    Ok(VariantReport {
        variant,
        channels,
        kernel_size,
        per_layer: vec![per; layers],
        total: per * layers,
    })
}

/// One temporal kernel weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRow {
    pub layer: usize,
    pub group: usize,
    pub branch: usize,
    pub channel: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    pub index: usize,
    pub value: f64,
}

/// Every depthwise kernel weight of the stack, ordered by layer, group,
/// branch, channel and tap.
pub fn dump_kernels<T: Element>(stack: &Stack, store: &ParamStore<T>) -> Vec<KernelRow> {
    let mut rows = Vec::new();
    for (li, layer) in stack.layers.iter().enumerate() {
        for (gi, group) in layer.groups.iter().enumerate() {
            for (bi, branch) in group.branches.iter().enumerate() {
                let BranchOp::Conv { spec, kernel, .. } = branch.op else {
                    continue;
                };
                let w = store.get(kernel);
                let r = w.last_dim();
                for ch in 0..r {
                    for j in 0..spec.kernel_size {
                        rows.push(KernelRow {
                            layer: li,
                            group: gi,
                            branch: bi,
                            channel: ch,
                            kernel_size: spec.kernel_size,
                            dilation: spec.dilation,
                            index: j,
                            value: w.data()[j * r + ch].f64(),
                        });
                    }
                }
            }
        }
    }
    rows
}

pub fn write_kernel_csv<W: Write>(rows: &[KernelRow], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|e| Error::io("<kernel csv>", e))?;
    Ok(())
}

pub fn read_kernel_csv<R: Read>(input: R) -> Result<Vec<KernelRow>> {
    let mut reader = csv::Reader::from_reader(input);
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}
