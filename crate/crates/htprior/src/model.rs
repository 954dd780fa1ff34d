//! Model architectures as small step plans over the recorded-op engine.
//!
//! A plan is a flat list of [`LayerOp`]s executed in order against a running
//! activation, with numbered side slots for the residual branches. The same
//! plan drives two evaluators: the f32 recording path used for training, and
//! a plain f64 path used by the finite-difference gradient oracle.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::block::{init_laplacian_filters, BlockConfig, BlockVariant};
use crate::error::{Error, Result};
use crate::hough::VoteMask;
use crate::kernels::{self, Conv1dMode};
use crate::tape::{Tape, Vid};
use crate::tensor::{Parameter, Tensor};

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    L2,
    Bce,
}

/// The selectable architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Single 3×3 convolution + ReLU.
    Local,
    /// HT → 3×1 convolution over ρ → ReLU → IHT.
    Global,
    /// Same as Global, output multiplied with the input image.
    LocalGlobal,
    /// Stem conv → HT-IHT block variant → head conv → sigmoid.
    Block(BlockVariant),
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<ModelKind> {
        match s {
            "local" => Ok(ModelKind::Local),
            "global" => Ok(ModelKind::Global),
            "local_global" => Ok(ModelKind::LocalGlobal),
            _ => {
                if let Some(d) = s.strip_prefix("block_variant_") {
                    let i: usize = d
                        .parse()
                        .map_err(|_| Error::Config(format!("unknown model kind '{s}'")))?;
                    Ok(ModelKind::Block(BlockVariant::from_index(i)?))
                } else {
                    Err(Error::Config(format!(
                        "unknown model kind '{s}' (want local, global, local_global, \
                         or block_variant_0..4)"
                    )))
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            ModelKind::Local => "local".into(),
            ModelKind::Global => "global".into(),
            ModelKind::LocalGlobal => "local_global".into(),
            ModelKind::Block(v) => format!("block_variant_{}", v.index()),
        }
    }

    /// Parameter name prefix; doubles as the checkpoint kind marker.
    fn prefix(&self) -> String {
        match self {
            ModelKind::Local => "local".into(),
            ModelKind::Global => "global".into(),
            ModelKind::LocalGlobal => "local_global".into(),
            ModelKind::Block(v) => format!("block{}", v.index()),
        }
    }

    pub fn default_loss(&self) -> LossKind {
        match self {
            ModelKind::Block(_) => LossKind::Bce,
            _ => LossKind::L2,
        }
    }
}

/// One step of a plan.
#[derive(Debug, Clone)]
pub enum LayerOp {
    Conv2d { weight: usize, bias: Option<usize> },
    Conv1dRho {
        weight: usize,
        bias: Option<usize>,
        mode: Conv1dMode,
    },
    Relu,
    Sigmoid,
    Ht,
    Iht,
    /// Stash the running activation in a slot.
    Save(usize),
    /// Elementwise multiply the running activation with a slot.
    MulWith(usize),
    /// Channel-concatenate: slot first, running activation second.
    ConcatWith(usize),
}

fn slot_count(steps: &[LayerOp]) -> usize {
    steps
        .iter()
        .filter_map(|s| match s {
            LayerOp::Save(i) | LayerOp::MulWith(i) | LayerOp::ConcatWith(i) => Some(*i + 1),
            _ => None,
        })
        .max()
        .unwrap_or(0)
}

/// Runs a plan on the recording tape.
pub fn run_steps_tape(
    steps: &[LayerOp],
    params: &[Parameter],
    tape: &mut Tape,
    input: Vid,
    mask: &Arc<VoteMask>,
) -> Result<Vid> {
    let mut slots: Vec<Option<Vid>> = vec![None; slot_count(steps)];
    let mut cur = input;
    for step in steps {
        cur = match step {
            LayerOp::Conv2d { weight, bias } => {
                let w = tape.param(*weight, &params[*weight]);
                let b = bias.map(|bi| tape.param(bi, &params[bi]));
                tape.conv2d(cur, w, b)?
            }
            LayerOp::Conv1dRho { weight, bias, mode } => {
                let w = tape.param(*weight, &params[*weight]);
                let b = bias.map(|bi| tape.param(bi, &params[bi]));
                tape.conv1d_rho(cur, w, b, *mode)?
            }
            LayerOp::Relu => tape.relu(cur)?,
            LayerOp::Sigmoid => tape.sigmoid(cur)?,
            LayerOp::Ht => tape.ht(cur, mask)?,
            LayerOp::Iht => tape.iht(cur, mask)?,
            LayerOp::Save(i) => {
                slots[*i] = Some(cur);
                cur
            }
            LayerOp::MulWith(i) => {
                let s = slots[*i].ok_or_else(|| Error::Usage(format!("slot {i} unset")))?;
                tape.mul(cur, s)?
            }
            LayerOp::ConcatWith(i) => {
                let s = slots[*i].ok_or_else(|| Error::Usage(format!("slot {i} unset")))?;
                tape.concat_channels(s, cur)?
            }
        };
    }
    Ok(cur)
}

/// An f64 activation: flat buffer plus `[d0, d1, c]` dims.
type Act64 = (Vec<f64>, [usize; 3]);

/// Runs a plan at 64-bit precision with explicit parameter values.
/// Backs the finite-difference gradient oracle. Also reports the smallest
/// |pre-activation| seen at any ReLU, so callers can reject samples whose
/// kink crossings would corrupt central differences.
pub fn run_steps_f64(
    steps: &[LayerOp],
    param_shapes: &[Vec<usize>],
    param_values: &[Vec<f64>],
    input: &Act64,
    mask: &VoteMask,
) -> (Act64, f64) {
    let grid = mask.grid();
    let mut slots: Vec<Option<Act64>> = vec![None; slot_count(steps)];
    let mut relu_margin = f64::INFINITY;
    let mut cur = input.clone();
    for step in steps {
        cur = match step {
            LayerOp::Conv2d { weight, bias } => {
                let ws = &param_shapes[*weight];
                let (kh, kw, cout) = (ws[0], ws[1], ws[3]);
                let [h, w, cin] = cur.1;
                let mut out = vec![0.0f64; h * w * cout];
                kernels::conv2d(
                    &cur.0,
                    h,
                    w,
                    cin,
                    &param_values[*weight],
                    kh,
                    kw,
                    cout,
                    bias.map(|bi| &param_values[bi][..]),
                    &mut out,
                );
                (out, [h, w, cout])
            }
            LayerOp::Conv1dRho { weight, bias, mode } => {
                let ws = &param_shapes[*weight];
                let (k, cout) = match mode {
                    Conv1dMode::Channelwise => (ws[0], ws[1]),
                    Conv1dMode::Dense => (ws[0], ws[2]),
                };
                let [n_rho, n_theta, cin] = cur.1;
                let mut out = vec![0.0f64; n_rho * n_theta * cout];
                kernels::conv1d_rho(
                    &cur.0,
                    n_rho,
                    n_theta,
                    cin,
                    &param_values[*weight],
                    k,
                    cout,
                    *mode,
                    bias.map(|bi| &param_values[bi][..]),
                    &mut out,
                );
                (out, [n_rho, n_theta, cout])
            }
            LayerOp::Relu => {
                // Exact zeros are fixed points (empty Hough bins stay empty
                // under any weights), not kink hazards; skip them.
                for &v in &cur.0 {
                    if v != 0.0 {
                        relu_margin = relu_margin.min(v.abs());
                    }
                }
                let mut out = vec![0.0f64; cur.0.len()];
                kernels::relu(&cur.0, &mut out);
                (out, cur.1)
            }
            LayerOp::Sigmoid => {
                let mut out = vec![0.0f64; cur.0.len()];
                kernels::sigmoid(&cur.0, &mut out);
                (out, cur.1)
            }
            LayerOp::Ht => {
                let c = cur.1[2];
                let mut out = vec![0.0f64; grid.n_rho * grid.n_theta * c];
                mask.project(&cur.0, c, 1.0 / grid.width as f64, &mut out);
                (out, [grid.n_rho, grid.n_theta, c])
            }
            LayerOp::Iht => {
                let c = cur.1[2];
                let mut out = vec![0.0f64; grid.height * grid.width * c];
                mask.backproject(&cur.0, c, 1.0 / grid.n_theta as f64, &mut out);
                (out, [grid.height, grid.width, c])
            }
            LayerOp::Save(i) => {
                slots[*i] = Some(cur.clone());
                cur
            }
            LayerOp::MulWith(i) => {
                let s = slots[*i].as_ref().expect("slot set before use");
                let mut out = vec![0.0f64; cur.0.len()];
                kernels::mul(&cur.0, &s.0, &mut out);
                (out, cur.1)
            }
            LayerOp::ConcatWith(i) => {
                let s = slots[*i].as_ref().expect("slot set before use");
                let (ca, cb) = (s.1[2], cur.1[2]);
                let mut out = vec![0.0f64; (cur.0.len() / cb) * (ca + cb)];
                kernels::concat_channels(&s.0, ca, &cur.0, cb, &mut out);
                (out, [cur.1[0], cur.1[1], ca + cb])
            }
        };
    }
    (cur, relu_margin)
}

// ── Parameter initialization ─────────────────────────────────────────────

struct Builder {
    prefix: String,
    steps: Vec<LayerOp>,
    params: Vec<Parameter>,
}

impl Builder {
    fn new(prefix: String) -> Builder {
        Builder {
            prefix,
            steps: Vec::new(),
            params: Vec::new(),
        }
    }

    fn add_param(&mut self, name: &str, value: Tensor) -> usize {
        self.params
            .push(Parameter::new(format!("{}.{name}", self.prefix), value));
        self.params.len() - 1
    }

    fn he_param(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> usize {
        let value = match rng {
            Some(rng) => {
                let std = (2.0 / fan_in as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                let data = (0..shape.iter().product())
                    .map(|_| normal.sample(rng) as f32)
                    .collect();
                Tensor::from_vec(shape, data).expect("consistent shape")
            }
            None => Tensor::zeros(shape),
        };
        self.add_param(name, value)
    }

    fn zero_param(&mut self, name: &str, shape: &[usize]) -> usize {
        self.add_param(name, Tensor::zeros(shape))
    }

    /// Channelwise `[support, channels]` weight, one Laplacian per channel.
    fn laplacian_param(
        &mut self,
        name: &str,
        support: usize,
        channels: usize,
        sigma_range: (f64, f64),
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<usize> {
        let value = match rng {
            Some(rng) => {
                let filters = init_laplacian_filters(channels, support, sigma_range, rng)?;
                let mut data = vec![0.0f32; support * channels];
                for (c, f) in filters.iter().enumerate() {
                    for (tap, &v) in f.taps.iter().enumerate() {
                        data[tap * channels + c] = v as f32;
                    }
                }
                Tensor::from_vec(&[support, channels], data).expect("consistent shape")
            }
            None => Tensor::zeros(&[support, channels]),
        };
        Ok(self.add_param(name, value))
    }
}

/// Appends the HT-IHT block steps (save, HT, variant filtering, IHT,
/// concat) to a builder.
fn build_block_steps(
    b: &mut Builder,
    cfg: &BlockConfig,
    slot: usize,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<()> {
    cfg.validate()?;
    let c = cfg.channels_in;
    let k = cfg.support;
    b.steps.push(LayerOp::Save(slot));
    b.steps.push(LayerOp::Ht);
    match cfg.variant {
        BlockVariant::NoConv => {}
        BlockVariant::Plain1D => {
            let w = b.he_param("hough_conv1.weight", &[k, c, c], k * c, rng.as_deref_mut());
            let bias = b.zero_param("hough_conv1.bias", &[c]);
            b.steps.push(LayerOp::Conv1dRho {
                weight: w,
                bias: Some(bias),
                mode: Conv1dMode::Dense,
            });
            b.steps.push(LayerOp::Relu);
        }
        BlockVariant::Laplacian1D => {
            let w = b.laplacian_param("hough_lap.weight", k, c, cfg.sigma_range, rng.as_deref_mut())?;
            let bias = b.zero_param("hough_lap.bias", &[c]);
            b.steps.push(LayerOp::Conv1dRho {
                weight: w,
                bias: Some(bias),
                mode: Conv1dMode::Channelwise,
            });
            b.steps.push(LayerOp::Relu);
        }
        BlockVariant::Full => {
            let lap = b.laplacian_param("hough_lap.weight", k, c, cfg.sigma_range, rng.as_deref_mut())?;
            let lap_b = b.zero_param("hough_lap.bias", &[c]);
            b.steps.push(LayerOp::Conv1dRho {
                weight: lap,
                bias: Some(lap_b),
                mode: Conv1dMode::Channelwise,
            });
            b.steps.push(LayerOp::Relu);
            let m1 = b.he_param(
                "hough_merge1.weight",
                &[k, c, cfg.channels_mid],
                k * c,
                rng.as_deref_mut(),
            );
            let m1_b = b.zero_param("hough_merge1.bias", &[cfg.channels_mid]);
            b.steps.push(LayerOp::Conv1dRho {
                weight: m1,
                bias: Some(m1_b),
                mode: Conv1dMode::Dense,
            });
            b.steps.push(LayerOp::Relu);
            let m2 = b.he_param(
                "hough_merge2.weight",
                &[k, cfg.channels_mid, cfg.channels_out],
                k * cfg.channels_mid,
                rng.as_deref_mut(),
            );
            let m2_b = b.zero_param("hough_merge2.bias", &[cfg.channels_out]);
            b.steps.push(LayerOp::Conv1dRho {
                weight: m2,
                bias: Some(m2_b),
                mode: Conv1dMode::Dense,
            });
            b.steps.push(LayerOp::Relu);
        }
        BlockVariant::Spatial3x3 => {
            for name in ["hough_s1", "hough_s2", "hough_s3"] {
                let w = b.he_param(&format!("{name}.weight"), &[3, 3, c, c], 9 * c, rng.as_deref_mut());
                let bias = b.zero_param(&format!("{name}.bias"), &[c]);
                b.steps.push(LayerOp::Conv2d {
                    weight: w,
                    bias: Some(bias),
                });
                b.steps.push(LayerOp::Relu);
            }
        }
    }
    b.steps.push(LayerOp::Iht);
    b.steps.push(LayerOp::ConcatWith(slot));
    Ok(())
}

/// Sigma range for the 3-tap filters of the 1-filter models; wide scales
/// flatten to nothing over 3 taps.
const EXP1_SIGMA_RANGE: (f64, f64) = (0.5, 1.5);

fn build(kind: ModelKind, block_cfg: &BlockConfig, mut rng: Option<&mut ChaCha8Rng>) -> Result<(Vec<LayerOp>, Vec<Parameter>)> {
    let mut b = Builder::new(kind.prefix());
    match kind {
        ModelKind::Local => {
            let w = b.he_param("conv.weight", &[3, 3, 1, 1], 9, rng.as_deref_mut());
            let bias = b.zero_param("conv.bias", &[1]);
            b.steps.push(LayerOp::Conv2d {
                weight: w,
                bias: Some(bias),
            });
            b.steps.push(LayerOp::Relu);
        }
        ModelKind::Global | ModelKind::LocalGlobal => {
            if kind == ModelKind::LocalGlobal {
                b.steps.push(LayerOp::Save(0));
            }
            b.steps.push(LayerOp::Ht);
            let w = b.laplacian_param("rho_conv.weight", 3, 1, EXP1_SIGMA_RANGE, rng.as_deref_mut())?;
            let bias = b.zero_param("rho_conv.bias", &[1]);
            b.steps.push(LayerOp::Conv1dRho {
                weight: w,
                bias: Some(bias),
                mode: Conv1dMode::Channelwise,
            });
            b.steps.push(LayerOp::Relu);
            b.steps.push(LayerOp::Iht);
            if kind == ModelKind::LocalGlobal {
                b.steps.push(LayerOp::MulWith(0));
            }
        }
        ModelKind::Block(_) => {
            let c = block_cfg.channels_in;
            let w = b.he_param("stem.weight", &[3, 3, 1, c], 9, rng.as_deref_mut());
            let bias = b.zero_param("stem.bias", &[c]);
            b.steps.push(LayerOp::Conv2d {
                weight: w,
                bias: Some(bias),
            });
            b.steps.push(LayerOp::Relu);
            build_block_steps(&mut b, block_cfg, 0, rng.as_deref_mut())?;
            let ch = block_cfg.output_channels();
            let hw = b.he_param("head.weight", &[3, 3, ch, 1], 9 * ch, rng.as_deref_mut());
            let hb = b.zero_param("head.bias", &[1]);
            b.steps.push(LayerOp::Conv2d {
                weight: hw,
                bias: Some(hb),
            });
            b.steps.push(LayerOp::Sigmoid);
        }
    }
    Ok((b.steps, b.params))
}

/// A trainable model: plan, parameters, and loss.
#[derive(Debug, Clone)]
pub struct Model {
    pub kind: ModelKind,
    pub block_config: Option<BlockConfig>,
    steps: Vec<LayerOp>,
    pub params: Vec<Parameter>,
    pub loss: LossKind,
}

impl Model {
    /// Builds a model with seeded initialization.
    pub fn new(kind: ModelKind, block_cfg: Option<BlockConfig>, seed: u64) -> Result<Model> {
        let cfg = match (&kind, block_cfg) {
            (ModelKind::Block(v), Some(mut c)) => {
                c.variant = *v;
                c
            }
            (ModelKind::Block(v), None) => BlockConfig::new(*v),
            (_, _) => BlockConfig::new(BlockVariant::NoConv), // unused
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (steps, params) = build(kind, &cfg, Some(&mut rng))?;
        Ok(Model {
            kind,
            block_config: matches!(kind, ModelKind::Block(_)).then_some(cfg),
            steps,
            params,
            loss: kind.default_loss(),
        })
    }

    /// Rebuilds a model around externally supplied parameters (checkpoint
    /// load). Names and shapes must match the architecture exactly.
    pub fn from_params(kind: ModelKind, params: Vec<Parameter>) -> Result<Model> {
        let cfg = match kind {
            ModelKind::Block(v) => infer_block_config(v, &params)?,
            _ => BlockConfig::new(BlockVariant::NoConv),
        };
        let (steps, expected) = build(kind, &cfg, None)?;
        if expected.len() != params.len() {
            return Err(Error::Data(format!(
                "model '{}' expects {} parameters, checkpoint has {}",
                kind.name(),
                expected.len(),
                params.len()
            )));
        }
        for (e, p) in expected.iter().zip(&params) {
            if e.name != p.name || e.value.shape() != p.value.shape() {
                return Err(Error::Data(format!(
                    "parameter mismatch: expected '{}' {:?}, found '{}' {:?}",
                    e.name,
                    e.value.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
        }
        Ok(Model {
            kind,
            block_config: matches!(kind, ModelKind::Block(_)).then_some(cfg),
            steps,
            params,
            loss: kind.default_loss(),
        })
    }

    /// Infers the model kind from checkpoint parameter names.
    pub fn kind_from_params(params: &[Parameter]) -> Result<ModelKind> {
        let first = params
            .first()
            .ok_or_else(|| Error::Data("checkpoint holds no parameters".into()))?;
        let prefix = first.name.split('.').next().unwrap_or("");
        match prefix {
            "local" => Ok(ModelKind::Local),
            "global" => Ok(ModelKind::Global),
            "local_global" => Ok(ModelKind::LocalGlobal),
            _ => {
                if let Some(d) = prefix.strip_prefix("block") {
                    let i: usize = d.parse().map_err(|_| {
                        Error::Data(format!("unrecognized parameter prefix '{prefix}'"))
                    })?;
                    Ok(ModelKind::Block(BlockVariant::from_index(i)?))
                } else {
                    Err(Error::Data(format!(
                        "unrecognized parameter prefix '{prefix}'"
                    )))
                }
            }
        }
    }

    pub fn steps(&self) -> &[LayerOp] {
        &self.steps
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    /// Records the forward pass; returns the prediction value id.
    pub fn forward_tape(&self, tape: &mut Tape, input: Vid, mask: &Arc<VoteMask>) -> Result<Vid> {
        run_steps_tape(&self.steps, &self.params, tape, input, mask)
    }

    /// Forward + loss on the tape.
    pub fn loss_tape(
        &self,
        tape: &mut Tape,
        input: Vid,
        target: Vid,
        mask: &Arc<VoteMask>,
    ) -> Result<Vid> {
        let pred = self.forward_tape(tape, input, mask)?;
        match self.loss {
            LossKind::L2 => tape.l2_loss(pred, target),
            LossKind::Bce => tape.bce_loss(pred, target),
        }
    }

    /// Convenience forward without gradient bookkeeping kept around.
    pub fn predict(&self, input: &Tensor, mask: &Arc<VoteMask>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let out = self.forward_tape(&mut tape, x, mask)?;
        Ok(tape.value(out).clone())
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.params.iter().map(|p| p.value.shape().to_vec()).collect()
    }

    pub fn param_values_f64(&self) -> Vec<Vec<f64>> {
        self.params
            .iter()
            .map(|p| p.value.data().iter().map(|&v| v as f64).collect())
            .collect()
    }

    /// Loss at 64-bit precision with explicit parameter values.
    pub fn loss_f64(
        &self,
        param_values: &[Vec<f64>],
        input: &Tensor,
        target: &Tensor,
        mask: &VoteMask,
    ) -> f64 {
        self.loss_f64_with_margin(param_values, input, target, mask).0
    }

    /// Loss plus the smallest |pre-activation| at any ReLU.
    pub fn loss_f64_with_margin(
        &self,
        param_values: &[Vec<f64>],
        input: &Tensor,
        target: &Tensor,
        mask: &VoteMask,
    ) -> (f64, f64) {
        let shapes = self.param_shapes();
        let in64: Vec<f64> = input.data().iter().map(|&v| v as f64).collect();
        let dims = [input.shape()[0], input.shape()[1], input.shape()[2]];
        let ((pred, _), margin) =
            run_steps_f64(&self.steps, &shapes, param_values, &(in64, dims), mask);
        let t64: Vec<f64> = target.data().iter().map(|&v| v as f64).collect();
        let loss = match self.loss {
            LossKind::L2 => kernels::l2_loss(&pred, &t64),
            LossKind::Bce => kernels::bce_loss(&pred, &t64),
        };
        (loss, margin)
    }
}

/// Recovers block channel sizes and support from checkpoint shapes.
fn infer_block_config(variant: BlockVariant, params: &[Parameter]) -> Result<BlockConfig> {
    let find = |suffix: &str| -> Result<&Parameter> {
        params
            .iter()
            .find(|p| p.name.ends_with(suffix))
            .ok_or_else(|| Error::Data(format!("checkpoint lacks a '{suffix}' parameter")))
    };
    let stem = find("stem.weight")?;
    if stem.value.rank() != 4 {
        return Err(Error::Data(format!(
            "stem weight rank {} unexpected",
            stem.value.rank()
        )));
    }
    let mut cfg = BlockConfig::new(variant);
    cfg.channels_in = stem.value.shape()[3];
    match variant {
        BlockVariant::NoConv | BlockVariant::Spatial3x3 => {}
        BlockVariant::Plain1D => {
            cfg.support = find("hough_conv1.weight")?.value.shape()[0];
        }
        BlockVariant::Laplacian1D => {
            cfg.support = find("hough_lap.weight")?.value.shape()[0];
        }
        BlockVariant::Full => {
            cfg.support = find("hough_lap.weight")?.value.shape()[0];
            let m1 = find("hough_merge1.weight")?;
            let m2 = find("hough_merge2.weight")?;
            cfg.channels_mid = m1.value.shape()[2];
            cfg.channels_out = m2.value.shape()[2];
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// A standalone HT-IHT block over a `[H, W, C]` featuremap: the input is
/// kept on a residual branch and concatenated with the filtered
/// backprojection.
#[derive(Debug, Clone)]
pub struct HtIhtBlock {
    pub config: BlockConfig,
    steps: Vec<LayerOp>,
    pub params: Vec<Parameter>,
}

impl HtIhtBlock {
    pub fn new(config: BlockConfig, seed: u64) -> Result<HtIhtBlock> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(format!("htiht{}", config.variant.index()));
        build_block_steps(&mut b, &config, 0, Some(&mut rng))?;
        Ok(HtIhtBlock {
            config,
            steps: b.steps,
            params: b.params,
        })
    }

    pub fn forward_tape(&self, tape: &mut Tape, f: Vid, mask: &Arc<VoteMask>) -> Result<Vid> {
        run_steps_tape(&self.steps, &self.params, tape, f, mask)
    }

    /// Plain forward; output is `[H, W, channels_in + branch]`.
    pub fn forward(&self, f: &Tensor, mask: &Arc<VoteMask>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(f.clone());
        let out = self.forward_tape(&mut tape, x, mask)?;
        Ok(tape.value(out).clone())
    }
}
