//! The noise-prediction network: a conditioner over position and audio
//! streams, a sinusoidal diffusion-step embedding passed through two fully
//! connected layers, and residual blocks of bidirectional dilated
//! convolutions with gated activations, gathered through skip connections.
//!
//! Parameters live in one flat f64 buffer described by a layout that is a
//! pure function of [`NetConfig`]; gradients, optimizer moments, and
//! checkpoints all reuse that layout.

mod adam;
mod backward;
mod checkpoint;
mod forward;
mod ops;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use backward::backward;
pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint};
pub use forward::{conditioner, forward, step_embedding, step_encoding, ForwardContext};
pub use ops::FeatureMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },
    #[error("diffusion step {t} is out of range")]
    StepOutOfRange { t: usize },
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("checkpoint version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint array `{name}`")]
    CorruptArray { name: String },
    #[error("checkpoint config does not match: field `{field}`")]
    ConfigMismatch { field: &'static str },
    #[error("bad net config: {reason}")]
    BadConfig { reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Convolution padding. Zero padding is the production mode; circular
/// padding exists so tests can check translation covariance exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingMode {
    #[default]
    Zero,
    Circular,
}

/// Architecture hyperparameters. Parameter shapes are a pure function of
/// this struct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub residual_blocks: usize,
    pub layers_per_block: usize,
    pub hidden: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub cond_audio_channels: usize,
    pub cond_pos_channels: usize,
    pub step_embed_dim: usize,
    /// Dilation of layer j within a block is 2^(j mod dilation_cycle).
    pub dilation_cycle: usize,
    #[serde(default)]
    pub padding: PaddingMode,
    /// Disables the conditioner nonlinearities (test mode).
    #[serde(default)]
    pub linear_conditioner: bool,
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let counts = [
            ("residual_blocks", self.residual_blocks),
            ("layers_per_block", self.layers_per_block),
            ("hidden", self.hidden),
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("cond_audio_channels", self.cond_audio_channels),
            ("cond_pos_channels", self.cond_pos_channels),
            ("dilation_cycle", self.dilation_cycle),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(NetError::BadConfig { reason: format!("{name} must be >= 1") });
            }
        }
        if self.step_embed_dim < 2 || self.step_embed_dim % 2 != 0 {
            return Err(NetError::BadConfig { reason: "step_embed_dim must be even and >= 2".into() });
        }
        Ok(())
    }

    /// First differing field against another config, if any.
    pub fn diff_field(&self, other: &NetConfig) -> Option<&'static str> {
        macro_rules! check {
            ($field:ident) => {
                if self.$field != other.$field {
                    return Some(stringify!($field));
                }
            };
        }
        check!(residual_blocks);
        check!(layers_per_block);
        check!(hidden);
        check!(in_channels);
        check!(out_channels);
        check!(cond_audio_channels);
        check!(cond_pos_channels);
        check!(step_embed_dim);
        check!(dilation_cycle);
        check!(padding);
        check!(linear_conditioner);
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Span {
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvSpec {
    pub w: Span,
    pub b: Span,
    pub out_ch: usize,
    pub in_ch: usize,
    pub k: usize,
    pub dilation: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LinSpec {
    pub w: Span,
    pub b: Span,
    pub out_dim: usize,
    pub in_dim: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerSpec {
    pub dilated: ConvSpec,
    pub cond: ConvSpec,
    pub res: ConvSpec,
    pub skip: ConvSpec,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockSpec {
    pub step_proj: LinSpec,
    pub layers: Vec<LayerSpec>,
}

/// Name, shape, and flat offset of one parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub entries: Vec<ParamEntry>,
    pub pos0: ConvSpec,
    pub pos1: ConvSpec,
    pub aud0: ConvSpec,
    pub aud1: ConvSpec,
    pub fuse: ConvSpec,
    pub step_fc1: LinSpec,
    pub step_fc2: LinSpec,
    pub input: ConvSpec,
    pub blocks: Vec<BlockSpec>,
    pub skip_proj: ConvSpec,
    pub output: ConvSpec,
    pub total: usize,
}

struct LayoutBuilder {
    entries: Vec<ParamEntry>,
    cursor: usize,
}

impl LayoutBuilder {
    fn new() -> Self {
        Self { entries: Vec::new(), cursor: 0 }
    }

    fn push(&mut self, name: String, shape: Vec<usize>) -> Span {
        let len = shape.iter().product();
        let span = Span { offset: self.cursor, len };
        self.entries.push(ParamEntry { name, shape, offset: self.cursor });
        self.cursor += len;
        span
    }

    fn conv(&mut self, name: &str, out_ch: usize, in_ch: usize, k: usize, dilation: usize) -> ConvSpec {
        let w = self.push(format!("{name}.w"), vec![out_ch, in_ch, k]);
        let b = self.push(format!("{name}.b"), vec![out_ch]);
        ConvSpec { w, b, out_ch, in_ch, k, dilation }
    }

    fn linear(&mut self, name: &str, out_dim: usize, in_dim: usize) -> LinSpec {
        let w = self.push(format!("{name}.w"), vec![out_dim, in_dim]);
        let b = self.push(format!("{name}.b"), vec![out_dim]);
        LinSpec { w, b, out_dim, in_dim }
    }
}

impl Layout {
    pub(crate) fn new(cfg: &NetConfig) -> Layout {
        let h = cfg.hidden;
        let d = cfg.step_embed_dim;
        let mut b = LayoutBuilder::new();

        let pos0 = b.conv("conditioner.pos0", h, cfg.cond_pos_channels, 3, 1);
        let pos1 = b.conv("conditioner.pos1", h, h, 3, 1);
        let aud0 = b.conv("conditioner.audio0", h, cfg.cond_audio_channels, 3, 1);
        let aud1 = b.conv("conditioner.audio1", h, h, 3, 1);
        let fuse = b.conv("conditioner.fuse", h, 2 * h, 1, 1);
        let step_fc1 = b.linear("step.fc1", d, d);
        let step_fc2 = b.linear("step.fc2", d, d);
        let input = b.conv("input", h, cfg.in_channels, 1, 1);

        let mut blocks = Vec::with_capacity(cfg.residual_blocks);
        for bi in 0..cfg.residual_blocks {
            let step_proj = b.linear(&format!("block{bi}.step_proj"), h, d);
            let mut layers = Vec::with_capacity(cfg.layers_per_block);
            for li in 0..cfg.layers_per_block {
                let dilation = 1usize << (li % cfg.dilation_cycle);
                let prefix = format!("block{bi}.layer{li}");
                layers.push(LayerSpec {
                    dilated: b.conv(&format!("{prefix}.dilated"), 2 * h, h, 3, dilation),
                    cond: b.conv(&format!("{prefix}.cond"), 2 * h, h, 1, 1),
                    res: b.conv(&format!("{prefix}.res"), h, h, 1, 1),
                    skip: b.conv(&format!("{prefix}.skip"), h, h, 1, 1),
                });
            }
            blocks.push(BlockSpec { step_proj, layers });
        }

        let skip_proj = b.conv("skip_proj", h, h, 1, 1);
        let output = b.conv("output", cfg.out_channels, h, 1, 1);

        Layout {
            entries: b.entries,
            pos0,
            pos1,
            aud0,
            aud1,
            fuse,
            step_fc1,
            step_fc2,
            input,
            blocks,
            skip_proj,
            output,
            total: b.cursor,
        }
    }
}

/// All parameters of one denoiser, flat-backed.
#[derive(Debug, Clone)]
pub struct DenoiserParams {
    config: NetConfig,
    layout: Layout,
    data: Vec<f64>,
}

/// Gradients congruent with the parameters that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    data: Vec<f64>,
}

impl GradientSet {
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}

impl DenoiserParams {
    /// Fan-in scaled uniform init; the output convolution starts at zero so
    /// an untrained net predicts eps = 0.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self, NetError> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut data = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for entry in &layout.entries {
            if entry.name == "output.w" || entry.name == "output.b" || entry.shape.len() == 1 {
                continue; // biases and the output conv stay zero
            }
            let fan_in: usize = entry.shape[1..].iter().product();
            let bound = (1.0 / fan_in as f64).sqrt();
            for v in &mut data[entry.offset..entry.offset + entry.len()] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Ok(Self { config: config.clone(), layout, data })
    }

    pub fn zeros(config: &NetConfig) -> Result<Self, NetError> {
        config.validate()?;
        let layout = Layout::new(config);
        let data = vec![0.0; layout.total];
        Ok(Self { config: config.clone(), layout, data })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.data.len()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.layout.entries
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn zero_grad(&self) -> GradientSet {
        GradientSet { data: vec![0.0; self.data.len()] }
    }

    /// Name of the parameter array containing flat index `i`.
    pub fn name_of_index(&self, i: usize) -> &str {
        let entry = self
            .layout
            .entries
            .iter()
            .rev()
            .find(|e| e.offset <= i)
            .expect("index within layout");
        &entry.name
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    #[cfg(test)]
    pub(crate) fn slice(&self, span: Span) -> &[f64] {
        &self.data[span.offset..span.offset + span.len]
    }
}
