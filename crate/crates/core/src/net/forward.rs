//! Forward evaluation with retained intermediates for the backward pass.

use super::ops::{conv_forward, linear_forward, relu, sigmoid, silu, FeatureMap};
use super::{DenoiserParams, NetError};

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Everything the backward pass needs from one forward evaluation.
/// [`super::backward`] consumes it, so a context can never be reused stale.
pub struct ForwardContext {
    pub(crate) n: usize,
    pub(crate) z_t: FeatureMap,
    pub(crate) pos: FeatureMap,
    pub(crate) cond_audio: FeatureMap,
    pub(crate) conditioner: CondIntermediates,
    // Step embedding.
    pub(crate) enc: Vec<f64>,
    pub(crate) fc1_pre: Vec<f64>,
    pub(crate) fc1_act: Vec<f64>,
    pub(crate) fc2_pre: Vec<f64>,
    pub(crate) embed: Vec<f64>,
    // Input projection pre-activation.
    pub(crate) in_pre: FeatureMap,
    // Residual layers in evaluation order.
    pub(crate) layers: Vec<LayerContext>,
    pub(crate) skip_scaled: FeatureMap,
    pub(crate) sp_pre: FeatureMap,
    pub(crate) sp_act: FeatureMap,
}

pub(crate) struct CondIntermediates {
    pub pos0_pre: FeatureMap,
    pub pos0_act: FeatureMap,
    pub pos1_pre: FeatureMap,
    pub aud0_pre: FeatureMap,
    pub aud0_act: FeatureMap,
    pub aud1_pre: FeatureMap,
    /// Branch activations stacked [pos1_act; aud1_act], the fuse input.
    pub concat: FeatureMap,
    pub cond: FeatureMap,
}

pub(crate) struct LayerContext {
    /// Layer input plus the broadcast step projection (dilated conv input).
    pub h: FeatureMap,
    pub tanh_f: FeatureMap,
    pub sig_g: FeatureMap,
    pub gated: FeatureMap,
}

/// Sinusoidal step encoding: sin/cos of t * 10^(4 i / (D/2 - 1)).
pub fn step_encoding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let denom = (half.max(2) - 1) as f64;
    let mut enc = vec![0.0; dim];
    for i in 0..half {
        let freq = 10f64.powf(4.0 * i as f64 / denom);
        let arg = t as f64 * freq;
        enc[i] = arg.sin();
        enc[half + i] = arg.cos();
    }
    enc
}

/// The diffusion-step embedding alone: encoding followed by two fully
/// connected layers with silu.
pub fn step_embedding(params: &DenoiserParams, t: usize) -> Result<Vec<f64>, NetError> {
    if t == 0 {
        return Err(NetError::StepOutOfRange { t });
    }
    let l = params.layout();
    let enc = step_encoding(t, params.config().step_embed_dim);
    let fc1: Vec<f64> = linear_forward(params.data(), &l.step_fc1, &enc).iter().map(|&v| silu(v)).collect();
    let fc2 = linear_forward(params.data(), &l.step_fc2, &fc1);
    Ok(fc2.iter().map(|&v| silu(v)).collect())
}

fn check(cond: bool, context: impl FnOnce() -> String) -> Result<(), NetError> {
    if cond {
        Ok(())
    } else {
        Err(NetError::ShapeMismatch { context: context() })
    }
}

fn activated(cfg_linear: bool, m: &FeatureMap) -> FeatureMap {
    if cfg_linear {
        m.clone()
    } else {
        FeatureMap { ch: m.ch, n: m.n, data: m.data.iter().map(|&v| relu(v)).collect() }
    }
}

pub(crate) fn run_conditioner(
    params: &DenoiserParams,
    pos: &FeatureMap,
    cond_audio: &FeatureMap,
) -> Result<CondIntermediates, NetError> {
    let cfg = params.config();
    let l = params.layout();
    check(pos.ch == cfg.cond_pos_channels, || {
        format!("position channels: got {}, config says {}", pos.ch, cfg.cond_pos_channels)
    })?;
    check(cond_audio.ch == cfg.cond_audio_channels, || {
        format!("conditional audio channels: got {}, config says {}", cond_audio.ch, cfg.cond_audio_channels)
    })?;
    check(pos.n == cond_audio.n, || {
        format!("conditioner lengths: pos {} vs audio {}", pos.n, cond_audio.n)
    })?;
    let (h, n) = (cfg.hidden, pos.n);

    let pos0_pre = conv_forward(params.data(), &l.pos0, pos, cfg.padding);
    let pos0_act = activated(cfg.linear_conditioner, &pos0_pre);
    let pos1_pre = conv_forward(params.data(), &l.pos1, &pos0_act, cfg.padding);
    let pos1_act = activated(cfg.linear_conditioner, &pos1_pre);
    let aud0_pre = conv_forward(params.data(), &l.aud0, cond_audio, cfg.padding);
    let aud0_act = activated(cfg.linear_conditioner, &aud0_pre);
    let aud1_pre = conv_forward(params.data(), &l.aud1, &aud0_act, cfg.padding);
    let aud1_act = activated(cfg.linear_conditioner, &aud1_pre);

    let mut concat = FeatureMap::zeros(2 * h, n);
    concat.data[..h * n].copy_from_slice(&pos1_act.data);
    concat.data[h * n..].copy_from_slice(&aud1_act.data);
    let cond = conv_forward(params.data(), &l.fuse, &concat, cfg.padding);
    Ok(CondIntermediates { pos0_pre, pos0_act, pos1_pre, aud0_pre, aud0_act, aud1_pre, concat, cond })
}

/// Runs the conditioner branch alone.
pub fn conditioner(
    params: &DenoiserParams,
    pos: &FeatureMap,
    cond_audio: &FeatureMap,
) -> Result<FeatureMap, NetError> {
    Ok(run_conditioner(params, pos, cond_audio)?.cond)
}

/// Evaluates eps_theta(z_t, t, c), retaining every intermediate needed for
/// gradients.
pub fn forward(
    params: &DenoiserParams,
    z_t: &FeatureMap,
    t: usize,
    pos: &FeatureMap,
    cond_audio: &FeatureMap,
) -> Result<(FeatureMap, ForwardContext), NetError> {
    let cfg = params.config();
    let l = params.layout();
    if t == 0 {
        return Err(NetError::StepOutOfRange { t });
    }
    check(z_t.ch == cfg.in_channels, || {
        format!("z_t channels: got {}, config says {}", z_t.ch, cfg.in_channels)
    })?;
    check(z_t.n == pos.n && z_t.n == cond_audio.n, || {
        format!("lengths: z_t {}, pos {}, cond_audio {}", z_t.n, pos.n, cond_audio.n)
    })?;
    let n = z_t.n;
    let h = cfg.hidden;

    let conditioner = run_conditioner(params, pos, cond_audio)?;

    // Step embedding and its per-block projections.
    let enc = step_encoding(t, cfg.step_embed_dim);
    let fc1_pre = linear_forward(params.data(), &l.step_fc1, &enc);
    let fc1_act: Vec<f64> = fc1_pre.iter().map(|&v| silu(v)).collect();
    let fc2_pre = linear_forward(params.data(), &l.step_fc2, &fc1_act);
    let embed: Vec<f64> = fc2_pre.iter().map(|&v| silu(v)).collect();
    let step_proj: Vec<Vec<f64>> = l
        .blocks
        .iter()
        .map(|b| linear_forward(params.data(), &b.step_proj, &embed))
        .collect();

    let in_pre = conv_forward(params.data(), &l.input, z_t, cfg.padding);
    let mut x = FeatureMap { ch: h, n, data: in_pre.data.iter().map(|&v| relu(v)).collect() };

    let total_layers = cfg.residual_blocks * cfg.layers_per_block;
    let skip_scale = 1.0 / (total_layers as f64).sqrt();
    let mut skip_sum = FeatureMap::zeros(h, n);
    let mut layers = Vec::with_capacity(total_layers);

    for (bi, block) in l.blocks.iter().enumerate() {
        let s_b = &step_proj[bi];
        for layer in &block.layers {
            let mut hmap = x.clone();
            for c in 0..h {
                let s = s_b[c];
                for v in hmap.row_mut(c) {
                    *v += s;
                }
            }
            let mut u = conv_forward(params.data(), &layer.dilated, &hmap, cfg.padding);
            let cond_add = conv_forward(params.data(), &layer.cond, &conditioner.cond, cfg.padding);
            for (a, b) in u.data.iter_mut().zip(&cond_add.data) {
                *a += b;
            }
            // Gated activation: tanh of the filter half times sigmoid of the
            // gate half.
            let mut tanh_f = FeatureMap::zeros(h, n);
            let mut sig_g = FeatureMap::zeros(h, n);
            let mut gated = FeatureMap::zeros(h, n);
            for c in 0..h {
                let f_row = u.row(c);
                let g_row = u.row(h + c);
                let (tf, sg, gz) = (tanh_f.row_mut(c), sig_g.row_mut(c), gated.row_mut(c));
                for i in 0..n {
                    let tv = f_row[i].tanh();
                    let sv = sigmoid(g_row[i]);
                    tf[i] = tv;
                    sg[i] = sv;
                    gz[i] = tv * sv;
                }
            }
            let res = conv_forward(params.data(), &layer.res, &gated, cfg.padding);
            for c in 0..h {
                let (xr, rr) = (x.row_mut(c), res.row(c));
                for i in 0..n {
                    xr[i] = (xr[i] + rr[i]) * SQRT_HALF;
                }
            }
            let skip = conv_forward(params.data(), &layer.skip, &gated, cfg.padding);
            for (a, b) in skip_sum.data.iter_mut().zip(&skip.data) {
                *a += b;
            }
            layers.push(LayerContext { h: hmap, tanh_f, sig_g, gated });
        }
    }

    let skip_scaled =
        FeatureMap { ch: h, n, data: skip_sum.data.iter().map(|&v| v * skip_scale).collect() };
    let sp_pre = conv_forward(params.data(), &l.skip_proj, &skip_scaled, cfg.padding);
    let sp_act = FeatureMap { ch: h, n, data: sp_pre.data.iter().map(|&v| relu(v)).collect() };
    let eps_pred = conv_forward(params.data(), &l.output, &sp_act, cfg.padding);

    let ctx = ForwardContext {
        n,
        z_t: z_t.clone(),
        pos: pos.clone(),
        cond_audio: cond_audio.clone(),
        conditioner,
        enc,
        fc1_pre,
        fc1_act,
        fc2_pre,
        embed,
        in_pre,
        layers,
        skip_scaled,
        sp_pre,
        sp_act,
    };
    Ok((eps_pred, ctx))
}
