//! Reverse-mode gradients through the retained forward context.

use super::forward::ForwardContext;
use super::ops::{conv_backward, linear_backward, relu_grad, silu_grad, FeatureMap};
use super::{DenoiserParams, GradientSet, NetError};

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn masked(values: &FeatureMap, pre: &FeatureMap, linear: bool) -> FeatureMap {
    if linear {
        values.clone()
    } else {
        FeatureMap {
            ch: values.ch,
            n: values.n,
            data: values.data.iter().zip(&pre.data).map(|(v, p)| v * relu_grad(*p)).collect(),
        }
    }
}

/// Exact gradients of a scalar loss with respect to every parameter, given
/// the gradient of that loss with respect to the prediction.
pub fn backward(
    params: &DenoiserParams,
    ctx: ForwardContext,
    d_pred: &FeatureMap,
) -> Result<GradientSet, NetError> {
    let cfg = params.config();
    let l = params.layout();
    if d_pred.ch != cfg.out_channels || d_pred.n != ctx.n {
        return Err(NetError::ShapeMismatch {
            context: format!(
                "loss gradient is {}x{}, prediction was {}x{}",
                d_pred.ch, d_pred.n, cfg.out_channels, ctx.n
            ),
        });
    }
    let (h, n) = (cfg.hidden, ctx.n);
    let p = params.data();
    let mut grads = params.zero_grad();
    let g = grads.data_mut();

    // Output head.
    let mut d_sp_act = FeatureMap::zeros(h, n);
    conv_backward(p, &l.output, &ctx.sp_act, d_pred, g, Some(&mut d_sp_act), cfg.padding);
    let d_sp_pre = FeatureMap {
        ch: h,
        n,
        data: d_sp_act.data.iter().zip(&ctx.sp_pre.data).map(|(v, pre)| v * relu_grad(*pre)).collect(),
    };
    let mut d_skip_scaled = FeatureMap::zeros(h, n);
    conv_backward(p, &l.skip_proj, &ctx.skip_scaled, &d_sp_pre, g, Some(&mut d_skip_scaled), cfg.padding);

    let total_layers = cfg.residual_blocks * cfg.layers_per_block;
    let skip_scale = 1.0 / (total_layers as f64).sqrt();
    // Gradient into every layer's skip output: the skips are summed, so it
    // is the same map for each layer.
    let g_skip = FeatureMap {
        ch: h,
        n,
        data: d_skip_scaled.data.iter().map(|&v| v * skip_scale).collect(),
    };

    // The residual output of the final layer feeds nothing downstream.
    let mut dx = FeatureMap::zeros(h, n);
    let mut d_cond = FeatureMap::zeros(h, n);
    let mut d_embed = vec![0.0; cfg.step_embed_dim];

    for bi in (0..cfg.residual_blocks).rev() {
        let block = &l.blocks[bi];
        let mut d_s_b = vec![0.0; h];
        for li in (0..cfg.layers_per_block).rev() {
            let layer = &block.layers[li];
            let lctx = &ctx.layers[bi * cfg.layers_per_block + li];

            // x_out = (x_in + res(gated)) / sqrt(2)
            let d_res_out = FeatureMap {
                ch: h,
                n,
                data: dx.data.iter().map(|&v| v * SQRT_HALF).collect(),
            };
            let mut d_gated = FeatureMap::zeros(h, n);
            conv_backward(p, &layer.res, &lctx.gated, &d_res_out, g, Some(&mut d_gated), cfg.padding);
            conv_backward(p, &layer.skip, &lctx.gated, &g_skip, g, Some(&mut d_gated), cfg.padding);

            // gated = tanh(f) * sigmoid(g), u = [f; g]
            let mut d_u = FeatureMap::zeros(2 * h, n);
            for c in 0..h {
                let dg_row = d_gated.row(c);
                let tf = lctx.tanh_f.row(c);
                let sg = lctx.sig_g.row(c);
                for i in 0..n {
                    d_u.row_mut(c)[i] = dg_row[i] * (1.0 - tf[i] * tf[i]) * sg[i];
                }
                for i in 0..n {
                    d_u.row_mut(h + c)[i] = dg_row[i] * tf[i] * sg[i] * (1.0 - sg[i]);
                }
            }

            conv_backward(p, &layer.cond, &ctx.conditioner.cond, &d_u, g, Some(&mut d_cond), cfg.padding);
            let mut d_h = FeatureMap::zeros(h, n);
            conv_backward(p, &layer.dilated, &lctx.h, &d_u, g, Some(&mut d_h), cfg.padding);

            // h = x_in + broadcast(s_b)
            for c in 0..h {
                d_s_b[c] += d_h.row(c).iter().sum::<f64>();
            }
            for (xv, hv) in dx.data.iter_mut().zip(&d_h.data) {
                *xv = *xv * SQRT_HALF + hv;
            }
        }
        linear_backward(p, &block.step_proj, &ctx.embed, &d_s_b, g, Some(&mut d_embed));
    }

    // Input projection: x0 = relu(input(z_t)).
    let d_in_pre = FeatureMap {
        ch: h,
        n,
        data: dx.data.iter().zip(&ctx.in_pre.data).map(|(v, pre)| v * relu_grad(*pre)).collect(),
    };
    conv_backward(p, &l.input, &ctx.z_t, &d_in_pre, g, None, cfg.padding);

    // Step embedding FCs.
    let d_fc2_pre: Vec<f64> =
        d_embed.iter().zip(&ctx.fc2_pre).map(|(v, pre)| v * silu_grad(*pre)).collect();
    let mut d_fc1_act = vec![0.0; cfg.step_embed_dim];
    linear_backward(p, &l.step_fc2, &ctx.fc1_act, &d_fc2_pre, g, Some(&mut d_fc1_act));
    let d_fc1_pre: Vec<f64> =
        d_fc1_act.iter().zip(&ctx.fc1_pre).map(|(v, pre)| v * silu_grad(*pre)).collect();
    linear_backward(p, &l.step_fc1, &ctx.enc, &d_fc1_pre, g, None);

    // Conditioner.
    let mut d_concat = FeatureMap::zeros(2 * h, n);
    conv_backward(p, &l.fuse, &ctx.conditioner.concat, &d_cond, g, Some(&mut d_concat), cfg.padding);
    let d_pos1_act = FeatureMap { ch: h, n, data: d_concat.data[..h * n].to_vec() };
    let d_aud1_act = FeatureMap { ch: h, n, data: d_concat.data[h * n..].to_vec() };

    let linear_mode = cfg.linear_conditioner;
    let d_pos1_pre = masked(&d_pos1_act, &ctx.conditioner.pos1_pre, linear_mode);
    let mut d_pos0_act = FeatureMap::zeros(h, n);
    conv_backward(p, &l.pos1, &ctx.conditioner.pos0_act, &d_pos1_pre, g, Some(&mut d_pos0_act), cfg.padding);
    let d_pos0_pre = masked(&d_pos0_act, &ctx.conditioner.pos0_pre, linear_mode);
    conv_backward(p, &l.pos0, &ctx.pos, &d_pos0_pre, g, None, cfg.padding);

    let d_aud1_pre = masked(&d_aud1_act, &ctx.conditioner.aud1_pre, linear_mode);
    let mut d_aud0_act = FeatureMap::zeros(h, n);
    conv_backward(p, &l.aud1, &ctx.conditioner.aud0_act, &d_aud1_pre, g, Some(&mut d_aud0_act), cfg.padding);
    let d_aud0_pre = masked(&d_aud0_act, &ctx.conditioner.aud0_pre, linear_mode);
    conv_backward(p, &l.aud0, &ctx.cond_audio, &d_aud0_pre, g, None, cfg.padding);

    Ok(grads)
}
