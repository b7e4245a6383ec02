//! Convolution and linear primitives over channel-major feature maps,
//! with hand-written backward passes. Kernels are centered, so a length-k
//! dilated convolution reads offsets (j - (k-1)/2) * dilation.

use super::{ConvSpec, LinSpec, PaddingMode};

/// Channel-major matrix: `ch` rows of `n` contiguous samples.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub ch: usize,
    pub n: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(ch: usize, n: usize) -> Self {
        Self { ch, n, data: vec![0.0; ch * n] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let ch = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(ch * n);
        for r in rows {
            debug_assert_eq!(r.len(), n);
            data.extend_from_slice(r);
        }
        Self { ch, n, data }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.ch).map(|c| self.row(c).to_vec()).collect()
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.n..(c + 1) * self.n]
    }

    pub fn row_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.n..(c + 1) * self.n]
    }
}

fn axpy(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * *s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators so the reduction vectorizes without reassociation.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// Valid destination/source ranges for a shifted accumulate
/// `dst[n] (+)= src[n + shift]` with zero padding: len = n - |shift|.
fn overlap(shift: isize, n: usize) -> (usize, usize, usize) {
    let len = (n as isize - shift.abs()).max(0);
    let dst_start = (-shift).max(0);
    let src_start = shift.max(0);
    (dst_start as usize, src_start as usize, len as usize)
}

fn kernel_shift(spec: &ConvSpec, j: usize) -> isize {
    (j as isize - ((spec.k - 1) / 2) as isize) * spec.dilation as isize
}

/// out[o, n] = b[o] + sum_{i,j} w[o,i,j] * x[i, n + shift(j)].
pub(crate) fn conv_forward(
    params: &[f64],
    spec: &ConvSpec,
    x: &FeatureMap,
    padding: PaddingMode,
) -> FeatureMap {
    debug_assert_eq!(x.ch, spec.in_ch);
    let n = x.n;
    let mut out = FeatureMap::zeros(spec.out_ch, n);
    let w = &params[spec.w.offset..spec.w.offset + spec.w.len];
    let b = &params[spec.b.offset..spec.b.offset + spec.b.len];
    for o in 0..spec.out_ch {
        out.row_mut(o).fill(b[o]);
    }
    if n == 0 {
        return out;
    }
    for o in 0..spec.out_ch {
        for i in 0..spec.in_ch {
            let x_row = x.row(i);
            let w_base = (o * spec.in_ch + i) * spec.k;
            for j in 0..spec.k {
                let wv = w[w_base + j];
                let shift = kernel_shift(spec, j);
                match padding {
                    PaddingMode::Zero => {
                        let (d0, s0, len) = overlap(shift, n);
                        axpy(&mut out.row_mut(o)[d0..d0 + len], &x_row[s0..s0 + len], wv);
                    }
                    PaddingMode::Circular => {
                        let out_row = out.row_mut(o);
                        for (idx, v) in out_row.iter_mut().enumerate() {
                            let src = (idx as isize + shift).rem_euclid(n as isize) as usize;
                            *v += wv * x_row[src];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients and optionally the input gradient.
pub(crate) fn conv_backward(
    params: &[f64],
    spec: &ConvSpec,
    x: &FeatureMap,
    d_out: &FeatureMap,
    grads: &mut [f64],
    mut d_x: Option<&mut FeatureMap>,
    padding: PaddingMode,
) {
    let n = x.n;
    let w = &params[spec.w.offset..spec.w.offset + spec.w.len];
    for o in 0..spec.out_ch {
        let d_row = d_out.row(o);
        grads[spec.b.offset + o] += d_row.iter().sum::<f64>();
        for i in 0..spec.in_ch {
            let x_row = x.row(i);
            let w_base = (o * spec.in_ch + i) * spec.k;
            for j in 0..spec.k {
                let shift = kernel_shift(spec, j);
                match padding {
                    PaddingMode::Zero => {
                        let (d0, s0, len) = overlap(shift, n);
                        if len > 0 {
                            grads[spec.w.offset + w_base + j] +=
                                dot(&d_row[d0..d0 + len], &x_row[s0..s0 + len]);
                            if let Some(dx) = d_x.as_deref_mut() {
                                let wv = w[w_base + j];
                                axpy(&mut dx.row_mut(i)[s0..s0 + len], &d_row[d0..d0 + len], wv);
                            }
                        }
                    }
                    PaddingMode::Circular => {
                        if n == 0 {
                            continue;
                        }
                        let mut wg = 0.0;
                        for (idx, dv) in d_row.iter().enumerate() {
                            let src = (idx as isize + shift).rem_euclid(n as isize) as usize;
                            wg += dv * x_row[src];
                            if let Some(dx) = d_x.as_deref_mut() {
                                dx.row_mut(i)[src] += w[w_base + j] * dv;
                            }
                        }
                        grads[spec.w.offset + w_base + j] += wg;
                    }
                }
            }
        }
    }
}

/// y[o] = b[o] + sum_i w[o,i] x[i].
pub(crate) fn linear_forward(params: &[f64], spec: &LinSpec, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), spec.in_dim);
    let w = &params[spec.w.offset..spec.w.offset + spec.w.len];
    let b = &params[spec.b.offset..spec.b.offset + spec.b.len];
    (0..spec.out_dim)
        .map(|o| b[o] + dot(&w[o * spec.in_dim..(o + 1) * spec.in_dim], x))
        .collect()
}

pub(crate) fn linear_backward(
    params: &[f64],
    spec: &LinSpec,
    x: &[f64],
    d_out: &[f64],
    grads: &mut [f64],
    d_x: Option<&mut [f64]>,
) {
    let w = &params[spec.w.offset..spec.w.offset + spec.w.len];
    for o in 0..spec.out_dim {
        grads[spec.b.offset + o] += d_out[o];
        let row = spec.w.offset + o * spec.in_dim;
        for i in 0..spec.in_dim {
            grads[row + i] += d_out[o] * x[i];
        }
    }
    if let Some(dx) = d_x {
        for (i, dv) in dx.iter_mut().enumerate() {
            let mut acc = 0.0;
            for o in 0..spec.out_dim {
                acc += w[o * spec.in_dim + i] * d_out[o];
            }
            *dv += acc;
        }
    }
}

pub(crate) fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

pub(crate) fn relu_grad(pre: f64) -> f64 {
    if pre > 0.0 {
        1.0
    } else {
        0.0
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// silu(x) = x * sigmoid(x).
pub(crate) fn silu(v: f64) -> f64 {
    v * sigmoid(v)
}

pub(crate) fn silu_grad(pre: f64) -> f64 {
    let s = sigmoid(pre);
    s * (1.0 + pre * (1.0 - s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Span;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn conv_spec(out_ch: usize, in_ch: usize, k: usize, dilation: usize) -> (ConvSpec, Vec<f64>) {
        let wlen = out_ch * in_ch * k;
        let spec = ConvSpec {
            w: Span { offset: 0, len: wlen },
            b: Span { offset: wlen, len: out_ch },
            out_ch,
            in_ch,
            k,
            dilation,
        };
        (spec, vec![0.0; wlen + out_ch])
    }

    #[test]
    fn conv_identity_kernel() {
        let (spec, mut params) = conv_spec(1, 1, 3, 1);
        params[1] = 1.0; // center tap
        let x = FeatureMap::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]);
        let y = conv_forward(&params, &spec, &x, PaddingMode::Zero);
        assert_eq!(y.row(0), x.row(0));
    }

    #[test]
    fn conv_shift_kernels_pad_with_zero() {
        let (spec, mut params) = conv_spec(1, 1, 3, 2);
        params[0] = 1.0; // left tap reads x[n - 2]
        let x = FeatureMap::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]);
        let y = conv_forward(&params, &spec, &x, PaddingMode::Zero);
        assert_eq!(y.row(0), &[0.0, 0.0, 1.0, 2.0]);

        params[0] = 0.0;
        params[2] = 1.0; // right tap reads x[n + 2]
        let y = conv_forward(&params, &spec, &x, PaddingMode::Zero);
        assert_eq!(y.row(0), &[3.0, 4.0, 0.0, 0.0]);
    }

    #[test]
    fn conv_circular_wraps() {
        let (spec, mut params) = conv_spec(1, 1, 3, 1);
        params[0] = 1.0;
        let x = FeatureMap::from_rows(&[vec![1.0, 2.0, 3.0]]);
        let y = conv_forward(&params, &spec, &x, PaddingMode::Circular);
        assert_eq!(y.row(0), &[3.0, 1.0, 2.0]);
    }

    #[test]
    fn conv_backward_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for padding in [PaddingMode::Zero, PaddingMode::Circular] {
            let (spec, mut params) = conv_spec(2, 3, 3, 2);
            for v in &mut params {
                *v = rng.gen_range(-0.5..0.5);
            }
            let x = FeatureMap::from_rows(
                &(0..3).map(|_| (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect::<Vec<_>>(),
            );
            // Scalar objective: weighted sum of outputs.
            let weights: Vec<f64> = (0..2 * 7).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let objective = |p: &[f64], xm: &FeatureMap| -> f64 {
                let y = conv_forward(p, &spec, xm, padding);
                y.data.iter().zip(&weights).map(|(a, b)| a * b).sum()
            };
            let d_out = FeatureMap { ch: 2, n: 7, data: weights.clone() };
            let mut grads = vec![0.0; params.len()];
            let mut d_x = FeatureMap::zeros(3, 7);
            conv_backward(&params, &spec, &x, &d_out, &mut grads, Some(&mut d_x), padding);

            let h = 1e-6;
            for i in 0..params.len() {
                let mut p = params.clone();
                p[i] += h;
                let up = objective(&p, &x);
                p[i] -= 2.0 * h;
                let down = objective(&p, &x);
                assert_abs_diff_eq!(grads[i], (up - down) / (2.0 * h), epsilon = 1e-6);
            }
            for i in 0..x.data.len() {
                let mut xm = x.clone();
                xm.data[i] += h;
                let up = objective(&params, &xm);
                xm.data[i] -= 2.0 * h;
                let down = objective(&params, &xm);
                assert_abs_diff_eq!(d_x.data[i], (up - down) / (2.0 * h), epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn linear_backward_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let spec = LinSpec {
            w: Span { offset: 0, len: 12 },
            b: Span { offset: 12, len: 3 },
            out_dim: 3,
            in_dim: 4,
        };
        let mut params = vec![0.0; 15];
        for v in &mut params {
            *v = rng.gen_range(-0.5..0.5);
        }
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let weights: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let objective = |p: &[f64], xv: &[f64]| -> f64 {
            linear_forward(p, &spec, xv).iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let mut grads = vec![0.0; 15];
        let mut d_x = vec![0.0; 4];
        linear_backward(&params, &spec, &x, &weights, &mut grads, Some(&mut d_x));
        let h = 1e-6;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let up = objective(&p, &x);
            p[i] -= 2.0 * h;
            let down = objective(&p, &x);
            assert_abs_diff_eq!(grads[i], (up - down) / (2.0 * h), epsilon = 1e-7);
        }
        for i in 0..x.len() {
            let mut xv = x.clone();
            xv[i] += h;
            let up = objective(&params, &xv);
            xv[i] -= 2.0 * h;
            let down = objective(&params, &xv);
            assert_abs_diff_eq!(d_x[i], (up - down) / (2.0 * h), epsilon = 1e-7);
        }
    }

    #[test]
    fn silu_grad_matches_finite_difference() {
        for v in [-2.0, -0.3, 0.0, 0.7, 3.0] {
            let h = 1e-6;
            let fd = (silu(v + h) - silu(v - h)) / (2.0 * h);
            assert_abs_diff_eq!(silu_grad(v), fd, epsilon = 1e-8);
        }
    }
}
