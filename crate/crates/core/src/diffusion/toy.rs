//! A small trainable convolutional denoiser: the desk-scale reference
//! backend.
//!
//! Three 3x3 conv layers over single-channel images with SiLU activations, a
//! learned scalar skip from the noisy input, and conditioning injected after
//! the first two convs: the token-pooled embedding and a sinusoidal timestep
//! encoding pass through small learned projections into per-channel biases,
//! and the pooled embedding additionally drives a learned low-resolution
//! spatial bias map (upsampled, channel-shared) so conditioning can steer
//! spatial structure. Parameters are held in f64 for optimization but rounded
//! through f32 after every update so the persisted f32 view is canonical.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::backend::{check_cond, BackendVjp, DiffusionBackend};
use crate::diffusion::schedule::TimeStep;
use crate::error::DiffusionError;
use crate::rng::rng_for;

const TIME_FEATURES: usize = 16;
const SPATIAL_GRID: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyBackendConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub d_text: usize,
    pub seed: u64,
}

impl Default for ToyBackendConfig {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            channels: 16,
            d_text: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyBackend {
    cfg: ToyBackendConfig,
    w1: Vec<f64>,
    b1: Vec<f64>,
    wc1: Vec<f64>,
    wt1: Vec<f64>,
    wsp1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    wc2: Vec<f64>,
    wt2: Vec<f64>,
    w3: Vec<f64>,
    b3: Vec<f64>,
    skip: Vec<f64>,
    trainable: bool,
}

impl ToyBackend {
    pub fn new(cfg: ToyBackendConfig) -> Self {
        let c = cfg.channels;
        let d = cfg.d_text;
        let f = TIME_FEATURES;
        let init = |name: &str, n: usize, bound: f64| -> Vec<f64> {
            let mut rng = rng_for(cfg.seed, &["toy-init", name]);
            (0..n)
                .map(|_| f64::from(rng.gen_range(-bound..bound) as f32))
                .collect()
        };
        Self {
            w1: init("w1", c * 9, 1.0 / 3.0),
            b1: vec![0.0; c],
            wc1: init("wc1", d * c, 1.0 / (d as f64).sqrt()),
            wt1: init("wt1", f * c, 1.0 / (f as f64).sqrt()),
            wsp1: init(
                "wsp1",
                d * SPATIAL_GRID * SPATIAL_GRID,
                1.0 / (d as f64).sqrt(),
            ),
            w2: init("w2", c * c * 9, 1.0 / ((9 * c) as f64).sqrt()),
            b2: vec![0.0; c],
            wc2: init("wc2", d * c, 1.0 / (d as f64).sqrt()),
            wt2: init("wt2", f * c, 1.0 / (f as f64).sqrt()),
            w3: init("w3", c * 9, 1.0 / ((9 * c) as f64).sqrt()),
            b3: vec![0.0; 1],
            skip: vec![0.5; 1],
            trainable: true,
            cfg,
        }
    }

    pub fn config(&self) -> &ToyBackendConfig {
        &self.cfg
    }

    fn param_specs(&self) -> Vec<(&'static str, Vec<usize>)> {
        let c = self.cfg.channels;
        let d = self.cfg.d_text;
        vec![
            ("w1", vec![c, 1, 3, 3]),
            ("b1", vec![c]),
            ("wc1", vec![d, c]),
            ("wt1", vec![TIME_FEATURES, c]),
            ("wsp1", vec![d, SPATIAL_GRID, SPATIAL_GRID]),
            ("w2", vec![c, c, 3, 3]),
            ("b2", vec![c]),
            ("wc2", vec![d, c]),
            ("wt2", vec![TIME_FEATURES, c]),
            ("w3", vec![1, c, 3, 3]),
            ("b3", vec![1]),
            ("skip", vec![1]),
        ]
    }

    fn param_vecs(&self) -> Vec<&Vec<f64>> {
        vec![
            &self.w1, &self.b1, &self.wc1, &self.wt1, &self.wsp1, &self.w2, &self.b2, &self.wc2,
            &self.wt2, &self.w3, &self.b3, &self.skip,
        ]
    }

    fn param_vecs_mut(&mut self) -> Vec<&mut Vec<f64>> {
        vec![
            &mut self.w1,
            &mut self.b1,
            &mut self.wc1,
            &mut self.wt1,
            &mut self.wsp1,
            &mut self.w2,
            &mut self.b2,
            &mut self.wc2,
            &mut self.wt2,
            &mut self.w3,
            &mut self.b3,
            &mut self.skip,
        ]
    }

    fn forward_trace(
        &self,
        z: &[f64],
        t: TimeStep,
        e_cond: &[f64],
    ) -> Result<ForwardTrace, DiffusionError> {
        let (h, w, c) = (self.cfg.height, self.cfg.width, self.cfg.channels);
        let d = self.cfg.d_text;
        if z.len() != h * w {
            return Err(DiffusionError::ImageShape {
                expected: (1, h, w),
                actual: (1, z.len() / w.max(1), w),
            });
        }
        let n_tokens = check_cond(self, e_cond)?;

        // Token-pooled conditioning and timestep features.
        let mut pooled = vec![0.0f64; d];
        for token in 0..n_tokens {
            for (k, p) in pooled.iter_mut().enumerate() {
                *p += e_cond[token * d + k];
            }
        }
        for p in pooled.iter_mut() {
            *p /= n_tokens as f64;
        }
        let tf = time_features(t.norm);

        let bias1 = layer_bias(&self.b1, &self.wc1, &pooled, &self.wt1, &tf, c);
        let mut h1 = vec![0.0f64; c * h * w];
        conv3x3(z, 1, h, w, &self.w1, c, &bias1, &mut h1);
        // Conditioning-driven spatial bias, shared across channels.
        let mut sp_map = [0.0f64; SPATIAL_GRID * SPATIAL_GRID];
        for (k, &p) in pooled.iter().enumerate() {
            for (cell, m) in sp_map.iter_mut().enumerate() {
                *m += p * self.wsp1[k * SPATIAL_GRID * SPATIAL_GRID + cell];
            }
        }
        let taps = upsample_taps(h, w);
        for ch in 0..c {
            let plane = &mut h1[ch * h * w..(ch + 1) * h * w];
            for (i, tap) in taps.iter().enumerate() {
                let mut v = 0.0f64;
                for &(cell, weight) in tap {
                    v += sp_map[cell] * weight;
                }
                plane[i] += v;
            }
        }
        let a1: Vec<f64> = h1.iter().map(|&v| silu(v)).collect();

        let bias2 = layer_bias(&self.b2, &self.wc2, &pooled, &self.wt2, &tf, c);
        let mut h2 = vec![0.0f64; c * h * w];
        conv3x3(&a1, c, h, w, &self.w2, c, &bias2, &mut h2);
        let a2: Vec<f64> = h2.iter().map(|&v| silu(v)).collect();

        let mut out = vec![0.0f64; h * w];
        conv3x3(&a2, c, h, w, &self.w3, 1, &self.b3, &mut out);
        let s = self.skip[0];
        for (o, &zv) in out.iter_mut().zip(z) {
            *o += s * zv;
        }

        Ok(ForwardTrace {
            pooled,
            taps,
            tf,
            n_tokens,
            h1,
            a1,
            h2,
            a2,
            out,
        })
    }
}

struct ForwardTrace {
    pooled: Vec<f64>,
    taps: Vec<[(usize, f64); 4]>,
    tf: [f64; TIME_FEATURES],
    n_tokens: usize,
    h1: Vec<f64>,
    a1: Vec<f64>,
    h2: Vec<f64>,
    a2: Vec<f64>,
    out: Vec<f64>,
}

impl DiffusionBackend for ToyBackend {
    fn kind(&self) -> &'static str {
        "toy"
    }

    fn image_shape(&self) -> (usize, usize, usize) {
        (1, self.cfg.height, self.cfg.width)
    }

    fn d_text(&self) -> usize {
        self.cfg.d_text
    }

    fn n_params(&self) -> usize {
        self.param_vecs().iter().map(|v| v.len()).sum()
    }

    fn predict_f64(
        &self,
        z_t: &[f64],
        t: TimeStep,
        e_cond: &[f64],
    ) -> Result<Vec<f64>, DiffusionError> {
        Ok(self.forward_trace(z_t, t, e_cond)?.out)
    }

    fn vjp_with(
        &self,
        z_t: &[f64],
        t: TimeStep,
        e_cond: &[f64],
        make_upstream: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<BackendVjp, DiffusionError> {
        let (h, w, c) = (self.cfg.height, self.cfg.width, self.cfg.channels);
        let d = self.cfg.d_text;
        let trace = self.forward_trace(z_t, t, e_cond)?;
        let dout = make_upstream(&trace.out);
        debug_assert_eq!(dout.len(), h * w);

        // Output layer: skip scalar, w3, b3, and gradient into a2.
        let dskip: f64 = dout.iter().zip(z_t).map(|(&g, &z)| g * z).sum();
        let db3: f64 = dout.iter().sum();
        let mut dw3 = vec![0.0f64; c * 9];
        let mut da2 = vec![0.0f64; c * h * w];
        conv3x3_backward(&trace.a2, c, h, w, &self.w3, 1, &dout, &mut dw3, &mut da2);

        // Second conv block.
        let mut dh2 = da2;
        for (g, &pre) in dh2.iter_mut().zip(&trace.h2) {
            *g *= silu_grad(pre);
        }
        let ch_sums2 = channel_sums(&dh2, c, h * w);
        let (dwc2, dwt2, mut dpooled) =
            bias_grads(&ch_sums2, &trace.pooled, &trace.tf, &self.wc2, d, c);
        let mut dw2 = vec![0.0f64; c * c * 9];
        let mut da1 = vec![0.0f64; c * h * w];
        conv3x3_backward(&trace.a1, c, h, w, &self.w2, c, &dh2, &mut dw2, &mut da1);

        // First conv block.
        let mut dh1 = da1;
        for (g, &pre) in dh1.iter_mut().zip(&trace.h1) {
            *g *= silu_grad(pre);
        }
        let ch_sums1 = channel_sums(&dh1, c, h * w);
        let (dwc1, dwt1, dpooled1) =
            bias_grads(&ch_sums1, &trace.pooled, &trace.tf, &self.wc1, d, c);
        for (a, b) in dpooled.iter_mut().zip(&dpooled1) {
            *a += b;
        }
        // Spatial bias pathway: adjoint of the upsample, then the projection.
        let mut dmap = [0.0f64; SPATIAL_GRID * SPATIAL_GRID];
        for ch in 0..c {
            let plane = &dh1[ch * h * w..(ch + 1) * h * w];
            for (i, tap) in trace.taps.iter().enumerate() {
                let g = plane[i];
                for &(cell, weight) in tap {
                    dmap[cell] += g * weight;
                }
            }
        }
        let sp = SPATIAL_GRID * SPATIAL_GRID;
        let mut dwsp1 = vec![0.0f64; d * sp];
        for (k, &p) in trace.pooled.iter().enumerate() {
            for cell in 0..sp {
                dwsp1[k * sp + cell] = p * dmap[cell];
            }
        }
        for (k, dp) in dpooled.iter_mut().enumerate() {
            for (cell, &dm) in dmap.iter().enumerate() {
                *dp += self.wsp1[k * sp + cell] * dm;
            }
        }
        let mut dw1 = vec![0.0f64; c * 9];
        let mut dz = vec![0.0f64; h * w];
        conv3x3_backward(z_t, 1, h, w, &self.w1, c, &dh1, &mut dw1, &mut dz);

        // Conditioning gradient: pooled gradient spread evenly over tokens.
        let mut econd_grads = vec![0.0f64; e_cond.len()];
        let inv = 1.0 / trace.n_tokens as f64;
        for token in 0..trace.n_tokens {
            for k in 0..d {
                econd_grads[token * d + k] = dpooled[k] * inv;
            }
        }

        let mut param_grads = Vec::with_capacity(self.n_params());
        param_grads.extend_from_slice(&dw1);
        param_grads.extend_from_slice(&ch_sums1); // db1
        param_grads.extend_from_slice(&dwc1);
        param_grads.extend_from_slice(&dwt1);
        param_grads.extend_from_slice(&dwsp1);
        param_grads.extend_from_slice(&dw2);
        param_grads.extend_from_slice(&ch_sums2); // db2
        param_grads.extend_from_slice(&dwc2);
        param_grads.extend_from_slice(&dwt2);
        param_grads.extend_from_slice(&dw3);
        param_grads.push(db3);
        param_grads.push(dskip);

        Ok(BackendVjp {
            prediction: trace.out,
            param_grads,
            econd_grads,
        })
    }

    fn parameters(&self) -> Vec<f32> {
        self.param_vecs()
            .iter()
            .flat_map(|v| v.iter().map(|&x| x as f32))
            .collect()
    }

    fn set_parameters(&mut self, flat: &[f32]) -> Result<(), DiffusionError> {
        if !self.trainable {
            return Err(DiffusionError::Frozen);
        }
        if flat.len() != self.n_params() {
            return Err(DiffusionError::ParamLen {
                expected: self.n_params(),
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for vec in self.param_vecs_mut() {
            for v in vec.iter_mut() {
                *v = f64::from(flat[offset]);
                offset += 1;
            }
        }
        Ok(())
    }

    fn named_parameters(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        self.param_specs()
            .into_iter()
            .zip(self.param_vecs())
            .map(|((name, shape), values)| {
                (
                    name.to_string(),
                    shape,
                    values.iter().map(|&v| v as f32).collect(),
                )
            })
            .collect()
    }

    fn train_mode(&mut self, on: bool) {
        self.trainable = on;
    }

    fn is_trainable(&self) -> bool {
        self.trainable
    }
}

/// Bilinear taps mapping the SPATIAL_GRID map onto an h x w plane:
/// for each output pixel, four (cell, weight) contributions.
fn upsample_taps(h: usize, w: usize) -> Vec<[(usize, f64); 4]> {
    let g = SPATIAL_GRID;
    let mut taps = Vec::with_capacity(h * w);
    for y in 0..h {
        let fy = ((y as f64 + 0.5) * g as f64 / h as f64 - 0.5).clamp(0.0, (g - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(g - 1);
        let wy = fy - y0 as f64;
        for x in 0..w {
            let fx = ((x as f64 + 0.5) * g as f64 / w as f64 - 0.5).clamp(0.0, (g - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(g - 1);
            let wx = fx - x0 as f64;
            taps.push([
                (y0 * g + x0, (1.0 - wy) * (1.0 - wx)),
                (y0 * g + x1, (1.0 - wy) * wx),
                (y1 * g + x0, wy * (1.0 - wx)),
                (y1 * g + x1, wy * wx),
            ]);
        }
    }
    taps
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

fn time_features(norm: f64) -> [f64; TIME_FEATURES] {
    let mut out = [0.0f64; TIME_FEATURES];
    for k in 0..TIME_FEATURES / 2 {
        let freq = (1u64 << k) as f64;
        let phase = std::f64::consts::TAU * freq * norm;
        out[2 * k] = phase.sin();
        out[2 * k + 1] = phase.cos();
    }
    out
}

/// Per-channel bias: learned bias + conditioning projection + time projection.
fn layer_bias(
    b: &[f64],
    wc: &[f64],
    pooled: &[f64],
    wt: &[f64],
    tf: &[f64],
    c: usize,
) -> Vec<f64> {
    let mut bias = b.to_vec();
    for (k, &p) in pooled.iter().enumerate() {
        for ch in 0..c {
            bias[ch] += p * wc[k * c + ch];
        }
    }
    for (k, &t) in tf.iter().enumerate() {
        for ch in 0..c {
            bias[ch] += t * wt[k * c + ch];
        }
    }
    bias
}

/// Gradients for the bias projections given per-channel upstream sums.
/// Returns (d_wc, d_wt, d_pooled).
fn bias_grads(
    ch_sums: &[f64],
    pooled: &[f64],
    tf: &[f64],
    wc: &[f64],
    d: usize,
    c: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dwc = vec![0.0f64; d * c];
    for (k, &p) in pooled.iter().enumerate() {
        for ch in 0..c {
            dwc[k * c + ch] = p * ch_sums[ch];
        }
    }
    let mut dwt = vec![0.0f64; TIME_FEATURES * c];
    for (k, &t) in tf.iter().enumerate() {
        for ch in 0..c {
            dwt[k * c + ch] = t * ch_sums[ch];
        }
    }
    let mut dpooled = vec![0.0f64; d];
    for (k, dp) in dpooled.iter_mut().enumerate() {
        for ch in 0..c {
            *dp += wc[k * c + ch] * ch_sums[ch];
        }
    }
    (dwc, dwt, dpooled)
}

fn channel_sums(grad: &[f64], c: usize, plane: usize) -> Vec<f64> {
    (0..c)
        .map(|ch| grad[ch * plane..(ch + 1) * plane].iter().sum())
        .collect()
}

fn pad_channel(src: &[f64], h: usize, w: usize, dst: &mut [f64]) {
    let pw = w + 2;
    for y in 0..h {
        dst[(y + 1) * pw + 1..(y + 1) * pw + 1 + w].copy_from_slice(&src[y * w..(y + 1) * w]);
    }
}

/// 3x3 same-padding convolution. `out` must be pre-sized to `out_c * h * w`;
/// each output channel starts from its entry in `bias`.
#[allow(clippy::too_many_arguments)]
fn conv3x3(
    input: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    out_c: usize,
    bias: &[f64],
    out: &mut [f64],
) {
    let plane = h * w;
    let pw = w + 2;
    let mut padded = vec![0.0f64; in_c * (h + 2) * pw];
    for ic in 0..in_c {
        pad_channel(
            &input[ic * plane..(ic + 1) * plane],
            h,
            w,
            &mut padded[ic * (h + 2) * pw..(ic + 1) * (h + 2) * pw],
        );
    }
    for oc in 0..out_c {
        let ochan = &mut out[oc * plane..(oc + 1) * plane];
        ochan.fill(bias[oc]);
        for ic in 0..in_c {
            let pchan = &padded[ic * (h + 2) * pw..(ic + 1) * (h + 2) * pw];
            let wbase = (oc * in_c + ic) * 9;
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = weights[wbase + ky * 3 + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in 0..h {
                        let prow = &pchan[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                        let orow = &mut ochan[y * w..(y + 1) * w];
                        for (o, &p) in orow.iter_mut().zip(prow) {
                            *o += wv * p;
                        }
                    }
                }
            }
        }
    }
}

/// Backward pass of [`conv3x3`]: accumulates weight gradients into `dweights`
/// and input gradients into `dinput` (both pre-zeroed by the caller).
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    out_c: usize,
    dout: &[f64],
    dweights: &mut [f64],
    dinput: &mut [f64],
) {
    let plane = h * w;
    let pw = w + 2;
    let psize = (h + 2) * pw;
    let mut padded = vec![0.0f64; in_c * psize];
    for ic in 0..in_c {
        pad_channel(
            &input[ic * plane..(ic + 1) * plane],
            h,
            w,
            &mut padded[ic * psize..(ic + 1) * psize],
        );
    }
    let mut dpadded = vec![0.0f64; in_c * psize];
    for oc in 0..out_c {
        let grow_all = &dout[oc * plane..(oc + 1) * plane];
        for ic in 0..in_c {
            let pchan = &padded[ic * psize..(ic + 1) * psize];
            let dpchan = &mut dpadded[ic * psize..(ic + 1) * psize];
            let wbase = (oc * in_c + ic) * 9;
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = weights[wbase + ky * 3 + kx];
                    let mut wacc = 0.0f64;
                    for y in 0..h {
                        let off = (y + ky) * pw + kx;
                        let prow = &pchan[off..off + w];
                        let dprow = &mut dpchan[off..off + w];
                        let grow = &grow_all[y * w..(y + 1) * w];
                        for x in 0..w {
                            let g = grow[x];
                            wacc += prow[x] * g;
                            dprow[x] += wv * g;
                        }
                    }
                    dweights[wbase + ky * 3 + kx] += wacc;
                }
            }
        }
    }
    // Un-pad input gradients.
    for ic in 0..in_c {
        let dpchan = &dpadded[ic * psize..(ic + 1) * psize];
        let dchan = &mut dinput[ic * plane..(ic + 1) * plane];
        for y in 0..h {
            for x in 0..w {
                dchan[y * w + x] += dpchan[(y + 1) * pw + (x + 1)];
            }
        }
    }
}
