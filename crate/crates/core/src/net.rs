//! Conditioned velocity network and its trainer.
//!
//! The backbone is a small stack of 3x3x3 convolutions (zero-padded, stride
//! 1) over two input channels: the flow state z_t and the degraded input
//! volume. Each hidden activation is modulated FiLM-style by a per-channel
//! scale and shift derived from a learned task embedding plus sinusoidal
//! time features, then passed through tanh; the output layer is linear.
//! Gradients are hand-rolled reverse mode over a flat parameter vector, and
//! the optimizer is Adam with a linear learning-rate decay to zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fasrm::{build_bands, fasfl_gradient, fasfl_loss, FasrmConfig, LossBreakdown};
use crate::flow::{interpolate, sample_noise, velocity_target, VelocityField};
use crate::task::{FieldTask, TASK_COMBINATIONS};
use crate::volume::{check_same_shape, Volume3D};

const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL * KERNEL;

/// Architecture knobs. The kernel is fixed at 3x3x3; the channel plan is
/// `2 -> hidden^hidden_layers -> 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetSpec {
    pub in_channels: usize,
    pub hidden_channels: usize,
    pub hidden_layers: usize,
    pub cond_dim: usize,
    pub time_features: usize,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self {
            in_channels: 2,
            hidden_channels: 16,
            hidden_layers: 3,
            cond_dim: 16,
            time_features: 16,
        }
    }
}

impl NetSpec {
    fn validate(&self) -> Result<()> {
        if self.in_channels != 2 {
            return Err(Error::invalid(
                "the network takes exactly two input channels (state and degraded volume)",
            ));
        }
        if self.hidden_channels == 0 || self.hidden_layers == 0 || self.cond_dim == 0 {
            return Err(Error::invalid("network dimensions must be >= 1"));
        }
        if self.time_features < 2 || self.time_features % 2 != 0 {
            return Err(Error::invalid("time_features must be even and >= 2"));
        }
        Ok(())
    }

    fn conv_layers(&self) -> usize {
        self.hidden_layers + 1
    }

    fn conv_channels(&self, layer: usize) -> (usize, usize) {
        let c_in = if layer == 0 {
            self.in_channels
        } else {
            self.hidden_channels
        };
        let c_out = if layer == self.hidden_layers {
            1
        } else {
            self.hidden_channels
        };
        (c_in, c_out)
    }
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    offset: usize,
    len: usize,
}

impl Slot {
    fn of<'a>(&self, buf: &'a [f64]) -> &'a [f64] {
        &buf[self.offset..self.offset + self.len]
    }

    fn of_mut<'a>(&self, buf: &'a mut [f64]) -> &'a mut [f64] {
        &mut buf[self.offset..self.offset + self.len]
    }
}

#[derive(Debug, Clone)]
struct Layout {
    conv_w: Vec<Slot>,
    conv_b: Vec<Slot>,
    embed: Slot,
    time_w: Slot,
    time_b: Slot,
    film_scale_w: Vec<Slot>,
    film_scale_b: Vec<Slot>,
    film_shift_w: Vec<Slot>,
    film_shift_b: Vec<Slot>,
    total: usize,
}

impl Layout {
    fn new(spec: &NetSpec) -> Self {
        let mut offset = 0usize;
        let mut slot = |len: usize| {
            let s = Slot { offset, len };
            offset += len;
            s
        };
        let mut conv_w = Vec::new();
        let mut conv_b = Vec::new();
        for layer in 0..spec.conv_layers() {
            let (c_in, c_out) = spec.conv_channels(layer);
            conv_w.push(slot(c_out * c_in * TAPS));
            conv_b.push(slot(c_out));
        }
        let embed = slot(TASK_COMBINATIONS * spec.cond_dim);
        let time_w = slot(spec.cond_dim * spec.time_features);
        let time_b = slot(spec.cond_dim);
        let mut film_scale_w = Vec::new();
        let mut film_scale_b = Vec::new();
        let mut film_shift_w = Vec::new();
        let mut film_shift_b = Vec::new();
        for _ in 0..spec.hidden_layers {
            film_scale_w.push(slot(spec.hidden_channels * spec.cond_dim));
            film_scale_b.push(slot(spec.hidden_channels));
            film_shift_w.push(slot(spec.hidden_channels * spec.cond_dim));
            film_shift_b.push(slot(spec.hidden_channels));
        }
        Layout {
            conv_w,
            conv_b,
            embed,
            time_w,
            time_b,
            film_scale_w,
            film_scale_b,
            film_shift_w,
            film_shift_b,
            total: offset,
        }
    }
}

/// Sinusoidal embedding of t on a geometric frequency ladder.
fn time_features(t: f64, count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    for j in 0..count / 2 {
        let omega = std::f64::consts::PI * (1u64 << j) as f64;
        out.push((omega * t).sin());
        out.push((omega * t).cos());
    }
    out
}

/// Zero-padded 3x3x3 convolution, offset-major accumulation.
fn conv3d_forward(
    input: &[f64],
    c_in: usize,
    shape: (usize, usize, usize),
    weights: &[f64],
    bias: &[f64],
    c_out: usize,
    out: &mut [f64],
) {
    let (nx, ny, nz) = shape;
    let n = nx * ny * nz;
    debug_assert_eq!(input.len(), c_in * n);
    debug_assert_eq!(out.len(), c_out * n);
    debug_assert_eq!(weights.len(), c_out * c_in * TAPS);
    for o in 0..c_out {
        out[o * n..(o + 1) * n].fill(bias[o]);
    }
    for o in 0..c_out {
        for ci in 0..c_in {
            let wbase = (o * c_in + ci) * TAPS;
            for dz in -1i64..=1 {
                let (z0, z1) = offset_range(dz, nz);
                for dy in -1i64..=1 {
                    let (y0, y1) = offset_range(dy, ny);
                    for dx in -1i64..=1 {
                        let (x0, x1) = offset_range(dx, nx);
                        let w = weights
                            [wbase + ((dz + 1) * 9 + (dy + 1) * 3 + (dx + 1)) as usize];
                        for z in z0..z1 {
                            let zi = (z as i64 + dz) as usize;
                            for y in y0..y1 {
                                let yi = (y as i64 + dy) as usize;
                                let row_out = o * n + nx * (y + ny * z);
                                let row_in =
                                    (ci * n + nx * (yi + ny * zi)) as i64 + dx;
                                for x in x0..x1 {
                                    out[row_out + x] +=
                                        w * input[(row_in + x as i64) as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Valid output index range along one axis for a kernel offset `d`:
/// positions where `x + d` stays in bounds.
#[inline]
fn offset_range(d: i64, n: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as i64 - d.max(0)) as usize;
    (lo, hi.max(lo))
}

/// Reverse-mode pass of [`conv3d_forward`]: accumulates weight and bias
/// gradients and, when requested, the gradient with respect to the input.
#[allow(clippy::too_many_arguments)]
fn conv3d_backward(
    input: &[f64],
    c_in: usize,
    shape: (usize, usize, usize),
    weights: &[f64],
    c_out: usize,
    dout: &[f64],
    dweights: &mut [f64],
    dbias: &mut [f64],
    mut dinput: Option<&mut [f64]>,
) {
    let (nx, ny, nz) = shape;
    let n = nx * ny * nz;
    for o in 0..c_out {
        dbias[o] += dout[o * n..(o + 1) * n].iter().sum::<f64>();
    }
    for o in 0..c_out {
        for ci in 0..c_in {
            let wbase = (o * c_in + ci) * TAPS;
            for dz in -1i64..=1 {
                let (z0, z1) = offset_range(dz, nz);
                for dy in -1i64..=1 {
                    let (y0, y1) = offset_range(dy, ny);
                    for dx in -1i64..=1 {
                        let (x0, x1) = offset_range(dx, nx);
                        let widx =
                            wbase + ((dz + 1) * 9 + (dy + 1) * 3 + (dx + 1)) as usize;
                        let w = weights[widx];
                        let mut acc = 0.0;
                        for z in z0..z1 {
                            let zi = (z as i64 + dz) as usize;
                            for y in y0..y1 {
                                let yi = (y as i64 + dy) as usize;
                                let row_out = o * n + nx * (y + ny * z);
                                let row_in =
                                    (ci * n + nx * (yi + ny * zi)) as i64 + dx;
                                if let Some(di) = dinput.as_deref_mut() {
                                    for x in x0..x1 {
                                        let g = dout[row_out + x];
                                        let ii = (row_in + x as i64) as usize;
                                        acc += g * input[ii];
                                        di[ii] += w * g;
                                    }
                                } else {
                                    for x in x0..x1 {
                                        acc += dout[row_out + x]
                                            * input[(row_in + x as i64) as usize];
                                    }
                                }
                            }
                        }
                        dweights[widx] += acc;
                    }
                }
            }
        }
    }
}

struct ForwardCache {
    shape: (usize, usize, usize),
    task_index: usize,
    feats: Vec<f64>,
    cond: Vec<f64>,
    input: Vec<f64>,
    pre_film: Vec<Vec<f64>>,
    gammas: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
}

/// The conditioned velocity network F(z_t, x_lf, task, t) with flat
/// parameter, gradient, and Adam moment arrays of identical length.
pub struct VelocityModel {
    spec: NetSpec,
    layout: Layout,
    params: Vec<f64>,
    grads: Vec<f64>,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    cache: Option<ForwardCache>,
}

impl VelocityModel {
    /// Seeded initialization: weights uniform in +-1/sqrt(fan_in), biases zero.
    pub fn new(spec: NetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::new(&spec);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |slot: Slot, fan_in: usize, params: &mut [f64]| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in slot.of_mut(params) {
                *p = (rng.random::<f64>() * 2.0 - 1.0) * bound;
            }
        };
        for layer in 0..spec.conv_layers() {
            let (c_in, _) = spec.conv_channels(layer);
            fill(layout.conv_w[layer], c_in * TAPS, &mut params);
        }
        fill(layout.embed, spec.cond_dim, &mut params);
        fill(layout.time_w, spec.time_features, &mut params);
        for l in 0..spec.hidden_layers {
            fill(layout.film_scale_w[l], spec.cond_dim, &mut params);
            fill(layout.film_shift_w[l], spec.cond_dim, &mut params);
        }
        let total = layout.total;
        Ok(Self {
            spec,
            layout,
            params,
            grads: vec![0.0; total],
            adam_m: vec![0.0; total],
            adam_v: vec![0.0; total],
            cache: None,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn zero_grads(&mut self) {
        self.grads.fill(0.0);
    }

    fn condition(&self, task: &FieldTask, feats: &[f64]) -> Vec<f64> {
        let cd = self.spec.cond_dim;
        let tf = self.spec.time_features;
        let embed = self.layout.embed.of(&self.params);
        let time_w = self.layout.time_w.of(&self.params);
        let time_b = self.layout.time_b.of(&self.params);
        let row = task.embedding_index() * cd;
        (0..cd)
            .map(|c| {
                let proj: f64 = (0..tf).map(|j| time_w[c * tf + j] * feats[j]).sum();
                embed[row + c] + proj + time_b[c]
            })
            .collect()
    }

    fn film_params(&self, layer: usize, cond: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hc = self.spec.hidden_channels;
        let cd = self.spec.cond_dim;
        let sw = self.layout.film_scale_w[layer].of(&self.params);
        let sb = self.layout.film_scale_b[layer].of(&self.params);
        let tw = self.layout.film_shift_w[layer].of(&self.params);
        let tb = self.layout.film_shift_b[layer].of(&self.params);
        let mut gamma = Vec::with_capacity(hc);
        let mut beta = Vec::with_capacity(hc);
        for c in 0..hc {
            let g: f64 = (0..cd).map(|j| sw[c * cd + j] * cond[j]).sum::<f64>() + sb[c];
            let b: f64 = (0..cd).map(|j| tw[c * cd + j] * cond[j]).sum::<f64>() + tb[c];
            gamma.push(g);
            beta.push(b);
        }
        (gamma, beta)
    }

    fn run(&self, z_t: &Volume3D, x_lf: &Volume3D, task: &FieldTask, t: f64) -> Result<(Volume3D, ForwardCache)> {
        check_same_shape(z_t, x_lf)?;
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("time {t} outside [0, 1]")));
        }
        let shape = z_t.shape();
        let n = z_t.len();
        let hc = self.spec.hidden_channels;

        let mut input = Vec::with_capacity(2 * n);
        input.extend_from_slice(z_t.data());
        input.extend_from_slice(x_lf.data());

        let feats = time_features(t, self.spec.time_features);
        let cond = self.condition(task, &feats);

        let mut pre_film = Vec::with_capacity(self.spec.hidden_layers);
        let mut gammas = Vec::with_capacity(self.spec.hidden_layers);
        let mut hidden = Vec::with_capacity(self.spec.hidden_layers);

        let mut current = input.clone();
        let mut c_cur = self.spec.in_channels;
        for layer in 0..self.spec.hidden_layers {
            let (c_in, c_out) = self.spec.conv_channels(layer);
            debug_assert_eq!(c_in, c_cur);
            let mut y = vec![0.0; c_out * n];
            conv3d_forward(
                &current,
                c_in,
                shape,
                self.layout.conv_w[layer].of(&self.params),
                self.layout.conv_b[layer].of(&self.params),
                c_out,
                &mut y,
            );
            let (gamma, beta) = self.film_params(layer, &cond);
            let mut h = vec![0.0; c_out * n];
            for c in 0..c_out {
                let scale = 1.0 + gamma[c];
                let shift = beta[c];
                for p in 0..n {
                    h[c * n + p] = (scale * y[c * n + p] + shift).tanh();
                }
            }
            pre_film.push(y);
            gammas.push(gamma);
            hidden.push(h.clone());
            current = h;
            c_cur = hc;
        }

        let last = self.spec.hidden_layers;
        let mut out = vec![0.0; n];
        conv3d_forward(
            &current,
            c_cur,
            shape,
            self.layout.conv_w[last].of(&self.params),
            self.layout.conv_b[last].of(&self.params),
            1,
            &mut out,
        );

        let cache = ForwardCache {
            shape,
            task_index: task.embedding_index(),
            feats,
            cond,
            input,
            pre_film,
            gammas,
            hidden,
        };
        let vol = Volume3D::from_vec(out, shape, z_t.spacing())?;
        Ok((vol, cache))
    }

    /// Training-time forward pass; caches activations for [`backward`](Self::backward).
    pub fn forward(
        &mut self,
        z_t: &Volume3D,
        x_lf: &Volume3D,
        task: &FieldTask,
        t: f64,
    ) -> Result<Volume3D> {
        let (out, cache) = self.run(z_t, x_lf, task, t)?;
        self.cache = Some(cache);
        Ok(out)
    }

    /// Inference-time forward pass; read-only and callable concurrently.
    pub fn infer(
        &self,
        z_t: &Volume3D,
        x_lf: &Volume3D,
        task: &FieldTask,
        t: f64,
    ) -> Result<Volume3D> {
        let (out, _) = self.run(z_t, x_lf, task, t)?;
        Ok(out)
    }

    /// Accumulates dLoss/dparams into the gradient buffer from the cached
    /// forward activations and the supplied dLoss/doutput. The cache is kept,
    /// so repeated backward calls against one forward pass accumulate.
    pub fn backward(&mut self, loss_grad: &Volume3D) -> Result<()> {
        let cache = self.cache.take().ok_or(Error::MissingForwardCache)?;
        let result = self.backward_inner(loss_grad, &cache);
        self.cache = Some(cache);
        result
    }

    fn backward_inner(&mut self, loss_grad: &Volume3D, cache: &ForwardCache) -> Result<()> {
        if loss_grad.shape() != cache.shape {
            return Err(Error::ShapeMismatch {
                expected: cache.shape,
                got: loss_grad.shape(),
            });
        }
        let shape = cache.shape;
        let n = loss_grad.len();
        let hc = self.spec.hidden_channels;
        let cd = self.spec.cond_dim;
        let tf = self.spec.time_features;

        // Final linear conv.
        let last = self.spec.hidden_layers;
        let last_input: &[f64] = &cache.hidden[last - 1];
        let mut dcur = vec![0.0; hc * n];
        {
            let w = self.layout.conv_w[last];
            let b = self.layout.conv_b[last];
            let mut dw = vec![0.0; w.len];
            let mut db = vec![0.0; b.len];
            conv3d_backward(
                last_input,
                hc,
                shape,
                w.of(&self.params),
                1,
                loss_grad.data(),
                &mut dw,
                &mut db,
                Some(&mut dcur),
            );
            for (g, d) in w.of_mut(&mut self.grads).iter_mut().zip(&dw) {
                *g += d;
            }
            for (g, d) in b.of_mut(&mut self.grads).iter_mut().zip(&db) {
                *g += d;
            }
        }

        let mut dcond = vec![0.0; cd];
        for layer in (0..self.spec.hidden_layers).rev() {
            let h = &cache.hidden[layer];
            let y = &cache.pre_film[layer];
            let gamma = &cache.gammas[layer];

            // tanh then FiLM.
            let mut dy = vec![0.0; h.len()];
            let mut dgamma = vec![0.0; hc];
            let mut dbeta = vec![0.0; hc];
            for c in 0..hc {
                let scale = 1.0 + gamma[c];
                let mut dg = 0.0;
                let mut db = 0.0;
                for p in 0..n {
                    let i = c * n + p;
                    let da = dcur[i] * (1.0 - h[i] * h[i]);
                    dy[i] = da * scale;
                    dg += da * y[i];
                    db += da;
                }
                dgamma[c] = dg;
                dbeta[c] = db;
            }

            // FiLM parameter gradients and their pull on the condition vector.
            {
                let cond = &cache.cond;
                let sw_slot = self.layout.film_scale_w[layer];
                let sb_slot = self.layout.film_scale_b[layer];
                let tw_slot = self.layout.film_shift_w[layer];
                let tb_slot = self.layout.film_shift_b[layer];
                let sw: Vec<f64> = sw_slot.of(&self.params).to_vec();
                let tw: Vec<f64> = tw_slot.of(&self.params).to_vec();
                let gsw = sw_slot.of_mut(&mut self.grads);
                for c in 0..hc {
                    for j in 0..cd {
                        gsw[c * cd + j] += dgamma[c] * cond[j];
                    }
                }
                let gsb = sb_slot.of_mut(&mut self.grads);
                for c in 0..hc {
                    gsb[c] += dgamma[c];
                }
                let gtw = tw_slot.of_mut(&mut self.grads);
                for c in 0..hc {
                    for j in 0..cd {
                        gtw[c * cd + j] += dbeta[c] * cond[j];
                    }
                }
                let gtb = tb_slot.of_mut(&mut self.grads);
                for c in 0..hc {
                    gtb[c] += dbeta[c];
                }
                for j in 0..cd {
                    let mut acc = 0.0;
                    for c in 0..hc {
                        acc += sw[c * cd + j] * dgamma[c] + tw[c * cd + j] * dbeta[c];
                    }
                    dcond[j] += acc;
                }
            }

            // Convolution beneath the FiLM stage.
            let (c_in, c_out) = self.spec.conv_channels(layer);
            let conv_input: &[f64] = if layer == 0 {
                &cache.input
            } else {
                &cache.hidden[layer - 1]
            };
            let mut dinput = if layer == 0 {
                None
            } else {
                Some(vec![0.0; c_in * n])
            };
            {
                let w = self.layout.conv_w[layer];
                let b = self.layout.conv_b[layer];
                let mut dw = vec![0.0; w.len];
                let mut db = vec![0.0; b.len];
                conv3d_backward(
                    conv_input,
                    c_in,
                    shape,
                    w.of(&self.params),
                    c_out,
                    &dy,
                    &mut dw,
                    &mut db,
                    dinput.as_deref_mut(),
                );
                for (g, d) in w.of_mut(&mut self.grads).iter_mut().zip(&dw) {
                    *g += d;
                }
                for (g, d) in b.of_mut(&mut self.grads).iter_mut().zip(&db) {
                    *g += d;
                }
            }
            if let Some(di) = dinput {
                dcur = di;
            }
        }

        // Condition: embedding row, time projection, time bias.
        {
            let row = cache.task_index * cd;
            let ge = self.layout.embed.of_mut(&mut self.grads);
            for j in 0..cd {
                ge[row + j] += dcond[j];
            }
            let gtw = self.layout.time_w.of_mut(&mut self.grads);
            for c in 0..cd {
                for j in 0..tf {
                    gtw[c * tf + j] += dcond[c] * cache.feats[j];
                }
            }
            let gtb = self.layout.time_b.of_mut(&mut self.grads);
            for c in 0..cd {
                gtb[c] += dcond[c];
            }
        }
        Ok(())
    }
}

impl VelocityField for VelocityModel {
    fn velocity(
        &self,
        z: &Volume3D,
        x_lf: &Volume3D,
        task: &FieldTask,
        t: f64,
    ) -> Result<Volume3D> {
        self.infer(z, x_lf, task, t)
    }
}

/// Optimizer and schedule settings.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub total_iters: usize,
    pub decay_start: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
            total_iters: 1000,
            decay_start: 500,
            batch_size: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults rescaled to a different iteration budget; the decay still
    /// starts at the halfway point.
    pub fn for_iters(total_iters: usize, seed: u64) -> Self {
        Self {
            total_iters,
            decay_start: (total_iters / 2).max(1),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 || !self.lr0.is_finite() {
            return Err(Error::invalid("lr0 must be positive"));
        }
        if self.decay_start == 0 || self.decay_start > self.total_iters {
            return Err(Error::invalid(
                "decay_start must satisfy 0 < decay_start <= total_iters",
            ));
        }
        if self.batch_size != 1 {
            return Err(Error::invalid("only batch size 1 is supported"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("betas must lie in [0, 1)"));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(())
    }
}

/// Learning rate at `iter` (1-based): constant until `decay_start`, then
/// linear to zero at `total_iters`.
pub fn learning_rate(cfg: &TrainConfig, iter: usize) -> f64 {
    if iter <= cfg.decay_start {
        cfg.lr0
    } else {
        cfg.lr0 * (cfg.total_iters - iter) as f64 / (cfg.total_iters - cfg.decay_start) as f64
    }
}

impl VelocityModel {
    /// One Adam update with bias correction at the scheduled learning rate;
    /// gradients are zeroed afterward.
    pub fn adam_step(&mut self, cfg: &TrainConfig, iter: usize) {
        let lr = learning_rate(cfg, iter);
        let bc1 = 1.0 - cfg.beta1.powi(iter as i32);
        let bc2 = 1.0 - cfg.beta2.powi(iter as i32);
        for i in 0..self.params.len() {
            let g = self.grads[i];
            self.adam_m[i] = cfg.beta1 * self.adam_m[i] + (1.0 - cfg.beta1) * g;
            self.adam_v[i] = cfg.beta2 * self.adam_v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.adam_m[i] / bc1;
            let v_hat = self.adam_v[i] / bc2;
            self.params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
            self.grads[i] = 0.0;
        }
    }
}

/// One training pair plus its task descriptor.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub x_lf: Volume3D,
    pub x_hf: Volume3D,
    pub task: FieldTask,
}

/// Per-iteration training record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub loss: LossBreakdown,
    pub lr: f64,
}

pub type TrainingLog = Vec<IterRecord>;

/// Flow-matching training loop: per iteration draw a pair and a time, build
/// the interpolated state, regress the velocity under the spectral loss, and
/// take one Adam step. Deterministic in (seed, dataset order, config).
pub fn train(
    model: &mut VelocityModel,
    dataset: &[TrainSample],
    cfg: &TrainConfig,
    fasrm_cfg: &FasrmConfig,
) -> Result<TrainingLog> {
    cfg.validate()?;
    fasrm_cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let shape = dataset[0].x_hf.shape();
    for s in dataset {
        check_same_shape(&s.x_hf, &dataset[0].x_hf)?;
        check_same_shape(&s.x_lf, &s.x_hf)?;
    }
    let bands = build_bands(shape, fasrm_cfg.cutoffs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(cfg.total_iters);

    for iter in 1..=cfg.total_iters {
        let sample = &dataset[rng.random_range(0..dataset.len())];
        let t: f64 = rng.random();
        let noise_seed: u64 = rng.random();
        let z1 = sample_noise(shape, noise_seed)?.with_spacing(sample.x_hf.spacing())?;
        let state = interpolate(&sample.x_hf, &z1, t)?;
        let v_target = velocity_target(&sample.x_hf, &z1)?;

        let v_pred = model.forward(&state.z, &sample.x_lf, &sample.task, t)?;
        let loss = fasfl_loss(&v_pred, &v_target, &sample.task, fasrm_cfg, &bands)?;
        if !loss.total.is_finite() {
            return Err(Error::TrainingDiverged { iter });
        }
        let grad = fasfl_gradient(&v_pred, &v_target, &sample.task, fasrm_cfg, &bands)?;
        model.backward(&grad)?;
        model.adam_step(cfg, iter);
        log.push(IterRecord {
            iter,
            loss,
            lr: learning_rate(cfg, iter),
        });
    }
    Ok(log)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"UFLD0001";

impl VelocityModel {
    /// Writes the checkpoint: magic, a textual architecture echo, the
    /// parameter count, and the flat parameter array as little-endian f64.
    pub fn save(&self, path: &Path) -> Result<()> {
        let echo = format!(
            "in_channels={}\nhidden_channels={}\nhidden_layers={}\ncond_dim={}\ntime_features={}\ntask_embeddings={}\n",
            self.spec.in_channels,
            self.spec.hidden_channels,
            self.spec.hidden_layers,
            self.spec.cond_dim,
            self.spec.time_features,
            TASK_COMBINATIONS,
        );
        let mut bytes = Vec::with_capacity(8 + 4 + echo.len() + 8 + 8 * self.params.len());
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&(echo.len() as u32).to_le_bytes());
        bytes.extend_from_slice(echo.as_bytes());
        bytes.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        let mut file = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("create checkpoint {}", path.display()), e))?;
        file.write_all(&bytes)
            .map_err(|e| Error::io(format!("write checkpoint {}", path.display()), e))?;
        Ok(())
    }

    /// Reads a checkpoint written by [`save`](Self::save); round trips are
    /// bit-exact.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("read checkpoint {}", path.display()), e))?;
        let fail = |msg: &str| Error::invalid(format!("checkpoint {}: {msg}", path.display()));
        if bytes.len() < 12 || &bytes[0..8] != CHECKPOINT_MAGIC {
            return Err(fail("bad magic"));
        }
        let echo_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let echo_end = 12 + echo_len;
        if bytes.len() < echo_end + 8 {
            return Err(fail("truncated header"));
        }
        let echo = std::str::from_utf8(&bytes[12..echo_end])
            .map_err(|_| fail("config echo is not UTF-8"))?;
        let mut spec = NetSpec::default();
        let mut embeddings = TASK_COMBINATIONS;
        for line in echo.lines() {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| fail("malformed config echo line"))?;
            let value: usize = value
                .parse()
                .map_err(|_| fail("non-numeric config echo value"))?;
            match key {
                "in_channels" => spec.in_channels = value,
                "hidden_channels" => spec.hidden_channels = value,
                "hidden_layers" => spec.hidden_layers = value,
                "cond_dim" => spec.cond_dim = value,
                "time_features" => spec.time_features = value,
                "task_embeddings" => embeddings = value,
                other => return Err(fail(&format!("unknown config echo key {other:?}"))),
            }
        }
        if embeddings != TASK_COMBINATIONS {
            return Err(fail("task embedding count mismatch"));
        }
        let count =
            u64::from_le_bytes(bytes[echo_end..echo_end + 8].try_into().unwrap()) as usize;
        let mut model = VelocityModel::new(spec, 0)?;
        if count != model.param_count() {
            return Err(fail(&format!(
                "parameter count {count} does not match architecture ({})",
                model.param_count()
            )));
        }
        let data_start = echo_end + 8;
        if bytes.len() != data_start + 8 * count {
            return Err(fail("parameter payload length mismatch"));
        }
        for (i, chunk) in bytes[data_start..].chunks_exact(8).enumerate() {
            model.params[i] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(model)
    }
}
