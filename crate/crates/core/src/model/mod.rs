//! The conditional velocity network.
//!
//! A small frame-wise trunk: input projection, residual blocks of
//! (normalize, per-frame scale and shift from the conditioning, MLP,
//! depthwise temporal convolution), output projection. Acoustic features
//! enter twice: added to the latent input through a linear projector, and
//! added to the frame-wise sync conditioning through a two-layer modulator.
//! Both pathways start at zero so a fresh model ignores the features.

mod checkpoint;
pub mod layers;
mod params;
mod train;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use params::{Group, Layout, ParamSet, SlotSpec};
pub use train::{augmented_batch, build_training_set, train, StepReport, TrainItem, TrainOutcome, TrainSchedule, TrainingSet};

use ndarray::{s, Array1, Array2, Axis};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::condition::ConditionBundle;
use crate::error::{Error, Result};
use crate::features::{level_offset, n_feature_channels, AcousticFeatures};
use crate::flow::{FlowExample, PathDraw, VelocityField};
use crate::latent::{LatentClip, LatentStats, N_MELS};
use crate::rng;
use crate::signal::{regulate_length, N_CLASSES};
use layers::*;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_channels: usize,
    pub width: usize,
    pub cond_dim: usize,
    pub n_blocks: usize,
    pub n_classes: usize,
    /// Deepest loudness level the feature input carries.
    pub l_max: usize,
    pub conv_kernel: usize,
    /// Route acoustic features into the frame-wise sync conditioning.
    pub sync_modulation: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_channels: N_MELS,
            width: 32,
            cond_dim: 32,
            n_blocks: 2,
            n_classes: N_CLASSES,
            l_max: crate::features::L_MAX,
            conv_kernel: 5,
            sync_modulation: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.latent_channels == 0 || self.width == 0 || self.n_classes == 0 {
            return bad("latent_channels, width and n_classes must be >= 1");
        }
        if self.cond_dim < 2 || self.cond_dim % 2 != 0 {
            return bad("cond_dim must be even and >= 2");
        }
        if self.conv_kernel % 2 == 0 {
            return bad("conv_kernel must be odd");
        }
        if self.l_max > 8 {
            return bad("l_max must be <= 8");
        }
        Ok(())
    }

    pub fn feature_channels(&self) -> usize {
        n_feature_channels(self.l_max)
    }

    pub fn value_channels(&self) -> usize {
        (1 << (self.l_max + 1)) - 1
    }

    pub fn modulator_hidden(&self) -> usize {
        4 * self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BlockIds {
    ada_w: usize,
    ada_b: usize,
    mlp_w1: usize,
    mlp_b1: usize,
    mlp_w2: usize,
    mlp_b2: usize,
    conv_w: usize,
    conv_b: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Ids {
    latent_mean: usize,
    latent_std: usize,
    feature_mean: usize,
    feature_std: usize,
    time_w1: usize,
    time_b1: usize,
    time_w2: usize,
    time_b2: usize,
    prompt: usize,
    control_w: usize,
    sync_w: usize,
    add_w: usize,
    add_b: usize,
    /// Present when sync modulation is enabled.
    modulator: Option<[usize; 4]>,
    in_w: usize,
    in_b: usize,
    blocks: Vec<BlockIds>,
    out_w: usize,
    out_b: usize,
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Ids) {
    use Group::*;
    let (d, h, e, k) = (cfg.latent_channels, cfg.width, cfg.cond_dim, cfg.n_classes);
    let ca = cfg.feature_channels();
    let mut l = Layout::default();
    let latent_mean = l.push("latent.mean", (1, d), Buffer);
    let latent_std = l.push("latent.std", (1, d), Buffer);
    let feature_mean = l.push("features.mean", (1, cfg.value_channels()), Buffer);
    let feature_std = l.push("features.std", (1, cfg.value_channels()), Buffer);
    let time_w1 = l.push("time.w1", (e, e), Trunk);
    let time_b1 = l.push("time.b1", (1, e), Trunk);
    let time_w2 = l.push("time.w2", (e, e), Trunk);
    let time_b2 = l.push("time.b2", (1, e), Trunk);
    let prompt = l.push("prompt.table", (k + 1, e), Trunk);
    let control_w = l.push("control.w", (k, e), Trunk);
    let sync_w = l.push("sync.w", (k, e), Trunk);
    let add_w = l.push("acoustic.add.w", (ca, d), Modulation);
    let add_b = l.push("acoustic.add.b", (1, d), Modulation);
    let modulator = cfg.sync_modulation.then(|| {
        let hid = cfg.modulator_hidden();
        [
            l.push("acoustic.sync.w1", (ca, hid), Modulation),
            l.push("acoustic.sync.b1", (1, hid), Modulation),
            l.push("acoustic.sync.w2", (hid, e), Modulation),
            l.push("acoustic.sync.b2", (1, e), Modulation),
        ]
    });
    let in_w = l.push("in.w", (d, h), Trunk);
    let in_b = l.push("in.b", (1, h), Trunk);
    let blocks = (0..cfg.n_blocks)
        .map(|i| BlockIds {
            ada_w: l.push(format!("block{i}.ada.w"), (e, 2 * h), Trunk),
            ada_b: l.push(format!("block{i}.ada.b"), (1, 2 * h), Trunk),
            mlp_w1: l.push(format!("block{i}.mlp.w1"), (h, 2 * h), Trunk),
            mlp_b1: l.push(format!("block{i}.mlp.b1"), (1, 2 * h), Trunk),
            mlp_w2: l.push(format!("block{i}.mlp.w2"), (2 * h, h), Trunk),
            mlp_b2: l.push(format!("block{i}.mlp.b2"), (1, h), Trunk),
            conv_w: l.push(format!("block{i}.conv.w"), (h, cfg.conv_kernel), Trunk),
            conv_b: l.push(format!("block{i}.conv.b"), (1, h), Trunk),
        })
        .collect();
    let out_w = l.push("out.w", (h, d), Trunk);
    let out_b = l.push("out.b", (1, d), Trunk);
    let ids = Ids {
        latent_mean,
        latent_std,
        feature_mean,
        feature_std,
        time_w1,
        time_b1,
        time_w2,
        time_b2,
        prompt,
        control_w,
        sync_w,
        add_w,
        add_b,
        modulator,
        in_w,
        in_b,
        blocks,
        out_w,
        out_b,
    };
    (l, ids)
}

/// Stable identifier of a configuration's parameter layout.
pub fn architecture_hash(cfg: &ModelConfig) -> [u8; 32] {
    let (layout, _) = build_layout(cfg);
    let canon = serde_json::to_vec(&(cfg, &layout)).expect("config serializes");
    Sha256::digest(&canon).into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityModel {
    pub config: ModelConfig,
    layout: Layout,
    ids: Ids,
    pub params: ParamSet,
}

// Cached activations of one forward pass.
struct BlockCache {
    norm: Array2<f64>,
    inv_std: Array1<f64>,
    scale: Array2<f64>,
    m: Array2<f64>,
    z: Array2<f64>,
    y: Array2<f64>,
    u: Array2<f64>,
}

pub struct Cache {
    acoustic: Array2<f64>,
    x_in: Array2<f64>,
    sinus: Array2<f64>,
    time_z: Array2<f64>,
    time_act: Array2<f64>,
    prompt_row: usize,
    control_mean: Array2<f64>,
    sync: Array2<f64>,
    mod_z: Option<Array2<f64>>,
    mod_act: Option<Array2<f64>>,
    cond: Array2<f64>,
    cond_act: Array2<f64>,
    blocks: Vec<BlockCache>,
    final_norm: Array2<f64>,
    final_inv_std: Array1<f64>,
}

fn sinusoid(t: f64, dim: usize) -> Array2<f64> {
    let half = dim / 2;
    let mut out = Array2::zeros((1, dim));
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let arg = 1000.0 * t * freq;
        out[[0, i]] = arg.sin();
        out[[0, half + i]] = arg.cos();
    }
    out
}

impl VelocityModel {
    /// Fresh model: random trunk, zero acoustic pathways, zero output layer,
    /// zero per-block modulation.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut m = Self::randomized(config, seed)?;
        let ids = m.ids.clone();
        let mut zero = vec![ids.add_w, ids.add_b, ids.out_w, ids.out_b];
        if let Some([_, _, w2, b2]) = ids.modulator {
            zero.extend([w2, b2]);
        }
        for b in &ids.blocks {
            zero.extend([b.ada_w, b.ada_b]);
        }
        for id in zero {
            m.params.tensors[id].fill(0.0);
        }
        Ok(m)
    }

    /// Every trainable tensor drawn at random; the acoustic pathways are
    /// live, so this is for gradient checks rather than training.
    pub fn randomized(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, ids) = build_layout(&config);
        let mut params = layout.zeros();
        let mut r = rng::stream(seed, "model-init");
        for (t, spec) in params.tensors.iter_mut().zip(&layout.slots) {
            if spec.group == Group::Buffer {
                continue;
            }
            let std = if spec.shape.0 == 1 {
                0.1
            } else {
                1.0 / (spec.shape.0 as f64).sqrt()
            };
            let dist = Normal::new(0.0, std).expect("positive std");
            t.mapv_inplace(|_| dist.sample(&mut r));
        }
        params.tensors[ids.latent_std].fill(1.0);
        params.tensors[ids.feature_std].fill(1.0);
        params.round_to_f32();
        Ok(Self {
            config,
            layout,
            ids,
            params,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn n_parameters(&self) -> usize {
        self.layout.n_trainable()
    }

    pub fn latent_stats(&self) -> LatentStats {
        LatentStats {
            mean: self.params.vec(self.ids.latent_mean).to_vec(),
            std: self.params.vec(self.ids.latent_std).to_vec(),
        }
    }

    pub fn set_latent_stats(&mut self, stats: &LatentStats) -> Result<()> {
        let d = self.config.latent_channels;
        if stats.mean.len() != d || stats.std.len() != d {
            return Err(Error::invalid("latent statistics do not match latent channels"));
        }
        self.set_buffer(self.ids.latent_mean, &stats.mean);
        self.set_buffer(self.ids.latent_std, &stats.std);
        Ok(())
    }

    /// Per value-channel centering and scaling applied to loudness rows.
    pub fn set_feature_stats(&mut self, mean: &[f64], std: &[f64]) -> Result<()> {
        let n = self.config.value_channels();
        if mean.len() != n || std.len() != n || std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("feature statistics do not match value channels"));
        }
        self.set_buffer(self.ids.feature_mean, mean);
        self.set_buffer(self.ids.feature_std, std);
        Ok(())
    }

    fn set_buffer(&mut self, id: usize, v: &[f64]) {
        let t = &mut self.params.tensors[id];
        for (dst, &src) in t.iter_mut().zip(v) {
            *dst = src as f32 as f64;
        }
    }

    /// Flattened values of the acoustic pathways.
    pub fn modulation_params(&self) -> Vec<f64> {
        self.params
            .tensors
            .iter()
            .zip(&self.layout.slots)
            .filter(|(_, s)| s.group == Group::Modulation)
            .flat_map(|(t, _)| t.iter().copied())
            .collect()
    }

    pub fn trunk_params(&self) -> Vec<f64> {
        self.params
            .tensors
            .iter()
            .zip(&self.layout.slots)
            .filter(|(_, s)| s.group == Group::Trunk)
            .flat_map(|(t, _)| t.iter().copied())
            .collect()
    }

    /// Features re-timed to the latent rate, frame-major, loudness rows
    /// centered and scaled. Masked entries stay exactly zero.
    fn prepare_features(&self, a: &AcousticFeatures, frames: usize) -> Array2<f64> {
        let mut x = regulate_length(a.channels.view(), Axis(1), frames).reversed_axes();
        let mean = self.params.vec(self.ids.feature_mean);
        let std = self.params.vec(self.ids.feature_std);
        let mut v = 0;
        for l in 0..=self.config.l_max {
            let n = 1 << l;
            let off = level_offset(l);
            for i in 0..n {
                let (val, ind) = (off + i, off + n + i);
                let (mu, sd) = (mean[v], std[v]);
                for mut row in x.outer_iter_mut() {
                    row[val] = (row[val] - mu * row[ind]) / sd;
                }
                v += 1;
            }
        }
        x
    }

    fn check_inputs(&self, x: &LatentClip, c: &ConditionBundle, a: &AcousticFeatures) -> Result<()> {
        let cfg = &self.config;
        let (d, frames) = x.dim();
        if d != cfg.latent_channels {
            return Err(Error::invalid(format!("latent has {d} channels, model expects {}", cfg.latent_channels)));
        }
        if c.sync.n_frames() != frames {
            return Err(Error::invalid(format!(
                "sync track has {} frames, latent has {frames}",
                c.sync.n_frames()
            )));
        }
        if c.sync.frames.ncols() != cfg.n_classes || c.control.frames.ncols() != cfg.n_classes {
            return Err(Error::invalid("control track class count does not match the model"));
        }
        if a.channels.nrows() != cfg.feature_channels() || a.n_frames() < 2 {
            return Err(Error::invalid(format!(
                "features are {:?}, model expects {} channels and >= 2 frames",
                a.channels.dim(),
                cfg.feature_channels()
            )));
        }
        if let Some(k) = c.prompt.0 {
            if k >= cfg.n_classes {
                return Err(Error::invalid(format!("prompt class {k} out of range")));
            }
        }
        Ok(())
    }

    pub fn forward_cached(
        &self,
        x: &LatentClip,
        t: f64,
        c: &ConditionBundle,
        a: &AcousticFeatures,
    ) -> Result<(LatentClip, Cache)> {
        self.check_inputs(x, c, a)?;
        let p = &self.params;
        let ids = &self.ids;
        let frames = x.dim().1;

        let acoustic = self.prepare_features(a, frames);
        let x_in = x.values.t().to_owned() + &linear(&acoustic, p.mat(ids.add_w), Some(p.vec(ids.add_b)));
        let mut h = linear(&x_in, p.mat(ids.in_w), Some(p.vec(ids.in_b)));

        let sinus = sinusoid(t, self.config.cond_dim);
        let time_z = linear(&sinus, p.mat(ids.time_w1), Some(p.vec(ids.time_b1)));
        let time_act = silu(&time_z);
        let temb = linear(&time_act, p.mat(ids.time_w2), Some(p.vec(ids.time_b2)));
        let prompt_row = c.prompt.0.unwrap_or(self.config.n_classes);
        let control_mean = c.control.frames.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(self.config.n_classes)).insert_axis(Axis(0));
        let global = temb + &p.mat(ids.prompt).row(prompt_row) + &control_mean.dot(&p.mat(ids.control_w));

        let sync = c.sync.frames.clone();
        let mut cond = sync.dot(&p.mat(ids.sync_w)) + &global;
        let (mod_z, mod_act) = match ids.modulator {
            Some([w1, b1, w2, b2]) => {
                let z = linear(&acoustic, p.mat(w1), Some(p.vec(b1)));
                let act = silu(&z);
                cond += &linear(&act, p.mat(w2), Some(p.vec(b2)));
                (Some(z), Some(act))
            }
            None => (None, None),
        };
        let cond_act = silu(&cond);

        let width = self.config.width;
        let mut blocks = Vec::with_capacity(ids.blocks.len());
        for b in &ids.blocks {
            let modv = linear(&cond_act, p.mat(b.ada_w), Some(p.vec(b.ada_b)));
            let scale = modv.slice(s![.., ..width]).to_owned();
            let shift = modv.slice(s![.., width..]);
            let (norm, inv_std) = layer_norm(&h);
            let m = &norm * &scale.mapv(|v| 1.0 + v) + &shift;
            let z = linear(&m, p.mat(b.mlp_w1), Some(p.vec(b.mlp_b1)));
            let y = silu(&z);
            let u = linear(&y, p.mat(b.mlp_w2), Some(p.vec(b.mlp_b2)));
            let v = depthwise_conv(&u, p.mat(b.conv_w), p.vec(b.conv_b));
            h = &h + &u + &v;
            blocks.push(BlockCache {
                norm,
                inv_std,
                scale,
                m,
                z,
                y,
                u,
            });
        }
        let (final_norm, final_inv_std) = layer_norm(&h);
        let out = linear(&final_norm, p.mat(ids.out_w), Some(p.vec(ids.out_b)));
        let cache = Cache {
            acoustic,
            x_in,
            sinus,
            time_z,
            time_act,
            prompt_row,
            control_mean,
            sync,
            mod_z,
            mod_act,
            cond,
            cond_act,
            blocks,
            final_norm,
            final_inv_std,
        };
        let values = out.reversed_axes().as_standard_layout().into_owned();
        Ok((LatentClip { values, frame_rate: x.frame_rate }, cache))
    }

    pub fn forward(&self, x: &LatentClip, t: f64, c: &ConditionBundle, a: &AcousticFeatures) -> Result<LatentClip> {
        self.forward_cached(x, t, c, a).map(|(y, _)| y)
    }

    /// Parameter gradient of `sum(output * d_out)` where `d_out` is
    /// `channels x frames`.
    pub fn backward(&self, cache: &Cache, d_out: &Array2<f64>) -> ParamSet {
        let p = &self.params;
        let ids = &self.ids;
        let mut g = self.layout.zeros();
        let mut put = |id: usize, v: Array2<f64>| g.tensors[id] += &v;
        let row = |v: Array1<f64>| v.insert_axis(Axis(0));

        let dout = d_out.t().to_owned();
        let lg = linear_backward(&cache.final_norm, p.mat(ids.out_w), &dout);
        put(ids.out_w, lg.dw);
        put(ids.out_b, row(lg.db));
        let mut dh = layer_norm_backward(&cache.final_norm, &cache.final_inv_std, &lg.dx);

        let width = self.config.width;
        let mut dcond_act = Array2::zeros(cache.cond_act.dim());
        for (b, bc) in ids.blocks.iter().zip(&cache.blocks).rev() {
            let cg = depthwise_conv_backward(&bc.u, p.mat(b.conv_w), &dh);
            put(b.conv_w, cg.dw);
            put(b.conv_b, row(cg.db));
            let du = &dh + &cg.du;
            let l2 = linear_backward(&bc.y, p.mat(b.mlp_w2), &du);
            put(b.mlp_w2, l2.dw);
            put(b.mlp_b2, row(l2.db));
            let dz = silu_backward(&bc.z, &l2.dx);
            let l1 = linear_backward(&bc.m, p.mat(b.mlp_w1), &dz);
            put(b.mlp_w1, l1.dw);
            put(b.mlp_b1, row(l1.db));
            let dm = l1.dx;
            let dnorm = &dm * &bc.scale.mapv(|v| 1.0 + v);
            let mut dmod = Array2::zeros((dm.nrows(), 2 * width));
            dmod.slice_mut(s![.., ..width]).assign(&(&dm * &bc.norm));
            dmod.slice_mut(s![.., width..]).assign(&dm);
            let la = linear_backward(&cache.cond_act, p.mat(b.ada_w), &dmod);
            put(b.ada_w, la.dw);
            put(b.ada_b, row(la.db));
            dcond_act += &la.dx;
            dh = dh + layer_norm_backward(&bc.norm, &bc.inv_std, &dnorm);
        }

        let dcond = silu_backward(&cache.cond, &dcond_act);
        if let (Some([w1, b1, w2, b2]), Some(z), Some(act)) = (ids.modulator, &cache.mod_z, &cache.mod_act) {
            let l2 = linear_backward(act, p.mat(w2), &dcond);
            put(w2, l2.dw);
            put(b2, row(l2.db));
            let dz = silu_backward(z, &l2.dx);
            let l1 = linear_backward(&cache.acoustic, p.mat(w1), &dz);
            put(w1, l1.dw);
            put(b1, row(l1.db));
        }
        put(ids.sync_w, cache.sync.t().dot(&dcond));
        let dglobal = dcond.sum_axis(Axis(0)).insert_axis(Axis(0));
        put(ids.control_w, cache.control_mean.t().dot(&dglobal));
        let mut dprompt = Array2::zeros((self.config.n_classes + 1, self.config.cond_dim));
        dprompt.row_mut(cache.prompt_row).assign(&dglobal.row(0));
        put(ids.prompt, dprompt);
        let lt2 = linear_backward(&cache.time_act, p.mat(ids.time_w2), &dglobal);
        put(ids.time_w2, lt2.dw);
        put(ids.time_b2, row(lt2.db));
        let dtz = silu_backward(&cache.time_z, &lt2.dx);
        let lt1 = linear_backward(&cache.sinus, p.mat(ids.time_w1), &dtz);
        put(ids.time_w1, lt1.dw);
        put(ids.time_b1, row(lt1.db));

        let li = linear_backward(&cache.x_in, p.mat(ids.in_w), &dh);
        put(ids.in_w, li.dw);
        put(ids.in_b, row(li.db));
        let la = linear_backward(&cache.acoustic, p.mat(ids.add_w), &li.dx);
        put(ids.add_w, la.dw);
        put(ids.add_b, row(la.db));
        g
    }

    /// Sum of squared velocity errors for one example, the number of
    /// elements, and the gradient of that sum.
    pub fn example_gradient(&self, ex: &FlowExample, draw: &PathDraw) -> Result<(f64, usize, ParamSet)> {
        let (xt, target) = draw.point_and_target(&ex.x1)?;
        let (pred, cache) = self.forward_cached(&xt, draw.t, &ex.c, &ex.a)?;
        let diff = &pred.values - &target.values;
        let sq = diff.iter().map(|v| v * v).sum::<f64>();
        let grad = self.backward(&cache, &(diff * 2.0));
        Ok((sq, target.values.len(), grad))
    }

    /// Mean flow-matching loss over the batch and its gradient. Examples are
    /// processed in parallel and reduced in batch order.
    pub fn loss_and_gradient(&self, batch: &[FlowExample], draws: &[PathDraw]) -> Result<(f64, ParamSet)> {
        if batch.is_empty() || batch.len() != draws.len() {
            return Err(Error::invalid("batch and path draws must be non-empty and aligned"));
        }
        let parts: Vec<_> = batch
            .par_iter()
            .zip(draws.par_iter())
            .map(|(ex, d)| self.example_gradient(ex, d))
            .collect::<Result<_>>()?;
        let mut total = 0.0;
        let mut count = 0;
        let mut grad = self.layout.zeros();
        for (sq, n, g) in &parts {
            total += sq;
            count += n;
            grad.add_assign(g);
        }
        grad.scale(1.0 / count as f64);
        Ok((total / count as f64, grad))
    }
}

impl VelocityField for VelocityModel {
    fn velocity(&self, x: &LatentClip, t: f64, c: &ConditionBundle, a: &AcousticFeatures) -> Result<LatentClip> {
        self.forward(x, t, c, a)
    }

    fn latent_channels(&self) -> usize {
        self.config.latent_channels
    }
}

#[cfg(test)]
mod tests;
