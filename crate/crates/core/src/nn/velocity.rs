//! The velocity network: a three-level convolutional encoder–decoder with a
//! sinusoidal time embedding, plus a condition adapter and an injection branch
//! that feeds the decoder's skip features through zero-initialised 1x1
//! convolutions.
//!
//! Layout for widths `(c1, c2, c3)`:
//!
//! ```text
//! z_t ─ conv_in ─ enc1 ─┬─ pool ─ enc2 ─┬─ pool ─ mid ─┐
//!                       │ (+ j1)         │ (+ j2)       │ (+ j3)
//!                       └──── dec1 ◄─ up ┴──── dec2 ◄─ up
//!                              └─ conv_out ─ v
//!
//! guidance, z_t ─ concat ─ (+ γ·MLP) ─ entry(·, t) ─┐
//! z_t ─ ctrl.conv_in ───────────────────────────────+─ ctrl.enc1 ─ ctrl.enc2 ─ ctrl.mid
//!                                                      │ j1          │ j2        │ j3
//! ```
//!
//! The `ctrl.*` encoder starts as an exact copy of the base encoder. `entry`,
//! its time projection, and `j1..j3` start at zero, so the injection branch
//! contributes nothing until training moves them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::autograd::{Tape, Var};
use crate::nn::layers::{Conv2d, GroupNorm, Init, Linear};
use crate::nn::params::{ParamId, ParamStore};
use crate::par::{self, Exec};
use crate::tensor::Tensor;

/// Multiplier applied to `t` before the sinusoidal frequencies.
pub const TIME_SCALE: f32 = 1000.0;

/// Initial value of the adapter scale γ.
pub const GAMMA_INIT: f32 = 1e-4;

/// Sinusoidal embedding `[sin(a ω_1), cos(a ω_1), ...]` with `a = 1000 t` and
/// `ω_j = 10000^(-2(j-1)/dim)`.
pub fn time_embed(t: f32, dim: usize) -> Result<Tensor> {
    if dim < 2 || dim % 2 != 0 {
        return Err(Error::domain("time_embed", format!("dim must be even and >= 2, got {dim}")));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::domain("time_embed", format!("t = {t} outside [0, 1]")));
    }
    let arg = t as f64 * TIME_SCALE as f64;
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim / 2 {
        let omega = 10000f64.powf(-2.0 * j as f64 / dim as f64);
        out.push((arg * omega).sin() as f32);
        out.push((arg * omega).cos() as f32);
    }
    Ok(Tensor::from_vec(out))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Channels of `z_t` and of the guidance image.
    pub image_channels: usize,
    /// Feature widths of the three levels.
    pub widths: [usize; 3],
    pub groups: usize,
    /// Length of the sinusoidal embedding.
    pub time_freq_dim: usize,
    /// Width of the time MLP output shared by all blocks.
    pub time_embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_channels: 3,
            widths: [32, 64, 128],
            groups: 8,
            time_freq_dim: 64,
            time_embed_dim: 128,
        }
    }
}

impl ModelConfig {
    /// Reduced widths that train in minutes on a single core.
    pub fn toy() -> Self {
        Self {
            image_channels: 3,
            widths: [16, 32, 64],
            groups: 8,
            time_freq_dim: 32,
            time_embed_dim: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_channels == 0 {
            return Err(Error::domain("ModelConfig", "image_channels must be positive"));
        }
        for &w in &self.widths {
            if w == 0 || w % self.groups.max(1) != 0 {
                return Err(Error::domain(
                    "ModelConfig",
                    format!("width {w} is not a positive multiple of {} groups", self.groups),
                ));
            }
        }
        if self.time_freq_dim < 2 || self.time_freq_dim % 2 != 0 || self.time_embed_dim == 0 {
            return Err(Error::domain("ModelConfig", "invalid time embedding sizes"));
        }
        Ok(())
    }
}

/// conv 3x3 → group norm → + projected time embedding → SiLU.
#[derive(Clone, Debug)]
struct Block {
    conv: Conv2d,
    norm: GroupNorm,
    time: Linear,
}

impl Block {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Self {
        Self {
            conv: Conv2d::new(store, &format!("{name}.conv"), cin, cout, 3, Init::Kaiming, rng),
            norm: GroupNorm::new(store, &format!("{name}.norm"), cout, cfg.groups),
            time: Linear::new(store, &format!("{name}.time"), cfg.time_embed_dim, cout, Init::Kaiming, rng),
        }
    }

    fn forward(&self, tape: &mut Tape<'_>, x: Var, temb: Var) -> Result<Var> {
        let h = self.conv.forward(tape, x)?;
        let h = self.norm.forward(tape, h)?;
        let tb = self.time.forward(tape, temb)?;
        let h = tape.channel_bias(h, tb)?;
        Ok(tape.silu(h))
    }
}

/// Two blocks with a residual connection, projected by a 1x1 convolution
/// when the width changes.
#[derive(Clone, Debug)]
struct Level {
    blocks: [Block; 2],
    skip: Option<Conv2d>,
}

impl Level {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Self {
        Self {
            blocks: [
                Block::new(store, &format!("{name}.0"), cin, cout, cfg, rng),
                Block::new(store, &format!("{name}.1"), cout, cout, cfg, rng),
            ],
            skip: (cin != cout).then(|| Conv2d::new(store, &format!("{name}.skip"), cin, cout, 1, Init::Kaiming, rng)),
        }
    }

    fn forward(&self, tape: &mut Tape<'_>, x: Var, temb: Var) -> Result<Var> {
        let h = self.blocks[0].forward(tape, x, temb)?;
        let h = self.blocks[1].forward(tape, h, temb)?;
        let r = match &self.skip {
            Some(p) => p.forward(tape, x)?,
            None => x,
        };
        tape.add(r, h)
    }
}

/// Input convolution, two encoder levels and the middle level.
#[derive(Clone, Debug)]
struct Encoder {
    conv_in: Conv2d,
    enc1: Level,
    enc2: Level,
    mid: Level,
}

impl Encoder {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, rng: &mut R) -> Self {
        let [c1, c2, c3] = cfg.widths;
        Self {
            conv_in: Conv2d::new(store, &format!("{prefix}.conv_in"), cfg.image_channels, c1, 3, Init::Kaiming, rng),
            enc1: Level::new(store, &format!("{prefix}.enc1"), c1, c1, cfg, rng),
            enc2: Level::new(store, &format!("{prefix}.enc2"), c1, c2, cfg, rng),
            mid: Level::new(store, &format!("{prefix}.mid"), c2, c3, cfg, rng),
        }
    }

    /// Returns the features at the two skip points and the middle output.
    fn forward(&self, tape: &mut Tape<'_>, x: Var, extra: Option<Var>, temb: Var) -> Result<[Var; 3]> {
        let mut h = self.conv_in.forward(tape, x)?;
        if let Some(e) = extra {
            h = tape.add(h, e)?;
        }
        let s1 = self.enc1.forward(tape, h, temb)?;
        let h = tape.avg_pool2(s1)?;
        let s2 = self.enc2.forward(tape, h, temb)?;
        let h = tape.avg_pool2(s2)?;
        let m = self.mid.forward(tape, h, temb)?;
        Ok([s1, s2, m])
    }
}

/// How the condition's entry projection is applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EntryMode {
    /// The learned zero-initialised convolution with time bias.
    #[default]
    Learned,
    /// Test hook: skip the entry projection and return the adapted condition.
    Identity,
}

#[derive(Clone, Debug)]
pub struct VelocityNet {
    cfg: ModelConfig,
    time_fc1: Linear,
    time_fc2: Linear,
    base: Encoder,
    dec2: Level,
    dec1: Level,
    conv_out: Conv2d,
    adapter_fc1: Conv2d,
    adapter_fc2: Conv2d,
    gamma: ParamId,
    entry: Conv2d,
    entry_time: Linear,
    ctrl: Encoder,
    junctions: [Conv2d; 3],
}

impl VelocityNet {
    /// Registers all parameters in `store` and returns the network.
    pub fn new<R: Rng + ?Sized>(cfg: ModelConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let [c1, c2, c3] = cfg.widths;
        let cond_ch = 2 * cfg.image_channels;
        let time_fc1 = Linear::new(store, "time.fc1", cfg.time_freq_dim, cfg.time_embed_dim, Init::Kaiming, rng);
        let time_fc2 = Linear::new(store, "time.fc2", cfg.time_embed_dim, cfg.time_embed_dim, Init::Kaiming, rng);
        let base = Encoder::new(store, "base", &cfg, rng);
        let dec2 = Level::new(store, "base.dec2", c3 + c2, c2, &cfg, rng);
        let dec1 = Level::new(store, "base.dec1", c2 + c1, c1, &cfg, rng);
        let conv_out = Conv2d::new(store, "base.conv_out", c1, cfg.image_channels, 3, Init::Zero, rng);

        let adapter_fc1 = Conv2d::new(store, "cond.adapter.fc1", cond_ch, 2 * cond_ch, 1, Init::Kaiming, rng);
        let adapter_fc2 = Conv2d::new(store, "cond.adapter.fc2", 2 * cond_ch, cond_ch, 1, Init::Kaiming, rng);
        let gamma = store.add("cond.gamma", Tensor::scalar(GAMMA_INIT));
        let entry = Conv2d::new(store, "cond.entry", cond_ch, c1, 3, Init::Zero, rng);
        let entry_time = Linear::new(store, "cond.entry.time", cfg.time_embed_dim, c1, Init::Zero, rng);

        let ctrl = Encoder::new(store, "ctrl", &cfg, rng);
        let junctions = [
            Conv2d::new(store, "ctrl.junction1", c1, c1, 1, Init::Zero, rng),
            Conv2d::new(store, "ctrl.junction2", c2, c2, 1, Init::Zero, rng),
            Conv2d::new(store, "ctrl.junction3", c3, c3, 1, Init::Zero, rng),
        ];

        // The injection branch starts as a copy of the base encoder.
        let copies: Vec<(String, Tensor)> = store
            .entries()
            .iter()
            .filter_map(|e| {
                let rest = e.name.strip_prefix("base.")?;
                let is_encoder = ["conv_in.", "enc1.", "enc2.", "mid."].iter().any(|p| rest.starts_with(p));
                is_encoder.then(|| (format!("ctrl.{rest}"), e.tensor.clone()))
            })
            .collect();
        for (name, value) in copies {
            let id = store.id(&name).expect("branch mirrors base encoder");
            *store.get_mut(id) = value;
        }

        Ok(Self {
            cfg,
            time_fc1,
            time_fc2,
            base,
            dec2,
            dec1,
            conv_out,
            adapter_fc1,
            adapter_fc2,
            gamma,
            entry,
            entry_time,
            ctrl,
            junctions,
        })
    }

    /// Builds a network and a freshly initialised parameter store.
    pub fn init<R: Rng + ?Sized>(cfg: ModelConfig, rng: &mut R) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let net = Self::new(cfg, &mut store, rng)?;
        Ok((net, store))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn gamma_id(&self) -> ParamId {
        self.gamma
    }

    /// Ids of every zero-initialised projection: the condition entry, its
    /// time projection and the three junctions.
    pub fn zero_conv_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![
            self.entry.weight,
            self.entry.bias,
            self.entry_time.weight,
            self.entry_time.bias,
        ];
        for j in &self.junctions {
            ids.push(j.weight);
            ids.push(j.bias);
        }
        ids
    }

    /// Ids of the base network's output convolution.
    pub fn output_conv_ids(&self) -> [ParamId; 2] {
        [self.conv_out.weight, self.conv_out.bias]
    }

    pub fn check_resolution(&self, shape: &[usize]) -> Result<()> {
        let (c, h, w) = match *shape {
            [c, h, w] => (c, h, w),
            _ => return Err(Error::shape("VelocityNet", format!("expected C x H x W, got {shape:?}"))),
        };
        if c != self.cfg.image_channels {
            return Err(Error::shape(
                "VelocityNet",
                format!("expected {} channels, got {c}", self.cfg.image_channels),
            ));
        }
        if h < 4 || w < 4 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::domain(
                "VelocityNet",
                format!("resolution {h}x{w} must be a multiple of 4 on each side"),
            ));
        }
        Ok(())
    }

    fn time_features(&self, tape: &mut Tape<'_>, t: f32) -> Result<Var> {
        let emb = tape.input(time_embed(t, self.cfg.time_freq_dim)?);
        let h = self.time_fc1.forward(tape, emb)?;
        let h = tape.silu(h);
        self.time_fc2.forward(tape, h)
    }

    fn record_condition(
        &self,
        tape: &mut Tape<'_>,
        guidance: Var,
        zt: Var,
        temb: Var,
        mode: EntryMode,
    ) -> Result<Var> {
        let c = tape.concat(guidance, zt)?;
        let a = self.adapter_fc1.forward(tape, c)?;
        let a = tape.silu(a);
        let a = self.adapter_fc2.forward(tape, a)?;
        let gamma = tape.param(self.gamma);
        let a = tape.scale_by(a, gamma)?;
        let c = tape.add(c, a)?;
        match mode {
            EntryMode::Identity => Ok(c),
            EntryMode::Learned => {
                let h = self.entry.forward(tape, c)?;
                let tb = self.entry_time.forward(tape, temb)?;
                tape.channel_bias(h, tb)
            }
        }
    }

    /// Records the velocity prediction for one sample on `tape`.
    ///
    /// `guidance` is the (coarse-restored) image the condition is built from.
    /// Without it the injection branch is skipped entirely.
    pub fn record(&self, tape: &mut Tape<'_>, zt: Var, t: f32, guidance: Option<Var>) -> Result<Var> {
        self.check_resolution(tape.value(zt).shape())?;
        if let Some(g) = guidance {
            let (gs, zs) = (tape.value(g).shape(), tape.value(zt).shape());
            if gs != zs {
                return Err(Error::shape("VelocityNet", format!("guidance {gs:?} vs z_t {zs:?}")));
            }
        }
        let temb = self.time_features(tape, t)?;

        let injections = match guidance {
            Some(g) => {
                let cond = self.record_condition(tape, g, zt, temb, EntryMode::Learned)?;
                let feats = self.ctrl.forward(tape, zt, Some(cond), temb)?;
                tape.check_finite(feats[2], "ctrl.mid")?;
                let mut out = [feats[0]; 3];
                for (i, (j, f)) in self.junctions.iter().zip(feats).enumerate() {
                    out[i] = j.forward(tape, f)?;
                }
                Some(out)
            }
            None => None,
        };

        let [mut s1, mut s2, mut m] = self.base.forward(tape, zt, None, temb)?;
        tape.check_finite(m, "base.mid")?;
        if let Some([j1, j2, j3]) = injections {
            s1 = tape.add(s1, j1)?;
            s2 = tape.add(s2, j2)?;
            m = tape.add(m, j3)?;
        }
        let h = tape.upsample2(m)?;
        let h = tape.concat(h, s2)?;
        let h = self.dec2.forward(tape, h, temb)?;
        tape.check_finite(h, "base.dec2")?;
        let h = tape.upsample2(h)?;
        let h = tape.concat(h, s1)?;
        let h = self.dec1.forward(tape, h, temb)?;
        tape.check_finite(h, "base.dec1")?;
        let out = self.conv_out.forward(tape, h)?;
        tape.check_finite(out, "base.conv_out")?;
        Ok(out)
    }

    /// The condition tensor routed into the injection branch for one sample:
    /// `concat(coarse, z_t)`, refined by `+ γ·MLP`, then projected by the
    /// zero-initialised entry convolution with a time bias.
    pub fn build_condition(
        &self,
        params: &ParamStore,
        coarse: &Tensor,
        zt: &Tensor,
        t: f32,
        mode: EntryMode,
    ) -> Result<Tensor> {
        let (_, hc, wc) = coarse.chw()?;
        let (_, hz, wz) = zt.chw()?;
        if (hc, wc) != (hz, wz) {
            return Err(Error::shape("build_condition", format!("coarse {hc}x{wc} vs z_t {hz}x{wz}")));
        }
        let mut tape = Tape::new(params);
        let temb = self.time_features(&mut tape, t)?;
        let g = tape.input(coarse.clone());
        let z = tape.input(zt.clone());
        let c = self.record_condition(&mut tape, g, z, temb, mode)?;
        Ok(tape.value(c).clone())
    }

    /// Velocity prediction for one `C x H x W` sample or a `B x C x H x W`
    /// batch. Batches are evaluated per sample, in parallel when enabled.
    pub fn forward(&self, params: &ParamStore, zt: &Tensor, t: f32, guidance: Option<&Tensor>) -> Result<Tensor> {
        self.forward_with(params, zt, t, guidance, Exec::default())
    }

    pub fn forward_with(
        &self,
        params: &ParamStore,
        zt: &Tensor,
        t: f32,
        guidance: Option<&Tensor>,
        exec: Exec,
    ) -> Result<Tensor> {
        if let Some(g) = guidance {
            zt.check_same_shape(g, "VelocityNet::forward")?;
        }
        match zt.ndim() {
            3 => self.forward_one(params, zt, t, guidance),
            4 => {
                let zs = zt.unstack();
                let gs = guidance.map(|g| g.unstack());
                let outs = par::map_range(exec, zs.len(), |i| {
                    self.forward_one(params, &zs[i], t, gs.as_ref().map(|g| &g[i]))
                });
                let outs = outs.into_iter().collect::<Result<Vec<_>>>()?;
                Tensor::stack(&outs)
            }
            _ => Err(Error::shape("VelocityNet::forward", format!("unsupported shape {:?}", zt.shape()))),
        }
    }

    fn forward_one(&self, params: &ParamStore, zt: &Tensor, t: f32, guidance: Option<&Tensor>) -> Result<Tensor> {
        let mut tape = Tape::new(params);
        let z = tape.input(zt.clone());
        let g = guidance.map(|g| tape.input(g.clone()));
        let out = self.record(&mut tape, z, t, g)?;
        Ok(tape.value(out).clone())
    }

    /// Flow-matching loss and gradients for one sample:
    /// `mean((target - v_θ(z_t, t, guidance))²)`.
    pub fn loss_and_grad(
        &self,
        params: &ParamStore,
        zt: &Tensor,
        t: f32,
        guidance: Option<&Tensor>,
        target: &Tensor,
    ) -> Result<(f64, crate::nn::params::Gradients)> {
        let mut tape = Tape::new(params);
        let z = tape.input(zt.clone());
        let g = guidance.map(|g| tape.input(g.clone()));
        let v = self.record(&mut tape, z, t, g)?;
        let loss = tape.mse_to(v, target)?;
        let value = tape.value(loss).data()[0] as f64;
        let grads = tape.backward(loss)?;
        Ok((value, grads))
    }
}
