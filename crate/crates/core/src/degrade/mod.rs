//! Synthetic degradations: blur, resize, noise and block-DCT compression for
//! restoration, binary masks for inpainting, colour shifts for colour
//! enhancement. [`degrade`] samples parameters from a [`DegradationSpec`] and
//! records them in a [`DegradationMeta`]; [`apply_meta`] replays them exactly.

mod color;
mod compress;
mod kernel;
mod mask;
mod noise;
mod resize;

pub use color::{color_degrade, ColorKind, ColorParams};
pub use compress::{compress, quant_table};
pub use kernel::{apply_blur, gaussian_kernel, BlurKernel, GaussianParams};
pub use mask::{apply_mask, BinaryMask, MaskGeometry, MaskKind, Stroke};
pub use noise::add_noise;
pub use resize::{resize, resize_to, Direction, Resample};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Restoration,
    Inpainting,
    Color,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlurKind {
    GaussianIso,
    GaussianAniso,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlurSpec {
    pub kind: BlurKind,
    pub sigma_range: [f64; 2],
    pub kernel_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DownscaleSpec {
    pub r_range: [f64; 2],
    pub resample: Resample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_range: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionSpec {
    pub quality_range: [u8; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub coverage_range: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorSpec {
    pub kind: ColorKind,
    pub strength_range: [f64; 2],
}

/// Number of pipeline repetitions: fixed, or drawn uniformly from `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OrderSpec {
    Fixed(usize),
    Range([usize; 2]),
}

/// Declarative description of a degradation pipeline. Restoration stages
/// left as `None` are skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationSpec {
    pub schema_version: u32,
    pub task: Task,
    #[serde(default)]
    pub blur: Option<BlurSpec>,
    #[serde(default)]
    pub downscale: Option<DownscaleSpec>,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub compression: Option<CompressionSpec>,
    pub order: OrderSpec,
    #[serde(default)]
    pub mask: Option<MaskSpec>,
    #[serde(default)]
    pub color: Option<ColorSpec>,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            task: Task::Restoration,
            blur: Some(BlurSpec {
                kind: BlurKind::GaussianIso,
                sigma_range: [0.2, 3.0],
                kernel_size: 7,
            }),
            downscale: Some(DownscaleSpec {
                r_range: [1.0, 4.0],
                resample: Resample::Bilinear,
            }),
            noise: Some(NoiseSpec { sigma_range: [0.0, 0.1] }),
            compression: Some(CompressionSpec { quality_range: [30, 95] }),
            order: OrderSpec::Range([1, 2]),
            mask: None,
            color: None,
        }
    }
}

impl DegradationSpec {
    /// Middle of the default ranges, single pass.
    pub fn mid_range() -> Self {
        Self {
            blur: Some(BlurSpec {
                kind: BlurKind::GaussianIso,
                sigma_range: [1.3, 1.9],
                kernel_size: 7,
            }),
            downscale: Some(DownscaleSpec {
                r_range: [2.0, 3.0],
                resample: Resample::Bilinear,
            }),
            noise: Some(NoiseSpec { sigma_range: [0.04, 0.06] }),
            compression: Some(CompressionSpec { quality_range: [55, 70] }),
            order: OrderSpec::Fixed(1),
            ..Self::default()
        }
    }

    pub fn blur_only(sigma_range: [f64; 2]) -> Self {
        Self {
            blur: Some(BlurSpec {
                kind: BlurKind::GaussianIso,
                sigma_range,
                kernel_size: 7,
            }),
            downscale: None,
            noise: None,
            compression: None,
            order: OrderSpec::Fixed(1),
            ..Self::default()
        }
    }

    /// All stages present but at their neutral settings.
    pub fn near_identity() -> Self {
        Self {
            blur: Some(BlurSpec {
                kind: BlurKind::GaussianIso,
                sigma_range: [1e-4, 1e-4],
                kernel_size: 3,
            }),
            downscale: Some(DownscaleSpec {
                r_range: [1.0, 1.0],
                resample: Resample::Bilinear,
            }),
            noise: Some(NoiseSpec { sigma_range: [0.0, 0.0] }),
            compression: Some(CompressionSpec { quality_range: [100, 100] }),
            order: OrderSpec::Fixed(1),
            ..Self::default()
        }
    }

    pub fn inpainting(kind: MaskKind) -> Self {
        Self {
            task: Task::Inpainting,
            mask: Some(MaskSpec {
                kind,
                coverage_range: [0.1, 0.4],
            }),
            ..Self::default()
        }
    }

    pub fn color(kind: ColorKind) -> Self {
        Self {
            task: Task::Color,
            color: Some(ColorSpec {
                kind,
                strength_range: [0.1, 0.3],
            }),
            ..Self::default()
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::domain("DegradationSpec", detail));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} is not {SCHEMA_VERSION}", self.schema_version));
        }
        fn ordered<T: PartialOrd + std::fmt::Debug>(name: &str, r: &[T; 2]) -> Result<()> {
            if r[0] <= r[1] {
                Ok(())
            } else {
                Err(Error::domain("DegradationSpec", format!("{name} {r:?} has lo > hi")))
            }
        }
        if let Some(b) = &self.blur {
            ordered("blur.sigma_range", &b.sigma_range)?;
            if !(b.sigma_range[0] > 0.0) {
                return bad("blur sigma must be positive".into());
            }
            if b.kernel_size % 2 == 0 {
                return bad(format!("kernel_size {} must be odd", b.kernel_size));
            }
        }
        if let Some(d) = &self.downscale {
            ordered("downscale.r_range", &d.r_range)?;
            if !(d.r_range[0] >= 1.0) {
                return bad("r_range must be >= 1".into());
            }
        }
        if let Some(n) = &self.noise {
            ordered("noise.sigma_range", &n.sigma_range)?;
            if !(n.sigma_range[0] >= 0.0) {
                return bad("noise sigma must be >= 0".into());
            }
        }
        if let Some(c) = &self.compression {
            ordered("compression.quality_range", &c.quality_range)?;
            if c.quality_range[0] < 1 || c.quality_range[1] > 100 {
                return bad("quality must lie in 1..=100".into());
            }
        }
        match self.order {
            OrderSpec::Fixed(n) if n < 1 => return bad("order must be >= 1".into()),
            OrderSpec::Range(r) => {
                ordered("order", &r)?;
                if r[0] < 1 {
                    return bad("order must be >= 1".into());
                }
            }
            _ => {}
        }
        if let Some(m) = &self.mask {
            ordered("mask.coverage_range", &m.coverage_range)?;
            if !(m.coverage_range[0] >= 0.0 && m.coverage_range[1] <= 1.0) {
                return bad("mask coverage must lie in [0, 1]".into());
            }
        }
        if let Some(c) = &self.color {
            ordered("color.strength_range", &c.strength_range)?;
            if !(c.strength_range[0] >= 0.0) {
                return bad("color strength must be >= 0".into());
            }
        }
        match self.task {
            Task::Inpainting if self.mask.is_none() => bad("inpainting needs a mask section".into()),
            Task::Color if self.color.is_none() => bad("color task needs a color section".into()),
            _ => Ok(()),
        }
    }
}

/// Parameters drawn for one blur → resize → noise → compress pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageMeta {
    pub blur: Option<GaussianParams>,
    /// Downscale factor actually applied and the filter used.
    pub scale: Option<(f64, Resample)>,
    /// Noise sigma and the seed of the generator that produced it.
    pub noise: Option<(f64, u64)>,
    pub quality: Option<u8>,
}

/// Every sampled parameter of one [`degrade`] call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum DegradationMeta {
    Restoration {
        stages: Vec<StageMeta>,
        /// Filter used to bring the result back to the input size.
        resample_back: Resample,
    },
    Inpainting {
        coverage: f64,
        mask: MaskGeometry,
    },
    Color {
        strength: f64,
        params: ColorParams,
    },
}

fn draw<R: Rng + ?Sized>(r: [f64; 2], rng: &mut R) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..=r[1])
    }
}

/// Largest odd size not above `min(size, limit)`.
fn clip_kernel(size: usize, limit: usize) -> usize {
    let s = size.min(limit).max(1);
    if s % 2 == 0 {
        s - 1
    } else {
        s
    }
}

/// Draws all parameters for `x` without touching pixels.
pub fn sample_meta<R: Rng + ?Sized>(x: &Tensor, spec: &DegradationSpec, rng: &mut R) -> Result<DegradationMeta> {
    spec.validate()?;
    let (_, h, w) = x.chw()?;
    match spec.task {
        Task::Restoration => {
            let order = match spec.order {
                OrderSpec::Fixed(n) => n,
                OrderSpec::Range([lo, hi]) => rng.gen_range(lo..=hi),
            };
            let (mut ch, mut cw) = (h, w);
            let mut stages = Vec::with_capacity(order);
            for _ in 0..order {
                let blur = spec.blur.as_ref().map(|b| {
                    let size = clip_kernel(b.kernel_size, ch.min(cw));
                    match b.kind {
                        BlurKind::GaussianIso => GaussianParams::isotropic(draw(b.sigma_range, rng), size),
                        BlurKind::GaussianAniso => GaussianParams {
                            sigma_x: draw(b.sigma_range, rng),
                            sigma_y: draw(b.sigma_range, rng),
                            angle: rng.gen_range(0.0..std::f64::consts::PI),
                            size,
                        },
                    }
                });
                let scale = spec.downscale.as_ref().map(|d| {
                    // Never shrink below one pixel.
                    let r = draw(d.r_range, rng).min(ch.min(cw) as f64);
                    ch = ((ch as f64 / r).round() as usize).max(1);
                    cw = ((cw as f64 / r).round() as usize).max(1);
                    (r, d.resample)
                });
                let noise = spec.noise.as_ref().map(|n| (draw(n.sigma_range, rng), rng.gen::<u64>()));
                let quality = spec
                    .compression
                    .as_ref()
                    .map(|c| rng.gen_range(c.quality_range[0]..=c.quality_range[1]));
                stages.push(StageMeta {
                    blur,
                    scale,
                    noise,
                    quality,
                });
            }
            let resample_back = spec.downscale.as_ref().map_or(Resample::Bilinear, |d| d.resample);
            Ok(DegradationMeta::Restoration { stages, resample_back })
        }
        Task::Inpainting => {
            let m = spec.mask.as_ref().expect("validated");
            let coverage = draw(m.coverage_range, rng);
            Ok(DegradationMeta::Inpainting {
                coverage,
                mask: MaskGeometry::sample(m.kind, coverage, h, w, rng)?,
            })
        }
        Task::Color => {
            let c = spec.color.as_ref().expect("validated");
            let strength = draw(c.strength_range, rng);
            Ok(DegradationMeta::Color {
                strength,
                params: ColorParams::sample(c.kind, strength, rng)?,
            })
        }
    }
}

/// Applies recorded parameters; no sampling happens here.
pub fn apply_meta(x: &Tensor, meta: &DegradationMeta) -> Result<Tensor> {
    let (_, h, w) = x.chw()?;
    match meta {
        DegradationMeta::Restoration { stages, resample_back } => {
            let mut y = x.clone();
            for s in stages {
                if let Some(p) = &s.blur {
                    let (_, ch, cw) = y.chw()?;
                    let p = GaussianParams {
                        size: clip_kernel(p.size, ch.min(cw)),
                        ..*p
                    };
                    y = apply_blur(&y, &gaussian_kernel(&p)?)?;
                }
                if let Some((r, mode)) = s.scale {
                    let (_, ch, cw) = y.chw()?;
                    let oh = ((ch as f64 / r).round() as usize).max(1);
                    let ow = ((cw as f64 / r).round() as usize).max(1);
                    y = resize_to(&y, oh, ow, mode)?;
                }
                if let Some((sigma, seed)) = s.noise {
                    y = add_noise(&y, sigma, &mut ChaCha8Rng::seed_from_u64(seed))?;
                }
                if let Some(q) = s.quality {
                    y = compress(&y, q)?;
                }
            }
            resize_to(&y, h, w, *resample_back)
        }
        DegradationMeta::Inpainting { mask, .. } => apply_mask(x, &mask.rasterize(h, w)),
        DegradationMeta::Color { params, .. } => params.apply(x),
    }
}

/// Samples parameters from `spec`, applies them, and returns the degraded
/// image with the record needed to replay it.
pub fn degrade<R: Rng + ?Sized>(x: &Tensor, spec: &DegradationSpec, rng: &mut R) -> Result<(Tensor, DegradationMeta)> {
    let meta = sample_meta(x, spec, rng)?;
    let y = apply_meta(x, &meta)?;
    Ok((y, meta))
}
