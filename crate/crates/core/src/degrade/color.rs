use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorKind {
    Jitter,
    Grayscale,
}

/// Sampled colour operator: `out_c = clamp(gain_c·x_c + offset_c)` for jitter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorParams {
    pub kind: ColorKind,
    pub gain: [f32; 3],
    pub offset: [f32; 3],
}

impl ColorParams {
    pub fn sample<R: Rng + ?Sized>(kind: ColorKind, strength: f64, rng: &mut R) -> Result<Self> {
        if !(strength >= 0.0) {
            return Err(Error::domain("color_degrade", format!("strength must be >= 0, got {strength}")));
        }
        let mut p = ColorParams {
            kind,
            gain: [1.0; 3],
            offset: [0.0; 3],
        };
        if kind == ColorKind::Jitter && strength > 0.0 {
            let s = strength as f32;
            for c in 0..3 {
                p.gain[c] = rng.gen_range(1.0 - s..=1.0 + s);
                p.offset[c] = rng.gen_range(-s..=s);
            }
        }
        Ok(p)
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (c, h, w) = x.chw()?;
        if c != 3 {
            return Err(Error::shape("color_degrade", format!("expected 3 channels, got {c}")));
        }
        let hw = h * w;
        let src = x.data();
        let mut out = vec![0.0f32; src.len()];
        match self.kind {
            ColorKind::Jitter => {
                for ci in 0..3 {
                    for i in 0..hw {
                        out[ci * hw + i] = (self.gain[ci] * src[ci * hw + i] + self.offset[ci]).clamp(0.0, 1.0);
                    }
                }
            }
            ColorKind::Grayscale => {
                for i in 0..hw {
                    let (r, g, b) = (src[i], src[hw + i], src[2 * hw + i]);
                    // An already-gray pixel stays exactly put.
                    let y = if r == g && g == b {
                        r
                    } else {
                        (0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 1.0)
                    };
                    out[i] = y;
                    out[hw + i] = y;
                    out[2 * hw + i] = y;
                }
            }
        }
        Ok(Tensor::from_parts(vec![3, h, w], out))
    }
}

/// Colour shift (`jitter`) or luminance-only (`grayscale`) degradation.
pub fn color_degrade<R: Rng + ?Sized>(x: &Tensor, kind: ColorKind, strength: f64, rng: &mut R) -> Result<Tensor> {
    ColorParams::sample(kind, strength, rng)?.apply(x)
}
