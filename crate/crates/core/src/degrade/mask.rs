use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Spatial `{0, 1}` mask, 1 = visible pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width || height == 0 || width == 0 {
            return Err(Error::shape("BinaryMask", format!("{} values for {height}x{width}", values.len())));
        }
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::domain("BinaryMask", "values must be 0 or 1"));
        }
        Ok(Self { height, width, values })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![1.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Fraction of hidden pixels.
    pub fn hidden_fraction(&self) -> f64 {
        self.values.iter().filter(|&&v| v == 0.0).count() as f64 / self.values.len() as f64
    }
}

/// `x ⊙ m`, with the mask broadcast over channels.
pub fn apply_mask(x: &Tensor, m: &BinaryMask) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    if (h, w) != (m.height, m.width) {
        return Err(Error::shape(
            "apply_mask",
            format!("mask {}x{} does not match image {h}x{w}", m.height, m.width),
        ));
    }
    let hw = h * w;
    let mut out = x.data().to_vec();
    for ci in 0..c {
        for (o, &mv) in out[ci * hw..(ci + 1) * hw].iter_mut().zip(&m.values) {
            *o *= mv;
        }
    }
    Ok(Tensor::from_parts(vec![c, h, w], out))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Box,
    Polyline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    /// Vertices as `(y, x)` pixel coordinates.
    pub points: Vec<(f64, f64)>,
    pub width: f64,
}

/// Everything needed to rasterise a mask again.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MaskGeometry {
    Box {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
    Polyline {
        strokes: Vec<Stroke>,
    },
}

impl MaskGeometry {
    /// Draws a hole covering roughly `coverage` of the image (box) or 1 to 4
    /// random strokes (polyline).
    pub fn sample<R: Rng + ?Sized>(kind: MaskKind, coverage: f64, h: usize, w: usize, rng: &mut R) -> Result<Self> {
        if !(0.0..=1.0).contains(&coverage) {
            return Err(Error::domain("mask", format!("coverage {coverage} outside [0, 1]")));
        }
        match kind {
            MaskKind::Box => {
                let area = coverage * (h * w) as f64;
                let aspect: f64 = rng.gen_range(0.5..=2.0);
                let bh = ((area * aspect).sqrt().round() as usize).clamp(1, h);
                let bw = ((area / bh as f64).round() as usize).clamp(1, w);
                let top = rng.gen_range(0..=h - bh);
                let left = rng.gen_range(0..=w - bw);
                Ok(MaskGeometry::Box {
                    top,
                    left,
                    height: bh,
                    width: bw,
                })
            }
            MaskKind::Polyline => {
                let n = rng.gen_range(1..=4);
                let max_width = (h.min(w) as f64 / 6.0).max(1.5);
                let strokes = (0..n)
                    .map(|_| {
                        let vertices = rng.gen_range(2..=5);
                        let points = (0..vertices)
                            .map(|_| (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64)))
                            .collect();
                        Stroke {
                            points,
                            width: rng.gen_range(1.0..=max_width),
                        }
                    })
                    .collect();
                Ok(MaskGeometry::Polyline { strokes })
            }
        }
    }

    pub fn rasterize(&self, h: usize, w: usize) -> BinaryMask {
        let mut m = BinaryMask::ones(h, w);
        match self {
            MaskGeometry::Box {
                top,
                left,
                height,
                width,
            } => {
                for y in *top..(top + height).min(h) {
                    for x in *left..(left + width).min(w) {
                        m.values[y * w + x] = 0.0;
                    }
                }
            }
            MaskGeometry::Polyline { strokes } => {
                for s in strokes {
                    let r = s.width / 2.0;
                    for seg in s.points.windows(2) {
                        for y in 0..h {
                            for x in 0..w {
                                let p = (y as f64 + 0.5, x as f64 + 0.5);
                                if segment_distance(p, seg[0], seg[1]) <= r {
                                    m.values[y * w + x] = 0.0;
                                }
                            }
                        }
                    }
                }
            }
        }
        m
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dy, dx) = (b.0 - a.0, b.1 - a.1);
    let len2 = dy * dy + dx * dx;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dy + (p.1 - a.1) * dx) / len2).clamp(0.0, 1.0)
    };
    ((p.0 - a.0 - t * dy).powi(2) + (p.1 - a.1 - t * dx).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn elementwise_product() {
        let x = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = BinaryMask::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(apply_mask(&x, &m).unwrap().data(), &[1.0, 0.0, 0.0, 4.0]);
        assert_eq!(apply_mask(&x, &BinaryMask::ones(2, 2)).unwrap(), x);
        let zeros = BinaryMask::new(2, 2, vec![0.0; 4]).unwrap();
        assert_eq!(apply_mask(&x, &zeros).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn shape_mismatch_and_bad_values() {
        let x = Tensor::zeros(&[3, 2, 2]);
        assert!(matches!(apply_mask(&x, &BinaryMask::ones(2, 3)), Err(Error::Shape { .. })));
        assert!(BinaryMask::new(1, 2, vec![0.5, 1.0]).is_err());
    }

    #[test]
    fn box_coverage_tracks_request() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let cov = rng.gen_range(0.1..=0.4);
            let g = MaskGeometry::sample(MaskKind::Box, cov, 32, 32, &mut rng).unwrap();
            let got = g.rasterize(32, 32).hidden_fraction();
            assert!((got - cov).abs() < 0.08, "asked {cov}, got {got}");
        }
    }

    #[test]
    fn polyline_hides_something() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = MaskGeometry::sample(MaskKind::Polyline, 0.2, 32, 32, &mut rng).unwrap();
        let m = g.rasterize(32, 32);
        assert!(m.hidden_fraction() > 0.0 && m.hidden_fraction() < 1.0);
        let again: MaskGeometry = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(again.rasterize(32, 32), m);
    }
}
