use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::degrade::{resize_to, Resample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: usize,
    pub name: String,
    pub path: Option<PathBuf>,
    /// Size of the source before fitting to the working resolution.
    pub width: usize,
    pub height: usize,
    pub split: Split,
}

/// An indexed image corpus, held in memory at the working resolution.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: Option<PathBuf>,
    pub resolution: usize,
    pub records: Vec<ImageRecord>,
    images: Vec<Tensor>,
}

impl Dataset {
    /// Wraps in-memory `3 x res x res` images; `names[i]` labels image `i`.
    pub fn from_images(images: Vec<Tensor>, names: Vec<String>, fractions: [f64; 3], seed: u64) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::domain("Dataset", "no images"));
        }
        let (_, h, w) = images[0].chw()?;
        for img in &images {
            img.check_same_shape(&images[0], "Dataset")?;
        }
        let splits = assign_splits(images.len(), fractions, seed)?;
        let records = names
            .into_iter()
            .zip(splits)
            .enumerate()
            .map(|(id, (name, split))| ImageRecord {
                id,
                name,
                path: None,
                width: w,
                height: h,
                split,
            })
            .collect();
        Ok(Self {
            root: None,
            resolution: h,
            records,
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn image(&self, id: usize) -> &Tensor {
        &self.images[id]
    }

    /// Ids in `split`, ascending.
    pub fn ids(&self, split: Split) -> Vec<usize> {
        self.records.iter().filter(|r| r.split == split).map(|r| r.id).collect()
    }

    pub fn split_sizes(&self) -> (usize, usize, usize) {
        (
            self.ids(Split::Train).len(),
            self.ids(Split::Val).len(),
            self.ids(Split::Test).len(),
        )
    }
}

/// Seeded split: `round(f_train·n)` train, `round(f_val·n)` val, the rest test.
fn assign_splits(n: usize, fractions: [f64; 3], seed: u64) -> Result<Vec<Split>> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::domain("ingest", format!("split fractions {fractions:?} must be >= 0 and sum to 1")));
    }
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_train {
            splits[i] = Split::Train;
        } else if rank < n_train + n_val {
            splits[i] = Split::Val;
        }
    }
    Ok(splits)
}

/// Indexes every decodable image under `root` (non-recursive), sorted by file
/// name, fits each to `resolution x resolution` and assigns seeded splits.
pub fn ingest(root: &Path, resolution: usize, fractions: [f64; 3], seed: u64) -> Result<Dataset> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    if paths.is_empty() {
        return Err(Error::Ingest {
            path: root.to_path_buf(),
            detail: "no files found".into(),
        });
    }
    let mut images = vec![];
    let mut kept = vec![];
    for p in &paths {
        match load_image(p) {
            Ok(img) => {
                let (_, h, w) = img.chw()?;
                images.push(fit_to_resolution(&img, resolution)?);
                kept.push((p.clone(), w, h));
            }
            Err(e) => log::warn!("skipping {}: {e}", p.display()),
        }
    }
    if images.is_empty() {
        return Err(Error::Ingest {
            path: root.to_path_buf(),
            detail: format!("none of the {} files could be decoded", paths.len()),
        });
    }
    let splits = assign_splits(images.len(), fractions, seed)?;
    let records = kept
        .into_iter()
        .zip(splits)
        .enumerate()
        .map(|(id, ((path, width, height), split))| ImageRecord {
            id,
            name: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            path: Some(path),
            width,
            height,
            split,
        })
        .collect();
    Ok(Dataset {
        root: Some(root.to_path_buf()),
        resolution,
        records,
        images,
    })
}

/// Scales the short side to `resolution` and centre-crops a square.
pub fn fit_to_resolution(x: &Tensor, resolution: usize) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    if resolution == 0 {
        return Err(Error::domain("fit_to_resolution", "resolution must be positive"));
    }
    let s = resolution as f64 / h.min(w) as f64;
    let nh = ((h as f64 * s).round() as usize).max(resolution);
    let nw = ((w as f64 * s).round() as usize).max(resolution);
    let scaled = resize_to(x, nh, nw, Resample::Bilinear)?;
    let (top, left) = ((nh - resolution) / 2, (nw - resolution) / 2);
    let src = scaled.data();
    let mut out = Vec::with_capacity(c * resolution * resolution);
    for ci in 0..c {
        for y in 0..resolution {
            let row = (ci * nh + top + y) * nw + left;
            out.extend_from_slice(&src[row..row + resolution]);
        }
    }
    Tensor::new(&[c, resolution, resolution], out)
}

/// Decodes any supported image file into a `3 x H x W` tensor in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px.0[c] as f32 / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data)
}

/// Writes a `3 x H x W` (or `1 x H x W`) tensor as 8-bit RGB PNG, rounding
/// and clamping each value.
pub fn save_png(path: &Path, x: &Tensor) -> Result<()> {
    let (c, h, w) = x.chw()?;
    if c != 3 && c != 1 {
        return Err(Error::shape("save_png", format!("expected 1 or 3 channels, got {c}")));
    }
    let mut buf = vec![0u8; 3 * h * w];
    for i in 0..h * w {
        for ch in 0..3 {
            let v = x.data()[(if c == 3 { ch } else { 0 }) * h * w + i];
            buf[3 * i + ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    image::save_buffer(path, &buf, w as u32, h as u32, image::ColorType::Rgb8).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Rounds values to the nearest 8-bit level, as a PNG roundtrip would.
pub fn quantize_8bit(x: &Tensor) -> Tensor {
    x.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

/// One procedural image: a two-colour gradient, one to three flat shapes and
/// sometimes a sinusoidal stripe texture.
pub fn toy_image<R: Rng + ?Sized>(resolution: usize, rng: &mut R) -> Tensor {
    let n = resolution as f32;
    let hw = resolution * resolution;
    let mut img = vec![0.0f32; 3 * hw];
    let c0: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let c1: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let theta: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let (dy, dx) = theta.sin_cos();
    for y in 0..resolution {
        for x in 0..resolution {
            let u = ((x as f32 / n - 0.5) * dx + (y as f32 / n - 0.5) * dy + 0.5).clamp(0.0, 1.0);
            for c in 0..3 {
                img[c * hw + y * resolution + x] = c0[c] * (1.0 - u) + c1[c] * u;
            }
        }
    }
    for _ in 0..rng.gen_range(1..=3) {
        let color: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
        let (cy, cx) = (rng.gen_range(0.0..n), rng.gen_range(0.0..n));
        let (ry, rx) = (rng.gen_range(n / 10.0..n / 3.0), rng.gen_range(n / 10.0..n / 3.0));
        let ellipse = rng.gen_bool(0.5);
        for y in 0..resolution {
            for x in 0..resolution {
                let (py, px) = ((y as f32 + 0.5 - cy) / ry, (x as f32 + 0.5 - cx) / rx);
                let inside = if ellipse {
                    py * py + px * px <= 1.0
                } else {
                    py.abs() <= 1.0 && px.abs() <= 1.0
                };
                if inside {
                    for c in 0..3 {
                        img[c * hw + y * resolution + x] = color[c];
                    }
                }
            }
        }
    }
    if rng.gen_bool(0.4) {
        let period = rng.gen_range(4.0..12.0f32);
        let phi: f32 = rng.gen_range(0.0..std::f32::consts::PI);
        let (sy, sx) = phi.sin_cos();
        let amp = rng.gen_range(0.05..0.2f32);
        for y in 0..resolution {
            for x in 0..resolution {
                let s = amp * ((x as f32 * sx + y as f32 * sy) * std::f32::consts::TAU / period).sin();
                for c in 0..3 {
                    img[c * hw + y * resolution + x] += s;
                }
            }
        }
    }
    for v in &mut img {
        *v = v.clamp(0.0, 1.0);
    }
    Tensor::from_parts(vec![3, resolution, resolution], img)
}

/// `n` procedural images from one seed, quantised to 8 bits so they survive a
/// PNG roundtrip unchanged.
pub fn toy_corpus(n: usize, resolution: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| quantize_8bit(&toy_image(resolution, &mut rng))).collect()
}

/// In-memory toy dataset with names `toy_00000.png`, ...
pub fn toy_dataset(n: usize, resolution: usize, fractions: [f64; 3], seed: u64) -> Result<Dataset> {
    let names = (0..n).map(|i| format!("toy_{i:05}.png")).collect();
    Dataset::from_images(toy_corpus(n, resolution, seed), names, fractions, seed)
}

/// Writes the toy corpus to `dir` as PNG files.
pub fn write_toy_corpus(dir: &Path, n: usize, resolution: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    toy_corpus(n, resolution, seed)
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let p = dir.join(format!("toy_{i:05}.png"));
            save_png(&p, img)?;
            Ok(p)
        })
        .collect()
}
