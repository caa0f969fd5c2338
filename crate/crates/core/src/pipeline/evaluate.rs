use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::degrade::{degrade, DegradationSpec};
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::pipeline::dataset::{Dataset, Split};
use crate::pipeline::enhance::{enhance, EnhanceOptions};
use crate::pipeline::metrics::{psnr, ssim};
use crate::pipeline::model::FlowModel;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct EvalItem {
    pub id: usize,
    pub name: String,
    pub clean: Tensor,
}

pub fn eval_items(data: &Dataset, split: Split) -> Vec<EvalItem> {
    data.ids(split)
        .into_iter()
        .map(|id| EvalItem {
            id,
            name: data.records[id].name.clone(),
            clean: data.image(id).clone(),
        })
        .collect()
}

/// Per-image seed derived from a run seed, independent of evaluation order.
pub fn item_seed(seed: u64, id: usize) -> u64 {
    seed ^ (id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// The degraded input for `item` under `eval_seed`; identical on every call.
pub fn degraded_input(item: &EvalItem, spec: &DegradationSpec, eval_seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(item_seed(eval_seed, item.id));
    Ok(degrade(&item.clean, spec, &mut rng)?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: usize,
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_image: Vec<ImageMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub images: usize,
    pub seconds: f64,
    pub images_per_second: f64,
    pub evaluations_per_image: f64,
}

impl MetricReport {
    /// Aggregates entries in id order.
    pub fn from_entries(mut per_image: Vec<ImageMetrics>, seconds: f64, evaluations: usize) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::domain("MetricReport", "no images"));
        }
        per_image.sort_by_key(|m| m.id);
        let n = per_image.len();
        let mean_psnr = per_image.iter().map(|m| m.psnr).sum::<f64>() / n as f64;
        let mean_ssim = per_image.iter().map(|m| m.ssim).sum::<f64>() / n as f64;
        Ok(Self {
            per_image,
            mean_psnr,
            mean_ssim,
            images: n,
            seconds,
            images_per_second: if seconds > 0.0 { n as f64 / seconds } else { f64::INFINITY },
            evaluations_per_image: evaluations as f64 / n as f64,
        })
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>6}  {:<24} {:>9} {:>8}", "id", "image", "PSNR", "SSIM");
        for m in &self.per_image {
            let _ = writeln!(s, "{:>6}  {:<24} {:>9.3} {:>8.4}", m.id, m.name, m.psnr, m.ssim);
        }
        let _ = writeln!(s, "{:>6}  {:<24} {:>9.3} {:>8.4}", "", "mean", self.mean_psnr, self.mean_ssim);
        let _ = writeln!(
            s,
            "{} images in {:.3} s ({:.2} images/s, {:.1} evaluations/image)",
            self.images, self.seconds, self.images_per_second, self.evaluations_per_image
        );
        s
    }
}

/// Degrades every item with its fixed seed, restores it with `restore` and
/// scores the result. `restore` gets the item, the degraded image and a
/// per-image noise seed and returns the estimate with its evaluation count.
pub fn evaluate_with<F>(items: &[EvalItem], spec: &DegradationSpec, eval_seed: u64, exec: Exec, restore: F) -> Result<MetricReport>
where
    F: Fn(&EvalItem, &Tensor, u64) -> Result<(Tensor, usize)> + Sync + Send,
{
    if items.is_empty() {
        return Err(Error::domain("evaluate", "evaluation split is empty"));
    }
    let start = Instant::now();
    let results = par::map_slice(exec, items, |_, item| {
        let lq = degraded_input(item, spec, eval_seed)?;
        let (out, evals) = restore(item, &lq, item_seed(eval_seed.wrapping_add(1), item.id))?;
        Ok((
            ImageMetrics {
                id: item.id,
                name: item.name.clone(),
                psnr: psnr(&out, &item.clean)?,
                ssim: ssim(&out, &item.clean)?,
            },
            evals,
        ))
    });
    let seconds = start.elapsed().as_secs_f64();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let evaluations = results.iter().map(|(_, e)| e).sum();
    MetricReport::from_entries(results.into_iter().map(|(m, _)| m).collect(), seconds, evaluations)
}

/// Scores the model on `items`.
pub fn evaluate(
    model: &FlowModel,
    items: &[EvalItem],
    spec: &DegradationSpec,
    eval_seed: u64,
    opts: &EnhanceOptions,
    exec: Exec,
) -> Result<MetricReport> {
    evaluate_with(items, spec, eval_seed, exec, |_, lq, seed| {
        let out = enhance(model, lq, &EnhanceOptions { seed, ..*opts })?;
        Ok((out.image, out.evaluations))
    })
}

/// Scores the degraded inputs themselves.
pub fn degraded_baseline(items: &[EvalItem], spec: &DegradationSpec, eval_seed: u64, exec: Exec) -> Result<MetricReport> {
    evaluate_with(items, spec, eval_seed, exec, |_, lq, _| Ok((lq.clone(), 0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub images: usize,
    pub seconds: f64,
    pub images_per_second: f64,
    pub evaluations: usize,
}

/// Times [`enhance`] alone over pre-degraded inputs.
pub fn measure_throughput(model: &FlowModel, inputs: &[Tensor], opts: &EnhanceOptions, exec: Exec) -> Result<Throughput> {
    if inputs.is_empty() {
        return Err(Error::domain("measure_throughput", "no inputs"));
    }
    let start = Instant::now();
    let outs = par::map_slice(exec, inputs, |i, lq| {
        enhance(model, lq, &EnhanceOptions {
            seed: item_seed(opts.seed, i),
            ..*opts
        })
        .map(|e| e.evaluations)
    });
    let seconds = start.elapsed().as_secs_f64();
    let evaluations = outs.into_iter().sum::<Result<usize>>()?;
    Ok(Throughput {
        images: inputs.len(),
        seconds,
        images_per_second: inputs.len() as f64 / seconds,
        evaluations,
    })
}
