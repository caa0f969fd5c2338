use crate::error::{Error, Result};
use crate::flow::sampler::{meanvalue_sample, SamplerConfig, VelocityField};
use crate::par::{self, Exec};
use crate::tensor::Tensor;

/// One calibration example: start noise, guidance and the clean reference.
#[derive(Clone, Debug)]
pub struct SweepItem {
    pub z0: Tensor,
    pub cond: Option<Tensor>,
    pub reference: Tensor,
}

/// Outcome of a midpoint sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct MidpointSweep {
    /// Chosen midpoint index.
    pub best: usize,
    /// Mean metric for each `k` in `0..N`.
    pub mean_scores: Vec<f64>,
}

/// Scores mean-value sampling for every `k ∈ 0..steps` on `items` and picks
/// the `k` with the highest mean `metric(output, reference)`.
///
/// A larger `k` only wins if it beats the running best by more than
/// `tie_tolerance`, so ties go to the cheaper schedule.
pub fn sweep_midpoint<F, M>(
    field: &F,
    items: &[SweepItem],
    steps: usize,
    metric: M,
    tie_tolerance: f64,
    exec: Exec,
) -> Result<MidpointSweep>
where
    F: VelocityField + Sync,
    M: Fn(&Tensor, &Tensor) -> Result<f64> + Sync,
{
    if items.is_empty() {
        return Err(Error::domain("sweep_midpoint", "evaluation set is empty"));
    }
    if steps == 0 {
        return Err(Error::domain("sweep_midpoint", "steps must be at least 1"));
    }
    let per_item: Vec<Result<Vec<f64>>> = par::map_slice(exec, items, |_, item| {
        (0..steps)
            .map(|k| {
                let cfg = SamplerConfig::mean_value(steps, k);
                let out = meanvalue_sample(field, &item.z0, item.cond.as_ref(), &cfg)?;
                metric(&out, &item.reference)
            })
            .collect()
    });
    let mut sums = vec![0.0f64; steps];
    for scores in per_item {
        for (s, v) in sums.iter_mut().zip(scores?) {
            *s += v;
        }
    }
    let mean_scores: Vec<f64> = sums.iter().map(|s| s / items.len() as f64).collect();
    let mut best = 0;
    for k in 1..steps {
        if mean_scores[k] > mean_scores[best] + tie_tolerance {
            best = k;
        }
    }
    Ok(MidpointSweep { best, mean_scores })
}
