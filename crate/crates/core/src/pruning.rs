//! Magnitude pruning: keep/drop masks over the weight matrix and the
//! iterative prune-retrain schedule.
//!
//! Two threshold rules are supported. The percentile rule drops a chosen
//! fraction `p` of the surviving weights (those smallest in magnitude);
//! the std-dev rule drops survivors whose magnitude falls below
//! `λ·σ`, with `σ` the standard deviation of the surviving weights.
//! Pruning is monotone: a dropped connection never comes back.

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalRecord, EvalSettings};
use crate::math::derive_seed;
use crate::rbm::{train_rbm, RbmParams, TrainConfig, TrainingLog};
use ndarray::Array2;

/// Binary keep matrix congruent to the weights; 1 keeps a connection,
/// 0 drops it.
#[derive(Clone, Debug, PartialEq)]
pub struct PruneMask {
    keep: Array2<u8>,
}

impl PruneMask {
    pub fn new(keep: Array2<u8>) -> Result<Self> {
        if keep.iter().any(|&k| k > 1) {
            return Err(Error::Domain("mask entries must be 0 or 1".into()));
        }
        Ok(PruneMask { keep })
    }

    pub fn ones(n_visible: usize, n_hidden: usize) -> Self {
        PruneMask { keep: Array2::from_elem((n_visible, n_hidden), 1) }
    }

    pub fn keep(&self) -> &Array2<u8> {
        &self.keep
    }

    pub fn dim(&self) -> (usize, usize) {
        self.keep.dim()
    }

    pub fn total(&self) -> usize {
        self.keep.len()
    }

    pub fn surviving(&self) -> usize {
        self.keep.iter().filter(|&&k| k == 1).count()
    }

    pub fn is_kept(&self, i: usize, j: usize) -> bool {
        self.keep[[i, j]] == 1
    }

    /// True where `other` keeps at most what `self` keeps.
    pub fn dominates(&self, other: &PruneMask) -> bool {
        self.keep.iter().zip(other.keep.iter()).all(|(&a, &b)| b <= a)
    }

    pub fn check_congruent(&self, weights: &Array2<f64>) -> Result<()> {
        if self.keep.dim() != weights.dim() {
            return Err(Error::Shape(format!(
                "mask {:?} against weights {:?}",
                self.keep.dim(),
                weights.dim()
            )));
        }
        Ok(())
    }

    /// Forces dropped coordinates of `weights` to exactly 0.
    pub fn zero_dropped(&self, weights: &mut Array2<f64>) {
        ndarray::Zip::from(weights).and(&self.keep).for_each(|w, &k| {
            if k == 0 {
                *w = 0.0;
            }
        });
    }
}

/// Fraction of dropped connections, in [0, 1].
pub fn sparsity(mask: &PruneMask) -> f64 {
    1.0 - mask.surviving() as f64 / mask.total() as f64
}

/// Magnitudes and row-major flat indices of the surviving entries.
fn survivors(weights: &Array2<f64>, current: &PruneMask) -> Vec<(f64, usize)> {
    let n_hidden = weights.ncols();
    let mut out = Vec::with_capacity(current.surviving());
    for ((i, j), &w) in weights.indexed_iter() {
        if current.is_kept(i, j) {
            out.push((w.abs(), i * n_hidden + j));
        }
    }
    out
}

/// Drops the fraction `p` of surviving weights smallest in magnitude.
///
/// The threshold is the left `100p%` percentile of surviving `|w|`;
/// survivors with `|w| ≥ T` are kept, and ties at exactly `T` are broken
/// in row-major order so the dropped count is exactly `⌊p·s⌋` out of `s`
/// survivors. Already-dropped entries stay dropped.
pub fn percentile_mask(
    weights: &Array2<f64>,
    current: &PruneMask,
    p: f64,
) -> Result<PruneMask> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("percentile p must lie in (0, 1), got {p}")));
    }
    current.check_congruent(weights)?;
    let mut surv = survivors(weights, current);
    let s = surv.len();
    if s == 0 {
        return Err(Error::Usage("mask has no surviving entries left to prune".into()));
    }
    let drop_count = (p * s as f64).floor() as usize;
    if drop_count == 0 {
        return Ok(current.clone());
    }
    surv.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    // The first ⌊p·s⌋ sorted entries are exactly those with |w| below the
    // percentile threshold plus, on ties at the threshold, the earliest in
    // row-major order.
    let threshold = surv[drop_count].0;
    let mut keep = current.keep.clone();
    let n_hidden = weights.ncols();
    for &(mag, flat) in surv.iter().take(drop_count) {
        debug_assert!(mag <= threshold);
        keep[[flat / n_hidden, flat % n_hidden]] = 0;
    }
    PruneMask::new(keep)
}

/// Drops survivors with `|w| < λ·σ`, where `σ` is the population standard
/// deviation of the surviving weights.
pub fn stddev_mask(weights: &Array2<f64>, current: &PruneMask, lambda: f64) -> Result<PruneMask> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("quality parameter must be positive, got {lambda}")));
    }
    current.check_congruent(weights)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((i, j), &w) in weights.indexed_iter() {
        if current.is_kept(i, j) {
            sum += w;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Usage("mask has no surviving entries left to prune".into()));
    }
    let mean = sum / count as f64;
    let var = weights
        .indexed_iter()
        .filter(|((i, j), _)| current.is_kept(*i, *j))
        .map(|(_, &w)| (w - mean) * (w - mean))
        .sum::<f64>()
        / count as f64;
    let threshold = lambda * var.sqrt();

    let mut keep = current.keep.clone();
    let mut remaining = 0usize;
    for ((i, j), &w) in weights.indexed_iter() {
        if current.is_kept(i, j) {
            if w.abs() >= threshold {
                remaining += 1;
            } else {
                keep[[i, j]] = 0;
            }
        }
    }
    if remaining == 0 {
        return Err(Error::Usage(format!(
            "threshold {threshold:.6} exceeds every surviving weight magnitude"
        )));
    }
    PruneMask::new(keep)
}

/// Which threshold rule a schedule applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PruneStrategy {
    /// Drop a fixed fraction of survivors per step (`steps` are fractions).
    Percentile,
    /// Threshold at λ·σ per step (`steps` are quality parameters λ).
    StdDev,
}

/// An iterative prune-retrain plan: one mask update per step, each
/// followed by retraining under the accumulated mask.
#[derive(Clone, Debug)]
pub struct PruneSchedule {
    pub strategy: PruneStrategy,
    pub steps: Vec<f64>,
    pub retrain: TrainConfig,
}

impl PruneSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::Domain("prune schedule has no steps".into()));
        }
        match self.strategy {
            PruneStrategy::Percentile => {
                if self.steps.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
                    return Err(Error::Domain("percentile steps must lie in (0, 1)".into()));
                }
            }
            PruneStrategy::StdDev => {
                if self.steps.iter().any(|&l| !(l > 0.0)) {
                    return Err(Error::Domain("std-dev steps must be positive".into()));
                }
            }
        }
        self.retrain.validate()
    }
}

/// Output of one prune-retrain step.
#[derive(Clone, Debug)]
pub struct PruneStep {
    pub mask: PruneMask,
    pub params: RbmParams,
    pub eval: EvalRecord,
    pub retrain_log: TrainingLog,
}

/// Runs the schedule: at each step a new mask is cut from the current
/// weights, applied, and the survivors are retrained under the mask
/// (velocity starts from zero each phase; retrain seeds are derived per
/// step). Each step is evaluated with `eval`.
pub fn iterative_prune(
    data: &DatasetSplit,
    base: &RbmParams,
    schedule: &PruneSchedule,
    eval: &EvalSettings,
) -> Result<Vec<PruneStep>> {
    schedule.validate()?;
    let mut params = base.clone();
    let mut mask = PruneMask::ones(base.n_visible(), base.n_hidden());
    let mut out = Vec::with_capacity(schedule.steps.len());

    for (step_idx, &step) in schedule.steps.iter().enumerate() {
        mask = match schedule.strategy {
            PruneStrategy::Percentile => percentile_mask(&params.weights, &mask, step)?,
            PruneStrategy::StdDev => stddev_mask(&params.weights, &mask, step)?,
        };
        mask.zero_dropped(&mut params.weights);

        let mut retrain = schedule.retrain.clone();
        retrain.seed = derive_seed(schedule.retrain.seed, 0x7072_756e_6500 | step_idx as u64);
        let (retrained, retrain_log) =
            train_rbm(data, params.n_hidden(), &retrain, Some(&params), Some(&mask))?;
        params = retrained;

        let record = evaluate(&params, sparsity(&mask), eval)?;
        out.push(PruneStep { mask: mask.clone(), params: params.clone(), eval: record, retrain_log });
    }
    Ok(out)
}
