//! Epoch-structured training loop with periodic mask refresh.
//!
//! The loop accumulates squared gradients of the training loss during each
//! refresh window, and at every refresh boundary (iteration `t` with
//! `t % T == 0`) converts the window's sums into a fresh mask: rank
//! normalization, logistic probabilities, Bernoulli draw. The very first
//! refresh consumes the warmup pass, which sums squared gradients of the
//! plain cross-entropy loss over the whole training set before any update.
//!
//! RNG stream layout: from `RandomSource::new(seed)`, the first split
//! drives epoch shuffling and the second drives normalization/mask draws.
//! [`epoch_order`] exposes the exact batch order for a given shuffle stream.

use alloc::vec::Vec;

use crate::adversarial::{self, NormScope, PerturbConfig};
use crate::error::{CoreError, CoreResult};
use crate::masking::{
    self, ImportanceAccumulator, MaskMode, MaskState, SigmoidSign, Strategy, UpdateRule,
};
use crate::model::{Model, TokenBatch};
use crate::rng::RandomSource;

/// Which loss the loop optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Plain cross-entropy.
    TaskOnly,
    /// Clean + adversarial cross-entropy + weighted consistency.
    Adversarial,
}

#[derive(Debug, Clone)]
pub struct RoastConfig {
    /// Adversarial step size.
    pub delta: f64,
    /// Consistency weight.
    pub lambda: f64,
    pub norm_scope: NormScope,
    /// Masking threshold position in [0, 1].
    pub alpha: f64,
    /// Logistic smoothness, > 0.
    pub beta: f64,
    /// Learning rate.
    pub eta: f64,
    /// Mask refresh period in iterations; `None` refreshes once per epoch.
    pub mask_refresh: Option<usize>,
    /// Divide kept gradients by their keep probability.
    pub scaling: bool,
    pub strategy: Strategy,
    pub mask_mode: MaskMode,
    pub sigmoid_sign: SigmoidSign,
    pub objective: Objective,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for RoastConfig {
    fn default() -> Self {
        RoastConfig {
            delta: 0.1,
            lambda: 0.1,
            norm_scope: NormScope::PerExample,
            alpha: 0.7,
            beta: 5.0,
            eta: 0.05,
            mask_refresh: None,
            scaling: true,
            strategy: Strategy::Max,
            mask_mode: MaskMode::Sample,
            sigmoid_sign: SigmoidSign::Rising,
            objective: Objective::Adversarial,
            epochs: 10,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl RoastConfig {
    pub fn validate(&self) -> CoreResult<()> {
        let fail = |d: alloc::string::String| Err(CoreError::InvalidArgument { detail: d });
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(alloc::format!("alpha must be in [0,1], got {}", self.alpha));
        }
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return fail(alloc::format!("beta must be positive, got {}", self.beta));
        }
        if !self.eta.is_finite() || self.eta <= 0.0 {
            return fail(alloc::format!("eta must be positive, got {}", self.eta));
        }
        if self.delta < 0.0 || self.lambda < 0.0 {
            return fail("delta/lambda must be non-negative".to_string());
        }
        if self.mask_refresh == Some(0) {
            return fail("mask refresh period must be >= 1".to_string());
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch size must be >= 1".to_string());
        }
        Ok(())
    }

    fn perturb(&self) -> PerturbConfig {
        PerturbConfig {
            delta: self.delta,
            lambda: self.lambda,
            scope: self.norm_scope,
        }
    }

    fn rule(&self) -> UpdateRule {
        UpdateRule {
            mode: self.mask_mode,
            scaling: self.scaling,
            alpha: self.alpha,
        }
    }
}

/// Labeled training sequences of one shared length.
#[derive(Debug, Clone)]
pub struct TrainSplit {
    pub sequences: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
}

impl TrainSplit {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn validate(&self, vocab: usize, classes: usize) -> CoreResult<()> {
        if self.is_empty() {
            return Err(CoreError::EmptyInput { op: "train-split" });
        }
        if self.sequences.len() != self.labels.len() {
            return Err(CoreError::LengthMismatch {
                op: "train-split",
                left: self.sequences.len(),
                right: self.labels.len(),
            });
        }
        for seq in &self.sequences {
            if let Some(&bad) = seq.iter().find(|&&t| t >= vocab) {
                return Err(CoreError::TokenOutOfRange {
                    token: bad,
                    vocab,
                });
            }
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= classes) {
            return Err(CoreError::LabelOutOfRange {
                label: bad,
                classes,
            });
        }
        Ok(())
    }

    fn batch(&self, indices: &[usize]) -> CoreResult<(TokenBatch, Vec<usize>)> {
        let rows: Vec<Vec<usize>> = indices.iter().map(|&i| self.sequences[i].clone()).collect();
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((TokenBatch::from_rows(&rows)?, labels))
    }
}

/// Warmup pass: sums squared gradients of the plain cross-entropy loss over
/// the full training set, leaving the parameters untouched.
pub fn init_grad(
    model: &Model,
    data: &TrainSplit,
    batch_size: usize,
) -> CoreResult<ImportanceAccumulator> {
    if data.is_empty() {
        return Err(CoreError::EmptyInput { op: "init-grad" });
    }
    let mut acc = ImportanceAccumulator::new(model.store.scalar_count());
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (batch, labels) = data.batch(chunk)?;
        let loss = adversarial::task_training_loss(model, &batch, &labels)?;
        let grads = loss.parameter_gradients()?;
        acc.accumulate(&grads)?;
    }
    Ok(acc)
}

/// Per-epoch log record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Fraction of scalars eligible for update at epoch start.
    pub mask_density: f64,
    /// IoU between the epoch-start mask and the first epoch's mask.
    pub iou_vs_first: f64,
    /// IoU between the epoch-start mask and the last epoch's mask.
    pub iou_vs_last: f64,
}

/// Full training log: per-epoch records plus every sampled mask.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Iterations at which the mask was refreshed.
    pub refresh_iterations: Vec<usize>,
    /// Sampled masks, one per refresh (empty when masking is off).
    pub mask_snapshots: Vec<Vec<bool>>,
    /// Snapshot id in effect at the start of each epoch.
    pub epoch_snapshot: Vec<usize>,
}

/// The exact example order used within one epoch.
pub fn epoch_order(shuffle_rng: &mut RandomSource, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    shuffle_rng.shuffle(&mut order);
    order
}

fn divergence(err: CoreError, iteration: usize) -> CoreError {
    match err {
        CoreError::NonFinite { .. } => CoreError::Diverged { iteration },
        other => other,
    }
}

/// Trains the model in place and returns the log.
pub fn train(model: &mut Model, data: &TrainSplit, cfg: &RoastConfig) -> CoreResult<TrainLog> {
    cfg.validate()?;
    data.validate(model.spec.vocab_size, model.spec.num_classes)?;

    let n = data.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let refresh_every = cfg.mask_refresh.unwrap_or(steps_per_epoch).max(1);
    let masking = cfg.mask_mode != MaskMode::Off;

    let mut master = RandomSource::new(cfg.seed);
    let mut shuffle_rng = master.split();
    let mut mask_rng = master.split();

    let mut acc = if masking {
        init_grad(model, data, cfg.batch_size)?
    } else {
        ImportanceAccumulator::new(model.store.scalar_count())
    };

    let mut log = TrainLog::default();
    let mut state: Option<MaskState> = None;
    let mut t = 0usize;

    for epoch in 0..cfg.epochs {
        let order = epoch_order(&mut shuffle_rng, n);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;

        for chunk in order.chunks(cfg.batch_size) {
            if masking && t.is_multiple_of(refresh_every) {
                let scores = acc.scores().to_vec();
                acc.reset();
                let normalized = normalize_scores(&scores, cfg, &mut mask_rng);
                let probability = masking::sampling_probability(
                    &normalized,
                    cfg.alpha,
                    cfg.beta,
                    cfg.sigmoid_sign,
                );
                let mask = match cfg.mask_mode {
                    MaskMode::Sample => masking::sample_mask(&probability, &mut mask_rng),
                    MaskMode::HardThreshold => {
                        normalized.iter().map(|&s| s >= cfg.alpha).collect()
                    }
                    // mask unused; record the full set as eligible
                    MaskMode::SoftScale | MaskMode::Off => {
                        alloc::vec![true; normalized.len()]
                    }
                };
                log.refresh_iterations.push(t);
                log.mask_snapshots.push(mask.clone());
                state = Some(MaskState {
                    normalized,
                    probability,
                    mask,
                    refreshed_at: t,
                });
            }
            if steps == 0 {
                log.epoch_snapshot
                    .push(log.mask_snapshots.len().saturating_sub(1));
            }

            let (batch, labels) = data.batch(chunk)?;
            let loss = match cfg.objective {
                Objective::TaskOnly => adversarial::task_training_loss(model, &batch, &labels),
                Objective::Adversarial => {
                    adversarial::roast_training_loss(model, &batch, &labels, &cfg.perturb())
                }
            }
            .map_err(|e| divergence(e, t))?;

            let grads = loss.parameter_gradients().map_err(|e| divergence(e, t))?;
            masking::apply_masked_update(
                &mut model.store,
                &grads,
                state.as_ref(),
                cfg.eta,
                cfg.rule(),
            )
            .map_err(|e| divergence(e, t))?;

            if masking {
                acc.accumulate(&grads)?;
            }
            loss_sum += loss.parts.total;
            steps += 1;
            t += 1;
        }

        let density = match (&state, cfg.mask_mode) {
            (_, MaskMode::Off) => 1.0,
            (Some(s), MaskMode::SoftScale) => {
                s.probability.iter().sum::<f64>() / s.probability.len().max(1) as f64
            }
            (Some(s), _) => s.density(),
            (None, _) => 1.0,
        };
        log.epochs.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / steps.max(1) as f64,
            mask_density: density,
            iou_vs_first: 1.0,
            iou_vs_last: 1.0,
        });
    }

    finalize_iou(&mut log)?;
    Ok(log)
}

/// Fills `iou_vs_first` / `iou_vs_last` from the recorded snapshots.
fn finalize_iou(log: &mut TrainLog) -> CoreResult<()> {
    if log.mask_snapshots.is_empty() || log.epoch_snapshot.len() != log.epochs.len() {
        return Ok(());
    }
    let first = log.epoch_snapshot[0];
    let last = *log.epoch_snapshot.last().unwrap();
    for (e, rec) in log.epochs.iter_mut().enumerate() {
        let here = log.epoch_snapshot[e];
        rec.iou_vs_first = masking::mask_iou(&log.mask_snapshots[here], &log.mask_snapshots[first])?;
        rec.iou_vs_last = masking::mask_iou(&log.mask_snapshots[here], &log.mask_snapshots[last])?;
    }
    Ok(())
}

fn normalize_scores(scores: &[f64], cfg: &RoastConfig, rng: &mut RandomSource) -> Vec<f64> {
    masking::normalize_scores(scores, cfg.strategy, rng)
}
