//! Importance-driven stochastic gradient masking.
//!
//! Per-scalar importance is the windowed sum of squared gradients. Scores
//! are rank-normalized to [0, 1], mapped to update probabilities through a
//! logistic gate, and a Bernoulli mask is drawn per refresh. Kept gradients
//! are optionally scaled by `1/p` so the masked update stays an unbiased
//! estimator of the full gradient.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};
use crate::model::ParameterStore;
use crate::rng::RandomSource;

/// Probabilities are clamped to this band so `1/p` stays finite.
pub const PROB_CLAMP: f64 = 1e-6;

/// How rank normalization orders the importance scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// High importance -> high normalized score (default).
    Max,
    /// Reversed order: high importance -> low normalized score.
    Min,
    /// Seeded random assignment of normalized scores.
    Rand,
}

/// How gradients are filtered at update time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Bernoulli mask sampled from the logistic probabilities.
    Sample,
    /// Deterministic `normalized score >= alpha` selection.
    HardThreshold,
    /// No selection; gradients multiplied by the probabilities.
    SoftScale,
    /// No masking at all.
    Off,
}

/// Orientation of the logistic gate.
///
/// `Rising` gives high update probability to high-importance parameters and
/// recovers hard thresholding as the smoothness grows; `Falling` is the
/// mirrored variant, kept for side-by-side comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmoidSign {
    Rising,
    Falling,
}

/// Running sums of squared gradients for the current refresh window.
#[derive(Debug, Clone)]
pub struct ImportanceAccumulator {
    sums: Vec<f64>,
    steps: usize,
}

impl ImportanceAccumulator {
    pub fn new(scalars: usize) -> Self {
        ImportanceAccumulator {
            sums: vec![0.0; scalars],
            steps: 0,
        }
    }

    pub fn accumulate(&mut self, gradients: &[f64]) -> CoreResult<()> {
        if gradients.len() != self.sums.len() {
            return Err(CoreError::LengthMismatch {
                op: "importance-accumulate",
                left: self.sums.len(),
                right: gradients.len(),
            });
        }
        for (s, &g) in self.sums.iter_mut().zip(gradients) {
            *s += g * g;
        }
        self.steps += 1;
        Ok(())
    }

    pub fn reset(&mut self) {
        self.sums.iter_mut().for_each(|s| *s = 0.0);
        self.steps = 0;
    }

    pub fn scores(&self) -> &[f64] {
        &self.sums
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.sums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sums.is_empty()
    }
}

/// Rank normalization of importance scores to [0, 1].
///
/// Ascending stable sort by `(|score|, flat index)`; the smallest score maps
/// to 0 and the largest to 1. `Min` reverses the order before ranking and
/// `Rand` assigns a random permutation of the ranks. A single scalar maps
/// to 0.5.
pub fn normalize_scores(scores: &[f64], strategy: Strategy, rng: &mut RandomSource) -> Vec<f64> {
    let n = scores.len();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![0.5];
    }
    let denom = (n - 1) as f64;
    let mut out = vec![0.0; n];
    match strategy {
        Strategy::Rand => {
            let mut ranks: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut ranks);
            for (i, &r) in ranks.iter().enumerate() {
                out[i] = r as f64 / denom;
            }
        }
        Strategy::Max | Strategy::Min => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                let (sa, sb) = (libm::fabs(scores[a]), libm::fabs(scores[b]));
                match strategy {
                    Strategy::Max => sa.total_cmp(&sb).then(a.cmp(&b)),
                    _ => sb.total_cmp(&sa).then(a.cmp(&b)),
                }
            });
            for (rank, &idx) in order.iter().enumerate() {
                out[idx] = rank as f64 / denom;
            }
        }
    }
    out
}

/// Logistic update probability per scalar, clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub fn sampling_probability(
    normalized: &[f64],
    alpha: f64,
    beta: f64,
    sign: SigmoidSign,
) -> Vec<f64> {
    normalized
        .iter()
        .map(|&s| {
            let arg = match sign {
                SigmoidSign::Rising => -2.0 * beta * (s - alpha),
                SigmoidSign::Falling => 2.0 * beta * (s - alpha),
            };
            let p = 1.0 / (1.0 + libm::exp(arg));
            p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
        })
        .collect()
}

/// Independent Bernoulli draw per scalar.
pub fn sample_mask(probabilities: &[f64], rng: &mut RandomSource) -> Vec<bool> {
    probabilities.iter().map(|&p| rng.bernoulli(p)).collect()
}

/// Mask state for one refresh window.
#[derive(Debug, Clone)]
pub struct MaskState {
    pub normalized: Vec<f64>,
    pub probability: Vec<f64>,
    pub mask: Vec<bool>,
    /// Iteration at which this state was sampled.
    pub refreshed_at: usize,
}

impl MaskState {
    pub fn density(&self) -> f64 {
        if self.mask.is_empty() {
            return 0.0;
        }
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len() as f64
    }
}

/// Gradient filter applied at update time.
#[derive(Debug, Clone, Copy)]
pub struct UpdateRule {
    pub mode: MaskMode,
    /// With `Sample`, divide kept gradients by their probability.
    pub scaling: bool,
    /// Threshold for `HardThreshold`.
    pub alpha: f64,
}

/// One SGD step with the masked gradient: `theta -= eta * g_masked`.
///
/// `Sample`: `g * m / p` (or `g * m` without scaling); `HardThreshold`:
/// `g * [s >= alpha]`; `SoftScale`: `g * p`; `Off`: `g` unchanged.
pub fn apply_masked_update(
    store: &mut ParameterStore,
    gradients: &[f64],
    state: Option<&MaskState>,
    eta: f64,
    rule: UpdateRule,
) -> CoreResult<()> {
    if gradients.len() != store.scalar_count() {
        return Err(CoreError::LengthMismatch {
            op: "masked-update",
            left: store.scalar_count(),
            right: gradients.len(),
        });
    }
    let state_for = |op: &'static str| -> CoreResult<&MaskState> {
        let s = state.ok_or(CoreError::InvalidArgument {
            detail: alloc::format!("{op} update needs a mask state"),
        })?;
        if s.mask.len() != gradients.len() {
            return Err(CoreError::LengthMismatch {
                op: "masked-update",
                left: s.mask.len(),
                right: gradients.len(),
            });
        }
        Ok(s)
    };
    let delta: Vec<f64> = match rule.mode {
        MaskMode::Off => gradients.iter().map(|&g| -eta * g).collect(),
        MaskMode::Sample => {
            let s = state_for("sample")?;
            gradients
                .iter()
                .enumerate()
                .map(|(i, &g)| {
                    if s.mask[i] {
                        if rule.scaling {
                            -eta * g / s.probability[i]
                        } else {
                            -eta * g
                        }
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        MaskMode::HardThreshold => {
            let s = state_for("hard-threshold")?;
            gradients
                .iter()
                .enumerate()
                .map(|(i, &g)| {
                    if s.normalized[i] >= rule.alpha {
                        -eta * g
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        MaskMode::SoftScale => {
            let s = state_for("soft-scale")?;
            gradients
                .iter()
                .enumerate()
                .map(|(i, &g)| -eta * g * s.probability[i])
                .collect()
        }
    };
    store.add_flat(&delta)?;
    store.check_finite()
}

/// Intersection over union of two masks; 1.0 when both are empty.
pub fn mask_iou(a: &[bool], b: &[bool]) -> CoreResult<f64> {
    if a.len() != b.len() {
        return Err(CoreError::LengthMismatch {
            op: "mask-iou",
            left: a.len(),
            right: b.len(),
        });
    }
    let mut intersection = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        if x && y {
            intersection += 1;
        }
        if x || y {
            union += 1;
        }
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(intersection as f64 / union as f64)
    }
}
