//! Single-step adversarial embedding perturbation and the combined
//! training objective.
//!
//! The perturbed input is `x + delta * g / ||g||_inf` where `g = dL_task/dx`
//! at the embedding tensor. The direction gradient is detached: no
//! second-order term flows through the perturbation's construction. The
//! full objective is
//!
//! ```text
//! L = L_task(x, y) + L_task(x_adv, y) + lambda * L_cons(x, x_adv)
//! ```
//!
//! with `L_cons` the bidirectional KL divergence between the two output
//! distributions. Computing it takes two backward passes per step: one to
//! get the perturbation direction, one through the combined loss.

use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};
use crate::graph::{NodeId, Tape};
use crate::loss;
use crate::model::{Model, TokenBatch};
use crate::tensor::Tensor;

/// Scope of the l-inf normalization of the perturbation direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormScope {
    /// One norm per example, over all token x dim entries (default).
    PerExample,
    /// One norm per token position, over its embedding dims.
    PerToken,
}

#[derive(Debug, Clone, Copy)]
pub struct PerturbConfig {
    /// Step size in embedding units.
    pub delta: f64,
    /// Weight of the consistency term.
    pub lambda: f64,
    pub scope: NormScope,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            delta: 0.1,
            lambda: 0.1,
            scope: NormScope::PerExample,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> CoreResult<()> {
        if self.delta < 0.0 || self.lambda < 0.0 {
            return Err(CoreError::InvalidArgument {
                detail: alloc::format!(
                    "delta and lambda must be non-negative, got {} and {}",
                    self.delta,
                    self.lambda
                ),
            });
        }
        Ok(())
    }
}

fn group_len(shape: &[usize], scope: NormScope) -> usize {
    match (shape.len(), scope) {
        (3, NormScope::PerExample) => shape[1] * shape[2],
        (3, NormScope::PerToken) => shape[2],
        (2, _) => shape[1],
        _ => shape.iter().product(),
    }
}

/// The additive perturbation `delta * g / ||g||_inf` per norm group.
/// Groups with an exactly zero gradient get a zero perturbation.
pub fn perturbation(grad_x: &Tensor, delta: f64, scope: NormScope) -> CoreResult<Tensor> {
    if delta < 0.0 {
        return Err(CoreError::InvalidArgument {
            detail: alloc::format!("delta must be non-negative, got {delta}"),
        });
    }
    let group = group_len(grad_x.shape(), scope);
    let mut data = Vec::with_capacity(grad_x.len());
    for chunk in grad_x.data().chunks(group) {
        let max = chunk.iter().fold(0.0_f64, |m, &v| m.max(libm::fabs(v)));
        if max == 0.0 || delta == 0.0 {
            data.extend(std::iter::repeat_n(0.0, chunk.len()));
        } else {
            data.extend(chunk.iter().map(|&g| delta * (g / max)));
        }
    }
    Ok(Tensor::from_parts(grad_x.shape().to_vec(), data))
}

/// `x + delta * grad_x / ||grad_x||_inf` with the norm taken per scope
/// group; `||x_adv - x||_inf == delta` wherever the gradient is nonzero.
pub fn build_adversarial_input(
    x: &Tensor,
    grad_x: &Tensor,
    delta: f64,
    scope: NormScope,
) -> CoreResult<Tensor> {
    if x.shape() != grad_x.shape() {
        return Err(CoreError::ShapeMismatch {
            op: "adversarial-input",
            detail: alloc::format!(
                "input {:?} vs gradient {:?}",
                x.shape(),
                grad_x.shape()
            ),
        });
    }
    let step = perturbation(grad_x, delta, scope)?;
    let data = x
        .data()
        .iter()
        .zip(step.data())
        .map(|(&a, &d)| a + d)
        .collect();
    Ok(Tensor::from_parts(x.shape().to_vec(), data))
}

/// Gradient of the task loss with respect to the embedding tensor.
pub fn perturbation_direction(
    model: &Model,
    batch: &TokenBatch,
    labels: &[usize],
) -> CoreResult<Tensor> {
    let mut tape = Tape::new();
    let pass = model.forward_tokens(&mut tape, batch)?;
    let ce = loss::cross_entropy(&mut tape, pass.logits, labels)?;
    let grads = tape.backward(ce)?;
    Ok(grads.get(&tape, pass.embeddings))
}

/// Loss components of one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub task_clean: f64,
    pub task_adv: f64,
    pub consistency: f64,
}

/// A constructed training loss: the tape, the scalar loss node, and the
/// parameter leaves in store order.
pub struct TrainingLoss {
    pub tape: Tape,
    pub loss: NodeId,
    pub params: Vec<NodeId>,
    pub parts: LossParts,
}

impl TrainingLoss {
    /// Backward pass; gradients flattened over the store's scalar space.
    pub fn parameter_gradients(&self) -> CoreResult<Vec<f64>> {
        let grads = self.tape.backward(self.loss)?;
        Ok(loss::flatten_gradients(&self.tape, &grads, &self.params))
    }

    pub fn value(&self) -> f64 {
        self.parts.total
    }
}

/// Plain task objective: mean cross-entropy of the clean batch.
pub fn task_training_loss(
    model: &Model,
    batch: &TokenBatch,
    labels: &[usize],
) -> CoreResult<TrainingLoss> {
    let mut tape = Tape::new();
    let pass = model.forward_tokens(&mut tape, batch)?;
    let ce = loss::cross_entropy(&mut tape, pass.logits, labels)?;
    let value = tape.value(ce).item()?;
    Ok(TrainingLoss {
        tape,
        loss: ce,
        params: pass.params,
        parts: LossParts {
            total: value,
            task_clean: value,
            task_adv: 0.0,
            consistency: 0.0,
        },
    })
}

/// Combined objective with a precomputed additive perturbation. Both the
/// clean and the perturbed branch share the same parameter leaves, so one
/// backward pass accumulates gradients from all three terms.
pub fn adversarial_loss_with_perturbation(
    model: &Model,
    batch: &TokenBatch,
    labels: &[usize],
    lambda: f64,
    step: &Tensor,
) -> CoreResult<TrainingLoss> {
    let mut tape = Tape::new();
    let params = model.bind_params(&mut tape);
    let emb = model.embed_tokens(&mut tape, &params, batch)?;
    if tape.value(emb).shape() != step.shape() {
        return Err(CoreError::ShapeMismatch {
            op: "adversarial-loss",
            detail: alloc::format!(
                "perturbation {:?} vs embeddings {:?}",
                step.shape(),
                tape.value(emb).shape()
            ),
        });
    }
    let step_node = tape.constant(step.clone());
    let emb_adv = tape.add(emb, step_node)?;

    let logits_clean = model.logits_from_embeddings(&mut tape, &params, emb)?;
    let logits_adv = model.logits_from_embeddings(&mut tape, &params, emb_adv)?;
    let ce_clean = loss::cross_entropy(&mut tape, logits_clean, labels)?;
    let ce_adv = loss::cross_entropy(&mut tape, logits_adv, labels)?;
    let task = tape.add(ce_clean, ce_adv)?;

    let (total, consistency) = if lambda > 0.0 {
        let kl = loss::bidirectional_kl(&mut tape, logits_clean, logits_adv)?;
        let weighted = tape.scale(kl, lambda)?;
        (tape.add(task, weighted)?, tape.value(kl).item()?)
    } else {
        (task, 0.0)
    };

    let parts = LossParts {
        total: tape.value(total).item()?,
        task_clean: tape.value(ce_clean).item()?,
        task_adv: tape.value(ce_adv).item()?,
        consistency,
    };
    Ok(TrainingLoss {
        tape,
        loss: total,
        params,
        parts,
    })
}

/// Full adversarial training loss: derives the perturbation direction from
/// a first backward pass, detaches it, and assembles the combined loss.
pub fn roast_training_loss(
    model: &Model,
    batch: &TokenBatch,
    labels: &[usize],
    cfg: &PerturbConfig,
) -> CoreResult<TrainingLoss> {
    cfg.validate()?;
    let step = if cfg.delta > 0.0 {
        let direction = perturbation_direction(model, batch, labels)?;
        perturbation(&direction, cfg.delta, cfg.scope)?
    } else {
        let mut tape = Tape::new();
        let params = model.bind_params(&mut tape);
        let emb = model.embed_tokens(&mut tape, &params, batch)?;
        Tensor::zeros(tape.value(emb).shape())
    };
    adversarial_loss_with_perturbation(model, batch, labels, cfg.lambda, &step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::rng::RandomSource;
    use alloc::vec;

    #[test]
    fn direct_formula_example() {
        let x = Tensor::from_vec(vec![0.0, 0.0]).unwrap();
        let g = Tensor::from_vec(vec![0.5, -1.0]).unwrap();
        let adv = build_adversarial_input(&x, &g, 0.1, NormScope::PerExample).unwrap();
        assert_eq!(adv.data(), &[0.05, -0.10]);
    }

    #[test]
    fn zero_delta_is_identity() {
        let x = Tensor::from_vec(vec![1.0, 2.0]).unwrap();
        let g = Tensor::from_vec(vec![3.0, -4.0]).unwrap();
        let adv = build_adversarial_input(&x, &g, 0.0, NormScope::PerExample).unwrap();
        assert_eq!(adv.data(), x.data());
    }

    #[test]
    fn zero_gradient_is_identity() {
        let x = Tensor::from_vec(vec![1.0, 2.0]).unwrap();
        let g = Tensor::from_vec(vec![0.0, 0.0]).unwrap();
        let adv = build_adversarial_input(&x, &g, 0.5, NormScope::PerExample).unwrap();
        assert_eq!(adv.data(), x.data());
    }

    #[test]
    fn perturbation_reaches_delta_per_scope_group() {
        let mut rng = RandomSource::new(77);
        let shape = vec![3, 4, 5];
        let data: Vec<f64> = (0..60).map(|_| rng.normal()).collect();
        let g = Tensor::new(shape, data).unwrap();
        let delta = 0.25;

        let per_example = perturbation(&g, delta, NormScope::PerExample).unwrap();
        for chunk in per_example.data().chunks(20) {
            let m = chunk.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
            assert_eq!(m, delta);
        }
        let per_token = perturbation(&g, delta, NormScope::PerToken).unwrap();
        for chunk in per_token.data().chunks(5) {
            let m = chunk.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
            assert_eq!(m, delta);
        }
    }

    fn batch_and_labels(rng: &mut RandomSource, vocab: usize, classes: usize) -> (TokenBatch, Vec<usize>) {
        let rows: Vec<Vec<usize>> = (0..4)
            .map(|_| (0..6).map(|_| rng.below(vocab)).collect())
            .collect();
        let labels = (0..4).map(|_| rng.below(classes)).collect();
        (TokenBatch::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn zero_config_reduces_to_doubled_task_loss() {
        let model = Model::new(ModelSpec::mlp(11, 5, vec![6], 3), 42).unwrap();
        let mut rng = RandomSource::new(5);
        let (batch, labels) = batch_and_labels(&mut rng, 11, 3);
        let cfg = PerturbConfig {
            delta: 0.0,
            lambda: 0.0,
            scope: NormScope::PerExample,
        };
        let tl = roast_training_loss(&model, &batch, &labels, &cfg).unwrap();
        let ce = model.task_loss(&batch, &labels).unwrap();
        assert_eq!(tl.parts.total, 2.0 * ce);
        assert_eq!(tl.parts.consistency, 0.0);
    }

    #[test]
    fn zero_delta_kills_consistency_term() {
        let model = Model::new(ModelSpec::mlp(11, 5, vec![6], 3), 42).unwrap();
        let mut rng = RandomSource::new(6);
        let (batch, labels) = batch_and_labels(&mut rng, 11, 3);
        let cfg = PerturbConfig {
            delta: 0.0,
            lambda: 0.5,
            scope: NormScope::PerExample,
        };
        let tl = roast_training_loss(&model, &batch, &labels, &cfg).unwrap();
        let ce = model.task_loss(&batch, &labels).unwrap();
        assert!(tl.parts.consistency.abs() < 1e-15);
        assert!((tl.parts.total - 2.0 * ce).abs() < 1e-15);
    }

    #[test]
    fn zero_config_gradients_are_doubled_task_gradients() {
        let model = Model::new(ModelSpec::mlp(9, 4, vec![5], 2), 17).unwrap();
        let mut rng = RandomSource::new(7);
        let (batch, labels) = batch_and_labels(&mut rng, 9, 2);
        let cfg = PerturbConfig {
            delta: 0.0,
            lambda: 0.0,
            scope: NormScope::PerExample,
        };
        let combined = roast_training_loss(&model, &batch, &labels, &cfg)
            .unwrap()
            .parameter_gradients()
            .unwrap();
        let single = task_training_loss(&model, &batch, &labels)
            .unwrap()
            .parameter_gradients()
            .unwrap();
        assert_eq!(combined.len(), single.len());
        for (c, s) in combined.iter().zip(&single) {
            assert!((c - 2.0 * s).abs() <= 1e-12, "{c} vs {}", 2.0 * s);
        }
    }

    #[test]
    fn consistency_term_is_nonnegative() {
        let model = Model::new(ModelSpec::mlp(13, 4, vec![6], 3), 3).unwrap();
        let mut rng = RandomSource::new(8);
        for _ in 0..20 {
            let (batch, labels) = batch_and_labels(&mut rng, 13, 3);
            let cfg = PerturbConfig::default();
            let tl = roast_training_loss(&model, &batch, &labels, &cfg).unwrap();
            assert!(tl.parts.consistency >= 0.0);
        }
    }

    #[test]
    fn small_step_usually_raises_task_loss() {
        // single-step ascent direction: the adversarial branch should not be
        // easier than the clean one on at least 90% of random batches
        let mut rng = RandomSource::new(99);
        let mut ascents = 0;
        let trials = 100;
        for trial in 0..trials {
            let model = Model::new(ModelSpec::mlp(17, 6, vec![8], 3), trial as u64).unwrap();
            let (batch, labels) = batch_and_labels(&mut rng, 17, 3);
            let cfg = PerturbConfig {
                delta: 0.01,
                lambda: 0.0,
                scope: NormScope::PerExample,
            };
            let tl = roast_training_loss(&model, &batch, &labels, &cfg).unwrap();
            if tl.parts.task_adv >= tl.parts.task_clean - 1e-9 {
                ascents += 1;
            }
        }
        assert!(ascents >= 90, "ascent held on only {ascents}/{trials} batches");
    }
}
