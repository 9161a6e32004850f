//! Transfer adversarial split construction.
//!
//! Perturbations are single-step l-inf embedding attacks crafted against a
//! frozen reference model (vanilla-trained) and stored with the examples.
//! Every evaluated method replays exactly the same stored perturbations,
//! so the adversarial split is fixed once built.

use roast_core::adversarial::{self, NormScope};
use roast_core::model::{Model, TokenBatch};

use crate::data::{Split, Tag};
use crate::CliError;

/// Builds the adversarial split from a labeled source split. The returned
/// split shares the source examples and carries one stored embedding
/// perturbation per example; `delta_attack = 0` stores zero perturbations,
/// leaving the split identical to its source.
pub fn build_transfer_adversarial_set(
    reference: &Model,
    source: &Split,
    delta_attack: f64,
    scope: NormScope,
    batch_size: usize,
) -> Result<Split, CliError> {
    if delta_attack < 0.0 {
        return Err(CliError::Validation(format!(
            "attack step must be non-negative, got {delta_attack}"
        )));
    }
    if !source.tag.needs_labels() {
        return Err(CliError::Validation(
            "adversarial source split must be labeled".into(),
        ));
    }
    let seq_len = source.seq_len();
    let d = reference.spec.embed_dim;
    let mut perturbations: Vec<Vec<f64>> = Vec::with_capacity(source.examples.len());

    for chunk in source.examples.chunks(batch_size.max(1)) {
        let rows: Vec<Vec<usize>> = chunk.iter().map(|e| e.tokens.clone()).collect();
        let labels: Vec<usize> = chunk.iter().map(|e| e.label.unwrap()).collect();
        let batch = TokenBatch::from_rows(&rows)?;
        let direction = adversarial::perturbation_direction(reference, &batch, &labels)?;
        let step = adversarial::perturbation(&direction, delta_attack, scope)?;
        for (i, _) in chunk.iter().enumerate() {
            let lo = i * seq_len * d;
            perturbations.push(step.data()[lo..lo + seq_len * d].to_vec());
        }
    }

    Ok(Split {
        name: "adv".into(),
        tag: Tag::Adv,
        examples: source.examples.clone(),
        perturbations: Some(perturbations),
    })
}
