//! Task and consistency losses built from tape ops.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};
use crate::graph::{NodeId, Tape};
use crate::tensor::Tensor;

/// Mean cross-entropy over a batch: `-log softmax(logits)[label]`.
///
/// Log-sum-exp stabilization keeps the result finite for any finite logits.
pub fn cross_entropy(tape: &mut Tape, logits: NodeId, labels: &[usize]) -> CoreResult<NodeId> {
    let shape = tape.value(logits).shape();
    if shape.len() != 2 {
        return Err(CoreError::ShapeMismatch {
            op: "cross-entropy",
            detail: alloc::format!("logits must be [batch, classes], got {shape:?}"),
        });
    }
    let (batch, classes) = (shape[0], shape[1]);
    if batch != labels.len() {
        return Err(CoreError::LengthMismatch {
            op: "cross-entropy",
            left: batch,
            right: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(CoreError::LabelOutOfRange {
            label: bad,
            classes,
        });
    }
    let mut onehot = vec![0.0; batch * classes];
    for (row, &label) in labels.iter().enumerate() {
        onehot[row * classes + label] = 1.0;
    }
    let log_probs = tape.row_log_softmax(logits)?;
    let mask = tape.constant(Tensor::from_parts(vec![batch, classes], onehot));
    let picked = tape.mul(log_probs, mask)?;
    let total = tape.sum(picked)?;
    tape.scale(total, -1.0 / batch as f64)
}

/// Mean bidirectional KL divergence between the softmax distributions of two
/// logit tensors: `D_KL(P||Q) + D_KL(Q||P)`, averaged over the batch.
///
/// Probabilities are floored at [`crate::graph::PROB_FLOOR`] before any log,
/// so the result stays finite even for extreme logits.
pub fn bidirectional_kl(tape: &mut Tape, a: NodeId, b: NodeId) -> CoreResult<NodeId> {
    let (sa, sb) = (tape.value(a).shape(), tape.value(b).shape());
    if sa != sb || sa.is_empty() {
        return Err(CoreError::ShapeMismatch {
            op: "bidirectional-kl",
            detail: alloc::format!("incompatible logit shapes {sa:?} and {sb:?}"),
        });
    }
    let rows = tape.value(a).len() / tape.value(a).last_dim();
    let p = tape.row_softmax(a)?;
    let q = tape.row_softmax(b)?;
    let log_p = tape.ln_clamped(p)?;
    let log_q = tape.ln_clamped(q)?;

    let forward = directed_kl(tape, p, log_p, log_q)?;
    let reverse = directed_kl(tape, q, log_q, log_p)?;
    let total = tape.add(forward, reverse)?;
    tape.scale(total, 1.0 / rows as f64)
}

/// `sum(P * (log P - log Q))` over all entries.
fn directed_kl(
    tape: &mut Tape,
    p: NodeId,
    log_p: NodeId,
    log_q: NodeId,
) -> CoreResult<NodeId> {
    let neg_log_q = tape.scale(log_q, -1.0)?;
    let log_ratio = tape.add(log_p, neg_log_q)?;
    let terms = tape.mul(p, log_ratio)?;
    tape.sum(terms)
}

/// Flattens per-leaf gradients in the order the leaves are listed.
pub fn flatten_gradients(
    tape: &Tape,
    grads: &crate::graph::Gradients,
    leaves: &[NodeId],
) -> Vec<f64> {
    let mut flat = Vec::new();
    for &leaf in leaves {
        match grads.raw(leaf) {
            Some(g) => flat.extend_from_slice(g),
            None => flat.extend(std::iter::repeat_n(0.0, tape.value(leaf).len())),
        }
    }
    flat
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN_2: f64 = core::f64::consts::LN_2;

    fn logits(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::new(vec![rows, cols], v.to_vec()).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln_classes() {
        let mut tape = Tape::new();
        let x = tape.constant(logits(1, 2, &[0.0, 0.0]));
        let ce = cross_entropy(&mut tape, x, &[0]).unwrap();
        assert!((tape.value(ce).item().unwrap() - LN_2).abs() < 1e-15);
    }

    #[test]
    fn saturated_correct_logit_gives_zero_loss() {
        let mut tape = Tape::new();
        let x = tape.constant(logits(1, 2, &[1e9, 0.0]));
        let ce = cross_entropy(&mut tape, x, &[0]).unwrap();
        assert_eq!(tape.value(ce).item().unwrap(), 0.0);
    }

    #[test]
    fn wrong_label_closed_form() {
        let mut tape = Tape::new();
        let x = tape.constant(logits(1, 2, &[1.0, 0.0]));
        let ce = cross_entropy(&mut tape, x, &[1]).unwrap();
        let expect = libm::log(1.0 + core::f64::consts::E);
        assert!((tape.value(ce).item().unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn label_out_of_range_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(logits(1, 2, &[0.0, 0.0]));
        assert!(matches!(
            cross_entropy(&mut tape, x, &[2]),
            Err(CoreError::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn ce_gradient_is_softmax_minus_onehot() {
        let mut tape = Tape::new();
        let x = tape.leaf(logits(1, 3, &[1.0, 0.0, -1.0]), true);
        let ce = cross_entropy(&mut tape, x, &[0]).unwrap();
        let grads = tape.backward(ce).unwrap();
        let g = grads.get(&tape, x);
        let mut sm_tape = Tape::new();
        let xs = sm_tape.constant(logits(1, 3, &[1.0, 0.0, -1.0]));
        let sm = sm_tape.row_softmax(xs).unwrap();
        let p = sm_tape.value(sm).data().to_vec();
        assert!((g.data()[0] - (p[0] - 1.0)).abs() < 1e-15);
        assert!((g.data()[1] - p[1]).abs() < 1e-15);
        assert!((g.data()[2] - p[2]).abs() < 1e-15);
    }

    #[test]
    fn kl_of_identical_logits_is_zero() {
        let mut tape = Tape::new();
        let a = tape.constant(logits(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.0, 1.0]));
        let b = tape.constant(logits(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.0, 1.0]));
        let kl = bidirectional_kl(&mut tape, a, b).unwrap();
        assert!(tape.value(kl).item().unwrap().abs() < 1e-15);
    }

    #[test]
    fn kl_closed_form_for_swapped_distribution() {
        // softmax of [ln4, 0] = [0.8, 0.2]; swapping gives [0.2, 0.8].
        // Each direction contributes 0.6*ln(4); the sum is 1.2*ln(4).
        let l4 = libm::log(4.0);
        let mut tape = Tape::new();
        let a = tape.constant(logits(1, 2, &[l4, 0.0]));
        let b = tape.constant(logits(1, 2, &[0.0, l4]));
        let kl = bidirectional_kl(&mut tape, a, b).unwrap();
        let expect = 1.2 * l4; // 1.6635532333438688
        assert!((tape.value(kl).item().unwrap() - expect).abs() < 1e-12);
        assert!((expect - 1.6635532333438688).abs() < 1e-15);
    }

    #[test]
    fn kl_is_symmetric_bitwise() {
        let mut t1 = Tape::new();
        let a1 = t1.constant(logits(2, 2, &[0.3, -1.2, 2.0, 0.7]));
        let b1 = t1.constant(logits(2, 2, &[-0.5, 0.9, 0.0, 1.4]));
        let k1 = bidirectional_kl(&mut t1, a1, b1).unwrap();

        let mut t2 = Tape::new();
        let a2 = t2.constant(logits(2, 2, &[-0.5, 0.9, 0.0, 1.4]));
        let b2 = t2.constant(logits(2, 2, &[0.3, -1.2, 2.0, 0.7]));
        let k2 = bidirectional_kl(&mut t2, a2, b2).unwrap();

        assert_eq!(t1.value(k1).item().unwrap(), t2.value(k2).item().unwrap());
    }

    #[test]
    fn kl_shape_mismatch_rejected() {
        let mut tape = Tape::new();
        let a = tape.constant(logits(1, 2, &[0.0, 0.0]));
        let b = tape.constant(logits(1, 3, &[0.0, 0.0, 0.0]));
        assert!(bidirectional_kl(&mut tape, a, b).is_err());
    }
}
