//! Finite-difference and distributional property tests for the graph ops.
//!
//! The numeric oracle here is independent of the backward implementation:
//! it re-evaluates the forward value under symmetric bumps of each input
//! scalar and forms the central quotient.

use proptest::prelude::*;
use roast_core::graph::{NodeId, Tape};
use roast_core::loss;
use roast_core::metrics::{auroc_msp, EvalRecord, SplitTag};
use roast_core::tensor::Tensor;

type Build = dyn Fn(&mut Tape, &[NodeId]) -> NodeId;

/// Evaluates `build` over fresh leaves and compares backward gradients
/// against central finite differences on every input scalar.
fn assert_matches_fd(inputs: &[Tensor], build: &Build, h: f64, tol: f64) {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &ids);
    let grads = tape.backward(out).unwrap();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| grads.get(&tape, id).data().to_vec())
        .collect();

    let eval = |probe: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = probe.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = build(&mut tape, &ids);
        tape.value(out).item().unwrap()
    };

    let mut sup = 1e-6_f64;
    for g in &analytic {
        for &v in g {
            sup = sup.max(v.abs());
        }
    }

    for (i, tensor) in inputs.iter().enumerate() {
        for j in 0..tensor.len() {
            let mut up = inputs.to_vec();
            let mut data = tensor.data().to_vec();
            data[j] += h;
            up[i] = Tensor::new(tensor.shape().to_vec(), data.clone()).unwrap();
            let mut down = inputs.to_vec();
            data[j] -= 2.0 * h;
            down[i] = Tensor::new(tensor.shape().to_vec(), data).unwrap();
            let numeric = (eval(&up) - eval(&down)) / (2.0 * h);
            let err = (analytic[i][j] - numeric).abs() / sup.max(numeric.abs());
            prop_assert_ok(err < tol, i, j, analytic[i][j], numeric);
        }
    }
}

fn prop_assert_ok(ok: bool, input: usize, scalar: usize, analytic: f64, numeric: f64) {
    assert!(
        ok,
        "input {input} scalar {scalar}: analytic {analytic} vs numeric {numeric}"
    );
}

/// Values bounded away from zero so relu kinks stay clear of the probe.
fn off_kink() -> impl Strategy<Value = f64> {
    (0.1f64..1.5, prop::bool::ANY).prop_map(|(m, neg)| if neg { -m } else { m })
}

fn tensor_strategy(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let len: usize = shape.iter().product();
    prop::collection::vec(off_kink(), len)
        .prop_map(move |data| Tensor::new(shape.clone(), data).unwrap())
}

/// Random read-out: sum(x * r) with a fixed random direction r.
fn head(tape: &mut Tape, x: NodeId, r: &Tensor) -> NodeId {
    let rc = tape.constant(r.clone());
    let prod = tape.mul(x, rc).unwrap();
    tape.sum(prod).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn unary_op_chains_match_fd(
        x in tensor_strategy(vec![2, 3]),
        r in tensor_strategy(vec![2, 3]),
        ops in prop::collection::vec(0usize..5, 1..4),
    ) {
        let build = move |tape: &mut Tape, ids: &[NodeId]| {
            let mut cur = ids[0];
            for &op in &ops {
                cur = match op {
                    0 => tape.relu(cur).unwrap(),
                    1 => tape.tanh(cur).unwrap(),
                    2 => tape.row_softmax(cur).unwrap(),
                    3 => tape.row_log_softmax(cur).unwrap(),
                    _ => tape.scale(cur, 0.7).unwrap(),
                };
            }
            head(tape, cur, &r)
        };
        assert_matches_fd(&[x], &build, 1e-5, 1e-4);
    }

    #[test]
    fn matmul_chain_matches_fd(
        a in tensor_strategy(vec![2, 3]),
        b in tensor_strategy(vec![3, 2]),
        r in tensor_strategy(vec![2, 2]),
    ) {
        let build = move |tape: &mut Tape, ids: &[NodeId]| {
            let m = tape.matmul(ids[0], ids[1]).unwrap();
            let t = tape.tanh(m).unwrap();
            head(tape, t, &r)
        };
        assert_matches_fd(&[a, b], &build, 1e-5, 1e-4);
    }

    #[test]
    fn batched_attention_pattern_matches_fd(
        q in tensor_strategy(vec![2, 3, 2]),
        k in tensor_strategy(vec![2, 3, 2]),
        r in tensor_strategy(vec![2, 3, 3]),
    ) {
        let build = move |tape: &mut Tape, ids: &[NodeId]| {
            let kt = tape.transpose_last(ids[1]).unwrap();
            let scores = tape.batch_matmul(ids[0], kt).unwrap();
            let scaled = tape.scale(scores, 0.6).unwrap();
            let attn = tape.row_softmax(scaled).unwrap();
            head(tape, attn, &r)
        };
        assert_matches_fd(&[q, k], &build, 1e-5, 1e-4);
    }

    #[test]
    fn reductions_match_fd(
        x in tensor_strategy(vec![2, 4, 3]),
        r in tensor_strategy(vec![2, 3]),
    ) {
        let build = move |tape: &mut Tape, ids: &[NodeId]| {
            let pooled = tape.mean_axis(ids[0], 1).unwrap();
            let t = tape.tanh(pooled).unwrap();
            head(tape, t, &r)
        };
        assert_matches_fd(&[x], &build, 1e-5, 1e-4);
    }

    #[test]
    fn elementwise_combo_matches_fd(
        a in tensor_strategy(vec![3, 2]),
        b in tensor_strategy(vec![3, 2]),
        bias in tensor_strategy(vec![2]),
        r in tensor_strategy(vec![3, 2]),
    ) {
        let build = move |tape: &mut Tape, ids: &[NodeId]| {
            let prod = tape.mul(ids[0], ids[1]).unwrap();
            let biased = tape.add_bias(prod, ids[2]).unwrap();
            let s = tape.row_softmax(biased).unwrap();
            head(tape, s, &r)
        };
        assert_matches_fd(&[a, b, bias], &build, 1e-5, 1e-4);
    }

    #[test]
    fn cross_entropy_matches_fd(
        logits in tensor_strategy(vec![3, 4]),
        labels in prop::collection::vec(0usize..4, 3),
    ) {
        let build = move |tape: &mut Tape, ids: &[NodeId]| {
            loss::cross_entropy(tape, ids[0], &labels).unwrap()
        };
        assert_matches_fd(&[logits], &build, 1e-5, 1e-4);
    }

    #[test]
    fn bidirectional_kl_matches_fd(
        a in tensor_strategy(vec![2, 3]),
        b in tensor_strategy(vec![2, 3]),
    ) {
        let build = move |tape: &mut Tape, ids: &[NodeId]| {
            loss::bidirectional_kl(tape, ids[0], ids[1]).unwrap()
        };
        assert_matches_fd(&[a, b], &build, 1e-5, 1e-4);
    }

    #[test]
    fn kl_is_nonnegative_and_vanishes_only_at_equality(
        a in tensor_strategy(vec![2, 3]),
        b in tensor_strategy(vec![2, 3]),
    ) {
        let mut tape = Tape::new();
        let na = tape.constant(a.clone());
        let nb = tape.constant(b.clone());
        let kl = loss::bidirectional_kl(&mut tape, na, nb).unwrap();
        let v = tape.value(kl).item().unwrap();
        prop_assert!(v >= -1e-12);

        let pa = tape.row_softmax(na).unwrap();
        let pb = tape.row_softmax(nb).unwrap();
        let max_gap = tape
            .value(pa)
            .data()
            .iter()
            .zip(tape.value(pb).data())
            .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
        if max_gap > 1e-6 {
            prop_assert!(v > 0.0, "kl {v} with distribution gap {max_gap}");
        }

        let mut tape2 = Tape::new();
        let xa = tape2.constant(a.clone());
        let xa2 = tape2.constant(a);
        let same = loss::bidirectional_kl(&mut tape2, xa, xa2).unwrap();
        prop_assert!(tape2.value(same).item().unwrap().abs() < 1e-12);
    }

    #[test]
    fn auroc_is_invariant_under_monotone_score_maps(
        base in prop::collection::vec(0.001f64..0.499, 4..40),
        split_at in 2usize..10,
        a in 0.2f64..3.0,
        b in -1.0f64..1.0,
    ) {
        let split = split_at.min(base.len() - 2).max(2);
        let (neg, pos) = base.split_at(split);
        // strictly increasing map into (0, 0.5): order of scores preserved
        let warp = |s: f64| 0.5 / (1.0 + (-(a * s + b)).exp());
        let records = |scores: &[f64], tag: SplitTag, warped: bool| -> Vec<EvalRecord> {
            scores
                .iter()
                .map(|&s| {
                    let score = if warped { warp(s) } else { s };
                    let conf = 1.0 - score;
                    EvalRecord::new(vec![conf, 1.0 - conf], Some(0), tag).unwrap()
                })
                .collect()
        };
        let plain = auroc_msp(
            &records(neg, SplitTag::InDistribution, false),
            &records(pos, SplitTag::Anomaly, false),
        )
        .unwrap();
        let warped = auroc_msp(
            &records(neg, SplitTag::InDistribution, true),
            &records(pos, SplitTag::Anomaly, true),
        )
        .unwrap();
        prop_assert!((plain - warped).abs() < 1e-12);
    }
}

/// The perturbation direction is the gradient of the task loss at the
/// embedding output; a symmetric bump of each embedding entry must
/// reproduce it. This pins down that the adversarial step direction is
/// well defined at exactly that tensor.
#[test]
fn embedding_gradient_matches_finite_differences() {
    use roast_core::adversarial::perturbation_direction;
    use roast_core::loss::cross_entropy;
    use roast_core::model::{Model, ModelSpec, TokenBatch};
    use roast_core::rng::RandomSource;

    let mut rng = RandomSource::new(314);
    for trial in 0..10 {
        let model = Model::new(ModelSpec::mlp(10, 4, vec![6], 3), trial).unwrap();
        let rows: Vec<Vec<usize>> = (0..3)
            .map(|_| (0..5).map(|_| rng.below(10)).collect())
            .collect();
        let labels: Vec<usize> = (0..3).map(|_| rng.below(3)).collect();
        let batch = TokenBatch::from_rows(&rows).unwrap();

        let analytic = perturbation_direction(&model, &batch, &labels).unwrap();
        let base = model.embedding_values(&batch).unwrap();

        let eval = |emb: Tensor| -> f64 {
            let mut tape = Tape::new();
            let pass = model.forward_embeddings(&mut tape, emb).unwrap();
            let ce = cross_entropy(&mut tape, pass.logits, &labels).unwrap();
            tape.value(ce).item().unwrap()
        };

        let h = 1e-5;
        let scale = analytic
            .data()
            .iter()
            .fold(1e-6_f64, |m, &v| m.max(v.abs()));
        for j in 0..base.len() {
            let mut up = base.data().to_vec();
            up[j] += h;
            let mut down = base.data().to_vec();
            down[j] -= h;
            let fd = (eval(Tensor::new(base.shape().to_vec(), up).unwrap())
                - eval(Tensor::new(base.shape().to_vec(), down).unwrap()))
                / (2.0 * h);
            let err = (analytic.data()[j] - fd).abs() / scale;
            assert!(err < 1e-4, "trial {trial} entry {j}: err {err}");
        }
    }
}
