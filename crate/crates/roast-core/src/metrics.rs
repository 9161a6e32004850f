//! Multi-perspective robustness metrics.
//!
//! Accuracy over labeled splits, expected calibration error, anomaly-
//! detection AUROC from maximum softmax probability, the per-metric
//! relative-improvement aggregate, and mean competition rank.

use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};

/// Default number of equal-width calibration bins.
pub const DEFAULT_ECE_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    InDistribution,
    Shifted,
    Adversarial,
    Anomaly,
}

/// One evaluated example: predicted class distribution plus ground truth.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    dist: Vec<f64>,
    label: Option<usize>,
    pub split: SplitTag,
}

impl EvalRecord {
    pub fn new(dist: Vec<f64>, label: Option<usize>, split: SplitTag) -> CoreResult<Self> {
        let sum: f64 = dist.iter().sum();
        if dist.is_empty() || libm::fabs(sum - 1.0) > 1e-9 || dist.iter().any(|&p| p < 0.0) {
            return Err(CoreError::InvalidArgument {
                detail: alloc::format!("distribution must be non-negative and sum to 1, got sum {sum}"),
            });
        }
        if let Some(l) = label {
            if l >= dist.len() {
                return Err(CoreError::LabelOutOfRange {
                    label: l,
                    classes: dist.len(),
                });
            }
        }
        Ok(EvalRecord { dist, label, split })
    }

    pub fn distribution(&self) -> &[f64] {
        &self.dist
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    /// Predicted class; ties break toward the lowest class index.
    pub fn predicted(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.dist.iter().enumerate().skip(1) {
            if p > self.dist[best] {
                best = i;
            }
        }
        best
    }

    /// Maximum softmax probability.
    pub fn confidence(&self) -> f64 {
        self.dist[self.predicted()]
    }

    /// Anomaly score: `1 - confidence`.
    pub fn anomaly_score(&self) -> f64 {
        1.0 - self.confidence()
    }
}

/// Accuracy as a percentage in [0, 100].
pub fn accuracy(records: &[EvalRecord]) -> CoreResult<f64> {
    if records.is_empty() {
        return Err(CoreError::EmptyInput { op: "accuracy" });
    }
    let mut correct = 0usize;
    for r in records {
        let label = r.label.ok_or(CoreError::InvalidArgument {
            detail: "accuracy needs labeled records".to_string(),
        })?;
        if r.predicted() == label {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / records.len() as f64)
}

/// Expected calibration error as a percentage.
///
/// Confidence is the maximum softmax probability, binned into `bins`
/// equal-width right-closed intervals over (0, 1]; the result is the
/// bin-weighted mean absolute gap between bin accuracy and bin confidence.
pub fn expected_calibration_error(records: &[EvalRecord], bins: usize) -> CoreResult<f64> {
    if records.is_empty() {
        return Err(CoreError::EmptyInput { op: "ece" });
    }
    if bins == 0 {
        return Err(CoreError::InvalidArgument {
            detail: "ece needs at least one bin".to_string(),
        });
    }
    let mut count = alloc::vec![0usize; bins];
    let mut conf_sum = alloc::vec![0.0; bins];
    let mut correct = alloc::vec![0usize; bins];
    for r in records {
        let label = r.label.ok_or(CoreError::InvalidArgument {
            detail: "ece needs labeled records".to_string(),
        })?;
        let conf = r.confidence();
        let idx = (libm::ceil(conf * bins as f64) as usize)
            .saturating_sub(1)
            .min(bins - 1);
        count[idx] += 1;
        conf_sum[idx] += conf;
        if r.predicted() == label {
            correct[idx] += 1;
        }
    }
    let n = records.len() as f64;
    let mut ece = 0.0;
    for b in 0..bins {
        if count[b] == 0 {
            continue;
        }
        let acc_b = correct[b] as f64 / count[b] as f64;
        let conf_b = conf_sum[b] / count[b] as f64;
        ece += (count[b] as f64 / n) * libm::fabs(acc_b - conf_b);
    }
    Ok(100.0 * ece)
}

/// AUROC of the maximum-softmax-probability anomaly score, as a fraction.
///
/// Mann-Whitney definition: the probability that an anomaly sample scores
/// strictly above an in-distribution sample, counting ties as one half.
/// Small inputs are scored by exhaustive pairwise comparison; larger ones
/// by the rank statistic with midrank tie handling (identical value).
pub fn auroc_msp(in_records: &[EvalRecord], anomaly_records: &[EvalRecord]) -> CoreResult<f64> {
    if in_records.is_empty() || anomaly_records.is_empty() {
        return Err(CoreError::EmptyInput { op: "auroc" });
    }
    let neg: Vec<f64> = in_records.iter().map(|r| r.anomaly_score()).collect();
    let pos: Vec<f64> = anomaly_records.iter().map(|r| r.anomaly_score()).collect();
    if neg.len() + pos.len() <= 10_000 {
        Ok(auroc_pairwise(&neg, &pos))
    } else {
        Ok(auroc_ranked(&neg, &pos))
    }
}

fn auroc_pairwise(neg: &[f64], pos: &[f64]) -> f64 {
    let mut score = 0.0;
    for &p in pos {
        for &n in neg {
            if p > n {
                score += 1.0;
            } else if p == n {
                score += 0.5;
            }
        }
    }
    score / (neg.len() as f64 * pos.len() as f64)
}

fn auroc_ranked(neg: &[f64], pos: &[f64]) -> f64 {
    let mut pooled: Vec<(f64, bool)> = neg
        .iter()
        .map(|&s| (s, false))
        .chain(pos.iter().map(|&s| (s, true)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // midrank of the tie group [i, j): ranks are 1-based
        let midrank = (i + 1 + j) as f64 / 2.0;
        for item in &pooled[i..j] {
            if item.1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let (n_pos, n_neg) = (pos.len() as f64, neg.len() as f64);
    let u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
    u / (n_pos * n_neg)
}

/// The five-metric robustness summary of one method.
///
/// Accuracies and ECE are percentages; AUROC is a fraction in [0, 1]
/// (reports may display `100 * auroc`, but the relative-improvement
/// aggregate consumes the fraction).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricVector {
    pub acc_in: f64,
    pub acc_shift: f64,
    pub acc_adv: f64,
    pub ece: f64,
    pub auroc: f64,
}

impl MetricVector {
    pub fn validate(&self) -> CoreResult<()> {
        let pct = |v: f64| (0.0..=100.0).contains(&v);
        if !(pct(self.acc_in) && pct(self.acc_shift) && pct(self.acc_adv) && pct(self.ece)) {
            return Err(CoreError::InvalidArgument {
                detail: "accuracy/ece values must lie in [0,100]".to_string(),
            });
        }
        if !(0.0..=1.0).contains(&self.auroc) {
            return Err(CoreError::InvalidArgument {
                detail: alloc::format!("auroc must lie in [0,1], got {}", self.auroc),
            });
        }
        Ok(())
    }
}

const METRIC_NAMES: [&str; 5] = ["acc_in", "acc_shift", "acc_adv", "ece", "auroc"];

/// Mean relative improvement over a baseline, as a percentage.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeImprovement {
    pub value: f64,
    /// Metrics whose baseline already sits at the best score; these terms
    /// are excluded rather than divided by zero.
    pub excluded: Vec<&'static str>,
}

/// Per-metric relative improvement `(s - s_base) / (s_max - s_base)`,
/// averaged over the five metrics and scaled to a percentage. The best
/// score is 100 for accuracies, 0 for ECE and 1 for AUROC.
pub fn relative_improvement(method: &MetricVector, base: &MetricVector) -> RelativeImprovement {
    let terms = [
        (method.acc_in, base.acc_in, 100.0),
        (method.acc_shift, base.acc_shift, 100.0),
        (method.acc_adv, base.acc_adv, 100.0),
        (method.ece, base.ece, 0.0),
        (method.auroc, base.auroc, 1.0),
    ];
    let mut sum = 0.0;
    let mut included = 0usize;
    let mut excluded = Vec::new();
    for (i, &(s, s_base, s_max)) in terms.iter().enumerate() {
        if s_max == s_base {
            excluded.push(METRIC_NAMES[i]);
            continue;
        }
        sum += (s - s_base) / (s_max - s_base);
        included += 1;
    }
    let value = if included == 0 {
        0.0
    } else {
        100.0 * sum / included as f64
    };
    RelativeImprovement { value, excluded }
}

/// Mean competition rank per method across the five metrics.
///
/// Rank 1 is best (highest accuracy/AUROC, lowest ECE); ties receive the
/// mean of the positions they span.
pub fn average_rank(methods: &[MetricVector]) -> CoreResult<Vec<f64>> {
    if methods.len() < 2 {
        return Err(CoreError::InvalidArgument {
            detail: "average rank needs at least 2 methods".to_string(),
        });
    }
    type Column = (fn(&MetricVector) -> f64, bool);
    let n = methods.len();
    let mut totals = alloc::vec![0.0; n];
    let columns: [Column; 5] = [
        (|m| m.acc_in, true),
        (|m| m.acc_shift, true),
        (|m| m.acc_adv, true),
        (|m| m.ece, false),
        (|m| m.auroc, true),
    ];
    for (get, higher_better) in columns {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let (va, vb) = (get(&methods[a]), get(&methods[b]));
            if higher_better {
                vb.total_cmp(&va)
            } else {
                va.total_cmp(&vb)
            }
        });
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j < n && get(&methods[order[j]]) == get(&methods[order[i]]) {
                j += 1;
            }
            let mean_rank = (i + 1 + j) as f64 / 2.0;
            for &idx in &order[i..j] {
                totals[idx] += mean_rank;
            }
            i = j;
        }
    }
    Ok(totals.into_iter().map(|t| t / 5.0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rec(dist: &[f64], label: Option<usize>) -> EvalRecord {
        EvalRecord::new(dist.to_vec(), label, SplitTag::InDistribution).unwrap()
    }

    #[test]
    fn accuracy_examples() {
        let all = vec![rec(&[0.9, 0.1], Some(0)), rec(&[0.2, 0.8], Some(1))];
        assert_eq!(accuracy(&all).unwrap(), 100.0);

        let quarter = vec![
            rec(&[0.9, 0.1], Some(0)),
            rec(&[0.9, 0.1], Some(1)),
            rec(&[0.9, 0.1], Some(1)),
            rec(&[0.9, 0.1], Some(1)),
        ];
        assert_eq!(accuracy(&quarter).unwrap(), 25.0);

        // tie breaks toward the lowest class index
        let tie = vec![rec(&[0.5, 0.5], Some(0))];
        assert_eq!(accuracy(&tie).unwrap(), 100.0);

        assert!(accuracy(&[]).is_err());
    }

    #[test]
    fn record_rejects_bad_distribution() {
        assert!(EvalRecord::new(vec![0.5, 0.6], Some(0), SplitTag::InDistribution).is_err());
        assert!(EvalRecord::new(vec![1.2, -0.2], Some(0), SplitTag::InDistribution).is_err());
        assert!(EvalRecord::new(vec![0.5, 0.5], Some(2), SplitTag::InDistribution).is_err());
    }

    #[test]
    fn ece_perfect_calibration_is_zero() {
        let records = vec![rec(&[1.0, 0.0], Some(0)), rec(&[0.0, 1.0], Some(1))];
        assert_eq!(expected_calibration_error(&records, 10).unwrap(), 0.0);
    }

    #[test]
    fn ece_hand_binned_example() {
        // confidences [.95,.95,.65,.65], correctness [1,1,1,0]
        // bin (0.9,1.0]: weight .5, |1 - .95| = .05
        // bin (0.6,0.7]: weight .5, |.5 - .65| = .15
        let records = vec![
            rec(&[0.95, 0.05], Some(0)),
            rec(&[0.95, 0.05], Some(0)),
            rec(&[0.65, 0.35], Some(0)),
            rec(&[0.65, 0.35], Some(1)),
        ];
        let ece = expected_calibration_error(&records, 10).unwrap();
        assert!((ece - 10.0).abs() < 1e-12, "got {ece}");
    }

    #[test]
    fn ece_single_wrong_sample() {
        let records = vec![rec(&[0.7, 0.3], Some(1))];
        let ece = expected_calibration_error(&records, 10).unwrap();
        assert!((ece - 70.0).abs() < 1e-12);
    }

    #[test]
    fn ece_is_permutation_invariant() {
        let a = vec![
            rec(&[0.95, 0.05], Some(0)),
            rec(&[0.6, 0.4], Some(1)),
            rec(&[0.8, 0.2], Some(0)),
        ];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(
            expected_calibration_error(&a, 10).unwrap(),
            expected_calibration_error(&b, 10).unwrap()
        );
    }

    fn anomaly(dist: &[f64]) -> EvalRecord {
        EvalRecord::new(dist.to_vec(), None, SplitTag::Anomaly).unwrap()
    }

    #[test]
    fn auroc_examples() {
        // perfectly separated: anomalies less confident than in-dist
        let ins = vec![rec(&[0.99, 0.01], Some(0)), rec(&[0.98, 0.02], Some(0))];
        let outs = vec![anomaly(&[0.6, 0.4]), anomaly(&[0.55, 0.45])];
        assert_eq!(auroc_msp(&ins, &outs).unwrap(), 1.0);

        // identical confidence on both sides: all ties
        let ins = vec![rec(&[0.7, 0.3], Some(0))];
        let outs = vec![anomaly(&[0.7, 0.3]), anomaly(&[0.3, 0.7])];
        // second anomaly also has confidence 0.7 (max prob), so all ties
        assert_eq!(auroc_msp(&ins, &outs).unwrap(), 0.5);

        // in MSP [0.9, 0.6], anomaly MSP [0.7, 0.2] -> 3/4 over all 4 pairs
        let ins = vec![
            rec(&[0.9, 0.025, 0.025, 0.025, 0.025], Some(0)),
            rec(&[0.6, 0.1, 0.1, 0.1, 0.1], Some(0)),
        ];
        let outs = vec![
            anomaly(&[0.7, 0.075, 0.075, 0.075, 0.075]),
            anomaly(&[0.2, 0.2, 0.2, 0.2, 0.2]),
        ];
        assert_eq!(auroc_msp(&ins, &outs).unwrap(), 0.75);
    }

    #[test]
    fn auroc_complement_symmetry() {
        let ins = vec![
            rec(&[0.9, 0.1], Some(0)),
            rec(&[0.6, 0.4], Some(0)),
            rec(&[0.75, 0.25], Some(0)),
        ];
        let outs = vec![anomaly(&[0.7, 0.3]), anomaly(&[0.2, 0.8])];
        let forward = auroc_msp(&ins, &outs).unwrap();
        let backward = auroc_msp(&outs, &ins).unwrap();
        assert!((forward + backward - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ranked_matches_pairwise_with_ties() {
        let neg = vec![0.1, 0.3, 0.3, 0.5, 0.9];
        let pos = vec![0.3, 0.5, 0.7, 0.9];
        assert!((auroc_pairwise(&neg, &pos) - auroc_ranked(&neg, &pos)).abs() < 1e-12);
    }

    fn table_vanilla() -> MetricVector {
        MetricVector {
            acc_in: 96.29,
            acc_shift: 91.79,
            acc_adv: 66.30,
            ece: 7.11,
            auroc: 0.8672,
        }
    }

    fn table_best() -> MetricVector {
        MetricVector {
            acc_in: 96.87,
            acc_shift: 92.38,
            acc_adv: 72.57,
            ece: 5.45,
            auroc: 0.9037,
        }
    }

    #[test]
    fn relative_improvement_of_self_is_zero() {
        let v = table_vanilla();
        let r = relative_improvement(&v, &v);
        assert_eq!(r.value, 0.0);
        assert!(r.excluded.is_empty());
    }

    #[test]
    fn relative_improvement_reference_rows() {
        let r = relative_improvement(&table_best(), &table_vanilla());
        assert!((r.value - 18.39).abs() <= 0.25, "got {}", r.value);
    }

    #[test]
    fn relative_improvement_ece_term() {
        // isolated ECE movement: (5.45-7.11)/(0-7.11) = 0.2335 per Eq. arithmetic
        let base = table_vanilla();
        let mut method = base;
        method.ece = 5.45;
        let r = relative_improvement(&method, &base);
        assert!((r.value - 100.0 * 0.2335 / 5.0).abs() < 0.01);
    }

    #[test]
    fn relative_improvement_excludes_degenerate_metrics() {
        let mut base = table_vanilla();
        base.ece = 0.0; // baseline already perfect
        let method = table_best();
        let r = relative_improvement(&method, &base);
        assert_eq!(r.excluded, vec!["ece"]);
        assert!(r.value.is_finite());
    }

    #[test]
    fn relative_improvement_is_linear_per_metric() {
        // slope in acc_adv alone is 1 / (s_max - s_base) / 5, in percent
        let base = table_vanilla();
        let mut m1 = base;
        let mut m2 = base;
        m1.acc_adv += 1.0;
        m2.acc_adv += 2.0;
        let r1 = relative_improvement(&m1, &base).value;
        let r2 = relative_improvement(&m2, &base).value;
        let slope = 100.0 / (100.0 - base.acc_adv) / 5.0;
        assert!((r1 - slope).abs() < 1e-12);
        assert!((r2 - 2.0 * slope).abs() < 1e-12);
    }

    #[test]
    fn average_rank_dominating_method() {
        let worse = table_vanilla();
        let better = table_best();
        let ranks = average_rank(&[better, worse]).unwrap();
        assert_eq!(ranks, vec![1.0, 2.0]);
    }

    #[test]
    fn average_rank_identical_methods_split_ties() {
        let v = table_vanilla();
        let ranks = average_rank(&[v, v]).unwrap();
        assert_eq!(ranks, vec![1.5, 1.5]);
    }

    #[test]
    fn average_rank_hand_fixture() {
        let a = MetricVector {
            acc_in: 90.0,
            acc_shift: 80.0,
            acc_adv: 70.0,
            ece: 5.0,
            auroc: 0.9,
        };
        let b = MetricVector {
            acc_in: 92.0,
            acc_shift: 78.0,
            acc_adv: 70.0,
            ece: 4.0,
            auroc: 0.8,
        };
        let c = MetricVector {
            acc_in: 91.0,
            acc_shift: 82.0,
            acc_adv: 60.0,
            ece: 6.0,
            auroc: 0.85,
        };
        // hand-ranked per metric (1 = best):
        // acc_in:    a=3, b=1, c=2
        // acc_shift: a=2, b=3, c=1
        // acc_adv:   a=1.5, b=1.5, c=3
        // ece:       a=2, b=1, c=3
        // auroc:     a=1, b=3, c=2
        let ranks = average_rank(&[a, b, c]).unwrap();
        assert!((ranks[0] - (3.0 + 2.0 + 1.5 + 2.0 + 1.0) / 5.0).abs() < 1e-12);
        assert!((ranks[1] - (1.0 + 3.0 + 1.5 + 1.0 + 3.0) / 5.0).abs() < 1e-12);
        assert!((ranks[2] - (2.0 + 1.0 + 3.0 + 3.0 + 2.0) / 5.0).abs() < 1e-12);
    }

    #[test]
    fn average_rank_needs_two_methods() {
        assert!(average_rank(&[table_vanilla()]).is_err());
    }

    #[test]
    fn rank_sums_are_conserved() {
        let methods = [table_vanilla(), table_best(), {
            let mut m = table_vanilla();
            m.acc_in = 95.0;
            m
        }];
        let ranks = average_rank(&methods).unwrap();
        let total: f64 = ranks.iter().sum::<f64>() * 5.0;
        // sum over metrics of n(n+1)/2 = 5 * 6 = 30
        assert!((total - 30.0).abs() < 1e-9);
        assert!(ranks.iter().all(|&r| (1.0..=3.0).contains(&r)));
    }
}
