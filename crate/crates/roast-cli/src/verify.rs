//! Verification suites behind the `verify-estimator` and `gradcheck`
//! subcommands.

use roast_core::adversarial::NormScope;
use roast_core::estimator::{self, EstimatorScenario};
use roast_core::gradcheck::{check_loss_gradients, CheckObjective};
use roast_core::model::{Model, ModelSpec, TokenBatch};
use roast_core::rng::RandomSource;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub mean: Vec<f64>,
    pub noise_std: f64,
    pub batch_size: usize,
    pub keep_prob: Vec<f64>,
    /// Every coordinate's empirical mean within 3 standard errors of truth.
    pub unbiased_ok: bool,
    /// Worst |empirical mean - truth| / standard error over coordinates.
    pub max_mean_gap_se: f64,
    /// Relative variance agreement over coordinates with positive variance;
    /// absent when the scenario is fully deterministic.
    pub variance_ok: Option<bool>,
    pub max_variance_rel_err: Option<f64>,
    pub bound_ok: bool,
    pub bound_margin: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub mean_draws: usize,
    pub variance_draws: usize,
    pub scenarios: Vec<ScenarioReport>,
    pub unbiased_passes: usize,
    pub variance_passes: usize,
    pub variance_checked: usize,
    pub bound_passes: usize,
    /// Statistical acceptance: at most one 3-sigma miss over the grid,
    /// every positive-variance scenario within 5%, every bound holding.
    pub all_ok: bool,
}

/// Runs the 45-scenario verification grid.
pub fn run_estimator_verification(
    mean_draws: usize,
    variance_draws: usize,
    seed: u64,
) -> Result<EstimatorReport, CliError> {
    let grid = estimator::standard_grid(mean_draws);
    let mut scenarios = Vec::with_capacity(grid.len());
    for (idx, scenario) in grid.iter().enumerate() {
        let theory = estimator::theoretical_moments(scenario)?;

        let emp_mean = estimator::simulate_masked_estimator(scenario, seed ^ (idx as u64))?;
        let mut max_gap_se = 0.0_f64;
        let mut unbiased_ok = true;
        for i in 0..scenario.dims() {
            let gap = (emp_mean.mean[i] - theory.mean[i]).abs();
            let se = emp_mean.standard_error[i];
            if se == 0.0 {
                if gap > 0.0 {
                    unbiased_ok = false;
                }
                continue;
            }
            max_gap_se = max_gap_se.max(gap / se);
            if gap > 3.0 * se {
                unbiased_ok = false;
            }
        }

        let var_scenario = EstimatorScenario {
            draws: variance_draws,
            ..scenario.clone()
        };
        let emp_var = estimator::simulate_masked_estimator(&var_scenario, seed ^ (1000 + idx as u64))?;
        let mut max_rel = 0.0_f64;
        let mut any_positive = false;
        for i in 0..scenario.dims() {
            if theory.variance[i] <= 0.0 {
                continue;
            }
            any_positive = true;
            let rel = (emp_var.variance[i] - theory.variance[i]).abs() / theory.variance[i];
            max_rel = max_rel.max(rel);
        }
        let (variance_ok, max_variance_rel_err) = if any_positive {
            (Some(max_rel < 0.05), Some(max_rel))
        } else {
            (None, None)
        };

        let bound_scenario = EstimatorScenario {
            draws: mean_draws,
            ..scenario.clone()
        };
        let bound = estimator::covariance_bound_check(&bound_scenario, seed ^ (2000 + idx as u64))?;

        scenarios.push(ScenarioReport {
            mean: scenario.mean.clone(),
            noise_std: scenario.noise_std,
            batch_size: scenario.batch_size,
            keep_prob: scenario.keep_prob.clone(),
            unbiased_ok,
            max_mean_gap_se: max_gap_se,
            variance_ok,
            max_variance_rel_err,
            bound_ok: bound.holds,
            bound_margin: bound.margin,
        });
    }

    let unbiased_passes = scenarios.iter().filter(|s| s.unbiased_ok).count();
    let variance_checked = scenarios.iter().filter(|s| s.variance_ok.is_some()).count();
    let variance_passes = scenarios
        .iter()
        .filter(|s| s.variance_ok == Some(true))
        .count();
    let bound_passes = scenarios.iter().filter(|s| s.bound_ok).count();
    let total = scenarios.len();
    let all_ok = unbiased_passes + 1 >= total
        && variance_passes == variance_checked
        && bound_passes == total;
    Ok(EstimatorReport {
        mean_draws,
        variance_draws,
        scenarios,
        unbiased_passes,
        variance_passes,
        variance_checked,
        bound_passes,
        all_ok,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradcheckInstance {
    pub kind: String,
    pub objective: String,
    pub scalars: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub instances: Vec<GradcheckInstance>,
    pub max_rel_err: f64,
    pub ok: bool,
}

/// Finite-difference sweep over randomized linear, MLP and transformer
/// instances, alternating plain and adversarial objectives.
pub fn run_gradcheck(
    instances_per_kind: usize,
    tolerance: f64,
    seed: u64,
) -> Result<GradcheckReport, CliError> {
    let mut rng = RandomSource::new(seed);
    let mut instances = Vec::new();
    let kinds = ["linear", "mlp", "tiny-transformer"];
    for kind in kinds {
        for i in 0..instances_per_kind {
            let vocab = 6 + rng.below(6);
            let d = 3 + rng.below(4);
            let classes = 2 + rng.below(3);
            let spec = match kind {
                "linear" => ModelSpec::linear(vocab, d, classes),
                "mlp" => ModelSpec::mlp(vocab, d, vec![4 + rng.below(5)], classes),
                _ => ModelSpec::tiny_transformer(vocab, d, 4 + rng.below(5), classes, 1 + i % 2),
            };
            let mut model = Model::new(spec, rng.next_u64())?;
            let seq = 4 + rng.below(3);
            let rows: Vec<Vec<usize>> = (0..3)
                .map(|_| (0..seq).map(|_| rng.below(vocab)).collect())
                .collect();
            let labels: Vec<usize> = (0..3).map(|_| rng.below(classes)).collect();
            let batch = TokenBatch::from_rows(&rows)?;
            let objective = if i % 2 == 0 {
                CheckObjective::Task
            } else {
                CheckObjective::Adversarial {
                    delta: 0.05,
                    lambda: 0.1,
                    scope: NormScope::PerExample,
                }
            };
            let report = check_loss_gradients(&mut model, &batch, &labels, objective, 1e-5)?;
            instances.push(GradcheckInstance {
                kind: kind.into(),
                objective: match objective {
                    CheckObjective::Task => "task".into(),
                    CheckObjective::Adversarial { .. } => "adversarial".into(),
                },
                scalars: report.scalars,
                max_rel_err: report.max_rel_err,
            });
        }
    }
    let max_rel_err = instances
        .iter()
        .fold(0.0_f64, |m, i| m.max(i.max_rel_err));
    Ok(GradcheckReport {
        tolerance,
        ok: max_rel_err < tolerance,
        max_rel_err,
        instances,
    })
}
