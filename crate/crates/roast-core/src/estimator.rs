//! Monte-Carlo verification of the masked-gradient estimator's moments.
//!
//! Under the Gaussian per-sample gradient model, the inverse-probability
//! scaled masked gradient has mean equal to the true gradient and
//! per-coordinate variance
//!
//! ```text
//! Var[g_i] = (sigma^2 / B) / p_i + (1 - p_i) * mu_i^2 / p_i
//! ```
//!
//! This module evaluates those closed forms, simulates the estimator with
//! a seeded stream, and checks the Frobenius bound on the covariance at
//! the smallest keep probability.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, CoreResult};
use crate::rng::RandomSource;

/// One verification scenario.
#[derive(Debug, Clone)]
pub struct EstimatorScenario {
    /// True gradient per coordinate.
    pub mean: Vec<f64>,
    /// Per-sample gradient noise standard deviation.
    pub noise_std: f64,
    /// Batch size the per-draw gradient is averaged over.
    pub batch_size: usize,
    /// Keep probability per coordinate, in (0, 1].
    pub keep_prob: Vec<f64>,
    /// Monte-Carlo draw count.
    pub draws: usize,
}

impl EstimatorScenario {
    pub fn validate(&self) -> CoreResult<()> {
        let fail = |d: alloc::string::String| Err(CoreError::InvalidArgument { detail: d });
        if self.mean.len() != self.keep_prob.len() || self.mean.is_empty() {
            return fail("mean and keep_prob must be non-empty and equal length".to_string());
        }
        if self.noise_std < 0.0 {
            return fail("noise std must be non-negative".to_string());
        }
        if self.batch_size == 0 {
            return fail("batch size must be >= 1".to_string());
        }
        if self.keep_prob.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return fail("keep probabilities must lie in (0, 1]".to_string());
        }
        if self.draws < 10_000 {
            return fail(alloc::format!("need at least 10^4 draws, got {}", self.draws));
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }
}

/// Closed-form mean and per-coordinate variance of the scaled estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

pub fn theoretical_moments(scenario: &EstimatorScenario) -> CoreResult<Moments> {
    scenario.validate()?;
    let batch_var = scenario.noise_std * scenario.noise_std / scenario.batch_size as f64;
    let variance = scenario
        .mean
        .iter()
        .zip(&scenario.keep_prob)
        .map(|(&mu, &p)| batch_var / p + (1.0 - p) * mu * mu / p)
        .collect();
    Ok(Moments {
        mean: scenario.mean.clone(),
        variance,
    })
}

/// Empirical moments from simulation.
#[derive(Debug, Clone)]
pub struct EmpiricalMoments {
    pub mean: Vec<f64>,
    /// Per-coordinate sample variance.
    pub variance: Vec<f64>,
    /// Full sample covariance, row-major `d x d`.
    pub covariance: Vec<f64>,
    /// Standard error of each coordinate's mean.
    pub standard_error: Vec<f64>,
    pub draws: usize,
}

fn simulate(
    scenario: &EstimatorScenario,
    seed: u64,
    scaled: bool,
) -> CoreResult<EmpiricalMoments> {
    scenario.validate()?;
    let d = scenario.dims();
    let b = scenario.batch_size;
    let inv_b = 1.0 / b as f64;
    let mut rng = RandomSource::new(seed);

    // multivariate Welford: running mean plus co-moment matrix
    let mut mean = vec![0.0; d];
    let mut comoment = vec![0.0; d * d];
    let mut delta = vec![0.0; d];
    let mut sample = vec![0.0; d];

    for n in 1..=scenario.draws {
        for (i, slot) in sample.iter_mut().enumerate() {
            // batch-mean gradient; sigma = 0 is the point mass at mu
            let g = if scenario.noise_std == 0.0 {
                scenario.mean[i]
            } else {
                let mut acc = 0.0;
                for _ in 0..b {
                    acc += rng.normal_scaled(scenario.mean[i], scenario.noise_std);
                }
                acc * inv_b
            };
            let p = scenario.keep_prob[i];
            *slot = if rng.bernoulli(p) {
                if scaled {
                    g / p
                } else {
                    g
                }
            } else {
                0.0
            };
        }
        let inv_n = 1.0 / n as f64;
        for i in 0..d {
            delta[i] = sample[i] - mean[i];
            mean[i] += delta[i] * inv_n;
        }
        for i in 0..d {
            let post_i = sample[i] - mean[i];
            for j in 0..d {
                comoment[i * d + j] += delta[j] * post_i;
            }
        }
    }

    let denom = (scenario.draws - 1) as f64;
    let covariance: Vec<f64> = comoment.iter().map(|&c| c / denom).collect();
    let variance: Vec<f64> = (0..d).map(|i| covariance[i * d + i]).collect();
    let standard_error = variance
        .iter()
        .map(|&v| libm::sqrt(v.max(0.0) / scenario.draws as f64))
        .collect();
    Ok(EmpiricalMoments {
        mean,
        variance,
        covariance,
        standard_error,
        draws: scenario.draws,
    })
}

/// Simulates the inverse-probability scaled estimator `g * m / p`.
pub fn simulate_masked_estimator(
    scenario: &EstimatorScenario,
    seed: u64,
) -> CoreResult<EmpiricalMoments> {
    simulate(scenario, seed, true)
}

/// Negative control: the unscaled estimator `g * m`, whose mean is `p * mu`.
pub fn simulate_unscaled_estimator(
    scenario: &EstimatorScenario,
    seed: u64,
) -> CoreResult<EmpiricalMoments> {
    simulate(scenario, seed, false)
}

/// Result of the covariance-norm bound check.
#[derive(Debug, Clone)]
pub struct BoundCheck {
    pub holds: bool,
    /// Slack remaining: bound (with 5% tolerance) minus the empirical norm.
    pub margin: f64,
    pub empirical_frobenius: f64,
    pub bound_frobenius: f64,
}

/// Checks `||Sigma_empirical||_F <= d * ||bound(p_min)||_F` with 5% slack,
/// where the bound is the diagonal variance formula evaluated at the
/// smallest keep probability.
pub fn covariance_bound_check(scenario: &EstimatorScenario, seed: u64) -> CoreResult<BoundCheck> {
    scenario.validate()?;
    let empirical = simulate_masked_estimator(scenario, seed)?;
    let emp_frob = libm::sqrt(empirical.covariance.iter().map(|&c| c * c).sum::<f64>());

    let p_hat = scenario
        .keep_prob
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let batch_var = scenario.noise_std * scenario.noise_std / scenario.batch_size as f64;
    let bound_diag: Vec<f64> = scenario
        .mean
        .iter()
        .map(|&mu| batch_var / p_hat + (1.0 - p_hat) * mu * mu / p_hat)
        .collect();
    let bound_frob =
        scenario.dims() as f64 * libm::sqrt(bound_diag.iter().map(|&b| b * b).sum::<f64>());

    let allowance = bound_frob * 1.05;
    Ok(BoundCheck {
        holds: emp_frob <= allowance,
        margin: allowance - emp_frob,
        empirical_frobenius: emp_frob,
        bound_frobenius: bound_frob,
    })
}

/// The standard verification grid: gradient means in {0, +-1, +-3}, noise
/// std in {0, 1, 2} and batch sizes in {1, 4, 16}, each scenario carrying
/// three coordinates with keep probabilities [0.1, 0.5, 0.9].
pub fn standard_grid(draws: usize) -> Vec<EstimatorScenario> {
    let mut grid = Vec::new();
    for &mu in &[0.0, 1.0, -1.0, 3.0, -3.0] {
        for &sigma in &[0.0, 1.0, 2.0] {
            for &batch in &[1usize, 4, 16] {
                grid.push(EstimatorScenario {
                    mean: vec![mu; 3],
                    noise_std: sigma,
                    batch_size: batch,
                    keep_prob: vec![0.1, 0.5, 0.9],
                    draws,
                });
            }
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(mean: Vec<f64>, sigma: f64, batch: usize, p: Vec<f64>, draws: usize) -> EstimatorScenario {
        EstimatorScenario {
            mean,
            noise_std: sigma,
            batch_size: batch,
            keep_prob: p,
            draws,
        }
    }

    #[test]
    fn full_keep_probability_reduces_to_batch_variance() {
        let s = scenario(vec![2.0], 1.5, 5, vec![1.0], 10_000);
        let m = theoretical_moments(&s).unwrap();
        assert_eq!(m.mean, vec![2.0]);
        assert!((m.variance[0] - 1.5 * 1.5 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn noiseless_half_probability_enumeration() {
        // g in {0, 2} equiprobable: mean 1, variance 1
        let s = scenario(vec![1.0], 0.0, 1, vec![0.5], 10_000);
        let m = theoretical_moments(&s).unwrap();
        assert_eq!(m.mean, vec![1.0]);
        assert_eq!(m.variance, vec![1.0]);
    }

    #[test]
    fn formula_arithmetic_example() {
        let s = scenario(vec![3.0], 2.0, 4, vec![0.8], 10_000);
        let m = theoretical_moments(&s).unwrap();
        assert!((m.variance[0] - 3.5).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_rejected() {
        let s = scenario(vec![1.0], 1.0, 1, vec![0.0], 10_000);
        assert!(theoretical_moments(&s).is_err());
    }

    #[test]
    fn simulation_is_seed_deterministic() {
        let s = scenario(vec![1.0, -2.0], 1.0, 4, vec![0.3, 0.8], 10_000);
        let a = simulate_masked_estimator(&s, 99).unwrap();
        let b = simulate_masked_estimator(&s, 99).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.variance, b.variance);
    }

    #[test]
    fn empirical_mean_tracks_true_gradient() {
        let s = scenario(vec![1.0, -3.0, 0.0], 1.0, 4, vec![0.2, 0.5, 0.9], 100_000);
        let emp = simulate_masked_estimator(&s, 7).unwrap();
        for i in 0..3 {
            let tol = 3.0 * emp.standard_error[i];
            assert!(
                (emp.mean[i] - s.mean[i]).abs() <= tol,
                "coordinate {i}: {} vs {} (tol {tol})",
                emp.mean[i],
                s.mean[i]
            );
        }
    }

    #[test]
    fn empirical_variance_tracks_formula() {
        let s = scenario(vec![2.0, -1.0], 1.5, 4, vec![0.25, 0.75], 200_000);
        let emp = simulate_masked_estimator(&s, 11).unwrap();
        let th = theoretical_moments(&s).unwrap();
        for i in 0..2 {
            let rel = (emp.variance[i] - th.variance[i]).abs() / th.variance[i];
            assert!(rel < 0.05, "coordinate {i}: rel err {rel}");
        }
    }

    #[test]
    fn unscaled_estimator_is_biased() {
        let s = scenario(vec![2.0], 0.5, 4, vec![0.25], 100_000);
        let emp = simulate_unscaled_estimator(&s, 5).unwrap();
        // mean approaches p * mu = 0.5, far from mu = 2
        assert!((emp.mean[0] - 0.5).abs() < 0.05);
        assert!((emp.mean[0] - 2.0).abs() > 1.0);
    }

    #[test]
    fn bound_holds_on_mixed_probabilities() {
        let s = scenario(vec![1.0, 1.0], 1.0, 2, vec![0.2, 0.9], 50_000);
        let check = covariance_bound_check(&s, 3).unwrap();
        assert!(check.holds, "margin {}", check.margin);
        assert!(check.margin > 0.0);
    }

    #[test]
    fn bound_has_dimension_slack_under_uniform_probability() {
        // with equal keep probabilities the bound's diagonal matches the
        // true variance, so the d-factor alone provides the slack
        let s = scenario(vec![1.0, -2.0, 0.5], 1.0, 2, vec![0.5, 0.5, 0.5], 50_000);
        let check = covariance_bound_check(&s, 9).unwrap();
        assert!(check.holds);
        // empirical norm is close to the single-matrix norm, bound is d times it
        assert!(check.bound_frobenius > 2.5 * check.empirical_frobenius);
    }

    #[test]
    fn bound_degenerate_case_is_zero_on_both_sides() {
        let s = scenario(vec![0.0], 0.0, 1, vec![1.0], 10_000);
        let check = covariance_bound_check(&s, 1).unwrap();
        assert!(check.holds);
        assert_eq!(check.empirical_frobenius, 0.0);
        assert_eq!(check.bound_frobenius, 0.0);
    }

    #[test]
    fn grid_has_45_scenarios() {
        let grid = standard_grid(10_000);
        assert_eq!(grid.len(), 45);
        assert!(grid.iter().all(|s| s.dims() == 3));
    }
}
