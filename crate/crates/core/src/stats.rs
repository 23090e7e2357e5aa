//! Monte Carlo estimates with normal-approximation confidence intervals,
//! finite-difference oracles and the finite-sample estimators of the
//! Gaussian loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dynamics::{run_loop, tail_mean, Allocation, LoopOptions, TAIL_WINDOW};
use crate::error::{Error, Result};
use crate::gaussian::{FixedPoint, GaussianSystem};
use crate::types::{RunSeed, UpdateSchedule};

pub const Z_95: f64 = 1.96;
pub const DEFAULT_REPLICAS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    pub mean: f64,
    pub half_width: f64,
    pub n_replicas: usize,
    pub level: f64,
}

impl EstimateWithCI {
    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }

    pub fn covers(&self, x: f64) -> bool {
        self.lower() <= x && x <= self.upper()
    }
}

/// Mean ± 1.96·sd/√n over `values`.
pub fn summarize(values: &[f64]) -> Result<EstimateWithCI> {
    let n = values.len();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 replicas, got {n}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("replica values".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(EstimateWithCI {
        mean,
        half_width: Z_95 * (var / n as f64).sqrt(),
        n_replicas: n,
        level: 0.95,
    })
}

/// Runs `f` on replica seeds `seed.derive(0..n)` in parallel; results keep
/// replica order.
pub fn mc_values<T, F>(n_replicas: usize, seed: RunSeed, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(RunSeed) -> Result<T> + Sync,
{
    (0..n_replicas as u64)
        .into_par_iter()
        .map(|r| f(seed.derive(r)))
        .collect()
}

pub fn mc_estimate<F>(n_replicas: usize, seed: RunSeed, statistic: F) -> Result<EstimateWithCI>
where
    F: Fn(RunSeed) -> Result<f64> + Sync,
{
    if n_replicas < 2 {
        return Err(Error::invalid(format!("need at least 2 replicas, got {n_replicas}")));
    }
    summarize(&mc_values(n_replicas, seed, statistic)?)
}

/// `(f(λ₀ + h) − f(λ₀ − h))/(2h)`.
pub fn fd_derivative<F>(f: F, lambda0: f64, step: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!("step must be positive, got {step}")));
    }
    Ok((f(lambda0 + step)? - f(lambda0 - step)?) / (2.0 * step))
}

/// Pearson goodness-of-fit statistic and its upper-tail p-value.
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> Result<(f64, f64)> {
    if counts.len() != probs.len() || counts.len() < 2 {
        return Err(Error::invalid("need matching counts and probabilities for at least 2 cells"));
    }
    let total: u64 = counts.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * total as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).map_err(|e| Error::invalid(e.to_string()))?;
    Ok((stat, 1.0 - dist.cdf(stat)))
}

/// Protocol for estimating the stable point from finite batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiniteSampleProtocol {
    pub n: usize,
    pub iterations: usize,
    /// Inclusive iteration window averaged into `θ̂*`, `φ̂*`.
    pub window: (usize, usize),
    pub allocation: Allocation,
    pub replicas: usize,
    pub schedule: UpdateSchedule,
}

impl FiniteSampleProtocol {
    pub fn new(n: usize) -> Self {
        FiniteSampleProtocol {
            n,
            iterations: TAIL_WINDOW.1,
            window: TAIL_WINDOW,
            allocation: Allocation::Multinomial,
            replicas: DEFAULT_REPLICAS,
            schedule: UpdateSchedule::Synchronous,
        }
    }
}

/// Tail-mean stable-point estimate of one finite-sample run.
pub fn finite_sample_fixed_point(
    sys: &GaussianSystem,
    protocol: &FiniteSampleProtocol,
    seed: RunSeed,
) -> Result<FixedPoint> {
    let opts = LoopOptions::finite(protocol.iterations, protocol.n, protocol.allocation).with_schedule(protocol.schedule);
    let traj = run_loop(sys, &opts, seed)?;
    tail_mean(&traj, protocol.window.0, protocol.window.1)
}

/// Per-replica `J(θ̂_r) + (η/2)‖θ̂_r − θ̄‖²·R/(R−1)`.
///
/// The added term is the unbiased correction for the concavity of `J`, so the
/// replica mean estimates `J(E θ̂)` rather than `E J(θ̂)`.
fn debiased_rewards(sys: &GaussianSystem, fps: &[FixedPoint]) -> (Vec<f64>, Vec<f64>) {
    let r = fps.len() as f64;
    let mean = |f: &dyn Fn(&FixedPoint) -> &nalgebra::DVector<f64>| {
        fps.iter().fold(nalgebra::DVector::zeros(sys.dim()), |a, fp| a + f(fp)) / r
    };
    let tbar = mean(&|fp| &fp.theta);
    let pbar = mean(&|fp| &fp.phi);
    let k = r / (r - 1.0);
    let jp = fps
        .iter()
        .map(|fp| sys.reward_p(&fp.theta) + 0.5 * sys.eta_p * (&fp.theta - &tbar).norm_squared() * k)
        .collect();
    let jq = fps
        .iter()
        .map(|fp| sys.reward_q(&fp.phi) + 0.5 * sys.eta_q * (&fp.phi - &pbar).norm_squared() * k)
        .collect();
    (jp, jq)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardEstimates {
    pub j_p: EstimateWithCI,
    pub j_q: EstimateWithCI,
}

/// Debiased reward estimates from per-replica stable-point estimates.
pub fn rewards_from_fixed_points(sys: &GaussianSystem, fps: &[FixedPoint]) -> Result<RewardEstimates> {
    let (jp, jq) = debiased_rewards(sys, fps);
    Ok(RewardEstimates {
        j_p: summarize(&jp)?,
        j_q: summarize(&jq)?,
    })
}

/// Monte Carlo estimates of `J_p(θ*)`, `J_q(φ*)`.
pub fn finite_sample_rewards(
    sys: &GaussianSystem,
    protocol: &FiniteSampleProtocol,
    seed: RunSeed,
) -> Result<RewardEstimates> {
    let fps = mc_values(protocol.replicas, seed, |s| finite_sample_fixed_point(sys, protocol, s))?;
    rewards_from_fixed_points(sys, &fps)
}

/// Monte Carlo estimates of `∂J_p/∂λ_H^θ`, `∂J_q/∂λ_H^θ` by central
/// differences at `λ ± step` with common random numbers: replica `r` uses the
/// same seed on both sides.
pub fn finite_sample_derivatives(
    sys: &GaussianSystem,
    protocol: &FiniteSampleProtocol,
    step: f64,
    seed: RunSeed,
) -> Result<RewardEstimates> {
    if !(step > 0.0) {
        return Err(Error::invalid("step must be positive"));
    }
    let lambda = sys.lambda_cur();
    let hi = sys.with_curation(lambda + step)?;
    let lo = sys.with_curation(lambda - step)?;
    let pairs = mc_values(protocol.replicas, seed, |s| {
        Ok((
            finite_sample_fixed_point(&hi, protocol, s)?,
            finite_sample_fixed_point(&lo, protocol, s)?,
        ))
    })?;
    let (fh, fl): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let (jp_h, jq_h) = debiased_rewards(&hi, &fh);
    let (jp_l, jq_l) = debiased_rewards(&lo, &fl);
    let diff = |a: &[f64], b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| (x - y) / (2.0 * step)).collect()
    };
    Ok(RewardEstimates {
        j_p: summarize(&diff(&jp_h, &jp_l))?,
        j_q: summarize(&diff(&jq_h, &jq_l))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_statistic_has_zero_width() {
        let e = mc_estimate(10, RunSeed(1), |_| Ok(2.5)).unwrap();
        assert_eq!(e.mean, 2.5);
        assert_eq!(e.half_width, 0.0);
        assert!(mc_estimate(1, RunSeed(1), |_| Ok(0.0)).is_err());
    }

    #[test]
    fn fd_examples() {
        let d = fd_derivative(|x| Ok(x * x), 0.3, 1e-4).unwrap();
        assert_relative_eq!(d, 0.6, epsilon = 1e-10);
        let d = fd_derivative(|x| Ok(3.0 * x - 1.0), 0.3, 0.25).unwrap();
        assert_relative_eq!(d, 3.0, epsilon = 1e-14);
        assert!(fd_derivative(|x| Ok(x), 0.3, 0.0).is_err());
    }

    #[test]
    fn chi_square_perfect_fit() {
        let (stat, p) = chi_square_gof(&[25, 75], &[0.25, 0.75]).unwrap();
        assert_eq!(stat, 0.0);
        assert_relative_eq!(p, 1.0, epsilon = 1e-12);
        let (_, p) = chi_square_gof(&[75, 25], &[0.25, 0.75]).unwrap();
        assert!(p < 1e-6);
    }

    #[test]
    fn replica_order_is_stable() {
        let a = mc_values(50, RunSeed(9), |s| Ok(s.0)).unwrap();
        let b = mc_values(50, RunSeed(9), |s| Ok(s.0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[3], RunSeed(9).derive(3).0);
    }
}
