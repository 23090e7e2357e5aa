//! Domain types shared across the crate.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the mixture simplex constraint.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Parameter vector of one model. Every entry is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVec(DVector<f64>);

impl ParamVec {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        Ok(ParamVec(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVec(DVector::zeros(dim))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

impl AsRef<DVector<f64>> for ParamVec {
    fn as_ref(&self) -> &DVector<f64> {
        &self.0
    }
}

/// Which of the two models a quantity belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Theta,
    Phi,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Theta => Side::Phi,
            Side::Phi => Side::Theta,
        }
    }
}

/// Data-source weights of one model's training mixture.
///
/// `cross_fraction` is the share of the synthetic and curated data that was
/// produced by the peer model rather than by the model itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub lambda_real: f64,
    pub lambda_synth: f64,
    pub lambda_cur: f64,
    pub cross_fraction: f64,
}

impl MixtureSpec {
    /// Builds and validates in one step.
    pub fn new(lambda_real: f64, lambda_synth: f64, lambda_cur: f64, cross_fraction: f64) -> Result<Self> {
        validate_mixture(MixtureSpec {
            lambda_real,
            lambda_synth,
            lambda_cur,
            cross_fraction,
        })
    }

    /// Share of data that depends on the models (synthetic plus curated).
    pub fn model_share(&self) -> f64 {
        self.lambda_synth + self.lambda_cur
    }
}

/// Checks the simplex constraint and the unit-interval bounds.
pub fn validate_mixture(spec: MixtureSpec) -> Result<MixtureSpec> {
    let parts = [
        ("lambda_real", spec.lambda_real),
        ("lambda_synth", spec.lambda_synth),
        ("lambda_cur", spec.lambda_cur),
        ("cross_fraction", spec.cross_fraction),
    ];
    for (name, v) in parts {
        if !v.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("{name} = {v} outside [0, 1]")));
        }
    }
    let sum = spec.lambda_real + spec.lambda_synth + spec.lambda_cur;
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        let shown = (sum * 1e12).round() / 1e12;
        return Err(Error::invalid(format!("mixture weights sum to {shown}, expected 1")));
    }
    Ok(spec)
}

/// Order in which the two models are refit within one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateSchedule {
    #[default]
    Synchronous,
    AsyncThetaFirst,
    AsyncPhiFirst,
}

/// Seed for every random stream of a run.
///
/// All randomness flows through ChaCha8 (`rand_chacha::ChaCha8Rng`); derived
/// streams mix the base seed with a stream index through SplitMix64. Both
/// choices are part of the artifact's reproducibility contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RunSeed(pub u64);

impl RunSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent seed for stream `index` (replica, sweep point, ...).
    pub fn derive(self, index: u64) -> RunSeed {
        RunSeed(splitmix64(self.0 ^ splitmix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15))))
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Regularity constants of the convergence and curation-impact theory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityConstants {
    /// Strong-convexity modulus of the θ loss.
    pub gamma_theta: f64,
    pub gamma_phi: f64,
    /// Smoothness of the θ loss in data and parameters.
    pub l_theta: f64,
    pub l_phi: f64,
    /// Wasserstein sensitivity of the θ training distribution.
    pub eps_theta: f64,
    pub eps_phi: f64,
    /// Lipschitz constant shared by models and rewards.
    pub lipschitz_l: f64,
    /// Bound on data-space norms.
    pub data_bound_b: f64,
    /// Candidates drawn per curation step.
    pub curation_k: u32,
}

impl RegularityConstants {
    /// Symmetric constants with unit Lipschitz/bound terms, handy for sweeps.
    pub fn symmetric(gamma: f64, l: f64, eps: f64) -> Self {
        RegularityConstants {
            gamma_theta: gamma,
            gamma_phi: gamma,
            l_theta: l,
            l_phi: l,
            eps_theta: eps,
            eps_phi: eps,
            lipschitz_l: 1.0,
            data_bound_b: 1.0,
            curation_k: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma_theta", self.gamma_theta),
            ("gamma_phi", self.gamma_phi),
            ("l_theta", self.l_theta),
            ("l_phi", self.l_phi),
            ("lipschitz_l", self.lipschitz_l),
            ("data_bound_b", self.data_bound_b),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("eps_theta", self.eps_theta), ("eps_phi", self.eps_phi)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.curation_k < 1 {
            return Err(Error::invalid("curation_k must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_examples() {
        assert!(MixtureSpec::new(0.5, 0.0, 0.5, 1.0).is_ok());
        assert!(MixtureSpec::new(1.0, 0.0, 0.0, 0.0).is_ok());
        let err = MixtureSpec::new(0.5, 0.2, 0.2, 0.0).unwrap_err();
        assert!(err.to_string().contains("0.9"), "{err}");
    }

    #[test]
    fn mixture_accepts_decimal_roundoff() {
        // 0.1 + 0.2 != 0.3 in binary floating point
        assert!(MixtureSpec::new(0.7, 0.1, 0.2, 0.5).is_ok());
        assert!(MixtureSpec::new(0.1, 0.2, 0.7, 0.5).is_ok());
    }

    #[test]
    fn mixture_rejects_negative_and_nan() {
        assert!(MixtureSpec::new(1.2, -0.2, 0.0, 0.0).is_err());
        assert!(MixtureSpec::new(f64::NAN, 0.5, 0.5, 0.0).is_err());
        assert!(MixtureSpec::new(0.5, 0.5, 0.0, 1.5).is_err());
    }

    #[test]
    fn param_vec_rejects_non_finite() {
        assert!(ParamVec::from_slice(&[1.0, f64::INFINITY]).is_err());
        assert_eq!(ParamVec::from_slice(&[3.0, 4.0]).unwrap().norm(), 5.0);
    }

    #[test]
    fn derived_seeds_differ() {
        let base = RunSeed(7);
        assert_ne!(base.derive(0), base.derive(1));
        assert_eq!(base.derive(3), RunSeed(7).derive(3));
    }

    #[test]
    fn schedule_serde_names() {
        let s: UpdateSchedule = serde_json::from_str("\"async-theta-first\"").unwrap();
        assert_eq!(s, UpdateSchedule::AsyncThetaFirst);
    }
}
