//! Experiment configuration: JSON documents, validation and presets.

use std::path::{Path, PathBuf};

use curloop::dynamics::{Allocation, SampleMode, DEFAULT_DIVERGENCE_BOUND, TAIL_WINDOW};
use curloop::gaussian::{REFERENCE_ETA_P, REFERENCE_ETA_Q, DEFAULT_SIGMA};
use curloop::linalg::matrix_from_rows;
use curloop::stats::{FiniteSampleProtocol, DEFAULT_REPLICAS};
use curloop::{
    BetaSchedule, BlockCouplingSpec, Error, GaussianSystem, MixtureSpec, RegularityConstants, Result, RunSeed,
    UpdateSchedule,
};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_ITERATIONS: usize = 100;
pub const DEFAULT_FD_STEP: f64 = 0.05;
pub const DEFAULT_LAMBDA_CUR: f64 = 0.4;

fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}

/// Reference block-rotation system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub t: f64,
    /// `λ_H^θ`; leave out when `theta_mix` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_cur: Option<f64>,
    #[serde(default)]
    pub beta_schedule: BetaSchedule,
    /// Explicit magnitudes; overrides `beta_schedule`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angles_deg: Option<Vec<f64>>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_eta_p")]
    pub eta_p: f64,
    #[serde(default = "default_eta_q")]
    pub eta_q: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_mix: Option<MixtureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_mix: Option<MixtureSpec>,
}

/// System with literal coupling matrices (rows) and linear rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiteralSpec {
    pub w1: Vec<Vec<f64>>,
    pub w2: Vec<Vec<f64>>,
    pub a: Vec<f64>,
    pub g_p: Vec<f64>,
    pub g_q: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_phi: Option<Vec<f64>>,
    #[serde(default)]
    pub eta_p: f64,
    #[serde(default)]
    pub eta_q: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_cur: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_mix: Option<MixtureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_mix: Option<MixtureSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SystemSpec {
    Gaussian(GaussianSpec),
    /// The two-dimensional text/image example at curation weight `lambda_cur`.
    TextImage {
        #[serde(default)]
        lambda_cur: f64,
    },
    Literal(LiteralSpec),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default)]
    pub t: Vec<f64>,
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub n: Vec<usize>,
}

impl SweepAxes {
    pub fn is_empty(&self) -> bool {
        self.t.is_empty() && self.lambda.is_empty() && self.n.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    #[serde(default)]
    pub schedule: UpdateSchedule,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_mode")]
    pub sample_mode: SampleMode,
    #[serde(default)]
    pub sweep: SweepAxes,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    /// Inclusive iteration window averaged into the stable-point estimate.
    #[serde(default = "default_window")]
    pub tail_window: (usize, usize),
    /// λ step of the Monte Carlo derivative.
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default = "default_bound")]
    pub divergence_bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<RegularityConstants>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn default_sigma() -> f64 {
    DEFAULT_SIGMA
}
fn default_eta_p() -> f64 {
    REFERENCE_ETA_P
}
fn default_eta_q() -> f64 {
    REFERENCE_ETA_Q
}
fn default_iterations() -> usize {
    DEFAULT_ITERATIONS
}
fn default_mode() -> SampleMode {
    SampleMode::Exact
}
fn default_replicas() -> usize {
    DEFAULT_REPLICAS
}
fn default_window() -> (usize, usize) {
    TAIL_WINDOW
}
fn default_fd_step() -> f64 {
    DEFAULT_FD_STEP
}
fn default_bound() -> f64 {
    DEFAULT_DIVERGENCE_BOUND
}

fn vector(name: &str, v: &[f64]) -> Result<DVector<f64>> {
    if v.is_empty() {
        return Err(invalid(format!("{name} is empty")));
    }
    Ok(DVector::from_column_slice(v))
}

fn apply_mixes(
    mut sys: GaussianSystem,
    lambda_cur: Option<f64>,
    theta_mix: Option<MixtureSpec>,
    phi_mix: Option<MixtureSpec>,
) -> Result<GaussianSystem> {
    if lambda_cur.is_some() && theta_mix.is_some() {
        return Err(invalid("give either lambda_cur or theta_mix, not both"));
    }
    if let Some(l) = lambda_cur {
        sys = sys.with_curation(l)?;
    }
    sys.with_mixtures(theta_mix.unwrap_or(sys.theta_mix), phi_mix.unwrap_or(sys.phi_mix))
}

impl SystemSpec {
    pub fn is_gaussian(&self) -> bool {
        matches!(self, SystemSpec::Gaussian(_))
    }

    /// Builds the system, optionally overriding the coupling scale and `λ_H^θ`.
    pub fn build_at(&self, t: Option<f64>, lambda_cur: Option<f64>) -> Result<GaussianSystem> {
        let sys = match self {
            SystemSpec::Gaussian(g) => {
                let mut blocks = BlockCouplingSpec::with_schedule(t.unwrap_or(g.t), g.beta_schedule);
                if let Some(b) = &g.betas {
                    blocks.betas = b.clone();
                }
                if let Some(a) = &g.angles_deg {
                    blocks.angles_deg = a.clone();
                }
                let mut sys = GaussianSystem::from_blocks(blocks, 0.0)?;
                sys.sigma = g.sigma;
                sys.eta_p = g.eta_p;
                sys.eta_q = g.eta_q;
                let lambda = match g.theta_mix {
                    None => Some(g.lambda_cur.unwrap_or(DEFAULT_LAMBDA_CUR)),
                    Some(_) => g.lambda_cur,
                };
                apply_mixes(sys, lambda, g.theta_mix, g.phi_mix)?
            }
            SystemSpec::TextImage { lambda_cur } => {
                if t.is_some() {
                    return Err(invalid("the example system has no coupling scale"));
                }
                GaussianSystem::example_text_image(*lambda_cur)?
            }
            SystemSpec::Literal(l) => {
                if t.is_some() {
                    return Err(invalid("literal systems have no coupling scale"));
                }
                let mut sys = GaussianSystem::literal(
                    matrix_from_rows(&l.w1)?,
                    matrix_from_rows(&l.w2)?,
                    vector("a", &l.a)?,
                    vector("g_p", &l.g_p)?,
                    vector("g_q", &l.g_q)?,
                    0.0,
                )?;
                if let Some(b) = &l.shift_phi {
                    sys.shift_phi = vector("shift_phi", b)?;
                }
                sys.eta_p = l.eta_p;
                sys.eta_q = l.eta_q;
                sys.sigma = l.sigma;
                apply_mixes(sys, l.lambda_cur, l.theta_mix, l.phi_mix)?
            }
        };
        let sys = match lambda_cur {
            Some(l) => sys.with_curation(l)?,
            None => sys,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn build(&self) -> Result<GaussianSystem> {
        self.build_at(None, None)
    }

    pub fn base_t(&self) -> Option<f64> {
        match self {
            SystemSpec::Gaussian(g) => Some(g.t),
            _ => None,
        }
    }
}

impl ExperimentConfig {
    pub fn new(system: SystemSpec) -> Self {
        ExperimentConfig {
            system,
            schedule: UpdateSchedule::Synchronous,
            iterations: DEFAULT_ITERATIONS,
            sample_mode: SampleMode::Exact,
            sweep: SweepAxes::default(),
            replicas: DEFAULT_REPLICAS,
            tail_window: TAIL_WINDOW,
            fd_step: DEFAULT_FD_STEP,
            seed: 0,
            workers: None,
            divergence_bound: DEFAULT_DIVERGENCE_BOUND,
            constants: None,
            out_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Checks everything a command could trip over, before any output exists.
    pub fn validate(&self) -> Result<()> {
        let base = self.system.build()?;
        if self.iterations < 1 {
            return Err(invalid("iterations must be at least 1"));
        }
        let (from, to) = self.tail_window;
        if from > to || to > self.iterations {
            return Err(invalid(format!(
                "tail window {from}..={to} outside 0..={}",
                self.iterations
            )));
        }
        if self.replicas < 2 {
            return Err(invalid(format!("replicas must be at least 2, got {}", self.replicas)));
        }
        if !(self.fd_step > 0.0 && self.fd_step < 0.5) {
            return Err(invalid(format!("fd_step must be in (0, 0.5), got {}", self.fd_step)));
        }
        if !(self.divergence_bound > 0.0) {
            return Err(invalid("divergence_bound must be positive"));
        }
        if self.workers == Some(0) {
            return Err(invalid("workers must be at least 1"));
        }
        if let SampleMode::Finite { n, .. } = self.sample_mode {
            if n == 0 {
                return Err(invalid("finite sample mode needs n >= 1"));
            }
        }
        if let Some(c) = &self.constants {
            c.validate()?;
        }
        if !self.system.is_gaussian() && !self.sweep.t.is_empty() {
            return Err(invalid("a t grid needs a gaussian system"));
        }
        if let Some(t) = self.sweep.t.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(invalid(format!("t grid value {t} must be finite and >= 0")));
        }
        let max_cur = 1.0 - base.theta_mix.lambda_real;
        for &l in &self.sweep.lambda {
            if !(l - self.fd_step >= 0.0 && l + self.fd_step <= max_cur) {
                return Err(invalid(format!(
                    "lambda grid value {l} with fd_step {} leaves [0, {max_cur}]",
                    self.fd_step
                )));
            }
        }
        if self.sweep.n.contains(&0) {
            return Err(invalid("n grid values must be at least 1"));
        }
        Ok(())
    }

    pub fn run_seed(&self) -> RunSeed {
        RunSeed(self.seed)
    }

    pub fn allocation(&self) -> Allocation {
        match self.sample_mode {
            SampleMode::Finite { allocation, .. } => allocation,
            SampleMode::Exact => Allocation::Multinomial,
        }
    }

    pub fn protocol(&self, n: usize) -> FiniteSampleProtocol {
        FiniteSampleProtocol {
            n,
            iterations: self.iterations,
            window: self.tail_window,
            allocation: self.allocation(),
            replicas: self.replicas,
            schedule: self.schedule,
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring the worker count and
    /// output location.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.workers = None;
        canon.out_dir = None;
        let bytes = serde_json::to_vec(&canon).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

pub const PRESETS: [&str; 3] = ["gaussian-ref", "text-image", "decoupled"];

/// Named configurations for the reproduction scenarios.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let gaussian = |t: f64| {
        SystemSpec::Gaussian(GaussianSpec {
            t,
            lambda_cur: Some(DEFAULT_LAMBDA_CUR),
            beta_schedule: BetaSchedule::default(),
            betas: None,
            angles_deg: None,
            sigma: DEFAULT_SIGMA,
            eta_p: REFERENCE_ETA_P,
            eta_q: REFERENCE_ETA_Q,
            theta_mix: None,
            phi_mix: None,
        })
    };
    let cfg = match name {
        "gaussian-ref" => {
            let mut c = ExperimentConfig::new(gaussian(0.2));
            c.sweep = SweepAxes {
                t: vec![0.2, 0.9],
                lambda: vec![0.3, 0.35, 0.4, 0.45, 0.5],
                n: vec![4, 12, 64],
            };
            c
        }
        "text-image" => ExperimentConfig::new(SystemSpec::TextImage { lambda_cur: 0.0 }),
        "decoupled" => ExperimentConfig::new(gaussian(0.0)),
        other => {
            return Err(invalid(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESETS.join(", ")
            )))
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

/// `t ∈ {0.05, 0.10, …, 1.00}`.
pub fn reference_t_grid() -> Vec<f64> {
    (1..=20).map(|k| 0.05 * k as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_hash_stably() {
        for name in PRESETS {
            let c = preset(name).unwrap();
            assert_eq!(c.hash(), preset(name).unwrap().hash());
            assert_eq!(c.hash().len(), 64);
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn hash_ignores_workers_but_not_seed() {
        let a = preset("gaussian-ref").unwrap();
        let mut b = a.clone();
        b.workers = Some(3);
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn json_roundtrip() {
        let c = preset("gaussian-ref").unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn minimal_document() {
        let c = ExperimentConfig::from_json(r#"{"system": {"kind": "gaussian", "t": 0.9}}"#).unwrap();
        let sys = c.system.build().unwrap();
        assert_eq!(sys.lambda_cur(), 0.4);
        assert_eq!(c.iterations, 100);
        assert_eq!(c.replicas, 200);
    }

    #[test]
    fn rejects_bad_documents() {
        let bad = [
            r#"{"system": {"kind": "gaussian", "t": -1}}"#,
            r#"{"system": {"kind": "gaussian", "t": 0.2, "betas": [1, 2]}}"#,
            r#"{"system": {"kind": "gaussian", "t": 0.2, "lambda_cur": 0.4, "theta_mix": {"lambda_real": 0, "lambda_synth": 0.6, "lambda_cur": 0.4, "cross_fraction": 1}}}"#,
            r#"{"system": {"kind": "gaussian", "t": 0.2, "theta_mix": {"lambda_real": 0.5, "lambda_synth": 0.2, "lambda_cur": 0.2, "cross_fraction": 1}}}"#,
            r#"{"system": {"kind": "gaussian", "t": 0.2}, "replicas": 1}"#,
            r#"{"system": {"kind": "gaussian", "t": 0.2}, "tail_window": [81, 120]}"#,
            r#"{"system": {"kind": "gaussian", "t": 0.2}, "sweep": {"lambda": [0.99]}}"#,
            r#"{"system": {"kind": "gaussian", "t": 0.2}, "sweep": {"n": [0]}}"#,
            r#"{"system": {"kind": "text-image"}, "sweep": {"t": [0.2]}}"#,
            r#"{"system": {"kind": "gaussian", "t": 0.2}, "colour": 1}"#,
            r#"{"system": {"kind": "literal", "w1": [[1, 0]], "w2": [[1]], "a": [1], "g_p": [1], "g_q": [1]}}"#,
        ];
        for doc in bad {
            assert!(ExperimentConfig::from_json(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn literal_matches_example() {
        let doc = r#"{"system": {"kind": "literal", "w1": [[1, 0], [0, 1]], "w2": [[-1.2857142857142858, 0.8571428571428571], [0.8571428571428571, 0.42857142857142855]],
            "a": [1, -1], "g_p": [1, 0], "g_q": [0, 0]}}"#;
        let lit = ExperimentConfig::from_json(doc).unwrap().system.build().unwrap();
        let ex = GaussianSystem::example_text_image(0.0).unwrap();
        assert!((lit.phi_from_theta - ex.phi_from_theta).amax() < 1e-15);
        assert_eq!(lit.theta_mix, ex.theta_mix);
    }
}
