//! The iterative retraining loop: mixture batches, Bradley-Terry curation,
//! refits and convergence diagnostics.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{FixedPoint, GaussianSystem};
use crate::types::{MixtureSpec, ParamVec, RunSeed, Side, UpdateSchedule};

pub const DEFAULT_DIVERGENCE_BOUND: f64 = 1e6;
pub const DEFAULT_CURATION_K: usize = 2;

/// Provenance of one training sample, from the consuming model's viewpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceTag {
    Real,
    SelfSynth,
    CrossSynth,
    SelfCurated,
    CrossCurated,
}

impl SourceTag {
    pub const ALL: [SourceTag; 5] = [
        SourceTag::Real,
        SourceTag::SelfSynth,
        SourceTag::CrossSynth,
        SourceTag::SelfCurated,
        SourceTag::CrossCurated,
    ];

    pub fn is_cross(self) -> bool {
        matches!(self, SourceTag::CrossSynth | SourceTag::CrossCurated)
    }
}

/// Per-tag weights of a mixture, in `SourceTag::ALL` order.
pub fn tag_weights(spec: &MixtureSpec) -> [f64; 5] {
    let c = spec.cross_fraction;
    [
        spec.lambda_real,
        spec.lambda_synth * (1.0 - c),
        spec.lambda_synth * c,
        spec.lambda_cur * (1.0 - c),
        spec.lambda_cur * c,
    ]
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataBatch {
    pub samples: Vec<DVector<f64>>,
    pub tags: Vec<SourceTag>,
}

impl DataBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn tag_counts(&self) -> [usize; 5] {
        let mut counts = [0; 5];
        for t in &self.tags {
            counts[*t as usize] += 1;
        }
        counts
    }
}

/// How a batch of size `n` is split between the sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Allocation {
    /// Deterministic counts by largest-remainder rounding.
    #[default]
    LargestRemainder,
    /// Each sample picks its source independently with the mixture weights.
    Multinomial,
}

/// Hamilton apportionment of `n` items; ties go to the lower index.
pub fn largest_remainder(weights: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&i, &j| {
        let (ri, rj) = (quotas[i] - quotas[i].floor(), quotas[j] - quotas[j].floor());
        rj.total_cmp(&ri).then(i.cmp(&j))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// `exp(r_k) / Σ exp(r_j)` with max-subtraction.
pub fn bradley_terry_probabilities(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::invalid("no curation candidates"));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("candidate rewards".into()));
    }
    let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = rewards.iter().map(|r| (r - max).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}

pub fn bradley_terry_select<R: Rng + ?Sized>(rewards: &[f64], rng: &mut R) -> Result<usize> {
    let p = bradley_terry_probabilities(rewards)?;
    if p.len() == 1 {
        return Ok(0);
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return Ok(k);
        }
    }
    Ok(p.len() - 1)
}

/// A two-model system that can be run through the retraining loop.
///
/// `consumer` is the model whose training batch is being built; `cross`
/// selects data generated by the peer instead of the consumer itself.
/// Sampling goes through a per-refit [`DataModel::Context`] so that
/// quantities shared by every sample of a batch are computed once.
pub trait DataModel: Sync {
    type Context;

    fn dim(&self) -> usize;

    fn mixture(&self, consumer: Side) -> MixtureSpec;

    fn context(&self, consumer: Side, theta: &DVector<f64>, phi: &DVector<f64>) -> Self::Context;

    fn sample_real<R: Rng + ?Sized>(&self, ctx: &Self::Context, rng: &mut R) -> DVector<f64>;

    fn sample_generated<R: Rng + ?Sized>(&self, ctx: &Self::Context, cross: bool, rng: &mut R) -> DVector<f64>;

    /// Consumer's preference score for a data point.
    fn data_reward(&self, consumer: Side, z: &DVector<f64>) -> f64;

    /// Alignment reward of a parameter vector.
    fn param_reward(&self, side: Side, param: &DVector<f64>) -> f64;

    fn curation_k(&self) -> usize {
        DEFAULT_CURATION_K
    }

    /// Draws `K` candidates and keeps one by Bradley-Terry selection.
    fn sample_curated<R: Rng + ?Sized>(
        &self,
        consumer: Side,
        ctx: &Self::Context,
        cross: bool,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        let mut cands: Vec<DVector<f64>> = (0..self.curation_k())
            .map(|_| self.sample_generated(ctx, cross, rng))
            .collect();
        let rewards: Vec<f64> = cands.iter().map(|z| self.data_reward(consumer, z)).collect();
        let k = bradley_terry_select(&rewards, rng)?;
        Ok(cands.swap_remove(k))
    }

    /// Expected-loss minimizer under the current mixture, if available in
    /// closed form.
    fn exact_update(&self, _side: Side, _theta: &DVector<f64>, _phi: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }
}

fn gaussian_noise<R: Rng + ?Sized>(mean: &DVector<f64>, sigma: f64, rng: &mut R) -> DVector<f64> {
    let mut z = mean.clone();
    for v in z.iter_mut() {
        let e: f64 = rng.sample(StandardNormal);
        *v += sigma * e;
    }
    z
}

/// Component means of one consumer's Gaussian mixture at a fixed state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianContext {
    pub real: DVector<f64>,
    pub self_mean: DVector<f64>,
    pub cross_mean: DVector<f64>,
    pub shift: DVector<f64>,
}

impl DataModel for GaussianSystem {
    type Context = GaussianContext;

    fn dim(&self) -> usize {
        GaussianSystem::dim(self)
    }

    fn mixture(&self, consumer: Side) -> MixtureSpec {
        match consumer {
            Side::Theta => self.theta_mix,
            Side::Phi => self.phi_mix,
        }
    }

    fn context(&self, consumer: Side, theta: &DVector<f64>, phi: &DVector<f64>) -> GaussianContext {
        match consumer {
            Side::Theta => GaussianContext {
                real: self.real_theta.clone(),
                self_mean: theta.clone(),
                cross_mean: &self.theta_from_phi * phi,
                shift: self.shift_theta.clone(),
            },
            Side::Phi => GaussianContext {
                real: self.real_phi.clone(),
                self_mean: phi.clone(),
                cross_mean: &self.phi_from_theta * theta,
                shift: self.shift_phi.clone(),
            },
        }
    }

    fn sample_real<R: Rng + ?Sized>(&self, ctx: &GaussianContext, rng: &mut R) -> DVector<f64> {
        gaussian_noise(&ctx.real, self.sigma, rng)
    }

    fn sample_generated<R: Rng + ?Sized>(&self, ctx: &GaussianContext, cross: bool, rng: &mut R) -> DVector<f64> {
        let mean = if cross { &ctx.cross_mean } else { &ctx.self_mean };
        gaussian_noise(mean, self.sigma, rng)
    }

    fn data_reward(&self, consumer: Side, z: &DVector<f64>) -> f64 {
        self.param_reward(consumer, z)
    }

    fn param_reward(&self, side: Side, param: &DVector<f64>) -> f64 {
        match side {
            Side::Theta => self.reward_p(param),
            Side::Phi => self.reward_q(param),
        }
    }

    /// The curated component is the shifted Gaussian itself, so no selection runs.
    fn sample_curated<R: Rng + ?Sized>(
        &self,
        _consumer: Side,
        ctx: &GaussianContext,
        cross: bool,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        Ok(self.sample_generated(ctx, cross, rng) + &ctx.shift)
    }

    fn exact_update(&self, side: Side, theta: &DVector<f64>, phi: &DVector<f64>) -> Option<DVector<f64>> {
        Some(match side {
            Side::Theta => self.mean_theta(theta, phi),
            Side::Phi => self.mean_phi(theta, phi),
        })
    }
}

/// Gaussian system whose curated data comes from Bradley-Terry selection
/// among `k` unshifted candidates scored by the consumer's reward.
#[derive(Debug, Clone)]
pub struct RewardCuratedGaussian {
    pub system: GaussianSystem,
    pub k: usize,
}

impl DataModel for RewardCuratedGaussian {
    type Context = GaussianContext;

    fn dim(&self) -> usize {
        self.system.dim()
    }

    fn mixture(&self, consumer: Side) -> MixtureSpec {
        DataModel::mixture(&self.system, consumer)
    }

    fn context(&self, consumer: Side, theta: &DVector<f64>, phi: &DVector<f64>) -> GaussianContext {
        self.system.context(consumer, theta, phi)
    }

    fn sample_real<R: Rng + ?Sized>(&self, ctx: &GaussianContext, rng: &mut R) -> DVector<f64> {
        self.system.sample_real(ctx, rng)
    }

    fn sample_generated<R: Rng + ?Sized>(&self, ctx: &GaussianContext, cross: bool, rng: &mut R) -> DVector<f64> {
        self.system.sample_generated(ctx, cross, rng)
    }

    fn data_reward(&self, consumer: Side, z: &DVector<f64>) -> f64 {
        self.system.param_reward(consumer, z)
    }

    fn param_reward(&self, side: Side, param: &DVector<f64>) -> f64 {
        self.system.param_reward(side, param)
    }

    fn curation_k(&self) -> usize {
        self.k
    }
}

fn draw_sample<M: DataModel, R: Rng + ?Sized>(
    model: &M,
    consumer: Side,
    ctx: &M::Context,
    tag: SourceTag,
    rng: &mut R,
) -> Result<DVector<f64>> {
    Ok(match tag {
        SourceTag::Real => model.sample_real(ctx, rng),
        SourceTag::SelfSynth | SourceTag::CrossSynth => model.sample_generated(ctx, tag.is_cross(), rng),
        SourceTag::SelfCurated | SourceTag::CrossCurated => {
            model.sample_curated(consumer, ctx, tag.is_cross(), rng)?
        }
    })
}

/// Training batch of `consumer` at state `(θ, φ)`.
pub fn sample_mixture_batch<M: DataModel, R: Rng + ?Sized>(
    model: &M,
    consumer: Side,
    theta: &DVector<f64>,
    phi: &DVector<f64>,
    n: usize,
    allocation: Allocation,
    rng: &mut R,
) -> Result<DataBatch> {
    if n == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let weights = tag_weights(&model.mixture(consumer));
    let ctx = model.context(consumer, theta, phi);
    let mut batch = DataBatch {
        samples: Vec::with_capacity(n),
        tags: Vec::with_capacity(n),
    };
    match allocation {
        Allocation::LargestRemainder => {
            let counts = largest_remainder(&weights, n);
            for (tag, count) in SourceTag::ALL.into_iter().zip(counts) {
                for _ in 0..count {
                    batch.samples.push(draw_sample(model, consumer, &ctx, tag, rng)?);
                    batch.tags.push(tag);
                }
            }
        }
        Allocation::Multinomial => {
            for _ in 0..n {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut tag = SourceTag::Real;
                for (t, w) in SourceTag::ALL.into_iter().zip(weights) {
                    if w > 0.0 {
                        tag = t;
                    }
                    acc += w;
                    if u < acc && w > 0.0 {
                        break;
                    }
                }
                batch.samples.push(draw_sample(model, consumer, &ctx, tag, rng)?);
                batch.tags.push(tag);
            }
        }
    }
    Ok(batch)
}

/// Minimizer of `Σ ½‖θ − z‖²`, i.e. the sample mean.
pub fn fit_quadratic_loss(batch: &DataBatch) -> Result<ParamVec> {
    let first = batch
        .samples
        .first()
        .ok_or_else(|| Error::invalid("cannot fit an empty batch"))?;
    let mut sum = DVector::zeros(first.len());
    for z in &batch.samples {
        if z.len() != first.len() {
            return Err(Error::Dimension {
                expected: first.len(),
                got: z.len(),
            });
        }
        sum += z;
    }
    ParamVec::new(sum / batch.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SampleMode {
    /// Each refit uses the expected loss.
    Exact,
    Finite { n: usize, allocation: Allocation },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopOptions {
    pub iterations: usize,
    pub schedule: UpdateSchedule,
    pub mode: SampleMode,
    pub divergence_bound: f64,
    pub theta0: Option<DVector<f64>>,
    pub phi0: Option<DVector<f64>>,
}

impl LoopOptions {
    pub fn exact(iterations: usize) -> Self {
        LoopOptions {
            iterations,
            schedule: UpdateSchedule::Synchronous,
            mode: SampleMode::Exact,
            divergence_bound: DEFAULT_DIVERGENCE_BOUND,
            theta0: None,
            phi0: None,
        }
    }

    pub fn finite(iterations: usize, n: usize, allocation: Allocation) -> Self {
        LoopOptions {
            mode: SampleMode::Finite { n, allocation },
            ..Self::exact(iterations)
        }
    }

    pub fn with_schedule(mut self, schedule: UpdateSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn starting_at(mut self, theta0: DVector<f64>, phi0: DVector<f64>) -> Self {
        self.theta0 = Some(theta0);
        self.phi0 = Some(phi0);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub theta: Vec<DVector<f64>>,
    pub phi: Vec<DVector<f64>>,
    pub j_p: Vec<f64>,
    pub j_q: Vec<f64>,
    /// `Δ_{t,1}` for t ≥ 1; index 0 is always `None`.
    pub delta_theta: Vec<Option<f64>>,
    pub delta_phi: Vec<Option<f64>>,
    pub seed: RunSeed,
    pub schedule: UpdateSchedule,
    pub mode: SampleMode,
}

impl Trajectory {
    /// Number of completed rounds `T`; the series hold `T + 1` states.
    pub fn iterations(&self) -> usize {
        self.theta.len() - 1
    }
}

fn refit<M: DataModel, R: Rng + ?Sized>(
    model: &M,
    side: Side,
    theta: &DVector<f64>,
    phi: &DVector<f64>,
    mode: SampleMode,
    rng: &mut R,
) -> Result<DVector<f64>> {
    match mode {
        SampleMode::Exact => model.exact_update(side, theta, phi).ok_or_else(|| {
            Error::invalid("exact-expectation mode needs a closed-form update")
        }),
        SampleMode::Finite { n, allocation } => {
            let batch = sample_mixture_batch(model, side, theta, phi, n, allocation, rng)?;
            Ok(fit_quadratic_loss(&batch)?.into_vector())
        }
    }
}

fn guard(iteration: usize, v: &DVector<f64>, bound: f64) -> Result<()> {
    let norm = v.norm();
    if !norm.is_finite() || norm > bound {
        return Err(Error::Divergence {
            iteration,
            norm,
            bound,
        });
    }
    Ok(())
}

pub fn run_loop<M: DataModel>(model: &M, opts: &LoopOptions, seed: RunSeed) -> Result<Trajectory> {
    if opts.iterations < 1 {
        return Err(Error::invalid("iterations must be at least 1"));
    }
    if !(opts.divergence_bound > 0.0) {
        return Err(Error::invalid("divergence bound must be positive"));
    }
    let d = model.dim();
    let mut theta = opts.theta0.clone().unwrap_or_else(|| DVector::zeros(d));
    let mut phi = opts.phi0.clone().unwrap_or_else(|| DVector::zeros(d));
    for v in [&theta, &phi] {
        if v.len() != d {
            return Err(Error::Dimension { expected: d, got: v.len() });
        }
    }
    let mut rng = seed.rng();
    let mut thetas = Vec::with_capacity(opts.iterations + 1);
    let mut phis = Vec::with_capacity(opts.iterations + 1);
    thetas.push(theta.clone());
    phis.push(phi.clone());
    for it in 1..=opts.iterations {
        let (next_theta, next_phi) = match opts.schedule {
            UpdateSchedule::Synchronous => {
                let nt = refit(model, Side::Theta, &theta, &phi, opts.mode, &mut rng)?;
                let np = refit(model, Side::Phi, &theta, &phi, opts.mode, &mut rng)?;
                (nt, np)
            }
            UpdateSchedule::AsyncThetaFirst => {
                let nt = refit(model, Side::Theta, &theta, &phi, opts.mode, &mut rng)?;
                let np = refit(model, Side::Phi, &nt, &phi, opts.mode, &mut rng)?;
                (nt, np)
            }
            UpdateSchedule::AsyncPhiFirst => {
                let np = refit(model, Side::Phi, &theta, &phi, opts.mode, &mut rng)?;
                let nt = refit(model, Side::Theta, &theta, &np, opts.mode, &mut rng)?;
                (nt, np)
            }
        };
        guard(it, &next_theta, opts.divergence_bound)?;
        guard(it, &next_phi, opts.divergence_bound)?;
        theta = next_theta;
        phi = next_phi;
        thetas.push(theta.clone());
        phis.push(phi.clone());
    }
    let j_p = thetas.iter().map(|t| model.param_reward(Side::Theta, t)).collect();
    let j_q = phis.iter().map(|p| model.param_reward(Side::Phi, p)).collect();
    let delta_theta = std::iter::once(None).chain(relative_changes(&thetas, 1)).collect();
    let delta_phi = std::iter::once(None).chain(relative_changes(&phis, 1)).collect();
    Ok(Trajectory {
        theta: thetas,
        phi: phis,
        j_p,
        j_q,
        delta_theta,
        delta_phi,
        seed,
        schedule: opts.schedule,
        mode: opts.mode,
    })
}

fn relative_changes(series: &[DVector<f64>], lag: usize) -> Vec<Option<f64>> {
    (lag..series.len())
        .map(|t| {
            let base = series[t - lag].norm();
            let step = (&series[t] - &series[t - lag]).norm();
            if base > 0.0 {
                Some(step / base)
            } else {
                (step == 0.0).then_some(0.0)
            }
        })
        .collect()
}

/// `Δ_{t,j}` for `t = j..=T`. A step away from the origin has no relative
/// size and gives `None`; staying at the origin gives 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSeries {
    pub lag: usize,
    pub theta: Vec<Option<f64>>,
    pub phi: Vec<Option<f64>>,
}

impl DeltaSeries {
    /// First `t` at which both series are defined and below `tol`.
    pub fn first_below(&self, tol: f64) -> Option<usize> {
        self.theta
            .iter()
            .zip(&self.phi)
            .position(|(a, b)| matches!((a, b), (Some(x), Some(y)) if *x < tol && *y < tol))
            .map(|k| k + self.lag)
    }
}

pub fn convergence_metric(traj: &Trajectory, lag: usize) -> Result<DeltaSeries> {
    if lag == 0 || lag > traj.iterations() {
        return Err(Error::invalid(format!(
            "lag {lag} outside 1..={}",
            traj.iterations()
        )));
    }
    Ok(DeltaSeries {
        lag,
        theta: relative_changes(&traj.theta, lag),
        phi: relative_changes(&traj.phi, lag),
    })
}

/// Joint distance `‖(θ_t, φ_t) − (θ*, φ*)‖` per iteration.
pub fn distances_to(traj: &Trajectory, fp: &FixedPoint) -> Vec<f64> {
    traj.theta
        .iter()
        .zip(&traj.phi)
        .map(|(t, p)| ((t - &fp.theta).norm_squared() + (p - &fp.phi).norm_squared()).sqrt())
        .collect()
}

/// Relative floor below which distances are treated as round-off.
pub const RATE_FLOOR: f64 = 1e-10;

/// Per-step rate `exp(slope)` of a least-squares fit of `ln d_k` against `k`,
/// using every `stride`-th distance. Points after the distance first drops
/// below `RATE_FLOOR·d_0` are ignored.
pub fn contraction_rate_from_distances(distances: &[f64], stride: usize) -> Result<f64> {
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    let d0 = *distances
        .first()
        .ok_or_else(|| Error::invalid("empty distance series"))?;
    if !(d0 > 0.0) {
        return Err(Error::Undefined("trajectory starts at the fixed point".into()));
    }
    let pts: Vec<(f64, f64)> = distances
        .iter()
        .step_by(stride)
        .take_while(|&&d| d > RATE_FLOOR * d0)
        .enumerate()
        .map(|(k, d)| (k as f64, d.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Undefined(format!(
            "need at least 3 usable distances, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    Ok((sxy / sxx).exp())
}

/// Contraction rate of a trajectory toward `fp`, measured over `stride`
/// rounds at a time.
pub fn empirical_contraction_rate(traj: &Trajectory, fp: &FixedPoint, stride: usize) -> Result<f64> {
    contraction_rate_from_distances(&distances_to(traj, fp), stride)
}

/// Mean of the states `from..=to` (inclusive iteration indices).
pub fn tail_mean(traj: &Trajectory, from: usize, to: usize) -> Result<FixedPoint> {
    if from > to || to > traj.iterations() {
        return Err(Error::invalid(format!(
            "tail window {from}..={to} outside 0..={}",
            traj.iterations()
        )));
    }
    let k = (to - from + 1) as f64;
    let sum = |s: &[DVector<f64>]| s[from..=to].iter().fold(DVector::zeros(s[0].len()), |a, v| a + v) / k;
    Ok(FixedPoint {
        theta: sum(&traj.theta),
        phi: sum(&traj.phi),
    })
}

/// Iteration window averaged as the fixed-point estimate of a 100-round run.
pub const TAIL_WINDOW: (usize, usize) = (81, 100);

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn largest_remainder_examples() {
        assert_eq!(largest_remainder(&[0.5, 0.0, 0.0, 0.5, 0.0], 4), vec![2, 0, 0, 2, 0]);
        assert_eq!(largest_remainder(&[1.0, 1.0, 1.0], 10), vec![4, 3, 3]);
        assert_eq!(largest_remainder(&[0.2, 0.8], 3), vec![1, 2]);
        assert_eq!(largest_remainder(&[0.0, 0.0], 3), vec![0, 0]);
    }

    #[test]
    fn bt_rejects_bad_input() {
        let mut rng = RunSeed(1).rng();
        assert!(bradley_terry_select(&[], &mut rng).is_err());
        assert!(bradley_terry_select(&[0.0, f64::NAN], &mut rng).is_err());
        assert_eq!(bradley_terry_select(&[5.0], &mut rng).unwrap(), 0);
    }

    #[test]
    fn bt_probabilities_survive_large_rewards() {
        let p = bradley_terry_probabilities(&[1000.0, 1000.0 + 3f64.ln()]).unwrap();
        assert_relative_eq!(p[0], 0.25, epsilon = 1e-12);
        assert_relative_eq!(p[1], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn fit_examples() {
        let single = DataBatch {
            samples: vec![DVector::from_vec(vec![1.5, -2.0])],
            tags: vec![SourceTag::Real],
        };
        assert_eq!(fit_quadratic_loss(&single).unwrap().to_vec(), vec![1.5, -2.0]);
        let two = DataBatch {
            samples: vec![DVector::from_vec(vec![0.0, 0.0]), DVector::from_vec(vec![2.0, 2.0])],
            tags: vec![SourceTag::Real; 2],
        };
        assert_eq!(fit_quadratic_loss(&two).unwrap().to_vec(), vec![1.0, 1.0]);
        assert!(fit_quadratic_loss(&DataBatch::default()).is_err());
    }

    #[test]
    fn geometric_rate_recovered() {
        let d: Vec<f64> = (0..30).map(|k| 0.5f64.powi(k)).collect();
        assert_relative_eq!(contraction_rate_from_distances(&d, 1).unwrap(), 0.5, epsilon = 1e-6);
        let d: Vec<f64> = (0..30).map(|k| 1.1f64.powi(k)).collect();
        assert!(contraction_rate_from_distances(&d, 1).unwrap() > 1.0);
        let d = vec![0.0; 10];
        assert!(contraction_rate_from_distances(&d, 1).is_err());
    }

    #[test]
    fn decoupled_loop_converges_in_one_step() {
        let sys = GaussianSystem::reference(0.0, 0.4).unwrap();
        let traj = run_loop(&sys, &LoopOptions::exact(5), RunSeed(0)).unwrap();
        for t in 1..=5 {
            assert_relative_eq!(traj.theta[t], &sys.shift_theta * 0.4, epsilon = 1e-15);
            assert!(traj.phi[t].iter().all(|&v| v == 0.0));
        }
        assert_eq!(traj.theta.len(), 6);
    }

    #[test]
    fn divergence_guard_trips() {
        let mut sys = GaussianSystem::reference(0.5, 0.4).unwrap();
        sys.phi_from_theta *= 10.0;
        let err = run_loop(&sys, &LoopOptions::exact(200), RunSeed(0)).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn tail_mean_bounds() {
        let sys = GaussianSystem::reference(0.2, 0.4).unwrap();
        let traj = run_loop(&sys, &LoopOptions::exact(10), RunSeed(0)).unwrap();
        assert!(tail_mean(&traj, 5, 11).is_err());
        assert!(tail_mean(&traj, 6, 5).is_err());
        let m = tail_mean(&traj, 10, 10).unwrap();
        assert_eq!(m.theta, traj.theta[10]);
    }
}
