//! The coupled linear-Gaussian system and its closed-form solution.
//!
//! Model θ trains on
//! `P = λ_R·N(r_θ, σ²I) + λ_S·N(m_θ, σ²I) + λ_H·N(m_θ + a, σ²I)` with
//! `m_θ = (1-c_θ)·θ + c_θ·W φ`, and model φ on the mirror image with the
//! coupling matrix `A` and shift `b`. Both losses are `½‖param − z‖²`, so each
//! refit is the mixture mean and the whole loop is an affine map. The
//! reference configuration (`λ_R = 0`, `c = 1`, `W = I`, `b = 0`, φ trained
//! only on `N(Aθ, σ²I)`) reduces to `θ ← φ + λa`, `φ ← Aθ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, rotation2};
use crate::types::{validate_mixture, MixtureSpec, ParamVec};

pub const NUM_BLOCKS: usize = 12;
pub const REFERENCE_DIM: usize = 2 * NUM_BLOCKS;

pub const REFERENCE_ANGLES_DEG: [f64; NUM_BLOCKS] = [
    -80.0, -66.0, -52.0, -38.0, -24.0, -10.0, 5.0, 21.0, 37.0, 53.0, 69.0, 85.0,
];

pub const BETA_MIN: f64 = 0.08;
pub const BETA_MAX: f64 = 0.95;
pub const REFERENCE_ETA_P: f64 = 0.18;
pub const REFERENCE_ETA_Q: f64 = 0.22;
pub const DEFAULT_SIGMA: f64 = 1.0;

/// How the twelve interaction magnitudes are laid out over `[0.08, 0.95]`.
///
/// All schedules use the same evenly spaced grid `0.08 + 0.87·k/11`; they
/// differ only in which block receives which grid value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaSchedule {
    /// Alternates the low and high ends of the grid: k = 0, 11, 1, 10, ...
    #[default]
    Interleaved,
    Increasing,
    Decreasing,
}

impl BetaSchedule {
    pub fn betas(self) -> Vec<f64> {
        let grid: Vec<f64> = (0..NUM_BLOCKS)
            .map(|k| BETA_MIN + (BETA_MAX - BETA_MIN) * k as f64 / (NUM_BLOCKS - 1) as f64)
            .collect();
        match self {
            BetaSchedule::Increasing => grid,
            BetaSchedule::Decreasing => grid.into_iter().rev().collect(),
            BetaSchedule::Interleaved => (0..NUM_BLOCKS)
                .map(|i| {
                    if i % 2 == 0 {
                        grid[i / 2]
                    } else {
                        grid[NUM_BLOCKS - 1 - i / 2]
                    }
                })
                .collect(),
        }
    }
}

/// Block-diagonal coupling `A(t) = diag(t·β_i·R(x_i))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCouplingSpec {
    pub t: f64,
    pub betas: Vec<f64>,
    pub angles_deg: Vec<f64>,
}

impl BlockCouplingSpec {
    pub fn reference(t: f64) -> Self {
        Self::with_schedule(t, BetaSchedule::default())
    }

    pub fn with_schedule(t: f64, schedule: BetaSchedule) -> Self {
        BlockCouplingSpec {
            t,
            betas: schedule.betas(),
            angles_deg: REFERENCE_ANGLES_DEG.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.betas.len() != NUM_BLOCKS {
            return Err(Error::invalid(format!(
                "expected {NUM_BLOCKS} betas, got {}",
                self.betas.len()
            )));
        }
        if self.angles_deg.len() != NUM_BLOCKS {
            return Err(Error::invalid(format!(
                "expected {NUM_BLOCKS} angles, got {}",
                self.angles_deg.len()
            )));
        }
        if !(self.t.is_finite() && self.t >= 0.0) {
            return Err(Error::invalid(format!("coupling scale t = {} must be >= 0", self.t)));
        }
        if self.betas.iter().chain(&self.angles_deg).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("coupling spec".into()));
        }
        if self.betas.iter().any(|&b| b < 0.0) {
            return Err(Error::invalid("betas must be non-negative"));
        }
        Ok(())
    }

    /// `t·max β_i`, which equals `‖A(t)‖₂` because each block is a scaled rotation.
    pub fn spectral_norm(&self) -> f64 {
        self.t * self.betas.iter().copied().fold(0.0, f64::max)
    }

    /// The 2×2 block `t·β_i·R(x_i)`.
    pub fn block(&self, i: usize) -> [[f64; 2]; 2] {
        let r = rotation2(self.angles_deg[i]);
        let s = self.t * self.betas[i];
        [[s * r[0][0], s * r[0][1]], [s * r[1][0], s * r[1][1]]]
    }
}

pub fn build_coupling_matrix(spec: &BlockCouplingSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let mut m = DMatrix::zeros(REFERENCE_DIM, REFERENCE_DIM);
    for i in 0..NUM_BLOCKS {
        let b = spec.block(i);
        for (r, row) in b.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                m[(2 * i + r, 2 * i + c)] = *v;
            }
        }
    }
    Ok(m)
}

/// Curation shift and reward directions of the reference system.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionVectors {
    pub a: DVector<f64>,
    pub g_p: DVector<f64>,
    pub g_q: DVector<f64>,
}

fn blockwise(scale: impl Fn(f64) -> f64, angle: impl Fn(f64) -> f64, base: [f64; 2]) -> DVector<f64> {
    let mut v = DVector::zeros(REFERENCE_DIM);
    for i in 1..=NUM_BLOCKS {
        let k = i as f64;
        let s = 0.9f64.powi(i as i32) * scale(k - 1.0);
        let r = rotation2(angle(k - 1.0));
        v[2 * (i - 1)] = s * (r[0][0] * base[0] + r[0][1] * base[1]);
        v[2 * (i - 1) + 1] = s * (r[1][0] * base[0] + r[1][1] * base[1]);
    }
    v
}

pub fn build_direction_vectors() -> DirectionVectors {
    use std::f64::consts::PI;
    let a = blockwise(
        |j| 1.0 + 0.2 * (2.0 * PI * j / 11.0).sin(),
        |j| 140.0 * j / 11.0 - 70.0,
        [1.0, 2.0],
    );
    let g_p = blockwise(
        |j| 1.0 + 0.15 * (1.5 * PI * j / 11.0).cos(),
        |j| 80.0 * j / 11.0 - 55.0,
        [1.0, 0.0],
    );
    let g_q = blockwise(
        |j| 1.0 + 0.18 * (1.5 * PI * j / 11.0 + 0.3).sin(),
        |j| 100.0 * j / 11.0 - 40.0,
        [1.0, 4.0],
    );
    DirectionVectors { a, g_p, g_q }
}

/// `g·x − η‖x‖²/2`.
pub fn reward_j(x: &DVector<f64>, g: &DVector<f64>, eta: f64) -> Result<f64> {
    if x.len() != g.len() {
        return Err(Error::Dimension {
            expected: g.len(),
            got: x.len(),
        });
    }
    Ok(g.dot(x) - 0.5 * eta * x.norm_squared())
}

/// Fixed point of `θ ← φ + λa`, `φ ← Aθ`.
pub fn closed_form_fixed_point(
    a_mat: &DMatrix<f64>,
    a: &DVector<f64>,
    lambda_cur: f64,
) -> Result<(ParamVec, ParamVec)> {
    let n = a.len();
    if a_mat.nrows() != n || a_mat.ncols() != n {
        return Err(Error::Dimension {
            expected: n,
            got: a_mat.nrows(),
        });
    }
    let lhs = DMatrix::identity(n, n) - a_mat;
    let theta = linalg::solve(&lhs, &(a * lambda_cur), "I - A")?;
    let phi = a_mat * &theta;
    Ok((ParamVec::new(theta)?, ParamVec::new(phi)?))
}

/// Stable pair of a coupled system.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub theta: DVector<f64>,
    pub phi: DVector<f64>,
}

/// Direction of a change in one model's mixture weights.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WeightRates {
    pub real: f64,
    pub synth: f64,
    pub cur: f64,
}

impl WeightRates {
    /// Raising `λ_H` while real and synthetic shrink in proportion, the
    /// convention behind the curation-influence formulas.
    pub fn curation(mix: &MixtureSpec) -> Result<Self> {
        let rest = mix.lambda_real + mix.lambda_synth;
        if rest <= 0.0 {
            return Err(Error::Undefined(
                "curation derivative at lambda_cur = 1 (no real or synthetic data left)".into(),
            ));
        }
        Ok(WeightRates {
            real: -mix.lambda_real / rest,
            synth: -mix.lambda_synth / rest,
            cur: 1.0,
        })
    }

    /// Resizing the real/synthetic/curated datasets in fixed proportions
    /// `(a_r, a_s, a_h)`, expressed per unit change of `λ_H`.
    pub fn resizing(mix: &MixtureSpec, a_r: f64, a_s: f64, a_h: f64) -> Result<Self> {
        let denom = a_h - mix.lambda_cur;
        if denom.abs() < 1e-12 {
            return Err(Error::Undefined(format!(
                "resizing rule degenerate: a_h ({a_h}) equals lambda_cur ({})",
                mix.lambda_cur
            )));
        }
        Ok(WeightRates {
            real: (a_r - mix.lambda_real) / denom,
            synth: (a_s - mix.lambda_synth) / denom,
            cur: 1.0,
        })
    }

    pub fn apply(&self, mix: &MixtureSpec, step: f64) -> MixtureSpec {
        MixtureSpec {
            lambda_real: mix.lambda_real + step * self.real,
            lambda_synth: mix.lambda_synth + step * self.synth,
            lambda_cur: mix.lambda_cur + step * self.cur,
            cross_fraction: mix.cross_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSystem {
    /// Present when the coupling came from a block spec.
    pub blocks: Option<BlockCouplingSpec>,
    /// `W`: maps φ into the mean of φ-generated data consumed by θ.
    pub theta_from_phi: DMatrix<f64>,
    /// `A`: maps θ into the mean of θ-generated data consumed by φ.
    pub phi_from_theta: DMatrix<f64>,
    /// Curation shift `a` on θ's curated data.
    pub shift_theta: DVector<f64>,
    /// Curation shift `b` on φ's curated data.
    pub shift_phi: DVector<f64>,
    pub g_p: DVector<f64>,
    pub g_q: DVector<f64>,
    pub eta_p: f64,
    pub eta_q: f64,
    pub sigma: f64,
    pub theta_mix: MixtureSpec,
    pub phi_mix: MixtureSpec,
    pub real_theta: DVector<f64>,
    pub real_phi: DVector<f64>,
}

impl GaussianSystem {
    /// The 24-dimensional reference system at coupling scale `t`.
    pub fn reference(t: f64, lambda_cur: f64) -> Result<Self> {
        Self::from_blocks(BlockCouplingSpec::reference(t), lambda_cur)
    }

    pub fn from_blocks(spec: BlockCouplingSpec, lambda_cur: f64) -> Result<Self> {
        let a_mat = build_coupling_matrix(&spec)?;
        let dirs = build_direction_vectors();
        let n = REFERENCE_DIM;
        let sys = GaussianSystem {
            blocks: Some(spec),
            theta_from_phi: DMatrix::identity(n, n),
            phi_from_theta: a_mat,
            shift_theta: dirs.a,
            shift_phi: DVector::zeros(n),
            g_p: dirs.g_p,
            g_q: dirs.g_q,
            eta_p: REFERENCE_ETA_P,
            eta_q: REFERENCE_ETA_Q,
            sigma: DEFAULT_SIGMA,
            theta_mix: MixtureSpec::new(0.0, 1.0 - lambda_cur, lambda_cur, 1.0)?,
            phi_mix: MixtureSpec::new(0.0, 1.0, 0.0, 1.0)?,
            real_theta: DVector::zeros(n),
            real_phi: DVector::zeros(n),
        };
        sys.validate()?;
        Ok(sys)
    }

    /// Two-dimensional text/image system with literal coupling matrices and
    /// linear rewards.
    pub fn literal(
        w1: DMatrix<f64>,
        w2: DMatrix<f64>,
        a: DVector<f64>,
        g_p: DVector<f64>,
        g_q: DVector<f64>,
        lambda_cur: f64,
    ) -> Result<Self> {
        let n = a.len();
        let sys = GaussianSystem {
            blocks: None,
            theta_from_phi: w1,
            phi_from_theta: w2,
            shift_theta: a,
            shift_phi: DVector::zeros(n),
            g_p,
            g_q,
            eta_p: 0.0,
            eta_q: 0.0,
            sigma: DEFAULT_SIGMA,
            theta_mix: MixtureSpec::new(0.0, 1.0 - lambda_cur, lambda_cur, 1.0)?,
            phi_mix: MixtureSpec::new(0.0, 1.0, 0.0, 1.0)?,
            real_theta: DVector::zeros(n),
            real_phi: DVector::zeros(n),
        };
        sys.validate()?;
        Ok(sys)
    }

    /// `W₁ = I`, `W₂ = (1/7)[[-9, 6], [6, 3]]`, `J_p(θ) = θ₁`, `a = (1, -1)`.
    pub fn example_text_image(lambda_cur: f64) -> Result<Self> {
        let w2 = DMatrix::from_row_slice(2, 2, &[-9.0, 6.0, 6.0, 3.0]) / 7.0;
        Self::literal(
            DMatrix::identity(2, 2),
            w2,
            DVector::from_vec(vec![1.0, -1.0]),
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::zeros(2),
            lambda_cur,
        )
    }

    pub fn dim(&self) -> usize {
        self.shift_theta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        let square = [
            ("theta_from_phi", &self.theta_from_phi),
            ("phi_from_theta", &self.phi_from_theta),
        ];
        for (name, m) in square {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::invalid(format!(
                    "{name} is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        for (name, v) in [
            ("shift_phi", &self.shift_phi),
            ("g_p", &self.g_p),
            ("g_q", &self.g_q),
            ("real_theta", &self.real_theta),
            ("real_phi", &self.real_phi),
        ] {
            if v.len() != n {
                return Err(Error::invalid(format!("{name} has length {}, expected {n}", v.len())));
            }
        }
        let all_finite = self
            .theta_from_phi
            .iter()
            .chain(self.phi_from_theta.iter())
            .chain(self.shift_theta.iter())
            .chain(self.shift_phi.iter())
            .chain(self.g_p.iter())
            .chain(self.g_q.iter())
            .chain(self.real_theta.iter())
            .chain(self.real_phi.iter())
            .chain([self.eta_p, self.eta_q, self.sigma].iter())
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::NonFinite("gaussian system".into()));
        }
        if self.sigma < 0.0 {
            return Err(Error::invalid("sigma must be non-negative"));
        }
        validate_mixture(self.theta_mix)?;
        validate_mixture(self.phi_mix)?;
        Ok(())
    }

    /// Copy with `λ_H^θ` replaced; real weight kept, synthetic absorbs the rest.
    pub fn with_curation(&self, lambda_cur: f64) -> Result<Self> {
        let mut out = self.clone();
        out.theta_mix = MixtureSpec::new(
            self.theta_mix.lambda_real,
            1.0 - self.theta_mix.lambda_real - lambda_cur,
            lambda_cur,
            self.theta_mix.cross_fraction,
        )?;
        Ok(out)
    }

    /// Copy where θ keeps a fraction `lambda_real` of real data and the
    /// synthetic/curated split of the remaining share is preserved.
    pub fn with_real_fraction(&self, lambda_real: f64) -> Result<Self> {
        let share = self.theta_mix.model_share();
        let cur_share = if share > 0.0 {
            self.theta_mix.lambda_cur / share
        } else {
            0.0
        };
        let rest = 1.0 - lambda_real;
        let mut out = self.clone();
        out.theta_mix = MixtureSpec::new(
            lambda_real,
            rest * (1.0 - cur_share),
            rest * cur_share,
            self.theta_mix.cross_fraction,
        )?;
        Ok(out)
    }

    pub fn with_mixtures(&self, theta_mix: MixtureSpec, phi_mix: MixtureSpec) -> Result<Self> {
        let mut out = self.clone();
        out.theta_mix = validate_mixture(theta_mix)?;
        out.phi_mix = validate_mixture(phi_mix)?;
        Ok(out)
    }

    pub fn lambda_cur(&self) -> f64 {
        self.theta_mix.lambda_cur
    }

    /// Mean of θ's model-generated (synthetic, uncurated) data.
    pub fn synth_mean_theta(&self, theta: &DVector<f64>, phi: &DVector<f64>) -> DVector<f64> {
        let c = self.theta_mix.cross_fraction;
        theta * (1.0 - c) + (&self.theta_from_phi * phi) * c
    }

    pub fn synth_mean_phi(&self, theta: &DVector<f64>, phi: &DVector<f64>) -> DVector<f64> {
        let c = self.phi_mix.cross_fraction;
        phi * (1.0 - c) + (&self.phi_from_theta * theta) * c
    }

    /// Mean of θ's training mixture, i.e. the exact refit of θ.
    pub fn mean_theta(&self, theta: &DVector<f64>, phi: &DVector<f64>) -> DVector<f64> {
        let m = &self.theta_mix;
        &self.real_theta * m.lambda_real
            + self.synth_mean_theta(theta, phi) * m.model_share()
            + &self.shift_theta * m.lambda_cur
    }

    pub fn mean_phi(&self, theta: &DVector<f64>, phi: &DVector<f64>) -> DVector<f64> {
        let m = &self.phi_mix;
        &self.real_phi * m.lambda_real
            + self.synth_mean_phi(theta, phi) * m.model_share()
            + &self.shift_phi * m.lambda_cur
    }

    /// Gradient map `F_p(θ, φ) = E_P[∇_θ ℓ] = θ − mean_P`.
    pub fn grad_map_p(&self, theta: &DVector<f64>, phi: &DVector<f64>) -> DVector<f64> {
        theta - self.mean_theta(theta, phi)
    }

    pub fn grad_map_q(&self, theta: &DVector<f64>, phi: &DVector<f64>) -> DVector<f64> {
        phi - self.mean_phi(theta, phi)
    }

    /// Joint affine map `x ↦ Bx + c` on `x = (θ, φ)`.
    fn affine_parts(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.dim();
        let mut b = DMatrix::zeros(2 * n, 2 * n);
        let (tm, pm) = (&self.theta_mix, &self.phi_mix);
        let id = DMatrix::<f64>::identity(n, n);
        b.view_mut((0, 0), (n, n))
            .copy_from(&(&id * (tm.model_share() * (1.0 - tm.cross_fraction))));
        b.view_mut((0, n), (n, n))
            .copy_from(&(&self.theta_from_phi * (tm.model_share() * tm.cross_fraction)));
        b.view_mut((n, 0), (n, n))
            .copy_from(&(&self.phi_from_theta * (pm.model_share() * pm.cross_fraction)));
        b.view_mut((n, n), (n, n))
            .copy_from(&(&id * (pm.model_share() * (1.0 - pm.cross_fraction))));
        let mut c = DVector::zeros(2 * n);
        c.rows_mut(0, n)
            .copy_from(&(&self.real_theta * tm.lambda_real + &self.shift_theta * tm.lambda_cur));
        c.rows_mut(n, n)
            .copy_from(&(&self.real_phi * pm.lambda_real + &self.shift_phi * pm.lambda_cur));
        (b, c)
    }

    /// Estimate of the distribution sensitivities `(ε_θ, ε_φ)`: operator norms
    /// of the mean map's block rows. For equal-covariance Gaussians the
    /// Wasserstein-2 distance is the distance between means, so this is exact
    /// for the mixture mean and an estimate for the mixture itself.
    pub fn eps_estimate(&self) -> (f64, f64) {
        let n = self.dim();
        let (b, _) = self.affine_parts();
        (
            linalg::spectral_norm(&b.rows(0, n).into_owned()),
            linalg::spectral_norm(&b.rows(n, n).into_owned()),
        )
    }

    /// Exact stable point, solving `(I − B)x = c` directly.
    pub fn fixed_point(&self) -> Result<FixedPoint> {
        let n = self.dim();
        let (b, c) = self.affine_parts();
        let lhs = DMatrix::identity(2 * n, 2 * n) - b;
        let x = linalg::solve(&lhs, &c, "fixed-point system")?;
        Ok(FixedPoint {
            theta: x.rows(0, n).into_owned(),
            phi: x.rows(n, n).into_owned(),
        })
    }

    /// Derivative of the stable point along a change of the mixture weights,
    /// by differentiating `(I − B)x = c` in the weights.
    pub fn fixed_point_rate(&self, theta_rates: WeightRates, phi_rates: WeightRates) -> Result<FixedPoint> {
        let n = self.dim();
        let (b, _) = self.affine_parts();
        let fp = self.fixed_point()?;
        let d_share_t = theta_rates.synth + theta_rates.cur;
        let d_share_p = phi_rates.synth + phi_rates.cur;
        // dB·x + dc, split per model
        let rhs_theta = self.synth_mean_theta(&fp.theta, &fp.phi) * d_share_t
            + &self.real_theta * theta_rates.real
            + &self.shift_theta * theta_rates.cur;
        let rhs_phi = self.synth_mean_phi(&fp.theta, &fp.phi) * d_share_p
            + &self.real_phi * phi_rates.real
            + &self.shift_phi * phi_rates.cur;
        let mut rhs = DVector::zeros(2 * n);
        rhs.rows_mut(0, n).copy_from(&rhs_theta);
        rhs.rows_mut(n, n).copy_from(&rhs_phi);
        let lhs = DMatrix::identity(2 * n, 2 * n) - b;
        let dx = linalg::solve(&lhs, &rhs, "fixed-point system")?;
        Ok(FixedPoint {
            theta: dx.rows(0, n).into_owned(),
            phi: dx.rows(n, n).into_owned(),
        })
    }

    pub fn reward_p(&self, theta: &DVector<f64>) -> f64 {
        self.g_p.dot(theta) - 0.5 * self.eta_p * theta.norm_squared()
    }

    pub fn reward_q(&self, phi: &DVector<f64>) -> f64 {
        self.g_q.dot(phi) - 0.5 * self.eta_q * phi.norm_squared()
    }

    pub fn reward_grad_p(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.g_p - theta * self.eta_p
    }

    pub fn reward_grad_q(&self, phi: &DVector<f64>) -> DVector<f64> {
        &self.g_q - phi * self.eta_q
    }

    /// `E_{P_H}[−∇_θ ℓ(θ*)]`: mean of θ's curated data minus θ*.
    pub fn curation_direction(&self, fp: &FixedPoint) -> DVector<f64> {
        self.synth_mean_theta(&fp.theta, &fp.phi) + &self.shift_theta - &fp.theta
    }

    /// Per-source mean gradients `E[∇_θ ℓ(θ*)]` of θ's real, synthetic and
    /// curated data.
    pub fn source_gradients_theta(&self, fp: &FixedPoint) -> SourceGradients {
        let synth = &fp.theta - self.synth_mean_theta(&fp.theta, &fp.phi);
        SourceGradients {
            real: &fp.theta - &self.real_theta,
            curated: &synth - &self.shift_theta,
            synth,
        }
    }

    pub fn source_gradients_phi(&self, fp: &FixedPoint) -> SourceGradients {
        let synth = &fp.phi - self.synth_mean_phi(&fp.theta, &fp.phi);
        SourceGradients {
            real: &fp.phi - &self.real_phi,
            curated: &synth - &self.shift_phi,
            synth,
        }
    }
}

/// Mean loss gradients of one model's three data sources at the stable point.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceGradients {
    pub real: DVector<f64>,
    pub synth: DVector<f64>,
    pub curated: DVector<f64>,
}

/// `(∂J_p(θ*)/∂λ_H^θ, ∂J_q(φ*)/∂λ_H^θ)` by differentiating the closed-form
/// stable point.
pub fn analytic_dj_dlambda(system: &GaussianSystem) -> Result<(f64, f64)> {
    let fp = system.fixed_point()?;
    let rates = WeightRates::curation(&system.theta_mix)?;
    let d = system.fixed_point_rate(rates, WeightRates::default())?;
    Ok((
        system.reward_grad_p(&fp.theta).dot(&d.theta),
        system.reward_grad_q(&fp.phi).dot(&d.phi),
    ))
}
