//! Jacobians of the gradient maps, sensitivity and cross-influence matrices,
//! curation derivatives, cosine diagnostics and the stability constants.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{FixedPoint, GaussianSystem, SourceGradients};
use crate::linalg::{self, matrix_rows};
use crate::types::{MixtureSpec, RegularityConstants, Side};

pub const DEFAULT_FD_STEP: f64 = 1e-5;
/// Relative disagreement between step `h` and `h/2` that triggers Richardson
/// extrapolation.
pub const RICHARDSON_TRIGGER: f64 = 1e-3;

/// Jacobians of `F_p = E_P[∇_θ ℓ]` and `F_q = E_Q[∇_φ ℓ]` at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianSet {
    pub dfp_dtheta: DMatrix<f64>,
    pub dfp_dphi: DMatrix<f64>,
    pub dfq_dtheta: DMatrix<f64>,
    pub dfq_dphi: DMatrix<f64>,
}

impl JacobianSet {
    pub fn dim(&self) -> usize {
        self.dfp_dtheta.nrows()
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        for m in [&self.dfp_dtheta, &self.dfp_dphi, &self.dfq_dtheta, &self.dfq_dphi] {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::Dimension { expected: d, got: m.nrows().max(m.ncols()) });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("jacobian".into()));
            }
        }
        Ok(())
    }
}

/// Closed-form Jacobians of a linear-Gaussian system. They do not depend on
/// the evaluation point.
pub fn jacobians_analytic(sys: &GaussianSystem) -> JacobianSet {
    let d = sys.dim();
    let id = DMatrix::<f64>::identity(d, d);
    let (tm, pm) = (&sys.theta_mix, &sys.phi_mix);
    JacobianSet {
        dfp_dtheta: &id * (1.0 - tm.model_share() * (1.0 - tm.cross_fraction)),
        dfp_dphi: &sys.theta_from_phi * -(tm.model_share() * tm.cross_fraction),
        dfq_dtheta: &sys.phi_from_theta * -(pm.model_share() * pm.cross_fraction),
        dfq_dphi: &id * (1.0 - pm.model_share() * (1.0 - pm.cross_fraction)),
    }
}

fn central_columns<F>(f: &F, x: &DVector<f64>, rows: usize, step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut jac = DMatrix::zeros(rows, x.len());
    for k in 0..x.len() {
        let mut hi = x.clone();
        let mut lo = x.clone();
        hi[k] += step;
        lo[k] -= step;
        let col = (f(&hi) - f(&lo)) / (2.0 * step);
        if col.len() != rows {
            return Err(Error::Dimension { expected: rows, got: col.len() });
        }
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("finite-difference jacobian".into()));
        }
        jac.set_column(k, &col);
    }
    Ok(jac)
}

/// Central-difference Jacobian of `f` at `x`.
///
/// Also evaluates step `h/2`; when the two disagree by more than
/// `RICHARDSON_TRIGGER` relative, returns the Richardson combination
/// `(4·J(h/2) − J(h))/3`.
pub fn central_difference_jacobian<F>(f: F, x: &DVector<f64>, step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!("step must be positive, got {step}")));
    }
    let fx = f(x);
    if fx.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("jacobian callback".into()));
    }
    let rows = fx.len();
    let coarse = central_columns(&f, x, rows, step)?;
    let fine = central_columns(&f, x, rows, step / 2.0)?;
    let scale = coarse.amax().max(fine.amax()).max(f64::MIN_POSITIVE);
    if (&coarse - &fine).amax() / scale > RICHARDSON_TRIGGER {
        Ok((fine * 4.0 - coarse) / 3.0)
    } else {
        Ok(coarse)
    }
}

/// Numerical Jacobians of the two gradient maps at `(θ, φ)`.
pub fn jacobians_numeric<Fp, Fq>(
    fp: Fp,
    fq: Fq,
    theta: &DVector<f64>,
    phi: &DVector<f64>,
    step: f64,
) -> Result<JacobianSet>
where
    Fp: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
    Fq: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    let js = JacobianSet {
        dfp_dtheta: central_difference_jacobian(|t| fp(t, phi), theta, step)?,
        dfp_dphi: central_difference_jacobian(|p| fp(theta, p), phi, step)?,
        dfq_dtheta: central_difference_jacobian(|t| fq(t, phi), theta, step)?,
        dfq_dphi: central_difference_jacobian(|p| fq(theta, p), phi, step)?,
    };
    js.validate()?;
    Ok(js)
}

/// `S_p = (∇_θF_p − ∇_φF_p (∇_φF_q)⁻¹ ∇_θF_q)⁻¹` and the mirror `S_q`.
pub fn sensitivity_matrices(j: &JacobianSet) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    j.validate()?;
    let inv_q = linalg::inverse(&j.dfq_dphi, "dFq/dphi")?;
    let inv_p = linalg::inverse(&j.dfp_dtheta, "dFp/dtheta")?;
    let schur_p = &j.dfp_dtheta - &j.dfp_dphi * &inv_q * &j.dfq_dtheta;
    let schur_q = &j.dfq_dphi - &j.dfq_dtheta * &inv_p * &j.dfp_dphi;
    Ok((
        linalg::inverse(&schur_p, "S_p")?,
        linalg::inverse(&schur_q, "S_q")?,
    ))
}

/// `C_p = −∇_φF_p (∇_φF_q)⁻¹`, `C_q = −∇_θF_q (∇_θF_p)⁻¹`.
pub fn cross_influence_matrices(j: &JacobianSet) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    j.validate()?;
    let inv_q = linalg::inverse(&j.dfq_dphi, "dFq/dphi")?;
    let inv_p = linalg::inverse(&j.dfp_dtheta, "dFp/dtheta")?;
    Ok((-(&j.dfp_dphi * inv_q), -(&j.dfq_dtheta * inv_p)))
}

/// The four matrices together.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceMatrices {
    pub s_p: DMatrix<f64>,
    pub s_q: DMatrix<f64>,
    pub c_p: DMatrix<f64>,
    pub c_q: DMatrix<f64>,
}

impl InfluenceMatrices {
    pub fn from_jacobians(j: &JacobianSet) -> Result<Self> {
        let (s_p, s_q) = sensitivity_matrices(j)?;
        let (c_p, c_q) = cross_influence_matrices(j)?;
        Ok(InfluenceMatrices { s_p, s_q, c_p, c_q })
    }
}

fn check_len(v: &DVector<f64>, d: usize) -> Result<()> {
    if v.len() != d {
        return Err(Error::Dimension { expected: d, got: v.len() });
    }
    Ok(())
}

/// `(∂J_p/∂λ_H^θ, ∂J_q/∂λ_H^θ)` from the sensitivity formulas.
///
/// `curation_dir` is `E_{P_H}[−∇_θ ℓ(θ*)]`.
pub fn influence_derivatives(
    m: &InfluenceMatrices,
    curation_dir: &DVector<f64>,
    grad_jp: &DVector<f64>,
    grad_jq: &DVector<f64>,
    lambda_cur: f64,
) -> Result<(f64, f64)> {
    if !(lambda_cur < 1.0) {
        return Err(Error::Undefined(format!(
            "curation derivative needs lambda_cur < 1, got {lambda_cur}"
        )));
    }
    let d = m.s_p.nrows();
    for v in [curation_dir, grad_jp, grad_jq] {
        check_len(v, d)?;
    }
    let k = 1.0 / (1.0 - lambda_cur);
    Ok((
        k * grad_jp.dot(&(&m.s_p * curation_dir)),
        k * grad_jq.dot(&(&m.s_q * (&m.c_q * curation_dir))),
    ))
}

/// One of the three data sources of a training mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Synth,
    Curated,
}

/// Target proportions `(a_r, a_s, a_h)` the datasets are resized toward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportions {
    pub a_r: f64,
    pub a_s: f64,
    pub a_h: f64,
}

impl Proportions {
    pub const CURATION_ONLY: Proportions = Proportions { a_r: 0.0, a_s: 0.0, a_h: 1.0 };

    pub fn validate(&self) -> Result<()> {
        let v = [self.a_r, self.a_s, self.a_h];
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("proportions".into()));
        }
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("proportions sum to {sum}, expected 1")));
        }
        Ok(())
    }

    pub fn get(&self, s: Source) -> f64 {
        match s {
            Source::Real => self.a_r,
            Source::Synth => self.a_s,
            Source::Curated => self.a_h,
        }
    }
}

fn mix_weight(mix: &MixtureSpec, s: Source) -> f64 {
    match s {
        Source::Real => mix.lambda_real,
        Source::Synth => mix.lambda_synth,
        Source::Curated => mix.lambda_cur,
    }
}

/// Derivatives of `(J_p, J_q)` with respect to mixture weight `pivot` of
/// model `side`, when that model's datasets are resized in fixed
/// proportions `props`.
///
/// `grads` are the per-source mean loss gradients of `side`'s model at the
/// stable point. The bracket uses their negation, the descent directions, so
/// that `(0, 0, 1)` reproduces [`influence_derivatives`].
#[allow(clippy::too_many_arguments)]
pub fn generalized_derivatives(
    side: Side,
    pivot: Source,
    props: Proportions,
    mix: &MixtureSpec,
    grads: &SourceGradients,
    m: &InfluenceMatrices,
    grad_jp: &DVector<f64>,
    grad_jq: &DVector<f64>,
) -> Result<(f64, f64)> {
    props.validate()?;
    let denom = props.get(pivot) - mix_weight(mix, pivot);
    if denom.abs() < 1e-12 {
        return Err(Error::Undefined(format!(
            "resizing proportion for {pivot:?} equals the current weight ({}); derivative undefined",
            mix_weight(mix, pivot)
        )));
    }
    let d = m.s_p.nrows();
    for v in [&grads.real, &grads.synth, &grads.curated, grad_jp, grad_jq] {
        check_len(v, d)?;
    }
    let bracket = -(&grads.synth * props.a_s + &grads.curated * props.a_h + &grads.real * props.a_r);
    let (dtheta, dphi) = match side {
        Side::Theta => (&m.s_p * &bracket, &m.s_q * (&m.c_q * &bracket)),
        Side::Phi => (&m.s_p * (&m.c_p * &bracket), &m.s_q * &bracket),
    };
    Ok((grad_jp.dot(&dtheta) / denom, grad_jq.dot(&dphi) / denom))
}

/// `(dθ*/dλ, dφ*/dλ) = (−S_p(∂F_p/∂λ + C_p ∂F_q/∂λ), −S_q(C_q ∂F_p/∂λ + ∂F_q/∂λ))`.
pub fn implicit_fixed_point_derivative(
    m: &InfluenceMatrices,
    dfp_dlambda: &DVector<f64>,
    dfq_dlambda: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let d = m.s_p.nrows();
    check_len(dfp_dlambda, d)?;
    check_len(dfq_dlambda, d)?;
    Ok((
        -(&m.s_p * (dfp_dlambda + &m.c_p * dfq_dlambda)),
        -(&m.s_q * (&m.c_q * dfp_dlambda + dfq_dlambda)),
    ))
}

/// `(ρ_p, ρ_q) = (cos(∇J_p, dir), cos(∇J_q, C_q·dir))`.
pub fn alignment_cosines(
    grad_jp: &DVector<f64>,
    grad_jq: &DVector<f64>,
    curation_dir: &DVector<f64>,
    c_q: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    let rho_p = linalg::cosine(grad_jp, curation_dir)
        .ok_or_else(|| Error::Undefined("rho_p: zero vector".into()))?;
    let rho_q = linalg::cosine(grad_jq, &(c_q * curation_dir))
        .ok_or_else(|| Error::Undefined("rho_q: zero vector".into()))?;
    Ok((rho_p, rho_q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SufficiencyCheck {
    /// `±1` when decisive, otherwise `None` (indeterminate).
    pub predicted_sign: Option<i8>,
    pub threshold: f64,
    pub decisive: bool,
}

/// Decisive when `|ρ| > 1/√(1 + m²τ²)`.
pub fn sufficiency_check(rho: f64, m: f64, tau: f64) -> Result<SufficiencyCheck> {
    if !(m > 0.0 && tau > 0.0) {
        return Err(Error::invalid(format!(
            "sufficiency check needs m > 0 and tau > 0, got m = {m}, tau = {tau}"
        )));
    }
    if !rho.is_finite() {
        return Err(Error::NonFinite("rho".into()));
    }
    let mt = m * tau;
    let threshold = if mt.is_finite() { 1.0 / (1.0 + mt * mt).sqrt() } else { 0.0 };
    let decisive = rho.abs() > threshold;
    Ok(SufficiencyCheck {
        predicted_sign: decisive.then(|| if rho > 0.0 { 1 } else { -1 }),
        threshold,
        decisive,
    })
}

/// `(τ_p, τ_q)`, the lower bounds on the symmetrized inverse sensitivities.
pub fn margin_constants(c: &RegularityConstants) -> Result<(f64, f64)> {
    c.validate()?;
    let gt = c.gamma_theta - c.l_theta * c.eps_theta;
    let gp = c.gamma_phi - c.l_phi * c.eps_phi;
    if !(gt > 0.0 && gp > 0.0) {
        return Err(Error::invalid(format!(
            "margins need gamma > L*eps for both models (got {gt}, {gp})"
        )));
    }
    let cross = c.l_theta * c.eps_theta * c.l_phi * c.eps_phi;
    Ok((gt - cross / gp, gp - cross / gt))
}

/// Linear convergence rate bound; `+∞` when a denominator is not positive.
pub fn compute_kappa(c: &RegularityConstants) -> f64 {
    let (gt, gp) = (c.gamma_theta, c.gamma_phi);
    let a = c.l_theta * c.eps_theta;
    let b = c.l_phi * c.eps_phi;
    if !(gt > a && gp > b) {
        return f64::INFINITY;
    }
    let t1 = (gt * b + 2.0 * gp * a) / (gp * (gt - a));
    let t2 = (gp * a + 2.0 * gt * b) / (gt * (gp - b));
    let t3 = a / gt + b / gp;
    t1.max(t2).max(t3)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauBound {
    pub tau: f64,
    pub tau1: f64,
    pub tau2: f64,
    /// `L·K·(1 + L·B/2)`.
    pub k_c: f64,
    /// `1 − τ`: real-data share above which the synthetic share stays below τ.
    pub min_real_fraction: f64,
}

/// Real-data threshold of the existence/uniqueness result.
pub fn compute_tau(c: &RegularityConstants) -> Result<TauBound> {
    c.validate()?;
    let (gt, gp, lt, lp) = (c.gamma_theta, c.gamma_phi, c.l_theta, c.l_phi);
    let l = c.lipschitz_l;
    let kc = l * c.curation_k as f64 * (1.0 + l * c.data_bound_b / 2.0);
    let tau1 = gt * gp / ((kc + 1.0) * (lt * gp + lp * gt + 2.0 * gt * gp));
    let r = (2.0 * kc + 1.0) / (kc + 1.0);
    let mixed = gt * lp + gp * lt;
    let terms = [
        (mixed * r + 2.0 * gt * gp) / (4.0 * kc * mixed),
        gt * gp / (kc * mixed),
        (gp * lt * r + 2.0 * gt * gp) / (4.0 * kc * gp * lt),
        gt / (kc * lt),
        (gt * lp * r + 2.0 * gt * gp) / (4.0 * kc * gt * lp),
        gp / (kc * lp),
    ];
    let tau2 = terms.iter().copied().fold(f64::INFINITY, f64::min);
    let tau = tau1.min(tau2);
    Ok(TauBound {
        tau,
        tau1,
        tau2,
        k_c: kc,
        min_real_fraction: 1.0 - tau,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationBound {
    pub theta: f64,
    pub phi: f64,
}

/// Upper bound on `|J(λ_R) − J(1)|`: `(1 − λ_R)·6·L_θ·L²/τ_p` and the φ mirror.
pub fn deviation_bound(c: &RegularityConstants, lambda_real: f64) -> Result<DeviationBound> {
    if !(0.0..=1.0).contains(&lambda_real) {
        return Err(Error::invalid(format!("lambda_real = {lambda_real} outside [0, 1]")));
    }
    let (tp, tq) = margin_constants(c)?;
    if !(tp > 0.0 && tq > 0.0) {
        return Err(Error::invalid(format!("margins must be positive (tau_p = {tp}, tau_q = {tq})")));
    }
    let l2 = c.lipschitz_l * c.lipschitz_l;
    let s = 1.0 - lambda_real;
    Ok(DeviationBound {
        theta: s * 6.0 * c.l_theta * l2 / tp,
        phi: s * 6.0 * c.l_phi * l2 / tq,
    })
}

/// Contributions of one 2×2 block to the self and cross inner products.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockContribution {
    pub block: usize,
    /// `⟨∇J_p, dir⟩` restricted to the block.
    pub self_pre: f64,
    /// `⟨∇J_p, S_p·dir⟩` restricted to the block.
    pub self_post: f64,
    /// `⟨∇J_q, C_q·dir⟩` restricted to the block.
    pub cross_pre: f64,
    /// `⟨∇J_q, S_q·C_q·dir⟩` restricted to the block.
    pub cross_post: f64,
}

impl BlockContribution {
    pub fn self_reversed(&self) -> bool {
        self.self_pre * self.self_post < 0.0
    }

    pub fn cross_reversed(&self) -> bool {
        self.cross_pre * self.cross_post < 0.0
    }
}

fn is_block_diagonal(m: &DMatrix<f64>, block: usize) -> bool {
    let tol = 1e-12 * m.amax().max(1.0);
    if m.nrows() != m.ncols() || m.nrows() % block != 0 {
        return false;
    }
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i / block == j / block || m[(i, j)].abs() <= tol))
}

/// Per-block split of the influence inner products for 2×2 block-diagonal
/// `S_p`, `S_q` and `C_q`.
pub fn blockwise_decomposition(
    m: &InfluenceMatrices,
    curation_dir: &DVector<f64>,
    grad_jp: &DVector<f64>,
    grad_jq: &DVector<f64>,
) -> Result<Vec<BlockContribution>> {
    let d = m.s_p.nrows();
    for v in [curation_dir, grad_jp, grad_jq] {
        check_len(v, d)?;
    }
    for (name, mat) in [("S_p", &m.s_p), ("S_q", &m.s_q), ("C_q", &m.c_q)] {
        if !is_block_diagonal(mat, 2) {
            return Err(Error::invalid(format!("{name} is not 2x2 block-diagonal")));
        }
    }
    let post_p = &m.s_p * curation_dir;
    let pre_q = &m.c_q * curation_dir;
    let post_q = &m.s_q * &pre_q;
    let part = |g: &DVector<f64>, v: &DVector<f64>, i: usize| g.rows(2 * i, 2).dot(&v.rows(2 * i, 2));
    Ok((0..d / 2)
        .map(|i| BlockContribution {
            block: i + 1,
            self_pre: part(grad_jp, curation_dir, i),
            self_post: part(grad_jp, &post_p, i),
            cross_pre: part(grad_jq, &pre_q, i),
            cross_post: part(grad_jq, &post_q, i),
        })
        .collect())
}

/// How `τ` was chosen for the sufficiency thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauSource {
    /// From supplied regularity constants.
    Constants,
    /// `1/‖S‖₂`, the tightest margin compatible with the computed matrix.
    SpectralNorm,
}

pub const SIGN_NOTE: &str = "predicted_sign_q follows sign(rho_q), the same argument as the self-influence \
     condition; alternative_sign_q is the opposite sign, kept for comparison";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub lambda_cur: f64,
    pub dim: usize,
    #[serde(rename = "S_p")]
    pub s_p: Vec<Vec<f64>>,
    #[serde(rename = "S_q")]
    pub s_q: Vec<Vec<f64>>,
    #[serde(rename = "C_p")]
    pub c_p: Vec<Vec<f64>>,
    #[serde(rename = "C_q")]
    pub c_q: Vec<Vec<f64>>,
    pub theta_star: Vec<f64>,
    pub phi_star: Vec<f64>,
    pub curation_dir: Vec<f64>,
    pub grad_jp: Vec<f64>,
    pub grad_jq: Vec<f64>,
    /// `⟨∇J_p, S_p·dir⟩`.
    pub inner_product_p: f64,
    /// `⟨∇J_q, S_q·C_q·dir⟩`.
    pub inner_product_q: f64,
    #[serde(rename = "dJp_dlambda")]
    pub djp_dlambda: f64,
    #[serde(rename = "dJq_dlambda")]
    pub djq_dlambda: f64,
    pub rho_p: Option<f64>,
    pub rho_q: Option<f64>,
    pub m_p: f64,
    pub m_q: f64,
    pub tau_p: f64,
    pub tau_q: f64,
    pub tau_source: TauSource,
    pub threshold_p: Option<f64>,
    pub threshold_q: Option<f64>,
    pub decisive_p: Option<bool>,
    pub decisive_q: Option<bool>,
    pub predicted_sign_p: Option<i8>,
    pub predicted_sign_q: Option<i8>,
    pub alternative_sign_q: Option<i8>,
    pub sign_note: String,
    pub blockwise: Option<Vec<BlockContribution>>,
}

fn checked(rho: Option<f64>, m: f64, tau: f64) -> Option<SufficiencyCheck> {
    rho.and_then(|r| sufficiency_check(r, m, tau).ok())
}

/// Full analysis of a Gaussian system at its stable point.
///
/// With `constants`, `τ_p, τ_q` come from [`margin_constants`]; otherwise
/// `τ = 1/‖S‖₂` for each model.
pub fn sensitivity_report(
    sys: &GaussianSystem,
    constants: Option<&RegularityConstants>,
) -> Result<SensitivityReport> {
    let lambda = sys.lambda_cur();
    let fp: FixedPoint = sys.fixed_point()?;
    let m = InfluenceMatrices::from_jacobians(&jacobians_analytic(sys))?;
    let dir = sys.curation_direction(&fp);
    let gp = sys.reward_grad_p(&fp.theta);
    let gq = sys.reward_grad_q(&fp.phi);
    let (djp, djq) = influence_derivatives(&m, &dir, &gp, &gq, lambda)?;
    let inner_p = gp.dot(&(&m.s_p * &dir));
    let inner_q = gq.dot(&(&m.s_q * (&m.c_q * &dir)));
    let rho_p = linalg::cosine(&gp, &dir);
    let rho_q = linalg::cosine(&gq, &(&m.c_q * &dir));
    let m_p = linalg::min_symmetric_eigenvalue(&m.s_p)?;
    let m_q = linalg::min_symmetric_eigenvalue(&m.s_q)?;
    let (tau_p, tau_q, tau_source) = match constants {
        Some(c) => {
            let (a, b) = margin_constants(c)?;
            (a, b, TauSource::Constants)
        }
        None => (
            1.0 / linalg::spectral_norm(&m.s_p),
            1.0 / linalg::spectral_norm(&m.s_q),
            TauSource::SpectralNorm,
        ),
    };
    let suff_p = checked(rho_p, m_p, tau_p);
    let suff_q = checked(rho_q, m_q, tau_q);
    let blockwise = blockwise_decomposition(&m, &dir, &gp, &gq).ok();
    Ok(SensitivityReport {
        lambda_cur: lambda,
        dim: sys.dim(),
        s_p: matrix_rows(&m.s_p),
        s_q: matrix_rows(&m.s_q),
        c_p: matrix_rows(&m.c_p),
        c_q: matrix_rows(&m.c_q),
        theta_star: fp.theta.iter().copied().collect(),
        phi_star: fp.phi.iter().copied().collect(),
        curation_dir: dir.iter().copied().collect(),
        grad_jp: gp.iter().copied().collect(),
        grad_jq: gq.iter().copied().collect(),
        inner_product_p: inner_p,
        inner_product_q: inner_q,
        djp_dlambda: djp,
        djq_dlambda: djq,
        rho_p,
        rho_q,
        m_p,
        m_q,
        tau_p,
        tau_q,
        tau_source,
        threshold_p: suff_p.map(|s| s.threshold),
        threshold_q: suff_q.map(|s| s.threshold),
        decisive_p: suff_p.map(|s| s.decisive),
        decisive_q: suff_q.map(|s| s.decisive),
        predicted_sign_p: suff_p.and_then(|s| s.predicted_sign),
        predicted_sign_q: suff_q.and_then(|s| s.predicted_sign),
        alternative_sign_q: suff_q.and_then(|s| s.predicted_sign).map(|s| -s),
        sign_note: SIGN_NOTE.to_string(),
        blockwise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn example() -> GaussianSystem {
        GaussianSystem::example_text_image(0.4).unwrap()
    }

    #[test]
    fn example_jacobians() {
        let j = jacobians_analytic(&example());
        let w2 = DMatrix::from_row_slice(2, 2, &[-9.0, 6.0, 6.0, 3.0]) / 7.0;
        assert_eq!(j.dfp_dtheta, DMatrix::identity(2, 2));
        assert_eq!(j.dfp_dphi, -DMatrix::<f64>::identity(2, 2));
        assert_relative_eq!(j.dfq_dtheta, -w2, epsilon = 1e-15);
        assert_eq!(j.dfq_dphi, DMatrix::identity(2, 2));
    }

    #[test]
    fn example_sensitivity_matrix() {
        let m = InfluenceMatrices::from_jacobians(&jacobians_analytic(&example())).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 1.5, 1.5, 4.0]);
        assert_relative_eq!(m.s_p, expected, epsilon = 1e-12);
        let w2 = DMatrix::from_row_slice(2, 2, &[-9.0, 6.0, 6.0, 3.0]) / 7.0;
        assert_relative_eq!(m.c_q, w2, epsilon = 1e-15);
    }

    #[test]
    fn no_interaction_reduces_to_single_model() {
        let d = 3;
        let fp = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.5, 0.0, 0.0, 0.0, 1.0]);
        let j = JacobianSet {
            dfp_dtheta: fp.clone(),
            dfp_dphi: DMatrix::zeros(d, d),
            dfq_dtheta: DMatrix::zeros(d, d),
            dfq_dphi: DMatrix::identity(d, d) * 2.0,
        };
        let m = InfluenceMatrices::from_jacobians(&j).unwrap();
        assert_relative_eq!(m.s_p, fp.try_inverse().unwrap(), epsilon = 1e-14);
        assert_relative_eq!(m.s_q, DMatrix::identity(d, d) * 0.5, epsilon = 1e-14);
        assert!(m.c_p.iter().chain(m.c_q.iter()).all(|v| *v == 0.0));
    }

    #[test]
    fn singular_jacobian_reported() {
        let j = JacobianSet {
            dfp_dtheta: DMatrix::identity(2, 2),
            dfp_dphi: DMatrix::zeros(2, 2),
            dfq_dtheta: DMatrix::zeros(2, 2),
            dfq_dphi: DMatrix::zeros(2, 2),
        };
        assert!(matches!(sensitivity_matrices(&j).unwrap_err(), Error::Singular { .. }));
    }

    #[test]
    fn zero_direction_gives_zero_derivatives() {
        let m = InfluenceMatrices::from_jacobians(&jacobians_analytic(&example())).unwrap();
        let g = DVector::from_vec(vec![1.0, 0.0]);
        let (p, q) = influence_derivatives(&m, &DVector::zeros(2), &g, &g, 0.4).unwrap();
        assert_eq!((p, q), (0.0, 0.0));
        assert!(influence_derivatives(&m, &g, &g, &g, 1.0).is_err());
    }

    #[test]
    fn sufficiency_examples() {
        let s = sufficiency_check(0.9, 1.0, 1.0).unwrap();
        assert_relative_eq!(s.threshold, 1.0 / 2f64.sqrt(), epsilon = 1e-15);
        assert!(s.decisive);
        assert_eq!(s.predicted_sign, Some(1));
        let s = sufficiency_check(-1e-3, 1e200, 1e200).unwrap();
        assert_eq!(s.threshold, 0.0);
        assert_eq!(s.predicted_sign, Some(-1));
        assert!(sufficiency_check(0.5, 0.0, 1.0).is_err());
    }

    #[test]
    fn margin_and_kappa_examples() {
        let c = RegularityConstants::symmetric(1.0, 1.0, 0.2);
        let (tp, tq) = margin_constants(&c).unwrap();
        assert_relative_eq!(tp, 0.75, epsilon = 1e-15);
        assert_relative_eq!(tq, 0.75, epsilon = 1e-15);
        assert_relative_eq!(compute_kappa(&c), 0.75, epsilon = 1e-15);
        let c0 = RegularityConstants::symmetric(2.0, 1.0, 0.0);
        assert_eq!(margin_constants(&c0).unwrap().0, 2.0);
        assert_eq!(compute_kappa(&c0), 0.0);
        assert_eq!(compute_kappa(&RegularityConstants::symmetric(1.0, 1.0, 1.0)), f64::INFINITY);
        assert!(margin_constants(&RegularityConstants::symmetric(1.0, 1.0, 1.5)).is_err());
    }

    #[test]
    fn tau_example() {
        let c = RegularityConstants::symmetric(1.0, 1.0, 0.0);
        let t = compute_tau(&c).unwrap();
        assert_relative_eq!(t.k_c, 1.5, epsilon = 1e-15);
        assert_relative_eq!(t.tau1, 0.1, epsilon = 1e-15);
        assert!(t.tau > 0.0 && t.tau < 1.0);
        assert_relative_eq!(t.min_real_fraction, 1.0 - t.tau, epsilon = 1e-15);
    }

    #[test]
    fn deviation_bound_examples() {
        let c = RegularityConstants::symmetric(1.0, 1.0, 0.2);
        assert_eq!(deviation_bound(&c, 1.0).unwrap().theta, 0.0);
        let half = deviation_bound(&c, 0.5).unwrap().theta;
        let quarter = deviation_bound(&c, 0.75).unwrap().theta;
        assert_relative_eq!(half, 2.0 * quarter, epsilon = 1e-14);
        assert_relative_eq!(half, 0.5 * 6.0 / 0.75, epsilon = 1e-14);
    }

    #[test]
    fn blockwise_rejects_dense_input() {
        let m = InfluenceMatrices::from_jacobians(&jacobians_analytic(&example())).unwrap();
        let v = DVector::from_vec(vec![1.0, 0.0]);
        assert!(blockwise_decomposition(&m, &v, &v, &v).is_ok());
        let sys = GaussianSystem::literal(
            DMatrix::identity(4, 4),
            DMatrix::from_fn(4, 4, |i, j| if i == 0 && j == 3 { 0.3 } else { 0.0 }),
            DVector::from_element(4, 1.0),
            DVector::from_element(4, 1.0),
            DVector::from_element(4, 1.0),
            0.4,
        )
        .unwrap();
        let m = InfluenceMatrices::from_jacobians(&jacobians_analytic(&sys)).unwrap();
        let v = DVector::from_element(4, 1.0);
        assert!(blockwise_decomposition(&m, &v, &v, &v).is_err());
    }

    #[test]
    fn numeric_jacobian_of_linear_map() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, 7.0]);
        let x = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let j = central_difference_jacobian(|v| &m * v, &x, 1e-5).unwrap();
        assert_relative_eq!(j, m, epsilon = 1e-8);
        assert!(central_difference_jacobian(|v| &m * v, &x, 0.0).is_err());
        assert!(central_difference_jacobian(|v: &DVector<f64>| v.map(|_| f64::NAN), &x, 1e-5).is_err());
    }
}
