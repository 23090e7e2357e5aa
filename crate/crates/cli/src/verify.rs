//! Built-in verification presets.

use curloop::dynamics::{run_loop, tail_mean, LoopOptions, TAIL_WINDOW};
use curloop::gaussian::analytic_dj_dlambda;
use curloop::linalg;
use curloop::sensitivity::{compute_kappa, compute_tau, margin_constants, sensitivity_report};
use curloop::stats::fd_derivative;
use curloop::{Error, GaussianSystem, RegularityConstants, Result, RunSeed};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::reference_t_grid;

pub const VERIFY_PRESETS: [&str; 3] = ["text-image", "gaussian-ref", "kappa-tau"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub preset: String,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

fn check(name: &str, pass: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        pass,
        detail,
    }
}

fn text_image() -> Result<Vec<CheckResult>> {
    let sys = GaussianSystem::example_text_image(0.0)?;
    let r = sensitivity_report(&sys, None)?;
    let s_p = DMatrix::from_fn(2, 2, |i, j| r.s_p[i][j]);
    let expected = (DMatrix::identity(2, 2) - &sys.theta_from_phi * &sys.phi_from_theta)
        .try_inverse()
        .ok_or_else(|| Error::Undefined("I - W1 W2 is singular".into()))?;
    let a = DVector::from_vec(vec![1.0, -1.0]);
    let inner = sys.g_p.dot(&(&s_p * &a));
    let rho = r.rho_p.unwrap_or(f64::NAN);
    let th = r.threshold_p.unwrap_or(f64::NAN);
    Ok(vec![
        check(
            "S_p equals (I - W1 W2)^-1",
            (&s_p - &expected).amax() < 1e-12,
            format!("max abs difference {:.1e}", (&s_p - &expected).amax()),
        ),
        check(
            "rho_p = sqrt(2)/2",
            (rho - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12,
            format!("rho_p = {rho:.15}"),
        ),
        check(
            "<grad J_p, S_p a> = -0.5",
            (inner + 0.5).abs() < 1e-10 && (r.inner_product_p + 0.5).abs() < 1e-10,
            format!("{inner:.12}"),
        ),
        check("threshold = 0.997", (th - 0.997).abs() <= 1e-3, format!("threshold = {th:.5}")),
        check(
            "not decisive",
            r.decisive_p == Some(false),
            format!("decisive = {:?}", r.decisive_p),
        ),
    ])
}

fn gaussian_ref() -> Result<Vec<CheckResult>> {
    let lambda = 0.4;
    let (mut formula, mut fd) = (0.0f64, 0.0f64);
    for t in reference_t_grid() {
        let sys = GaussianSystem::reference(t, lambda)?;
        let r = sensitivity_report(&sys, None)?;
        let (cp, cq) = analytic_dj_dlambda(&sys)?;
        let reward = |side: usize| {
            let sys = &sys;
            move |l: f64| -> Result<f64> {
                let s = sys.with_curation(l)?;
                let fp = s.fixed_point()?;
                Ok(if side == 0 { s.reward_p(&fp.theta) } else { s.reward_q(&fp.phi) })
            }
        };
        let fp_ = fd_derivative(reward(0), lambda, 1e-5)?;
        let fq_ = fd_derivative(reward(1), lambda, 1e-5)?;
        let rel = |x: f64, y: f64| (x - y).abs() / y.abs();
        formula = formula.max(rel(r.djp_dlambda, cp)).max(rel(r.djq_dlambda, cq));
        fd = fd.max(rel(r.djp_dlambda, fp_)).max(rel(r.djq_dlambda, fq_));
    }
    let sys = GaussianSystem::reference(0.2, lambda)?;
    let fp = sys.fixed_point()?;
    let traj = run_loop(&sys, &LoopOptions::exact(100), RunSeed(0))?;
    let tail = tail_mean(&traj, TAIL_WINDOW.0, TAIL_WINDOW.1)?;
    let gap = ((&tail.theta - &fp.theta).norm_squared() + (&tail.phi - &fp.phi).norm_squared()).sqrt();
    let signs = |t: f64| -> Result<(f64, f64)> {
        let r = sensitivity_report(&GaussianSystem::reference(t, lambda)?, None)?;
        Ok((r.djp_dlambda, r.djq_dlambda))
    };
    let (p2, q2) = signs(0.2)?;
    let (p9, q9) = signs(0.9)?;
    let r = sensitivity_report(&sys, None)?;
    let s_p = DMatrix::from_fn(24, 24, |i, j| r.s_p[i][j]);
    let inv = (DMatrix::identity(24, 24) - &sys.phi_from_theta)
        .try_inverse()
        .ok_or_else(|| Error::Undefined("I - A is singular".into()))?;
    let off_block = (0..24)
        .flat_map(|i| (0..24).map(move |j| (i, j)))
        .filter(|(i, j)| i / 2 != j / 2)
        .map(|(i, j)| s_p[(i, j)].abs())
        .fold(0.0, f64::max);
    Ok(vec![
        check(
            "influence formula = closed-form derivative",
            formula < 1e-8,
            format!("max rel err {formula:.2e} over 20 t values"),
        ),
        check(
            "influence formula = central difference",
            fd < 1e-4,
            format!("max rel err {fd:.2e} over 20 t values"),
        ),
        check(
            "tail mean = closed-form fixed point",
            gap < 1e-6,
            format!("t = 0.2: distance {gap:.2e}"),
        ),
        check(
            "sign pattern",
            p2 > 0.0 && q2 > 0.0 && p9 > 0.0 && q9 < 0.0,
            format!("t=0.2 ({p2:+.4}, {q2:+.4}); t=0.9 ({p9:+.4}, {q9:+.4})"),
        ),
        check(
            "S_p = (I - A)^-1 and block-diagonal",
            (&s_p - &inv).amax() < 1e-12 && off_block == 0.0,
            format!(
                "max abs difference {:.1e}, coupling norm {:.3}",
                (&s_p - &inv).amax(),
                linalg::spectral_norm(&sys.phi_from_theta)
            ),
        ),
    ])
}

fn kappa_tau() -> Result<Vec<CheckResult>> {
    let c = RegularityConstants::symmetric(1.0, 1.0, 0.2);
    let kappa = compute_kappa(&c);
    let grid = [0.0, 0.1, 0.2, 0.3, 0.4];
    let k_at = |a: f64, b: f64| {
        compute_kappa(&RegularityConstants {
            eps_theta: a,
            eps_phi: b,
            ..c
        })
    };
    let mono = (0..5).all(|i| {
        (0..4).all(|j| k_at(grid[j], grid[i]) <= k_at(grid[j + 1], grid[i]) && k_at(grid[i], grid[j]) <= k_at(grid[i], grid[j + 1]))
    });
    let taus = [1u32, 2, 4, 8]
        .iter()
        .map(|&k| compute_tau(&RegularityConstants { curation_k: k, ..c }).map(|b| b.tau))
        .collect::<Result<Vec<f64>>>()?;
    let (tp, _) = margin_constants(&c)?;
    Ok(vec![
        check(
            "kappa(1, 1, 0.2) = 0.75",
            (kappa - 0.75).abs() <= 4.0 * f64::EPSILON,
            format!("kappa = {kappa}"),
        ),
        check(
            "kappa = 0 at eps = 0",
            compute_kappa(&RegularityConstants::symmetric(1.0, 1.0, 0.0)) == 0.0,
            String::new(),
        ),
        check("kappa monotone in each eps", mono, "5x5 grid".into()),
        check(
            "tau in (0, 1), decreasing in K",
            taus.iter().all(|&t| t > 0.0 && t < 1.0) && taus.windows(2).all(|w| w[1] < w[0]),
            format!("tau(K = 1, 2, 4, 8) = {taus:.4?}"),
        ),
        check(
            "tau_p(1, 1, 0.2) = 0.75",
            (tp - 0.75).abs() <= 4.0 * f64::EPSILON,
            format!("tau_p = {tp}"),
        ),
    ])
}

pub fn cmd_verify(preset: &str) -> Result<VerifyReport> {
    let checks = match preset {
        "text-image" => text_image()?,
        "gaussian-ref" => gaussian_ref()?,
        "kappa-tau" => kappa_tau()?,
        other => {
            return Err(Error::Invalid(format!(
                "unknown verify preset {other:?}; expected one of {}",
                VERIFY_PRESETS.join(", ")
            )))
        }
    };
    Ok(VerifyReport {
        preset: preset.to_string(),
        passed: checks.iter().all(|c| c.pass),
        checks,
    })
}
