//! Command implementations and their file outputs.
//!
//! Every CSV starts with one `#` comment line carrying the schema name and
//! version, the config hash and the seed; every JSON document carries the
//! same three fields at the top level.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use curloop::dynamics::{
    convergence_metric, empirical_contraction_rate, run_loop, tail_mean, LoopOptions, SampleMode, Trajectory,
};
use curloop::gaussian::analytic_dj_dlambda;
use curloop::sensitivity::{sensitivity_report, BlockContribution, SensitivityReport};
use curloop::stats::{
    finite_sample_derivatives, finite_sample_rewards, mc_values, rewards_from_fixed_points, summarize, EstimateWithCI,
};
use curloop::{linalg, Error, GaussianSystem, Result};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;

pub const SCHEMA_VERSION: u32 = 1;
/// `Δ` threshold of the convergence flag.
pub const CONVERGENCE_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub schema: String,
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(schema: &str, cfg: &ExperimentConfig) -> Self {
        Provenance {
            schema: schema.to_string(),
            schema_version: SCHEMA_VERSION,
            config_hash: cfg.hash(),
            seed: cfg.seed,
        }
    }

    pub fn comment_line(&self) -> String {
        format!(
            "# curloop {} schema_version={} config_hash={} seed={}",
            self.schema, self.schema_version, self.config_hash, self.seed
        )
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Writes the provenance comment, then a header row and `rows`.
pub fn write_csv(path: &Path, prov: &Provenance, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "{}", prov.comment_line())?;
    let mut w = csv::Writer::from_writer(file);
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    writeln!(file)?;
    Ok(())
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Invalid(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VectorPair {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
}

impl VectorPair {
    fn new(theta: &DVector<f64>, phi: &DVector<f64>) -> Self {
        VectorPair {
            theta: theta.iter().copied().collect(),
            phi: phi.iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateSummary {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub mode: SampleMode,
    pub replicas: usize,
    pub iterations: usize,
    pub tail_window: (usize, usize),
    pub fixed_point_estimate: VectorPair,
    pub closed_form: Option<VectorPair>,
    /// `‖(θ̂, φ̂) − (θ*, φ*)‖`.
    pub estimate_error: Option<f64>,
    pub converged: bool,
    pub converged_at: Option<usize>,
    /// Two-step contraction factor of the (replica-mean) trajectory.
    pub measured_rate: Option<f64>,
    pub coupling_norm: f64,
    pub j_p: EstimateWithCI,
    pub j_q: EstimateWithCI,
}

/// Per-iteration replica means of a set of trajectories.
struct MeanPath {
    theta: Vec<DVector<f64>>,
    phi: Vec<DVector<f64>>,
    j_p: Vec<(f64, f64)>,
    j_q: Vec<(f64, f64)>,
}

fn mean_path(trajs: &[Trajectory]) -> Result<MeanPath> {
    let r = trajs.len() as f64;
    let steps = trajs[0].theta.len();
    let avg = |pick: &dyn Fn(&Trajectory) -> &Vec<DVector<f64>>, k: usize| {
        trajs.iter().fold(DVector::zeros(pick(&trajs[0])[0].len()), |a, t| a + &pick(t)[k]) / r
    };
    let ci = |vals: Vec<f64>| -> Result<(f64, f64)> {
        if vals.len() < 2 {
            return Ok((vals[0], 0.0));
        }
        let e = summarize(&vals)?;
        Ok((e.mean, e.half_width))
    };
    let mut out = MeanPath {
        theta: Vec::with_capacity(steps),
        phi: Vec::with_capacity(steps),
        j_p: Vec::with_capacity(steps),
        j_q: Vec::with_capacity(steps),
    };
    for k in 0..steps {
        out.theta.push(avg(&|t| &t.theta, k));
        out.phi.push(avg(&|t| &t.phi, k));
        out.j_p.push(ci(trajs.iter().map(|t| t.j_p[k]).collect())?);
        out.j_q.push(ci(trajs.iter().map(|t| t.j_q[k]).collect())?);
    }
    Ok(out)
}

/// Runs the loop (once in exact mode, `replicas` times in finite mode) and
/// writes `trajectory.csv` and `summary.json` into `out`.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<SimulateSummary> {
    cfg.validate()?;
    let sys = cfg.system.build()?;
    let prov = Provenance::new("trajectory", cfg);
    let opts = LoopOptions {
        iterations: cfg.iterations,
        schedule: cfg.schedule,
        mode: cfg.sample_mode,
        divergence_bound: cfg.divergence_bound,
        theta0: None,
        phi0: None,
    };
    let seed = cfg.run_seed();
    let trajs: Vec<Trajectory> = match cfg.sample_mode {
        SampleMode::Exact => vec![run_loop(&sys, &opts, seed)?],
        SampleMode::Finite { .. } => {
            with_workers(cfg.workers, || mc_values(cfg.replicas, seed, |s| run_loop(&sys, &opts, s)))??
        }
    };
    let path = mean_path(&trajs)?;
    let mean_traj = Trajectory {
        theta: path.theta.clone(),
        phi: path.phi.clone(),
        j_p: path.j_p.iter().map(|x| x.0).collect(),
        j_q: path.j_q.iter().map(|x| x.0).collect(),
        delta_theta: Vec::new(),
        delta_phi: Vec::new(),
        seed,
        schedule: cfg.schedule,
        mode: cfg.sample_mode,
    };
    let deltas = convergence_metric(&mean_traj, 1)?;
    let converged_at = deltas.first_below(CONVERGENCE_TOL);
    let (from, to) = cfg.tail_window;
    let estimate = tail_mean(&mean_traj, from, to)?;
    let closed = sys.fixed_point().ok();
    let estimate_error = closed.as_ref().map(|fp| {
        ((&estimate.theta - &fp.theta).norm_squared() + (&estimate.phi - &fp.phi).norm_squared()).sqrt()
    });
    let measured_rate = closed
        .as_ref()
        .and_then(|fp| empirical_contraction_rate(&mean_traj, fp, 2).ok());
    let (j_p, j_q) = match cfg.sample_mode {
        SampleMode::Exact => {
            let point = |v: f64| EstimateWithCI {
                mean: v,
                half_width: 0.0,
                n_replicas: 1,
                level: 0.95,
            };
            (point(sys.reward_p(&estimate.theta)), point(sys.reward_q(&estimate.phi)))
        }
        SampleMode::Finite { .. } => {
            let fps: Vec<_> = trajs.iter().map(|t| tail_mean(t, from, to)).collect::<Result<_>>()?;
            let r = rewards_from_fixed_points(&sys, &fps)?;
            (r.j_p, r.j_q)
        }
    };

    ensure_dir(out)?;
    let d = sys.dim();
    let mut header: Vec<String> = [
        "iteration",
        "theta_norm",
        "phi_norm",
        "j_p",
        "j_p_ci",
        "j_q",
        "j_q_ci",
        "delta_theta",
        "delta_phi",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=d).map(|i| format!("theta_{i}")));
    header.extend((1..=d).map(|i| format!("phi_{i}")));
    let rows: Vec<Vec<String>> = (0..path.theta.len())
        .map(|k| {
            let delta = |s: &[Option<f64>]| if k == 0 { String::new() } else { opt(s[k - 1]) };
            let mut row = vec![
                k.to_string(),
                num(path.theta[k].norm()),
                num(path.phi[k].norm()),
                num(path.j_p[k].0),
                num(path.j_p[k].1),
                num(path.j_q[k].0),
                num(path.j_q[k].1),
                delta(&deltas.theta),
                delta(&deltas.phi),
            ];
            row.extend(path.theta[k].iter().map(|&v| num(v)));
            row.extend(path.phi[k].iter().map(|&v| num(v)));
            row
        })
        .collect();
    write_csv(&out.join("trajectory.csv"), &prov, &header, &rows)?;

    let summary = SimulateSummary {
        provenance: Provenance::new("simulate-summary", cfg),
        mode: cfg.sample_mode,
        replicas: trajs.len(),
        iterations: cfg.iterations,
        tail_window: cfg.tail_window,
        fixed_point_estimate: VectorPair::new(&estimate.theta, &estimate.phi),
        closed_form: closed.as_ref().map(|fp| VectorPair::new(&fp.theta, &fp.phi)),
        estimate_error,
        converged: converged_at.is_some(),
        converged_at,
        measured_rate,
        coupling_norm: linalg::spectral_norm(&sys.phi_from_theta),
        j_p,
        j_q,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Self-influence headline numbers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfluenceSummary {
    pub rho_p: Option<f64>,
    /// `⟨∇J_p, S_p·E[−∇ℓ]⟩`.
    pub inner_product: f64,
    pub threshold: Option<f64>,
    pub decisive: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub t: f64,
    pub lambda: f64,
    pub rho_p: Option<f64>,
    pub rho_q: Option<f64>,
    #[serde(rename = "dJp_dlambda")]
    pub djp_dlambda: f64,
    #[serde(rename = "dJq_dlambda")]
    pub djq_dlambda: f64,
    pub decisive_p: Option<bool>,
    pub decisive_q: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityOutput {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub summary: InfluenceSummary,
    pub report: SensitivityReport,
    pub t_grid: Vec<GridRow>,
}

fn blockwise_rows(t: Option<f64>, blocks: &[BlockContribution]) -> Vec<Vec<String>> {
    blocks
        .iter()
        .map(|b| {
            vec![
                opt(t),
                b.block.to_string(),
                num(b.self_pre),
                num(b.self_post),
                num(b.cross_pre),
                num(b.cross_post),
                b.self_reversed().to_string(),
                b.cross_reversed().to_string(),
            ]
        })
        .collect()
}

/// Writes `sensitivity.json`, plus `blockwise.csv` when the matrices are
/// 2×2 block-diagonal and `sensitivity_grid.csv` when a t grid is set.
pub fn cmd_sensitivity(cfg: &ExperimentConfig, out: &Path) -> Result<SensitivityOutput> {
    cfg.validate()?;
    let sys = cfg.system.build()?;
    let report = sensitivity_report(&sys, cfg.constants.as_ref())?;
    let lambda = sys.lambda_cur();
    let grid_reports: Vec<(f64, SensitivityReport)> = with_workers(cfg.workers, || {
        cfg.sweep
            .t
            .par_iter()
            .map(|&t| {
                let s = cfg.system.build_at(Some(t), None)?;
                Ok((t, sensitivity_report(&s, cfg.constants.as_ref())?))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let t_grid: Vec<GridRow> = grid_reports
        .iter()
        .map(|(t, r)| GridRow {
            t: *t,
            lambda,
            rho_p: r.rho_p,
            rho_q: r.rho_q,
            djp_dlambda: r.djp_dlambda,
            djq_dlambda: r.djq_dlambda,
            decisive_p: r.decisive_p,
            decisive_q: r.decisive_q,
        })
        .collect();

    ensure_dir(out)?;
    if let Some(blocks) = &report.blockwise {
        let header: Vec<String> = [
            "t",
            "block",
            "self_pre",
            "self_post",
            "cross_pre",
            "cross_post",
            "self_reversed",
            "cross_reversed",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let mut rows = blockwise_rows(cfg.system.base_t(), blocks);
        for (t, r) in &grid_reports {
            if let Some(b) = &r.blockwise {
                rows.extend(blockwise_rows(Some(*t), b));
            }
        }
        write_csv(&out.join("blockwise.csv"), &Provenance::new("blockwise", cfg), &header, &rows)?;
    }
    if !t_grid.is_empty() {
        let header: Vec<String> = [
            "t",
            "lambda",
            "rho_p",
            "rho_q",
            "dJp_dlambda",
            "dJq_dlambda",
            "decisive_p",
            "decisive_q",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let rows: Vec<Vec<String>> = t_grid
            .iter()
            .map(|g| {
                vec![
                    num(g.t),
                    num(g.lambda),
                    opt(g.rho_p),
                    opt(g.rho_q),
                    num(g.djp_dlambda),
                    num(g.djq_dlambda),
                    g.decisive_p.map(|b| b.to_string()).unwrap_or_default(),
                    g.decisive_q.map(|b| b.to_string()).unwrap_or_default(),
                ]
            })
            .collect();
        write_csv(
            &out.join("sensitivity_grid.csv"),
            &Provenance::new("sensitivity-grid", cfg),
            &header,
            &rows,
        )?;
    }
    let output = SensitivityOutput {
        provenance: Provenance::new("sensitivity", cfg),
        summary: InfluenceSummary {
            rho_p: report.rho_p,
            inner_product: report.inner_product_p,
            threshold: report.threshold_p,
            decisive: report.decisive_p,
        },
        report,
        t_grid,
    };
    write_json(&out.join("sensitivity.json"), &output)?;
    Ok(output)
}

pub const SWEEP_QUANTITIES: [&str; 4] = ["J_p", "J_q", "dJp_dlambda", "dJq_dlambda"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub t: Option<f64>,
    pub lambda: f64,
    pub n: usize,
    pub quantity: &'static str,
    pub closed_form: Option<f64>,
    pub estimate: Option<f64>,
    pub ci_half_width: Option<f64>,
    pub replicas: usize,
    pub error: Option<String>,
}

fn sweep_point(cfg: &ExperimentConfig, t: Option<f64>, lambda: f64, n: usize) -> Vec<SweepRow> {
    let row = |q: &'static str| SweepRow {
        t,
        lambda,
        n,
        quantity: q,
        closed_form: None,
        estimate: None,
        ci_half_width: None,
        replicas: cfg.replicas,
        error: None,
    };
    let run = || -> Result<Vec<(f64, EstimateWithCI)>> {
        let sys: GaussianSystem = cfg.system.build_at(t, Some(lambda))?;
        let fp = sys.fixed_point()?;
        let (dp, dq) = analytic_dj_dlambda(&sys)?;
        let proto = cfg.protocol(n);
        // One seed for every point: common random numbers across the grid.
        let r = finite_sample_rewards(&sys, &proto, cfg.run_seed())?;
        let d = finite_sample_derivatives(&sys, &proto, cfg.fd_step, cfg.run_seed())?;
        Ok(vec![
            (sys.reward_p(&fp.theta), r.j_p),
            (sys.reward_q(&fp.phi), r.j_q),
            (dp, d.j_p),
            (dq, d.j_q),
        ])
    };
    match run() {
        Ok(vals) => SWEEP_QUANTITIES
            .iter()
            .zip(vals)
            .map(|(q, (closed, est))| SweepRow {
                closed_form: Some(closed),
                estimate: Some(est.mean),
                ci_half_width: Some(est.half_width),
                ..row(q)
            })
            .collect(),
        Err(e) => SWEEP_QUANTITIES
            .iter()
            .map(|q| SweepRow {
                error: Some(e.to_string()),
                ..row(q)
            })
            .collect(),
    }
}

/// Long-format sweep over `(t, λ, n)`, written to `sweep.csv`. Points run
/// in parallel; failures are recorded per row.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let axes = &cfg.sweep;
    if axes.lambda.is_empty() || axes.n.is_empty() {
        return Err(Error::Invalid("sweep needs nonempty lambda and n grids".into()));
    }
    let ts: Vec<Option<f64>> = if cfg.system.is_gaussian() {
        if axes.t.is_empty() {
            return Err(Error::Invalid("sweep over a gaussian system needs a nonempty t grid".into()));
        }
        axes.t.iter().map(|&t| Some(t)).collect()
    } else {
        vec![None]
    };
    let mut points = Vec::new();
    for &t in &ts {
        for &l in &axes.lambda {
            for &n in &axes.n {
                points.push((t, l, n));
            }
        }
    }
    let mut rows: Vec<SweepRow> = with_workers(cfg.workers, || {
        points
            .par_iter()
            .flat_map_iter(|&(t, l, n)| sweep_point(cfg, t, l, n))
            .collect()
    })?;
    let q_index = |q: &str| SWEEP_QUANTITIES.iter().position(|x| *x == q).unwrap_or(usize::MAX);
    rows.sort_by(|a, b| {
        a.t.unwrap_or(f64::NAN)
            .total_cmp(&b.t.unwrap_or(f64::NAN))
            .then(a.lambda.total_cmp(&b.lambda))
            .then(a.n.cmp(&b.n))
            .then(q_index(a.quantity).cmp(&q_index(b.quantity)))
    });

    ensure_dir(out)?;
    let header: Vec<String> = [
        "t",
        "lambda",
        "n",
        "quantity",
        "closed_form",
        "estimate",
        "ci_half_width",
        "replicas",
        "error",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                opt(r.t),
                num(r.lambda),
                r.n.to_string(),
                r.quantity.to_string(),
                opt(r.closed_form),
                opt(r.estimate),
                opt(r.ci_half_width),
                r.replicas.to_string(),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(&out.join("sweep.csv"), &Provenance::new("sweep", cfg), &header, &body)?;
    Ok(rows)
}

/// Output directory: the flag wins over the config, then `./out`.
pub fn output_dir(flag: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}
