//! Drivers for the singular-limit experiments: the local-pressure limit
//! `eps -> 0`, the relaxation limit `friction -> inf` in diffusive time, the
//! porous-media consistency limit and the combined limit.
//!
//! Runs inside a study execute in parallel; results are collected in
//! parameter order so every output is a deterministic function of the inputs.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hydro::{self, SimState, SolverConfig, System};
use crate::initial_data::InitialData;
use crate::kernels::KernelFamily;
use crate::littlewood_paley::{besov_norm, build_partition, lp_block};
use crate::spectral::{GridSpec, SpectralField};

/// Errors below this are treated as numerically zero.
pub const ERROR_FLOOR: f64 = 1e-10;

/// Log-log least-squares fit `log e = slope log p + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub parameter_values: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Some error sits at the numerical floor, so the slope is meaningless.
    pub degenerate: bool,
}

impl RateFit {
    pub fn csv(&self) -> String {
        format!(
            "slope,intercept,r_squared,degenerate\n{:e},{:e},{:e},{}\n",
            self.slope, self.intercept, self.r_squared, self.degenerate
        )
    }
}

pub fn fit_rate(params: &[f64], errors: &[f64]) -> Result<RateFit> {
    if params.len() != errors.len() {
        return Err(Error::Argument("parameter and error lists differ in length".into()));
    }
    if params.len() < 3 {
        return Err(Error::Argument("a rate fit needs at least 3 points".into()));
    }
    if params.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::Argument("parameters must be positive".into()));
    }
    let degenerate = errors.iter().any(|e| !(*e > ERROR_FLOOR));
    if degenerate {
        return Ok(RateFit {
            parameter_values: params.to_vec(),
            errors: errors.to_vec(),
            slope: f64::NAN,
            intercept: f64::NAN,
            r_squared: f64::NAN,
            degenerate,
        });
    }
    let xs: Vec<f64> = params.iter().map(|p| p.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        parameter_values: params.to_vec(),
        errors: errors.to_vec(),
        slope,
        intercept: my - slope * mx,
        r_squared,
        degenerate,
    })
}

/// Shared study inputs: grid, data and the hyperbolic solver template.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyBase {
    pub grid: GridSpec,
    pub data: InitialData,
    /// Template; `system`, `kernel.epsilon` and `friction` are overridden per run.
    pub solver: SolverConfig,
    /// Time between compared snapshots (diffusive time for the relaxation studies).
    pub sample_interval: f64,
    /// Horizon (diffusive time for the relaxation studies).
    pub horizon: f64,
    /// Largest `friction * dt` allowed in the relaxation runs.
    pub stiffness: f64,
}

impl StudyBase {
    fn kernel(&self, eps: f64) -> KernelFamily {
        KernelFamily { epsilon: eps, ..self.solver.kernel }
    }

    fn samples(&self) -> usize {
        (self.horizon / self.sample_interval).round().max(1.0) as usize
    }
}

/// Per-parameter result row of a study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub parameter: f64,
    pub secondary: f64,
    /// Headline error used in the fit.
    pub error: f64,
    pub extra: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyResult {
    pub name: String,
    pub rows: Vec<StudyRow>,
    pub fit: Option<RateFit>,
    pub secondary_fit: Option<RateFit>,
    /// Errors at the numerical floor were encountered.
    pub floor_saturated: bool,
    pub notes: Vec<String>,
}

impl StudyResult {
    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.error).collect()
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].error < w[0].error)
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("parameter,secondary,error");
        if let Some(r) = self.rows.first() {
            for (k, _) in &r.extra {
                let _ = write!(s, ",{k}");
            }
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{:e},{:e},{:e}", r.parameter, r.secondary, r.error);
            for (_, v) in &r.extra {
                let _ = write!(s, ",{v:e}");
            }
            s.push('\n');
        }
        s
    }
}

/// Snapshots of a hyperbolic run at multiples of `interval` up to `horizon`.
fn sampled_run(s0: &SimState, cfg: &SolverConfig, interval: f64, samples: usize) -> Result<Vec<SimState>> {
    let per = (interval / cfg.dt - 1e-9).ceil().max(1.0) as usize;
    let mut c = *cfg;
    c.dt = interval / per as f64;
    c.t_end = interval * samples as f64;
    c.snapshot_stride = per;
    let traj = hydro::run(s0, &c)?;
    if let Some(e) = traj.aborted {
        return Err(e);
    }
    Ok(traj.snapshots)
}

fn density_of(a: &SpectralField) -> SpectralField {
    let mut r = a.clone();
    r.coeffs_mut(0)[0].re += 1.0;
    r
}

/// `eps -> 0`: fuzzy runs against one local-pressure run, sup-in-time
/// `B^{d/2}` errors of `a` (fitted) and `u` (reported).
pub fn eps_limit_study(base: &StudyBase, eps_list: &[f64]) -> Result<StudyResult> {
    if eps_list.len() < 3 || eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Argument("eps list must be decreasing with at least 3 values".into()));
    }
    let s0 = base.data.build(&base.grid)?;
    let d = base.grid.dimension as f64;
    let n = base.samples();
    let mut reference_cfg = base.solver;
    reference_cfg.system = System::Euler;
    let mut jobs: Vec<Option<f64>> = vec![None];
    jobs.extend(eps_list.iter().map(|&e| Some(e)));
    let runs: Vec<Result<Vec<SimState>>> = jobs
        .par_iter()
        .map(|job| match job {
            None => sampled_run(&s0, &reference_cfg, base.sample_interval, n),
            Some(eps) => {
                let mut c = base.solver;
                c.system = System::Fuzzy;
                c.kernel = base.kernel(*eps);
                sampled_run(&s0, &c, base.sample_interval, n)
            }
        })
        .collect();
    let mut runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let reference = runs.remove(0);
    let norm_kernel = KernelFamily::identity();
    let mut rows = Vec::new();
    for (eps, run) in eps_list.iter().zip(&runs) {
        let (mut ea, mut eu) = (0.0f64, 0.0f64);
        for (x, y) in run.iter().zip(&reference) {
            ea = ea.max(besov_norm(&x.a.sub(&y.a)?, d / 2.0, &norm_kernel).total);
            eu = eu.max(besov_norm(&x.u.sub(&y.u)?, d / 2.0, &norm_kernel).total);
        }
        rows.push(StudyRow { parameter: *eps, secondary: 0.0, error: ea, extra: vec![("u_error".into(), eu)] });
    }
    let errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let fit = fit_rate(eps_list, &errors)?;
    let ufit = fit_rate(eps_list, &rows.iter().map(|r| r.extra[0].1).collect::<Vec<_>>())?;
    Ok(StudyResult {
        name: "eps-limit".into(),
        floor_saturated: errors.iter().any(|e| *e <= ERROR_FLOOR),
        rows,
        fit: Some(fit),
        secondary_fit: Some(ufit),
        notes: vec![format!("horizon={}", base.horizon), format!("norm=B^{{{}}}", d / 2.0)],
    })
}

/// Porous-media trajectory sampled at `interval` with a step no larger than `dt_max`.
fn porous_samples(
    r0: &SpectralField,
    kernel: &KernelFamily,
    regularized: bool,
    dt_max: f64,
    interval: f64,
    samples: usize,
) -> Result<Vec<SpectralField>> {
    let dmax = r0.component_values(0).into_iter().fold(0.0, f64::max);
    let h = r0.grid().spacing();
    // headroom for the maximum principle overshoot of the explicit scheme
    let adm = 0.2 * h * h / (dmax * r0.grid().dimension as f64);
    let dt = dt_max.min(adm);
    let per = (interval / dt - 1e-9).ceil().max(1.0) as usize;
    let traj = hydro::run_porous(r0, kernel, regularized, interval / per as f64, interval * samples as f64, per)?;
    Ok(traj.into_iter().map(|(_, r)| r).collect())
}

/// Outcome of one relaxation run compared against a porous reference.
struct RelaxationRun {
    /// sup over samples of the `B^{d/2-1}` density error.
    density_error: f64,
    /// Same in `B^{d/2}`.
    density_error_high: f64,
    /// sup over samples of the split-norm error.
    combined_error: f64,
    /// `int_0^T |w_check|_{B^{d/2}} d tau`, trapezoid over every step.
    damped_integral: f64,
}

/// `min_{j*} sum_{j<j*} 2^{j(d/2-1)} |D_j e| + sum_{j>=j*} 2^{j d/2} |D_j e|`.
pub fn split_norm(e: &SpectralField) -> f64 {
    let d = e.grid().dimension as f64;
    let part = build_partition(e.grid());
    let blocks: Vec<(i32, f64)> = part.active().map(|j| (j, lp_block(e, j).l2_norm())).collect();
    let low = |j: i32, v: f64| 2f64.powf(j as f64 * (d / 2.0 - 1.0)) * v;
    let high = |j: i32, v: f64| 2f64.powf(j as f64 * d / 2.0) * v;
    let mut best = f64::INFINITY;
    for cut in 0..=blocks.len() {
        let s: f64 = blocks
            .iter()
            .enumerate()
            .map(|(i, &(j, v))| if i < cut { low(j, v) } else { high(j, v) })
            .sum();
        best = best.min(s);
    }
    best
}

fn relaxation_run(
    base: &StudyBase,
    s0: &SimState,
    friction: f64,
    kernel: KernelFamily,
    reference: &[SpectralField],
) -> Result<RelaxationRun> {
    let d = base.grid.dimension as f64;
    let n = base.samples();
    let mut cfg = base.solver;
    cfg.system = System::Fuzzy;
    cfg.kernel = kernel;
    cfg.friction = friction;
    // physical time per sample and a step obeying both the CFL and the stiffness cap
    let interval = base.sample_interval * friction;
    let dt_cap = (base.stiffness / friction).min(hydro::admissible_dt(s0, &cfg) * 0.9);
    let per = (interval / dt_cap - 1e-9).ceil().max(1.0) as usize;
    let dt = interval / per as f64;
    let norm_kernel = KernelFamily::identity();
    let w_of = |s: &SimState| -> f64 {
        let check = hydro::rescale_diffusive(s, friction).expect("positive friction");
        let w = hydro::damped_mode(&check, &kernel, 1.0);
        besov_norm(&w, d / 2.0, &norm_kernel).total
    };
    let mut s = s0.clone();
    let mut out = RelaxationRun { density_error: 0.0, density_error_high: 0.0, combined_error: 0.0, damped_integral: 0.0 };
    let mut w_prev = w_of(&s);
    let dtau = dt / friction;
    let measure = |s: &SimState, r: &SpectralField, out: &mut RelaxationRun| -> Result<()> {
        let e = density_of(&s.a).sub(r)?;
        out.density_error = out.density_error.max(besov_norm(&e, d / 2.0 - 1.0, &norm_kernel).total);
        out.density_error_high = out.density_error_high.max(besov_norm(&e, d / 2.0, &norm_kernel).total);
        out.combined_error = out.combined_error.max(split_norm(&e));
        Ok(())
    };
    measure(&s, &reference[0], &mut out)?;
    for k in 1..=n {
        for _ in 0..per {
            s = hydro::step(&s, &cfg, dt)?;
            let w = w_of(&s);
            out.damped_integral += 0.5 * dtau * (w + w_prev);
            w_prev = w;
        }
        measure(&s, &reference[k], &mut out)?;
    }
    Ok(out)
}

fn check_increasing(list: &[f64], what: &str) -> Result<()> {
    if list.len() < 3 || list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Argument(format!("{what} list must be increasing with at least 3 values")));
    }
    Ok(())
}

/// `friction -> inf` at fixed `eps`: diffusively rescaled density against the
/// regularized porous-media solution (`B^{d/2-1}`, fitted) and the damped-mode
/// integral (secondary fit).
pub fn friction_limit_study(base: &StudyBase, lambda_list: &[f64], eps: f64) -> Result<StudyResult> {
    check_increasing(lambda_list, "friction")?;
    let s0 = base.data.build(&base.grid)?;
    let kernel = base.kernel(eps);
    let n = base.samples();
    let r0 = density_of(&s0.a);
    let lmin = lambda_list[0];
    let dt_ref = 0.25 * base.stiffness / (lmin * lmin);
    let reference = porous_samples(&r0, &kernel, true, dt_ref, base.sample_interval, n)?;
    let runs: Vec<Result<RelaxationRun>> = lambda_list
        .par_iter()
        .map(|&lam| relaxation_run(base, &s0, lam, kernel, &reference))
        .collect();
    let mut rows = Vec::new();
    for (lam, run) in lambda_list.iter().zip(runs) {
        let run = run?;
        rows.push(StudyRow {
            parameter: *lam,
            secondary: run.damped_integral,
            error: run.density_error,
            extra: vec![("density_error_crit".into(), run.density_error_high)],
        });
    }
    let errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let fit = fit_rate(lambda_list, &errors)?;
    let wfit = fit_rate(lambda_list, &rows.iter().map(|r| r.secondary).collect::<Vec<_>>())?;
    Ok(StudyResult {
        name: "friction-limit".into(),
        floor_saturated: errors.iter().any(|e| *e <= ERROR_FLOOR),
        rows,
        fit: Some(fit),
        secondary_fit: Some(wfit),
        notes: vec![format!("eps={eps}"), format!("diffusive_horizon={}", base.horizon)],
    })
}

/// `eps -> 0` for the porous-media equations: sup-in-time `B^{d/2}` error
/// against the classical solution. The fitted slope is reported only.
pub fn pme_consistency_study(base: &StudyBase, eps_list: &[f64]) -> Result<StudyResult> {
    if eps_list.len() < 3 || eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Argument("eps list must be decreasing with at least 3 values".into()));
    }
    let s0 = base.data.build(&base.grid)?;
    let r0 = density_of(&s0.a);
    let d = base.grid.dimension as f64;
    let n = base.samples();
    let dt = base.solver.dt;
    let mut jobs: Vec<Option<f64>> = vec![None];
    jobs.extend(eps_list.iter().map(|&e| Some(e)));
    let runs: Vec<Result<Vec<SpectralField>>> = jobs
        .par_iter()
        .map(|job| match job {
            None => porous_samples(&r0, &KernelFamily::identity(), false, dt, base.sample_interval, n),
            Some(eps) => porous_samples(&r0, &base.kernel(*eps), true, dt, base.sample_interval, n),
        })
        .collect();
    let mut runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let reference = runs.remove(0);
    let norm_kernel = KernelFamily::identity();
    let mut rows = Vec::new();
    for (eps, run) in eps_list.iter().zip(&runs) {
        let mut e = 0.0f64;
        for (x, y) in run.iter().zip(&reference) {
            e = e.max(besov_norm(&x.sub(y)?, d / 2.0, &norm_kernel).total);
        }
        rows.push(StudyRow { parameter: *eps, secondary: 0.0, error: e, extra: vec![] });
    }
    let errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let fit = fit_rate(eps_list, &errors)?;
    Ok(StudyResult {
        name: "pme-limit".into(),
        floor_saturated: errors.iter().any(|e| *e <= ERROR_FLOOR),
        rows,
        fit: Some(fit),
        secondary_fit: None,
        notes: vec!["slope reported, not gated".into()],
    })
}

/// Joint limit along `(friction, eps)` pairs against the classical
/// porous-media solution, measured in the split norm.
pub fn combined_limit_study(base: &StudyBase, pairs: &[(f64, f64)]) -> Result<StudyResult> {
    if pairs.len() < 3 {
        return Err(Error::Argument("the combined limit needs at least 3 (friction, eps) pairs".into()));
    }
    let s0 = base.data.build(&base.grid)?;
    let n = base.samples();
    let r0 = density_of(&s0.a);
    let lmin = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let dt_ref = 0.25 * base.stiffness / (lmin * lmin);
    let reference = porous_samples(&r0, &KernelFamily::identity(), false, dt_ref, base.sample_interval, n)?;
    let runs: Vec<Result<RelaxationRun>> = pairs
        .par_iter()
        .map(|&(lam, eps)| relaxation_run(base, &s0, lam, base.kernel(eps), &reference))
        .collect();
    let mut rows = Vec::new();
    for (&(lam, eps), run) in pairs.iter().zip(runs) {
        let run = run?;
        rows.push(StudyRow {
            parameter: lam,
            secondary: eps,
            error: run.combined_error,
            extra: vec![
                ("density_error_low".into(), run.density_error),
                ("density_error_crit".into(), run.density_error_high),
            ],
        });
    }
    let errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
    Ok(StudyResult {
        name: "combined-limit".into(),
        floor_saturated: errors.iter().any(|e| *e <= ERROR_FLOOR),
        rows,
        fit: None,
        secondary_fit: None,
        notes: vec!["error norm: min over dyadic cuts of low blocks in B^{d/2-1} plus high blocks in B^{d/2}".into()],
    })
}
