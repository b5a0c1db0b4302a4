//! Per-snapshot monitored quantities, running time integrals and the
//! empirical global-bound constant.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hydro::{self, SimState, SolverConfig, Trajectory};
use crate::kernels::{FrequencyClass, KernelFamily};
use crate::littlewood_paley::{besov_norm, functional_h, functional_x, lyapunov_blocks};
use crate::spectral::SpectralField;

/// Diagnostics settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagnosticsConfig {
    /// Regularity index of `X` and `H`.
    pub sigma: f64,
    /// Evaluate the per-block Lyapunov functionals (costlier).
    pub lyapunov: bool,
}

impl DiagnosticsConfig {
    /// `sigma = d/2 + 1`, Lyapunov blocks on.
    pub fn for_dimension(d: usize) -> Self {
        DiagnosticsConfig { sigma: d as f64 / 2.0 + 1.0, lyapunov: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub mass: f64,
    pub min_rho: f64,
    pub energy_kin: f64,
    pub energy_pot: f64,
    pub dissipation: f64,
    pub x_sigma: f64,
    pub h_sigma: f64,
    /// `X` and `H` at the critical index `d/2`.
    pub x_crit: f64,
    pub h_crit: f64,
    pub h_integral: f64,
    pub a_low: f64,
    pub a_high: f64,
    pub w_norm: f64,
    pub w_integral: f64,
    pub grad_u_inf: f64,
    pub grad_u_integral: f64,
    /// Class sums of `2^{j(sigma-1)} L_j` and `2^{j(sigma-1)} H_j`.
    pub lyap_low: f64,
    pub lyap_high: f64,
    pub diss_low: f64,
    pub diss_high: f64,
}

pub const CSV_HEADER: &str = "t,mass,min_rho,energy_kin,energy_pot,dissipation,X_sigma,H_sigma,X_crit,H_crit,H_integral,a_low,a_high,w_norm,w_integral,grad_u_inf,grad_u_integral,lyap_low,lyap_high,diss_low,diss_high";

impl DiagnosticsRow {
    pub fn csv_line(&self) -> String {
        let v = [
            self.t,
            self.mass,
            self.min_rho,
            self.energy_kin,
            self.energy_pot,
            self.dissipation,
            self.x_sigma,
            self.h_sigma,
            self.x_crit,
            self.h_crit,
            self.h_integral,
            self.a_low,
            self.a_high,
            self.w_norm,
            self.w_integral,
            self.grad_u_inf,
            self.grad_u_integral,
            self.lyap_low,
            self.lyap_high,
            self.diss_low,
            self.diss_high,
        ];
        v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",")
    }
}

pub fn rows_to_csv(rows: &[DiagnosticsRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_line());
    }
    s
}

/// Trapezoid accumulators carried between snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunningIntegrals {
    last: Option<(f64, f64, f64, f64)>,
    pub h: f64,
    pub w: f64,
    pub grad_u: f64,
}

impl RunningIntegrals {
    fn update(&mut self, t: f64, h: f64, w: f64, g: f64) {
        if let Some((t0, h0, w0, g0)) = self.last {
            let dt = t - t0;
            self.h += 0.5 * dt * (h + h0);
            self.w += 0.5 * dt * (w + w0);
            self.grad_u += 0.5 * dt * (g + g0);
        }
        self.last = Some((t, h, w, g));
    }
}

/// Functional friction: the configured value, or 1 in the conservative case.
fn functional_friction(cfg: &SolverConfig) -> f64 {
    if cfg.friction > 0.0 {
        cfg.friction
    } else {
        1.0
    }
}

/// `max_x |grad u(x)|` with the Frobenius norm of the velocity gradient.
pub fn grad_u_inf(u: &SpectralField) -> f64 {
    let g = u.gradient().to_values();
    let n = g[0].len();
    (0..n).map(|i| g.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt()).fold(0.0, f64::max)
}

/// Pressure coefficient `c = N(1 + K a) - 1` of the Lyapunov functionals.
pub fn pressure_coefficient(s: &SimState, cfg: &SolverConfig) -> Option<SpectralField> {
    let law = cfg.effective_pressure();
    if law.is_plain() {
        return None;
    }
    let kernel = cfg.effective_kernel();
    let ka = s.a.apply_radial(|r| kernel.k_hat(r)).component_values(0);
    let c: Vec<f64> = ka.iter().map(|x| law.n_of(1.0 + x) - 1.0).collect();
    SpectralField::from_scalar(*s.grid(), &c).ok()
}

/// Fill one row and advance the running integrals.
///
/// Lyapunov aggregates are NaN when the smallness condition fails.
pub fn assemble_row(
    s: &SimState,
    cfg: &SolverConfig,
    diag: &DiagnosticsConfig,
    running: &mut RunningIntegrals,
) -> Result<DiagnosticsRow> {
    let kernel = cfg.effective_kernel();
    let lam = functional_friction(cfg);
    let d = s.grid().dimension as f64;
    let e = hydro::energy(s, &kernel, cfg.friction);
    let x_sigma = functional_x(&s.a, &s.u, diag.sigma, &kernel, lam)?;
    let h_sigma = functional_h(&s.a, &s.u, diag.sigma, &kernel, lam)?;
    let x_crit = functional_x(&s.a, &s.u, d / 2.0, &kernel, lam)?;
    let h_crit = functional_h(&s.a, &s.u, d / 2.0, &kernel, lam)?;
    let split = besov_norm(&s.a, d / 2.0, &kernel);
    let w = hydro::damped_mode(s, &kernel, lam);
    let w_norm = besov_norm(&w, d / 2.0, &kernel).total;
    let g = grad_u_inf(&s.u);
    running.update(s.t, h_sigma, w_norm, g);

    let (mut ll, mut lh, mut dl, mut dh) = (0.0, 0.0, 0.0, 0.0);
    if diag.lyapunov {
        let c = pressure_coefficient(s, cfg);
        match lyapunov_blocks(&s.a, &s.u, &kernel, c.as_ref()) {
            Ok(blocks) => {
                for (j, b) in blocks {
                    let scale = 2f64.powf(j as f64 * (diag.sigma - 1.0));
                    match kernel.frequency_class(j) {
                        FrequencyClass::Low => {
                            ll += scale * b.lyapunov;
                            dl += scale * b.dissipation;
                        }
                        FrequencyClass::High => {
                            lh += scale * b.lyapunov;
                            dh += scale * b.dissipation;
                        }
                    }
                }
            }
            Err(Error::Smallness(_)) => {
                ll = f64::NAN;
                lh = f64::NAN;
                dl = f64::NAN;
                dh = f64::NAN;
            }
            Err(e) => return Err(e),
        }
    }

    Ok(DiagnosticsRow {
        t: s.t,
        mass: s.mass(),
        min_rho: s.min_rho(),
        energy_kin: e.kinetic,
        energy_pot: e.potential,
        dissipation: e.dissipation,
        x_sigma,
        h_sigma,
        x_crit,
        h_crit,
        h_integral: running.h,
        a_low: split.low_part,
        a_high: split.high_part,
        w_norm,
        w_integral: running.w,
        grad_u_inf: g,
        grad_u_integral: running.grad_u,
        lyap_low: ll,
        lyap_high: lh,
        diss_low: dl,
        diss_high: dh,
    })
}

/// A finished (or aborted) run with its diagnostics.
#[derive(Debug, Clone)]
pub struct Monitored {
    pub rows: Vec<DiagnosticsRow>,
    pub trajectory: Trajectory,
}

/// Run the solver and assemble a row at every snapshot.
pub fn run_monitored(s0: &SimState, cfg: &SolverConfig, diag: &DiagnosticsConfig) -> Result<Monitored> {
    let mut running = RunningIntegrals::default();
    let mut rows = Vec::new();
    let trajectory = hydro::run_with(s0, cfg, |s| {
        rows.push(assemble_row(s, cfg, diag, &mut running)?);
        Ok(())
    })?;
    Ok(Monitored { rows, trajectory })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantReport {
    /// `max_t (X(t) + int_0^t H) / X(0)`.
    pub c_est: f64,
    /// Snapshot intervals after the first tenth of the run where `X` grew.
    pub monotone_violations: usize,
}

/// Empirical constant of the global bound.
pub fn estimate_constant(rows: &[DiagnosticsRow]) -> Result<ConstantReport> {
    if rows.len() < 2 {
        return Err(Error::Argument("at least two diagnostics rows are required".into()));
    }
    let x0 = rows[0].x_sigma;
    if !(x0 > 0.0) {
        return Err(Error::Degenerate("X(0) = 0; the bound is not normalizable".into()));
    }
    let q: Vec<f64> = rows.iter().map(|r| r.x_sigma + r.h_integral).collect();
    let c_est = q.iter().fold(0.0f64, |m, v| m.max(*v)) / x0;
    let t0 = rows[0].t + 0.1 * (rows[rows.len() - 1].t - rows[0].t);
    let monotone_violations = rows
        .windows(2)
        .filter(|r| r[0].t >= t0 && r[1].x_sigma > r[0].x_sigma * (1.0 + 1e-9))
        .count();
    Ok(ConstantReport { c_est, monotone_violations })
}

/// Integral of a time series by the trapezoid rule restricted to `[t0, t1]`.
pub fn integral_over(ts: &[f64], ys: &[f64], t0: f64, t1: f64) -> f64 {
    let mut s = 0.0;
    for k in 1..ts.len() {
        let (a, b) = (ts[k - 1], ts[k]);
        if b <= t0 || a >= t1 {
            continue;
        }
        s += 0.5 * (b - a) * (ys[k - 1] + ys[k]);
    }
    s
}

/// Share of `int_0^T f` contributed by `[T/2, T]`.
pub fn tail_fraction(ts: &[f64], ys: &[f64]) -> f64 {
    let t_end = *ts.last().unwrap_or(&0.0);
    let total = integral_over(ts, ys, ts[0], t_end);
    if total == 0.0 {
        return 0.0;
    }
    integral_over(ts, ys, 0.5 * t_end, t_end) / total
}

/// Helper for callers that only hold a kernel and need the default config.
pub fn default_config(kernel: KernelFamily, friction: f64, dt: f64, t_end: f64) -> SolverConfig {
    SolverConfig::new(hydro::System::Fuzzy, kernel, friction, dt, t_end)
}
