//! Pseudo-spectral integration of the damped Euler systems with nonlocal
//! pressure and of the porous-media equations.
//!
//! The hyperbolic systems are integrated in velocity form `(a, u)` with
//! `rho = 1 + a`. Friction is absorbed exactly by an integrating factor and
//! everything else is advanced by classical RK4 (Lawson scheme). The
//! porous-media equations use plain explicit RK4.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelFamily;
use crate::spectral::{GridSpec, SpectralField};

/// Hydrodynamic system selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum System {
    /// Nonlocal pressure, plain law.
    Fuzzy,
    /// Nonlocal pressure with a general pressure law.
    FuzzyPp,
    /// Local pressure (`K^ == 1`).
    Euler,
    /// Classical porous-media equation `n_t = div(n grad n)`.
    Pme,
    /// Regularized porous-media equation `r_t = div(r grad K r)`.
    Pmeps,
}

impl System {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fuzzy" => Ok(System::Fuzzy),
            "fuzzy-pp" => Ok(System::FuzzyPp),
            "euler" => Ok(System::Euler),
            "pme" => Ok(System::Pme),
            "pmeps" => Ok(System::Pmeps),
            _ => Err(Error::Argument(format!(
                "unknown system '{s}' (expected fuzzy, fuzzy-pp, euler, pme or pmeps)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            System::Fuzzy => "fuzzy",
            System::FuzzyPp => "fuzzy-pp",
            System::Euler => "euler",
            System::Pme => "pme",
            System::Pmeps => "pmeps",
        }
    }

    pub fn is_porous(&self) -> bool {
        matches!(self, System::Pme | System::Pmeps)
    }
}

/// Pressure law entering the force `-N(K*rho) grad K*rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PressureLaw {
    /// `N == 1`.
    Plain,
    /// `N(rho) = rho^(gamma - 2)`, so `P(rho) = rho^gamma` up to normalization.
    General { gamma: f64 },
}

impl PressureLaw {
    pub fn validate(&self) -> Result<()> {
        if let PressureLaw::General { gamma } = self {
            if !(gamma.is_finite() && *gamma >= 1.0) {
                return Err(Error::Argument(format!("pressure exponent gamma must be >= 1, got {gamma}")));
            }
        }
        Ok(())
    }

    pub fn n_of(&self, rho: f64) -> f64 {
        match self {
            PressureLaw::Plain => 1.0,
            PressureLaw::General { gamma } => rho.powf(gamma - 2.0),
        }
    }

    pub fn is_plain(&self) -> bool {
        match self {
            PressureLaw::Plain => true,
            PressureLaw::General { gamma } => *gamma == 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub system: System,
    pub friction: f64,
    pub dt: f64,
    pub t_end: f64,
    pub kernel: KernelFamily,
    pub pressure: PressureLaw,
    pub snapshot_stride: usize,
    /// Courant number for the hyperbolic bound `dt (|u|_max + c) <= cfl h`.
    pub cfl: f64,
}

impl SolverConfig {
    pub fn new(system: System, kernel: KernelFamily, friction: f64, dt: f64, t_end: f64) -> Self {
        SolverConfig {
            system,
            friction,
            dt,
            t_end,
            kernel,
            pressure: PressureLaw::Plain,
            snapshot_stride: 1,
            cfl: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.friction >= 0.0 && self.friction.is_finite()) {
            return Err(Error::Argument(format!("friction must be >= 0, got {}", self.friction)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Argument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Argument(format!("t_end must be positive, got {}", self.t_end)));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::Argument("snapshot_stride must be >= 1".into()));
        }
        if !(self.cfl > 0.0) {
            return Err(Error::Argument(format!("cfl must be positive, got {}", self.cfl)));
        }
        self.pressure.validate()?;
        self.effective_kernel().validate()
    }

    /// Kernel actually used: the identity for the local systems.
    pub fn effective_kernel(&self) -> KernelFamily {
        match self.system {
            System::Euler | System::Pme => KernelFamily::identity(),
            _ => self.kernel,
        }
    }

    pub fn effective_pressure(&self) -> PressureLaw {
        match self.system {
            System::Fuzzy => PressureLaw::Plain,
            _ => self.pressure,
        }
    }

    /// Number of steps and the uniform step that lands exactly on `t_end`.
    pub fn schedule(&self) -> (usize, f64) {
        let n = (self.t_end / self.dt - 1e-9).ceil().max(1.0) as usize;
        (n, self.t_end / n as f64)
    }
}

/// Hydrodynamic state: density perturbation `a = rho - 1`, velocity `u`, time.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub a: SpectralField,
    pub u: SpectralField,
    pub t: f64,
}

impl SimState {
    pub fn new(a: SpectralField, u: SpectralField, t: f64) -> Result<Self> {
        let d = a.grid().dimension;
        if a.components() != 1 || u.components() != d || a.grid() != u.grid() {
            return Err(Error::Argument("state needs scalar a and d-component u on one grid".into()));
        }
        Ok(SimState { a, u, t })
    }

    /// The uniform state `rho = 1, u = 0`.
    pub fn rest(grid: GridSpec) -> Self {
        SimState { a: SpectralField::zeros(grid, 1), u: SpectralField::zeros(grid, grid.dimension), t: 0.0 }
    }

    pub fn grid(&self) -> &GridSpec {
        self.a.grid()
    }

    pub fn rho_values(&self) -> Vec<f64> {
        self.a.component_values(0).into_iter().map(|x| 1.0 + x).collect()
    }

    pub fn min_rho(&self) -> f64 {
        self.rho_values().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Total mass `int rho`.
    pub fn mass(&self) -> f64 {
        (1.0 + self.a.mean(0)) * self.grid().volume()
    }

    pub fn max_speed(&self) -> f64 {
        speed_max(&self.u.to_values())
    }
}

fn speed_max(u: &[Vec<f64>]) -> f64 {
    let n = u[0].len();
    (0..n)
        .map(|i| u.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

fn check_finite(values: &[Vec<f64>], t: f64, what: &str) -> Result<()> {
    if values.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Integrity { t, what: format!("non-finite {what}") });
    }
    Ok(())
}

fn transform_dealiased(grid: GridSpec, values: &[f64]) -> SpectralField {
    let mut f = SpectralField::from_scalar(grid, values).expect("grid-sized buffer");
    f.dealias_in_place();
    f
}

/// Right-hand side without the friction term: `(-div(rho u), -u.grad u - N grad K a)`.
fn rhs_conservative(s: &SimState, cfg: &SolverConfig) -> Result<(SpectralField, SpectralField)> {
    let grid = *s.grid();
    let d = grid.dimension;
    let kernel = cfg.effective_kernel();
    let a = s.a.component_values(0);
    let u = s.u.to_values();
    check_finite(&[a.clone()], s.t, "density")?;
    check_finite(&u, s.t, "velocity")?;
    let min_rho = a.iter().fold(f64::INFINITY, |m, x| m.min(1.0 + x));
    if min_rho <= 0.0 {
        return Err(Error::Positivity { t: s.t, min_rho });
    }

    let mut flux = Vec::with_capacity(d);
    for uc in &u {
        let p: Vec<f64> = a.iter().zip(uc).map(|(ai, ui)| (1.0 + ai) * ui).collect();
        flux.push(transform_dealiased(grid, &p));
    }
    let da = SpectralField::stack(&flux)?.divergence()?.scale(-1.0);

    let grad_u = s.u.gradient().to_values();
    let ka = s.a.apply_radial(|r| kernel.k_hat(r));
    let grad_ka = ka.gradient();
    let pressure = cfg.effective_pressure();
    let general = if pressure.is_plain() {
        None
    } else {
        let kav = ka.component_values(0);
        let n: Vec<f64> = kav.iter().map(|x| pressure.n_of(1.0 + x)).collect();
        Some((n, grad_ka.to_values()))
    };
    let mut du_parts = Vec::with_capacity(d);
    for c in 0..d {
        let adv: Vec<f64> = (0..grid.len())
            .map(|i| (0..d).map(|k| u[k][i] * grad_u[c * d + k][i]).sum())
            .collect();
        let mut term = transform_dealiased(grid, &adv);
        match &general {
            None => term = term.add(&grad_ka.component(c))?,
            Some((n, g)) => {
                let f: Vec<f64> = n.iter().zip(&g[c]).map(|(ni, gi)| ni * gi).collect();
                term = term.add(&transform_dealiased(grid, &f))?;
            }
        }
        du_parts.push(term.scale(-1.0));
    }
    Ok((da, SpectralField::stack(&du_parts)?))
}

/// Full right-hand side `(da/dt, du/dt)` including friction.
pub fn rhs_fuzzy_euler(s: &SimState, cfg: &SolverConfig) -> Result<(SpectralField, SpectralField)> {
    let (da, du) = rhs_conservative(s, cfg)?;
    let du = du.axpy(-cfg.friction, &s.u)?;
    Ok((da, du))
}

/// `div(r grad K r)` (regularized) or `div(n grad n)` (classical), dealiased.
pub fn rhs_porous(r: &SpectralField, kernel: &KernelFamily, regularized: bool) -> Result<SpectralField> {
    let grid = *r.grid();
    let d = grid.dimension;
    let rv = r.component_values(0);
    check_finite(&[rv.clone()], f64::NAN, "porous density")?;
    let min = rv.iter().fold(f64::INFINITY, |m, x| m.min(*x));
    if min < 0.0 {
        return Err(Error::Positivity { t: f64::NAN, min_rho: min });
    }
    let potential = if regularized { r.apply_radial(|x| kernel.k_hat(x)) } else { r.clone() };
    let g = potential.gradient().to_values();
    let mut flux = Vec::with_capacity(d);
    for gc in g.iter().take(d) {
        let p: Vec<f64> = rv.iter().zip(gc).map(|(a, b)| a * b).collect();
        flux.push(transform_dealiased(grid, &p));
    }
    SpectralField::stack(&flux)?.divergence()
}

/// Largest admissible step for the hyperbolic systems.
pub fn admissible_dt(s: &SimState, cfg: &SolverConfig) -> f64 {
    let pressure = cfg.effective_pressure();
    let rho = s.rho_values();
    let c2 = rho.iter().map(|&r| r.max(0.0) * pressure.n_of(r.max(1e-300))).fold(0.0, f64::max);
    cfg.cfl * s.grid().spacing() / (s.max_speed() + c2.sqrt())
}

/// Largest admissible step for the porous-media systems.
pub fn admissible_dt_porous(r: &SpectralField) -> f64 {
    let dmax = r.component_values(0).into_iter().fold(0.0, f64::max);
    let h = r.grid().spacing();
    0.25 * h * h / (dmax * r.grid().dimension as f64).max(1e-300)
}

/// One integrating-factor RK4 step of size `dt`.
pub fn step(s: &SimState, cfg: &SolverConfig, dt: f64) -> Result<SimState> {
    let adm = admissible_dt(s, cfg);
    if dt > adm * (1.0 + 1e-12) {
        return Err(Error::StepSize { dt, admissible: adm });
    }
    let e = (-cfg.friction * dt).exp();
    let eh = (-cfg.friction * dt * 0.5).exp();
    let h = 0.5 * dt;
    let mk = |a: SpectralField, u: SpectralField, t: f64| SimState { a, u, t };

    let (k1a, k1u) = rhs_conservative(s, cfg)?;
    let s2 = mk(s.a.axpy(h, &k1a)?, s.u.axpy(h, &k1u)?.scale(eh), s.t + h);
    let (k2a, k2u) = rhs_conservative(&s2, cfg)?;
    let s3 = mk(s.a.axpy(h, &k2a)?, s.u.scale(eh).axpy(h, &k2u)?, s.t + h);
    let (k3a, k3u) = rhs_conservative(&s3, cfg)?;
    let s4 = mk(s.a.axpy(dt, &k3a)?, s.u.scale(e).axpy(dt * eh, &k3u)?, s.t + dt);
    let (k4a, k4u) = rhs_conservative(&s4, cfg)?;

    let w = dt / 6.0;
    let a = s.a.axpy(w, &k1a)?.axpy(2.0 * w, &k2a)?.axpy(2.0 * w, &k3a)?.axpy(w, &k4a)?;
    let u = s
        .u
        .scale(e)
        .axpy(w * e, &k1u)?
        .axpy(2.0 * w * eh, &k2u)?
        .axpy(2.0 * w * eh, &k3u)?
        .axpy(w, &k4u)?;
    let next = mk(a, u, s.t + dt);
    let min_rho = next.min_rho();
    if !min_rho.is_finite() {
        return Err(Error::Integrity { t: next.t, what: "non-finite density".into() });
    }
    if min_rho <= 0.0 {
        return Err(Error::Positivity { t: next.t, min_rho });
    }
    Ok(next)
}

/// One explicit RK4 step of a porous-media equation.
pub fn step_porous(r: &SpectralField, kernel: &KernelFamily, regularized: bool, dt: f64) -> Result<SpectralField> {
    let adm = admissible_dt_porous(r);
    if dt > adm * (1.0 + 1e-12) {
        return Err(Error::StepSize { dt, admissible: adm });
    }
    let f = |x: &SpectralField| rhs_porous(x, kernel, regularized);
    let k1 = f(r)?;
    let k2 = f(&r.axpy(0.5 * dt, &k1)?)?;
    let k3 = f(&r.axpy(0.5 * dt, &k2)?)?;
    let k4 = f(&r.axpy(dt, &k3)?)?;
    let w = dt / 6.0;
    r.axpy(w, &k1)?.axpy(2.0 * w, &k2)?.axpy(2.0 * w, &k3)?.axpy(w, &k4)
}

/// Result of a time integration: snapshots at the stride, the final state,
/// and the error that stopped the run early, if any.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<SimState>,
    pub last: SimState,
    pub aborted: Option<Error>,
}

/// Advance `s0` to `cfg.t_end`, calling `observe` on the initial state and on
/// every `snapshot_stride`-th step (the final state is always observed).
///
/// The step is `t_end / ceil(t_end / dt)`. Numerical failures stop the run
/// and are returned in [`Trajectory::aborted`]; observer errors propagate.
pub fn run_with<F>(s0: &SimState, cfg: &SolverConfig, mut observe: F) -> Result<Trajectory>
where
    F: FnMut(&SimState) -> Result<()>,
{
    cfg.validate()?;
    if cfg.system.is_porous() {
        return Err(Error::Argument("porous systems are advanced with run_porous".into()));
    }
    let (n, dt) = cfg.schedule();
    let adm = admissible_dt(s0, cfg);
    if dt > adm {
        return Err(Error::StepSize { dt, admissible: adm });
    }
    let mut s = s0.clone();
    let mut snaps = vec![s.clone()];
    observe(&s)?;
    for k in 1..=n {
        match step(&s, cfg, dt) {
            Ok(next) => s = next,
            Err(e) if e.is_numerical() => {
                return Ok(Trajectory { snapshots: snaps, last: s, aborted: Some(e) });
            }
            Err(e) => return Err(e),
        }
        if k == n {
            s.t = cfg.t_end;
        }
        if k % cfg.snapshot_stride == 0 || k == n {
            observe(&s)?;
            snaps.push(s.clone());
        }
    }
    Ok(Trajectory { snapshots: snaps, last: s, aborted: None })
}

pub fn run(s0: &SimState, cfg: &SolverConfig) -> Result<Trajectory> {
    run_with(s0, cfg, |_| Ok(()))
}

/// Porous-media trajectory `(t, r)` at the stride.
pub fn run_porous(
    r0: &SpectralField,
    kernel: &KernelFamily,
    regularized: bool,
    dt: f64,
    t_end: f64,
    stride: usize,
) -> Result<Vec<(f64, SpectralField)>> {
    if !(dt > 0.0 && t_end > 0.0) || stride == 0 {
        return Err(Error::Argument("dt, t_end and stride must be positive".into()));
    }
    let n = (t_end / dt - 1e-9).ceil().max(1.0) as usize;
    let dt = t_end / n as f64;
    let mut r = r0.clone();
    let mut out = vec![(0.0, r.clone())];
    for k in 1..=n {
        r = step_porous(&r, kernel, regularized, dt)?;
        if k % stride == 0 || k == n {
            out.push((if k == n { t_end } else { k as f64 * dt }, r.clone()));
        }
    }
    Ok(out)
}

/// Damped mode `w = u + friction^-1 grad K a`.
pub fn damped_mode(s: &SimState, kernel: &KernelFamily, friction: f64) -> SpectralField {
    let g = s.a.apply_radial(|r| kernel.k_hat(r)).gradient();
    s.u.axpy(1.0 / friction, &g).expect("shapes agree")
}

/// True when `x` is an integer power of two (positive or negative exponent).
fn power_of_two(x: f64) -> bool {
    x > 0.0 && x.is_finite() && {
        let l = x.log2();
        (l - l.round()).abs() < 1e-12
    }
}

/// Hyperbolic rescaling `rho(t, x) = rho~(f t, f x)`: the state of the
/// `(friction, eps)` problem becomes a state of the `(1, f eps)` problem on
/// the torus dilated by `f`, at time `f t`. Samples are relabeled, not moved.
pub fn rescale_hyperbolic(s: &SimState, factor: f64) -> Result<SimState> {
    if !power_of_two(factor) {
        return Err(Error::Argument(format!("hyperbolic rescaling factor must be a power of two, got {factor}")));
    }
    let length = s.grid().length * factor;
    Ok(SimState { a: s.a.with_grid_length(length), u: s.u.with_grid_length(length), t: s.t * factor })
}

/// Diffusive relabeling `tau = t / f`, `u_check = f u` (same grid).
pub fn rescale_diffusive(s: &SimState, factor: f64) -> Result<SimState> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Argument(format!("diffusive factor must be positive, got {factor}")));
    }
    Ok(SimState { a: s.a.clone(), u: s.u.scale(factor), t: s.t / factor })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Energy {
    pub kinetic: f64,
    /// `1/2 int rho K*rho` minus the uniform-background value `|domain|/2`.
    pub potential: f64,
    pub dissipation: f64,
}

impl Energy {
    pub fn total(&self) -> f64 {
        self.kinetic + self.potential
    }
}

/// Kinetic and interaction energy and the friction dissipation rate.
pub fn energy(s: &SimState, kernel: &KernelFamily, friction: f64) -> Energy {
    let grid = *s.grid();
    let rho = s.rho_values();
    let u = s.u.to_values();
    let mut m2 = 0.0;
    for (i, r) in rho.iter().enumerate() {
        m2 += r * u.iter().map(|c| c[i] * c[i]).sum::<f64>();
    }
    m2 *= grid.cell_volume();
    let lat = grid.lattice();
    let ak: f64 = s
        .a
        .coeffs(0)
        .iter()
        .zip(&lat.norm)
        .map(|(z, &r)| kernel.k_hat(r) * z.norm_sqr())
        .sum::<f64>()
        * grid.volume();
    let potential = s.a.mean(0) * grid.volume() + 0.5 * ak;
    Energy { kinetic: 0.5 * m2, potential, dissipation: friction * m2 }
}
