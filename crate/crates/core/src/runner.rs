//! Experiment dispatch: every subcommand writes its outputs and a re-runnable
//! manifest into one output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::asymptotics::{self, StudyBase, StudyResult};
use crate::config::{ForceMethod, KernelChoice, ProtocolChoice, RunConfig};
use crate::diagnostics::{self, rows_to_csv, DiagnosticsConfig};
use crate::error::{Error, Result};
use crate::hydro::{self, PressureLaw, SimState, System};
use crate::io::{field_csv, write_snapshot, write_text};
use crate::kernels::{log_samples, verify_hypotheses, KernelFamily, TriangleKernel};
use crate::linear_modes::{damped_mode_decay_check, regime_boundaries, spectrum_csv, CRITICAL_TOL};
use crate::littlewood_paley::{besov_norm, build_partition, BesovReport};
use crate::particles::{self, ForceModel, Integrator, MicroMacroConfig, ParticleKernel, Protocol};
use crate::spectral::SpectralField;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Simulate,
    LinearModes,
    EpsLimit,
    FrictionLimit,
    PmeLimit,
    CombinedLimit,
    Particles,
    MicroMacro,
    VerifyKernel,
}

pub const SUBCOMMANDS: [&str; 9] = [
    "simulate",
    "linear-modes",
    "eps-limit",
    "friction-limit",
    "pme-limit",
    "combined-limit",
    "particles",
    "micro-macro",
    "verify-kernel",
];

impl Subcommand {
    pub fn parse(name: &str) -> Result<Self> {
        use Subcommand::*;
        Ok(match name {
            "simulate" => Simulate,
            "linear-modes" => LinearModes,
            "eps-limit" => EpsLimit,
            "friction-limit" => FrictionLimit,
            "pme-limit" => PmeLimit,
            "combined-limit" => CombinedLimit,
            "particles" => Particles,
            "micro-macro" => MicroMacro,
            "verify-kernel" => VerifyKernel,
            _ => {
                return Err(Error::Argument(format!(
                    "unknown subcommand '{name}' (expected one of {})",
                    SUBCOMMANDS.join(", ")
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        SUBCOMMANDS[*self as usize]
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Overrides `solver.system`.
    pub system: Option<System>,
    /// Evaluate the subcommand's acceptance gate.
    pub gate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// One-line human summary.
    pub summary: String,
    /// `None` when the subcommand has no gate.
    pub gate_passed: Option<bool>,
    pub files: Vec<PathBuf>,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_GATE: i32 = 4;

pub fn exit_code(result: &Result<Outcome>, gate: bool) -> i32 {
    match result {
        Ok(o) if gate && o.gate_passed == Some(false) => EXIT_GATE,
        Ok(_) => EXIT_OK,
        Err(e) if e.is_numerical() => EXIT_NUMERICAL,
        Err(Error::Config { .. } | Error::Argument(_) | Error::Domain(_)) => EXIT_CONFIG,
        Err(_) => EXIT_FAILURE,
    }
}

/// Worker count from the flag, falling back to `FUZZY_EULER_JOBS`.
pub fn resolve_jobs(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(j) = flag {
        return if j == 0 { Err(Error::Argument("--jobs must be >= 1".into())) } else { Ok(Some(j)) };
    }
    match std::env::var("FUZZY_EULER_JOBS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(j) if j >= 1 => Ok(Some(j)),
            _ => Err(Error::Argument(format!("FUZZY_EULER_JOBS must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(None),
    }
}

/// Run `f` on a pool of `jobs` workers (the global pool when `None`).
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Argument(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

struct Out {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Out {
    fn new(dir: &Path) -> Result<Out> {
        fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        Ok(Out { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn sub(&self, name: &str) -> Result<Out> {
        Out::new(&self.dir.join(name))
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.dir.join(name);
        write_text(&p, text)?;
        self.files.push(p);
        Ok(())
    }

    fn snapshot(&mut self, name: &str, f: &SpectralField, t: f64) -> Result<()> {
        let p = self.dir.join(name);
        write_snapshot(&p, f, t)?;
        self.files.push(p);
        Ok(())
    }
}

fn manifest(sub: Subcommand, cfg: &RunConfig, opts: &RunOptions) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# subcommand = {}", sub.name());
    let _ = writeln!(s, "# version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "# gate = {}", opts.gate);
    for (k, v) in cfg.seeds() {
        let _ = writeln!(s, "# {k} = {v}");
    }
    s.push_str(&cfg.to_toml());
    s
}

/// Run `sub` with `cfg`, writing into `out_dir`.
pub fn dispatch(sub: Subcommand, cfg: &RunConfig, out_dir: &Path, opts: &RunOptions) -> Result<Outcome> {
    let mut cfg = cfg.clone();
    if let Some(sys) = opts.system {
        cfg.solver.system = sys.name().to_string();
    }
    let mut out = Out::new(out_dir)?;
    out.text("manifest.toml", &manifest(sub, &cfg, opts))?;
    let (summary, gate_passed) = match sub {
        Subcommand::Simulate => simulate(&cfg, &mut out)?,
        Subcommand::LinearModes => linear_modes(&cfg, &mut out)?,
        Subcommand::EpsLimit => eps_limit(&cfg, &mut out)?,
        Subcommand::FrictionLimit => friction_limit(&cfg, &mut out)?,
        Subcommand::PmeLimit => pme_limit(&cfg, &mut out)?,
        Subcommand::CombinedLimit => combined_limit(&cfg, &mut out)?,
        Subcommand::Particles => run_particles(&cfg, &mut out)?,
        Subcommand::MicroMacro => micro_macro(&cfg, &mut out)?,
        Subcommand::VerifyKernel => verify_kernel(&cfg, &mut out)?,
    };
    Ok(Outcome { summary, gate_passed, files: out.files })
}

type Step = (String, Option<bool>);

fn besov_rows(out: &mut String, z: &SpectralField, sigmas: &[f64], kernel: &KernelFamily, t: f64) {
    for &s in sigmas {
        for line in besov_norm(z, s, kernel).csv_rows(t) {
            out.push_str(&line);
            out.push('\n');
        }
    }
}

fn simulate(cfg: &RunConfig, out: &mut Out) -> Result<Step> {
    let grid = cfg.grid_spec();
    let solver = cfg.solver_config()?;
    let s0 = cfg.initial_data.build(&grid)?;
    let sigmas = cfg.sigmas();
    if solver.system.is_porous() {
        let regularized = solver.system == System::Pmeps;
        let kernel = solver.effective_kernel();
        let mut r0 = s0.a.clone();
        r0.coeffs_mut(0)[0].re += 1.0;
        let traj = hydro::run_porous(&r0, &kernel, regularized, solver.dt, solver.t_end, solver.snapshot_stride)?;
        let d = grid.dimension as f64;
        let norm_kernel = KernelFamily::identity();
        let mut csv = String::from("t,mass,min_r,max_r,besov_crit,besov_crit_minus_one\n");
        let mut besov = format!("{}\n", BesovReport::CSV_HEADER);
        for (k, (t, r)) in traj.iter().enumerate() {
            let v = r.component_values(0);
            let mut a = r.clone();
            a.coeffs_mut(0)[0].re -= 1.0;
            let _ = writeln!(
                csv,
                "{t:e},{:e},{:e},{:e},{:e},{:e}",
                r.mean(0) * grid.volume(),
                v.iter().cloned().fold(f64::INFINITY, f64::min),
                v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                besov_norm(&a, d / 2.0, &norm_kernel).total,
                besov_norm(&a, d / 2.0 - 1.0, &norm_kernel).total
            );
            besov_rows(&mut besov, &a, &sigmas, &kernel, *t);
            if cfg.diagnostics.snapshots {
                out.snapshot(&format!("density_{k:05}.bin"), r, *t)?;
            }
        }
        out.text("porous.csv", &csv)?;
        out.text("besov.csv", &besov)?;
        if let Some((t, r)) = traj.last() {
            if grid.dimension == 1 {
                out.text("final_state.csv", &field_csv(r)?)?;
            }
            return Ok((format!("{} run reached t={t}", solver.system.name()), Some(true)));
        }
        return Err(Error::Argument("empty porous trajectory".into()));
    }
    let monitored = diagnostics::run_monitored(&s0, &solver, &cfg.diagnostics_config())?;
    out.text("diagnostics.csv", &rows_to_csv(&monitored.rows))?;
    let kernel = solver.effective_kernel();
    let mut besov = format!("{}\n", BesovReport::CSV_HEADER);
    for (k, s) in monitored.trajectory.snapshots.iter().enumerate() {
        besov_rows(&mut besov, &s.a, &sigmas, &kernel, s.t);
        if cfg.diagnostics.snapshots {
            let both = SpectralField::stack(&[s.a.clone(), s.u.clone()])?;
            out.snapshot(&format!("state_{k:05}.bin"), &both, s.t)?;
        }
    }
    out.text("besov.csv", &besov)?;
    let last = &monitored.trajectory.last;
    if grid.dimension == 1 {
        out.text("final_state.csv", &field_csv(&SpectralField::stack(&[last.a.clone(), last.u.clone()])?)?)?;
    }
    let constant = diagnostics::estimate_constant(&monitored.rows).ok();
    if let Some(c) = constant {
        out.text("constant.csv", &format!("c_est,monotone_violations\n{:e},{}\n", c.c_est, c.monotone_violations))?;
    }
    if let Some(e) = monitored.trajectory.aborted {
        return Err(e);
    }
    let gate = constant.is_some_and(|c| c.c_est.is_finite());
    Ok((format!("{} run reached t={}", solver.system.name(), last.t), Some(gate)))
}

fn lattice_radii(cfg: &RunConfig) -> Vec<f64> {
    let lat = cfg.grid_spec().lattice();
    let mut r: Vec<f64> = lat
        .norm
        .iter()
        .zip(&lat.kept)
        .filter(|(n, k)| **n > 0.0 && **k)
        .map(|(n, _)| *n)
        .collect();
    r.sort_by(|a, b| a.total_cmp(b));
    r.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    r
}

fn linear_modes(cfg: &RunConfig, out: &mut Out) -> Result<Step> {
    let kernel = cfg.kernel_family()?;
    let radii = lattice_radii(cfg);
    out.text("spectrum.csv", &spectrum_csv(&kernel, &radii)?)?;
    let friction = if cfg.solver.friction > 0.0 { cfg.solver.friction } else { 1.0 };
    let mut csv = String::from("xi,lambda_minus,lambda_plus,w_rate,a_rate,w_window,resolved,passed\n");
    let mut all = true;
    let parabolic = radii
        .iter()
        .copied()
        .filter(|&r| 4.0 * r * r * kernel.k_hat(r) / (friction * friction) < 1.0 - CRITICAL_TOL);
    for r in parabolic.take(8) {
        let rep = damped_mode_decay_check(&kernel, friction, &[r], cfg.solver.t_end.max(40.0))?;
        all &= rep.passed || !rep.resolved;
        let _ = writeln!(
            csv,
            "{r:e},{:e},{:e},{:e},{:e},{:e},{},{}",
            rep.lambda_minus, rep.lambda_plus, rep.w_rate, rep.a_rate, rep.w_window, rep.resolved, rep.passed
        );
    }
    out.text("decay.csv", &csv)?;
    let boundaries = regime_boundaries(&kernel, &radii);
    Ok((format!("{} lattice radii, {boundaries} regime boundaries", radii.len()), Some(all)))
}

fn study_base(cfg: &RunConfig) -> Result<StudyBase> {
    Ok(StudyBase {
        grid: cfg.grid_spec(),
        data: cfg.initial_data.clone(),
        solver: cfg.solver_config()?,
        sample_interval: cfg.study.sample_interval.expect("normalized"),
        horizon: cfg.study.horizon.expect("normalized"),
        stiffness: cfg.study.stiffness,
    })
}

fn bessel(cfg: &RunConfig) -> Result<KernelFamily> {
    let k = cfg.kernel_family()?;
    if cfg.kernel.kind != KernelChoice::Bessel {
        return Err(Error::Config {
            location: "kernel.kind".into(),
            message: "the limit studies need a Bessel kernel family".into(),
        });
    }
    Ok(k)
}

fn write_study(out: &mut Out, r: &StudyResult) -> Result<()> {
    out.text("study.csv", &r.csv())?;
    let mut fit = String::from("which,slope,intercept,r_squared,degenerate\n");
    for (name, f) in [("primary", &r.fit), ("secondary", &r.secondary_fit)] {
        if let Some(f) = f {
            let _ = writeln!(fit, "{name},{:e},{:e},{:e},{}", f.slope, f.intercept, f.r_squared, f.degenerate);
        }
    }
    out.text("fit.csv", &fit)?;
    let mut notes = r.notes.join("\n");
    notes.push_str(&format!("\nfloor_saturated={}\n", r.floor_saturated));
    out.text("notes.txt", &notes)
}

/// Monitored run written to `<dir>/diagnostics.csv` with about 100 rows.
fn per_run_diagnostics(out: &Out, dir: &str, s0: &SimState, mut solver: hydro::SolverConfig) -> Result<PathBuf> {
    let mut sub = out.sub(dir)?;
    let (n, _) = solver.schedule();
    solver.snapshot_stride = (n / 100).max(1);
    let diag = DiagnosticsConfig { lyapunov: false, ..DiagnosticsConfig::for_dimension(s0.grid().dimension) };
    let m = diagnostics::run_monitored(s0, &solver, &diag)?;
    sub.text("diagnostics.csv", &rows_to_csv(&m.rows))?;
    Ok(sub.files.remove(0))
}

fn in_band(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

fn eps_limit(cfg: &RunConfig, out: &mut Out) -> Result<Step> {
    let kernel = bessel(cfg)?;
    let base = study_base(cfg)?;
    let r = asymptotics::eps_limit_study(&base, &cfg.study.eps)?;
    write_study(out, &r)?;
    if cfg.study.per_run_diagnostics {
        let s0 = cfg.initial_data.build(&base.grid)?;
        let mut jobs: Vec<(String, hydro::SolverConfig)> = Vec::new();
        let mut solver = base.solver;
        solver.t_end = base.horizon;
        jobs.push(("runs/reference".into(), hydro::SolverConfig { system: System::Euler, ..solver }));
        for &e in &cfg.study.eps {
            jobs.push((format!("runs/eps_{e}"), hydro::SolverConfig { system: System::Fuzzy, kernel: KernelFamily { epsilon: e, ..kernel }, ..solver }));
        }
        let files: Vec<Result<PathBuf>> = jobs.par_iter().map(|(d, c)| per_run_diagnostics(out, d, &s0, *c)).collect();
        for f in files {
            out.files.push(f?);
        }
    }
    let slope = r.fit.as_ref().map_or(f64::NAN, |f| f.slope);
    Ok((format!("eps-limit slope {slope:.3}"), Some(in_band(slope, 0.7, 1.3))))
}

fn relaxation_diagnostics(cfg: &RunConfig, out: &mut Out, runs: &[(String, f64, f64)]) -> Result<()> {
    if !cfg.study.per_run_diagnostics {
        return Ok(());
    }
    let base = study_base(cfg)?;
    let s0 = cfg.initial_data.build(&base.grid)?;
    let files: Vec<Result<PathBuf>> = runs
        .par_iter()
        .map(|(dir, lam, eps)| {
            let mut solver = base.solver;
            solver.system = System::Fuzzy;
            solver.friction = *lam;
            solver.kernel = KernelFamily { epsilon: *eps, ..base.solver.kernel };
            solver.t_end = base.horizon * lam;
            solver.dt = solver.dt.min(base.stiffness / lam).min(0.9 * hydro::admissible_dt(&s0, &solver));
            per_run_diagnostics(out, dir, &s0, solver)
        })
        .collect();
    for f in files {
        out.files.push(f?);
    }
    Ok(())
}

fn friction_limit(cfg: &RunConfig, out: &mut Out) -> Result<Step> {
    bessel(cfg)?;
    let base = study_base(cfg)?;
    let eps = cfg.study.friction_eps.expect("normalized for Bessel kernels");
    let r = asymptotics::friction_limit_study(&base, &cfg.study.lambda, eps)?;
    write_study(out, &r)?;
    let runs: Vec<(String, f64, f64)> = cfg.study.lambda.iter().map(|&l| (format!("runs/lambda_{l}"), l, eps)).collect();
    relaxation_diagnostics(cfg, out, &runs)?;
    let f = r.fit.as_ref().expect("friction study fits");
    let w = r.secondary_fit.as_ref().expect("friction study fits");
    let pass = in_band(f.slope, -1.3, -0.7) && f.r_squared > 0.98 && in_band(w.slope, -1.3, -0.7);
    Ok((format!("friction-limit slope {:.3} (r2 {:.4}), damped-mode slope {:.3}", f.slope, f.r_squared, w.slope), Some(pass)))
}

fn pme_limit(cfg: &RunConfig, out: &mut Out) -> Result<Step> {
    let kernel = bessel(cfg)?;
    let base = study_base(cfg)?;
    let r = asymptotics::pme_consistency_study(&base, &cfg.study.pme_eps)?;
    write_study(out, &r)?;
    if cfg.study.per_run_diagnostics {
        let s0 = cfg.initial_data.build(&base.grid)?;
        let mut r0 = s0.a.clone();
        r0.coeffs_mut(0)[0].re += 1.0;
        let stride = ((base.horizon / base.solver.dt) as usize / 100).max(1);
        let mut jobs: Vec<(String, Option<f64>)> = vec![("runs/reference".into(), None)];
        jobs.extend(cfg.study.pme_eps.iter().map(|&e| (format!("runs/eps_{e}"), Some(e))));
        let texts: Vec<Result<(String, String)>> = jobs
            .par_iter()
            .map(|(dir, eps)| {
                let traj = match eps {
                    None => hydro::run_porous(&r0, &KernelFamily::identity(), false, base.solver.dt, base.horizon, stride)?,
                    Some(e) => hydro::run_porous(&r0, &KernelFamily { epsilon: *e, ..kernel }, true, base.solver.dt, base.horizon, stride)?,
                };
                let mut csv = String::from("t,mass,min_r,max_r\n");
                for (t, r) in &traj {
                    let v = r.component_values(0);
                    let _ = writeln!(
                        csv,
                        "{t:e},{:e},{:e},{:e}",
                        r.mean(0) * base.grid.volume(),
                        v.iter().cloned().fold(f64::INFINITY, f64::min),
                        v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    );
                }
                Ok((dir.clone(), csv))
            })
            .collect();
        for t in texts {
            let (dir, csv) = t?;
            let mut sub = out.sub(&dir)?;
            sub.text("porous.csv", &csv)?;
            out.files.append(&mut sub.files);
        }
    }
    let dec = r.strictly_decreasing();
    Ok((format!("pme-limit errors strictly decreasing: {dec}"), Some(dec)))
}

fn combined_limit(cfg: &RunConfig, out: &mut Out) -> Result<Step> {
    bessel(cfg)?;
    let base = study_base(cfg)?;
    let pairs: Vec<(f64, f64)> = cfg.study.pairs.iter().map(|p| (p[0], p[1])).collect();
    let r = asymptotics::combined_limit_study(&base, &pairs)?;
    write_study(out, &r)?;
    let runs: Vec<(String, f64, f64)> = pairs.iter().map(|&(l, e)| (format!("runs/lambda_{l}_eps_{e}"), l, e)).collect();
    relaxation_diagnostics(cfg, out, &runs)?;
    let dec = r.strictly_decreasing();
    Ok((format!("combined-limit errors strictly decreasing: {dec}"), Some(dec)))
}

fn force_model(cfg: &RunConfig) -> Result<ForceModel> {
    let grid = cfg.grid_spec();
    let p = &cfg.particles;
    let protocol = match p.protocol {
        ProtocolChoice::Plain => Protocol::Plain,
        ProtocolChoice::Weighted => Protocol::DensityWeighted {
            pressure: PressureLaw::General { gamma: cfg.solver.gamma },
            grid,
            bandwidth: p.bandwidth.expect("normalized"),
        },
    };
    let eps = cfg.kernel.epsilon;
    match (cfg.kernel.kind, p.method.expect("normalized")) {
        (KernelChoice::Triangle, ForceMethod::Direct) => Ok(ForceModel::Direct {
            kernel: ParticleKernel::Triangle(TriangleKernel::new(eps.expect("normalized"), grid.dimension)?),
            protocol,
        }),
        (KernelChoice::Bessel, ForceMethod::Direct) => {
            if grid.dimension != 1 || cfg.kernel.m != Some(2.0) {
                return Err(Error::Config {
                    location: "particles.method".into(),
                    message: "direct summation of the Bessel kernel is available for d=1, m=2 only; use method = \"mesh\"".into(),
                });
            }
            Ok(ForceModel::Direct { kernel: ParticleKernel::smooth(eps.expect("normalized"))?, protocol })
        }
        (KernelChoice::Bessel | KernelChoice::Identity, ForceMethod::Mesh) => Ok(ForceModel::Mesh { kernel: cfg.kernel_family()?, grid, protocol }),
        (KernelChoice::Triangle, ForceMethod::Mesh) | (KernelChoice::Identity, ForceMethod::Direct) => Err(Error::Config {
            location: "particles.method".into(),
            message: "triangle kernels use direct summation; the identity kernel uses the mesh".into(),
        }),
    }
}

fn run_particles(cfg: &RunConfig, out: &mut Out) -> Result<Step> {
    let grid = cfg.grid_spec();
    let p = &cfg.particles;
    let model = force_model(cfg)?;
    let s0 = cfg.initial_data.build(&grid)?;
    let mut e = particles::sample_monokinetic(&s0, p.count, p.seed)?;
    let mut integ = Integrator::new(model, cfg.solver.friction)?;
    let t_end = p.t_end.expect("normalized");
    let steps = (t_end / p.dt.expect("normalized") - 1e-9).ceil().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let ids: Vec<usize> = (0..p.sampled.min(e.count())).map(|i| i * e.count() / p.sampled.min(e.count()).max(1)).collect();
    let bw = p.bandwidth.expect("normalized");
    let mut traj = format!("{}\n", particles::TRAJECTORY_HEADER);
    let mut summary = String::from("t,momentum0,momentum1,kinetic_energy\n");
    let p0 = e.momentum();
    let mut record = |e: &particles::ParticleEnsemble, t: f64, k: usize, out: &mut Out| -> Result<()> {
        traj.push_str(&particles::trajectory_lines(e, t, &ids));
        let m = e.momentum();
        let _ = writeln!(summary, "{t:e},{:e},{:e},{:e}", m[0], m[1], e.kinetic_energy());
        if cfg.diagnostics.snapshots {
            out.snapshot(&format!("density_{k:05}.bin"), &particles::empirical_density(e, &grid, bw)?, t)?;
        }
        Ok(())
    };
    record(&e, 0.0, 0, out)?;
    for k in 1..=steps {
        integ.step(&mut e, dt)?;
        if k % p.snapshot_every == 0 || k == steps {
            record(&e, k as f64 * dt, k, out)?;
        }
    }
    out.text("trajectory.csv", &traj)?;
    out.text("particles.csv", &summary)?;
    let p1 = e.momentum();
    let drift = ((p1[0] - p0[0]).powi(2) + (p1[1] - p0[1]).powi(2)).sqrt();
    Ok((format!("{} particles advanced to t={t_end}; momentum change {drift:e}", e.count()), None))
}

fn micro_macro(cfg: &RunConfig, out: &mut Out) -> Result<Step> {
    let p = &cfg.particles;
    let mm = MicroMacroConfig {
        grid: cfg.grid_spec(),
        kernel: cfg.kernel_family()?,
        friction: cfg.solver.friction,
        data: cfg.initial_data.clone(),
        counts: p.counts.clone(),
        times: p.times.clone().expect("normalized"),
        dt: p.dt.expect("normalized"),
        bandwidth: p.bandwidth.expect("normalized"),
        seed: p.seed,
    };
    let r = particles::micro_macro_compare(&mm)?;
    out.text("error_vs_N.csv", &r.csv())?;
    out.text("units.txt", &format!("{}\n", r.units))?;
    let errs = r.errors();
    let dec = errs.windows(2).all(|w| w[1] < w[0]);
    Ok((format!("micro-macro errors strictly decreasing: {dec}"), Some(dec)))
}

fn verify_kernel(cfg: &RunConfig, out: &mut Out) -> Result<Step> {
    let kernel = cfg.kernel_family()?;
    let scale = if kernel.epsilon > 0.0 { kernel.epsilon } else { 1.0 };
    let rep = verify_hypotheses(&kernel, &log_samples(1e-4 / scale, 1e4 / scale, 2001))?;
    let mut csv = String::from("check,passed,value\n");
    let _ = writeln!(csv, "range,{},", rep.range_ok);
    let _ = writeln!(csv, "monotone,{},", rep.monotone_ok);
    let _ = writeln!(csv, "doubling,{},{:e}", rep.doubling_ok, rep.worst_ratio);
    let _ = writeln!(csv, "derivative_bound,{},{:e}", rep.derivative_bound_ok, rep.derivative_constant);
    out.text("kernel_report.csv", &csv)?;
    let part = build_partition(&cfg.grid_spec());
    let mut classes = String::from("j,two_j_l_hat,class\n");
    for j in part.active() {
        let r = 2f64.powi(j);
        let _ = writeln!(classes, "{j},{:e},{:?}", r * kernel.l_hat(r), kernel.frequency_class(j));
    }
    out.text("classes.csv", &classes)?;
    let ok = rep.all_ok();
    Ok((format!("kernel hypotheses hold: {ok}"), Some(ok)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    const BASE: &str = "[grid]\npoints = 64\nlength = 10.0\n[kernel]\nepsilon = 0.5\n[solver]\ndt = 0.02\nt_end = 0.5\n";

    #[test]
    fn subcommand_names_round_trip() {
        for name in SUBCOMMANDS {
            assert_eq!(Subcommand::parse(name).unwrap().name(), name);
        }
        assert!(Subcommand::parse("simulat").is_err());
    }

    #[test]
    fn simulate_writes_manifest_and_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = parse_config(BASE).unwrap();
        let o = dispatch(Subcommand::Simulate, &cfg, dir.path(), &RunOptions::default()).unwrap();
        assert_eq!(o.gate_passed, Some(true));
        let manifest = fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
        assert_eq!(parse_config(&manifest).unwrap(), cfg);
        let diag = fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
        assert!(diag.starts_with(diagnostics::CSV_HEADER));
        assert!(dir.path().join("state_00000.bin").exists());
    }

    #[test]
    fn cfl_violation_is_numerical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = parse_config(&BASE.replace("dt = 0.02", "dt = 5.0").replace("t_end = 0.5", "t_end = 10.0")).unwrap();
        let r = dispatch(Subcommand::Simulate, &cfg, dir.path(), &RunOptions::default());
        assert_eq!(exit_code(&r, false), EXIT_NUMERICAL);
        assert!(r.unwrap_err().to_string().contains("admissible"));
    }

    #[test]
    fn verify_kernel_passes_for_default_bessel() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = parse_config(BASE).unwrap();
        let r = dispatch(Subcommand::VerifyKernel, &cfg, dir.path(), &RunOptions { gate: true, ..Default::default() });
        assert_eq!(exit_code(&r, true), EXIT_OK);
    }
}
