//! Strict TOML run configuration. Unknown keys are rejected with the closest
//! valid key as a suggestion; the normalized form (every default written out)
//! parses back to an identical configuration.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticsConfig;
use crate::error::{Error, Result};
use crate::hydro::{PressureLaw, SolverConfig, System};
use crate::initial_data::InitialData;
use crate::kernels::{KernelFamily, KernelKind, DEFAULT_NU0};
use crate::spectral::GridSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    pub points: usize,
    pub length: f64,
}

fn default_dimension() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelChoice {
    #[default]
    Bessel,
    Identity,
    /// Compactly supported cone; available to the particle model only.
    Triangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    #[serde(default)]
    pub kind: KernelChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_system")]
    pub system: String,
    #[serde(default = "one")]
    pub friction: f64,
    pub dt: f64,
    pub t_end: f64,
    /// Pressure exponent; `gamma = 2` is the plain law.
    #[serde(default = "two")]
    pub gamma: f64,
    #[serde(default = "half")]
    pub cfl: f64,
    #[serde(default = "one_usize")]
    pub snapshot_stride: usize,
}

fn default_system() -> String {
    "fuzzy".into()
}
fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn half() -> f64 {
    0.5
}
fn one_usize() -> usize {
    1
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Besov indices logged per snapshot; the first one is used for `X`, `H`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
    #[serde(default = "yes")]
    pub lyapunov: bool,
    /// Write binary field snapshots.
    #[serde(default = "yes")]
    pub snapshots: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "default_lambda")]
    pub lambda: Vec<f64>,
    #[serde(default = "default_pme_eps")]
    pub pme_eps: Vec<f64>,
    #[serde(default = "default_pairs")]
    pub pairs: Vec<[f64; 2]>,
    /// Kernel width of the friction study (defaults to `kernel.epsilon`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub friction_eps: Option<f64>,
    /// Study horizon (defaults to `solver.t_end`); diffusive time for the
    /// relaxation studies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_interval: Option<f64>,
    #[serde(default = "default_stiffness")]
    pub stiffness: f64,
    #[serde(default = "yes")]
    pub per_run_diagnostics: bool,
}

fn default_eps() -> Vec<f64> {
    vec![0.2, 0.1, 0.05, 0.025]
}
fn default_lambda() -> Vec<f64> {
    vec![8.0, 16.0, 32.0, 64.0]
}
fn default_pme_eps() -> Vec<f64> {
    vec![0.2, 0.1, 0.05]
}
fn default_pairs() -> Vec<[f64; 2]> {
    vec![[8.0, 0.2], [16.0, 0.1], [32.0, 0.05]]
}
fn default_stiffness() -> f64 {
    0.25
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection {
            eps: default_eps(),
            lambda: default_lambda(),
            pme_eps: default_pme_eps(),
            pairs: default_pairs(),
            friction_eps: None,
            horizon: None,
            sample_interval: None,
            stiffness: default_stiffness(),
            per_run_diagnostics: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForceMethod {
    /// Direct pair summation (triangle kernel, or the smooth kernel in d=1).
    Direct,
    /// Particle-mesh evaluation with the kernel family's symbol.
    Mesh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolChoice {
    #[default]
    Plain,
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticlesSection {
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<ForceMethod>,
    #[serde(default)]
    pub protocol: ProtocolChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    /// Particles written to `trajectory.csv`.
    #[serde(default = "default_sampled")]
    pub sampled: usize,
    /// Steps between trajectory records and density snapshots.
    #[serde(default = "default_every")]
    pub snapshot_every: usize,
    /// Ensemble sizes of the micro-macro comparison.
    #[serde(default = "default_counts")]
    pub counts: Vec<usize>,
    /// Comparison times of the micro-macro comparison.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
}

fn default_count() -> usize {
    1000
}
fn default_sampled() -> usize {
    16
}
fn default_every() -> usize {
    10
}
fn default_counts() -> Vec<usize> {
    vec![1000, 10_000, 100_000]
}

impl Default for ParticlesSection {
    fn default() -> Self {
        ParticlesSection {
            count: default_count(),
            method: None,
            protocol: ProtocolChoice::Plain,
            bandwidth: None,
            seed: 0,
            dt: None,
            t_end: None,
            sampled: default_sampled(),
            snapshot_every: default_every(),
            counts: default_counts(),
            times: None,
        }
    }
}

/// A complete, validated run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub grid: GridSection,
    pub kernel: KernelSection,
    pub solver: SolverSection,
    pub initial_data: InitialData,
    pub diagnostics: DiagnosticsSection,
    pub study: StudySection,
    pub particles: ParticlesSection,
}

const SECTIONS: [&str; 8] = ["output_dir", "grid", "kernel", "solver", "initial_data", "diagnostics", "study", "particles"];

fn config_err(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config { location: location.into(), message: message.into() }
}

fn closest<'a>(word: &str, candidates: &[&'a str]) -> Option<&'a str> {
    candidates
        .iter()
        .map(|c| (strsim::levenshtein(word, c), *c))
        .filter(|(d, c)| *d <= 2.max(c.len() / 3))
        .min_by_key(|(d, _)| *d)
        .map(|(_, c)| c)
}

fn unknown_key(location: String, key: &str, candidates: &[&str]) -> Error {
    let hint = match closest(key, candidates) {
        Some(c) => format!("; did you mean `{c}`?"),
        None => String::new(),
    };
    config_err(location, format!("unknown key `{key}`{hint}"))
}

/// Backtick-quoted words of a serde message, e.g. the unknown field and the
/// list of expected ones.
fn quoted(msg: &str) -> Vec<&str> {
    msg.split('`').skip(1).step_by(2).collect()
}

fn section<T: DeserializeOwned>(name: &str, value: toml::Value) -> Result<T> {
    value.try_into::<T>().map_err(|e| {
        let msg = e.message().to_string();
        let words = quoted(&msg);
        if msg.starts_with("unknown field") && !words.is_empty() {
            unknown_key(format!("{name}.{}", words[0]), words[0], &words[1..])
        } else if msg.starts_with("missing field") && !words.is_empty() {
            config_err(format!("{name}.{}", words[0]), "required key is missing")
        } else {
            config_err(name, msg.trim().to_string())
        }
    })
}

fn positive(location: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_err(location, format!("must be positive and finite, got {v}")))
    }
}

/// Parse and validate a configuration, filling every default.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| config_err("toml", e.message().trim().to_string()))?;
    for key in table.keys() {
        if !SECTIONS.contains(&key.as_str()) {
            return Err(unknown_key(key.clone(), key, &SECTIONS));
        }
    }
    let mut take = |name: &str| table.remove(name);
    let output_dir = match take("output_dir") {
        None => None,
        Some(toml::Value::String(s)) => Some(s),
        Some(_) => return Err(config_err("output_dir", "must be a string")),
    };
    let required = |name: &str, v: Option<toml::Value>| v.ok_or_else(|| config_err(name, format!("missing section [{name}]")));
    let grid: GridSection = section("grid", required("grid", take("grid"))?)?;
    let kernel: KernelSection = section("kernel", required("kernel", take("kernel"))?)?;
    let solver: SolverSection = section("solver", required("solver", take("solver"))?)?;
    let initial_data = match take("initial_data") {
        Some(v) => section("initial_data", v)?,
        None => InitialData::gaussian(0.01, 1.0, 0.0),
    };
    let diagnostics = match take("diagnostics") {
        Some(v) => section("diagnostics", v)?,
        None => DiagnosticsSection { sigma: None, lyapunov: true, snapshots: true },
    };
    let study = match take("study") {
        Some(v) => section("study", v)?,
        None => StudySection::default(),
    };
    let particles = match take("particles") {
        Some(v) => section("particles", v)?,
        None => ParticlesSection::default(),
    };
    let mut cfg = RunConfig { output_dir, grid, kernel, solver, initial_data, diagnostics, study, particles };
    cfg.normalize()?;
    Ok(cfg)
}

impl RunConfig {
    fn normalize(&mut self) -> Result<()> {
        let g = &self.grid;
        if !(g.dimension == 1 || g.dimension == 2) {
            return Err(config_err("grid.dimension", format!("must be 1 or 2, got {}", g.dimension)));
        }
        if g.points < 16 || !g.points.is_power_of_two() {
            return Err(config_err("grid.points", format!("must be a power of two >= 16, got {}", g.points)));
        }
        positive("grid.length", g.length)?;
        let d = g.dimension;

        let k = &mut self.kernel;
        match k.kind {
            KernelChoice::Identity => {
                k.m.get_or_insert(0.0);
                k.kappa.get_or_insert(1.0);
            }
            KernelChoice::Bessel | KernelChoice::Triangle => {
                let eps = k.epsilon.ok_or_else(|| config_err("kernel.epsilon", "required key is missing"))?;
                positive("kernel.epsilon", eps)?;
                let m = *k.m.get_or_insert(d as f64 + 1.0);
                if !(m >= 0.0 && m.is_finite()) {
                    return Err(config_err("kernel.m", format!("must be nonnegative, got {m}")));
                }
                k.kappa.get_or_insert(2f64.powf(-m));
            }
        }
        let nu0 = *k.nu0.get_or_insert(DEFAULT_NU0);
        positive("kernel.nu0", nu0)?;
        let kappa = k.kappa.expect("filled");
        if !(kappa > 0.0 && kappa <= 1.0) {
            return Err(config_err("kernel.kappa", format!("must lie in (0, 1], got {kappa}")));
        }

        let s = &self.solver;
        System::parse(&s.system).map_err(|e| config_err("solver.system", e.to_string()))?;
        if !(s.friction >= 0.0 && s.friction.is_finite()) {
            return Err(config_err("solver.friction", format!("must be >= 0, got {}", s.friction)));
        }
        positive("solver.dt", s.dt)?;
        positive("solver.t_end", s.t_end)?;
        if !(s.gamma >= 1.0 && s.gamma.is_finite()) {
            return Err(config_err("solver.gamma", format!("must be >= 1, got {}", s.gamma)));
        }
        if !(s.cfl > 0.0 && s.cfl <= 1.0) {
            return Err(config_err("solver.cfl", format!("must lie in (0, 1], got {}", s.cfl)));
        }
        if s.snapshot_stride == 0 {
            return Err(config_err("solver.snapshot_stride", "must be >= 1"));
        }
        let t_end = s.t_end;
        let dt = s.dt;

        self.initial_data.validate()?;

        let sig = self.diagnostics.sigma.get_or_insert_with(|| vec![d as f64 / 2.0 + 1.0, d as f64 / 2.0]);
        if sig.is_empty() || sig.iter().any(|v| !v.is_finite()) {
            return Err(config_err("diagnostics.sigma", "must be a nonempty list of finite numbers"));
        }

        let st = &mut self.study;
        for (name, list) in [("study.eps", &st.eps), ("study.lambda", &st.lambda), ("study.pme_eps", &st.pme_eps)] {
            if list.is_empty() {
                return Err(config_err(name, "must not be empty"));
            }
            for v in list.iter() {
                positive(name, *v)?;
            }
        }
        for p in &st.pairs {
            positive("study.pairs", p[0])?;
            positive("study.pairs", p[1])?;
        }
        if let Some(eps) = self.kernel.epsilon {
            st.friction_eps.get_or_insert(eps);
        }
        if let Some(e) = st.friction_eps {
            positive("study.friction_eps", e)?;
        }
        let horizon = *st.horizon.get_or_insert(t_end);
        positive("study.horizon", horizon)?;
        let interval = *st.sample_interval.get_or_insert(horizon / 40.0);
        positive("study.sample_interval", interval)?;
        if interval > horizon {
            return Err(config_err("study.sample_interval", "must not exceed the horizon"));
        }
        if !(st.stiffness > 0.0 && st.stiffness <= 1.0) {
            return Err(config_err("study.stiffness", format!("must lie in (0, 1], got {}", st.stiffness)));
        }

        let h = self.grid.length / self.grid.points as f64;
        let p = &mut self.particles;
        if p.count < 2 {
            return Err(config_err("particles.count", "must be >= 2"));
        }
        let bw = *p.bandwidth.get_or_insert(2.0 * h);
        if !(bw >= h * (1.0 - 1e-12) && bw.is_finite()) {
            return Err(config_err("particles.bandwidth", format!("must be at least the grid spacing {h}, got {bw}")));
        }
        positive("particles.dt", *p.dt.get_or_insert(dt))?;
        let pt = *p.t_end.get_or_insert(t_end);
        positive("particles.t_end", pt)?;
        if p.snapshot_every == 0 {
            return Err(config_err("particles.snapshot_every", "must be >= 1"));
        }
        if p.counts.is_empty() || p.counts.iter().any(|&n| n < 2) {
            return Err(config_err("particles.counts", "must be a nonempty list of sizes >= 2"));
        }
        let times = p.times.get_or_insert_with(|| vec![0.25 * pt, 0.5 * pt, pt]);
        if times.is_empty() || times.iter().any(|t| !(*t > 0.0)) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_err("particles.times", "must be positive and increasing"));
        }
        if p.method.is_none() {
            p.method = Some(match self.kernel.kind {
                KernelChoice::Triangle => ForceMethod::Direct,
                _ => ForceMethod::Mesh,
            });
        }
        Ok(())
    }

    /// Normalized TOML; parsing it reproduces `self`.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is serializable")
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec { dimension: self.grid.dimension, points: self.grid.points, length: self.grid.length }
    }

    /// Symbol family for the continuum solvers.
    pub fn kernel_family(&self) -> Result<KernelFamily> {
        let k = &self.kernel;
        let fam = match k.kind {
            KernelChoice::Identity => KernelFamily { kind: KernelKind::Identity, ..KernelFamily::identity() },
            KernelChoice::Bessel => KernelFamily {
                kind: KernelKind::Bessel,
                epsilon: k.epsilon.expect("normalized"),
                m: k.m.expect("normalized"),
                nu0: 0.0,
                kappa: 0.0,
            },
            KernelChoice::Triangle => {
                return Err(config_err("kernel.kind", "the triangle kernel is available to the particle model only"));
            }
        };
        Ok(KernelFamily { nu0: k.nu0.expect("normalized"), kappa: k.kappa.expect("normalized"), ..fam })
    }

    pub fn system(&self) -> System {
        System::parse(&self.solver.system).expect("validated")
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let s = &self.solver;
        let kernel = match self.kernel.kind {
            KernelChoice::Triangle => KernelFamily::identity(),
            _ => self.kernel_family()?,
        };
        let mut cfg = SolverConfig::new(self.system(), kernel, s.friction, s.dt, s.t_end);
        cfg.pressure = if s.gamma == 2.0 { PressureLaw::Plain } else { PressureLaw::General { gamma: s.gamma } };
        cfg.cfl = s.cfl;
        cfg.snapshot_stride = s.snapshot_stride;
        Ok(cfg)
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.diagnostics.sigma.clone().expect("normalized")
    }

    pub fn diagnostics_config(&self) -> DiagnosticsConfig {
        DiagnosticsConfig { sigma: self.sigmas()[0], lyapunov: self.diagnostics.lyapunov }
    }

    /// Seeds recorded in the manifest.
    pub fn seeds(&self) -> Vec<(&'static str, u64)> {
        vec![("initial_data.seed", self.initial_data.seed), ("particles.seed", self.particles.seed)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[grid]\npoints = 64\nlength = 10.0\n[kernel]\nepsilon = 0.5\n[solver]\ndt = 0.01\nt_end = 1.0\n";

    #[test]
    fn minimal_config_fills_defaults_and_echoes() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.kernel.m, Some(2.0));
        assert_eq!(c.kernel.kappa, Some(0.25));
        assert_eq!(c.solver.system, "fuzzy");
        assert_eq!(c.diagnostics.sigma, Some(vec![1.5, 0.5]));
        let echo = c.to_toml();
        let again = parse_config(&echo).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_toml(), echo);
    }

    #[test]
    fn range_errors_name_the_key() {
        let text = MINIMAL.replace("epsilon = 0.5", "epsilon = 0.5\nnu0 = -1");
        match parse_config(&text) {
            Err(Error::Config { location, .. }) => assert_eq!(location, "kernel.nu0"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_suggests_the_closest() {
        let text = MINIMAL.replace("epsilon = 0.5", "epsilonn = 0.5");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("kernel.epsilonn") && err.contains("did you mean `epsilon`"), "{err}");
        let err = parse_config(&format!("{MINIMAL}[solvr]\n")).unwrap_err().to_string();
        assert!(err.contains("did you mean `solver`"), "{err}");
    }

    #[test]
    fn missing_section_is_reported() {
        let text = "[grid]\npoints = 64\nlength = 10.0\n[kernel]\nepsilon = 0.5\n";
        match parse_config(text) {
            Err(Error::Config { location, message }) => {
                assert_eq!(location, "solver");
                assert!(message.contains("missing section"));
            }
            other => panic!("{other:?}"),
        }
        let err = parse_config(&MINIMAL.replace("t_end = 1.0\n", "")).unwrap_err().to_string();
        assert!(err.contains("solver.t_end"), "{err}");
    }

    #[test]
    fn triangle_kernel_is_particle_only() {
        let c = parse_config(&MINIMAL.replace("epsilon = 0.5", "kind = \"triangle\"\nepsilon = 0.5")).unwrap();
        assert!(c.kernel_family().is_err());
        assert_eq!(c.particles.method, Some(ForceMethod::Direct));
    }
}
