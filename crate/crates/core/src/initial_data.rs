//! Initial-data library: Gaussian bumps, trigonometric modes and random
//! band-limited perturbations of the uniform state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydro::SimState;
use crate::spectral::{GridSpec, SpectralField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    /// Mean-zero Gaussian bump centred in the box.
    Gaussian,
    /// Sum of cosine modes `cos(2 pi k x_0 / L)` over the listed `k`.
    Modes,
    /// Random Fourier coefficients with `|k_i| <= band`.
    Random,
    /// The uniform rest state.
    Uniform,
}

/// Initial-data descriptor; `amplitude` scales `a`, `velocity` scales `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialData {
    pub kind: DataKind,
    pub amplitude: f64,
    #[serde(default)]
    pub velocity: f64,
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default = "default_modes")]
    pub modes: Vec<u32>,
    #[serde(default = "default_band")]
    pub band: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_width() -> f64 {
    1.0
}

fn default_modes() -> Vec<u32> {
    vec![1]
}

fn default_band() -> u32 {
    4
}

impl InitialData {
    pub fn gaussian(amplitude: f64, width: f64, velocity: f64) -> Self {
        InitialData {
            kind: DataKind::Gaussian,
            amplitude,
            velocity,
            width,
            modes: default_modes(),
            band: default_band(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::Config { location: format!("initial_data.{key}"), message: msg });
        if !self.amplitude.is_finite() || self.amplitude.abs() >= 1.0 {
            return bad("amplitude", format!("must satisfy |amplitude| < 1, got {}", self.amplitude));
        }
        if !self.velocity.is_finite() {
            return bad("velocity", "must be finite".into());
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return bad("width", format!("must be positive, got {}", self.width));
        }
        if self.kind == DataKind::Modes && self.modes.is_empty() {
            return bad("modes", "at least one mode is required".into());
        }
        if self.band == 0 {
            return bad("band", "must be >= 1".into());
        }
        Ok(())
    }

    /// Normalized profile with unit maximum (before mean removal).
    fn profile(&self, grid: &GridSpec) -> SpectralField {
        let l = grid.length;
        match self.kind {
            DataKind::Gaussian => {
                let w2 = 2.0 * self.width * self.width;
                SpectralField::scalar_from_fn(*grid, |x| {
                    let r2: f64 = x
                        .iter()
                        .map(|&xi| {
                            let d = xi - 0.5 * l;
                            d * d
                        })
                        .sum();
                    (-r2 / w2).exp()
                })
            }
            DataKind::Modes => {
                let w = 2.0 * std::f64::consts::PI / l;
                let n = self.modes.len() as f64;
                SpectralField::scalar_from_fn(*grid, |x| {
                    self.modes.iter().map(|&k| (w * k as f64 * x[0]).cos()).sum::<f64>() / n
                })
            }
            DataKind::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let lat = grid.lattice();
                let band = self.band as f64 * 2.0 * std::f64::consts::PI / l;
                let mut f = SpectralField::zeros(*grid, 1);
                let c = f.coeffs_mut(0);
                for (idx, xi) in lat.xi.iter().enumerate() {
                    let re: f64 = rng.gen_range(-1.0..1.0);
                    let im: f64 = rng.gen_range(-1.0..1.0);
                    if xi.iter().all(|v| v.abs() <= band + 1e-12) && !lat.nyquist[idx] {
                        c[idx] = rustfft::num_complex::Complex64::new(re, im);
                    }
                }
                // keep the real part of the field, normalized to unit sup
                let v = f.component_values(0);
                let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
                let v: Vec<f64> = v.iter().map(|x| x / m).collect();
                SpectralField::from_scalar(*grid, &v).expect("grid-sized")
            }
            DataKind::Uniform => SpectralField::zeros(*grid, 1),
        }
    }

    /// Build the state: `a = amplitude (p - mean p)` and `u_0 = velocity p`
    /// (other velocity components zero), dealiased.
    pub fn build(&self, grid: &GridSpec) -> Result<SimState> {
        self.validate()?;
        let p = self.profile(grid);
        let mut a = p.scale(self.amplitude);
        a.coeffs_mut(0)[0] = Default::default();
        a.dealias_in_place();
        let mut comps = vec![p.scale(self.velocity)];
        for _ in 1..grid.dimension {
            comps.push(SpectralField::zeros(*grid, 1));
        }
        let mut u = SpectralField::stack(&comps)?;
        u.dealias_in_place();
        SimState::new(a, u, 0.0)
    }

    /// Initial density `1 + a` on its own.
    pub fn density(&self, grid: &GridSpec) -> Result<SpectralField> {
        let s = self.build(grid)?;
        let mut r = s.a;
        r.coeffs_mut(0)[0].re += 1.0;
        Ok(r)
    }
}
