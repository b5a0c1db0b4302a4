//! Periodic grids and fields stored as Fourier coefficients.
//!
//! Coefficients are normalized so that a constant field `c` has zero-mode
//! coefficient `c`; Parseval then reads `||f||^2_{L^2} = |domain| sum |f_k|^2`.
//! Two-dimensional arrays are row-major with axis 0 the slow index.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Periodic torus `[0, L)^d` sampled with `N` points per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dimension: usize,
    pub points: usize,
    pub length: f64,
}

impl GridSpec {
    pub fn new(dimension: usize, points: usize, length: f64) -> Result<Self> {
        let g = GridSpec { dimension, points, length };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dimension == 1 || self.dimension == 2) {
            return Err(Error::Argument(format!("dimension must be 1 or 2, got {}", self.dimension)));
        }
        if self.points < 16 || !self.points.is_power_of_two() {
            return Err(Error::Argument(format!(
                "points per axis must be a power of two >= 16, got {}",
                self.points
            )));
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::Argument(format!("domain length must be positive, got {}", self.length)));
        }
        Ok(())
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.points.pow(self.dimension as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.points as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dimension as i32)
    }

    pub fn volume(&self) -> f64 {
        self.length.powi(self.dimension as i32)
    }

    /// Largest retained wavenumber index under the two-thirds rule.
    pub fn dealias_cutoff(&self) -> i64 {
        (self.points / 3) as i64
    }

    /// Physical coordinates of a flat index.
    pub fn coordinate(&self, idx: usize) -> [f64; 2] {
        let h = self.spacing();
        match self.dimension {
            1 => [idx as f64 * h, 0.0],
            _ => [(idx / self.points) as f64 * h, (idx % self.points) as f64 * h],
        }
    }

    pub fn coordinates(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|i| self.coordinate(i)).collect()
    }

    pub fn lattice(&self) -> Arc<Lattice> {
        Lattice::cached(self)
    }

    /// Same resolution on a torus dilated by `factor`.
    pub fn dilated(&self, factor: f64) -> GridSpec {
        GridSpec { length: self.length * factor, ..*self }
    }
}

/// Signed wavenumber index of FFT slot `i` on an `n`-point axis, in `[-n/2, n/2)`.
#[inline]
pub fn wavenumber(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Frequency lattice `2 pi k / L` of a grid with derived tables.
#[derive(Debug)]
pub struct Lattice {
    pub xi: Vec<[f64; 2]>,
    pub norm: Vec<f64>,
    /// Mode survives two-thirds dealiasing.
    pub kept: Vec<bool>,
    /// Some component sits on the unpaired `-N/2` index.
    pub nyquist: Vec<bool>,
}

type LatticeKey = (usize, usize, u64);

fn lattice_cache() -> &'static RwLock<HashMap<LatticeKey, Arc<Lattice>>> {
    static CACHE: OnceLock<RwLock<HashMap<LatticeKey, Arc<Lattice>>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

impl Lattice {
    fn cached(grid: &GridSpec) -> Arc<Lattice> {
        let key = (grid.dimension, grid.points, grid.length.to_bits());
        if let Some(l) = lattice_cache().read().unwrap().get(&key) {
            return l.clone();
        }
        let built = Arc::new(Lattice::build(grid));
        lattice_cache().write().unwrap().entry(key).or_insert(built).clone()
    }

    fn build(grid: &GridSpec) -> Lattice {
        let n = grid.points;
        let scale = 2.0 * std::f64::consts::PI / grid.length;
        let cut = grid.dealias_cutoff();
        let nyq = -(n as i64) / 2;
        let total = grid.len();
        let mut xi = Vec::with_capacity(total);
        let mut kept = Vec::with_capacity(total);
        let mut nyquist = Vec::with_capacity(total);
        for idx in 0..total {
            let (k0, k1) = match grid.dimension {
                1 => (wavenumber(idx, n), 0),
                _ => (wavenumber(idx / n, n), wavenumber(idx % n, n)),
            };
            xi.push([k0 as f64 * scale, k1 as f64 * scale]);
            kept.push(k0.abs() <= cut && k1.abs() <= cut);
            nyquist.push(k0 == nyq || (grid.dimension == 2 && k1 == nyq));
        }
        let norm = xi.iter().map(|v| (v[0] * v[0] + v[1] * v[1]).sqrt()).collect();
        Lattice { xi, norm, kept, nyquist }
    }
}

type PlanKey = (usize, bool);

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<RwLock<HashMap<PlanKey, Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let cache = PLANS.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(p) = cache.read().unwrap().get(&(n, inverse)) {
        return p.clone();
    }
    let mut planner = FftPlanner::new();
    let p = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    cache.write().unwrap().entry((n, inverse)).or_insert(p).clone()
}

/// Unnormalized in-place d-dimensional FFT.
fn fft_in_place(grid: &GridSpec, data: &mut [Complex64], inverse: bool) {
    let n = grid.points;
    let p = plan(n, inverse);
    p.process(data);
    if grid.dimension == 2 {
        let mut col = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                col[j * n + i] = data[i * n + j];
            }
        }
        p.process(&mut col);
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = col[j * n + i];
            }
        }
    }
}

/// Forward transform of real samples.
pub fn forward(grid: &GridSpec, values: &[f64]) -> Result<Vec<Complex64>> {
    if values.len() != grid.len() {
        return Err(Error::Argument(format!(
            "expected {} samples, got {}",
            grid.len(),
            values.len()
        )));
    }
    let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_in_place(grid, &mut data, false);
    let s = 1.0 / grid.len() as f64;
    data.iter_mut().for_each(|c| *c *= s);
    Ok(data)
}

/// Inverse transform returning the complex physical samples.
pub fn inverse_complex(grid: &GridSpec, coeffs: &[Complex64]) -> Vec<Complex64> {
    let mut data = coeffs.to_vec();
    fft_in_place(grid, &mut data, true);
    data
}

/// Inverse transform keeping the real part.
pub fn inverse(grid: &GridSpec, coeffs: &[Complex64]) -> Vec<f64> {
    inverse_complex(grid, coeffs).into_iter().map(|c| c.re).collect()
}

/// Real scalar or vector field on a periodic grid, held as Fourier coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: GridSpec,
    comps: Vec<Vec<Complex64>>,
}

impl SpectralField {
    pub fn zeros(grid: GridSpec, components: usize) -> Self {
        SpectralField {
            grid,
            comps: vec![vec![Complex64::new(0.0, 0.0); grid.len()]; components],
        }
    }

    pub fn from_coefficients(grid: GridSpec, comps: Vec<Vec<Complex64>>) -> Result<Self> {
        if comps.is_empty() || comps.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::Argument("coefficient arrays do not match the grid".into()));
        }
        Ok(SpectralField { grid, comps })
    }

    /// Forward transform of per-component real samples.
    pub fn from_values(grid: GridSpec, values: &[Vec<f64>]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("at least one component is required".into()));
        }
        let comps = values.iter().map(|v| forward(&grid, v)).collect::<Result<Vec<_>>>()?;
        Ok(SpectralField { grid, comps })
    }

    pub fn from_scalar(grid: GridSpec, values: &[f64]) -> Result<Self> {
        Ok(SpectralField { grid, comps: vec![forward(&grid, values)?] })
    }

    /// Sample `f` at the grid points, one call per point returning all components.
    pub fn from_fn<F>(grid: GridSpec, components: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64>,
    {
        let mut values = vec![vec![0.0; grid.len()]; components];
        for idx in 0..grid.len() {
            let x = grid.coordinate(idx);
            let v = f(&x[..grid.dimension]);
            for (c, vc) in values.iter_mut().enumerate() {
                vc[idx] = v[c];
            }
        }
        SpectralField::from_values(grid, &values).expect("shapes agree by construction")
    }

    pub fn scalar_from_fn<F: Fn(&[f64]) -> f64>(grid: GridSpec, f: F) -> Self {
        SpectralField::from_fn(grid, 1, |x| vec![f(x)])
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.comps.len()
    }

    pub fn coeffs(&self, c: usize) -> &[Complex64] {
        &self.comps[c]
    }

    pub fn coeffs_mut(&mut self, c: usize) -> &mut [Complex64] {
        &mut self.comps[c]
    }

    pub fn all_coeffs(&self) -> &[Vec<Complex64>] {
        &self.comps
    }

    pub fn component(&self, c: usize) -> SpectralField {
        SpectralField { grid: self.grid, comps: vec![self.comps[c].clone()] }
    }

    /// Stack scalar fields into a vector field.
    pub fn stack(parts: &[SpectralField]) -> Result<SpectralField> {
        let grid = *parts.first().ok_or_else(|| Error::Argument("nothing to stack".into()))?.grid();
        let mut comps = Vec::new();
        for p in parts {
            if *p.grid() != grid {
                return Err(Error::Argument("grid mismatch".into()));
            }
            comps.extend(p.comps.iter().cloned());
        }
        Ok(SpectralField { grid, comps })
    }

    /// Physical samples of every component.
    pub fn to_values(&self) -> Vec<Vec<f64>> {
        self.comps.iter().map(|c| inverse(&self.grid, c)).collect()
    }

    pub fn component_values(&self, c: usize) -> Vec<f64> {
        inverse(&self.grid, &self.comps[c])
    }

    /// Largest imaginary part of the physical samples, relative to the largest modulus.
    pub fn imaginary_residual(&self) -> f64 {
        let mut im: f64 = 0.0;
        let mut mag: f64 = 0.0;
        for c in &self.comps {
            for z in inverse_complex(&self.grid, c) {
                im = im.max(z.im.abs());
                mag = mag.max(z.norm());
            }
        }
        if mag == 0.0 {
            0.0
        } else {
            im / mag
        }
    }

    /// Largest violation of `f_{-k} = conj(f_k)`.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.grid.points;
        let neg = |i: usize| (n - i) % n;
        let mut worst: f64 = 0.0;
        for c in &self.comps {
            for idx in 0..c.len() {
                let mirror = match self.grid.dimension {
                    1 => neg(idx),
                    _ => neg(idx / n) * n + neg(idx % n),
                };
                worst = worst.max((c[idx] - c[mirror].conj()).norm());
            }
        }
        worst
    }

    fn check_same(&self, other: &SpectralField) -> Result<()> {
        if self.grid != other.grid || self.comps.len() != other.comps.len() {
            return Err(Error::Argument("fields live on different grids or shapes".into()));
        }
        Ok(())
    }

    /// Coefficientwise multiplication by a real symbol of the wavevector.
    pub fn apply_multiplier<F: Fn(&[f64]) -> f64>(&self, sigma: F) -> SpectralField {
        let lat = self.grid.lattice();
        let d = self.grid.dimension;
        let s: Vec<f64> = lat.xi.iter().map(|x| sigma(&x[..d])).collect();
        self.apply_table(&s)
    }

    /// Coefficientwise multiplication by a radial symbol `f(|xi|)`.
    pub fn apply_radial<F: Fn(f64) -> f64>(&self, f: F) -> SpectralField {
        let lat = self.grid.lattice();
        let s: Vec<f64> = lat.norm.iter().map(|&r| f(r)).collect();
        self.apply_table(&s)
    }

    /// Multiply every component by a precomputed real table over the lattice.
    pub fn apply_table(&self, table: &[f64]) -> SpectralField {
        let comps = self
            .comps
            .iter()
            .map(|c| c.iter().zip(table).map(|(z, s)| z * s).collect())
            .collect();
        SpectralField { grid: self.grid, comps }
    }

    /// Gradient; a field with `c` components yields `c * d` components ordered
    /// `(c0 d0, c0 d1, c1 d0, ...)`.
    pub fn gradient(&self) -> SpectralField {
        let lat = self.grid.lattice();
        let d = self.grid.dimension;
        let mut comps = Vec::with_capacity(self.comps.len() * d);
        for c in &self.comps {
            for k in 0..d {
                comps.push(
                    c.iter()
                        .enumerate()
                        .map(|(i, z)| {
                            if lat.nyquist[i] {
                                Complex64::new(0.0, 0.0)
                            } else {
                                z * Complex64::new(0.0, lat.xi[i][k])
                            }
                        })
                        .collect(),
                );
            }
        }
        SpectralField { grid: self.grid, comps }
    }

    pub fn divergence(&self) -> Result<SpectralField> {
        let d = self.grid.dimension;
        if self.comps.len() != d {
            return Err(Error::Argument(format!(
                "divergence needs {d} components, got {}",
                self.comps.len()
            )));
        }
        let lat = self.grid.lattice();
        let mut out = vec![Complex64::new(0.0, 0.0); self.grid.len()];
        for (k, c) in self.comps.iter().enumerate() {
            for (i, z) in c.iter().enumerate() {
                if !lat.nyquist[i] {
                    out[i] += z * Complex64::new(0.0, lat.xi[i][k]);
                }
            }
        }
        Ok(SpectralField { grid: self.grid, comps: vec![out] })
    }

    /// Projection onto divergence-free fields; the zero mode passes through.
    pub fn leray_project(&self) -> Result<SpectralField> {
        let d = self.grid.dimension;
        if self.comps.len() != d {
            return Err(Error::Argument(format!(
                "Leray projection needs {d} components, got {}",
                self.comps.len()
            )));
        }
        let lat = self.grid.lattice();
        let mut out = self.comps.clone();
        for i in 0..self.grid.len() {
            let r2 = lat.norm[i] * lat.norm[i];
            if r2 == 0.0 {
                continue;
            }
            let mut dot = Complex64::new(0.0, 0.0);
            for k in 0..d {
                dot += self.comps[k][i] * lat.xi[i][k];
            }
            for (k, o) in out.iter_mut().enumerate() {
                o[i] -= dot * (lat.xi[i][k] / r2);
            }
        }
        Ok(SpectralField { grid: self.grid, comps: out })
    }

    /// Two-thirds rule: zero every mode with some `|k_i| > N/3`.
    pub fn dealias(&self) -> SpectralField {
        let mut out = self.clone();
        out.dealias_in_place();
        out
    }

    pub fn dealias_in_place(&mut self) {
        let lat = self.grid.lattice();
        for c in &mut self.comps {
            for (z, &keep) in c.iter_mut().zip(&lat.kept) {
                if !keep {
                    *z = Complex64::new(0.0, 0.0);
                }
            }
        }
    }

    /// Spatial mean of component `c`.
    pub fn mean(&self, c: usize) -> f64 {
        self.comps[c][0].re
    }

    /// `L^2` norm over all components via Parseval.
    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.comps.iter().flat_map(|c| c.iter()).map(|z| z.norm_sqr()).sum();
        (s * self.grid.volume()).sqrt()
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.comps
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn add(&self, other: &SpectralField) -> Result<SpectralField> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &SpectralField) -> Result<SpectralField> {
        self.axpy(-1.0, other)
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &SpectralField) -> Result<SpectralField> {
        self.check_same(other)?;
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y * alpha).collect())
            .collect();
        Ok(SpectralField { grid: self.grid, comps })
    }

    pub fn scale(&self, alpha: f64) -> SpectralField {
        let comps = self
            .comps
            .iter()
            .map(|c| c.iter().map(|z| z * alpha).collect())
            .collect();
        SpectralField { grid: self.grid, comps }
    }

    /// Relabel the field onto a different torus length without touching coefficients.
    pub fn with_grid_length(&self, length: f64) -> SpectralField {
        SpectralField { grid: GridSpec { length, ..self.grid }, comps: self.comps.clone() }
    }

    /// Spectral interpolation onto `points` per axis (zero padding or truncation).
    /// The unpaired Nyquist modes are dropped.
    pub fn resample(&self, points: usize) -> Result<SpectralField> {
        let target = GridSpec::new(self.grid.dimension, points, self.grid.length)?;
        let (n, m) = (self.grid.points as i64, points as i64);
        let half = n.min(m) / 2;
        let slot = |k: i64, len: i64| ((k + len) % len) as usize;
        let mut comps = Vec::with_capacity(self.comps.len());
        for c in &self.comps {
            let mut out = vec![Complex64::new(0.0, 0.0); target.len()];
            match self.grid.dimension {
                1 => {
                    for k in (1 - half)..half {
                        out[slot(k, m)] = c[slot(k, n)];
                    }
                }
                _ => {
                    for k0 in (1 - half)..half {
                        for k1 in (1 - half)..half {
                            out[slot(k0, m) * m as usize + slot(k1, m)] =
                                c[slot(k0, n) * n as usize + slot(k1, n)];
                        }
                    }
                }
            }
            comps.push(out);
        }
        Ok(SpectralField { grid: target, comps })
    }
}

/// Forward transform of real samples into a scalar field.
pub fn transform_forward(grid: GridSpec, values: &[f64]) -> Result<SpectralField> {
    SpectralField::from_scalar(grid, values)
}

/// Inverse transform of a scalar field.
pub fn transform_inverse(f: &SpectralField) -> Vec<f64> {
    f.component_values(0)
}

pub fn apply_multiplier<F: Fn(&[f64]) -> f64>(f: &SpectralField, sigma: F) -> SpectralField {
    f.apply_multiplier(sigma)
}

pub fn gradient(f: &SpectralField) -> SpectralField {
    f.gradient()
}

pub fn divergence(v: &SpectralField) -> Result<SpectralField> {
    v.divergence()
}

pub fn leray_project(v: &SpectralField) -> Result<SpectralField> {
    v.leray_project()
}

pub fn dealias(f: &SpectralField) -> SpectralField {
    f.dealias()
}

/// Integral of physical samples over the torus.
pub fn integrate(grid: &GridSpec, values: &[f64]) -> f64 {
    values.iter().sum::<f64>() * grid.cell_volume()
}
