//! Microscopic agent system on the torus: interaction forces, a friction-exact
//! kick/drift/kick integrator, empirical densities and the comparison with the
//! hydrodynamic solver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hydro::{self, PressureLaw, SimState, SolverConfig, System};
use crate::initial_data::InitialData;
use crate::kernels::{KernelFamily, TriangleKernel};
use crate::spectral::{self, GridSpec, SpectralField};

/// Agents with positions wrapped into `[0, L)^d`. `mass` multiplies every
/// pair interaction; the default `1/N` makes the force a mean over partners.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticleEnsemble {
    pub dimension: usize,
    pub length: f64,
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    pub mass: f64,
}

fn wrap(x: f64, l: f64) -> f64 {
    let y = x.rem_euclid(l);
    if y >= l {
        0.0
    } else {
        y
    }
}

fn min_image(d: f64, l: f64) -> f64 {
    d - l * (d / l).round()
}

impl ParticleEnsemble {
    pub fn new(dimension: usize, length: f64, positions: Vec<[f64; 2]>, velocities: Vec<[f64; 2]>) -> Result<Self> {
        if !(dimension == 1 || dimension == 2) {
            return Err(Error::Domain(format!("dimension must be 1 or 2, got {dimension}")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::Domain(format!("domain length must be positive, got {length}")));
        }
        if positions.len() < 2 {
            return Err(Error::Argument("an ensemble needs at least two particles".into()));
        }
        if velocities.len() != positions.len() {
            return Err(Error::Argument("positions and velocities differ in length".into()));
        }
        let n = positions.len();
        let mut e = ParticleEnsemble { dimension, length, positions, velocities, mass: 1.0 / n as f64 };
        e.wrap_positions();
        Ok(e)
    }

    pub fn with_mass(mut self, mass: f64) -> Self {
        self.mass = mass;
        self
    }

    pub fn count(&self) -> usize {
        self.positions.len()
    }

    fn wrap_positions(&mut self) {
        let (d, l) = (self.dimension, self.length);
        for p in &mut self.positions {
            for x in p.iter_mut().take(d) {
                *x = wrap(*x, l);
            }
        }
    }

    fn displacement(&self, i: usize, j: usize) -> [f64; 2] {
        let (a, b) = (self.positions[i], self.positions[j]);
        let mut out = [0.0; 2];
        for c in 0..self.dimension {
            out[c] = min_image(a[c] - b[c], self.length);
        }
        out
    }

    /// `mass * sum_k v_k`.
    pub fn momentum(&self) -> [f64; 2] {
        let mut p = [0.0; 2];
        for v in &self.velocities {
            p[0] += v[0];
            p[1] += v[1];
        }
        [p[0] * self.mass, p[1] * self.mass]
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.mass * self.velocities.iter().map(|v| v[0] * v[0] + v[1] * v[1]).sum::<f64>()
    }

    fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if grid.dimension != self.dimension || (grid.length - self.length).abs() > 1e-12 * self.length {
            return Err(Error::Argument(format!(
                "grid (d={}, L={}) does not match the ensemble (d={}, L={})",
                grid.dimension, grid.length, self.dimension, self.length
            )));
        }
        Ok(())
    }
}

/// Compactly supported interaction kernels for direct summation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ParticleKernel {
    Triangle(TriangleKernel),
    /// One-dimensional kernel with symbol `(1 + eps^2 xi^2)^{-2}`:
    /// `K(x) = (1 + |x|/eps) e^{-|x|/eps} / (4 eps)`, truncated at `cutoff`.
    Smooth { epsilon: f64, cutoff: f64 },
}

impl ParticleKernel {
    /// Smooth kernel truncated where it falls below `e^{-30}` of its peak.
    pub fn smooth(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Argument(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(ParticleKernel::Smooth { epsilon, cutoff: 30.0 * epsilon })
    }

    pub fn dimension(&self) -> Option<usize> {
        match self {
            ParticleKernel::Triangle(t) => Some(t.dimension),
            ParticleKernel::Smooth { .. } => Some(1),
        }
    }

    pub fn support(&self) -> f64 {
        match self {
            ParticleKernel::Triangle(t) => t.epsilon,
            ParticleKernel::Smooth { cutoff, .. } => *cutoff,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ParticleKernel::Triangle(t) => t.value(x),
            ParticleKernel::Smooth { epsilon, cutoff } => {
                let r = x[0].abs();
                if r >= *cutoff {
                    0.0
                } else {
                    (1.0 + r / epsilon) * (-r / epsilon).exp() / (4.0 * epsilon)
                }
            }
        }
    }

    /// Gradient with the convention `grad K(0) = 0`.
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            ParticleKernel::Triangle(t) => t.gradient(x, out),
            ParticleKernel::Smooth { epsilon, cutoff } => {
                let r = x[0].abs();
                out[0] = if r >= *cutoff { 0.0 } else { -x[0] * (-r / epsilon).exp() / (4.0 * epsilon.powi(3)) };
            }
        }
    }
}

/// How the pressure factor enters the particle force.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Protocol {
    Plain,
    /// Multiply the force on `x_k` by `N(K * rho_emp)(x_k)`, with the smoothed
    /// empirical density on `grid` sampled by linear interpolation.
    DensityWeighted { pressure: PressureLaw, grid: GridSpec, bandwidth: f64 },
}

/// Periodic linear (d=1) or bilinear (d=2) interpolation of grid values.
pub fn interpolate(grid: &GridSpec, values: &[f64], x: &[f64; 2]) -> f64 {
    let n = grid.points;
    let h = grid.spacing();
    let split = |y: f64| {
        let s = y / h;
        let i = s.floor();
        ((i as i64).rem_euclid(n as i64) as usize, s - i)
    };
    match grid.dimension {
        1 => {
            let (i, f) = split(x[0]);
            values[i] * (1.0 - f) + values[(i + 1) % n] * f
        }
        _ => {
            let (i, f) = split(x[0]);
            let (j, g) = split(x[1]);
            let at = |a: usize, b: usize| values[(a % n) * n + (b % n)];
            (1.0 - f) * ((1.0 - g) * at(i, j) + g * at(i, j + 1)) + f * ((1.0 - g) * at(i + 1, j) + g * at(i + 1, j + 1))
        }
    }
}

/// Cloud-in-cell weights: up to four `(grid index, weight)` pairs.
fn cic(grid: &GridSpec, x: &[f64; 2]) -> ([usize; 4], [f64; 4], usize) {
    let n = grid.points;
    let h = grid.spacing();
    let split = |y: f64| {
        let s = y / h;
        let i = s.floor();
        ((i as i64).rem_euclid(n as i64) as usize, s - i)
    };
    match grid.dimension {
        1 => {
            let (i, f) = split(x[0]);
            ([i, (i + 1) % n, 0, 0], [1.0 - f, f, 0.0, 0.0], 2)
        }
        _ => {
            let (i, f) = split(x[0]);
            let (j, g) = split(x[1]);
            let (i1, j1) = ((i + 1) % n, (j + 1) % n);
            (
                [i * n + j, i * n + j1, i1 * n + j, i1 * n + j1],
                [(1.0 - f) * (1.0 - g), (1.0 - f) * g, f * (1.0 - g), f * g],
                4,
            )
        }
    }
}

/// Cloud-in-cell deposit of `mass` per particle as a density on the grid.
fn deposit(e: &ParticleEnsemble, grid: &GridSpec) -> Vec<f64> {
    let mut rho = vec![0.0; grid.len()];
    let w = e.mass / grid.cell_volume();
    for x in &e.positions {
        let (idx, wt, m) = cic(grid, x);
        for k in 0..m {
            rho[idx[k]] += w * wt[k];
        }
    }
    rho
}

fn sinc(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - z * z / 6.0
    } else {
        z.sin() / z
    }
}

/// Normalized discrete hat `(1 - |i| h / p)_+` over offsets `0..=K`.
fn hat_weights(p: f64, h: f64) -> Vec<f64> {
    let k = (p / h - 1e-9).floor().max(0.0) as usize;
    let w: Vec<f64> = (0..=k).map(|i| (1.0 - i as f64 * h / p).max(0.0)).collect();
    let total = w[0] + 2.0 * w[1..].iter().sum::<f64>();
    w.iter().map(|x| x / total).collect()
}

fn hat_symbol(xi: &[f64], w: &[f64], h: f64) -> f64 {
    xi.iter()
        .map(|&k| w[0] + 2.0 * w.iter().enumerate().skip(1).map(|(i, wi)| wi * (k * i as f64 * h).cos()).sum::<f64>())
        .product()
}

/// Separable periodic convolution of grid values with the discrete hat.
fn smooth_values(grid: &GridSpec, v: &[f64], w: &[f64]) -> Vec<f64> {
    let n = grid.points;
    let conv_line = |line: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let mut acc = w[0] * line[i];
                for (o, wo) in w.iter().enumerate().skip(1) {
                    acc += wo * (line[(i + o) % n] + line[(i + n - o % n) % n]);
                }
                acc
            })
            .collect()
    };
    match grid.dimension {
        1 => conv_line(v),
        _ => {
            let mut out = vec![0.0; v.len()];
            for i in 0..n {
                let row = conv_line(&v[i * n..(i + 1) * n]);
                out[i * n..(i + 1) * n].copy_from_slice(&row);
            }
            for j in 0..n {
                let col: Vec<f64> = (0..n).map(|i| out[i * n + j]).collect();
                for (i, c) in conv_line(&col).into_iter().enumerate() {
                    out[i * n + j] = c;
                }
            }
            out
        }
    }
}

/// Smoothed empirical density: cloud-in-cell deposit of `mass` per particle
/// followed by a discrete hat of half-width `bandwidth`. Nonnegative, with
/// integral `N * mass` to roundoff.
pub fn empirical_density(e: &ParticleEnsemble, grid: &GridSpec, bandwidth: f64) -> Result<SpectralField> {
    grid.validate()?;
    e.check_grid(grid)?;
    if !(bandwidth >= grid.spacing() * (1.0 - 1e-12)) {
        return Err(Error::Argument(format!(
            "bandwidth {bandwidth} is below the grid spacing {}",
            grid.spacing()
        )));
    }
    let w = hat_weights(bandwidth, grid.spacing());
    SpectralField::from_scalar(*grid, &smooth_values(grid, &deposit(e, grid), &w))
}

/// The same smoothing applied to a grid density (deposit hat times discrete
/// hat), so that particle and continuum densities are compared at equal
/// resolution.
pub fn smooth_like_particles(rho: &SpectralField, bandwidth: f64) -> SpectralField {
    let h = rho.grid().spacing();
    let w = hat_weights(bandwidth, h);
    rho.apply_multiplier(|xi| xi.iter().map(|&k| sinc(0.5 * k * h).powi(2)).product::<f64>() * hat_symbol(xi, &w, h))
}

/// Fourier symbol of a direct-summation kernel sampled on the grid.
fn sampled_symbol(kernel: &ParticleKernel, grid: &GridSpec) -> Result<Vec<f64>> {
    let l = grid.length;
    let vals: Vec<f64> = grid
        .coordinates()
        .iter()
        .map(|x| {
            let y = [min_image(x[0], l), min_image(x[1], l)];
            kernel.value(&y[..grid.dimension])
        })
        .collect();
    let c = spectral::forward(grid, &vals)?;
    Ok(c.iter().map(|z| z.re * grid.volume()).collect())
}

fn density_weights(e: &ParticleEnsemble, protocol: &Protocol, symbol: &dyn Fn(&GridSpec) -> Result<Vec<f64>>) -> Result<Option<Vec<f64>>> {
    match protocol {
        Protocol::Plain => Ok(None),
        Protocol::DensityWeighted { pressure, grid, bandwidth } => {
            pressure.validate()?;
            let rho = empirical_density(e, grid, *bandwidth)?;
            let smoothed = rho.apply_table(&symbol(grid)?).component_values(0);
            Ok(Some(
                e.positions
                    .par_iter()
                    .map(|x| pressure.n_of(interpolate(grid, &smoothed, x)))
                    .collect(),
            ))
        }
    }
}

/// Direct-summation force `F_k = -w_k mass sum_l grad K(x_k - x_l)` with
/// minimal-image displacements, `w_k = 1` for the plain protocol.
pub fn pairwise_force(e: &ParticleEnsemble, kernel: &ParticleKernel, protocol: &Protocol) -> Result<Vec<[f64; 2]>> {
    if kernel.dimension() != Some(e.dimension) {
        return Err(Error::Argument(format!(
            "kernel dimension {:?} does not match the ensemble dimension {}",
            kernel.dimension(),
            e.dimension
        )));
    }
    let support = kernel.support();
    if support >= 0.5 * e.length {
        return Err(Error::Argument(format!(
            "kernel support {support} must be below half the domain length {}",
            0.5 * e.length
        )));
    }
    let weights = density_weights(e, protocol, &|g| sampled_symbol(kernel, g))?;
    let neighbours = CellList::build(e, support);
    let d = e.dimension;
    let forces = (0..e.count())
        .into_par_iter()
        .map(|k| {
            let mut f = [0.0; 2];
            let mut g = [0.0; 2];
            let mut add = |l: usize| {
                if l == k {
                    return;
                }
                let x = e.displacement(k, l);
                kernel.gradient(&x[..d], &mut g[..d]);
                f[0] -= g[0];
                f[1] -= g[1];
            };
            match &neighbours {
                Some(cells) => cells.for_each_near(e, k, &mut add),
                None => (0..e.count()).for_each(&mut add),
            }
            let w = e.mass * weights.as_ref().map_or(1.0, |w| w[k]);
            [w * f[0], w * f[1]]
        })
        .collect();
    Ok(forces)
}

/// Uniform cells of side at least the kernel support; used when the support is
/// below `L/8`.
struct CellList {
    per_axis: usize,
    cells: Vec<Vec<usize>>,
}

impl CellList {
    fn build(e: &ParticleEnsemble, support: f64) -> Option<CellList> {
        if support >= e.length / 8.0 {
            return None;
        }
        let per_axis = ((e.length / support).floor() as usize).clamp(3, 4096);
        let count = per_axis.pow(e.dimension as u32);
        let mut cells = vec![Vec::new(); count];
        for (k, x) in e.positions.iter().enumerate() {
            cells[Self::index(e, per_axis, x)].push(k);
        }
        Some(CellList { per_axis, cells })
    }

    fn axis(e: &ParticleEnsemble, per_axis: usize, y: f64) -> usize {
        ((y / e.length * per_axis as f64) as usize).min(per_axis - 1)
    }

    fn index(e: &ParticleEnsemble, per_axis: usize, x: &[f64; 2]) -> usize {
        let i = Self::axis(e, per_axis, x[0]);
        if e.dimension == 1 {
            i
        } else {
            i * per_axis + Self::axis(e, per_axis, x[1])
        }
    }

    fn for_each_near<F: FnMut(usize)>(&self, e: &ParticleEnsemble, k: usize, f: &mut F) {
        let n = self.per_axis as i64;
        let x = e.positions[k];
        let i = Self::axis(e, self.per_axis, x[0]) as i64;
        if e.dimension == 1 {
            for di in -1..=1 {
                for &l in &self.cells[(i + di).rem_euclid(n) as usize] {
                    f(l);
                }
            }
        } else {
            let j = Self::axis(e, self.per_axis, x[1]) as i64;
            for di in -1..=1 {
                for dj in -1..=1 {
                    let c = (i + di).rem_euclid(n) * n + (j + dj).rem_euclid(n);
                    for &l in &self.cells[c as usize] {
                        f(l);
                    }
                }
            }
        }
    }
}

/// Particle-mesh force for large ensembles: cloud-in-cell deposit,
/// `-i xi K_hat` on the grid, cloud-in-cell gather.
pub fn mesh_force(e: &ParticleEnsemble, kernel: &KernelFamily, grid: &GridSpec, protocol: &Protocol) -> Result<Vec<[f64; 2]>> {
    grid.validate()?;
    kernel.validate()?;
    e.check_grid(grid)?;
    let k_symbol = |g: &GridSpec| -> Result<Vec<f64>> { Ok(g.lattice().norm.iter().map(|&r| kernel.k_hat(r)).collect()) };
    let weights = density_weights(e, protocol, &k_symbol)?;
    let rho = SpectralField::from_scalar(*grid, &deposit(e, grid))?;
    let field = rho.apply_table(&k_symbol(grid)?).gradient().scale(-1.0).to_values();
    let d = e.dimension;
    Ok(e.positions
        .par_iter()
        .enumerate()
        .map(|(k, x)| {
            let (idx, wt, m) = cic(grid, x);
            let mut f = [0.0; 2];
            for c in 0..d {
                f[c] = (0..m).map(|q| wt[q] * field[c][idx[q]]).sum();
            }
            let w = weights.as_ref().map_or(1.0, |w| w[k]);
            [w * f[0], w * f[1]]
        })
        .collect())
}

/// Force evaluation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ForceModel {
    Direct { kernel: ParticleKernel, protocol: Protocol },
    Mesh { kernel: KernelFamily, grid: GridSpec, protocol: Protocol },
}

impl ForceModel {
    pub fn forces(&self, e: &ParticleEnsemble) -> Result<Vec<[f64; 2]>> {
        match self {
            ForceModel::Direct { kernel, protocol } => pairwise_force(e, kernel, protocol),
            ForceModel::Mesh { kernel, grid, protocol } => mesh_force(e, kernel, grid, protocol),
        }
    }
}

/// Kick / exact friction drift / kick integrator that reuses the force of the
/// previous step's final kick.
#[derive(Debug, Clone)]
pub struct Integrator {
    pub model: ForceModel,
    pub friction: f64,
    cached: Option<Vec<[f64; 2]>>,
}

impl Integrator {
    pub fn new(model: ForceModel, friction: f64) -> Result<Self> {
        if !(friction >= 0.0 && friction.is_finite()) {
            return Err(Error::Argument(format!("friction must be >= 0, got {friction}")));
        }
        Ok(Integrator { model, friction, cached: None })
    }

    pub fn step(&mut self, e: &mut ParticleEnsemble, dt: f64) -> Result<()> {
        if !(dt.is_finite() && dt != 0.0) {
            return Err(Error::Argument(format!("dt must be finite and nonzero, got {dt}")));
        }
        let d = e.dimension;
        let f0 = match self.cached.take() {
            Some(f) => f,
            None => self.model.forces(e)?,
        };
        for (v, f) in e.velocities.iter_mut().zip(&f0) {
            for c in 0..d {
                v[c] += 0.5 * dt * f[c];
            }
        }
        // exact flow of x' = v, v' = -friction v
        let decay = (-self.friction * dt).exp();
        let travel = if self.friction * dt.abs() < 1e-8 {
            dt * (1.0 - 0.5 * self.friction * dt)
        } else {
            -(-self.friction * dt).exp_m1() / self.friction
        };
        for (x, v) in e.positions.iter_mut().zip(e.velocities.iter_mut()) {
            for c in 0..d {
                x[c] += travel * v[c];
                v[c] *= decay;
            }
        }
        e.wrap_positions();
        let f1 = self.model.forces(e)?;
        for (v, f) in e.velocities.iter_mut().zip(&f1) {
            for c in 0..d {
                v[c] += 0.5 * dt * f[c];
            }
        }
        self.cached = Some(f1);
        Ok(())
    }

    /// Forget the cached force (needed after modifying the ensemble externally).
    pub fn reset(&mut self) {
        self.cached = None;
    }
}

/// One integrator step from scratch.
pub fn particle_step(e: &ParticleEnsemble, model: &ForceModel, friction: f64, dt: f64) -> Result<ParticleEnsemble> {
    let mut out = e.clone();
    Integrator::new(*model, friction)?.step(&mut out, dt)?;
    Ok(out)
}

/// Unbalanced arrangement in d=1: six agents evenly spread over `(-eps, 0)`,
/// twelve over `(0, eps)` and a probe at the origin, all shifted to the
/// middle of a box of length `8 eps`. Returns the ensemble and the probe index.
pub fn imbalance_configuration(eps: f64) -> Result<(ParticleEnsemble, usize)> {
    let l = 8.0 * eps;
    let c = 0.5 * l;
    let mut xs = Vec::new();
    for i in 0..6 {
        xs.push(c - eps + (i as f64 + 0.5) * eps / 6.0);
    }
    for i in 0..12 {
        xs.push(c + (i as f64 + 0.5) * eps / 12.0);
    }
    xs.push(c);
    let n = xs.len();
    let e = ParticleEnsemble::new(1, l, xs.iter().map(|&x| [x, 0.0]).collect(), vec![[0.0; 2]; n])?;
    Ok((e, n - 1))
}

/// Draw `n` monokinetic particles from the data's initial state: positions from
/// `rho_0 = 1 + a_0` (inverse CDF in d=1, rejection in d=2), velocities
/// `u_0(x_k)`; particle mass `|Omega| / n` so the empirical density has mean 1.
pub fn sample_monokinetic(state: &SimState, n: usize, seed: u64) -> Result<ParticleEnsemble> {
    let grid = *state.grid();
    let fine = grid.points * 8;
    let rho = {
        let mut r = state.a.resample(fine)?;
        r.coeffs_mut(0)[0].re += 1.0;
        r
    };
    let fgrid = *rho.grid();
    let rv = rho.component_values(0);
    if rv.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Argument("initial density must be positive to sample particles".into()));
    }
    let uv = state.u.resample(fine)?.to_values();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = grid.length;
    let positions: Vec<[f64; 2]> = match grid.dimension {
        1 => {
            // density linear between fine nodes; cumulative mass per cell
            let h = fgrid.spacing();
            let m = fgrid.points;
            let mut cum = Vec::with_capacity(m + 1);
            cum.push(0.0);
            for i in 0..m {
                let c = cum[i] + 0.5 * h * (rv[i] + rv[(i + 1) % m]);
                cum.push(c);
            }
            let total = cum[m];
            (0..n)
                .map(|_| {
                    let target = rng.gen::<f64>() * total;
                    let i = cum.partition_point(|&c| c <= target).clamp(1, m) - 1;
                    let (r0, r1) = (rv[i], rv[(i + 1) % m]);
                    let q = target - cum[i];
                    let slope = (r1 - r0) / h;
                    let s = 2.0 * q / (r0 + (r0 * r0 + 2.0 * slope * q).max(0.0).sqrt());
                    [wrap(i as f64 * h + s.min(h), l), 0.0]
                })
                .collect()
        }
        _ => {
            let rmax = rv.iter().cloned().fold(0.0, f64::max);
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let x = [rng.gen::<f64>() * l, rng.gen::<f64>() * l];
                if rng.gen::<f64>() * rmax <= interpolate(&fgrid, &rv, &x) {
                    out.push(x);
                }
            }
            out
        }
    };
    let velocities = positions
        .iter()
        .map(|x| {
            let mut v = [0.0; 2];
            for (c, comp) in uv.iter().enumerate() {
                v[c] = interpolate(&fgrid, comp, x);
            }
            v
        })
        .collect();
    Ok(ParticleEnsemble::new(grid.dimension, l, positions, velocities)?.with_mass(grid.volume() / n as f64))
}

/// Micro-macro comparison settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MicroMacroConfig {
    pub grid: GridSpec,
    pub kernel: KernelFamily,
    pub friction: f64,
    pub data: InitialData,
    pub counts: Vec<usize>,
    /// Comparison times (increasing, positive).
    pub times: Vec<f64>,
    pub dt: f64,
    pub bandwidth: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MicroMacroRow {
    pub count: usize,
    /// L1 distance to the equally smoothed continuum density, per time.
    pub errors: Vec<f64>,
    /// Largest entry of `errors`.
    pub error: f64,
    /// L1 distance between the smoothed and raw continuum densities at the
    /// last time; the resolution floor of an unsmoothed comparison.
    pub smoothing_floor: f64,
    /// The smoothing floor exceeds the particle error.
    pub smoothing_dominated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MicroMacroReport {
    pub rows: Vec<MicroMacroRow>,
    /// Unit convention linking the particle and continuum descriptions.
    pub units: String,
}

impl MicroMacroReport {
    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.error).collect()
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("n,error,smoothing_floor,smoothing_dominated\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:e},{:e},{}\n", r.count, r.error, r.smoothing_floor, r.smoothing_dominated));
        }
        s
    }
}

fn l1(f: &SpectralField, g: &SpectralField) -> Result<f64> {
    let dv = f.grid().cell_volume();
    Ok(f.sub(g)?.component_values(0).iter().map(|v| v.abs()).sum::<f64>() * dv)
}

/// Run the continuum solver and particle ensembles of each size from matched
/// monokinetic data and record the smoothed density mismatch.
pub fn micro_macro_compare(cfg: &MicroMacroConfig) -> Result<MicroMacroReport> {
    cfg.grid.validate()?;
    if cfg.counts.is_empty() || cfg.times.is_empty() {
        return Err(Error::Argument("counts and times must be nonempty".into()));
    }
    if cfg.times.iter().any(|t| !(*t > 0.0)) || cfg.times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Argument("comparison times must be positive and increasing".into()));
    }
    let s0 = cfg.data.build(&cfg.grid)?;
    // continuum densities at the comparison times
    let mut continuum = Vec::with_capacity(cfg.times.len());
    let mut s = s0.clone();
    let mut t_prev = 0.0;
    for &t in &cfg.times {
        let scfg = SolverConfig::new(System::Fuzzy, cfg.kernel, cfg.friction, cfg.dt, t - t_prev);
        let traj = hydro::run(&s, &scfg)?;
        if let Some(e) = traj.aborted {
            return Err(e);
        }
        s = traj.last;
        s.t = t;
        t_prev = t;
        let mut r = s.a.clone();
        r.coeffs_mut(0)[0].re += 1.0;
        continuum.push(r);
    }
    let smoothed: Vec<SpectralField> = continuum.iter().map(|r| smooth_like_particles(r, cfg.bandwidth)).collect();
    let floor = l1(smoothed.last().expect("nonempty"), continuum.last().expect("nonempty"))?;
    let model = ForceModel::Mesh { kernel: cfg.kernel, grid: cfg.grid, protocol: Protocol::Plain };
    let rows: Vec<Result<MicroMacroRow>> = cfg
        .counts
        .par_iter()
        .enumerate()
        .map(|(i, &n)| {
            let mut e = sample_monokinetic(&s0, n, cfg.seed.wrapping_add(i as u64))?;
            let mut integ = Integrator::new(model, cfg.friction)?;
            let mut errors = Vec::new();
            let mut t_prev = 0.0;
            for (k, &t) in cfg.times.iter().enumerate() {
                let steps = ((t - t_prev) / cfg.dt - 1e-9).ceil().max(1.0) as usize;
                let dt = (t - t_prev) / steps as f64;
                for _ in 0..steps {
                    integ.step(&mut e, dt)?;
                }
                t_prev = t;
                errors.push(l1(&empirical_density(&e, &cfg.grid, cfg.bandwidth)?, &smoothed[k])?);
            }
            let error = errors.iter().cloned().fold(0.0, f64::max);
            Ok(MicroMacroRow { count: n, errors, error, smoothing_floor: floor, smoothing_dominated: floor > error })
        })
        .collect();
    Ok(MicroMacroReport {
        rows: rows.into_iter().collect::<Result<Vec<_>>>()?,
        units: "particle mass |Omega|/N, unit velocity and force scales; the linearized dispersion of the particle mean field equals the continuum one at every mode (factor 1)".into(),
    })
}

/// Sampled-particle trajectory lines `t,id,x0,x1,v0,v1`.
pub fn trajectory_lines(e: &ParticleEnsemble, t: f64, ids: &[usize]) -> String {
    let mut s = String::new();
    for &k in ids {
        let (x, v) = (e.positions[k], e.velocities[k]);
        s.push_str(&format!("{t:e},{k},{:e},{:e},{:e},{:e}\n", x[0], x[1], v[0], v[1]));
    }
    s
}

pub const TRAJECTORY_HEADER: &str = "t,id,x0,x1,v0,v1";

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(l: f64, a: f64, b: f64) -> ParticleEnsemble {
        ParticleEnsemble::new(1, l, vec![[a, 0.0], [b, 0.0]], vec![[0.0; 2]; 2]).unwrap()
    }

    #[test]
    fn disjoint_supports_give_zero_force() {
        let k = ParticleKernel::Triangle(TriangleKernel::new(0.5, 1).unwrap());
        let f = pairwise_force(&pair(10.0, 1.0, 2.0), &k, &Protocol::Plain).unwrap();
        assert_eq!(f, vec![[0.0; 2]; 2]);
    }

    #[test]
    fn probe_force_points_to_sparse_side() {
        let (e, probe) = imbalance_configuration(1.0).unwrap();
        let k = ParticleKernel::Triangle(TriangleKernel::new(1.0, 1).unwrap());
        let f = pairwise_force(&e, &k, &Protocol::Plain).unwrap();
        assert!(f[probe][0] < 0.0, "{:?}", f[probe]);
    }

    #[test]
    fn symmetric_configuration_balances() {
        let xs = [4.0, 3.6, 4.4, 3.1, 4.9];
        let e = ParticleEnsemble::new(1, 8.0, xs.iter().map(|&x| [x, 0.0]).collect(), vec![[0.0; 2]; 5]).unwrap();
        for k in [ParticleKernel::Triangle(TriangleKernel::new(1.0, 1).unwrap()), ParticleKernel::smooth(0.05).unwrap()] {
            let f = pairwise_force(&e, &k, &Protocol::Plain).unwrap();
            assert!(f[0][0].abs() < 1e-14);
        }
    }

    #[test]
    fn wide_kernel_is_rejected() {
        let k = ParticleKernel::Triangle(TriangleKernel::new(3.0, 1).unwrap());
        assert!(matches!(pairwise_force(&pair(5.0, 1.0, 2.0), &k, &Protocol::Plain), Err(Error::Argument(_))));
    }

    #[test]
    fn cell_list_matches_all_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in [1usize, 2] {
            let n = 300;
            let pos: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen::<f64>() * 10.0, rng.gen::<f64>() * 10.0]).collect();
            let e = ParticleEnsemble::new(d, 10.0, pos, vec![[0.0; 2]; n]).unwrap();
            let near = ParticleKernel::Triangle(TriangleKernel::new(1.0, d).unwrap());
            let a = pairwise_force(&e, &near, &Protocol::Plain).unwrap();
            // brute force reference
            let mut g = [0.0; 2];
            for k in 0..n {
                let mut f = [0.0; 2];
                for l in 0..n {
                    if l != k {
                        let x = e.displacement(k, l);
                        near.gradient(&x[..d], &mut g[..d]);
                        f[0] -= g[0] / n as f64;
                        f[1] -= g[1] / n as f64;
                    }
                }
                assert!((f[0] - a[k][0]).abs() < 1e-12 && (f[1] - a[k][1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn free_particle_moves_in_closed_form() {
        let e = ParticleEnsemble::new(1, 100.0, vec![[10.0, 0.0], [60.0, 0.0]], vec![[0.7, 0.0], [0.0, 0.0]]).unwrap();
        let model = ForceModel::Direct { kernel: ParticleKernel::Triangle(TriangleKernel::new(1.0, 1).unwrap()), protocol: Protocol::Plain };
        let lam = 0.8;
        let mut integ = Integrator::new(model, lam).unwrap();
        let mut s = e.clone();
        for _ in 0..50 {
            integ.step(&mut s, 0.1).unwrap();
        }
        let t: f64 = 5.0;
        assert!((s.velocities[0][0] - 0.7 * (-lam * t).exp()).abs() < 1e-10);
        assert!((s.positions[0][0] - (10.0 + 0.7 * (1.0 - (-lam * t).exp()) / lam)).abs() < 1e-10);
        assert_eq!(s.positions[1][0], 60.0);
    }

    #[test]
    fn step_is_time_reversible_without_friction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 40;
        let pos = (0..n).map(|_| [rng.gen::<f64>() * 8.0, 0.0]).collect();
        let vel = (0..n).map(|_| [rng.gen::<f64>() - 0.5, 0.0]).collect();
        let e = ParticleEnsemble::new(1, 8.0, pos, vel).unwrap();
        let model = ForceModel::Direct { kernel: ParticleKernel::smooth(0.1).unwrap(), protocol: Protocol::Plain };
        for dt in [0.1, 0.05] {
            let fwd = particle_step(&e, &model, 0.0, dt).unwrap();
            let back = particle_step(&fwd, &model, 0.0, -dt).unwrap();
            let err = e
                .positions
                .iter()
                .zip(&back.positions)
                .map(|(a, b)| min_image(a[0] - b[0], 8.0).abs())
                .fold(0.0, f64::max);
            assert!(err <= dt.powi(3), "dt={dt} err={err}");
        }
    }

    #[test]
    fn single_particle_density_has_unit_mass() {
        let g = GridSpec::new(1, 64, 8.0).unwrap();
        let e = pair(8.0, 3.3, 3.3).with_mass(0.5);
        let rho = empirical_density(&e, &g, 0.5).unwrap();
        assert!((rho.mean(0) * g.volume() - 1.0).abs() < 1e-12);
        assert!(rho.component_values(0).iter().all(|v| *v > -1e-14));
        assert!(empirical_density(&e, &g, 0.01).is_err());
    }

    #[test]
    fn lattice_density_is_flat() {
        let g = GridSpec::new(2, 32, 4.0).unwrap();
        let m = 100;
        let pos: Vec<[f64; 2]> = (0..m * m).map(|k| [(k / m) as f64 * 0.04 + 0.013, (k % m) as f64 * 0.04 + 0.007]).collect();
        let n = pos.len();
        let e = ParticleEnsemble::new(2, 4.0, pos, vec![[0.0; 2]; n]).unwrap().with_mass(16.0 / n as f64);
        let dev = |p: f64| {
            let v = empirical_density(&e, &g, p).unwrap().component_values(0);
            v.iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max)
        };
        let (narrow, wide) = (dev(0.125), dev(1.0));
        assert!(narrow < 5e-2 && wide < 1e-3 && wide < narrow, "{narrow} {wide}");
    }

    #[test]
    fn mesh_force_matches_direct_smooth_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 2000;
        let l = 16.0;
        let pos = (0..n).map(|_| [rng.gen::<f64>() * l, 0.0]).collect();
        let e = ParticleEnsemble::new(1, l, pos, vec![[0.0; 2]; n]).unwrap();
        let eps = 0.2;
        let direct = pairwise_force(&e, &ParticleKernel::smooth(eps).unwrap(), &Protocol::Plain).unwrap();
        let grid = GridSpec::new(1, 1024, l).unwrap();
        let mesh = mesh_force(&e, &KernelFamily::bessel(eps, 1), &grid, &Protocol::Plain).unwrap();
        let scale = direct.iter().map(|f| f[0].abs()).fold(0.0, f64::max);
        let err = direct.iter().zip(&mesh).map(|(a, b)| (a[0] - b[0]).abs()).fold(0.0, f64::max);
        assert!(err < 2e-2 * scale, "{err} vs {scale}");
    }

    #[test]
    fn density_weighting_with_gamma_two_is_plain() {
        let (e, _) = imbalance_configuration(1.0).unwrap();
        let k = ParticleKernel::Triangle(TriangleKernel::new(1.0, 1).unwrap());
        let grid = GridSpec::new(1, 64, 8.0).unwrap();
        let w = Protocol::DensityWeighted { pressure: PressureLaw::General { gamma: 2.0 }, grid, bandwidth: 0.25 };
        assert_eq!(pairwise_force(&e, &k, &w).unwrap(), pairwise_force(&e, &k, &Protocol::Plain).unwrap());
        let w3 = Protocol::DensityWeighted { pressure: PressureLaw::General { gamma: 3.0 }, grid, bandwidth: 0.25 };
        assert_ne!(pairwise_force(&e, &k, &w3).unwrap(), pairwise_force(&e, &k, &Protocol::Plain).unwrap());
    }

    #[test]
    fn sampling_is_seeded_and_monokinetic() {
        let g = GridSpec::new(1, 64, 10.0).unwrap();
        let s0 = InitialData::gaussian(0.3, 1.0, 0.2).build(&g).unwrap();
        let a = sample_monokinetic(&s0, 500, 1).unwrap();
        assert_eq!(a, sample_monokinetic(&s0, 500, 1).unwrap());
        assert_ne!(a, sample_monokinetic(&s0, 500, 2).unwrap());
        assert!((a.mass - 10.0 / 500.0).abs() < 1e-15);
        let u = s0.u.component_values(0);
        for (x, v) in a.positions.iter().zip(&a.velocities) {
            assert!((v[0] - interpolate(&g, &u, x)).abs() < 1e-3);
        }
    }
}
