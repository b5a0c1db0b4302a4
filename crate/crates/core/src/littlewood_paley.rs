//! Homogeneous dyadic blocks, `B^s_{2,1}` norms and the kernel-keyed
//! low/high frequency split.
//!
//! Block norms are evaluated through Parseval, so derivative and kernel
//! operators enter as radial weights on the coefficients. Vector fields use
//! the Euclidean norm of the per-component block norms.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, OnceLock, RwLock};

use crate::error::{Error, Result};
use crate::kernels::{FrequencyClass, KernelFamily};
use crate::spectral::{GridSpec, SpectralField};

fn flat(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

/// Smooth cutoff: 1 on `[0, 1]`, 0 on `[2, inf)`.
pub fn chi(r: f64) -> f64 {
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        let (p, q) = (flat(2.0 - r), flat(r - 1.0));
        p / (p + q)
    }
}

/// Dyadic bump `chi(r) - chi(2r)`, supported in `(1/2, 2)`.
pub fn phi(r: f64) -> f64 {
    chi(r) - chi(2.0 * r)
}

/// Active dyadic range of a grid plus the per-mode block assignment.
///
/// Each nonzero lattice radius `r` with `f = floor(log2 r)` is shared between
/// blocks `f` (weight `phi(r / 2^f)`) and `f + 1` (weight `phi(r / 2^(f+1))`).
#[derive(Debug)]
pub struct DyadicPartition {
    pub grid: GridSpec,
    pub j_min: i32,
    pub j_max: i32,
    block: Vec<i32>,
    w_lo: Vec<f64>,
    w_hi: Vec<f64>,
}

type PartitionKey = (usize, usize, u64);

fn partition_cache() -> &'static RwLock<HashMap<PartitionKey, Arc<DyadicPartition>>> {
    static CACHE: OnceLock<RwLock<HashMap<PartitionKey, Arc<DyadicPartition>>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Partition for `grid`, cached per grid.
pub fn build_partition(grid: &GridSpec) -> Arc<DyadicPartition> {
    let key = (grid.dimension, grid.points, grid.length.to_bits());
    if let Some(p) = partition_cache().read().unwrap().get(&key) {
        return p.clone();
    }
    let built = Arc::new(DyadicPartition::new(grid));
    partition_cache().write().unwrap().entry(key).or_insert(built).clone()
}

impl DyadicPartition {
    fn new(grid: &GridSpec) -> Self {
        let lat = grid.lattice();
        let mut block = Vec::with_capacity(lat.norm.len());
        let mut w_lo = Vec::with_capacity(lat.norm.len());
        let mut w_hi = Vec::with_capacity(lat.norm.len());
        let (mut j_min, mut j_max) = (i32::MAX, i32::MIN);
        for &r in &lat.norm {
            if r == 0.0 {
                block.push(0);
                w_lo.push(0.0);
                w_hi.push(0.0);
                continue;
            }
            let f = r.log2().floor() as i32;
            let s = r / 2f64.powi(f);
            let (lo, hi) = (phi(s), phi(s / 2.0));
            block.push(f);
            w_lo.push(lo);
            w_hi.push(hi);
            if lo > 0.0 {
                j_min = j_min.min(f);
                j_max = j_max.max(f);
            }
            if hi > 0.0 {
                j_min = j_min.min(f + 1);
                j_max = j_max.max(f + 1);
            }
        }
        DyadicPartition { grid: *grid, j_min, j_max, block, w_lo, w_hi }
    }

    pub fn active(&self) -> std::ops::RangeInclusive<i32> {
        self.j_min..=self.j_max
    }

    pub fn block_count(&self) -> usize {
        (self.j_max - self.j_min + 1) as usize
    }

    /// Weight of block `j` on lattice slot `idx`.
    #[inline]
    pub fn weight(&self, idx: usize, j: i32) -> f64 {
        let f = self.block[idx];
        if j == f {
            self.w_lo[idx]
        } else if j == f + 1 {
            self.w_hi[idx]
        } else {
            0.0
        }
    }

    /// Squared block norms `||D_j (w(D) z)||^2` for a radial weight `w`.
    pub fn block_energies<W: Fn(f64) -> f64>(&self, z: &SpectralField, w: W) -> BTreeMap<i32, f64> {
        let lat = self.grid.lattice();
        let mut out: BTreeMap<i32, f64> = self.active().map(|j| (j, 0.0)).collect();
        let weights: Vec<f64> = lat.norm.iter().map(|&r| if r == 0.0 { 0.0 } else { w(r) }).collect();
        for c in z.all_coeffs() {
            for (idx, coef) in c.iter().enumerate() {
                let e = coef.norm_sqr() * weights[idx] * weights[idx];
                if e == 0.0 {
                    continue;
                }
                let f = self.block[idx];
                if self.w_lo[idx] > 0.0 {
                    *out.get_mut(&f).unwrap() += e * self.w_lo[idx] * self.w_lo[idx];
                }
                if self.w_hi[idx] > 0.0 {
                    *out.get_mut(&(f + 1)).unwrap() += e * self.w_hi[idx] * self.w_hi[idx];
                }
            }
        }
        let vol = self.grid.volume();
        out.values_mut().for_each(|v| *v *= vol);
        out
    }
}

/// Dyadic block `phi(2^-j |D|) z`; zero outside the active range and on the mean.
pub fn lp_block(z: &SpectralField, j: i32) -> SpectralField {
    let part = build_partition(z.grid());
    let table: Vec<f64> = (0..z.grid().len()).map(|i| part.weight(i, j)).collect();
    z.apply_table(&table)
}

/// Per-block norms of a `B^s_{2,1}` norm and its kernel split.
#[derive(Debug, Clone, PartialEq)]
pub struct BesovReport {
    pub sigma: f64,
    pub block_norms: BTreeMap<i32, f64>,
    pub classes: BTreeMap<i32, FrequencyClass>,
    pub total: f64,
    pub low_part: f64,
    pub high_part: f64,
    /// `L^2` mass of the mean mode, which no block sees.
    pub outside_mass: f64,
}

impl BesovReport {
    /// CSV rows `time,sigma,j,block_norm,class`.
    pub fn csv_rows(&self, time: f64) -> Vec<String> {
        self.block_norms
            .iter()
            .map(|(j, v)| {
                let class = match self.classes[j] {
                    FrequencyClass::Low => "low",
                    FrequencyClass::High => "high",
                };
                format!("{time},{},{j},{v:e},{class}", self.sigma)
            })
            .collect()
    }

    pub const CSV_HEADER: &'static str = "time,sigma,j,block_norm,class";
}

/// `B^sigma` norm of `w(D) z` for a radial weight `w`, split by kernel class.
pub fn besov_norm_weighted<W: Fn(f64) -> f64>(
    z: &SpectralField,
    sigma: f64,
    kernel: &KernelFamily,
    w: W,
) -> BesovReport {
    let part = build_partition(z.grid());
    let energies = part.block_energies(z, w);
    let mut block_norms = BTreeMap::new();
    let mut classes = BTreeMap::new();
    let (mut low, mut high) = (0.0, 0.0);
    for (&j, &e) in &energies {
        let v = 2f64.powf(j as f64 * sigma) * e.sqrt();
        let class = kernel.frequency_class(j);
        match class {
            FrequencyClass::Low => low += v,
            FrequencyClass::High => high += v,
        }
        block_norms.insert(j, v);
        classes.insert(j, class);
    }
    let mean_sq: f64 = z.all_coeffs().iter().map(|c| c[0].norm_sqr()).sum();
    BesovReport {
        sigma,
        block_norms,
        classes,
        total: low + high,
        low_part: low,
        high_part: high,
        outside_mass: (mean_sq * z.grid().volume()).sqrt(),
    }
}

pub fn besov_norm(z: &SpectralField, sigma: f64, kernel: &KernelFamily) -> BesovReport {
    besov_norm_weighted(z, sigma, kernel, |_| 1.0)
}

fn check_pair(a: &SpectralField, u: &SpectralField) -> Result<()> {
    if a.grid() != u.grid() {
        return Err(Error::Argument("a and u live on different grids".into()));
    }
    if a.components() != 1 || u.components() != a.grid().dimension {
        return Err(Error::Argument(format!(
            "expected scalar a and {}-component u, got {} and {}",
            a.grid().dimension,
            a.components(),
            u.components()
        )));
    }
    Ok(())
}

/// Solution functional `X`:
/// `||(a, f^-1 grad a, f^-2 grad^2 L a)||_{s-1} + f^-1 ||(u, f^-1 grad u)||_s`
/// with friction `f`; tuple norms are sums of component norms.
pub fn functional_x(
    a: &SpectralField,
    u: &SpectralField,
    sigma: f64,
    kernel: &KernelFamily,
    friction: f64,
) -> Result<f64> {
    check_pair(a, u)?;
    let il = 1.0 / friction;
    let s1 = sigma - 1.0;
    let a0 = besov_norm(a, s1, kernel).total;
    let a1 = besov_norm_weighted(a, s1, kernel, |r| r).total;
    let a2 = besov_norm_weighted(a, s1, kernel, |r| r * r * kernel.l_hat(r)).total;
    let u0 = besov_norm(u, sigma, kernel).total;
    let u1 = besov_norm_weighted(u, sigma, kernel, |r| r).total;
    Ok(a0 + il * a1 + il * il * a2 + il * (u0 + il * u1))
}

/// Dissipation functional `H`:
/// `||(u, f^-1 grad u)||_s + ||(f^-1 grad K a, f^-2 grad^2 K a)||^low_s + ||f^-1 grad L a||^high_s`.
pub fn functional_h(
    a: &SpectralField,
    u: &SpectralField,
    sigma: f64,
    kernel: &KernelFamily,
    friction: f64,
) -> Result<f64> {
    check_pair(a, u)?;
    let il = 1.0 / friction;
    let u0 = besov_norm(u, sigma, kernel).total;
    let u1 = besov_norm_weighted(u, sigma, kernel, |r| r).total;
    let k1 = besov_norm_weighted(a, sigma, kernel, |r| r * kernel.k_hat(r)).low_part;
    let k2 = besov_norm_weighted(a, sigma, kernel, |r| r * r * kernel.k_hat(r)).low_part;
    let lh = besov_norm_weighted(a, sigma, kernel, |r| r * kernel.l_hat(r)).high_part;
    Ok(u0 + il * u1 + il * k1 + il * il * k2 + il * lh)
}

/// Per-block Lyapunov and dissipation values `(L_j, H_j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovBlock {
    pub lyapunov: f64,
    pub dissipation: f64,
    /// Signed `L_j^2` before taking the root.
    pub lyapunov_sq: f64,
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Lyapunov and dissipation functionals per dyadic block with coefficients
/// `b = a` and `c = pressure_c` (zero when absent).
///
/// Weighted integrals are evaluated in physical space on the grid.
pub fn lyapunov_blocks(
    a: &SpectralField,
    u: &SpectralField,
    kernel: &KernelFamily,
    pressure_c: Option<&SpectralField>,
) -> Result<BTreeMap<i32, LyapunovBlock>> {
    check_pair(a, u)?;
    let grid = *a.grid();
    let b = a.component_values(0);
    let c = match pressure_c {
        Some(f) => {
            if f.grid() != &grid || f.components() != 1 {
                return Err(Error::Argument("pressure coefficient must be a scalar on the same grid".into()));
            }
            f.component_values(0)
        }
        None => vec![0.0; grid.len()],
    };
    let (bmax, cmax) = (sup(&b), sup(&c));
    if bmax > 0.25 || cmax > 0.25 {
        return Err(Error::Smallness(format!(
            "max(|b|_inf, |c|_inf) = {:.4} exceeds 1/4",
            bmax.max(cmax)
        )));
    }
    let dv = grid.cell_volume();
    let weighted = |w: &[f64], f: &SpectralField| -> f64 {
        let mut s = 0.0;
        for vals in f.to_values() {
            s += vals.iter().zip(w).map(|(x, wi)| (1.0 + wi) * x * x).sum::<f64>();
        }
        s * dv
    };
    let part = build_partition(&grid);
    let mut out = BTreeMap::new();
    for j in part.active() {
        let aj = lp_block(a, j);
        let uj = lp_block(u, j);
        let laj = aj.apply_radial(|r| kernel.l_hat(r));
        let divu = uj.divergence()?;
        let grad_la = laj.gradient();
        let grad_pu = uj.leray_project()?.gradient();
        let cross: f64 = {
            let (x, y) = (aj.coeffs(0), divu.coeffs(0));
            x.iter().zip(y).map(|(p, q)| (p.conj() * q).re).sum::<f64>() * grid.volume()
        };
        let na = aj.l2_norm().powi(2);
        let nla = laj.l2_norm().powi(2);
        let nu = uj.l2_norm().powi(2);
        let npu = grad_pu.l2_norm().powi(2);
        let wla = weighted(&c, &grad_la);
        let wdiv = weighted(&b, &divu);
        let l2 = na + nla + nu - 2.0 * cross + 2.0 * wla + npu + 2.0 * wdiv;
        let h2 = nu + npu + wla + wdiv;
        out.insert(
            j,
            LyapunovBlock { lyapunov: l2.max(0.0).sqrt(), dissipation: h2.max(0.0).sqrt(), lyapunov_sq: l2 },
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_field(grid: GridSpec, comps: usize, amp: f64, seed: u64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<Vec<f64>> = (0..comps)
            .map(|_| (0..grid.len()).map(|_| amp * rng.gen_range(-1.0..1.0)).collect())
            .collect();
        SpectralField::from_values(grid, &values).unwrap()
    }

    #[test]
    fn profile_support_and_partition_of_unity() {
        assert_eq!(phi(0.49), 0.0);
        assert_eq!(phi(2.01), 0.0);
        assert!(phi(1.0) == 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let r: f64 = 10f64.powf(rng.gen_range(-2.0..3.0));
            let s: f64 = (-20..20).map(|j| phi(r / 2f64.powi(j))).sum();
            assert!((s - 1.0).abs() < 1e-10);
            assert!(phi(r) >= 0.0);
        }
    }

    #[test]
    fn active_block_count() {
        for n in [16usize, 64, 256] {
            let g = GridSpec::new(1, n, 2.0 * PI).unwrap();
            let p = build_partition(&g);
            let expected = (n as f64 / 2.0).log2();
            assert!((p.block_count() as f64 - expected).abs() <= 1.0, "{n}: {}", p.block_count());
        }
    }

    #[test]
    fn blocks_reconstruct_mean_free_part() {
        let g = GridSpec::new(2, 32, 9.0).unwrap();
        let z = random_field(g, 1, 1.0, 7);
        let p = build_partition(&g);
        let mut sum = SpectralField::zeros(g, 1);
        for j in p.active() {
            sum = sum.add(&lp_block(&z, j)).unwrap();
        }
        let mut expect = z.clone();
        expect.coeffs_mut(0)[0] = Default::default();
        assert!(sum.sub(&expect).unwrap().max_abs_coefficient() < 1e-8);
        assert!(lp_block(&z, p.j_max + 3).max_abs_coefficient() == 0.0);
    }

    #[test]
    fn single_mode_block_support() {
        let g = GridSpec::new(1, 128, 2.0 * PI).unwrap();
        let z = SpectralField::scalar_from_fn(g, |x| (16.0 * x[0]).cos());
        for j in build_partition(&g).active() {
            let n = lp_block(&z, j).l2_norm();
            if (j - 4).abs() > 1 {
                assert!(n < 1e-12, "block {j}");
            }
        }
        let b3 = lp_block(&z, 3);
        assert!(lp_block(&b3, 5).max_abs_coefficient() < 1e-15);
    }

    #[test]
    fn single_mode_besov_values() {
        let l = 2.0 * PI;
        let g = GridSpec::new(1, 128, l).unwrap();
        let k = KernelFamily::bessel(1.0, 1);
        // unit L^2 norm: amplitude sqrt(2/L)
        let amp = (2.0 / l).sqrt();
        for (freq, j0) in [(16.0, 4), (20.0, 4)] {
            let z = SpectralField::scalar_from_fn(g, |x| amp * (freq * x[0]).cos());
            let r0 = besov_norm(&z, 0.0, &k);
            assert!((z.l2_norm() - 1.0).abs() < 1e-12);
            assert!((r0.total - 1.0).abs() < 1e-12);
            let r1 = besov_norm(&z, 1.0, &k);
            assert!(r1.total >= 2f64.powi(j0 - 1) && r1.total <= 2f64.powi(j0 + 1));
            assert!((r1.low_part + r1.high_part - r1.total).abs() < 1e-12);
        }
        let zero = SpectralField::zeros(g, 1);
        assert_eq!(besov_norm(&zero, 1.0, &k).total, 0.0);
    }

    #[test]
    fn pure_dyadic_mode_sits_in_one_block() {
        let g = GridSpec::new(1, 128, 2.0 * PI).unwrap();
        let z = SpectralField::scalar_from_fn(g, |x| (2.0 / (2.0 * PI)).sqrt() * (16.0 * x[0]).cos());
        let r = besov_norm(&z, 0.0, &KernelFamily::bessel(1.0, 1));
        assert!((r.total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dilation_scaling() {
        let k = KernelFamily::bessel(0.5, 1);
        let g = GridSpec::new(1, 64, 10.0).unwrap();
        let z = random_field(g, 1, 1.0, 3);
        let big = GridSpec::new(1, 128, 20.0).unwrap();
        // z(x/2) on the doubled torus keeps its integer wavenumbers
        let mut coeffs = vec![Default::default(); 128];
        for i in 0..64 {
            let kk = crate::spectral::wavenumber(i, 64);
            if kk == -32 {
                continue;
            }
            coeffs[((kk + 128) % 128) as usize] = z.coeffs(0)[i];
        }
        let mut zc = z.clone();
        zc.coeffs_mut(0)[32] = Default::default();
        let zt = SpectralField::from_coefficients(big, vec![coeffs]).unwrap();
        for s in [0.0, 0.5, 1.5] {
            let a = besov_norm(&zc, s, &k).total;
            let b = besov_norm(&zt, s, &k).total;
            assert!((b / a - 2f64.powf(0.5 - s)).abs() < 1e-6);
        }
    }

    #[test]
    fn almost_orthogonality() {
        let g = GridSpec::new(1, 128, 13.0).unwrap();
        let z = random_field(g, 1, 1.0, 8);
        let p = build_partition(&g);
        let blocks: BTreeMap<i32, SpectralField> = p.active().map(|j| (j, lp_block(&z, j))).collect();
        let inner = |x: &SpectralField, y: &SpectralField| -> f64 {
            x.coeffs(0).iter().zip(y.coeffs(0)).map(|(p, q)| (p.conj() * q).re).sum::<f64>() * g.volume()
        };
        let mut s = 0.0;
        let mut exact = 0.0;
        for (&j, bj) in &blocks {
            for (&jp, bjp) in &blocks {
                let v = inner(bj, bjp);
                if (j - jp).abs() <= 1 {
                    s += v.abs();
                    exact += v;
                } else {
                    assert!(v.abs() < 1e-12);
                }
            }
        }
        let mean_sq = z.coeffs(0)[0].norm_sqr() * g.volume();
        let total = z.l2_norm().powi(2);
        assert!(total <= s + mean_sq + 1e-8);
        assert!((exact + mean_sq - total).abs() < 1e-8 * total);
    }

    #[test]
    fn bernstein_comparability() {
        let k = KernelFamily::bessel(0.3, 1);
        let g = GridSpec::new(1, 256, 2.0 * PI).unwrap();
        let z = random_field(g, 1, 1.0, 12);
        for j in build_partition(&g).active() {
            let zj = lp_block(&z, j);
            let n = zj.l2_norm();
            if n == 0.0 {
                continue;
            }
            let g_l = zj.apply_radial(|r| k.l_hat(r)).gradient().l2_norm();
            let ratio = g_l / (2f64.powi(j) * k.l_hat(2f64.powi(j)) * n);
            assert!((0.25..=4.0).contains(&ratio), "j={j} ratio={ratio}");
        }
    }

    #[test]
    fn functionals_vanish_on_zero_and_contain_u_norm() {
        let g = GridSpec::new(2, 32, 8.0).unwrap();
        let k = KernelFamily::bessel(0.5, 2);
        let a = SpectralField::zeros(g, 1);
        let u = SpectralField::zeros(g, 2);
        assert_eq!(functional_x(&a, &u, 2.0, &k, 1.0).unwrap(), 0.0);
        assert_eq!(functional_h(&a, &u, 2.0, &k, 1.0).unwrap(), 0.0);
        let w = 2.0 * PI / 8.0;
        let u = SpectralField::from_fn(g, 2, |x| vec![0.1 * (w * x[0]).cos(), 0.0]);
        let h = functional_h(&a, &u, 2.0, &k, 1.0).unwrap();
        assert!(h >= besov_norm(&u, 2.0, &k).total);
        assert!(functional_x(&a, &SpectralField::zeros(g, 1), 2.0, &k, 1.0).is_err());
    }

    #[test]
    fn lyapunov_zero_and_smallness() {
        let g = GridSpec::new(1, 64, 10.0).unwrap();
        let k = KernelFamily::bessel(0.5, 1);
        let a = SpectralField::zeros(g, 1);
        let u = SpectralField::zeros(g, 1);
        for (_, b) in lyapunov_blocks(&a, &u, &k, None).unwrap() {
            assert_eq!(b.lyapunov, 0.0);
            assert_eq!(b.dissipation, 0.0);
        }
        let big = SpectralField::scalar_from_fn(g, |x| 0.5 * (2.0 * PI * x[0] / 10.0).sin());
        assert!(matches!(lyapunov_blocks(&big, &u, &k, None), Err(Error::Smallness(_))));
        assert!(matches!(lyapunov_blocks(&a, &u, &k, Some(&big)), Err(Error::Smallness(_))));
    }

    #[test]
    fn lyapunov_positive_for_small_random_fields() {
        let g = GridSpec::new(2, 32, 6.0).unwrap();
        let k = KernelFamily::bessel(0.4, 2);
        for seed in 0..5 {
            let a = random_field(g, 1, 0.1, seed).dealias();
            let u = random_field(g, 2, 1.0, seed + 100).dealias();
            let c = random_field(g, 1, 0.05, seed + 200).dealias();
            for (_, b) in lyapunov_blocks(&a, &u, &k, Some(&c)).unwrap() {
                assert!(b.lyapunov_sq >= 0.0);
                assert!(b.dissipation >= 0.0);
            }
        }
    }

    #[test]
    fn csv_rows_have_five_fields() {
        let g = GridSpec::new(1, 32, 5.0).unwrap();
        let z = random_field(g, 1, 1.0, 1);
        let rows = besov_norm(&z, 0.5, &KernelFamily::bessel(1.0, 1)).csv_rows(0.25);
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r.split(',').count() == 5));
    }
}
