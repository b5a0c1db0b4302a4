//! Nonlocal interaction kernels `K_eps = L_eps * L_eps`, represented by
//! their radial Fourier symbols, plus the compactly supported triangle
//! kernel used by the particle model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which symbol family a [`KernelFamily`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    /// `L^(xi) = (1 + |eps xi|^2)^(-m/2)`.
    Bessel,
    /// `K^ == 1`: the local (classical) pressure.
    Identity,
}

/// Radial kernel family `(L^_eps, K^_eps)` with its structural constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelFamily {
    pub kind: KernelKind,
    pub epsilon: f64,
    pub m: f64,
    /// Threshold separating the low and high frequency classes.
    pub nu0: f64,
    /// Two-sided doubling constant.
    pub kappa: f64,
}

/// Default split threshold; never fixed numerically by the theory.
pub const DEFAULT_NU0: f64 = 0.05;

impl KernelFamily {
    /// Bessel-potential family with `m = d + 1`, `kappa = 2^-m` and the default `nu0`.
    pub fn bessel(epsilon: f64, dimension: usize) -> Self {
        let m = dimension as f64 + 1.0;
        Self::bessel_with(epsilon, m, DEFAULT_NU0)
    }

    pub fn bessel_with(epsilon: f64, m: f64, nu0: f64) -> Self {
        KernelFamily {
            kind: KernelKind::Bessel,
            epsilon,
            m,
            nu0,
            kappa: 2f64.powf(-m),
        }
    }

    /// The identity convolution, i.e. the classical Euler pressure.
    pub fn identity() -> Self {
        KernelFamily {
            kind: KernelKind::Identity,
            epsilon: 0.0,
            m: 0.0,
            nu0: DEFAULT_NU0,
            kappa: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == KernelKind::Bessel {
            if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
                return Err(Error::Argument(format!("epsilon must be positive, got {}", self.epsilon)));
            }
            if !(self.m >= 0.0 && self.m.is_finite()) {
                return Err(Error::Argument(format!("m must be nonnegative, got {}", self.m)));
            }
        }
        if !(self.nu0 > 0.0) {
            return Err(Error::Argument(format!("nu0 must be positive, got {}", self.nu0)));
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(Error::Argument(format!("kappa must lie in (0, 1], got {}", self.kappa)));
        }
        Ok(())
    }

    /// `L^_eps(xi)` without argument checking; used in inner loops.
    #[inline]
    pub fn l_hat(&self, xi: f64) -> f64 {
        match self.kind {
            KernelKind::Identity => 1.0,
            KernelKind::Bessel => {
                let s = self.epsilon * xi;
                (1.0 + s * s).powf(-0.5 * self.m)
            }
        }
    }

    /// `K^_eps(xi) = L^_eps(xi)^2`.
    #[inline]
    pub fn k_hat(&self, xi: f64) -> f64 {
        let l = self.l_hat(xi);
        l * l
    }

    /// `d L^_eps / d|xi|`.
    fn l_hat_derivative(&self, xi: f64) -> f64 {
        match self.kind {
            KernelKind::Identity => 0.0,
            KernelKind::Bessel => {
                let e2 = self.epsilon * self.epsilon;
                -self.m * e2 * xi * (1.0 + e2 * xi * xi).powf(-0.5 * self.m - 1.0)
            }
        }
    }

    /// Frequency class of the dyadic block `j`.
    pub fn frequency_class(&self, j: i32) -> FrequencyClass {
        let r = 2f64.powi(j);
        if r * self.l_hat(r) < self.nu0 {
            FrequencyClass::Low
        } else {
            FrequencyClass::High
        }
    }
}

/// Checked evaluation of `L^_eps`.
pub fn symbol_l(k: &KernelFamily, xi: f64) -> Result<f64> {
    if !xi.is_finite() {
        return Err(Error::Domain(format!("symbol argument must be finite, got {xi}")));
    }
    Ok(k.l_hat(xi.abs()))
}

/// Checked evaluation of `K^_eps`.
pub fn symbol_k(k: &KernelFamily, xi: f64) -> Result<f64> {
    symbol_l(k, xi).map(|l| l * l)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyClass {
    Low,
    High,
}

pub fn frequency_class(k: &KernelFamily, j: i32) -> FrequencyClass {
    k.frequency_class(j)
}

/// Outcome of checking the structural hypotheses on sampled frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisReport {
    pub range_ok: bool,
    pub monotone_ok: bool,
    pub doubling_ok: bool,
    pub derivative_bound_ok: bool,
    /// Smallest observed `L^(2 xi) / L^(xi)`.
    pub worst_ratio: f64,
    /// Largest observed `|xi L^'(xi)| / L^(xi)`.
    pub derivative_constant: f64,
}

impl HypothesisReport {
    pub fn all_ok(&self) -> bool {
        self.range_ok && self.monotone_ok && self.doubling_ok && self.derivative_bound_ok
    }
}

/// Check range, monotonicity, two-sided doubling and the derivative bound of
/// the family's `L^` symbol.
pub fn verify_hypotheses(k: &KernelFamily, xi_samples: &[f64]) -> Result<HypothesisReport> {
    let kk = *k;
    verify_symbol(
        move |x| kk.l_hat(x),
        Some(move |x| kk.l_hat_derivative(x)),
        k.kappa,
        xi_samples,
    )
}

/// Hypothesis check for an arbitrary radial symbol. Without an analytic
/// derivative a centred difference is used.
pub fn verify_symbol<F, D>(
    symbol: F,
    derivative: Option<D>,
    kappa: f64,
    xi_samples: &[f64],
) -> Result<HypothesisReport>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    if xi_samples.len() < 2 {
        return Err(Error::Argument("at least two frequency samples are required".into()));
    }
    if xi_samples.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::Argument("frequency samples must be positive and finite".into()));
    }
    let mut xs = xi_samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));

    const SLACK: f64 = 1e-12;
    let mut range_ok = (symbol(0.0) - 1.0).abs() <= SLACK;
    let mut monotone_ok = true;
    let mut doubling_ok = true;
    let mut worst_ratio = f64::INFINITY;
    let mut derivative_constant: f64 = 0.0;
    let mut prev = symbol(0.0);

    for &x in &xs {
        let l = symbol(x);
        if !(-SLACK..=1.0 + SLACK).contains(&l) {
            range_ok = false;
        }
        if l > prev + SLACK {
            monotone_ok = false;
        }
        prev = l;

        let l2 = symbol(2.0 * x);
        let ratio = if l > 0.0 { l2 / l } else if l2 == 0.0 { 0.0 } else { f64::INFINITY };
        worst_ratio = worst_ratio.min(ratio);
        let lower = kappa * l <= l2 * (1.0 + SLACK) + f64::MIN_POSITIVE;
        let upper = l2 <= l / kappa * (1.0 + SLACK);
        if !(lower && upper) || l <= 0.0 {
            doubling_ok = false;
        }

        let dl = match &derivative {
            Some(d) => d(x),
            None => {
                let h = 1e-6 * x;
                (symbol(x + h) - symbol(x - h)) / (2.0 * h)
            }
        };
        let c = if l > 0.0 {
            (x * dl).abs() / l
        } else if dl == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        derivative_constant = derivative_constant.max(c);
    }

    Ok(HypothesisReport {
        range_ok,
        monotone_ok,
        doubling_ok,
        derivative_bound_ok: derivative_constant.is_finite(),
        worst_ratio,
        derivative_constant,
    })
}

/// `n` logarithmically spaced samples in `[lo, hi]`.
pub fn log_samples(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n.max(2) - 1) as f64).exp())
        .collect()
}

/// Triangle potential `c_d eps^-d (1 - |x|/eps)` on the ball of radius `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangleKernel {
    pub epsilon: f64,
    pub dimension: usize,
    pub c_d: f64,
}

impl TriangleKernel {
    /// Unit-mass normalization `c_d = d (d + 1) / |S^{d-1}|`.
    pub fn new(epsilon: f64, dimension: usize) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Argument(format!("epsilon must be positive, got {epsilon}")));
        }
        let sphere = match dimension {
            1 => 2.0,
            2 => 2.0 * std::f64::consts::PI,
            3 => 4.0 * std::f64::consts::PI,
            _ => return Err(Error::Argument(format!("unsupported dimension {dimension}"))),
        };
        let d = dimension as f64;
        Ok(TriangleKernel {
            epsilon,
            dimension,
            c_d: d * (d + 1.0) / sphere,
        })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let r = norm(x);
        if r >= self.epsilon {
            0.0
        } else {
            self.c_d * self.epsilon.powi(-(self.dimension as i32)) * (1.0 - r / self.epsilon)
        }
    }

    /// `grad K_eps(x) = -c_d eps^{-d-1} x/|x|` inside the ball, zero outside
    /// and at the origin.
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let r = norm(x);
        if r == 0.0 || r >= self.epsilon {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let s = -self.c_d * self.epsilon.powi(-(self.dimension as i32) - 1) / r;
        for (o, xi) in out.iter_mut().zip(x) {
            *o = s * xi;
        }
    }
}

pub fn triangle_gradient(k: &TriangleKernel, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    k.gradient(x, &mut g);
    g
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
