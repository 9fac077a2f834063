//! Function algebra on the circle: uniform periodic grids, rectangle-rule
//! quadrature, discrete Fourier analysis/synthesis, spectral differentiation,
//! and standard circular densities.
//!
//! Values are samples at θ_j = 2πj/n with no duplicated endpoint. The
//! rectangle rule on this grid is spectrally accurate for smooth periodic
//! integrands, and spectral derivatives of periodic fluxes integrate to zero
//! by construction, which is what the conservation guarantees downstream
//! lean on.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Minimum accepted grid size.
pub const MIN_GRID: usize = 8;

/// Density floor used inside logarithms throughout the crate.
pub const DENSITY_FLOOR: f64 = 1e-12;

thread_local! {
    static PLANS: RefCell<HashMap<usize, (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)>> =
        RefCell::new(HashMap::new());
}

fn with_plans<T>(n: usize, f: impl FnOnce(&dyn Fft<f64>, &dyn Fft<f64>) -> T) -> T {
    PLANS.with(|cell| {
        let mut map = cell.borrow_mut();
        let (fwd, inv) = map.entry(n).or_insert_with(|| {
            let mut planner = FftPlanner::new();
            (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
        });
        f(fwd.as_ref(), inv.as_ref())
    })
}

/// Signed wavenumber of FFT bin `i` for transform length `n` (Nyquist kept
/// positive; callers that need it zeroed do so explicitly).
#[inline]
fn signed_wavenumber(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

fn check_grid_size(n: usize) -> Result<()> {
    if n < MIN_GRID || !n.is_power_of_two() {
        return Err(Error::InvalidGridSize(n));
    }
    Ok(())
}

/// Real function sampled on the uniform periodic grid θ_j = 2πj/n.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_grid_size(values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { values })
    }

    /// Sample a closure at the grid nodes.
    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        check_grid_size(n)?;
        let h = TAU / n as f64;
        Self::new((0..n).map(|j| f(j as f64 * h)).collect())
    }

    pub fn constant(n: usize, c: f64) -> Result<Self> {
        Self::new(vec![c; n])
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::constant(n, 0.0)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// Grid spacing 2π/n.
    #[inline]
    pub fn h(&self) -> f64 {
        TAU / self.n() as f64
    }

    #[inline]
    pub fn theta(&self, j: usize) -> f64 {
        j as f64 * self.h()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Rectangle-rule integral over [0, 2π).
    pub fn integrate(&self) -> f64 {
        self.h() * self.values.iter().sum::<f64>()
    }

    /// Mean value (1/2π) ∫ f dθ.
    pub fn mean(&self) -> f64 {
        self.integrate() / TAU
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// L² norm, (∫ f² dθ)^{1/2}.
    pub fn norm_l2(&self) -> f64 {
        (self.h() * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    /// L¹ norm, ∫ |f| dθ.
    pub fn norm_l1(&self) -> f64 {
        self.h() * self.values.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction {
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> GridFunction {
        assert_eq!(self.n(), other.n(), "grid size mismatch");
        GridFunction {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &GridFunction) -> GridFunction {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &GridFunction) -> GridFunction {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &GridFunction) -> GridFunction {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> GridFunction {
        self.map(|v| c * v)
    }

    /// Spectral derivative ∂_θ f via multiplication by ik in Fourier space.
    /// The Nyquist mode is zeroed, the standard choice for odd-order
    /// derivatives of real data.
    pub fn differentiate(&self) -> GridFunction {
        let n = self.n();
        let mut buf: Vec<Complex64> = self
            .values
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        with_plans(n, |fwd, inv| {
            fwd.process(&mut buf);
            for (i, c) in buf.iter_mut().enumerate() {
                if i == n / 2 {
                    *c = Complex64::new(0.0, 0.0);
                } else {
                    let k = signed_wavenumber(i, n) as f64;
                    *c *= Complex64::new(0.0, k);
                }
            }
            inv.process(&mut buf);
        });
        let scale = 1.0 / n as f64;
        GridFunction {
            values: buf.iter().map(|c| c.re * scale).collect(),
        }
    }

    /// f(θ - delta) by spectral shift: exact rotation for band-limited data.
    pub fn rotate(&self, delta: f64) -> GridFunction {
        let n = self.n();
        let mut buf: Vec<Complex64> = self
            .values
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        with_plans(n, |fwd, inv| {
            fwd.process(&mut buf);
            for (i, c) in buf.iter_mut().enumerate() {
                let k = signed_wavenumber(i, n) as f64;
                // cos factor on the Nyquist bin keeps the result real
                if i == n / 2 {
                    *c *= (k * delta).cos();
                } else {
                    *c *= Complex64::from_polar(1.0, -k * delta);
                }
            }
            inv.process(&mut buf);
        });
        let scale = 1.0 / n as f64;
        GridFunction {
            values: buf.iter().map(|c| c.re * scale).collect(),
        }
    }

    /// Trigonometric interpolation onto a finer grid (m >= n, both powers of
    /// two). Exact for band-limited data.
    pub fn upsample(&self, m: usize) -> Result<GridFunction> {
        check_grid_size(m)?;
        let n = self.n();
        if m == n {
            return Ok(self.clone());
        }
        if m < n {
            return Err(Error::InvalidParameter(format!(
                "upsample target {m} smaller than source {n}"
            )));
        }
        let mut spec = vec![Complex64::new(0.0, 0.0); n];
        for (i, c) in spec.iter_mut().enumerate() {
            *c = Complex64::new(self.values[i], 0.0);
        }
        with_plans(n, |fwd, _| fwd.process(&mut spec));
        let mut padded = vec![Complex64::new(0.0, 0.0); m];
        for i in 0..n {
            let k = signed_wavenumber(i, n);
            if i == n / 2 {
                // split the Nyquist energy between ±n/2 on the fine grid
                padded[n / 2] = spec[i] * 0.5;
                padded[m - n / 2] = spec[i] * 0.5;
            } else {
                let dst = if k >= 0 { k as usize } else { (m as i64 + k) as usize };
                padded[dst] = spec[i];
            }
        }
        with_plans(m, |_, inv| inv.process(&mut padded));
        let scale = 1.0 / n as f64;
        GridFunction::new(padded.iter().map(|c| c.re * scale).collect())
    }

    /// Antiderivative of the zero-mean part of f, pinned to F(0) = 0:
    /// coefficients c_k/(ik) for k ≠ 0. Callers that require exactness must
    /// check the mean themselves.
    pub fn antiderivative(&self) -> GridFunction {
        let n = self.n();
        let mut buf: Vec<Complex64> = self
            .values
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        with_plans(n, |fwd, inv| {
            fwd.process(&mut buf);
            for (i, c) in buf.iter_mut().enumerate() {
                if i == 0 || i == n / 2 {
                    *c = Complex64::new(0.0, 0.0);
                } else {
                    let k = signed_wavenumber(i, n) as f64;
                    *c /= Complex64::new(0.0, k);
                }
            }
            inv.process(&mut buf);
        });
        let scale = 1.0 / n as f64;
        let mut values: Vec<f64> = buf.iter().map(|c| c.re * scale).collect();
        let at_zero = values[0];
        for v in values.iter_mut() {
            *v -= at_zero;
        }
        GridFunction { values }
    }

    /// Expand into a truncated Fourier series with coefficients
    /// c_k = (1/2π) ∫ f e^{-ikθ} dθ for |k| <= K.
    pub fn analyze(&self, order: usize) -> Result<FourierSeries> {
        let n = self.n();
        if order >= n / 2 {
            return Err(Error::Aliasing {
                k: order,
                half_n: n / 2,
            });
        }
        let mut buf: Vec<Complex64> = self
            .values
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        with_plans(n, |fwd, _| fwd.process(&mut buf));
        let scale = 1.0 / n as f64;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); 2 * order + 1];
        for k in -(order as i64)..=(order as i64) {
            let idx = if k >= 0 { k as usize } else { (n as i64 + k) as usize };
            coeffs[(k + order as i64) as usize] = buf[idx] * scale;
        }
        Ok(FourierSeries { coeffs })
    }
}

/// Truncated Fourier series c_k, k = -K..K, of a (typically real) function.
#[derive(Debug, Clone)]
pub struct FourierSeries {
    coeffs: Vec<Complex64>,
}

impl FourierSeries {
    pub fn new(order: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != 2 * order + 1 {
            return Err(Error::InvalidParameter(format!(
                "expected {} coefficients for order {order}, got {}",
                2 * order + 1,
                coeffs.len()
            )));
        }
        Ok(Self { coeffs })
    }

    pub fn zero(order: usize) -> Self {
        Self {
            coeffs: vec![Complex64::new(0.0, 0.0); 2 * order + 1],
        }
    }

    /// Truncation order K.
    pub fn order(&self) -> usize {
        (self.coeffs.len() - 1) / 2
    }

    /// Coefficient c_k (zero outside the truncation range).
    pub fn coefficient(&self, k: i64) -> Complex64 {
        let order = self.order() as i64;
        if k < -order || k > order {
            Complex64::new(0.0, 0.0)
        } else {
            self.coeffs[(k + order) as usize]
        }
    }

    pub fn set_coefficient(&mut self, k: i64, value: Complex64) {
        let order = self.order() as i64;
        assert!(k >= -order && k <= order, "mode {k} outside truncation");
        self.coeffs[(k + order) as usize] = value;
    }

    /// Max |c_{-k} - conj(c_k)| over all modes; zero for real functions.
    pub fn hermitian_defect(&self) -> f64 {
        let order = self.order() as i64;
        (0..=order)
            .map(|k| (self.coefficient(-k) - self.coefficient(k).conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Σ_k |c_k|².
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Evaluate Σ c_k e^{ikθ} at a single point.
    pub fn eval(&self, theta: f64) -> f64 {
        let order = self.order() as i64;
        let mut acc = self.coefficient(0);
        for k in 1..=order {
            let e = Complex64::from_polar(1.0, k as f64 * theta);
            acc += self.coefficient(k) * e + self.coefficient(-k) * e.conj();
        }
        acc.re
    }

    /// Series of the derivative, coefficients ik·c_k.
    pub fn derivative(&self) -> FourierSeries {
        let order = self.order() as i64;
        let coeffs = (-order..=order)
            .map(|k| self.coefficient(k) * Complex64::new(0.0, k as f64))
            .collect();
        FourierSeries { coeffs }
    }

    /// Evaluate Σ c_k e^{ikθ} on the uniform grid of size n (requires K < n/2).
    pub fn synthesize(&self, n: usize) -> Result<GridFunction> {
        check_grid_size(n)?;
        let order = self.order();
        if order >= n / 2 {
            return Err(Error::Aliasing { k: order, half_n: n / 2 });
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for k in -(order as i64)..=(order as i64) {
            let idx = if k >= 0 { k as usize } else { (n as i64 + k) as usize };
            buf[idx] = self.coefficient(k);
        }
        with_plans(n, |_, inv| inv.process(&mut buf));
        GridFunction::new(buf.iter().map(|c| c.re).collect())
    }
}

/// Probability density on the circle: nonnegative samples with unit
/// rectangle-rule integral.
#[derive(Debug, Clone)]
pub struct Density {
    base: GridFunction,
}

impl Density {
    /// Strict constructor. Rejects min < -1e-10 or |∫ - 1| > 1e-8, then
    /// clamps the roundoff-level negatives and rescales to unit mass.
    pub fn new(f: GridFunction) -> Result<Self> {
        let min = f.min();
        if min < -1e-10 {
            return Err(Error::NegativeDensity { min });
        }
        let integral = f.integrate();
        if (integral - 1.0).abs() > 1e-8 {
            return Err(Error::NotNormalized { integral, tol: 1e-8 });
        }
        Ok(Self::renormalize(f))
    }

    /// Clip negatives to zero and rescale to unit mass. Used where a raw
    /// perturbed function must be coerced back into a density.
    pub fn clipped_renormalized(f: GridFunction) -> Result<Self> {
        let clipped = f.map(|v| v.max(0.0));
        let integral = clipped.integrate();
        if integral <= 0.0 || !integral.is_finite() {
            return Err(Error::ZeroMass);
        }
        Ok(Self {
            base: clipped.scale(1.0 / integral),
        })
    }

    /// Wrap a solver state: clamp roundoff negatives without renormalizing.
    /// The flux-form stepper keeps mass at 1 to ~1e-12, and positivity was
    /// already monitored against the solver tolerance.
    pub(crate) fn from_solver_state(f: GridFunction) -> Self {
        Self {
            base: f.map(|v| v.max(0.0)),
        }
    }

    fn renormalize(f: GridFunction) -> Self {
        let clipped = f.map(|v| v.max(0.0));
        let integral = clipped.integrate();
        Self {
            base: clipped.scale(1.0 / integral),
        }
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Ok(Self {
            base: GridFunction::constant(n, 1.0 / TAU)?,
        })
    }

    /// Wrapped Cauchy density with harmonic m:
    /// w(mθ, μ, γ) = (1/2π) sinh γ / (cosh γ - cos(m(θ-μ))).
    pub fn wrapped_cauchy(n: usize, mu: f64, gamma: f64, harmonic: i64) -> Result<Self> {
        if gamma <= 0.0 || !gamma.is_finite() {
            return Err(Error::InvalidScale(gamma));
        }
        if harmonic < 1 {
            return Err(Error::InvalidHarmonic(harmonic));
        }
        let m = harmonic as f64;
        let (sh, ch) = (gamma.sinh(), gamma.cosh());
        let f = GridFunction::from_fn(n, |theta| sh / (TAU * (ch - (m * (theta - mu)).cos())))?;
        // analytically unit mass for every m >= 1; rescale to kill roundoff
        Ok(Self::renormalize(f))
    }

    #[inline]
    pub fn as_grid(&self) -> &GridFunction {
        &self.base
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        self.base.values()
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.base.n()
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.base.h()
    }

    pub fn min(&self) -> f64 {
        self.base.min()
    }

    pub fn max(&self) -> f64 {
        self.base.max()
    }

    /// ln ρ with the crate-wide floor inside the logarithm.
    pub fn log_floored(&self) -> GridFunction {
        self.base.map(|v| v.max(DENSITY_FLOOR).ln())
    }

    /// Exact rotation ρ(θ - delta) (stays a density: rotation preserves
    /// mass and, for resolved smooth densities, positivity).
    pub fn rotate(&self, delta: f64) -> Density {
        Self::renormalize(self.base.rotate(delta))
    }

    /// Cumulative distribution at the grid nodes plus the closing value 1:
    /// F_0 = 0, F_{j+1} = F_j + h ρ_j.
    pub fn cdf(&self) -> Vec<f64> {
        let h = self.h();
        let mut cdf = Vec::with_capacity(self.n() + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for &v in self.values() {
            acc += h * v;
            cdf.push(acc);
        }
        let total = *cdf.last().unwrap();
        for v in cdf.iter_mut() {
            *v /= total;
        }
        cdf
    }

    /// Quantile by linear interpolation of the cumulative rectangle-rule CDF.
    pub fn quantile(&self, u: f64) -> f64 {
        let cdf = self.cdf();
        quantile_from_cdf(&cdf, self.h(), u)
    }
}

/// Invert a piecewise-linear CDF given at node boundaries (len n+1, cdf[0]=0,
/// cdf[n]=1) with cell width h.
pub(crate) fn quantile_from_cdf(cdf: &[f64], h: f64, u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    // binary search for the cell with cdf[j] <= u <= cdf[j+1]
    let mut lo = 0usize;
    let mut hi = cdf.len() - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if cdf[mid] <= u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let span = cdf[lo + 1] - cdf[lo];
    if span <= 0.0 {
        lo as f64 * h
    } else {
        (lo as f64 + (u - cdf[lo]) / span) * h
    }
}
