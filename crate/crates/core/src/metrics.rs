//! Divergences, distances, and functional-inequality diagnostics between
//! circular densities.
//!
//! All quadratures are rectangle rule on the shared uniform grid. Logarithms
//! are floored at [`circle::DENSITY_FLOOR`]; every clamp increments a global
//! counter so silent flooring cannot hide a degenerate density.

use std::f64::consts::TAU;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::Serialize;

use crate::circle::{quantile_from_cdf, Density, GridFunction, DENSITY_FLOOR};
use crate::error::{Error, Result};

static FLOOR_CLAMPS: AtomicU64 = AtomicU64::new(0);

/// Number of times a density value had to be clamped to the floor inside a
/// logarithm since process start.
pub fn floor_clamp_count() -> u64 {
    FLOOR_CLAMPS.load(Ordering::Relaxed)
}

#[inline]
fn floored(v: f64) -> f64 {
    if v < DENSITY_FLOOR {
        FLOOR_CLAMPS.fetch_add(1, Ordering::Relaxed);
        DENSITY_FLOOR
    } else {
        v
    }
}

/// One logged row of divergences and inequality slacks.
#[derive(Debug, Clone, Serialize)]
pub struct DivergenceRow {
    pub kl: f64,
    pub l1: f64,
    pub l2: f64,
    pub fisher: f64,
    pub w2: f64,
    pub lsi_lambda: f64,
    /// 2·KL - L1², nonnegative by Csiszár–Kullback–Pinsker.
    pub ckp_slack: f64,
    /// (2/λ)·KL - W2², nonnegative by Talagrand under LSI(λ).
    pub talagrand_slack: f64,
}

/// KL divergence ∫ ρ1 log(ρ1/ρ2) dθ.
pub fn kl(rho1: &Density, rho2: &Density) -> f64 {
    let h = rho1.h();
    h * rho1
        .values()
        .iter()
        .zip(rho2.values())
        .map(|(&a, &b)| {
            if a <= 0.0 {
                0.0
            } else {
                a * (floored(a).ln() - floored(b).ln())
            }
        })
        .sum::<f64>()
}

/// L¹ distance ∫ |ρ1 - ρ2| dθ.
pub fn l1(rho1: &Density, rho2: &Density) -> f64 {
    rho1.as_grid().sub(rho2.as_grid()).norm_l1()
}

/// L² distance (∫ (ρ1 - ρ2)² dθ)^{1/2}.
pub fn l2(rho1: &Density, rho2: &Density) -> f64 {
    rho1.as_grid().sub(rho2.as_grid()).norm_l2()
}

/// Relative Fisher information ∫ ρ1 (∂_θ log(ρ1/ρ2))² dθ.
pub fn relative_fisher(rho1: &Density, rho2: &Density) -> f64 {
    let log_ratio = rho1.log_floored().sub(&rho2.log_floored());
    let grad = log_ratio.differentiate();
    rho1.as_grid().mul(&grad.mul(&grad)).integrate()
}

/// Tilted density ρ Z_w² / ∫ ρ Z_w².
pub fn weighted_density(rho: &Density, zw: &GridFunction) -> Result<Density> {
    let zw2 = zw.mul(zw);
    let weighted = rho.as_grid().mul(&zw2);
    let mass = weighted.integrate();
    if mass <= 0.0 {
        return Err(Error::ZeroMass);
    }
    Density::clipped_renormalized(weighted)
}

/// Effective diffusion coefficient D_z = D ∫ ρ Z_w² dθ.
pub fn dz_coefficient(rho: &Density, zw: &GridFunction, d: f64) -> f64 {
    d * rho.as_grid().mul(&zw.mul(zw)).integrate()
}

/// LSI constant λ = exp(-2·osc(log ρ)) = (min ρ / max ρ)².
pub fn lsi_constant(rho: &Density) -> f64 {
    let m = floored(rho.min());
    let big_m = floored(rho.max());
    (m / big_m).powi(2)
}

/// 2-Wasserstein distance on the circle with arc-length ground metric.
///
/// Uses the quantile representation: W₂² = min over the cut offset α of
/// ∫₀¹ (Q₁(s) - Q₂(s+α))² ds, with quantile functions unwrapped to the real
/// line (Q(s+1) = Q(s) + 2π) and α located by golden-section search — the
/// objective is convex in α.
pub fn wasserstein2_circle(rho1: &Density, rho2: &Density) -> f64 {
    // upsample spectrally so the piecewise-linear CDF inversion error is
    // negligible against the 1e-6 metric tolerances
    let fine = (rho1.n().max(rho2.n()) * 8).clamp(2048, 8192);
    let q1 = unwrapped_quantiles(rho1, fine);
    let q2 = unwrapped_quantiles(rho2, fine);
    let m = fine;

    // both quantiles interpolated at ±α/2 so the functional is symmetric in
    // (ρ1, ρ2) by construction
    let objective = |alpha: f64| -> f64 {
        let mut acc = 0.0;
        for i in 0..m {
            let s = (i as f64 + 0.5) / m as f64;
            let a = lookup_unwrapped(&q1, s - 0.5 * alpha);
            let b = lookup_unwrapped(&q2, s + 0.5 * alpha);
            let d = a - b;
            acc += d * d;
        }
        acc / m as f64
    };

    // golden-section on [-1, 1]
    let inv_phi = 0.618_033_988_749_894_9_f64;
    let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = objective(x1);
    let mut f2 = objective(x2);
    for _ in 0..80 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = objective(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = objective(x2);
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    objective(0.5 * (lo + hi)).max(0.0).sqrt()
}

/// Quantiles Q((i+0.5)/m) for i = 0..m, computed on a spectrally refined grid.
fn unwrapped_quantiles(rho: &Density, m: usize) -> Vec<f64> {
    let fine = rho
        .as_grid()
        .upsample(m)
        .unwrap_or_else(|_| rho.as_grid().clone());
    let h = fine.h();
    let mut cdf = Vec::with_capacity(fine.n() + 1);
    let mut acc = 0.0;
    cdf.push(0.0);
    for &v in fine.values() {
        acc += h * v.max(0.0);
        cdf.push(acc);
    }
    let total = *cdf.last().unwrap();
    for v in cdf.iter_mut() {
        *v /= total;
    }
    (0..m)
        .map(|i| quantile_from_cdf(&cdf, h, (i as f64 + 0.5) / m as f64))
        .collect()
}

/// Q(s) for s ∈ ℝ using Q(s+1) = Q(s) + 2π and linear interpolation between
/// the stored midpoints.
fn lookup_unwrapped(q: &[f64], s: f64) -> f64 {
    let m = q.len();
    let wind = s.floor();
    let frac = s - wind;
    // midpoint grid: q[i] is at (i+0.5)/m
    let x = frac * m as f64 - 0.5;
    let i = x.floor();
    let t = x - i;
    let fetch = |j: f64| -> f64 {
        // index with its own winding when it falls off either end
        if j < 0.0 {
            q[(j + m as f64) as usize] - TAU
        } else if j >= m as f64 {
            q[(j - m as f64) as usize] + TAU
        } else {
            q[j as usize]
        }
    };
    let val = (1.0 - t) * fetch(i) + t * fetch(i + 1.0);
    val + wind * TAU
}

/// CKP and Talagrand slacks together with the underlying divergences.
pub fn inequality_checks(rho1: &Density, rho2: &Density) -> DivergenceRow {
    let kl_v = kl(rho1, rho2);
    let l1_v = l1(rho1, rho2);
    let l2_v = l2(rho1, rho2);
    let fisher = relative_fisher(rho1, rho2);
    let w2 = wasserstein2_circle(rho1, rho2);
    let lambda = lsi_constant(rho2);
    DivergenceRow {
        kl: kl_v,
        l1: l1_v,
        l2: l2_v,
        fisher,
        w2,
        lsi_lambda: lambda,
        ckp_slack: 2.0 * kl_v - l1_v * l1_v,
        talagrand_slack: (2.0 / lambda) * kl_v - w2 * w2,
    }
}

/// Diagnostic upper bound on d/dt KL(ρ‖ρ_f):
///
/// -(∫ (ρ/ρ_f) ∂_θ[Z ρ_f] dθ)·u
///   - D_z·√I(ρ_z‖ρ_{f,z})·(√I(ρ_z‖ρ_{f,z}) - √(2π)·‖ρ_z‖_∞·√I(u‖ρ_{f,z}))
///
/// where u is the uniform density. Logged, never controlled on.
pub fn target_kl_bound(
    rho: &Density,
    rho_f: &Density,
    z: &GridFunction,
    zw: &GridFunction,
    d: f64,
    u: f64,
) -> Result<f64> {
    let n = rho.n();
    let flux = z.mul(rho_f.as_grid()).differentiate();
    let ratio = rho
        .as_grid()
        .zip_with(rho_f.as_grid(), |a, b| a / floored(b));
    let control_coeff = ratio.mul(&flux).integrate();

    let rho_z = weighted_density(rho, zw)?;
    let rho_fz = weighted_density(rho_f, zw)?;
    let dz = dz_coefficient(rho, zw, d);
    let fisher = relative_fisher(&rho_z, &rho_fz);
    let uniform = Density::uniform(n)?;
    let fisher_uniform = relative_fisher(&uniform, &rho_fz);
    let sup_rho_z = rho_z.max();

    Ok(-control_coeff * u
        - dz * fisher.sqrt() * (fisher.sqrt() - TAU.sqrt() * sup_rho_z * fisher_uniform.sqrt()))
}
