//! Phase reduction of a planar limit-cycle ODE: locate the attracting orbit,
//! its period and natural frequency ω = 2π/T, and the phase sensitivity
//! function Z(θ) from the adjoint variational equation
//!
//!   dZ_vec/dt = -J(X₀(t))ᵀ Z_vec,   Z_vec·F(X₀) = ω,
//!
//! integrated backward over repeated periods until the period map contracts.
//! Input and noise both enter the first state equation, so Z is the
//! x-component of the adjoint solution and Z_w = Z.
//!
//! Phase convention: θ = 0 at the maximum of x on the cycle, θ = ωt along
//! the orbit.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::circle::GridFunction;
use crate::error::{Error, Result};
use crate::fokker_planck::PhaseModel;

/// Planar autonomous vector field with Jacobian. Input direction is (1, 0).
pub trait PlanarOde: Sync {
    fn drift(&self, x: f64, y: f64) -> (f64, f64);
    fn jacobian(&self, x: f64, y: f64) -> [[f64; 2]; 2];
}

/// FitzHugh–Nagumo neuron model:
///   dx = (x - a x³ - y) dt (+ input + noise),  dy = η (x + b) dt.
#[derive(Debug, Clone)]
pub struct FitzHughNagumo {
    pub a: f64,
    pub b: f64,
    pub eta: f64,
}

impl Default for FitzHughNagumo {
    fn default() -> Self {
        FitzHughNagumo {
            a: 1.0 / 3.0,
            b: 0.25,
            eta: 0.25,
        }
    }
}

impl PlanarOde for FitzHughNagumo {
    fn drift(&self, x: f64, y: f64) -> (f64, f64) {
        (x - self.a * x * x * x - y, self.eta * (x + self.b))
    }

    fn jacobian(&self, x: f64, _y: f64) -> [[f64; 2]; 2] {
        [[1.0 - 3.0 * self.a * x * x, -1.0], [self.eta, 0.0]]
    }
}

/// Normal-form test oscillator with the unit circle as its cycle:
///   ẋ = -y + x(1 - r²),  ẏ = x + y(1 - r²).
/// Isochrons are radial, so Z_vec(θ) = (-sin θ, cos θ) exactly.
#[derive(Debug, Clone, Default)]
pub struct NormalFormOscillator;

impl PlanarOde for NormalFormOscillator {
    fn drift(&self, x: f64, y: f64) -> (f64, f64) {
        let s = 1.0 - x * x - y * y;
        (-y + x * s, x + y * s)
    }

    fn jacobian(&self, x: f64, y: f64) -> [[f64; 2]; 2] {
        let s = 1.0 - x * x - y * y;
        [
            [s - 2.0 * x * x, -1.0 - 2.0 * x * y],
            [1.0 - 2.0 * x * y, s - 2.0 * y * y],
        ]
    }
}

#[inline]
fn rk4(sys: &dyn PlanarOde, x: f64, y: f64, dt: f64) -> (f64, f64) {
    let (k1x, k1y) = sys.drift(x, y);
    let (k2x, k2y) = sys.drift(x + 0.5 * dt * k1x, y + 0.5 * dt * k1y);
    let (k3x, k3y) = sys.drift(x + 0.5 * dt * k2x, y + 0.5 * dt * k2y);
    let (k4x, k4y) = sys.drift(x + dt * k3x, y + dt * k3y);
    (
        x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        y + dt / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y),
    )
}

/// Options for the cycle search.
#[derive(Debug, Clone)]
pub struct CycleOptions {
    pub t_transient: f64,
    pub tol: f64,
    pub dt: f64,
    pub initial: (f64, f64),
    /// Fraction of the x-range at which the Poincaré section is placed.
    pub section_level: f64,
    /// Number of uniform phase samples of the stored orbit (power of two).
    pub n_orbit: usize,
}

impl Default for CycleOptions {
    fn default() -> Self {
        CycleOptions {
            t_transient: 500.0,
            tol: 1e-9,
            dt: 1e-3,
            initial: (1.0, 0.0),
            section_level: 0.5,
            n_orbit: 2048,
        }
    }
}

/// The located periodic orbit, sampled at 2·n_orbit+1 half-phase steps
/// (index j ↔ time jT/(2 n_orbit)), phase origin at the maximum of x.
#[derive(Debug, Clone)]
pub struct LimitCycle {
    pub period: f64,
    pub omega: f64,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub n_orbit: usize,
}

impl LimitCycle {
    /// Orbit point at phase index j of the half-resolution grid.
    pub fn half_sample(&self, j: usize) -> (f64, f64) {
        (self.xs[j], self.ys[j])
    }

    /// |X(T) - X(0)|, the closure defect of the stored orbit.
    pub fn closure_defect(&self) -> f64 {
        let last = self.xs.len() - 1;
        ((self.xs[last] - self.xs[0]).powi(2) + (self.ys[last] - self.ys[0]).powi(2)).sqrt()
    }
}

/// Refine the upward crossing of x = level inside a step that brackets it.
/// Returns the offset τ ∈ [0, dt] from the step start.
fn bisect_crossing(
    sys: &dyn PlanarOde,
    state: (f64, f64),
    dt: f64,
    level: f64,
    tol: f64,
) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, dt);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let (x, _) = rk4(sys, state.0, state.1, mid);
        if x - level < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < tol * 1e-3 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Locate the attracting limit cycle: burn in, detect upward crossings of a
/// Poincaré section through the x-range, refine crossing times by bisection,
/// accept the period once consecutive intervals agree to `tol`, and resample
/// one period with the phase origin at max x.
pub fn find_limit_cycle(sys: &dyn PlanarOde, opts: &CycleOptions) -> Result<LimitCycle> {
    let dt = opts.dt;
    let (mut x, mut y) = opts.initial;
    let burn_steps = (opts.t_transient / dt).ceil() as usize;
    for _ in 0..burn_steps {
        (x, y) = rk4(sys, x, y, dt);
    }

    // place the section from the x-range of a scan window
    let scan_steps = (100.0 / dt) as usize;
    let (mut x_min, mut x_max) = (x, x);
    let (mut sx, mut sy) = (x, y);
    for _ in 0..scan_steps {
        (sx, sy) = rk4(sys, sx, sy, dt);
        x_min = x_min.min(sx);
        x_max = x_max.max(sx);
    }
    if x_max - x_min < 1e-9 {
        return Err(Error::NoCycleDetected);
    }
    let level = x_min + opts.section_level * (x_max - x_min);

    // collect refined crossing times until the period settles
    let max_steps = (20_000.0 / dt) as usize;
    let mut crossings: Vec<(f64, (f64, f64))> = Vec::new();
    let mut t = 0.0;
    let mut period = None;
    for _ in 0..max_steps {
        let (nx, ny) = rk4(sys, x, y, dt);
        if x - level < 0.0 && nx - level >= 0.0 {
            let tau = bisect_crossing(sys, (x, y), dt, level, opts.tol);
            let state = rk4(sys, x, y, tau);
            crossings.push((t + tau, state));
            let m = crossings.len();
            if m >= 3 {
                let t1 = crossings[m - 2].0 - crossings[m - 3].0;
                let t2 = crossings[m - 1].0 - crossings[m - 2].0;
                if (t2 - t1).abs() < opts.tol {
                    period = Some(0.5 * (t1 + t2));
                    break;
                }
            }
        }
        x = nx;
        y = ny;
        t += dt;
    }
    let period = period.ok_or(Error::NoCycleDetected)?;

    // sample one period from the last crossing and pull the phase origin to
    // the maximum of x
    let anchor = crossings.last().unwrap().1;
    let n2 = 2 * opts.n_orbit;
    let dto = period / n2 as f64;
    let mut xs = Vec::with_capacity(n2 + 1);
    let mut ys = Vec::with_capacity(n2 + 1);
    let (mut cx, mut cy) = anchor;
    for _ in 0..=n2 {
        xs.push(cx);
        ys.push(cy);
        (cx, cy) = rk4(sys, cx, cy, dto);
    }
    let j_max = xs
        .iter()
        .take(n2)
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    // quadratic refinement of the peak time on the uniform samples
    let vm = xs[(j_max + n2 - 1) % n2];
    let v0 = xs[j_max];
    let vp = xs[(j_max + 1) % n2];
    let denom = vm - 2.0 * v0 + vp;
    let frac = if denom.abs() > 1e-300 {
        (0.5 * (vm - vp) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let t_peak = (j_max as f64 + frac) * dto;

    // walk from the anchor to the refined peak, then store the final orbit
    let (mut px, mut py) = anchor;
    let whole = (t_peak / dt).floor() as usize;
    for _ in 0..whole {
        (px, py) = rk4(sys, px, py, dt);
    }
    let rem = t_peak - whole as f64 * dt;
    (px, py) = rk4(sys, px, py, rem);

    let mut fx = Vec::with_capacity(n2 + 1);
    let mut fy = Vec::with_capacity(n2 + 1);
    let (mut ox, mut oy) = (px, py);
    for _ in 0..=n2 {
        fx.push(ox);
        fy.push(oy);
        (ox, oy) = rk4(sys, ox, oy, dto);
    }

    Ok(LimitCycle {
        period,
        omega: TAU / period,
        xs: fx,
        ys: fy,
        n_orbit: opts.n_orbit,
    })
}

/// Phase sensitivity pair on the evaluation grid. `adjoint_y` is the second
/// component of the full adjoint vector, kept for normalization diagnostics.
#[derive(Debug, Clone)]
pub struct PhaseSensitivity {
    pub z: GridFunction,
    pub zw: GridFunction,
    pub omega: f64,
    pub adjoint_y: GridFunction,
}

impl PhaseSensitivity {
    pub fn to_phase_model(&self, d: f64) -> Result<PhaseModel> {
        PhaseModel::new(self.omega, self.z.clone(), self.zw.clone(), d)
    }
}

/// Integrate the adjoint variational equation backward over repeated periods
/// (renormalizing Z_vec·F = ω once per period) until the period map changes
/// by less than 1e-8, then project onto the input direction and resample to
/// a grid of size `n_grid`.
pub fn compute_adjoint(
    sys: &dyn PlanarOde,
    lc: &LimitCycle,
    n_grid: usize,
) -> Result<PhaseSensitivity> {
    let n = lc.n_orbit;
    if n % n_grid != 0 {
        return Err(Error::InvalidParameter(format!(
            "orbit resolution {n} not divisible by grid {n_grid}"
        )));
    }
    let dt = lc.period / n as f64;
    let omega = lc.omega;

    let g = |j: usize, z: (f64, f64)| -> (f64, f64) {
        // -J(X₀)ᵀ Z at half-grid index j
        let (x, y) = lc.half_sample(j % (2 * n));
        let jac = sys.jacobian(x, y);
        (
            -(jac[0][0] * z.0 + jac[1][0] * z.1),
            -(jac[0][1] * z.0 + jac[1][1] * z.1),
        )
    };

    // start from the drift direction (never orthogonal to the true adjoint)
    let f0 = sys.drift(lc.xs[0], lc.ys[0]);
    let norm0 = (f0.0 * f0.0 + f0.1 * f0.1).sqrt();
    let mut z = (f0.0 / norm0, f0.1 / norm0);
    let mut samples = vec![(0.0_f64, 0.0_f64); n];
    let mut prev_z_x: Option<Vec<f64>> = None;

    for _period in 0..500 {
        // backward sweep: index i runs from n down to 1, i.e. time iΔ → (i-1)Δ
        for i in (1..=n).rev() {
            let step = |zz: (f64, f64)| -> (f64, f64) {
                let h = -dt;
                let k1 = g(2 * i, zz);
                let k2 = g(2 * i - 1, (zz.0 + 0.5 * h * k1.0, zz.1 + 0.5 * h * k1.1));
                let k3 = g(2 * i - 1, (zz.0 + 0.5 * h * k2.0, zz.1 + 0.5 * h * k2.1));
                let k4 = g(2 * i - 2, (zz.0 + h * k3.0, zz.1 + h * k3.1));
                (
                    zz.0 + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
                    zz.1 + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
                )
            };
            z = step(z);
            samples[i - 1] = z;
        }
        // renormalize Z·F = ω at θ = 0
        let f = sys.drift(lc.xs[0], lc.ys[0]);
        let dot = samples[0].0 * f.0 + samples[0].1 * f.1;
        if dot.abs() < 1e-300 {
            return Err(Error::AdjointNotConverged(_period));
        }
        let scale = omega / dot;
        for s in samples.iter_mut() {
            s.0 *= scale;
            s.1 *= scale;
        }
        z = samples[0];
        // wrap around for the next sweep: Z at time T equals Z at time 0
        let z_x: Vec<f64> = samples.iter().map(|s| s.0).collect();
        if let Some(prev) = &prev_z_x {
            let change = z_x
                .iter()
                .zip(prev)
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            if change < 1e-8 {
                let stride = n / n_grid;
                let z_grid =
                    GridFunction::new((0..n_grid).map(|j| samples[j * stride].0).collect())?;
                let zy_grid =
                    GridFunction::new((0..n_grid).map(|j| samples[j * stride].1).collect())?;
                return Ok(PhaseSensitivity {
                    zw: z_grid.clone(),
                    z: z_grid,
                    omega,
                    adjoint_y: zy_grid,
                });
            }
        }
        prev_z_x = Some(z_x);
    }
    Err(Error::AdjointNotConverged(500))
}

/// Normalization residual max_θ |Z_vec·F(X₀) - ω| of an adjoint solution.
pub fn normalization_residual(
    sys: &dyn PlanarOde,
    lc: &LimitCycle,
    ps: &PhaseSensitivity,
) -> f64 {
    let n = ps.z.n();
    let stride = 2 * lc.n_orbit / n;
    (0..n).fold(0.0_f64, |m, j| {
        let (x, y) = lc.half_sample(j * stride);
        let f = sys.drift(x, y);
        m.max((ps.z.values()[j] * f.0 + ps.adjoint_y.values()[j] * f.1 - lc.omega).abs())
    })
}

/// Serializable model file: ω, Z, Z_w on a uniform grid plus the noise
/// intensity. The JSON interchange format consumed by the scenario runner.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseModelFile {
    pub omega: f64,
    pub d: f64,
    pub n: usize,
    pub z: Vec<f64>,
    pub zw: Vec<f64>,
}

impl PhaseModelFile {
    pub fn from_model(model: &PhaseModel) -> Self {
        PhaseModelFile {
            omega: model.omega,
            d: model.d,
            n: model.n(),
            z: model.z.values().to_vec(),
            zw: model.zw.values().to_vec(),
        }
    }

    pub fn into_model(self) -> Result<PhaseModel> {
        PhaseModel::new(
            self.omega,
            GridFunction::new(self.z)?,
            GridFunction::new(self.zw)?,
            self.d,
        )
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)
            .map_err(|e| Error::InvalidParameter(format!("model serialization: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::InvalidParameter(format!("model file {}: {e}", path.display())))
    }
}
