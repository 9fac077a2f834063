//! Monte Carlo oscillator ensembles: Euler–Maruyama simulation of
//!
//!   dθ_i = (ω + Z(θ_i)u(t)) dt + √(2D) Z_w(θ_i) dW_i
//!
//! with phases wrapped to [0, 2π). This is the weak-convergence oracle for
//! the density solver: the histogram of a large ensemble must track the
//! transport-equation solution.
//!
//! Each oscillator owns a counter-keyed ChaCha stream (master seed, stream =
//! oscillator index), so trajectories are bit-reproducible and independent of
//! how the work is scheduled across threads.

use std::f64::consts::TAU;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::circle::{Density, GridFunction};
use crate::error::{Error, Result};
use crate::fokker_planck::PhaseModel;

/// Phases of the ensemble at one instant.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub phases: Vec<f64>,
    pub seed: u64,
}

/// Simulation options. `parallel` is honored only when the crate is built
/// with the `parallel` feature; results are identical either way.
#[derive(Debug, Clone)]
pub struct SimOptions {
    pub dt: f64,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            dt: 1e-2,
            seed: 0,
            parallel: true,
        }
    }
}

#[inline]
fn wrap(theta: f64) -> f64 {
    theta.rem_euclid(TAU)
}

/// Periodic linear interpolation of grid samples at an arbitrary phase.
#[inline]
fn interp(values: &[f64], theta: f64) -> f64 {
    let n = values.len();
    let x = wrap(theta) / TAU * n as f64;
    let j = x as usize % n;
    let t = x - x.floor();
    values[j] * (1.0 - t) + values[(j + 1) % n] * t
}

/// Draw `count` phases from a density by inverse-CDF sampling (cumulative
/// rectangle rule, linear interpolation), one independent stream per sample.
pub fn sample_from_density(rho0: &Density, count: usize, seed: u64) -> Vec<f64> {
    let cdf = rho0.cdf();
    let h = rho0.h();
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let u: f64 = master.random();
            crate::circle::quantile_from_cdf(&cdf, h, u)
        })
        .collect()
}

struct Oscillator {
    phase: f64,
    rng: ChaCha8Rng,
}

fn advance(
    osc: &mut Oscillator,
    z: &[f64],
    zw: &[f64],
    omega: f64,
    noise_scale: f64,
    u_values: &[f64],
    dt: f64,
) {
    for &u in u_values {
        let theta = osc.phase;
        let xi: f64 = osc.rng.sample(StandardNormal);
        let drift = (omega + interp(z, theta) * u) * dt;
        let diffusion = noise_scale * interp(zw, theta) * xi;
        osc.phase = wrap(theta + drift + diffusion);
    }
}

/// Euler–Maruyama simulation of `count` oscillators from `rho0`, recording
/// the ensemble at the requested sample times (plus the final time).
pub fn simulate(
    model: &PhaseModel,
    count: usize,
    rho0: &Density,
    u: &(dyn Fn(f64) -> f64 + Sync),
    t_final: f64,
    sample_times: &[f64],
    opts: &SimOptions,
) -> Result<Vec<(f64, Ensemble)>> {
    if opts.dt > 1e-2 + 1e-15 {
        return Err(Error::InvalidParameter(format!(
            "Euler–Maruyama step {} exceeds 1e-2",
            opts.dt
        )));
    }
    let steps = (t_final / opts.dt - 1e-9).ceil().max(0.0) as usize;
    let dt = if steps > 0 { t_final / steps as f64 } else { opts.dt };

    let mut oscillators: Vec<Oscillator> = sample_from_density(rho0, count, opts.seed)
        .into_iter()
        .enumerate()
        .map(|(i, phase)| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(i as u64 + 1);
            Oscillator { phase, rng }
        })
        .collect();

    let mut record_at = vec![false; steps + 1];
    for &ts in sample_times {
        let idx = (ts / dt).round().clamp(0.0, steps as f64) as usize;
        record_at[idx] = true;
    }
    record_at[steps] = true;

    let z = model.z.values();
    let zw = model.zw.values();
    let noise_scale = (2.0 * model.d).sqrt() * dt.sqrt();

    let mut out = Vec::new();
    let snapshot = |oscs: &[Oscillator], t: f64| {
        (
            t,
            Ensemble {
                phases: oscs.iter().map(|o| o.phase).collect(),
                seed: opts.seed,
            },
        )
    };
    if record_at[0] {
        out.push(snapshot(&oscillators, 0.0));
    }

    // batch the u(t) samples between recordings so the hot loop stays local
    let mut step = 0;
    while step < steps {
        let mut span = 0;
        while step + span < steps && !(span > 0 && record_at[step + span]) {
            span += 1;
            if record_at[step + span] {
                break;
            }
        }
        let u_values: Vec<f64> = (0..span).map(|i| u((step + i) as f64 * dt)).collect();

        run_span(&mut oscillators, z, zw, model.omega, noise_scale, &u_values, dt, opts.parallel);

        step += span;
        if record_at[step] {
            out.push(snapshot(&oscillators, step as f64 * dt));
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn run_span(
    oscillators: &mut [Oscillator],
    z: &[f64],
    zw: &[f64],
    omega: f64,
    noise_scale: f64,
    u_values: &[f64],
    dt: f64,
    parallel: bool,
) {
    #[cfg(feature = "parallel")]
    if parallel {
        oscillators
            .par_iter_mut()
            .for_each(|osc| advance(osc, z, zw, omega, noise_scale, u_values, dt));
        return;
    }
    let _ = parallel;
    oscillators
        .iter_mut()
        .for_each(|osc| advance(osc, z, zw, omega, noise_scale, u_values, dt));
}

/// Normalized histogram of the ensemble phases: counts / (N · binwidth).
pub fn histogram(ensemble: &Ensemble, n_bins: usize) -> Result<Density> {
    if n_bins < 16 {
        return Err(Error::InvalidParameter(format!(
            "need at least 16 bins, got {n_bins}"
        )));
    }
    let width = TAU / n_bins as f64;
    let mut counts = vec![0.0_f64; n_bins];
    for &p in &ensemble.phases {
        let j = ((wrap(p) / width) as usize).min(n_bins - 1);
        counts[j] += 1.0;
    }
    let scale = 1.0 / (ensemble.phases.len() as f64 * width);
    Density::new(GridFunction::new(
        counts.into_iter().map(|c| c * scale).collect(),
    )?)
}

/// CSV export: one row per bin, `theta,density`.
pub fn write_histogram_csv(rho: &Density, path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "theta_rad,density_per_rad")?;
    for (j, v) in rho.values().iter().enumerate() {
        writeln!(out, "{:.6},{:.12e}", rho.as_grid().theta(j), v)?;
    }
    Ok(())
}
