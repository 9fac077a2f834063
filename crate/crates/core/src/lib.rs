//! Numerical toolkit for steering the phase density of a population of
//! identical stochastic oscillators that all receive one common input.
//!
//! The crate covers the full pipeline:
//!
//! - [`circle`]: function algebra on S¹ (grids, quadrature, Fourier ops);
//! - [`phase_reduction`]: natural frequency and phase sensitivity of a
//!   planar limit-cycle ODE;
//! - [`fokker_planck`]: spectral time-stepping of the phase density, its
//!   rotating-frame and averaged variants, and stationary distributions;
//! - [`particle`]: Monte Carlo oscillator ensembles, the weak-convergence
//!   oracle for the PDE solver;
//! - [`input_design`]: reachability analysis and convex design of periodic
//!   feedforward inputs from Fourier coefficients;
//! - [`controllers`]: feedback laws, the coupled plant/surrogate integrator,
//!   measurement-noise handling;
//! - [`metrics`]: divergences, circular Wasserstein distance, and the
//!   functional-inequality diagnostics used by the convergence checks.

pub mod circle;
pub mod controllers;
pub mod error;
pub mod fokker_planck;
pub mod input_design;
pub mod metrics;
pub mod particle;
pub mod phase_reduction;

pub use circle::{Density, FourierSeries, GridFunction};
pub use error::{Error, Result};
