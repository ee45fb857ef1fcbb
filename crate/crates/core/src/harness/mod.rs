//! Epsilon-sweep orchestration: parallel path ensembles, the error metric in
//! the gradient-norm topology, the S1/S3 fluctuation diagnostics, and
//! machine-readable validation suites.
//!
//! A sweep solves the averaged equation once on the shared basis/grid/step,
//! then for each epsilon runs an ensemble of coupled paths with per-path RNG
//! streams and records
//!
//! ```text
//! e_i = ( integral_0^T || u_eps_i(t) - ubar(t) ||_V^2 dt )^(1/2)
//! ```
//!
//! by trapezoid rule in time. Medians and exceedance probabilities
//! `P(e > delta)` summarize the ladder; the default delta is half the median
//! error at the largest epsilon. The S1 diagnostic integrates the
//! fluctuation of the instantaneous coefficient around its fast-averaged
//! value along each path; S3 is its deterministic two-scale counterpart on
//! the averaged solution. Aggregation is order-independent and all RNG
//! streams are path-indexed, so reports are byte-identical for any worker
//! count.

mod validate;

pub use validate::{validate, CheckResult, ValidationSummary};

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;

use crate::averaging::{solve_averaged, AveragedSystem, NonlinearMode, DEFAULT_GH_NODES};
use crate::basis::GalerkinBasis;
use crate::coefficient::CoefficientSpec;
use crate::error::{Result, SimError};
use crate::fastproc::NoiseModel;
use crate::seed::{stream_rng, TAG_PATH};
use crate::slowsolver::{simulate_coupled, Problem, Trajectory};

/// Non-uniform trapezoid rule over sampled times.
pub fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// Default time weight `psi(t) = 1 - t/T`, smooth with psi(T) = 0.
pub fn default_psi_weights(times: &[f64], t_final: f64) -> Vec<f64> {
    times.iter().map(|t| 1.0 - t / t_final).collect()
}

/// The step indices at which a trajectory kept fast-field snapshots.
pub fn snapshot_steps(traj: &Trajectory) -> Vec<usize> {
    traj.fast_snapshots.iter().map(|(s, _)| *s).collect()
}

/// Distance between two trajectories in the discrete `L^2(0,T;V)` metric.
pub fn v_error(basis: &GalerkinBasis, a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.times.len() != b.times.len() {
        return Err(SimError::ShapeMismatch {
            expected: a.times.len(),
            actual: b.times.len(),
        });
    }
    let sq: Vec<f64> = a
        .coeffs
        .iter()
        .zip(&b.coeffs)
        .map(|(x, y)| {
            let v = basis.v_norm((x - y).view());
            v * v
        })
        .collect();
    Ok(trapezoid(&a.times, &sq).sqrt())
}

/// Fluctuation diagnostic along one coupled path:
/// time-quadrature of
/// `integral_D (alpha(x/eps, v(t,x)) - abar_eps(u(t))(x)) u(t,x).phi(x) dx`
/// over the retained fast-field snapshots, weighted by `psi`.
#[allow(clippy::too_many_arguments)]
pub fn s1_diagnostic(
    traj: &Trajectory,
    spec: &CoefficientSpec,
    basis: &GalerkinBasis,
    noise: &NoiseModel,
    eps: f64,
    phi_coeffs: ArrayView1<'_, f64>,
    psi_weights: &[f64],
) -> Result<f64> {
    if traj.fast_snapshots.is_empty() {
        return Err(SimError::InvalidParameter(
            "s1_diagnostic needs fast-field snapshots (snapshot_stride > 0)".into(),
        ));
    }
    if psi_weights.len() != traj.fast_snapshots.len() {
        return Err(SimError::ShapeMismatch {
            expected: traj.fast_snapshots.len(),
            actual: psi_weights.len(),
        });
    }
    let sys = AveragedSystem::new(basis, spec, noise, DEFAULT_GH_NODES)?;
    let cell_values = spec.cell_values_on_grid(basis, eps)?;
    let phi_field = basis.evaluate_on_grid(phi_coeffs)?;
    let n_points = basis.grid.n_points();
    let fd = basis.field_dim();

    let mut times = Vec::with_capacity(traj.fast_snapshots.len());
    let mut values = Vec::with_capacity(traj.fast_snapshots.len());
    for ((step, v_grid), psi) in traj.fast_snapshots.iter().zip(psi_weights) {
        let u_field = basis.evaluate_on_grid(traj.coeffs[*step].view())?;
        let abar_u = sys.alpha_bar_eps_field(eps, u_field.view())?;
        let mut acc = 0.0;
        for g in 0..n_points {
            let mut v = [0.0; 2];
            for (c, vc) in v.iter_mut().enumerate().take(fd) {
                *vc = v_grid[[c, g]];
            }
            let mut alpha_v = spec.alpha0;
            for (j, term) in spec.terms.iter().enumerate() {
                alpha_v += cell_values[[j, g]] * term.h.eval(&v[..fd]);
            }
            let mut u_phi = 0.0;
            for c in 0..fd {
                u_phi += u_field[[c, g]] * phi_field[[c, g]];
            }
            acc += (alpha_v - abar_u[g]) * u_phi;
        }
        times.push(traj.times[*step]);
        values.push(acc * basis.grid.weight * psi);
    }
    Ok(trapezoid(&times, &values))
}

/// Deterministic two-scale diagnostic on the averaged trajectory:
/// time-quadrature of
/// `integral_D (abar_eps(ubar(t)) - abar(ubar(t))) ubar(t).phi dx`
/// sampled at `sample_steps`.
#[allow(clippy::too_many_arguments)]
pub fn s3_diagnostic(
    ubar: &Trajectory,
    spec: &CoefficientSpec,
    basis: &GalerkinBasis,
    noise: &NoiseModel,
    eps: f64,
    phi_coeffs: ArrayView1<'_, f64>,
    sample_steps: &[usize],
    psi_weights: &[f64],
) -> Result<f64> {
    if sample_steps.is_empty() || sample_steps.len() != psi_weights.len() {
        return Err(SimError::ShapeMismatch {
            expected: sample_steps.len().max(1),
            actual: psi_weights.len(),
        });
    }
    let sys = AveragedSystem::new(basis, spec, noise, DEFAULT_GH_NODES)?;
    spec.check_guard(basis, eps)?;
    let phi_field = basis.evaluate_on_grid(phi_coeffs)?;
    let n_points = basis.grid.n_points();
    let fd = basis.field_dim();

    let mut times = Vec::with_capacity(sample_steps.len());
    let mut values = Vec::with_capacity(sample_steps.len());
    for (step, psi) in sample_steps.iter().zip(psi_weights) {
        let u_field = basis.evaluate_on_grid(ubar.coeffs[*step].view())?;
        let with_cell = sys.alpha_bar_eps_field(eps, u_field.view())?;
        let averaged = sys.alpha_bar_field(u_field.view());
        let mut acc = 0.0;
        for g in 0..n_points {
            let mut u_phi = 0.0;
            for c in 0..fd {
                u_phi += u_field[[c, g]] * phi_field[[c, g]];
            }
            acc += (with_cell[g] - averaged[g]) * u_phi;
        }
        times.push(ubar.times[*step]);
        values.push(acc * basis.grid.weight * psi);
    }
    Ok(trapezoid(&times, &values))
}

/// Error and fluctuation diagnostic of one ensemble path.
#[derive(Debug, Clone, Copy)]
pub struct PathResult {
    pub error: f64,
    pub s1: f64,
}

/// Runs `n_paths` coupled simulations at one epsilon against a precomputed
/// averaged trajectory. Paths are independent and order-indexed; the result
/// vector is ordered by path regardless of scheduling.
pub fn run_ensemble(
    problem: &Problem,
    ubar: &Trajectory,
    eps: f64,
    n_paths: usize,
    base_seed: u64,
    phi_coeffs: ArrayView1<'_, f64>,
) -> Result<Vec<PathResult>> {
    let basis = &problem.basis;
    (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let run = || -> Result<PathResult> {
                let mut rng = stream_rng(base_seed, path as u64, TAG_PATH);
                let traj = simulate_coupled(problem, eps, &mut rng)?;
                let error = v_error(basis, &traj, ubar)?;
                let snap_times: Vec<f64> = traj
                    .fast_snapshots
                    .iter()
                    .map(|(s, _)| traj.times[*s])
                    .collect();
                let psi = default_psi_weights(&snap_times, problem.t_final);
                let s1 = s1_diagnostic(
                    &traj,
                    &problem.spec,
                    basis,
                    &problem.noise,
                    eps,
                    phi_coeffs,
                    &psi,
                )?;
                Ok(PathResult { error, s1 })
            };
            run().map_err(|e| SimError::PathFailed {
                path,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Full sweep specification.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub problem: Problem,
    /// Strictly decreasing positive epsilon ladder.
    pub epsilons: Vec<f64>,
    pub n_paths: usize,
    pub base_seed: u64,
    /// Probability threshold; `None` self-scales to half the largest-epsilon
    /// median error.
    pub delta: Option<f64>,
    /// Provenance hash recorded in reports.
    pub config_hash: String,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        if self.epsilons.is_empty() {
            return Err(SimError::InvalidParameter("empty epsilon ladder".into()));
        }
        if self.epsilons.iter().any(|e| *e <= 0.0) {
            return Err(SimError::InvalidParameter(
                "epsilons must be positive".into(),
            ));
        }
        if self.epsilons.windows(2).any(|p| p[1] >= p[0]) {
            return Err(SimError::InvalidParameter(
                "epsilons must be strictly decreasing".into(),
            ));
        }
        if self.n_paths < 8 {
            return Err(SimError::InvalidParameter(format!(
                "need at least 8 paths per epsilon, got {}",
                self.n_paths
            )));
        }
        if self.problem.snapshot_stride == 0 {
            return Err(SimError::InvalidParameter(
                "sweeps need snapshot_stride > 0 for the S1 diagnostic".into(),
            ));
        }
        let smallest = *self.epsilons.last().unwrap();
        self.problem.spec.check_guard(&self.problem.basis, smallest)
    }
}

/// Per-epsilon ensemble statistics.
#[derive(Debug, Clone)]
pub struct EpsilonStats {
    pub epsilon: f64,
    pub errors: Vec<f64>,
    pub s1_values: Vec<f64>,
    pub s3: f64,
    pub median_error: f64,
    pub mean_error: f64,
    pub p_exceed: f64,
    pub s1_median_abs: f64,
}

/// Sweep outcome with the ladder assertions recorded (never thrown).
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub stats: Vec<EpsilonStats>,
    pub delta: f64,
    pub medians_strictly_decreasing: bool,
    pub p_exceed_nonincreasing: bool,
    pub s1_medians_decreasing: bool,
    pub s3_magnitudes_decreasing: bool,
    pub wall_time_s: f64,
    pub base_seed: u64,
    pub config_hash: String,
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Runs the whole epsilon ladder: one averaged solve, then an ensemble per
/// epsilon with the S1/S3 diagnostics and exceedance statistics.
pub fn convergence_sweep(config: &SweepConfig) -> Result<SweepReport> {
    config.validate()?;
    let start = std::time::Instant::now();
    let problem = &config.problem;
    let basis = &problem.basis;

    let ubar = solve_averaged(problem, NonlinearMode::Lagged, DEFAULT_GH_NODES)?;
    let mut phi = Array1::zeros(basis.n_modes);
    phi[0] = 1.0;

    // Shared sampling pattern for the deterministic S3 diagnostic.
    let stride = problem.snapshot_stride;
    let n_steps = problem.n_steps();
    let mut sample_steps: Vec<usize> = (0..=n_steps).step_by(stride).collect();
    if *sample_steps.last().unwrap() != n_steps {
        sample_steps.push(n_steps);
    }
    let sample_times: Vec<f64> = sample_steps.iter().map(|s| ubar.times[*s]).collect();
    let psi = default_psi_weights(&sample_times, problem.t_final);

    let mut stats = Vec::with_capacity(config.epsilons.len());
    for &eps in &config.epsilons {
        let s3 = s3_diagnostic(
            &ubar,
            &problem.spec,
            basis,
            &problem.noise,
            eps,
            phi.view(),
            &sample_steps,
            &psi,
        )?;
        let results = run_ensemble(
            problem,
            &ubar,
            eps,
            config.n_paths,
            config.base_seed,
            phi.view(),
        )?;
        let errors: Vec<f64> = results.iter().map(|r| r.error).collect();
        let s1_values: Vec<f64> = results.iter().map(|r| r.s1).collect();
        if errors.iter().any(|e| !e.is_finite()) {
            return Err(SimError::NonFinite {
                step: 0,
                what: format!("ensemble errors at epsilon {eps}"),
            });
        }
        let abs_s1: Vec<f64> = s1_values.iter().map(|v| v.abs()).collect();
        stats.push(EpsilonStats {
            epsilon: eps,
            median_error: median(&errors),
            mean_error: errors.iter().sum::<f64>() / errors.len() as f64,
            p_exceed: 0.0,
            s1_median_abs: median(&abs_s1),
            errors,
            s1_values,
            s3,
        });
    }

    let delta = config.delta.unwrap_or(0.5 * stats[0].median_error);
    for s in &mut stats {
        s.p_exceed =
            s.errors.iter().filter(|e| **e > delta).count() as f64 / s.errors.len() as f64;
    }

    let medians_strictly_decreasing = stats
        .windows(2)
        .all(|p| p[1].median_error < p[0].median_error);
    let p_exceed_nonincreasing = stats.windows(2).all(|p| p[1].p_exceed <= p[0].p_exceed);
    let s1_medians_decreasing = stats
        .windows(2)
        .all(|p| p[1].s1_median_abs < p[0].s1_median_abs);
    let s3_magnitudes_decreasing = stats.windows(2).all(|p| p[1].s3.abs() < p[0].s3.abs());

    Ok(SweepReport {
        stats,
        delta,
        medians_strictly_decreasing,
        p_exceed_nonincreasing,
        s1_medians_decreasing,
        s3_magnitudes_decreasing,
        wall_time_s: start.elapsed().as_secs_f64(),
        base_seed: config.base_seed,
        config_hash: config.config_hash.clone(),
    })
}
