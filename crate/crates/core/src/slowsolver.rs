//! Semi-implicit Galerkin stepper for the slow equation coupled to the fast
//! OU field.
//!
//! Each macro step applies Lie splitting: the fast field takes one exact OU
//! step with the slow field frozen, the friction matrix is reassembled from
//! the fresh fast values, and the slow coefficients solve
//!
//! ```text
//! (I + dt (Lambda + A)) a' = a + dt f
//! ```
//!
//! with diffusion and friction implicit. The system matrix has eigenvalues
//! at least 1, so the step is unconditionally stable and dissipative; with
//! zero load the H-norm decreases every step regardless of dt and eps.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basis::GalerkinBasis;
use crate::coefficient::CoefficientSpec;
use crate::error::{Result, SimError};
use crate::fastproc::{ou_exact_step, FastState, NoiseModel};

/// Time-dependent load in modal coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Forcing {
    Zero,
    /// Constant-in-time load on the first mode with unit amplitude.
    FirstMode,
}

impl Forcing {
    /// Modal load sampled at the left endpoint of a step.
    pub fn coeffs(&self, _t: f64, n_modes: usize) -> Array1<f64> {
        let mut f = Array1::zeros(n_modes);
        if matches!(self, Forcing::FirstMode) {
            f[0] = 1.0;
        }
        f
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Forcing::Zero)
    }
}

/// Complete problem description shared by the coupled and averaged solvers.
#[derive(Debug, Clone)]
pub struct Problem {
    pub basis: GalerkinBasis,
    pub spec: CoefficientSpec,
    pub noise: NoiseModel,
    pub t_final: f64,
    pub dt: f64,
    pub u0: Array1<f64>,
    pub v0: Array1<f64>,
    pub forcing: Forcing,
    /// Keep every `snapshot_stride`-th fast-field snapshot (0 = none).
    pub snapshot_stride: usize,
}

impl Problem {
    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round().max(1.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_final <= 0.0 || self.dt <= 0.0 {
            return Err(SimError::InvalidParameter(
                "t_final and dt must be positive".into(),
            ));
        }
        if self.u0.len() != self.basis.n_modes || self.v0.len() != self.basis.n_modes {
            return Err(SimError::ShapeMismatch {
                expected: self.basis.n_modes,
                actual: self.u0.len().min(self.v0.len()),
            });
        }
        if self.spec.v_dim != self.basis.field_dim() {
            return Err(SimError::InvalidParameter(format!(
                "coefficient v_dim = {} does not match the basis field dimension {}",
                self.spec.v_dim,
                self.basis.field_dim()
            )));
        }
        if self.spec.y_dim != self.basis.grid.dim {
            return Err(SimError::InvalidParameter(format!(
                "coefficient y_dim = {} does not match the domain dimension {}",
                self.spec.y_dim,
                self.basis.grid.dim
            )));
        }
        Ok(())
    }
}

/// Sampled solver output with per-step diagnostics.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Slow coefficients at each recorded time (every step, starting at 0).
    pub coeffs: Vec<Array1<f64>>,
    pub norm_h: Vec<f64>,
    pub norm_v: Vec<f64>,
    /// Quadratic friction energy a' A a at each step (0 at t = 0).
    pub friction_energy: Vec<f64>,
    /// Fast-field grid snapshots at strided step indices.
    pub fast_snapshots: Vec<(usize, Array2<f64>)>,
}

impl Trajectory {
    fn record(&mut self, basis: &GalerkinBasis, t: f64, a: &Array1<f64>, friction: f64) {
        self.times.push(t);
        self.norm_h.push(basis.h_norm(a.view()));
        self.norm_v.push(basis.v_norm(a.view()));
        self.friction_energy.push(friction);
        self.coeffs.push(a.clone());
    }

    /// Index of the snapshot taken at step `step`, if any.
    pub fn snapshot_at(&self, step: usize) -> Option<&Array2<f64>> {
        self.fast_snapshots
            .iter()
            .find(|(s, _)| *s == step)
            .map(|(_, v)| v)
    }
}

/// Reusable friction-matrix assembler.
///
/// The matrix is `A_ij = integral alpha(x) e_i(x) . e_j(x) dx` by grid
/// quadrature, computed as `B B^T` with `B = E diag(sqrt(w alpha))`; this
/// keeps it symmetric positive semidefinite by construction. The cell
/// factors `g_j(frac(x/eps))` are frozen per epsilon so the per-step cost is
/// one `h_j` sweep plus one rank-`n_points` product.
pub struct FrictionAssembler<'a> {
    basis: &'a GalerkinBasis,
    spec: &'a CoefficientSpec,
    /// g_j values at grid points for the fixed epsilon, (n_terms, n_points).
    cell_values: Array2<f64>,
    alpha_buf: Vec<f64>,
}

impl<'a> FrictionAssembler<'a> {
    pub fn new(basis: &'a GalerkinBasis, spec: &'a CoefficientSpec, eps: f64) -> Result<Self> {
        let cell_values = spec.cell_values_on_grid(basis, eps)?;
        Ok(FrictionAssembler {
            basis,
            spec,
            cell_values,
            alpha_buf: vec![0.0; basis.grid.n_points()],
        })
    }

    /// Coefficient field alpha(x/eps, v(x)) on the grid for the current fast
    /// values.
    pub fn alpha_field(&mut self, fast_values: ArrayView2<'_, f64>) -> Result<&[f64]> {
        let n_points = self.basis.grid.n_points();
        let fd = self.spec.v_dim;
        for g in 0..n_points {
            let mut v = [0.0; 2];
            for (c, vc) in v.iter_mut().enumerate().take(fd) {
                *vc = fast_values[[c, g]];
            }
            let mut val = self.spec.alpha0;
            for (j, term) in self.spec.terms.iter().enumerate() {
                val += self.cell_values[[j, g]] * term.h.eval(&v[..fd]);
            }
            self.alpha_buf[g] = val;
        }
        Ok(&self.alpha_buf)
    }

    /// Assembles the friction matrix from fast-field grid values.
    pub fn assemble(&mut self, fast_values: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.alpha_field(fast_values)?;
        let alpha = std::mem::take(&mut self.alpha_buf);
        let result = self.assemble_from_alpha(&alpha);
        self.alpha_buf = alpha;
        result
    }

    /// Assembles from an arbitrary positive coefficient field on the grid
    /// (used by the averaged solver as well).
    pub fn assemble_from_alpha(&self, alpha: &[f64]) -> Result<Array2<f64>> {
        assemble_weighted_gram(self.basis, alpha)
    }
}

/// Weighted Gram matrix of the basis under a positive grid coefficient.
pub fn assemble_weighted_gram(basis: &GalerkinBasis, alpha: &[f64]) -> Result<Array2<f64>> {
    let n_points = basis.grid.n_points();
    if alpha.len() != n_points {
        return Err(SimError::ShapeMismatch {
            expected: n_points,
            actual: alpha.len(),
        });
    }
    let w = basis.grid.weight;
    let mut scale = Array1::zeros(n_points);
    for (g, a) in alpha.iter().enumerate() {
        if !a.is_finite() {
            return Err(SimError::NonFinite {
                step: g,
                what: "friction coefficient field".into(),
            });
        }
        if *a <= 0.0 {
            return Err(SimError::InvalidParameter(format!(
                "friction coefficient must be positive, got {a} at grid point {g}"
            )));
        }
        scale[g] = (w * a).sqrt();
    }
    let n = basis.n_modes;
    let mut matrix = Array2::zeros((n, n));
    for table in basis.eval_tables() {
        let b = table * &scale;
        matrix = matrix + b.dot(&b.t());
    }
    // The product is symmetric up to rounding; make it exact.
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (matrix[[i, j]] + matrix[[j, i]]);
            matrix[[i, j]] = s;
            matrix[[j, i]] = s;
        }
    }
    Ok(matrix)
}

/// Public one-shot form of the friction assembly.
pub fn assemble_friction_matrix(
    basis: &GalerkinBasis,
    spec: &CoefficientSpec,
    eps: f64,
    fast_values: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    FrictionAssembler::new(basis, spec, eps)?.assemble(fast_values)
}

/// Cholesky solve of `(I + dt (Lambda + A)) a' = a + dt f`.
///
/// The system matrix is symmetric positive definite with eigenvalues >= 1,
/// so failure indicates corrupted input rather than conditioning.
pub fn slow_step(
    a: ArrayView1<'_, f64>,
    friction: &Array2<f64>,
    f_coeffs: ArrayView1<'_, f64>,
    dt: f64,
    basis: &GalerkinBasis,
) -> Result<Array1<f64>> {
    if dt <= 0.0 {
        return Err(SimError::InvalidParameter("dt must be positive".into()));
    }
    let n = basis.n_modes;
    if a.len() != n || f_coeffs.len() != n || friction.nrows() != n || friction.ncols() != n {
        return Err(SimError::ShapeMismatch {
            expected: n,
            actual: a.len().min(f_coeffs.len()).min(friction.nrows()),
        });
    }
    let mut m = friction.clone();
    for i in 0..n {
        for j in 0..n {
            m[[i, j]] *= dt;
        }
        m[[i, i]] += 1.0 + dt * basis.stiffness_diag[i];
    }
    let rhs = &a.to_owned() + &(f_coeffs.to_owned() * dt);
    cholesky_solve(m, rhs)
}

fn cholesky_solve(mut m: Array2<f64>, mut rhs: Array1<f64>) -> Result<Array1<f64>> {
    let n = m.nrows();
    let max_diag = (0..n).fold(0.0_f64, |acc, i| acc.max(m[[i, i]]));
    let mut min_pivot = f64::INFINITY;
    for j in 0..n {
        for k in 0..j {
            let l = m[[j, k]];
            for i in j..n {
                m[[i, j]] -= l * m[[i, k]];
            }
        }
        let pivot = m[[j, j]];
        if !pivot.is_finite() || pivot <= 0.0 {
            return Err(SimError::LinearSolve {
                detail: format!("nonpositive pivot at column {j}"),
                condition_estimate: max_diag / pivot.abs().max(f64::MIN_POSITIVE),
            });
        }
        min_pivot = min_pivot.min(pivot);
        let s = pivot.sqrt();
        for i in j..n {
            m[[i, j]] /= s;
        }
    }
    // Forward substitution L y = rhs.
    for i in 0..n {
        let mut v = rhs[i];
        for k in 0..i {
            v -= m[[i, k]] * rhs[k];
        }
        rhs[i] = v / m[[i, i]];
    }
    // Back substitution L^T x = y.
    for i in (0..n).rev() {
        let mut v = rhs[i];
        for k in i + 1..n {
            v -= m[[k, i]] * rhs[k];
        }
        rhs[i] = v / m[[i, i]];
    }
    Ok(rhs)
}

/// Runs the coupled slow-fast system with Lie splitting.
///
/// Per step: exact OU substep with the slow field frozen, fast grid cache
/// refresh, friction assembly, implicit slow solve. Deterministic for a
/// fixed RNG stream.
pub fn simulate_coupled(
    problem: &Problem,
    eps: f64,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    problem.validate()?;
    problem.spec.check_guard(&problem.basis, eps)?;
    let basis = &problem.basis;
    let n_steps = problem.n_steps();
    let mut assembler = FrictionAssembler::new(basis, &problem.spec, eps)?;

    let mut a = problem.u0.clone();
    let mut fast = FastState::new(basis, problem.v0.clone(), 0.0)?;
    let mut traj = Trajectory {
        times: Vec::with_capacity(n_steps + 1),
        coeffs: Vec::with_capacity(n_steps + 1),
        norm_h: Vec::with_capacity(n_steps + 1),
        norm_v: Vec::with_capacity(n_steps + 1),
        friction_energy: Vec::with_capacity(n_steps + 1),
        fast_snapshots: Vec::new(),
    };
    traj.record(basis, 0.0, &a, 0.0);
    if problem.snapshot_stride > 0 {
        traj.fast_snapshots.push((0, fast.grid_values().to_owned()));
    }

    for step in 1..=n_steps {
        let t_left = (step - 1) as f64 * problem.dt;
        ou_exact_step(
            &mut fast,
            basis,
            a.view(),
            problem.dt,
            eps,
            &problem.noise,
            rng,
        )?;
        let friction = assembler.assemble(fast.grid_values())?;
        let f = problem.forcing.coeffs(t_left, basis.n_modes);
        a = slow_step(a.view(), &friction, f.view(), problem.dt, basis)?;
        let energy = a.dot(&friction.dot(&a));
        let t = step as f64 * problem.dt;
        if !basis.h_norm(a.view()).is_finite() {
            return Err(SimError::NonFinite {
                step,
                what: "slow coefficients".into(),
            });
        }
        traj.record(basis, t, &a, energy);
        if problem.snapshot_stride > 0
            && (step % problem.snapshot_stride == 0 || step == n_steps)
        {
            traj.fast_snapshots.push((step, fast.grid_values().to_owned()));
        }
    }
    Ok(traj)
}

/// One energy check with its bound, observed value, and margin.
#[derive(Debug, Clone)]
pub struct EnergyCheck {
    pub name: &'static str,
    pub observed: f64,
    pub bound: f64,
}

impl EnergyCheck {
    pub fn margin(&self) -> f64 {
        self.bound - self.observed
    }

    pub fn passed(&self) -> bool {
        self.observed <= self.bound
    }
}

/// Energy-estimate report for a completed trajectory.
#[derive(Debug, Clone)]
pub struct EnergyReport {
    pub checks: Vec<EnergyCheck>,
    pub stepwise_decay: bool,
}

impl EnergyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed())
    }
}

/// Verifies the discrete counterparts of the a-priori energy estimates with
/// constants taken from the underlying inequalities, not fitted:
/// (i)  sup_t ||u||_H^2 <= e^t (||u0||_H^2 + (1 + dt) * sum dt ||f||^2),
/// (ii) integral of ||u||_V^2 <= T ||f||_(L2 in t) sup||u|| + 0.5 ||u0||^2
///      + dissipation slack,
/// (iii) sup_t ||u||_V^2 <= ||u0||_V^2 + sum dt (||f|| + alpha_max ||u||)^2.
pub fn energy_diagnostics(traj: &Trajectory, problem: &Problem) -> EnergyReport {
    let dt = problem.dt;
    let n_modes = problem.basis.n_modes;
    let alpha_max = problem.spec.upper_bound();
    let u0_h = traj.norm_h[0];
    let u0_v = traj.norm_v[0];

    let mut checks = Vec::new();

    // Cumulative squared load, left-endpoint sampling like the stepper.
    let mut f_sq_cum = vec![0.0; traj.times.len()];
    for step in 1..traj.times.len() {
        let f = problem.forcing.coeffs(traj.times[step - 1], n_modes);
        let f2: f64 = f.iter().map(|x| x * x).sum();
        f_sq_cum[step] = f_sq_cum[step - 1] + dt * f2;
    }

    // (i) Exponential H-norm bound at every recorded time.
    let mut worst_ratio = 0.0_f64;
    for step in 0..traj.times.len() {
        let t = traj.times[step];
        let bound = t.exp() * (u0_h * u0_h + (1.0 + dt) * f_sq_cum[step]);
        let observed = traj.norm_h[step] * traj.norm_h[step];
        if bound > 0.0 {
            worst_ratio = worst_ratio.max(observed / bound);
        } else {
            worst_ratio = worst_ratio.max(if observed > 0.0 { f64::INFINITY } else { 0.0 });
        }
    }
    checks.push(EnergyCheck {
        name: "sup-H exponential bound (ratio to bound)",
        observed: worst_ratio,
        bound: 1.0,
    });

    // (ii) Time-integrated V-norm bound.
    let sup_h = traj.norm_h.iter().cloned().fold(0.0, f64::max);
    let t_final = *traj.times.last().unwrap();
    let f_l2 = f_sq_cum.last().unwrap().sqrt();
    let mut v_integral = 0.0;
    for step in 1..traj.times.len() {
        v_integral += dt * traj.norm_v[step] * traj.norm_v[step];
    }
    checks.push(EnergyCheck {
        name: "integrated V-norm bound",
        observed: v_integral,
        bound: t_final * f_l2 * sup_h + 0.5 * u0_h * u0_h + 1e-12,
    });

    // (iii) Uniform V-norm bound for V-regular initial data.
    let sup_v2 = traj
        .norm_v
        .iter()
        .map(|v| v * v)
        .fold(0.0, f64::max);
    let mut rhs = u0_v * u0_v;
    for step in 1..traj.times.len() {
        let f = problem.forcing.coeffs(traj.times[step - 1], n_modes);
        let f_norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        let load = f_norm + alpha_max * traj.norm_h[step];
        rhs += dt * load * load;
    }
    checks.push(EnergyCheck {
        name: "sup-V bound for V-regular data",
        observed: sup_v2,
        bound: rhs + 1e-12,
    });

    let stepwise_decay = if problem.forcing.is_zero() {
        traj.norm_h.windows(2).all(|p| p[1] <= p[0])
    } else {
        true
    };

    EnergyReport {
        checks,
        stepwise_decay,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, BasisKind};
    use crate::coefficient::{CellFunction, CoeffTerm, FastFunction};
    use approx::assert_abs_diff_eq;
    use ndarray::Array1;

    fn test_spec() -> CoefficientSpec {
        CoefficientSpec::new(
            1.0,
            vec![CoeffTerm {
                g: CellFunction::SinSq {
                    wave: [1, 0],
                    amplitude: 0.5,
                },
                h: FastFunction::TanhSq {
                    direction: [1.0, 0.0],
                },
            }],
            1,
            1,
        )
        .unwrap()
    }

    fn test_problem(n: usize, grid: usize) -> Problem {
        let basis = build_basis(BasisKind::ScalarSine1d, n, grid).unwrap();
        let noise = NoiseModel::from_decay(&basis, 0.5, 3.0).unwrap();
        let mut u0 = Array1::zeros(basis.n_modes);
        u0[0] = 1.0;
        if basis.n_modes > 2 {
            u0[1] = 0.5;
            u0[2] = 0.25;
        }
        Problem {
            basis,
            spec: test_spec(),
            noise,
            t_final: 0.1,
            dt: 1e-3,
            u0,
            v0: Array1::zeros(n),
            forcing: Forcing::Zero,
            snapshot_stride: 10,
        }
    }

    #[test]
    fn constant_coefficient_gives_scaled_identity_friction() {
        let basis = build_basis(BasisKind::ScalarSine1d, 8, 64).unwrap();
        let spec = CoefficientSpec::new(2.5, vec![], 1, 1).unwrap();
        let fast = Array2::zeros((1, basis.grid.n_points()));
        let a = assemble_friction_matrix(&basis, &spec, 0.5, fast.view()).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let expected = if i == j { 2.5 } else { 0.0 };
                assert!((a[[i, j]] - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn friction_eigenvalues_lie_in_the_coefficient_range() {
        // Rayleigh quotients of random probes stay inside [alpha_min,
        // alpha_max] because the basis is orthonormal and alpha is bounded.
        let basis = build_basis(BasisKind::ScalarSine1d, 8, 64).unwrap();
        let spec = test_spec();
        let mut rng = crate::seed::stream_rng(31, 0, 99);
        let fast = Array2::from_shape_fn((1, basis.grid.n_points()), |_| {
            rand::Rng::gen_range(&mut rng, -2.0..2.0)
        });
        let a = assemble_friction_matrix(&basis, &spec, 0.25, fast.view()).unwrap();
        let (lo, hi) = (spec.lower_bound(), spec.upper_bound());
        for _ in 0..50 {
            let probe: Array1<f64> =
                Array1::from_iter((0..8).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)));
            let quad = probe.dot(&a.dot(&probe));
            let norm2 = probe.dot(&probe);
            let rayleigh = quad / norm2;
            assert!(rayleigh >= lo - 1e-10 && rayleigh <= hi + 1e-10, "{rayleigh}");
        }
    }

    #[test]
    fn zero_mean_cell_term_leaves_identity_at_integer_subdivision() {
        // Single-mode basis: e_1^2 = 1 - cos(2 pi x) contains only
        // whole-cycle frequencies, so the sine oscillation at eps = 1/m
        // integrates to zero exactly and the friction matrix collapses to
        // alpha0.
        let sin_spec = |amp: f64| {
            CoefficientSpec::new(
                1.0,
                vec![CoeffTerm {
                    g: CellFunction::Sin {
                        wave: [1, 0],
                        amplitude: amp,
                    },
                    h: FastFunction::InvSq,
                }],
                1,
                1,
            )
            .unwrap()
        };
        let basis = build_basis(BasisKind::ScalarSine1d, 1, 128).unwrap();
        let fast = Array2::zeros((1, basis.grid.n_points()));
        let a = assemble_friction_matrix(&basis, &sin_spec(0.5), 0.125, fast.view()).unwrap();
        assert!((a[[0, 0]] - 1.0).abs() < 1e-12, "diagonal {}", a[[0, 0]]);

        // Multi-mode: diagonal entries stay exact (even frequencies only);
        // parity-odd off-diagonal pairs pick up a genuine O(eps) residual,
        // checked against an independent high-resolution quadrature.
        let basis = build_basis(BasisKind::ScalarSine1d, 4, 128).unwrap();
        let fast = Array2::zeros((1, basis.grid.n_points()));
        let spec = sin_spec(0.5);
        let a = assemble_friction_matrix(&basis, &spec, 0.125, fast.view()).unwrap();
        for i in 0..4 {
            assert!((a[[i, i]] - 1.0).abs() < 1e-12, "diag {i}: {}", a[[i, i]]);
            for j in 0..4 {
                if (i + j) % 2 == 0 && i != j {
                    assert!(a[[i, j]].abs() < 1e-12, "even pair ({i},{j})");
                }
            }
        }
        // Independent oracle for the (0, 1) entry: composite Simpson rule on
        // a much finer grid, straight from the integrand definition.
        let m = 200_000;
        let h = 1.0 / m as f64;
        let integrand = |x: f64| {
            let alpha = spec.eval_alpha_eps(0.125, &[x], &[0.0]).unwrap();
            let e1 = 2.0_f64.sqrt() * (std::f64::consts::PI * x).sin();
            let e2 = 2.0_f64.sqrt() * (2.0 * std::f64::consts::PI * x).sin();
            alpha * e1 * e2
        };
        let mut oracle = integrand(0.0) + integrand(1.0);
        for i in 1..m {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            oracle += w * integrand(i as f64 * h);
        }
        oracle *= h / 3.0;
        // The production grid itself carries a ~5e-8 quadrature residual on
        // this oscillatory integrand (fourth-order boundary term).
        assert!(
            (a[[0, 1]] - oracle).abs() < 1e-7,
            "entry (0,1) {} vs oracle {oracle}",
            a[[0, 1]]
        );
    }

    #[test]
    fn friction_rejects_nan_fast_values() {
        let basis = build_basis(BasisKind::ScalarSine1d, 4, 32).unwrap();
        let spec = test_spec();
        let mut fast = Array2::zeros((1, basis.grid.n_points()));
        fast[[0, 3]] = f64::NAN;
        assert!(matches!(
            assemble_friction_matrix(&basis, &spec, 0.5, fast.view()),
            Err(SimError::NonFinite { .. })
        ));
    }

    #[test]
    fn quadrature_guard_blocks_unresolved_eps() {
        let basis = build_basis(BasisKind::ScalarSine1d, 4, 32).unwrap();
        let spec = test_spec();
        let fast = Array2::zeros((1, basis.grid.n_points()));
        assert!(matches!(
            assemble_friction_matrix(&basis, &spec, 0.01, fast.view()),
            Err(SimError::QuadratureGuard { .. })
        ));
    }

    #[test]
    fn slow_step_single_mode_rational_decay() {
        let basis = build_basis(BasisKind::ScalarSine1d, 1, 8).unwrap();
        let friction = Array2::zeros((1, 1));
        let mut a = Array1::zeros(1);
        a[0] = 1.0;
        let f = Array1::zeros(1);
        let dt = 1e-3;
        let next = slow_step(a.view(), &friction, f.view(), dt, &basis).unwrap();
        let lambda = basis.stiffness_diag[0];
        assert_abs_diff_eq!(next[0], 1.0 / (1.0 + dt * lambda), epsilon = 1e-14);
        // One implicit step approximates exact heat decay to O(dt^2).
        assert!((next[0] - (-lambda * dt).exp()).abs() < dt * dt * lambda * lambda);
    }

    #[test]
    fn slow_step_is_unconditionally_dissipative() {
        let basis = build_basis(BasisKind::ScalarSine1d, 8, 32).unwrap();
        let spec = test_spec();
        let mut rng = crate::seed::stream_rng(32, 0, 99);
        let fast = Array2::from_shape_fn((1, basis.grid.n_points()), |_| {
            rand::Rng::gen_range(&mut rng, -1.0..1.0)
        });
        let friction = assemble_friction_matrix(&basis, &spec, 0.5, fast.view()).unwrap();
        let f = Array1::zeros(8);
        for dt in [1e-4, 1e-2, 1.0, 50.0] {
            let a: Array1<f64> =
                Array1::from_iter((0..8).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)));
            let next = slow_step(a.view(), &friction, f.view(), dt, &basis).unwrap();
            assert!(basis.h_norm(next.view()) <= basis.h_norm(a.view()));
        }
    }

    #[test]
    fn slow_step_fixed_point_matches_direct_solve() {
        // Steady state (Lambda + A) a = f computed by an independent
        // Gaussian elimination; the implicit step must leave it unchanged.
        let basis = build_basis(BasisKind::ScalarSine1d, 6, 32).unwrap();
        let spec = test_spec();
        let fast = Array2::zeros((1, basis.grid.n_points()));
        let friction = assemble_friction_matrix(&basis, &spec, 0.5, fast.view()).unwrap();
        let n = 6;
        let mut m = vec![vec![0.0; n + 1]; n];
        for i in 0..n {
            for j in 0..n {
                m[i][j] = friction[[i, j]];
            }
            m[i][i] += basis.stiffness_diag[i];
            m[i][n] = if i == 0 { 1.0 } else { 0.3 };
        }
        // Plain Gaussian elimination with partial pivoting.
        for col in 0..n {
            let piv = (col..n)
                .max_by(|a, b| m[*a][col].abs().partial_cmp(&m[*b][col].abs()).unwrap())
                .unwrap();
            m.swap(col, piv);
            for row in col + 1..n {
                let factor = m[row][col] / m[col][col];
                for k in col..=n {
                    m[row][k] -= factor * m[col][k];
                }
            }
        }
        let mut steady = vec![0.0; n];
        for row in (0..n).rev() {
            let mut v = m[row][n];
            for k in row + 1..n {
                v -= m[row][k] * steady[k];
            }
            steady[row] = v / m[row][row];
        }
        let steady = Array1::from_vec(steady);
        let mut f = Array1::zeros(n);
        f[0] = 1.0;
        for k in 1..n {
            f[k] = 0.3;
        }
        let next = slow_step(steady.view(), &friction, f.view(), 0.05, &basis).unwrap();
        for (a, b) in next.iter().zip(steady.iter()) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn decoupled_constant_coefficient_recursion() {
        // Constant alpha and zero noise: each mode follows
        // a_k(n) = a_k(0) / (1 + dt (lambda_k + c))^n exactly.
        let basis = build_basis(BasisKind::ScalarSine1d, 4, 16).unwrap();
        let c = 2.0;
        let spec = CoefficientSpec::new(c, vec![], 1, 1).unwrap();
        let noise = NoiseModel::zero(&basis);
        let mut u0 = Array1::zeros(4);
        u0[0] = 1.0;
        u0[2] = -0.5;
        let problem = Problem {
            basis,
            spec,
            noise,
            t_final: 0.02,
            dt: 1e-3,
            u0: u0.clone(),
            v0: Array1::zeros(4),
            forcing: Forcing::Zero,
            snapshot_stride: 0,
        };
        let mut rng = crate::seed::stream_rng(33, 0, 99);
        let traj = simulate_coupled(&problem, 0.1, &mut rng).unwrap();
        let n_steps = problem.n_steps();
        let last = traj.coeffs.last().unwrap();
        for k in 0..4 {
            let lambda = problem.basis.stiffness_diag[k];
            let expected = u0[k] / (1.0 + problem.dt * (lambda + c)).powi(n_steps as i32);
            assert!(
                (last[k] - expected).abs() < 1e-12 * expected.abs() + 1e-15,
                "mode {k}: {} vs {expected}",
                last[k]
            );
        }
    }

    #[test]
    fn coupled_run_is_deterministic_and_dissipative() {
        let problem = test_problem(8, 64);
        let run = || {
            let mut rng = crate::seed::stream_rng(42, 0, crate::seed::TAG_PATH);
            simulate_coupled(&problem, 0.2, &mut rng).unwrap()
        };
        let t1 = run();
        let t2 = run();
        assert_eq!(t1.coeffs.last().unwrap(), t2.coeffs.last().unwrap());
        assert!(t1.norm_h.windows(2).all(|p| p[1] <= p[0]));
        // Snapshots recorded on the stride and at the final step.
        assert!(t1.fast_snapshots.iter().any(|(s, _)| *s == 0));
        assert!(t1
            .fast_snapshots
            .iter()
            .any(|(s, _)| *s == problem.n_steps()));
    }

    #[test]
    fn zero_data_gives_zero_trajectory() {
        let mut problem = test_problem(8, 64);
        problem.u0 = Array1::zeros(8);
        problem.noise = NoiseModel::zero(&problem.basis);
        let mut rng = crate::seed::stream_rng(42, 0, crate::seed::TAG_PATH);
        let traj = simulate_coupled(&problem, 0.2, &mut rng).unwrap();
        assert!(traj.norm_h.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn nan_initial_data_aborts_with_step_index() {
        let mut problem = test_problem(4, 32);
        problem.u0[1] = f64::NAN;
        let mut rng = crate::seed::stream_rng(42, 0, crate::seed::TAG_PATH);
        let err = simulate_coupled(&problem, 0.2, &mut rng);
        assert!(err.is_err());
    }

    #[test]
    fn splitting_error_is_first_order_against_fine_reference() {
        // Deterministic coupled case (zero noise, fast field started on the
        // slow field): compare against a dt/64 reference and check the
        // empirical order over a dt-halving ladder.
        let basis = build_basis(BasisKind::ScalarSine1d, 4, 64).unwrap();
        let noise = NoiseModel::zero(&basis);
        let mut u0 = Array1::zeros(4);
        u0[0] = 1.0;
        u0[1] = 0.4;
        let mk = |dt: f64| Problem {
            basis: basis.clone(),
            spec: test_spec(),
            noise: noise.clone(),
            t_final: 0.1,
            dt,
            u0: u0.clone(),
            v0: u0.clone(),
            forcing: Forcing::Zero,
            snapshot_stride: 0,
        };
        let eps = 0.15;
        let run = |dt: f64| {
            let mut rng = crate::seed::stream_rng(1, 0, 99);
            simulate_coupled(&mk(dt), eps, &mut rng)
                .unwrap()
                .coeffs
                .last()
                .unwrap()
                .clone()
        };
        let reference = run(0.004 / 64.0);
        let err = |dt: f64| {
            let last = run(dt);
            basis.h_norm((&last - &reference).view())
        };
        let e1 = err(0.004);
        let e2 = err(0.002);
        let order = (e1 / e2).log2();
        assert!(order >= 0.9, "observed order {order} (errors {e1:.3e}, {e2:.3e})");
    }

    #[test]
    fn divergence_free_vector_mode_runs_end_to_end() {
        // Full coupled pipeline in the 2d vector mode: 2x2 pointwise
        // marginals, tensor Gauss-Hermite averaging, vector friction
        // assembly. Checks dissipation, determinism, the energy report, and
        // agreement between the averaged run and the coupled run in the
        // noiseless tracking regime.
        let basis = build_basis(BasisKind::DivfreeFourier2d, 2, 16).unwrap();
        let n = basis.n_modes;
        let spec = CoefficientSpec::new(
            1.0,
            vec![
                CoeffTerm {
                    g: CellFunction::SinSq {
                        wave: [1, 0],
                        amplitude: 0.3,
                    },
                    h: FastFunction::TanhSq {
                        direction: [1.0, 0.0],
                    },
                },
                CoeffTerm {
                    g: CellFunction::Cos {
                        wave: [0, 1],
                        amplitude: 0.2,
                    },
                    h: FastFunction::InvSq,
                },
            ],
            2,
            2,
        )
        .unwrap();
        let noise = NoiseModel::from_decay(&basis, 0.2, 3.0).unwrap();
        let mut u0 = Array1::zeros(n);
        u0[0] = 1.0;
        u0[3] = 0.5;
        let problem = Problem {
            basis: basis.clone(),
            spec,
            noise,
            t_final: 0.01,
            dt: 1e-3,
            u0: u0.clone(),
            v0: u0,
            forcing: Forcing::Zero,
            snapshot_stride: 5,
        };
        let eps = 0.55;
        let run = || {
            let mut rng = crate::seed::stream_rng(19, 0, crate::seed::TAG_PATH);
            simulate_coupled(&problem, eps, &mut rng).unwrap()
        };
        let traj = run();
        assert!(traj.norm_h.windows(2).all(|p| p[1] <= p[0]));
        assert_eq!(traj.coeffs.last().unwrap(), run().coeffs.last().unwrap());
        let report = energy_diagnostics(&traj, &problem);
        assert!(report.all_passed(), "{:#?}", report.checks);

        let mut quiet = problem.clone();
        quiet.noise = NoiseModel::zero(&basis);
        let mut rng = crate::seed::stream_rng(19, 1, crate::seed::TAG_PATH);
        let coupled = simulate_coupled(&quiet, eps, &mut rng).unwrap();
        let averaged =
            crate::averaging::solve_averaged(&quiet, crate::averaging::NonlinearMode::Lagged, 12)
                .unwrap();
        let gap = basis.h_norm(
            (coupled.coeffs.last().unwrap() - averaged.coeffs.last().unwrap()).view(),
        );
        // Noiseless tracking start: the two solutions differ by the cell
        // oscillation and splitting only.
        assert!(gap < 5e-3, "gap {gap:.3e}");
    }

    #[test]
    fn splitting_order_holds_along_a_common_noise_ladder() {
        // dt-halving ladder driven by one underlying noise path: increments
        // at the finest level compose exactly into coarse-level OU
        // increments (eta_c = sum lambda^(r-1-i) eta_i), so the only
        // difference between levels is the slow-field freezing.
        let basis = build_basis(BasisKind::ScalarSine1d, 4, 64).unwrap();
        let spec = test_spec();
        let noise = NoiseModel::from_decay(&basis, 0.5, 3.0).unwrap();
        let eps = 0.15;
        let t_final = 0.08;
        let fine_steps = 256usize;
        let dt_fine = t_final / fine_steps as f64;
        let lambda_fine = (-dt_fine / eps).exp();
        let mut u0 = Array1::zeros(4);
        u0[0] = 1.0;
        u0[1] = 0.4;

        // Scaled per-step OU increments at the finest level.
        let mut rng = crate::seed::stream_rng(77, 0, crate::seed::TAG_PATH);
        let mut eta_fine = vec![Array1::<f64>::zeros(4); fine_steps];
        for eta in eta_fine.iter_mut() {
            for k in 0..4 {
                let sd = (0.5 * noise.q()[k] * (1.0 - lambda_fine * lambda_fine)).sqrt();
                let z: f64 = rand::Rng::sample(&mut rng, rand_distr::StandardNormal);
                eta[k] = sd * z;
            }
        }

        let run_level = |ratio: usize| -> Array1<f64> {
            let dt = dt_fine * ratio as f64;
            let lambda = (-dt / eps).exp();
            let steps = fine_steps / ratio;
            let mut assembler = FrictionAssembler::new(&basis, &spec, eps).unwrap();
            let mut a = u0.clone();
            let mut b = u0.clone();
            let f = Array1::zeros(4);
            for m in 0..steps {
                let mut eta = Array1::<f64>::zeros(4);
                for i in 0..ratio {
                    let w = lambda_fine.powi((ratio - 1 - i) as i32);
                    eta = eta + &eta_fine[m * ratio + i] * w;
                }
                for k in 0..4 {
                    b[k] = a[k] + (b[k] - a[k]) * lambda + eta[k];
                }
                let fast = basis.evaluate_on_grid(b.view()).unwrap();
                let friction = assembler.assemble(fast.view()).unwrap();
                a = slow_step(a.view(), &friction, f.view(), dt, &basis).unwrap();
            }
            a
        };

        let reference = run_level(1);
        let err = |ratio: usize| {
            let a = run_level(ratio);
            basis.h_norm((&a - &reference).view())
        };
        let e1 = err(32);
        let e2 = err(16);
        let order = (e1 / e2).log2();
        assert!(
            order >= 0.9,
            "observed stochastic splitting order {order} (errors {e1:.3e}, {e2:.3e})"
        );
    }

    #[test]
    fn energy_report_bounds_hold_with_and_without_forcing() {
        let mut problem = test_problem(8, 64);
        problem.t_final = 0.05;
        let mut rng = crate::seed::stream_rng(42, 0, crate::seed::TAG_PATH);
        let traj = simulate_coupled(&problem, 0.2, &mut rng).unwrap();
        let report = energy_diagnostics(&traj, &problem);
        assert!(report.all_passed(), "{:#?}", report.checks);
        assert!(report.stepwise_decay);

        problem.forcing = Forcing::FirstMode;
        let mut rng = crate::seed::stream_rng(42, 0, crate::seed::TAG_PATH);
        let traj = simulate_coupled(&problem, 0.2, &mut rng).unwrap();
        let report = energy_diagnostics(&traj, &problem);
        assert!(report.all_passed(), "{:#?}", report.checks);
    }
}
