//! Named validation suites with fixed seeds and machine-readable margins.
//!
//! Each check compares an observed value against a threshold; `passed`
//! means `value <= threshold`. Suites: basis, quadrature, ou, energy,
//! averaging, psi.

use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::averaging::{
    gauss_hermite_expectation, resolvent_psi, AveragedSystem, PsiQuad, DEFAULT_GH_NODES,
};
use crate::basis::{build_basis, BasisKind, GalerkinBasis};
use crate::coefficient::{CellFunction, CoeffTerm, CoefficientSpec, FastFunction};
use crate::error::{Result, SimError};
use crate::fastproc::{contraction_check, moment_bound_check, NoiseModel};
use crate::quadrature::{gauss_hermite, gauss_legendre};
use crate::seed::stream_rng;
use crate::slowsolver::{energy_diagnostics, simulate_coupled, Forcing, Problem};

/// One validation outcome; passes when `value <= threshold`.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.value <= self.threshold
    }

    fn new(name: &str, value: f64, threshold: f64) -> Self {
        CheckResult {
            name: name.to_string(),
            value,
            threshold,
            detail: String::new(),
        }
    }

    fn with_detail(mut self, detail: String) -> Self {
        self.detail = detail;
        self
    }
}

/// Outcome of one named suite.
#[derive(Debug, Clone)]
pub struct ValidationSummary {
    pub suite: String,
    pub checks: Vec<CheckResult>,
}

impl ValidationSummary {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed())
    }
}

/// Runs a named suite with fixed seeds.
pub fn validate(suite: &str) -> Result<ValidationSummary> {
    let checks = match suite {
        "basis" => basis_suite()?,
        "quadrature" => quadrature_suite()?,
        "ou" => ou_suite()?,
        "energy" => energy_suite()?,
        "averaging" => averaging_suite()?,
        "psi" => psi_suite()?,
        other => {
            return Err(SimError::InvalidParameter(format!(
                "unknown validation suite '{other}' \
                 (basis | quadrature | ou | energy | averaging | psi)"
            )))
        }
    };
    Ok(ValidationSummary {
        suite: suite.to_string(),
        checks,
    })
}

fn reference_spec() -> CoefficientSpec {
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
    .expect("reference spec is positive")
}

fn gram_deviation(basis: &GalerkinBasis) -> (f64, f64) {
    let mass = basis.mass_matrix();
    let stiff = basis.stiffness_matrix();
    let mut mass_dev = 0.0_f64;
    let mut stiff_dev = 0.0_f64;
    let scale = basis.stiffness_diag.iter().cloned().fold(1.0, f64::max);
    for i in 0..basis.n_modes {
        for j in 0..basis.n_modes {
            let m_target = if i == j { 1.0 } else { 0.0 };
            let s_target = if i == j { basis.stiffness_diag[i] } else { 0.0 };
            mass_dev = mass_dev.max((mass[[i, j]] - m_target).abs());
            stiff_dev = stiff_dev.max((stiff[[i, j]] - s_target).abs() / scale);
        }
    }
    (mass_dev, stiff_dev)
}

fn basis_suite() -> Result<Vec<CheckResult>> {
    let mut checks = Vec::new();
    for (kind, n, grid) in [
        (BasisKind::ScalarSine1d, 8, 32),
        (BasisKind::ScalarSine2d, 4, 16),
        (BasisKind::DivfreeFourier2d, 3, 16),
    ] {
        let basis = build_basis(kind, n, grid)?;
        let (mass_dev, stiff_dev) = gram_deviation(&basis);
        checks.push(CheckResult::new(
            &format!("{kind:?} mass identity deviation"),
            mass_dev,
            1e-12,
        ));
        checks.push(CheckResult::new(
            &format!("{kind:?} stiffness diagonal deviation (relative)"),
            stiff_dev,
            1e-12,
        ));
        // Projection round trip on a fixed pseudo-random coefficient vector.
        let mut rng = stream_rng(1001, 0, crate::seed::TAG_VALIDATE);
        let coeffs: Array1<f64> =
            Array1::from_iter((0..basis.n_modes).map(|_| rng.gen_range(-1.0..1.0)));
        let round = basis.project(basis.evaluate_on_grid(coeffs.view())?.view())?;
        let dev = (&round - &coeffs)
            .iter()
            .fold(0.0_f64, |a, v| a.max(v.abs()));
        checks.push(CheckResult::new(
            &format!("{kind:?} evaluate-project round trip"),
            dev,
            1e-12,
        ));
    }
    // Divergence of every vector mode from its analytic gradient data.
    let basis = build_basis(BasisKind::DivfreeFourier2d, 4, 16)?;
    let mut div_max = 0.0_f64;
    for m in 0..basis.n_modes {
        for g in 0..basis.grid.n_points() {
            let grad = basis.mode_gradient(m, basis.grid.coords(g));
            div_max = div_max.max((grad[0][0] + grad[1][1]).abs());
        }
    }
    checks.push(CheckResult::new(
        "divergence-free modes: max pointwise divergence",
        div_max,
        1e-12,
    ));
    // Dirichlet boundary values of sine modes.
    let basis = build_basis(BasisKind::ScalarSine2d, 4, 16)?;
    let mut boundary_max = 0.0_f64;
    for m in 0..basis.n_modes {
        for x in [[0.0, 0.4], [1.0, 0.6], [0.3, 0.0], [0.8, 1.0]] {
            boundary_max = boundary_max.max(basis.mode_value(m, x)[0].abs());
        }
    }
    checks.push(CheckResult::new(
        "sine modes: max boundary value",
        boundary_max,
        1e-13,
    ));
    Ok(checks)
}

fn hermite_weight_moment(m: usize) -> f64 {
    if m % 2 == 1 {
        return 0.0;
    }
    let mut val = std::f64::consts::PI.sqrt();
    let mut k = 0.5;
    while k < (m as f64 + 1.0) / 2.0 - 0.25 {
        val *= k;
        k += 1.0;
    }
    val
}

fn quadrature_suite() -> Result<Vec<CheckResult>> {
    let mut checks = Vec::new();
    let mut gh_worst = 0.0_f64;
    for n in [2usize, 5, 10, 20] {
        let (x, w) = gauss_hermite(n)?;
        for m in 0..2 * n {
            let quad: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(m as i32)).sum();
            let exact = hermite_weight_moment(m);
            let scale = hermite_weight_moment(m - m % 2).max(1.0);
            gh_worst = gh_worst.max((quad - exact).abs() / scale);
        }
    }
    checks.push(CheckResult::new(
        "Gauss-Hermite degree 2n-1 exactness (relative)",
        gh_worst,
        1e-12,
    ));
    let mut gl_worst = 0.0_f64;
    for n in [2usize, 8, 32, 64] {
        let (x, w) = gauss_legendre(n)?;
        for m in 0..2 * n {
            let quad: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(m as i32)).sum();
            let exact = if m % 2 == 0 { 2.0 / (m as f64 + 1.0) } else { 0.0 };
            gl_worst = gl_worst.max((quad - exact).abs());
        }
    }
    checks.push(CheckResult::new(
        "Gauss-Legendre degree 2n-1 exactness",
        gl_worst,
        1e-12,
    ));
    // Cell averages of the trigonometric family.
    let spec = CoefficientSpec::new(
        1.0,
        vec![
            CoeffTerm {
                g: CellFunction::Sin {
                    wave: [3, 0],
                    amplitude: 0.3,
                },
                h: FastFunction::InvSq,
            },
            CoeffTerm {
                g: CellFunction::Cos {
                    wave: [2, 0],
                    amplitude: 0.3,
                },
                h: FastFunction::InvSq,
            },
            CoeffTerm {
                g: CellFunction::SinSq {
                    wave: [2, 0],
                    amplitude: 0.3,
                },
                h: FastFunction::InvSq,
            },
        ],
        1,
        1,
    )?;
    let means = spec.term_cell_means(spec.exact_cells_per_dim());
    let dev = means[0]
        .abs()
        .max(means[1].abs())
        .max((means[2] - 0.15).abs());
    checks.push(CheckResult::new(
        "trigonometric cell means exactness",
        dev,
        1e-14,
    ));
    Ok(checks)
}

fn ou_suite() -> Result<Vec<CheckResult>> {
    let basis = build_basis(BasisKind::ScalarSine1d, 16, 32)?;
    let noise = NoiseModel::from_decay(&basis, 0.5, 3.0)?;
    let mut checks = Vec::new();

    let eta1: Array1<f64> = Array1::from_iter((0..16).map(|k| (k as f64 * 0.7).sin()));
    let eta2: Array1<f64> = Array1::from_iter((0..16).map(|k| (k as f64 * 0.3).cos()));
    let xi: Array1<f64> = Array1::from_iter((0..16).map(|k| 0.1 * k as f64));
    let eps = 0.05;
    let dev = contraction_check(
        &basis,
        &noise,
        eta1,
        eta2,
        xi.view(),
        10.0 * eps,
        eps,
        eps / 20.0,
        2024,
    )?;
    checks.push(CheckResult::new(
        "pathwise contraction deviation (relative to initial separation)",
        dev,
        1e-12,
    ));

    // One-shot stationary law: dt/eps = 20 is stationary to 1e-9.
    let small = build_basis(BasisKind::ScalarSine1d, 4, 8)?;
    let q = vec![0.8, 0.4, 0.2, 0.1];
    let small_noise = NoiseModel::from_list(&small, q.clone())?;
    let u = Array1::from_vec(vec![0.5, -0.3, 0.2, 0.0]);
    let n_draws = 20_000;
    let mut rng = stream_rng(1002, 0, crate::seed::TAG_VALIDATE);
    let mut worst_sigma = 0.0_f64;
    let mut sums = [0.0; 4];
    let mut sqs = [0.0; 4];
    for _ in 0..n_draws {
        let mut b = Array1::from_vec(vec![3.0, -2.0, 1.0, 0.5]);
        crate::fastproc::ou_update_coeffs(&mut b, u.view(), 20.0, 1.0, &small_noise, &mut rng);
        for k in 0..4 {
            sums[k] += b[k];
            sqs[k] += b[k] * b[k];
        }
    }
    for k in 0..4 {
        let n = n_draws as f64;
        let mean = sums[k] / n;
        let var = sqs[k] / n - mean * mean;
        let sigma2 = 0.5 * q[k];
        let se_mean = (sigma2 / n).sqrt();
        let se_var = sigma2 * (2.0 / n).sqrt();
        worst_sigma = worst_sigma
            .max((mean - u[k]).abs() / se_mean)
            .max((var - sigma2).abs() / se_var);
    }
    checks.push(
        CheckResult::new("stationary one-step law moments (sigmas)", worst_sigma, 3.0)
            .with_detail(format!("{n_draws} draws, 4 modes")),
    );

    let eta = Array1::from_elem(16, 0.5);
    let margin = moment_bound_check(&basis, &noise, eta.view(), xi.view(), 3.0, 200, 2025)?;
    checks.push(CheckResult::new(
        "second-moment bound margin (negated; includes 3 SE allowance)",
        -margin,
        0.0,
    ));
    Ok(checks)
}

fn energy_suite() -> Result<Vec<CheckResult>> {
    let basis = build_basis(BasisKind::ScalarSine1d, 16, 256)?;
    let noise = NoiseModel::from_decay(&basis, 0.5, 3.0)?;
    let mut u0 = Array1::zeros(16);
    u0[0] = 1.0;
    u0[1] = 0.5;
    u0[2] = 0.25;
    let mk = |forcing: Forcing| Problem {
        basis: basis.clone(),
        spec: reference_spec(),
        noise: noise.clone(),
        t_final: 0.1,
        dt: 1e-3,
        u0: u0.clone(),
        v0: Array1::zeros(16),
        forcing,
        snapshot_stride: 0,
    };
    let mut checks = Vec::new();
    let mut sup_v = Vec::new();
    let mut decay_violations = 0usize;
    for (i, eps) in [0.2, 0.1, 0.05].iter().enumerate() {
        let problem = mk(Forcing::Zero);
        let mut rng = stream_rng(1003, i as u64, crate::seed::TAG_VALIDATE);
        let traj = simulate_coupled(&problem, *eps, &mut rng)?;
        if !traj.norm_h.windows(2).all(|p| p[1] <= p[0]) {
            decay_violations += 1;
        }
        sup_v.push(traj.norm_v.iter().cloned().fold(0.0, f64::max));
        let report = energy_diagnostics(&traj, &problem);
        let worst = report
            .checks
            .iter()
            .map(|c| c.observed / c.bound)
            .fold(0.0_f64, f64::max);
        checks.push(CheckResult::new(
            &format!("energy bounds at eps = {eps} (worst observed/bound)"),
            worst,
            1.0,
        ));
    }
    checks.push(CheckResult::new(
        "stepwise H-decay violations over the ladder",
        decay_violations as f64,
        0.0,
    ));
    let vmax = sup_v.iter().cloned().fold(0.0, f64::max);
    let vmin = sup_v.iter().cloned().fold(f64::INFINITY, f64::min);
    checks.push(
        CheckResult::new(
            "epsilon-uniformity of sup-V norms (relative variation)",
            (vmax - vmin) / vmin,
            0.2,
        )
        .with_detail(format!("sup-V by eps: {sup_v:?}")),
    );
    // Forced run still satisfies the exponential bound chain.
    let problem = mk(Forcing::FirstMode);
    let mut rng = stream_rng(1003, 9, crate::seed::TAG_VALIDATE);
    let traj = simulate_coupled(&problem, 0.2, &mut rng)?;
    let report = energy_diagnostics(&traj, &problem);
    let worst = report
        .checks
        .iter()
        .map(|c| c.observed / c.bound)
        .fold(0.0_f64, f64::max);
    checks.push(CheckResult::new(
        "energy bounds with forcing (worst observed/bound)",
        worst,
        1.0,
    ));
    Ok(checks)
}

fn averaging_suite() -> Result<Vec<CheckResult>> {
    let basis = build_basis(BasisKind::ScalarSine1d, 4, 16)?;
    let spec = reference_spec();
    let noise = NoiseModel::from_list(&basis, vec![0.5, 0.25, 0.12, 0.06])?;
    let xi = Array1::from_vec(vec![0.4, -0.1, 0.2, 0.0]);
    let sys = AveragedSystem::new(&basis, &spec, &noise, DEFAULT_GH_NODES)?;
    let xi_field = basis.evaluate_on_grid(xi.view())?;
    let abar = sys.alpha_bar_field(xi_field.view());

    // Whole-field Monte Carlo oracle for the pointwise-marginal reduction.
    let n_draws = 20_000;
    let n_points = basis.grid.n_points();
    let gbar = sys.term_means()[0];
    let mut rng = stream_rng(1004, 0, crate::seed::TAG_VALIDATE);
    let mut sum = vec![0.0; n_points];
    let mut sq = vec![0.0; n_points];
    for _ in 0..n_draws {
        let mut b = xi.clone();
        for k in 0..4 {
            let z: f64 = rng.sample(StandardNormal);
            b[k] += (0.5 * noise.q()[k]).sqrt() * z;
        }
        let field = basis.evaluate_on_grid(b.view())?;
        for g in 0..n_points {
            let a = spec.alpha0 + gbar * spec.terms[0].h.eval(&[field[[0, g]]]);
            sum[g] += a;
            sq[g] += a * a;
        }
    }
    let mut worst_sigma = 0.0_f64;
    for g in 0..n_points {
        let n = n_draws as f64;
        let mean = sum[g] / n;
        let var = (sq[g] / n - mean * mean).max(0.0);
        let se = (var / n).sqrt().max(1e-12);
        worst_sigma = worst_sigma.max((abar[g] - mean).abs() / se);
    }
    let mut checks = vec![CheckResult::new(
        "abar vs whole-field Monte Carlo (sigmas)",
        worst_sigma,
        3.0,
    )];

    // Node-count stability.
    let h = &spec.terms[0].h;
    let mut doubling_dev = 0.0_f64;
    for var in [0.05, 0.3, 1.0] {
        let a = gauss_hermite_expectation(|z| h.eval(z), &[0.4], &[var], DEFAULT_GH_NODES)?;
        let b = gauss_hermite_expectation(|z| h.eval(z), &[0.4], &[var], 2 * DEFAULT_GH_NODES)?;
        doubling_dev = doubling_dev.max((a - b).abs());
    }
    checks.push(CheckResult::new(
        "Gauss-Hermite node-doubling stability",
        doubling_dev,
        1e-8,
    ));

    // Range bounds of the averaged coefficient.
    let mut bound_violation = 0.0_f64;
    for v in abar.iter() {
        bound_violation = bound_violation
            .max(spec.lower_bound() - v)
            .max(v - spec.upper_bound());
    }
    checks.push(CheckResult::new(
        "averaged coefficient stays within [alpha_min, alpha_max]",
        bound_violation,
        0.0,
    ));
    Ok(checks)
}

fn psi_suite() -> Result<Vec<CheckResult>> {
    let basis = build_basis(BasisKind::ScalarSine1d, 4, 64)?;
    let spec = reference_spec();
    let noise = NoiseModel::from_decay(&basis, 0.5, 3.0)?;
    let eta = Array1::from_vec(vec![0.8, 0.1, -0.3, 0.2]);
    let xi = Array1::from_vec(vec![0.4, -0.1, 0.2, 0.1]);
    let mut phi = Array1::zeros(4);
    phi[0] = 1.0;
    let quad = PsiQuad::default();
    let mut checks = Vec::new();

    let constant = CoefficientSpec::new(1.5, vec![], 1, 1)?;
    let zero = resolvent_psi(
        &constant,
        &basis,
        &noise,
        eta.view(),
        xi.view(),
        phi.view(),
        0.2,
        &quad,
    )?;
    checks.push(CheckResult::new(
        "resolvent of a constant coefficient",
        zero.abs(),
        1e-15,
    ));

    let phi2 = Array1::from_vec(vec![0.0, 1.0, -0.2, 0.3]);
    let combo = &phi * 2.0 + &phi2 * (-0.7);
    let run = |p: &Array1<f64>| {
        resolvent_psi(
            &spec,
            &basis,
            &noise,
            eta.view(),
            xi.view(),
            p.view(),
            0.2,
            &quad,
        )
    };
    let lhs = run(&combo)?;
    let rhs = 2.0 * run(&phi)? - 0.7 * run(&phi2)?;
    checks.push(CheckResult::new(
        "resolvent linearity in the test function",
        (lhs - rhs).abs() / rhs.abs().max(1.0),
        1e-12,
    ));

    let mut values = Vec::new();
    for rate in [1.0, 0.1, 0.01] {
        let q = PsiQuad {
            rate_override: Some(rate),
            ..PsiQuad::default()
        };
        values.push(
            resolvent_psi(
                &spec,
                &basis,
                &noise,
                eta.view(),
                xi.view(),
                phi.view(),
                0.2,
                &q,
            )?
            .abs(),
        );
    }
    let max = values.iter().cloned().fold(0.0, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    checks.push(
        CheckResult::new("resolvent rate-ladder spread (max/min)", max / min, 5.0)
            .with_detail(format!("values at rates 1, 0.1, 0.01: {values:?}")),
    );

    let fine = PsiQuad {
        time_nodes: 128,
        ..PsiQuad::default()
    };
    let a = run(&phi)?;
    let b = resolvent_psi(
        &spec,
        &basis,
        &noise,
        eta.view(),
        xi.view(),
        phi.view(),
        0.2,
        &fine,
    )?;
    checks.push(CheckResult::new(
        "resolvent time-quadrature stability (64 vs 128 nodes)",
        (a - b).abs(),
        1e-10,
    ));
    Ok(checks)
}
