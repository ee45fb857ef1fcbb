//! The fast Ornstein-Uhlenbeck field: exact-in-law stepping, stationary
//! marginals, and the contraction / moment diagnostics.
//!
//! The fast field relaxes toward the (frozen) slow field on timescale eps
//! and is driven by trace-class noise diagonal in the Galerkin basis. Per
//! mode the transition over a step of length dt is
//!
//! ```text
//! b_k <- u_k + (b_k - u_k) exp(-dt/eps) + N(0, (q_k/2)(1 - exp(-2 dt/eps)))
//! ```
//!
//! which is the exact conditional law, so the macro step never needs to
//! resolve eps. The stationary per-mode variance is q_k / 2, the value the
//! dynamics produce; the empirical checks in this module confirm it.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::GalerkinBasis;
use crate::error::{Result, SimError};
use crate::seed::{stream_rng, TAG_MOMENT};

/// Trace-class noise covariance, diagonal in the basis modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    q: Vec<f64>,
    trace: f64,
}

impl NoiseModel {
    /// Power-law eigenvalues q_k = q0 |k|^(-p) aligned with the basis modes.
    ///
    /// Requires p > dim so the truncation stands in for a trace-class
    /// operator.
    pub fn from_decay(basis: &GalerkinBasis, q0: f64, decay_p: f64) -> Result<Self> {
        if q0 < 0.0 {
            return Err(SimError::InvalidParameter("q0 must be nonnegative".into()));
        }
        let dim = basis.grid.dim as f64;
        if decay_p <= dim {
            return Err(SimError::InvalidParameter(format!(
                "noise decay exponent p = {decay_p} must exceed the dimension {dim}"
            )));
        }
        let q: Vec<f64> = basis
            .mode_indices
            .iter()
            .map(|w| {
                let k = ((w[0] * w[0] + w[1] * w[1]) as f64).sqrt();
                q0 * k.powf(-decay_p)
            })
            .collect();
        let trace = q.iter().sum();
        Ok(NoiseModel { q, trace })
    }

    /// Explicit per-mode eigenvalue list.
    pub fn from_list(basis: &GalerkinBasis, q: Vec<f64>) -> Result<Self> {
        if q.len() != basis.n_modes {
            return Err(SimError::ShapeMismatch {
                expected: basis.n_modes,
                actual: q.len(),
            });
        }
        if q.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(SimError::InvalidParameter(
                "noise eigenvalues must be finite and nonnegative".into(),
            ));
        }
        let trace = q.iter().sum();
        Ok(NoiseModel { q, trace })
    }

    /// The deterministic zero-noise model.
    pub fn zero(basis: &GalerkinBasis) -> Self {
        NoiseModel {
            q: vec![0.0; basis.n_modes],
            trace: 0.0,
        }
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }
}

/// Fast-field state: modal coefficients plus a grid cache kept in sync.
#[derive(Debug, Clone)]
pub struct FastState {
    pub b: Array1<f64>,
    grid_cache: Array2<f64>,
    pub t: f64,
}

impl FastState {
    pub fn new(basis: &GalerkinBasis, b: Array1<f64>, t: f64) -> Result<Self> {
        let grid_cache = basis.evaluate_on_grid(b.view())?;
        Ok(FastState { b, grid_cache, t })
    }

    /// Fast-field values on the quadrature grid, `(field_dim, n_points)`.
    pub fn grid_values(&self) -> ArrayView2<'_, f64> {
        self.grid_cache.view()
    }
}

/// Per-mode exact OU transition on raw coefficients.
pub(crate) fn ou_update_coeffs(
    b: &mut Array1<f64>,
    u: ArrayView1<'_, f64>,
    dt: f64,
    eps: f64,
    noise: &NoiseModel,
    rng: &mut impl Rng,
) {
    let lambda = (-dt / eps).exp();
    let var_factor = 1.0 - lambda * lambda;
    for (k, bk) in b.iter_mut().enumerate() {
        let sd = (0.5 * noise.q[k] * var_factor).sqrt();
        let draw: f64 = rng.sample(StandardNormal);
        *bk = u[k] + (*bk - u[k]) * lambda + sd * draw;
    }
}

/// Advances the fast state by one step of the exact transition law with the
/// slow field frozen, then refreshes the grid cache.
pub fn ou_exact_step(
    state: &mut FastState,
    basis: &GalerkinBasis,
    u: ArrayView1<'_, f64>,
    dt: f64,
    eps: f64,
    noise: &NoiseModel,
    rng: &mut impl Rng,
) -> Result<()> {
    if dt <= 0.0 || eps <= 0.0 {
        return Err(SimError::InvalidParameter(format!(
            "dt and eps must be positive (dt = {dt}, eps = {eps})"
        )));
    }
    if u.len() != state.b.len() || noise.q.len() != state.b.len() {
        return Err(SimError::ShapeMismatch {
            expected: state.b.len(),
            actual: u.len().min(noise.q.len()),
        });
    }
    ou_update_coeffs(&mut state.b, u, dt, eps, noise, rng);
    state.grid_cache = basis.evaluate_on_grid(state.b.view())?;
    state.t += dt;
    Ok(())
}

/// Pointwise Gaussian marginal of a stationary fast field.
#[derive(Debug, Clone, Copy)]
pub struct Marginal {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    pub dim: usize,
}

/// Mean and covariance of the stationary fast value at one grid point when
/// the slow field is frozen at `xi`:
/// mean = xi(x), cov = sum_k (q_k / 2) e_k(x) (x) e_k(x).
pub fn invariant_marginal(
    basis: &GalerkinBasis,
    noise: &NoiseModel,
    xi: ArrayView1<'_, f64>,
    point: usize,
) -> Marginal {
    let fd = basis.field_dim();
    let tables = basis.eval_tables();
    let mut mean = [0.0; 2];
    let mut cov = [[0.0; 2]; 2];
    for k in 0..basis.n_modes {
        let mut e = [0.0; 2];
        for c in 0..fd {
            e[c] = tables[c][[k, point]];
        }
        for c in 0..fd {
            mean[c] += xi[k] * e[c];
            for d in 0..fd {
                cov[c][d] += 0.5 * noise.q[k] * e[c] * e[d];
            }
        }
    }
    Marginal { mean, cov, dim: fd }
}

/// Pointwise stationary variance field (trace of the marginal covariance at
/// each grid point); the mean plays no role.
pub fn stationary_variance_field(basis: &GalerkinBasis, noise: &NoiseModel) -> Vec<[f64; 4]> {
    let fd = basis.field_dim();
    let tables = basis.eval_tables();
    let n_points = basis.grid.n_points();
    let mut out = vec![[0.0; 4]; n_points];
    for g in 0..n_points {
        for k in 0..basis.n_modes {
            let mut e = [0.0; 2];
            for c in 0..fd {
                e[c] = tables[c][[k, g]];
            }
            for c in 0..fd {
                for d in 0..fd {
                    out[g][c * 2 + d] += 0.5 * noise.q()[k] * e[c] * e[d];
                }
            }
        }
    }
    out
}

/// Drives two fast paths from different starts through identical noise and
/// measures how far the difference norm strays from the exact decay
/// `exp(-t/eps) * ||eta1 - eta2||`.
///
/// Returns the worst deviation over all steps, relative to the initial
/// separation. The noise cancels algebraically in the difference, so the
/// result is rounding-level, not statistical.
#[allow(clippy::too_many_arguments)]
pub fn contraction_check(
    basis: &GalerkinBasis,
    noise: &NoiseModel,
    eta1: Array1<f64>,
    eta2: Array1<f64>,
    xi: ArrayView1<'_, f64>,
    t_final: f64,
    eps: f64,
    dt: f64,
    base_seed: u64,
) -> Result<f64> {
    let sep0 = (&eta1 - &eta2).iter().map(|d| d * d).sum::<f64>().sqrt();
    let mut s1 = FastState::new(basis, eta1, 0.0)?;
    let mut s2 = FastState::new(basis, eta2, 0.0)?;
    let mut rng1 = stream_rng(base_seed, 0, crate::seed::TAG_CONTRACTION);
    let mut rng2 = rng1.clone();
    let steps = (t_final / dt).round() as usize;
    let mut worst: f64 = 0.0;
    for step in 1..=steps {
        ou_exact_step(&mut s1, basis, xi, dt, eps, noise, &mut rng1)?;
        ou_exact_step(&mut s2, basis, xi, dt, eps, noise, &mut rng2)?;
        let diff = (&s1.b - &s2.b).iter().map(|d| d * d).sum::<f64>().sqrt();
        let expected = (-(step as f64) * dt / eps).exp() * sep0;
        let dev = if sep0 > 0.0 {
            (diff - expected).abs() / sep0
        } else {
            diff
        };
        worst = worst.max(dev);
    }
    Ok(worst)
}

/// Ensemble check of the second-moment bound
/// `E ||v(t)||^2 <= ||eta||^2 e^{-t} + ||xi||^2 + tr Q`
/// at the unit timescale (eps = 1).
///
/// Returns the worst-case margin `bound + 3 SE - estimate` over the recorded
/// times; nonnegative means the bound holds within the statistical
/// allowance.
pub fn moment_bound_check(
    basis: &GalerkinBasis,
    noise: &NoiseModel,
    eta: ArrayView1<'_, f64>,
    xi: ArrayView1<'_, f64>,
    t_final: f64,
    n_paths: usize,
    base_seed: u64,
) -> Result<f64> {
    if n_paths < 100 {
        return Err(SimError::InvalidParameter(format!(
            "moment_bound_check needs at least 100 paths, got {n_paths}"
        )));
    }
    if eta.len() != basis.n_modes || xi.len() != basis.n_modes {
        return Err(SimError::ShapeMismatch {
            expected: basis.n_modes,
            actual: eta.len().min(xi.len()),
        });
    }
    let dt = 0.05_f64.min(t_final / 4.0);
    let steps = (t_final / dt).ceil() as usize;
    let mut sum = vec![0.0; steps];
    let mut sumsq = vec![0.0; steps];
    for path in 0..n_paths {
        let mut rng = stream_rng(base_seed, path as u64, TAG_MOMENT);
        let mut b = eta.to_owned();
        for (s, acc) in sum.iter_mut().enumerate() {
            ou_update_coeffs(&mut b, xi, dt, 1.0, noise, &mut rng);
            let norm2: f64 = b.iter().map(|x| x * x).sum();
            *acc += norm2;
            sumsq[s] += norm2 * norm2;
        }
    }
    let eta2: f64 = eta.iter().map(|x| x * x).sum();
    let xi2: f64 = xi.iter().map(|x| x * x).sum();
    let n = n_paths as f64;
    let mut min_margin = f64::INFINITY;
    for s in 0..steps {
        let t = (s + 1) as f64 * dt;
        let mean = sum[s] / n;
        let var = (sumsq[s] / n - mean * mean).max(0.0);
        let se = (var / n).sqrt();
        let bound = eta2 * (-t).exp() + xi2 + noise.trace();
        min_margin = min_margin.min(bound + 3.0 * se - mean);
    }
    Ok(min_margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, BasisKind};
    use approx::assert_abs_diff_eq;
    use ndarray::Array1;

    fn basis_16() -> GalerkinBasis {
        build_basis(BasisKind::ScalarSine1d, 16, 32).unwrap()
    }

    fn decaying_noise(basis: &GalerkinBasis) -> NoiseModel {
        NoiseModel::from_decay(basis, 0.5, 3.0).unwrap()
    }

    #[test]
    fn noise_model_construction_rules() {
        let basis = basis_16();
        assert!(NoiseModel::from_decay(&basis, 0.5, 1.0).is_err());
        assert!(NoiseModel::from_decay(&basis, -0.1, 3.0).is_err());
        let noise = decaying_noise(&basis);
        let expected_trace: f64 = (1..=16).map(|k| 0.5 * (k as f64).powi(-3)).sum();
        assert_abs_diff_eq!(noise.trace(), expected_trace, epsilon = 1e-14);
        assert!(NoiseModel::from_list(&basis, vec![0.1; 3]).is_err());
        assert!(NoiseModel::from_list(&basis, vec![-0.1; 16]).is_err());
        let zero = NoiseModel::zero(&basis);
        assert_eq!(zero.trace(), 0.0);
    }

    #[test]
    fn drift_fixed_point_without_noise() {
        let basis = basis_16();
        let noise = NoiseModel::zero(&basis);
        let u: Array1<f64> = Array1::from_iter((0..16).map(|k| 0.3 * (k as f64 + 1.0)));
        let mut state = FastState::new(&basis, u.clone(), 0.0).unwrap();
        let mut rng = crate::seed::stream_rng(1, 0, 99);
        for _ in 0..20 {
            ou_exact_step(&mut state, &basis, u.view(), 0.37, 0.05, &noise, &mut rng).unwrap();
        }
        for (b, uk) in state.b.iter().zip(u.iter()) {
            assert_eq!(b, uk);
        }
    }

    #[test]
    fn noiseless_decay_matches_exponential() {
        let basis = basis_16();
        let noise = NoiseModel::zero(&basis);
        let b0: Array1<f64> = Array1::from_iter((0..16).map(|k| 1.0 / (k as f64 + 1.0)));
        let mut state = FastState::new(&basis, b0.clone(), 0.0).unwrap();
        let u = Array1::zeros(16);
        let mut rng = crate::seed::stream_rng(2, 0, 99);
        let (dt, eps, steps) = (0.01, 0.1, 100);
        for _ in 0..steps {
            ou_exact_step(&mut state, &basis, u.view(), dt, eps, &noise, &mut rng).unwrap();
        }
        let decay = (-(steps as f64) * dt / eps).exp();
        for (b, b0k) in state.b.iter().zip(b0.iter()) {
            assert!((b - b0k * decay).abs() <= 1e-13 * b0k.abs().max(1e-6));
        }
    }

    #[test]
    fn rejects_nonpositive_step_or_eps() {
        let basis = basis_16();
        let noise = NoiseModel::zero(&basis);
        let mut state = FastState::new(&basis, Array1::zeros(16), 0.0).unwrap();
        let u = Array1::zeros(16);
        let mut rng = crate::seed::stream_rng(3, 0, 99);
        assert!(ou_exact_step(&mut state, &basis, u.view(), 0.0, 1.0, &noise, &mut rng).is_err());
        assert!(ou_exact_step(&mut state, &basis, u.view(), 0.1, -1.0, &noise, &mut rng).is_err());
    }

    #[test]
    fn long_step_reaches_the_stationary_law() {
        // dt/eps = 20: the transition is the stationary law to 1e-9. Over
        // many one-shot draws the per-mode sample mean must approach u_k and
        // the sample variance q_k/2, within three standard errors.
        let basis = build_basis(BasisKind::ScalarSine1d, 4, 8).unwrap();
        let noise = NoiseModel::from_list(&basis, vec![0.8, 0.4, 0.2, 0.1]).unwrap();
        let u: Array1<f64> = Array1::from_vec(vec![0.5, -0.3, 0.2, 0.0]);
        let n_draws = 100_000;
        let mut rng = crate::seed::stream_rng(4, 0, 99);
        let mut sums = [0.0; 4];
        let mut sq = [0.0; 4];
        let b0: Array1<f64> = Array1::from_vec(vec![5.0, -4.0, 3.0, 2.0]);
        for _ in 0..n_draws {
            let mut b = b0.clone();
            ou_update_coeffs(&mut b, u.view(), 20.0, 1.0, &noise, &mut rng);
            for k in 0..4 {
                sums[k] += b[k];
                sq[k] += b[k] * b[k];
            }
        }
        let n = n_draws as f64;
        for k in 0..4 {
            let mean = sums[k] / n;
            let var = sq[k] / n - mean * mean;
            let sigma2 = 0.5 * noise.q()[k];
            let se_mean = (sigma2 / n).sqrt();
            let se_var = sigma2 * (2.0 / n).sqrt();
            assert!(
                (mean - u[k]).abs() <= 3.0 * se_mean,
                "mode {k}: mean {mean} vs {}",
                u[k]
            );
            assert!(
                (var - sigma2).abs() <= 3.0 * se_var,
                "mode {k}: var {var} vs {sigma2}"
            );
        }
    }

    #[test]
    fn splitting_the_step_preserves_the_law() {
        // Two half steps must equal one full step in distribution; compare
        // first and second moments over many draws.
        let basis = build_basis(BasisKind::ScalarSine1d, 2, 4).unwrap();
        let noise = NoiseModel::from_list(&basis, vec![0.6, 0.3]).unwrap();
        let u: Array1<f64> = Array1::from_vec(vec![0.2, -0.1]);
        let b0: Array1<f64> = Array1::from_vec(vec![1.0, -2.0]);
        let (dt, eps) = (0.8, 0.7);
        let n_draws = 100_000;
        let mut rng = crate::seed::stream_rng(5, 0, 99);
        let mut acc = [[0.0; 2]; 2]; // [full/half][moment]
        for variant in 0..2 {
            let mut mean = [0.0; 2];
            let mut var = [0.0; 2];
            for _ in 0..n_draws {
                let mut b = b0.clone();
                if variant == 0 {
                    ou_update_coeffs(&mut b, u.view(), dt, eps, &noise, &mut rng);
                } else {
                    ou_update_coeffs(&mut b, u.view(), dt / 2.0, eps, &noise, &mut rng);
                    ou_update_coeffs(&mut b, u.view(), dt / 2.0, eps, &noise, &mut rng);
                }
                for k in 0..2 {
                    mean[k] += b[k];
                    var[k] += b[k] * b[k];
                }
            }
            acc[variant][0] = mean[0] / n_draws as f64;
            acc[variant][1] = var[0] / n_draws as f64 - acc[variant][0] * acc[variant][0];
        }
        let lambda = (-dt / eps).exp();
        let sigma2 = 0.5 * noise.q()[0] * (1.0 - lambda * lambda);
        let se_mean = (sigma2 / n_draws as f64).sqrt();
        let se_var = sigma2 * (2.0 / n_draws as f64).sqrt();
        assert!((acc[0][0] - acc[1][0]).abs() <= 2.0 * 3.0 * se_mean);
        assert!((acc[0][1] - acc[1][1]).abs() <= 2.0 * 3.0 * se_var);
    }

    #[test]
    fn marginal_of_zero_noise_is_degenerate() {
        let basis = basis_16();
        let noise = NoiseModel::zero(&basis);
        let xi: Array1<f64> = Array1::from_iter((0..16).map(|k| (k as f64).cos()));
        let point = 7;
        let marg = invariant_marginal(&basis, &noise, xi.view(), point);
        let field = basis.evaluate_on_grid(xi.view()).unwrap();
        assert_abs_diff_eq!(marg.mean[0], field[[0, point]], epsilon = 1e-12);
        assert_eq!(marg.cov[0][0], 0.0);
    }

    #[test]
    fn marginal_variance_vanishes_at_a_mode_node() {
        // Grid with 9 points puts a midpoint exactly at x = 0.5, a node of
        // the k = 2 sine mode.
        let basis = build_basis(BasisKind::ScalarSine1d, 2, 9).unwrap();
        let noise = NoiseModel::from_list(&basis, vec![0.0, 1.0]).unwrap();
        let node = 4;
        assert_abs_diff_eq!(basis.grid.coords(node)[0], 0.5, epsilon = 1e-15);
        let marg = invariant_marginal(&basis, &noise, Array1::zeros(2).view(), node);
        assert!(marg.cov[0][0] < 1e-30);
    }

    #[test]
    fn marginal_matches_long_run_time_average() {
        // Stationary run at eps = 1: burn in 10 time units, average over 100.
        let basis = build_basis(BasisKind::ScalarSine1d, 4, 16).unwrap();
        let noise = NoiseModel::from_list(&basis, vec![0.5, 0.25, 0.12, 0.06]).unwrap();
        let xi: Array1<f64> = Array1::from_vec(vec![0.4, 0.0, -0.2, 0.1]);
        let point = 5;
        let marg = invariant_marginal(&basis, &noise, xi.view(), point);

        let dt = 0.02;
        let burn = (10.0 / dt) as usize;
        let span = (100.0 / dt) as usize;
        let mut state = FastState::new(&basis, xi.clone(), 0.0).unwrap();
        let mut rng = crate::seed::stream_rng(6, 0, crate::seed::TAG_STATIONARY);
        for _ in 0..burn {
            ou_exact_step(&mut state, &basis, xi.view(), dt, 1.0, &noise, &mut rng).unwrap();
        }
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..span {
            ou_exact_step(&mut state, &basis, xi.view(), dt, 1.0, &noise, &mut rng).unwrap();
            let v = state.grid_values()[[0, point]];
            sum += v;
            sq += v * v;
        }
        let n = span as f64;
        let mean = sum / n;
        let var = sq / n - mean * mean;
        // Effective sample count for variance of an OU functional with unit
        // correlation time over a 100-unit window.
        let n_eff = 100.0_f64;
        let se_var = marg.cov[0][0] * (2.0 / n_eff).sqrt();
        let se_mean = (marg.cov[0][0] * 2.0 / n_eff).sqrt();
        assert!((mean - marg.mean[0]).abs() <= 3.0 * se_mean);
        assert!((var - marg.cov[0][0]).abs() <= 3.0 * se_var);
    }

    #[test]
    fn contraction_identity_holds_to_rounding() {
        let basis = basis_16();
        let noise = decaying_noise(&basis);
        let eta1: Array1<f64> = Array1::from_iter((0..16).map(|k| (k as f64 * 0.7).sin()));
        let eta2: Array1<f64> = Array1::from_iter((0..16).map(|k| (k as f64 * 0.3).cos()));
        let xi: Array1<f64> = Array1::from_iter((0..16).map(|k| 0.1 * k as f64));
        let eps = 0.05;
        let dev = contraction_check(
            &basis,
            &noise,
            eta1.clone(),
            eta2.clone(),
            xi.view(),
            10.0 * eps,
            eps,
            eps / 20.0,
            42,
        )
        .unwrap();
        assert!(dev < 1e-12, "deviation {dev:.3e}");
        // Identical starts stay identical bitwise.
        let dev0 = contraction_check(
            &basis,
            &noise,
            eta1.clone(),
            eta1.clone(),
            xi.view(),
            0.5,
            eps,
            eps / 20.0,
            42,
        )
        .unwrap();
        assert_eq!(dev0, 0.0);
    }

    #[test]
    fn difference_norm_after_ten_relaxation_times() {
        let basis = basis_16();
        let noise = decaying_noise(&basis);
        let eta1: Array1<f64> = Array1::from_elem(16, 1.0);
        let eta2 = Array1::zeros(16);
        let xi = Array1::from_elem(16, 0.2);
        let eps = 0.1;
        let dt = eps / 10.0;
        let mut s1 = FastState::new(&basis, eta1.clone(), 0.0).unwrap();
        let mut s2 = FastState::new(&basis, eta2.clone(), 0.0).unwrap();
        let mut rng1 = crate::seed::stream_rng(7, 0, crate::seed::TAG_CONTRACTION);
        let mut rng2 = rng1.clone();
        for _ in 0..100 {
            ou_exact_step(&mut s1, &basis, xi.view(), dt, eps, &noise, &mut rng1).unwrap();
            ou_exact_step(&mut s2, &basis, xi.view(), dt, eps, &noise, &mut rng2).unwrap();
        }
        let sep0 = (&eta1 - &eta2).iter().map(|d| d * d).sum::<f64>().sqrt();
        let diff = (&s1.b - &s2.b).iter().map(|d| d * d).sum::<f64>().sqrt();
        assert!(diff <= (-10.0_f64).exp() * sep0 * (1.0 + 1e-9));
    }

    #[test]
    fn moment_bound_margins() {
        let basis = build_basis(BasisKind::ScalarSine1d, 8, 16).unwrap();
        // Deterministic decay: margin strictly positive.
        let zero_noise = NoiseModel::zero(&basis);
        let eta: Array1<f64> = Array1::from_elem(8, 0.5);
        let zero = Array1::zeros(8);
        let margin =
            moment_bound_check(&basis, &zero_noise, eta.view(), zero.view(), 3.0, 200, 11)
                .unwrap();
        assert!(margin > 0.0);
        // Stationary point eta = xi without noise.
        let margin =
            moment_bound_check(&basis, &zero_noise, eta.view(), eta.view(), 3.0, 200, 11)
                .unwrap();
        assert!(margin > 0.0);
        // Generic noisy case: the 3 SE allowance keeps the margin nonnegative.
        let noise = NoiseModel::from_decay(&basis, 0.5, 3.0).unwrap();
        let xi: Array1<f64> = Array1::from_iter((0..8).map(|k| 0.3 - 0.05 * k as f64));
        let margin =
            moment_bound_check(&basis, &noise, eta.view(), xi.view(), 5.0, 1000, 11).unwrap();
        assert!(margin >= 0.0, "margin {margin}");
        // Path-count precondition.
        assert!(moment_bound_check(&basis, &noise, eta.view(), xi.view(), 5.0, 50, 11).is_err());
    }

    #[test]
    fn stationary_start_stays_stationary() {
        let basis = build_basis(BasisKind::ScalarSine1d, 4, 8).unwrap();
        let noise = NoiseModel::from_list(&basis, vec![0.4, 0.2, 0.1, 0.05]).unwrap();
        let xi: Array1<f64> = Array1::from_vec(vec![0.3, -0.2, 0.1, 0.0]);
        let n_paths = 20_000;
        let mut sums = [0.0; 4];
        let mut sq = [0.0; 4];
        for path in 0..n_paths {
            let mut rng = crate::seed::stream_rng(8, path as u64, 99);
            let mut b = xi.clone();
            // Draw the initial condition from the stationary law ...
            for k in 0..4 {
                let sd = (0.5 * noise.q()[k]).sqrt();
                let z: f64 = rng.sample(StandardNormal);
                b[k] += sd * z;
            }
            // ... and evolve for a while.
            for _ in 0..10 {
                ou_update_coeffs(&mut b, xi.view(), 0.3, 1.0, &noise, &mut rng);
            }
            for k in 0..4 {
                sums[k] += b[k];
                sq[k] += b[k] * b[k];
            }
        }
        let n = n_paths as f64;
        for k in 0..4 {
            let mean = sums[k] / n;
            let var = sq[k] / n - mean * mean;
            let sigma2 = 0.5 * noise.q()[k];
            assert!((mean - xi[k]).abs() <= 3.0 * (sigma2 / n).sqrt());
            assert!((var - sigma2).abs() <= 3.0 * sigma2 * (2.0 / n).sqrt());
        }
    }

    #[test]
    fn identical_seeds_give_bit_identical_paths() {
        let basis = basis_16();
        let noise = decaying_noise(&basis);
        let u: Array1<f64> = Array1::from_elem(16, 0.1);
        let run = || {
            let mut state = FastState::new(&basis, Array1::zeros(16), 0.0).unwrap();
            let mut rng = crate::seed::stream_rng(9, 3, crate::seed::TAG_PATH);
            for _ in 0..50 {
                ou_exact_step(&mut state, &basis, u.view(), 0.01, 0.05, &noise, &mut rng)
                    .unwrap();
            }
            state.b
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }
}
