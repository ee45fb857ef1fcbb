//! The separable friction coefficient alpha(y, v) and its scale behavior.
//!
//! The concrete family is
//!
//! ```text
//! alpha(y, v) = alpha0 + sum_j g_j(y) h_j(v)
//! ```
//!
//! with trigonometric cell functions g_j on the unit periodic cell and
//! bounded C^1 fast-value profiles h_j in {1/(1+|v|^2), tanh^2(v.d)}. The
//! family has closed-form sup and Lipschitz bounds, so positivity and the
//! uniform C^1 condition are checked at construction instead of being
//! assumed.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::basis::GalerkinBasis;
use crate::error::{Result, SimError};

/// Componentwise fractional part; maps any real point into the half-open
/// unit cell with frac(1.0) = 0.0 exactly.
pub fn frac(t: f64) -> f64 {
    t - t.floor()
}

/// Periodic trigonometric cell function on the unit cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CellFunction {
    /// amplitude * sin(2 pi w.y)
    Sin { wave: [i32; 2], amplitude: f64 },
    /// amplitude * cos(2 pi w.y)
    Cos { wave: [i32; 2], amplitude: f64 },
    /// amplitude * sin^2(2 pi w.y)
    SinSq { wave: [i32; 2], amplitude: f64 },
    /// amplitude * prod_c sin(2 pi w_c y_c) over the nonzero wave components
    SinProd { wave: [i32; 2], amplitude: f64 },
}

impl CellFunction {
    pub fn eval(&self, y: [f64; 2]) -> f64 {
        use std::f64::consts::PI;
        match self {
            CellFunction::Sin { wave, amplitude } => {
                amplitude * (2.0 * PI * (wave[0] as f64 * y[0] + wave[1] as f64 * y[1])).sin()
            }
            CellFunction::Cos { wave, amplitude } => {
                amplitude * (2.0 * PI * (wave[0] as f64 * y[0] + wave[1] as f64 * y[1])).cos()
            }
            CellFunction::SinSq { wave, amplitude } => {
                let s = (2.0 * PI * (wave[0] as f64 * y[0] + wave[1] as f64 * y[1])).sin();
                amplitude * s * s
            }
            CellFunction::SinProd { wave, amplitude } => {
                let mut v = *amplitude;
                for c in 0..2 {
                    if wave[c] != 0 {
                        v *= (2.0 * PI * wave[c] as f64 * y[c]).sin();
                    }
                }
                v
            }
        }
    }

    /// Sup-norm over the cell (attained; |sin|, |cos| <= 1).
    pub fn sup(&self) -> f64 {
        match self {
            CellFunction::Sin { amplitude, .. }
            | CellFunction::Cos { amplitude, .. }
            | CellFunction::SinSq { amplitude, .. }
            | CellFunction::SinProd { amplitude, .. } => amplitude.abs(),
        }
    }

    /// Largest per-axis frequency in cycles per cell; controls how many
    /// quadrature cells make the mean exact.
    pub fn max_axis_frequency(&self) -> i32 {
        match self {
            CellFunction::Sin { wave, .. }
            | CellFunction::Cos { wave, .. }
            | CellFunction::SinProd { wave, .. } => wave[0].abs().max(wave[1].abs()),
            // sin^2 doubles the frequency.
            CellFunction::SinSq { wave, .. } => 2 * wave[0].abs().max(wave[1].abs()),
        }
    }
}

/// Largest gradient norm of 1/(1+s^2)-type profiles: 3 sqrt(3) / 8.
const INV_SQ_LIP: f64 = 0.649_519_052_838_329;
/// Largest derivative of tanh^2: 4 sqrt(3) / 9.
const TANH_SQ_LIP: f64 = 0.769_800_358_919_501;

/// Bounded C^1 profile of the fast value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FastFunction {
    /// 1 / (1 + |v|^2)
    InvSq,
    /// tanh^2(v . d) with d normalized to a unit vector
    TanhSq { direction: [f64; 2] },
}

impl FastFunction {
    pub fn eval(&self, v: &[f64]) -> f64 {
        match self {
            FastFunction::InvSq => {
                let n2: f64 = v.iter().map(|x| x * x).sum();
                1.0 / (1.0 + n2)
            }
            FastFunction::TanhSq { direction } => {
                let s: f64 = v.iter().zip(direction).map(|(a, b)| a * b).sum();
                let t = s.tanh();
                t * t
            }
        }
    }

    pub fn sup(&self) -> f64 {
        1.0
    }

    /// Closed-form bound on the gradient norm.
    pub fn lipschitz(&self) -> f64 {
        match self {
            FastFunction::InvSq => INV_SQ_LIP,
            FastFunction::TanhSq { .. } => TANH_SQ_LIP,
        }
    }
}

/// One separable term g(y) h(v).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffTerm {
    pub g: CellFunction,
    pub h: FastFunction,
}

/// The friction coefficient alpha(y, v) = alpha0 + sum_j g_j(y) h_j(v).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSpec {
    pub alpha0: f64,
    pub terms: Vec<CoeffTerm>,
    /// Dimension of the periodic cell variable y.
    pub y_dim: usize,
    /// Dimension of the fast value v (1 scalar, 2 vector).
    pub v_dim: usize,
}

impl CoefficientSpec {
    /// Validates positivity and normalizes term directions.
    pub fn new(
        alpha0: f64,
        mut terms: Vec<CoeffTerm>,
        y_dim: usize,
        v_dim: usize,
    ) -> Result<Self> {
        if !(1..=2).contains(&y_dim) || !(1..=2).contains(&v_dim) {
            return Err(SimError::InvalidParameter(
                "y_dim and v_dim must be 1 or 2".into(),
            ));
        }
        if alpha0 <= 0.0 {
            return Err(SimError::InvalidParameter("alpha0 must be positive".into()));
        }
        for term in &mut terms {
            if let FastFunction::TanhSq { direction } = &mut term.h {
                let norm: f64 = direction[..v_dim].iter().map(|d| d * d).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(SimError::InvalidParameter(
                        "tanh_sq direction must be nonzero".into(),
                    ));
                }
                for (c, d) in direction.iter_mut().enumerate() {
                    *d = if c < v_dim { *d / norm } else { 0.0 };
                }
            }
            let (CellFunction::Sin { wave, .. }
            | CellFunction::Cos { wave, .. }
            | CellFunction::SinSq { wave, .. }
            | CellFunction::SinProd { wave, .. }) = &term.g;
            if y_dim == 1 && wave[1] != 0 {
                return Err(SimError::InvalidParameter(
                    "wave_vector has a second component but y_dim = 1".into(),
                ));
            }
        }
        let spec = CoefficientSpec {
            alpha0,
            terms,
            y_dim,
            v_dim,
        };
        if spec.positivity_margin() <= 0.0 {
            return Err(SimError::InvalidParameter(format!(
                "coefficient is not uniformly positive: alpha0 = {alpha0}, \
                 worst-case term mass = {}",
                alpha0 - spec.positivity_margin()
            )));
        }
        Ok(spec)
    }

    /// alpha0 minus the worst-case total term magnitude; positive by
    /// construction.
    pub fn positivity_margin(&self) -> f64 {
        self.alpha0
            - self
                .terms
                .iter()
                .map(|t| t.g.sup() * t.h.sup())
                .sum::<f64>()
    }

    /// Uniform upper bound on alpha.
    pub fn upper_bound(&self) -> f64 {
        self.alpha0
            + self
                .terms
                .iter()
                .map(|t| t.g.sup() * t.h.sup())
                .sum::<f64>()
    }

    /// Uniform lower bound on alpha (the positivity margin).
    pub fn lower_bound(&self) -> f64 {
        self.positivity_margin()
    }

    /// Lipschitz constant of v -> alpha(y, v), uniform in y.
    pub fn lipschitz_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.g.sup() * t.h.lipschitz())
            .sum()
    }

    /// alpha(y, v); y is wrapped into the unit cell by periodicity.
    pub fn eval_alpha(&self, y: &[f64], v: &[f64]) -> f64 {
        let yy = [frac(y[0]), if self.y_dim > 1 { frac(y[1]) } else { 0.0 }];
        let mut val = self.alpha0;
        for term in &self.terms {
            val += term.g.eval(yy) * term.h.eval(v);
        }
        val
    }

    /// alpha(x / eps, v), the rescaled coefficient.
    pub fn eval_alpha_eps(&self, eps: f64, x: &[f64], v: &[f64]) -> Result<f64> {
        if eps <= 0.0 {
            return Err(SimError::InvalidParameter(format!(
                "epsilon must be positive, got {eps}"
            )));
        }
        let y: Vec<f64> = x.iter().map(|xi| xi / eps).collect();
        Ok(self.eval_alpha(&y, v))
    }

    /// True when the coefficient actually varies on the periodic cell; a
    /// term-free spec is constant in y and needs no oscillation resolution.
    pub fn has_cell_structure(&self) -> bool {
        !self.terms.is_empty()
    }

    /// Cell values g_j(frac(x/eps)) for every term at every grid point,
    /// shape (n_terms, n_points). Precomputing these makes per-step friction
    /// assembly independent of the cell-function cost.
    pub fn cell_values_on_grid(&self, basis: &GalerkinBasis, eps: f64) -> Result<ndarray::Array2<f64>> {
        self.check_guard(basis, eps)?;
        let n_points = basis.grid.n_points();
        let mut vals = ndarray::Array2::zeros((self.terms.len(), n_points));
        for g in 0..n_points {
            let x = basis.grid.coords(g);
            let y = [frac(x[0] / eps), frac(x[1] / eps)];
            for (j, term) in self.terms.iter().enumerate() {
                vals[[j, g]] = term.g.eval(y);
            }
        }
        Ok(vals)
    }

    /// Midpoint approximation of the cell integral of alpha(., v); exact for
    /// the trigonometric family once `cells_per_dim` exceeds the largest
    /// frequency.
    pub fn cell_average(&self, v: &[f64], cells_per_dim: usize) -> f64 {
        assert!(cells_per_dim >= 4, "cell_average needs at least 4 cells per dim");
        let means = self.term_cell_means(cells_per_dim);
        let mut val = self.alpha0;
        for (term, gbar) in self.terms.iter().zip(&means) {
            val += gbar * term.h.eval(v);
        }
        val
    }

    /// Midpoint cell mean of each g_j.
    pub fn term_cell_means(&self, cells_per_dim: usize) -> Vec<f64> {
        let n = cells_per_dim;
        let h = 1.0 / n as f64;
        self.terms
            .iter()
            .map(|term| {
                let mut sum = 0.0;
                if self.y_dim == 1 {
                    for i in 0..n {
                        sum += term.g.eval([(i as f64 + 0.5) * h, 0.0]);
                    }
                    sum * h
                } else {
                    for i in 0..n {
                        for j in 0..n {
                            sum += term.g.eval([(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]);
                        }
                    }
                    sum * h * h
                }
            })
            .collect()
    }

    /// Oscillation-resolution guard for integrals of alpha(x/eps, .):
    /// requires at least 8 grid points per eps-cell per dimension, and is
    /// skipped when the coefficient has no cell structure.
    pub fn check_guard(&self, basis: &GalerkinBasis, eps: f64) -> Result<()> {
        if !self.has_cell_structure() {
            if eps <= 0.0 {
                return Err(SimError::InvalidParameter(format!(
                    "epsilon must be positive, got {eps}"
                )));
            }
            return Ok(());
        }
        quadrature_guard(basis, eps)
    }

    /// Cell resolution that makes `term_cell_means` exact for this spec.
    pub fn exact_cells_per_dim(&self) -> usize {
        let max_freq = self
            .terms
            .iter()
            .map(|t| t.g.max_axis_frequency())
            .max()
            .unwrap_or(0)
            .max(0) as usize;
        (2 * max_freq + 2).max(8)
    }
}

fn quadrature_guard(basis: &GalerkinBasis, eps: f64) -> Result<()> {
    if eps <= 0.0 {
        return Err(SimError::InvalidParameter(format!(
            "epsilon must be positive, got {eps}"
        )));
    }
    // Skip the guard when the coefficient actually oscillates on scale eps;
    // eps >= 1 means the whole domain is one cell.
    if eps >= 1.0 {
        return Ok(());
    }
    let points_per_cell = basis.grid.points_per_dim as f64 * eps;
    const REQUIRED: f64 = 8.0;
    if points_per_cell < REQUIRED * (1.0 - 1e-12) {
        return Err(SimError::QuadratureGuard {
            epsilon: eps,
            points_per_cell,
            required: REQUIRED,
        });
    }
    Ok(())
}

/// Public form of the oscillation-resolution guard.
pub fn check_quadrature_guard(basis: &GalerkinBasis, eps: f64) -> Result<()> {
    quadrature_guard(basis, eps)
}

/// Two-scale convergence probe on raw grid fields:
/// I(eps) = integral of (alpha(x/eps, z(x)) - cellavg alpha(., z(x))) w(x) phi(x) dx.
///
/// `z` has `v_dim` rows, `w` and `phi` have `field_dim` rows; the w-phi
/// product is the componentwise dot.
pub fn two_scale_test_on_fields(
    spec: &CoefficientSpec,
    basis: &GalerkinBasis,
    z: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    phi: ArrayView2<'_, f64>,
    eps_list: &[f64],
) -> Result<Vec<f64>> {
    let n_points = basis.grid.n_points();
    let check_shape = |name: &str, nrows: usize, ncols: usize, rows: usize| -> Result<()> {
        if nrows != rows || ncols != n_points {
            return Err(SimError::InvalidParameter(format!(
                "two_scale_test: field {name} must be ({rows}, {n_points})"
            )));
        }
        Ok(())
    };
    check_shape("z", z.nrows(), z.ncols(), spec.v_dim)?;
    check_shape("w", w.nrows(), w.ncols(), basis.field_dim())?;
    check_shape("phi", phi.nrows(), phi.ncols(), basis.field_dim())?;
    let cells = spec.exact_cells_per_dim();
    let means = spec.term_cell_means(cells);
    let mut out = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        spec.check_guard(basis, eps)?;
        let mut acc = 0.0;
        for g in 0..n_points {
            let x = basis.grid.coords(g);
            let y = [frac(x[0] / eps), frac(x[1] / eps)];
            let zv: Vec<f64> = (0..spec.v_dim).map(|c| z[[c, g]]).collect();
            let mut fluct = 0.0;
            for (term, gbar) in spec.terms.iter().zip(&means) {
                fluct += (term.g.eval(y) - gbar) * term.h.eval(&zv);
            }
            let wphi: f64 = (0..basis.field_dim()).map(|c| w[[c, g]] * phi[[c, g]]).sum();
            acc += fluct * wphi;
        }
        out.push(acc * basis.grid.weight);
    }
    Ok(out)
}

/// Two-scale convergence probe with the test function given in the basis.
pub fn two_scale_test(
    spec: &CoefficientSpec,
    basis: &GalerkinBasis,
    z: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    phi_coeffs: ndarray::ArrayView1<'_, f64>,
    eps_list: &[f64],
) -> Result<Vec<f64>> {
    let phi = basis.evaluate_on_grid(phi_coeffs)?;
    two_scale_test_on_fields(spec, basis, z, w, phi.view(), eps_list)
}
