//! Orthonormal Galerkin bases with grid quadrature.
//!
//! Three families are provided on the unit box:
//! - `scalar_sine_1d`: e_k(x) = sqrt(2) sin(k pi x), Dirichlet on (0,1);
//! - `scalar_sine_2d`: tensor sine modes, Dirichlet on (0,1)^2;
//! - `divfree_fourier_2d`: real Fourier vector modes sin/cos(2 pi k.x) d_k
//!   with d_k = k_perp/|k|, periodic and pointwise divergence-free.
//!
//! All modes are orthonormal in L^2 and diagonalize the Dirichlet/gradient
//! form, with eigenvalue pi^2 |k|^2 (sine) or 4 pi^2 |k|^2 (Fourier). The
//! quadrature grid is a uniform tensor midpoint rule, which integrates every
//! product of retained modes exactly (up to rounding) as long as the
//! anti-aliasing floor on the grid size holds, so mass and stiffness checks
//! resolve to machine precision rather than discretization error.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Basis family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisKind {
    #[serde(rename = "scalar_sine_1d")]
    ScalarSine1d,
    #[serde(rename = "scalar_sine_2d")]
    ScalarSine2d,
    #[serde(rename = "divfree_fourier_2d")]
    DivfreeFourier2d,
}

impl BasisKind {
    /// Spatial dimension of the domain.
    pub fn dim(self) -> usize {
        match self {
            BasisKind::ScalarSine1d => 1,
            BasisKind::ScalarSine2d | BasisKind::DivfreeFourier2d => 2,
        }
    }

    /// Number of components of the represented field.
    pub fn field_dim(self) -> usize {
        match self {
            BasisKind::ScalarSine1d | BasisKind::ScalarSine2d => 1,
            BasisKind::DivfreeFourier2d => 2,
        }
    }

    /// Minimal grid points per dimension for a given mode count per
    /// dimension. Products of sine modes stay below the midpoint rule's
    /// aliasing threshold at 2n; periodic Fourier products hit it exactly,
    /// so that family needs one extra point.
    pub fn grid_floor(self, n_per_dim: usize) -> usize {
        match self {
            BasisKind::ScalarSine1d | BasisKind::ScalarSine2d => 2 * n_per_dim,
            BasisKind::DivfreeFourier2d => 2 * n_per_dim + 1,
        }
    }
}

/// Uniform tensor midpoint grid on the unit box with equal weights.
#[derive(Debug, Clone)]
pub struct Grid {
    pub dim: usize,
    pub points_per_dim: usize,
    /// Midpoint coordinates shared by every axis.
    pub axis: Vec<f64>,
    /// Quadrature weight of each grid point, h^dim.
    pub weight: f64,
}

impl Grid {
    fn new(dim: usize, points_per_dim: usize) -> Self {
        let h = 1.0 / points_per_dim as f64;
        let axis = (0..points_per_dim).map(|i| (i as f64 + 0.5) * h).collect();
        Grid {
            dim,
            points_per_dim,
            axis,
            weight: h.powi(dim as i32),
        }
    }

    /// Total number of grid points.
    pub fn n_points(&self) -> usize {
        self.points_per_dim.pow(self.dim as u32)
    }

    /// Coordinates of the flattened point index (row-major; unused
    /// coordinates are zero).
    pub fn coords(&self, idx: usize) -> [f64; 2] {
        match self.dim {
            1 => [self.axis[idx], 0.0],
            _ => {
                let n = self.points_per_dim;
                [self.axis[idx / n], self.axis[idx % n]]
            }
        }
    }

    /// Grid quadrature of a scalar sample vector.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weight * values.iter().sum::<f64>()
    }

    /// Discrete L^2 norm of a (possibly multi-component) grid field.
    pub fn field_norm(&self, field: ArrayView2<'_, f64>) -> f64 {
        (self.weight * field.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Phase {
    Sin,
    Cos,
}

/// Full description of one basis mode.
#[derive(Debug, Clone)]
pub(crate) struct ModeSpec {
    pub wave: [i32; 2],
    pub phase: Phase,
    /// Unit direction of a vector mode; `[1, 0]` placeholder for scalars.
    pub dir: [f64; 2],
}

/// An orthonormal Galerkin basis with precomputed grid evaluation tables.
#[derive(Debug, Clone)]
pub struct GalerkinBasis {
    pub kind: BasisKind,
    pub n_per_dim: usize,
    pub n_modes: usize,
    /// Integer wave-vector of each mode (second entry zero in 1d).
    pub mode_indices: Vec<[i32; 2]>,
    /// Gradient-form eigenvalue of each mode.
    pub stiffness_diag: Vec<f64>,
    pub grid: Grid,
    pub(crate) modes: Vec<ModeSpec>,
    /// Mode values at grid points, one table per field component,
    /// shape (n_modes, n_points).
    eval: Vec<Array2<f64>>,
}

/// Builds a basis of `n_per_dim` modes per dimension evaluated on a
/// `grid_points_per_dim`-per-dimension midpoint grid.
pub fn build_basis(
    kind: BasisKind,
    n_per_dim: usize,
    grid_points_per_dim: usize,
) -> Result<GalerkinBasis> {
    if n_per_dim == 0 {
        return Err(SimError::InvalidParameter(
            "n_per_dim must be positive".into(),
        ));
    }
    let floor = kind.grid_floor(n_per_dim);
    if grid_points_per_dim < floor {
        return Err(SimError::InvalidParameter(format!(
            "grid_points_per_dim = {grid_points_per_dim} is below the anti-aliasing floor \
             {floor} for {kind:?} with n_per_dim = {n_per_dim}"
        )));
    }

    let modes = enumerate_modes(kind, n_per_dim);
    let grid = Grid::new(kind.dim(), grid_points_per_dim);
    let n_modes = modes.len();
    let n_points = grid.n_points();
    let field_dim = kind.field_dim();

    let mut eval = vec![Array2::zeros((n_modes, n_points)); field_dim];
    for (m, mode) in modes.iter().enumerate() {
        for g in 0..n_points {
            let value = mode_value_at(kind, mode, grid.coords(g));
            for (c, table) in eval.iter_mut().enumerate() {
                table[[m, g]] = value[c];
            }
        }
    }

    Ok(GalerkinBasis {
        kind,
        n_per_dim,
        n_modes,
        mode_indices: modes.iter().map(|m| m.wave).collect(),
        stiffness_diag: modes.iter().map(|m| stiffness_of(kind, m.wave)).collect(),
        grid,
        modes,
        eval,
    })
}

fn enumerate_modes(kind: BasisKind, n: usize) -> Vec<ModeSpec> {
    let mut modes = Vec::new();
    match kind {
        BasisKind::ScalarSine1d => {
            for k in 1..=n as i32 {
                modes.push(ModeSpec {
                    wave: [k, 0],
                    phase: Phase::Sin,
                    dir: [1.0, 0.0],
                });
            }
        }
        BasisKind::ScalarSine2d => {
            let mut waves: Vec<[i32; 2]> = Vec::new();
            for m in 1..=n as i32 {
                for l in 1..=n as i32 {
                    waves.push([m, l]);
                }
            }
            sort_waves(&mut waves);
            for wave in waves {
                modes.push(ModeSpec {
                    wave,
                    phase: Phase::Sin,
                    dir: [1.0, 0.0],
                });
            }
        }
        BasisKind::DivfreeFourier2d => {
            // One wave-vector per {k, -k} pair: sin flips sign and cos is
            // even under k -> -k, so the half-space below carries all the
            // independent modes.
            let nn = n as i32;
            let mut waves: Vec<[i32; 2]> = Vec::new();
            for k1 in -nn..=nn {
                for k2 in -nn..=nn {
                    if (k1, k2) == (0, 0) {
                        continue;
                    }
                    if k1 > 0 || (k1 == 0 && k2 > 0) {
                        waves.push([k1, k2]);
                    }
                }
            }
            sort_waves(&mut waves);
            for wave in waves {
                let norm = ((wave[0] * wave[0] + wave[1] * wave[1]) as f64).sqrt();
                let dir = [-wave[1] as f64 / norm, wave[0] as f64 / norm];
                for phase in [Phase::Sin, Phase::Cos] {
                    modes.push(ModeSpec { wave, phase, dir });
                }
            }
        }
    }
    modes
}

// Nested truncation order: |k|^2 first, lexicographic tie-break.
fn sort_waves(waves: &mut [[i32; 2]]) {
    waves.sort_by_key(|w| (w[0] * w[0] + w[1] * w[1], w[0], w[1]));
}

fn stiffness_of(kind: BasisKind, wave: [i32; 2]) -> f64 {
    let k2 = (wave[0] * wave[0] + wave[1] * wave[1]) as f64;
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    match kind {
        BasisKind::ScalarSine1d | BasisKind::ScalarSine2d => pi2 * k2,
        BasisKind::DivfreeFourier2d => 4.0 * pi2 * k2,
    }
}

fn mode_value_at(kind: BasisKind, mode: &ModeSpec, x: [f64; 2]) -> [f64; 2] {
    use std::f64::consts::PI;
    match kind {
        BasisKind::ScalarSine1d => {
            [2.0_f64.sqrt() * (mode.wave[0] as f64 * PI * x[0]).sin(), 0.0]
        }
        BasisKind::ScalarSine2d => [
            2.0 * (mode.wave[0] as f64 * PI * x[0]).sin() * (mode.wave[1] as f64 * PI * x[1]).sin(),
            0.0,
        ],
        BasisKind::DivfreeFourier2d => {
            let angle = 2.0 * PI * (mode.wave[0] as f64 * x[0] + mode.wave[1] as f64 * x[1]);
            let trig = match mode.phase {
                Phase::Sin => angle.sin(),
                Phase::Cos => angle.cos(),
            };
            let amp = 2.0_f64.sqrt() * trig;
            [amp * mode.dir[0], amp * mode.dir[1]]
        }
    }
}

fn mode_gradient_at(kind: BasisKind, mode: &ModeSpec, x: [f64; 2]) -> [[f64; 2]; 2] {
    use std::f64::consts::PI;
    let mut grad = [[0.0; 2]; 2]; // grad[component][derivative axis]
    match kind {
        BasisKind::ScalarSine1d => {
            let k = mode.wave[0] as f64;
            grad[0][0] = 2.0_f64.sqrt() * k * PI * (k * PI * x[0]).cos();
        }
        BasisKind::ScalarSine2d => {
            let (m, l) = (mode.wave[0] as f64, mode.wave[1] as f64);
            grad[0][0] = 2.0 * m * PI * (m * PI * x[0]).cos() * (l * PI * x[1]).sin();
            grad[0][1] = 2.0 * l * PI * (m * PI * x[0]).sin() * (l * PI * x[1]).cos();
        }
        BasisKind::DivfreeFourier2d => {
            let (k1, k2) = (mode.wave[0] as f64, mode.wave[1] as f64);
            let angle = 2.0 * PI * (k1 * x[0] + k2 * x[1]);
            let dtrig = match mode.phase {
                Phase::Sin => angle.cos(),
                Phase::Cos => -angle.sin(),
            };
            let amp = 2.0_f64.sqrt() * dtrig * 2.0 * PI;
            for c in 0..2 {
                grad[c][0] = amp * k1 * mode.dir[c];
                grad[c][1] = amp * k2 * mode.dir[c];
            }
        }
    }
    grad
}

impl GalerkinBasis {
    /// Number of field components (1 scalar, 2 vector).
    pub fn field_dim(&self) -> usize {
        self.kind.field_dim()
    }

    /// Grid evaluation tables, one `(n_modes, n_points)` array per component.
    pub fn eval_tables(&self) -> &[Array2<f64>] {
        &self.eval
    }

    /// Value of mode `m` at an arbitrary point.
    pub fn mode_value(&self, m: usize, x: [f64; 2]) -> [f64; 2] {
        mode_value_at(self.kind, &self.modes[m], x)
    }

    /// Gradient of mode `m` at an arbitrary point, `[component][axis]`.
    pub fn mode_gradient(&self, m: usize, x: [f64; 2]) -> [[f64; 2]; 2] {
        mode_gradient_at(self.kind, &self.modes[m], x)
    }

    /// Quadrature projection of a grid field onto the basis,
    /// c_k = <field, e_k>.
    pub fn project(&self, field: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let n_points = self.grid.n_points();
        if field.nrows() != self.field_dim() || field.ncols() != n_points {
            return Err(SimError::ShapeMismatch {
                expected: self.field_dim() * n_points,
                actual: field.nrows() * field.ncols(),
            });
        }
        let mut coeffs = Array1::zeros(self.n_modes);
        for (c, table) in self.eval.iter().enumerate() {
            coeffs = coeffs + table.dot(&field.row(c));
        }
        Ok(coeffs * self.grid.weight)
    }

    /// Pointwise sum of modes, the inverse of [`GalerkinBasis::project`] on
    /// coefficient space.
    pub fn evaluate_on_grid(&self, coeffs: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
        if coeffs.len() != self.n_modes {
            return Err(SimError::ShapeMismatch {
                expected: self.n_modes,
                actual: coeffs.len(),
            });
        }
        let n_points = self.grid.n_points();
        let mut field = Array2::zeros((self.field_dim(), n_points));
        for (c, table) in self.eval.iter().enumerate() {
            field.row_mut(c).assign(&coeffs.dot(table));
        }
        Ok(field)
    }

    /// L^2 norm of the represented field (the modes are orthonormal).
    pub fn h_norm(&self, coeffs: ArrayView1<'_, f64>) -> f64 {
        coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Gradient-seminorm (sum lambda_k c_k^2)^(1/2); the error topology of
    /// the convergence study.
    pub fn v_norm(&self, coeffs: ArrayView1<'_, f64>) -> f64 {
        coeffs
            .iter()
            .zip(&self.stiffness_diag)
            .map(|(c, l)| l * c * c)
            .sum::<f64>()
            .sqrt()
    }

    /// Quadrature mass matrix <e_i, e_j>; identity up to rounding.
    pub fn mass_matrix(&self) -> Array2<f64> {
        let mut mass = Array2::zeros((self.n_modes, self.n_modes));
        for table in &self.eval {
            mass = mass + table.dot(&table.t());
        }
        mass * self.grid.weight
    }

    /// Quadrature stiffness matrix <grad e_i, grad e_j>; diagonal with the
    /// mode eigenvalues up to rounding. Gradients are evaluated on the fly,
    /// so this is a diagnostic rather than a hot path.
    pub fn stiffness_matrix(&self) -> Array2<f64> {
        let n_points = self.grid.n_points();
        let fd = self.field_dim();
        let dim = self.grid.dim;
        // Gradient samples laid out as (n_modes, n_points * fd * dim).
        let mut grads = Array2::zeros((self.n_modes, n_points * fd * dim));
        for m in 0..self.n_modes {
            for g in 0..n_points {
                let grad = self.mode_gradient(m, self.grid.coords(g));
                for c in 0..fd {
                    for a in 0..dim {
                        grads[[m, (g * fd + c) * dim + a]] = grad[c][a];
                    }
                }
            }
        }
        grads.dot(&grads.t()) * self.grid.weight
    }
}
