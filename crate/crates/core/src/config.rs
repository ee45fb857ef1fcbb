//! TOML configuration schema and runtime problem assembly.
//!
//! A config file has sections `problem`, `coefficient`, `noise`, and
//! optionally `sweep` and `output`:
//!
//! ```toml
//! [problem]
//! basis_kind = "scalar_sine_1d"   # scalar_sine_2d | divfree_fourier_2d
//! n_per_dim = 16
//! grid_points_per_dim = 512
//! T = 0.5
//! dt = 1e-3
//! u0_profile = "low_mode"         # zero | first_mode | low_mode
//! v0_profile = "zero"
//! forcing = "zero"                # zero | first_mode
//!
//! [coefficient]
//! alpha0 = 1.0
//! [[coefficient.terms]]
//! g = { type = "sin_sq", wave_vector = [1], amplitude = 0.5 }
//! h = { type = "tanh_sq", direction = [1.0] }
//!
//! [noise]                         # either a decay profile ...
//! q0 = 0.5
//! decay_p = 3.0
//! # ... or an explicit list: q_list = [0.5, 0.0625, ...]
//!
//! [sweep]
//! epsilons = [0.2, 0.1, 0.05, 0.025]
//! n_paths = 32
//! base_seed = 42
//! # delta = 0.05                  # probability threshold; omit for auto
//!
//! [output]
//! dir = "out"
//! snapshot_stride = 10
//! ```

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::basis::{build_basis, BasisKind, GalerkinBasis};
use crate::coefficient::{CellFunction, CoeffTerm, CoefficientSpec, FastFunction};
use crate::error::{Result, SimError};
use crate::fastproc::NoiseModel;
use crate::slowsolver::{Forcing, Problem};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub basis_kind: BasisKind,
    pub n_per_dim: usize,
    pub grid_points_per_dim: usize,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub dt: f64,
    #[serde(default = "default_u0")]
    pub u0_profile: String,
    #[serde(default = "default_zero_profile")]
    pub v0_profile: String,
    #[serde(default = "default_forcing")]
    pub forcing: String,
}

fn default_u0() -> String {
    "low_mode".into()
}

fn default_zero_profile() -> String {
    "zero".into()
}

fn default_forcing() -> String {
    "zero".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GSection {
    #[serde(rename = "type")]
    pub kind: String,
    pub wave_vector: Vec<i32>,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HSection {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub direction: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSection {
    pub g: GSection,
    pub h: HSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSection {
    pub alpha0: f64,
    #[serde(default)]
    pub terms: Vec<TermSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub q0: Option<f64>,
    #[serde(default)]
    pub decay_p: Option<f64>,
    #[serde(default)]
    pub q_list: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub epsilons: Vec<f64>,
    pub n_paths: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
}

fn default_stride() -> usize {
    10
}

/// Parsed configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub problem: ProblemSection,
    pub coefficient: CoefficientSection,
    pub noise: NoiseSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub output: Option<OutputSection>,
}

/// Runtime objects assembled from a config file.
pub struct BuiltConfig {
    pub problem: Problem,
    pub sweep: Option<SweepSection>,
    pub output: Option<OutputSection>,
    /// SHA-256 of the canonical serialized config.
    pub config_hash: String,
}

impl FileConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SimError::Config(format!("TOML parse error: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Canonical hash of the configuration content.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn build(&self) -> Result<BuiltConfig> {
        let basis = build_basis(
            self.problem.basis_kind,
            self.problem.n_per_dim,
            self.problem.grid_points_per_dim,
        )?;
        let spec = self.build_spec(&basis)?;
        let noise = self.build_noise(&basis)?;
        let u0 = profile_coeffs(&self.problem.u0_profile, &basis)?;
        let v0 = profile_coeffs(&self.problem.v0_profile, &basis)?;
        let forcing = match self.problem.forcing.as_str() {
            "zero" => Forcing::Zero,
            "first_mode" => Forcing::FirstMode,
            other => {
                return Err(SimError::Config(format!(
                    "unknown forcing profile '{other}' (zero | first_mode)"
                )))
            }
        };
        let snapshot_stride = self
            .output
            .as_ref()
            .map(|o| o.snapshot_stride)
            .unwrap_or_else(default_stride);
        let problem = Problem {
            basis,
            spec,
            noise,
            t_final: self.problem.t_final,
            dt: self.problem.dt,
            u0,
            v0,
            forcing,
            snapshot_stride,
        };
        problem.validate()?;
        if let Some(sweep) = &self.sweep {
            if sweep.epsilons.is_empty() {
                return Err(SimError::Config("sweep.epsilons must not be empty".into()));
            }
        }
        Ok(BuiltConfig {
            problem,
            sweep: self.sweep.clone(),
            output: self.output.clone(),
            config_hash: self.hash(),
        })
    }

    fn build_spec(&self, basis: &GalerkinBasis) -> Result<CoefficientSpec> {
        let y_dim = basis.grid.dim;
        let v_dim = basis.field_dim();
        let mut terms = Vec::new();
        for section in &self.coefficient.terms {
            let wave = parse_wave(&section.g.wave_vector, y_dim)?;
            let g = match section.g.kind.as_str() {
                "sin" => CellFunction::Sin {
                    wave,
                    amplitude: section.g.amplitude,
                },
                "cos" => CellFunction::Cos {
                    wave,
                    amplitude: section.g.amplitude,
                },
                "sin_sq" => CellFunction::SinSq {
                    wave,
                    amplitude: section.g.amplitude,
                },
                "sin_prod" => CellFunction::SinProd {
                    wave,
                    amplitude: section.g.amplitude,
                },
                other => {
                    return Err(SimError::Config(format!(
                        "unknown cell function '{other}' (sin | cos | sin_sq | sin_prod)"
                    )))
                }
            };
            let h = match section.h.kind.as_str() {
                "inv_sq" => FastFunction::InvSq,
                "tanh_sq" => {
                    let raw = section
                        .h
                        .direction
                        .clone()
                        .unwrap_or_else(|| vec![1.0; v_dim]);
                    if raw.len() != v_dim {
                        return Err(SimError::Config(format!(
                            "tanh_sq direction must have {v_dim} components"
                        )));
                    }
                    let mut direction = [0.0; 2];
                    for (c, v) in raw.iter().enumerate() {
                        direction[c] = *v;
                    }
                    FastFunction::TanhSq { direction }
                }
                other => {
                    return Err(SimError::Config(format!(
                        "unknown fast function '{other}' (inv_sq | tanh_sq)"
                    )))
                }
            };
            terms.push(CoeffTerm { g, h });
        }
        CoefficientSpec::new(self.coefficient.alpha0, terms, y_dim, v_dim)
    }

    fn build_noise(&self, basis: &GalerkinBasis) -> Result<NoiseModel> {
        match (&self.noise.q_list, self.noise.q0, self.noise.decay_p) {
            (Some(list), None, None) => NoiseModel::from_list(basis, list.clone()),
            (None, Some(q0), Some(p)) => NoiseModel::from_decay(basis, q0, p),
            (None, None, None) => Err(SimError::Config(
                "noise section needs either q0 + decay_p or q_list".into(),
            )),
            _ => Err(SimError::Config(
                "noise section must use q0 + decay_p or q_list, not a mixture".into(),
            )),
        }
    }
}

fn parse_wave(raw: &[i32], y_dim: usize) -> Result<[i32; 2]> {
    if raw.len() != y_dim {
        return Err(SimError::Config(format!(
            "wave_vector must have {y_dim} components, got {}",
            raw.len()
        )));
    }
    let mut wave = [0; 2];
    for (c, v) in raw.iter().enumerate() {
        wave[c] = *v;
    }
    Ok(wave)
}

/// Builds modal coefficients for a named initial profile.
///
/// `low_mode` is a smooth three-mode profile with decaying amplitudes, which
/// keeps the initial data in the gradient-regular class. A profile may carry
/// a scale suffix, e.g. `first_mode:0.5`.
pub fn profile_coeffs(name: &str, basis: &GalerkinBasis) -> Result<Array1<f64>> {
    let (base, scale) = match name.split_once(':') {
        Some((base, raw)) => {
            let scale: f64 = raw.parse().map_err(|_| {
                SimError::Config(format!("bad profile scale '{raw}' in '{name}'"))
            })?;
            (base, scale)
        }
        None => (name, 1.0),
    };
    let mut coeffs = Array1::zeros(basis.n_modes);
    match base {
        "zero" => {}
        "first_mode" => coeffs[0] = scale,
        "low_mode" => {
            let amps = [1.0, 0.5, 0.25];
            for (k, amp) in amps.iter().enumerate() {
                if k < basis.n_modes {
                    coeffs[k] = amp * scale;
                }
            }
        }
        other => {
            return Err(SimError::Config(format!(
                "unknown profile '{other}' (zero | first_mode | low_mode, \
                 optionally scaled like 'first_mode:0.5')"
            )))
        }
    }
    Ok(coeffs)
}
