//! Command-line driver: single runs, the averaged equation, epsilon sweeps,
//! validation suites, resolvent checks, and report generation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use ndarray::Array1;

use slowfast_core::averaging::{resolvent_psi, solve_averaged, NonlinearMode, PsiQuad};
use slowfast_core::config::{BuiltConfig, FileConfig};
use slowfast_core::error::SimError;
use slowfast_core::harness::{
    convergence_sweep, median, validate, SweepConfig, SweepReport,
};
use slowfast_core::io::{
    read_sweep_csv, write_sweep_csv, write_trajectory_csv, Manifest,
};
use slowfast_core::seed::{stream_rng, TAG_PATH};
use slowfast_core::slowsolver::simulate_coupled;

#[derive(Parser)]
#[command(
    name = "slowfast",
    about = "Spectral Galerkin simulator for a slow-fast stochastic Brinkman/diffusion system",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one coupled path and write its trajectory CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Scale parameter; defaults to the first entry of sweep.epsilons.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Solve the deterministic averaged equation and write its trajectory.
    Averaged {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use the Picard-iterated nonlinearity instead of the lagged one.
        #[arg(long)]
        picard: bool,
    },
    /// Run the epsilon ladder ensemble and write sweep.csv + manifest.json.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (0 = library default).
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Run a named validation suite (basis | quadrature | ou | energy |
    /// averaging | psi).
    Validate {
        #[arg(long)]
        suite: String,
    },
    /// Resolvent corrector diagnostics on the configured coefficient.
    PsiCheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Summarize a sweep output directory into a text report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn load(config: &Path) -> Result<BuiltConfig, SimError> {
    FileConfig::load(config)?.build()
}

fn run(command: Command) -> Result<ExitCode, SimError> {
    match command {
        Command::Simulate {
            config,
            seed,
            out,
            eps,
        } => {
            let built = load(&config)?;
            let eps = match eps.or_else(|| {
                built
                    .sweep
                    .as_ref()
                    .and_then(|s| s.epsilons.first().copied())
            }) {
                Some(e) => e,
                None => {
                    return Err(SimError::Config(
                        "no epsilon: pass --eps or add a sweep section".into(),
                    ))
                }
            };
            std::fs::create_dir_all(&out)?;
            let start = Instant::now();
            let mut rng = stream_rng(seed, 0, TAG_PATH);
            let traj = simulate_coupled(&built.problem, eps, &mut rng)?;
            write_trajectory_csv(&out.join("trajectory.csv"), &traj)?;
            Manifest::new(
                &built.config_hash,
                seed,
                start.elapsed().as_secs_f64(),
                &format!("simulate eps={eps}"),
            )
            .write(&out.join("manifest.json"))?;
            println!(
                "simulated {} steps at eps = {eps}; final |u|_H = {:.6e}",
                traj.times.len() - 1,
                traj.norm_h.last().unwrap()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Averaged {
            config,
            out,
            picard,
        } => {
            let built = load(&config)?;
            std::fs::create_dir_all(&out)?;
            let start = Instant::now();
            let mode = if picard {
                NonlinearMode::Picard {
                    tol: 1e-10,
                    max_iter: 50,
                }
            } else {
                NonlinearMode::Lagged
            };
            let traj = solve_averaged(
                &built.problem,
                mode,
                slowfast_core::averaging::DEFAULT_GH_NODES,
            )?;
            write_trajectory_csv(&out.join("averaged.csv"), &traj)?;
            Manifest::new(
                &built.config_hash,
                0,
                start.elapsed().as_secs_f64(),
                "averaged",
            )
            .write(&out.join("manifest.json"))?;
            println!(
                "averaged equation solved over {} steps; final |u|_H = {:.6e}",
                traj.times.len() - 1,
                traj.norm_h.last().unwrap()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            config,
            out,
            workers,
        } => {
            let built = load(&config)?;
            let sweep_section = built
                .sweep
                .clone()
                .ok_or_else(|| SimError::Config("config has no sweep section".into()))?;
            let sweep = SweepConfig {
                problem: built.problem,
                epsilons: sweep_section.epsilons,
                n_paths: sweep_section.n_paths,
                base_seed: sweep_section.base_seed,
                delta: sweep_section.delta,
                config_hash: built.config_hash,
            };
            let report = if workers > 0 {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| SimError::Config(format!("thread pool: {e}")))?;
                pool.install(|| convergence_sweep(&sweep))?
            } else {
                convergence_sweep(&sweep)?
            };
            std::fs::create_dir_all(&out)?;
            write_sweep_csv(&out.join("sweep.csv"), &report)?;
            Manifest::new(
                &report.config_hash,
                report.base_seed,
                report.wall_time_s,
                "sweep",
            )
            .write(&out.join("manifest.json"))?;
            print_sweep_summary(&report);
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { suite } => {
            let summary = validate(&suite)?;
            let mut failed = 0;
            for check in &summary.checks {
                let status = if check.passed() { "PASS" } else { "FAIL" };
                if !check.passed() {
                    failed += 1;
                }
                let detail = if check.detail.is_empty() {
                    String::new()
                } else {
                    format!(" [{}]", check.detail)
                };
                println!(
                    "{status} {}: value {:.3e} vs threshold {:.3e}{detail}",
                    check.name, check.value, check.threshold
                );
            }
            println!(
                "suite '{}': {}/{} checks passed",
                summary.suite,
                summary.checks.len() - failed,
                summary.checks.len()
            );
            Ok(if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::PsiCheck { config } => {
            let built = load(&config)?;
            let problem = &built.problem;
            let eps = built
                .sweep
                .as_ref()
                .and_then(|s| s.epsilons.first().copied())
                .unwrap_or(0.2);
            let quad = PsiQuad::default();
            let xi = problem.u0.clone();
            let eta = problem.v0.clone();
            let mut phi = Array1::zeros(problem.basis.n_modes);
            phi[0] = 1.0;
            let psi_eps = resolvent_psi(
                &problem.spec,
                &problem.basis,
                &problem.noise,
                eta.view(),
                xi.view(),
                phi.view(),
                eps,
                &quad,
            )?;
            println!("psi at eps = {eps} (rate sqrt(eps)): {psi_eps:.6e}");
            let mut values = Vec::new();
            for rate in [1.0, 0.1, 0.01] {
                let q = PsiQuad {
                    rate_override: Some(rate),
                    ..PsiQuad::default()
                };
                let v = resolvent_psi(
                    &problem.spec,
                    &problem.basis,
                    &problem.noise,
                    eta.view(),
                    xi.view(),
                    phi.view(),
                    eps,
                    &q,
                )?;
                println!("psi at rate {rate}: {v:.6e}");
                values.push(v.abs());
            }
            let max = values.iter().cloned().fold(0.0, f64::max);
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let bounded = problem.spec.has_cell_structure() && min > 0.0 && max / min < 5.0
                || !problem.spec.has_cell_structure() && max == 0.0;
            println!(
                "{} rate-ladder spread {:.3} (bounded-in-rate threshold 5)",
                if bounded { "PASS" } else { "FAIL" },
                if min > 0.0 { max / min } else { 0.0 }
            );
            Ok(if bounded {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Report { input, out } => {
            let rows = read_sweep_csv(&input.join("sweep.csv"))?;
            let mut epsilons: Vec<f64> = Vec::new();
            for row in &rows {
                if !epsilons.contains(&row.0) {
                    epsilons.push(row.0);
                }
            }
            let mut lines = Vec::new();
            lines.push("epsilon n_paths median_error mean_error p_exceed s1_median_abs s3".to_string());
            let mut medians = Vec::new();
            let mut per_eps: Vec<(f64, Vec<f64>, Vec<f64>, f64)> = Vec::new();
            for eps in &epsilons {
                let errors: Vec<f64> =
                    rows.iter().filter(|r| r.0 == *eps).map(|r| r.2).collect();
                let s1: Vec<f64> = rows.iter().filter(|r| r.0 == *eps).map(|r| r.3).collect();
                let s3 = rows
                    .iter()
                    .find(|r| r.0 == *eps)
                    .map(|r| r.4)
                    .unwrap_or(f64::NAN);
                medians.push(median(&errors));
                per_eps.push((*eps, errors, s1, s3));
            }
            let delta = 0.5 * medians.first().copied().unwrap_or(f64::NAN);
            for (i, (eps, errors, s1, s3)) in per_eps.iter().enumerate() {
                let p = errors.iter().filter(|e| **e > delta).count() as f64
                    / errors.len() as f64;
                let abs_s1: Vec<f64> = s1.iter().map(|v| v.abs()).collect();
                lines.push(format!(
                    "{eps} {} {:.6e} {:.6e} {:.4} {:.6e} {:.6e}",
                    errors.len(),
                    medians[i],
                    errors.iter().sum::<f64>() / errors.len() as f64,
                    p,
                    median(&abs_s1),
                    s3
                ));
            }
            let monotone = medians.windows(2).all(|p| p[1] < p[0]);
            lines.push(format!(
                "delta = {delta:.6e} (half the largest-epsilon median)"
            ));
            lines.push(format!(
                "medians strictly decreasing along the ladder: {monotone}"
            ));
            std::fs::write(&out, lines.join("\n") + "\n")?;
            println!("report written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn print_sweep_summary(report: &SweepReport) {
    println!("epsilon   median_error  mean_error    P(e>delta)  |S1| median   S3");
    for stats in &report.stats {
        println!(
            "{:<9} {:<13.6e} {:<13.6e} {:<11.4} {:<13.6e} {:.6e}",
            stats.epsilon,
            stats.median_error,
            stats.mean_error,
            stats.p_exceed,
            stats.s1_median_abs,
            stats.s3
        );
    }
    println!(
        "delta = {:.6e}; medians decreasing: {}; P(e>delta) nonincreasing: {}; \
         |S1| medians decreasing: {}; |S3| decreasing: {}; wall time {:.1}s",
        report.delta,
        report.medians_strictly_decreasing,
        report.p_exceed_nonincreasing,
        report.s1_medians_decreasing,
        report.s3_magnitudes_decreasing,
        report.wall_time_s
    );
}
