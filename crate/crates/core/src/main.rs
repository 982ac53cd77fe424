//! Batch entry point: run scenarios, audit stored trajectories, sweep
//! parameters, and print the boundary-algebra debug tables.
//!
//! Exit codes: 0 success, 2 solver failure, 3 configuration or input
//! failure, 4 audit or assertion failure. Failures also emit one
//! machine-readable JSON object on stderr.

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{Matrix3, Vector3};
use serde::Serialize;
use std::path::{Path, PathBuf};

use plastodyn::audit::{self, CheckResult, SpaceBump};
use plastodyn::config::{self, ScenarioConfig};
use plastodyn::dynamics::{self, Scenario};
use plastodyn::friedrichs;
use plastodyn::trajectory;

/// Environment variable naming the default root for output directories.
const OUT_ROOT_ENV: &str = "PLASTODYN_OUT_ROOT";
/// Seed of the entropic sample family used by `audit`.
const ENTROPY_SEED: u64 = 0x5eed;

const EXIT_SOLVER: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_AUDIT: u8 = 4;

#[derive(Parser)]
#[command(name = "plastodyn", version, about = "Dynamic perfect plasticity with dissipative boundary conditions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CellOrderArg {
    Forward,
    Reverse,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and export its trajectory and manifest.
    Run {
        /// Scenario configuration (TOML).
        config: PathBuf,
        /// Output directory (default: $PLASTODYN_OUT_ROOT/<config stem> or
        /// runs/<config stem>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the inner sweep tolerance.
        #[arg(long)]
        tol_inner: Option<f64>,
        /// Override the sweep limit.
        #[arg(long)]
        max_sweeps: Option<usize>,
        /// Override the cell iteration order of the plastic update.
        #[arg(long, value_enum)]
        cell_order: Option<CellOrderArg>,
    },
    /// Audit a stored trajectory directory.
    Audit {
        /// Trajectory directory written by `run`.
        dir: PathBuf,
        /// Comma-separated checks: energy, flow-rule, relaxed-bc,
        /// entropic, convexity. An empty list is a no-op.
        #[arg(long, default_value = "energy,flow-rule,relaxed-bc,entropic,convexity")]
        checks: String,
        /// Constant C of the C*(delta+eps) slack bounds.
        #[arg(long, default_value_t = 10.0)]
        slack_constant: f64,
        /// Override the relative energy-residual tolerance (default
        /// slack_constant * delta).
        #[arg(long)]
        energy_tol: Option<f64>,
        /// Number of entropic test samples.
        #[arg(long, default_value_t = 100)]
        entropy_samples: usize,
    },
    /// Run a scenario across several values of eps or delta and compare
    /// audit scalars.
    Sweep {
        /// Scenario configuration (TOML).
        config: PathBuf,
        /// Parameter to sweep.
        #[arg(long, value_parser = ["eps", "delta"])]
        parameter: String,
        /// At least two parameter values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
        /// Output directory for the sweep CSV and report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the three-dimensional boundary-algebra tables for one normal.
    Friedrichs {
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        /// Unit normal as "x,y,z" (normalized if needed).
        #[arg(long, default_value = "1,2,2")]
        nu: String,
    },
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    error: ErrorBody<'a>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: u8,
    kind: &'a str,
    message: String,
}

fn fail(code: u8, kind: &str, message: String) -> ! {
    let body = ErrorJson { error: ErrorBody { code, kind, message } };
    eprintln!("{}", serde_json::to_string(&body).expect("error serialization"));
    std::process::exit(code.into())
}

fn out_dir(flag: Option<PathBuf>, config: &Path) -> PathBuf {
    if let Some(dir) = flag {
        return dir;
    }
    let stem = config.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scenario".into());
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) => Path::new(&root).join(stem),
        None => Path::new("runs").join(stem),
    }
}

fn load_scenario(config_path: &Path) -> (ScenarioConfig, Scenario) {
    let cfg = match ScenarioConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => fail(EXIT_CONFIG, "config", e.to_string()),
    };
    let base = config_path.parent();
    let scenario = match cfg.to_scenario(base) {
        Ok(s) => s,
        Err(e) => fail(EXIT_CONFIG, "config", e.to_string()),
    };
    (cfg, scenario)
}

fn main() {
    match Cli::parse().command {
        Command::Run { config, out, tol_inner, max_sweeps, cell_order } => {
            cmd_run(&config, out, tol_inner, max_sweeps, cell_order)
        }
        Command::Audit { dir, checks, slack_constant, energy_tol, entropy_samples } => {
            cmd_audit(&dir, &checks, slack_constant, energy_tol, entropy_samples)
        }
        Command::Sweep { config, parameter, values, out } => {
            cmd_sweep(&config, &parameter, &values, out)
        }
        Command::Friedrichs { lambda, mu, nu } => cmd_friedrichs(lambda, mu, &nu),
    }
}

fn cmd_run(
    config_path: &Path,
    out: Option<PathBuf>,
    tol_inner: Option<f64>,
    max_sweeps: Option<usize>,
    cell_order: Option<CellOrderArg>,
) {
    let (mut cfg, _) = load_scenario(config_path);
    // fold overrides back into the config so the manifest echo reproduces
    // this exact run
    if let Some(t) = tol_inner {
        cfg.solver.tol_inner = t;
    }
    if let Some(m) = max_sweeps {
        cfg.solver.max_sweeps = m;
    }
    if let Some(order) = cell_order {
        cfg.solver.cell_order =
            match order {
                CellOrderArg::Forward => "forward",
                CellOrderArg::Reverse => "reverse",
            }
            .into();
    }
    let scenario = match cfg.to_scenario(config_path.parent()) {
        Ok(s) => s,
        Err(e) => fail(EXIT_CONFIG, "config", e.to_string()),
    };
    if let Err(e) = config::validate(&scenario) {
        fail(EXIT_CONFIG, "config", e.to_string());
    }
    let traj = match dynamics::run(&scenario) {
        Ok(t) => t,
        Err(e) => fail(EXIT_SOLVER, "solver", e.to_string()),
    };
    let echo = match toml::to_string(&cfg) {
        Ok(t) => t,
        Err(e) => fail(EXIT_CONFIG, "config", e.to_string()),
    };
    let dir = out_dir(out, config_path);
    let manifest = match trajectory::write_outputs(
        &traj,
        scenario.mesh.dim,
        scenario.mesh.facets.len(),
        &echo,
        &dir,
    ) {
        Ok(m) => m,
        Err(e) => fail(EXIT_CONFIG, "io", e.to_string()),
    };
    println!(
        "run complete: {} steps, {} cells -> {}",
        manifest.n_steps,
        manifest.n_cells,
        dir.display()
    );
}

#[derive(Serialize)]
struct AuditReport {
    checks: Vec<CheckResult>,
    warnings: Vec<String>,
    pass: bool,
}

fn scenario_from_manifest(dir: &Path, manifest: &trajectory::RunManifest) -> (ScenarioConfig, Scenario) {
    let cfg = match ScenarioConfig::from_str(&manifest.config_toml) {
        Ok(c) => c,
        Err(e) => fail(EXIT_CONFIG, "config", format!("manifest config: {e}")),
    };
    let scenario = match cfg.to_scenario(Some(dir)) {
        Ok(s) => s,
        Err(e) => fail(EXIT_CONFIG, "config", format!("manifest config: {e}")),
    };
    (cfg, scenario)
}

fn cmd_audit(
    dir: &Path,
    checks: &str,
    slack_constant: f64,
    energy_tol: Option<f64>,
    entropy_samples: usize,
) {
    let requested: Vec<&str> =
        checks.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if requested.is_empty() {
        eprintln!("warning: empty checks list, nothing audited");
        return;
    }
    let known = ["energy", "flow-rule", "relaxed-bc", "entropic", "convexity"];
    for name in &requested {
        if !known.contains(name) {
            fail(EXIT_CONFIG, "config", format!("unknown check '{name}'"));
        }
    }

    let (manifest, traj, tampered) = match trajectory::read_outputs_tolerant(dir) {
        Ok(t) => t,
        Err(e) => fail(EXIT_CONFIG, "io", e.to_string()),
    };
    let mut warnings: Vec<String> =
        tampered.iter().map(|f| format!("content hash mismatch in {f}")).collect();
    let (cfg, scenario) = scenario_from_manifest(dir, &manifest);

    let mut results: Vec<CheckResult> = Vec::new();
    let run_audit = |name: &str| requested.contains(&name);
    let audit_err = |e: audit::AuditError| -> ! { fail(EXIT_CONFIG, "audit-input", e.to_string()) };

    if run_audit("energy") {
        let report = audit::energy_audit(&scenario, &traj).unwrap_or_else(|e| audit_err(e));
        let tol = energy_tol.unwrap_or(slack_constant * traj.delta);
        results.extend(report.checks(tol));
    }
    if run_audit("flow-rule") {
        let report = audit::flow_rule_audit(&scenario, &traj).unwrap_or_else(|e| audit_err(e));
        results.extend(report.checks());
    }
    if run_audit("relaxed-bc") {
        let report = audit::relaxed_bc_audit(&scenario, &traj).unwrap_or_else(|e| audit_err(e));
        results.extend(report.checks(cfg.solver.tol_inner));
    }
    if run_audit("entropic") {
        let t_final = *traj.times.last().unwrap_or(&traj.delta);
        let samples = audit::standard_samples(&scenario, t_final, entropy_samples, ENTROPY_SEED)
            .unwrap_or_else(|e| audit_err(e));
        let report =
            audit::entropic_audit(&scenario, &traj, &samples).unwrap_or_else(|e| audit_err(e));
        results.extend(report.checks(slack_constant, traj.delta, traj.eps));
    }
    if run_audit("convexity") {
        let report = audit::convexity_inequality_audit(&scenario, &traj, &SpaceBump::Uniform)
            .unwrap_or_else(|e| audit_err(e));
        results.extend(report.checks(slack_constant, traj.delta, traj.eps));
    }
    if !tampered.is_empty() {
        warnings.push("audited despite hash mismatches; values reflect file contents".into());
    }

    let pass = results.iter().all(|c| c.pass);
    let report = AuditReport { checks: results, warnings, pass };
    let json = serde_json::to_string_pretty(&report).expect("report serialization");
    if let Err(e) = std::fs::write(dir.join("audit.json"), &json) {
        fail(EXIT_CONFIG, "io", e.to_string());
    }
    println!("{json}");
    if !pass {
        fail(EXIT_AUDIT, "audit", "one or more checks failed".into());
    }
}

#[derive(Serialize)]
struct SweepRow {
    parameter: String,
    value: f64,
    energy_residual: f64,
    relaxed_bc_residual: f64,
    plastic_dissipation: f64,
    max_stress_infeasibility: f64,
}

#[derive(Serialize)]
struct SweepReport {
    rows: Vec<SweepRow>,
    assertions: Vec<CheckResult>,
    failures: Vec<String>,
    pass: bool,
}

fn cmd_sweep(config_path: &Path, parameter: &str, values: &[f64], out: Option<PathBuf>) {
    if values.len() < 2 {
        fail(EXIT_CONFIG, "config", "a sweep needs at least two parameter values".into());
    }
    let (_, base_scenario) = load_scenario(config_path);

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &value in values {
        let mut scenario = base_scenario.clone();
        match parameter {
            "eps" => scenario.eps = value,
            "delta" => scenario.delta = value,
            _ => unreachable!("clap restricts the parameter"),
        }
        if let Err(e) = config::validate(&scenario) {
            failures.push(format!("{parameter} = {value}: {e}"));
            continue;
        }
        let traj = match dynamics::run(&scenario) {
            Ok(t) => t,
            Err(e) => {
                failures.push(format!("{parameter} = {value}: {e}"));
                continue;
            }
        };
        let energy = match audit::energy_audit(&scenario, &traj) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("{parameter} = {value}: {e}"));
                continue;
            }
        };
        let bc = match audit::relaxed_bc_audit(&scenario, &traj) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("{parameter} = {value}: {e}"));
                continue;
            }
        };
        let mut max_dist: f64 = 0.0;
        for sigmas in &traj.sigma {
            for sig in sigmas {
                max_dist = max_dist.max(scenario.constraint.violation(sig).max(0.0));
            }
        }
        rows.push(SweepRow {
            parameter: parameter.into(),
            value,
            energy_residual: energy.max_rel_residual,
            relaxed_bc_residual: bc.max_relaxed_residual,
            plastic_dissipation: *energy.plastic_cumulative.last().unwrap_or(&0.0),
            max_stress_infeasibility: max_dist,
        });
    }

    let mut assertions = Vec::new();
    if failures.is_empty() {
        // order the rows by decreasing parameter value for the monotonicity
        // statements below
        let mut ordered: Vec<&SweepRow> = rows.iter().collect();
        ordered.sort_by(|a, b| b.value.total_cmp(&a.value));
        match parameter {
            "delta" => {
                for pair in ordered.windows(2) {
                    let step_ratio = pair[0].value / pair[1].value;
                    if (step_ratio - 2.0).abs() > 1e-9 {
                        continue; // the first-order ratio test needs halvings
                    }
                    let ratio = pair[0].energy_residual / pair[1].energy_residual;
                    assertions.push(CheckResult {
                        name: format!(
                            "energy_residual_halving_ratio_{}_{}",
                            pair[0].value, pair[1].value
                        ),
                        tolerance: 3.0,
                        achieved: ratio,
                        pass: (1.5..=3.0).contains(&ratio),
                    });
                }
            }
            "eps" => {
                for pair in ordered.windows(2) {
                    let bound = 1.1 * pair[0].relaxed_bc_residual;
                    assertions.push(CheckResult {
                        name: format!(
                            "relaxed_bc_nonincreasing_{}_{}",
                            pair[0].value, pair[1].value
                        ),
                        tolerance: bound,
                        achieved: pair[1].relaxed_bc_residual,
                        pass: pair[1].relaxed_bc_residual <= bound,
                    });
                    assertions.push(CheckResult {
                        name: format!(
                            "stress_feasibility_decreasing_{}_{}",
                            pair[0].value, pair[1].value
                        ),
                        tolerance: pair[0].max_stress_infeasibility,
                        achieved: pair[1].max_stress_infeasibility,
                        pass: pair[1].max_stress_infeasibility
                            <= pair[0].max_stress_infeasibility,
                    });
                }
            }
            _ => unreachable!(),
        }
    }

    let pass = failures.is_empty() && assertions.iter().all(|c| c.pass);
    let report = SweepReport { rows, assertions, failures, pass };

    let dir = out_dir(out, config_path);
    if let Err(e) = std::fs::create_dir_all(&dir) {
        fail(EXIT_CONFIG, "io", e.to_string());
    }
    let mut csv = String::from(
        "parameter,value,energy_residual,relaxed_bc_residual,plastic_dissipation,max_stress_infeasibility\n",
    );
    for r in &report.rows {
        csv.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?}\n",
            r.parameter,
            r.value,
            r.energy_residual,
            r.relaxed_bc_residual,
            r.plastic_dissipation,
            r.max_stress_infeasibility
        ));
    }
    let json = serde_json::to_string_pretty(&report).expect("report serialization");
    if let Err(e) = std::fs::write(dir.join("sweep.csv"), &csv)
        .and_then(|_| std::fs::write(dir.join("sweep.json"), &json))
    {
        fail(EXIT_CONFIG, "io", e.to_string());
    }
    println!("{json}");
    if !report.failures.is_empty() {
        fail(EXIT_SOLVER, "solver", report.failures.join("; "));
    }
    if !pass {
        fail(EXIT_AUDIT, "audit", "sweep assertion failed".into());
    }
}

fn cmd_friedrichs(lambda: f64, mu: f64, nu_arg: &str) {
    let comps: Vec<f64> = nu_arg
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .unwrap_or_else(|e| fail(EXIT_CONFIG, "config", format!("bad normal: {e}")));
    if comps.len() != 3 {
        fail(EXIT_CONFIG, "config", "the normal needs three components".into());
    }
    let mut nu = Vector3::new(comps[0], comps[1], comps[2]);
    if nu.norm() == 0.0 {
        fail(EXIT_CONFIG, "config", "the normal must be nonzero".into());
    }
    nu /= nu.norm();

    let sys = match friedrichs::build_system(lambda, mu) {
        Ok(s) => s,
        Err(e) => fail(EXIT_CONFIG, "config", e.to_string()),
    };
    let a_nu = friedrichs::build_a_nu(&sys, &nu).expect("unit normal");
    let (a_prime, a_dprime) = friedrichs::a_nu_blocks(&sys, &nu);
    println!("normal nu = [{}, {}, {}]", nu[0], nu[1], nu[2]);
    println!("rank A_nu = {}", friedrichs::numeric_rank(&a_nu));
    println!(
        "det A'_nu = {:.6e} (closed form {:.6e})",
        a_prime.determinant(),
        -nu[0] * nu[1] * nu[2] * 2.0 * mu * (3.0 * lambda + 2.0 * mu).sqrt()
    );
    println!("A'_nu =\n{a_prime:.4}");
    println!("A''_nu =\n{a_dprime:.4}");
    match friedrichs::build_m(&sys, &nu, &Matrix3::identity(), &Matrix3::zeros()) {
        Ok(bm) => match friedrichs::verify_admissible(&bm, &sys) {
            Ok(cert) => {
                println!("boundary matrix for S = I:");
                println!("  min eig M       = {:.3e}", cert.min_eig_m);
                println!("  kernel residual = {:.3e}", cert.kernel_inclusion_residual);
                println!("  rank(A_nu + M)  = {}", cert.rank_a_plus_m);
                println!("  rank(A_nu - M)  = {}", cert.rank_a_minus_m);
                println!("  admissible      = {}", cert.admissible);
            }
            Err(e) => fail(EXIT_CONFIG, "config", e.to_string()),
        },
        Err(e) => fail(EXIT_CONFIG, "config", e.to_string()),
    }
}
