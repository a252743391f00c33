//! Command-line front end: design validation, port fitting, count
//! emulation, noise calibration, model validation, config-driven
//! experiments, and SVG figure emission.
//!
//! Exit codes: 0 success, 2 validation failure, 3 non-convergence,
//! 4 estimation failure, 64 usage, 65 data format.

mod manifest;
mod svg;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use metashadow::calibrate::{
    calibrate, validate_model, CalibrateConfig, CalibrationProblem, ValidationPoint,
};
use metashadow::emulator::{emulate_probe_table, fit_port_operators, CountTable, TransmissionTable};
use metashadow::estimate::ExperimentSpec;
use metashadow::noise::NoiseParams;
use metashadow::povm::{build_povm, check_two_design, Design};
use metashadow::Error;

#[derive(Parser)]
#[command(
    name = "metashadow",
    version,
    about = "Randomized polarization measurements through a multi-port metasurface: \
             simulation, calibration, error mitigation, and state-property estimation"
)]
struct Cli {
    /// Seed for stochastic commands (the run config's own seed wins unless
    /// this flag is given explicitly)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap the worker-thread count (results are identical for any value)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DesignArg {
    Octa6,
    Cube8,
    Icosa12,
}

impl From<DesignArg> for Design {
    fn from(value: DesignArg) -> Self {
        match value {
            DesignArg::Octa6 => Design::Octa6,
            DesignArg::Cube8 => Design::Cube8,
            DesignArg::Icosa12 => Design::Icosa12,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    /// Binned per-repetition values (up to two overlaid reports)
    Hist,
    /// Mean with std bars against the swept variable, or a validation sweep
    Curve,
}

#[derive(Subcommand)]
enum Command {
    /// Check that a port design forms a quantum 2-design
    PovmCheck {
        #[arg(long, value_enum)]
        design: DesignArg,
        /// Report destination (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit per-port response operators from a transmission table
    FitPorts {
        #[arg(long)]
        transmission: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emulate a calibration count table for the six standard probes
    Emulate {
        #[arg(long)]
        transmission: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        shots: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover the noise vector from a calibration count table
    Calibrate {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long, value_enum, default_value = "octa6")]
        design: DesignArg,
        #[arg(long, default_value_t = 16)]
        starts: usize,
        #[arg(long)]
        out: PathBuf,
        /// Diagnostics destination (defaults to `<out>` with a
        /// `_diagnostics.json` suffix)
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Sweep superposition states against a reference transmission table
    Validate {
        #[arg(long)]
        transmission: PathBuf,
        #[arg(long)]
        noise: PathBuf,
        #[arg(long, default_value_t = 64)]
        sweep: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a config-driven experiment, one report per swept variant
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also persist the pooled mitigated probability table of each
        /// mitigated variant as `table_<variant>.csv`
        #[arg(long)]
        save_tables: bool,
    },
    /// Render reports as a self-contained SVG figure
    Plot {
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[arg(long)]
        out: PathBuf,
        /// Report files (run reports or a validation curve)
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

struct CliError {
    code: i32,
    message: String,
}

type CmdResult = Result<(), CliError>;

fn fail(code: i32, message: impl std::fmt::Display) -> CliError {
    CliError {
        code,
        message: message.to_string(),
    }
}

/// Input-processing failures are data-format errors.
fn data_err(err: impl std::fmt::Display) -> CliError {
    fail(65, err)
}

fn write_text(path: &Path, content: &str) -> CmdResult {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(data_err)?;
        }
    }
    std::fs::write(path, content).map_err(data_err)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_povm_check(design: Design, out: Option<&Path>) -> CmdResult {
    let report = check_two_design(&build_povm(design));
    let json = serde_json::to_string_pretty(&report).map_err(data_err)?;
    match out {
        Some(path) => write_text(path, &json)?,
        None => println!("{json}"),
    }
    if report.passes(1e-9) {
        Ok(())
    } else {
        Err(fail(
            2,
            format!(
                "{design} is not a 2-design: frame potential {}, channel residual {}",
                report.frame_potential, report.channel_residual
            ),
        ))
    }
}

fn cmd_fit_ports(transmission: &Path, out: &Path) -> CmdResult {
    let table = TransmissionTable::read_csv(transmission).map_err(data_err)?;
    let set = fit_port_operators(&table).map_err(data_err)?;
    let worst = set
        .gratings
        .iter()
        .flat_map(|g| g.ports.iter())
        .map(|p| p.residual)
        .fold(0.0f64, f64::max);
    println!("fitted {} ports, worst redundant-probe residual {worst:.2e}", set.ports());
    write_text(out, &set.to_json_string().map_err(data_err)?)
}

fn cmd_emulate(transmission: &Path, shots: u64, seed: u64, out: &Path) -> CmdResult {
    let table = TransmissionTable::read_csv(transmission).map_err(data_err)?;
    let set = fit_port_operators(&table).map_err(data_err)?;
    let counts = emulate_probe_table(&set, shots, seed).map_err(data_err)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(data_err)?;
        }
    }
    counts.write_csv(out).map_err(data_err)?;
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct CalibrationDiagnostics<'a> {
    objective: f64,
    per_probe_fidelity: &'a [f64],
    starts: usize,
    evaluations: usize,
    converged: bool,
}

fn cmd_calibrate(
    counts: &Path,
    design: Design,
    starts: usize,
    seed: u64,
    out: &Path,
    diagnostics: Option<&Path>,
) -> CmdResult {
    let table = CountTable::read_csv(counts).map_err(data_err)?;
    let config = CalibrateConfig {
        starts,
        seed,
        ..CalibrateConfig::default()
    };
    let problem = CalibrationProblem::from_count_table(design, &table, config).map_err(data_err)?;
    let result = match calibrate(&problem) {
        Ok(r) => r,
        Err(Error::NonConvergence { objective, .. }) => {
            return Err(fail(
                3,
                format!("no optimizer start converged (best objective {objective:.6})"),
            ))
        }
        Err(e) => return Err(data_err(e)),
    };
    for ((label, _), fidelity) in problem.probes.iter().zip(&result.per_probe_fidelity) {
        println!("probe {label}: fidelity {fidelity:.6}");
    }
    println!(
        "objective {:.6} after {} evaluations across {} starts",
        result.objective_value, result.evaluations, result.starts
    );
    let diag = CalibrationDiagnostics {
        objective: result.objective_value,
        per_probe_fidelity: &result.per_probe_fidelity,
        starts: result.starts,
        evaluations: result.evaluations,
        converged: result.converged,
    };
    let diag_path = diagnostics.map(Path::to_path_buf).unwrap_or_else(|| {
        let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("calibration");
        out.with_file_name(format!("{stem}_diagnostics.json"))
    });
    write_text(
        &diag_path,
        &serde_json::to_string_pretty(&diag).map_err(data_err)?,
    )?;
    write_text(out, &result.lambda_opt.to_json_string().map_err(data_err)?)
}

#[derive(Serialize, Deserialize)]
struct ValidationCurve {
    points: Vec<ValidationPoint>,
    min_fidelity: f64,
}

fn cmd_validate(transmission: &Path, noise: &Path, sweep: usize, out: &Path) -> CmdResult {
    let table = TransmissionTable::read_csv(transmission).map_err(data_err)?;
    let reference = fit_port_operators(&table).map_err(data_err)?;
    let lambda =
        NoiseParams::from_json_str(&std::fs::read_to_string(noise).map_err(data_err)?)
            .map_err(data_err)?;
    let points = validate_model(&lambda, &reference, sweep).map_err(data_err)?;
    let min_fidelity = points
        .iter()
        .map(|p| p.fidelity)
        .fold(f64::INFINITY, f64::min);
    println!("minimum fidelity over {} points: {min_fidelity:.6}", points.len());
    let curve = ValidationCurve {
        points,
        min_fidelity,
    };
    write_text(out, &serde_json::to_string_pretty(&curve).map_err(data_err)?)
}

fn cmd_run(
    config_path: &Path,
    out_dir: &Path,
    seed_flag: Option<u64>,
    save_tables: bool,
) -> CmdResult {
    let started = Instant::now();
    let config_bytes = std::fs::read(config_path).map_err(data_err)?;
    let spec = ExperimentSpec::from_json_str(
        std::str::from_utf8(&config_bytes).map_err(data_err)?,
    )
    .map_err(data_err)?;
    let base_dir = config_path.parent().unwrap_or(Path::new("."));
    let mut variants = spec.expand(base_dir).map_err(data_err)?;
    if let Some(seed) = seed_flag {
        for v in &mut variants {
            v.config.seed = seed;
        }
    }
    std::fs::create_dir_all(out_dir).map_err(data_err)?;

    let mut inputs = vec![manifest::FileDigest {
        path: config_path.display().to_string(),
        sha256: manifest::sha256_hex(&config_bytes),
    }];
    if let Some(metashadow::estimate::NoiseSource::Path(rel)) = &spec.noise {
        if let Ok(digest) = manifest::digest_file(&base_dir.join(rel)) {
            inputs.push(digest);
        }
    }

    let mut outputs = Vec::new();
    for variant in &variants {
        let report = metashadow::estimate::run_experiment(&variant.config)
            .map_err(|e| fail(4, format!("variant {}: {e}", variant.key)))?;
        let report_path = out_dir.join(format!("report_{}.json", variant.key));
        std::fs::write(
            &report_path,
            serde_json::to_string_pretty(&report).map_err(data_err)?,
        )
        .map_err(data_err)?;
        let mut csv = String::from("rep,value\n");
        for (i, v) in report.values.iter().enumerate() {
            csv.push_str(&format!("{i},{v}\n"));
        }
        let values_path = out_dir.join(format!("values_{}.csv", variant.key));
        std::fs::write(&values_path, csv).map_err(data_err)?;
        println!(
            "variant {}: mean {:.6}, std {:.6} ({} reps)",
            variant.key, report.mean, report.std, report.reps
        );
        outputs.push(report_path.display().to_string());
        outputs.push(values_path.display().to_string());

        if save_tables && variant.config.mitigate {
            let cfg = &variant.config;
            let povm = build_povm(cfg.design);
            let params = metashadow::noise::scale_noise(&cfg.noise, cfg.h);
            let table_path = out_dir.join(format!("table_{}.csv", variant.key));
            metashadow::emulator::sample_outcomes(
                &cfg.state, &povm, &params, cfg.shots, cfg.reps, cfg.seed,
            )
            .and_then(|set| metashadow::emulator::empirical_table(&set))
            .and_then(|table| metashadow::mitigate::mitigate(&table, &params))
            .and_then(|mit| mit.mitigated.write_csv(&table_path))
            .map_err(|e| fail(4, format!("variant {}: {e}", variant.key)))?;
            outputs.push(table_path.display().to_string());
        }
    }

    let run_manifest = manifest::RunManifest {
        command: "run".to_string(),
        config_hash: manifest::sha256_hex(&config_bytes),
        seed: seed_flag.unwrap_or(spec.seed),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        inputs,
        outputs,
        wall_time_ms: started.elapsed().as_millis(),
    };
    write_text(
        &out_dir.join("manifest.json"),
        &serde_json::to_string_pretty(&run_manifest).map_err(data_err)?,
    )
}

fn cmd_plot(kind: PlotKind, out: &Path, inputs: &[PathBuf]) -> CmdResult {
    let contents: Vec<String> = inputs
        .iter()
        .map(|p| std::fs::read_to_string(p).map_err(data_err))
        .collect::<Result<_, _>>()?;
    let svg = match kind {
        PlotKind::Hist => {
            let reports = parse_reports(inputs, &contents)?;
            svg::render_histogram(&reports).map_err(data_err)?
        }
        PlotKind::Curve => {
            if contents.len() == 1 {
                if let Ok(curve) = serde_json::from_str::<ValidationCurve>(&contents[0]) {
                    svg::render_validation_curve(&curve.points).map_err(data_err)?
                } else {
                    let reports = parse_reports(inputs, &contents)?;
                    svg::render_report_curve(&reports).map_err(data_err)?
                }
            } else {
                let reports = parse_reports(inputs, &contents)?;
                svg::render_report_curve(&reports).map_err(data_err)?
            }
        }
    };
    write_text(out, &svg)
}

fn parse_reports(
    paths: &[PathBuf],
    contents: &[String],
) -> Result<Vec<metashadow::estimate::EstimateReport>, CliError> {
    paths
        .iter()
        .zip(contents)
        .map(|(path, text)| {
            serde_json::from_str(text)
                .map_err(|e| data_err(format!("{}: not a run report: {e}", path.display())))
        })
        .collect()
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{err}");
                    std::process::exit(0);
                }
                _ => {
                    eprint!("{err}");
                    std::process::exit(64);
                }
            }
        }
    };
    if let Some(threads) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let seed = cli.seed;
    let result = match &cli.command {
        Command::PovmCheck { design, out } => cmd_povm_check((*design).into(), out.as_deref()),
        Command::FitPorts { transmission, out } => cmd_fit_ports(transmission, out),
        Command::Emulate {
            transmission,
            shots,
            out,
        } => cmd_emulate(transmission, *shots, seed.unwrap_or(42), out),
        Command::Calibrate {
            counts,
            design,
            starts,
            out,
            diagnostics,
        } => cmd_calibrate(
            counts,
            (*design).into(),
            *starts,
            seed.unwrap_or(42),
            out,
            diagnostics.as_deref(),
        ),
        Command::Validate {
            transmission,
            noise,
            sweep,
            out,
        } => cmd_validate(transmission, noise, *sweep, out),
        Command::Run {
            config,
            out_dir,
            save_tables,
        } => cmd_run(config, out_dir, seed, *save_tables),
        Command::Plot { kind, out, inputs } => cmd_plot(*kind, out, inputs),
    };
    if let Err(err) = result {
        eprintln!("error: {}", err.message);
        std::process::exit(err.code);
    }
}
