//! Verbs, output files and exit codes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use nqcs_core::linalg::real_block_decompose;
use nqcs_core::lmi::{dump_text, LmiCertificate};
use nqcs_core::overapprox::{refine_until_tight, verify_containment};
use nqcs_core::Error;

use crate::config::{self, Workbench};
use crate::pipeline::{self, SWEEP_HEADER};

pub const EXIT_OK: i32 = 0;
/// A simulation check did not hold.
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_NO_CERTIFICATE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "nqcs", version, about = "Stability and H-infinity certificates for networked quantized control loops")]
pub struct Cli {
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Workbench configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the simulation and containment seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Build the model, solve the LMIs and report a certificate.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Also write every assembled constraint to lmi.txt.
        #[arg(long)]
        dump_lmi: bool,
    },
    /// Largest certified h_mati over the (gamma2, h_mad) grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Fill the runtime_s column (makes the CSV run-dependent).
        #[arg(long)]
        timings: bool,
    },
    /// Monte Carlo ensemble checked against a certificate.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Use this certificate instead of analyzing the configuration.
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
    /// Sample the timing region and check the uncertainty envelope.
    VerifyContainment {
        #[command(flatten)]
        common: Common,
    },
}

impl Verb {
    fn name(&self) -> &'static str {
        match self {
            Verb::Analyze { .. } => "analyze",
            Verb::Sweep { .. } => "sweep",
            Verb::Simulate { .. } => "simulate",
            Verb::VerifyContainment { .. } => "verify-containment",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Verb::Analyze { common, .. }
            | Verb::Sweep { common, .. }
            | Verb::Simulate { common, .. }
            | Verb::VerifyContainment { common } => common,
        }
    }
}

#[derive(Debug)]
pub enum Failure {
    Core(Error),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Io(m) => write!(f, "{m}"),
        }
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Core(Error::Config(_) | Error::Dimension { .. } | Error::Domain(_) | Error::Index { .. }) => EXIT_VALIDATION,
            Failure::Core(Error::TightnessNotAchieved { .. } | Error::CertificateInvalid(_) | Error::InfeasibleAtBracket { .. }) => {
                EXIT_NO_CERTIFICATE
            }
            _ => EXIT_NUMERICAL,
        }
    }
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    io(path, File::create(path)).map(BufWriter::new)
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    io(path, std::fs::write(path, text))
}

/// Written before any computation; names the files the run produces.
fn write_manifest(dir: &Path, verb: &str, wb: &Workbench, outputs: &[&str]) -> Result<(), Failure> {
    let mut t = toml::Table::new();
    t.insert("tool".into(), env!("CARGO_PKG_NAME").into());
    t.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    t.insert("verb".into(), verb.into());
    t.insert("outputs".into(), toml::Value::Array(outputs.iter().map(|&o| o.into()).collect()));
    let mut seeds = toml::Table::new();
    let c = &wb.config;
    seeds.insert("simulation_base".into(), (c.simulation.seed_base as i64).into());
    seeds.insert("containment".into(), (c.containment.seed as i64).into());
    seeds.insert("solver".into(), (c.solver.seed as i64).into());
    t.insert("seeds".into(), seeds.into());
    let echo: toml::Table = toml::from_str(&wb.materialized()).expect("materialized configuration parses");
    t.insert("config".into(), echo.into());
    write_file(&dir.join(format!("{verb}.manifest.toml")), &toml::to_string(&t).expect("manifest serializes"))
}

fn workers(common: &Common) -> usize {
    common.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Loads and validates the configuration with the command-line overrides.
pub fn load(common: &Common) -> Result<Workbench, Failure> {
    let text = io(&common.config, std::fs::read_to_string(&common.config))?;
    let mut cfg = config::parse(&text)?;
    if let Some(s) = common.seed {
        cfg.simulation.seed_base = s;
        cfg.containment.seed = s;
    }
    Ok(config::validate(cfg)?)
}

pub fn execute(cli: &Cli) -> Result<i32, Failure> {
    let verb = &cli.verb;
    let common = verb.common();
    let wb = load(common)?;
    let dir = &common.out;
    io(dir, std::fs::create_dir_all(dir))?;
    if let Some(w) = common.workers {
        // sizing the global pool twice is harmless; only the first call wins
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global();
    }
    match verb {
        Verb::Analyze { dump_lmi, .. } => {
            let mut outputs = vec!["analyze.txt", "model.json", "certificate.json"];
            if *dump_lmi {
                outputs.push("lmi.txt");
            }
            write_manifest(dir, verb.name(), &wb, &outputs)?;
            let a = pipeline::analyze(&wb, &wb.network, &wb.config.lmi, wb.config.containment.in_analyze)?;
            let report = a.report();
            print!("{report}");
            write_file(&dir.join("analyze.txt"), &report)?;
            write_json(&dir.join("model.json"), &a.model)?;
            if *dump_lmi {
                write_file(&dir.join("lmi.txt"), &dump_text(&a.problem))?;
            }
            match &a.certificate {
                Some(c) => {
                    write_json(&dir.join("certificate.json"), c)?;
                    Ok(EXIT_OK)
                }
                None => Ok(EXIT_NO_CERTIFICATE),
            }
        }
        Verb::Sweep { timings, .. } => {
            write_manifest(dir, verb.name(), &wb, &["sweep.csv"])?;
            let path = dir.join("sweep.csv");
            let mut w = csv::Writer::from_writer(create(&path)?);
            io(&path, w.write_record(SWEEP_HEADER).map_err(std::io::Error::from).and_then(|_| w.flush()))?;
            let rows = pipeline::sweep(&wb, workers(common), |row| {
                w.write_record(row.record(*timings))?;
                w.flush()
            })?;
            let (good, total) = pipeline::trend_agreement(&rows);
            println!(
                "{} grid points, {} feasible; trend agreement {good}/{total}",
                rows.len(),
                rows.iter().filter(|r| r.feasible).count()
            );
            Ok(EXIT_OK)
        }
        Verb::Simulate { certificate, .. } => {
            let mut outputs = vec!["trace.csv", "ensemble.csv", "verdict.txt"];
            if certificate.is_none() {
                outputs.extend(["analyze.txt", "certificate.json"]);
            }
            write_manifest(dir, verb.name(), &wb, &outputs)?;
            let cert: LmiCertificate = match certificate {
                Some(p) => {
                    let text = io(p, std::fs::read_to_string(p))?;
                    serde_json::from_str(&text).map_err(|e| Failure::Core(Error::Config(format!("{}: {e}", p.display()))))?
                }
                None => {
                    let a = pipeline::analyze(&wb, &wb.network, &wb.config.lmi, wb.config.containment.in_analyze)?;
                    write_file(&dir.join("analyze.txt"), &a.report())?;
                    match a.certificate {
                        Some(c) => {
                            write_json(&dir.join("certificate.json"), &c)?;
                            c
                        }
                        None => {
                            eprint!("{}", a.report());
                            return Ok(EXIT_NO_CERTIFICATE);
                        }
                    }
                }
            };
            let seed = wb.config.simulation.seed_base;
            let trace = dir.join("trace.csv");
            pipeline::write_trace(&wb, &wb.network, seed, create(&trace)?)?;
            let checks = pipeline::simulate_and_check(&wb, &wb.network, &cert, seed)?;
            let ens = dir.join("ensemble.csv");
            io(&ens, checks.write_ensemble_csv(&cert, create(&ens)?))?;
            let verdict = checks.verdict();
            print!("{verdict}");
            write_file(&dir.join("verdict.txt"), &verdict)?;
            Ok(if checks.all_passed() { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
        Verb::VerifyContainment { .. } => {
            write_manifest(dir, verb.name(), &wb, &["containment.csv", "containment.txt"])?;
            let decomp = real_block_decompose(&wb.structure.lambda)?;
            let model = refine_until_tight(&wb.structure, &decomp, &wb.network, &wb.config.procedure)?;
            let c = &wb.config.containment;
            let rep = verify_containment(&model, &decomp, &wb.structure, &wb.network, c.samples, c.seed)?;
            let path = dir.join("containment.csv");
            let mut w = csv::Writer::from_writer(create(&path)?);
            let rows = std::iter::once(["sigma".to_string(), "h".into(), "tau".into()])
                .chain(rep.violations.iter().map(|&(s, h, t)| [(s + 1).to_string(), format!("{h:.16e}"), format!("{t:.16e}")]));
            for r in rows {
                io(&path, w.write_record(&r).map_err(std::io::Error::from))?;
            }
            io(&path, w.flush())?;
            let text = format!(
                "grid: n_a = {}, n_b = {}\nvarpi: {:.6e}\nsamples: {}\nchecks: {}\nviolations: {}\nmax residual: {:.3e}\nmax block norm: {:.9}\n",
                model.partition.n_a,
                model.partition.n_b,
                model.varpi,
                rep.samples,
                rep.checks,
                rep.violations.len(),
                rep.max_residual,
                rep.max_block_norm
            );
            print!("{text}");
            write_file(&dir.join("containment.txt"), &text)?;
            Ok(if rep.passed() { EXIT_OK } else { EXIT_NUMERICAL })
        }
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut w = create(path)?;
    io(path, serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::from))?;
    io(path, w.flush())
}
