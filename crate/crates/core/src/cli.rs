//! Command-line front end.
//!
//! Exit codes: 0 pass, 1 fail, 2 hypothesis not met (or no zero of `s'` for
//! the zero-crossing check), 64 usage error, 65 configuration error,
//! 70 step-size underflow, 74 I/O error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::error::Error;
use crate::experiments::{
    run_conservation_check, run_gronwall_check, run_identity_check, run_lifespan_sweep, run_zero_crossing_check,
    ConservationKind, Report, Verdict,
};
use crate::integrator::{integrate, TrajectoryStatus};
use crate::io::{parse_config, write_outputs, RunConfig, Table, VerdictDoc};
use crate::spectral::make_initial_state;

pub const EXIT_USAGE: i32 = 64;
pub const EXIT_CONFIG: i32 = 65;
pub const EXIT_SOFTWARE: i32 = 70;
pub const EXIT_IO: i32 = 74;

#[derive(Debug, Parser)]
#[command(name = "kirchhoff", version, about = "Spectral Galerkin simulator for the Kirchhoff equation")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one trajectory and write its sample table.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one check and exit with its verdict.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lifespan sweep over `experiment.eps_list`.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic derivatives of `m` and `1/√m` with central differences.
    CheckDerivs {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    FirstOrder,
    Pokhozhaev,
    Identity,
    ZeroCrossing,
    Gronwall,
}

fn error_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Domain { .. } | Error::Positivity { .. } | Error::Range { .. } => EXIT_CONFIG,
        Error::StepFailure { .. } => EXIT_SOFTWARE,
        Error::Io(_) => EXIT_IO,
    }
}

fn load(path: &Path) -> Result<RunConfig, Error> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

fn simulate(cfg: &RunConfig) -> Result<Report, Error> {
    let state = make_initial_state(&cfg.initial_data)?;
    let traj = integrate(&state, &cfg.nl, cfg.experiment.t_end, &cfg.integrator, &[])?;
    let h0 = traj.initial().h1;
    let drift = traj.samples.iter().map(|s| (s.h1 - h0).abs()).fold(0.0, f64::max);
    let mut report = Report {
        experiment: "simulate".into(),
        verdict: Verdict::from_bool(traj.status != TrajectoryStatus::StepFailure),
        max_drift: if h0 != 0.0 { drift / h0.abs() } else { drift },
        tolerances: Default::default(),
        status: Some(traj.status),
        warnings: Vec::new(),
        details: json!({
            "final": traj.last(),
            "accepted_steps": traj.accepted_steps,
            "rejected_steps": traj.rejected_steps,
        }),
        samples: traj.samples,
    };
    match traj.status {
        TrajectoryStatus::DomainExit => report.warnings.push("s left the domain of m".into()),
        TrajectoryStatus::StepFailure => report.warnings.push("step budget exhausted before t_end".into()),
        _ => {}
    }
    Ok(report)
}

fn check_derivs(cfg: &RunConfig) -> Result<Report, Error> {
    let e = &cfg.experiment;
    let d = cfg.nl.check_derivatives(&e.derivative_grid, e.derivative_step)?;
    let mut report = Report {
        experiment: "derivative_gate".into(),
        verdict: Verdict::from_bool(d.max_error() <= e.tolerances.derivative),
        max_drift: d.max_error(),
        tolerances: Default::default(),
        status: None,
        warnings: Vec::new(),
        details: json!(d),
        samples: Vec::new(),
    };
    report.tolerances.insert("relative_error".into(), e.tolerances.derivative);
    Ok(report)
}

fn execute(command: &Command) -> Result<VerdictDoc, Error> {
    let (config, out) = match command {
        Command::Simulate { config, out }
        | Command::Verify { config, out, .. }
        | Command::Sweep { config, out }
        | Command::CheckDerivs { config, out } => (config, out),
    };
    let cfg = load(config)?;
    let dir = out.as_deref().or(cfg.output_dir.as_deref());
    let tol = &cfg.experiment.tolerances;
    let setup = cfg.setup();
    match command {
        Command::Simulate { .. } => {
            let r = simulate(&cfg)?;
            write_outputs(dir, "simulate", &r, Table::Samples(&r.samples), cfg.echo())
        }
        Command::Verify { kind, .. } => {
            let r = match kind {
                Kind::FirstOrder => run_conservation_check(ConservationKind::FirstOrder, &setup, tol)?,
                Kind::Pokhozhaev => run_conservation_check(ConservationKind::Pokhozhaev, &setup, tol)?,
                Kind::Identity => run_identity_check(&setup, tol)?,
                Kind::ZeroCrossing => run_zero_crossing_check(&setup, tol)?,
                Kind::Gronwall => run_gronwall_check(&setup, tol)?,
            };
            let stem = r.experiment.clone();
            write_outputs(dir, &stem, &r, Table::Samples(&r.samples), cfg.echo())
        }
        Command::Sweep { .. } => {
            let o = run_lifespan_sweep(&setup, &cfg.experiment.sweep)?;
            write_outputs(dir, "lifespan_sweep", &o.report, Table::Sweep(&o.records), cfg.echo())
        }
        Command::CheckDerivs { .. } => {
            let r = check_derivs(&cfg)?;
            write_outputs(dir, "derivative_gate", &r, Table::Samples(&[]), cfg.echo())
        }
    }
}

/// Runs the command line `args` (program name first) and returns the exit
/// code. The verdict document goes to `stdout`, diagnostics to `stderr`.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    0
                }
                _ => {
                    let _ = write!(stderr, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(&cli.command) {
        Ok(doc) => {
            let _ = writeln!(stdout, "{}", doc.to_json());
            doc.verdict.exit_code()
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            error_code(&e)
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run_with(args, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
