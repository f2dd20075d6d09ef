//! `qhaa` command-line driver.
//!
//! Exit codes: 0 ok, 2 config, 3 stability, 4 register cap, 5 divergence, 1 other.
//! Errors are printed to stderr as one JSON object.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use config::{Delta, Mode, ReadoutKind, RunConfig};
use qhaa::embedding::SourceMode;
use qhaa::homotopy::{GuessMode, Normalization};
use qhaa::lcu::LcuMode;
use qhaa::marching::SchemeKind;

#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub kind: String,
    pub message: String,
    pub exit_code: u8,
}

impl CliError {
    pub fn new(kind: &str, message: impl Into<String>, exit_code: u8) -> Self {
        CliError {
            kind: kind.into(),
            message: message.into(),
            exit_code,
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message, 2)
    }

    pub fn divergence(message: impl Into<String>) -> Self {
        Self::new("divergence", message, 5)
    }
}

impl From<qhaa::Error> for CliError {
    fn from(e: qhaa::Error) -> Self {
        use qhaa::Error::*;
        let (kind, code) = match &e {
            InvalidGrid(_) | InvalidArgument(_) | IncompatibleGrids { .. } => ("config", 2),
            StabilityViolation(_) => ("stability", 3),
            RegisterCap { .. } => ("register-cap", 4),
            DivergentSeries(_) | NeumannDivergence(_) => ("divergence", 5),
            _ => ("error", 1),
        };
        CliError::new(kind, e.to_string(), code)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new("io", e.to_string(), 1)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::new("io", e.to_string(), 1)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::new("io", e.to_string(), 1)
    }
}

/// Parses a flag value with the same spelling as the config file.
fn kebab<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "qhaa", version, about = "Homotopy-analysis Burgers solver with classical and emulated LCU time marching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Derive the embedded linear system and write it with its diagnostics.
    Embed(Common),
    /// Run one solve and write the trajectory, diagnostics and emulation records.
    Solve(Common),
    /// MSE against the fine-grid reference over an order x h_hat grid.
    Sweep(SweepArgs),
    /// Run the fine-grid reference and write fine and restricted trajectories.
    Dns(Common),
    /// Print the series diagnostics report.
    Diagnose(Common),
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    h_hat: Option<f64>,
    #[arg(long)]
    order: Option<usize>,
    /// Number of grid points.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    zeta: Option<f64>,
    /// sequential | embedded | tmcqc2 | oneshot-lcu
    #[arg(long, value_parser = kebab::<Mode>)]
    mode: Option<Mode>,
    /// explicit-iterative | implicit-iterative | explicit-oneshot | implicit-oneshot
    #[arg(long, value_parser = kebab::<SchemeKind>)]
    kind: Option<SchemeKind>,
    #[arg(long)]
    neumann_p: Option<usize>,
    #[arg(long)]
    padding_c: Option<usize>,
    /// normalized | raw
    #[arg(long, value_parser = kebab::<Normalization>)]
    normalization: Option<Normalization>,
    /// analytic | discrete-heat
    #[arg(long, value_parser = kebab::<GuessMode>)]
    guess: Option<GuessMode>,
    /// affine | coupled
    #[arg(long, value_parser = kebab::<SourceMode>)]
    source_mode: Option<SourceMode>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Second epsilon for Richardson extrapolation.
    #[arg(long)]
    epsilon2: Option<f64>,
    /// `auto` or a value.
    #[arg(long)]
    delta: Option<String>,
    /// dilated | split
    #[arg(long, value_parser = kebab::<LcuMode>)]
    lcu_mode: Option<LcuMode>,
    /// Sample this many shots (sets readout to shots).
    #[arg(long)]
    shots: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_dns: Option<usize>,
    #[arg(long)]
    dns_dt: Option<f64>,
    #[arg(long, env = "QHAA_OUT")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated orders.
    #[arg(long, value_delimiter = ',', default_value = "10,20,40,60,80")]
    orders: Vec<usize>,
    /// Comma-separated h_hat values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true,
          default_value = "-1.0,-0.9,-0.8,-0.7,-0.6,-0.5,-0.4,-0.3,-0.2,-0.1")]
    h_hats: Vec<f64>,
    /// Worker threads; 0 uses every logical core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("cannot read {}: {e}", p.display())))?;
                RunConfig::from_toml(&text)?
            }
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:ident => $($path:ident).+) => {
                if let Some(v) = self.$flag.clone() {
                    c.$($path).+ = v;
                }
            };
        }
        set!(nu => problem.nu);
        set!(h_hat => homotopy.h_hat);
        set!(order => homotopy.order);
        set!(grid => problem.n_grid);
        set!(dt => scheme.dt);
        set!(tau => scheme.tau);
        set!(zeta => scheme.zeta);
        set!(mode => scheme.mode);
        set!(kind => scheme.kind);
        set!(neumann_p => scheme.neumann_p);
        set!(normalization => homotopy.normalization);
        set!(guess => homotopy.guess);
        set!(source_mode => homotopy.source_mode);
        set!(epsilon => quantum.epsilon);
        set!(lcu_mode => quantum.lcu_mode);
        set!(seed => quantum.seed);
        set!(n_dns => dns.n_dns);
        if let Some(p) = self.padding_c {
            c.scheme.padding_c = Some(p);
        }
        if let Some(e) = self.epsilon2 {
            c.quantum.epsilon2 = Some(e);
        }
        if let Some(d) = self.dns_dt {
            c.dns.dt = Some(d);
        }
        if let Some(d) = &self.delta {
            c.quantum.delta = if d == "auto" {
                Delta::Auto(config::AutoTag::Auto)
            } else {
                Delta::Value(d.parse().map_err(|_| CliError::config(format!("bad --delta `{d}`")))?)
            };
        }
        if let Some(n) = self.shots {
            c.quantum.shots = n;
            c.quantum.readout = ReadoutKind::Shots;
        }
        if let Some(o) = &self.out {
            c.outputs.directory = o.display().to_string();
        }
        let quantum_mode = matches!(c.scheme.mode, Mode::Tmcqc2 | Mode::OneshotLcu);
        if c.quantum.enabled && !quantum_mode {
            return Err(CliError::config("quantum.enabled needs mode tmcqc2 or oneshot-lcu"));
        }
        c.quantum.enabled = quantum_mode;
        c.validate()?;
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Embed(a) => commands::embed(&a.resolve()?),
        Command::Solve(a) => commands::solve(&a.resolve()?),
        Command::Sweep(a) => {
            if a.orders.is_empty() || a.h_hats.is_empty() {
                return Err(CliError::config("--orders and --h-hats must be non-empty"));
            }
            commands::sweep(&a.common.resolve()?, &a.orders, &a.h_hats, a.workers)
        }
        Command::Dns(a) => commands::dns(&a.resolve()?),
        Command::Diagnose(a) => commands::diagnose(&a.resolve()?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let err = CliError::config(e.to_string().trim().to_string());
            eprintln!("{}", serde_json::json!({ "error": err }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e }));
            ExitCode::from(e.exit_code)
        }
    }
}
