//! Command-line front end: one JSON run configuration drives clustering,
//! profiling, simulation, training and reporting.

mod commands;
mod config;
mod report;
pub mod synth;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::Error;

pub use commands::{
    ClusterSummary, Overlap, ProfileReport, SimulationSummary, SubclusterSummary, TrainingRun,
    TrainingSummary,
};
pub use config::{
    explain_defaults, ClusteringConfig, Normalization, Paths, ProfilingConfig, RewardSweep, RunConfig,
    ScadaConfig, SimulationConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "windfleet", version, about = "Wind-farm zoning, load profiles and storm shutdown learning")]
pub struct Cli {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default from the config, else ./out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print every default with its origin and exit.
    #[arg(long)]
    pub explain_defaults: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit operational zones to windowed SCADA means.
    Cluster {
        #[arg(long)]
        scada: Option<PathBuf>,
    },
    /// Build per-zone load duration/revolution profiles.
    Profile {
        #[arg(long)]
        scada: Option<PathBuf>,
        #[arg(long)]
        assignment: Option<PathBuf>,
    },
    /// Run the storm simulator, optionally under a shutdown policy.
    Simulate {
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Train one shutdown policy per configured penalty.
    Train {
        /// Comma-separated penalties, overriding the config.
        #[arg(long, value_delimiter = ',')]
        penalties: Vec<f64>,
    },
    /// Aggregate existing outputs into a Markdown report and plot-ready CSVs.
    Report,
    /// Write a synthetic four-zone SCADA file.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 240)]
        seconds: i64,
    },
}

/// Failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Numerical(_) => EXIT_NUMERICAL,
            _ => EXIT_INPUT,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl CliError {
    pub(crate) fn input(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e).into())
}

pub(crate) fn create_file(path: &Path) -> CliResult<std::io::BufWriter<fs::File>> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e).into())
}

pub(crate) fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e).into())
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_file(path)?;
    serde_json::from_str(&text).map_err(|source| {
        Error::Json {
            context: path.display().to_string(),
            source,
        }
        .into()
    })
}

pub(crate) fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

/// Parses arguments and runs, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    if cli.explain_defaults {
        print!("{}", explain_defaults());
        return Ok(());
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = cli.out {
        cfg.paths.out = out;
    }
    let Some(command) = cli.command else {
        return Err(CliError::input("no command given; see --help"));
    };
    let out = cfg.paths.out.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    match command {
        Command::Cluster { scada } => {
            let scada = scada.or(cfg.paths.scada.clone()).ok_or_else(|| CliError::input("no SCADA file given"))?;
            commands::cmd_cluster(&cfg, &scada, &out)
        }
        Command::Profile { scada, assignment } => {
            let scada = scada.or(cfg.paths.scada.clone()).ok_or_else(|| CliError::input("no SCADA file given"))?;
            let assignment = assignment
                .or(cfg.paths.assignment.clone())
                .unwrap_or_else(|| out.join("assignment.csv"));
            commands::cmd_profile(&cfg, &scada, &assignment, &out)
        }
        Command::Simulate { policy } => {
            let policy = policy.or(cfg.simulation.policy.clone());
            commands::cmd_simulate(&cfg, policy.as_deref(), &out)
        }
        Command::Train { penalties } => {
            if !penalties.is_empty() {
                cfg.reward.penalties = penalties;
                cfg.validate()?;
            }
            commands::cmd_train(&cfg, &out)
        }
        Command::Report => report::cmd_report(&cfg, &out),
        Command::Synth { output, seconds } => {
            let (records, _) = synth::four_zone_scada(
                &cfg.layout,
                cfg.normalization.power,
                cfg.normalization.rotor,
                seconds,
                cfg.clustering.seed,
            );
            let f = create_file(&output)?;
            synth::write_scada_csv(&records, f)?;
            Ok(())
        }
    }
}
