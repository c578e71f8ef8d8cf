use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use herald_cli::commands::OUT_DIR_ENV;
use herald_cli::{execute, Command, Invocation};
use herald_core::experiment::Mode;

#[derive(Parser)]
#[command(
    name = "herald",
    version,
    about = "Heralded single-photon source simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Singles, trigger and coincidence rates.
    Simulate(Common),
    /// Photon-number statistics of the heralded output.
    HeraldStats(Common),
    /// Infer mu and the coupling coefficients from measured rates.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// JSON file with signal_singles, idler_singles, gate_rate,
        /// coincidences and trigger_rate.
        #[arg(long)]
        counts: PathBuf,
    },
    /// Compare against an attenuated laser with the same P(1).
    WcpCompare(Common),
    /// Pump-power tradeoff table (sweep.csv).
    Sweep(Common),
    /// Phase-matching angle and tuning curve.
    Phasematch(Common),
    /// Joint spectral intensity (spectrum.csv).
    Spectrum(Common),
    /// HBT g2(0) of the signal arm and of the heralded idler.
    G2(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Analytic,
    #[value(alias = "monte_carlo", alias = "mc")]
    MonteCarlo,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Seed for Monte Carlo runs.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Number of pump pulses for Monte Carlo runs.
    #[arg(long)]
    pulses: Option<u64>,
    /// Dotted scenario key, e.g. `source.mu=0.05`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; defaults to $HERALD_OUT_DIR, then run.output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, common) = match cli.command {
        Sub::Simulate(c) => (Command::Simulate, c),
        Sub::HeraldStats(c) => (Command::HeraldStats, c),
        Sub::Estimate { common, counts } => (Command::Estimate { counts }, common),
        Sub::WcpCompare(c) => (Command::WcpCompare, c),
        Sub::Sweep(c) => (Command::Sweep, c),
        Sub::Phasematch(c) => (Command::Phasematch, c),
        Sub::Spectrum(c) => (Command::Spectrum, c),
        Sub::G2(c) => (Command::G2, c),
    };
    let inv = Invocation {
        scenario: common.scenario,
        overrides: common.overrides,
        seed: common.seed,
        mode: common.mode.map(|m| match m {
            ModeArg::Analytic => Mode::Analytic,
            ModeArg::MonteCarlo => Mode::MonteCarlo,
        }),
        pulses: common.pulses,
        out: common.out,
        env_out_dir: std::env::var_os(OUT_DIR_ENV).map(PathBuf::from),
    };
    match execute(&cmd, &inv) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", outcome.summary);
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let report = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{report}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
