mod commands;
mod manifest;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "gridwave", version, about = "Power-system dynamics and small-signal analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Io {
    /// Case directory.
    #[arg(long)]
    pub case: PathBuf,
    /// Output directory, created if absent.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write SVG renderings.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Args, Debug, Clone)]
pub struct PfArgs {
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 30)]
    pub max_iter: usize,
}

#[derive(Args, Debug, Clone)]
pub struct SimArgs {
    /// Step size in seconds; defaults to the scenario value.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Final time in seconds; defaults to the scenario value.
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub record_every: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub init_tol: f64,
}

#[derive(Args, Debug, Clone)]
pub struct LinArgs {
    /// Input label; repeat for several. Defaults to the scenario selection,
    /// then to every Gk.v_ref and RESk.q_ref.
    #[arg(long = "input")]
    pub inputs: Vec<String>,
    /// Output label; repeat for several. Defaults to the scenario selection,
    /// then to every Gk.omega.
    #[arg(long = "output")]
    pub outputs: Vec<String>,
    /// Keep absolute rotor angles instead of the scenario setting.
    #[arg(long, conflicts_with = "relative_angles")]
    pub absolute_angles: bool,
    /// Use angles relative to a reference machine.
    #[arg(long)]
    pub relative_angles: bool,
    #[arg(long, default_value_t = 1e-5)]
    pub equilibrium_tol: f64,
    #[arg(long, default_value_t = 1.0)]
    pub step_scale: f64,
}

#[derive(Args, Debug, Clone)]
pub struct ModalArgs {
    #[command(flatten)]
    pub lin: LinArgs,
    /// Damping threshold in percent; defaults to the scenario value.
    #[arg(long)]
    pub zeta_threshold: Option<f64>,
    /// Glob on state labels for mode shapes.
    #[arg(long, default_value = "*")]
    pub filter: String,
}

#[derive(Args, Debug, Clone)]
pub struct FreqArgs {
    #[arg(long, default_value = "omega_s")]
    pub input: String,
    #[arg(long, default_value = "G1.omega")]
    pub output: String,
    #[arg(long, default_value_t = 1e-2)]
    pub wmin: f64,
    #[arg(long, default_value_t = 1e3)]
    pub wmax: f64,
    #[arg(long, default_value_t = 400)]
    pub points: usize,
    #[arg(long, conflicts_with = "relative_angles")]
    pub absolute_angles: bool,
    #[arg(long)]
    pub relative_angles: bool,
    #[arg(long, default_value_t = 1e-5)]
    pub equilibrium_tol: f64,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve the AC power flow.
    Powerflow {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        pf: PfArgs,
        /// Dump the bus and reduced admittance matrices.
        #[arg(long)]
        dump_ybus: bool,
    },
    /// Run the time-domain scenario.
    Simulate {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Write the state-space matrices at the initial equilibrium.
    Linearize {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        lin: LinArgs,
    },
    /// Eigenvalues, damping and mode shapes.
    Modes {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        modal: ModalArgs,
    },
    /// Participation factors.
    Participation {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        modal: ModalArgs,
    },
    /// Modal residues and controller-site ranking.
    Residues {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        modal: ModalArgs,
    },
    /// Frequency response, margins, poles and zeros of one channel.
    Freqresp {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        freq: FreqArgs,
    },
    /// Check a case against every record invariant.
    Validate {
        #[arg(long)]
        case: PathBuf,
    },
    /// Full pipeline: power flow, flat run, fault run, modal and frequency analysis.
    Run {
        #[command(flatten)]
        io: Io,
        #[arg(long, default_value = "omega_s")]
        input: String,
        #[arg(long, default_value = "G1.omega")]
        output: String,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
