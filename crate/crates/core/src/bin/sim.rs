//! Scenario runner.
//!
//! Each subcommand runs one scenario and writes a JSONL log plus a CSV
//! table into the output directory. A JSON config file (`--scenario`,
//! alias `--config`) supplies parameters; command-line flags override the
//! most common ones. Logging goes to stderr and is controlled by the
//! `SIM_LOG_LEVEL` environment variable (`error`..`trace`).
//!
//! Exit codes: 0 success, 2 bad configuration or flags, 3 simulation
//! failure, 4 I/O failure.

use clap::{Parser, Subcommand};
use qauto_core::scenario::{
    run_to_files, ScenarioConfig, ScenarioError, ScenarioSpec,
};
use qauto_core::spdc::{BellState, ChshAngles};
use std::fs;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "sim",
    version,
    about = "Deterministic quantum-link and flight-control scenario runner"
)]
struct Cli {
    /// JSON scenario file; flags still override its values.
    #[arg(long, visible_alias = "config", global = true, value_name = "FILE")]
    scenario: Option<PathBuf>,
    /// Master seed (overrides the file's seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory the artifacts are written into.
    #[arg(long, global = true, value_name = "DIR", default_value = "runs")]
    out: PathBuf,
    /// Number of independent trials.
    #[arg(long, global = true, default_value_t = 1)]
    trials: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Prepare-and-measure key distribution with sifting and an
    /// eavesdropper alarm.
    Bb84 {
        /// Number of qubits sent.
        #[arg(long, value_name = "N")]
        n: Option<usize>,
        /// Fraction of qubits intercepted and resent in a random basis.
        #[arg(long, value_name = "F")]
        eve_fraction: Option<f64>,
    },
    /// Polarization-entangled pair statistics and the coincidence-driven
    /// trigger signal.
    Entangle {
        /// Pairs sampled per analyzer setting.
        #[arg(long, value_name = "N")]
        pairs: Option<u64>,
        /// Bell state: phi_plus, phi_minus, psi_plus, or psi_minus.
        #[arg(long, value_name = "STATE")]
        state: Option<String>,
        /// Analyzer settings a1,a2,b1,b2 in degrees (default: matched to
        /// the state).
        #[arg(long, value_name = "A1,A2,B1,B2")]
        angles: Option<String>,
        /// Detector efficiency for both arms.
        #[arg(long, value_name = "ETA")]
        efficiency: Option<f64>,
        /// Coincidence window (seconds).
        #[arg(long, value_name = "TAU")]
        window: Option<f64>,
    },
    /// Leader-referenced formation acquisition from a perturbed start.
    Formation {
        /// Run length (seconds).
        #[arg(long, value_name = "T")]
        duration: Option<f64>,
        /// Half-width of the initial position scatter (meters).
        #[arg(long, value_name = "R")]
        perturbation: Option<f64>,
    },
    /// Closed-loop transfer-function response, optionally gated.
    Loop {
        /// Simulation horizon (seconds).
        #[arg(long, value_name = "T")]
        t_final: Option<f64>,
    },
    /// First-order perturbation theory validated against exact
    /// propagation; prints the λ-sweep table to stdout.
    Perturb {
        /// Perturbation strength.
        #[arg(long, value_name = "L")]
        lambda: Option<f64>,
    },
    /// Full mission: key exchange, entanglement trigger, then a gated
    /// formation maneuver.
    Combined {
        /// Fraction of key qubits intercepted.
        #[arg(long, value_name = "F")]
        eve_fraction: Option<f64>,
        /// Flip one ciphertext bit in flight.
        #[arg(long)]
        corrupt: bool,
        /// When the engage command is issued (seconds).
        #[arg(long, value_name = "T")]
        t_command: Option<f64>,
    },
}

impl Command {
    fn kind(&self) -> &'static str {
        match self {
            Command::Bb84 { .. } => "bb84",
            Command::Entangle { .. } => "entangle",
            Command::Formation { .. } => "formation",
            Command::Loop { .. } => "loop",
            Command::Perturb { .. } => "perturb",
            Command::Combined { .. } => "combined",
        }
    }

    /// Fresh config with this subcommand's default parameters.
    fn default_spec(&self) -> ScenarioSpec {
        match self {
            Command::Bb84 { .. } => ScenarioSpec::Bb84(Default::default()),
            Command::Entangle { .. } => ScenarioSpec::Entangle(Default::default()),
            Command::Formation { .. } => ScenarioSpec::Formation(Default::default()),
            Command::Loop { .. } => ScenarioSpec::ClosedLoop(Default::default()),
            Command::Perturb { .. } => ScenarioSpec::Perturb(Default::default()),
            Command::Combined { .. } => ScenarioSpec::Combined(Default::default()),
        }
    }

    fn apply(&self, spec: &mut ScenarioSpec) -> Result<(), ScenarioError> {
        match (spec, self) {
            (ScenarioSpec::Bb84(p), Command::Bb84 { n, eve_fraction }) => {
                if let Some(n) = n {
                    p.n_qubits = *n;
                }
                if let Some(f) = eve_fraction {
                    p.eve_fraction = *f;
                }
            }
            (
                ScenarioSpec::Entangle(p),
                Command::Entangle { pairs, state, angles, efficiency, window },
            ) => {
                if let Some(n) = pairs {
                    p.pairs_per_setting = *n;
                }
                if let Some(name) = state {
                    p.state = parse_state(name)?;
                }
                if let Some(list) = angles {
                    p.angles = Some(parse_angles(list)?);
                }
                if let Some(eta) = efficiency {
                    p.detector.efficiency = *eta;
                }
                if let Some(tau) = window {
                    p.window_s = *tau;
                }
            }
            (ScenarioSpec::Formation(p), Command::Formation { duration, perturbation }) => {
                if let Some(t) = duration {
                    p.duration = *t;
                }
                if let Some(r) = perturbation {
                    p.initial_perturbation = *r;
                }
            }
            (ScenarioSpec::ClosedLoop(p), Command::Loop { t_final }) => {
                if let Some(t) = t_final {
                    p.t_final = *t;
                }
            }
            (ScenarioSpec::Perturb(p), Command::Perturb { lambda }) => {
                if let Some(l) = lambda {
                    p.lambda = *l;
                }
            }
            (
                ScenarioSpec::Combined(p),
                Command::Combined { eve_fraction, corrupt, t_command },
            ) => {
                if let Some(f) = eve_fraction {
                    p.bb84.eve_fraction = *f;
                }
                if *corrupt {
                    p.corrupt_command = true;
                }
                if let Some(t) = t_command {
                    p.t_command = *t;
                }
            }
            _ => unreachable!("kind agreement is checked before applying flags"),
        }
        Ok(())
    }
}

fn parse_state(name: &str) -> Result<BellState, ScenarioError> {
    serde_json::from_value(serde_json::json!(name)).map_err(|_| {
        ScenarioError::Schema(format!(
            "unknown Bell state '{name}' (expected phi_plus, phi_minus, psi_plus, or psi_minus)"
        ))
    })
}

fn parse_angles(list: &str) -> Result<ChshAngles, ScenarioError> {
    let parts: Vec<f64> = list
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| ScenarioError::Schema(format!("angles '{list}' are not numbers")))?;
    match parts[..] {
        [a1, a2, b1, b2] => Ok(ChshAngles { a1_deg: a1, a2_deg: a2, b1_deg: b1, b2_deg: b2 }),
        _ => Err(ScenarioError::Schema(format!(
            "expected four comma-separated angles, got {}",
            parts.len()
        ))),
    }
}

fn load_config(cli: &Cli) -> Result<ScenarioConfig, ScenarioError> {
    let mut config = match &cli.scenario {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            let config = ScenarioConfig::from_json(&text)?;
            if config.kind_name() != cli.command.kind() {
                return Err(ScenarioError::Schema(format!(
                    "scenario file describes '{}' but the subcommand is '{}'",
                    config.kind_name(),
                    cli.command.kind()
                )));
            }
            config
        }
        None => ScenarioConfig {
            name: None,
            seed: 0,
            scenario: cli.command.default_spec(),
        },
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    cli.command.apply(&mut config.scenario)?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), ScenarioError> {
    let config = load_config(cli)?;
    let artifacts = run_to_files(&config, cli.trials, &cli.out)?;
    println!(
        "scenario {} (seed {}, {} trial{})",
        config.kind_name(),
        config.seed,
        cli.trials,
        if cli.trials == 1 { "" } else { "s" }
    );
    println!("log: {}", artifacts.log_path.display());
    println!("csv: {}", artifacts.csv_path.display());
    println!("summary: {}", artifacts.summary);
    if matches!(cli.command, Command::Perturb { .. }) {
        print!("{}", fs::read_to_string(&artifacts.csv_path)?);
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter("SIM_LOG_LEVEL"))
        .format_timestamp(None)
        .init();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
