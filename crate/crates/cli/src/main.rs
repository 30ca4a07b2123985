//! `orl`: dataset collection, behavior fitting, training and sweeps.

mod config;
mod error;
mod report;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use orl_core::agents::load_actor;
use orl_core::behavior::{BehaviorConfig, WeightConfig};
use orl_core::data::{load_dataset, save_dataset};
use orl_core::envs::{collect_dataset, evaluate_policy, EnvKind, EnvSpec, PolicyTier};

use config::{AgentKind, RunConfig};
use error::{CliError, CliResult};
use report::Weighting;

#[derive(Debug, Parser)]
#[command(name = "orl", version, about = "Offline RL with uncertainty-weighted reverse-KL regularization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Roll out a scripted policy and save the transitions.
    Collect {
        #[arg(long)]
        env: EnvKind,
        #[arg(long)]
        policy: PolicyTier,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Concatenate datasets collected on the same environment.
    Mix {
        #[arg(required = true, num_args = 2..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the Gaussian behavior model and report per-state weights.
    FitBehavior {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        hidden: Option<Vec<usize>>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long, default_value_t = 10.0)]
        zeta1: f64,
        #[arg(long, default_value_t = 5.0, conflicts_with = "calibrate")]
        zeta2: f64,
        /// Set ζ2 = ζ1 · median log-variance of this dataset.
        #[arg(long)]
        calibrate: bool,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Train one configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a saved actor.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        env: EnvKind,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one configuration under several seeds and aggregate.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        /// Worker threads (default: one per core).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Print a config with every default filled in.
    InitConfig {
        #[arg(long, value_enum, default_value_t = AgentKind::Td3rkl)]
        agent: AgentKind,
    },
}

fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Collect {
            env,
            policy,
            n,
            seed,
            out,
        } => {
            if n == 0 {
                return Err(CliError::Config("--n must be at least 1".into()));
            }
            let data = collect_dataset(env, policy, n, seed)?;
            save_dataset(&data, &out)?;
            let m = data.manifest();
            println!("{} transitions: env={} policy={policy} seed={seed} -> {}", m.total(), m.env, out.display());
        }
        Command::Mix { inputs, out } => {
            let data = run::load_mixture(&inputs)?;
            save_dataset(&data, &out)?;
            for s in &data.manifest().sources {
                println!("{}\t{}\tseed={}", s.policy, s.count, s.seed);
            }
            println!("{} transitions -> {}", data.len(), out.display());
        }
        Command::FitBehavior {
            dataset,
            out,
            seed,
            epochs,
            hidden,
            lr,
            batch_size,
            zeta1,
            zeta2,
            calibrate,
            bins,
        } => {
            if bins == 0 {
                return Err(CliError::Config("--bins must be at least 1".into()));
            }
            let defaults = BehaviorConfig::default();
            let config = BehaviorConfig {
                hidden: hidden.unwrap_or(defaults.hidden),
                epochs: epochs.unwrap_or(defaults.epochs),
                batch_size: batch_size.unwrap_or(defaults.batch_size),
                lr: lr.unwrap_or(defaults.lr),
                ..defaults
            };
            config.validate()?;
            let weighting = if calibrate {
                Weighting::Calibrated { zeta1 }
            } else {
                let w = WeightConfig { zeta1, zeta2 };
                w.validate()?;
                Weighting::Fixed(w)
            };
            let data = load_dataset(&dataset)?;
            let (_, hist) = report::fit_and_report(&data, &config, weighting, bins, seed, &out)?;
            println!("zeta1={} zeta2={}", hist.weights.zeta1, hist.weights.zeta2);
            for s in &hist.sources {
                println!(
                    "{}\tcount={}\tmean_lambda={:.4}\tmean_beta_hat={:.4}",
                    s.policy, s.count, s.mean_lambda, s.mean_beta_hat
                );
            }
        }
        Command::Train { config } => {
            let cfg = RunConfig::load(&config)?;
            let s = run::train(&cfg)?;
            println!(
                "{} seed={} step={} return={:.3} score={:.2} -> {}",
                s.agent,
                s.seed,
                s.final_step,
                s.final_mean_return,
                s.final_normalized_score,
                cfg.out_dir.display()
            );
        }
        Command::Eval {
            checkpoint,
            env,
            episodes,
            seed,
        } => {
            if episodes == 0 {
                return Err(CliError::Config("--episodes must be at least 1".into()));
            }
            let mut actor = load_actor(&checkpoint)?;
            let result = evaluate_policy(&EnvSpec::new(env), &mut actor, episodes, seed)?;
            println!("{}", serde_json::to_string(&result).expect("serializable"));
        }
        Command::Sweep { config, seeds, jobs } => {
            let cfg = RunConfig::load(&config)?;
            let s = run::sweep(&cfg, &seeds, jobs)?;
            println!(
                "{}\t{}\t{} seeds\t{}",
                s.agent,
                s.env,
                s.seeds.len(),
                run::format_mean_std(s.mean, s.std)
            );
            if s.partial {
                let failed: Vec<String> = s.failed.iter().map(|f| format!("seed {}: {}", f.seed, f.error)).collect();
                return Err(CliError::Runtime(format!("partial aggregate, failed runs:\n{}", failed.join("\n"))));
            }
        }
        Command::InitConfig { agent } => print!("{}", RunConfig::template(agent).to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
