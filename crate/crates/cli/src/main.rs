//! Command-line interface: train a router, evaluate checkpoints,
//! sweep the cost-quality frontier, inspect tier ratios, and compute
//! the synthetic oracle frontier.

use clap::{Parser, Subcommand};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use tierroute_core::backend::ChatClient;
use tierroute_core::config::{load_config, RunConfig};
use tierroute_core::corpus::{load_dataset, Embedder};
use tierroute_core::error::{Error, Result};
use tierroute_core::pipeline::PipelineContext;
use tierroute_core::report::{
    format_sig, oracle_csv, ratios_csv, write_sweep_csv, FrontierRow, SIG_DIGITS,
};
use tierroute_core::reward::RewardWindows;
use tierroute_core::router::load_checkpoint;
use tierroute_core::simenv::{oracle_summary, SimEnv};
use tierroute_core::trainer::{evaluate, train, DataEnv, EpisodeEnv, Split, TrainSettings};
use tierroute_core::types::Strategy;

#[derive(Parser)]
#[command(name = "tierroute", version, about = "Budget-tier routing for memory extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a router against the configured environment.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the held-out test split (read-only).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Also judge-score predictions with the configured judge model.
        #[arg(long)]
        judge: bool,
    },
    /// Train one router per lambda and write the frontier CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated lambda values, e.g. 0,0.05,0.1,0.3,0.5,0.7,0.9
        #[arg(long)]
        lambdas: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a checkpoint's per-module tier ratios on the validation
    /// split.
    Ratios {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the synthetic oracle frontier for the given lambdas.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        lambdas: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, lambda, seed, strategy, out } => {
            let mut config = load_config(&config)?;
            config.apply_overrides(lambda, seed, strategy, out)?;
            cmd_train(&config)
        }
        Command::Eval { checkpoint, config, judge } => {
            let config = load_config(&config)?;
            cmd_eval(&config, &checkpoint, judge)
        }
        Command::Sweep { config, lambdas, out } => {
            let config = load_config(&config)?;
            let lambdas = parse_lambdas(&lambdas)?;
            cmd_sweep(&config, &lambdas, &out)
        }
        Command::Ratios { checkpoint, config } => {
            let config = load_config(&config)?;
            cmd_ratios(&config, &checkpoint)
        }
        Command::Oracle { config, lambdas } => {
            let config = load_config(&config)?;
            let lambdas = parse_lambdas(&lambdas)?;
            cmd_oracle(&config, &lambdas)
        }
    }
}

fn parse_lambdas(s: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = s
        .split(',')
        .map(|part| {
            let part = part.trim();
            part.parse::<f64>()
                .map_err(|_| Error::Config(format!("invalid lambda value: {part:?}")))
        })
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(Error::Config("no lambda values given".into()));
    }
    for v in &values {
        if !v.is_finite() || *v < 0.0 {
            return Err(Error::Config(format!(
                "lambda values must be finite and non-negative, got {v}"
            )));
        }
    }
    Ok(values)
}

/// Builds the configured environment and hands it to `f`. Dataset
/// environments borrow backend state, so everything lives in this
/// scope.
fn with_env<T>(
    config: &RunConfig,
    judge: bool,
    f: impl FnOnce(&dyn EpisodeEnv) -> Result<T>,
) -> Result<T> {
    if let Some(sim) = &config.simenv {
        let env = SimEnv::new(sim.clone());
        return f(&env);
    }
    let data = config.data.as_ref().expect("validated config has data or simenv");
    let arch = config.router_arch();
    let embedder = Embedder::new(arch.embed_dim);
    let records = load_dataset(&data.path, data.chunk_size, &embedder)?;
    if records.is_empty() {
        return Err(Error::Config(format!(
            "dataset {} has no records",
            data.path.display()
        )));
    }
    let backends = config.backend_spec()?;
    let prices = config.price_table()?;
    let client = config.make_client();
    let judge_model = if judge {
        match &config.backend.judge_model {
            Some(m) => Some(m.clone()),
            None => {
                return Err(Error::Config(
                    "--judge requires backend.judge_model in the config".into(),
                ))
            }
        }
    } else {
        None
    };
    let ctx = PipelineContext {
        backends: &backends,
        client: client.as_ref().map(|c| c as &dyn ChatClient),
        prices: &prices,
        embedder: &embedder,
        max_tokens: config.backend.max_tokens,
        topic_top_n: config.backend.topic_top_n,
    };
    let env = DataEnv::new(
        records,
        data.k,
        data.split_seed,
        ctx,
        &embedder,
        data.answer_prompt,
        config.backend.answer_model.clone(),
        judge_model,
    );
    f(&env)
}

fn cmd_train(config: &RunConfig) -> Result<()> {
    let settings = TrainSettings {
        ppo: config.ppo_config(),
        arch: config.router_arch(),
        strategy: config.strategy,
        out_dir: config.out_dir(),
        log_episodes: config.log_episodes,
    };
    with_env(config, false, |env| {
        let outcome = train(&settings, env)?;
        println!(
            "trained {} steps (strategy {}, lambda {})",
            outcome.steps_run,
            config.strategy,
            format_sig(config.lambda, SIG_DIGITS)
        );
        if outcome.best_val_reward.is_finite() {
            println!(
                "best validation reward {}",
                format_sig(outcome.best_val_reward, SIG_DIGITS)
            );
        }
        println!("run log: {}", outcome.run_log_path.display());
        println!("final checkpoint: {}", outcome.final_checkpoint.display());
        println!("best checkpoint: {}", outcome.best_checkpoint.display());
        Ok(())
    })
}

fn load_params_for(config: &RunConfig, checkpoint: &Path) -> Result<tierroute_core::router::RouterParams> {
    let (params, _meta) = load_checkpoint(checkpoint)?;
    let expected = config.router_arch();
    if params.arch != expected {
        return Err(Error::Config(format!(
            "checkpoint shape {}x{} does not match the configured router {}x{}",
            params.arch.embed_dim, params.arch.hidden, expected.embed_dim, expected.hidden
        )));
    }
    Ok(params)
}

fn cmd_eval(config: &RunConfig, checkpoint: &Path, judge: bool) -> Result<()> {
    let params = load_params_for(config, checkpoint)?;
    let ppo = config.ppo_config();
    with_env(config, judge, |env| {
        let windows = RewardWindows::new(ppo.window, ppo.epsilon);
        let report = evaluate(&params, env, Split::Test, config.lambda, &windows, ppo.force_alpha)?;
        let summary = json!({
            "split": "test",
            "queries": report.rows.len(),
            "mean_r_task": report.mean_r_task,
            "mean_cost": report.mean_cost,
            "tier_ratios": {
                "filter": report.tier_ratios[0],
                "entity": report.tier_ratios[1],
                "temporal": report.tier_ratios[2],
                "topic": report.tier_ratios[3],
                "summary": report.tier_ratios[4],
            },
            "mean_judge": report.mean_judge,
            "judge_excluded": report.judge_excluded,
        });
        println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
        Ok(())
    })
}

fn cmd_sweep(config: &RunConfig, lambdas: &[f64], out: &Path) -> Result<()> {
    let runs_dir = out.with_extension("runs");
    with_env(config, false, |env| {
        let mut rows = Vec::with_capacity(lambdas.len());
        for &lambda in lambdas {
            let mut point = config.clone();
            point.lambda = lambda;
            point.validate()?;
            let label = format_sig(lambda, SIG_DIGITS);
            let settings = TrainSettings {
                ppo: point.ppo_config(),
                arch: point.router_arch(),
                strategy: point.strategy,
                out_dir: runs_dir.join(format!("lambda-{label}")),
                log_episodes: point.log_episodes,
            };
            let outcome = train(&settings, env)?;
            let windows = RewardWindows::new(settings.ppo.window, settings.ppo.epsilon);
            let report = evaluate(
                &outcome.best_params,
                env,
                Split::Val,
                lambda,
                &windows,
                settings.ppo.force_alpha,
            )?;
            eprintln!(
                "lambda {label}: r_task {} cost {}",
                format_sig(report.mean_r_task, SIG_DIGITS),
                format_sig(report.mean_cost, SIG_DIGITS)
            );
            rows.push(FrontierRow {
                lambda,
                r_task: report.mean_r_task,
                cost: report.mean_cost,
                tier_ratios: report.tier_ratios,
            });
        }
        write_sweep_csv(out, &rows)?;
        println!("wrote {}", out.display());
        Ok(())
    })
}

fn cmd_ratios(config: &RunConfig, checkpoint: &Path) -> Result<()> {
    let params = load_params_for(config, checkpoint)?;
    let ppo = config.ppo_config();
    with_env(config, false, |env| {
        let windows = RewardWindows::new(ppo.window, ppo.epsilon);
        let report = evaluate(&params, env, Split::Val, config.lambda, &windows, ppo.force_alpha)?;
        print!("{}", ratios_csv(&report.tier_ratios));
        Ok(())
    })
}

fn cmd_oracle(config: &RunConfig, lambdas: &[f64]) -> Result<()> {
    let Some(sim) = &config.simenv else {
        return Err(Error::Config(
            "the oracle command needs a [simenv] config".into(),
        ));
    };
    let env = SimEnv::new(sim.clone());
    let tasks = env.tasks(Split::Val);
    let rows: Vec<_> = lambdas
        .iter()
        .map(|&lambda| oracle_summary(&env.config, tasks, lambda))
        .collect();
    print!("{}", oracle_csv(&rows));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_parse_lambdas() {
        assert_eq!(parse_lambdas("0,0.05,0.1").unwrap(), vec![0.0, 0.05, 0.1]);
        assert_eq!(parse_lambdas(" 0.3 , 0.9 ").unwrap(), vec![0.3, 0.9]);
        assert!(parse_lambdas("").is_err());
        assert!(parse_lambdas("0,abc").is_err());
        assert!(parse_lambdas("-0.1").is_err());
        assert!(parse_lambdas("nan").is_err());
    }
}
