//! `icrl`: train, evaluate, and inspect solver/critic policies.

mod oracle_check;
mod overrides;
mod plot;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use icrl::envs::{generate_queries, split_train_eval, write_dataset, Env, EnvKind, Query};
use icrl::harness::metrics::{
    read_metrics_jsonl, write_ablation_csv, write_curve_csv, write_metrics_csv, MetricsLog,
};
use icrl::harness::{
    ablate, critic_swap, evaluate_refinement, fresh_attempt_baseline, TrainConfig, Trainer, Variant,
};
use icrl::objective::save_adam_state;
use icrl::policy::{checkpoint, PolicyParams};
use icrl::rollout::CriticMode;

use overrides::ConfigArgs;

const CONFIG_FILE: &str = "config.toml";
const POLICY_FILE: &str = "policy.ckpt";
const ADAM_FILE: &str = "adam.ckpt";
const METRICS_JSONL: &str = "metrics.jsonl";
const METRICS_CSV: &str = "metrics.csv";
const ROLLOUTS_FILE: &str = "rollouts.jsonl";

#[derive(Parser)]
#[command(name = "icrl", version, about = "Solver/critic policy optimization on synthetic tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write config, metrics, and checkpoints to a run directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write every rollout session as a JSON line.
        #[arg(long)]
        dump_rollouts: bool,
    },
    /// Success-by-round curve of a trained run on its eval set.
    Eval {
        /// Run directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        /// Checkpoint to load instead of the run's final weights.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV file for the curve.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-round evaluation with the critic replaced and the solver fixed.
    SwapCritic {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Critics to compare; all of them by default.
        #[arg(long, value_delimiter = ',')]
        critic: Vec<String>,
        #[arg(long, default_value_t = 4)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train every listed variant on every listed seed.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "icrl,grpo,no_role_adv,no_reweight")]
        variants: Vec<Variant>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check calibration, normalization, and gradient identities by enumeration.
    OracleCheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a query dataset as JSON lines.
    GenData {
        #[arg(long)]
        env: EnvKind,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        first_id: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render SVG curves from a metrics file.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Returns `Ok(false)` when a check ran to completion but failed.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            dump_rollouts,
        } => train(&config.resolve(Some(seed))?, &out, dump_rollouts).map(|_| true),
        Command::Eval {
            run,
            checkpoint,
            rounds,
            seed,
            out,
        } => eval(&run, checkpoint.as_deref(), rounds, seed, out.as_deref()).map(|_| true),
        Command::SwapCritic {
            run,
            checkpoint,
            critic,
            repeats,
            seed,
        } => swap(&run, checkpoint.as_deref(), &critic, repeats, seed).map(|_| true),
        Command::Ablate {
            config,
            seeds,
            variants,
            out,
        } => ablation(&config.resolve(None)?, &seeds, &variants, &out).map(|_| true),
        Command::OracleCheck { instances, seed } => oracle(instances, seed),
        Command::GenData {
            env,
            count,
            seed,
            first_id,
            out,
        } => {
            let env = Env::with_defaults(env)?;
            write_dataset(&out, &generate_queries(&env, count, seed, first_id))?;
            println!("wrote {count} queries to {}", out.display());
            Ok(true)
        }
        Command::Plot { metrics, out } => {
            let m = read_metrics_jsonl(&metrics)?;
            for p in plot::plot_metrics(&m, &out)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
    }
}

fn save_state(trainer: &Trainer, out: &Path) -> Result<()> {
    checkpoint::save(trainer.params(), &out.join(POLICY_FILE))?;
    save_adam_state(trainer.adam_state(), &out.join(ADAM_FILE))?;
    Ok(())
}

fn train(cfg: &TrainConfig, out: &Path, dump_rollouts: bool) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join(CONFIG_FILE), cfg.to_toml_string()?)?;
    let mut trainer = Trainer::new(cfg.clone())?;
    if dump_rollouts {
        let f = File::create(out.join(ROLLOUTS_FILE))?;
        trainer.set_rollout_dump(Box::new(BufWriter::new(f)));
    }
    let mut log = MetricsLog::create(&out.join(METRICS_JSONL))?;
    let mut metrics = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let m = match trainer.step() {
            Ok(m) => m,
            Err(e) => {
                save_state(&trainer, out)?;
                write_metrics_csv(&out.join(METRICS_CSV), &metrics)?;
                bail!(
                    "training halted at step {} ({e}); state after step {} saved to {}",
                    trainer.steps_done() + 1,
                    trainer.steps_done(),
                    out.display()
                );
            }
        };
        log.append(&m)?;
        if let Some(e) = &m.eval {
            eprintln!("step {:>5}  solver {:.3}  eval {:.3?}", m.step, m.solver_mean_reward, e);
        }
        metrics.push(m);
    }
    save_state(&trainer, out)?;
    write_metrics_csv(&out.join(METRICS_CSV), &metrics)?;
    println!("finished {} steps; outputs in {}", cfg.steps, out.display());
    Ok(())
}

fn load_run(run: &Path, ckpt: Option<&Path>) -> Result<(TrainConfig, Env, Vec<Query>, PolicyParams)> {
    let cfg = TrainConfig::load(&run.join(CONFIG_FILE))?;
    let env = Env::new(cfg.env)?;
    let path = ckpt.map_or_else(|| run.join(POLICY_FILE), Path::to_path_buf);
    let params = checkpoint::load(&path, Arc::clone(env.vocab()))
        .with_context(|| format!("loading {}", path.display()))?;
    let (_, eval_set) = split_train_eval(&env, cfg.data.train_size, cfg.data.eval_size, cfg.data.seed);
    Ok((cfg, env, eval_set, params))
}

fn eval(run: &Path, ckpt: Option<&Path>, rounds: Option<usize>, seed: u64, out: Option<&Path>) -> Result<()> {
    let (cfg, env, eval_set, params) = load_run(run, ckpt)?;
    let mut session = cfg.eval_session();
    if let Some(r) = rounds {
        session.max_rounds = r;
    }
    let curve = evaluate_refinement(&params, &env, &eval_set, &session, seed)?;
    for (k, s) in curve.by_round.iter().enumerate() {
        println!("round {}: {s:.4}", k + 1);
    }
    if let Some(path) = out {
        write_curve_csv(path, &curve.by_round)?;
    }
    Ok(())
}

fn swap(run: &Path, ckpt: Option<&Path>, critics: &[String], repeats: usize, seed: u64) -> Result<()> {
    let (cfg, env, eval_set, params) = load_run(run, ckpt)?;
    let modes = if critics.is_empty() {
        vec![
            CriticMode::Learned,
            CriticMode::OracleScripted,
            CriticMode::NoiseScripted,
            CriticMode::Null,
        ]
    } else {
        critics
            .iter()
            .map(|c| parse_critic(c))
            .collect::<Result<Vec<_>>>()?
    };
    let session = cfg.eval_session();
    println!("critic,trials,round1_success,round2_success,mean_critique_tokens");
    for mode in modes {
        let o = critic_swap(&params, &env, &eval_set, mode, &session, seed, repeats)?;
        let len = o.mean_critique_tokens.map(|l| l.to_string()).unwrap_or_default();
        println!(
            "{},{},{},{},{len}",
            critic_name(mode),
            o.trials,
            o.round1_success,
            o.round2_success
        );
    }
    let fresh = fresh_attempt_baseline(&params, &env, &eval_set, session.temperature, seed, repeats)?;
    println!("fresh_attempts,{},,{fresh},", eval_set.len() * repeats);
    Ok(())
}

fn parse_critic(name: &str) -> Result<CriticMode> {
    Ok(match name.trim().replace('-', "_").as_str() {
        "learned" => CriticMode::Learned,
        "oracle" | "oracle_scripted" => CriticMode::OracleScripted,
        "noise" | "noise_scripted" => CriticMode::NoiseScripted,
        "null" => CriticMode::Null,
        other => bail!("unknown critic `{other}`"),
    })
}

fn critic_name(mode: CriticMode) -> &'static str {
    match mode {
        CriticMode::Learned => "learned",
        CriticMode::OracleScripted => "oracle_scripted",
        CriticMode::NoiseScripted => "noise_scripted",
        CriticMode::Null => "null",
    }
}

fn ablation(base: &TrainConfig, seeds: &[u64], variants: &[Variant], out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), base.to_toml_string()?)?;
    let rows = ablate(base, variants, seeds)?;
    for r in &rows {
        let path = out.join(format!("metrics_{}_seed{}.jsonl", r.variant, r.seed));
        icrl::harness::metrics::write_metrics_jsonl(&path, &r.metrics)?;
        println!("{} seed {}: round-1 {:.4}", r.variant, r.seed, r.final_round1_success);
    }
    write_ablation_csv(&out.join("ablation.csv"), &rows)?;
    Ok(())
}

fn oracle(instances: usize, seed: u64) -> Result<bool> {
    if instances == 0 {
        bail!("oracle-check needs at least one instance");
    }
    let (checks, cap_bias) = oracle_check::run(instances, seed)?;
    let mut ok = true;
    for c in &checks {
        let tag = if c.passed() { "PASS" } else { "FAIL" };
        println!("{tag} {}: max error {:.3e} (tolerance {:.0e})", c.name, c.worst, c.tolerance);
        ok &= c.passed();
    }
    println!("INFO capped weights (w_max = 2): max |lhs - rhs| {cap_bias:.3e}");
    Ok(ok)
}
