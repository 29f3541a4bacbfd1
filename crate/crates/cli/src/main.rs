use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pssr::experiment::{
    evaluate_report, mine_training_set, print_summary, run_active_learning, run_hardness_study,
    run_pipeline, run_proportion_ablation, run_shift_study, train_reference, write_evaluation,
    write_train_log, ExperimentConfig, SeedData,
};
use pssr::model::{train_with_remining, Head, Method, MinedCache, Recognizer, TrainLog};

/// Calibrated sequence recognition on a synthetic task.
#[derive(Parser)]
#[command(name = "pssr", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; repeat for several. Replaces the config's seed list.
    #[arg(long = "seed", global = true)]
    seeds: Vec<u64>,
    /// Output root. Overrides PSSR_OUT and the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Training method; repeat for several. Replaces the config's list.
    #[arg(long = "method", global = true)]
    methods: Vec<Method>,
    /// Restrict to one head.
    #[arg(long, global = true)]
    head: Option<Head>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test splits for every seed.
    Synth,
    /// Train the CTC reference model used for mining.
    TrainRef,
    /// Mine similar sets for the training split with the reference model.
    Mine,
    /// Train every (head, method) cell on saved data.
    Train,
    /// Evaluate trained cells on the test split.
    Eval,
    /// Full pipeline: train, evaluate and summarize every cell.
    Report,
    /// ECE across hardness ratios.
    StudyHardness,
    /// Evaluation under feature corruptions.
    StudyShift,
    /// Regularized runs across perception fractions.
    StudyAblation,
    /// Simulated-oracle active learning.
    ActiveLearn,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = std::env::var_os("PSSR_OUT") {
        cfg.out = out.into();
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if !common.seeds.is_empty() {
        cfg.seeds = common.seeds.clone();
    }
    if !common.methods.is_empty() {
        cfg.methods = common.methods.clone();
    }
    if let Some(head) = common.head {
        cfg.heads = vec![head];
        cfg.active.head = head;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(cfg: &ExperimentConfig, seed: u64) -> Result<SeedData> {
    SeedData::load(cfg, seed).with_context(|| format!("no data for seed {seed}; run `pssr synth` first"))
}

fn reference_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.seed_dir(seed).join("reference")
}

fn mined_path(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.seed_dir(seed).join("mined.jsonl")
}

fn train_cell(
    cfg: &ExperimentConfig,
    data: &SeedData,
    head: Head,
    method: Method,
) -> Result<(Recognizer, TrainLog)> {
    let tc = cfg.train_config(head, method, data.seed);
    let mined = if method == Method::Pssr {
        let path = mined_path(cfg, data.seed);
        Some(MinedCache::load(&path).context("no mined sets; run `pssr mine` first")?)
    } else {
        None
    };
    let lm = (tc.remine_every > 0).then_some(&data.lm);
    let val = (!data.val.is_empty()).then_some(&data.val);
    Ok(train_with_remining(&tc, &data.train, val, mined.as_ref(), lm)?)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Synth => {
            for &seed in &cfg.seeds {
                SeedData::generate(&cfg, seed)?.save(&cfg)?;
                log::info!("seed {seed}: data written to {}", SeedData::data_dir(&cfg, seed).display());
            }
        }
        Command::TrainRef => {
            for &seed in &cfg.seeds {
                let data = load_data(&cfg, seed)?;
                let (model, log) = train_reference(&cfg, &data)?;
                let dir = reference_dir(&cfg, seed);
                write_train_log(&dir, &log)?;
                model.save(&dir.join("model.txt"))?;
                data.lm.save(&dir.join("lm.txt"))?;
            }
        }
        Command::Mine => {
            for &seed in &cfg.seeds {
                let data = load_data(&cfg, seed)?;
                let path = reference_dir(&cfg, seed).join("model.txt");
                let reference = Recognizer::load(&path)
                    .context("no reference model; run `pssr train-ref` first")?;
                mine_training_set(&data, &reference, &cfg.pssr)?.save(&mined_path(&cfg, seed))?;
            }
        }
        Command::Train => {
            let cells = cfg.cells()?;
            for &seed in &cfg.seeds {
                let data = load_data(&cfg, seed)?;
                for &(head, method) in &cells {
                    log::info!("seed {seed}: training {head} {method}");
                    let (model, log) = train_cell(&cfg, &data, head, method)?;
                    let dir = cfg.cell_dir(seed, head, method);
                    write_train_log(&dir, &log)?;
                    model.save(&dir.join("model.txt"))?;
                }
            }
        }
        Command::Eval => {
            let cells = cfg.cells()?;
            for &seed in &cfg.seeds {
                let data = load_data(&cfg, seed)?;
                for &(head, method) in &cells {
                    let dir = cfg.cell_dir(seed, head, method);
                    let model = Recognizer::load(&dir.join("model.txt"))
                        .with_context(|| format!("no {head} {method} model; run `pssr train` first"))?;
                    let (records, report) = evaluate_report(&cfg, &model, &data.test)?;
                    let title = format!("{head} {method} seed {seed}");
                    write_evaluation(&dir, &title, &records, &report)?;
                    println!(
                        "{title}: acc {:.4} ece {:.4} ace {:.4} mce {:.4}",
                        report.accuracy, report.ece, report.ace, report.mce
                    );
                }
            }
        }
        Command::Report => {
            let result = run_pipeline(&cfg)?;
            print_summary(&result.summary, std::io::stdout().lock())?;
        }
        Command::StudyHardness => {
            let rows = run_hardness_study(&cfg, &cfg.hardness.ratios)?;
            for r in rows {
                println!("seed {} ratio {} {} {}: ece {:.4}", r.seed, r.ratio, r.head, r.method, r.ece);
            }
        }
        Command::StudyShift => {
            let rows = run_shift_study(&cfg, &cfg.shift.kinds, &cfg.shift.severities)?;
            for r in rows {
                println!(
                    "seed {} {} {} {} {}: acc {:.4} ece {:.4}",
                    r.seed, r.head, r.method, r.kind, r.severity, r.accuracy, r.ece
                );
            }
        }
        Command::StudyAblation => {
            let rows = run_proportion_ablation(&cfg, &cfg.ablation.rhos)?;
            for r in rows {
                println!("seed {} rho {} {}: ece {:.4}", r.seed, r.rho, r.head, r.ece);
            }
        }
        Command::ActiveLearn => {
            if cfg.active.strategies.is_empty() {
                bail!("no active-learning strategy configured");
            }
            let rows = run_active_learning(&cfg)?;
            for r in rows {
                println!(
                    "seed {} {} round {}: {:.3} labeled, acc {:.4}",
                    r.seed, r.strategy, r.round, r.labeled_fraction, r.accuracy
                );
            }
        }
    }
    log::info!("outputs under {}", cfg.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
