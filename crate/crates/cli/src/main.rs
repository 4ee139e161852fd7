use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hornet::autodiff::gradcheck::GradCheckOptions;
use hornet::harness::config::{DataSource, SyntheticConfig};
use hornet::harness::data::{load_splits, synthetic_splits};
use hornet::harness::evaluate::EmbeddingReport;
use hornet::harness::pipeline_check::random_pipeline_check;
use hornet::harness::train::write_trace;
use hornet::harness::{ablation, evaluate, train_with, Checkpoint, ExperimentConfig};
use hornet::retrieval::RerankParams;
use hornet::visual::{load_dataset, write_dataset};
use hornet::Error;

const FEATURES_FILE: &str = "features.jsonl";
const CAPTIONS_FILE: &str = "captions.jsonl";

#[derive(Parser)]
#[command(
    name = "hornet",
    version,
    about = "Visually gated caption encoding for person re-identification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, loss trace and metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset directory or on its synthetic world.
    Eval(EvalArgs),
    /// Train and compare the five ablation variants.
    Ablate(AblateArgs),
    /// Finite-difference check of the full objective on random small models.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic dataset (features.jsonl + captions.jsonl).
    GenData(GenDataArgs),
    /// Re-rank the embeddings of an evaluation report.
    Rerank(RerankArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["data", "synthetic"])))]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory with features.jsonl and captions.jsonl.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Regenerate the checkpoint's synthetic evaluation split.
    #[arg(long)]
    synthetic: bool,
    /// Write the metrics report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write query/gallery embeddings here (input for `rerank`).
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Write the table as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    ids: usize,
    #[arg(long, default_value_t = 8)]
    obs: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Take the world's remaining settings from this experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RerankArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = 20)]
    k1: usize,
    #[arg(long, default_value_t = 6)]
    k2: usize,
    #[arg(long, default_value_t = 0.3)]
    lambda: f64,
}

fn load_config(
    path: &Path,
    seed: Option<u64>,
    epochs: Option<usize>,
    lr: Option<f64>,
) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(e) = epochs {
        config.optimizer.epochs = e;
    }
    if let Some(lr) = lr {
        config.optimizer.learning_rate = lr;
    }
    config.validate()?;
    Ok(config)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config = load_config(&args.config, args.seed, args.epochs, args.learning_rate)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let splits = load_splits(&config)?;
    let mut trace = Vec::new();
    let outcome = train_with(&config, &splits.train, &mut |e| {
        eprintln!(
            "epoch {:>4}  id {:.5}  triplet {:.5}  total {:.5}",
            e.epoch, e.id_loss, e.triplet_loss, e.total
        );
        trace.push(*e);
    });
    let trace_path = args.out.join("loss_trace.csv");
    let outcome = match outcome {
        Ok(o) => o,
        Err(Error::Diverged {
            epoch,
            step,
            checkpoint,
        }) => {
            let path = args.out.join("diverged_checkpoint.json");
            checkpoint.save(&path)?;
            write_trace(&trace_path, &trace)?;
            bail!(
                "training diverged at epoch {epoch}, step {step}; last finite state saved to {}",
                path.display()
            );
        }
        Err(e) => return Err(e.into()),
    };
    if outcome.skipped_identities > 0 {
        eprintln!(
            "warning: {} identities have fewer than {} observations and were not sampled",
            outcome.skipped_identities, config.sampler.k
        );
    }
    outcome.checkpoint.save(&args.out.join("checkpoint.json"))?;
    write_trace(&trace_path, &outcome.trace)?;
    let eval = evaluate(&outcome.model, &splits.eval, config.eval.metric)?;
    write_json(&args.out.join("metrics.json"), &eval.metrics)?;
    write_json(&args.out.join("gates.json"), &eval.gates)?;
    println!("{}", serde_json::to_string_pretty(&eval)?);
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let model = checkpoint.model()?;
    let config = &checkpoint.config;
    let records = match (&args.data, args.synthetic) {
        (Some(dir), _) => load_dataset(&dir.join(FEATURES_FILE), &dir.join(CAPTIONS_FILE))?,
        (None, true) => match &config.data {
            DataSource::Synthetic(syn) => {
                synthetic_splits(config.seed, syn, config.model.visual_dim)?.eval
            }
            DataSource::Files(_) => {
                bail!("the checkpoint was not trained on synthetic data; pass --data")
            }
        },
        (None, false) => unreachable!("clap requires a data source"),
    };
    let eval = evaluate(&model, &records, config.eval.metric)?;
    if let Some(path) = &args.out {
        write_json(path, &eval.metrics)?;
    }
    if let (Some(path), Some(emb)) = (&args.dump, &eval.embeddings) {
        emb.save(path)?;
    }
    println!("{}", serde_json::to_string_pretty(&eval)?);
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let config = load_config(&args.config, args.seed, args.epochs, None)?;
    let table = ablation(&config)?;
    print!("{}", table.to_text());
    if let Some(path) = &args.out {
        write_json(path, &table)?;
    }
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<bool> {
    let options = GradCheckOptions {
        tolerance: args.tolerance,
        ..GradCheckOptions::default()
    };
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for t in 0..args.trials {
        let check = random_pipeline_check(args.seed + t, &options)?;
        let err = check.report.max_rel_error();
        worst = worst.max(err);
        if !check.report.passed() {
            failures += 1;
            println!(
                "trial {t} (seed {}): max relative error {err:.3e} FAILED",
                check.seed
            );
        }
    }
    println!(
        "{} trials, {failures} failed, worst max relative error {worst:.3e} (tolerance {:.0e})",
        args.trials, args.tolerance
    );
    Ok(failures == 0)
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let base = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let syn = match base.data {
        DataSource::Synthetic(s) => s,
        DataSource::Files(_) => SyntheticConfig::default(),
    };
    let syn = SyntheticConfig {
        identities: args.ids,
        observations: args.obs,
        ..syn
    };
    let splits = synthetic_splits(args.seed, &syn, base.model.visual_dim)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_dataset(
        &args.out.join(FEATURES_FILE),
        &args.out.join(CAPTIONS_FILE),
        &splits.train,
    )?;
    println!(
        "wrote {} observations of {} identities to {}",
        splits.train.len(),
        args.ids,
        args.out.display()
    );
    Ok(())
}

fn cmd_rerank(args: RerankArgs) -> Result<()> {
    let report = EmbeddingReport::load(&args.report)?;
    let params = RerankParams {
        k1: args.k1,
        k2: args.k2,
        lambda: args.lambda,
    };
    let out = serde_json::json!({
        "original": report.metrics()?,
        "reranked": report.reranked_metrics(&params)?,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(a) => cmd_train(a)?,
        Command::Eval(a) => cmd_eval(a)?,
        Command::Ablate(a) => cmd_ablate(a)?,
        Command::Gradcheck(a) => return cmd_gradcheck(a),
        Command::GenData(a) => cmd_gen_data(a)?,
        Command::Rerank(a) => cmd_rerank(a)?,
    }
    Ok(true)
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
