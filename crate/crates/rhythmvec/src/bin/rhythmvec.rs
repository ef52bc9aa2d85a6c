//! Experiment driver CLI. One JSON config describes the corpus, splits,
//! models, and seed; subcommands run the individual stages.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use rhythmvec::corpus::{generate_synthetic_corpus, save_corpus, SynthSpec};
use rhythmvec::experiment::{
    extract_embeddings_to_file, run_duration_evaluation, run_duration_experiment,
    run_eer_evaluation, run_space_analysis, run_speaker_experiment, DurationRunArtifacts,
    ExperimentConfig,
};
use rhythmvec::report::fmt_f64;

#[derive(Parser)]
#[command(
    name = "rhythmvec",
    version,
    about = "Speech-rhythm speaker embeddings: corpus generation, model training, and evaluation"
)]
struct Cli {
    /// Experiment config file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path: the target file for gen-corpus/extract, the output
    /// directory (overriding the config) for every other stage.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus file from a generator spec.
    GenCorpus(GenCorpusArgs),
    /// Train the speaker model and report validation/test EER.
    TrainSpk,
    /// Extract utterance embeddings from a corpus file.
    Extract(ExtractArgs),
    /// Evaluate test-set EER of an existing speaker checkpoint.
    EvalEer(CheckpointArg),
    /// Train the duration model (conditioned on speaker embeddings) and
    /// evaluate held-out speakers.
    TrainDur(SpkCheckpointArg),
    /// Evaluate existing speaker + duration checkpoints.
    EvalDur(EvalDurArgs),
    /// Project embeddings to 2-D and run the rhythm relation analysis.
    AnalyzeSpace(CheckpointArg),
}

#[derive(Args)]
struct GenCorpusArgs {
    /// Generator spec (JSON, SynthSpec schema).
    #[arg(long)]
    spec: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
}

#[derive(Args)]
struct CheckpointArg {
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct SpkCheckpointArg {
    #[arg(long)]
    spk_checkpoint: PathBuf,
}

#[derive(Args)]
struct EvalDurArgs {
    #[arg(long)]
    spk_checkpoint: PathBuf,
    #[arg(long)]
    dur_checkpoint: PathBuf,
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .context("this subcommand needs --config")?;
    let mut config =
        ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn out_file(cli: &Cli, what: &str) -> anyhow::Result<PathBuf> {
    cli.out
        .clone()
        .with_context(|| format!("this subcommand needs --out {what}"))
}

fn stage(cli: &Cli) -> (&'static str, anyhow::Result<()>) {
    match &cli.command {
        Command::GenCorpus(args) => ("gen-corpus", gen_corpus(cli, args)),
        Command::TrainSpk => ("train-spk", train_spk(cli)),
        Command::Extract(args) => ("extract", extract(cli, args)),
        Command::EvalEer(args) => ("eval-eer", eval_eer(cli, args)),
        Command::TrainDur(args) => ("train-dur", train_dur(cli, args)),
        Command::EvalDur(args) => ("eval-dur", eval_dur(cli, args)),
        Command::AnalyzeSpace(args) => ("analyze-space", analyze_space(cli, args)),
    }
}

fn gen_corpus(cli: &Cli, args: &GenCorpusArgs) -> anyhow::Result<()> {
    let out = out_file(cli, "corpus.jsonl")?;
    let bytes =
        std::fs::read(&args.spec).with_context(|| format!("reading {}", args.spec.display()))?;
    let spec: SynthSpec = serde_json::from_slice(&bytes).context("parsing generator spec")?;
    let corpus = generate_synthetic_corpus(&spec)?;
    save_corpus(&corpus, &out)?;
    println!(
        "wrote {} utterances from {} speakers to {}",
        corpus.len(),
        corpus.speakers().len(),
        out.display()
    );
    Ok(())
}

fn train_spk(cli: &Cli) -> anyhow::Result<()> {
    let config = load_config(cli)?;
    let artifacts = run_speaker_experiment(&config)?;
    println!(
        "test EER {} ({} target / {} impostor trials)",
        fmt_f64(artifacts.test_eer.eer),
        artifacts.test_eer.n_target,
        artifacts.test_eer.n_impostor
    );
    for (count, eer) in &artifacts.sweep {
        println!("sweep: {count} train speakers -> test EER {}", fmt_f64(*eer));
    }
    println!("checkpoint: {}", artifacts.checkpoint_path.display());
    Ok(())
}

fn extract(cli: &Cli, args: &ExtractArgs) -> anyhow::Result<()> {
    let out = out_file(cli, "embeddings.jsonl")?;
    let n = extract_embeddings_to_file(&args.checkpoint, &args.corpus, &out)?;
    println!("wrote {n} embeddings to {}", out.display());
    Ok(())
}

fn eval_eer(cli: &Cli, args: &CheckpointArg) -> anyhow::Result<()> {
    let config = load_config(cli)?;
    let result = run_eer_evaluation(&config, &args.checkpoint)?;
    println!(
        "test EER {} at threshold {}",
        fmt_f64(result.eer),
        fmt_f64(result.threshold)
    );
    Ok(())
}

fn train_dur(cli: &Cli, args: &SpkCheckpointArg) -> anyhow::Result<()> {
    let config = load_config(cli)?;
    let artifacts = run_duration_experiment(&config, &args.spk_checkpoint)?;
    print_duration_summary(&artifacts);
    println!("checkpoint: {}", artifacts.checkpoint_path.display());
    Ok(())
}

fn eval_dur(cli: &Cli, args: &EvalDurArgs) -> anyhow::Result<()> {
    let config = load_config(cli)?;
    let artifacts = run_duration_evaluation(&config, &args.spk_checkpoint, &args.dur_checkpoint)?;
    print_duration_summary(&artifacts);
    Ok(())
}

fn print_duration_summary(artifacts: &DurationRunArtifacts) {
    let n = artifacts.speakers.len() as f64;
    let mean_rmse = artifacts.speakers.iter().map(|s| s.rmse_ms).sum::<f64>() / n;
    let mean_corr = artifacts.speakers.iter().map(|s| s.corr).sum::<f64>() / n;
    println!(
        "duration eval over {} speakers: mean RMSE {} ms, mean corr {}, rate pearson {}",
        artifacts.speakers.len(),
        fmt_f64(mean_rmse),
        fmt_f64(mean_corr),
        fmt_f64(artifacts.rate_pearson)
    );
    println!(
        "conditioning: correct beats shuffled for {}/{} speakers (sign test p = {})",
        artifacts.conditioning.wins,
        artifacts.conditioning.n,
        fmt_f64(artifacts.conditioning.sign_test_p)
    );
}

fn analyze_space(cli: &Cli, args: &CheckpointArg) -> anyhow::Result<()> {
    let config = load_config(cli)?;
    let artifacts = run_space_analysis(&config, &args.checkpoint)?;
    println!(
        "projected {} embeddings; relation scatter has {} points (pearson {}, MIC {})",
        artifacts.n_projected,
        artifacts.n_points,
        fmt_f64(artifacts.pearson_r),
        fmt_f64(artifacts.mic)
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, result) = stage(&cli);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{name}]: {err:#}");
            ExitCode::FAILURE
        }
    }
}
