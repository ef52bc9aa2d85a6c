//! End-to-end checks of the `rhythmvec` binary: every subcommand, exit
//! codes, and stage-tagged diagnostics.

use std::path::Path;
use std::process::Command;

use rhythmvec::corpus::{load_corpus, random_script_pool, PhonemeInventory, SynthSpec};
use rhythmvec::dur_model::{DurModelConfig, DurTrainerOptions};
use rhythmvec::experiment::{CorpusSource, ExperimentConfig, SplitSpec};
use rhythmvec::features::{BundleConfig, FeatureMode};
use rhythmvec::metrics::PairScope;
use rhythmvec::spk_model::{EncoderConfig, TrainerOptions};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rhythmvec"))
}

fn tiny_spec() -> SynthSpec {
    let symbols: Vec<String> = (0..8).map(|i| format!("q{i}")).collect();
    let inventory = PhonemeInventory::new(symbols).unwrap();
    SynthSpec {
        n_speakers: 8,
        utterances_per_speaker: 6,
        mean_rate: 8.0,
        speaker_rate_sd: 0.25,
        phoneme_class_bias_sd: 0.2,
        utterance_jitter_sd: 0.04,
        frame_noise_sd: 0.04,
        intrinsic_sd: 0.2,
        script_pool: random_script_pool(&inventory, 3, 8, 12, 42),
        shared_scripts: true,
        n_phoneme_classes: 4,
        seed: 777,
    }
}

fn tiny_experiment(out_dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        corpus: CorpusSource::Synth(tiny_spec()),
        split: SplitSpec {
            train_speakers: 4,
            valid_speakers: 2,
            test_speakers: 2,
        },
        encoder: EncoderConfig {
            n_layers: 1,
            model_dim: 12,
            n_heads: 2,
            hidden_dim: 16,
            bundle: BundleConfig {
                n_pre: 1,
                n_follow: 1,
            },
            embed_dim: 6,
            attn_hidden: 8,
            features: Default::default(),
            positional_encoding: true,
            normalize_durations: true,
        },
        duration_model: DurModelConfig {
            n_blocks: 1,
            model_dim: 12,
            n_heads: 2,
            hidden_dim: 16,
            linguistic_dim: 0,
            embed_dim: 6,
            positional_encoding: true,
            log_targets: false,
        },
        spk_trainer: TrainerOptions {
            epochs: 10,
            eval_every: 5,
            patience_evals: 0,
            batch_speakers: 3,
            batch_utterances: 2,
            episodes_per_epoch: 0,
            learning_rate: 1e-3,
            grad_clip: 5.0,
            valid_trials_same: 20,
            valid_trials_diff: 20,
            seed: 0,
        },
        dur_trainer: DurTrainerOptions {
            epochs: 4,
            eval_every: 2,
            patience_evals: 0,
            batch_size: 4,
            steps_per_epoch: 0,
            learning_rate: 1e-3,
            grad_clip: 5.0,
            seed: 0,
        },
        test_trials_same: 20,
        test_trials_diff: 20,
        ablation: FeatureMode::Full,
        speaker_count_sweep: Vec::new(),
        embedding_utterances: 2,
        relation_scope: PairScope::All,
        seed: 4242,
        out_dir: out_dir.to_path_buf(),
    }
}

#[test]
fn gen_corpus_writes_deterministic_canonical_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("spec.json");
    std::fs::write(&spec_path, serde_json::to_string(&tiny_spec()).unwrap()).unwrap();

    let out_a = dir.path().join("a.jsonl");
    let out_b = dir.path().join("b.jsonl");
    for out in [&out_a, &out_b] {
        let status = bin()
            .args(["gen-corpus", "--spec"])
            .arg(&spec_path)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let bytes_a = std::fs::read(&out_a).unwrap();
    let bytes_b = std::fs::read(&out_b).unwrap();
    assert_eq!(bytes_a, bytes_b, "gen-corpus must be deterministic");

    let corpus = load_corpus(&out_a).unwrap();
    assert_eq!(corpus.speakers().len(), 8);
    assert_eq!(corpus.len(), 48);
}

#[test]
fn gen_corpus_rejects_invalid_spec_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("spec.json");
    let mut spec = tiny_spec();
    spec.script_pool.clear();
    std::fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();

    let output = bin()
        .args(["gen-corpus", "--spec"])
        .arg(&spec_path)
        .arg("--out")
        .arg(dir.path().join("x.jsonl"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("error[gen-corpus]"),
        "stage tag missing: {stderr}"
    );
}

#[test]
fn missing_config_is_a_stage_tagged_error() {
    let output = bin().arg("train-spk").output().unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("error[train-spk]") && stderr.contains("--config"),
        "unexpected stderr: {stderr}"
    );
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let config = tiny_experiment(&out_dir);
    let config_path = dir.path().join("exp.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

    // train-spk
    let status = bin()
        .args(["train-spk", "--config"])
        .arg(&config_path)
        .status()
        .unwrap();
    assert!(status.success());
    let spk_ckpt = out_dir.join("spk_checkpoint.rvec");
    assert!(spk_ckpt.exists());
    assert!(out_dir.join("spk_eer_trajectory.json").exists());
    assert!(out_dir.join("spk_test_eer.json").exists());

    // eval-eer on the saved checkpoint
    let status = bin()
        .args(["eval-eer", "--config"])
        .arg(&config_path)
        .arg("--checkpoint")
        .arg(&spk_ckpt)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out_dir.join("eer_eval.json").exists());

    // extract embeddings from a corpus file
    let corpus_path = dir.path().join("corpus.jsonl");
    let spec_path = dir.path().join("spec.json");
    std::fs::write(&spec_path, serde_json::to_string(&tiny_spec()).unwrap()).unwrap();
    assert!(bin()
        .args(["gen-corpus", "--spec"])
        .arg(&spec_path)
        .arg("--out")
        .arg(&corpus_path)
        .status()
        .unwrap()
        .success());
    let emb_path = dir.path().join("emb.jsonl");
    let status = bin()
        .args(["extract", "--checkpoint"])
        .arg(&spk_ckpt)
        .arg("--corpus")
        .arg(&corpus_path)
        .arg("--out")
        .arg(&emb_path)
        .status()
        .unwrap();
    assert!(status.success());
    let lines = std::fs::read_to_string(&emb_path).unwrap();
    assert_eq!(lines.lines().count(), 48);
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert_eq!(first["embedding"].as_array().unwrap().len(), 6);

    // train-dur
    let status = bin()
        .args(["train-dur", "--config"])
        .arg(&config_path)
        .arg("--spk-checkpoint")
        .arg(&spk_ckpt)
        .status()
        .unwrap();
    assert!(status.success());
    let dur_ckpt = out_dir.join("dur_checkpoint.rvec");
    assert!(dur_ckpt.exists());
    for file in [
        "dur_eval.json",
        "dur_eval.csv",
        "dur_conditioning.json",
        "dur_conditioning.csv",
        "rate_boxplot.csv",
    ] {
        assert!(out_dir.join(file).exists(), "missing {file}");
    }

    // eval-dur without retraining
    let status = bin()
        .args(["eval-dur", "--config"])
        .arg(&config_path)
        .arg("--spk-checkpoint")
        .arg(&spk_ckpt)
        .arg("--dur-checkpoint")
        .arg(&dur_ckpt)
        .status()
        .unwrap();
    assert!(status.success());

    // analyze-space
    let status = bin()
        .args(["analyze-space", "--config"])
        .arg(&config_path)
        .arg("--checkpoint")
        .arg(&spk_ckpt)
        .status()
        .unwrap();
    assert!(status.success());
    for file in ["projection.csv", "relation_scatter.csv", "relation_report.json"] {
        assert!(out_dir.join(file).exists(), "missing {file}");
    }

    // Projection CSV row count == test utterance count (2 speakers x 6).
    let projection = std::fs::read_to_string(out_dir.join("projection.csv")).unwrap();
    assert_eq!(projection.lines().count(), 1 + 12);

    // Reports carry provenance.
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("relation_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["seed"], 4242);
    assert!(report["config_hash"].as_str().unwrap().len() == 16);

    // --seed override changes outputs; same seed reproduces them.
    let alt_dir = dir.path().join("alt");
    let status = bin()
        .args(["train-spk", "--config"])
        .arg(&config_path)
        .args(["--seed", "999"])
        .arg("--out")
        .arg(&alt_dir)
        .status()
        .unwrap();
    assert!(status.success());
    let base = std::fs::read(out_dir.join("spk_checkpoint.rvec")).unwrap();
    let alt = std::fs::read(alt_dir.join("spk_checkpoint.rvec")).unwrap();
    assert_ne!(base, alt, "different seed must change the checkpoint");
}
