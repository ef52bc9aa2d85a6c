//! End-to-end experiment drivers behind the CLI: one config file describes
//! the corpus, splits, both models, trial counts, and seed; every stage
//! derives its randomness from the one experiment seed, so a rerun with the
//! same config produces byte-identical reports and checkpoints.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::ModelCheckpoint;
use crate::corpus::{
    generate_synthetic_corpus, load_corpus, make_trial_pairs, split_corpus, Corpus, SynthSpec,
    TrialSet,
};
use crate::dur_model::{
    train_duration_model, DurModelConfig, DurTrainerOptions, DurationModel,
};
use crate::error::{Error, Result};
use crate::features::FeatureMode;
use crate::metrics::{
    compute_eer, duration_correlation, duration_rmse, pearson, project_embeddings_2d,
    rhythm_relation_report, sign_test_p, speaking_rate, EERResult, PairScope,
};
use crate::report::{fmt_f64, fnv1a_hex, write_csv, write_json};
use crate::rng::{sub_seed, Rng};
use crate::spk_model::{
    average_embedding, train_speaker_model, trial_scores, Embedding, EncoderConfig, SpeakerModel,
    TrainerOptions,
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Where the corpus comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    /// Generate synthetically.
    Synth(SynthSpec),
    /// Import a JSON-lines corpus file.
    Path(PathBuf),
}

/// Speaker counts of the open-speaker split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_speakers: usize,
    pub valid_speakers: usize,
    pub test_speakers: usize,
}

/// One config drives corpus preparation, both trainings, and every
/// evaluation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus: CorpusSource,
    pub split: SplitSpec,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub duration_model: DurModelConfig,
    #[serde(default)]
    pub spk_trainer: TrainerOptions,
    #[serde(default)]
    pub dur_trainer: DurTrainerOptions,
    /// Same/different trial counts for the test-set EER (clamped to what the
    /// test split can supply).
    #[serde(default = "d_test_trials")]
    pub test_trials_same: usize,
    #[serde(default = "d_test_trials")]
    pub test_trials_diff: usize,
    /// Input-feature ablation: full, phonemes_only, or duration_only.
    #[serde(default)]
    pub ablation: FeatureMode,
    /// Optional training-speaker-count sweep; each entry trains a fresh
    /// model on a nested subset of the train split.
    #[serde(default)]
    pub speaker_count_sweep: Vec<usize>,
    /// Utterances averaged into each held-out speaker's embedding.
    #[serde(default = "d_embedding_utts")]
    pub embedding_utterances: usize,
    /// Speaker pairing admitted into the relation scatter.
    #[serde(default)]
    pub relation_scope: PairScope,
    pub seed: u64,
    #[serde(default = "d_out_dir")]
    pub out_dir: PathBuf,
}

fn d_test_trials() -> usize {
    300
}
fn d_embedding_utts() -> usize {
    5
}
fn d_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let config: ExperimentConfig = serde_json::from_slice(&bytes)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if let CorpusSource::Path(p) = &self.corpus {
            if !p.exists() {
                return Err(Error::InvalidSpec(format!(
                    "corpus path {} does not exist",
                    p.display()
                )));
            }
        }
        let mode = self.encoder.features.mode;
        if mode != FeatureMode::Full && mode != self.ablation {
            return Err(Error::InvalidSpec(format!(
                "encoder feature mode {mode:?} conflicts with ablation {:?}",
                self.ablation
            )));
        }
        if self.embedding_utterances == 0 {
            return Err(Error::InvalidSpec("embedding_utterances must be >= 1".into()));
        }
        Ok(())
    }

    /// Encoder config with the ablation applied to the feature mode.
    pub fn effective_encoder(&self) -> EncoderConfig {
        let mut enc = self.encoder.clone();
        enc.features.mode = self.ablation;
        enc
    }

    /// Fingerprint of everything that affects results (the output directory
    /// is excluded so runs into different directories stay comparable).
    pub fn config_hash(&self) -> String {
        let mut normalized = self.clone();
        normalized.out_dir = PathBuf::new();
        fnv1a_hex(&serde_json::to_vec(&normalized).expect("config serializes"))
    }
}

// ---------------------------------------------------------------------------
// Corpus preparation shared by every stage
// ---------------------------------------------------------------------------

/// Corpus plus its open-speaker split.
pub struct PreparedData {
    pub corpus: Corpus,
    pub train: Corpus,
    pub valid: Corpus,
    pub test: Corpus,
}

pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    let corpus = match &config.corpus {
        CorpusSource::Synth(spec) => generate_synthetic_corpus(spec)?,
        CorpusSource::Path(path) => load_corpus(path)?,
    };
    let (train, valid, test) = split_corpus(
        &corpus,
        config.split.train_speakers,
        config.split.valid_speakers,
        config.split.test_speakers,
        sub_seed(config.seed, "split"),
    )?;
    Ok(PreparedData {
        corpus,
        train,
        valid,
        test,
    })
}

/// Trial set with requested counts clamped to what the corpus can supply.
pub fn clamped_trials(corpus: &Corpus, n_same: usize, n_diff: usize, seed: u64) -> Result<TrialSet> {
    let groups = corpus.by_speaker();
    let max_same: usize = groups.values().map(|u| u.len() * (u.len() - 1) / 2).sum();
    let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
    let total: usize = sizes.iter().sum();
    let max_diff = sizes.iter().map(|&s| s * (total - s)).sum::<usize>() / 2;
    make_trial_pairs(
        corpus,
        n_same.min(max_same).max(1),
        n_diff.min(max_diff).max(1),
        seed,
    )
}

/// EER of a speaker model over a corpus trial set.
pub fn eer_on_corpus(
    model: &SpeakerModel,
    corpus: &Corpus,
    trials: &TrialSet,
) -> Result<EERResult> {
    let embeddings = model.extract_corpus_embeddings(corpus)?;
    let scores = trial_scores(&embeddings, trials)?;
    compute_eer(trials, &scores)
}

/// Per-speaker average embeddings. `limit` caps how many utterances (in
/// corpus order) contribute per speaker; `None` averages all of them.
///
/// With `length_norm` each utterance embedding and the final average are
/// scaled to unit L2 norm. The metric loss that produced the embeddings is
/// scale-invariant, so the norm is a nuisance that varies with how many
/// utterances were averaged; normalizing keeps few-utterance speaker
/// embeddings on the same scale the duration model saw in training.
pub fn speaker_average_embeddings(
    model: &SpeakerModel,
    corpus: &Corpus,
    limit: Option<usize>,
    length_norm: bool,
) -> Result<BTreeMap<String, Embedding>> {
    let unit = |e: Embedding| -> Result<Embedding> {
        let norm = e.values().iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidInput("zero-norm embedding".into()));
        }
        Ok(Embedding(e.values().iter().map(|x| x / norm).collect()))
    };
    let mut out = BTreeMap::new();
    for (speaker, utt_indices) in corpus.by_speaker() {
        let take = limit.unwrap_or(utt_indices.len()).min(utt_indices.len());
        let embs: Vec<Embedding> = utt_indices[..take]
            .iter()
            .map(|&i| {
                let e = model.extract_embedding(&corpus.utterances()[i], corpus.inventory())?;
                if length_norm {
                    unit(e)
                } else {
                    Ok(e)
                }
            })
            .collect::<Result<_>>()?;
        let mean = average_embedding(&embs)?;
        out.insert(speaker, if length_norm { unit(mean)? } else { mean });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Speaker experiment
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TrajectoryReport {
    name: &'static str,
    config_hash: String,
    seed: u64,
    ablation: FeatureMode,
    points: Vec<TrajectoryPoint>,
}

#[derive(Serialize)]
struct TrajectoryPoint {
    epoch: usize,
    eer: f64,
}

#[derive(Serialize)]
struct EerReport {
    name: &'static str,
    config_hash: String,
    seed: u64,
    ablation: FeatureMode,
    eer: f64,
    threshold: f64,
    n_target: usize,
    n_impostor: usize,
}

#[derive(Serialize)]
struct SweepReport {
    name: &'static str,
    config_hash: String,
    seed: u64,
    entries: Vec<SweepEntry>,
}

#[derive(Serialize)]
struct SweepEntry {
    train_speakers: usize,
    eer: f64,
}

pub struct SpeakerRunArtifacts {
    pub checkpoint_path: PathBuf,
    pub test_eer: EERResult,
    pub trajectory: Vec<(usize, f64)>,
    /// (train speaker count, test EER) for each sweep entry.
    pub sweep: Vec<(usize, f64)>,
}

/// Train the speaker model, evaluate test EER, optionally sweep training
/// speaker counts, and write every artifact into the output directory.
pub fn run_speaker_experiment(config: &ExperimentConfig) -> Result<SpeakerRunArtifacts> {
    config.validate()?;
    let data = prepare_data(config)?;
    let hash = config.config_hash();
    std::fs::create_dir_all(&config.out_dir)?;

    let encoder = config.effective_encoder();
    let mut opts = config.spk_trainer.clone();
    opts.seed = sub_seed(config.seed, "spk-train");
    let outcome = train_speaker_model(&data.train, &data.valid, &encoder, &opts)?;

    let checkpoint_path = config.out_dir.join("spk_checkpoint.rvec");
    outcome
        .model
        .to_checkpoint(outcome.meta.clone())?
        .save(&checkpoint_path)?;

    write_json(
        &config.out_dir.join("spk_eer_trajectory.json"),
        &TrajectoryReport {
            name: "validation_eer_trajectory",
            config_hash: hash.clone(),
            seed: config.seed,
            ablation: config.ablation,
            points: outcome
                .trajectory
                .iter()
                .map(|&(epoch, eer)| TrajectoryPoint { epoch, eer })
                .collect(),
        },
    )?;

    let trials = clamped_trials(
        &data.test,
        config.test_trials_same,
        config.test_trials_diff,
        sub_seed(config.seed, "test-trials"),
    )?;
    let test_eer = eer_on_corpus(&outcome.model, &data.test, &trials)?;
    write_json(
        &config.out_dir.join("spk_test_eer.json"),
        &EerReport {
            name: "test_eer",
            config_hash: hash.clone(),
            seed: config.seed,
            ablation: config.ablation,
            eer: test_eer.eer,
            threshold: test_eer.threshold,
            n_target: test_eer.n_target,
            n_impostor: test_eer.n_impostor,
        },
    )?;

    let mut sweep = Vec::new();
    if !config.speaker_count_sweep.is_empty() {
        let mut order = data.train.speakers();
        Rng::derive(config.seed, "sweep-order").shuffle(&mut order);
        for &count in &config.speaker_count_sweep {
            if count > order.len() {
                return Err(Error::Infeasible(format!(
                    "sweep entry {count} exceeds the {} train speakers",
                    order.len()
                )));
            }
            let keep: std::collections::BTreeSet<String> =
                order[..count].iter().cloned().collect();
            let subset = data.train.restrict_to_speakers(&keep);
            let mut sweep_opts = config.spk_trainer.clone();
            sweep_opts.seed = sub_seed(config.seed, &format!("sweep-train-{count}"));
            let sub_outcome = train_speaker_model(&subset, &data.valid, &encoder, &sweep_opts)?;
            let eer = eer_on_corpus(&sub_outcome.model, &data.test, &trials)?;
            sweep.push((count, eer.eer));
        }
        write_json(
            &config.out_dir.join("spk_speaker_count_sweep.json"),
            &SweepReport {
                name: "speaker_count_sweep",
                config_hash: hash.clone(),
                seed: config.seed,
                entries: sweep
                    .iter()
                    .map(|&(train_speakers, eer)| SweepEntry { train_speakers, eer })
                    .collect(),
            },
        )?;
    }

    Ok(SpeakerRunArtifacts {
        checkpoint_path,
        test_eer,
        trajectory: outcome.trajectory,
        sweep,
    })
}

/// Evaluate an existing speaker checkpoint on the config's test split.
pub fn run_eer_evaluation(
    config: &ExperimentConfig,
    checkpoint_path: &Path,
) -> Result<EERResult> {
    config.validate()?;
    let data = prepare_data(config)?;
    let model = SpeakerModel::from_checkpoint(&ModelCheckpoint::load(checkpoint_path)?)?;
    let trials = clamped_trials(
        &data.test,
        config.test_trials_same,
        config.test_trials_diff,
        sub_seed(config.seed, "test-trials"),
    )?;
    let result = eer_on_corpus(&model, &data.test, &trials)?;
    std::fs::create_dir_all(&config.out_dir)?;
    write_json(
        &config.out_dir.join("eer_eval.json"),
        &EerReport {
            name: "eer_eval",
            config_hash: config.config_hash(),
            seed: config.seed,
            ablation: config.ablation,
            eer: result.eer,
            threshold: result.threshold,
            n_target: result.n_target,
            n_impostor: result.n_impostor,
        },
    )?;
    Ok(result)
}

// ---------------------------------------------------------------------------
// Duration experiment
// ---------------------------------------------------------------------------

/// Per-speaker duration evaluation row.
#[derive(Debug, Clone, Serialize)]
pub struct SpeakerDurEval {
    pub speaker: String,
    pub rmse_ms: f64,
    pub corr: f64,
    pub rate_pred: f64,
    pub rate_ref: f64,
}

/// Correct-vs-shuffled conditioning comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ConditioningCheck {
    pub rows: Vec<ConditioningRow>,
    pub wins: usize,
    pub n: usize,
    pub sign_test_p: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditioningRow {
    pub speaker: String,
    pub rmse_correct_ms: f64,
    pub rmse_shuffled_ms: f64,
}

#[derive(Serialize)]
struct DurEvalReport {
    name: &'static str,
    config_hash: String,
    seed: u64,
    speakers: Vec<SpeakerDurEval>,
    mean_rmse_ms: f64,
    mean_corr: f64,
    /// Pearson r between predicted and reference per-speaker speaking rates.
    rate_pearson: f64,
}

#[derive(Serialize)]
struct ConditioningReport {
    name: &'static str,
    config_hash: String,
    seed: u64,
    #[serde(flatten)]
    check: ConditioningCheck,
}

pub struct DurationRunArtifacts {
    pub checkpoint_path: PathBuf,
    pub speakers: Vec<SpeakerDurEval>,
    pub rate_pearson: f64,
    pub conditioning: ConditioningCheck,
}

/// Concatenated (predicted, reference) durations plus per-utterance
/// (predicted, reference) speaking rates for one speaker.
type SpeakerPredictions = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

/// Predictions for one speaker's held-out utterances under a given embedding.
fn speaker_predictions(
    model: &DurationModel,
    corpus: &Corpus,
    utt_indices: &[usize],
    embedding: &Embedding,
) -> Result<SpeakerPredictions> {
    let mut pred_all = Vec::new();
    let mut ref_all = Vec::new();
    let mut pred_rates = Vec::new();
    let mut ref_rates = Vec::new();
    for &i in utt_indices {
        let u = &corpus.utterances()[i];
        let pred = model.predict_durations(u.phonemes(), embedding)?;
        let total_pred: f64 = pred.iter().sum();
        pred_rates.push(u.len() as f64 / total_pred);
        ref_rates.push(speaking_rate(u));
        pred_all.extend_from_slice(&pred);
        ref_all.extend_from_slice(u.durations());
    }
    Ok((pred_all, ref_all, pred_rates, ref_rates))
}

/// Train the duration model on the open-speaker split and evaluate held-out
/// speakers with few-utterance average embeddings, plus the speaker-shuffled
/// conditioning check and speaking-rate box-plot data.
pub fn run_duration_experiment(
    config: &ExperimentConfig,
    spk_checkpoint: &Path,
) -> Result<DurationRunArtifacts> {
    config.validate()?;
    let data = prepare_data(config)?;
    let spk_model = SpeakerModel::from_checkpoint(&ModelCheckpoint::load(spk_checkpoint)?)?;
    std::fs::create_dir_all(&config.out_dir)?;

    // Training-side embeddings average every available utterance; held-out
    // test speakers get few-utterance averages.
    let mut embeddings = speaker_average_embeddings(&spk_model, &data.train, None, true)?;
    embeddings.extend(speaker_average_embeddings(&spk_model, &data.valid, None, true)?);

    let mut dur_opts = config.dur_trainer.clone();
    dur_opts.seed = sub_seed(config.seed, "dur-train");
    let outcome = train_duration_model(
        &data.train,
        &embeddings,
        &data.valid,
        &config.duration_model,
        &dur_opts,
    )?;
    let checkpoint_path = config.out_dir.join("dur_checkpoint.rvec");
    outcome
        .model
        .to_checkpoint(outcome.meta.clone())?
        .save(&checkpoint_path)?;

    let artifacts = evaluate_duration_model(config, &spk_model, &outcome.model, &data)?;
    Ok(DurationRunArtifacts {
        checkpoint_path,
        speakers: artifacts.0,
        rate_pearson: artifacts.1,
        conditioning: artifacts.2,
    })
}

/// Evaluate existing speaker + duration checkpoints (no training).
pub fn run_duration_evaluation(
    config: &ExperimentConfig,
    spk_checkpoint: &Path,
    dur_checkpoint: &Path,
) -> Result<DurationRunArtifacts> {
    config.validate()?;
    let data = prepare_data(config)?;
    let spk_model = SpeakerModel::from_checkpoint(&ModelCheckpoint::load(spk_checkpoint)?)?;
    let dur_model = DurationModel::from_checkpoint(&ModelCheckpoint::load(dur_checkpoint)?)?;
    std::fs::create_dir_all(&config.out_dir)?;
    let artifacts = evaluate_duration_model(config, &spk_model, &dur_model, &data)?;
    Ok(DurationRunArtifacts {
        checkpoint_path: dur_checkpoint.to_path_buf(),
        speakers: artifacts.0,
        rate_pearson: artifacts.1,
        conditioning: artifacts.2,
    })
}

fn evaluate_duration_model(
    config: &ExperimentConfig,
    spk_model: &SpeakerModel,
    dur_model: &DurationModel,
    data: &PreparedData,
) -> Result<(Vec<SpeakerDurEval>, f64, ConditioningCheck)> {
    let hash = config.config_hash();
    let limit = config.embedding_utterances;
    let test_groups = data.test.by_speaker();
    if test_groups.is_empty() {
        return Err(Error::InvalidInput(
            "duration evaluation needs a non-empty test split".into(),
        ));
    }
    for (speaker, utts) in &test_groups {
        if utts.len() <= limit {
            return Err(Error::Infeasible(format!(
                "test speaker {speaker} has {} utterances; needs more than {limit} \
                 (embedding average plus held-out evaluation)",
                utts.len()
            )));
        }
    }

    // Held-out embeddings from the first `limit` utterances per speaker.
    let test_embeddings = speaker_average_embeddings(spk_model, &data.test, Some(limit), true)?;

    let mut speaker_rows = Vec::new();
    let mut boxplot_rows = Vec::new();
    let mut rate_pred_means = Vec::new();
    let mut rate_ref_means = Vec::new();
    let mut correct_rmse = BTreeMap::new();
    for (speaker, utts) in &test_groups {
        let eval_utts = &utts[limit..];
        let emb = &test_embeddings[speaker];
        let (pred, reference, pred_rates, ref_rates) =
            speaker_predictions(dur_model, &data.test, eval_utts, emb)?;
        let rmse_ms = duration_rmse(&pred, &reference)?;
        let corr = duration_correlation(&pred, &reference)?;
        let rate_pred = pred_rates.iter().sum::<f64>() / pred_rates.len() as f64;
        let rate_ref = ref_rates.iter().sum::<f64>() / ref_rates.len() as f64;
        for (j, &ui) in eval_utts.iter().enumerate() {
            boxplot_rows.push(vec![
                speaker.clone(),
                data.test.utterances()[ui].utterance_id.clone(),
                fmt_f64(ref_rates[j]),
                fmt_f64(pred_rates[j]),
            ]);
        }
        rate_pred_means.push(rate_pred);
        rate_ref_means.push(rate_ref);
        correct_rmse.insert(speaker.clone(), rmse_ms);
        speaker_rows.push(SpeakerDurEval {
            speaker: speaker.clone(),
            rmse_ms,
            corr,
            rate_pred,
            rate_ref,
        });
    }

    let rate_pearson = pearson(&rate_pred_means, &rate_ref_means)?;

    // Conditioning check: every speaker re-evaluated under another speaker's
    // embedding (cyclic derangement, seeded).
    let speakers: Vec<String> = test_groups.keys().cloned().collect();
    let mut assignment: Vec<usize> = (0..speakers.len()).collect();
    Rng::derive(config.seed, "shuffle-emb").shuffle_derangement(&mut assignment);
    let mut rows = Vec::new();
    let mut wins = 0usize;
    for (idx, speaker) in speakers.iter().enumerate() {
        let wrong_emb = &test_embeddings[&speakers[assignment[idx]]];
        let eval_utts = &test_groups[speaker][limit..];
        let (pred, reference, _, _) =
            speaker_predictions(dur_model, &data.test, eval_utts, wrong_emb)?;
        let rmse_shuffled_ms = duration_rmse(&pred, &reference)?;
        let rmse_correct_ms = correct_rmse[speaker];
        if rmse_correct_ms < rmse_shuffled_ms {
            wins += 1;
        }
        rows.push(ConditioningRow {
            speaker: speaker.clone(),
            rmse_correct_ms,
            rmse_shuffled_ms,
        });
    }
    let conditioning = ConditioningCheck {
        n: rows.len(),
        sign_test_p: sign_test_p(wins, rows.len()),
        wins,
        rows,
    };

    write_json(
        &config.out_dir.join("dur_eval.json"),
        &DurEvalReport {
            name: "duration_eval",
            config_hash: hash.clone(),
            seed: config.seed,
            mean_rmse_ms: speaker_rows.iter().map(|r| r.rmse_ms).sum::<f64>()
                / speaker_rows.len() as f64,
            mean_corr: speaker_rows.iter().map(|r| r.corr).sum::<f64>()
                / speaker_rows.len() as f64,
            rate_pearson,
            speakers: speaker_rows.clone(),
        },
    )?;
    write_csv(
        &config.out_dir.join("dur_eval.csv"),
        &["speaker", "rmse_ms", "corr", "rate_pred", "rate_ref"],
        &speaker_rows
            .iter()
            .map(|r| {
                vec![
                    r.speaker.clone(),
                    fmt_f64(r.rmse_ms),
                    fmt_f64(r.corr),
                    fmt_f64(r.rate_pred),
                    fmt_f64(r.rate_ref),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    write_json(
        &config.out_dir.join("dur_conditioning.json"),
        &ConditioningReport {
            name: "duration_conditioning",
            config_hash: hash.clone(),
            seed: config.seed,
            check: conditioning.clone(),
        },
    )?;
    write_csv(
        &config.out_dir.join("dur_conditioning.csv"),
        &["speaker", "rmse_correct_ms", "rmse_shuffled_ms"],
        &conditioning
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.speaker.clone(),
                    fmt_f64(r.rmse_correct_ms),
                    fmt_f64(r.rmse_shuffled_ms),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    write_csv(
        &config.out_dir.join("rate_boxplot.csv"),
        &["speaker", "utterance", "rate_ref", "rate_pred"],
        &boxplot_rows,
    )?;

    Ok((speaker_rows, rate_pearson, conditioning))
}

// ---------------------------------------------------------------------------
// Embedding-space analysis
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct RelationReport {
    name: &'static str,
    config_hash: String,
    seed: u64,
    scope: PairScope,
    n_points: usize,
    pearson_r: f64,
    mic: f64,
}

pub struct SpaceRunArtifacts {
    pub n_projected: usize,
    pub n_points: usize,
    pub pearson_r: f64,
    pub mic: f64,
}

/// Project test-split embeddings to 2-D and build the rhythm relation
/// scatter (cosine similarity vs duration correlation over same-script
/// pairs).
pub fn run_space_analysis(
    config: &ExperimentConfig,
    spk_checkpoint: &Path,
) -> Result<SpaceRunArtifacts> {
    config.validate()?;
    let data = prepare_data(config)?;
    if data.test.is_empty() {
        return Err(Error::InvalidInput(
            "space analysis needs a non-empty test split".into(),
        ));
    }
    let model = SpeakerModel::from_checkpoint(&ModelCheckpoint::load(spk_checkpoint)?)?;
    std::fs::create_dir_all(&config.out_dir)?;
    let hash = config.config_hash();

    let embeddings = model.extract_corpus_embeddings(&data.test)?;
    let projected = project_embeddings_2d(&embeddings)?;
    write_csv(
        &config.out_dir.join("projection.csv"),
        &["utterance", "speaker", "x", "y"],
        &data
            .test
            .utterances()
            .iter()
            .zip(&projected)
            .map(|(u, &(x, y))| {
                vec![
                    u.utterance_id.clone(),
                    u.speaker_id.clone(),
                    fmt_f64(x),
                    fmt_f64(y),
                ]
            })
            .collect::<Vec<_>>(),
    )?;

    let report = rhythm_relation_report(&data.test, &embeddings, config.relation_scope)?;
    write_csv(
        &config.out_dir.join("relation_scatter.csv"),
        &["cosine_similarity", "duration_correlation"],
        &report
            .points
            .iter()
            .map(|&(x, y)| vec![fmt_f64(x), fmt_f64(y)])
            .collect::<Vec<_>>(),
    )?;
    write_json(
        &config.out_dir.join("relation_report.json"),
        &RelationReport {
            name: "rhythm_relation",
            config_hash: hash,
            seed: config.seed,
            scope: config.relation_scope,
            n_points: report.points.len(),
            pearson_r: report.pearson_r,
            mic: report.mic,
        },
    )?;

    Ok(SpaceRunArtifacts {
        n_projected: projected.len(),
        n_points: report.points.len(),
        pearson_r: report.pearson_r,
        mic: report.mic,
    })
}

// ---------------------------------------------------------------------------
// Embedding export
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct EmbeddingLine<'a> {
    speaker: &'a str,
    utterance: &'a str,
    embedding: &'a [f64],
}

/// Extract every utterance embedding of a corpus file to JSON lines.
pub fn extract_embeddings_to_file(
    checkpoint_path: &Path,
    corpus_path: &Path,
    out_path: &Path,
) -> Result<usize> {
    let model = SpeakerModel::from_checkpoint(&ModelCheckpoint::load(checkpoint_path)?)?;
    let corpus = load_corpus(corpus_path)?;
    let embeddings = model.extract_corpus_embeddings(&corpus)?;
    let mut out = String::new();
    for (u, e) in corpus.utterances().iter().zip(&embeddings) {
        out.push_str(&serde_json::to_string(&EmbeddingLine {
            speaker: &u.speaker_id,
            utterance: &u.utterance_id,
            embedding: e.values(),
        })?);
        out.push('\n');
    }
    std::fs::write(out_path, out)?;
    Ok(embeddings.len())
}
