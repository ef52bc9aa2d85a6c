//! Embedding-conditioned phoneme-duration predictor.
//!
//! Input per position: a linguistic vector (current/previous/next phoneme
//! one-hots plus two positional scalars) concatenated with the speaker
//! embedding, broadcast to every position. A Transformer encoder stack maps
//! the sequence to one duration per phoneme; training minimizes per-phoneme
//! MSE in seconds squared, keeping the checkpoint with the lowest validation
//! MSE. Durations never appear on the input side.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{ModelCheckpoint, ModelKind, TrainingMeta};
use crate::corpus::{Corpus, PhonemeInventory, Utterance};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::nn::params::glorot;
use crate::nn::transformer::{self, TransformerSpec};
use crate::nn::{Adam, BoundParams, Mat, NodeId, ParamSet, Tape};
use crate::rng::Rng;
use crate::spk_model::{pad_rows, verify_shapes, Embedding};

/// Positions are encoded as (t / T, T / T_SCALE); T_SCALE keeps the length
/// feature near unit range for desk-scale utterances.
const T_SCALE: f64 = 100.0;

/// Smallest duration the predictor will emit, in seconds.
pub const MIN_DURATION_S: f64 = 0.001;

// ---------------------------------------------------------------------------
// Configuration and linguistic features
// ---------------------------------------------------------------------------

/// Structure of the duration predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurModelConfig {
    #[serde(default = "d_n_blocks")]
    pub n_blocks: usize,
    #[serde(default = "d_model_dim")]
    pub model_dim: usize,
    #[serde(default = "d_n_heads")]
    pub n_heads: usize,
    /// Feed-forward inner width of each block.
    #[serde(default = "d_hidden_dim")]
    pub hidden_dim: usize,
    /// Linguistic vector width; 0 derives 3K+2 from the inventory.
    #[serde(default)]
    pub linguistic_dim: usize,
    /// Expected speaker-embedding width.
    #[serde(default = "d_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "d_true")]
    pub positional_encoding: bool,
    /// Train on log-durations instead of raw seconds.
    #[serde(default)]
    pub log_targets: bool,
}

fn d_n_blocks() -> usize {
    6
}
fn d_model_dim() -> usize {
    64
}
fn d_n_heads() -> usize {
    8
}
fn d_hidden_dim() -> usize {
    300
}
fn d_embed_dim() -> usize {
    32
}
fn d_true() -> bool {
    true
}

impl Default for DurModelConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl DurModelConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.model_dim == 0 || !self.model_dim.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidSpec(format!(
                "model_dim {} must be a positive multiple of n_heads {}",
                self.model_dim, self.n_heads
            )));
        }
        if self.n_blocks == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidSpec("n_blocks and hidden_dim must be >= 1".into()));
        }
        if self.embed_dim == 0 {
            return Err(Error::InvalidSpec("embed_dim must be >= 1".into()));
        }
        let derived = 3 * k + 2;
        if self.linguistic_dim != 0 && self.linguistic_dim != derived {
            return Err(Error::InvalidSpec(format!(
                "linguistic_dim {} does not match 3K+2 = {derived}",
                self.linguistic_dim
            )));
        }
        Ok(())
    }

    fn transformer_spec(&self, k: usize) -> TransformerSpec {
        TransformerSpec {
            input_dim: 3 * k + 2 + self.embed_dim,
            model_dim: self.model_dim,
            n_layers: self.n_blocks,
            n_heads: self.n_heads,
            hidden_dim: self.hidden_dim,
            positional_encoding: self.positional_encoding,
        }
    }
}

/// T rows of linguistic features (no durations).
#[derive(Debug, Clone, PartialEq)]
pub struct LinguisticSequence(pub FeatureSequence);

/// Linguistic rows for a phoneme-index sequence:
/// one-hot(current) ++ one-hot(previous or zeros) ++ one-hot(next or zeros)
/// ++ [t/T (1-based), T/100]. Width 3K+2.
pub fn linguistic_rows(phonemes: &[usize], k: usize) -> Result<Mat> {
    if phonemes.is_empty() {
        return Err(Error::InvalidInput("empty phoneme sequence".into()));
    }
    if let Some(&bad) = phonemes.iter().find(|&&p| p >= k) {
        return Err(Error::InvalidInput(format!(
            "phoneme index {bad} out of range for K={k}"
        )));
    }
    let t_len = phonemes.len();
    let dim = 3 * k + 2;
    let mut out = Mat::zeros(t_len, dim);
    for t in 0..t_len {
        let row = out.row_mut(t);
        row[phonemes[t]] = 1.0;
        if t > 0 {
            row[k + phonemes[t - 1]] = 1.0;
        }
        if t + 1 < t_len {
            row[2 * k + phonemes[t + 1]] = 1.0;
        }
        row[3 * k] = (t + 1) as f64 / t_len as f64;
        row[3 * k + 1] = t_len as f64 / T_SCALE;
    }
    Ok(out)
}

/// Linguistic sequence of an utterance (durations are deliberately unused).
pub fn build_linguistic_vector(
    utterance: &Utterance,
    inventory: &PhonemeInventory,
) -> Result<LinguisticSequence> {
    let rows = linguistic_rows(utterance.phonemes(), inventory.k())?;
    Ok(LinguisticSequence(FeatureSequence::new(rows)?))
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DurConfigJson {
    duration: DurModelConfig,
    inventory: Vec<String>,
}

/// Duration predictor: config, inventory binding, parameters.
#[derive(Debug, Clone)]
pub struct DurationModel {
    config: DurModelConfig,
    inventory: PhonemeInventory,
    pub params: ParamSet,
}

impl DurationModel {
    pub fn new(config: DurModelConfig, inventory: PhonemeInventory, seed: u64) -> Result<Self> {
        config.validate(inventory.k())?;
        let mut config = config;
        config.linguistic_dim = 3 * inventory.k() + 2;
        let mut rng = Rng::derive(seed, "dur-init");
        let mut params = ParamSet::new();
        let tspec = config.transformer_spec(inventory.k());
        transformer::init_params("dur", &tspec, &mut params, &mut rng);
        params.push("out.w", glorot(&mut rng, config.model_dim, 1));
        params.push("out.b", Mat::scalar(0.0));
        Ok(DurationModel {
            config,
            inventory,
            params,
        })
    }

    pub fn config(&self) -> &DurModelConfig {
        &self.config
    }

    pub fn inventory(&self) -> &PhonemeInventory {
        &self.inventory
    }

    /// Raw model outputs on a tape: T_pad x 1 (seconds, or log-seconds in
    /// log-target mode). Caller slices back to the valid prefix.
    fn output_node(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        padded_input: Mat,
        valid_len: usize,
    ) -> NodeId {
        let tspec = self.config.transformer_spec(self.inventory.k());
        let input = tape.leaf(padded_input);
        let hidden = transformer::forward(tape, bound, "dur", &tspec, input, valid_len);
        let out = tape.matmul(hidden, bound.id("out.w"));
        tape.add_row_broadcast(out, bound.id("out.b"))
    }

    /// Per-position model input: linguistic rows with the speaker embedding
    /// appended to every row.
    fn input_rows(&self, phonemes: &[usize], embedding: &Embedding) -> Result<Mat> {
        if embedding.dim() != self.config.embed_dim {
            return Err(Error::Shape(format!(
                "speaker embedding has dim {}, model expects {}",
                embedding.dim(),
                self.config.embed_dim
            )));
        }
        let ling = linguistic_rows(phonemes, self.inventory.k())?;
        let t_len = ling.rows();
        let dim = ling.cols() + embedding.dim();
        let mut out = Mat::zeros(t_len, dim);
        for t in 0..t_len {
            out.row_mut(t)[..ling.cols()].copy_from_slice(ling.row(t));
            out.row_mut(t)[ling.cols()..].copy_from_slice(embedding.values());
        }
        Ok(out)
    }

    /// Predict per-phoneme durations in seconds, clamped to >= 1 ms.
    pub fn predict_durations(
        &self,
        phonemes: &[usize],
        speaker_embedding: &Embedding,
    ) -> Result<Vec<f64>> {
        let input = self.input_rows(phonemes, speaker_embedding)?;
        let valid = input.rows();
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let out = self.output_node(&mut tape, &bound, input, valid);
        let raw = tape.value(out);
        Ok((0..valid)
            .map(|t| {
                let v = raw.at(t, 0);
                let seconds = if self.config.log_targets { v.exp() } else { v };
                seconds.max(MIN_DURATION_S)
            })
            .collect())
    }

    /// MSE of the raw prediction path against explicit targets (T x 1), in
    /// the training parameterization (no clamping or exp).
    pub fn mse_loss_value(
        &self,
        phonemes: &[usize],
        embedding: &Embedding,
        targets: &Mat,
    ) -> Result<f64> {
        let input = self.input_rows(phonemes, embedding)?;
        let valid = input.rows();
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let out = self.output_node(&mut tape, &bound, input, valid);
        let loss = tape.mse_loss(out, targets.clone());
        Ok(tape.value(loss).at(0, 0))
    }

    /// Analytic parameter gradients of `mse_loss_value`, aligned with the
    /// returned parameter names.
    pub fn mse_loss_gradients(
        &self,
        phonemes: &[usize],
        embedding: &Embedding,
        targets: &Mat,
    ) -> Result<(Vec<Mat>, Vec<String>)> {
        let input = self.input_rows(phonemes, embedding)?;
        let valid = input.rows();
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let out = self.output_node(&mut tape, &bound, input, valid);
        let loss = tape.mse_loss(out, targets.clone());
        tape.backward(loss);
        let grads = self.params.collect_grads(&tape, &bound);
        let names = self.params.iter().map(|(n, _)| n.to_owned()).collect();
        Ok((grads, names))
    }

    pub fn to_checkpoint(&self, meta: TrainingMeta) -> Result<ModelCheckpoint> {
        let config_json = serde_json::to_value(DurConfigJson {
            duration: self.config.clone(),
            inventory: self.inventory.symbols().to_vec(),
        })?;
        Ok(ModelCheckpoint {
            kind: ModelKind::Duration,
            config_json,
            training_meta: meta,
            params: self.params.clone(),
        })
    }

    pub fn from_checkpoint(checkpoint: &ModelCheckpoint) -> Result<Self> {
        checkpoint.expect_kind(ModelKind::Duration)?;
        let cfg: DurConfigJson = serde_json::from_value(checkpoint.config_json.clone())?;
        let inventory = PhonemeInventory::new(cfg.inventory)
            .map_err(|e| Error::Checkpoint(format!("bad inventory: {e}")))?;
        let reference = DurationModel::new(cfg.duration.clone(), inventory.clone(), 0)?;
        verify_shapes(&reference.params, &checkpoint.params)?;
        Ok(DurationModel {
            config: reference.config,
            inventory,
            params: checkpoint.params.clone(),
        })
    }

    fn target_value(&self, seconds: f64) -> f64 {
        if self.config.log_targets {
            seconds.ln()
        } else {
            seconds
        }
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Options for duration-model training (plain utterance batches).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurTrainerOptions {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_eval_every")]
    pub eval_every: usize,
    #[serde(default = "d_patience")]
    pub patience_evals: usize,
    #[serde(default = "d_batch_size")]
    pub batch_size: usize,
    /// Steps per epoch; 0 derives ceil(train utterances / batch_size).
    #[serde(default)]
    pub steps_per_epoch: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_clip")]
    pub grad_clip: f64,
    #[serde(default)]
    pub seed: u64,
}

fn d_epochs() -> usize {
    1000
}
fn d_eval_every() -> usize {
    10
}
fn d_patience() -> usize {
    10
}
fn d_batch_size() -> usize {
    8
}
fn d_lr() -> f64 {
    1e-3
}
fn d_clip() -> f64 {
    5.0
}

impl Default for DurTrainerOptions {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

#[derive(Debug, Clone)]
pub struct DurTrainOutcome {
    pub model: DurationModel,
    pub meta: TrainingMeta,
    /// (epoch, validation MSE in seconds^2) at every evaluation.
    pub trajectory: Vec<(usize, f64)>,
}

fn embedding_for<'a>(
    embeddings: &'a BTreeMap<String, Embedding>,
    speaker: &str,
) -> Result<&'a Embedding> {
    embeddings
        .get(speaker)
        .ok_or_else(|| Error::MissingEmbedding(speaker.to_owned()))
}

/// Mean squared error (seconds^2) of the model over a corpus, using the
/// inference path (clamping included).
pub fn corpus_mse(
    model: &DurationModel,
    corpus: &Corpus,
    embeddings: &BTreeMap<String, Embedding>,
) -> Result<f64> {
    let mut sq = 0.0;
    let mut count = 0usize;
    for u in corpus.utterances() {
        let emb = embedding_for(embeddings, &u.speaker_id)?;
        let pred = model.predict_durations(u.phonemes(), emb)?;
        for (p, r) in pred.iter().zip(u.durations()) {
            sq += (p - r) * (p - r);
            count += 1;
        }
    }
    Ok(sq / count as f64)
}

/// Train the duration model on `train`, early-stopping on `valid` MSE.
/// `embeddings` must cover every speaker in both corpora.
pub fn train_duration_model(
    train: &Corpus,
    embeddings: &BTreeMap<String, Embedding>,
    valid: &Corpus,
    config: &DurModelConfig,
    opts: &DurTrainerOptions,
) -> Result<DurTrainOutcome> {
    if train.is_empty() {
        return Err(Error::InvalidInput("training corpus is empty".into()));
    }
    if valid.is_empty() {
        return Err(Error::InvalidInput("validation corpus is empty".into()));
    }
    if valid.inventory() != train.inventory() {
        return Err(Error::InvalidInput(
            "train and validation corpora use different inventories".into(),
        ));
    }
    for speaker in train.speakers().iter().chain(valid.speakers().iter()) {
        embedding_for(embeddings, speaker)?;
    }

    let mut model = DurationModel::new(config.clone(), train.inventory().clone(), opts.seed)?;
    let n_utts = train.len();
    let batch = opts.batch_size.max(1).min(n_utts);
    let steps_per_epoch = if opts.steps_per_epoch > 0 {
        opts.steps_per_epoch
    } else {
        n_utts.div_ceil(batch)
    };

    let mut rng = Rng::derive(opts.seed, "dur-train");
    let mut adam = Adam::new(&model.params, opts.learning_rate);
    let mut best: Option<(f64, ParamSet)> = None;
    let mut trajectory = Vec::new();
    let mut evals_without_improvement = 0usize;
    let mut epochs_run = 0usize;

    'training: for epoch in 1..=opts.epochs {
        epochs_run = epoch;
        for _ in 0..steps_per_epoch {
            let pick = rng.sample_indices(n_utts, batch);
            let mut inputs = Vec::with_capacity(batch);
            let mut targets: Vec<f64> = Vec::new();
            let mut valid_lens = Vec::with_capacity(batch);
            for &ui in &pick {
                let u = &train.utterances()[ui];
                let emb = embedding_for(embeddings, &u.speaker_id)?;
                let input = model.input_rows(u.phonemes(), emb)?;
                valid_lens.push(input.rows());
                inputs.push(input);
                targets.extend(u.durations().iter().map(|&d| model.target_value(d)));
            }
            let t_max = valid_lens.iter().copied().max().expect("nonempty batch");

            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let preds: Vec<NodeId> = inputs
                .into_iter()
                .zip(&valid_lens)
                .map(|(input, &valid_len)| {
                    let padded = pad_rows(input, t_max);
                    let out = model.output_node(&mut tape, &bound, padded, valid_len);
                    tape.slice_rows(out, 0, valid_len)
                })
                .collect();
            let stacked = tape.concat_rows(&preds);
            let target = Mat::from_vec(targets.len(), 1, targets);
            let loss = tape.mse_loss(stacked, target);
            tape.backward(loss);
            let grads = model.params.collect_grads(&tape, &bound);
            adam.step(&mut model.params, &grads, opts.grad_clip);
        }

        if epoch % opts.eval_every == 0 {
            let mse = corpus_mse(&model, valid, embeddings)?;
            trajectory.push((epoch, mse));
            let improved = best.as_ref().is_none_or(|(b, _)| mse < *b);
            if improved {
                best = Some((mse, model.params.clone()));
                evals_without_improvement = 0;
            } else {
                evals_without_improvement += 1;
                if opts.patience_evals > 0 && evals_without_improvement >= opts.patience_evals {
                    break 'training;
                }
            }
        }
    }

    let best_metric = best.map(|(mse, params)| {
        model.params = params;
        mse
    });
    Ok(DurTrainOutcome {
        model,
        meta: TrainingMeta {
            seed: opts.seed,
            epochs_run,
            best_metric,
        },
        trajectory,
    })
}
