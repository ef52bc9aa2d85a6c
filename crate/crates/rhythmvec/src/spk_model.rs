//! Speaker-identification model and rhythm-embedding extraction.
//!
//! Architecture: bundle block -> Transformer encoder -> temporal attentive
//! pooling -> fully-connected block -> bottleneck embedding. Training uses
//! episodic batches (N speakers x M utterances) under an angular prototypical
//! loss: each speaker's first M-1 utterances form a prototype, the last is
//! the query, and scores are a learnable affine transform of query/prototype
//! cosine similarity.
//!
//! Training is single-threaded and fully seeded; the same corpus, config,
//! and seed reproduce the best checkpoint byte for byte.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{ModelCheckpoint, ModelKind, TrainingMeta};
use crate::corpus::{make_trial_pairs, Corpus, PhonemeInventory, TrialSet, Utterance};
use crate::error::{Error, Result};
use crate::features::{
    bundle, duration_stats, encode_features_with, BundleConfig, FeatureConfig, FeatureSequence,
};
use crate::metrics::{compute_eer, cosine_similarity};
use crate::nn::params::glorot;
use crate::nn::transformer::{self, TransformerSpec};
use crate::nn::{Adam, BoundParams, Mat, NodeId, ParamSet, Tape};
use crate::rng::Rng;

// ---------------------------------------------------------------------------
// Configuration and domain types
// ---------------------------------------------------------------------------

/// Structure of the speaker-identification network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Transformer encoder layers.
    #[serde(default = "d_n_layers")]
    pub n_layers: usize,
    /// Attention width ("units") of each layer.
    #[serde(default = "d_model_dim")]
    pub model_dim: usize,
    #[serde(default = "d_n_heads")]
    pub n_heads: usize,
    /// Hidden width of the feed-forward inner layers and of the
    /// fully-connected block.
    #[serde(default = "d_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default)]
    pub bundle: BundleConfig,
    /// Bottleneck embedding dimension.
    #[serde(default = "d_embed_dim")]
    pub embed_dim: usize,
    /// Hidden width M of the attentive-pooling block.
    #[serde(default = "d_attn_hidden")]
    pub attn_hidden: usize,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default = "d_true")]
    pub positional_encoding: bool,
    /// Compute corpus-level duration z-scoring at training start.
    #[serde(default)]
    pub normalize_durations: bool,
}

fn d_n_layers() -> usize {
    2
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
fn d_attn_hidden() -> usize {
    64
}
fn d_true() -> bool {
    true
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            n_layers: 2,
            model_dim: 64,
            n_heads: 8,
            hidden_dim: 300,
            bundle: BundleConfig::default(),
            embed_dim: 32,
            attn_hidden: 64,
            features: FeatureConfig::default(),
            positional_encoding: true,
            normalize_durations: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || !self.model_dim.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidSpec(format!(
                "model_dim {} must be a positive multiple of n_heads {}",
                self.model_dim, self.n_heads
            )));
        }
        if self.embed_dim == 0 {
            return Err(Error::InvalidSpec("embed_dim must be >= 1".into()));
        }
        if self.n_layers == 0 || self.hidden_dim == 0 || self.attn_hidden == 0 {
            return Err(Error::InvalidSpec(
                "n_layers, hidden_dim, and attn_hidden must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Encoder input width for an inventory of K phonemes.
    pub fn input_dim(&self, k: usize) -> usize {
        self.features.dim(k) * self.bundle.window()
    }

    fn transformer_spec(&self, k: usize) -> TransformerSpec {
        TransformerSpec {
            input_dim: self.input_dim(k),
            model_dim: self.model_dim,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            hidden_dim: self.hidden_dim,
            positional_encoding: self.positional_encoding,
        }
    }
}

/// Parameters of the temporal attentive-pooling block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// d x M projection.
    pub w: Mat,
    /// 1 x M bias.
    pub b: Mat,
    /// 1 x M context vector.
    pub mu: Mat,
}

/// Bottleneck speaker embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Arithmetic mean of embeddings, no renormalization.
pub fn average_embedding(embeddings: &[Embedding]) -> Result<Embedding> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::InvalidInput("average of zero embeddings".into()))?;
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for e in embeddings {
        if e.dim() != dim {
            return Err(Error::Shape(format!(
                "embedding dims {} vs {dim}",
                e.dim()
            )));
        }
        for (a, &v) in acc.iter_mut().zip(e.values()) {
            *a += v;
        }
    }
    for a in acc.iter_mut() {
        *a /= embeddings.len() as f64;
    }
    Ok(Embedding(acc))
}

// ---------------------------------------------------------------------------
// Standalone blocks
// ---------------------------------------------------------------------------

fn pool_on_tape(
    tape: &mut Tape,
    hidden: NodeId,
    w: NodeId,
    b: NodeId,
    mu: NodeId,
    valid_len: usize,
) -> NodeId {
    let xw = tape.matmul(hidden, w);
    let h = tape.add_row_broadcast(xw, b);
    let h = tape.tanh(h);
    let mu_t = tape.transpose(mu);
    let scores = tape.matmul(h, mu_t); // T x 1
    let scores_row = tape.transpose(scores); // 1 x T
    let weights = tape.softmax_rows_masked(scores_row, valid_len);
    tape.matmul(weights, hidden) // 1 x d
}

fn check_pool_shapes(hidden: &FeatureSequence, params: &AttentionParams) -> Result<()> {
    if params.w.rows() != hidden.dim() {
        return Err(Error::Shape(format!(
            "pooling W has {} rows but hidden dimension is {}",
            params.w.rows(),
            hidden.dim()
        )));
    }
    if params.b.cols() != params.w.cols() || params.mu.cols() != params.w.cols() {
        return Err(Error::Shape("pooling b/mu width must match W columns".into()));
    }
    Ok(())
}

/// Attentive pooling: weights softmax(tanh(x W + b) mu^T), output the
/// weighted average of the frames. Returns a vector of the hidden dimension.
pub fn attentive_pool(hidden: &FeatureSequence, params: &AttentionParams) -> Result<Vec<f64>> {
    check_pool_shapes(hidden, params)?;
    let mut tape = Tape::new();
    let x = tape.leaf(hidden.mat().clone());
    let w = tape.leaf(params.w.clone());
    let b = tape.leaf(params.b.clone());
    let mu = tape.leaf(params.mu.clone());
    let pooled = pool_on_tape(&mut tape, x, w, b, mu, hidden.t_len());
    Ok(tape.value(pooled).row(0).to_vec())
}

/// The pooling weights alone (nonnegative, sum to 1).
pub fn attention_weights(hidden: &FeatureSequence, params: &AttentionParams) -> Result<Vec<f64>> {
    check_pool_shapes(hidden, params)?;
    let mut tape = Tape::new();
    let x = tape.leaf(hidden.mat().clone());
    let w = tape.leaf(params.w.clone());
    let b = tape.leaf(params.b.clone());
    let mu = tape.leaf(params.mu.clone());
    let xw = tape.matmul(x, w);
    let h = tape.add_row_broadcast(xw, b);
    let h = tape.tanh(h);
    let mu_t = tape.transpose(mu);
    let scores = tape.matmul(h, mu_t);
    let scores_row = tape.transpose(scores);
    let weights = tape.softmax_rows_masked(scores_row, hidden.t_len());
    Ok(tape.value(weights).row(0).to_vec())
}

/// Loss value and analytic gradients of the angular prototypical loss.
#[derive(Debug, Clone)]
pub struct ProtoLoss {
    pub loss: f64,
    /// Gradient per batch embedding, rows aligned with the input order.
    pub grad_embeddings: Mat,
    pub grad_w: f64,
    pub grad_bias: f64,
}

/// Angular prototypical loss over a batch of `n_speakers * m_utts`
/// embeddings (speaker-major order) with scale `w` and offset `bias`.
pub fn angular_prototypical_loss(
    batch: &[Embedding],
    n_speakers: usize,
    m_utts: usize,
    w: f64,
    bias: f64,
) -> Result<ProtoLoss> {
    if batch.len() != n_speakers * m_utts {
        return Err(Error::Shape(format!(
            "batch of {} embeddings for N={n_speakers} M={m_utts}",
            batch.len()
        )));
    }
    let dim = batch[0].dim();
    if batch.iter().any(|e| e.dim() != dim) {
        return Err(Error::Shape("mixed embedding dimensions in batch".into()));
    }
    let rows: Vec<Vec<f64>> = batch.iter().map(|e| e.values().to_vec()).collect();
    let emb = Mat::from_rows(&rows);

    let mut tape = Tape::new();
    let e = tape.leaf(emb);
    let wn = tape.leaf(Mat::scalar(w));
    let bn = tape.leaf(Mat::scalar(bias));
    let loss = tape.angular_proto_loss(e, wn, bn, n_speakers, m_utts)?;
    tape.backward(loss);
    Ok(ProtoLoss {
        loss: tape.value(loss).at(0, 0),
        grad_embeddings: tape.grad(e),
        grad_w: tape.grad(wn).at(0, 0),
        grad_bias: tape.grad(bn).at(0, 0),
    })
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SpeakerConfigJson {
    encoder: EncoderConfig,
    inventory: Vec<String>,
}

/// Speaker model: config, inventory binding, and parameters.
#[derive(Debug, Clone)]
pub struct SpeakerModel {
    config: EncoderConfig,
    inventory: PhonemeInventory,
    pub params: ParamSet,
}

impl SpeakerModel {
    /// Fresh model with seeded initialization.
    pub fn new(config: EncoderConfig, inventory: PhonemeInventory, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::derive(seed, "spk-init");
        let mut params = ParamSet::new();
        let tspec = config.transformer_spec(inventory.k());
        transformer::init_params("enc", &tspec, &mut params, &mut rng);
        params.push("pool.w", glorot(&mut rng, config.model_dim, config.attn_hidden));
        params.push("pool.b", Mat::zeros(1, config.attn_hidden));
        params.push("pool.mu", glorot(&mut rng, 1, config.attn_hidden));
        params.push("fc.w1", glorot(&mut rng, config.model_dim, config.hidden_dim));
        params.push("fc.b1", Mat::zeros(1, config.hidden_dim));
        params.push("fc.w2", glorot(&mut rng, config.hidden_dim, config.embed_dim));
        params.push("fc.b2", Mat::zeros(1, config.embed_dim));
        // Cosine-score scale and offset of the metric loss.
        params.push("loss.w", Mat::scalar(10.0));
        params.push("loss.bias", Mat::scalar(-5.0));
        Ok(SpeakerModel {
            config,
            inventory,
            params,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn inventory(&self) -> &PhonemeInventory {
        &self.inventory
    }

    pub fn attention_params(&self) -> AttentionParams {
        AttentionParams {
            w: self.params.get("pool.w").clone(),
            b: self.params.get("pool.b").clone(),
            mu: self.params.get("pool.mu").clone(),
        }
    }

    fn check_inventory(&self, inventory: &PhonemeInventory) -> Result<()> {
        if inventory != &self.inventory {
            return Err(Error::InvalidInput(
                "utterance inventory does not match the model's inventory".into(),
            ));
        }
        Ok(())
    }

    /// Bundled-input encoder pass: T x input_dim -> T x model_dim.
    pub fn encoder_forward(&self, features: &FeatureSequence) -> Result<FeatureSequence> {
        let expected = self.config.input_dim(self.inventory.k());
        if features.dim() != expected {
            return Err(Error::Shape(format!(
                "encoder expects bundled dimension {expected}, got {}",
                features.dim()
            )));
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let input = tape.leaf(features.mat().clone());
        let tspec = self.config.transformer_spec(self.inventory.k());
        let out = transformer::forward(
            &mut tape,
            &bound,
            "enc",
            &tspec,
            input,
            features.t_len(),
        );
        FeatureSequence::new(tape.value(out).clone())
    }

    /// Build the full embedding path on a tape from already padded bundled
    /// features. `valid_len` is the unpadded frame count.
    fn embedding_node(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        padded: Mat,
        valid_len: usize,
    ) -> NodeId {
        let tspec = self.config.transformer_spec(self.inventory.k());
        let input = tape.leaf(padded);
        let hidden = transformer::forward(tape, bound, "enc", &tspec, input, valid_len);
        let pooled = pool_on_tape(
            tape,
            hidden,
            bound.id("pool.w"),
            bound.id("pool.b"),
            bound.id("pool.mu"),
            valid_len,
        );
        let f1 = tape.matmul(pooled, bound.id("fc.w1"));
        let f1 = tape.add_row_broadcast(f1, bound.id("fc.b1"));
        let f1 = tape.relu(f1);
        let f2 = tape.matmul(f1, bound.id("fc.w2"));
        tape.add_row_broadcast(f2, bound.id("fc.b2"))
    }

    fn bundled_features(&self, utterance: &Utterance) -> Result<FeatureSequence> {
        let feats = encode_features_with(utterance, &self.inventory, &self.config.features)?;
        Ok(bundle(&feats, &self.config.bundle))
    }

    /// Extract the bottleneck embedding of one utterance (no padding).
    pub fn extract_embedding(
        &self,
        utterance: &Utterance,
        inventory: &PhonemeInventory,
    ) -> Result<Embedding> {
        self.check_inventory(inventory)?;
        self.extract_padded(utterance, 0)
    }

    /// Same path as `extract_embedding` but right-padded to `pad_to` frames
    /// (no-op when `pad_to <= T`). Exposes the batched-inference route.
    pub fn extract_embedding_padded(
        &self,
        utterance: &Utterance,
        inventory: &PhonemeInventory,
        pad_to: usize,
    ) -> Result<Embedding> {
        self.check_inventory(inventory)?;
        self.extract_padded(utterance, pad_to)
    }

    fn extract_padded(&self, utterance: &Utterance, pad_to: usize) -> Result<Embedding> {
        let bundled = self.bundled_features(utterance)?;
        let valid = bundled.t_len();
        let padded = pad_rows(bundled.into_mat(), pad_to.max(valid));
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let emb = self.embedding_node(&mut tape, &bound, padded, valid);
        Ok(Embedding(tape.value(emb).row(0).to_vec()))
    }

    /// Embeddings for every utterance of a corpus, in corpus order.
    pub fn extract_corpus_embeddings(&self, corpus: &Corpus) -> Result<Vec<Embedding>> {
        self.check_inventory(corpus.inventory())?;
        corpus
            .utterances()
            .iter()
            .map(|u| self.extract_padded(u, 0))
            .collect()
    }

    pub fn to_checkpoint(&self, meta: TrainingMeta) -> Result<ModelCheckpoint> {
        let config_json = serde_json::to_value(SpeakerConfigJson {
            encoder: self.config.clone(),
            inventory: self.inventory.symbols().to_vec(),
        })?;
        Ok(ModelCheckpoint {
            kind: ModelKind::Speaker,
            config_json,
            training_meta: meta,
            params: self.params.clone(),
        })
    }

    pub fn from_checkpoint(checkpoint: &ModelCheckpoint) -> Result<Self> {
        checkpoint.expect_kind(ModelKind::Speaker)?;
        let cfg: SpeakerConfigJson = serde_json::from_value(checkpoint.config_json.clone())?;
        let inventory = PhonemeInventory::new(cfg.inventory)
            .map_err(|e| Error::Checkpoint(format!("bad inventory: {e}")))?;
        let reference = SpeakerModel::new(cfg.encoder.clone(), inventory.clone(), 0)?;
        verify_shapes(&reference.params, &checkpoint.params)?;
        Ok(SpeakerModel {
            config: cfg.encoder,
            inventory,
            params: checkpoint.params.clone(),
        })
    }
}

/// Extend a matrix with zero rows up to `target` rows.
pub(crate) fn pad_rows(m: Mat, target: usize) -> Mat {
    if target <= m.rows() {
        return m;
    }
    let mut out = Mat::zeros(target, m.cols());
    for r in 0..m.rows() {
        out.row_mut(r).copy_from_slice(m.row(r));
    }
    out
}

/// Names and shapes of `found` must exactly match `expected`.
pub(crate) fn verify_shapes(expected: &ParamSet, found: &ParamSet) -> Result<()> {
    if expected.len() != found.len() {
        return Err(Error::Checkpoint(format!(
            "parameter count {} does not match config ({} expected)",
            found.len(),
            expected.len()
        )));
    }
    for ((en, em), (fn_, fm)) in expected.iter().zip(found.iter()) {
        if en != fn_ || em.rows() != fm.rows() || em.cols() != fm.cols() {
            return Err(Error::Checkpoint(format!(
                "parameter {fn_} ({}x{}) does not match config entry {en} ({}x{})",
                fm.rows(),
                fm.cols(),
                em.rows(),
                em.cols()
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Episodic-training options shared by both models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerOptions {
    /// Epoch cap.
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    /// Validation cadence in epochs.
    #[serde(default = "d_eval_every")]
    pub eval_every: usize,
    /// Stop after this many evaluations without improvement (0 = never).
    #[serde(default = "d_patience")]
    pub patience_evals: usize,
    /// Speakers per episode (N).
    #[serde(default = "d_batch_speakers")]
    pub batch_speakers: usize,
    /// Utterances per speaker per episode (M).
    #[serde(default = "d_batch_utts")]
    pub batch_utterances: usize,
    /// Episodes per epoch; 0 derives ceil(train speakers / N).
    #[serde(default)]
    pub episodes_per_epoch: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_clip")]
    pub grad_clip: f64,
    /// Same/different pair counts for the validation trial set (clamped to
    /// what the validation corpus can supply).
    #[serde(default = "d_valid_trials")]
    pub valid_trials_same: usize,
    #[serde(default = "d_valid_trials")]
    pub valid_trials_diff: usize,
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
fn d_batch_speakers() -> usize {
    8
}
fn d_batch_utts() -> usize {
    3
}
fn d_lr() -> f64 {
    1e-3
}
fn d_clip() -> f64 {
    5.0
}
fn d_valid_trials() -> usize {
    200
}

impl Default for TrainerOptions {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct SpkTrainOutcome {
    pub model: SpeakerModel,
    pub meta: TrainingMeta,
    /// (epoch, validation EER) at every evaluation.
    pub trajectory: Vec<(usize, f64)>,
}

/// Cosine scores of a trial set given per-utterance embeddings.
pub fn trial_scores<E: AsRef<[f64]>>(embeddings: &[E], trials: &TrialSet) -> Result<Vec<f64>> {
    trials
        .pairs
        .iter()
        .map(|p| cosine_similarity(embeddings[p.a].as_ref(), embeddings[p.b].as_ref()))
        .collect()
}

/// Validation trial set with requested counts clamped to feasibility.
fn validation_trials(valid: &Corpus, opts: &TrainerOptions) -> Result<TrialSet> {
    let groups = valid.by_speaker();
    let max_same: usize = groups.values().map(|u| u.len() * (u.len() - 1) / 2).sum();
    let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
    let total: usize = sizes.iter().sum();
    let max_diff = sizes
        .iter()
        .map(|&s| s * (total - s))
        .sum::<usize>()
        / 2;
    make_trial_pairs(
        valid,
        opts.valid_trials_same.min(max_same).max(1),
        opts.valid_trials_diff.min(max_diff).max(1),
        opts.seed,
    )
}

/// Train the speaker model with episodic angular-prototypical batches,
/// evaluating EER on the validation corpus every `eval_every` epochs and
/// keeping the checkpoint with the lowest validation EER.
pub fn train_speaker_model(
    train: &Corpus,
    valid: &Corpus,
    config: &EncoderConfig,
    opts: &TrainerOptions,
) -> Result<SpkTrainOutcome> {
    if valid.speakers().len() < 2 {
        return Err(Error::InvalidInput(
            "validation corpus needs at least 2 speakers".into(),
        ));
    }
    if valid.inventory() != train.inventory() {
        return Err(Error::InvalidInput(
            "train and validation corpora use different inventories".into(),
        ));
    }
    let n = opts.batch_speakers;
    let m = opts.batch_utterances;
    if n < 2 || m < 2 {
        return Err(Error::InvalidSpec(
            "episodic batches need N >= 2 speakers and M >= 2 utterances".into(),
        ));
    }

    let groups = train.by_speaker();
    let eligible: Vec<&Vec<usize>> = groups.values().filter(|u| u.len() >= m).collect();
    if eligible.len() < n {
        return Err(Error::Infeasible(format!(
            "need {n} speakers with >= {m} utterances for an episode, found {}",
            eligible.len()
        )));
    }

    let mut config = config.clone();
    config.validate()?;
    if config.normalize_durations && config.features.duration_norm.is_none() {
        config.features.duration_norm = Some(duration_stats(train.utterances()));
    }

    let mut model = SpeakerModel::new(config, train.inventory().clone(), opts.seed)?;
    let trials = validation_trials(valid, opts)?;

    let episodes_per_epoch = if opts.episodes_per_epoch > 0 {
        opts.episodes_per_epoch
    } else {
        eligible.len().div_ceil(n)
    };

    let mut rng = Rng::derive(opts.seed, "spk-train");
    let mut adam = Adam::new(&model.params, opts.learning_rate);
    let mut best: Option<(f64, ParamSet)> = None;
    let mut trajectory = Vec::new();
    let mut evals_without_improvement = 0usize;
    let mut epochs_run = 0usize;

    'training: for epoch in 1..=opts.epochs {
        epochs_run = epoch;
        for _ in 0..episodes_per_epoch {
            let speaker_pick = rng.sample_indices(eligible.len(), n);
            let mut episode: Vec<&Utterance> = Vec::with_capacity(n * m);
            for &si in &speaker_pick {
                let utts = eligible[si];
                for &ui in rng.sample_indices(utts.len(), m).iter() {
                    episode.push(&train.utterances()[utts[ui]]);
                }
            }

            let bundled: Vec<FeatureSequence> = episode
                .iter()
                .map(|u| model.bundled_features(u))
                .collect::<Result<_>>()?;
            let t_max = bundled.iter().map(FeatureSequence::t_len).max().expect("batch");

            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let emb_nodes: Vec<NodeId> = bundled
                .into_iter()
                .map(|f| {
                    let valid_len = f.t_len();
                    let padded = pad_rows(f.into_mat(), t_max);
                    model.embedding_node(&mut tape, &bound, padded, valid_len)
                })
                .collect();
            let batch = tape.concat_rows(&emb_nodes);
            let loss = tape.angular_proto_loss(
                batch,
                bound.id("loss.w"),
                bound.id("loss.bias"),
                n,
                m,
            )?;
            tape.backward(loss);
            let grads = model.params.collect_grads(&tape, &bound);
            adam.step(&mut model.params, &grads, opts.grad_clip);
            clamp_loss_scale(&mut model.params);
            if std::env::var_os("RHYTHMVEC_TRACE").is_some() {
                eprintln!(
                    "spk epoch {epoch} loss {:.6} w {:.3} b {:.3}",
                    tape.value(loss).at(0, 0),
                    model.params.get("loss.w").at(0, 0),
                    model.params.get("loss.bias").at(0, 0)
                );
            }
        }

        if epoch % opts.eval_every == 0 {
            let embeddings = model.extract_corpus_embeddings(valid)?;
            let scores = trial_scores(&embeddings, &trials)?;
            let eer = compute_eer(&trials, &scores)?.eer;
            trajectory.push((epoch, eer));
            let improved = best.as_ref().is_none_or(|(b, _)| eer < *b);
            if improved {
                best = Some((eer, model.params.clone()));
                evals_without_improvement = 0;
            } else {
                evals_without_improvement += 1;
                if opts.patience_evals > 0 && evals_without_improvement >= opts.patience_evals {
                    break 'training;
                }
            }
        }
    }

    let best_metric = best.map(|(eer, params)| {
        model.params = params;
        eer
    });
    Ok(SpkTrainOutcome {
        model,
        meta: TrainingMeta {
            seed: opts.seed,
            epochs_run,
            best_metric,
        },
        trajectory,
    })
}

/// The cosine scale of the metric loss must stay positive.
fn clamp_loss_scale(params: &mut ParamSet) {
    for (name, mat) in params.iter_mut() {
        if name == "loss.w" {
            let v = mat.at(0, 0);
            if v < 1e-4 {
                *mat.at_mut(0, 0) = 1e-4;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, split_corpus, SynthSpec};

    fn tiny_config(k_symbols: &PhonemeInventory) -> EncoderConfig {
        let _ = k_symbols;
        EncoderConfig {
            n_layers: 1,
            model_dim: 16,
            n_heads: 2,
            hidden_dim: 24,
            bundle: BundleConfig { n_pre: 1, n_follow: 1 },
            embed_dim: 8,
            attn_hidden: 12,
            features: FeatureConfig::default(),
            positional_encoding: true,
            normalize_durations: false,
        }
    }

    fn small_corpus(n_speakers: usize, utts: usize, seed: u64) -> Corpus {
        let spec = SynthSpec {
            n_speakers,
            utterances_per_speaker: utts,
            mean_rate: 8.0,
            speaker_rate_sd: 0.3,
            phoneme_class_bias_sd: 0.3,
            utterance_jitter_sd: 0.03,
            frame_noise_sd: 0.03,
            intrinsic_sd: 0.2,
            script_pool: vec![
                vec!["a".into(), "b".into(), "c".into(), "d".into(), "e".into(), "f".into()],
                vec!["c".into(), "a".into(), "f".into(), "b".into(), "d".into(), "e".into()],
                vec!["f".into(), "e".into(), "d".into(), "c".into(), "b".into(), "a".into()],
            ],
            shared_scripts: true,
            n_phoneme_classes: 3,
            seed,
        };
        generate_synthetic_corpus(&spec).unwrap()
    }

    #[test]
    fn default_config_extracts_32_dims() {
        let corpus = small_corpus(2, 1, 1);
        let model = SpeakerModel::new(
            EncoderConfig::default(),
            corpus.inventory().clone(),
            7,
        )
        .unwrap();
        let emb = model
            .extract_embedding(&corpus.utterances()[0], corpus.inventory())
            .unwrap();
        assert_eq!(emb.dim(), 32);
    }

    #[test]
    fn extraction_is_deterministic() {
        let corpus = small_corpus(2, 2, 2);
        let model =
            SpeakerModel::new(tiny_config(corpus.inventory()), corpus.inventory().clone(), 3)
                .unwrap();
        let u = &corpus.utterances()[0];
        let a = model.extract_embedding(u, corpus.inventory()).unwrap();
        let b = model.extract_embedding(u, corpus.inventory()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_zero_variance_utterances_have_cosine_one() {
        let spec = SynthSpec {
            n_speakers: 2,
            utterances_per_speaker: 2,
            mean_rate: 8.0,
            speaker_rate_sd: 0.0,
            phoneme_class_bias_sd: 0.0,
            utterance_jitter_sd: 0.0,
            frame_noise_sd: 0.0,
            intrinsic_sd: 0.0,
            script_pool: vec![vec!["a".into(), "b".into(), "c".into()]],
            shared_scripts: true,
            n_phoneme_classes: 2,
            seed: 4,
        };
        let corpus = generate_synthetic_corpus(&spec).unwrap();
        let model =
            SpeakerModel::new(tiny_config(corpus.inventory()), corpus.inventory().clone(), 5)
                .unwrap();
        let e0 = model
            .extract_embedding(&corpus.utterances()[0], corpus.inventory())
            .unwrap();
        let e1 = model
            .extract_embedding(&corpus.utterances()[1], corpus.inventory())
            .unwrap();
        let cos = cosine_similarity(e0.values(), e1.values()).unwrap();
        assert!((cos - 1.0).abs() < 1e-6);
    }

    #[test]
    fn encoder_forward_shape_and_t1() {
        let corpus = small_corpus(2, 1, 6);
        let cfg = tiny_config(corpus.inventory());
        let model = SpeakerModel::new(cfg.clone(), corpus.inventory().clone(), 8).unwrap();
        let u = &corpus.utterances()[0];
        let bundled = model.bundled_features(u).unwrap();
        let hidden = model.encoder_forward(&bundled).unwrap();
        assert_eq!(hidden.t_len(), u.len());
        assert_eq!(hidden.dim(), cfg.model_dim);

        // T=1 input.
        let one = Utterance::new("s".into(), "u".into(), vec![0], vec![0.1], corpus.inventory().k())
            .unwrap();
        let bundled = model.bundled_features(&one).unwrap();
        let hidden = model.encoder_forward(&bundled).unwrap();
        assert_eq!((hidden.t_len(), hidden.dim()), (1, cfg.model_dim));
    }

    #[test]
    fn pooling_singleton_returns_the_frame() {
        let hidden = FeatureSequence::new(Mat::from_rows(&[vec![0.3, -0.7]])).unwrap();
        let params = AttentionParams {
            w: Mat::from_vec(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]),
            b: Mat::row_vec(&[0.0, 0.1, -0.1]),
            mu: Mat::row_vec(&[1.0, -1.0, 0.5]),
        };
        let out = attentive_pool(&hidden, &params).unwrap();
        assert_eq!(out, vec![0.3, -0.7]);
        let w = attention_weights(&hidden, &params).unwrap();
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn pooling_of_identical_frames_is_that_frame() {
        let v = vec![0.5, -1.5, 2.0];
        let hidden =
            FeatureSequence::new(Mat::from_rows(&[v.clone(), v.clone(), v.clone(), v.clone()]))
                .unwrap();
        let params = AttentionParams {
            w: Mat::from_vec(3, 2, vec![1.0, -0.3, 0.2, 0.9, -0.8, 0.4]),
            b: Mat::row_vec(&[0.2, -0.2]),
            mu: Mat::row_vec(&[0.7, 1.3]),
        };
        let out = attentive_pool(&hidden, &params).unwrap();
        for (o, e) in out.iter().zip(&v) {
            assert!((o - e).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_matches_hand_evaluated_example() {
        // T=2, d=2, M=1, W=[[1],[0]], b=[0], mu=[1], frames (1,0) and (0,1):
        // weights = softmax(tanh(1), tanh(0)) ~ (0.6817, 0.3183).
        let hidden =
            FeatureSequence::new(Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap();
        let params = AttentionParams {
            w: Mat::from_vec(2, 1, vec![1.0, 0.0]),
            b: Mat::row_vec(&[0.0]),
            mu: Mat::row_vec(&[1.0]),
        };
        let weights = attention_weights(&hidden, &params).unwrap();
        let e = 1.0f64.tanh().exp();
        let expect0 = e / (e + 1.0);
        assert!((weights[0] - expect0).abs() < 1e-4, "{weights:?}");
        assert!((weights[0] - 0.6817).abs() < 5e-4);
        assert!((weights[1] - 0.3183).abs() < 5e-4);
        let out = attentive_pool(&hidden, &params).unwrap();
        assert!((out[0] - weights[0]).abs() < 1e-12);
        assert!((out[1] - weights[1]).abs() < 1e-12);
    }

    #[test]
    fn pooling_weights_are_a_distribution() {
        let mut rng = Rng::new(12);
        for _ in 0..200 {
            let t = 1 + rng.next_below(6);
            let d = 1 + rng.next_below(5);
            let m = 1 + rng.next_below(4);
            let hidden = FeatureSequence::new(Mat::from_vec(
                t,
                d,
                (0..t * d).map(|_| rng.uniform(-2.0, 2.0)).collect(),
            ))
            .unwrap();
            let params = AttentionParams {
                w: Mat::from_vec(d, m, (0..d * m).map(|_| rng.uniform(-2.0, 2.0)).collect()),
                b: Mat::from_vec(1, m, (0..m).map(|_| rng.uniform(-1.0, 1.0)).collect()),
                mu: Mat::from_vec(1, m, (0..m).map(|_| rng.uniform(-2.0, 2.0)).collect()),
            };
            let w = attention_weights(&hidden, &params).unwrap();
            assert!(w.iter().all(|&x| x >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn loss_is_invariant_to_speaker_permutation_and_scale() {
        let mut rng = Rng::new(13);
        let n = 3;
        let m = 2;
        let batch: Vec<Embedding> = (0..n * m)
            .map(|_| Embedding((0..5).map(|_| rng.uniform(-1.0, 1.0)).collect()))
            .collect();
        let base = angular_prototypical_loss(&batch, n, m, 2.0, -0.3).unwrap();

        // Swap speakers 0 and 2.
        let mut permuted = batch.clone();
        permuted.swap(0, 4);
        permuted.swap(1, 5);
        let perm = angular_prototypical_loss(&permuted, n, m, 2.0, -0.3).unwrap();
        assert!((base.loss - perm.loss).abs() < 1e-12);

        // Scale every embedding by 3.
        let scaled: Vec<Embedding> = batch
            .iter()
            .map(|e| Embedding(e.values().iter().map(|v| v * 3.0).collect()))
            .collect();
        let sc = angular_prototypical_loss(&scaled, n, m, 2.0, -0.3).unwrap();
        assert!((base.loss - sc.loss).abs() < 1e-12);
    }

    #[test]
    fn average_embedding_cases() {
        let v = Embedding(vec![1.0, -2.0, 3.0]);
        assert_eq!(average_embedding(std::slice::from_ref(&v)).unwrap(), v);

        let neg = Embedding(vec![-1.0, 2.0, -3.0]);
        let zero = average_embedding(&[v.clone(), neg]).unwrap();
        assert_eq!(zero.values(), &[0.0, 0.0, 0.0]);

        let mut rng = Rng::new(14);
        let five: Vec<Embedding> = (0..5)
            .map(|_| Embedding((0..4).map(|_| rng.uniform(-1.0, 1.0)).collect()))
            .collect();
        let avg = average_embedding(&five).unwrap();
        for i in 0..4 {
            let mut s = 0.0;
            for e in &five {
                s += e.values()[i];
            }
            assert!((avg.values()[i] - s / 5.0).abs() < 1e-15);
        }

        assert!(average_embedding(&[]).is_err());
    }

    #[test]
    fn padding_does_not_change_the_embedding() {
        let corpus = small_corpus(3, 2, 21);
        let model =
            SpeakerModel::new(tiny_config(corpus.inventory()), corpus.inventory().clone(), 9)
                .unwrap();
        for u in corpus.utterances().iter().take(3) {
            let alone = model.extract_embedding(u, corpus.inventory()).unwrap();
            let padded = model
                .extract_embedding_padded(u, corpus.inventory(), u.len() + 7)
                .unwrap();
            for (a, p) in alone.values().iter().zip(padded.values()) {
                assert!((a - p).abs() < 1e-5, "{a} vs {p}");
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_reproduces_forward_bitwise() {
        let corpus = small_corpus(2, 2, 33);
        let model =
            SpeakerModel::new(tiny_config(corpus.inventory()), corpus.inventory().clone(), 11)
                .unwrap();
        let ck = model.to_checkpoint(TrainingMeta::default()).unwrap();
        let bytes = ck.to_bytes().unwrap();
        let restored =
            SpeakerModel::from_checkpoint(&ModelCheckpoint::from_bytes(&bytes).unwrap()).unwrap();
        let u = &corpus.utterances()[1];
        let a = model.extract_embedding(u, corpus.inventory()).unwrap();
        let b = restored.extract_embedding(u, corpus.inventory()).unwrap();
        assert_eq!(a, b, "reloaded forward must be bit-identical");
    }

    #[test]
    fn smoke_training_beats_chance_and_is_deterministic() {
        let corpus = small_corpus(10, 6, 55);
        let (train, valid, _) = split_corpus(&corpus, 6, 4, 0, 5).unwrap();
        let opts = TrainerOptions {
            epochs: 30,
            eval_every: 10,
            patience_evals: 0,
            batch_speakers: 4,
            batch_utterances: 2,
            episodes_per_epoch: 2,
            learning_rate: 1e-3,
            grad_clip: 5.0,
            valid_trials_same: 40,
            valid_trials_diff: 40,
            seed: 17,
        };
        let cfg = tiny_config(corpus.inventory());
        let out = train_speaker_model(&train, &valid, &cfg, &opts).unwrap();
        let best = out.meta.best_metric.expect("training evaluated");
        assert!(best < 0.5, "best validation EER {best} should beat chance");
        assert_eq!(out.meta.epochs_run, 30);
        assert_eq!(out.trajectory.len(), 3);

        let again = train_speaker_model(&train, &valid, &cfg, &opts).unwrap();
        assert_eq!(
            out.model.params, again.model.params,
            "same seed must reproduce the checkpoint exactly"
        );
    }

    #[test]
    fn trainer_defaults_follow_the_reference_protocol() {
        let opts = TrainerOptions::default();
        assert_eq!(opts.epochs, 1000, "epoch cap");
        assert_eq!(opts.eval_every, 10, "evaluation cadence");
    }

    #[test]
    fn eer_is_invariant_under_global_embedding_scaling() {
        use crate::corpus::make_trial_pairs;
        let corpus = small_corpus(4, 4, 88);
        let model =
            SpeakerModel::new(tiny_config(corpus.inventory()), corpus.inventory().clone(), 2)
                .unwrap();
        let embeddings = model.extract_corpus_embeddings(&corpus).unwrap();
        let trials = make_trial_pairs(&corpus, 12, 12, 3).unwrap();
        let base = compute_eer(&trials, &trial_scores(&embeddings, &trials).unwrap()).unwrap();
        let scaled: Vec<Embedding> = embeddings
            .iter()
            .map(|e| Embedding(e.values().iter().map(|v| v * 37.5).collect()))
            .collect();
        let after = compute_eer(&trials, &trial_scores(&scaled, &trials).unwrap()).unwrap();
        assert_eq!(base.eer, after.eer);
    }

    #[test]
    fn training_rejects_undersized_corpora() {
        let corpus = small_corpus(3, 2, 70);
        let (train, valid, _) = split_corpus(&corpus, 2, 1, 0, 5).unwrap();
        let opts = TrainerOptions {
            batch_speakers: 4,
            batch_utterances: 2,
            ..TrainerOptions::default()
        };
        // Validation with one speaker fails the precondition.
        assert!(train_speaker_model(&train, &valid, &EncoderConfig::default(), &opts).is_err());
    }
}
