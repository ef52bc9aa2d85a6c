//! Utterance/speaker data model, synthetic rhythm corpus generation, JSON-lines
//! import/export, speaker-disjoint splits, and verification trial pairs.
//!
//! # File format
//!
//! UTF-8 JSON lines. A canonical file starts with an inventory header:
//!
//! ```text
//! {"inventory":["a","b","sil"]}
//! {"speaker":"s1","utterance":"s1_u0","phonemes":["a","b"],"durations_ms":[100,150]}
//! ```
//!
//! The header is optional on import; without it the inventory is inferred as
//! the sorted set of symbols appearing in the records. Durations are integer
//! milliseconds on disk and seconds (f64) in memory.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Ordered set of distinct phoneme symbols. A symbol's index is stable for
/// the lifetime of the corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeInventory {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl PhonemeInventory {
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        if symbols.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "inventory needs at least 2 symbols, got {}",
                symbols.len()
            )));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::InvalidSpec(format!("duplicate phoneme symbol {s:?}")));
            }
        }
        Ok(PhonemeInventory { symbols, index })
    }

    /// Number of phoneme types (K).
    pub fn k(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, idx: usize) -> &str {
        &self.symbols[idx]
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }
}

/// One utterance: a phoneme-index sequence with per-phoneme durations in
/// seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub speaker_id: String,
    pub utterance_id: String,
    phonemes: Vec<usize>,
    durations: Vec<f64>,
}

impl Utterance {
    pub fn new(
        speaker_id: String,
        utterance_id: String,
        phonemes: Vec<usize>,
        durations: Vec<f64>,
        k: usize,
    ) -> Result<Self> {
        if phonemes.is_empty() {
            return Err(Error::InvalidSpec(format!(
                "utterance {utterance_id} is empty"
            )));
        }
        if phonemes.len() != durations.len() {
            return Err(Error::InvalidSpec(format!(
                "utterance {utterance_id}: {} phonemes but {} durations",
                phonemes.len(),
                durations.len()
            )));
        }
        if let Some(&bad) = phonemes.iter().find(|&&p| p >= k) {
            return Err(Error::InvalidSpec(format!(
                "utterance {utterance_id}: phoneme index {bad} out of range for K={k}"
            )));
        }
        if durations.iter().any(|&d| d.is_nan() || d <= 0.0) {
            return Err(Error::InvalidSpec(format!(
                "utterance {utterance_id}: nonpositive duration"
            )));
        }
        Ok(Utterance {
            speaker_id,
            utterance_id,
            phonemes,
            durations,
        })
    }

    pub fn len(&self) -> usize {
        self.phonemes.len()
    }

    pub fn is_empty(&self) -> bool {
        false // T >= 1 by construction
    }

    pub fn phonemes(&self) -> &[usize] {
        &self.phonemes
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn total_duration(&self) -> f64 {
        self.durations.iter().sum()
    }
}

/// A set of utterances over one shared inventory.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    inventory: PhonemeInventory,
    utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn new(inventory: PhonemeInventory, utterances: Vec<Utterance>) -> Result<Self> {
        for u in &utterances {
            if u.phonemes.iter().any(|&p| p >= inventory.k()) {
                return Err(Error::InvalidSpec(format!(
                    "utterance {} references a phoneme outside the inventory",
                    u.utterance_id
                )));
            }
        }
        Ok(Corpus {
            inventory,
            utterances,
        })
    }

    pub fn inventory(&self) -> &PhonemeInventory {
        &self.inventory
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Distinct speaker ids, sorted.
    pub fn speakers(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.utterances.iter().map(|u| u.speaker_id.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    /// Utterance indices grouped by speaker, speakers sorted.
    pub fn by_speaker(&self) -> BTreeMap<String, Vec<usize>> {
        let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, u) in self.utterances.iter().enumerate() {
            map.entry(u.speaker_id.clone()).or_default().push(i);
        }
        map
    }

    /// New corpus containing only utterances of the given speakers.
    pub fn restrict_to_speakers(&self, keep: &BTreeSet<String>) -> Corpus {
        let utterances = self
            .utterances
            .iter()
            .filter(|u| keep.contains(&u.speaker_id))
            .cloned()
            .collect();
        Corpus {
            inventory: self.inventory.clone(),
            utterances,
        }
    }
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

/// Parameters of the synthetic rhythm generator.
///
/// Durations are built multiplicatively from lognormal factors:
///
/// ```text
/// d(p) = intrinsic(p) * speaker_mult(speaker, class(p)) * utterance_jitter * frame_noise
/// ```
///
/// where `intrinsic(p) = exp(intrinsic_sd * z_p) / mean_rate` with a fixed
/// per-phoneme draw `z_p`, and `speaker_mult` combines a per-speaker global
/// rate factor with a per-speaker, per-phoneme-class bias. With every sd at
/// zero each duration is exactly `1 / mean_rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    /// Target mean speaking rate in phonemes/sec.
    #[serde(default = "default_mean_rate")]
    pub mean_rate: f64,
    /// Log-scale sd of the per-speaker global rate factor.
    #[serde(default)]
    pub speaker_rate_sd: f64,
    /// Log-scale sd of per-speaker, per-phoneme-class duration biases.
    #[serde(default)]
    pub phoneme_class_bias_sd: f64,
    /// Log-scale sd of the per-utterance tempo jitter.
    #[serde(default)]
    pub utterance_jitter_sd: f64,
    /// Log-scale sd of independent per-phoneme noise.
    #[serde(default)]
    pub frame_noise_sd: f64,
    /// Log-scale sd of fixed per-phoneme intrinsic durations.
    #[serde(default = "default_intrinsic_sd")]
    pub intrinsic_sd: f64,
    /// Scripts to recite, as phoneme symbol sequences.
    pub script_pool: Vec<Vec<String>>,
    /// When true every speaker recites the pool in the same order, so all
    /// speakers share scripts; when false each utterance draws a random one.
    #[serde(default = "default_true")]
    pub shared_scripts: bool,
    /// Number of phoneme classes for the per-speaker bias (index stripes).
    #[serde(default = "default_n_classes")]
    pub n_phoneme_classes: usize,
    pub seed: u64,
}

fn default_mean_rate() -> f64 {
    8.0
}

fn default_intrinsic_sd() -> f64 {
    0.25
}

fn default_true() -> bool {
    true
}

fn default_n_classes() -> usize {
    4
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers < 2 {
            return Err(Error::InvalidSpec(format!(
                "n_speakers must be >= 2, got {}",
                self.n_speakers
            )));
        }
        if self.utterances_per_speaker == 0 {
            return Err(Error::InvalidSpec("utterances_per_speaker must be >= 1".into()));
        }
        if self.mean_rate.is_nan() || self.mean_rate <= 0.0 {
            return Err(Error::InvalidSpec(format!(
                "mean_rate must be positive, got {}",
                self.mean_rate
            )));
        }
        for (name, sd) in [
            ("speaker_rate_sd", self.speaker_rate_sd),
            ("phoneme_class_bias_sd", self.phoneme_class_bias_sd),
            ("utterance_jitter_sd", self.utterance_jitter_sd),
            ("frame_noise_sd", self.frame_noise_sd),
            ("intrinsic_sd", self.intrinsic_sd),
        ] {
            if sd < 0.0 {
                return Err(Error::InvalidSpec(format!("{name} must be >= 0, got {sd}")));
            }
        }
        if self.script_pool.is_empty() {
            return Err(Error::InvalidSpec("script pool is empty".into()));
        }
        if self.script_pool.iter().any(|s| s.is_empty()) {
            return Err(Error::InvalidSpec("script pool contains an empty script".into()));
        }
        if self.n_phoneme_classes == 0 {
            return Err(Error::InvalidSpec("n_phoneme_classes must be >= 1".into()));
        }
        Ok(())
    }
}

/// Inventory implied by a script pool: sorted distinct symbols.
pub fn inventory_from_scripts(scripts: &[Vec<String>]) -> Result<PhonemeInventory> {
    let set: BTreeSet<&String> = scripts.iter().flatten().collect();
    PhonemeInventory::new(set.into_iter().cloned().collect())
}

/// Deterministic pool of random scripts over `inventory`, lengths uniform in
/// `[min_len, max_len]`.
pub fn random_script_pool(
    inventory: &PhonemeInventory,
    n_scripts: usize,
    min_len: usize,
    max_len: usize,
    seed: u64,
) -> Vec<Vec<String>> {
    assert!(min_len >= 1 && min_len <= max_len);
    let mut rng = Rng::derive(seed, "script-pool");
    (0..n_scripts)
        .map(|_| {
            let len = min_len + rng.next_below(max_len - min_len + 1);
            (0..len)
                .map(|_| inventory.symbol(rng.next_below(inventory.k())).to_owned())
                .collect()
        })
        .collect()
}

/// Synthesize a corpus from `spec`. Identical specs (seed included) produce
/// bit-identical corpora.
pub fn generate_synthetic_corpus(spec: &SynthSpec) -> Result<Corpus> {
    spec.validate()?;
    let inventory = inventory_from_scripts(&spec.script_pool)?;
    let k = inventory.k();

    // Fixed draw order: intrinsics, then per-speaker factors, then utterances.
    let mut rng_intrinsic = Rng::derive(spec.seed, "intrinsic");
    let intrinsic: Vec<f64> = (0..k)
        .map(|_| (spec.intrinsic_sd * rng_intrinsic.normal()).exp() / spec.mean_rate)
        .collect();

    let mut rng_speaker = Rng::derive(spec.seed, "speaker");
    let mut rng_utt = Rng::derive(spec.seed, "utterance");

    let scripts_idx: Vec<Vec<usize>> = spec
        .script_pool
        .iter()
        .map(|script| {
            script
                .iter()
                .map(|s| inventory.index_of(s).expect("script symbol in inventory"))
                .collect()
        })
        .collect();

    let id_width = (spec.n_speakers.max(spec.utterances_per_speaker) as f64)
        .log10()
        .floor() as usize
        + 1;
    let mut utterances = Vec::with_capacity(spec.n_speakers * spec.utterances_per_speaker);
    for s in 0..spec.n_speakers {
        let rate_factor = (spec.speaker_rate_sd * rng_speaker.normal()).exp();
        let class_bias: Vec<f64> = (0..spec.n_phoneme_classes)
            .map(|_| (spec.phoneme_class_bias_sd * rng_speaker.normal()).exp())
            .collect();
        let speaker_id = format!("spk{s:0id_width$}");

        for u in 0..spec.utterances_per_speaker {
            let script = if spec.shared_scripts {
                &scripts_idx[u % scripts_idx.len()]
            } else {
                &scripts_idx[rng_utt.next_below(scripts_idx.len())]
            };
            let jitter = (spec.utterance_jitter_sd * rng_utt.normal()).exp();
            let durations: Vec<f64> = script
                .iter()
                .map(|&p| {
                    let noise = (spec.frame_noise_sd * rng_utt.normal()).exp();
                    intrinsic[p]
                        * rate_factor
                        * class_bias[p % spec.n_phoneme_classes]
                        * jitter
                        * noise
                })
                .collect();
            let utterance_id = format!("{speaker_id}_u{u:0id_width$}");
            utterances.push(Utterance::new(
                speaker_id.clone(),
                utterance_id,
                script.clone(),
                durations,
                k,
            )?);
        }
    }
    Corpus::new(inventory, utterances)
}

// ---------------------------------------------------------------------------
// JSON-lines import/export
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    inventory: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    speaker: String,
    utterance: String,
    phonemes: Vec<String>,
    durations_ms: Vec<u64>,
}

/// Serialize a corpus to canonical JSON-lines bytes: inventory header first,
/// then one record per utterance with integer-millisecond durations.
pub fn corpus_to_jsonl(corpus: &Corpus) -> Result<Vec<u8>> {
    let mut out = String::new();
    let header = HeaderLine {
        inventory: corpus.inventory().symbols().to_vec(),
    };
    writeln!(out, "{}", serde_json::to_string(&header)?).expect("string write");
    for u in corpus.utterances() {
        let durations_ms = u
            .durations()
            .iter()
            .map(|&d| {
                let ms = (d * 1000.0).round();
                if ms < 1.0 {
                    Err(Error::InvalidSpec(format!(
                        "utterance {}: duration {d}s rounds below 1 ms",
                        u.utterance_id
                    )))
                } else {
                    Ok(ms as u64)
                }
            })
            .collect::<Result<Vec<u64>>>()?;
        let record = RecordLine {
            speaker: u.speaker_id.clone(),
            utterance: u.utterance_id.clone(),
            phonemes: u
                .phonemes()
                .iter()
                .map(|&p| corpus.inventory().symbol(p).to_owned())
                .collect(),
            durations_ms,
        };
        writeln!(out, "{}", serde_json::to_string(&record)?).expect("string write");
    }
    Ok(out.into_bytes())
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    std::fs::write(path, corpus_to_jsonl(corpus)?)?;
    Ok(())
}

/// Parse JSON-lines corpus bytes. See the module docs for the schema.
pub fn corpus_from_jsonl(bytes: &[u8]) -> Result<Corpus> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 0,
        msg: format!("not valid UTF-8: {e}"),
    })?;

    let mut lines = text.lines().enumerate().peekable();
    // Skip blank leading lines defensively is not needed; blank lines anywhere are an error.

    let mut declared: Option<Vec<String>> = None;
    if let Some(&(_, first)) = lines.peek() {
        if let Ok(header) = serde_json::from_str::<HeaderLine>(first) {
            declared = Some(header.inventory);
            lines.next();
        }
    }

    struct RawRecord {
        line: usize,
        speaker: String,
        utterance: String,
        phonemes: Vec<String>,
        durations: Vec<f64>,
    }

    let mut raw = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "blank line".into(),
            });
        }
        let rec: RecordLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if rec.phonemes.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("utterance {} has no phonemes", rec.utterance),
            });
        }
        if rec.phonemes.len() != rec.durations_ms.len() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!(
                    "{} phonemes but {} durations",
                    rec.phonemes.len(),
                    rec.durations_ms.len()
                ),
            });
        }
        if let Some(pos) = rec.durations_ms.iter().position(|&ms| ms == 0) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("duration_ms is 0 at position {pos}"),
            });
        }
        raw.push(RawRecord {
            line: line_no,
            speaker: rec.speaker,
            utterance: rec.utterance,
            phonemes: rec.phonemes,
            durations: rec.durations_ms.iter().map(|&ms| ms as f64 / 1000.0).collect(),
        });
    }

    let inventory = match declared {
        Some(symbols) => PhonemeInventory::new(symbols).map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?,
        None => {
            let set: BTreeSet<String> = raw
                .iter()
                .flat_map(|r| r.phonemes.iter().cloned())
                .collect();
            PhonemeInventory::new(set.into_iter().collect()).map_err(|e| Error::Parse {
                line: 0,
                msg: e.to_string(),
            })?
        }
    };

    let mut utterances = Vec::with_capacity(raw.len());
    for r in raw {
        let phonemes = r
            .phonemes
            .iter()
            .map(|s| {
                inventory.index_of(s).ok_or_else(|| Error::Parse {
                    line: r.line,
                    msg: format!("unknown phoneme {s:?}"),
                })
            })
            .collect::<Result<Vec<usize>>>()?;
        utterances.push(
            Utterance::new(r.speaker, r.utterance, phonemes, r.durations, inventory.k()).map_err(
                |e| Error::Parse {
                    line: r.line,
                    msg: e.to_string(),
                },
            )?,
        );
    }
    Corpus::new(inventory, utterances)
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let bytes = std::fs::read(path)?;
    corpus_from_jsonl(&bytes)
}

// ---------------------------------------------------------------------------
// Splits and trial pairs
// ---------------------------------------------------------------------------

/// Speaker-disjoint train/valid/test split (open-speaker protocol).
pub fn split_corpus(
    corpus: &Corpus,
    train_speakers: usize,
    valid_speakers: usize,
    test_speakers: usize,
    seed: u64,
) -> Result<(Corpus, Corpus, Corpus)> {
    let speakers = corpus.speakers();
    let wanted = train_speakers + valid_speakers + test_speakers;
    if wanted > speakers.len() {
        return Err(Error::Infeasible(format!(
            "split wants {wanted} speakers but the corpus has {}",
            speakers.len()
        )));
    }
    let mut order = speakers;
    Rng::derive(seed, "split").shuffle(&mut order);

    let take = |range: std::ops::Range<usize>| -> BTreeSet<String> {
        order[range].iter().cloned().collect()
    };
    let train = take(0..train_speakers);
    let valid = take(train_speakers..train_speakers + valid_speakers);
    let test = take(train_speakers + valid_speakers..wanted);
    Ok((
        corpus.restrict_to_speakers(&train),
        corpus.restrict_to_speakers(&valid),
        corpus.restrict_to_speakers(&test),
    ))
}

/// One verification trial: two distinct utterances and the ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialPair {
    /// Index into the corpus this set was built from.
    pub a: usize,
    pub b: usize,
    pub same_speaker: bool,
}

/// Labeled same/different utterance pairs for EER evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSet {
    pub pairs: Vec<TrialPair>,
    pub n_same: usize,
    pub n_diff: usize,
}

/// Sample `n_same` same-speaker and `n_diff` different-speaker unordered
/// pairs without repetition, deterministically for a given seed.
pub fn make_trial_pairs(
    corpus: &Corpus,
    n_same: usize,
    n_diff: usize,
    seed: u64,
) -> Result<TrialSet> {
    if corpus.speakers().len() < 2 {
        return Err(Error::Infeasible(
            "trial pairs need at least 2 speakers".into(),
        ));
    }
    let groups = corpus.by_speaker();
    let group_list: Vec<&Vec<usize>> = groups.values().collect();

    let mut same_pairs = Vec::new();
    for utts in &group_list {
        for i in 0..utts.len() {
            for j in i + 1..utts.len() {
                same_pairs.push((utts[i], utts[j]));
            }
        }
    }
    let mut diff_pairs = Vec::new();
    for gi in 0..group_list.len() {
        for gj in gi + 1..group_list.len() {
            for &a in group_list[gi] {
                for &b in group_list[gj] {
                    diff_pairs.push((a, b));
                }
            }
        }
    }

    if n_same > same_pairs.len() {
        return Err(Error::Infeasible(format!(
            "requested {n_same} same-speaker pairs but only {} exist",
            same_pairs.len()
        )));
    }
    if n_diff > diff_pairs.len() {
        return Err(Error::Infeasible(format!(
            "requested {n_diff} different-speaker pairs but only {} exist",
            diff_pairs.len()
        )));
    }

    let mut rng = Rng::derive(seed, "trials");
    rng.shuffle(&mut same_pairs);
    rng.shuffle(&mut diff_pairs);

    let mut pairs = Vec::with_capacity(n_same + n_diff);
    for &(a, b) in same_pairs.iter().take(n_same) {
        pairs.push(TrialPair {
            a,
            b,
            same_speaker: true,
        });
    }
    for &(a, b) in diff_pairs.iter().take(n_diff) {
        pairs.push(TrialPair {
            a,
            b,
            same_speaker: false,
        });
    }
    Ok(TrialSet {
        pairs,
        n_same,
        n_diff,
    })
}
