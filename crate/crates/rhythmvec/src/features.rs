//! Model input features: per-phoneme one-hot + duration rows, ablation
//! variants, and the context-splicing bundle block.

use serde::{Deserialize, Serialize};

use crate::corpus::{PhonemeInventory, Utterance};
use crate::error::{Error, Result};
use crate::nn::Mat;

/// T x D feature matrix fed to the models.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    data: Mat,
}

impl FeatureSequence {
    pub fn new(data: Mat) -> Result<Self> {
        if data.rows() == 0 {
            return Err(Error::InvalidInput("feature sequence must have T >= 1".into()));
        }
        Ok(FeatureSequence { data })
    }

    pub fn t_len(&self) -> usize {
        self.data.rows()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.data.row(t)
    }

    pub fn mat(&self) -> &Mat {
        &self.data
    }

    pub fn into_mat(self) -> Mat {
        self.data
    }
}

/// Which parts of (phoneme, duration) enter the feature rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// One-hot phoneme concatenated with its duration: D = K + 1.
    #[default]
    Full,
    /// One-hot phoneme only: D = K.
    PhonemesOnly,
    /// Duration only: D = 1.
    DurationOnly,
}

impl FeatureMode {
    pub fn dim(&self, k: usize) -> usize {
        match self {
            FeatureMode::Full => k + 1,
            FeatureMode::PhonemesOnly => k,
            FeatureMode::DurationOnly => 1,
        }
    }
}

/// Feature extraction settings. Durations enter raw (seconds) unless a
/// corpus-level z-scoring pair `(mean, sd)` is supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FeatureConfig {
    #[serde(default)]
    pub mode: FeatureMode,
    /// Resolved normalization constants; `None` means raw seconds.
    #[serde(default)]
    pub duration_norm: Option<(f64, f64)>,
}

impl FeatureConfig {
    pub fn dim(&self, k: usize) -> usize {
        self.mode.dim(k)
    }

    fn duration_value(&self, d: f64) -> f64 {
        match self.duration_norm {
            Some((mean, sd)) => (d - mean) / sd,
            None => d,
        }
    }
}

/// Corpus-level duration mean and sd, for the optional z-scoring flag.
pub fn duration_stats(utterances: &[Utterance]) -> (f64, f64) {
    let all: Vec<f64> = utterances
        .iter()
        .flat_map(|u| u.durations().iter().copied())
        .collect();
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let var = all.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    (mean, var.sqrt().max(1e-12))
}

/// Encode an utterance as feature rows (default full mode, raw durations).
pub fn encode_features(utterance: &Utterance, inventory: &PhonemeInventory) -> Result<FeatureSequence> {
    encode_features_with(utterance, inventory, &FeatureConfig::default())
}

/// Encode with an explicit mode / normalization config.
pub fn encode_features_with(
    utterance: &Utterance,
    inventory: &PhonemeInventory,
    config: &FeatureConfig,
) -> Result<FeatureSequence> {
    let k = inventory.k();
    if let Some(&bad) = utterance.phonemes().iter().find(|&&p| p >= k) {
        return Err(Error::InvalidInput(format!(
            "phoneme index {bad} out of range for K={k}"
        )));
    }
    let t_len = utterance.len();
    let d = config.dim(k);
    let mut out = Mat::zeros(t_len, d);
    for t in 0..t_len {
        let p = utterance.phonemes()[t];
        let dur = config.duration_value(utterance.durations()[t]);
        let row = out.row_mut(t);
        match config.mode {
            FeatureMode::Full => {
                row[p] = 1.0;
                row[k] = dur;
            }
            FeatureMode::PhonemesOnly => {
                row[p] = 1.0;
            }
            FeatureMode::DurationOnly => {
                row[0] = dur;
            }
        }
    }
    FeatureSequence::new(out)
}

/// Context window of the bundle block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleConfig {
    pub n_pre: usize,
    pub n_follow: usize,
}

impl Default for BundleConfig {
    fn default() -> Self {
        BundleConfig {
            n_pre: 2,
            n_follow: 2,
        }
    }
}

impl BundleConfig {
    pub fn window(&self) -> usize {
        self.n_pre + self.n_follow + 1
    }
}

/// Splice each position with its `n_pre` predecessors and `n_follow`
/// successors; out-of-range positions contribute zero vectors. Output is
/// T x D*(n_pre + n_follow + 1).
pub fn bundle(features: &FeatureSequence, config: &BundleConfig) -> FeatureSequence {
    let t_len = features.t_len();
    let d = features.dim();
    let window = config.window();
    let mut out = Mat::zeros(t_len, d * window);
    for i in 0..t_len {
        for (slot, offset) in (-(config.n_pre as isize)..=(config.n_follow as isize)).enumerate() {
            let src = i as isize + offset;
            if src < 0 || src >= t_len as isize {
                continue;
            }
            let dst = &mut out.row_mut(i)[slot * d..(slot + 1) * d];
            dst.copy_from_slice(features.row(src as usize));
        }
    }
    FeatureSequence::new(out).expect("bundle preserves T >= 1")
}
