//! Relation analysis between embedding-space similarity and rhythm similarity.
//!
//! For every eligible utterance pair the x coordinate is the cosine
//! similarity of the two embeddings and the y coordinate the Pearson
//! correlation of their phoneme durations. Pairs are eligible only when the
//! two utterances have identical phoneme sequences; pairs whose duration
//! correlation is undefined (length 1 or zero variance) are excluded.

use serde::{Deserialize, Serialize};

use super::{cosine_similarity, mic, pearson};
use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Which speaker pairings enter the scatter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PairScope {
    #[default]
    All,
    CrossSpeaker,
    WithinSpeaker,
}

impl PairScope {
    fn admits(&self, same_speaker: bool) -> bool {
        match self {
            PairScope::All => true,
            PairScope::CrossSpeaker => !same_speaker,
            PairScope::WithinSpeaker => same_speaker,
        }
    }
}

/// Scatter of (cosine similarity, duration correlation) with summary stats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterReport {
    pub points: Vec<(f64, f64)>,
    pub pearson_r: f64,
    pub mic: f64,
}

/// Build the relation scatter for all same-script utterance pairs.
/// `embeddings` must be aligned with `corpus.utterances()`.
pub fn rhythm_relation_report<E: AsRef<[f64]>>(
    corpus: &Corpus,
    embeddings: &[E],
    scope: PairScope,
) -> Result<ScatterReport> {
    if embeddings.len() != corpus.len() {
        return Err(Error::Shape(format!(
            "{} embeddings for {} utterances",
            embeddings.len(),
            corpus.len()
        )));
    }
    let utts = corpus.utterances();
    let mut points = Vec::new();
    for i in 0..utts.len() {
        for j in i + 1..utts.len() {
            if utts[i].phonemes() != utts[j].phonemes() {
                continue;
            }
            let same_speaker = utts[i].speaker_id == utts[j].speaker_id;
            if !scope.admits(same_speaker) {
                continue;
            }
            let corr = match pearson(utts[i].durations(), utts[j].durations()) {
                Ok(c) => c,
                Err(_) => continue, // undefined correlation: skip the pair
            };
            let cos = cosine_similarity(embeddings[i].as_ref(), embeddings[j].as_ref())?;
            points.push((cos, corr));
        }
    }
    if points.is_empty() {
        return Err(Error::InvalidInput(
            "no eligible same-script utterance pairs".into(),
        ));
    }
    if points.len() < 10 {
        return Err(Error::InvalidInput(format!(
            "relation report needs at least 10 eligible pairs for MIC, got {}",
            points.len()
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let pearson_r = pearson(&xs, &ys)?;
    let mic_value = mic(&xs, &ys)?;
    Ok(ScatterReport {
        points,
        pearson_r,
        mic: mic_value,
    })
}
