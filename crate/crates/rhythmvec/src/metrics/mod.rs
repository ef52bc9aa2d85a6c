//! Evaluation mathematics: EER, duration RMSE and correlation, speaking rate,
//! cosine similarity, MIC, 2-D projection, and the rhythm relation report.
//!
//! Every operation here is pure: repeat calls on the same input return the
//! same value.

mod mic;
mod projection;
mod relation;

pub use mic::{mic, mic_exhaustive};
pub use projection::project_embeddings_2d;
pub use relation::{rhythm_relation_report, PairScope, ScatterReport};

use serde::{Deserialize, Serialize};

use crate::corpus::{TrialSet, Utterance};
use crate::error::{Error, Result};

/// Cosine similarity of two equal-length nonzero vectors.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cosine similarity of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidInput(
            "cosine similarity undefined for a zero vector".into(),
        ));
    }
    Ok(dot / (na * nb))
}

/// Equal error rate result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EERResult {
    /// Fraction in [0, 1] where FAR and FRR cross.
    pub eer: f64,
    /// Score threshold at the crossing.
    pub threshold: f64,
    pub n_target: usize,
    pub n_impostor: usize,
}

/// Equal error rate of verification scores against trial labels.
///
/// Higher score means "more likely same speaker". Thresholds sweep the score
/// values; `FAR(t)` is the fraction of impostor scores `>= t` and `FRR(t)`
/// the fraction of target scores `< t`. The EER is taken at the FAR/FRR
/// crossing, linearly interpolated between the two adjacent operating points.
pub fn compute_eer(trials: &TrialSet, scores: &[f64]) -> Result<EERResult> {
    if scores.len() != trials.pairs.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} trials",
            scores.len(),
            trials.pairs.len()
        )));
    }
    let mut targets = Vec::new();
    let mut impostors = Vec::new();
    for (pair, &s) in trials.pairs.iter().zip(scores) {
        if !s.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite score {s}")));
        }
        if pair.same_speaker {
            targets.push(s);
        } else {
            impostors.push(s);
        }
    }
    eer_from_scores(&targets, &impostors)
}

/// EER from raw target/impostor score sets.
pub fn eer_from_scores(targets: &[f64], impostors: &[f64]) -> Result<EERResult> {
    if targets.is_empty() || impostors.is_empty() {
        return Err(Error::InvalidInput(
            "EER needs at least one target and one impostor score".into(),
        ));
    }
    let n_t = targets.len() as f64;
    let n_i = impostors.len() as f64;

    let mut thresholds: Vec<f64> = targets.iter().chain(impostors).copied().collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    thresholds.dedup();
    // Virtual operating point above every score: FAR = 0, FRR = 1.
    thresholds.push(thresholds[thresholds.len() - 1] + 1.0);

    let mut sorted_t = targets.to_vec();
    sorted_t.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let mut sorted_i = impostors.to_vec();
    sorted_i.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));

    let count_below = |sorted: &[f64], t: f64| sorted.partition_point(|&x| x < t);

    let operating_point = |t: f64| -> (f64, f64) {
        let far = (sorted_i.len() - count_below(&sorted_i, t)) as f64 / n_i;
        let frr = count_below(&sorted_t, t) as f64 / n_t;
        (far, frr)
    };

    let mut prev = {
        let (far, frr) = operating_point(thresholds[0]);
        (thresholds[0], far, frr)
    };
    if prev.1 - prev.2 == 0.0 {
        return Ok(EERResult {
            eer: prev.1,
            threshold: prev.0,
            n_target: targets.len(),
            n_impostor: impostors.len(),
        });
    }
    for &t in &thresholds[1..] {
        let (far, frr) = operating_point(t);
        let diff = far - frr;
        if diff == 0.0 {
            return Ok(EERResult {
                eer: far,
                threshold: t,
                n_target: targets.len(),
                n_impostor: impostors.len(),
            });
        }
        if diff < 0.0 {
            // Crossing sits between the previous point and this one.
            let (t0, f0, r0) = prev;
            let d0 = f0 - r0;
            let frac = d0 / (d0 - diff);
            let eer = f0 + frac * (far - f0);
            let threshold = t0 + frac * (t - t0);
            return Ok(EERResult {
                eer,
                threshold,
                n_target: targets.len(),
                n_impostor: impostors.len(),
            });
        }
        prev = (t, far, frr);
    }
    unreachable!("FAR - FRR reaches -1 at the virtual threshold");
}

/// Root-mean-square error between predicted and reference durations,
/// reported in milliseconds (inputs are seconds).
pub fn duration_rmse(pred: &[f64], reference: &[f64]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::Shape(format!(
            "duration_rmse lengths {} vs {}",
            pred.len(),
            reference.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("duration_rmse of empty sequences".into()));
    }
    let mse = pred
        .iter()
        .zip(reference)
        .map(|(p, r)| (p - r) * (p - r))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(mse.sqrt() * 1000.0)
}

/// Pearson correlation coefficient of paired samples.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!(
            "pearson lengths {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidInput("pearson needs at least 2 samples".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::InvalidInput(
            "pearson undefined for zero-variance input".into(),
        ));
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

/// Pearson correlation of two aligned duration sequences.
pub fn duration_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    pearson(a, b)
}

/// Speaking rate in phonemes per second: T / total duration.
pub fn speaking_rate(utterance: &Utterance) -> f64 {
    utterance.len() as f64 / utterance.total_duration()
}

/// Speaking rate in mora per second for corpora with a known mora weight per
/// phoneme symbol (e.g. 1 for CV units, 0 for non-moraic segments). Symbols
/// absent from the table count 0 mora.
pub fn speaking_rate_mora(
    utterance: &Utterance,
    inventory: &crate::corpus::PhonemeInventory,
    mora_per_symbol: &std::collections::BTreeMap<String, f64>,
) -> f64 {
    let mora: f64 = utterance
        .phonemes()
        .iter()
        .map(|&p| {
            mora_per_symbol
                .get(inventory.symbol(p))
                .copied()
                .unwrap_or(0.0)
        })
        .sum();
    mora / utterance.total_duration()
}

/// One-sided sign test: probability of `wins` or more successes out of
/// `trials` under a fair coin. Exact binomial tail.
pub fn sign_test_p(wins: usize, trials: usize) -> f64 {
    assert!(wins <= trials, "wins {wins} > trials {trials}");
    let n = trials as f64;
    // term = C(n, k) / 2^n, advanced incrementally over k.
    let mut term = 0.5f64.powi(trials as i32);
    let mut tail = 0.0;
    for k in 0..=trials {
        if k >= wins {
            tail += term;
        }
        if k < trials {
            term *= (n - k as f64) / (k as f64 + 1.0);
        }
    }
    tail.min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{TrialPair, TrialSet};
    use crate::rng::Rng;

    fn trialset(labels: &[bool]) -> TrialSet {
        let pairs: Vec<TrialPair> = labels
            .iter()
            .enumerate()
            .map(|(i, &same)| TrialPair {
                a: 2 * i,
                b: 2 * i + 1,
                same_speaker: same,
            })
            .collect();
        let n_same = labels.iter().filter(|&&s| s).count();
        TrialSet {
            n_same,
            n_diff: labels.len() - n_same,
            pairs,
        }
    }

    #[test]
    fn cosine_basic_cases() {
        let v = [1.0, 2.0, -3.0];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]).is_err());

        // Naive-loop oracle.
        let a = [1.0, 2.0, 3.0];
        let b = [4.0, 5.0, 6.0];
        let mut dot = 0.0f64;
        let mut na = 0.0f64;
        let mut nb = 0.0f64;
        for i in 0..3 {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        let expect = dot / (na.sqrt() * nb.sqrt());
        assert!((cosine_similarity(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn eer_perfect_separation_is_zero() {
        let trials = trialset(&[true, true, false, false]);
        let scores = [0.9, 0.9, 0.1, 0.1];
        let r = compute_eer(&trials, &scores).unwrap();
        assert_eq!(r.eer, 0.0);
        assert_eq!((r.n_target, r.n_impostor), (2, 2));
    }

    #[test]
    fn eer_inverted_scores_is_one() {
        let trials = trialset(&[true, true, false, false]);
        let scores = [0.1, 0.1, 0.9, 0.9];
        let r = compute_eer(&trials, &scores).unwrap();
        assert_eq!(r.eer, 1.0);
    }

    #[test]
    fn eer_requires_both_classes() {
        let trials = trialset(&[true, true]);
        assert!(compute_eer(&trials, &[0.5, 0.6]).is_err());
    }

    /// Exhaustive threshold sweep with naive counting; same crossing
    /// convention as the implementation.
    pub(super) fn eer_brute_force(targets: &[f64], impostors: &[f64]) -> f64 {
        let mut thresholds: Vec<f64> = targets.iter().chain(impostors).copied().collect();
        thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        thresholds.dedup();
        thresholds.push(thresholds[thresholds.len() - 1] + 1.0);
        let op = |t: f64| -> (f64, f64) {
            let far = impostors.iter().filter(|&&x| x >= t).count() as f64 / impostors.len() as f64;
            let frr = targets.iter().filter(|&&x| x < t).count() as f64 / targets.len() as f64;
            (far, frr)
        };
        let mut prev: Option<(f64, f64)> = None;
        for &t in &thresholds {
            let (far, frr) = op(t);
            let diff = far - frr;
            if diff == 0.0 {
                return far;
            }
            if diff < 0.0 {
                let (f0, r0) = prev.expect("diff starts positive");
                let d0 = f0 - r0;
                let frac = d0 / (d0 - diff);
                return f0 + frac * (far - f0);
            }
            prev = Some((far, frr));
        }
        unreachable!()
    }

    #[test]
    fn eer_matches_brute_force_on_named_case() {
        let targets = [0.9, 0.7, 0.4, 0.2];
        let impostors = [0.8, 0.5, 0.3, 0.1];
        let got = eer_from_scores(&targets, &impostors).unwrap().eer;
        let want = eer_brute_force(&targets, &impostors);
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }

    #[test]
    fn eer_matches_brute_force_randomized() {
        let mut rng = Rng::new(99);
        for case in 0..500 {
            let n_t = 1 + rng.next_below(10);
            let n_i = 1 + rng.next_below(10);
            // Coarse grid makes score ties common.
            let draw = |rng: &mut Rng| (rng.next_below(11) as f64) / 10.0;
            let targets: Vec<f64> = (0..n_t).map(|_| draw(&mut rng)).collect();
            let impostors: Vec<f64> = (0..n_i).map(|_| draw(&mut rng)).collect();
            let got = eer_from_scores(&targets, &impostors).unwrap().eer;
            let want = eer_brute_force(&targets, &impostors);
            assert!(
                (got - want).abs() <= 1e-12,
                "case {case}: {got} vs {want} (targets {targets:?}, impostors {impostors:?})"
            );
        }
    }

    #[test]
    fn eer_invariant_under_monotone_transform() {
        let mut rng = Rng::new(7);
        for _ in 0..100 {
            let targets: Vec<f64> = (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let impostors: Vec<f64> = (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let base = eer_from_scores(&targets, &impostors).unwrap().eer;
            let warp = |x: f64| (3.0 * x).exp() + 0.5 * x;
            let wt: Vec<f64> = targets.iter().map(|&x| warp(x)).collect();
            let wi: Vec<f64> = impostors.iter().map(|&x| warp(x)).collect();
            let warped = eer_from_scores(&wt, &wi).unwrap().eer;
            assert!(
                (base - warped).abs() < 1e-9,
                "monotone transform changed EER: {base} vs {warped}"
            );
        }
    }

    #[test]
    fn rmse_cases() {
        let a = [0.1, 0.2, 0.3];
        assert_eq!(duration_rmse(&a, &a).unwrap(), 0.0);
        let shifted: Vec<f64> = a.iter().map(|x| x + 0.010).collect();
        assert!((duration_rmse(&shifted, &a).unwrap() - 10.0).abs() < 1e-9);

        let mut rng = Rng::new(3);
        let p: Vec<f64> = (0..20).map(|_| rng.uniform(0.01, 0.5)).collect();
        let r: Vec<f64> = (0..20).map(|_| rng.uniform(0.01, 0.5)).collect();
        let mut acc = 0.0;
        for i in 0..20 {
            acc += (p[i] - r[i]) * (p[i] - r[i]);
        }
        let want = (acc / 20.0).sqrt() * 1000.0;
        assert!((duration_rmse(&p, &r).unwrap() - want).abs() < 1e-12);
        assert!(duration_rmse(&p, &r[..10]).is_err());
    }

    #[test]
    fn pearson_cases() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v + 10.0).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(pearson(&x, &[1.0, 1.0, 1.0, 1.0]).is_err());

        // Covariance-formula oracle on random input.
        let mut rng = Rng::new(5);
        let xs: Vec<f64> = (0..50).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let ys: Vec<f64> = (0..50).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let n = 50.0;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let cov = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
        let sx = (xs.iter().map(|a| (a - mx) * (a - mx)).sum::<f64>() / n).sqrt();
        let sy = (ys.iter().map(|b| (b - my) * (b - my)).sum::<f64>() / n).sqrt();
        let want = cov / (sx * sy);
        assert!((pearson(&xs, &ys).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn speaking_rate_cases() {
        let u = Utterance::new("s".into(), "u".into(), vec![0; 10], vec![0.125; 10], 2).unwrap();
        assert_eq!(speaking_rate(&u), 8.0);
        let one = Utterance::new("s".into(), "u".into(), vec![0], vec![0.5], 2).unwrap();
        assert_eq!(speaking_rate(&one), 2.0);
        // rate * total duration == T exactly.
        assert_eq!(speaking_rate(&u) * u.total_duration(), 10.0);
    }

    #[test]
    fn mora_rate_uses_the_mapping_table() {
        use crate::corpus::PhonemeInventory;
        let inventory =
            PhonemeInventory::new(vec!["ka".into(), "q".into(), "sil".into()]).unwrap();
        // "ka" is one mora, the glottal stop half, silence none.
        let table: std::collections::BTreeMap<String, f64> = [
            ("ka".to_string(), 1.0),
            ("q".to_string(), 0.5),
        ]
        .into_iter()
        .collect();
        let u = Utterance::new(
            "s".into(),
            "u".into(),
            vec![0, 1, 2, 0],
            vec![0.1, 0.1, 0.2, 0.1],
            3,
        )
        .unwrap();
        // 1 + 0.5 + 0 + 1 = 2.5 mora over 0.5 s.
        assert!((speaking_rate_mora(&u, &inventory, &table) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn sign_test_values() {
        // p(10 of 10) = 2^-10; p(0 of n) = 1.
        assert!((sign_test_p(10, 10) - 1.0 / 1024.0).abs() < 1e-12);
        assert_eq!(sign_test_p(0, 12), 1.0);
        // p(9 of 12) = (C(12,9)+C(12,10)+C(12,11)+C(12,12)) / 4096 = 299/4096.
        assert!((sign_test_p(9, 12) - 299.0 / 4096.0).abs() < 1e-12);
    }
}
