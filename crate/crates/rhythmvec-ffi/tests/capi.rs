//! Drive the C ABI end to end: generate a corpus, train tiny models through
//! the core library, save checkpoints, and consume everything through the
//! FFI entry points.

use std::ffi::{CStr, CString};

use rhythmvec::checkpoint::TrainingMeta;
use rhythmvec::corpus::{generate_synthetic_corpus, split_corpus, SynthSpec};
use rhythmvec::dur_model::{DurModelConfig, DurationModel};
use rhythmvec::features::BundleConfig;
use rhythmvec::spk_model::{EncoderConfig, SpeakerModel};

use rhythmvec_ffi::*;

fn tiny_synth_spec() -> SynthSpec {
    SynthSpec {
        n_speakers: 4,
        utterances_per_speaker: 3,
        mean_rate: 8.0,
        speaker_rate_sd: 0.2,
        phoneme_class_bias_sd: 0.15,
        utterance_jitter_sd: 0.03,
        frame_noise_sd: 0.03,
        intrinsic_sd: 0.2,
        script_pool: vec![
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            vec!["d".into(), "a".into(), "b".into(), "c".into(), "a".into()],
        ],
        shared_scripts: true,
        n_phoneme_classes: 2,
        seed: 99,
    }
}

fn c_path(path: &std::path::Path) -> CString {
    CString::new(path.to_str().expect("utf8 path")).expect("no NUL")
}

#[test]
fn corpus_round_trip_through_ffi() {
    let dir = tempfile::tempdir().unwrap();
    let spec_json = CString::new(serde_json::to_string(&tiny_synth_spec()).unwrap()).unwrap();

    unsafe {
        let corpus = rvec_corpus_generate(spec_json.as_ptr());
        assert!(!corpus.is_null(), "generate failed: {:?}", last_error());
        assert_eq!(rvec_corpus_num_speakers(corpus), 4);
        assert_eq!(rvec_corpus_num_utterances(corpus), 12);

        let path = dir.path().join("corpus.jsonl");
        let cpath = c_path(&path);
        assert_eq!(rvec_corpus_save(corpus, cpath.as_ptr()), RvecStatus::Ok);

        let reloaded = rvec_corpus_load(cpath.as_ptr());
        assert!(!reloaded.is_null());
        assert_eq!(rvec_corpus_num_utterances(reloaded), 12);

        // Also through the in-memory parser.
        let bytes = std::fs::read(&path).unwrap();
        let parsed = rvec_corpus_parse(bytes.as_ptr(), bytes.len());
        assert!(!parsed.is_null());
        assert_eq!(rvec_corpus_num_speakers(parsed), 4);

        rvec_corpus_free(corpus);
        rvec_corpus_free(reloaded);
        rvec_corpus_free(parsed);
    }
}

#[test]
fn invalid_corpus_sets_error() {
    let bad = b"{\"speaker\":\"s\",\"utterance\":\"u\",\"phonemes\":[\"a\"],\"durations_ms\":[0]}\n";
    unsafe {
        let corpus = rvec_corpus_parse(bad.as_ptr(), bad.len());
        assert!(corpus.is_null());
        let msg = last_error();
        assert!(msg.contains("line 1"), "unexpected message {msg:?}");
    }
}

fn last_error() -> String {
    unsafe {
        CStr::from_ptr(rvec_last_error())
            .to_string_lossy()
            .into_owned()
    }
}

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        n_layers: 1,
        model_dim: 8,
        n_heads: 2,
        hidden_dim: 12,
        bundle: BundleConfig {
            n_pre: 1,
            n_follow: 1,
        },
        embed_dim: 4,
        attn_hidden: 6,
        features: Default::default(),
        positional_encoding: true,
        normalize_durations: false,
    }
}

#[test]
fn model_handles_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_synthetic_corpus(&tiny_synth_spec()).unwrap();
    let (train, _, _) = split_corpus(&corpus, 4, 0, 0, 1).unwrap();

    // Untrained models are enough to exercise the ABI surface.
    let spk = SpeakerModel::new(tiny_encoder(), train.inventory().clone(), 5).unwrap();
    let spk_path = dir.path().join("spk.rvec");
    spk.to_checkpoint(TrainingMeta::default())
        .unwrap()
        .save(&spk_path)
        .unwrap();

    let dur_cfg = DurModelConfig {
        n_blocks: 1,
        model_dim: 8,
        n_heads: 2,
        hidden_dim: 12,
        linguistic_dim: 0,
        embed_dim: 4,
        positional_encoding: true,
        log_targets: false,
    };
    let dur = DurationModel::new(dur_cfg, train.inventory().clone(), 6).unwrap();
    let dur_path = dir.path().join("dur.rvec");
    dur.to_checkpoint(TrainingMeta::default())
        .unwrap()
        .save(&dur_path)
        .unwrap();

    let c_spk = c_path(&spk_path);
    let c_dur = c_path(&dur_path);
    unsafe {
        let spk_handle = rvec_speaker_model_load(c_spk.as_ptr());
        assert!(!spk_handle.is_null(), "{}", last_error());
        assert_eq!(rvec_speaker_embed_dim(spk_handle), 4);
        assert_eq!(rvec_speaker_inventory_size(spk_handle), 4);

        let ids: Vec<u32> = vec![0, 1, 2, 3, 1];
        let durations = vec![0.12, 0.1, 0.15, 0.09, 0.11];
        let mut emb = vec![0.0f64; 4];
        let status = rvec_speaker_embed(
            spk_handle,
            ids.as_ptr(),
            durations.as_ptr(),
            ids.len(),
            emb.as_mut_ptr(),
        );
        assert_eq!(status, RvecStatus::Ok, "{}", last_error());
        assert!(emb.iter().any(|&v| v != 0.0));

        // The FFI embedding must match the library call exactly.
        let utt = rhythmvec::corpus::Utterance::new(
            String::new(),
            String::new(),
            ids.iter().map(|&i| i as usize).collect(),
            durations.clone(),
            4,
        )
        .unwrap();
        let direct = spk.extract_embedding(&utt, train.inventory()).unwrap();
        assert_eq!(emb, direct.values());

        // Out-of-range phoneme id is rejected.
        let bad_ids = [9u32];
        let bad_dur = [0.1];
        let mut out = vec![0.0f64; 4];
        let status = rvec_speaker_embed(
            spk_handle,
            bad_ids.as_ptr(),
            bad_dur.as_ptr(),
            1,
            out.as_mut_ptr(),
        );
        assert_eq!(status, RvecStatus::InvalidArgument);

        let dur_handle = rvec_duration_model_load(c_dur.as_ptr());
        assert!(!dur_handle.is_null(), "{}", last_error());
        assert_eq!(rvec_duration_embed_dim(dur_handle), 4);
        let mut pred = vec![0.0f64; ids.len()];
        let status = rvec_duration_predict(
            dur_handle,
            ids.as_ptr(),
            ids.len(),
            emb.as_ptr(),
            emb.len(),
            pred.as_mut_ptr(),
        );
        assert_eq!(status, RvecStatus::Ok, "{}", last_error());
        assert!(pred.iter().all(|&d| d >= 0.001));

        // Kind mismatch: loading a duration checkpoint as a speaker model.
        let wrong = rvec_speaker_model_load(c_dur.as_ptr());
        assert!(wrong.is_null());
        assert!(last_error().contains("checkpoint"), "{}", last_error());

        rvec_speaker_model_free(spk_handle);
        rvec_duration_model_free(dur_handle);
    }
}

#[test]
fn metric_entry_points() {
    unsafe {
        let a = [1.0, 0.0, 2.0];
        let b = [1.0, 0.0, 2.0];
        let mut cos = 0.0;
        assert_eq!(
            rvec_cosine_similarity(a.as_ptr(), b.as_ptr(), 3, &mut cos),
            RvecStatus::Ok
        );
        assert!((cos - 1.0).abs() < 1e-12);

        let zero = [0.0, 0.0, 0.0];
        assert_eq!(
            rvec_cosine_similarity(a.as_ptr(), zero.as_ptr(), 3, &mut cos),
            RvecStatus::InvalidArgument
        );

        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [1u8, 1, 0, 0];
        let mut eer = 1.0;
        let mut threshold = 0.0;
        assert_eq!(
            rvec_eer(scores.as_ptr(), labels.as_ptr(), 4, &mut eer, &mut threshold),
            RvecStatus::Ok
        );
        assert_eq!(eer, 0.0);

        let xs: Vec<f64> = (0..50).map(|i| i as f64 / 50.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| 2.0 * x).collect();
        let mut r = 0.0;
        assert_eq!(
            rvec_pearson(xs.as_ptr(), ys.as_ptr(), 50, &mut r),
            RvecStatus::Ok
        );
        assert!((r - 1.0).abs() < 1e-12);

        let mut m = 0.0;
        assert_eq!(rvec_mic(xs.as_ptr(), ys.as_ptr(), 50, &mut m), RvecStatus::Ok);
        assert!(m > 0.9);

        let durations = [0.125; 8];
        let mut rate = 0.0;
        assert_eq!(
            rvec_speaking_rate(durations.as_ptr(), 8, &mut rate),
            RvecStatus::Ok
        );
        assert_eq!(rate, 8.0);

        assert!(!rvec_version().is_null());
    }
}
