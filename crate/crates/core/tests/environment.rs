use std::sync::Arc;

use asrrl_core::env::{
    make_tradeoff_env, oracle_best, run_episode, Env, EnvOptions, GridSpec, SpeakerProfile,
    SyntheticVoice, Utterance, VoiceConfig, VoiceModel,
};
use asrrl_core::rng::substream;
use asrrl_core::scoring::{fuse_scores, RewardWeights};
use asrrl_core::{mean_init, Action, Embedding, RLConfig, Scenario};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn voice(d_e: usize, seed: u64) -> Arc<dyn VoiceModel> {
    Arc::new(SyntheticVoice::new(VoiceConfig { d_e, ..VoiceConfig::default() }, seed).unwrap())
}

fn calibration(model: &dyn VoiceModel) -> Utterance {
    Utterance {
        id: 0,
        features: model.calibration_text().clone(),
    }
}

fn check_ranges(model: &dyn VoiceModel, seed: u64) {
    let d = model.dims();
    let mut rng = substream(seed, "ranges");
    let target = model.sample_speaker(&mut rng, 0, 1).target_voiceprint;
    for i in 0..100_000 {
        // Mix typical embeddings with far-out ones to exercise the penalty branches.
        let scale = [0.1, 1.0, 10.0, 1e3][i % 4];
        let e = Embedding::new((0..d.d_e).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()).unwrap();
        let f_t = asrrl_core::TextFeatures::new((0..d.d_t).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
        let t = model.score_state(&f_t, &e, &target).unwrap();
        assert!((0.0..=1.0).contains(&t.sim()));
        assert!((0.0..=5.0).contains(&t.mos()));
        assert!((0.0..=1.0).contains(&t.intell()));
    }
}

#[test]
fn scores_stay_in_range_for_random_embeddings() {
    check_ranges(voice(16, 1).as_ref(), 1);
    let w = [0.6, 0.8, 0.0];
    check_ranges(&make_tradeoff_env(2, &w, 0.5).unwrap(), 2);
}

#[test]
fn traces_are_bit_identical_across_instances() {
    let run = || {
        let model = voice(8, 11);
        let mut rng = substream(11, "speakers");
        let profile = model.sample_speaker(&mut rng, 3, 1);
        let text = calibration(model.as_ref());
        let mut env = Env::new(Arc::clone(&model), EnvOptions::from_config(&RLConfig::default(), Scenario::Ss)).unwrap();
        let mut step = 0.0;
        run_episode(&mut env, &profile, &text, |_| {
            step += 1.0;
            Ok(Action::Ss { delta: (0..8).map(|i| ((i as f64 + step) * 0.37).sin()).collect() })
        })
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    let bits = |t: &asrrl_core::EpisodeTrace| -> Vec<u64> {
        t.steps.iter().flat_map(|s| s.embedding.as_slice().iter().map(|v| v.to_bits())).collect()
    };
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn fs_episode_reward_is_fusion_minus_mean() {
    let model = voice(6, 4);
    let config = RLConfig::default();
    let mut env = Env::new(Arc::clone(&model), EnvOptions::from_config(&config, Scenario::Fs)).unwrap();
    let mut rng = substream(4, "fs");
    let weights = env.options().weights;
    for i in 0..200 {
        let profile = model.sample_speaker(&mut rng, i, 4);
        let text = calibration(model.as_ref());
        let logits: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let trace = run_episode(&mut env, &profile, &text, |_| Ok(Action::Fs { logits: logits.clone() })).unwrap();
        assert_eq!(trace.steps.len(), 1);
        let fused = asrrl_core::fuse_fs(&profile.refs, &logits).unwrap().embedding;
        let at = |e: &Embedding| {
            fuse_scores(&model.score_state(&text.features, e, &profile.target_voiceprint).unwrap(), &weights)
        };
        let mean = mean_init(&profile.refs).unwrap();
        assert_eq!(trace.initial_embedding, mean);
        assert_eq!(trace.total_reward(), at(&fused) - at(&mean));
    }
}

#[test]
fn true_embedding_is_optimal_up_to_grid_slack() {
    let model: Arc<dyn VoiceModel> = Arc::new(
        SyntheticVoice::new(VoiceConfig { d_e: 2, speaker_scale: 0.5, ..VoiceConfig::default() }, 8).unwrap(),
    );
    let weights = RewardWeights::default();
    let mut rng = substream(8, "optimum");
    for i in 0..5 {
        let p: SpeakerProfile = model.sample_speaker(&mut rng, i, 1);
        let text = calibration(model.as_ref());
        let star = model.score_state(&text.features, &p.true_embedding, &p.target_voiceprint).unwrap();
        assert!((star.sim() - 1.0).abs() < 1e-12);
        let best = fuse_scores(&star, &weights);
        let grid = GridSpec::around(p.true_embedding.as_slice(), 0.1, 41);
        let r = oracle_best(model.as_ref(), &weights, &text.features, &p.target_voiceprint, &grid).unwrap();
        assert!(r.slack.is_finite());
        assert!(r.fused <= best + r.slack, "grid {} vs e* {best} (slack {})", r.fused, r.slack);
        // The raw encoder output is dominated too, once the grid covers it.
        let raw = &p.refs[0];
        let lo: Vec<f64> = raw.as_slice().iter().zip(p.true_embedding.as_slice()).map(|(a, b)| a.min(*b) - 0.01).collect();
        let hi: Vec<f64> = raw.as_slice().iter().zip(p.true_embedding.as_slice()).map(|(a, b)| a.max(*b) + 0.01).collect();
        let cover = GridSpec { lo, hi, points: vec![61, 61] };
        let r = oracle_best(model.as_ref(), &weights, &text.features, &p.target_voiceprint, &cover).unwrap();
        let raw_fused = fuse_scores(&model.score_state(&text.features, raw, &p.target_voiceprint).unwrap(), &weights);
        assert!(r.fused + r.slack >= raw_fused);
    }
}

proptest! {
    #[test]
    fn tradeoff_direction_trades_sim_for_quality(theta in 0.0f64..std::f64::consts::TAU, tau in 0.05f64..2.0, x in -3.0f64..3.0, dx in 0.01f64..2.0) {
        let w = [theta.cos(), theta.sin()];
        let env = make_tradeoff_env(1, &w, tau).unwrap();
        let f_t = env.calibration_text().clone();
        let at = |p: f64| env.score_state(&f_t, &Embedding::new(vec![p * w[0], p * w[1]]).unwrap(), &[]).unwrap();
        let (a, b) = (at(x), at(x + dx));
        prop_assert!(b.sim() > a.sim());
        if x >= tau {
            prop_assert!(b.mos() < a.mos());
            prop_assert!(b.intell() > a.intell());
        }
    }

    #[test]
    fn tradeoff_penalty_starts_at_the_threshold(tau in 0.05f64..2.0) {
        let env = make_tradeoff_env(1, &[0.0, 1.0], tau).unwrap();
        let f_t = env.calibration_text().clone();
        let at = |p: f64| env.score_state(&f_t, &Embedding::new(vec![0.3, p]).unwrap(), &[]).unwrap();
        prop_assert_eq!(at(tau).mos(), 5.0);
        prop_assert_eq!(at(tau).intell(), 0.0);
        prop_assert_eq!(at(0.0).sim(), 0.5);
    }
}

#[test]
fn tradeoff_refuses_non_unit_direction() {
    assert!(make_tradeoff_env(0, &[1.0, 1.0], 0.5).is_err());
    assert!(make_tradeoff_env(0, &[1.0], 0.0).is_err());
}
