use std::sync::Arc;

use asrrl_core::agent::checkpoint::{from_json, to_json};
use asrrl_core::agent::{
    action_log_prob, load_checkpoint, loss_and_gradient, new_trainer, ppo_update, save_checkpoint,
    Adam, CheckpointError, NetworkSpec, Policy, PpoCoefs, RolloutBatch, SampleMode,
};
use asrrl_core::env::{Env, EnvOptions, SpeakerProfile, SyntheticVoice, Utterance, VoiceConfig, VoiceModel};
use asrrl_core::rng::substream;
use asrrl_core::{EncoderKind, RLConfig, Scenario, SegmentMask, StateDims, StateVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

fn tiny_spec(encoder: EncoderKind, scenario: Scenario) -> NetworkSpec {
    let dims = StateDims { d_t: 2, d_e: 2, d_v: 2 };
    NetworkSpec {
        encoder,
        hidden: 4,
        layers: 1,
        scenario,
        action_dim: match scenario {
            Scenario::Ss => dims.d_e,
            Scenario::Fs => 3,
        },
        dims,
        mask: SegmentMask::default(),
    }
}

fn random_state(spec: &NetworkSpec, rng: &mut impl Rng) -> StateVector {
    let layout = spec.state_layout();
    let values = (0..layout.len()).map(|_| rng.sample(StandardNormal)).collect();
    StateVector::from_parts(values, layout).unwrap()
}

/// Relative error `|a − n| / max(|a|, |n|, 1e-6)`; the floor keeps
/// coordinates whose true gradient is (near) zero from dividing by zero.
fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn gradient_check(encoder: EncoderKind, scenario: Scenario) -> f64 {
    let spec = tiny_spec(encoder, scenario);
    let mut rng = substream(21, "gradcheck");
    let mut policy = Policy::new(spec.clone(), -0.3, &mut rng).unwrap();
    // Give the observation normalization non-trivial values.
    let fit: Vec<StateVector> = (0..8).map(|_| random_state(&spec, &mut rng)).collect();
    policy.fit_obs_norm(&fit).unwrap();
    assert!(policy.parameter_count() <= 200, "{} parameters", policy.parameter_count());

    let mut batch = RolloutBatch::new(spec.state_len(), spec.action_dim);
    for done in [false, true] {
        let s = random_state(&spec, &mut rng);
        let sample = policy.select_action(&s, SampleMode::Sample, &mut rng).unwrap();
        batch.push(&s, &sample, rng.random_range(-1.0..1.0), done);
    }
    batch.finish(0.9, 0.95, false).unwrap();
    // Old log-probabilities away from the current ones put the first sample
    // inside the clip range and the second one outside it.
    batch.log_probs[0] -= 0.1;
    batch.log_probs[1] -= 0.6;
    batch.advantages = vec![0.7, 1.3];

    let coefs = PpoCoefs { clip_epsilon: 0.2, value_coef: 0.5, entropy_coef: 0.01 };
    let idx = [0, 1];
    let (_, grad) = loss_and_gradient(&policy, &batch, &idx, &coefs).unwrap();
    let trainable = policy.layout().trainable_mask();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..grad.len() {
        if !trainable[i] {
            assert_eq!(grad[i], 0.0);
            continue;
        }
        let x = policy.params()[i];
        policy.params_mut()[i] = x + h;
        let up = loss_and_gradient(&policy, &batch, &idx, &coefs).unwrap().0.total;
        policy.params_mut()[i] = x - h;
        let down = loss_and_gradient(&policy, &batch, &idx, &coefs).unwrap().0.total;
        policy.params_mut()[i] = x;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(grad[i], numeric));
    }
    worst
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    for encoder in [EncoderKind::Mlp, EncoderKind::Sequence] {
        for scenario in [Scenario::Ss, Scenario::Fs] {
            let err = gradient_check(encoder, scenario);
            assert!(err <= 1e-4, "{encoder:?}/{scenario}: max relative error {err:e}");
        }
    }
}

struct Fixture {
    model: Arc<dyn VoiceModel>,
    tasks: Vec<(SpeakerProfile, Utterance)>,
}

fn fixture() -> Fixture {
    let model: Arc<dyn VoiceModel> = Arc::new(
        SyntheticVoice::new(VoiceConfig { d_e: 4, d_t: 3, ..VoiceConfig::default() }, 2).unwrap(),
    );
    let mut rng = substream(2, "tasks");
    let tasks = (0..6)
        .map(|i| {
            let p = model.sample_speaker(&mut rng, i, 1);
            let t = Utterance {
                id: i,
                features: asrrl_core::TextFeatures::new((0..3).map(|_| rng.sample(StandardNormal)).collect()).unwrap(),
            };
            (p, t)
        })
        .collect();
    Fixture { model, tasks }
}

fn small_config() -> RLConfig {
    RLConfig {
        d_e: 4,
        d_t: 3,
        hidden: 16,
        rollout_batch: 96,
        minibatch_size: 32,
        ..RLConfig::default()
    }
}

#[test]
fn value_loss_collapses_on_a_frozen_batch() {
    let f = fixture();
    let mut config = small_config();
    config.update_epochs = 1;
    config.entropy_coef = 0.0;
    config.learning_rate = 1e-3;
    let mut env = Env::new(Arc::clone(&f.model), EnvOptions::from_config(&config, Scenario::Ss)).unwrap();
    let mut trainer = new_trainer(&config, Scenario::Ss, env.dims(), SegmentMask::default()).unwrap();
    let refs: Vec<(&SpeakerProfile, &Utterance)> = f.tasks.iter().map(|(p, t)| (p, t)).collect();
    let (batch, _) = trainer.collect(&mut env, &refs).unwrap();
    let all: Vec<usize> = (0..batch.len()).collect();
    let coefs = PpoCoefs::from(&config);
    let mut policy = trainer.policy().clone();
    let before = loss_and_gradient(&policy, &batch, &all, &coefs).unwrap().0.value_loss;
    let mut adam = Adam::new(&policy);
    let mut rng = substream(0, "overfit");
    for _ in 0..200 {
        ppo_update(&mut policy, &mut adam, &batch, &config, &mut rng).unwrap();
    }
    let after = loss_and_gradient(&policy, &batch, &all, &coefs).unwrap().0.value_loss;
    assert!(after <= 0.1 * before, "value loss {before:e} -> {after:e}");
}

#[test]
fn identical_seeds_give_identical_loss_curves() {
    let f = fixture();
    let config = small_config();
    let refs: Vec<(&SpeakerProfile, &Utterance)> = f.tasks.iter().map(|(p, t)| (p, t)).collect();
    let curve = || {
        let mut env = Env::new(Arc::clone(&f.model), EnvOptions::from_config(&config, Scenario::Ss)).unwrap();
        let mut trainer = new_trainer(&config, Scenario::Ss, env.dims(), SegmentMask::default()).unwrap();
        (0..3)
            .map(|_| trainer.iteration(&mut env, &refs).unwrap().loss)
            .collect::<Vec<_>>()
    };
    assert_eq!(curve(), curve());
}

#[test]
fn squashed_density_matches_histogram() {
    let spec = NetworkSpec {
        dims: StateDims { d_t: 1, d_e: 1, d_v: 1 },
        action_dim: 1,
        ..tiny_spec(EncoderKind::Mlp, Scenario::Ss)
    };
    let mut rng = substream(5, "histogram");
    let policy = Policy::new(spec.clone(), (0.8f64).ln(), &mut rng).unwrap();
    let state = random_state(&spec, &mut rng);
    let x = ndarray::ArrayView2::from_shape((1, state.len()), state.as_slice()).unwrap();
    let fwd = policy.forward(x);
    let (mean, log_std) = (fwd.mean[[0, 0]], fwd.log_std[0]);

    let bins = 100;
    let n = 1_000_000;
    let mut counts = vec![0usize; bins];
    for _ in 0..n {
        let a = policy.select_action(&state, SampleMode::Sample, &mut rng).unwrap().action.values()[0];
        let b = (((a + 1.0) / 2.0) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize;
        counts[b] += 1;
    }
    let density = |a: f64| action_log_prob(Scenario::Ss, &[a.atanh()], &[mean], &[log_std]).exp();
    let width = 2.0 / bins as f64;
    let mut l1 = 0.0;
    for (b, &c) in counts.iter().enumerate() {
        let lo = -1.0 + b as f64 * width;
        // Composite Simpson's rule inside the bin, endpoints nudged off ±1.
        let m = 16;
        let hs = width / m as f64;
        let mut mass = 0.0;
        for j in 0..=m {
            let a = (lo + j as f64 * hs).clamp(-1.0 + 1e-12, 1.0 - 1e-12);
            let wgt = if j == 0 || j == m { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
            mass += wgt * density(a);
        }
        mass *= hs / 3.0;
        l1 += (c as f64 / n as f64 - mass).abs();
    }
    assert!(l1 <= 0.02, "L1 distance {l1}");
}

fn trained_checkpoint() -> asrrl_core::agent::Checkpoint {
    let f = fixture();
    let config = small_config();
    let mut env = Env::new(Arc::clone(&f.model), EnvOptions::from_config(&config, Scenario::Ss)).unwrap();
    let mut trainer = new_trainer(&config, Scenario::Ss, env.dims(), SegmentMask::default()).unwrap();
    let refs: Vec<(&SpeakerProfile, &Utterance)> = f.tasks.iter().map(|(p, t)| (p, t)).collect();
    trainer.iteration(&mut env, &refs).unwrap();
    trainer.checkpoint()
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let ckpt = trained_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    save_checkpoint(&ckpt, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let bits = |p: &Policy| p.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&ckpt.policy), bits(&back.policy));
    assert_eq!(ckpt.step, back.step);
    assert_eq!(ckpt.config, back.config);
    assert_eq!(ckpt.rng.clone().next_u64(), back.rng.clone().next_u64());
    let mut rng = substream(9, "states");
    let spec = ckpt.policy.spec().clone();
    for _ in 0..100 {
        let s = random_state(&spec, &mut rng);
        let a = ckpt.policy.select_action(&s, SampleMode::Mode, &mut rng.clone()).unwrap();
        let b = back.policy.select_action(&s, SampleMode::Mode, &mut rng.clone()).unwrap();
        assert_eq!(a, b);
    }
    assert_eq!(to_json(&back).unwrap(), std::fs::read_to_string(&path).unwrap());
}

#[test]
fn damaged_checkpoints_are_refused() {
    let text = to_json(&trained_checkpoint()).unwrap();
    for cut in [text.len() / 3, text.len() / 2, text.len() - 2] {
        assert!(matches!(from_json(&text[..cut]), Err(CheckpointError::Syntax { .. })));
    }
    let bumped = text.replacen("\"version\": 1", "\"version\": 2", 1);
    assert_ne!(bumped, text);
    assert!(matches!(from_json(&bumped), Err(CheckpointError::Version { .. })));

    let reshaped = text.replacen("\"shape\": [", "\"shape\": [7, ", 1);
    match from_json(&reshaped) {
        Err(CheckpointError::Inconsistent { offset, .. }) => assert!(offset > 0 && offset < text.len()),
        other => panic!("expected an inconsistency, got {other:?}"),
    }
}
