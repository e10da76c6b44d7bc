mod common;

use ge2e_core::loss::{LossScale, Reduction, MIN_SCALE_W};
use ge2e_core::net::{init_params, NetConfig, NetworkParams};
use ge2e_core::synth::SynthSpec;
use ge2e_core::trainer::*;
use proptest::prelude::*;
use rand::Rng;

fn tiny_net() -> NetConfig {
    NetConfig {
        input_dim: 40,
        hidden_dim: 24,
        num_layers: 1,
        embedding_dim: 12,
        dual_bias: true,
    }
}

fn synthetic_corpus(n_speakers: usize, noise_level: f64) -> PartialCorpus {
    common::synthetic_partials(&SynthSpec {
        n_speakers,
        utterances_per_speaker: 6,
        noise_level,
        seed: 21,
        ..SynthSpec::default()
    })
}

fn eight_speakers() -> PartialCorpus {
    synthetic_corpus(8, 0.02)
}

fn quick_config(steps: usize) -> TrainConfig {
    let mut c = TrainConfig {
        seed: 5,
        batches_per_epoch: Some(steps),
        ..TrainConfig::default()
    };
    c.batch.n_speakers = 4;
    c.batch.m_utterances = 3;
    c.adam.learning_rate = 1e-3;
    c
}

fn random_grads<R: Rng>(r: &mut R, cfg: NetConfig, magnitude: f64) -> NetworkParams {
    let mut g = NetworkParams::zeros(cfg).unwrap();
    for t in g.tensors_mut() {
        for v in t.iter_mut() {
            *v = r.random_range(-magnitude..magnitude);
        }
    }
    g
}

fn full_batch_config(n: usize, m: usize) -> TrainConfig {
    let mut c = quick_config(200);
    c.batch.n_speakers = n;
    c.batch.m_utterances = m;
    c.adam.learning_rate = 3e-4;
    c
}

#[test]
fn two_hundred_steps_cut_the_loss() {
    let corpus = synthetic_corpus(8, 0.3);
    let out = train(&corpus, tiny_net(), &full_batch_config(8, 4), |_| Ok(())).unwrap();
    let losses: Vec<f64> = out.metrics.iter().map(|m| m.loss).collect();
    let initial = losses[0];
    let final_mean = losses[180..].iter().sum::<f64>() / 20.0;
    assert!(final_mean < 0.1 * initial, "initial {initial}, final {final_mean}");
}

#[test]
fn moving_average_of_the_loss_decreases() {
    let corpus = synthetic_corpus(16, 0.3);
    let out = train(&corpus, tiny_net(), &full_batch_config(16, 4), |_| Ok(())).unwrap();
    let losses: Vec<f64> = out.metrics.iter().map(|m| m.loss).collect();
    // Window-20 moving average, compared at consecutive non-overlapping windows.
    let ma = common::moving_average(&losses, 20);
    let blocks: Vec<f64> = ma.iter().step_by(20).copied().collect();
    assert_eq!(blocks.len(), 10);
    assert!(blocks.windows(2).all(|w| w[1] < w[0]), "{blocks:?}");
}

#[test]
fn learnable_scale_beats_frozen_scale() {
    let corpus = eight_speakers();
    let learn = train(&corpus, tiny_net(), &quick_config(150), |_| Ok(())).unwrap();
    let frozen_cfg = TrainConfig {
        learn_scale: false,
        ..quick_config(150)
    };
    let frozen = train(&corpus, tiny_net(), &frozen_cfg, |_| Ok(())).unwrap();
    let tail = |o: &TrainOutcome| o.metrics[130..].iter().map(|m| m.loss).sum::<f64>() / 20.0;
    assert_eq!(frozen.scale, LossScale::default());
    assert!(tail(&learn) < tail(&frozen), "learn {} frozen {}", tail(&learn), tail(&frozen));
}

#[test]
fn zero_epochs_checkpoint_is_the_initialization() {
    let corpus = eight_speakers();
    let cfg = TrainConfig {
        epochs: 0,
        ..quick_config(10)
    };
    let mut snaps = Vec::new();
    let out = train(&corpus, tiny_net(), &cfg, |s| {
        snaps.push(s.clone());
        Ok(())
    })
    .unwrap();
    assert_eq!(out.steps, 0);
    assert_eq!(snaps.len(), 1);
    assert_eq!(snaps[0].params, init_params(tiny_net(), cfg.seed).unwrap());
    assert_eq!(snaps[0].scale, LossScale::default());
}

#[test]
fn checkpoints_follow_the_interval() {
    let corpus = eight_speakers();
    let cfg = TrainConfig {
        epochs: 5,
        checkpoint_interval: 2,
        ..quick_config(3)
    };
    let mut epochs = Vec::new();
    train(&corpus, tiny_net(), &cfg, |s| {
        epochs.push((s.epoch, s.step));
        Ok(())
    })
    .unwrap();
    assert_eq!(epochs, vec![(0, 0), (2, 6), (4, 12), (5, 15)]);
}

#[test]
fn fixed_seed_reproduces_the_metrics_log() {
    let corpus = eight_speakers();
    let a = train(&corpus, tiny_net(), &quick_config(15), |_| Ok(())).unwrap();
    let b = train(&corpus, tiny_net(), &quick_config(15), |_| Ok(())).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.params, b.params);
}

#[test]
fn frame_counts_are_uniform() {
    let corpus = eight_speakers();
    let spec = BatchSpec {
        n_speakers: 2,
        m_utterances: 2,
        ..BatchSpec::default()
    };
    let mut r = common::rng(9);
    let bins = 41;
    let draws = 200 * bins;
    let mut counts = vec![0usize; bins];
    for _ in 0..draws {
        counts[build_batch(&corpus, &spec, &mut r).unwrap().frames - 140] += 1;
    }
    let expected = draws as f64 / bins as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // Upper 1% point of chi-square with 40 degrees of freedom.
    assert!(chi2 < 63.691, "chi2 = {chi2}");
}

#[test]
fn adam_first_step_is_bounded_by_the_learning_rate() {
    let mut r = common::rng(10);
    let cfg = tiny_net();
    let mut params = init_params(cfg, 1).unwrap();
    let before = params.clone();
    let grads = random_grads(&mut r, cfg, 100.0);
    let mut scale = LossScale::default();
    let mut state = OptimizerState::new(&params, AdamConfig::default());
    adam_step(&mut params, &mut scale, &grads, None, &mut state).unwrap();
    let lr = AdamConfig::default().learning_rate;
    for (a, b) in params.tensors().iter().zip(before.tensors()) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() <= lr * (1.0 + 1e-6));
        }
    }
}

#[test]
fn zero_gradients_leave_parameters_unchanged() {
    let cfg = tiny_net();
    let mut params = init_params(cfg, 1).unwrap();
    let before = params.clone();
    let zeros = NetworkParams::zeros(cfg).unwrap();
    let mut scale = LossScale::default();
    let mut state = OptimizerState::new(&params, AdamConfig::default());
    for _ in 0..5 {
        adam_step(&mut params, &mut scale, &zeros, Some(ScaleGrad { w: 0.0, b: 0.0 }), &mut state).unwrap();
    }
    assert_eq!(params, before);
    assert_eq!(scale, LossScale::default());
}

#[test]
fn reduction_is_configurable() {
    let corpus = eight_speakers();
    let cfg = TrainConfig {
        reduction: Reduction::Sum,
        ..quick_config(5)
    };
    let out = train(&corpus, tiny_net(), &cfg, |_| Ok(())).unwrap();
    assert!(out.metrics.iter().all(|m| m.loss.is_finite()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn batch_shape(seed in any::<u64>(), n in 2usize..6, m in 2usize..5) {
        let corpus = eight_speakers_cached();
        let spec = BatchSpec { n_speakers: n, m_utterances: m, ..BatchSpec::default() };
        let mut r = common::rng(seed);
        let b = build_batch(corpus, &spec, &mut r).unwrap();
        prop_assert_eq!(b.features.len(), n * m);
        prop_assert!((140..=180).contains(&b.frames));
        prop_assert!(b.features.iter().all(|f| f.frames() == b.frames && f.dim() == 40));
        for j in 0..n {
            let speaker = &corpus.speakers[b.speakers[j]].speaker_id;
            prop_assert!(b.features[j * m..(j + 1) * m].iter().all(|f| &f.source.speaker == speaker));
        }
    }

    #[test]
    fn clipping_bounds_norm_and_keeps_direction(seed in any::<u64>(), magnitude in 1e-3f64..10.0) {
        let mut r = common::rng(seed);
        let mut g = random_grads(&mut r, tiny_net(), magnitude);
        let before = g.clone();
        let pre = clip_gradients(&mut g, 3.0).unwrap();
        let post = g.squared_norm().sqrt();
        prop_assert!((pre - before.squared_norm().sqrt()).abs() < 1e-9 * pre.max(1.0));
        prop_assert!(post <= 3.0 * (1.0 + 1e-12));
        prop_assert!(post <= pre * (1.0 + 1e-12));
        let dot: f64 = g.tensors().iter().zip(before.tensors()).map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>()).sum();
        let cosine = dot / (post * pre);
        prop_assert!((cosine - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scale_w_never_drops_below_floor(seed in any::<u64>(), start in 1e-6f64..1e-3, lr in 1e-4f64..1e-1) {
        let mut r = common::rng(seed);
        let cfg = NetConfig { input_dim: 2, hidden_dim: 2, num_layers: 1, embedding_dim: 2, dual_bias: true };
        let mut params = init_params(cfg, 0).unwrap();
        let zeros = NetworkParams::zeros(cfg).unwrap();
        let mut scale = LossScale { w: start, b: 0.0 };
        let mut state = OptimizerState::new(&params, AdamConfig { learning_rate: lr, ..AdamConfig::default() });
        for _ in 0..20 {
            let sg = ScaleGrad { w: r.random_range(-1.0..10.0), b: r.random_range(-1.0..1.0) };
            adam_step(&mut params, &mut scale, &zeros, Some(sg), &mut state).unwrap();
            prop_assert!(scale.w >= MIN_SCALE_W);
        }
    }
}

fn eight_speakers_cached() -> &'static PartialCorpus {
    static CORPUS: std::sync::OnceLock<PartialCorpus> = std::sync::OnceLock::new();
    CORPUS.get_or_init(eight_speakers)
}
