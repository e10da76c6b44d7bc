//! Reference implementations written straight from the definitions, without
//! sharing code paths with the crate. Integration tests and the acceptance
//! suite compare the crate against these.

#![allow(dead_code)]

use std::f64::consts::PI;

use ge2e_core::dsp::{FeatureMatrix, SourceId};
use ge2e_core::net::{init_params, NetConfig, NetworkParams};
use ge2e_core::trainer::TrainBatch;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- log-mel

fn mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn inv_mel(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Direct O(n²) DFT, periodic Hann, peak-1 triangles, natural log with floor.
pub fn log_mel_oracle(samples: &[f64], sr: f64, frame: usize, step: usize, nfft: usize, n_mels: usize) -> Vec<Vec<f64>> {
    let frames = if samples.len() < frame { 0 } else { (samples.len() - frame) / step + 1 };
    let bins = nfft / 2 + 1;
    let top = mel(sr / 2.0);
    let edge = |i: usize| inv_mel(top * i as f64 / (n_mels + 1) as f64);
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let x: Vec<f64> = (0..frame)
            .map(|n| samples[t * step + n] * (0.5 - 0.5 * (2.0 * PI * n as f64 / frame as f64).cos()))
            .collect();
        let power: Vec<f64> = (0..bins)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, v) in x.iter().enumerate() {
                    let a = -2.0 * PI * (k * n) as f64 / nfft as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                re * re + im * im
            })
            .collect();
        let row = (0..n_mels)
            .map(|m| {
                let (lo, c, hi) = (edge(m), edge(m + 1), edge(m + 2));
                let e: f64 = (0..bins)
                    .map(|k| {
                        let f = k as f64 * sr / nfft as f64;
                        let tri = if f <= lo || f >= hi {
                            0.0
                        } else if f <= c {
                            (f - lo) / (c - lo)
                        } else {
                            (hi - f) / (hi - c)
                        };
                        tri * power[k]
                    })
                    .sum();
                (e + 1e-6).ln()
            })
            .collect();
        out.push(row);
    }
    out
}

// ------------------------------------------------------------------- LSTM

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Step-by-step scalar LSTM stack; returns the raw projection of the last frame.
pub fn lstm_oracle(p: &NetworkParams, x: &[Vec<f64>]) -> Vec<f64> {
    let hd = p.config.hidden_dim;
    let mut seq: Vec<Vec<f64>> = x.to_vec();
    for layer in &p.layers {
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        let mut outs = Vec::with_capacity(seq.len());
        for xt in &seq {
            let mut z = vec![0.0; 4 * hd];
            for (g, zg) in z.iter_mut().enumerate() {
                let mut acc = layer.b_ih[g];
                if !layer.b_hh.is_empty() {
                    acc += layer.b_hh[g];
                }
                for (i, xi) in xt.iter().enumerate() {
                    acc += layer.w_ih[[g, i]] * xi;
                }
                for (i, hi) in h.iter().enumerate() {
                    acc += layer.w_hh[[g, i]] * hi;
                }
                *zg = acc;
            }
            for k in 0..hd {
                let ig = sig(z[k]);
                let fg = sig(z[hd + k]);
                let gg = z[2 * hd + k].tanh();
                let og = sig(z[3 * hd + k]);
                c[k] = fg * c[k] + ig * gg;
                h[k] = og * c[k].tanh();
            }
            outs.push(h.clone());
        }
        seq = outs;
    }
    let last = seq.last().expect("at least one frame");
    (0..p.config.embedding_dim)
        .map(|e| p.proj_b[e] + (0..hd).map(|k| p.proj_w[[e, k]] * last[k]).sum::<f64>())
        .collect()
}

// ------------------------------------------------------------------- GE2E

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// Double-loop GE2E softmax loss over `rows[j * m + i]`.
pub fn ge2e_oracle(rows: &[Vec<f64>], n: usize, m: usize, w: f64, b: f64, mean: bool) -> f64 {
    let d = rows[0].len();
    let mut total = 0.0;
    for j in 0..n {
        for i in 0..m {
            let e = &rows[j * m + i];
            let mut s = Vec::with_capacity(n);
            for k in 0..n {
                let mut c = vec![0.0; d];
                let mut count = 0.0;
                for u in 0..m {
                    if k == j && u == i {
                        continue;
                    }
                    for (cv, rv) in c.iter_mut().zip(&rows[k * m + u]) {
                        *cv += rv;
                    }
                    count += 1.0;
                }
                c.iter_mut().for_each(|v| *v /= count);
                s.push(w * cos(e, &c) + b);
            }
            let denom: f64 = s.iter().map(|v| v.exp()).sum();
            total += -s[j] + denom.ln();
        }
    }
    if mean {
        total / (n * m) as f64
    } else {
        total
    }
}

// -------------------------------------------------------------------- EER

/// FAR and FRR at `th`, accepting scores `>= th`, by direct counting.
pub fn rates(genuine: &[f64], impostor: &[f64], th: f64) -> (f64, f64) {
    let fa = impostor.iter().filter(|&&s| s >= th).count() as f64;
    let fr = genuine.iter().filter(|&&s| s < th).count() as f64;
    (fa / impostor.len() as f64, fr / genuine.len() as f64)
}

/// Evaluates every distinct score cut plus one cut above all scores, then
/// intersects the piecewise-linear (FAR, FRR) path with the diagonal.
pub fn eer_all_cuts(genuine: &[f64], impostor: &[f64]) -> f64 {
    let mut cuts: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.push(f64::INFINITY);
    let pts: Vec<(f64, f64)> = cuts.iter().map(|&c| rates(genuine, impostor, c)).collect();
    let mut hits = Vec::new();
    for (a, b) in pts.iter().zip(pts.iter().skip(1)) {
        let (da, db) = (a.0 - a.1, b.0 - b.1);
        if da == 0.0 {
            hits.push(a.0);
        } else if da > 0.0 && db < 0.0 {
            let s = da / (da - db);
            hits.push(a.0 + s * (b.0 - a.0));
        }
    }
    let last = pts.last().expect("non-empty");
    if last.0 == last.1 {
        hits.push(last.0);
    }
    let first = hits[0];
    assert!(hits.iter().all(|h| (h - first).abs() < 1e-12), "ambiguous crossing {hits:?}");
    first
}

// ---------------------------------------------------------------- helpers

pub fn random_features<R: Rng>(rng: &mut R, frames: usize, dim: usize, speaker: &str, utt: &str) -> FeatureMatrix {
    let data = Array2::from_shape_fn((frames, dim), |_| rng.random_range(-2.0f32..2.0));
    FeatureMatrix::new(data, SourceId::new(speaker, utt, 0)).unwrap()
}

pub fn small_net(seed: u64, input: usize, hidden: usize, layers: usize, emb: usize) -> NetworkParams {
    let mut p = init_params(
        NetConfig {
            input_dim: input,
            hidden_dim: hidden,
            num_layers: layers,
            embedding_dim: emb,
            dual_bias: true,
        },
        seed,
    )
    .unwrap();
    // Non-zero biases so their gradients are exercised.
    let mut r = rng(seed ^ 0xb1a5);
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
    p
}

pub fn random_batch<R: Rng>(rng: &mut R, n: usize, m: usize, frames: usize, dim: usize) -> TrainBatch {
    let mut features = Vec::with_capacity(n * m);
    for j in 0..n {
        for i in 0..m {
            features.push(random_features(rng, frames, dim, &format!("s{j}"), &format!("u{i}")));
        }
    }
    TrainBatch {
        features,
        speakers: (0..n).collect(),
        offsets: vec![0; n * m],
        frames,
        n_speakers: n,
        m_utterances: m,
    }
}

/// Symmetric relative error with an absolute floor on the denominator.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

// ------------------------------------------------------ finite differences

pub struct GradCheck {
    pub passed: usize,
    pub total: usize,
    pub worst: f64,
}

impl GradCheck {
    pub fn fraction(&self) -> f64 {
        self.passed as f64 / self.total as f64
    }
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-6;

/// Step for the five-point stencil used by the end-to-end check.
pub const FD5_STEP: f64 = 1e-3;

/// Five-point central difference of `f` at 0. Fourth-order accurate, so
/// gradients around 1e-7 are still resolved to better than 1e-4 relative.
pub fn five_point(mut f: impl FnMut(f64) -> f64, h: f64) -> f64 {
    (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h)
}

/// Finite differences of the end-to-end (network + GE2E) loss against the
/// analytic gradients, over every network coordinate plus w and b.
pub fn check_end_to_end(
    params: &NetworkParams,
    scale: ge2e_core::loss::LossScale,
    batch: &TrainBatch,
    reduction: ge2e_core::loss::Reduction,
    tol: f64,
) -> GradCheck {
    use ge2e_core::trainer::loss_and_gradients;
    let analytic = loss_and_gradients(params, scale, batch, reduction, 1.0).unwrap();
    let loss_at = |p: &NetworkParams, s: ge2e_core::loss::LossScale| {
        loss_and_gradients(p, s, batch, reduction, 1.0).unwrap().loss
    };
    let mut check = GradCheck { passed: 0, total: 0, worst: 0.0 };
    let mut record = |a: f64, n: f64| {
        let e = rel_err(a, n, FD_FLOOR);
        check.total += 1;
        if e < tol {
            check.passed += 1;
        }
        check.worst = check.worst.max(e);
    };
    let grads: Vec<Vec<f64>> = analytic.network.tensors().iter().map(|t| t.to_vec()).collect();
    let mut probe = params.clone();
    for (ti, g) in grads.iter().enumerate() {
        for (k, &a) in g.iter().enumerate() {
            let orig = probe.tensors()[ti][k];
            let n = five_point(
                |d| {
                    probe.tensors_mut()[ti][k] = orig + d;
                    loss_at(&probe, scale)
                },
                FD5_STEP,
            );
            probe.tensors_mut()[ti][k] = orig;
            record(a, n);
        }
    }
    let n = five_point(|d| loss_at(params, ge2e_core::loss::LossScale { w: scale.w + d, ..scale }), FD5_STEP);
    record(analytic.scale.w, n);
    let n = five_point(|d| loss_at(params, ge2e_core::loss::LossScale { b: scale.b + d, ..scale }), FD5_STEP);
    record(analytic.scale.b, n);
    check
}

// ---------------------------------------------------------- synthetic audio

/// Renders a synthetic corpus and cuts it into training partials.
pub fn synthetic_partials(spec: &ge2e_core::synth::SynthSpec) -> ge2e_core::trainer::PartialCorpus {
    use ge2e_core::dsp::{preprocess_training_utterance, FrameSpec, VadConfig};
    let (vad, frames) = (VadConfig::default(), FrameSpec::default());
    let mut feats = Vec::new();
    for u in ge2e_core::synth::synthesize(spec).unwrap() {
        for (k, p) in preprocess_training_utterance(&u.waveform, &vad, &frames).unwrap().into_iter().enumerate() {
            let mut f = p.features;
            f.source = SourceId::new(u.speaker_id.clone(), u.utterance_id.clone(), k as u32);
            feats.push(f);
        }
    }
    ge2e_core::trainer::PartialCorpus::from_features(feats)
}

/// Renders a synthetic corpus and embeds every utterance with `params`.
pub fn synthetic_dvectors(
    spec: &ge2e_core::synth::SynthSpec,
    params: &NetworkParams,
) -> ge2e_core::store::DVectorStore {
    use ge2e_core::dsp::{preprocess_eval_utterance, FrameSpec, VadConfig};
    use ge2e_core::eval::{utterance_dvector, WindowSpec};
    let (vad, frames) = (VadConfig::default(), FrameSpec::default());
    let records = ge2e_core::synth::synthesize(spec)
        .unwrap()
        .into_iter()
        .map(|u| {
            let mut f = preprocess_eval_utterance(&u.waveform, &vad, &frames).unwrap();
            f.source = SourceId::new(u.speaker_id.clone(), u.utterance_id.clone(), 0);
            utterance_dvector(params, &f, &WindowSpec::default(), u.waveform.duration_seconds()).unwrap()
        })
        .collect();
    ge2e_core::store::DVectorStore::new(params.config.embedding_dim, records).unwrap()
}

pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    xs.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}
