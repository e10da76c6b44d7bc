//! GE2E training: batch sampling, gradient clipping, Adam and the outer loop.

use std::collections::BTreeMap;
use std::sync::mpsc;

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::FeatureMatrix;
use crate::error::{Error, Result};
use crate::loss::{clamp_scale, total_loss, EmbeddingBatch, LossScale, Reduction};
use crate::net::{init_params, normalize_rows, normalize_rows_backward, NetConfig, NetworkGrads, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSpec {
    pub n_speakers: usize,
    pub m_utterances: usize,
    /// Inclusive range for the per-batch segment length.
    pub min_frames: usize,
    pub max_frames: usize,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self {
            n_speakers: 16,
            m_utterances: 5,
            min_frames: 140,
            max_frames: 180,
        }
    }
}

impl BatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m_utterances < 2 {
            return Err(Error::InsufficientUtterances(self.m_utterances));
        }
        if self.n_speakers < 2 || self.min_frames == 0 || self.min_frames > self.max_frames {
            return Err(Error::InvalidConfig(format!("bad batch spec {self:?}")));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.n_speakers * self.m_utterances
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerPartials {
    pub speaker_id: String,
    pub partials: Vec<FeatureMatrix>,
}

/// Training partial utterances grouped by speaker.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartialCorpus {
    pub speakers: Vec<SpeakerPartials>,
}

impl PartialCorpus {
    /// Groups by `source.speaker`; speakers come out sorted by id.
    pub fn from_features(features: impl IntoIterator<Item = FeatureMatrix>) -> Self {
        let mut map: BTreeMap<String, Vec<FeatureMatrix>> = BTreeMap::new();
        for f in features {
            map.entry(f.source.speaker.clone()).or_default().push(f);
        }
        Self {
            speakers: map
                .into_iter()
                .map(|(speaker_id, partials)| SpeakerPartials {
                    speaker_id,
                    partials,
                })
                .collect(),
        }
    }

    pub fn total_partials(&self) -> usize {
        self.speakers.iter().map(|s| s.partials.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    /// `N·M` segments, speaker-major.
    pub features: Vec<FeatureMatrix>,
    /// Corpus speaker index of each batch speaker.
    pub speakers: Vec<usize>,
    /// Start frame of every segment inside its partial utterance.
    pub offsets: Vec<usize>,
    pub frames: usize,
    pub n_speakers: usize,
    pub m_utterances: usize,
}

/// Samples `N` speakers, `M` partials each, and one shared length `t`.
pub fn build_batch<R: Rng + ?Sized>(corpus: &PartialCorpus, spec: &BatchSpec, rng: &mut R) -> Result<TrainBatch> {
    spec.validate()?;
    let eligible: Vec<usize> = (0..corpus.speakers.len())
        .filter(|&s| !corpus.speakers[s].partials.is_empty())
        .collect();
    if eligible.len() < spec.n_speakers {
        return Err(Error::CorpusTooSmall {
            available: eligible.len(),
            needed: spec.n_speakers,
        });
    }
    let t = rng.random_range(spec.min_frames..=spec.max_frames);
    let chosen: Vec<usize> = index::sample(rng, eligible.len(), spec.n_speakers)
        .into_iter()
        .map(|k| eligible[k])
        .collect();

    let mut features = Vec::with_capacity(spec.batch_size());
    let mut offsets = Vec::with_capacity(spec.batch_size());
    for &s in &chosen {
        let partials = &corpus.speakers[s].partials;
        let picks: Vec<usize> = if partials.len() >= spec.m_utterances {
            index::sample(rng, partials.len(), spec.m_utterances).into_vec()
        } else {
            (0..spec.m_utterances)
                .map(|_| rng.random_range(0..partials.len()))
                .collect()
        };
        for p in picks {
            let source = &partials[p];
            if source.frames() < t {
                return Err(Error::TooShort {
                    got: source.frames(),
                    needed: t,
                });
            }
            let offset = rng.random_range(0..=source.frames() - t);
            features.push(source.slice_frames(offset, t)?);
            offsets.push(offset);
        }
    }
    Ok(TrainBatch {
        features,
        speakers: chosen,
        offsets,
        frames: t,
        n_speakers: spec.n_speakers,
        m_utterances: spec.m_utterances,
    })
}

/// Rescales `grads` so the global L2 norm is at most `clip_norm`; returns the
/// norm before clipping.
pub fn clip_gradients(grads: &mut NetworkGrads, clip_norm: f64) -> Result<f64> {
    if !grads.is_finite() {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    let norm = grads.squared_norm().sqrt();
    if norm > clip_norm {
        grads.scale_mut(clip_norm / norm);
    }
    Ok(norm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub first_moment: NetworkParams,
    pub second_moment: NetworkParams,
    /// Moments of `(w, b)`.
    pub scale_first: [f64; 2],
    pub scale_second: [f64; 2],
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &NetworkParams, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            scale_first: [0.0; 2],
            scale_second: [0.0; 2],
            step: 0,
        }
    }
}

/// Gradient of the loss with respect to the scale parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScaleGrad {
    pub w: f64,
    pub b: f64,
}

/// One bias-corrected Adam update of the network and, when `scale_grad` is
/// given, of `(w, b)`, followed by the `w` clamp.
pub fn adam_step(
    params: &mut NetworkParams,
    scale: &mut LossScale,
    grads: &NetworkGrads,
    scale_grad: Option<ScaleGrad>,
    state: &mut OptimizerState,
) -> Result<()> {
    if params.config != grads.config || params.config != state.first_moment.config {
        return Err(Error::Shape("optimizer, params and grads disagree on shapes".into()));
    }
    state.step += 1;
    let AdamConfig {
        learning_rate: lr,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    let update = |theta: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *theta -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
    };

    let grad_tensors = grads.tensors();
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grad_tensors)
        .zip(state.first_moment.tensors_mut())
        .zip(state.second_moment.tensors_mut())
    {
        for k in 0..p.len() {
            update(&mut p[k], g[k], &mut m[k], &mut v[k]);
        }
    }
    if let Some(sg) = scale_grad {
        let [mw, mb] = &mut state.scale_first;
        let [vw, vb] = &mut state.scale_second;
        update(&mut scale.w, sg.w, mw, vw);
        update(&mut scale.b, sg.b, mb, vb);
    }
    *scale = clamp_scale(*scale);
    Ok(())
}

#[derive(Debug, Clone)]
pub struct StepGradients {
    pub loss: f64,
    pub network: NetworkGrads,
    pub scale: ScaleGrad,
}

/// Loss of one batch and its gradients with respect to every trainable value.
pub fn loss_and_gradients(
    params: &NetworkParams,
    scale: LossScale,
    batch: &TrainBatch,
    reduction: Reduction,
    projection_grad_scale: f64,
) -> Result<StepGradients> {
    let refs: Vec<&FeatureMatrix> = batch.features.iter().collect();
    let (raw, tape) = params.forward_batch(&refs)?;
    let (unit, norms) = normalize_rows(&raw)?;
    let embeddings = EmbeddingBatch::from_rows(unit.clone(), batch.n_speakers, batch.m_utterances)?;
    let out = total_loss(&embeddings, scale, reduction)?;
    let grad_raw: Array2<f64> = normalize_rows_backward(&unit, &norms, &out.grad_embeddings);
    let network = params.backward_scaled(&tape, grad_raw.view(), projection_grad_scale)?;
    Ok(StepGradients {
        loss: out.loss,
        network,
        scale: ScaleGrad {
            w: out.grad_w,
            b: out.grad_b,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    /// Defaults to ⌈partials / (N·M)⌉.
    pub batches_per_epoch: Option<usize>,
    /// Epochs between checkpoints.
    pub checkpoint_interval: usize,
    pub reduction: Reduction,
    pub batch: BatchSpec,
    pub adam: AdamConfig,
    pub clip_norm: f64,
    pub projection_grad_scale: f64,
    pub initial_scale: LossScale,
    /// When false `(w, b)` stay at their initial values.
    pub learn_scale: bool,
    /// Batches built ahead of the optimizer.
    pub prefetch: usize,
    /// Stops early after this many optimizer steps.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 1,
            batches_per_epoch: None,
            checkpoint_interval: 1,
            reduction: Reduction::Mean,
            batch: BatchSpec::default(),
            adam: AdamConfig::default(),
            clip_norm: 3.0,
            projection_grad_scale: 1.0,
            initial_scale: LossScale::default(),
            learn_scale: true,
            prefetch: 2,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.batch.validate()?;
        if self.checkpoint_interval == 0 || self.prefetch == 0 || self.batches_per_epoch == Some(0) {
            return Err(Error::InvalidConfig("intervals and queue sizes must be positive".into()));
        }
        if !(self.clip_norm > 0.0) || !(self.adam.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("clip norm and learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn batches_per_epoch(&self, corpus: &PartialCorpus) -> usize {
        self.batches_per_epoch
            .unwrap_or_else(|| corpus.total_partials().div_ceil(self.batch.batch_size()).max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    /// Network gradient norm before clipping.
    pub grad_norm: f64,
    pub w: f64,
    pub b: f64,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub epoch: usize,
    pub step: usize,
    pub params: NetworkParams,
    pub scale: LossScale,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub scale: LossScale,
    pub metrics: Vec<StepMetrics>,
    pub steps: usize,
}

/// Runs the training loop. `on_checkpoint` sees the initial parameters
/// (epoch 0), every `checkpoint_interval`-th epoch, and the final state.
///
/// Batches are built on a producer thread and handed over through a bounded
/// queue; the optimizer consumes them in order so results depend only on
/// the seed.
pub fn train(
    corpus: &PartialCorpus,
    net_config: NetConfig,
    config: &TrainConfig,
    mut on_checkpoint: impl FnMut(&Snapshot) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut params = init_params(net_config, config.seed)?;
    let mut scale = clamp_scale(config.initial_scale);
    let mut state = OptimizerState::new(&params, config.adam);
    let per_epoch = config.batches_per_epoch(corpus);
    let planned = config.epochs * per_epoch;
    let total = config.max_steps.map_or(planned, |cap| cap.min(planned));

    on_checkpoint(&Snapshot {
        epoch: 0,
        step: 0,
        params: params.clone(),
        scale,
    })?;

    let mut metrics = Vec::with_capacity(total);
    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::sync_channel::<Result<TrainBatch>>(config.prefetch);
        let spec = config.batch;
        let seed = config.seed;
        scope.spawn(move || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            for _ in 0..total {
                let batch = build_batch(corpus, &spec, &mut rng);
                let failed = batch.is_err();
                if tx.send(batch).is_err() || failed {
                    break;
                }
            }
        });

        for step in 1..=total {
            let batch = rx
                .recv()
                .map_err(|_| Error::InvalidConfig("batch producer stopped early".into()))??;
            let mut grads = loss_and_gradients(
                &params,
                scale,
                &batch,
                config.reduction,
                config.projection_grad_scale,
            )?;
            let grad_norm = clip_gradients(&mut grads.network, config.clip_norm)?;
            let scale_grad = config.learn_scale.then_some(grads.scale);
            adam_step(&mut params, &mut scale, &grads.network, scale_grad, &mut state)?;
            if !params.is_finite() {
                return Err(Error::Numerical(format!("parameters diverged at step {step}")));
            }
            metrics.push(StepMetrics {
                step,
                loss: grads.loss,
                grad_norm,
                w: scale.w,
                b: scale.b,
                t: batch.frames,
            });
            let epoch = step.div_ceil(per_epoch);
            let epoch_done = step % per_epoch == 0;
            if (epoch_done && epoch % config.checkpoint_interval == 0) || step == total {
                on_checkpoint(&Snapshot {
                    epoch,
                    step,
                    params: params.clone(),
                    scale,
                })?;
            }
        }
        // Unblock the producer if training stopped before it finished.
        drop(rx);
        Ok(())
    })?;

    Ok(TrainOutcome {
        params,
        scale,
        metrics,
        steps: total,
    })
}
