//! Audio frontend: volume normalization, energy VAD and log-mel features.
//!
//! Training utterances are split into voiced intervals and each interval long
//! enough to yield more than [`MIN_PARTIAL_FRAMES`] frames becomes one partial
//! utterance. Evaluation utterances keep the same intervals but concatenate
//! them into one signal before the STFT.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Target RMS level of [`normalize_volume`], in linear full-scale units.
pub const TARGET_RMS: f64 = 0.1;
/// Added to every mel energy before the logarithm.
pub const LOG_FLOOR: f64 = 1e-6;
/// Partial utterances must have strictly more frames than this.
pub const MIN_PARTIAL_FRAMES: usize = 180;
/// Frames whose mean square falls below this are digital silence and never speech.
const SILENCE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numerical(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VadConfig {
    /// Seconds; silences shorter than this between speech runs are bridged.
    pub max_silence_length: f64,
    /// Seconds per analysis window.
    pub window_length: f64,
    /// Windows quieter than the reference level minus this many dB are silence.
    pub prune_threshold_db: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            max_silence_length: 0.006,
            window_length: 0.030,
            prune_threshold_db: 30.0,
        }
    }
}

impl VadConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_silence_length > 0.0
            && self.window_length > 0.0
            && self.prune_threshold_db > 0.0
            && self.window_length > self.max_silence_length;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad VAD config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSpec {
    pub sample_rate: u32,
    /// Seconds.
    pub frame_width: f64,
    /// Seconds.
    pub frame_step: f64,
    pub n_mels: usize,
    pub fft_size: usize,
}

impl Default for FrameSpec {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_width: 0.025,
            frame_step: 0.010,
            n_mels: 40,
            fft_size: 512,
        }
    }
}

impl FrameSpec {
    pub fn frame_samples(&self) -> usize {
        (self.frame_width * self.sample_rate as f64).round() as usize
    }

    pub fn step_samples(&self) -> usize {
        (self.frame_step * self.sample_rate as f64).round() as usize
    }

    /// Number of full frames that fit in `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        let frame = self.frame_samples();
        if len < frame {
            0
        } else {
            (len - frame) / self.step_samples() + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let frame = self.frame_samples();
        let step = self.step_samples();
        if self.sample_rate == 0 || frame == 0 || step == 0 || step > frame {
            return Err(Error::InvalidConfig(format!("bad frame spec {self:?}")));
        }
        if self.n_mels == 0 || self.fft_size < frame {
            return Err(Error::InvalidConfig(format!("bad frame spec {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct SourceId {
    pub speaker: String,
    pub utterance: String,
    pub segment: u32,
}

impl SourceId {
    pub fn new(speaker: impl Into<String>, utterance: impl Into<String>, segment: u32) -> Self {
        Self {
            speaker: speaker.into(),
            utterance: utterance.into(),
            segment,
        }
    }
}

/// `frames × n_mels` log-mel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Array2<f32>,
    pub source: SourceId,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f32>, source: SourceId) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Shape(format!("empty feature matrix {:?}", data.dim())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite feature value".into()));
        }
        Ok(Self { data, source })
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Copy of rows `start..start + len`.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<FeatureMatrix> {
        if len == 0 || start + len > self.frames() {
            return Err(Error::TooShort {
                got: self.frames().saturating_sub(start),
                needed: len,
            });
        }
        Ok(FeatureMatrix {
            data: self.data.slice(ndarray::s![start..start + len, ..]).to_owned(),
            source: self.source.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartialUtterance {
    pub features: FeatureMatrix,
    pub min_frames_satisfied: bool,
}

/// Rescale to [`TARGET_RMS`].
pub fn normalize_volume(w: &Waveform) -> Result<Waveform> {
    if w.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    let rms = w.rms();
    if rms == 0.0 {
        return Err(Error::SilentInput);
    }
    let gain = TARGET_RMS / rms;
    Ok(Waveform {
        samples: w.samples.iter().map(|s| s * gain).collect(),
        sample_rate: w.sample_rate,
    })
}

fn level_db(mean_square: f64) -> f64 {
    10.0 * mean_square.max(1e-300).log10()
}

/// Energy VAD over non-overlapping analysis windows.
///
/// A window is speech when it is not digital silence and its level is within
/// `prune_threshold_db` of the 95th-percentile level of all non-silent
/// windows. Speech runs separated by less than `max_silence_length` are
/// merged. Returned intervals are half-open sample ranges, sorted and
/// disjoint.
pub fn detect_voice_intervals(w: &Waveform, cfg: &VadConfig) -> Vec<(usize, usize)> {
    let n = w.len();
    let sr = w.sample_rate as f64;
    let win = ((cfg.window_length * sr).round() as usize).max(1);
    let max_gap = (cfg.max_silence_length * sr).round() as usize;
    if n == 0 {
        return Vec::new();
    }

    let windows: Vec<(usize, usize, f64)> = (0..n)
        .step_by(win)
        .map(|start| {
            let end = (start + win).min(n);
            let seg = &w.samples[start..end];
            let ms = seg.iter().map(|s| s * s).sum::<f64>() / seg.len() as f64;
            (start, end, ms)
        })
        .collect();

    let mut levels: Vec<f64> = windows
        .iter()
        .filter(|(_, _, ms)| *ms > SILENCE_FLOOR)
        .map(|(_, _, ms)| level_db(*ms))
        .collect();
    if levels.is_empty() {
        return Vec::new();
    }
    levels.sort_by(f64::total_cmp);
    let rank = ((levels.len() - 1) as f64 * 0.95).round() as usize;
    let threshold = levels[rank] - cfg.prune_threshold_db;

    let mut intervals: Vec<(usize, usize)> = Vec::new();
    for &(start, end, ms) in &windows {
        if ms <= SILENCE_FLOOR || level_db(ms) <= threshold {
            continue;
        }
        match intervals.last_mut() {
            Some(last) if start - last.1 < max_gap || start == last.1 => last.1 = end,
            _ => intervals.push((start, end)),
        }
    }

    intervals.retain(|&(s, e)| {
        let seg = &w.samples[s..e];
        let ms = seg.iter().map(|x| x * x).sum::<f64>() / seg.len() as f64;
        level_db(ms) > threshold
    });
    intervals
}

/// Reusable STFT + mel projection for one [`FrameSpec`].
pub struct LogMelExtractor {
    spec: FrameSpec,
    window: Vec<f64>,
    filters: Array2<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LogMelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMelExtractor")
            .field("spec", &self.spec)
            .finish_non_exhaustive()
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters with peak 1, spanning 0 Hz to Nyquist; `n_mels × (fft/2+1)`.
pub fn mel_filterbank(n_mels: usize, fft_size: usize, sample_rate: u32) -> Array2<f64> {
    let n_bins = fft_size / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * sample_rate as f64 / fft_size as f64;
            let weight = if f > lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            fb[[m, k]] = weight;
        }
    }
    fb
}

/// Center frequency of every mel filter, in Hz.
pub fn mel_center_frequencies(n_mels: usize, sample_rate: u32) -> Vec<f64> {
    let mel_max = hz_to_mel(sample_rate as f64 / 2.0);
    (1..=n_mels)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect()
}

impl LogMelExtractor {
    pub fn new(spec: FrameSpec) -> Result<Self> {
        spec.validate()?;
        let frame = spec.frame_samples();
        let window = (0..frame)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / frame as f64).cos())
            .collect();
        let filters = mel_filterbank(spec.n_mels, spec.fft_size, spec.sample_rate);
        let fft = FftPlanner::new().plan_fft_forward(spec.fft_size);
        Ok(Self {
            spec,
            window,
            filters,
            fft,
        })
    }

    pub fn spec(&self) -> &FrameSpec {
        &self.spec
    }

    /// Log-mel matrix for a contiguous run of samples.
    pub fn extract(&self, samples: &[f64], source: SourceId) -> Result<FeatureMatrix> {
        let frame = self.spec.frame_samples();
        let step = self.spec.step_samples();
        let n_frames = self.spec.frame_count(samples.len());
        if n_frames == 0 {
            return Err(Error::TooShort {
                got: samples.len(),
                needed: frame,
            });
        }
        let n_bins = self.spec.fft_size / 2 + 1;
        let mut out = Array2::<f32>::zeros((n_frames, self.spec.n_mels));
        let mut buf = vec![Complex::new(0.0, 0.0); self.spec.fft_size];
        let mut power = vec![0.0f64; n_bins];
        for t in 0..n_frames {
            let chunk = &samples[t * step..t * step + frame];
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (slot, (x, w)) in buf.iter_mut().zip(chunk.iter().zip(&self.window)) {
                slot.re = x * w;
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf[..n_bins]) {
                *p = c.norm_sqr();
            }
            for (m, filt) in self.filters.outer_iter().enumerate() {
                let energy: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
                out[[t, m]] = (energy + LOG_FLOOR).ln() as f32;
            }
        }
        FeatureMatrix::new(out, source)
    }
}

fn check_rate(w: &Waveform, spec: &FrameSpec) -> Result<()> {
    if w.sample_rate != spec.sample_rate {
        return Err(Error::SampleRate {
            got: w.sample_rate,
            expected: spec.sample_rate,
        });
    }
    Ok(())
}

pub fn extract_log_mel(
    w: &Waveform,
    interval: (usize, usize),
    spec: &FrameSpec,
) -> Result<FeatureMatrix> {
    check_rate(w, spec)?;
    let (start, end) = interval;
    if start > end || end > w.len() {
        return Err(Error::Shape(format!(
            "interval {interval:?} outside waveform of {} samples",
            w.len()
        )));
    }
    LogMelExtractor::new(*spec)?.extract(&w.samples[start..end], SourceId::default())
}

fn surviving_intervals(
    w: &Waveform,
    vad: &VadConfig,
    spec: &FrameSpec,
) -> Result<(Waveform, Vec<(usize, usize)>)> {
    check_rate(w, spec)?;
    vad.validate()?;
    spec.validate()?;
    let normalized = normalize_volume(w)?;
    let intervals = detect_voice_intervals(&normalized, vad)
        .into_iter()
        .filter(|&(s, e)| spec.frame_count(e - s) > MIN_PARTIAL_FRAMES)
        .collect();
    Ok((normalized, intervals))
}

/// One partial utterance per voiced interval with more than 180 frames.
pub fn preprocess_training_utterance(
    w: &Waveform,
    vad: &VadConfig,
    spec: &FrameSpec,
) -> Result<Vec<PartialUtterance>> {
    // Digital silence has nothing to normalize; it simply yields no partials.
    if !w.is_empty() && w.samples.iter().all(|&s| s == 0.0) {
        check_rate(w, spec)?;
        return Ok(Vec::new());
    }
    let (normalized, intervals) = surviving_intervals(w, vad, spec)?;
    let extractor = LogMelExtractor::new(*spec)?;
    intervals
        .iter()
        .enumerate()
        .map(|(k, &(s, e))| {
            let features = extractor.extract(
                &normalized.samples[s..e],
                SourceId::new("", "", k as u32),
            )?;
            Ok(PartialUtterance {
                min_frames_satisfied: features.frames() > MIN_PARTIAL_FRAMES,
                features,
            })
        })
        .collect()
}

/// Log-mel of the concatenation of all surviving voiced intervals.
pub fn preprocess_eval_utterance(
    w: &Waveform,
    vad: &VadConfig,
    spec: &FrameSpec,
) -> Result<FeatureMatrix> {
    if !w.is_empty() && w.samples.iter().all(|&s| s == 0.0) {
        return Err(Error::NoSpeech);
    }
    let (normalized, intervals) = surviving_intervals(w, vad, spec)?;
    if intervals.is_empty() {
        return Err(Error::NoSpeech);
    }
    let joined: Vec<f64> = intervals
        .iter()
        .flat_map(|&(s, e)| normalized.samples[s..e].iter().copied())
        .collect();
    LogMelExtractor::new(*spec)?.extract(&joined, SourceId::default())
}
