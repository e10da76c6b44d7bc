//! Seeded synthetic speakers, used for desk-scale runs and tests.
//!
//! Each speaker owns a signature of 3–5 sinusoids on a 50 Hz grid, every one
//! with its own slow amplitude modulation. An utterance renders that signature
//! with fresh phases and amplitude jitter, adds white noise over the voiced
//! parts and surrounds them with digital silence, so VAD has gaps to find.
//!
//! All randomness comes from ChaCha streams keyed by `(seed, speaker index,
//! utterance index)`, so a speaker renders the same way regardless of how many
//! other speakers are generated alongside it.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array1;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::eval::DVector;
use crate::store::{write_wav, DVectorStore, Manifest, ManifestEntry, Split};

/// Shortest utterance the layout can render while keeping every voiced
/// segment above the 180-frame partial minimum.
pub const MIN_SYNTH_DURATION: f64 = 2.4;

const GRID_STEP_HZ: f64 = 50.0;
const GRID_LOW_HZ: f64 = 150.0;
const GRID_HIGH_HZ: f64 = 3800.0;
const MIN_SEGMENT: f64 = 1.9;
const MOD_DEPTH: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub min_duration: f64,
    pub max_duration: f64,
    /// White-noise standard deviation relative to the voiced signal RMS.
    pub noise_level: f64,
    pub seed: u64,
    /// Global index of the first speaker; disjoint offsets give disjoint speakers.
    pub first_speaker: usize,
    pub split: Split,
    pub sample_rate: u32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_speakers: 8,
            utterances_per_speaker: 10,
            min_duration: 2.5,
            max_duration: 5.0,
            noise_level: 0.02,
            seed: 0,
            first_speaker: 0,
            split: Split::Train,
            sample_rate: 16_000,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_speakers == 0 || self.utterances_per_speaker == 0 {
            return bad("synthetic corpus needs at least one speaker and utterance".into());
        }
        if !(self.min_duration >= MIN_SYNTH_DURATION) || !(self.max_duration >= self.min_duration) {
            return bad(format!(
                "durations must satisfy {MIN_SYNTH_DURATION} <= min <= max, got [{}, {}]",
                self.min_duration, self.max_duration
            ));
        }
        if !self.max_duration.is_finite() || !(self.noise_level >= 0.0) || !self.noise_level.is_finite() {
            return bad("duration and noise level must be finite, noise non-negative".into());
        }
        if (self.sample_rate as f64) / 2.0 <= GRID_HIGH_HZ {
            return bad(format!("sample rate {} too low for the signature grid", self.sample_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerSignature {
    pub frequencies: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub modulation_rates: Vec<f64>,
}

pub fn speaker_id(index: usize) -> String {
    format!("spk{index:03}")
}

fn stream_rng(seed: u64, speaker: usize, utterance: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((speaker as u64) << 24) | utterance);
    rng
}

pub fn speaker_signature(seed: u64, speaker: usize) -> SpeakerSignature {
    let mut rng = stream_rng(seed, speaker, 0);
    let grid = ((GRID_HIGH_HZ - GRID_LOW_HZ) / GRID_STEP_HZ) as usize + 1;
    let k = rng.random_range(3..=5);
    let mut picks = index::sample(&mut rng, grid, k).into_vec();
    picks.sort_unstable();
    let frequencies: Vec<f64> = picks.iter().map(|&p| GRID_LOW_HZ + GRID_STEP_HZ * p as f64).collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.3..1.0)).collect();
    let total: f64 = raw.iter().sum();
    SpeakerSignature {
        frequencies,
        amplitudes: raw.iter().map(|a| a / total).collect(),
        modulation_rates: (0..k).map(|_| rng.random_range(0.5..4.0)).collect(),
    }
}

/// Voiced `(start, end)` spans in seconds for an utterance of `duration`.
fn layout<R: Rng>(duration: f64, rng: &mut R) -> Vec<(f64, f64)> {
    let lead = rng.random_range(0.1..0.25);
    let trail = rng.random_range(0.1..0.25);
    let voiced = duration - lead - trail;
    let gap = rng.random_range(0.2..0.4);
    if voiced - gap >= 2.0 * MIN_SEGMENT + 0.2 {
        let first = rng.random_range(MIN_SEGMENT..voiced - gap - MIN_SEGMENT);
        vec![(lead, lead + first), (lead + first + gap, lead + voiced)]
    } else {
        vec![(lead, lead + voiced)]
    }
}

pub fn render_utterance(
    signature: &SpeakerSignature,
    duration: f64,
    noise_level: f64,
    sample_rate: u32,
    rng: &mut ChaCha8Rng,
) -> Result<Waveform> {
    let sr = sample_rate as f64;
    let n = (duration * sr).round() as usize;
    let spans = layout(duration, rng);
    let gain = rng.random_range(0.5..1.0);
    let k = signature.frequencies.len();
    let phases: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let mod_phases: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let jitter: Vec<f64> = (0..k).map(|_| rng.random_range(0.8..1.2)).collect();

    let mut samples = vec![0.0; n];
    for &(start, end) in &spans {
        let (a, b) = ((start * sr).round() as usize, ((end * sr).round() as usize).min(n));
        for (i, s) in samples[a..b].iter_mut().enumerate() {
            let t = (a + i) as f64 / sr;
            *s = (0..k)
                .map(|c| {
                    let am = 1.0 + MOD_DEPTH * (2.0 * PI * signature.modulation_rates[c] * t + mod_phases[c]).sin();
                    signature.amplitudes[c] * jitter[c] * am * (2.0 * PI * signature.frequencies[c] * t + phases[c]).sin()
                })
                .sum::<f64>()
                * 0.5
                * gain;
        }
        if noise_level > 0.0 {
            let seg = &mut samples[a..b];
            let rms = (seg.iter().map(|x| x * x).sum::<f64>() / seg.len().max(1) as f64).sqrt();
            for s in seg.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *s += noise_level * rms * z;
            }
        }
    }
    for s in &mut samples {
        *s = s.clamp(-1.0, 1.0);
    }
    Waveform::new(samples, sample_rate)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUtterance {
    pub speaker_id: String,
    pub utterance_id: String,
    pub waveform: Waveform,
}

/// Renders the corpus in memory, speaker by speaker.
pub fn synthesize(spec: &SynthSpec) -> Result<Vec<SyntheticUtterance>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.n_speakers * spec.utterances_per_speaker);
    for s in spec.first_speaker..spec.first_speaker + spec.n_speakers {
        let signature = speaker_signature(spec.seed, s);
        let speaker = speaker_id(s);
        for u in 0..spec.utterances_per_speaker {
            let mut rng = stream_rng(spec.seed, s, u as u64 + 1);
            let duration = if spec.max_duration > spec.min_duration {
                rng.random_range(spec.min_duration..spec.max_duration)
            } else {
                spec.min_duration
            };
            let waveform = render_utterance(&signature, duration, spec.noise_level, spec.sample_rate, &mut rng)?;
            out.push(SyntheticUtterance {
                utterance_id: format!("{speaker}_u{u:03}"),
                speaker_id: speaker.clone(),
                waveform,
            });
        }
    }
    Ok(out)
}

/// Writes one WAV per utterance under `out_dir/<speaker>/` plus `out_dir/manifest.tsv`.
pub fn generate_synthetic_corpus(spec: &SynthSpec, out_dir: &Path) -> Result<Manifest> {
    let utterances = synthesize(spec)?;
    let mut entries = Vec::with_capacity(utterances.len());
    for u in &utterances {
        let rel = PathBuf::from(&u.speaker_id).join(format!("{}.wav", u.utterance_id));
        let path = out_dir.join(&rel);
        fs::create_dir_all(path.parent().expect("has parent"))?;
        write_wav(&path, &u.waveform)?;
        entries.push(ManifestEntry {
            speaker_id: u.speaker_id.clone(),
            utterance_id: u.utterance_id.clone(),
            path: rel,
            duration_seconds: u.waveform.duration_seconds(),
            split: spec.split,
        });
    }
    let manifest = Manifest {
        base_dir: out_dir.to_path_buf(),
        entries,
    };
    manifest.validate()?;
    manifest.write(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

/// Constructed d-vectors: a random unit direction per speaker plus isotropic
/// Gaussian noise. Utterances shorter than `short_boundary` get their noise
/// standard deviation multiplied by `short_noise_factor`.
#[derive(Debug, Clone, PartialEq)]
pub struct DVectorSynthSpec {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub dim: usize,
    pub noise_std: f64,
    pub min_duration: f64,
    pub max_duration: f64,
    pub short_boundary: f64,
    pub short_noise_factor: f64,
    pub seed: u64,
}

impl Default for DVectorSynthSpec {
    fn default() -> Self {
        Self {
            n_speakers: 10,
            utterances_per_speaker: 30,
            dim: 32,
            noise_std: 0.2,
            min_duration: 2.0,
            max_duration: 8.0,
            short_boundary: 4.0,
            short_noise_factor: 1.0,
            seed: 0,
        }
    }
}

pub fn synthetic_dvector_store(spec: &DVectorSynthSpec) -> Result<DVectorStore> {
    if spec.n_speakers == 0 || spec.utterances_per_speaker == 0 || spec.dim == 0 {
        return Err(Error::InvalidConfig("empty synthetic d-vector spec".into()));
    }
    if !(spec.noise_std >= 0.0) || !(spec.short_noise_factor >= 0.0) || !(spec.max_duration > spec.min_duration) {
        return Err(Error::InvalidConfig("bad synthetic d-vector noise or duration range".into()));
    }
    let mut records = Vec::with_capacity(spec.n_speakers * spec.utterances_per_speaker);
    for s in 0..spec.n_speakers {
        let mut rng = stream_rng(spec.seed, s, 0);
        let mut dir: Array1<f64> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        dir /= dir.dot(&dir).sqrt();
        for u in 0..spec.utterances_per_speaker {
            let duration = rng.random_range(spec.min_duration..spec.max_duration);
            let sigma = if duration < spec.short_boundary {
                spec.noise_std * spec.short_noise_factor
            } else {
                spec.noise_std
            };
            let vector = dir.mapv(|d| {
                let z: f64 = StandardNormal.sample(&mut rng);
                d + sigma * z
            });
            records.push(DVector {
                vector,
                speaker_id: format!("dv{s:03}"),
                utterance_id: format!("dv{s:03}_u{u:03}"),
                duration_seconds: duration,
            });
        }
    }
    DVectorStore::new(spec.dim, records)
}
