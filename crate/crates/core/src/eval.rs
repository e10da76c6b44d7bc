//! D-vector extraction, enrollment, cosine scoring and EER experiments.
//!
//! Scores accept a trial when `score >= threshold`, so FAR falls and FRR
//! rises as the threshold increases.
//!
//! Every experiment iteration draws from its own ChaCha stream derived from
//! `(seed, m, iteration)`, so iterations can run in parallel and results do
//! not depend on scheduling.

use ndarray::{Array1, ArrayView1};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dsp::FeatureMatrix;
use crate::error::{Error, Result};
use crate::net::{normalize_rows, NetworkParams};
use crate::store::DVectorStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub window_frames: usize,
    pub step_frames: usize,
}

impl Default for WindowSpec {
    /// 160-frame windows (midpoint of the 140–180 training range), 50% overlap.
    fn default() -> Self {
        Self {
            window_frames: 160,
            step_frames: 80,
        }
    }
}

impl WindowSpec {
    /// Full windows in a `frames`-long utterance; an incomplete tail is dropped.
    pub fn window_count(&self, frames: usize) -> usize {
        if frames < self.window_frames {
            0
        } else {
            (frames - self.window_frames) / self.step_frames + 1
        }
    }

    pub fn offsets(&self, frames: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.window_count(frames)).map(move |k| k * self.step_frames)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DVector {
    pub vector: Array1<f64>,
    pub speaker_id: String,
    pub utterance_id: String,
    pub duration_seconds: f64,
}

/// Mean of the unit-normalized window embeddings (not re-normalized).
pub fn utterance_embedding(params: &NetworkParams, features: &FeatureMatrix, spec: &WindowSpec) -> Result<Array1<f64>> {
    if spec.window_frames == 0 || spec.step_frames == 0 || spec.step_frames > spec.window_frames {
        return Err(Error::InvalidConfig(format!("bad window spec {spec:?}")));
    }
    if features.frames() < spec.window_frames {
        return Err(Error::TooShort {
            got: features.frames(),
            needed: spec.window_frames,
        });
    }
    let windows = spec
        .offsets(features.frames())
        .map(|o| features.slice_frames(o, spec.window_frames))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&FeatureMatrix> = windows.iter().collect();
    let raw = params.infer_batch(&refs)?;
    let (unit, _) = normalize_rows(&raw)?;
    Ok(unit.mean_axis(ndarray::Axis(0)).expect("at least one window"))
}

pub fn utterance_dvector(
    params: &NetworkParams,
    features: &FeatureMatrix,
    spec: &WindowSpec,
    duration_seconds: f64,
) -> Result<DVector> {
    Ok(DVector {
        vector: utterance_embedding(params, features, spec)?,
        speaker_id: features.source.speaker.clone(),
        utterance_id: features.source.utterance.clone(),
        duration_seconds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerModel {
    pub speaker_id: String,
    pub centroid: Array1<f64>,
    pub enrolled_utterance_ids: Vec<String>,
}

impl SpeakerModel {
    pub fn enroll(dvectors: &[&DVector]) -> Result<Self> {
        let first = dvectors.first().ok_or(Error::InsufficientUtterances(0))?;
        let mut centroid = Array1::zeros(first.vector.len());
        for d in dvectors {
            if d.speaker_id != first.speaker_id || d.vector.len() != centroid.len() {
                return Err(Error::Shape("enrollment d-vectors must share speaker and dim".into()));
            }
            centroid += &d.vector;
        }
        centroid /= dvectors.len() as f64;
        Ok(Self {
            speaker_id: first.speaker_id.clone(),
            centroid,
            enrolled_utterance_ids: dvectors.iter().map(|d| d.utterance_id.clone()).collect(),
        })
    }
}

pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
    if !(na > 0.0) || !(nb > 0.0) {
        return Err(Error::DegenerateInput);
    }
    Ok((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn cosine_score(d: &DVector, model: &SpeakerModel) -> Result<f64> {
    cosine(d.vector.view(), model.centroid.view())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl TrialSet {
    pub fn extend(&mut self, other: TrialSet) {
        self.genuine.extend(other.genuine);
        self.impostor.extend(other.impostor);
    }

    /// `(FAR, FRR)` when accepting scores `>= threshold`.
    pub fn rates_at(&self, threshold: f64) -> (f64, f64) {
        let fa = self.impostor.iter().filter(|&&s| s >= threshold).count();
        let fr = self.genuine.iter().filter(|&&s| s < threshold).count();
        (
            fa as f64 / self.impostor.len().max(1) as f64,
            fr as f64 / self.genuine.len().max(1) as f64,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRateCurve {
    pub thresholds: Vec<f64>,
    pub far: Vec<f64>,
    pub frr: Vec<f64>,
    pub eer: f64,
    pub eer_threshold: f64,
}

/// Number of thresholds in the reporting grid.
pub const DEFAULT_THRESHOLDS: usize = 2001;

/// Equal error rate from an exact sweep over every distinct score.
///
/// The sweep walks the cut points in ascending order and stops at the first
/// one where FRR ≥ FAR. If the two rates are not equal there, the crossing is
/// interpolated linearly between this cut and the previous one.
pub fn equal_error_rate(trials: &TrialSet) -> Result<(f64, f64)> {
    if trials.genuine.is_empty() || trials.impostor.is_empty() {
        return Err(Error::NoTrials);
    }
    if trials.genuine.iter().chain(&trials.impostor).any(|s| !s.is_finite()) {
        return Err(Error::Numerical("non-finite trial score".into()));
    }
    let mut genuine = trials.genuine.clone();
    let mut impostor = trials.impostor.clone();
    genuine.sort_by(f64::total_cmp);
    impostor.sort_by(f64::total_cmp);
    let mut cuts: Vec<f64> = genuine.iter().chain(&impostor).copied().collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let top = *cuts.last().expect("non-empty");
    cuts.push(top + 1e-9 * top.abs().max(1.0));

    let (ng, ni) = (genuine.len() as f64, impostor.len() as f64);
    let rates = |th: f64| {
        let frr = genuine.partition_point(|&s| s < th) as f64 / ng;
        let far = (impostor.len() - impostor.partition_point(|&s| s < th)) as f64 / ni;
        (far, frr)
    };

    let mut prev = (cuts[0], rates(cuts[0]));
    for &th in &cuts {
        let (far, frr) = rates(th);
        if frr >= far {
            if frr == far {
                return Ok((far, th));
            }
            let (th0, (far0, frr0)) = prev;
            let d0 = far0 - frr0;
            let d1 = far - frr;
            let alpha = d0 / (d0 - d1);
            let eer = far0 + alpha * (far - far0);
            return Ok((eer, th0 + alpha * (th - th0)));
        }
        prev = (th, (far, frr));
    }
    unreachable!("FRR reaches 1 and FAR reaches 0 past the largest score")
}

/// FAR/FRR over `n_thresholds` evenly spaced thresholds covering the scores,
/// plus the exact EER.
pub fn compute_error_curve(trials: &TrialSet, n_thresholds: usize) -> Result<ErrorRateCurve> {
    let (eer, eer_threshold) = equal_error_rate(trials)?;
    let n = n_thresholds.max(2);
    let (lo, hi) = trials
        .genuine
        .iter()
        .chain(&trials.impostor)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let pad = 1e-6 * (hi - lo).max(1e-3);
    let (lo, hi) = (lo - pad, hi + pad);
    let thresholds: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
    let (far, frr) = rates_on_grid(trials, &thresholds);
    Ok(ErrorRateCurve {
        thresholds,
        far,
        frr,
        eer,
        eer_threshold,
    })
}

/// FAR and FRR at each of the ascending `thresholds`.
pub fn rates_on_grid(trials: &TrialSet, thresholds: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut genuine = trials.genuine.clone();
    let mut impostor = trials.impostor.clone();
    genuine.sort_by(f64::total_cmp);
    impostor.sort_by(f64::total_cmp);
    let (ng, ni) = (genuine.len().max(1) as f64, impostor.len().max(1) as f64);
    thresholds
        .iter()
        .map(|&th| {
            let far = (impostor.len() - impostor.partition_point(|&s| s < th)) as f64 / ni;
            let frr = genuine.partition_point(|&s| s < th) as f64 / ng;
            (far, frr)
        })
        .unzip()
}

fn iteration_rng(seed: u64, m: usize, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((m as u64) << 40) ^ iteration as u64);
    rng
}

struct Enrollment<'a> {
    models: Vec<SpeakerModel>,
    /// Verification d-vectors with the index of their speaker's model.
    verification: Vec<(&'a DVector, usize)>,
}

/// Draws `2m` d-vectors per speaker: first half enrolls, second half verifies.
fn enroll_split<'a>(
    store: &'a DVectorStore,
    groups: &[(String, Vec<usize>)],
    m: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Enrollment<'a>> {
    let records = store.records();
    let mut models = Vec::with_capacity(groups.len());
    let mut verification = Vec::with_capacity(groups.len() * m);
    for (k, (_, idx)) in groups.iter().enumerate() {
        let picks = index::sample(rng, idx.len(), 2 * m).into_vec();
        let enroll: Vec<&DVector> = picks[..m].iter().map(|&p| &records[idx[p]]).collect();
        models.push(SpeakerModel::enroll(&enroll)?);
        verification.extend(picks[m..].iter().map(|&p| (&records[idx[p]], k)));
    }
    Ok(Enrollment { models, verification })
}

/// Scores every verification d-vector passing `keep` against every model.
fn score_trials(e: &Enrollment<'_>, keep: impl Fn(&DVector) -> bool) -> Result<TrialSet> {
    let mut trials = TrialSet::default();
    for &(d, own) in e.verification.iter().filter(|(d, _)| keep(d)) {
        for (k, model) in e.models.iter().enumerate() {
            let s = cosine_score(d, model)?;
            if k == own {
                trials.genuine.push(s);
            } else {
                trials.impostor.push(s);
            }
        }
    }
    Ok(trials)
}

fn checked_groups(store: &DVectorStore, m: usize) -> Result<Vec<(String, Vec<usize>)>> {
    if m < 2 {
        return Err(Error::InsufficientUtterances(m));
    }
    let groups = store.by_speaker();
    if groups.len() < 2 {
        return Err(Error::NoTrials);
    }
    if let Some((speaker, idx)) = groups.iter().find(|(_, idx)| idx.len() < 2 * m) {
        return Err(Error::TooFewForEnrollment {
            speaker: speaker.clone(),
            have: idx.len(),
            m,
        });
    }
    Ok(groups)
}

/// Per-iteration outcome of one enrollment/verification round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationResult {
    pub eer: f64,
    pub threshold: f64,
    /// Rates measured at `threshold`; they differ from `eer` by at most one trial step.
    pub far: f64,
    pub frr: f64,
}

/// Runs `iterations` independent rounds with `m` enrollment utterances.
pub fn run_iterations(store: &DVectorStore, m: usize, iterations: usize, seed: u64) -> Result<Vec<IterationResult>> {
    let groups = checked_groups(store, m)?;
    (0..iterations)
        .into_par_iter()
        .map(|it| {
            let mut rng = iteration_rng(seed, m, it);
            let e = enroll_split(store, &groups, m, &mut rng)?;
            let trials = score_trials(&e, |_| true)?;
            let (eer, threshold) = equal_error_rate(&trials)?;
            let (far, frr) = trials.rates_at(threshold);
            Ok(IterationResult { eer, threshold, far, frr })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MSweepRow {
    pub m: usize,
    pub mean_eer: f64,
    /// Standard error of `mean_eer` across iterations.
    pub std_error: f64,
    pub mean_threshold: f64,
    pub mean_far: f64,
    pub mean_frr: f64,
}

fn mean_and_stderr(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean EER over `iterations` rounds for each enrollment size in `m_values`.
pub fn run_m_sweep(store: &DVectorStore, m_values: &[usize], iterations: usize, seed: u64) -> Result<Vec<MSweepRow>> {
    if iterations == 0 {
        return Err(Error::NoTrials);
    }
    m_values
        .iter()
        .map(|&m| {
            let results = run_iterations(store, m, iterations, seed)?;
            let (mean_eer, std_error) = mean_and_stderr(results.iter().map(|r| r.eer));
            let n = results.len() as f64;
            Ok(MSweepRow {
                m,
                mean_eer,
                std_error,
                mean_threshold: results.iter().map(|r| r.threshold).sum::<f64>() / n,
                mean_far: results.iter().map(|r| r.far).sum::<f64>() / n,
                mean_frr: results.iter().map(|r| r.frr).sum::<f64>() / n,
            })
        })
        .collect()
}

/// FAR/FRR averaged over iterations on a fixed threshold grid.
pub fn mean_error_curve(
    store: &DVectorStore,
    m: usize,
    iterations: usize,
    seed: u64,
    thresholds: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let groups = checked_groups(store, m)?;
    let per_iter = (0..iterations)
        .into_par_iter()
        .map(|it| {
            let mut rng = iteration_rng(seed, m, it);
            let e = enroll_split(store, &groups, m, &mut rng)?;
            Ok(rates_on_grid(&score_trials(&e, |_| true)?, thresholds))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_iter.len().max(1) as f64;
    let mut far = vec![0.0; thresholds.len()];
    let mut frr = vec![0.0; thresholds.len()];
    for (fa, fr) in &per_iter {
        far.iter_mut().zip(fa).for_each(|(a, b)| *a += b);
        frr.iter_mut().zip(fr).for_each(|(a, b)| *a += b);
    }
    far.iter_mut().chain(frr.iter_mut()).for_each(|v| *v /= n);
    Ok((far, frr))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedThresholdRow {
    pub subset: String,
    pub far: f64,
    pub frr: f64,
    pub eer: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedThresholdReport {
    pub threshold: f64,
    pub dev_eer: f64,
    pub rows: Vec<FixedThresholdRow>,
}

/// Averages the dev-set EER threshold, then applies it unchanged to each test set.
pub fn run_fixed_threshold(
    dev: &DVectorStore,
    tests: &[(String, &DVectorStore)],
    m: usize,
    iterations: usize,
    seed: u64,
) -> Result<FixedThresholdReport> {
    if iterations == 0 {
        return Err(Error::NoTrials);
    }
    let dev_results = run_iterations(dev, m, iterations, seed)?;
    let n = dev_results.len() as f64;
    let threshold = dev_results.iter().map(|r| r.threshold).sum::<f64>() / n;
    let dev_eer = dev_results.iter().map(|r| r.eer).sum::<f64>() / n;

    let rows = tests
        .iter()
        .enumerate()
        .map(|(t, (name, store))| {
            let groups = checked_groups(store, m)?;
            let per_iter = (0..iterations)
                .into_par_iter()
                .map(|it| {
                    let mut rng = iteration_rng(seed ^ (0x9e37_79b9 + t as u64), m, it);
                    let trials = score_trials(&enroll_split(store, &groups, m, &mut rng)?, |_| true)?;
                    let (far, frr) = trials.rates_at(threshold);
                    let (eer, _) = equal_error_rate(&trials)?;
                    Ok((far, frr, eer))
                })
                .collect::<Result<Vec<_>>>()?;
            let k = per_iter.len() as f64;
            Ok(FixedThresholdRow {
                subset: name.clone(),
                far: per_iter.iter().map(|r| r.0).sum::<f64>() / k,
                frr: per_iter.iter().map(|r| r.1).sum::<f64>() / k,
                eer: per_iter.iter().map(|r| r.2).sum::<f64>() / k,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FixedThresholdReport {
        threshold,
        dev_eer,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetResult {
    pub eer: f64,
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
    /// Iterations that had at least one verification utterance in the subset.
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DurationSplitReport {
    pub boundary_seconds: f64,
    pub short: SubsetResult,
    pub long: SubsetResult,
    pub all: SubsetResult,
}

/// EER restricted to short (`< boundary`) or long verification utterances.
/// Enrollment ignores duration.
pub fn run_duration_split(
    store: &DVectorStore,
    boundary_seconds: f64,
    m: usize,
    iterations: usize,
    seed: u64,
) -> Result<DurationSplitReport> {
    if iterations == 0 {
        return Err(Error::NoTrials);
    }
    let groups = checked_groups(store, m)?;
    let is_short = |d: &DVector| d.duration_seconds < boundary_seconds;
    if !store.records().iter().any(is_short) {
        return Err(Error::PartitionEmpty("short"));
    }
    if store.records().iter().all(is_short) {
        return Err(Error::PartitionEmpty("long"));
    }

    type Triple = [Option<[f64; 4]>; 3];
    let per_iter: Vec<Triple> = (0..iterations)
        .into_par_iter()
        .map(|it| {
            let mut rng = iteration_rng(seed, m, it);
            let e = enroll_split(store, &groups, m, &mut rng)?;
            let subset = |keep: &dyn Fn(&DVector) -> bool| -> Result<Option<[f64; 4]>> {
                let trials = score_trials(&e, keep)?;
                if trials.genuine.is_empty() {
                    return Ok(None);
                }
                let (eer, threshold) = equal_error_rate(&trials)?;
                let (far, frr) = trials.rates_at(threshold);
                Ok(Some([eer, threshold, far, frr]))
            };
            Ok([
                subset(&|d| is_short(d))?,
                subset(&|d| !is_short(d))?,
                subset(&|_| true)?,
            ])
        })
        .collect::<Result<Vec<_>>>()?;

    let summarize = |slot: usize, name: &'static str| -> Result<SubsetResult> {
        let hits: Vec<[f64; 4]> = per_iter.iter().filter_map(|r| r[slot]).collect();
        if hits.is_empty() {
            return Err(Error::PartitionEmpty(name));
        }
        let mean = |k: usize| hits.iter().map(|h| h[k]).sum::<f64>() / hits.len() as f64;
        Ok(SubsetResult {
            eer: mean(0),
            threshold: mean(1),
            far: mean(2),
            frr: mean(3),
            iterations: hits.len(),
        })
    };
    Ok(DurationSplitReport {
        boundary_seconds,
        short: summarize(0, "short")?,
        long: summarize(1, "long")?,
        all: summarize(2, "all")?,
    })
}

/// One line of the experiment report CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub experiment: String,
    pub subset: String,
    pub m: usize,
    pub eer: f64,
    pub far: f64,
    pub frr: f64,
    pub threshold: f64,
}

pub const REPORT_HEADER: &str = "experiment,subset,m,eer,far,frr,threshold";

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.experiment, r.subset, r.m, r.eer, r.far, r.frr, r.threshold
        ));
    }
    out
}

pub fn curve_csv(thresholds: &[f64], far: &[f64], frr: &[f64]) -> String {
    let mut out = String::from("threshold,far,frr\n");
    for ((t, a), r) in thresholds.iter().zip(far).zip(frr) {
        out.push_str(&format!("{t},{a},{r}\n"));
    }
    out
}
