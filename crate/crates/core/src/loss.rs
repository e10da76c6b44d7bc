//! Generalized end-to-end (GE2E) softmax loss.
//!
//! Row `j·M + i` of an [`EmbeddingBatch`] is utterance `i` of speaker `j`.
//! Every embedding is scored against every speaker centroid; against its own
//! speaker the centroid leaves the embedding out, so the positive similarity
//! cannot be satisfied trivially.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Lower bound enforced on the similarity scale `w`.
pub const MIN_SCALE_W: f64 = 1e-6;
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    embeddings: Array2<f64>,
    n_speakers: usize,
    m_utterances: usize,
}

impl EmbeddingBatch {
    /// Unit-norm embeddings, `N·M` rows grouped by speaker.
    pub fn new(embeddings: Array2<f64>, n_speakers: usize, m_utterances: usize) -> Result<Self> {
        let batch = Self::from_rows(embeddings, n_speakers, m_utterances)?;
        for (r, row) in batch.embeddings.outer_iter().enumerate() {
            let n = row.dot(&row).sqrt();
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::Shape(format!("row {r} has norm {n}, expected 1")));
            }
        }
        Ok(batch)
    }

    /// Like [`EmbeddingBatch::new`] but accepts rows of any nonzero norm.
    pub fn from_rows(embeddings: Array2<f64>, n_speakers: usize, m_utterances: usize) -> Result<Self> {
        if m_utterances < 2 {
            return Err(Error::InsufficientUtterances(m_utterances));
        }
        if n_speakers < 2 {
            return Err(Error::Shape(format!("need at least 2 speakers, got {n_speakers}")));
        }
        if embeddings.nrows() != n_speakers * m_utterances || embeddings.ncols() == 0 {
            return Err(Error::Shape(format!(
                "{:?} embeddings for {n_speakers} speakers × {m_utterances} utterances",
                embeddings.dim()
            )));
        }
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite embedding".into()));
        }
        Ok(Self {
            embeddings,
            n_speakers,
            m_utterances,
        })
    }

    pub fn n_speakers(&self) -> usize {
        self.n_speakers
    }

    pub fn m_utterances(&self) -> usize {
        self.m_utterances
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn embeddings(&self) -> &Array2<f64> {
        &self.embeddings
    }

    pub fn embedding(&self, j: usize, i: usize) -> ArrayView1<'_, f64> {
        self.embeddings.row(j * self.m_utterances + i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossScale {
    pub w: f64,
    pub b: f64,
}

impl Default for LossScale {
    fn default() -> Self {
        Self { w: 10.0, b: -5.0 }
    }
}

pub fn clamp_scale(scale: LossScale) -> LossScale {
    LossScale {
        w: scale.w.max(MIN_SCALE_W),
        b: scale.b,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    #[default]
    Mean,
}

impl std::str::FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Reduction::Sum),
            "mean" => Ok(Reduction::Mean),
            other => Err(Error::InvalidConfig(format!("unknown reduction `{other}`"))),
        }
    }
}

impl std::fmt::Display for Reduction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Reduction::Sum => "sum",
            Reduction::Mean => "mean",
        })
    }
}

/// `S[j·M + i, k]`: scaled cosine of embedding `(j, i)` to speaker `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Array2<f64>,
    /// The unscaled cosines behind `values`.
    pub cosines: Array2<f64>,
    pub m_utterances: usize,
}

pub fn centroid(batch: &EmbeddingBatch, j: usize) -> Result<Array1<f64>> {
    if j >= batch.n_speakers {
        return Err(Error::IndexOutOfRange {
            index: j,
            len: batch.n_speakers,
        });
    }
    let m = batch.m_utterances;
    let mut c = Array1::zeros(batch.dim());
    for i in 0..m {
        c += &batch.embedding(j, i);
    }
    Ok(c / m as f64)
}

/// Mean of speaker `j`'s embeddings with utterance `i` left out.
pub fn centroid_excluding(batch: &EmbeddingBatch, j: usize, i: usize) -> Result<Array1<f64>> {
    let m = batch.m_utterances;
    if m < 2 {
        return Err(Error::InsufficientUtterances(m));
    }
    if j >= batch.n_speakers || i >= m {
        return Err(Error::IndexOutOfRange {
            index: if j >= batch.n_speakers { j } else { i },
            len: if j >= batch.n_speakers { batch.n_speakers } else { m },
        });
    }
    let mut c = Array1::zeros(batch.dim());
    for other in (0..m).filter(|&o| o != i) {
        c += &batch.embedding(j, other);
    }
    Ok(c / (m - 1) as f64)
}

fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

struct Geometry {
    centroids: Vec<Array1<f64>>,
    /// Leave-one-out centroid per row.
    loo: Vec<Array1<f64>>,
}

fn geometry(batch: &EmbeddingBatch) -> Result<Geometry> {
    let (n, m) = (batch.n_speakers, batch.m_utterances);
    let centroids = (0..n).map(|k| centroid(batch, k)).collect::<Result<Vec<_>>>()?;
    let mut loo = Vec::with_capacity(n * m);
    for j in 0..n {
        for i in 0..m {
            loo.push(centroid_excluding(batch, j, i)?);
        }
    }
    for (k, c) in centroids.iter().enumerate() {
        if norm(c.view()) < NORM_EPS {
            return Err(Error::DegenerateCentroid(k));
        }
    }
    for (r, c) in loo.iter().enumerate() {
        if norm(c.view()) < NORM_EPS {
            return Err(Error::DegenerateCentroid(r / m));
        }
    }
    Ok(Geometry { centroids, loo })
}

fn check_scale(scale: &LossScale) -> Result<()> {
    if !(scale.w >= MIN_SCALE_W) || !scale.b.is_finite() || !scale.w.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "loss scale w must be >= {MIN_SCALE_W}, got {scale:?}"
        )));
    }
    Ok(())
}

pub fn similarity_matrix(batch: &EmbeddingBatch, scale: LossScale) -> Result<SimilarityMatrix> {
    check_scale(&scale)?;
    let geo = geometry(batch)?;
    let (n, m) = (batch.n_speakers, batch.m_utterances);
    let mut cosines = Array2::zeros((n * m, n));
    for j in 0..n {
        for i in 0..m {
            let r = j * m + i;
            let e = batch.embeddings.row(r);
            let ne = norm(e);
            if ne < NORM_EPS {
                return Err(Error::DegenerateEmbedding);
            }
            for k in 0..n {
                let c = if k == j { &geo.loo[r] } else { &geo.centroids[k] };
                cosines[[r, k]] = e.dot(c) / (ne * norm(c.view()));
            }
        }
    }
    let values = cosines.mapv(|c| scale.w * c + scale.b);
    Ok(SimilarityMatrix {
        values,
        cosines,
        m_utterances: m,
    })
}

fn log_sum_exp(xs: ArrayView1<f64>) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `−S[ji, j] + log Σ_k exp(S[ji, k])`.
pub fn loss_per_embedding(s: &SimilarityMatrix, j: usize, i: usize) -> f64 {
    let row = s.values.row(j * s.m_utterances + i);
    log_sum_exp(row) - row[j]
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// `dL/de` with the same layout as the batch.
    pub grad_embeddings: Array2<f64>,
    pub grad_w: f64,
    pub grad_b: f64,
}

/// Reduced GE2E loss and its analytic gradients.
///
/// The embedding gradient follows both paths through which `e_ji` enters the
/// similarity matrix: as the scored vector, and as a member of its own
/// speaker's full centroid (seen by the other speakers' rows) and of the
/// leave-one-out centroids of its sibling utterances.
pub fn total_loss(batch: &EmbeddingBatch, scale: LossScale, reduction: Reduction) -> Result<LossOutput> {
    let sim = similarity_matrix(batch, scale)?;
    let geo = geometry(batch)?;
    let (n, m, d) = (batch.n_speakers, batch.m_utterances, batch.dim());
    let factor = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / (n * m) as f64,
    };

    let mut loss = 0.0;
    let mut grad_e = Array2::<f64>::zeros((n * m, d));
    let mut grad_cent = vec![Array1::<f64>::zeros(d); n];
    let mut grad_loo = vec![Array1::<f64>::zeros(d); n * m];
    let (mut grad_w, mut grad_b) = (0.0, 0.0);

    for j in 0..n {
        for i in 0..m {
            let r = j * m + i;
            let row = sim.values.row(r);
            let lse = log_sum_exp(row);
            loss += lse - row[j];

            let e = batch.embeddings.row(r);
            let ne = norm(e);
            for k in 0..n {
                let p = (row[k] - lse).exp();
                let g = (p - if k == j { 1.0 } else { 0.0 }) * factor;
                let cos = sim.cosines[[r, k]];
                grad_w += g * cos;
                grad_b += g;

                let d_cos = scale.w * g;
                let c = if k == j { &geo.loo[r] } else { &geo.centroids[k] };
                let nc = norm(c.view());
                let mut ge = grad_e.row_mut(r);
                let target = if k == j { &mut grad_loo[r] } else { &mut grad_cent[k] };
                for q in 0..d {
                    ge[q] += d_cos * (c[q] / (ne * nc) - cos * e[q] / (ne * ne));
                    target[q] += d_cos * (e[q] / (ne * nc) - cos * c[q] / (nc * nc));
                }
            }
        }
    }

    for k in 0..n {
        let share = &grad_cent[k] / m as f64;
        for i in 0..m {
            let mut row = grad_e.row_mut(k * m + i);
            row += &share;
        }
    }
    for j in 0..n {
        for i in 0..m {
            let share = &grad_loo[j * m + i] / (m - 1) as f64;
            for other in (0..m).filter(|&o| o != i) {
                let mut row = grad_e.row_mut(j * m + other);
                row += &share;
            }
        }
    }

    Ok(LossOutput {
        loss: loss * factor,
        grad_embeddings: grad_e,
        grad_w,
        grad_b,
    })
}
