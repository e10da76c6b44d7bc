//! Stacked LSTM embedder with a biased linear projection.
//!
//! Gate rows inside every `4·hidden` block are ordered input, forget, cell,
//! output. The embedding of a sequence is the projection of the top layer's
//! hidden state at the last frame. All math is `f64`; features are widened
//! from `f32` on entry.
//!
//! Batched evaluation keeps every activation in `(frames · batch) × width`
//! matrices where rows `t·B .. (t+1)·B` belong to frame `t`. This lets the
//! input projections and the weight gradients run as one matrix product per
//! layer instead of one per frame.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dsp::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub embedding_dim: usize,
    /// Separate input-to-hidden and hidden-to-hidden bias vectors per layer.
    pub dual_bias: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl NetConfig {
    /// 40 → 3 × LSTM(768) → 256.
    pub const fn full() -> Self {
        Self {
            input_dim: 40,
            hidden_dim: 768,
            num_layers: 3,
            embedding_dim: 256,
            dual_bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.num_layers == 0 || self.embedding_dim == 0 {
            return Err(Error::InvalidConfig(format!("all network dims must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }

    /// Trainable scalars implied by the configuration.
    pub fn param_count(&self) -> usize {
        let h = self.hidden_dim;
        let biases = if self.dual_bias { 8 * h } else { 4 * h };
        let lstm: usize = (0..self.num_layers)
            .map(|l| 4 * h * (self.layer_input_dim(l) + h) + biases)
            .sum();
        lstm + self.embedding_dim * h + self.embedding_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// `4h × input`
    pub w_ih: Array2<f64>,
    /// `4h × h`
    pub w_hh: Array2<f64>,
    pub b_ih: Array1<f64>,
    /// Empty when the config has a single bias per layer.
    pub b_hh: Array1<f64>,
}

/// Every weight of the network. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub config: NetConfig,
    pub layers: Vec<LstmLayer>,
    /// `embedding × h`
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
}

pub type NetworkGrads = NetworkParams;

impl NetworkParams {
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let layers = (0..config.num_layers)
            .map(|l| LstmLayer {
                w_ih: Array2::zeros((4 * h, config.layer_input_dim(l))),
                w_hh: Array2::zeros((4 * h, h)),
                b_ih: Array1::zeros(4 * h),
                b_hh: Array1::zeros(if config.dual_bias { 4 * h } else { 0 }),
            })
            .collect();
        Ok(Self {
            config,
            layers,
            proj_w: Array2::zeros((config.embedding_dim, h)),
            proj_b: Array1::zeros(config.embedding_dim),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config).expect("config already validated")
    }

    /// Names and shapes in serialization order.
    pub fn tensor_specs(config: &NetConfig) -> Vec<(String, Vec<usize>)> {
        let h = config.hidden_dim;
        let mut out = Vec::new();
        for l in 0..config.num_layers {
            out.push((format!("lstm.{l}.w_ih"), vec![4 * h, config.layer_input_dim(l)]));
            out.push((format!("lstm.{l}.w_hh"), vec![4 * h, h]));
            out.push((format!("lstm.{l}.b_ih"), vec![4 * h]));
            if config.dual_bias {
                out.push((format!("lstm.{l}.b_hh"), vec![4 * h]));
            }
        }
        out.push(("proj.w".into(), vec![config.embedding_dim, h]));
        out.push(("proj.b".into(), vec![config.embedding_dim]));
        out
    }

    /// Flat views of every tensor, in [`NetworkParams::tensor_specs`] order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.layers {
            out.push(layer.w_ih.as_slice().expect("standard layout"));
            out.push(layer.w_hh.as_slice().expect("standard layout"));
            out.push(layer.b_ih.as_slice().expect("standard layout"));
            if self.config.dual_bias {
                out.push(layer.b_hh.as_slice().expect("standard layout"));
            }
        }
        out.push(self.proj_w.as_slice().expect("standard layout"));
        out.push(self.proj_b.as_slice().expect("standard layout"));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let dual = self.config.dual_bias;
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            out.push(layer.w_ih.as_slice_mut().expect("standard layout"));
            out.push(layer.w_hh.as_slice_mut().expect("standard layout"));
            out.push(layer.b_ih.as_slice_mut().expect("standard layout"));
            if dual {
                out.push(layer.b_hh.as_slice_mut().expect("standard layout"));
            }
        }
        out.push(self.proj_w.as_slice_mut().expect("standard layout"));
        out.push(self.proj_b.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum()
    }

    pub fn scale_mut(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self += other`; both must share a config.
    pub fn add_assign(&mut self, other: &NetworkParams) -> Result<()> {
        if self.config != other.config {
            return Err(Error::Shape("adding tensors of different configs".into()));
        }
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }
}

/// Xavier-normal weights (`std = sqrt(2 / (fan_in + fan_out))`), zero biases.
pub fn init_params(config: NetConfig, seed: u64) -> Result<NetworkParams> {
    let mut params = NetworkParams::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |w: &mut Array2<f64>| {
        let (fan_out, fan_in) = w.dim();
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("positive std");
        w.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
    };
    for layer in &mut params.layers {
        fill(&mut layer.w_ih);
        fill(&mut layer.w_hh);
    }
    fill(&mut params.proj_w);
    Ok(params)
}

#[derive(Debug, Clone)]
struct LayerTape {
    /// `TB × input`
    input: Array2<f64>,
    /// Post-activation gates, `TB × 4h`.
    gates: Array2<f64>,
    /// `TB × h`
    cell: Array2<f64>,
    /// `TB × h`
    hidden: Array2<f64>,
}

/// Activations cached by a forward pass for [`NetworkParams::backward`].
#[derive(Debug, Clone)]
pub struct TapeState {
    config: NetConfig,
    frames: usize,
    batch: usize,
    layers: Vec<LayerTape>,
}

impl TapeState {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Unit-norm network output.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Array1<f64>);

impl Embedding {
    pub fn from_raw(raw: ArrayView1<f64>) -> Result<Self> {
        let norm = raw.dot(&raw).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::DegenerateEmbedding);
        }
        Ok(Self(raw.mapv(|v| v / norm)))
    }

    pub fn vector(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }
}

/// Row-wise L2 normalization of raw outputs; returns the norms too.
pub fn normalize_rows(raw: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let norms: Array1<f64> = raw.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if norms.iter().any(|n| !(*n > 0.0) || !n.is_finite()) {
        return Err(Error::DegenerateEmbedding);
    }
    let unit = raw / &norms.view().insert_axis(Axis(1));
    Ok((unit, norms))
}

/// Pulls a gradient on normalized rows back to the raw rows.
pub fn normalize_rows_backward(
    unit: &Array2<f64>,
    norms: &Array1<f64>,
    grad_unit: &Array2<f64>,
) -> Array2<f64> {
    let mut out = grad_unit.clone();
    for ((mut row, e), (&n, g)) in out
        .outer_iter_mut()
        .zip(unit.outer_iter())
        .zip(norms.iter().zip(grad_unit.outer_iter()))
    {
        let proj = e.dot(&g);
        row.zip_mut_with(&e, |gv, &ev| *gv = (*gv - ev * proj) / n);
    }
    out
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn stack_inputs(config: &NetConfig, batch: &[&FeatureMatrix]) -> Result<(usize, Array2<f64>)> {
    let Some(first) = batch.first() else {
        return Err(Error::Shape("empty batch".into()));
    };
    let frames = first.frames();
    if frames == 0 {
        return Err(Error::Shape("sequence has no frames".into()));
    }
    let b = batch.len();
    let mut x = Array2::<f64>::zeros((frames * b, config.input_dim));
    for (bi, fm) in batch.iter().enumerate() {
        if fm.dim() != config.input_dim {
            return Err(Error::Shape(format!(
                "feature dim {} != network input dim {}",
                fm.dim(),
                config.input_dim
            )));
        }
        if fm.frames() != frames {
            return Err(Error::Shape("batched sequences must share a frame count".into()));
        }
        for (t, row) in fm.data.outer_iter().enumerate() {
            let mut dst = x.row_mut(t * b + bi);
            for (d, &v) in dst.iter_mut().zip(row.iter()) {
                if !v.is_finite() {
                    return Err(Error::Numerical("non-finite input feature".into()));
                }
                *d = v as f64;
            }
        }
    }
    Ok((frames, x))
}

impl NetworkParams {
    /// Runs one layer over all frames; returns hidden states and, if asked, the tape.
    fn layer_forward(
        &self,
        layer: &LstmLayer,
        input: Array2<f64>,
        frames: usize,
        batch: usize,
        record: bool,
    ) -> (Array2<f64>, Option<LayerTape>) {
        let h = self.config.hidden_dim;
        let mut pre = input.dot(&layer.w_ih.t());
        pre += &layer.b_ih;
        if self.config.dual_bias {
            pre += &layer.b_hh;
        }
        let mut gates = pre;
        let mut cell = Array2::<f64>::zeros((frames * batch, h));
        let mut hidden = Array2::<f64>::zeros((frames * batch, h));
        for t in 0..frames {
            let rows = t * batch..(t + 1) * batch;
            if t > 0 {
                let prev = hidden.slice(s![(t - 1) * batch..t * batch, ..]);
                let rec = prev.dot(&layer.w_hh.t());
                let mut g = gates.slice_mut(s![rows.clone(), ..]);
                g += &rec;
            }
            for bi in 0..batch {
                let r = t * batch + bi;
                let mut g = gates.row_mut(r);
                let gs = g.as_slice_mut().expect("row contiguous");
                for v in &mut gs[..2 * h] {
                    *v = sigmoid(*v);
                }
                for v in &mut gs[2 * h..3 * h] {
                    *v = v.tanh();
                }
                for v in &mut gs[3 * h..] {
                    *v = sigmoid(*v);
                }
                for k in 0..h {
                    let c_prev = if t > 0 { cell[[r - batch, k]] } else { 0.0 };
                    let c = gs[h + k] * c_prev + gs[k] * gs[2 * h + k];
                    cell[[r, k]] = c;
                    hidden[[r, k]] = gs[3 * h + k] * c.tanh();
                }
            }
        }
        let tape = record.then(|| LayerTape {
            input,
            gates,
            cell,
            hidden: hidden.clone(),
        });
        (hidden, tape)
    }

    fn run(&self, batch: &[&FeatureMatrix], record: bool) -> Result<(Array2<f64>, Option<TapeState>)> {
        let (frames, mut x) = stack_inputs(&self.config, batch)?;
        let b = batch.len();
        let mut tapes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (hidden, tape) = self.layer_forward(layer, x, frames, b, record);
            if let Some(tape) = tape {
                tapes.push(tape);
            }
            x = hidden;
        }
        let last = x.slice(s![(frames - 1) * b.., ..]);
        let mut out = last.dot(&self.proj_w.t());
        out += &self.proj_b;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite network output".into()));
        }
        let tape = record.then(|| TapeState {
            config: self.config,
            frames,
            batch: b,
            layers: tapes,
        });
        Ok((out, tape))
    }

    /// Raw outputs for a batch of equal-length sequences, `B × embedding`.
    pub fn forward_batch(&self, batch: &[&FeatureMatrix]) -> Result<(Array2<f64>, TapeState)> {
        let (out, tape) = self.run(batch, true)?;
        Ok((out, tape.expect("recorded")))
    }

    /// Same as [`forward_batch`](Self::forward_batch) without keeping activations.
    pub fn infer_batch(&self, batch: &[&FeatureMatrix]) -> Result<Array2<f64>> {
        Ok(self.run(batch, false)?.0)
    }

    pub fn forward(&self, features: &FeatureMatrix) -> Result<(Array1<f64>, TapeState)> {
        let (out, tape) = self.forward_batch(&[features])?;
        Ok((out.row(0).to_owned(), tape))
    }

    pub fn embed(&self, features: &FeatureMatrix) -> Result<Embedding> {
        let out = self.infer_batch(&[features])?;
        Embedding::from_raw(out.row(0))
    }

    pub fn backward(&self, tape: &TapeState, grad_out: ArrayView2<f64>) -> Result<NetworkGrads> {
        self.backward_scaled(tape, grad_out, 1.0)
    }

    /// BPTT. `projection_grad_scale` multiplies the projection-layer gradients.
    pub fn backward_scaled(
        &self,
        tape: &TapeState,
        grad_out: ArrayView2<f64>,
        projection_grad_scale: f64,
    ) -> Result<NetworkGrads> {
        let cfg = &self.config;
        if tape.config != *cfg || tape.layers.len() != self.layers.len() {
            return Err(Error::Shape("tape was recorded with a different network".into()));
        }
        let (frames, b, h) = (tape.frames, tape.batch, cfg.hidden_dim);
        if grad_out.dim() != (b, cfg.embedding_dim) {
            return Err(Error::Shape(format!(
                "output gradient {:?} != ({b}, {})",
                grad_out.dim(),
                cfg.embedding_dim
            )));
        }
        let mut grads = self.zeros_like();

        let top = tape.layers.last().expect("at least one layer");
        let last_hidden = top.hidden.slice(s![(frames - 1) * b.., ..]);
        grads.proj_w = grad_out.t().dot(&last_hidden) * projection_grad_scale;
        grads.proj_b = grad_out.sum_axis(Axis(0)) * projection_grad_scale;

        // Gradient arriving at each layer's hidden outputs from above.
        let mut d_hidden = Array2::<f64>::zeros((frames * b, h));
        d_hidden
            .slice_mut(s![(frames - 1) * b.., ..])
            .assign(&grad_out.dot(&self.proj_w));

        for (l, (layer, lt)) in self.layers.iter().zip(&tape.layers).enumerate().rev() {
            let mut d_pre = Array2::<f64>::zeros((frames * b, 4 * h));
            let mut dh_next = Array2::<f64>::zeros((b, h));
            let mut dc_next = Array2::<f64>::zeros((b, h));
            for t in (0..frames).rev() {
                for bi in 0..b {
                    let r = t * b + bi;
                    let gs = lt.gates.row(r);
                    let gs = gs.as_slice().expect("row contiguous");
                    let mut da = d_pre.row_mut(r);
                    let da = da.as_slice_mut().expect("row contiguous");
                    for k in 0..h {
                        let (i, f, g, o) = (gs[k], gs[h + k], gs[2 * h + k], gs[3 * h + k]);
                        let c = lt.cell[[r, k]];
                        let c_prev = if t > 0 { lt.cell[[r - b, k]] } else { 0.0 };
                        let tc = c.tanh();
                        let dh = d_hidden[[r, k]] + dh_next[[bi, k]];
                        let d_o = dh * tc;
                        let dc = dc_next[[bi, k]] + dh * o * (1.0 - tc * tc);
                        da[k] = dc * g * i * (1.0 - i);
                        da[h + k] = dc * c_prev * f * (1.0 - f);
                        da[2 * h + k] = dc * i * (1.0 - g * g);
                        da[3 * h + k] = d_o * o * (1.0 - o);
                        dc_next[[bi, k]] = dc * f;
                    }
                }
                if t > 0 {
                    dh_next = d_pre.slice(s![t * b..(t + 1) * b, ..]).dot(&layer.w_hh);
                }
            }

            let gl = &mut grads.layers[l];
            gl.w_ih = d_pre.t().dot(&lt.input);
            if frames > 1 {
                gl.w_hh = d_pre
                    .slice(s![b.., ..])
                    .t()
                    .dot(&lt.hidden.slice(s![..(frames - 1) * b, ..]));
            }
            gl.b_ih = d_pre.sum_axis(Axis(0));
            if cfg.dual_bias {
                gl.b_hh = gl.b_ih.clone();
            }
            if l > 0 {
                d_hidden = d_pre.dot(&layer.w_ih);
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SourceId;
    use ndarray::array;

    fn features(frames: usize, dim: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, 1.0).unwrap();
        let data = Array2::from_shape_fn((frames, dim), |_| dist.sample(&mut rng) as f32);
        FeatureMatrix::new(data, SourceId::default()).unwrap()
    }

    fn small() -> NetConfig {
        NetConfig {
            input_dim: 3,
            hidden_dim: 4,
            num_layers: 2,
            embedding_dim: 2,
            dual_bias: true,
        }
    }

    #[test]
    fn full_config_param_count() {
        let cfg = NetConfig::full();
        assert_eq!(cfg.param_count(), 12_134_656);
        let single = NetConfig { dual_bias: false, ..cfg };
        assert_eq!(single.param_count(), 12_134_656 - 3 * 4 * 768);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_params(small(), 7).unwrap();
        let b = init_params(small(), 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_params(small(), 8).unwrap());
        for layer in &a.layers {
            assert!(layer.b_ih.iter().all(|&v| v == 0.0));
            assert!(layer.b_hh.iter().all(|&v| v == 0.0));
        }
        assert!(a.proj_b.iter().all(|&v| v == 0.0));
        assert_eq!(a.param_count(), small().param_count());
    }

    #[test]
    fn zero_params_give_zero_output() {
        let p = NetworkParams::zeros(small()).unwrap();
        let (out, tape) = p.forward(&features(5, 3, 1)).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        assert_eq!(tape.frames(), 5);
        assert!(matches!(p.embed(&features(5, 3, 1)), Err(Error::DegenerateEmbedding)));
    }

    #[test]
    fn single_frame_is_defined() {
        let p = init_params(small(), 3).unwrap();
        let (out, _) = p.forward(&features(1, 3, 2)).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_wrong_input_dim() {
        let p = init_params(small(), 3).unwrap();
        assert!(matches!(p.forward(&features(4, 5, 2)), Err(Error::Shape(_))));
    }

    #[test]
    fn rejects_non_finite_input() {
        let p = init_params(small(), 3).unwrap();
        let mut f = features(4, 3, 2);
        f.data[[1, 1]] = f32::NAN;
        assert!(matches!(p.forward(&f), Err(Error::Numerical(_))));
    }

    #[test]
    fn embedding_three_four_five() {
        let e = Embedding::from_raw(array![3.0, 4.0, 0.0, 0.0].view()).unwrap();
        assert_eq!(e.vector(), &array![0.6, 0.8, 0.0, 0.0]);
    }

    #[test]
    fn projection_scale_invariance() {
        let p = init_params(small(), 11).unwrap();
        let f = features(6, 3, 4);
        let mut scaled = p.clone();
        scaled.proj_w *= 7.5;
        let a = p.embed(&f).unwrap();
        let b = scaled.embed(&f).unwrap();
        for (x, y) in a.vector().iter().zip(b.vector()) {
            assert!((x - y).abs() < 1e-12);
        }
        let n = b.vector().dot(b.vector()).sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let p = init_params(small(), 5).unwrap();
        let (_, tape) = p.forward(&features(5, 3, 9)).unwrap();
        let g = p.backward(&tape, Array2::zeros((1, 2)).view()).unwrap();
        assert_eq!(g.squared_norm(), 0.0);
    }

    #[test]
    fn backward_rejects_foreign_tape() {
        let p = init_params(small(), 5).unwrap();
        let other = init_params(NetConfig { hidden_dim: 5, ..small() }, 5).unwrap();
        let (_, tape) = other.forward(&features(5, 3, 9)).unwrap();
        assert!(matches!(
            p.backward(&tape, Array2::zeros((1, 2)).view()),
            Err(Error::Shape(_))
        ));
        let (_, tape) = p.forward(&features(5, 3, 9)).unwrap();
        assert!(matches!(
            p.backward(&tape, Array2::zeros((2, 2)).view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn batched_matches_sequential() {
        let p = init_params(small(), 21).unwrap();
        let seqs: Vec<FeatureMatrix> = (0..4).map(|i| features(7, 3, 100 + i)).collect();
        let refs: Vec<&FeatureMatrix> = seqs.iter().collect();
        let batched = p.infer_batch(&refs).unwrap();
        for (i, f) in seqs.iter().enumerate() {
            let (single, _) = p.forward(f).unwrap();
            for (a, b) in batched.row(i).iter().zip(single.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batched_gradient_is_sum_of_singles() {
        let p = init_params(small(), 2).unwrap();
        let seqs: Vec<FeatureMatrix> = (0..3).map(|i| features(4, 3, 50 + i)).collect();
        let refs: Vec<&FeatureMatrix> = seqs.iter().collect();
        let (_, tape) = p.forward_batch(&refs).unwrap();
        let upstream = Array2::from_shape_fn((3, 2), |(i, j)| (i as f64 + 1.0) * (j as f64 - 0.5));
        let g = p.backward(&tape, upstream.view()).unwrap();
        let mut sum = p.zeros_like();
        for (i, f) in seqs.iter().enumerate() {
            let (_, t) = p.forward(f).unwrap();
            let gi = p.backward(&t, upstream.slice(s![i..i + 1, ..])).unwrap();
            sum.add_assign(&gi).unwrap();
        }
        for (a, b) in g.tensors().iter().zip(sum.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalize_backward_is_orthogonal_to_output() {
        let raw = array![[3.0, 4.0], [1.0, -2.0]];
        let (unit, norms) = normalize_rows(&raw).unwrap();
        let g = normalize_rows_backward(&unit, &norms, &array![[1.0, 0.5], [-0.3, 2.0]]);
        for (gr, r) in g.outer_iter().zip(raw.outer_iter()) {
            assert!(gr.dot(&r).abs() < 1e-12);
        }
    }
}
