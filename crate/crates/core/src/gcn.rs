//! Graph convolutional encoder with hand-written backpropagation.
//!
//! Layer `l` computes `X⁽ˡ⁺¹⁾ = selu(Ã · X⁽ˡ⁾ · W⁽ˡ⁾)` with the symmetric
//! normalization `Ã = D^-1/2 · A · D^-1/2` (no self-loops; isolated nodes get
//! an all-zero row). The last layer's output goes through
//!
//! 1. division by its row sum,
//! 2. `tanh`,
//! 3. squaring each entry and dividing by the row's L2 norm,
//! 4. renormalization to unit L2 norm,
//!
//! which leaves every row non-negative with unit norm (or all zero), so that
//! inner products of rows are cosine similarities in `[0, 1]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AttributeMatrix, Graph};
use crate::loss::LossEval;
use crate::par;
use crate::seed;

pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;

/// Added (with the sign of the row sum) to row sums before dividing.
pub const ROW_SUM_EPS: f64 = 1e-12;
/// Added to the L2 norm in the squaring step.
pub const NORM_EPS: f64 = 1e-12;

pub const DEFAULT_HIDDEN: [usize; 3] = [256, 128, 64];

fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
    }
}

fn selu_grad(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

/// `D^-1/2 · A · D^-1/2` in CSR form.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn new(g: &Graph) -> Self {
        let inv_sqrt: Vec<f64> = g
            .degrees()
            .iter()
            .map(|&d| if d == 0 { 0.0 } else { 1.0 / (d as f64).sqrt() })
            .collect();
        let mut offsets = Vec::with_capacity(g.n() + 1);
        let mut targets = Vec::with_capacity(2 * g.m());
        let mut weights = Vec::with_capacity(2 * g.m());
        offsets.push(0);
        for u in 0..g.n() {
            for &v in g.neighbors(u) {
                targets.push(v);
                weights.push(inv_sqrt[u] * inv_sqrt[v]);
            }
            offsets.push(targets.len());
        }
        NormalizedAdjacency { offsets, targets, weights }
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Nonzero entries of row `u` as `(column, weight)`.
    pub fn row(&self, u: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[u]..self.offsets[u + 1];
        self.targets[r.clone()].iter().copied().zip(self.weights[r].iter().copied())
    }

    /// `Ã · x`.
    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.n(), "adjacency/operand size mismatch");
        par::row_blocks(self.n(), x.ncols(), |lo, hi| {
            let mut block = Array2::zeros((hi - lo, x.ncols()));
            for u in lo..hi {
                let mut out = block.row_mut(u - lo);
                for (v, w) in self.row(u) {
                    out.scaled_add(w, &x.row(v));
                }
            }
            block
        })
    }

    pub fn dense(&self) -> Array2<f64> {
        let n = self.n();
        let mut a = Array2::zeros((n, n));
        for u in 0..n {
            for (v, w) in self.row(u) {
                a[[u, v]] = w;
            }
        }
        a
    }
}

/// Graph operator plus the once-computed first propagation `Ã · X`.
#[derive(Debug, Clone)]
pub struct GcnInput {
    adj: NormalizedAdjacency,
    ax: Array2<f64>,
}

impl GcnInput {
    pub fn new(g: &Graph, x: &AttributeMatrix) -> Result<Self> {
        if x.rows() != g.n() {
            return Err(Error::Shape(format!(
                "attribute matrix has {} rows, graph has {} nodes",
                x.rows(),
                g.n()
            )));
        }
        if g.n() == 0 {
            return Err(Error::Precondition("graph has no nodes".into()));
        }
        let adj = NormalizedAdjacency::new(g);
        let ax = adj.apply(x.values().view());
        Ok(GcnInput { adj, ax })
    }

    pub fn n(&self) -> usize {
        self.ax.nrows()
    }

    pub fn features(&self) -> usize {
        self.ax.ncols()
    }

    pub fn adjacency(&self) -> &NormalizedAdjacency {
        &self.adj
    }
}

/// Intermediates of one forward pass, consumed by [`GcnModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Propagated inputs `Ã · X⁽ˡ⁾` of each layer (the first is not stored).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Array2<f64>>,
    row_den: Array1<f64>,
    /// Last layer output divided by its row sums.
    normed: Array2<f64>,
    /// `tanh` of `normed`.
    squashed: Array2<f64>,
    /// Final rows before renormalization, and their norms.
    sq: Array2<f64>,
    sq_norm: Array1<f64>,
    embedding: Array2<f64>,
}

impl ForwardCache {
    pub fn embedding(&self) -> &Array2<f64> {
        &self.embedding
    }

    /// Rows after the squaring step, before renormalization.
    pub fn squared_rows(&self) -> &Array2<f64> {
        &self.sq
    }

    /// Output of the last convolution, before the embedding transform.
    pub fn last_layer(&self) -> Array2<f64> {
        self.pre.last().expect("at least one layer").mapv(selu)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    weights: Vec<Array2<f64>>,
    seed: u64,
}

impl GcnModel {
    /// Glorot-uniform initialization: `W⁽ˡ⁾ ~ U(±sqrt(6 / (fan_in + fan_out)))`.
    pub fn new(features: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if hidden.is_empty() || features == 0 || hidden.contains(&0) {
            return Err(Error::Config(format!(
                "invalid layer sizes: {features} inputs, hidden {hidden:?}"
            )));
        }
        let mut rng = seed::rng(seed);
        let mut weights = Vec::with_capacity(hidden.len());
        let mut fan_in = features;
        for &fan_out in hidden {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| {
                rng.random_range(-bound..bound)
            }));
            fan_in = fan_out;
        }
        Ok(GcnModel { weights, seed })
    }

    pub fn from_weights(weights: Vec<Array2<f64>>, seed: u64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        for pair in weights.windows(2) {
            if pair[0].ncols() != pair[1].nrows() {
                return Err(Error::Shape(format!(
                    "layer output {} does not feed layer input {}",
                    pair[0].ncols(),
                    pair[1].nrows()
                )));
            }
        }
        Ok(GcnModel { weights, seed })
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().expect("non-empty").ncols()
    }

    pub fn forward(&self, input: &GcnInput) -> Result<ForwardCache> {
        if input.features() != self.input_dim() {
            return Err(Error::Shape(format!(
                "model expects {} features, input has {}",
                self.input_dim(),
                input.features()
            )));
        }
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut act = Array2::zeros((0, 0));
        for (l, w) in self.weights.iter().enumerate() {
            let z = if l == 0 {
                par::matmul(input.ax.view(), w.view())
            } else {
                let m = input.adj.apply(act.view());
                let z = par::matmul(m.view(), w.view());
                inputs.push(m);
                z
            };
            act = z.mapv(selu);
            pre.push(z);
        }

        let row_den = act
            .sum_axis(Axis(1))
            .mapv(|r| r + ROW_SUM_EPS.copysign(r));
        let mut normed = act;
        for (mut row, &d) in normed.rows_mut().into_iter().zip(row_den.iter()) {
            row.mapv_inplace(|v| v / d);
        }
        let squashed = normed.mapv(f64::tanh);

        let mut sq = squashed.mapv(|t| t * t);
        for mut row in sq.rows_mut() {
            let norm = row.iter().sum::<f64>().sqrt() + NORM_EPS;
            row.mapv_inplace(|v| v / norm);
        }
        let sq_norm = sq.map_axis(Axis(1), |r| r.dot(&r).sqrt());
        let mut embedding = sq.clone();
        for (mut row, &nu) in embedding.rows_mut().into_iter().zip(sq_norm.iter()) {
            if nu > 0.0 {
                row.mapv_inplace(|v| v / nu);
            } else {
                row.fill(0.0);
            }
        }
        Ok(ForwardCache { inputs, pre, row_den, normed, squashed, sq, sq_norm, embedding })
    }

    /// Gradients of the loss with respect to every weight matrix, given the
    /// loss gradient `d_emb` with respect to the embedding.
    pub fn backward(
        &self,
        input: &GcnInput,
        cache: &ForwardCache,
        d_emb: ArrayView2<'_, f64>,
    ) -> Result<Vec<Array2<f64>>> {
        if d_emb.dim() != cache.embedding.dim() || cache.pre.len() != self.weights.len() {
            return Err(Error::Shape(format!(
                "gradient of shape {:?} for embedding of shape {:?}",
                d_emb.dim(),
                cache.embedding.dim()
            )));
        }
        // Renormalization y = u / |u|: du = (dy − y (y·dy)) / |u|. The scalar
        // divisor of the squaring step is absorbed by the renormalization, so
        // with q = t² the map is y = q / |q| and only du needs its norm.
        let mut d = Array2::zeros(d_emb.raw_dim());
        for i in 0..d.nrows() {
            let nu = cache.sq_norm[i];
            if nu == 0.0 {
                continue;
            }
            let y = cache.embedding.row(i);
            let dy = d_emb.row(i);
            let proj = y.dot(&dy);
            let t = cache.squashed.row(i);
            // |q| = |u|·(sqrt(Σt²) + ε)
            let q_norm = nu * (t.iter().map(|v| v * v).sum::<f64>().sqrt() + NORM_EPS);
            let mut out = d.row_mut(i);
            for j in 0..out.len() {
                let dq = (dy[j] - y[j] * proj) / q_norm;
                // q = t², t = tanh(b)
                out[j] = dq * 2.0 * t[j] * (1.0 - t[j] * t[j]);
            }
        }
        // b = a / den with den = Σa (+ const): da = (db − Σ_k db_k b_k) / den
        for (i, mut row) in d.rows_mut().into_iter().enumerate() {
            let den = cache.row_den[i];
            let proj = row.dot(&cache.normed.row(i));
            row.mapv_inplace(|g| (g - proj) / den);
        }

        let mut grads = vec![Array2::zeros((0, 0)); self.weights.len()];
        for l in (0..self.weights.len()).rev() {
            Zip::from(&mut d).and(&cache.pre[l]).for_each(|g, &z| *g *= selu_grad(z));
            let m = if l == 0 { input.ax.view() } else { cache.inputs[l - 1].view() };
            grads[l] = par::matmul_tn(m, d.view());
            if l > 0 {
                let dm = par::matmul(d.view(), self.weights[l].t());
                d = input.adj.apply(dm.view());
            }
        }
        Ok(grads)
    }

    /// Writes a binary checkpoint; see the README for the layout.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(&(self.weights.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.input_dim() as u64).to_le_bytes());
        for wm in &self.weights {
            buf.extend_from_slice(&(wm.ncols() as u64).to_le_bytes());
        }
        for wm in &self.weights {
            for v in wm.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::Parse { path: path.to_path_buf(), line: 0, msg: msg.to_string() };
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(8).ok_or_else(|| bad("truncated header"))? != CHECKPOINT_MAGIC {
            return Err(bad("not a model checkpoint"));
        }
        let version = cur.u32().ok_or_else(|| bad("truncated header"))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let seed = cur.u64().ok_or_else(|| bad("truncated header"))?;
        let layers = cur.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let mut dims = Vec::with_capacity(layers + 1);
        for _ in 0..=layers {
            dims.push(cur.u64().ok_or_else(|| bad("truncated header"))? as usize);
        }
        let mut weights = Vec::with_capacity(layers);
        for l in 0..layers {
            let (r, c) = (dims[l], dims[l + 1]);
            let count = r.checked_mul(c).ok_or_else(|| bad("layer dims overflow"))?;
            let mut values = Vec::with_capacity(count.min(bytes.len() / 8));
            for _ in 0..count {
                values.push(cur.f64().ok_or_else(|| bad("truncated weights"))?);
            }
            weights.push(Array2::from_shape_vec((r, c), values).expect("sized above"));
        }
        if cur.pos != bytes.len() {
            return Err(bad("trailing bytes after weights"));
        }
        GcnModel::from_weights(weights, seed)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ATTRGCN\0";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize) -> Option<&'a [u8]> {
        let out = self.bytes.get(self.pos..self.pos.checked_add(k)?)?;
        self.pos += k;
        Some(out)
    }
    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

/// Adam moments for each weight matrix.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl AdamState {
    pub fn new(model: &GcnModel, lr: f64) -> Self {
        let zeros: Vec<_> = model.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, model: &mut GcnModel, grads: &[Array2<f64>]) {
        assert_eq!(grads.len(), model.weights.len(), "one gradient per layer");
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((w, g), m), v) in model
            .weights
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            Zip::from(w).and(g).and(m).and(v).for_each(|w, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 300, lr: 0.001 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        Ok(())
    }
}

fn snapshot(model: &GcnModel, emb: &Array2<f64>) -> String {
    let norms: Vec<String> = model
        .weights
        .iter()
        .map(|w| format!("{:.4e}", w.iter().map(|v| v * v).sum::<f64>().sqrt()))
        .collect();
    let bad_rows = emb
        .rows()
        .into_iter()
        .filter(|r| r.iter().any(|v| !v.is_finite()))
        .count();
    format!("weight norms [{}], {bad_rows} non-finite embedding rows", norms.join(", "))
}

/// Full-batch Adam training. `loss` maps an embedding to its loss and
/// gradient. Returns the loss at the start of every epoch.
pub fn train<F>(model: &mut GcnModel, input: &GcnInput, cfg: &TrainConfig, mut loss: F) -> Result<Vec<f64>>
where
    F: FnMut(ArrayView2<'_, f64>) -> Result<LossEval>,
{
    cfg.validate()?;
    let mut adam = AdamState::new(model, cfg.lr);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let cache = model.forward(input)?;
        let eval = loss(cache.embedding().view())?;
        if !eval.value.is_finite() || eval.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                epoch,
                detail: format!("loss {}; {}", eval.value, snapshot(model, cache.embedding())),
            });
        }
        trace.push(eval.value);
        let grads = model.backward(input, &cache, eval.grad.view())?;
        adam.update(model, &grads);
        if epoch % 50 == 0 {
            log::debug!("epoch {epoch}: loss {:.6}", eval.value);
        }
    }
    Ok(trace)
}

/// Embedding of `input` under `model`.
pub fn embed(model: &GcnModel, input: &GcnInput) -> Result<Array2<f64>> {
    Ok(model.forward(input)?.embedding)
}
