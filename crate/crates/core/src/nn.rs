//! Small dense building blocks shared by the stage-1 tagger and the stage-3
//! chart-type classifiers: LSTM cells with full backpropagation through
//! time, bidirectional wrappers, dense layers and an RMSprop optimizer.
//!
//! Every layer exposes its parameters through [`Parameters`], which walks
//! tensors in a fixed order. Gradients live in a structure of the same type
//! as the layer, so flattening both yields aligned vectors for the optimizer
//! and for finite-difference checks.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

/// Walks named parameter tensors in a fixed order.
pub trait Parameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit("", &mut |_, _, data| out.extend_from_slice(data));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, data| n += data.len());
        n
    }

    /// Overwrite all parameters from a flat vector produced by [`flatten`].
    ///
    /// [`flatten`]: Parameters::flatten
    fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_mut(&mut |data| {
            data.copy_from_slice(&flat[offset..offset + data.len()]);
            offset += data.len();
        });
    }
}

fn slice_of<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("parameters are stored in standard layout")
}

fn slice_of_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut()
        .expect("parameters are stored in standard layout")
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

/// Affine map applied row-wise: `y = x Wᵀ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn new<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            w: glorot(rng, output, input, input, output),
            b: Array1::zeros(output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Array2::zeros((output, input)),
            b: Array1::zeros(output),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_size(), self.output_size())
    }

    pub fn input_size(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_size(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Accumulates parameter gradients into `grad`, returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut Dense) -> Array2<f64> {
        grad.w += &dy.t().dot(&x);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w)
    }
}

impl Parameters for Dense {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        f(join(prefix, "w"), self.w.shape(), slice_of(&self.w));
        f(join(prefix, "b"), self.b.shape(), slice_of(&self.b));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(slice_of_mut(&mut self.w));
        f(slice_of_mut(&mut self.b));
    }
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

/// Standard LSTM cell. Gate blocks in `wx`, `wh` and `b` are ordered
/// input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub wx: Array2<f64>,
    pub wh: Array2<f64>,
    pub b: Array1<f64>,
}

/// Activations retained from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Array2<f64>,
    /// Post-activation gates, `T × 4H`.
    gates: Array2<f64>,
    c: Array2<f64>,
    h: Array2<f64>,
}

impl Lstm {
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut b = Array1::zeros(4 * hidden);
        b.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        Self {
            wx: glorot(rng, 4 * hidden, input, input, 4 * hidden),
            wh: glorot(rng, 4 * hidden, hidden, hidden, 4 * hidden),
            b,
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            wx: Array2::zeros((4 * hidden, input)),
            wh: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_size(), self.hidden_size())
    }

    pub fn input_size(&self) -> usize {
        self.wx.ncols()
    }

    pub fn hidden_size(&self) -> usize {
        self.wh.ncols()
    }

    /// Runs the cell over rows of `x` from first to last, starting from zero
    /// state. Returns hidden states (`T × H`).
    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, LstmCache) {
        let steps = x.nrows();
        let hs = self.hidden_size();
        let pre = x.dot(&self.wx.t()) + &self.b;
        let mut gates = Array2::zeros((steps, 4 * hs));
        let mut c = Array2::zeros((steps, hs));
        let mut h = Array2::zeros((steps, hs));
        let mut h_prev = Array1::zeros(hs);
        let mut c_prev = Array1::zeros(hs);
        for t in 0..steps {
            let mut z = &pre.row(t) + &self.wh.dot(&h_prev);
            z.slice_mut(s![..2 * hs]).mapv_inplace(sigmoid);
            z.slice_mut(s![2 * hs..3 * hs]).mapv_inplace(f64::tanh);
            z.slice_mut(s![3 * hs..]).mapv_inplace(sigmoid);
            let ig = z.slice(s![..hs]);
            let fg = z.slice(s![hs..2 * hs]);
            let gg = z.slice(s![2 * hs..3 * hs]);
            let og = z.slice(s![3 * hs..]);
            let c_t = &fg * &c_prev + &ig * &gg;
            let h_t = &og * &c_t.mapv(f64::tanh);
            gates.row_mut(t).assign(&z);
            c.row_mut(t).assign(&c_t);
            h.row_mut(t).assign(&h_t);
            h_prev = h_t;
            c_prev = c_t;
        }
        let cache = LstmCache {
            x: x.to_owned(),
            gates,
            c,
            h: h.clone(),
        };
        (h, cache)
    }

    /// Backpropagation through time. `dh` holds `dL/dh_t` from layers above
    /// for every step; returns `dL/dx`.
    pub fn backward(&self, cache: &LstmCache, dh: ArrayView2<f64>, grad: &mut Lstm) -> Array2<f64> {
        let steps = cache.x.nrows();
        let hs = self.hidden_size();
        let mut dz_all = Array2::zeros((steps, 4 * hs));
        let mut dh_next = Array1::<f64>::zeros(hs);
        let mut dc_next = Array1::<f64>::zeros(hs);
        let zero = Array1::<f64>::zeros(hs);
        for t in (0..steps).rev() {
            let gates = cache.gates.row(t);
            let ig = gates.slice(s![..hs]);
            let fg = gates.slice(s![hs..2 * hs]);
            let gg = gates.slice(s![2 * hs..3 * hs]);
            let og = gates.slice(s![3 * hs..]);
            let c_prev: ArrayView1<f64> = if t > 0 { cache.c.row(t - 1) } else { zero.view() };
            let tanh_c = cache.c.row(t).mapv(f64::tanh);

            let dh_t = &dh.row(t) + &dh_next;
            let d_o = &dh_t * &tanh_c;
            let dc = &dc_next + &(&dh_t * &og * &tanh_c.mapv(|v| 1.0 - v * v));
            let d_i = &dc * &gg;
            let d_g = &dc * &ig;
            let d_f = &dc * &c_prev;
            dc_next = &dc * &fg;

            let mut dz = dz_all.row_mut(t);
            for k in 0..hs {
                dz[k] = d_i[k] * ig[k] * (1.0 - ig[k]);
                dz[hs + k] = d_f[k] * fg[k] * (1.0 - fg[k]);
                dz[2 * hs + k] = d_g[k] * (1.0 - gg[k] * gg[k]);
                dz[3 * hs + k] = d_o[k] * og[k] * (1.0 - og[k]);
            }
            dh_next = self.wh.t().dot(&dz);
        }
        let mut h_prev = Array2::zeros((steps, hs));
        if steps > 1 {
            h_prev.slice_mut(s![1.., ..]).assign(&cache.h.slice(s![..steps - 1, ..]));
        }
        grad.wx += &dz_all.t().dot(&cache.x);
        grad.wh += &dz_all.t().dot(&h_prev);
        grad.b += &dz_all.sum_axis(Axis(0));
        dz_all.dot(&self.wx)
    }
}

impl Parameters for Lstm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        f(join(prefix, "wx"), self.wx.shape(), slice_of(&self.wx));
        f(join(prefix, "wh"), self.wh.shape(), slice_of(&self.wh));
        f(join(prefix, "b"), self.b.shape(), slice_of(&self.b));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(slice_of_mut(&mut self.wx));
        f(slice_of_mut(&mut self.wh));
        f(slice_of_mut(&mut self.b));
    }
}

/// Forward and backward LSTMs over the same sequence; outputs are
/// concatenated per step as `[forward; backward]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    forward: LstmCache,
    backward: LstmCache,
}

fn reversed(x: ArrayView2<f64>) -> Array2<f64> {
    x.slice(s![..;-1, ..]).to_owned()
}

impl BiLstm {
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            forward: Lstm::new(input, hidden, rng),
            backward: Lstm::new(input, hidden, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            forward: self.forward.zeros_like(),
            backward: self.backward.zeros_like(),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.forward.hidden_size()
    }

    pub fn output_size(&self) -> usize {
        2 * self.hidden_size()
    }

    pub fn run(&self, x: ArrayView2<f64>) -> (Array2<f64>, BiLstmCache) {
        let hs = self.hidden_size();
        let (hf, cf) = self.forward.forward(x);
        let (hb_rev, cb) = self.backward.forward(reversed(x).view());
        let mut out = Array2::zeros((x.nrows(), 2 * hs));
        out.slice_mut(s![.., ..hs]).assign(&hf);
        out.slice_mut(s![.., hs..]).assign(&reversed(hb_rev.view()));
        (
            out,
            BiLstmCache {
                forward: cf,
                backward: cb,
            },
        )
    }

    pub fn backprop(&self, cache: &BiLstmCache, dout: ArrayView2<f64>, grad: &mut BiLstm) -> Array2<f64> {
        let hs = self.hidden_size();
        let dxf = self
            .forward
            .backward(&cache.forward, dout.slice(s![.., ..hs]), &mut grad.forward);
        let db_rev = reversed(dout.slice(s![.., hs..]));
        let dxb_rev = self
            .backward
            .backward(&cache.backward, db_rev.view(), &mut grad.backward);
        dxf + reversed(dxb_rev.view())
    }
}

impl Parameters for BiLstm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        self.forward.visit(&join(prefix, "fwd"), f);
        self.backward.visit(&join(prefix, "bwd"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.forward.visit_mut(f);
        self.backward.visit_mut(f);
    }
}

// ---------------------------------------------------------------------------
// Input standardization
// ---------------------------------------------------------------------------

/// Per-feature affine rescaling of embedded inputs, fitted once on training
/// data and frozen. Hashed n-gram vectors are tiny in magnitude; this puts
/// them on unit scale before the recurrent layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: Array1::zeros(dim),
            scale: Array1::ones(dim),
        }
    }

    pub fn fit<'a, I: IntoIterator<Item = &'a Array2<f64>>>(dim: usize, rows: I) -> Self {
        let mut sum = Array1::<f64>::zeros(dim);
        let mut sum_sq = Array1::<f64>::zeros(dim);
        let mut n = 0usize;
        for m in rows {
            for row in m.rows() {
                sum += &row;
                sum_sq += &row.mapv(|v| v * v);
                n += 1;
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - &mean.mapv(|m| m * m);
        let scale = var.mapv(|v| if v > 1e-24 { 1.0 / v.sqrt() } else { 1.0 });
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.ncols(),
            });
        }
        Ok((&x - &self.mean) * &self.scale)
    }

}

impl Parameters for Standardizer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        f(join(prefix, "mean"), self.mean.shape(), slice_of(&self.mean));
        f(join(prefix, "scale"), self.scale.shape(), slice_of(&self.scale));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(slice_of_mut(&mut self.mean));
        f(slice_of_mut(&mut self.scale));
    }
}

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

pub const RMSPROP_DECAY: f64 = 0.9;
pub const RMSPROP_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    mean_square: Vec<f64>,
}

impl RmsProp {
    pub fn new(learning_rate: f64, param_count: usize) -> Self {
        Self {
            learning_rate,
            decay: RMSPROP_DECAY,
            epsilon: RMSPROP_EPSILON,
            mean_square: vec![0.0; param_count],
        }
    }

    pub fn step<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &[f64]) {
        assert_eq!(grads.len(), self.mean_square.len(), "gradient length");
        for (ms, g) in self.mean_square.iter_mut().zip(grads) {
            *ms = self.decay * *ms + (1.0 - self.decay) * g * g;
        }
        let (lr, eps) = (self.learning_rate, self.epsilon);
        let mut offset = 0;
        let ms = &self.mean_square;
        params.visit_mut(&mut |data| {
            for (j, p) in data.iter_mut().enumerate() {
                let k = offset + j;
                *p -= lr * grads[k] / (ms[k].sqrt() + eps);
            }
            offset += data.len();
        });
    }
}

/// Rescale `grads` in place so its L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let k = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= k);
    }
}
