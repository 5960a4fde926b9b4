//! Parameter vectors and the three fixed model families.
//!
//! Every model is a stack of dense layers stored in one flat [`ParamVector`].
//! Layer `l` occupies `out * in` weights in row-major `(out, in)` order followed
//! by `out` biases (when the spec has biases). Hidden layers use ReLU. The
//! logistic model has a single output logit and reports probabilities as
//! `[1 - p, p]`, so every model exposes a `C`-column row-stochastic output.
//!
//! Losses are sums over examples, never means.

use std::ops::{Deref, DerefMut};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

const SOFT_ROW_TOL: f64 = 1e-9;

/// Flat model parameter vector.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

/// Diagonal curvature (Gauss-Newton or precision) with nonnegative entries.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiagCurvature(pub Vec<f64>);

impl DiagCurvature {
    pub fn zeros(len: usize) -> Self {
        DiagCurvature(vec![0.0; len])
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl Deref for DiagCurvature {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for DiagCurvature {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for DiagCurvature {
    fn from(v: Vec<f64>) -> Self {
        DiagCurvature(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LogisticBinary,
    SoftmaxLinear,
    Mlp,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub class_count: usize,
    #[serde(default)]
    pub hidden_sizes: Vec<usize>,
    #[serde(default = "default_true")]
    pub bias: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layer {
    input: usize,
    output: usize,
    offset: usize,
    bias: bool,
}

impl Layer {
    fn weight_len(&self) -> usize {
        self.input * self.output
    }

    fn len(&self) -> usize {
        self.weight_len() + if self.bias { self.output } else { 0 }
    }

    fn weights<'a>(&self, params: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape(
            (self.output, self.input),
            &params[self.offset..self.offset + self.weight_len()],
        )
        .expect("layer slice matches its shape")
    }

    fn biases<'a>(&self, params: &'a [f64]) -> Option<&'a [f64]> {
        self.bias.then(|| {
            let start = self.offset + self.weight_len();
            &params[start..start + self.output]
        })
    }
}

impl ModelSpec {
    pub fn logistic(input_dim: usize, bias: bool) -> Self {
        ModelSpec {
            kind: ModelKind::LogisticBinary,
            input_dim,
            class_count: 2,
            hidden_sizes: Vec::new(),
            bias,
        }
    }

    pub fn softmax(input_dim: usize, class_count: usize, bias: bool) -> Self {
        ModelSpec {
            kind: ModelKind::SoftmaxLinear,
            input_dim,
            class_count,
            hidden_sizes: Vec::new(),
            bias,
        }
    }

    pub fn mlp(input_dim: usize, hidden_sizes: Vec<usize>, class_count: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp,
            input_dim,
            class_count,
            hidden_sizes,
            bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("model input_dim must be positive"));
        }
        if self.class_count < 2 {
            return Err(Error::config("model class_count must be at least 2"));
        }
        match self.kind {
            ModelKind::LogisticBinary if self.class_count != 2 => {
                Err(Error::config("logistic_binary requires class_count = 2"))
            }
            ModelKind::Mlp if self.hidden_sizes.iter().any(|&h| h == 0) => {
                Err(Error::config("mlp hidden sizes must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// Width of the final layer: one logit for logistic, `C` otherwise.
    fn output_width(&self) -> usize {
        match self.kind {
            ModelKind::LogisticBinary => 1,
            _ => self.class_count,
        }
    }

    fn layers(&self) -> Vec<Layer> {
        let mut widths = vec![self.input_dim];
        if self.kind == ModelKind::Mlp {
            widths.extend_from_slice(&self.hidden_sizes);
        }
        widths.push(self.output_width());
        let mut offset = 0;
        widths
            .windows(2)
            .map(|w| {
                let layer = Layer {
                    input: w[0],
                    output: w[1],
                    offset,
                    bias: self.bias,
                };
                offset += layer.len();
                layer
            })
            .collect()
    }

    /// Number of parameters `P`.
    pub fn param_count(&self) -> usize {
        self.layers().iter().map(Layer::len).sum()
    }

    pub fn is_glm(&self) -> bool {
        self.kind != ModelKind::Mlp
    }

    /// Seeded initial parameters: zeros for the linear models, uniform
    /// `(-1/sqrt(fan_in), 1/sqrt(fan_in))` for MLP layers.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut params = vec![0.0; self.param_count()];
        if self.kind == ModelKind::Mlp {
            for layer in self.layers() {
                let bound = 1.0 / (layer.input as f64).sqrt();
                for p in &mut params[layer.offset..layer.offset + layer.len()] {
                    *p = rng.random_range(-bound..bound);
                }
            }
        }
        ParamVector(params)
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        let p = self.param_count();
        if params.len() != p {
            return Err(Error::shape(format!(
                "parameter vector has length {}, model expects {p}",
                params.len()
            )));
        }
        Ok(())
    }

    fn check_inputs(&self, inputs: &ArrayView2<f64>) -> Result<()> {
        if inputs.ncols() != self.input_dim {
            return Err(Error::shape(format!(
                "inputs have {} columns, model expects {}",
                inputs.ncols(),
                self.input_dim
            )));
        }
        Ok(())
    }
}

/// Training targets for a [`Batch`].
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Hard(Vec<usize>),
    /// `n x C` row-stochastic matrix.
    Soft(Array2<f64>),
}

impl Targets {
    fn len(&self) -> usize {
        match self {
            Targets::Hard(l) => l.len(),
            Targets::Soft(m) => m.nrows(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub targets: Targets,
    /// Per-example nonnegative multipliers; `None` means all ones.
    pub weights: Option<Vec<f64>>,
}

impl Batch {
    pub fn new(
        inputs: Array2<f64>,
        targets: Targets,
        weights: Option<Vec<f64>>,
        class_count: usize,
    ) -> Result<Self> {
        let n = inputs.nrows();
        if targets.len() != n {
            return Err(Error::InvalidBatch(format!(
                "{} inputs but {} targets",
                n,
                targets.len()
            )));
        }
        match &targets {
            Targets::Hard(labels) => {
                if let Some(bad) = labels.iter().position(|&l| l >= class_count) {
                    return Err(Error::InvalidBatch(format!(
                        "label {} at example {bad} outside [0, {class_count})",
                        labels[bad]
                    )));
                }
            }
            Targets::Soft(m) => {
                if m.ncols() != class_count {
                    return Err(Error::InvalidBatch(format!(
                        "soft labels have {} columns, expected {class_count}",
                        m.ncols()
                    )));
                }
                for (i, row) in m.outer_iter().enumerate() {
                    let sum: f64 = row.sum();
                    if (sum - 1.0).abs() > SOFT_ROW_TOL || row.iter().any(|&v| v < 0.0) {
                        return Err(Error::InvalidBatch(format!(
                            "soft label row {i} is not a probability vector (sum {sum})"
                        )));
                    }
                }
            }
        }
        if let Some(w) = &weights {
            if w.len() != n {
                return Err(Error::InvalidBatch(format!(
                    "{} weights for {n} examples",
                    w.len()
                )));
            }
            if let Some(bad) = w.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidBatch(format!(
                    "weight {} at example {bad} must be finite and nonnegative",
                    w[bad]
                )));
            }
        }
        Ok(Batch {
            inputs,
            targets,
            weights,
        })
    }

    pub fn hard(inputs: Array2<f64>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        Batch::new(inputs, Targets::Hard(labels), None, class_count)
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    fn target(&self, i: usize, c: usize) -> f64 {
        match &self.targets {
            Targets::Hard(l) => {
                if l[i] == c {
                    1.0
                } else {
                    0.0
                }
            }
            Targets::Soft(m) => m[[i, c]],
        }
    }

    /// Copy of the examples at `rows`, in the given order.
    pub fn select(&self, rows: &[usize]) -> Batch {
        let inputs = self.inputs.select(Axis(0), rows);
        let targets = match &self.targets {
            Targets::Hard(l) => Targets::Hard(rows.iter().map(|&r| l[r]).collect()),
            Targets::Soft(m) => Targets::Soft(m.select(Axis(0), rows)),
        };
        let weights = self
            .weights
            .as_ref()
            .map(|w| rows.iter().map(|&r| w[r]).collect());
        Batch {
            inputs,
            targets,
            weights,
        }
    }
}

struct Forward {
    /// Activations entering each layer; `acts[0]` is the input.
    acts: Vec<Array2<f64>>,
    /// Final-layer logits.
    logits: Array2<f64>,
}

fn forward(spec: &ModelSpec, layers: &[Layer], params: &[f64], inputs: ArrayView2<f64>) -> Forward {
    let mut acts = Vec::with_capacity(layers.len());
    let mut current = inputs.to_owned();
    for (l, layer) in layers.iter().enumerate() {
        let mut z = current.dot(&layer.weights(params).t());
        if let Some(b) = layer.biases(params) {
            let b = ndarray::ArrayView1::from(b);
            z += &b;
        }
        acts.push(current);
        if l + 1 < layers.len() {
            z.mapv_inplace(|v| v.max(0.0));
            current = z;
        } else {
            debug_assert_eq!(z.ncols(), spec.output_width());
            return Forward { acts, logits: z };
        }
    }
    unreachable!("models have at least one layer")
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn probabilities(spec: &ModelSpec, logits: &Array2<f64>) -> Array2<f64> {
    let n = logits.nrows();
    let c = spec.class_count;
    let mut out = Array2::zeros((n, c));
    match spec.kind {
        ModelKind::LogisticBinary => {
            for i in 0..n {
                let p = sigmoid(logits[[i, 0]]);
                out[[i, 0]] = 1.0 - p;
                out[[i, 1]] = p;
            }
        }
        _ => {
            for (mut row, z) in out.outer_iter_mut().zip(logits.outer_iter()) {
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for (o, &zi) in row.iter_mut().zip(z.iter()) {
                    *o = (zi - max).exp();
                    total += *o;
                }
                row.mapv_inplace(|v| v / total);
            }
        }
    }
    out
}

/// Class probabilities, one row per input.
pub fn predict_proba(
    spec: &ModelSpec,
    params: &[f64],
    inputs: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    spec.check_params(params)?;
    spec.check_inputs(&inputs)?;
    let layers = spec.layers();
    let fwd = forward(spec, &layers, params, inputs);
    Ok(probabilities(spec, &fwd.logits))
}

/// Predictions kept at full precision for use as later cross-entropy targets.
pub fn soft_label(spec: &ModelSpec, params: &[f64], inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
    predict_proba(spec, params, inputs)
}

/// Backpropagates output-layer deltas (`n x out`) and adds
/// `transform(per-example gradient)` summed over examples into `grad`.
/// With `square = true` the per-example gradients are squared before summing.
fn backprop(
    layers: &[Layer],
    params: &[f64],
    fwd: &Forward,
    mut delta: Array2<f64>,
    square: bool,
    grad: &mut [f64],
) {
    for l in (0..layers.len()).rev() {
        let layer = layers[l];
        let act = &fwd.acts[l];
        let (gw, gb) = if square {
            let d2 = delta.mapv(|v| v * v);
            let a2 = act.mapv(|v| v * v);
            (d2.t().dot(&a2), d2.sum_axis(Axis(0)))
        } else {
            (delta.t().dot(act), delta.sum_axis(Axis(0)))
        };
        let w_end = layer.offset + layer.weight_len();
        for (g, v) in grad[layer.offset..w_end].iter_mut().zip(gw.iter()) {
            *g += v;
        }
        if layer.bias {
            for (g, v) in grad[w_end..w_end + layer.output].iter_mut().zip(gb.iter()) {
                *g += v;
            }
        }
        if l > 0 {
            let mut prev = delta.dot(&layer.weights(params));
            // ReLU derivative: acts[l] is the post-activation of layer l-1.
            prev.zip_mut_with(act, |d, &a| {
                if a <= 0.0 {
                    *d = 0.0
                }
            });
            delta = prev;
        }
    }
}

/// Summed (weighted) cross-entropy and its exact gradient.
pub fn nll_and_grad(spec: &ModelSpec, params: &[f64], batch: &Batch) -> Result<(f64, ParamVector)> {
    spec.check_params(params)?;
    spec.check_inputs(&batch.inputs.view())?;
    if batch.is_empty() {
        return Err(Error::InvalidBatch("empty batch".into()));
    }
    let layers = spec.layers();
    let fwd = forward(spec, &layers, params, batch.inputs.view());
    let probs = probabilities(spec, &fwd.logits);
    let n = batch.len();
    let c = spec.class_count;

    let mut loss = 0.0;
    let mut delta = Array2::zeros((n, spec.output_width()));
    for i in 0..n {
        let w = batch.weight(i);
        let mut ce = 0.0;
        for k in 0..c {
            let y = batch.target(i, k);
            if y != 0.0 {
                ce -= y * probs[[i, k]].clamp(PROB_FLOOR, 1.0 - PROB_FLOOR).ln();
            }
        }
        let contrib = w * ce;
        if !contrib.is_finite() {
            return Err(Error::NonFinite {
                index: i,
                what: "loss",
            });
        }
        loss += contrib;
        match spec.kind {
            ModelKind::LogisticBinary => {
                delta[[i, 0]] = w * (probs[[i, 1]] - batch.target(i, 1));
            }
            _ => {
                for k in 0..c {
                    delta[[i, k]] = w * (probs[[i, k]] - batch.target(i, k));
                }
            }
        }
    }
    let mut grad = vec![0.0; params.len()];
    backprop(&layers, params, &fwd, delta, false, &mut grad);
    if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            index: bad,
            what: "gradient component",
        });
    }
    Ok((loss, ParamVector(grad)))
}

/// Diagonal of the Generalised Gauss-Newton matrix `sum_i J_i^T L_i J_i`.
///
/// The output Hessian `L_i = diag(p) - p p^T` is factored as
/// `sum_c u_c u_c^T` with `u_c = sqrt(p_c) (e_c - p)`, and each factor is
/// pushed through one backward pass, so the result is the exact GGN diagonal
/// for every model kind. Entries are nonnegative by construction.
pub fn diag_ggn(spec: &ModelSpec, params: &[f64], inputs: ArrayView2<f64>) -> Result<DiagCurvature> {
    spec.check_params(params)?;
    spec.check_inputs(&inputs)?;
    let mut diag = vec![0.0; params.len()];
    let n = inputs.nrows();
    if n == 0 {
        return Ok(DiagCurvature(diag));
    }
    let layers = spec.layers();
    let fwd = forward(spec, &layers, params, inputs);
    let probs = probabilities(spec, &fwd.logits);
    match spec.kind {
        ModelKind::LogisticBinary => {
            let delta = Array2::from_shape_fn((n, 1), |(i, _)| {
                let p = probs[[i, 1]];
                (p * (1.0 - p)).sqrt()
            });
            backprop(&layers, params, &fwd, delta, true, &mut diag);
        }
        _ => {
            let c = spec.class_count;
            for factor in 0..c {
                let delta = Array2::from_shape_fn((n, c), |(i, k)| {
                    let pf = probs[[i, factor]];
                    let e = if k == factor { 1.0 } else { 0.0 };
                    pf.sqrt() * (e - probs[[i, k]])
                });
                backprop(&layers, params, &fwd, delta, true, &mut diag);
            }
        }
    }
    Ok(DiagCurvature(diag))
}

/// Full Hessian of the summed cross-entropy for the linear models.
///
/// Independent of the targets. Returns `None` for MLPs.
pub fn glm_hessian(
    spec: &ModelSpec,
    params: &[f64],
    inputs: ArrayView2<f64>,
    weights: Option<&[f64]>,
) -> Result<Option<Array2<f64>>> {
    if !spec.is_glm() {
        return Ok(None);
    }
    spec.check_params(params)?;
    spec.check_inputs(&inputs)?;
    let p = params.len();
    let d = spec.input_dim;
    let mut h = Array2::zeros((p, p));
    let probs = predict_proba(spec, params, inputs)?;
    // Feature index `d` stands for the bias.
    let width = d + usize::from(spec.bias);
    let feature = |x: &ndarray::ArrayView1<f64>, j: usize| if j < d { x[j] } else { 1.0 };
    let index = |out: usize, j: usize, outputs: usize| {
        if j < d {
            out * d + j
        } else {
            outputs * d + out
        }
    };
    for (i, x) in inputs.outer_iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        match spec.kind {
            ModelKind::LogisticBinary => {
                let q = probs[[i, 1]];
                let lam = w * q * (1.0 - q);
                for a in 0..width {
                    let fa = feature(&x, a) * lam;
                    for b in 0..width {
                        h[[index(0, a, 1), index(0, b, 1)]] += fa * feature(&x, b);
                    }
                }
            }
            _ => {
                let c = spec.class_count;
                for k1 in 0..c {
                    for k2 in 0..c {
                        let lam = w
                            * (if k1 == k2 { probs[[i, k1]] } else { 0.0 }
                                - probs[[i, k1]] * probs[[i, k2]]);
                        if lam == 0.0 {
                            continue;
                        }
                        for a in 0..width {
                            let fa = feature(&x, a) * lam;
                            for b in 0..width {
                                h[[index(k1, a, c), index(k2, b, c)]] += fa * feature(&x, b);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Some(h))
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = probs
        .outer_iter()
        .zip(labels)
        .filter(|(row, &label)| argmax(row.as_slice().expect("contiguous rows")) == label)
        .count();
    correct as f64 / labels.len() as f64
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean negative log-likelihood of hard labels under `probs`.
pub fn mean_nll(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -probs[[i, l]].clamp(PROB_FLOOR, 1.0 - PROB_FLOOR).ln())
        .sum();
    total / labels.len() as f64
}

/// Convenience: column vector of per-row sums.
pub fn row_sums(m: &Array2<f64>) -> Array1<f64> {
    m.sum_axis(Axis(1))
}
