//! Instance classifier: affine -> ReLU -> affine -> softmax, or plain
//! softmax regression when the hidden width is zero. Gradients of the
//! weighted proportion loss are computed analytically.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{LlpError, Result};
use crate::losses::LOG_EPSILON;
use crate::proportion::ProportionVector;

/// Layer sizes of a classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub input: usize,
    /// Zero means softmax regression (no hidden layer).
    pub hidden: usize,
    pub classes: usize,
}

impl Shape {
    pub fn new(input: usize, hidden: usize, classes: usize) -> Result<Self> {
        if input == 0 {
            return Err(LlpError::invalid("dim", "must be positive"));
        }
        if classes < 2 {
            return Err(LlpError::invalid("classes", "need at least 2 classes"));
        }
        Ok(Shape {
            input,
            hidden,
            classes,
        })
    }

    fn out_fan_in(&self) -> usize {
        if self.hidden > 0 {
            self.hidden
        } else {
            self.input
        }
    }

    fn w1_len(&self) -> usize {
        self.hidden * self.input
    }

    fn b1_len(&self) -> usize {
        self.hidden
    }

    fn w2_len(&self) -> usize {
        self.classes * self.out_fan_in()
    }

    pub fn num_params(&self) -> usize {
        self.w1_len() + self.b1_len() + self.w2_len() + self.classes
    }

    /// `(name, rows, cols)` of each tensor in storage order.
    pub fn tensors(&self) -> Vec<(&'static str, usize, usize)> {
        let mut t = Vec::with_capacity(4);
        if self.hidden > 0 {
            t.push(("w1", self.hidden, self.input));
            t.push(("b1", 1, self.hidden));
        }
        t.push(("w2", self.classes, self.out_fan_in()));
        t.push(("b2", 1, self.classes));
        t
    }
}

/// Classifier parameters, stored flat as `[w1 | b1 | w2 | b2]` with
/// row-major weight matrices (`w1`, `b1` absent when `hidden == 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    shape: Shape,
    data: Vec<f64>,
}

/// Gradient of a scalar loss with respect to every entry of
/// [`ClassifierParams`], in the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    shape: Shape,
    data: Vec<f64>,
}

struct Views<'a> {
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
}

fn split<'a>(shape: &Shape, data: &'a [f64]) -> Views<'a> {
    let (w1, rest) = data.split_at(shape.w1_len());
    let (b1, rest) = rest.split_at(shape.b1_len());
    let (w2, b2) = rest.split_at(shape.w2_len());
    Views { w1, b1, w2, b2 }
}

struct ViewsMut<'a> {
    w1: &'a mut [f64],
    b1: &'a mut [f64],
    w2: &'a mut [f64],
    b2: &'a mut [f64],
}

fn split_mut<'a>(shape: &Shape, data: &'a mut [f64]) -> ViewsMut<'a> {
    let (w1, rest) = data.split_at_mut(shape.w1_len());
    let (b1, rest) = rest.split_at_mut(shape.b1_len());
    let (w2, b2) = rest.split_at_mut(shape.w2_len());
    ViewsMut { w1, b1, w2, b2 }
}

/// Intermediate values of one forward pass.
struct Activations {
    /// Post-ReLU hidden units; empty without a hidden layer.
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

impl ClassifierParams {
    pub fn zeros(shape: Shape) -> Self {
        ClassifierParams {
            shape,
            data: vec![0.0; shape.num_params()],
        }
    }

    /// Every weight and bias uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init<R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> Self {
        let mut params = Self::zeros(shape);
        let v = split_mut(&shape, &mut params.data);
        let b_in = 1.0 / (shape.input as f64).sqrt();
        let b_out = 1.0 / (shape.out_fan_in() as f64).sqrt();
        for x in v.w1.iter_mut().chain(v.b1.iter_mut()) {
            *x = rng.random_range(-b_in..=b_in);
        }
        for x in v.w2.iter_mut().chain(v.b2.iter_mut()) {
            *x = rng.random_range(-b_out..=b_out);
        }
        params
    }

    pub fn from_flat(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.num_params() {
            return Err(LlpError::Dimension {
                expected: shape.num_params(),
                found: data.len(),
            });
        }
        Ok(ClassifierParams { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.shape.input {
            return Err(LlpError::Dimension {
                expected: self.shape.input,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Pre-softmax class scores.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut z = vec![0.0; self.shape.classes];
        let hidden = self.hidden_units(x);
        self.output_scores(x, &hidden, &mut z);
        Ok(z)
    }

    /// Per-class confidence for one instance.
    pub fn forward(&self, x: &[f64]) -> Result<ProportionVector> {
        self.check_input(x)?;
        Ok(ProportionVector::from_vec_unchecked(
            self.activations(x).probs,
        ))
    }

    /// Per-class confidences for many instances.
    pub fn predict_many<'a, I>(&self, xs: I) -> Result<Vec<Vec<f64>>>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        xs.into_iter()
            .map(|x| {
                self.check_input(x)?;
                Ok(self.activations(x).probs)
            })
            .collect()
    }

    fn hidden_units(&self, x: &[f64]) -> Vec<f64> {
        let s = &self.shape;
        if s.hidden == 0 {
            return Vec::new();
        }
        let v = split(s, &self.data);
        v.w1.chunks_exact(s.input)
            .zip(v.b1)
            .map(|(row, b)| {
                let pre = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b;
                pre.max(0.0)
            })
            .collect()
    }

    fn output_scores(&self, x: &[f64], hidden: &[f64], z: &mut [f64]) {
        let s = &self.shape;
        let v = split(s, &self.data);
        let feats = if s.hidden > 0 { hidden } else { x };
        for ((zc, row), b) in z
            .iter_mut()
            .zip(v.w2.chunks_exact(s.out_fan_in()))
            .zip(v.b2)
        {
            *zc = row.iter().zip(feats).map(|(w, h)| w * h).sum::<f64>() + b;
        }
    }

    fn activations(&self, x: &[f64]) -> Activations {
        let hidden = self.hidden_units(x);
        let mut probs = vec![0.0; self.shape.classes];
        self.output_scores(x, &hidden, &mut probs);
        softmax_in_place(&mut probs);
        Activations { hidden, probs }
    }
}

impl GradientBundle {
    pub fn zeros(shape: Shape) -> Self {
        GradientBundle {
            shape,
            data: vec![0.0; shape.num_params()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        GradientBundle {
            shape: self.shape,
            data: self.data.iter().map(|g| g * factor).collect(),
        }
    }
}

/// One mini-bag in a training batch.
#[derive(Debug, Clone)]
pub struct BagExample<'a> {
    pub instances: Vec<&'a [f64]>,
    pub target: ProportionVector,
    pub weight: f64,
}

/// Value and exact gradient of `sum_i w_i * L_prop(mean_j softmax(f(x_ij)), q_i)`.
///
/// The predicted proportion is clamped from below at
/// [`LOG_EPSILON`]; a clamped class contributes no gradient.
pub fn batch_gradient(
    params: &ClassifierParams,
    batch: &[BagExample<'_>],
) -> Result<(f64, GradientBundle)> {
    if batch.is_empty() {
        return Err(LlpError::invalid("batch", "empty batch"));
    }
    let shape = params.shape;
    let mut grad = GradientBundle::zeros(shape);
    let mut total = 0.0;
    for bag in batch {
        if bag.instances.is_empty() {
            return Err(LlpError::invalid("batch", "mini-bag without instances"));
        }
        if bag.target.num_classes() != shape.classes {
            return Err(LlpError::Dimension {
                expected: shape.classes,
                found: bag.target.num_classes(),
            });
        }
        let acts: Vec<Activations> = bag
            .instances
            .iter()
            .map(|x| {
                params.check_input(x)?;
                Ok(params.activations(x))
            })
            .collect::<Result<_>>()?;
        let n = acts.len() as f64;
        let mut mean = vec![0.0; shape.classes];
        for a in &acts {
            for (m, p) in mean.iter_mut().zip(&a.probs) {
                *m += p / n;
            }
        }
        let q = bag.target.as_slice();
        total += bag.weight * crate::losses::cross_entropy(&mean, q);

        // d(w * L) / d(probs_j) is the same for every instance j of the bag.
        let d_prob: Vec<f64> = mean
            .iter()
            .zip(q)
            .map(|(&m, &qc)| {
                if qc > 0.0 && m > LOG_EPSILON {
                    -bag.weight * qc / (m * n)
                } else {
                    0.0
                }
            })
            .collect();
        for (x, a) in bag.instances.iter().zip(&acts) {
            accumulate_instance(params, x, a, &d_prob, &mut grad.data);
        }
    }
    Ok((total, grad))
}

fn accumulate_instance(
    params: &ClassifierParams,
    x: &[f64],
    acts: &Activations,
    d_prob: &[f64],
    grad: &mut [f64],
) {
    let s = &params.shape;
    let v = split(s, &params.data);
    let g = split_mut(s, grad);
    // softmax backward: dz = p * (dp - <dp, p>)
    let inner: f64 = acts.probs.iter().zip(d_prob).map(|(p, d)| p * d).sum();
    let dz: Vec<f64> = acts
        .probs
        .iter()
        .zip(d_prob)
        .map(|(p, d)| p * (d - inner))
        .collect();
    let feats = if s.hidden > 0 { &acts.hidden[..] } else { x };
    let fan = s.out_fan_in();
    for (c, &dzc) in dz.iter().enumerate() {
        g.b2[c] += dzc;
        for (gw, f) in g.w2[c * fan..(c + 1) * fan].iter_mut().zip(feats) {
            *gw += dzc * f;
        }
    }
    if s.hidden == 0 {
        return;
    }
    for j in 0..s.hidden {
        if acts.hidden[j] <= 0.0 {
            continue;
        }
        let dh: f64 = dz
            .iter()
            .enumerate()
            .map(|(c, dzc)| dzc * v.w2[c * fan + j])
            .sum();
        g.b1[j] += dh;
        for (gw, xi) in g.w1[j * s.input..(j + 1) * s.input].iter_mut().zip(x) {
            *gw += dh * xi;
        }
    }
}

/// Plain gradient descent: `params - lr * grads`.
pub fn sgd_step(
    params: &ClassifierParams,
    grads: &GradientBundle,
    learning_rate: f64,
) -> Result<ClassifierParams> {
    let mut next = params.clone();
    let mut opt = Sgd::new(learning_rate, 0.0);
    opt.step(&mut next, grads)?;
    Ok(next)
}

/// Gradient descent with optional heavy-ball momentum:
/// `v <- momentum * v + g; params <- params - lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    learning_rate: f64,
    momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Sgd {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut ClassifierParams, grads: &GradientBundle) -> Result<()> {
        if params.shape != grads.shape {
            return Err(LlpError::Dimension {
                expected: params.shape.num_params(),
                found: grads.shape.num_params(),
            });
        }
        if self.velocity.len() != grads.data.len() {
            self.velocity = vec![0.0; grads.data.len()];
        }
        for ((p, v), g) in params
            .data
            .iter_mut()
            .zip(&mut self.velocity)
            .zip(&grads.data)
        {
            *v = self.momentum * *v + g;
            *p -= self.learning_rate * *v;
        }
        if !params.is_finite() {
            return Err(LlpError::NonFinite("classifier parameters after update"));
        }
        Ok(())
    }
}

/// Adam with bias-corrected first and second moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    steps: i32,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut ClassifierParams, grads: &GradientBundle) -> Result<()> {
        if params.shape != grads.shape {
            return Err(LlpError::Dimension {
                expected: params.shape.num_params(),
                found: grads.shape.num_params(),
            });
        }
        if self.first.len() != grads.data.len() {
            self.first = vec![0.0; grads.data.len()];
            self.second = vec![0.0; grads.data.len()];
            self.steps = 0;
        }
        self.steps = self.steps.saturating_add(1);
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        for (((p, m), v), g) in params
            .data
            .iter_mut()
            .zip(&mut self.first)
            .zip(&mut self.second)
            .zip(&grads.data)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
        }
        if !params.is_finite() {
            return Err(LlpError::NonFinite("classifier parameters after update"));
        }
        Ok(())
    }
}

/// Which update rule the trainer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = LlpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(LlpError::invalid(
                "optimizer",
                format!("unknown optimizer `{other}`"),
            )),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

/// A stateful optimizer chosen at run time.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, momentum: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd(Sgd::new(learning_rate, momentum)),
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(learning_rate)),
        }
    }

    pub fn step(&mut self, params: &mut ClassifierParams, grads: &GradientBundle) -> Result<()> {
        match self {
            Optimizer::Sgd(o) => o.step(params, grads),
            Optimizer::Adam(o) => o.step(params, grads),
        }
    }
}

/// Header values stored alongside a parameter checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: usize,
}

const CHECKPOINT_MAGIC: &str = "# llp-classifier v1";

/// Text checkpoint: a `key = value` header (dims, seed, epoch), then one
/// line per tensor row of space-separated values in 17-significant-digit
/// scientific notation.
pub fn format_checkpoint(params: &ClassifierParams, meta: CheckpointMeta) -> String {
    let s = params.shape;
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
    let _ = writeln!(out, "input = {}", s.input);
    let _ = writeln!(out, "hidden = {}", s.hidden);
    let _ = writeln!(out, "classes = {}", s.classes);
    let _ = writeln!(out, "seed = {}", meta.seed);
    let _ = writeln!(out, "epoch = {}", meta.epoch);
    let mut offset = 0;
    for (name, rows, cols) in s.tensors() {
        for r in 0..rows {
            let _ = write!(out, "{name}");
            for v in &params.data[offset + r * cols..offset + (r + 1) * cols] {
                let _ = write!(out, " {v:.16e}");
            }
            out.push('\n');
        }
        offset += rows * cols;
    }
    out
}

pub fn parse_checkpoint(text: &str, path: &Path) -> Result<(ClassifierParams, CheckpointMeta)> {
    let bad = |reason: String| LlpError::Format {
        what: "checkpoint",
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    if lines.next() != Some(CHECKPOINT_MAGIC) {
        return Err(bad("missing header line".into()));
    }
    let mut header = [0u64; 5];
    for (slot, key) in header
        .iter_mut()
        .zip(["input", "hidden", "classes", "seed", "epoch"])
    {
        let line = lines
            .next()
            .ok_or_else(|| bad(format!("missing `{key}`")))?;
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("expected `{key} = ...`, got `{line}`")))?;
        if k.trim() != key {
            return Err(bad(format!("expected `{key}`, got `{}`", k.trim())));
        }
        *slot = v.trim().parse().map_err(|e| bad(format!("`{key}`: {e}")))?;
    }
    let shape = Shape::new(header[0] as usize, header[1] as usize, header[2] as usize)
        .map_err(|e| bad(e.to_string()))?;
    let mut data = Vec::with_capacity(shape.num_params());
    for (name, rows, cols) in shape.tensors() {
        for r in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| bad(format!("missing row {r} of `{name}`")))?;
            let mut fields = line.split_whitespace();
            if fields.next() != Some(name) {
                return Err(bad(format!("expected row of `{name}`")));
            }
            let row: Vec<f64> = fields
                .map(|f| f.parse::<f64>().map_err(|e| bad(format!("`{name}`: {e}"))))
                .collect::<Result<_>>()?;
            if row.len() != cols {
                return Err(bad(format!(
                    "`{name}` row {r} has {} values, expected {cols}",
                    row.len()
                )));
            }
            data.extend(row);
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(bad("trailing content".into()));
    }
    let meta = CheckpointMeta {
        seed: header[3],
        epoch: header[4] as usize,
    };
    Ok((ClassifierParams { shape, data }, meta))
}

pub fn save_checkpoint(path: &Path, params: &ClassifierParams, meta: CheckpointMeta) -> Result<()> {
    std::fs::write(path, format_checkpoint(params, meta))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ClassifierParams, CheckpointMeta)> {
    parse_checkpoint(&std::fs::read_to_string(path)?, path)
}

#[cfg(test)]
pub(crate) mod oracle {
    use super::*;

    /// Central finite differences of the batch loss, perturbing one
    /// parameter at a time.
    pub fn finite_difference_gradient(
        params: &ClassifierParams,
        batch: &[BagExample<'_>],
        step: f64,
    ) -> Vec<f64> {
        let mut probe = params.clone();
        (0..params.data.len())
            .map(|i| {
                let orig = probe.data[i];
                probe.data[i] = orig + step;
                let up = batch_gradient(&probe, batch).unwrap().0;
                probe.data[i] = orig - step;
                let down = batch_gradient(&probe, batch).unwrap().0;
                probe.data[i] = orig;
                (up - down) / (2.0 * step)
            })
            .collect()
    }

    pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
        let diff = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / na.max(nb).max(1e-300)
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::{finite_difference_gradient, relative_error};
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand_distr::{Distribution, StandardNormal};

    fn random_batch(
        classes: usize,
        dim: usize,
        n: usize,
        bags: usize,
        rng: &mut crate::rng::LlpRng,
    ) -> (Vec<Vec<Vec<f64>>>, Vec<ProportionVector>, Vec<f64>) {
        let feats: Vec<Vec<Vec<f64>>> = (0..bags)
            .map(|_| {
                (0..n)
                    .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
                    .collect()
            })
            .collect();
        let targets = (0..bags)
            .map(|_| {
                let counts: Vec<usize> = (0..classes).map(|_| rng.random_range(0..4)).collect();
                if counts.iter().all(|&c| c == 0) {
                    ProportionVector::uniform(classes)
                } else {
                    ProportionVector::from_counts(&counts).unwrap()
                }
            })
            .collect();
        let weights = (0..bags).map(|_| rng.random_range(0.1..3.0)).collect();
        (feats, targets, weights)
    }

    fn examples<'a>(
        feats: &'a [Vec<Vec<f64>>],
        targets: &[ProportionVector],
        weights: &[f64],
    ) -> Vec<BagExample<'a>> {
        feats
            .iter()
            .zip(targets)
            .zip(weights)
            .map(|((f, t), &w)| BagExample {
                instances: f.iter().map(Vec::as_slice).collect(),
                target: t.clone(),
                weight: w,
            })
            .collect()
    }

    #[test]
    fn zero_params_give_uniform_output() {
        let p = ClassifierParams::zeros(Shape::new(3, 5, 4).unwrap());
        let out = p.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert!(out.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!(p.forward(&[1.0]).is_err());
    }

    #[test]
    fn output_bias_shift_invariance() {
        let mut rng = stream(1, "shift");
        let shape = Shape::new(4, 6, 3).unwrap();
        let p = ClassifierParams::init(shape, &mut rng);
        let mut q = p.clone();
        let n = q.data.len();
        for v in &mut q.data[n - 3..] {
            *v += 7.5;
        }
        let x = [0.3, -1.0, 2.0, 0.1];
        let (a, b) = (p.forward(&x).unwrap(), q.forward(&x).unwrap());
        for c in 0..3 {
            assert!((a[c] - b[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = stream(2, "fd");
        for (classes, n, hidden) in [
            (2, 1, 0),
            (3, 5, 0),
            (3, 5, 6),
            (10, 5, 4),
            (2, 50, 3),
            (10, 1, 5),
        ] {
            let shape = Shape::new(4, hidden, classes).unwrap();
            let params = ClassifierParams::init(shape, &mut rng);
            let (feats, targets, weights) = random_batch(classes, 4, n, 2, &mut rng);
            let batch = examples(&feats, &targets, &weights);
            let (_, g) = batch_gradient(&params, &batch).unwrap();
            let fd = finite_difference_gradient(&params, &batch, 1e-5);
            let err = relative_error(g.as_flat(), &fd);
            assert!(err <= 1e-5, "C={classes} n={n} H={hidden}: rel err {err}");

            let unit: Vec<f64> = vec![1.0; weights.len()];
            let batch = examples(&feats, &targets, &unit);
            let (_, g) = batch_gradient(&params, &batch).unwrap();
            let fd = finite_difference_gradient(&params, &batch, 1e-5);
            assert!(relative_error(g.as_flat(), &fd) <= 1e-5);
        }
    }

    #[test]
    fn uniform_targets_are_stationary_for_zero_softmax_regression() {
        let shape = Shape::new(3, 0, 4).unwrap();
        let params = ClassifierParams::zeros(shape);
        let mut rng = stream(3, "stationary");
        let (feats, _, _) = random_batch(4, 3, 5, 2, &mut rng);
        let targets = vec![ProportionVector::uniform(4); 2];
        let batch = examples(&feats, &targets, &[1.0, 2.0]);
        let (loss, g) = batch_gradient(&params, &batch).unwrap();
        assert!((loss - 3.0 * 4f64.ln()).abs() < 1e-12);
        assert!(g.norm() < 1e-14);
    }

    #[test]
    fn gradient_is_linear_in_weights() {
        let mut rng = stream(4, "linear");
        let shape = Shape::new(4, 5, 3).unwrap();
        let params = ClassifierParams::init(shape, &mut rng);
        let (feats, targets, weights) = random_batch(3, 4, 5, 3, &mut rng);
        let (l1, g1) = batch_gradient(&params, &examples(&feats, &targets, &weights)).unwrap();
        let scaled: Vec<f64> = weights.iter().map(|w| w * 2.5).collect();
        let (l2, g2) = batch_gradient(&params, &examples(&feats, &targets, &scaled)).unwrap();
        assert!((l2 - 2.5 * l1).abs() < 1e-12 * l1.abs().max(1.0));
        assert!(relative_error(g2.as_flat(), g1.scaled(2.5).as_flat()) < 1e-14);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let params = ClassifierParams::zeros(Shape::new(2, 0, 2).unwrap());
        assert!(batch_gradient(&params, &[]).is_err());
    }

    #[test]
    fn sgd_examples() {
        let mut rng = stream(5, "sgd");
        let shape = Shape::new(4, 0, 3).unwrap();
        let params = ClassifierParams::init(shape, &mut rng);
        let (feats, targets, weights) = random_batch(3, 4, 8, 4, &mut rng);
        let batch = examples(&feats, &targets, &weights);
        let (loss, g) = batch_gradient(&params, &batch).unwrap();

        assert_eq!(sgd_step(&params, &g, 0.0).unwrap(), params);
        assert_eq!(
            sgd_step(&params, &g, 0.1).unwrap(),
            sgd_step(&params, &g, 0.1).unwrap()
        );

        let next = sgd_step(&params, &g, 1e-3).unwrap();
        let (after, _) = batch_gradient(&next, &batch).unwrap();
        assert!(after < loss, "{after} !< {loss}");
    }

    #[test]
    fn momentum_accumulates() {
        let shape = Shape::new(2, 0, 2).unwrap();
        let mut params = ClassifierParams::zeros(shape);
        let grads = GradientBundle {
            shape,
            data: vec![1.0; shape.num_params()],
        };
        let mut opt = Sgd::new(0.1, 0.5);
        opt.step(&mut params, &grads).unwrap();
        opt.step(&mut params, &grads).unwrap();
        // -0.1 * 1 - 0.1 * 1.5
        assert!(params.as_flat().iter().all(|&v| (v + 0.25).abs() < 1e-15));
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let shape = Shape::new(2, 0, 2).unwrap();
        let mut params = ClassifierParams::zeros(shape);
        let mut data = vec![0.5; shape.num_params()];
        data[0] = -2.0;
        data[1] = 0.0;
        let grads = GradientBundle { shape, data };
        let mut opt = Adam::new(0.01);
        opt.step(&mut params, &grads).unwrap();
        // bias correction makes the first step lr * sign(g)
        assert!((params.as_flat()[0] - 0.01).abs() < 1e-9);
        assert_eq!(params.as_flat()[1], 0.0);
        assert!((params.as_flat()[2] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn adam_descends_on_a_fixed_batch() {
        let mut rng = stream(6, "adam");
        let shape = Shape::new(4, 6, 3).unwrap();
        let mut params = ClassifierParams::init(shape, &mut rng);
        let (feats, targets, weights) = random_batch(3, 4, 8, 4, &mut rng);
        let batch = examples(&feats, &targets, &weights);
        let (start, _) = batch_gradient(&params, &batch).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 1e-2, 0.0);
        for _ in 0..50 {
            let (_, g) = batch_gradient(&params, &batch).unwrap();
            opt.step(&mut params, &g).unwrap();
        }
        assert!(batch_gradient(&params, &batch).unwrap().0 < start);
        assert_eq!(
            "ADAM".parse::<OptimizerKind>().unwrap(),
            OptimizerKind::Adam
        );
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
    }

    #[test]
    fn non_finite_update_is_rejected() {
        let shape = Shape::new(2, 0, 2).unwrap();
        let params = ClassifierParams::zeros(shape);
        let grads = GradientBundle {
            shape,
            data: vec![f64::INFINITY; shape.num_params()],
        };
        assert!(matches!(
            sgd_step(&params, &grads, 1.0),
            Err(LlpError::NonFinite(_))
        ));
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let path = Path::new("mem");
        assert!(parse_checkpoint("nope", path).is_err());
        let good = format_checkpoint(
            &ClassifierParams::zeros(Shape::new(2, 2, 2).unwrap()),
            CheckpointMeta { seed: 1, epoch: 2 },
        );
        let truncated: String = good.lines().take(7).collect::<Vec<_>>().join("\n");
        assert!(parse_checkpoint(&truncated, path).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn checkpoint_round_trips_bit_exactly(seed in any::<u64>(), hidden in 0usize..4, epoch in 0usize..100) {
            let mut rng = stream(seed, "ckpt");
            let mut params = ClassifierParams::init(Shape::new(3, hidden, 2).unwrap(), &mut rng);
            // include awkward magnitudes
            params.data[0] = 1.0 / 3.0 * 1e-300;
            params.data[1] = -123_456_789.123_456_79;
            let meta = CheckpointMeta { seed, epoch };
            let text = format_checkpoint(&params, meta);
            let (back, meta_back) = parse_checkpoint(&text, Path::new("mem")).unwrap();
            prop_assert_eq!(meta_back, meta);
            prop_assert_eq!(back.shape(), params.shape());
            for (a, b) in back.as_flat().iter().zip(params.as_flat()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn outputs_are_normalized(seed in any::<u64>(), x in prop::collection::vec(-50.0f64..50.0, 4)) {
            let mut rng = stream(seed, "norm");
            let p = ClassifierParams::init(Shape::new(4, 8, 5).unwrap(), &mut rng);
            let out = p.forward(&x).unwrap();
            prop_assert!((out.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(out.as_slice().iter().all(|&v| v >= 0.0));
        }
    }
}
