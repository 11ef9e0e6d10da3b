//! Small parametric predictors with exact losses and gradients.
//!
//! Parameters live in one flat [`ParamVector`]; a layout names the blocks
//! (weights, biases) inside it. None of the models keep normalization
//! statistics, so averaged parameter vectors are usable as-is.

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::{substream, Domain};
use crate::stream::{Sample, Target};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

/// Flat parameter vector plus a named block layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<Vec<ParamBlock>>,
}

impl ParamVector {
    /// Builds a vector over `blocks`, which must tile `0..values.len()`.
    pub fn new(values: Vec<f64>, blocks: Vec<ParamBlock>) -> Result<Self> {
        let mut next = 0;
        for b in &blocks {
            if b.start != next || b.end < b.start {
                return Err(Error::Format(format!("layout block {:?} does not continue at {next}", b.name)));
            }
            next = b.end;
        }
        if next != values.len() {
            return Err(Error::DimensionMismatch { expected: next, found: values.len() });
        }
        Ok(ParamVector {
            values,
            layout: Arc::new(blocks),
        })
    }

    /// Single unnamed block.
    pub fn flat(values: Vec<f64>) -> Self {
        let n = values.len();
        ParamVector {
            values,
            layout: Arc::new(vec![ParamBlock {
                name: "theta".into(),
                start: 0,
                end: n,
            }]),
        }
    }

    /// Same layout, all zeros.
    pub fn zeros_like(other: &ParamVector) -> Self {
        ParamVector {
            values: vec![0.0; other.values.len()],
            layout: Arc::clone(&other.layout),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[ParamBlock] {
        &self.layout
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .iter()
            .find(|b| b.name == name)
            .map(|b| &self.values[b.start..b.end])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    pub fn same_shape(&self, other: &ParamVector) -> Result<()> {
        if self.values.len() != other.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                found: other.values.len(),
            });
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Euclidean distance to a raw vector of the same length.
    pub fn distance(&self, other: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Quadratic,
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ModelKind {
    /// θ estimates a moving center under a diagonal curvature.
    QuadraticProbe {
        curvature: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        init: Option<Vec<f64>>,
    },
    LinearSoftmax { d_in: usize, n_classes: usize },
    /// One tanh hidden layer followed by a softmax layer.
    Mlp1Hidden {
        d_in: usize,
        hidden: usize,
        n_classes: usize,
        #[serde(default = "default_init_scale")]
        init_scale: f64,
    },
}

fn default_init_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub loss: LossKind,
    #[serde(default)]
    pub weight_decay: f64,
}

/// Output of a model on one input, computed without the label.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Class(usize),
    /// Regression estimate of the target.
    Output(Vec<f64>),
}

/// Loss and (for classifiers) accuracy from a single forward sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: Option<f64>,
}

impl Evaluation {
    /// Higher-is-better score: accuracy for classifiers, negative loss
    /// otherwise.
    pub fn performance(&self) -> f64 {
        self.accuracy.unwrap_or(-self.loss)
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let quadratic = matches!(self.kind, ModelKind::QuadraticProbe { .. });
        if quadratic != (self.loss == LossKind::Quadratic) {
            return Err(Error::config("quadratic-probe models require the quadratic loss and vice versa"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay must be finite and >= 0"));
        }
        match &self.kind {
            ModelKind::QuadraticProbe { curvature, init } => {
                if curvature.is_empty() || curvature.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
                    return Err(Error::config("quadratic-probe curvature must be positive"));
                }
                if init.as_ref().is_some_and(|v| v.len() != curvature.len()) {
                    return Err(Error::config("quadratic-probe init has wrong dimension"));
                }
            }
            ModelKind::LinearSoftmax { d_in, n_classes } => {
                if *d_in == 0 || *n_classes < 2 {
                    return Err(Error::config("linear-softmax needs d_in >= 1 and n_classes >= 2"));
                }
            }
            ModelKind::Mlp1Hidden { d_in, hidden, n_classes, .. } => {
                if *d_in == 0 || *hidden == 0 || *n_classes < 2 {
                    return Err(Error::config("mlp-1-hidden dimensions must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn is_classifier(&self) -> bool {
        !matches!(self.kind, ModelKind::QuadraticProbe { .. })
    }

    pub fn input_dim(&self) -> usize {
        match &self.kind {
            ModelKind::QuadraticProbe { curvature, .. } => curvature.len(),
            ModelKind::LinearSoftmax { d_in, .. } | ModelKind::Mlp1Hidden { d_in, .. } => *d_in,
        }
    }

    pub fn n_classes(&self) -> Option<usize> {
        match &self.kind {
            ModelKind::QuadraticProbe { .. } => None,
            ModelKind::LinearSoftmax { n_classes, .. } | ModelKind::Mlp1Hidden { n_classes, .. } => {
                Some(*n_classes)
            }
        }
    }

    pub fn layout(&self) -> Vec<ParamBlock> {
        let mut blocks = Vec::new();
        let mut push = |name: &str, n: usize| {
            let start = blocks.last().map_or(0, |b: &ParamBlock| b.end);
            blocks.push(ParamBlock {
                name: name.into(),
                start,
                end: start + n,
            });
        };
        match &self.kind {
            ModelKind::QuadraticProbe { curvature, .. } => push("theta", curvature.len()),
            ModelKind::LinearSoftmax { d_in, n_classes } => {
                push("weight", d_in * n_classes);
                push("bias", *n_classes);
            }
            ModelKind::Mlp1Hidden { d_in, hidden, n_classes, .. } => {
                push("hidden.weight", d_in * hidden);
                push("hidden.bias", *hidden);
                push("out.weight", hidden * n_classes);
                push("out.bias", *n_classes);
            }
        }
        blocks
    }

    pub fn param_count(&self) -> usize {
        self.layout().last().map_or(0, |b| b.end)
    }

    /// Initial parameters `θ₀`.
    ///
    /// Linear models start at zero; the MLP draws hidden weights from
    /// `N(0, init_scale²/d_in)` and output weights from `N(0, init_scale²/hidden)`.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let layout = self.layout();
        let mut values = vec![0.0; self.param_count()];
        match &self.kind {
            ModelKind::QuadraticProbe { init: Some(init), .. } => values.copy_from_slice(init),
            ModelKind::Mlp1Hidden { d_in, hidden, n_classes, init_scale } => {
                let mut rng = substream(seed, Domain::ModelInit, 0);
                let w1 = init_scale / (*d_in as f64).sqrt();
                let w2 = init_scale / (*hidden as f64).sqrt();
                let (h_end, b1_end) = (d_in * hidden, d_in * hidden + hidden);
                for (i, v) in values.iter_mut().enumerate() {
                    let scale = if i < h_end {
                        w1
                    } else if i < b1_end {
                        0.0
                    } else if i < b1_end + hidden * n_classes {
                        w2
                    } else {
                        0.0
                    };
                    if scale > 0.0 {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v = scale * z;
                    }
                }
            }
            _ => {}
        }
        ParamVector::new(values, layout).expect("layout tiles the parameter vector")
    }

    fn check(&self, theta: &ParamVector, samples: &[&Sample]) -> Result<()> {
        let expected = self.param_count();
        if theta.len() != expected {
            return Err(Error::DimensionMismatch { expected, found: theta.len() });
        }
        let d = self.input_dim();
        for s in samples {
            if s.features.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: s.features.len() });
            }
            match (&s.target, self.n_classes()) {
                (Target::Class(c), Some(k)) if *c < k => {}
                (Target::Vector(y), None) if y.len() == d => {}
                (Target::Class(_), Some(k)) => {
                    return Err(Error::Format(format!("class label out of range for {k} classes")))
                }
                _ => return Err(Error::Format("label kind does not match the model".into())),
            }
        }
        Ok(())
    }

    /// Mean per-example loss plus `½λ‖θ‖²`, and its exact gradient.
    pub fn loss_and_grad(&self, theta: &ParamVector, batch: &[&Sample]) -> Result<(f64, ParamVector)> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        self.check(theta, batch)?;
        let mut grad = ParamVector::zeros_like(theta);
        let th = theta.as_slice();
        let g = grad.as_mut_slice();
        let mut total = 0.0;
        match &self.kind {
            ModelKind::QuadraticProbe { curvature, .. } => {
                for s in batch {
                    let Target::Vector(y) = &s.target else { unreachable!() };
                    for i in 0..th.len() {
                        let r = th[i] - y[i];
                        total += 0.5 * curvature[i] * r * r + s.features[i] * r;
                        g[i] += curvature[i] * r + s.features[i];
                    }
                }
            }
            ModelKind::LinearSoftmax { d_in, n_classes } => {
                let (d, k) = (*d_in, *n_classes);
                let (w, b) = th.split_at(d * k);
                let mut logits = vec![0.0; k];
                for s in batch {
                    let Target::Class(y) = s.target else { unreachable!() };
                    affine(w, b, &s.features, &mut logits);
                    total += softmax_xent(&mut logits, y);
                    let (gw, gb) = g.split_at_mut(d * k);
                    for c in 0..k {
                        let delta = logits[c];
                        gb[c] += delta;
                        for (gwi, xi) in gw[c * d..(c + 1) * d].iter_mut().zip(&s.features) {
                            *gwi += delta * xi;
                        }
                    }
                }
            }
            ModelKind::Mlp1Hidden { d_in, hidden, n_classes, .. } => {
                let (d, h, k) = (*d_in, *hidden, *n_classes);
                let (w1, rest) = th.split_at(d * h);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(h * k);
                let mut act = vec![0.0; h];
                let mut logits = vec![0.0; k];
                let mut back = vec![0.0; h];
                for s in batch {
                    let Target::Class(y) = s.target else { unreachable!() };
                    affine(w1, b1, &s.features, &mut act);
                    act.iter_mut().for_each(|a| *a = a.tanh());
                    affine(w2, b2, &act, &mut logits);
                    total += softmax_xent(&mut logits, y);
                    let (gw1, rest) = g.split_at_mut(d * h);
                    let (gb1, rest) = rest.split_at_mut(h);
                    let (gw2, gb2) = rest.split_at_mut(h * k);
                    back.iter_mut().for_each(|v| *v = 0.0);
                    for c in 0..k {
                        let delta = logits[c];
                        gb2[c] += delta;
                        let row = &w2[c * h..(c + 1) * h];
                        for j in 0..h {
                            gw2[c * h + j] += delta * act[j];
                            back[j] += delta * row[j];
                        }
                    }
                    for j in 0..h {
                        let dz = back[j] * (1.0 - act[j] * act[j]);
                        gb1[j] += dz;
                        for (gwi, xi) in gw1[j * d..(j + 1) * d].iter_mut().zip(&s.features) {
                            *gwi += dz * xi;
                        }
                    }
                }
            }
        }
        let n = batch.len() as f64;
        let lambda = self.weight_decay;
        let mut loss = total / n;
        for (gi, ti) in g.iter_mut().zip(th) {
            *gi = *gi / n + lambda * ti;
        }
        if lambda > 0.0 {
            loss += 0.5 * lambda * th.iter().map(|x| x * x).sum::<f64>();
        }
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::Divergence(format!("non-finite loss {loss}")));
        }
        Ok((loss, grad))
    }

    /// Raw outputs for one input: logits for classifiers, `θ` for the probe.
    pub fn forward(&self, theta: &ParamVector, x: &[f64]) -> Vec<f64> {
        let th = theta.as_slice();
        match &self.kind {
            ModelKind::QuadraticProbe { .. } => th.to_vec(),
            ModelKind::LinearSoftmax { d_in, n_classes } => {
                let (w, b) = th.split_at(d_in * n_classes);
                let mut out = vec![0.0; *n_classes];
                affine(w, b, x, &mut out);
                out
            }
            ModelKind::Mlp1Hidden { d_in, hidden, n_classes, .. } => {
                let (w1, rest) = th.split_at(d_in * hidden);
                let (b1, rest) = rest.split_at(*hidden);
                let (w2, b2) = rest.split_at(hidden * n_classes);
                let mut act = vec![0.0; *hidden];
                affine(w1, b1, x, &mut act);
                act.iter_mut().for_each(|a| *a = a.tanh());
                let mut out = vec![0.0; *n_classes];
                affine(w2, b2, &act, &mut out);
                out
            }
        }
    }

    /// Prediction for one input. Argmax ties go to the lowest class index.
    pub fn predict(&self, theta: &ParamVector, x: &[f64]) -> Prediction {
        let out = self.forward(theta, x);
        if self.is_classifier() {
            Prediction::Class(argmax(&out))
        } else {
            Prediction::Output(out)
        }
    }

    /// Scores label-free predictions once labels are revealed: accuracy for
    /// classifiers, negative mean per-example loss for the probe.
    pub fn score_predictions(&self, predictions: &[Prediction], samples: &[&Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if predictions.len() != samples.len() {
            return Err(Error::DimensionMismatch {
                expected: samples.len(),
                found: predictions.len(),
            });
        }
        let mut total = 0.0;
        for (p, s) in predictions.iter().zip(samples) {
            total += match (p, &s.target, &self.kind) {
                (Prediction::Class(c), Target::Class(y), _) => (c == y) as u8 as f64,
                (Prediction::Output(o), Target::Vector(y), ModelKind::QuadraticProbe { curvature, .. }) => {
                    -probe_loss(curvature, o, &s.features, y)
                }
                _ => return Err(Error::Format("prediction kind does not match label".into())),
            };
        }
        Ok(total / samples.len() as f64)
    }

    /// Loss (without weight decay) and accuracy in one pass.
    pub fn evaluate(&self, theta: &ParamVector, samples: &[&Sample]) -> Result<Evaluation> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        self.check(theta, samples)?;
        let mut loss = 0.0;
        let mut correct = 0usize;
        for s in samples {
            match (&self.kind, &s.target) {
                (ModelKind::QuadraticProbe { curvature, .. }, Target::Vector(y)) => {
                    loss += probe_loss(curvature, theta.as_slice(), &s.features, y);
                }
                (_, Target::Class(y)) => {
                    let mut out = self.forward(theta, &s.features);
                    if argmax(&out) == *y {
                        correct += 1;
                    }
                    loss += softmax_xent(&mut out, *y);
                }
                _ => unreachable!("checked above"),
            }
        }
        let n = samples.len() as f64;
        Ok(Evaluation {
            loss: loss / n,
            accuracy: self.is_classifier().then_some(correct as f64 / n),
        })
    }

    /// Fraction of argmax-correct predictions.
    pub fn accuracy(&self, theta: &ParamVector, samples: &[&Sample]) -> Result<f64> {
        if !self.is_classifier() {
            return Err(Error::NotClassification);
        }
        Ok(self.evaluate(theta, samples)?.accuracy.expect("classifier"))
    }

    /// Accuracy for classifiers, negative loss otherwise.
    pub fn performance(&self, theta: &ParamVector, samples: &[&Sample]) -> Result<f64> {
        Ok(self.evaluate(theta, samples)?.performance())
    }
}

fn probe_loss(curvature: &[f64], theta: &[f64], x: &[f64], y: &[f64]) -> f64 {
    let mut l = 0.0;
    for i in 0..theta.len() {
        let r = theta[i] - y[i];
        l += 0.5 * curvature[i] * r * r + x[i] * r;
    }
    l
}

/// `out = W·x + b` with `W` row-major `out.len() × x.len()`.
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (c, o) in out.iter_mut().enumerate() {
        *o = b[c] + w[c * d..(c + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Cross-entropy of `logits` at label `y`; leaves `softmax − onehot(y)` in
/// `logits`.
fn softmax_xent(logits: &mut [f64], y: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted_y = logits[y] - max;
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    let loss = sum.ln() - shifted_y;
    for l in logits.iter_mut() {
        *l /= sum;
    }
    logits[y] -= 1.0;
    loss
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn softmax_spec(d: usize, k: usize) -> ModelSpec {
        ModelSpec {
            kind: ModelKind::LinearSoftmax { d_in: d, n_classes: k },
            loss: LossKind::CrossEntropy,
            weight_decay: 0.0,
        }
    }

    fn class_sample(x: Vec<f64>, y: usize) -> Sample {
        Sample {
            features: x,
            target: Target::Class(y),
        }
    }

    #[test]
    fn quadratic_probe_gradient_vanishes_at_center() {
        let spec = ModelSpec {
            kind: ModelKind::QuadraticProbe {
                curvature: vec![0.5, 1.0, 2.0],
                init: None,
            },
            loss: LossKind::Quadratic,
            weight_decay: 0.0,
        };
        let c = vec![1.0, -3.0, 0.25];
        let s = Sample {
            features: vec![0.0; 3],
            target: Target::Vector(c.clone()),
        };
        let (loss, grad) = spec.loss_and_grad(&ParamVector::flat(c), &[&s]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.as_slice().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn zero_softmax_loss_is_ln2() {
        let spec = softmax_spec(3, 2);
        let theta = spec.init_params(0);
        let a = class_sample(vec![1.0, 2.0, -1.0], 0);
        let b = class_sample(vec![-0.5, 0.1, 4.0], 1);
        let (loss, _) = spec.loss_and_grad(&theta, &[&a, &b]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn ties_break_to_lowest_class() {
        let spec = softmax_spec(2, 2);
        let theta = spec.init_params(0);
        let data: Vec<Sample> = (0..10).map(|i| class_sample(vec![i as f64, 1.0], (i % 3 == 0) as usize)).collect();
        let refs: Vec<&Sample> = data.iter().collect();
        let frac0 = data.iter().filter(|s| s.target == Target::Class(0)).count() as f64 / 10.0;
        assert_eq!(spec.accuracy(&theta, &refs).unwrap(), frac0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let spec = softmax_spec(2, 2);
        let theta = ParamVector::new(vec![1.0, 0.0, -1.0, 0.0, 0.0, 0.0], spec.layout()).unwrap();
        let data = [class_sample(vec![2.0, 0.0], 0), class_sample(vec![-1.0, 5.0], 1)];
        let refs: Vec<&Sample> = data.iter().collect();
        assert_eq!(spec.accuracy(&theta, &refs).unwrap(), 1.0);
        let preds: Vec<Prediction> = data.iter().map(|s| spec.predict(&theta, &s.features)).collect();
        assert_eq!(spec.score_predictions(&preds, &refs).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_rejects_regression_and_empty_sets() {
        let spec = ModelSpec {
            kind: ModelKind::QuadraticProbe {
                curvature: vec![1.0],
                init: None,
            },
            loss: LossKind::Quadratic,
            weight_decay: 0.0,
        };
        let s = Sample {
            features: vec![0.0],
            target: Target::Vector(vec![1.0]),
        };
        assert!(matches!(spec.accuracy(&spec.init_params(0), &[&s]), Err(Error::NotClassification)));
        assert!(spec.performance(&spec.init_params(0), &[&s]).unwrap() < 0.0);
        let clf = softmax_spec(1, 2);
        assert!(matches!(clf.accuracy(&clf.init_params(0), &[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let spec = softmax_spec(3, 2);
        let s = class_sample(vec![1.0, 2.0], 0);
        assert!(matches!(
            spec.loss_and_grad(&spec.init_params(0), &[&s]),
            Err(Error::DimensionMismatch { expected: 3, found: 2 })
        ));
        assert!(matches!(
            spec.loss_and_grad(&ParamVector::flat(vec![0.0; 4]), &[&class_sample(vec![0.0; 3], 0)]),
            Err(Error::DimensionMismatch { expected: 8, found: 4 })
        ));
    }

    #[test]
    fn non_finite_loss_signals_divergence() {
        let spec = softmax_spec(1, 2);
        let theta = ParamVector::new(vec![f64::NAN, 0.0, 0.0, 0.0], spec.layout()).unwrap();
        let s = class_sample(vec![1.0], 0);
        assert!(matches!(spec.loss_and_grad(&theta, &[&s]), Err(Error::Divergence(_))));
    }

    #[test]
    fn kind_loss_compatibility() {
        let mut spec = softmax_spec(2, 2);
        spec.loss = LossKind::Quadratic;
        assert!(spec.validate().is_err());
        spec.loss = LossKind::CrossEntropy;
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn weight_decay_adds_half_lambda_norm() {
        let mut spec = softmax_spec(1, 2);
        let theta = ParamVector::new(vec![1.0, -2.0, 0.5, 0.0], spec.layout()).unwrap();
        let s = class_sample(vec![0.3], 1);
        let (plain, g0) = spec.loss_and_grad(&theta, &[&s]).unwrap();
        spec.weight_decay = 0.1;
        let (decayed, g1) = spec.loss_and_grad(&theta, &[&s]).unwrap();
        assert!((decayed - plain - 0.05 * 5.25).abs() < 1e-14);
        for ((a, b), t) in g1.as_slice().iter().zip(g0.as_slice()).zip(theta.as_slice()) {
            assert!((a - b - 0.1 * t).abs() < 1e-15);
        }
    }

    #[test]
    fn layout_blocks_partition_the_vector() {
        let spec = ModelSpec {
            kind: ModelKind::Mlp1Hidden {
                d_in: 3,
                hidden: 4,
                n_classes: 2,
                init_scale: 1.0,
            },
            loss: LossKind::CrossEntropy,
            weight_decay: 0.0,
        };
        let theta = spec.init_params(5);
        assert_eq!(theta.len(), 12 + 4 + 8 + 2);
        assert_eq!(theta.block("hidden.bias").unwrap(), &[0.0; 4]);
        assert_eq!(theta.block("out.weight").unwrap().len(), 8);
        assert!(ParamVector::new(vec![0.0; 3], vec![ParamBlock { name: "a".into(), start: 1, end: 3 }]).is_err());
    }
}
