//! Elastic-net logistic-regression probes.
//!
//! A probe maps one activation vector to a distribution over tags with a
//! single linear layer and softmax. Training minimizes the mean categorical
//! cross-entropy plus `λ₁‖θ‖₁ + λ₂‖θ‖²₂` with Adam over shuffled
//! mini-batches; the L1 term contributes the subgradient `sign(θ)` with
//! `sign(0) = 0`.
//!
//! Inputs are z-scored per neuron with statistics from the training split
//! (unless disabled in [`TrainConfig`]); the transform is stored in the
//! model and applied again at prediction time.

mod adam;
mod linear;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use linear::{argmax, log_sum_exp, sign, LinearProbe, ProbeGradient};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::store::{ActivationDataset, LabeledData};

pub const MODEL_FORMAT: &str = "neuroprobe-probe";
pub const MODEL_VERSION: u32 = 1;

const STD_FLOOR: f64 = 1e-8;
const EVAL_CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.0,
            lambda2: 0.0,
            epochs: 10,
            batch_size: 512,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn with_lambdas(mut self, lambda1: f64, lambda2: f64) -> Self {
        self.lambda1 = lambda1;
        self.lambda2 = lambda2;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !nonneg(self.lambda1) || !nonneg(self.lambda2) {
            return Err(Error::Config(format!(
                "lambdas must be finite and non-negative (λ1={}, λ2={})",
                self.lambda1, self.lambda2
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Per-neuron z-score transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &ActivationDataset) -> Self {
        let d = data.n_neurons();
        let n = data.n_tokens().max(1) as f64;
        let mut mean = vec![0.0; d];
        for t in 0..data.n_tokens() {
            for (m, &v) in mean.iter_mut().zip(data.row(t)) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for t in 0..data.n_tokens() {
            for ((s, &v), &m) in var.iter_mut().zip(data.row(t)).zip(&mean) {
                let c = v as f64 - m;
                *s += c * c;
            }
        }
        let scale = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Self { mean, scale }
    }

    fn apply(&self, row: &[f32], out: &mut [f64]) {
        for (((o, &v), &m), &s) in out.iter_mut().zip(row).zip(&self.mean).zip(&self.scale) {
            *o = (v as f64 - m) / s;
        }
    }
}

fn fill_rows(
    data: &ActivationDataset,
    scaler: Option<&Standardizer>,
    tokens: impl ExactSizeIterator<Item = usize>,
) -> Array2<f64> {
    let d = data.n_neurons();
    let mut x = Array2::zeros((tokens.len(), d));
    for (mut out, t) in x.rows_mut().into_iter().zip(tokens) {
        let out = out.as_slice_mut().unwrap();
        match scaler {
            Some(s) => s.apply(data.row(t), out),
            None => out
                .iter_mut()
                .zip(data.row(t))
                .for_each(|(o, &v)| *o = v as f64),
        }
    }
    x
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub final_train_loss: f64,
    pub epochs: usize,
    pub steps: usize,
}

/// A trained probe together with everything needed to apply it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub format: String,
    pub version: u32,
    pub input_dim: usize,
    pub vocabulary: Vec<String>,
    pub scaler: Option<Standardizer>,
    pub probe: LinearProbe,
    pub config: TrainConfig,
    pub metrics: TrainMetrics,
}

impl ProbeModel {
    pub fn n_tags(&self) -> usize {
        self.vocabulary.len()
    }

    /// Model inputs (after standardization) for the given tokens.
    pub fn features(&self, data: &ActivationDataset, tokens: std::ops::Range<usize>) -> Array2<f64> {
        fill_rows(data, self.scaler.as_ref(), tokens)
    }

    fn check_width(&self, data: &ActivationDataset) -> Result<()> {
        if data.n_neurons() != self.input_dim {
            return Err(Error::Shape(format!(
                "data has {} neurons, model expects {}",
                data.n_neurons(),
                self.input_dim
            )));
        }
        Ok(())
    }

    pub fn predict(&self, data: &ActivationDataset, exec: Execution) -> Result<Vec<u32>> {
        self.check_width(data)?;
        let tokens: Vec<usize> = (0..data.n_tokens()).collect();
        let chunks = par::map_chunks(exec, &tokens, EVAL_CHUNK, |start, c| {
            let x = self.features(data, start..start + c.len());
            self.probe.predict(x.view())
        });
        Ok(chunks.concat())
    }

    /// Softmax probabilities, shape `[n_tokens, T]`.
    pub fn probabilities(&self, data: &ActivationDataset) -> Result<Array2<f64>> {
        self.check_width(data)?;
        let x = self.features(data, 0..data.n_tokens());
        Ok(self.probe.probabilities(x.view()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_vec(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_slice(&bytes)?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}",
                self.format, self.version
            )));
        }
        let t = self.vocabulary.len();
        let dims_ok = self.probe.weights.dim() == (t, self.input_dim)
            && self.probe.bias.len() == t
            && self
                .scaler
                .as_ref()
                .is_none_or(|s| s.mean.len() == self.input_dim && s.scale.len() == self.input_dim);
        if !dims_ok {
            return Err(Error::Shape("model record has inconsistent dimensions".into()));
        }
        if self.probe.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Validation("model contains non-finite weights".into()));
        }
        Ok(())
    }
}

/// Trains a probe on every token of `data`. Deterministic given the config.
pub fn train(data: &LabeledData, config: &TrainConfig) -> Result<ProbeModel> {
    config.validate()?;
    let acts = &data.activations;
    let tags = data.labels.tags();
    data.labels.check_aligned(acts)?;
    let n = acts.n_tokens();
    if n == 0 {
        return Err(Error::Validation("cannot train on an empty dataset".into()));
    }
    let d = acts.n_neurons();
    let t = data.labels.n_tags();

    let scaler = config.standardize.then(|| Standardizer::fit(acts));
    let mut probe = LinearProbe::zeros(t, d);
    let mut adam_w = Adam::new(
        t * d,
        config.learning_rate,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_epsilon,
    );
    let mut adam_b = Adam::new(
        t,
        config.learning_rate,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_epsilon,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut batch_tags = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let x = fill_rows(acts, scaler.as_ref(), idx.iter().copied());
            batch_tags.clear();
            batch_tags.extend(idx.iter().map(|&i| tags[i]));
            let (loss, grad) =
                probe.loss_and_gradient(x.view(), &batch_tags, config.lambda1, config.lambda2)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch, loss });
            }
            adam_w.step(
                probe.weights.as_slice_mut().unwrap(),
                grad.weights.as_slice().unwrap(),
            );
            adam_b.step(probe.bias.as_slice_mut().unwrap(), grad.bias.as_slice().unwrap());
        }
    }

    let final_train_loss = dataset_loss(&probe, acts, scaler.as_ref(), tags, config)?;
    if !final_train_loss.is_finite() {
        return Err(Error::Divergence {
            epoch: config.epochs,
            batch: 0,
            loss: final_train_loss,
        });
    }

    Ok(ProbeModel {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        input_dim: d,
        vocabulary: data.labels.vocabulary().to_vec(),
        scaler,
        probe,
        config: config.clone(),
        metrics: TrainMetrics {
            final_train_loss,
            epochs: config.epochs,
            steps: adam_w.steps() as usize,
        },
    })
}

fn dataset_loss(
    probe: &LinearProbe,
    acts: &ActivationDataset,
    scaler: Option<&Standardizer>,
    tags: &[u32],
    config: &TrainConfig,
) -> Result<f64> {
    let n = acts.n_tokens();
    let mut nll = 0.0;
    for start in (0..n).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(n);
        let x: Array2<f64> = fill_rows(acts, scaler, start..end);
        let view: ArrayView2<f64> = x.view();
        nll += probe.nll_sum(view, &tags[start..end]);
    }
    Ok(nll / n as f64 + probe.penalty(config.lambda1, config.lambda2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub correct: usize,
    pub n_examples: usize,
    /// Recall per gold tag, for tags that occur in the evaluated data.
    pub per_tag_accuracy: BTreeMap<String, f64>,
}

impl EvalResult {
    pub fn from_predictions(predicted: &[u32], gold: &[u32], vocabulary: &[String]) -> Result<Self> {
        if gold.is_empty() {
            return Err(Error::Validation("cannot evaluate on an empty dataset".into()));
        }
        let mut per_tag: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
        let mut correct = 0;
        for (&p, &g) in predicted.iter().zip(gold) {
            let e = per_tag.entry(g).or_default();
            e.1 += 1;
            if p == g {
                e.0 += 1;
                correct += 1;
            }
        }
        let per_tag_accuracy = per_tag
            .into_iter()
            .map(|(tag, (c, total))| (vocabulary[tag as usize].clone(), c as f64 / total as f64))
            .collect();
        Ok(Self {
            accuracy: correct as f64 / gold.len() as f64,
            correct,
            n_examples: gold.len(),
            per_tag_accuracy,
        })
    }
}

/// Accuracy of `model` on `data`; prediction is the arg-max logit with ties
/// going to the lower tag id.
pub fn evaluate(model: &ProbeModel, data: &LabeledData) -> Result<EvalResult> {
    evaluate_with(model, data, Execution::default())
}

pub fn evaluate_with(model: &ProbeModel, data: &LabeledData, exec: Execution) -> Result<EvalResult> {
    data.labels.check_aligned(&data.activations)?;
    if data.labels.n_tokens() == 0 {
        return Err(Error::Validation("cannot evaluate on an empty dataset".into()));
    }
    let vocab = data.labels.vocabulary();
    if vocab.len() < model.vocabulary.len() || vocab[..model.vocabulary.len()] != model.vocabulary[..] {
        return Err(Error::Shape(
            "label vocabulary does not extend the model's vocabulary".into(),
        ));
    }
    let predicted = model.predict(&data.activations, exec)?;
    EvalResult::from_predictions(&predicted, data.labels.tags(), vocab)
}
