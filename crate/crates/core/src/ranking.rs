//! Neuron ranking and subset analysis.
//!
//! Neurons are ranked from the weights of a probe trained on the whole
//! network. For every tag the absolute weights are normalized into a mass
//! distribution over neurons. A cumulative-mass threshold then sweeps
//! `0.001, 0.002, …, 1.0`; at each threshold every tag (in vocabulary order)
//! contributes the smallest prefix of its neurons, sorted by descending
//! mass, whose mass reaches the threshold. Neurons are appended to the
//! ranking the first time any tag's prefix contains them. Neurons that carry
//! no weight for any tag are appended last in index order.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::probe::{self, EvalResult, ProbeModel, TrainConfig};
use crate::store::{neuron_location, LabeledData, NeuronIndexSet};

/// Number of threshold steps in the cumulative-mass sweep.
pub const THRESHOLD_STEPS: usize = 1000;
const MASS_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronRanking {
    /// Permutation of `0..D`, most salient first.
    pub order: Vec<usize>,
    /// `|θ[t,d]| / Σ_d |θ[t,d]|`; rows of all-zero tags stay zero.
    pub per_tag_mass: Array2<f64>,
    /// Tags whose weight row is entirely zero.
    pub zero_mass_tags: Vec<usize>,
    /// Ranking length after each threshold step that added neurons, so
    /// `order[tiers[i-1]..tiers[i]]` entered together.
    pub tiers: Vec<usize>,
}

impl NeuronRanking {
    pub fn n_neurons(&self) -> usize {
        self.order.len()
    }

    /// Rank position of every neuron.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.order.len()];
        for (rank, &d) in self.order.iter().enumerate() {
            pos[d] = rank;
        }
        pos
    }

    pub fn top_count(&self, count: usize) -> Result<NeuronIndexSet> {
        self.check_count(count)?;
        NeuronIndexSet::new(self.order[..count].to_vec())
    }

    pub fn bottom_count(&self, count: usize) -> Result<NeuronIndexSet> {
        self.check_count(count)?;
        NeuronIndexSet::new(self.order[self.order.len() - count..].to_vec())
    }

    pub fn top_fraction(&self, fraction: f64) -> Result<NeuronIndexSet> {
        self.top_count(subset_size(fraction, self.n_neurons())?)
    }

    pub fn bottom_fraction(&self, fraction: f64) -> Result<NeuronIndexSet> {
        self.bottom_count(subset_size(fraction, self.n_neurons())?)
    }

    fn check_count(&self, count: usize) -> Result<()> {
        if count == 0 || count > self.order.len() {
            return Err(Error::Validation(format!(
                "subset size {count} outside 1..={}",
                self.order.len()
            )));
        }
        Ok(())
    }
}

/// `round(fraction * n)` with halves rounded up, at least 1.
pub fn subset_size(fraction: f64, n: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Validation(format!(
            "fraction must be in (0, 1], got {fraction}"
        )));
    }
    Ok(((fraction * n as f64 + 0.5).floor() as usize).clamp(1, n.max(1)))
}

pub fn rank_neurons(model: &ProbeModel) -> Result<NeuronRanking> {
    rank_weights(&model.probe.weights)
}

/// Ranks the columns of a `[T, D]` weight matrix.
pub fn rank_weights(weights: &Array2<f64>) -> Result<NeuronRanking> {
    let (n_tags, d) = weights.dim();
    let mut mass = weights.mapv(f64::abs);
    let mut zero_mass_tags = Vec::new();
    for (t, mut row) in mass.rows_mut().into_iter().enumerate() {
        let total: f64 = row.sum();
        if total > 0.0 {
            row.mapv_inplace(|w| w / total);
        } else {
            zero_mass_tags.push(t);
        }
    }
    if zero_mass_tags.len() == n_tags {
        return Err(Error::DegenerateRanking(
            "every weight is zero; was the probe trained?".into(),
        ));
    }

    // per tag: neurons by descending mass, ties to the lower index
    let sorted: Vec<Vec<usize>> = mass
        .rows()
        .into_iter()
        .map(|row| {
            let mut idx: Vec<usize> = (0..d).collect();
            idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut ranked = vec![false; d];
    let mut order = Vec::with_capacity(d);
    let mut tiers = Vec::new();
    let mut cursor = vec![0usize; n_tags];
    let mut cumulative = vec![0.0f64; n_tags];

    for step in 1..=THRESHOLD_STEPS {
        let threshold = step as f64 / THRESHOLD_STEPS as f64 - MASS_TOLERANCE;
        for t in 0..n_tags {
            if zero_mass_tags.contains(&t) {
                continue;
            }
            while cumulative[t] < threshold && cursor[t] < d {
                let neuron = sorted[t][cursor[t]];
                let m = mass[[t, neuron]];
                if m == 0.0 {
                    // only zero-mass neurons remain for this tag
                    cursor[t] = d;
                    break;
                }
                cumulative[t] += m;
                cursor[t] += 1;
                if !ranked[neuron] {
                    ranked[neuron] = true;
                    order.push(neuron);
                }
            }
        }
        if tiers.last() != Some(&order.len()) && !order.is_empty() {
            tiers.push(order.len());
        }
        if order.len() == d {
            break;
        }
    }

    if order.len() < d {
        order.extend((0..d).filter(|&n| !ranked[n]));
        tiers.push(d);
    }

    Ok(NeuronRanking {
        order,
        per_tag_mass: mass,
        zero_mass_tags,
        tiers,
    })
}

/// Trains a fresh probe on the `subset` columns of `train`.
pub fn train_subset(
    subset: &NeuronIndexSet,
    train: &LabeledData,
    config: &TrainConfig,
) -> Result<ProbeModel> {
    probe::train(&train.slice_columns(subset)?, config)
}

/// Evaluates a subset-trained probe on the same columns of `data`.
pub fn evaluate_on_subset(
    model: &ProbeModel,
    subset: &NeuronIndexSet,
    data: &LabeledData,
) -> Result<EvalResult> {
    probe::evaluate(model, &data.slice_columns(subset)?)
}

/// Retrains a probe on `subset` and scores it on `eval`. Full-network
/// weights are never reused.
pub fn evaluate_subset(
    subset: &NeuronIndexSet,
    train: &LabeledData,
    eval: &LabeledData,
    config: &TrainConfig,
) -> Result<EvalResult> {
    let model = train_subset(subset, train, config)?;
    evaluate_on_subset(&model, subset, eval)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub n_neurons: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimalSetResult {
    pub selected: NeuronIndexSet,
    pub oracle_accuracy: f64,
    pub achieved_accuracy: f64,
    pub delta: f64,
    pub step_fraction: f64,
    pub trace: Vec<TracePoint>,
}

/// Parameters of the minimal-set search. `delta` is an accuracy fraction
/// (0.01 = one accuracy point).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimalSetSearch {
    pub delta: f64,
    pub step_fraction: f64,
}

impl Default for MinimalSetSearch {
    fn default() -> Self {
        Self {
            delta: 0.01,
            step_fraction: 0.01,
        }
    }
}

impl MinimalSetSearch {
    fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::Validation(format!("delta must be >= 0, got {}", self.delta)));
        }
        if !(self.step_fraction > 0.0 && self.step_fraction <= 1.0) {
            return Err(Error::Validation(format!(
                "step fraction must be in (0, 1], got {}",
                self.step_fraction
            )));
        }
        Ok(())
    }

    /// Prefix sizes `ceil(k * step * D)` for `k = 1, 2, …`, ending at `D`.
    pub fn prefix_sizes(&self, n_neurons: usize) -> Vec<usize> {
        let mut sizes = Vec::new();
        let mut k = 1usize;
        loop {
            let raw = k as f64 * self.step_fraction * n_neurons as f64;
            // guard against 0.01 * 300 landing a hair above 3
            let size = ((raw - 1e-9).ceil() as usize).clamp(1, n_neurons);
            if sizes.last() != Some(&size) {
                sizes.push(size);
            }
            if size >= n_neurons {
                break;
            }
            k += 1;
        }
        sizes
    }
}

/// Probes growing prefixes of the ranking, retraining each time, and stops
/// at the first one within `delta` of the oracle accuracy on `dev`.
///
/// The result is minimal over the probed step grid only.
pub fn minimal_salient_set(
    ranking: &NeuronRanking,
    train: &LabeledData,
    dev: &LabeledData,
    config: &TrainConfig,
    search: MinimalSetSearch,
    oracle_accuracy: Option<f64>,
) -> Result<MinimalSetResult> {
    search.validate()?;
    let d = ranking.n_neurons();
    let oracle_accuracy = match oracle_accuracy {
        Some(a) => a,
        None => evaluate_subset(&NeuronIndexSet::all(d), train, dev, config)?.accuracy,
    };

    let mut trace = Vec::new();
    for size in search.prefix_sizes(d) {
        let subset = ranking.top_count(size)?;
        let accuracy = evaluate_subset(&subset, train, dev, config)?.accuracy;
        trace.push(TracePoint {
            n_neurons: size,
            accuracy,
        });
        if accuracy >= oracle_accuracy - search.delta {
            return Ok(MinimalSetResult {
                selected: subset,
                oracle_accuracy,
                achieved_accuracy: accuracy,
                delta: search.delta,
                step_fraction: search.step_fraction,
                trace,
            });
        }
    }
    Err(Error::Search(format!(
        "no prefix reached oracle accuracy {oracle_accuracy} - {}",
        search.delta
    )))
}

/// Accuracy of every prefix on the step grid, evaluated as independent
/// jobs. Unlike [`minimal_salient_set`] this never exits early.
pub fn prefix_trace(
    ranking: &NeuronRanking,
    train: &LabeledData,
    dev: &LabeledData,
    config: &TrainConfig,
    step_fraction: f64,
    exec: Execution,
) -> Result<Vec<TracePoint>> {
    let search = MinimalSetSearch {
        delta: 0.0,
        step_fraction,
    };
    search.validate()?;
    let sizes = search.prefix_sizes(ranking.n_neurons());
    par::map(exec, &sizes, |&size| {
        let subset = ranking.top_count(size)?;
        Ok(TracePoint {
            n_neurons: size,
            accuracy: evaluate_subset(&subset, train, dev, config)?.accuracy,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerHistogram {
    pub counts: Vec<usize>,
}

impl LayerHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn layer_distribution(
    subset: &NeuronIndexSet,
    hidden_dim: usize,
    n_layers: usize,
) -> Result<LayerHistogram> {
    subset.check_bounds(hidden_dim * n_layers)?;
    let mut counts = vec![0; n_layers];
    for d in subset.iter() {
        counts[neuron_location(d, hidden_dim).0] += 1;
    }
    Ok(LayerHistogram { counts })
}
