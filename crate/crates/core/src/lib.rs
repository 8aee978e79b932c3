//! Probing toolkit for per-token neural activations.
//!
//! The crate trains elastic-net logistic-regression probes on activation
//! dumps, probes individual layers, ranks neurons by their probe weights,
//! searches for minimal salient neuron sets, and measures selectivity
//! against control tasks.
//!
//! Module map:
//!
//! - [`store`]: `.nxa` activation files, label/token files, column slicing, splits
//! - [`probe`]: loss, gradient, Adam training and evaluation
//! - [`ranking`]: neuron ranking, top/bottom subsets, minimal sets, layer histograms
//! - [`control`]: control tasks and selectivity
//! - [`experiment`]: grid search, layer sweeps, reports and charts
//! - [`par`]: parallel job execution with a sequential fallback

pub mod control;
pub mod error;
pub mod experiment;
pub mod par;
pub mod probe;
pub mod ranking;
pub mod store;
pub mod synthetic;

pub use error::{Error, Result};
pub use par::Execution;
pub use probe::{evaluate, train, EvalResult, ProbeModel, TrainConfig};
pub use ranking::{rank_neurons, LayerHistogram, MinimalSetResult, NeuronRanking};
pub use store::{ActivationDataset, LabelSet, LabeledData, NeuronIndexSet, TokenCorpus};
