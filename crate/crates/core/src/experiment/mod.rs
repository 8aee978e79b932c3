//! Experiment orchestration: grid search, layer sweeps, neuron-level
//! analyses and report assembly.
//!
//! Every independent probe (grid point, layer, top/bottom subset) is a job
//! run through [`crate::par`]; each job is internally sequential and seeded.

mod charts;
mod config;
mod report;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use charts::{emit_charts, emit_comparison_charts};
pub use config::{
    default_grid, parse_split, DataSource, ExperimentConfig, Mode, Settings, SplitFiles,
};
pub use report::{
    ExperimentOutput, ExperimentReport, HistogramReport, LayerAccuracy, MeanStd,
    MinimalSetReport, RunReport, SelectivityReport, SplitAccuracy, TopBottomRow,
    REPORT_SCHEMA, REPORT_VERSION,
};

use crate::control::{make_control_with_tags, selectivity};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::probe::{self, TrainConfig};
use crate::ranking::{
    evaluate_on_subset, layer_distribution, minimal_salient_set, rank_neurons, subset_size,
    train_subset, MinimalSetSearch, NeuronRanking,
};
use crate::store::{
    ActivationDataset, LabelSet, LabeledData, NeuronIndexSet, SplitPlan, Splits, TokenCorpus,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub lambda1: f64,
    pub lambda2: f64,
    pub dev_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFailure {
    pub lambda1: f64,
    pub lambda2: f64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Size of the provisional top-neuron subset every grid point trains on.
    pub n_neurons: usize,
    pub rows: Vec<GridRow>,
    pub failed: Vec<GridFailure>,
}

/// Picks `(λ₁, λ₂)` by dev accuracy over `grid × grid`.
///
/// Every grid point trains on the same fixed top fraction of neurons, taken
/// from an unregularized provisional probe. Ties prefer the smaller λ₁, then
/// the smaller λ₂.
pub fn grid_search(
    train: &LabeledData,
    dev: &LabeledData,
    grid: &[f64],
    fixed_fraction: f64,
    base: &TrainConfig,
    exec: Execution,
) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    let provisional = probe::train(train, &base.clone().with_lambdas(0.0, 0.0))?;
    let ranking = rank_neurons(&provisional)?;
    let subset = ranking.top_fraction(fixed_fraction)?;
    let train_sub = train.slice_columns(&subset)?;
    let dev_sub = dev.slice_columns(&subset)?;

    let points: Vec<(f64, f64)> = grid
        .iter()
        .flat_map(|&l1| grid.iter().map(move |&l2| (l1, l2)))
        .collect();
    let outcomes = par::map(exec, &points, |&(l1, l2)| {
        let model = probe::train(&train_sub, &base.clone().with_lambdas(l1, l2))?;
        Ok::<_, Error>(probe::evaluate_with(&model, &dev_sub, Execution::Sequential)?.accuracy)
    });

    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for (&(lambda1, lambda2), outcome) in points.iter().zip(outcomes) {
        match outcome {
            Ok(dev_accuracy) => rows.push(GridRow {
                lambda1,
                lambda2,
                dev_accuracy,
            }),
            Err(e) => {
                log::warn!("grid point ({lambda1}, {lambda2}) failed: {e}");
                failed.push(GridFailure {
                    lambda1,
                    lambda2,
                    error: e.to_string(),
                });
            }
        }
    }
    let best = rows
        .iter()
        .min_by(|a, b| {
            b.dev_accuracy
                .total_cmp(&a.dev_accuracy)
                .then(a.lambda1.total_cmp(&b.lambda1))
                .then(a.lambda2.total_cmp(&b.lambda2))
        })
        .ok_or_else(|| Error::Search("every grid point failed".into()))?;
    Ok(GridSearchResult {
        lambda1: best.lambda1,
        lambda2: best.lambda2,
        n_neurons: subset.len(),
        rows,
        failed,
    })
}

fn layer_data(data: &LabeledData, layer: usize) -> Result<LabeledData> {
    Ok(LabeledData {
        activations: data.activations.layer(layer)?,
        labels: data.labels.clone(),
    })
}

/// One probe per layer block, ordered layer `0..L`.
pub fn layerwise_sweep(
    train: &LabeledData,
    dev: &LabeledData,
    test: Option<&LabeledData>,
    config: &TrainConfig,
    exec: Execution,
) -> Result<Vec<LayerAccuracy>> {
    let layers: Vec<usize> = (0..train.activations.n_layers()).collect();
    par::map(exec, &layers, |&layer| {
        let model = probe::train(&layer_data(train, layer)?, config)?;
        let eval = |d: &LabeledData| -> Result<f64> {
            Ok(probe::evaluate_with(&model, &layer_data(d, layer)?, Execution::Sequential)?.accuracy)
        };
        Ok(LayerAccuracy {
            layer,
            dev: eval(dev)?,
            test: test.map(eval).transpose()?,
        })
    })
    .into_iter()
    .collect()
}

/// Loaded, split, and (when tokens exist) control-labelled data.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub splits: Splits,
    pub control: Option<Splits>,
}

impl ExperimentData {
    pub fn n_layers(&self) -> usize {
        self.splits.train.activations.n_layers()
    }

    pub fn hidden_dim(&self) -> usize {
        self.splits.train.activations.hidden_dim()
    }

    pub fn load(source: &DataSource, control_seed: u64) -> Result<Self> {
        match source {
            DataSource::Corpus {
                files,
                fractions,
                seed,
            } => {
                let acts = ActivationDataset::load(&files.activations)?;
                let labels = LabelSet::load(&files.labels, &acts)?;
                let tokens = files
                    .tokens
                    .as_ref()
                    .map(|p| TokenCorpus::load(p, &acts))
                    .transpose()?;
                Self::from_corpus(LabeledData::new(acts, labels)?, tokens.as_ref(), *fractions, *seed, control_seed)
            }
            DataSource::PerSplit { train, dev, test } => {
                let load = |f: &SplitFiles, base: &[String]| -> Result<(LabeledData, Option<TokenCorpus>)> {
                    let acts = ActivationDataset::load(&f.activations)?;
                    let labels = LabelSet::load_with_vocabulary(&f.labels, &acts, base)?;
                    let tokens = f.tokens.as_ref().map(|p| TokenCorpus::load(p, &acts)).transpose()?;
                    Ok((LabeledData::new(acts, labels)?, tokens))
                };
                let (tr, tr_tok) = load(train, &[])?;
                let vocab = tr.labels.vocabulary().to_vec();
                let (dv, dv_tok) = load(dev, &vocab)?;
                let (ts, ts_tok) = load(test, &vocab)?;
                for d in [&dv, &ts] {
                    if d.activations.n_neurons() != tr.activations.n_neurons() {
                        return Err(Error::Shape(format!(
                            "split widths differ: {} vs {}",
                            d.activations.n_neurons(),
                            tr.activations.n_neurons()
                        )));
                    }
                }
                let n_tags = vocab.len();
                let control = match (tr_tok, dv_tok, ts_tok) {
                    (Some(a), Some(b), Some(c)) => {
                        let ctl = |d: &LabeledData, t: &TokenCorpus| -> Result<LabeledData> {
                            let c = make_control_with_tags(t, &d.labels, n_tags, control_seed)?;
                            d.with_labels(c.to_label_set())
                        };
                        Some(Splits {
                            train: ctl(&tr, &a)?,
                            dev: ctl(&dv, &b)?,
                            test: ctl(&ts, &c)?,
                        })
                    }
                    _ => None,
                };
                Ok(Self {
                    splits: Splits {
                        train: tr,
                        dev: dv,
                        test: ts,
                    },
                    control,
                })
            }
        }
    }

    pub fn from_corpus(
        data: LabeledData,
        tokens: Option<&TokenCorpus>,
        fractions: [f64; 3],
        split_seed: u64,
        control_seed: u64,
    ) -> Result<Self> {
        let plan = SplitPlan::new(data.activations.n_sentences(), fractions, split_seed)?;
        let cut = |d: &LabeledData| Splits {
            train: d.select_sentences(&plan.train),
            dev: d.select_sentences(&plan.dev),
            test: d.select_sentences(&plan.test),
        };
        let control = tokens
            .map(|t| -> Result<Splits> {
                let c = make_control_with_tags(t, &data.labels, data.labels.n_tags(), control_seed)?;
                Ok(cut(&data.with_labels(c.to_label_set())?))
            })
            .transpose()?;
        Ok(Self {
            splits: cut(&data),
            control,
        })
    }
}

struct Stopwatch<'a> {
    timings: &'a mut BTreeMap<String, f64>,
    prefix: String,
}

impl Stopwatch<'_> {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| e.in_stage(stage));
        self.timings.insert(
            format!("{}{stage}", self.prefix),
            start.elapsed().as_secs_f64(),
        );
        out
    }
}

fn both(model: &crate::ProbeModel, subset: &NeuronIndexSet, splits: &Splits) -> Result<SplitAccuracy> {
    Ok(SplitAccuracy {
        dev: evaluate_on_subset(model, subset, &splits.dev)?.accuracy,
        test: evaluate_on_subset(model, subset, &splits.test)?.accuracy,
    })
}

fn subset_for(cfg: &ExperimentConfig, ranking: &NeuronRanking, fraction: f64, top: bool) -> Result<NeuronIndexSet> {
    let n = match cfg.top_count {
        Some(c) => c.min(ranking.n_neurons()),
        None => subset_size(fraction, ranking.n_neurons())?,
    };
    if top {
        ranking.top_count(n)
    } else {
        ranking.bottom_count(n)
    }
}

fn run_seed(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    seed: u64,
    timings: &mut BTreeMap<String, f64>,
) -> Result<RunReport> {
    let exec = cfg.execution;
    let splits = &data.splits;
    let mut sw = Stopwatch {
        timings,
        prefix: format!("seed{seed}."),
    };
    let mut run = RunReport::new(seed);

    let (lambda1, lambda2) = match cfg.lambdas {
        Some(l) => l,
        None => {
            let base = cfg.train_config(seed, 0.0, 0.0);
            let grid = sw.time("grid", || {
                grid_search(&splits.train, &splits.dev, &cfg.grid, cfg.grid_fixed_fraction, &base, exec)
            })?;
            let chosen = (grid.lambda1, grid.lambda2);
            run.grid = Some(grid);
            chosen
        }
    };
    run.lambda1 = lambda1;
    run.lambda2 = lambda2;
    let tc = cfg.train_config(seed, lambda1, lambda2);

    match cfg.mode {
        Mode::Grid => return Ok(run),
        Mode::Layerwise => {
            run.layer_curve = Some(sw.time("layerwise", || {
                layerwise_sweep(&splits.train, &splits.dev, Some(&splits.test), &tc, exec)
            })?);
            return Ok(run);
        }
        _ => {}
    }

    let d = splits.train.activations.n_neurons();
    let all = NeuronIndexSet::all(d);
    let oracle = sw.time("oracle", || probe::train(&splits.train, &tc))?;
    let oracle_acc = sw.time("oracle-eval", || both(&oracle, &all, splits))?;
    run.oracle = Some(oracle_acc.clone());
    let ranking = sw.time("rank", || rank_neurons(&oracle))?;
    run.ranking = Some(ranking.order.clone());

    let histogram = |subset: &NeuronIndexSet, source: String| -> Result<HistogramReport> {
        let h = layer_distribution(subset, data.hidden_dim(), data.n_layers())?;
        Ok(HistogramReport {
            source,
            n_neurons: subset.len(),
            counts: h.counts,
        })
    };
    let label = |f: f64| match cfg.top_count {
        Some(c) => format!("top {c}"),
        None => format!("top {}", f),
    };

    match cfg.mode {
        Mode::NeuronRank => {
            let f = cfg.fractions[0];
            let top = subset_for(cfg, &ranking, f, true)?;
            run.histogram = Some(histogram(&top, label(f))?);
        }
        Mode::TopBottom => {
            let jobs: Vec<(f64, bool)> = cfg
                .fractions
                .iter()
                .flat_map(|&f| [(f, true), (f, false)])
                .collect();
            let results = sw.time("top-bottom", || {
                par::map(exec, &jobs, |&(f, top)| {
                    let subset = subset_for(cfg, &ranking, f, top)?;
                    let model = train_subset(&subset, &splits.train, &tc)?;
                    Ok((subset.len(), both(&model, &subset, splits)?))
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()
            })?;
            run.top_bottom = Some(
                results
                    .chunks(2)
                    .zip(&cfg.fractions)
                    .map(|(pair, &fraction)| TopBottomRow {
                        fraction,
                        n_neurons: pair[0].0,
                        top: pair[0].1.clone(),
                        bottom: pair[1].1.clone(),
                    })
                    .collect(),
            );
            let f = cfg.fractions[0];
            run.histogram = Some(histogram(&subset_for(cfg, &ranking, f, true)?, label(f))?);
        }
        Mode::MinimalSet => {
            let search = MinimalSetSearch {
                delta: cfg.delta,
                step_fraction: cfg.step_fraction,
            };
            let result = sw.time("minimal-set", || {
                minimal_salient_set(&ranking, &splits.train, &splits.dev, &tc, search, Some(oracle_acc.dev))
            })?;
            let model = train_subset(&result.selected, &splits.train, &tc)?;
            let test_accuracy = evaluate_on_subset(&model, &result.selected, &splits.test)?.accuracy;
            run.histogram = Some(histogram(&result.selected, "minimal set".into())?);
            run.minimal_set = Some(MinimalSetReport {
                result,
                test_accuracy,
            });
        }
        Mode::Selectivity => {
            let control = data
                .control
                .as_ref()
                .ok_or_else(|| Error::Config("selectivity needs token files".into()).in_stage("selectivity"))?;
            let f = cfg.fractions[0];
            let top = subset_for(cfg, &ranking, f, true)?;
            let report = sw.time("selectivity", || {
                let sel = |subset: &NeuronIndexSet| -> Result<_> {
                    let ling = (
                        &splits.train.slice_columns(subset)?,
                        &splits.test.slice_columns(subset)?,
                    );
                    let ctl = (
                        &control.train.slice_columns(subset)?,
                        &control.test.slice_columns(subset)?,
                    );
                    selectivity(&tc, ling, ctl, exec)
                };
                let (all_sel, top_sel) = par::join(exec, || sel(&all), || sel(&top));
                Ok(SelectivityReport {
                    all: all_sel?,
                    top: top_sel?,
                    top_neurons: top.len(),
                })
            })?;
            run.selectivity = Some(report);
            run.histogram = Some(histogram(&top, label(f))?);
        }
        Mode::Grid | Mode::Layerwise => unreachable!(),
    }
    Ok(run)
}

/// Executes the configured mode for every seed.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    par::with_workers(cfg.workers, || {
        let mut timings = BTreeMap::new();
        let start = Instant::now();
        let data = ExperimentData::load(&cfg.data, cfg.control_seed).map_err(|e| e.in_stage("load"))?;
        timings.insert("load".to_string(), start.elapsed().as_secs_f64());
        run_with_data(cfg, &data, timings)
    })
}

/// Like [`run`] on already-loaded data.
pub fn run_with_data(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    mut timings: BTreeMap<String, f64>,
) -> Result<ExperimentOutput> {
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        runs.push(run_seed(cfg, data, seed, &mut timings)?);
    }
    let report = ExperimentReport::new(cfg.clone(), data.n_layers(), data.hidden_dim(), runs);
    Ok(ExperimentOutput { report, timings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{LayerTask, PlantedTask};

    fn quick() -> TrainConfig {
        TrainConfig {
            batch_size: 64,
            ..TrainConfig::default()
        }
    }

    fn planted(seed: u64) -> ExperimentData {
        let task = PlantedTask {
            n_sentences: 60,
            sentence_len: 20,
            n_layers: 2,
            hidden_dim: 30,
            planted: vec![4, 33, 50],
            seed,
        }
        .generate()
        .unwrap();
        ExperimentData::from_corpus(task.data, Some(&task.tokens), [0.7, 0.15, 0.15], seed, 1).unwrap()
    }

    #[test]
    fn single_point_grid() {
        let d = planted(1);
        let g = grid_search(&d.splits.train, &d.splits.dev, &[0.0], 0.2, &quick(), Execution::Parallel).unwrap();
        assert_eq!((g.lambda1, g.lambda2), (0.0, 0.0));
        assert_eq!(g.rows.len(), 1);
        assert_eq!(g.n_neurons, 12);
    }

    #[test]
    fn grid_table_and_order_independence() {
        let d = planted(2);
        let grid = [0.0, 1e-3, 1e-1];
        let par = grid_search(&d.splits.train, &d.splits.dev, &grid, 0.2, &quick(), Execution::Parallel).unwrap();
        let seq = grid_search(&d.splits.train, &d.splits.dev, &grid, 0.2, &quick(), Execution::Sequential).unwrap();
        assert_eq!(par, seq);
        assert_eq!(par.rows.len() + par.failed.len(), 9);
        let best = par.rows.iter().map(|r| r.dev_accuracy).fold(0.0, f64::max);
        let chosen = par
            .rows
            .iter()
            .find(|r| r.lambda1 == par.lambda1 && r.lambda2 == par.lambda2)
            .unwrap();
        assert_eq!(chosen.dev_accuracy, best);
    }

    #[test]
    fn layer_sweep_finds_planted_layer() {
        let task = LayerTask {
            n_sentences: 60,
            sentence_len: 20,
            n_layers: 3,
            hidden_dim: 20,
            target_layer: 2,
            n_tags: 3,
            seed: 5,
        }
        .generate()
        .unwrap();
        let d = ExperimentData::from_corpus(task.data, None, [0.7, 0.15, 0.15], 5, 0).unwrap();
        let curve = layerwise_sweep(&d.splits.train, &d.splits.dev, None, &quick(), Execution::Parallel).unwrap();
        assert_eq!(curve.len(), 3);
        let best = curve.iter().max_by(|a, b| a.dev.total_cmp(&b.dev)).unwrap();
        assert_eq!(best.layer, 2);
        assert!(curve.iter().all(|c| c.test.is_none()));
    }

    #[test]
    fn identical_layers_identical_accuracy() {
        let n = 200usize;
        let mut data = Vec::new();
        for i in 0..n {
            let v = [(i % 7) as f32, (i % 3) as f32 - 1.0];
            data.extend_from_slice(&v);
            data.extend_from_slice(&v);
        }
        let lengths = vec![10u32; n / 10];
        let acts = ActivationDataset::new(2, 2, lengths.clone(), data).unwrap();
        let tags = (0..n).map(|i| u32::from(i % 3 == 0)).collect();
        let labels = LabelSet::new(tags, vec!["a".into(), "b".into()], lengths).unwrap();
        let d = ExperimentData::from_corpus(LabeledData::new(acts, labels).unwrap(), None, [0.6, 0.2, 0.2], 0, 0).unwrap();
        let curve = layerwise_sweep(&d.splits.train, &d.splits.dev, None, &quick(), Execution::Parallel).unwrap();
        assert!((curve[0].dev - curve[1].dev).abs() < 1e-9);
    }

    #[test]
    fn stage_errors_are_named() {
        let d = planted(3);
        let mut cfg = ExperimentConfig::new(
            "t",
            Mode::Selectivity,
            DataSource::PerSplit {
                train: SplitFiles { activations: "a".into(), labels: "b".into(), tokens: None },
                dev: SplitFiles { activations: "a".into(), labels: "b".into(), tokens: None },
                test: SplitFiles { activations: "a".into(), labels: "b".into(), tokens: None },
            },
        );
        cfg.lambdas = Some((0.0, 0.0));
        let no_control = ExperimentData { splits: d.splits.clone(), control: None };
        let err = run_with_data(&cfg, &no_control, BTreeMap::new()).unwrap_err();
        assert_eq!(err.stage(), Some("selectivity"));
    }
}
