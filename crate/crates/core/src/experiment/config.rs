//! Experiment configuration and its key-value file format.
//!
//! A config file holds one `key = value` pair per line; `#` starts a
//! comment. Lists are comma separated. Relative paths are resolved against
//! the directory of the config file.
//!
//! ```text
//! task = pos
//! activations = acts.nxa          # one corpus, split by `split`
//! labels = pos.txt
//! tokens = tokens.txt             # needed for selectivity
//! split = 0.8:0.1:0.1
//! # or explicit files per split:
//! # train.activations = train.nxa
//! # train.labels = train.pos
//! # dev.activations = ...
//! grid = 0,0.1,0.01,0.001
//! fractions = 0.05,0.1
//! seeds = 1,2,3
//! ```
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `task` | task name echoed in reports | `task` |
//! | `activations`, `labels`, `tokens` | single corpus | |
//! | `{train,dev,test}.{activations,labels,tokens}` | explicit splits | |
//! | `split` | train:dev:test fractions | `0.8:0.1:0.1` |
//! | `split_seed` | seed of the sentence shuffle | `0` |
//! | `seed` / `seeds` | probe training seed(s) | `0` |
//! | `lambda1`, `lambda2` | fixed penalties (skip grid search) | |
//! | `grid` | values tried for both λ₁ and λ₂ | `0,1e-1,…,1e-7` |
//! | `grid_fraction` | top fraction of neurons used during grid search | `0.2` |
//! | `fractions` | top/bottom fractions | `0.05` |
//! | `count` | explicit top/bottom size, overrides `fractions` | |
//! | `delta` | minimal-set tolerance, accuracy fraction | `0.01` |
//! | `step` | minimal-set step, fraction of neurons | `0.01` |
//! | `epochs`, `batch_size`, `learning_rate`, `standardize` | probe training | `10`, `512`, `1e-3`, `true` |
//! | `control_seed` | seed of the control task | `0` |
//! | `workers` | size of the worker pool | all cores |
//! | `execution` | `parallel` or `sequential` | `parallel` |

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Execution;
use crate::probe::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Layerwise,
    NeuronRank,
    MinimalSet,
    TopBottom,
    Selectivity,
    Grid,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Layerwise => "layerwise",
            Mode::NeuronRank => "neuron-rank",
            Mode::MinimalSet => "minimal-set",
            Mode::TopBottom => "top-bottom",
            Mode::Selectivity => "selectivity",
            Mode::Grid => "grid",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "layerwise" => Mode::Layerwise,
            "neuron-rank" | "rank" => Mode::NeuronRank,
            "minimal-set" | "minimal" => Mode::MinimalSet,
            "top-bottom" | "topbottom" => Mode::TopBottom,
            "selectivity" => Mode::Selectivity,
            "grid" => Mode::Grid,
            other => return Err(Error::Config(format!("unknown mode {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFiles {
    pub activations: PathBuf,
    pub labels: PathBuf,
    pub tokens: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    /// One corpus, split by sentence.
    Corpus {
        #[serde(flatten)]
        files: SplitFiles,
        fractions: [f64; 3],
        seed: u64,
    },
    PerSplit {
        train: SplitFiles,
        dev: SplitFiles,
        test: SplitFiles,
    },
}

impl DataSource {
    fn files(&self) -> Vec<&SplitFiles> {
        match self {
            DataSource::Corpus { files, .. } => vec![files],
            DataSource::PerSplit { train, dev, test } => vec![train, dev, test],
        }
    }

    pub fn has_tokens(&self) -> bool {
        self.files().iter().all(|f| f.tokens.is_some())
    }
}

pub fn default_grid() -> Vec<f64> {
    let mut grid = vec![0.0];
    grid.extend((1..=7).map(|k| 10f64.powi(-k)));
    grid
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: String,
    pub mode: Mode,
    pub data: DataSource,
    /// Fixed `(λ₁, λ₂)`; when absent the grid search picks them.
    pub lambdas: Option<(f64, f64)>,
    pub grid: Vec<f64>,
    pub grid_fixed_fraction: f64,
    pub fractions: Vec<f64>,
    pub top_count: Option<usize>,
    pub delta: f64,
    pub step_fraction: f64,
    pub seeds: Vec<u64>,
    pub control_seed: u64,
    pub train: TrainConfig,
    #[serde(skip)]
    pub workers: Option<usize>,
    #[serde(skip)]
    pub execution: Execution,
}

impl ExperimentConfig {
    pub fn new(task: impl Into<String>, mode: Mode, data: DataSource) -> Self {
        Self {
            task: task.into(),
            mode,
            data,
            lambdas: None,
            grid: default_grid(),
            grid_fixed_fraction: 0.2,
            fractions: vec![0.05],
            top_count: None,
            delta: 0.01,
            step_fraction: 0.01,
            seeds: vec![0],
            control_seed: 0,
            train: TrainConfig::default(),
            workers: None,
            execution: Execution::default(),
        }
    }

    /// Training config for one seed with the given penalties.
    pub fn train_config(&self, seed: u64, lambda1: f64, lambda2: f64) -> TrainConfig {
        self.train.clone().with_seed(seed).with_lambdas(lambda1, lambda2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.grid.is_empty() && self.lambdas.is_none() {
            return bad("lambda grid is empty".into());
        }
        let mut seen = BTreeSet::new();
        for &g in &self.grid {
            if !(g.is_finite() && g >= 0.0) {
                return bad(format!("grid value {g} is not a non-negative number"));
            }
            if !seen.insert(g.to_bits()) {
                return bad(format!("grid value {g} appears twice"));
            }
        }
        if let Some((l1, l2)) = self.lambdas {
            if !(l1 >= 0.0 && l2 >= 0.0 && l1.is_finite() && l2.is_finite()) {
                return bad(format!("lambdas must be non-negative, got ({l1}, {l2})"));
            }
        }
        let in_unit = |f: f64| f > 0.0 && f <= 1.0;
        if !in_unit(self.grid_fixed_fraction) {
            return bad(format!("grid fraction {} outside (0, 1]", self.grid_fixed_fraction));
        }
        if self.fractions.is_empty() || !self.fractions.iter().all(|&f| in_unit(f)) {
            return bad(format!("fractions {:?} must be non-empty and in (0, 1]", self.fractions));
        }
        if self.top_count == Some(0) {
            return bad("count must be at least 1".into());
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be >= 0, got {}", self.delta));
        }
        if !in_unit(self.step_fraction) {
            return bad(format!("step {} outside (0, 1]", self.step_fraction));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        self.train.validate()?;
        if self.mode == Mode::Selectivity && !self.data.has_tokens() {
            return bad("selectivity needs token files".into());
        }
        for files in self.data.files() {
            for p in [Some(&files.activations), Some(&files.labels), files.tokens.as_ref()]
                .into_iter()
                .flatten()
            {
                if !p.exists() {
                    return bad(format!("{} does not exist", p.display()));
                }
            }
        }
        Ok(())
    }
}

/// Ordered `key = value` settings, as read from a config file and/or built
/// from command-line flags. Later insertions win.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

const PATH_KEYS: [&str; 12] = [
    "activations",
    "labels",
    "tokens",
    "train.activations",
    "train.labels",
    "train.tokens",
    "dev.activations",
    "dev.labels",
    "dev.tokens",
    "test.activations",
    "test.labels",
    "test.tokens",
];

const KNOWN_KEYS: [&str; 23] = [
    "task",
    "mode",
    "split",
    "split_seed",
    "seed",
    "seeds",
    "lambda1",
    "lambda2",
    "grid",
    "grid_fraction",
    "fractions",
    "fraction",
    "count",
    "delta",
    "step",
    "epochs",
    "batch_size",
    "learning_rate",
    "standardize",
    "control_seed",
    "workers",
    "execution",
    "out",
];

impl Settings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines. Relative paths are joined onto `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut s = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got {raw:?}", i + 1))
            })?;
            let (key, mut value) = (key.trim().to_string(), value.trim().to_string());
            if PATH_KEYS.contains(&key.as_str()) {
                if let Some(base) = base {
                    let p = Path::new(&value);
                    if p.is_relative() {
                        value = base.join(p).to_string_lossy().into_owned();
                    }
                }
            }
            s.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent())
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) -> Result<()> {
        let key = key.into();
        if !PATH_KEYS.contains(&key.as_str()) && !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        self.values.insert(key, value.into());
        Ok(())
    }

    /// Copies every value of `other` over this one.
    pub fn merge(&mut self, other: &Settings) {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("{key} = {v:?}: {e}")))
            })
            .transpose()
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<T>()
                            .map_err(|e| Error::Config(format!("{key}: {s:?}: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }

    fn split_files(&self, prefix: &str) -> Option<SplitFiles> {
        let key = |k: &str| {
            if prefix.is_empty() {
                k.to_string()
            } else {
                format!("{prefix}.{k}")
            }
        };
        Some(SplitFiles {
            activations: self.get(&key("activations"))?.into(),
            labels: self.get(&key("labels"))?.into(),
            tokens: self.get(&key("tokens")).map(PathBuf::from),
        })
    }

    pub fn out_dir(&self) -> Option<PathBuf> {
        self.get("out").map(PathBuf::from)
    }

    /// Builds a config; `mode` overrides any `mode` key.
    pub fn to_config(&self, mode: Option<Mode>) -> Result<ExperimentConfig> {
        let mode = match mode {
            Some(m) => m,
            None => self
                .parsed::<Mode>("mode")?
                .ok_or_else(|| Error::Config("no mode given".into()))?,
        };

        let per_split = ["train", "dev", "test"].map(|p| self.split_files(p));
        let data = match (self.split_files(""), per_split) {
            (_, [Some(train), Some(dev), Some(test)]) => DataSource::PerSplit { train, dev, test },
            (Some(files), _) => {
                let fractions = match self.get("split") {
                    Some(v) => parse_split(v)?,
                    None => [0.8, 0.1, 0.1],
                };
                DataSource::Corpus {
                    files,
                    fractions,
                    seed: self.parsed("split_seed")?.unwrap_or(0),
                }
            }
            _ => {
                return Err(Error::Config(
                    "need `activations` and `labels`, or train/dev/test files".into(),
                ))
            }
        };

        let mut cfg = ExperimentConfig::new(
            self.get("task").unwrap_or("task"),
            mode,
            data,
        );
        match (self.parsed::<f64>("lambda1")?, self.parsed::<f64>("lambda2")?) {
            (None, None) => {}
            (l1, l2) => cfg.lambdas = Some((l1.unwrap_or(0.0), l2.unwrap_or(0.0))),
        }
        if let Some(g) = self.list("grid")? {
            cfg.grid = g;
        }
        if let Some(f) = self.parsed("grid_fraction")? {
            cfg.grid_fixed_fraction = f;
        }
        if let Some(f) = self.list("fractions")?.or(self.list("fraction")?) {
            cfg.fractions = f;
        }
        cfg.top_count = self.parsed("count")?;
        if let Some(d) = self.parsed("delta")? {
            cfg.delta = d;
        }
        if let Some(s) = self.parsed("step")? {
            cfg.step_fraction = s;
        }
        if let Some(s) = self.list("seeds")? {
            cfg.seeds = s;
        } else if let Some(s) = self.parsed("seed")? {
            cfg.seeds = vec![s];
        }
        if let Some(s) = self.parsed("control_seed")? {
            cfg.control_seed = s;
        }
        if let Some(e) = self.parsed("epochs")? {
            cfg.train.epochs = e;
        }
        if let Some(b) = self.parsed("batch_size")? {
            cfg.train.batch_size = b;
        }
        if let Some(lr) = self.parsed("learning_rate")? {
            cfg.train.learning_rate = lr;
        }
        if let Some(s) = self.parsed("standardize")? {
            cfg.train.standardize = s;
        }
        cfg.workers = self.parsed("workers")?;
        cfg.execution = match self.get("execution") {
            None | Some("parallel") => Execution::Parallel,
            Some("sequential") => Execution::Sequential,
            Some(other) => return Err(Error::Config(format!("unknown execution {other:?}"))),
        };
        Ok(cfg)
    }
}

/// Parses `train:dev:test` fractions such as `0.8:0.1:0.1`.
pub fn parse_split(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("split {s:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| Error::Config(format!("split {s:?} needs three parts")))
}
