use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{charts, ExperimentConfig, GridSearchResult, Mode};
use crate::control::SelectivityResult;
use crate::error::{Error, Result};
use crate::ranking::MinimalSetResult;
use crate::store::NeuronIndexSet;

pub const REPORT_SCHEMA: &str = "neuroprobe-report";
/// `major.minor`; readers accept any minor version of their major.
pub const REPORT_VERSION: &str = "1.0";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAccuracy {
    pub dev: f64,
    pub test: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerAccuracy {
    pub layer: usize,
    pub dev: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopBottomRow {
    pub fraction: f64,
    pub n_neurons: usize,
    pub top: SplitAccuracy,
    pub bottom: SplitAccuracy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimalSetReport {
    #[serde(flatten)]
    pub result: MinimalSetResult,
    pub test_accuracy: f64,
}

/// Neurons per layer for one subset of the ranking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramReport {
    pub source: String,
    pub n_neurons: usize,
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectivityReport {
    /// Probes on every neuron.
    pub all: SelectivityResult,
    /// Probes on the top-ranked neurons.
    pub top: SelectivityResult,
    pub top_neurons: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub lambda1: f64,
    pub lambda2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSearchResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<SplitAccuracy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_curve: Option<Vec<LayerAccuracy>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_bottom: Option<Vec<TopBottomRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minimal_set: Option<MinimalSetReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histogram: Option<HistogramReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selectivity: Option<SelectivityReport>,
}

impl RunReport {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            lambda1: 0.0,
            lambda2: 0.0,
            grid: None,
            oracle: None,
            layer_curve: None,
            ranking: None,
            top_bottom: None,
            minimal_set: None,
            histogram: None,
            selectivity: None,
        }
    }

    /// Scalar results keyed by a stable dotted name.
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("lambda1".into(), self.lambda1);
        m.insert("lambda2".into(), self.lambda2);
        if let Some(o) = &self.oracle {
            m.insert("oracle.dev".into(), o.dev);
            m.insert("oracle.test".into(), o.test);
        }
        for l in self.layer_curve.iter().flatten() {
            m.insert(format!("layer.{:02}.dev", l.layer), l.dev);
            if let Some(t) = l.test {
                m.insert(format!("layer.{:02}.test", l.layer), t);
            }
        }
        for r in self.top_bottom.iter().flatten() {
            m.insert(format!("top.{}.dev", r.fraction), r.top.dev);
            m.insert(format!("top.{}.test", r.fraction), r.top.test);
            m.insert(format!("bottom.{}.dev", r.fraction), r.bottom.dev);
            m.insert(format!("bottom.{}.test", r.fraction), r.bottom.test);
        }
        if let Some(ms) = &self.minimal_set {
            m.insert("minimal.n_neurons".into(), ms.result.selected.len() as f64);
            m.insert("minimal.dev".into(), ms.result.achieved_accuracy);
            m.insert("minimal.test".into(), ms.test_accuracy);
        }
        if let Some(s) = &self.selectivity {
            m.insert("selectivity.all".into(), s.all.selectivity);
            m.insert("selectivity.top".into(), s.top.selectivity);
        }
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: String,
    pub schema_version: String,
    pub task: String,
    pub mode: Mode,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub config: ExperimentConfig,
    pub runs: Vec<RunReport>,
    /// Mean and spread of every metric over seeds.
    pub summary: BTreeMap<String, MeanStd>,
}

impl ExperimentReport {
    pub fn new(config: ExperimentConfig, n_layers: usize, hidden_dim: usize, runs: Vec<RunReport>) -> Self {
        let mut collected: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &runs {
            for (k, v) in r.metrics() {
                collected.entry(k).or_default().push(v);
            }
        }
        Self {
            schema: REPORT_SCHEMA.into(),
            schema_version: REPORT_VERSION.into(),
            task: config.task.clone(),
            mode: config.mode,
            n_layers,
            hidden_dim,
            config,
            runs,
            summary: collected
                .into_iter()
                .map(|(k, v)| (k, MeanStd::of(&v)))
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let schema = value.get("schema").and_then(|v| v.as_str());
        if schema != Some(REPORT_SCHEMA) {
            return Err(Error::Format(format!("not a {REPORT_SCHEMA} file")));
        }
        let version = value
            .get("schema_version")
            .and_then(|v| v.as_str())
            .unwrap_or("");
        let major = |v: &str| v.split('.').next().map(str::to_string);
        if major(version) != major(REPORT_VERSION) {
            return Err(Error::Format(format!(
                "report schema {version} is not readable by {REPORT_VERSION}"
            )));
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    /// Wall-clock seconds per stage, written to `timings.json` rather than
    /// the report.
    pub timings: BTreeMap<String, f64>,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(Error::from)
}

impl ExperimentOutput {
    /// Writes the report, CSV mirrors, id lists and charts into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let report = &self.report;

        let path = dir.join("report.json");
        write_file(&path, report.to_json()?)?;
        written.push(path);

        let path = dir.join("timings.json");
        write_file(&path, serde_json::to_string_pretty(&self.timings)? + "\n")?;
        written.push(path);

        let runs = &report.runs;
        if runs.iter().any(|r| r.grid.is_some()) {
            let path = dir.join("grid.csv");
            let mut w = csv_writer(&path)?;
            w.write_record(["seed", "lambda1", "lambda2", "dev_accuracy"])?;
            for r in runs {
                for row in r.grid.iter().flat_map(|g| &g.rows) {
                    w.serialize((r.seed, row.lambda1, row.lambda2, row.dev_accuracy))?;
                }
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }

        if runs.iter().any(|r| r.top_bottom.is_some()) {
            let path = dir.join("top_bottom.csv");
            let mut w = csv_writer(&path)?;
            w.write_record([
                "seed", "fraction", "n_neurons", "top_dev", "top_test", "bottom_dev", "bottom_test",
            ])?;
            for r in runs {
                for row in r.top_bottom.iter().flatten() {
                    w.serialize((
                        r.seed,
                        row.fraction,
                        row.n_neurons,
                        row.top.dev,
                        row.top.test,
                        row.bottom.dev,
                        row.bottom.test,
                    ))?;
                }
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }

        if runs.iter().any(|r| r.minimal_set.is_some()) {
            let path = dir.join("minimal_trace.csv");
            let mut w = csv_writer(&path)?;
            w.write_record(["seed", "n_neurons", "dev_accuracy"])?;
            for r in runs {
                for p in r.minimal_set.iter().flat_map(|m| &m.result.trace) {
                    w.serialize((r.seed, p.n_neurons, p.accuracy))?;
                }
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }

        if runs.iter().any(|r| r.selectivity.is_some()) {
            let path = dir.join("selectivity.csv");
            let mut w = csv_writer(&path)?;
            w.write_record(["seed", "neurons", "n_neurons", "linguistic", "control", "selectivity"])?;
            let all = report.n_layers * report.hidden_dim;
            for r in runs {
                if let Some(s) = &r.selectivity {
                    for (name, n, res) in [("all", all, &s.all), ("top", s.top_neurons, &s.top)] {
                        w.serialize((
                            r.seed,
                            name,
                            n,
                            res.linguistic_accuracy,
                            res.control_accuracy,
                            res.selectivity,
                        ))?;
                    }
                }
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }

        for r in runs {
            if let Some(order) = &r.ranking {
                let path = dir.join(format!("ranking_seed{}.txt", r.seed));
                let mut buf = Vec::new();
                NeuronIndexSet::new(order.clone())?
                    .write_ids(&mut buf, report.hidden_dim)
                    .map_err(|e| Error::io(&path, e))?;
                write_file(&path, buf)?;
                written.push(path);
            }
            if let Some(ms) = &r.minimal_set {
                let path = dir.join(format!("minimal_set_seed{}.txt", r.seed));
                let mut buf = Vec::new();
                ms.result
                    .selected
                    .write_ids(&mut buf, report.hidden_dim)
                    .map_err(|e| Error::io(&path, e))?;
                write_file(&path, buf)?;
                written.push(path);
            }
        }

        written.extend(charts::emit_charts(report, dir)?);
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert!((m.std - 1.0).abs() < 1e-12);
        assert_eq!(MeanStd::of(&[5.0]).std, 0.0);
    }

    #[test]
    fn rejects_other_schemas() {
        assert!(ExperimentReport::from_json(r#"{"schema":"other"}"#).is_err());
        let err = ExperimentReport::from_json(r#"{"schema":"neuroprobe-report","schema_version":"2.0"}"#)
            .unwrap_err();
        assert!(err.to_string().contains("2.0"));
    }
}
