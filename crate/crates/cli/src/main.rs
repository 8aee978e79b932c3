use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use neuroprobe::experiment::{self, emit_comparison_charts, ExperimentReport, Mode, Settings};
use neuroprobe::synthetic::{LayerTask, PlantedTask, SyntheticTask, TypeIdentityTask};
use neuroprobe::Error;

/// Probe per-token activation dumps with elastic-net logistic regression,
/// rank neurons, and measure selectivity.
#[derive(Parser, Debug)]
#[command(name = "neuroprobe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One probe per layer block.
    Layerwise(RunArgs),
    /// Train on all neurons and rank them.
    Rank(RunArgs),
    /// Smallest ranked prefix matching the full-network probe.
    Minimal(RunArgs),
    /// Probes on the top and bottom ranked neurons.
    Topbottom(RunArgs),
    /// Linguistic vs control-task accuracy.
    Selectivity(RunArgs),
    /// Search the regularization grid only.
    Grid(RunArgs),
    /// Compare saved reports and draw their charts.
    Report(ReportArgs),
    /// Write a synthetic dataset for trying the other commands.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Key-value config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    /// Activation file (.nxa).
    #[arg(long)]
    activations: Option<PathBuf>,
    /// Label file, one tag per token.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Token file, needed for selectivity.
    #[arg(long)]
    tokens: Option<PathBuf>,
    /// Sentence split fractions, `train:dev:test`.
    #[arg(long, value_name = "TRAIN:DEV:TEST")]
    split: Option<String>,
    #[arg(long)]
    split_seed: Option<u64>,
    /// Probe training seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Several seeds; reports carry mean and std over them.
    #[arg(long, value_name = "A,B,C")]
    seeds: Option<String>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    /// Values tried for both penalties when no lambda is fixed.
    #[arg(long, value_name = "V,V,...", conflicts_with_all = ["lambda1", "lambda2"])]
    grid: Option<String>,
    /// Fraction of neurons used during the grid search.
    #[arg(long)]
    grid_fraction: Option<f64>,
    /// Top/bottom fraction(s) of neurons, comma separated.
    #[arg(long, value_name = "F,F,...")]
    fraction: Option<String>,
    /// Explicit number of top/bottom neurons.
    #[arg(long)]
    count: Option<usize>,
    /// Minimal-set tolerance as an accuracy fraction.
    #[arg(long)]
    delta: Option<f64>,
    /// Minimal-set step as a fraction of all neurons.
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Train on raw activations instead of z-scores.
    #[arg(long)]
    no_standardize: bool,
    #[arg(long)]
    control_seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Run every job on the calling thread.
    #[arg(long)]
    sequential: bool,
    /// Output directory; the report goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn settings(&self) -> Result<Settings, Error> {
        let mut s = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::new(),
        };
        let mut flags = Settings::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned());
        let pairs = [
            ("task", self.task.clone()),
            ("activations", path(&self.activations)),
            ("labels", path(&self.labels)),
            ("tokens", path(&self.tokens)),
            ("split", self.split.clone()),
            ("split_seed", self.split_seed.map(|v| v.to_string())),
            ("seeds", self.seeds.clone()),
            ("seeds", self.seed.map(|v| v.to_string())),
            ("lambda1", self.lambda1.map(|v| v.to_string())),
            ("lambda2", self.lambda2.map(|v| v.to_string())),
            ("grid", self.grid.clone()),
            ("grid_fraction", self.grid_fraction.map(|v| v.to_string())),
            ("fractions", self.fraction.clone()),
            ("count", self.count.map(|v| v.to_string())),
            ("delta", self.delta.map(|v| v.to_string())),
            ("step", self.step.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("learning_rate", self.learning_rate.map(|v| v.to_string())),
            ("standardize", self.no_standardize.then(|| "false".into())),
            ("control_seed", self.control_seed.map(|v| v.to_string())),
            ("workers", self.workers.map(|v| v.to_string())),
            ("execution", self.sequential.then(|| "sequential".into())),
            ("out", path(&self.out)),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                flags.set(key, v)?;
            }
        }
        // a flag for one penalty replaces both penalties from the file
        if self.lambda1.is_some() || self.lambda2.is_some() {
            for key in ["lambda1", "lambda2"] {
                if flags.get(key).is_none() {
                    flags.set(key, "0")?;
                }
            }
        }
        s.merge(&flags);
        Ok(s)
    }
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Report files to compare, each drawn as its own series.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Report drawn as a dashed baseline series.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Directory for charts and the summary table.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SynthKind {
    /// Tags are the arg-max over three planted neurons.
    Planted,
    /// Tags depend on one layer only.
    Layer,
    /// Activations encode word identity only.
    Types,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "planted")]
    kind: SynthKind,
    #[arg(long, default_value_t = 200)]
    sentences: usize,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn mode_of(command: &Command) -> Option<Mode> {
    Some(match command {
        Command::Layerwise(_) => Mode::Layerwise,
        Command::Rank(_) => Mode::NeuronRank,
        Command::Minimal(_) => Mode::MinimalSet,
        Command::Topbottom(_) => Mode::TopBottom,
        Command::Selectivity(_) => Mode::Selectivity,
        Command::Grid(_) => Mode::Grid,
        Command::Report(_) | Command::Synth(_) => return None,
    })
}

fn run_experiment(args: &RunArgs, mode: Mode) -> Result<(), Error> {
    let settings = args.settings()?;
    let cfg = settings.to_config(Some(mode))?;
    let output = experiment::run(&cfg)?;
    match settings.out_dir() {
        Some(dir) => {
            let written = output.write(&dir)?;
            for path in written {
                log::info!("wrote {}", path.display());
            }
            print!("{}", summary_table(&[(cfg.task.clone(), &output.report)]));
        }
        None => print!("{}", output.report.to_json()?),
    }
    Ok(())
}

fn summary_table(reports: &[(String, &ExperimentReport)]) -> String {
    let mut s = String::from("report\tmetric\tmean\tstd\tn\n");
    for (name, report) in reports {
        for (metric, m) in &report.summary {
            let _ = writeln!(s, "{name}\t{metric}\t{:.4}\t{:.4}\t{}", m.mean, m.std, m.n);
        }
    }
    s
}

fn report_name(path: &Path, report: &ExperimentReport) -> String {
    let parent = path
        .parent()
        .and_then(|p| p.file_name())
        .map(|p| p.to_string_lossy().into_owned());
    match parent {
        Some(dir) if !dir.is_empty() => format!("{} ({dir})", report.task),
        _ => report.task.clone(),
    }
}

fn run_report(args: &ReportArgs) -> Result<(), Error> {
    let loaded: Vec<(String, ExperimentReport)> = args
        .input
        .iter()
        .map(|p| ExperimentReport::load(p).map(|r| (report_name(p, &r), r)))
        .collect::<Result<_, _>>()?;
    let baseline = args
        .baseline
        .as_ref()
        .map(|p| ExperimentReport::load(p).map(|r| (format!("{} (baseline)", report_name(p, &r)), r)))
        .transpose()?;
    let refs: Vec<(String, &ExperimentReport)> = loaded.iter().map(|(n, r)| (n.clone(), r)).collect();
    let table = summary_table(&refs);
    if let Some(dir) = &args.out {
        let base = baseline.as_ref().map(|(n, r)| (n.clone(), r));
        for path in emit_comparison_charts(&refs, base, dir)? {
            log::info!("wrote {}", path.display());
        }
        let path = dir.join("summary.tsv");
        fs::write(&path, &table).map_err(|e| Error::Io { path, source: e })?;
    }
    print!("{table}");
    Ok(())
}

fn run_synth(args: &SynthArgs) -> Result<(), Error> {
    let d = args.layers * args.hidden;
    let task: SyntheticTask = match args.kind {
        SynthKind::Planted => PlantedTask {
            n_sentences: args.sentences,
            sentence_len: 20,
            n_layers: args.layers,
            hidden_dim: args.hidden,
            planted: vec![d / 7, d / 2, d - 3],
            seed: args.seed,
        }
        .generate()?,
        SynthKind::Layer => LayerTask {
            n_sentences: args.sentences,
            sentence_len: 20,
            n_layers: args.layers,
            hidden_dim: args.hidden,
            target_layer: args.layers / 2,
            n_tags: 4,
            seed: args.seed,
        }
        .generate()?,
        SynthKind::Types => TypeIdentityTask {
            n_sentences: args.sentences,
            sentence_len: 10,
            n_types: args.hidden.max(2),
            n_tags: 5,
            seed: args.seed,
        }
        .generate()?,
    };
    let dir = &args.out;
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    task.data.activations.save(dir.join("acts.nxa"))?;
    task.data.labels.save(dir.join("labels.txt"))?;
    task.tokens.save(dir.join("tokens.txt"))?;
    let config = format!(
        "task = synthetic-{:?}\nactivations = acts.nxa\nlabels = labels.txt\ntokens = tokens.txt\nsplit = 0.8:0.1:0.1\n",
        args.kind
    )
    .to_lowercase();
    let path = dir.join("experiment.conf");
    fs::write(&path, config).map_err(|e| Error::Io { path, source: e })?;
    println!("{}", dir.display());
    Ok(())
}

fn error_json(kind: &str, stage: Option<&str>, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "stage": stage, "message": message } }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            eprintln!("{}", error_json("usage", None, message.trim()));
            return ExitCode::from(2);
        }
    };
    let result = match (&cli.command, mode_of(&cli.command)) {
        (Command::Report(args), _) => run_report(args),
        (Command::Synth(args), _) => run_synth(args),
        (
            Command::Layerwise(args)
            | Command::Rank(args)
            | Command::Minimal(args)
            | Command::Topbottom(args)
            | Command::Selectivity(args)
            | Command::Grid(args),
            Some(mode),
        ) => run_experiment(args, mode),
        _ => unreachable!(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(e.kind(), e.stage(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
