use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use flowsift::balance::{self, TargetPolicy};
use flowsift::evaluate::{self, ModelResult};
use flowsift::fcbf;
use flowsift::hpo::{self, TrialHistory};
use flowsift::ingest::{self, Dataset, LabelMap};
use flowsift::models::{self, ModelKind, TrainedModel};
use flowsift::normalize;
use flowsift::pca::{self, PcaTarget};
use flowsift::pipeline::{self, LogLine, PipelineConfig};
use flowsift::synth::{self, SynthSpec};
use flowsift::Error;

#[derive(Parser)]
#[command(name = "flowsift", version, about = "Flow-record intrusion-detection pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (JSON); stage commands read their parameters from it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; artifacts go to `<out>/<stage>/`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Rf,
    Cnn,
}

impl From<Model> for ModelKind {
    fn from(m: Model) -> Self {
        match m {
            Model::Rf => ModelKind::RandomForest,
            Model::Cnn => ModelKind::Cnn,
        }
    }
}

#[derive(Args)]
struct Input {
    /// CSV with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Label column name; defaults to the config's.
    #[arg(long)]
    label: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a CSV; writes a canonical copy and a summary.
    Ingest(Input),
    /// Drop bad rows and constant columns, then min-max scale.
    Preprocess(Input),
    /// FCBF feature selection.
    Select {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// PCA projection.
    Reduce {
        #[command(flatten)]
        input: Input,
        #[arg(long, conflicts_with = "variance")]
        components: Option<usize>,
        #[arg(long)]
        variance: Option<f64>,
    },
    /// K-means + SMOTE oversampling.
    Balance {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        clusters: Option<usize>,
        #[arg(long)]
        neighbors: Option<usize>,
        /// Grow minority classes by this factor instead of matching the majority.
        #[arg(long)]
        factor: Option<f64>,
    },
    /// Stratified train/validation/test split.
    Split {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        test_fraction: Option<f64>,
        #[arg(long)]
        validation_fraction: Option<f64>,
    },
    /// Train a model with the configured parameters.
    Train {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long, value_enum)]
        model: Option<Model>,
    },
    /// TPE search, then train with the best configuration.
    Tune {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        validation: PathBuf,
        #[arg(long, value_enum)]
        model: Option<Model>,
        #[arg(long)]
        budget: Option<usize>,
        /// Continue from an existing trials.jsonl.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a saved model on a labelled CSV.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        label: Option<String>,
    },
    /// Run every stage from the config.
    Pipeline {
        /// Train with and without HPO and report both.
        #[arg(long)]
        compare: bool,
    },
    /// Write a seeded synthetic dataset plus ground-truth metadata.
    Synth {
        /// Rows per class, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "500,200,100,50,20")]
        rows: Vec<usize>,
        #[arg(long, default_value_t = 12)]
        features: usize,
        #[arg(long)]
        separation: Option<f64>,
        #[arg(long, default_value = "synthetic")]
        name: String,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    /// Input that parses but cannot be used.
    Data(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type Res<T> = Result<T, Failure>;

struct Ctx {
    cfg: PipelineConfig,
    out: PathBuf,
    verbose: bool,
}

impl Ctx {
    fn log<T: Serialize>(&self, line: &T) {
        if let Ok(s) = serde_json::to_string(line) {
            eprintln!("{s}");
        }
    }

    fn event(&self, stage: &str, event: &str, message: Option<&str>) {
        self.log(&LogLine {
            stage,
            event,
            cache_hit: None,
            rows: None,
            cols: None,
            message,
        });
    }

    fn stage_dir(&self, stage: &str) -> Res<PathBuf> {
        let dir = self.out.join(stage);
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(dir)
    }

    fn label<'a>(&'a self, flag: &'a Option<String>) -> &'a str {
        flag.as_deref().unwrap_or(&self.cfg.label_column)
    }

    fn load(&self, input: &Input) -> Res<Dataset> {
        let d = ingest::load_csv(&input.input, self.label(&input.label))?;
        if self.verbose {
            self.log(&serde_json::json!({
                "stage": "load",
                "event": "done",
                "path": input.input,
                "rows": d.n_rows(),
                "cols": d.n_cols(),
            }));
        }
        Ok(d)
    }

    fn done(&self, stage: &str, d: &Dataset) {
        let rows = [d.n_rows()];
        self.log(&LogLine {
            stage,
            event: "done",
            cache_hit: None,
            rows: Some(&rows),
            cols: Some(d.n_cols()),
            message: None,
        });
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Run(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_csv(d: &Dataset, path: &Path, label: &str) -> Res<()> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    d.write_csv(BufWriter::new(f), label)?;
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Res<()> {
    let s = serde_json::to_string_pretty(value).map_err(Error::from)?;
    std::fs::write(path, s).map_err(|e| io_err(path, e))
}

/// Re-encodes a dataset's labels against another label map by class name.
fn relabel(d: &Dataset, target: &LabelMap) -> Res<Dataset> {
    let labels = d
        .labels()
        .iter()
        .map(|&l| {
            let name = d.label_map().decode(l).unwrap_or_default();
            target
                .encode(name)
                .ok_or_else(|| Failure::Data(format!("class `{name}` is unknown to the model")))
        })
        .collect::<Res<Vec<_>>>()?;
    Ok(Dataset::with_origins(
        d.features().clone(),
        d.feature_names().to_vec(),
        labels,
        target.clone(),
        d.origins().to_vec(),
    )?)
}

fn run(cli: Cli) -> Res<()> {
    let mut cfg = match &cli.common.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| Failure::Usage(format!("config {}: {e}", p.display())))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.common.out {
        cfg.output_dir = o.clone();
    }
    let ctx = Ctx {
        out: cfg.output_dir.clone(),
        cfg: cfg.seeded(),
        verbose: cli.common.verbose,
    };
    let c = &ctx.cfg;

    match cli.command {
        Command::Ingest(input) => {
            let d = ctx.load(&input)?;
            let dir = ctx.stage_dir("ingest")?;
            let missing = d.features().as_slice().iter().filter(|v| ingest::is_missing(**v)).count();
            write_csv(&d, &dir.join("dataset.csv"), ctx.label(&input.label))?;
            write_json(
                &serde_json::json!({
                    "rows": d.n_rows(),
                    "columns": d.feature_names(),
                    "classes": d.label_map(),
                    "class_counts": d.class_counts(),
                    "missing_cells": missing,
                }),
                &dir.join("summary.json"),
            )?;
            ctx.done("ingest", &d);
        }
        Command::Preprocess(input) => {
            let d = ctx.load(&input)?;
            let (d, report) = ingest::clean(&d)?;
            let stats = normalize::fit_minmax_named(d.features(), d.feature_names().to_vec())?;
            let d = d.with_features(normalize::apply_minmax(d.features(), &stats)?, d.feature_names().to_vec())?;
            let dir = ctx.stage_dir("preprocess")?;
            write_csv(&d, &dir.join("dataset.csv"), ctx.label(&input.label))?;
            write_json(&report, &dir.join("clean_report.json"))?;
            write_json(&stats, &dir.join("norm_stats.json"))?;
            ctx.done("preprocess", &d);
        }
        Command::Select {
            input,
            bins,
            threshold,
        } => {
            let d = ctx.load(&input)?;
            let binned = fcbf::discretize_dataset(&d, bins.unwrap_or(c.fcbf.n_bins))?;
            let subset = fcbf::fcbf_select(&binned, threshold.unwrap_or(c.fcbf.threshold))?;
            let d = subset.apply(&d)?;
            let dir = ctx.stage_dir("select")?;
            write_csv(&d, &dir.join("dataset.csv"), ctx.label(&input.label))?;
            write_json(&subset, &dir.join("subset.json"))?;
            ctx.done("select", &d);
        }
        Command::Reduce {
            input,
            components,
            variance,
        } => {
            let d = ctx.load(&input)?;
            let target = match (components, variance) {
                (Some(k), _) => PcaTarget::Components(k),
                (_, Some(f)) => PcaTarget::VarianceFraction(f),
                _ => c.pca.target,
            };
            let model = pca::fit_pca(d.features(), target)?;
            let d = d.with_features(pca::transform(d.features(), &model)?, model.component_names())?;
            let dir = ctx.stage_dir("reduce")?;
            write_csv(&d, &dir.join("dataset.csv"), ctx.label(&input.label))?;
            write_json(&model, &dir.join("pca.json"))?;
            ctx.done("reduce", &d);
        }
        Command::Balance {
            input,
            clusters,
            neighbors,
            factor,
        } => {
            let d = ctx.load(&input)?;
            let mut p = c.balance.params.clone();
            if clusters.is_some() {
                p.k = clusters;
            }
            if let Some(n) = neighbors {
                p.smote_k_neighbors = n;
            }
            if let Some(f) = factor {
                p.target_policy = TargetPolicy::ExplicitFactor(f);
            }
            let (d, report) = balance::balance_dataset(&d, &p)?;
            let dir = ctx.stage_dir("balance")?;
            write_csv(&d, &dir.join("dataset.csv"), ctx.label(&input.label))?;
            write_json(&report, &dir.join("report.json"))?;
            ctx.done("balance", &d);
        }
        Command::Split {
            input,
            test_fraction,
            validation_fraction,
        } => {
            let d = ctx.load(&input)?;
            let mut spec = c.split;
            if let Some(f) = test_fraction {
                spec.test_fraction = f;
            }
            if let Some(f) = validation_fraction {
                spec.validation_fraction = f;
            }
            let s = ingest::split(&d, &spec)?;
            let dir = ctx.stage_dir("split")?;
            let label = ctx.label(&input.label);
            for (name, part) in [("train", &s.train), ("validation", &s.validation), ("test", &s.test)] {
                write_csv(part, &dir.join(format!("{name}.csv")), label)?;
                ctx.done(&format!("split/{name}"), part);
            }
        }
        Command::Train {
            input,
            validation,
            model,
        } => {
            let train = ctx.load(&input)?;
            let kind = model.map_or(c.model.kind, ModelKind::from);
            let label = ctx.label(&input.label);
            let dir = ctx.stage_dir("train")?;
            let trained = match kind {
                ModelKind::RandomForest => models::train_random_forest(&train, &c.model.random_forest)?,
                ModelKind::Cnn => {
                    let val = match &validation {
                        Some(p) => relabel(&ingest::load_csv(p, label)?, train.label_map())?
                            .select_columns(train.feature_names())?,
                        None => train.subset(&[]),
                    };
                    let m = models::build_cnn(&c.model.cnn, train.feature_names().to_vec(), train.label_map().clone())?;
                    let (m, history) = models::train_cnn(m, &train, &val, &c.model.cnn)?;
                    write_json(&history, &dir.join("history.json"))?;
                    m
                }
            };
            trained.save(dir.join("model.json"))?;
            ctx.done("train", &train);
        }
        Command::Tune {
            input,
            validation,
            model,
            budget,
            resume,
        } => {
            let train = ctx.load(&input)?;
            let label = ctx.label(&input.label);
            let val = relabel(&ingest::load_csv(&validation, label)?, train.label_map())?
                .select_columns(train.feature_names())?;
            let kind = model.map_or(c.model.kind, ModelKind::from);
            let settings = c.hpo.clone().unwrap_or_default();
            let space = settings.space.clone().unwrap_or_else(|| pipeline::default_search_space(kind));
            let budget = budget.unwrap_or(settings.budget);
            let history = match &resume {
                Some(p) => {
                    let f = File::open(p).map_err(|e| io_err(p, e))?;
                    TrialHistory::read_jsonl(BufReader::new(f))?
                }
                None => TrialHistory::default(),
            };
            let fit = |cfg: &hpo::Config| -> flowsift::Result<TrainedModel> {
                match kind {
                    ModelKind::RandomForest => {
                        models::train_random_forest(&train, &pipeline::rf_params_from(cfg, &c.model.random_forest)?)
                    }
                    ModelKind::Cnn => {
                        let p = pipeline::cnn_params_from(cfg, &c.model.cnn);
                        let m = models::build_cnn(&p, train.feature_names().to_vec(), train.label_map().clone())?;
                        Ok(models::train_cnn(m, &train, &val, &p)?.0)
                    }
                }
            };
            let objective = |cfg: &hpo::Config| {
                let m = fit(cfg)?;
                let pred = m.predict(val.features())?;
                let hits = pred.labels.iter().zip(val.labels()).filter(|(a, b)| a == b).count();
                Ok(hits as f64 / val.n_rows().max(1) as f64)
            };
            let result = hpo::optimize_from(history, objective, &space, budget, &settings.tpe)?;
            let dir = ctx.stage_dir("tune")?;
            let trials = dir.join("trials.jsonl");
            let f = File::create(&trials).map_err(|e| io_err(&trials, e))?;
            result.history.write_jsonl(BufWriter::new(f))?;
            write_json(
                &serde_json::json!({ "best_config": result.best_config, "best_score": result.best_score }),
                &dir.join("best.json"),
            )?;
            fit(&result.best_config)?.save(dir.join("model.json"))?;
            ctx.event("tune", "done", Some(&format!("best validation accuracy {:.4}", result.best_score)));
        }
        Command::Evaluate { model, test, label } => {
            let m = TrainedModel::load(&model)?;
            let d = ingest::load_csv(&test, ctx.label(&label))?;
            let d = relabel(&d, &m.label_map)?.select_columns(&m.feature_names)?;
            let pred = m.predict(d.features())?;
            let cm = evaluate::confusion_named(d.labels(), &pred.labels, m.label_map.class_names().to_vec())?;
            let metrics = evaluate::metrics(&cm)?;
            let name = match m.kind() {
                ModelKind::RandomForest => "random_forest",
                ModelKind::Cnn => "cnn",
            };
            let report = evaluate::render_report(
                &[ModelResult {
                    name: name.into(),
                    metrics,
                    train_seconds: m.training_metadata.train_seconds,
                }],
                None,
            )?;
            let dir = ctx.stage_dir("evaluate")?;
            std::fs::write(dir.join("report.json"), report.to_json()?).map_err(|e| io_err(&dir, e))?;
            std::fs::write(dir.join("report.txt"), report.to_text()).map_err(|e| io_err(&dir, e))?;
            write_json(&cm, &dir.join("confusion.json"))?;
            print!("{}", report.to_text());
        }
        Command::Pipeline { compare } => {
            let mut observer = |l: &LogLine<'_>| {
                if ctx.verbose || l.event != "start" {
                    ctx.log(l);
                }
            };
            // run with the unseeded config: the pipeline derives stage seeds itself
            if compare {
                if cfg.hpo.is_none() {
                    return Err(Failure::Usage("--compare needs an `hpo` section in the config".into()));
                }
                let s = pipeline::run_hpo_comparison_with(&cfg, &mut observer)?;
                print!("{}", s.report.to_text());
            } else {
                let s = pipeline::run_pipeline_with(&cfg, &mut observer)?;
                print!("{}", s.report.to_text());
            }
        }
        Command::Synth {
            rows,
            features,
            separation,
            name,
        } => {
            let mut spec = SynthSpec::new(rows, features, cfg.seed);
            if let Some(s) = separation {
                spec.separation = s;
            }
            let (path, _) = synth::write(&spec, &ctx.stage_dir("synth")?, &name)?;
            ctx.event("synth", "done", Some(&path.display().to_string()));
        }
    }
    Ok(())
}

fn root_cause(e: &Error) -> &Error {
    match e {
        Error::Stage { source, .. } => root_cause(source),
        other => other,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("{}", serde_json::json!({"level": "error", "kind": "usage", "message": msg}));
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("{}", serde_json::json!({"level": "error", "kind": "data", "message": msg}));
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            let root = root_cause(&e);
            let data = root.is_data_error() || matches!(root, Error::Io { .. });
            eprintln!(
                "{}",
                serde_json::json!({"level": "error", "kind": if data { "data" } else { "stage" }, "message": e.to_string()})
            );
            ExitCode::from(if data { 2 } else { 3 })
        }
    }
}
