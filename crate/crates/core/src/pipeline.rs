//! Config-driven orchestration with per-stage caching.
//!
//! The working data is a list of partitions. With [`BalanceOrder::AfterSplit`]
//! the split happens right after cleaning, every fitted transform is fitted on
//! the training partition only and balancing touches only training rows.
//! With [`BalanceOrder::BeforeSplit`] all transforms and balancing see every
//! row and the split comes last, which lets synthetic rows reach the test set.
//!
//! Each stage result is stored as `<out>/<stage>/<hash>.json`, where the hash
//! covers the upstream hash, the stage name and the stage parameters. A rerun
//! with the same inputs loads the payload instead of recomputing it.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::balance::{self, BalanceConfig, BalanceReport};
use crate::error::{Error, Result};
use crate::evaluate::{self, ClassMetrics, Comparison, ComparisonRow, ModelResult, Report};
use crate::fcbf::{self, FeatureSubset};
use crate::hpo::{self, Config, ConfigExt, Dimension, Domain, SearchSpace, TpeConfig, TrialHistory};
use crate::ingest::{self, CleanReport, Dataset, SplitSpec};
use crate::models::{self, CnnParams, FeaturesPerSplit, ModelKind, RfParams, TrainedModel};
use crate::normalize::{self, NormStats};
use crate::pca::{self, PcaModel, PcaTarget};
use crate::seed::child_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceOrder {
    BeforeSplit,
    #[default]
    AfterSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FcbfStage {
    pub enabled: bool,
    pub n_bins: usize,
    pub threshold: f64,
}

impl Default for FcbfStage {
    fn default() -> Self {
        Self {
            enabled: true,
            n_bins: fcbf::DEFAULT_BINS,
            threshold: fcbf::DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcaStage {
    pub enabled: bool,
    pub target: PcaTarget,
}

impl Default for PcaStage {
    fn default() -> Self {
        Self {
            enabled: true,
            target: PcaTarget::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BalanceStage {
    pub enabled: bool,
    #[serde(flatten)]
    pub params: BalanceConfig,
}

impl Default for BalanceStage {
    fn default() -> Self {
        Self {
            enabled: true,
            params: BalanceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub random_forest: RfParams,
    pub cnn: CnnParams,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::RandomForest,
            random_forest: RfParams::default(),
            cnn: CnnParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HpoSettings {
    /// `None` uses [`default_search_space`] for the model kind.
    pub space: Option<SearchSpace>,
    pub budget: usize,
    pub tpe: TpeConfig,
}

impl Default for HpoSettings {
    fn default() -> Self {
        Self {
            space: None,
            budget: 20,
            tpe: TpeConfig::default(),
        }
    }
}

/// Seeds inside the nested stage parameters are ignored: every stochastic
/// stage gets `child_seed(seed, <stage name>)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub label_column: String,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub clean: bool,
    pub normalize: bool,
    pub fcbf: FcbfStage,
    pub pca: PcaStage,
    pub balance: BalanceStage,
    pub balance_order: BalanceOrder,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub hpo: Option<HpoSettings>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::from("data/synthetic.csv"),
            label_column: "Label".into(),
            output_dir: PathBuf::from("out"),
            seed: 0,
            clean: true,
            normalize: true,
            fcbf: FcbfStage::default(),
            pca: PcaStage::default(),
            balance: BalanceStage::default(),
            balance_order: BalanceOrder::default(),
            split: SplitSpec::default(),
            model: ModelConfig::default(),
            hpo: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        if self.fcbf.enabled && self.fcbf.n_bins < 2 {
            return Err(Error::invalid("fcbf.n_bins must be >= 2"));
        }
        match self.pca.target {
            PcaTarget::Components(0) => return Err(Error::invalid("pca needs >= 1 component")),
            PcaTarget::VarianceFraction(f) if !(f > 0.0 && f <= 1.0) => {
                return Err(Error::invalid("pca variance fraction must be in (0, 1]"))
            }
            _ => {}
        }
        self.model.random_forest.validate()?;
        if let Some(h) = &self.hpo {
            h.tpe.validate()?;
            if h.budget == 0 {
                return Err(Error::invalid("hpo.budget must be >= 1"));
            }
            if let Some(s) = &h.space {
                s.validate()?;
            }
        }
        Ok(())
    }

    /// Copy with every stochastic stage reseeded from the master seed.
    pub fn seeded(&self) -> Self {
        let mut c = self.clone();
        c.split.seed = child_seed(self.seed, "split");
        c.balance.params.seed = child_seed(self.seed, "balance");
        c.model.random_forest.seed = child_seed(self.seed, "model");
        c.model.cnn.seed = child_seed(self.seed, "model");
        if let Some(h) = &mut c.hpo {
            h.tpe.seed = child_seed(self.seed, "hpo");
        }
        c
    }
}

pub fn default_search_space(kind: ModelKind) -> SearchSpace {
    let dims = match kind {
        ModelKind::RandomForest => vec![
            Dimension::new("n_trees", Domain::IntegerRange { lo: 10, hi: 100 }),
            Dimension::new("max_depth", Domain::IntegerRange { lo: 2, hi: 20 }),
            Dimension::new("min_samples_split", Domain::IntegerRange { lo: 2, hi: 10 }),
            Dimension::new(
                "features_per_split",
                Domain::Categorical {
                    choices: vec!["sqrt".into(), "log2".into(), "all".into()],
                },
            ),
        ],
        ModelKind::Cnn => vec![
            Dimension::new("learning_rate", Domain::LogUniform { lo: 1e-4, hi: 3e-2 }),
            Dimension::new("n_filters", Domain::IntegerRange { lo: 4, hi: 32 }),
            Dimension::new("dense_units", Domain::IntegerRange { lo: 8, hi: 64 }),
            Dimension::new("dropout_rate", Domain::Uniform { lo: 0.0, hi: 0.5 }),
            Dimension::new("batch_size", Domain::IntegerRange { lo: 16, hi: 64 }),
        ],
    };
    SearchSpace { dimensions: dims }
}

/// Overrides the tunable fields of `base` with any present in `c`.
pub fn rf_params_from(c: &Config, base: &RfParams) -> Result<RfParams> {
    let mut p = base.clone();
    if let Some(v) = c.int("n_trees") {
        p.n_trees = v.max(1) as usize;
    }
    if let Some(v) = c.int("max_depth") {
        p.max_depth = Some(v.max(1) as usize);
    }
    if let Some(v) = c.int("min_samples_split") {
        p.min_samples_split = v.max(2) as usize;
    }
    if let Some(v) = c.choice("features_per_split") {
        p.features_per_split = match v {
            "sqrt" => FeaturesPerSplit::Sqrt,
            "log2" => FeaturesPerSplit::Log2,
            "all" => FeaturesPerSplit::All,
            other => return Err(Error::invalid(format!("unknown features_per_split `{other}`"))),
        };
    }
    Ok(p)
}

pub fn cnn_params_from(c: &Config, base: &CnnParams) -> CnnParams {
    let mut p = base.clone();
    if let Some(v) = c.float("learning_rate") {
        p.learning_rate = v;
    }
    if let Some(v) = c.int("n_filters") {
        for b in &mut p.conv_blocks {
            b.n_filters = v.max(1) as usize;
        }
    }
    if let Some(v) = c.int("dense_units") {
        p.dense_units = v.max(1) as usize;
    }
    if let Some(v) = c.float("dropout_rate") {
        p.dropout_rate = v;
    }
    if let Some(v) = c.int("batch_size") {
        p.batch_size = v.max(1) as usize;
    }
    p
}

/// Where a stage result came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageArtifact {
    pub stage: String,
    pub hash: String,
    pub payload: PathBuf,
    pub cache_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub hash: String,
    pub cache_hit: bool,
    /// Row count of each partition after the stage.
    pub rows: Vec<usize>,
    pub cols: usize,
}

/// One structured log line per stage event.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogLine<'a> {
    pub stage: &'a str,
    pub event: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_hit: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<&'a [usize]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cols: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<&'a str>,
}

pub type Observer<'a> = &'a mut dyn FnMut(&LogLine<'_>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCount {
    pub class: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub balance_order: BalanceOrder,
    pub stages: Vec<StageSummary>,
    /// Training-partition class counts after balancing.
    pub train_class_counts: Vec<ClassCount>,
    pub synthetic_rows_in_test: usize,
    pub test_rows: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_config: Option<Config>,
    pub report_json: PathBuf,
    pub report_text: PathBuf,
    pub report: Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub preprocessing: Vec<StageSummary>,
    pub default_accuracy: f64,
    pub tuned_accuracy: f64,
    pub default_macro_f1: f64,
    pub tuned_macro_f1: f64,
    pub best_config: Config,
    pub report_json: PathBuf,
    pub report_text: PathBuf,
    pub report: Report,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Stage<A> {
    parts: Vec<Dataset>,
    artifact: A,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainPayload {
    model: TrainedModel,
    best_config: Option<Config>,
    trials: Option<TrialHistory>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EvalPayload {
    metrics: ClassMetrics,
    accuracy: f64,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Runner<'o> {
    out: PathBuf,
    observer: Observer<'o>,
    stages: Vec<StageSummary>,
}

impl Runner<'_> {
    fn log(&mut self, line: LogLine<'_>) {
        (self.observer)(&line);
    }

    /// Loads the cached payload for this stage or computes and stores it.
    fn stage<T, F>(&mut self, name: &str, upstream: &str, key: &impl Serialize, compute: F) -> Result<(T, String, bool)>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T>,
    {
        let mut h = Sha256::new();
        h.update(env!("CARGO_PKG_VERSION"));
        h.update([0]);
        h.update(upstream);
        h.update([0]);
        h.update(name);
        h.update([0]);
        h.update(serde_json::to_vec(key)?);
        let hash = hex::encode(h.finalize());

        let dir = self.out.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let payload = dir.join(format!("{hash}.json"));
        self.log(LogLine {
            stage: name,
            event: "start",
            cache_hit: None,
            rows: None,
            cols: None,
            message: None,
        });
        let cached: Option<T> = std::fs::read(&payload)
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok());
        let (value, hit) = match cached {
            Some(v) => (v, true),
            None => {
                let v = compute().map_err(|e| Error::Stage {
                    stage: name.to_string(),
                    source: Box::new(e),
                })?;
                write_atomic(&payload, &serde_json::to_vec(&v)?)?;
                (v, false)
            }
        };
        let artifact = StageArtifact {
            stage: name.to_string(),
            hash: hash.clone(),
            payload,
            cache_hit: hit,
        };
        write_atomic(&dir.join("artifact.json"), &serde_json::to_vec_pretty(&artifact)?)?;
        Ok((value, hash, hit))
    }

    fn done(&mut self, name: &str, hash: &str, hit: bool, parts: &[Dataset]) {
        let rows: Vec<usize> = parts.iter().map(Dataset::n_rows).collect();
        let cols = parts.first().map_or(0, Dataset::n_cols);
        self.log(LogLine {
            stage: name,
            event: "done",
            cache_hit: Some(hit),
            rows: Some(&rows),
            cols: Some(cols),
            message: None,
        });
        self.stages.push(StageSummary {
            stage: name.to_string(),
            hash: hash.to_string(),
            cache_hit: hit,
            rows,
            cols,
        });
    }

    /// Runs a fit-on-first/apply-to-all stage.
    fn transform<A, Fit, Apply>(
        &mut self,
        name: &str,
        upstream: &str,
        key: &impl Serialize,
        parts: Vec<Dataset>,
        fit: Fit,
        apply: Apply,
    ) -> Result<(Vec<Dataset>, A, String)>
    where
        A: Serialize + DeserializeOwned,
        Fit: FnOnce(&Dataset) -> Result<A>,
        Apply: Fn(&A, &Dataset) -> Result<Dataset>,
    {
        let (s, hash, hit): (Stage<A>, _, _) = self.stage(name, upstream, key, || {
            let artifact = fit(&parts[0])?;
            let parts = parts.iter().map(|p| apply(&artifact, p)).collect::<Result<_>>()?;
            Ok(Stage { parts, artifact })
        })?;
        self.done(name, &hash, hit, &s.parts);
        Ok((s.parts, s.artifact, hash))
    }
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn split_parts(d: &Dataset, spec: &SplitSpec) -> Result<Vec<Dataset>> {
    let s = ingest::split(d, spec)?;
    Ok(vec![s.train, s.validation, s.test])
}

/// Train / validation / test after every preprocessing stage.
struct Prepared {
    parts: Vec<Dataset>,
    hash: String,
}

fn prepare(cfg: &PipelineConfig, r: &mut Runner<'_>) -> Result<Prepared> {
    let input_hash = file_hash(&cfg.input)?;
    let (raw, mut hash, hit): (Dataset, _, _) = r.stage(
        "ingest",
        &input_hash,
        &cfg.label_column,
        || ingest::load_csv(&cfg.input, &cfg.label_column),
    )?;
    r.done("ingest", &hash, hit, std::slice::from_ref(&raw));
    let mut parts = vec![raw];

    if cfg.clean {
        let (s, h, hit): (Stage<CleanReport>, _, _) = r.stage("clean", &hash, &(), || {
            let (d, report) = ingest::clean(&parts[0])?;
            Ok(Stage {
                parts: vec![d],
                artifact: report,
            })
        })?;
        r.done("clean", &h, hit, &s.parts);
        parts = s.parts;
        hash = h;
    }

    if cfg.balance_order == BalanceOrder::AfterSplit {
        let (p, h, hit) = r.stage("split", &hash, &cfg.split, || split_parts(&parts[0], &cfg.split))?;
        r.done("split", &h, hit, &p);
        parts = p;
        hash = h;
    }

    if cfg.normalize {
        let (p, _, h) = r.transform(
            "normalize",
            &hash,
            &(),
            parts,
            |d| normalize::fit_minmax_named(d.features(), d.feature_names().to_vec()),
            |stats: &NormStats, d| d.with_features(normalize::apply_minmax(d.features(), stats)?, d.feature_names().to_vec()),
        )?;
        parts = p;
        hash = h;
    }

    if cfg.fcbf.enabled {
        let (p, _, h) = r.transform(
            "fcbf",
            &hash,
            &cfg.fcbf,
            parts,
            |d| {
                let binned = fcbf::discretize_dataset(d, cfg.fcbf.n_bins)?;
                let subset = fcbf::fcbf_select(&binned, cfg.fcbf.threshold)?;
                if subset.selected_indices.is_empty() {
                    return Err(Error::invalid("fcbf selected no features; lower the threshold"));
                }
                Ok(subset)
            },
            |s: &FeatureSubset, d| s.apply(d),
        )?;
        parts = p;
        hash = h;
    }

    if cfg.pca.enabled {
        let (p, _, h) = r.transform(
            "pca",
            &hash,
            &cfg.pca,
            parts,
            |d| pca::fit_pca(d.features(), cfg.pca.target),
            |m: &PcaModel, d| d.with_features(pca::transform(d.features(), m)?, m.component_names()),
        )?;
        parts = p;
        hash = h;
    }

    if cfg.balance.enabled {
        let (s, h, hit): (Stage<BalanceReport>, _, _) = r.stage("balance", &hash, &cfg.balance, || {
            let (balanced, report) = balance::balance_dataset(&parts[0], &cfg.balance.params)?;
            let mut out = parts.clone();
            out[0] = balanced;
            Ok(Stage {
                parts: out,
                artifact: report,
            })
        })?;
        r.done("balance", &h, hit, &s.parts);
        parts = s.parts;
        hash = h;
    }

    if cfg.balance_order == BalanceOrder::BeforeSplit {
        let (p, h, hit) = r.stage("split", &hash, &cfg.split, || split_parts(&parts[0], &cfg.split))?;
        r.done("split", &h, hit, &p);
        parts = p;
        hash = h;
    }

    Ok(Prepared { parts, hash })
}

fn fit_model(kind: ModelKind, train: &Dataset, validation: &Dataset, rf: &RfParams, cnn: &CnnParams) -> Result<TrainedModel> {
    match kind {
        ModelKind::RandomForest => models::train_random_forest(train, rf),
        ModelKind::Cnn => {
            let m = models::build_cnn(cnn, train.feature_names().to_vec(), train.label_map().clone())?;
            Ok(models::train_cnn(m, train, validation, cnn)?.0)
        }
    }
}

fn accuracy_on(model: &TrainedModel, d: &Dataset) -> Result<f64> {
    if d.n_rows() == 0 {
        return Err(Error::invalid("cannot score an empty partition"));
    }
    let pred = model.predict(d.features())?;
    let correct = pred.labels.iter().zip(d.labels()).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / d.n_rows() as f64)
}

fn tune(cfg: &PipelineConfig, h: &HpoSettings, train: &Dataset, validation: &Dataset) -> Result<hpo::OptimizeResult> {
    let space = h.space.clone().unwrap_or_else(|| default_search_space(cfg.model.kind));
    let objective = |c: &Config| {
        let rf = rf_params_from(c, &cfg.model.random_forest)?;
        let cnn = cnn_params_from(c, &cfg.model.cnn);
        let m = fit_model(cfg.model.kind, train, validation, &rf, &cnn)?;
        accuracy_on(&m, validation)
    };
    hpo::optimize(objective, &space, h.budget, &h.tpe)
}

fn train_stage(
    cfg: &PipelineConfig,
    r: &mut Runner<'_>,
    prep: &Prepared,
    name: &str,
    hpo: Option<&HpoSettings>,
) -> Result<(TrainPayload, String)> {
    let (train, validation) = (&prep.parts[0], &prep.parts[1]);
    let key = (&cfg.model, hpo);
    let (payload, hash, hit): (TrainPayload, _, _) = r.stage(name, &prep.hash, &key, || {
        let (rf, cnn, best_config, trials) = match hpo {
            Some(h) => {
                let res = tune(cfg, h, train, validation)?;
                let rf = rf_params_from(&res.best_config, &cfg.model.random_forest)?;
                let cnn = cnn_params_from(&res.best_config, &cfg.model.cnn);
                (rf, cnn, Some(res.best_config), Some(res.history))
            }
            None => (cfg.model.random_forest.clone(), cfg.model.cnn.clone(), None, None),
        };
        let model = fit_model(cfg.model.kind, train, validation, &rf, &cnn)?;
        Ok(TrainPayload {
            model,
            best_config,
            trials,
        })
    })?;
    if let Some(t) = &payload.trials {
        let mut buf = Vec::new();
        t.write_jsonl(&mut buf)?;
        write_atomic(&r.out.join(name).join("trials.jsonl"), &buf)?;
    }
    r.done(name, &hash, hit, std::slice::from_ref(train));
    Ok((payload, hash))
}

fn evaluate_stage(r: &mut Runner<'_>, name: &str, upstream: &str, model: &TrainedModel, test: &Dataset) -> Result<EvalPayload> {
    let (payload, hash, hit): (EvalPayload, _, _) = r.stage(name, upstream, &(), || {
        let pred = model.predict(test.features())?;
        let cm = evaluate::confusion_named(test.labels(), &pred.labels, test.label_map().class_names().to_vec())?;
        let metrics = evaluate::metrics(&cm)?;
        let accuracy = metrics.overall_accuracy;
        Ok(EvalPayload { metrics, accuracy })
    })?;
    r.done(name, &hash, hit, std::slice::from_ref(test));
    Ok(payload)
}

fn model_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::RandomForest => "random_forest",
        ModelKind::Cnn => "cnn",
    }
}

fn write_report(out: &Path, report: &Report) -> Result<(PathBuf, PathBuf)> {
    let dir = out.join("report");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let json = dir.join("report.json");
    let text = dir.join("report.txt");
    write_atomic(&json, report.to_json()?.as_bytes())?;
    write_atomic(&text, report.to_text().as_bytes())?;
    Ok((json, text))
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunSummary> {
    run_pipeline_with(cfg, &mut |_| {})
}

pub fn run_pipeline_with(cfg: &PipelineConfig, observer: Observer<'_>) -> Result<RunSummary> {
    cfg.validate()?;
    let cfg = cfg.seeded();
    let mut r = Runner {
        out: cfg.output_dir.clone(),
        observer,
        stages: Vec::new(),
    };
    let prep = prepare(&cfg, &mut r)?;
    let (trained, train_hash) = train_stage(&cfg, &mut r, &prep, "train", cfg.hpo.as_ref())?;
    let test = &prep.parts[2];
    let eval = evaluate_stage(&mut r, "evaluate", &train_hash, &trained.model, test)?;

    let report = evaluate::render_report(
        &[ModelResult {
            name: model_name(cfg.model.kind).to_string(),
            metrics: eval.metrics.clone(),
            train_seconds: trained.model.training_metadata.train_seconds,
        }],
        None,
    )?;
    let (report_json, report_text) = write_report(&r.out, &report)?;

    let train = &prep.parts[0];
    let summary = RunSummary {
        balance_order: cfg.balance_order,
        stages: r.stages,
        train_class_counts: train
            .class_counts()
            .into_iter()
            .enumerate()
            .map(|(c, count)| ClassCount {
                class: train.label_map().decode(c).unwrap_or_default().to_string(),
                count,
            })
            .collect(),
        synthetic_rows_in_test: test.origins().iter().filter(|o| o.is_synthetic()).count(),
        test_rows: test.n_rows(),
        accuracy: eval.accuracy,
        macro_f1: eval.metrics.macro_avg.f1,
        best_config: trained.best_config,
        report_json,
        report_text,
        report,
    };
    let dir = cfg.output_dir.join("pipeline");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_atomic(&dir.join("summary.json"), &serde_json::to_vec_pretty(&summary)?)?;
    Ok(summary)
}

/// Trains the configured model once with its default parameters and once
/// with the best configuration found by TPE, and scores both on the same
/// test partition.
pub fn run_hpo_comparison(cfg: &PipelineConfig) -> Result<ComparisonSummary> {
    run_hpo_comparison_with(cfg, &mut |_| {})
}

pub fn run_hpo_comparison_with(cfg: &PipelineConfig, observer: Observer<'_>) -> Result<ComparisonSummary> {
    cfg.validate()?;
    let Some(h) = cfg.hpo.clone() else {
        return Err(Error::invalid("hpo comparison needs an `hpo` section"));
    };
    let cfg = cfg.seeded();
    let h = cfg.hpo.clone().unwrap_or(h);
    let mut r = Runner {
        out: cfg.output_dir.clone(),
        observer,
        stages: Vec::new(),
    };
    let prep = prepare(&cfg, &mut r)?;
    let test = &prep.parts[2];

    let (plain, plain_hash) = train_stage(&cfg, &mut r, &prep, "train", None)?;
    let plain_eval = evaluate_stage(&mut r, "evaluate", &plain_hash, &plain.model, test)?;
    let (tuned, tuned_hash) = train_stage(&cfg, &mut r, &prep, "tune", Some(&h))?;
    let tuned_eval = evaluate_stage(&mut r, "evaluate_tuned", &tuned_hash, &tuned.model, test)?;

    let name = model_name(cfg.model.kind);
    let row = |m: &TrainedModel, e: &EvalPayload| ComparisonRow {
        train_seconds: m.training_metadata.train_seconds,
        accuracy: e.accuracy,
        f1: e.metrics.macro_avg.f1,
    };
    let report = evaluate::render_report(
        &[
            ModelResult {
                name: format!("{name} W/oHOP"),
                metrics: plain_eval.metrics.clone(),
                train_seconds: plain.model.training_metadata.train_seconds,
            },
            ModelResult {
                name: format!("{name} W/HOP"),
                metrics: tuned_eval.metrics.clone(),
                train_seconds: tuned.model.training_metadata.train_seconds,
            },
        ],
        Some(Comparison {
            classifier: name.to_string(),
            without_hpo: row(&plain.model, &plain_eval),
            with_hpo: row(&tuned.model, &tuned_eval),
        }),
    )?;
    let (report_json, report_text) = write_report(&r.out, &report)?;
    Ok(ComparisonSummary {
        preprocessing: r.stages,
        default_accuracy: plain_eval.accuracy,
        tuned_accuracy: tuned_eval.accuracy,
        default_macro_f1: plain_eval.metrics.macro_avg.f1,
        tuned_macro_f1: tuned_eval.metrics.macro_avg.f1,
        best_config: tuned.best_config.unwrap_or_default(),
        report_json,
        report_text,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_fill_missing_fields() {
        let c = PipelineConfig::from_json(r#"{"input": "x.csv", "seed": 3, "pca": {"enabled": false}}"#).unwrap();
        assert_eq!(c.seed, 3);
        assert!(!c.pca.enabled);
        assert!(c.fcbf.enabled);
        assert_eq!(c.balance_order, BalanceOrder::AfterSplit);
        let round = PipelineConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(round, c);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(PipelineConfig::from_json(r#"{"split": {"test_fraction": 0.0, "validation_fraction": 0.2, "stratified": true, "seed": 0}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"hpo": {"budget": 0}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"pca": {"target": {"components": 0}}}"#).is_err());
    }

    #[test]
    fn stage_seeds_derive_from_master() {
        let c = PipelineConfig {
            seed: 9,
            hpo: Some(HpoSettings::default()),
            ..PipelineConfig::default()
        }
        .seeded();
        assert_eq!(c.split.seed, child_seed(9, "split"));
        assert_eq!(c.balance.params.seed, child_seed(9, "balance"));
        assert_eq!(c.model.random_forest.seed, child_seed(9, "model"));
        assert_eq!(c.hpo.unwrap().tpe.seed, child_seed(9, "hpo"));
    }

    #[test]
    fn search_space_mapping() {
        let mut c = Config::new();
        c.insert("n_trees".into(), hpo::Value::Int(42));
        c.insert("features_per_split".into(), hpo::Value::Categorical("log2".into()));
        let p = rf_params_from(&c, &RfParams::default()).unwrap();
        assert_eq!(p.n_trees, 42);
        assert_eq!(p.features_per_split, FeaturesPerSplit::Log2);
        assert_eq!(p.min_samples_split, 2);
        c.insert("features_per_split".into(), hpo::Value::Categorical("half".into()));
        assert!(rf_params_from(&c, &RfParams::default()).is_err());
        for kind in [ModelKind::RandomForest, ModelKind::Cnn] {
            default_search_space(kind).validate().unwrap();
        }
    }
}
