//! Hyperparameter search with a tree-structured Parzen estimator (TPE).
//!
//! After `n_startup` uniform draws, each suggestion splits the history into
//! the best `ceil(gamma * n)` trials and the rest, fits one Parzen density
//! per dimension to each group (`l` for good, `g` for bad), draws
//! `n_candidates` configurations from `l` and returns the one maximizing
//! `sum_d log l_d(x_d) - log g_d(x_d)`.
//!
//! Numeric densities are mixtures of truncated Gaussians centered at the
//! observations plus one flat component, each weighted `1 / (n + 1)`. Kernel
//! widths follow [`Bandwidth`]; the default gives each point its own width
//! from the gaps to its neighbours, with a floor that shrinks as `1 / n` so
//! the search can refine without collapsing onto a single point.
//! Log-uniform dimensions are modelled in log space. Categorical densities
//! are add-one smoothed frequencies.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::time::Instant;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Domain {
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    /// Inclusive on both ends.
    IntegerRange { lo: i64, hi: i64 },
    Categorical { choices: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub domain: Domain,
}

impl Dimension {
    pub fn new(name: impl Into<String>, domain: Domain) -> Self {
        Self {
            name: name.into(),
            domain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dimensions: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dimensions: Vec<Dimension>) -> Result<Self> {
        let s = Self { dimensions };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = std::collections::BTreeSet::new();
        for d in &self.dimensions {
            if !names.insert(d.name.as_str()) {
                return Err(Error::invalid(format!("duplicate dimension `{}`", d.name)));
            }
            let ok = match &d.domain {
                Domain::Uniform { lo, hi } => lo < hi && lo.is_finite() && hi.is_finite(),
                Domain::LogUniform { lo, hi } => *lo > 0.0 && lo < hi && hi.is_finite(),
                Domain::IntegerRange { lo, hi } => lo <= hi,
                Domain::Categorical { choices } => !choices.is_empty(),
            };
            if !ok {
                return Err(Error::invalid(format!("invalid domain for `{}`", d.name)));
            }
        }
        Ok(())
    }

    /// True when every dimension has a value inside its domain.
    pub fn contains(&self, config: &Config) -> bool {
        self.dimensions.iter().all(|d| match (config.get(&d.name), &d.domain) {
            (Some(Value::Float(x)), Domain::Uniform { lo, hi }) => lo <= x && x <= hi,
            (Some(Value::Float(x)), Domain::LogUniform { lo, hi }) => lo <= x && x <= hi,
            (Some(Value::Int(x)), Domain::IntegerRange { lo, hi }) => lo <= x && x <= hi,
            (Some(Value::Categorical(c)), Domain::Categorical { choices }) => choices.contains(c),
            _ => false,
        }) && config.len() == self.dimensions.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Float(f64),
    Categorical(String),
}

pub type Config = BTreeMap<String, Value>;

/// Typed lookups into a [`Config`].
pub trait ConfigExt {
    fn float(&self, name: &str) -> Option<f64>;
    fn int(&self, name: &str) -> Option<i64>;
    fn choice(&self, name: &str) -> Option<&str>;
}

impl ConfigExt for Config {
    fn float(&self, name: &str) -> Option<f64> {
        match self.get(name)? {
            Value::Float(v) => Some(*v),
            Value::Int(v) => Some(*v as f64),
            Value::Categorical(_) => None,
        }
    }

    fn int(&self, name: &str) -> Option<i64> {
        match self.get(name)? {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    fn choice(&self, name: &str) -> Option<&str> {
        match self.get(name)? {
            Value::Categorical(v) => Some(v),
            _ => None,
        }
    }
}

mod score_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    // JSON has no infinities; failed trials are written as null.
    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    #[serde(rename = "index")]
    pub trial_index: usize,
    pub config: Config,
    /// Higher is better; failed evaluations score negative infinity.
    #[serde(with = "score_serde")]
    pub score: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialHistory {
    pub trials: Vec<Trial>,
}

impl TrialHistory {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn push(&mut self, config: Config, score: f64, seconds: f64) {
        let score = if score.is_nan() { f64::NEG_INFINITY } else { score };
        self.trials.push(Trial {
            trial_index: self.trials.len(),
            config,
            score,
            seconds,
        });
    }

    /// Highest-scoring trial; the earliest wins ties.
    pub fn best(&self) -> Option<&Trial> {
        self.trials
            .iter()
            .fold(None, |best: Option<&Trial>, t| match best {
                Some(b) if b.score >= t.score => Some(b),
                _ => Some(t),
            })
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.trials {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut h = TrialHistory::default();
        for line in r.lines() {
            let line = line.map_err(|e| Error::io("<jsonl>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Trial = serde_json::from_str(&line)?;
            if t.trial_index != h.trials.len() {
                return Err(Error::invalid(format!(
                    "trial index {} out of sequence (expected {})",
                    t.trial_index,
                    h.trials.len()
                )));
            }
            h.trials.push(t);
        }
        Ok(h)
    }
}

/// Kernel width rule for numeric dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Silverman: `1.06 * std(observations) * n^(-1/5)`; sets with fewer
    /// than two points fall back to [`Bandwidth::DomainWidth`].
    SampleSpread,
    /// `1.06 * R * n^(-1/5)`. Kernels stay wide (over half the domain for
    /// n < 15), so the search behaves close to uniform sampling.
    DomainWidth,
    /// Per-point width: the larger gap to the neighbouring observations,
    /// clipped to `[R / min(100, n + 1), R]`.
    #[default]
    Adaptive,
}

impl Bandwidth {
    /// One kernel width per observation.
    fn widths(self, observed: &[f64], range: f64) -> Vec<f64> {
        if self != Bandwidth::Adaptive {
            return vec![self.width(observed, range); observed.len()];
        }
        let n = observed.len();
        let floor = range / (n + 1).min(100) as f64;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| observed[a].total_cmp(&observed[b]));
        let mut out = vec![range; n];
        for (rank, &i) in order.iter().enumerate() {
            let left = rank.checked_sub(1).map(|r| observed[i] - observed[order[r]]);
            let right = order.get(rank + 1).map(|&j| observed[j] - observed[i]);
            let gap = match (left, right) {
                (Some(a), Some(b)) => a.max(b),
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => range,
            };
            out[i] = gap.clamp(floor, range);
        }
        out
    }

    fn width(self, observed: &[f64], range: f64) -> f64 {
        let n = observed.len().max(1) as f64;
        let spread = match self {
            Bandwidth::SampleSpread if observed.len() >= 2 => {
                let mean = observed.iter().sum::<f64>() / n;
                (observed.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            }
            _ => range,
        };
        (spread * 1.06 * n.powf(-0.2)).max(range * 1e-3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TpeConfig {
    pub gamma: f64,
    pub n_startup: usize,
    pub n_candidates: usize,
    pub bandwidth: Bandwidth,
    pub seed: u64,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self {
            gamma: 0.25,
            n_startup: 10,
            n_candidates: 24,
            bandwidth: Bandwidth::default(),
            seed: 0,
        }
    }
}

impl TpeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid(format!("gamma {} not in (0, 1)", self.gamma)));
        }
        if self.n_candidates == 0 {
            return Err(Error::invalid("n_candidates must be >= 1"));
        }
        Ok(())
    }
}

fn sample_dimension(domain: &Domain, rng: &mut Rng) -> Value {
    match domain {
        Domain::Uniform { lo, hi } => Value::Float(rng.random_range(*lo..=*hi)),
        Domain::LogUniform { lo, hi } => {
            let v = rng.random_range(lo.ln()..=hi.ln()).exp();
            Value::Float(v.clamp(*lo, *hi))
        }
        Domain::IntegerRange { lo, hi } => Value::Int(rng.random_range(*lo..=*hi)),
        Domain::Categorical { choices } => {
            Value::Categorical(choices[rng.random_range(0..choices.len())].clone())
        }
    }
}

/// Independent uniform draw per dimension (log-uniform draws uniform in log space).
pub fn sample_uniform(space: &SearchSpace, rng: &mut Rng) -> Config {
    space
        .dimensions
        .iter()
        .map(|d| (d.name.clone(), sample_dimension(&d.domain, rng)))
        .collect()
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Parzen mixture over a bounded interval.
#[derive(Debug, Clone)]
struct Parzen {
    lo: f64,
    hi: f64,
    centers: Vec<f64>,
    widths: Vec<f64>,
    /// Probability mass of each truncated Gaussian inside `[lo, hi]`.
    mass: Vec<f64>,
}

impl Parzen {
    fn fit(observed: &[f64], lo: f64, hi: f64, rule: Bandwidth) -> Self {
        let widths = rule.widths(observed, hi - lo);
        let mass = observed
            .iter()
            .zip(&widths)
            .map(|(&c, &h)| {
                let m = std_normal_cdf((hi - c) / h) - std_normal_cdf((lo - c) / h);
                m.max(1e-300)
            })
            .collect();
        Self {
            lo,
            hi,
            centers: observed.to_vec(),
            widths,
            mass,
        }
    }

    fn weight(&self) -> f64 {
        1.0 / (self.centers.len() + 1) as f64
    }

    fn pdf(&self, x: f64) -> f64 {
        let w = self.weight();
        let mut p = w / (self.hi - self.lo);
        let root_tau = (2.0 * std::f64::consts::PI).sqrt();
        for ((c, h), m) in self.centers.iter().zip(&self.widths).zip(&self.mass) {
            let z = (x - c) / h;
            p += w * (-0.5 * z * z).exp() / (h * root_tau * m);
        }
        p
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        let k = rng.random_range(0..=self.centers.len());
        if k == self.centers.len() {
            return rng.random_range(self.lo..=self.hi);
        }
        let c = self.centers[k];
        for _ in 0..100 {
            let z: f64 = rng.sample(StandardNormal);
            let x = c + self.widths[k] * z;
            if (self.lo..=self.hi).contains(&x) {
                return x;
            }
        }
        c.clamp(self.lo, self.hi)
    }
}

#[derive(Debug, Clone)]
enum DimDensity {
    Numeric { parzen: Parzen, kind: NumericKind },
    Categorical { probs: Vec<f64>, choices: Vec<String> },
}

#[derive(Debug, Clone, Copy)]
enum NumericKind {
    Linear,
    Log,
    Integer { lo: i64, hi: i64 },
}

impl DimDensity {
    fn fit(domain: &Domain, name: &str, trials: &[&Trial], rule: Bandwidth) -> Self {
        let numeric = |lo: f64, hi: f64, kind: NumericKind, map: &dyn Fn(f64) -> f64| {
            let obs: Vec<f64> = trials
                .iter()
                .filter_map(|t| t.config.float(name))
                .map(map)
                .collect();
            DimDensity::Numeric {
                parzen: Parzen::fit(&obs, lo, hi, rule),
                kind,
            }
        };
        match domain {
            Domain::Uniform { lo, hi } => numeric(*lo, *hi, NumericKind::Linear, &|x| x),
            Domain::LogUniform { lo, hi } => numeric(lo.ln(), hi.ln(), NumericKind::Log, &f64::ln),
            Domain::IntegerRange { lo, hi } if lo == hi => DimDensity::Categorical {
                probs: vec![1.0],
                choices: vec![lo.to_string()],
            },
            Domain::IntegerRange { lo, hi } => numeric(
                *lo as f64,
                *hi as f64,
                NumericKind::Integer { lo: *lo, hi: *hi },
                &|x| x,
            ),
            Domain::Categorical { choices } => {
                let mut counts = vec![1.0; choices.len()];
                for t in trials {
                    if let Some(i) = t
                        .config
                        .choice(name)
                        .and_then(|c| choices.iter().position(|x| x == c))
                    {
                        counts[i] += 1.0;
                    }
                }
                let total: f64 = counts.iter().sum();
                DimDensity::Categorical {
                    probs: counts.iter().map(|c| c / total).collect(),
                    choices: choices.clone(),
                }
            }
        }
    }

    fn sample(&self, rng: &mut Rng) -> Value {
        match self {
            DimDensity::Numeric { parzen, kind } => {
                let x = parzen.sample(rng);
                match kind {
                    NumericKind::Linear => Value::Float(x),
                    NumericKind::Log => Value::Float(x.exp()),
                    NumericKind::Integer { lo, hi } => Value::Int((x.round() as i64).clamp(*lo, *hi)),
                }
            }
            DimDensity::Categorical { probs, choices } => {
                let mut u: f64 = rng.random();
                for (p, c) in probs.iter().zip(choices) {
                    if u < *p {
                        return Value::Categorical(c.clone());
                    }
                    u -= p;
                }
                Value::Categorical(choices[choices.len() - 1].clone())
            }
        }
    }

    fn log_pdf(&self, v: &Value) -> f64 {
        match (self, v) {
            (DimDensity::Numeric { parzen, kind }, v) => {
                let x = match (kind, v) {
                    (NumericKind::Log, Value::Float(x)) => x.ln(),
                    (_, Value::Float(x)) => *x,
                    (_, Value::Int(x)) => *x as f64,
                    _ => return f64::NEG_INFINITY,
                };
                parzen.pdf(x).ln()
            }
            (DimDensity::Categorical { probs, choices }, Value::Categorical(c)) => choices
                .iter()
                .position(|x| x == c)
                .map_or(f64::NEG_INFINITY, |i| probs[i].ln()),
            // degenerate integer dimension
            (DimDensity::Categorical { .. }, Value::Int(_)) => 0.0,
            _ => f64::NEG_INFINITY,
        }
    }
}

/// Next configuration to evaluate. The generator is derived from the TPE seed
/// and the history length, so a replayed history yields the same suggestion.
pub fn suggest(history: &TrialHistory, space: &SearchSpace, cfg: &TpeConfig) -> Result<Config> {
    space.validate()?;
    cfg.validate()?;
    let mut rng = seed::child_rng(cfg.seed, &format!("suggest/{}", history.len()));
    let n = history.len();
    if n < cfg.n_startup.max(1) {
        return Ok(sample_uniform(space, &mut rng));
    }

    let mut ranked: Vec<&Trial> = history.trials.iter().collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    let n_good = ((cfg.gamma * n as f64).ceil() as usize).clamp(1, n);
    let (good, bad) = ranked.split_at(n_good);

    let densities: Vec<(DimDensity, DimDensity)> = space
        .dimensions
        .iter()
        .map(|d| {
            (
                DimDensity::fit(&d.domain, &d.name, good, cfg.bandwidth),
                DimDensity::fit(&d.domain, &d.name, bad, cfg.bandwidth),
            )
        })
        .collect();

    let mut best: Option<(f64, Config)> = None;
    for _ in 0..cfg.n_candidates {
        let mut candidate = Config::new();
        let mut acquisition = 0.0;
        for (d, (l, g)) in space.dimensions.iter().zip(&densities) {
            let v = match (&d.domain, l) {
                (Domain::IntegerRange { lo, .. }, DimDensity::Categorical { .. }) => Value::Int(*lo),
                _ => l.sample(&mut rng),
            };
            acquisition += l.log_pdf(&v) - g.log_pdf(&v);
            candidate.insert(d.name.clone(), v);
        }
        if best.as_ref().is_none_or(|(a, _)| acquisition > *a) {
            best = Some((acquisition, candidate));
        }
    }
    Ok(best.expect("n_candidates >= 1").1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub best_config: Config,
    pub best_score: f64,
    pub history: TrialHistory,
}

fn run_trial<F>(objective: &mut F, config: &Config, history: &mut TrialHistory)
where
    F: FnMut(&Config) -> Result<f64>,
{
    let started = Instant::now();
    let score = objective(config).unwrap_or(f64::NEG_INFINITY);
    history.push(config.clone(), score, started.elapsed().as_secs_f64());
}

/// Runs trials until the history holds `budget` entries, starting from
/// `history` (empty for a fresh search). Failed evaluations score -inf.
pub fn optimize_from<F>(
    mut history: TrialHistory,
    mut objective: F,
    space: &SearchSpace,
    budget: usize,
    cfg: &TpeConfig,
) -> Result<OptimizeResult>
where
    F: FnMut(&Config) -> Result<f64>,
{
    if budget == 0 {
        return Err(Error::invalid("optimization budget must be >= 1"));
    }
    while history.len() < budget {
        let config = suggest(&history, space, cfg)?;
        run_trial(&mut objective, &config, &mut history);
    }
    let best = history.best().expect("budget >= 1").clone();
    Ok(OptimizeResult {
        best_config: best.config,
        best_score: best.score,
        history,
    })
}

pub fn optimize<F>(objective: F, space: &SearchSpace, budget: usize, cfg: &TpeConfig) -> Result<OptimizeResult>
where
    F: FnMut(&Config) -> Result<f64>,
{
    optimize_from(TrialHistory::default(), objective, space, budget, cfg)
}

/// Uniform sampling baseline with the same bookkeeping as [`optimize`].
pub fn random_search<F>(mut objective: F, space: &SearchSpace, budget: usize, seed: u64) -> Result<OptimizeResult>
where
    F: FnMut(&Config) -> Result<f64>,
{
    space.validate()?;
    if budget == 0 {
        return Err(Error::invalid("search budget must be >= 1"));
    }
    let mut rng = seed::child_rng(seed, "random-search");
    let mut history = TrialHistory::default();
    for _ in 0..budget {
        let config = sample_uniform(space, &mut rng);
        run_trial(&mut objective, &config, &mut history);
    }
    let best = history.best().expect("budget >= 1").clone();
    Ok(OptimizeResult {
        best_config: best.config,
        best_score: best.score,
        history,
    })
}
