//! Seeded synthetic flow records for desk-scale runs.
//!
//! Each class is a Gaussian blob over the informative columns. Redundant
//! columns are noisy copies of informative ones and noise columns carry no
//! class signal, so feature selection has something to find; per-class row
//! counts control the imbalance.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Dataset, LabelMap};
use crate::matrix::Matrix;
use crate::seed;

pub const LABEL_COLUMN: &str = "Label";

const CLASS_NAMES: [&str; 8] = [
    "Benign",
    "DoS",
    "PortScan",
    "Bot",
    "Infiltration",
    "DDoS",
    "BruteForce",
    "WebAttack",
];

const COLUMN_NAMES: [&str; 16] = [
    "Flow Duration",
    "Total Fwd Packets",
    "Total Backward Packets",
    "Fwd Packet Length Mean",
    "Bwd Packet Length Mean",
    "Flow Bytes/s",
    "Flow Packets/s",
    "Flow IAT Mean",
    "Fwd IAT Mean",
    "Bwd IAT Mean",
    "Packet Length Variance",
    "Init Win Bytes Forward",
    "Active Mean",
    "Idle Mean",
    "Down/Up Ratio",
    "Average Packet Size",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub rows_per_class: Vec<usize>,
    pub n_informative: usize,
    pub n_redundant: usize,
    pub n_noise: usize,
    /// Scale of the class centers in within-class standard deviations; 0
    /// makes every class the same distribution.
    pub separation: f64,
    /// Standard deviation of the noise added to redundant copies.
    pub redundant_noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Splits `n_features` into half informative, a quarter redundant and the
    /// rest noise.
    pub fn new(rows_per_class: Vec<usize>, n_features: usize, seed: u64) -> Self {
        let n_informative = (n_features / 2).max(1);
        let n_redundant = n_features.saturating_sub(n_informative) / 2;
        Self {
            rows_per_class,
            n_informative,
            n_redundant,
            n_noise: n_features.saturating_sub(n_informative + n_redundant),
            separation: 2.0,
            redundant_noise: 0.1,
            seed,
        }
    }

    /// 5 classes, 870 rows, 12 features.
    pub fn benchmark(seed: u64) -> Self {
        Self::new(vec![500, 200, 100, 50, 20], 12, seed)
    }

    pub fn n_features(&self) -> usize {
        self.n_informative + self.n_redundant + self.n_noise
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows_per_class.len() < 2 {
            return Err(Error::invalid("synthetic data needs at least 2 classes"));
        }
        if self.rows_per_class.contains(&0) {
            return Err(Error::invalid("every class needs at least one row"));
        }
        if self.n_features() < 2 || self.n_informative == 0 {
            return Err(Error::invalid("synthetic data needs >= 2 features, one informative"));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::invalid("separation must be finite and >= 0"));
        }
        if !(self.redundant_noise >= 0.0 && self.redundant_noise.is_finite()) {
            return Err(Error::invalid("redundant_noise must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Informative,
    Redundant,
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    pub role: ColumnRole,
    /// For redundant columns, the informative column they copy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

/// Ground truth for assertions on the generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMetadata {
    pub spec: SynthSpec,
    pub class_names: Vec<String>,
    pub columns: Vec<ColumnInfo>,
    pub label_column: String,
}

impl SynthMetadata {
    pub fn columns_with_role(&self, role: ColumnRole) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|c| c.role == role)
            .map(|c| c.name.as_str())
            .collect()
    }
}

fn column_name(i: usize) -> String {
    COLUMN_NAMES
        .get(i)
        .map_or_else(|| format!("Feature {i}"), |s| s.to_string())
}

fn class_name(i: usize) -> String {
    CLASS_NAMES
        .get(i)
        .map_or_else(|| format!("Class{i}"), |s| s.to_string())
}

pub fn generate(spec: &SynthSpec) -> Result<(Dataset, SynthMetadata)> {
    spec.validate()?;
    let mut rng = seed::child_rng(spec.seed, "synth");
    let n_classes = spec.rows_per_class.len();
    let n_features = spec.n_features();
    let n_rows: usize = spec.rows_per_class.iter().sum();

    let centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| {
            (0..spec.n_informative)
                .map(|_| spec.separation * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    // Latent column layout: informative, redundant, noise. Columns are then
    // shuffled so roles are not positional.
    let mut roles: Vec<(ColumnRole, Option<usize>)> = Vec::with_capacity(n_features);
    roles.extend((0..spec.n_informative).map(|_| (ColumnRole::Informative, None)));
    roles.extend((0..spec.n_redundant).map(|j| (ColumnRole::Redundant, Some(j % spec.n_informative))));
    roles.extend((0..spec.n_noise).map(|_| (ColumnRole::Noise, None)));
    let mut order: Vec<usize> = (0..n_features).collect();
    order.shuffle(&mut rng);
    let mut position = vec![0; n_features];
    for (pos, &latent) in order.iter().enumerate() {
        position[latent] = pos;
    }
    // Flow statistics are positive with varied magnitudes.
    let scales: Vec<f64> = (0..n_features).map(|_| 10f64.powf(rng.random_range(0.0..4.0))).collect();

    let mut labels: Vec<usize> = spec
        .rows_per_class
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    labels.shuffle(&mut rng);

    let mut features = Matrix::zeros(n_rows, n_features);
    let mut latent = vec![0.0; n_features];
    for (r, &c) in labels.iter().enumerate() {
        for (j, role) in roles.iter().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            latent[j] = match *role {
                (ColumnRole::Informative, _) => centers[c][j] + z,
                (ColumnRole::Redundant, Some(src)) => latent[src] + spec.redundant_noise * z,
                _ => z,
            };
        }
        let row = features.row_mut(r);
        for j in 0..n_features {
            let pos = position[j];
            row[pos] = scales[pos] * (latent[j] + 10.0);
        }
    }

    let names: Vec<String> = (0..n_features).map(column_name).collect();
    let columns = order
        .iter()
        .enumerate()
        .map(|(pos, &latent)| {
            let (role, src) = roles[latent];
            ColumnInfo {
                name: names[pos].clone(),
                role,
                source: src.map(|s| names[position[s]].clone()),
            }
        })
        .collect();

    let class_names: Vec<String> = (0..n_classes).map(class_name).collect();
    let label_map = LabelMap::from_names(&class_names);
    // LabelMap sorts names; remap generation order onto it.
    let remap: Vec<usize> = class_names
        .iter()
        .map(|n| label_map.encode(n).expect("name just inserted"))
        .collect();
    let labels = labels.into_iter().map(|c| remap[c]).collect();
    let dataset = Dataset::new(features, names, labels, label_map)?;
    let meta = SynthMetadata {
        spec: spec.clone(),
        class_names,
        columns,
        label_column: LABEL_COLUMN.to_string(),
    };
    Ok((dataset, meta))
}

/// Writes `<stem>.csv` and `<stem>.meta.json` into `dir`; returns the CSV path.
pub fn write(spec: &SynthSpec, dir: &Path, stem: &str) -> Result<(std::path::PathBuf, SynthMetadata)> {
    let (d, meta) = generate(spec)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    d.write_csv(std::io::BufWriter::new(file), LABEL_COLUMN)?;
    let meta_path = dir.join(format!("{stem}.meta.json"));
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))?;
    Ok((csv_path, meta))
}
