//! Datasets and input noise.
//!
//! Every feature lives in the unit box `[0, 1]`; generators clip, CSV input is
//! min-max rescaled per column. Generators are pure functions of their seed.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset parameters: {0}")]
    Invalid(String),
    #[error("{path}: {msg}")]
    Csv { path: String, msg: String },
    #[error("{path}, line {line}: {msg}")]
    Parse { path: String, line: u64, msg: String },
    #[error("requested {requested} samples but dataset has {available}")]
    TooFew { requested: usize, available: usize },
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    classes: usize,
    provenance: String,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<usize>,
        classes: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if dim == 0 || labels.is_empty() {
            return Err(DataError::Invalid("dataset must be non-empty".into()));
        }
        if features.len() != dim * labels.len() {
            return Err(DataError::Invalid(format!(
                "{} feature values for {} rows of dim {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::Invalid(format!("label {l} >= class count {classes}")));
        }
        if features.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(DataError::Invalid("feature outside [0, 1]".into()));
        }
        Ok(Self {
            features,
            dim,
            labels,
            classes,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.features
            .chunks_exact(self.dim)
            .zip(self.labels.iter().copied())
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize], provenance: impl Into<String>) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            features,
            dim: self.dim,
            labels,
            classes: self.classes,
            provenance: provenance.into(),
        }
    }

    /// Seeded shuffle split into `(train, test)` with `test_size` test rows.
    pub fn split(&self, test_size: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        if test_size == 0 || test_size >= self.len() {
            return Err(DataError::Invalid(format!(
                "test size {test_size} must be in 1..{}",
                self.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let perm = index::sample(&mut rng, self.len(), self.len()).into_vec();
        let (test, train) = perm.split_at(test_size);
        Ok((
            self.select(train, format!("{}:train", self.provenance)),
            self.select(test, format!("{}:test", self.provenance)),
        ))
    }
}

/// `K` Gaussian clusters in `d` dimensions, clipped to the unit box.
///
/// Centers are drawn uniformly from `[0.2, 0.8]^d`, rejecting candidates
/// closer than `10 * spread` to an existing center.
pub fn gen_blobs(classes: usize, dim: usize, n_per_class: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || dim < 2 || n_per_class == 0 {
        return Err(DataError::Invalid(format!(
            "blobs need classes >= 2, dim >= 2, n_per_class >= 1 (got {classes}, {dim}, {n_per_class})"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(DataError::Invalid(format!("spread {spread} must be finite and >= 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_sep = 10.0 * spread;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..1000 {
            let c: Vec<f64> = (0..dim).map(|_| rng.random_range(0.2..0.8)).collect();
            let nearest = centers
                .iter()
                .map(|o| l2(o, &c))
                .fold(f64::INFINITY, f64::min);
            if nearest >= min_sep {
                best = Some((nearest, c));
                break;
            }
            if best.as_ref().is_none_or(|(d, _)| nearest > *d) {
                best = Some((nearest, c));
            }
        }
        centers.push(best.expect("at least one candidate").1);
    }
    let mut features = Vec::with_capacity(classes * n_per_class * dim);
    let mut labels = Vec::with_capacity(classes * n_per_class);
    for _ in 0..n_per_class {
        for (k, c) in centers.iter().enumerate() {
            for &ci in c {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push((ci + spread * z).clamp(0.0, 1.0));
            }
            labels.push(k);
        }
    }
    Dataset::new(
        features,
        dim,
        labels,
        classes,
        format!("blobs(classes={classes},dim={dim},n_per_class={n_per_class},spread={spread},seed={seed})"),
    )
}

/// Two concentric annuli around `(0.5, 0.5)`: class 0 has radius in
/// `[0.05, 0.2]`, class 1 in `[0.3, 0.45]`.
pub fn gen_rings(n_per_class: usize, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(DataError::Invalid("rings need n_per_class >= 1".into()));
    }
    let bands = [(0.05, 0.2), (0.3, 0.45)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(4 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for _ in 0..n_per_class {
        for (k, &(lo, hi)) in bands.iter().enumerate() {
            let r: f64 = rng.random_range(lo..hi);
            let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            features.push((0.5 + r * t.cos()).clamp(0.0, 1.0));
            features.push((0.5 + r * t.sin()).clamp(0.0, 1.0));
            labels.push(k);
        }
    }
    Dataset::new(features, 2, labels, 2, format!("rings(n_per_class={n_per_class},seed={seed})"))
}

/// Reads `f0,...,f{d-1},label`. Features are min-max rescaled per column
/// (constant columns become 0). Labels are re-indexed densely in sorted
/// order (numeric order when every label parses as a number).
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let p = path.display().to_string();
    let csv_err = |msg: String| DataError::Csv { path: p.clone(), msg };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(e.to_string()))?;
    let header = reader.headers().map_err(|e| csv_err(e.to_string()))?.clone();
    let dim = header.len().saturating_sub(1);
    if dim == 0 {
        return Err(csv_err("header needs at least one feature column and a label".into()));
    }
    for (i, name) in header.iter().take(dim).enumerate() {
        if name.trim() != format!("f{i}") {
            return Err(csv_err(format!("header column {i} is {name:?}, expected \"f{i}\"")));
        }
    }
    if header.get(dim).map(str::trim) != Some("label") {
        return Err(csv_err("last header column must be \"label\"".into()));
    }

    let mut raw = Vec::new();
    let mut raw_labels = Vec::new();
    for (row_no, rec) in reader.records().enumerate() {
        // header is line 1
        let line = row_no as u64 + 2;
        let parse_err = |msg: String| DataError::Parse { path: p.clone(), line, msg };
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        if rec.len() != dim + 1 {
            return Err(parse_err(format!("expected {} fields, found {}", dim + 1, rec.len())));
        }
        for (j, cell) in rec.iter().take(dim).enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("column f{j}: {cell:?} is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("column f{j}: non-finite value")));
            }
            raw.push(v);
        }
        raw_labels.push(rec[dim].trim().to_owned());
    }
    if raw_labels.is_empty() {
        return Err(csv_err("no data rows".into()));
    }

    let n = raw_labels.len();
    for j in 0..dim {
        let (lo, hi) = (0..n)
            .map(|i| raw[i * dim + j])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        for i in 0..n {
            let v = &mut raw[i * dim + j];
            *v = if span > 0.0 { ((*v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
        }
    }

    let numeric = raw_labels.iter().all(|l| l.parse::<f64>().is_ok());
    let mut distinct: Vec<&String> = raw_labels.iter().collect();
    if numeric {
        distinct.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    } else {
        distinct.sort();
    }
    distinct.dedup();
    let index: BTreeMap<&str, usize> = distinct.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let labels = raw_labels.iter().map(|l| index[l.as_str()]).collect();
    Dataset::new(raw, dim, labels, distinct.len(), p)
}

pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let p = path.display().to_string();
    let csv_err = |e: csv::Error| DataError::Csv { path: p.clone(), msg: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = (0..ds.dim).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(csv_err)?;
    for (row, label) in ds.rows() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(label.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| DataError::Csv { path: p.clone(), msg: e.to_string() })
}

/// `n` rows sampled uniformly without replacement.
pub fn tracer_subset(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n > ds.len() {
        return Err(DataError::TooFew {
            requested: n,
            available: ds.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = index::sample(&mut rng, ds.len(), n).into_vec();
    Ok(ds.select(&idx, format!("{}:subset(n={n},seed={seed})", ds.provenance)))
}

/// Additive noise `U[0, hi)` per entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub hi: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { hi: 0.03 }
    }
}

impl NoiseSpec {
    pub fn new(hi: f64) -> Result<Self> {
        if !(hi > 0.0 && hi.is_finite()) {
            return Err(DataError::Invalid(format!("noise bound {hi} must be > 0")));
        }
        Ok(Self { hi })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.random::<f64>() * self.hi
    }
}

/// `clip(x + No, 0, 1)` with `No[i] ~ U[0, hi)` i.i.d.
pub fn add_noise<R: Rng + ?Sized>(x: &[f64], spec: &NoiseSpec, rng: &mut R) -> Vec<f64> {
    x.iter().map(|&v| (v + spec.sample(rng)).clamp(0.0, 1.0)).collect()
}

pub(crate) fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
