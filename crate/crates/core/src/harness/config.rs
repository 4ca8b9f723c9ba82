//! Experiment configuration (TOML).
//!
//! Every seed must be spelled out; nothing is read from the environment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::attacks::{AttackConfig, AttackKind, BoundaryParams, HsjaParams, SurfreeParams};
use crate::exec::derive_seed;
use crate::separation::{ClassifierConfig, TracerConfig, TracerMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Blobs,
    Rings,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub generator: Generator,
    pub classes: Option<usize>,
    pub dim: Option<usize>,
    pub n_per_class: Option<usize>,
    pub spread: Option<f64>,
    pub path: Option<PathBuf>,
    pub test_size: usize,
    pub seed: u64,
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_classifier_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_classifier_lr")]
    pub learning_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TracerSpec {
    pub count: usize,
    #[serde(default = "default_mode")]
    pub mode: TracerMode,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_tracer_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_tracer_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_noise_hi")]
    pub noise_hi: f64,
    #[serde(default = "default_target_loss")]
    pub target_loss: f64,
    #[serde(default = "default_subset_size")]
    pub subset_size: usize,
    /// Initialization seed per copy.
    pub seeds: Vec<u64>,
    /// Training-subset seed per copy.
    pub subset_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_attacks")]
    pub attacks: Vec<AttackKind>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub source_copy: usize,
    /// Copy whose DOLs form the victim distribution; defaults to the copy
    /// after the source.
    pub victim_copy: Option<usize>,
    #[serde(default = "default_max_queries")]
    pub max_queries: u64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Starting points ranked before each attack begins.
    #[serde(default = "default_init_candidates")]
    pub init_candidates: usize,
    /// Also attack and trace copies built on untrained tracers.
    #[serde(default = "default_true")]
    pub ablation: bool,
    #[serde(default = "default_trials")]
    pub multicopy_trials: usize,
    #[serde(default = "default_max_n")]
    pub multicopy_max_n: usize,
    pub attack_seed: u64,
    pub multicopy_seed: u64,
    #[serde(default)]
    pub boundary: BoundaryParams,
    #[serde(default)]
    pub hsja: HsjaParams,
    #[serde(default)]
    pub surfree: SurfreeParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub classifier: ClassifierSpec,
    pub tracers: TracerSpec,
    pub experiment: ExperimentSpec,
    pub output: OutputSpec,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_classifier_epochs() -> usize {
    200
}
fn default_batch() -> usize {
    64
}
fn default_classifier_lr() -> f64 {
    1e-4
}
fn default_mode() -> TracerMode {
    TracerMode::NoiseSensitive
}
fn default_tracer_epochs() -> usize {
    TracerConfig::default().epochs
}
fn default_tracer_lr() -> f64 {
    TracerConfig::default().learning_rate
}
fn default_noise_hi() -> f64 {
    0.03
}
fn default_target_loss() -> f64 {
    0.1
}
fn default_subset_size() -> usize {
    1000
}
fn default_alphas() -> Vec<f64> {
    vec![0.05, 0.1, 0.15]
}
fn default_attacks() -> Vec<AttackKind> {
    vec![AttackKind::Boundary, AttackKind::Hsja, AttackKind::Surfree]
}
fn default_samples() -> usize {
    100
}
fn default_max_queries() -> u64 {
    5000
}
fn default_tolerance() -> f64 {
    1e-6
}
fn default_init_candidates() -> usize {
    50
}
fn default_true() -> bool {
    true
}
fn default_trials() -> usize {
    10_000
}
fn default_max_n() -> usize {
    10
}

fn bad(field: &str, msg: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        field: field.to_owned(),
        msg: msg.into(),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| bad("<toml>", e.to_string().trim_end()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad("--config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The desk-scale experiment: 10 Gaussian blobs in 16 dimensions, two
    /// copies, three blend weights and all three attacks.
    pub fn desk_default(out: impl Into<PathBuf>) -> Self {
        Self {
            dataset: DatasetSpec {
                generator: Generator::Blobs,
                classes: Some(10),
                dim: Some(16),
                n_per_class: Some(600),
                spread: Some(0.05),
                path: None,
                test_size: 1000,
                seed: 1,
                split_seed: 2,
            },
            classifier: ClassifierSpec {
                hidden: default_hidden(),
                epochs: default_classifier_epochs(),
                batch_size: default_batch(),
                learning_rate: default_classifier_lr(),
                seed: 3,
            },
            tracers: TracerSpec {
                count: 2,
                mode: TracerMode::NoiseSensitive,
                hidden: default_hidden(),
                epochs: default_tracer_epochs(),
                batch_size: default_batch(),
                learning_rate: default_tracer_lr(),
                noise_hi: default_noise_hi(),
                target_loss: default_target_loss(),
                subset_size: default_subset_size(),
                seeds: vec![100, 101],
                subset_seeds: vec![200, 201],
            },
            experiment: ExperimentSpec {
                alphas: default_alphas(),
                attacks: default_attacks(),
                samples: default_samples(),
                source_copy: 0,
                victim_copy: None,
                max_queries: default_max_queries(),
                tolerance: default_tolerance(),
                init_candidates: default_init_candidates(),
                ablation: true,
                multicopy_trials: default_trials(),
                multicopy_max_n: default_max_n(),
                attack_seed: 7,
                multicopy_seed: 8,
                boundary: BoundaryParams::default(),
                hsja: HsjaParams::default(),
                surfree: SurfreeParams::default(),
            },
            output: OutputSpec { dir: out.into() },
        }
    }

    /// Replaces every seed with one derived from `master`.
    pub fn override_seeds(&mut self, master: u64) {
        self.dataset.seed = derive_seed(master, "dataset", 0);
        self.dataset.split_seed = derive_seed(master, "split", 0);
        self.classifier.seed = derive_seed(master, "classifier", 0);
        for (i, s) in self.tracers.seeds.iter_mut().enumerate() {
            *s = derive_seed(master, "tracer", i as u64);
        }
        for (i, s) in self.tracers.subset_seeds.iter_mut().enumerate() {
            *s = derive_seed(master, "tracer-subset", i as u64);
        }
        self.experiment.attack_seed = derive_seed(master, "attack", 0);
        self.experiment.multicopy_seed = derive_seed(master, "multicopy", 0);
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let d = &self.dataset;
        match d.generator {
            Generator::Blobs => {
                let classes = d.classes.ok_or_else(|| bad("dataset.classes", "required for generator \"blobs\""))?;
                let dim = d.dim.ok_or_else(|| bad("dataset.dim", "required for generator \"blobs\""))?;
                let n = d
                    .n_per_class
                    .ok_or_else(|| bad("dataset.n_per_class", "required for generator \"blobs\""))?;
                let spread = d.spread.ok_or_else(|| bad("dataset.spread", "required for generator \"blobs\""))?;
                if classes < 2 {
                    return Err(bad("dataset.classes", format!("must be >= 2 (got {classes})")));
                }
                if dim < 2 {
                    return Err(bad("dataset.dim", format!("must be >= 2 (got {dim})")));
                }
                if n == 0 {
                    return Err(bad("dataset.n_per_class", "must be > 0"));
                }
                if !(spread >= 0.0 && spread.is_finite()) {
                    return Err(bad("dataset.spread", format!("must be >= 0 (got {spread})")));
                }
            }
            Generator::Rings => {
                if d.n_per_class.unwrap_or(0) == 0 {
                    return Err(bad("dataset.n_per_class", "required and > 0 for generator \"rings\""));
                }
            }
            Generator::Csv => match &d.path {
                None => return Err(bad("dataset.path", "required for generator \"csv\"")),
                Some(p) if !p.is_file() => {
                    return Err(bad("dataset.path", format!("file not found: {}", p.display())));
                }
                Some(_) => {}
            },
        }
        if d.test_size == 0 {
            return Err(bad("dataset.test_size", "must be > 0"));
        }

        let c = &self.classifier;
        if c.hidden.contains(&0) {
            return Err(bad("classifier.hidden", "layer widths must be > 0"));
        }
        if c.epochs == 0 || c.batch_size == 0 {
            return Err(bad("classifier.epochs", "epochs and batch_size must be > 0"));
        }
        if !(c.learning_rate > 0.0) {
            return Err(bad("classifier.learning_rate", "must be > 0"));
        }

        let t = &self.tracers;
        if t.count < 2 {
            return Err(bad("tracers.count", format!("tracing needs >= 2 copies (got {})", t.count)));
        }
        if t.seeds.len() != t.count {
            return Err(bad(
                "tracers.seeds",
                format!("expected {} seeds (one per copy), got {}", t.count, t.seeds.len()),
            ));
        }
        if t.subset_seeds.len() != t.count {
            return Err(bad(
                "tracers.subset_seeds",
                format!("expected {} seeds (one per copy), got {}", t.count, t.subset_seeds.len()),
            ));
        }
        if t.hidden.contains(&0) {
            return Err(bad("tracers.hidden", "layer widths must be > 0"));
        }
        if t.batch_size == 0 {
            return Err(bad("tracers.batch_size", "must be > 0"));
        }
        if !(t.learning_rate > 0.0) {
            return Err(bad("tracers.learning_rate", "must be > 0"));
        }
        if !(t.noise_hi > 0.0 && t.noise_hi.is_finite()) {
            return Err(bad("tracers.noise_hi", "must be > 0"));
        }
        if t.subset_size == 0 {
            return Err(bad("tracers.subset_size", "must be > 0"));
        }

        let e = &self.experiment;
        if e.alphas.is_empty() {
            return Err(bad("experiment.alphas", "must not be empty"));
        }
        if let Some(a) = e.alphas.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
            return Err(bad("experiment.alphas", format!("values must be >= 0 (got {a})")));
        }
        if e.attacks.is_empty() {
            return Err(bad("experiment.attacks", "must not be empty"));
        }
        if e.source_copy >= t.count {
            return Err(bad("experiment.source_copy", format!("must be < tracers.count ({})", t.count)));
        }
        let victim = self.victim_copy();
        if victim >= t.count || victim == e.source_copy {
            return Err(bad("experiment.victim_copy", "must be a copy other than the source"));
        }
        if e.multicopy_max_n < 2 {
            return Err(bad("experiment.multicopy_max_n", "must be >= 2"));
        }
        if e.multicopy_trials == 0 {
            return Err(bad("experiment.multicopy_trials", "must be > 0"));
        }
        for kind in &e.attacks {
            self.attack_config(*kind)
                .validate()
                .map_err(|err| bad(&format!("experiment.{}", kind.name()), err.to_string()))?;
        }
        Ok(())
    }

    pub fn victim_copy(&self) -> usize {
        self.experiment
            .victim_copy
            .unwrap_or((self.experiment.source_copy + 1) % self.tracers.count.max(1))
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        let c = &self.classifier;
        ClassifierConfig {
            hidden: c.hidden.clone(),
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            seed: c.seed,
        }
    }

    pub fn tracer_config(&self) -> TracerConfig {
        let t = &self.tracers;
        TracerConfig {
            hidden: t.hidden.clone(),
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            noise_hi: t.noise_hi,
            target_loss: t.target_loss,
        }
    }

    pub fn attack_config(&self, kind: AttackKind) -> AttackConfig {
        let e = &self.experiment;
        AttackConfig {
            kind,
            max_queries: e.max_queries,
            tolerance: e.tolerance,
            init_candidates: e.init_candidates,
            seed: derive_seed(e.attack_seed, kind.name(), 0),
            boundary: e.boundary.clone(),
            hsja: e.hsja.clone(),
            surfree: e.surfree.clone(),
            ..AttackConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(err: HarnessError) -> String {
        match err {
            HarnessError::Config { field, .. } => field,
            other => panic!("not a config error: {other}"),
        }
    }

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::desk_default("out");
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn missing_seed_is_rejected() {
        let text = ExperimentConfig::desk_default("out")
            .to_toml()
            .replace("attack_seed = 7\n", "");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("attack_seed"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_csv_path_names_field() {
        let mut cfg = ExperimentConfig::desk_default("out");
        cfg.dataset.generator = Generator::Csv;
        assert_eq!(field_of(cfg.validate().unwrap_err()), "dataset.path");
        cfg.dataset.path = Some("/definitely/not/here.csv".into());
        assert_eq!(field_of(cfg.validate().unwrap_err()), "dataset.path");
    }

    #[test]
    fn field_precise_errors() {
        let mut cfg = ExperimentConfig::desk_default("out");
        cfg.tracers.count = 1;
        assert_eq!(field_of(cfg.validate().unwrap_err()), "tracers.count");

        let mut cfg = ExperimentConfig::desk_default("out");
        cfg.tracers.seeds.pop();
        assert_eq!(field_of(cfg.validate().unwrap_err()), "tracers.seeds");

        let mut cfg = ExperimentConfig::desk_default("out");
        cfg.experiment.alphas = vec![0.1, -0.2];
        assert_eq!(field_of(cfg.validate().unwrap_err()), "experiment.alphas");

        let mut cfg = ExperimentConfig::desk_default("out");
        cfg.experiment.max_queries = 0;
        assert_eq!(field_of(cfg.validate().unwrap_err()), "experiment.boundary");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = ExperimentConfig::desk_default("out").to_toml() + "\n[extra]\nx = 1\n";
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn seed_override_changes_every_seed() {
        let base = ExperimentConfig::desk_default("out");
        let mut a = base.clone();
        a.override_seeds(5);
        assert_ne!(a.dataset.seed, base.dataset.seed);
        assert_ne!(a.tracers.seeds, base.tracers.seeds);
        assert_ne!(a.tracers.seeds[0], a.tracers.seeds[1]);
        let mut b = base.clone();
        b.override_seeds(5);
        assert_eq!(a, b);
    }
}
