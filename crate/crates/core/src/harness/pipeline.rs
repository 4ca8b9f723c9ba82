use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Generator};
use super::records::{read_records, write_records};
use super::report::{self, TransferRow};
use super::HarnessError;
use crate::attacks::{run_attack_batch, AdversarialRecord, AttackError, AttackKind};
use crate::datax::{gen_blobs, gen_rings, load_csv, tracer_subset, Dataset};
use crate::exec::{derive_seed, Exec};
use crate::netcore::{decode_checkpoint, encode_checkpoint, DenseNet};
use crate::separation::{accuracy, train_classifier, train_tracer, Classify, ParallelModel, Tracer, TracerConfig, TracerMode};
use crate::tracing::{
    collect_distributions, dol, estimate_multicopy_accuracy, exact_multicopy_accuracy, trace_records, trace_source,
    tracing_accuracy, transferability_report, DolDistribution,
};

type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn mode_label(mode: TracerMode) -> &'static str {
    match mode {
        TracerMode::NoiseSensitive => "noise_sensitive",
        TracerMode::RandomUntrained => "random_untrained",
    }
}

/// Directory-safe rendering of a blend weight, e.g. `alpha_0.15`.
fn alpha_dir(alpha: f64) -> String {
    format!("alpha_{alpha}")
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::io(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|_| HarnessError::MissingInput(path.to_path_buf()))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Corrupt {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub epochs: usize,
    pub seed: u64,
    pub param_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracerManifest {
    pub copy_id: usize,
    pub mode: TracerMode,
    pub alphas: Vec<f64>,
    pub tracer_seed: u64,
    pub subset_seed: u64,
    pub subset_size: usize,
    pub config: TracerConfig,
    pub trained: bool,
    pub heldout_loss: Option<f64>,
    pub converged: bool,
    pub classifier_checkpoint: String,
}

/// Held-out accuracy of every copy at one blend weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub alpha: f64,
    pub copy_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    /// Baseline accuracy minus this row's mean, in percentage points.
    pub drop_points: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub mode: TracerMode,
    pub bare_classifier: f64,
    pub rows: Vec<AccuracyRow>,
    /// At alpha = 0 every copy predicted exactly what the bare classifier
    /// predicted on every test row.
    pub zero_alpha_matches_classifier: bool,
    pub tracer_heldout_loss: Vec<Option<f64>>,
    pub tracers_converged: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStatus {
    pub variant: String,
    pub alpha: f64,
    pub attack: AttackKind,
    pub ok: bool,
    pub records: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DolSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
}

impl From<&DolDistribution> for DolSummary {
    fn from(d: &DolDistribution) -> Self {
        Self {
            count: d.len(),
            mean: d.mean(),
            median: d.median(),
            std_dev: d.std_dev(),
            min: d.min(),
            max: d.max(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticopyPoint {
    pub n: usize,
    pub estimated: f64,
    pub exact: f64,
}

/// Tracing results for one (variant, alpha, attack) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCell {
    pub variant: String,
    pub alpha: f64,
    pub attack: AttackKind,
    pub records: usize,
    pub copies: usize,
    /// Tracing accuracy over all copies.
    pub accuracy: f64,
    /// Tracing accuracy with only the source and the victim as candidates.
    pub two_copy_accuracy: f64,
    pub mean_l2: f64,
    pub total_queries: u64,
    pub source_dol: DolSummary,
    pub victim_dol: DolSummary,
    pub multicopy: Vec<MulticopyPoint>,
    pub transfer: TransferRow,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceFragment {
    pub cells: Vec<TraceCell>,
    pub notes: Vec<String>,
    pub gaps: Vec<String>,
}

/// Runs pipeline stages for one config under one output directory.
pub struct Pipeline {
    cfg: ExperimentConfig,
    out: PathBuf,
    exec: Exec,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig, exec: Exec) -> Self {
        let out = cfg.output.dir.clone();
        Self { cfg, out, exec }
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    fn path(&self, parts: &[&str]) -> PathBuf {
        let mut p = self.out.clone();
        p.extend(parts);
        p
    }

    pub fn classifier_path(&self) -> PathBuf {
        self.path(&["classifier", "classifier.ckpt"])
    }

    fn tracer_dir(&self, variant: TracerMode, copy: usize) -> PathBuf {
        self.path(&["tracers", mode_label(variant), &format!("copy_{copy}")])
    }

    fn cell_paths(&self, variant: TracerMode, alpha: f64, kind: AttackKind) -> (PathBuf, PathBuf) {
        let dir = self.path(&["attacks", mode_label(variant), &alpha_dir(alpha)]);
        (dir.join(format!("{}.csv", kind.name())), dir.join(format!("{}.bin", kind.name())))
    }

    /// Tracer variants this run produces: the configured mode, plus the
    /// untrained ablation when enabled.
    pub fn variants(&self) -> Vec<TracerMode> {
        let mut v = vec![self.cfg.tracers.mode];
        if self.cfg.experiment.ablation && self.cfg.tracers.mode == TracerMode::NoiseSensitive {
            v.push(TracerMode::RandomUntrained);
        }
        v
    }

    /// Blend weights that get attacked and traced (alpha = 0 has no tracer
    /// influence, so it is skipped).
    fn traced_alphas(&self) -> Vec<f64> {
        self.cfg.experiment.alphas.iter().copied().filter(|&a| a > 0.0).collect()
    }

    fn zero_alpha_note(&self) -> Option<String> {
        self.cfg
            .experiment
            .alphas
            .contains(&0.0)
            .then(|| "alpha 0 skipped for attacks and tracing: the tracer has no influence on the output".to_owned())
    }

    /// `(train, test)` split of the configured dataset.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let d = &self.cfg.dataset;
        let full = match d.generator {
            Generator::Blobs => gen_blobs(
                d.classes.unwrap_or_default(),
                d.dim.unwrap_or_default(),
                d.n_per_class.unwrap_or_default(),
                d.spread.unwrap_or_default(),
                d.seed,
            )?,
            Generator::Rings => gen_rings(d.n_per_class.unwrap_or_default(), d.seed)?,
            Generator::Csv => load_csv(d.path.as_deref().unwrap_or(Path::new("")))?,
        };
        Ok(full.split(d.test_size, d.split_seed)?)
    }

    fn timed<T>(&self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        let secs = start.elapsed().as_secs_f64();
        write_json(&self.path(&["timings", &format!("{stage}.json")]), &BTreeMap::from([("seconds", secs)]))?;
        Ok(out)
    }

    pub fn load_classifier(&self) -> Result<DenseNet> {
        let p = self.classifier_path();
        let bytes = std::fs::read(&p).map_err(|_| HarnessError::MissingInput(p.clone()))?;
        decode_checkpoint(&bytes).map_err(|e| HarnessError::Corrupt { path: p, msg: e.to_string() })
    }

    pub fn load_tracers(&self, variant: TracerMode) -> Result<Vec<Tracer>> {
        (0..self.cfg.tracers.count)
            .map(|i| {
                let dir = self.tracer_dir(variant, i);
                let manifest: TracerManifest = read_json(&dir.join("manifest.json"))?;
                let ckpt = dir.join("tracer.ckpt");
                let bytes = std::fs::read(&ckpt).map_err(|_| HarnessError::MissingInput(ckpt.clone()))?;
                let net = decode_checkpoint(&bytes).map_err(|e| HarnessError::Corrupt {
                    path: ckpt,
                    msg: e.to_string(),
                })?;
                Ok(Tracer::from_parts(net, manifest.tracer_seed, manifest.config, manifest.trained)
                    .with_heldout_loss(manifest.heldout_loss))
            })
            .collect()
    }

    fn models(&self, classifier: &Arc<DenseNet>, tracers: &[Arc<Tracer>], alpha: f64) -> Result<Vec<ParallelModel>> {
        tracers
            .iter()
            .enumerate()
            .map(|(i, t)| Ok(ParallelModel::new(i, classifier.clone(), t.clone(), alpha)?))
            .collect()
    }

    pub fn train_classifier(&self) -> Result<PathBuf> {
        self.timed("train-classifier", || {
            let (train, test) = self.datasets()?;
            let net = train_classifier(&train, &self.cfg.classifier_config())?;
            let metrics = ClassifierMetrics {
                train_accuracy: accuracy(&net, &train, self.exec)?,
                test_accuracy: accuracy(&net, &test, self.exec)?,
                epochs: self.cfg.classifier.epochs,
                seed: self.cfg.classifier.seed,
                param_count: net.param_count(),
            };
            let path = self.classifier_path();
            create_dir(path.parent().unwrap())?;
            std::fs::write(&path, encode_checkpoint(&net)).map_err(|e| HarnessError::io(&path, e))?;
            write_json(&self.path(&["classifier", "metrics.json"]), &metrics)?;
            Ok(path)
        })
    }

    /// Trains (or, for the untrained variant, just initializes) every
    /// tracer, writes the copy bundles and the accuracy-vs-alpha table.
    pub fn train_tracers(&self) -> Result<Vec<PathBuf>> {
        self.timed("train-tracers", || {
            let classifier = Arc::new(self.load_classifier()?);
            let (train, test) = self.datasets()?;
            let t = &self.cfg.tracers;
            let tcfg = self.cfg.tracer_config();
            let mut dirs = Vec::new();
            for variant in self.variants() {
                let built: Vec<Result<Tracer>> = self.exec.map_range(t.count, |i| {
                    let seed = t.seeds[i];
                    let tracer = match variant {
                        TracerMode::NoiseSensitive => {
                            let subset = tracer_subset(&train, t.subset_size.min(train.len()), t.subset_seeds[i])?;
                            train_tracer(&subset, Some(&test), seed, &tcfg)?
                        }
                        TracerMode::RandomUntrained => {
                            let mut tr = Tracer::untrained(train.dim(), train.classes(), seed, tcfg.clone())?;
                            tr.evaluate_heldout(&test, derive_seed(seed, "tracer-heldout", 0))?;
                            tr
                        }
                    };
                    Ok(tracer)
                });
                let tracers = built.into_iter().collect::<Result<Vec<_>>>()?;
                for (i, tr) in tracers.iter().enumerate() {
                    let dir = self.tracer_dir(variant, i);
                    create_dir(&dir)?;
                    let ckpt = dir.join("tracer.ckpt");
                    std::fs::write(&ckpt, encode_checkpoint(tr.net())).map_err(|e| HarnessError::io(&ckpt, e))?;
                    write_json(
                        &dir.join("manifest.json"),
                        &TracerManifest {
                            copy_id: i,
                            mode: variant,
                            alphas: self.cfg.experiment.alphas.clone(),
                            tracer_seed: t.seeds[i],
                            subset_seed: t.subset_seeds[i],
                            subset_size: t.subset_size,
                            config: tcfg.clone(),
                            trained: tr.is_trained(),
                            heldout_loss: tr.heldout_loss(),
                            converged: tr.converged(),
                            classifier_checkpoint: "classifier/classifier.ckpt".into(),
                        },
                    )?;
                    dirs.push(dir);
                }
                if variant == self.cfg.tracers.mode {
                    let table = self.accuracy_table(&classifier, tracers, &test, variant)?;
                    write_json(&self.path(&["tracers", "accuracy.json"]), &table)?;
                }
            }
            Ok(dirs)
        })
    }

    fn accuracy_table(
        &self,
        classifier: &Arc<DenseNet>,
        tracers: Vec<Tracer>,
        test: &Dataset,
        mode: TracerMode,
    ) -> Result<AccuracyTable> {
        let loss = tracers.iter().map(Tracer::heldout_loss).collect();
        let converged = tracers.iter().map(Tracer::converged).collect();
        let tracers: Vec<Arc<Tracer>> = tracers.into_iter().map(Arc::new).collect();
        let mut alphas = vec![0.0];
        alphas.extend(self.cfg.experiment.alphas.iter().copied().filter(|&a| a > 0.0));
        let bare = accuracy(classifier.as_ref(), test, self.exec)?;
        let mut rows: Vec<AccuracyRow> = Vec::new();
        let mut zero_match = true;
        for alpha in alphas {
            let models = self.models(classifier, &tracers, alpha)?;
            let copy_accuracy = models
                .iter()
                .map(|m| Ok(accuracy(m, test, self.exec)?))
                .collect::<Result<Vec<f64>>>()?;
            if alpha == 0.0 {
                for m in &models {
                    let same = self.exec.map_range(test.len(), |i| {
                        let x = test.row(i);
                        matches!((m.classify(x), classifier.predict(x)), (Ok(a), Ok(b)) if a == b)
                    });
                    zero_match &= same.into_iter().all(|s| s);
                }
            }
            let mean = copy_accuracy.iter().sum::<f64>() / copy_accuracy.len() as f64;
            let baseline = rows.first().map_or(mean, |r| r.mean_accuracy);
            rows.push(AccuracyRow {
                alpha,
                copy_accuracy,
                mean_accuracy: mean,
                drop_points: 100.0 * (baseline - mean),
            });
        }
        Ok(AccuracyTable {
            mode,
            bare_classifier: bare,
            rows,
            zero_alpha_matches_classifier: zero_match,
            tracer_heldout_loss: loss,
            tracers_converged: converged,
        })
    }

    /// Attacks the source copy in every (variant, alpha, attack) cell.
    /// Cells that run out of attackable samples are reported and the stage
    /// fails with [`HarnessError::AttackExhausted`] after all cells ran.
    pub fn attack(&self) -> Result<Vec<CellStatus>> {
        self.timed("attack", || {
            let classifier = Arc::new(self.load_classifier()?);
            let (train, test) = self.datasets()?;
            let e = &self.cfg.experiment;
            let mut cells = Vec::new();
            for variant in self.variants() {
                let tracers: Vec<Arc<Tracer>> = self.load_tracers(variant)?.into_iter().map(Arc::new).collect();
                for alpha in self.traced_alphas() {
                    let models = self.models(&classifier, &tracers, alpha)?;
                    for &kind in &e.attacks {
                        let acfg = self.cfg.attack_config(kind);
                        let (csv, bin) = self.cell_paths(variant, alpha, kind);
                        create_dir(csv.parent().unwrap())?;
                        let outcome = run_attack_batch(
                            &models[e.source_copy],
                            e.source_copy,
                            &test,
                            &train,
                            &acfg,
                            e.samples,
                            self.exec,
                        );
                        let status = match outcome {
                            Ok(recs) => {
                                write_records(&csv, &bin, alpha, &recs)?;
                                CellStatus {
                                    variant: mode_label(variant).into(),
                                    alpha,
                                    attack: kind,
                                    ok: true,
                                    records: recs.len(),
                                    error: None,
                                }
                            }
                            Err(err @ AttackError::DatasetExhausted { found, .. }) => {
                                for p in [&csv, &bin] {
                                    let _ = std::fs::remove_file(p);
                                }
                                CellStatus {
                                    variant: mode_label(variant).into(),
                                    alpha,
                                    attack: kind,
                                    ok: false,
                                    records: found,
                                    error: Some(err.to_string()),
                                }
                            }
                            Err(other) => return Err(other.into()),
                        };
                        cells.push(status);
                    }
                }
            }
            write_json(&self.path(&["attacks", "cells.json"]), &cells)?;
            let failed: Vec<String> = cells
                .iter()
                .filter(|c| !c.ok)
                .map(|c| format!("{}/{}/{}: {}", c.variant, alpha_dir(c.alpha), c.attack, c.error.as_deref().unwrap_or("")))
                .collect();
            if !failed.is_empty() {
                return Err(HarnessError::AttackExhausted(failed));
            }
            Ok(cells)
        })
    }

    /// Traces every successful cell; writes `trace/trace.json` and one DOL
    /// CSV per variant.
    pub fn trace(&self) -> Result<TraceFragment> {
        self.timed("trace", || {
            let status_path = self.path(&["attacks", "cells.json"]);
            let statuses: Vec<CellStatus> = read_json(&status_path)?;
            let classifier = Arc::new(self.load_classifier()?);
            let e = &self.cfg.experiment;
            let (source, victim) = (e.source_copy, self.cfg.victim_copy());
            let mut frag = TraceFragment::default();
            frag.notes.extend(self.zero_alpha_note());
            for variant in self.variants() {
                let tracers: Vec<Arc<Tracer>> = self.load_tracers(variant)?.into_iter().map(Arc::new).collect();
                let refs: Vec<&Tracer> = tracers.iter().map(|t| t.as_ref()).collect();
                let mut dol_rows = Vec::new();
                for alpha in self.traced_alphas() {
                    let models = self.models(&classifier, &tracers, alpha)?;
                    for &kind in &e.attacks {
                        let tag = format!("{}/{}/{}", mode_label(variant), alpha_dir(alpha), kind);
                        let ok = statuses
                            .iter()
                            .any(|s| s.ok && s.variant == mode_label(variant) && s.alpha == alpha && s.attack == kind);
                        if !ok {
                            frag.gaps.push(format!("{tag}: no successful attack records"));
                            continue;
                        }
                        let (csv, bin) = self.cell_paths(variant, alpha, kind);
                        let records = read_records(&csv, &bin)?;
                        if records.is_empty() {
                            frag.gaps.push(format!("{tag}: zero records"));
                            continue;
                        }
                        let cell = self.trace_cell(variant, alpha, kind, &records, &refs, &models, source, victim)?;
                        for r in &records {
                            for (c, t) in refs.iter().enumerate() {
                                dol_rows.push(report::DolRow {
                                    record_id: r.sample_id,
                                    copy_id: c,
                                    role: if c == r.source_copy { "source" } else { "victim" }.into(),
                                    dol: dol(t, &r.x_att, r.attacked_label, r.true_label)?,
                                    alpha,
                                    attack: kind.name().into(),
                                });
                            }
                        }
                        frag.cells.push(cell);
                    }
                }
                report::write_dol_csv(&self.path(&["trace", &format!("dol_{}.csv", mode_label(variant))]), &dol_rows)?;
            }
            write_json(&self.path(&["trace", "trace.json"]), &frag)?;
            Ok(frag)
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn trace_cell(
        &self,
        variant: TracerMode,
        alpha: f64,
        kind: AttackKind,
        records: &[AdversarialRecord],
        tracers: &[&Tracer],
        models: &[ParallelModel],
        source: usize,
        victim: usize,
    ) -> Result<TraceCell> {
        let e = &self.cfg.experiment;
        let verdicts = trace_records(tracers, records, self.exec)?;
        let truth: Vec<usize> = records.iter().map(|r| r.source_copy).collect();
        let acc = tracing_accuracy(&verdicts, &truth)?;

        // source vs victim only, candidates ordered by copy id
        let (lo, hi) = (source.min(victim), source.max(victim));
        let pair = [tracers[lo], tracers[hi]];
        let mut hits = 0usize;
        for r in records {
            let v = trace_source(&pair, &r.x_att, r.attacked_label, r.true_label)?;
            hits += usize::from([lo, hi][v.source] == r.source_copy);
        }
        let two = hits as f64 / records.len() as f64;

        let (d_s, d_v) = collect_distributions(records, tracers[source], tracers[victim])?;
        let seed = derive_seed(e.multicopy_seed, &format!("{}/{alpha}/{}", mode_label(variant), kind.name()), 0);
        let mut multicopy = Vec::new();
        for n in 2..=e.multicopy_max_n {
            multicopy.push(MulticopyPoint {
                n,
                estimated: estimate_multicopy_accuracy(&d_s, &d_v, n, e.multicopy_trials, seed, self.exec)?,
                exact: exact_multicopy_accuracy(&d_s, &d_v, n)?,
            });
        }
        let table = transferability_report(records, models, &verdicts)?;
        Ok(TraceCell {
            variant: mode_label(variant).into(),
            alpha,
            attack: kind,
            records: records.len(),
            copies: tracers.len(),
            accuracy: acc,
            two_copy_accuracy: two,
            mean_l2: records.iter().map(|r| r.l2).sum::<f64>() / records.len() as f64,
            total_queries: records.iter().map(|r| r.queries).sum(),
            source_dol: (&d_s).into(),
            victim_dol: (&d_v).into(),
            multicopy,
            transfer: TransferRow::new(alpha, kind, &table),
        })
    }

    /// Assembles `report/report.json` and the CSV tables from whatever
    /// fragments exist; missing pieces are listed as gaps.
    pub fn report(&self) -> Result<report::RunReport> {
        let start = Instant::now();
        let rep = report::assemble(self)?;
        let mut timings: BTreeMap<String, f64> = BTreeMap::new();
        for stage in ["train-classifier", "train-tracers", "attack", "trace"] {
            if let Ok(t) = read_json::<BTreeMap<String, f64>>(&self.path(&["timings", &format!("{stage}.json")])) {
                timings.insert(stage.into(), t.get("seconds").copied().unwrap_or(0.0));
            }
        }
        timings.insert("report".into(), start.elapsed().as_secs_f64());
        write_json(&self.path(&["report", "timings.json"]), &timings)?;
        Ok(rep)
    }

    pub fn all(&self) -> Result<report::RunReport> {
        self.train_classifier()?;
        self.train_tracers()?;
        self.attack()?;
        self.trace()?;
        self.report()
    }

    pub(crate) fn fragment_path(&self, parts: &[&str]) -> PathBuf {
        self.path(parts)
    }
}
