//! `report` stage: folds the stage outputs into `report/report.json`, one
//! CSV per table and DOL histograms. Wall-clock timings go to a separate
//! file so the report itself is deterministic.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pipeline::{mode_label, read_json, write_json, AccuracyTable, ClassifierMetrics, Pipeline, TraceCell, TraceFragment};
use super::HarnessError;
use crate::attacks::AttackKind;
use crate::tracing::TransferTable;

type Result<T> = std::result::Result<T, HarnessError>;

pub const HISTOGRAM_BIN_WIDTH: f64 = 0.05;

/// One row of a per-variant DOL dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DolRow {
    pub record_id: usize,
    pub copy_id: usize,
    pub role: String,
    pub dol: f64,
    pub alpha: f64,
    pub attack: String,
}

pub(crate) fn write_dol_csv(path: &Path, rows: &[DolRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    write_csv(path, rows)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::io(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::io(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn read_dol_csv(path: &Path) -> Result<Vec<DolRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|_| HarnessError::MissingInput(path.to_path_buf()))?;
    rdr.deserialize()
        .map(|r| {
            r.map_err(|e| HarnessError::Corrupt {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Fixed-width histogram covering `[floor(min/w)·w, (floor(max/w)+1)·w)`.
/// Bin edges are integer multiples of `width`, empty bins included.
pub fn histogram(values: &[f64], width: f64) -> Vec<HistogramBin> {
    if values.is_empty() || !(width > 0.0) {
        return Vec::new();
    }
    let idx = |v: f64| (v / width).floor() as i64;
    let lo = values.iter().map(|&v| idx(v)).min().unwrap();
    let hi = values.iter().map(|&v| idx(v)).max().unwrap();
    let mut counts = vec![0usize; (hi - lo + 1) as usize];
    for &v in values {
        counts[(idx(v) - lo) as usize] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| {
            let k = lo + i as i64;
            HistogramBin {
                lo: k as f64 * width,
                hi: (k + 1) as f64 * width,
                count,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracingRow {
    pub variant: String,
    pub alpha: f64,
    pub attack: AttackKind,
    pub records: usize,
    pub accuracy: f64,
    pub two_copy_accuracy: f64,
    pub mean_l2: f64,
    pub mean_queries: f64,
    pub source_dol_mean: f64,
    pub victim_dol_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub alpha: f64,
    pub attack: AttackKind,
    pub noise_sensitive: f64,
    pub random_untrained: f64,
    pub gap_points: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub alpha: f64,
    pub attack: AttackKind,
    pub ntr: usize,
    pub ntr_plus: usize,
    pub tr: usize,
    pub tr_plus: usize,
    pub tr_rate: f64,
    pub total_rate: f64,
}

impl TransferRow {
    pub fn new(alpha: f64, attack: AttackKind, t: &TransferTable) -> Self {
        Self {
            alpha,
            attack,
            ntr: t.ntr,
            ntr_plus: t.ntr_plus,
            tr: t.tr,
            tr_plus: t.tr_plus,
            tr_rate: t.tr_rate(),
            total_rate: t.total_rate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticopyRow {
    pub variant: String,
    pub alpha: f64,
    pub attack: AttackKind,
    pub n: usize,
    pub estimated: f64,
    pub exact: f64,
    /// Direct two-copy measurement, only on the `n = 2` row.
    pub measured: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DolHistogram {
    pub variant: String,
    pub alpha: f64,
    pub attack: String,
    pub copy_id: usize,
    pub role: String,
    pub bins: Vec<HistogramBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub classifier: Option<ClassifierMetrics>,
    pub accuracy: Option<AccuracyTable>,
    pub tracing: Vec<TracingRow>,
    pub ablation: Vec<AblationRow>,
    pub transfer: Vec<TransferRow>,
    pub multicopy: Vec<MulticopyRow>,
    pub cells: Vec<TraceCell>,
    pub histograms: Vec<DolHistogram>,
    pub notes: Vec<String>,
    pub gaps: Vec<String>,
}

impl RunReport {
    /// Tracing row for the primary variant at `(alpha, attack)`.
    pub fn tracing_accuracy(&self, alpha: f64, attack: AttackKind) -> Option<f64> {
        self.tracing
            .iter()
            .find(|r| r.alpha == alpha && r.attack == attack)
            .map(|r| r.accuracy)
    }
}

fn optional<T>(r: Result<T>, what: &str, gaps: &mut Vec<String>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(HarnessError::MissingInput(p)) => {
            gaps.push(format!("{what}: missing {}", p.display()));
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

pub(crate) fn assemble(p: &Pipeline) -> Result<RunReport> {
    let mut gaps = Vec::new();
    let classifier = optional(read_json(&p.fragment_path(&["classifier", "metrics.json"])), "classifier", &mut gaps)?;
    let accuracy = optional(read_json(&p.fragment_path(&["tracers", "accuracy.json"])), "accuracy table", &mut gaps)?;
    let frag: TraceFragment =
        optional(read_json(&p.fragment_path(&["trace", "trace.json"])), "tracing", &mut gaps)?.unwrap_or_default();
    gaps.extend(frag.gaps.iter().cloned());

    let primary = mode_label(p.config().tracers.mode);
    let tracing: Vec<TracingRow> = frag
        .cells
        .iter()
        .filter(|c| c.variant == primary)
        .map(|c| TracingRow {
            variant: c.variant.clone(),
            alpha: c.alpha,
            attack: c.attack,
            records: c.records,
            accuracy: c.accuracy,
            two_copy_accuracy: c.two_copy_accuracy,
            mean_l2: c.mean_l2,
            mean_queries: c.total_queries as f64 / c.records as f64,
            source_dol_mean: c.source_dol.mean,
            victim_dol_mean: c.victim_dol.mean,
        })
        .collect();

    let mut ablation = Vec::new();
    for c in frag.cells.iter().filter(|c| c.variant == "noise_sensitive") {
        if let Some(r) = frag
            .cells
            .iter()
            .find(|o| o.variant == "random_untrained" && o.alpha == c.alpha && o.attack == c.attack)
        {
            ablation.push(AblationRow {
                alpha: c.alpha,
                attack: c.attack,
                noise_sensitive: c.accuracy,
                random_untrained: r.accuracy,
                gap_points: 100.0 * (c.accuracy - r.accuracy),
            });
        }
    }

    let transfer = frag
        .cells
        .iter()
        .filter(|c| c.variant == primary)
        .map(|c| c.transfer.clone())
        .collect();

    let mut multicopy = Vec::new();
    for c in &frag.cells {
        for m in &c.multicopy {
            multicopy.push(MulticopyRow {
                variant: c.variant.clone(),
                alpha: c.alpha,
                attack: c.attack,
                n: m.n,
                estimated: m.estimated,
                exact: m.exact,
                measured: (m.n == 2).then_some(c.two_copy_accuracy),
            });
        }
    }

    let mut histograms = Vec::new();
    for variant in p.variants() {
        let label = mode_label(variant);
        let path = p.fragment_path(&["trace", &format!("dol_{label}.csv")]);
        if !path.is_file() {
            continue;
        }
        // alphas are positive, so their bit patterns sort numerically
        let mut groups: BTreeMap<(u64, String, usize), (String, Vec<f64>)> = BTreeMap::new();
        for row in read_dol_csv(&path)? {
            let entry = groups
                .entry((row.alpha.to_bits(), row.attack.clone(), row.copy_id))
                .or_insert_with(|| (row.role.clone(), Vec::new()));
            if entry.0 != row.role {
                entry.0 = "mixed".into();
            }
            entry.1.push(row.dol);
        }
        for ((alpha, attack, copy_id), (role, values)) in groups {
            histograms.push(DolHistogram {
                variant: label.into(),
                alpha: f64::from_bits(alpha),
                attack,
                copy_id,
                role,
                bins: histogram(&values, HISTOGRAM_BIN_WIDTH),
            });
        }
    }

    let report = RunReport {
        classifier,
        accuracy,
        tracing,
        ablation,
        transfer,
        multicopy,
        cells: frag.cells.clone(),
        histograms,
        notes: frag.notes.clone(),
        gaps,
    };

    let dir = p.fragment_path(&["report"]);
    std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    write_json(&dir.join("report.json"), &report)?;
    if let Some(t) = &report.accuracy {
        #[derive(Serialize)]
        struct Row {
            alpha: f64,
            copy_id: usize,
            accuracy: f64,
            mean_accuracy: f64,
            drop_points: f64,
        }
        let rows: Vec<Row> = t
            .rows
            .iter()
            .flat_map(|r| {
                r.copy_accuracy.iter().enumerate().map(|(i, &a)| Row {
                    alpha: r.alpha,
                    copy_id: i,
                    accuracy: a,
                    mean_accuracy: r.mean_accuracy,
                    drop_points: r.drop_points,
                })
            })
            .collect();
        write_csv(&dir.join("table1_accuracy.csv"), &rows)?;
    }
    write_csv(&dir.join("table2_tracing.csv"), &report.tracing)?;
    write_csv(&dir.join("table3_ablation.csv"), &report.ablation)?;
    write_csv(&dir.join("table4_transfer.csv"), &report.transfer)?;
    write_csv(&dir.join("multicopy.csv"), &report.multicopy)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_sum_and_edges_are_multiples() {
        let v = [-0.12, -0.1, 0.0, 0.049, 0.05, 0.31];
        let h = histogram(&v, 0.05);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), v.len());
        assert_eq!(h.len(), 10);
        assert!((h[0].lo + 0.15).abs() < 1e-12);
        for b in &h {
            assert!(((b.hi - b.lo) - 0.05).abs() < 1e-12);
        }
        let at_zero = h.iter().find(|b| b.lo.abs() < 1e-12).unwrap();
        assert_eq!(at_zero.count, 2);
    }

    #[test]
    fn histogram_of_nothing_is_empty() {
        assert!(histogram(&[], 0.05).is_empty());
        assert!(histogram(&[1.0], 0.0).is_empty());
    }

    #[test]
    fn transfer_row_copies_rates() {
        let t = TransferTable::from_counts(840, 840, 160, 156).unwrap();
        let r = TransferRow::new(0.15, AttackKind::Hsja, &t);
        assert!((r.tr_rate - 0.975).abs() < 1e-12);
        assert!((r.total_rate - 0.996).abs() < 1e-12);
    }
}
