//! Origin tracing: given an adversarial example, decide which distributed
//! copy it was crafted on.
//!
//! For every candidate copy the tracer's DOL (difference of output logits,
//! `T(x_att)[attacked] - T(x_att)[true]`) is computed and the copy with the
//! largest DOL is reported as the source.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::AdversarialRecord;
use crate::exec::{derive_seed, Exec};
use crate::netcore::{argmax, NetError};
use crate::separation::{Classify, ParallelModel, SeparationError, Tracer};

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("attacked label equals true label ({0}); not an adversarial record")]
    InvalidRecord(usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("need at least 2 candidate copies, got {0}")]
    TooFewCandidates(usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("copy count n must be >= 2, got {0}")]
    InvalidCopyCount(usize),
    #[error("DOL sample {0} is not finite")]
    NonFinite(f64),
    #[error("source copy {0} has no tracer")]
    UnknownCopy(usize),
    #[error(transparent)]
    Separation(#[from] SeparationError),
    #[error(transparent)]
    Net(#[from] NetError),
}

pub type Result<T> = std::result::Result<T, TraceError>;

/// `logits[att] - logits[true]`.
pub fn dol_from_logits(logits: &[f64], att_label: usize, true_label: usize) -> Result<f64> {
    let classes = logits.len();
    for label in [att_label, true_label] {
        if label >= classes {
            return Err(TraceError::LabelOutOfRange { label, classes });
        }
    }
    if att_label == true_label {
        return Err(TraceError::InvalidRecord(att_label));
    }
    Ok(logits[att_label] - logits[true_label])
}

pub fn dol(tracer: &Tracer, x_att: &[f64], att_label: usize, true_label: usize) -> Result<f64> {
    dol_from_logits(&tracer.logits(x_att)?, att_label, true_label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceVerdict {
    /// Index of the candidate with the largest DOL (lowest index on ties).
    pub source: usize,
    pub dols: Vec<f64>,
    /// Largest minus second-largest DOL.
    pub margin: f64,
}

impl TraceVerdict {
    pub fn from_dols(dols: Vec<f64>) -> Result<Self> {
        if dols.len() < 2 {
            return Err(TraceError::TooFewCandidates(dols.len()));
        }
        if let Some(&bad) = dols.iter().find(|d| !d.is_finite()) {
            return Err(TraceError::NonFinite(bad));
        }
        let source = argmax(&dols);
        let runner_up = dols
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != source)
            .map(|(_, &d)| d)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            source,
            margin: dols[source] - runner_up,
            dols,
        })
    }
}

/// Verdict over `tracers`, indexed by copy id.
pub fn trace_source(tracers: &[&Tracer], x_att: &[f64], att_label: usize, true_label: usize) -> Result<TraceVerdict> {
    if tracers.len() < 2 {
        return Err(TraceError::TooFewCandidates(tracers.len()));
    }
    let dols = tracers
        .iter()
        .map(|t| dol(t, x_att, att_label, true_label))
        .collect::<Result<Vec<_>>>()?;
    TraceVerdict::from_dols(dols)
}

/// Traces every record; output order matches `records`.
pub fn trace_records(tracers: &[&Tracer], records: &[AdversarialRecord], exec: Exec) -> Result<Vec<TraceVerdict>> {
    exec.map_slice(records, |r| trace_source(tracers, &r.x_att, r.attacked_label, r.true_label))
        .into_iter()
        .collect()
}

/// Fraction of verdicts naming the true source.
pub fn tracing_accuracy(verdicts: &[TraceVerdict], true_sources: &[usize]) -> Result<f64> {
    if verdicts.len() != true_sources.len() {
        return Err(TraceError::LengthMismatch(verdicts.len(), true_sources.len()));
    }
    if verdicts.is_empty() {
        return Err(TraceError::Empty("verdicts"));
    }
    let correct = verdicts.iter().zip(true_sources).filter(|(v, &s)| v.source == s).count();
    Ok(correct as f64 / verdicts.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Victim,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Source => "source",
            Role::Victim => "victim",
        }
    }
}

/// Empirical DOL samples of one tracer role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DolDistribution {
    role: Role,
    samples: Vec<f64>,
}

impl DolDistribution {
    pub fn new(role: Role, samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(TraceError::Empty("DOL distribution"));
        }
        if let Some(&bad) = samples.iter().find(|d| !d.is_finite()) {
            return Err(TraceError::NonFinite(bad));
        }
        Ok(Self { role, samples })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn median(&self) -> f64 {
        let s = self.sorted();
        let n = s.len();
        if n % 2 == 1 {
            s[n / 2]
        } else {
            0.5 * (s[n / 2 - 1] + s[n / 2])
        }
    }

    pub fn std_dev(&self) -> f64 {
        let m = self.mean();
        (self.samples.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn min(&self) -> f64 {
        self.samples.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.samples.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn sorted(&self) -> Vec<f64> {
        let mut s = self.samples.clone();
        s.sort_by(f64::total_cmp);
        s
    }
}

/// DOLs of the source and one victim tracer over records crafted on the
/// source copy.
pub fn collect_distributions(
    records: &[AdversarialRecord],
    source_tracer: &Tracer,
    victim_tracer: &Tracer,
) -> Result<(DolDistribution, DolDistribution)> {
    if records.is_empty() {
        return Err(TraceError::Empty("records"));
    }
    let mut ds = Vec::with_capacity(records.len());
    let mut dv = Vec::with_capacity(records.len());
    for r in records {
        ds.push(dol(source_tracer, &r.x_att, r.attacked_label, r.true_label)?);
        dv.push(dol(victim_tracer, &r.x_att, r.attacked_label, r.true_label)?);
    }
    Ok((DolDistribution::new(Role::Source, ds)?, DolDistribution::new(Role::Victim, dv)?))
}

/// Monte-Carlo estimate of the tracing accuracy with `n` copies: each trial
/// draws one source DOL and `n - 1` victim DOLs (with replacement) and
/// succeeds when the source value strictly exceeds every victim value.
///
/// Trial `t` uses its own generator derived from `(seed, t)` and draws the
/// source value first, then victims in order. Estimates for different `n`
/// therefore share random numbers, which makes them non-increasing in `n`,
/// and the result does not depend on `exec`.
pub fn estimate_multicopy_accuracy(
    d_s: &DolDistribution,
    d_v: &DolDistribution,
    n: usize,
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<f64> {
    if n < 2 {
        return Err(TraceError::InvalidCopyCount(n));
    }
    if trials == 0 {
        return Err(TraceError::Empty("trials"));
    }
    const BLOCK: usize = 1000;
    let blocks = trials.div_ceil(BLOCK);
    let (s, v) = (d_s.samples(), d_v.samples());
    let hits: usize = exec
        .map_range(blocks, |b| {
            (b * BLOCK..((b + 1) * BLOCK).min(trials))
                .filter(|&t| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "multicopy-trial", t as u64));
                    let src = s[rng.random_range(0..s.len())];
                    (1..n).all(|_| src > v[rng.random_range(0..v.len())])
                })
                .count()
        })
        .into_iter()
        .sum();
    Ok(hits as f64 / trials as f64)
}

/// Exact value the estimator converges to:
/// `sum_s P(S = s) * P(V < s)^(n-1)`.
pub fn exact_multicopy_accuracy(d_s: &DolDistribution, d_v: &DolDistribution, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(TraceError::InvalidCopyCount(n));
    }
    let mut v = d_v.samples().to_vec();
    v.sort_by(f64::total_cmp);
    let nv = v.len() as f64;
    let total: f64 = d_s
        .samples()
        .iter()
        .map(|&s| {
            let below = v.partition_point(|&x| x < s) as f64;
            (below / nv).powi(n as i32 - 1)
        })
        .sum();
    Ok(total / d_s.len() as f64)
}

/// Tracing results split by whether the adversarial example also fools
/// other copies. `(+)` counts are the correctly traced records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferTable {
    pub ntr: usize,
    pub ntr_plus: usize,
    pub tr: usize,
    pub tr_plus: usize,
}

impl TransferTable {
    pub fn from_counts(ntr: usize, ntr_plus: usize, tr: usize, tr_plus: usize) -> Result<Self> {
        if ntr + tr == 0 {
            return Err(TraceError::Empty("records"));
        }
        if ntr_plus > ntr || tr_plus > tr {
            return Err(TraceError::LengthMismatch(ntr_plus.max(tr_plus), ntr.max(tr)));
        }
        Ok(Self {
            ntr,
            ntr_plus,
            tr,
            tr_plus,
        })
    }

    pub fn total(&self) -> usize {
        self.ntr + self.tr
    }

    /// `Tr(+) / Tr`, 0 when nothing transferred.
    pub fn tr_rate(&self) -> f64 {
        if self.tr == 0 {
            0.0
        } else {
            self.tr_plus as f64 / self.tr as f64
        }
    }

    /// `(NTr(+) + Tr(+)) / N`.
    pub fn total_rate(&self) -> f64 {
        (self.ntr_plus + self.tr_plus) as f64 / self.total() as f64
    }
}

/// A record is transferable when at least one victim copy (any model whose
/// copy id differs from the record's source) also mislabels `x_att`.
/// Verdict indices are copy ids.
pub fn transferability_report(
    records: &[AdversarialRecord],
    models: &[ParallelModel],
    verdicts: &[TraceVerdict],
) -> Result<TransferTable> {
    if records.is_empty() {
        return Err(TraceError::Empty("records"));
    }
    if records.len() != verdicts.len() {
        return Err(TraceError::LengthMismatch(records.len(), verdicts.len()));
    }
    let (mut ntr, mut ntr_plus, mut tr, mut tr_plus) = (0, 0, 0, 0);
    for (r, v) in records.iter().zip(verdicts) {
        if !models.iter().any(|m| m.copy_id() == r.source_copy) {
            return Err(TraceError::UnknownCopy(r.source_copy));
        }
        let mut victims = models.iter().filter(|m| m.copy_id() != r.source_copy).peekable();
        if victims.peek().is_none() {
            return Err(TraceError::TooFewCandidates(models.len()));
        }
        let mut transfers = false;
        for m in victims {
            if m.classify(&r.x_att)? != r.true_label {
                transfers = true;
                break;
            }
        }
        let correct = v.source == r.source_copy;
        if transfers {
            tr += 1;
            tr_plus += usize::from(correct);
        } else {
            ntr += 1;
            ntr_plus += usize::from(correct);
        }
    }
    TransferTable::from_counts(ntr, ntr_plus, tr, tr_plus)
}
