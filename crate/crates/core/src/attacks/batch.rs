use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{attack_one, AdversarialRecord, AttackConfig, AttackError, Result};
use crate::datax::Dataset;
use crate::exec::{derive_seed, Exec};
use crate::separation::{Classify, HardLabelOracle};

/// Attacks samples of `ds` (in a seeded random order) until `n_samples`
/// attacks succeed.
///
/// Misclassified inputs, init failures and records that fail re-verification
/// are skipped. Each candidate gets its own oracle and a generator seeded
/// from `(cfg.seed, sample_id)`, so the output does not depend on `exec`.
pub fn run_attack_batch(
    model: &dyn Classify,
    source_copy: usize,
    ds: &Dataset,
    donors: &Dataset,
    cfg: &AttackConfig,
    n_samples: usize,
    exec: Exec,
) -> Result<Vec<AdversarialRecord>> {
    cfg.validate()?;
    if n_samples == 0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "batch-order", 0)));

    let attack = |id: usize| -> Result<Option<AdversarialRecord>> {
        let mut oracle = HardLabelOracle::new(model).with_budget(cfg.max_queries);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "record", id as u64));
        match attack_one(&mut oracle, ds.row(id), ds.label(id), donors, cfg, &mut rng) {
            Ok(mut rec) => {
                rec.sample_id = id;
                rec.source_copy = source_copy;
                Ok(Some(rec))
            }
            Err(AttackError::NotCorrectlyClassified(_) | AttackError::InitFailure | AttackError::LostAdversariality) => {
                Ok(None)
            }
            Err(e) => Err(e),
        }
    };

    let mut out = Vec::with_capacity(n_samples);
    let mut next = 0;
    while out.len() < n_samples && next < order.len() {
        // a chunk as large as the remaining need; results are consumed in
        // candidate order so chunking never changes the outcome
        let want = n_samples - out.len();
        let chunk = &order[next..(next + want).min(order.len())];
        next += chunk.len();
        for r in exec.map_slice(chunk, |&id| attack(id)) {
            if let Some(rec) = r? {
                out.push(rec);
            }
        }
    }
    if out.len() < n_samples {
        return Err(AttackError::DatasetExhausted {
            wanted: n_samples,
            found: out.len(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{AttackKind, LinearClassifier};

    fn setup() -> (LinearClassifier, Dataset) {
        // boundary at x0 = 0.5; label = (x0 > 0.5)
        let model = LinearClassifier::new(vec![1.0, 0.0], -0.5);
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let a = 0.05 + 0.9 * i as f64 / 19.0;
            feats.extend([a, 0.3]);
            labels.push(usize::from(a > 0.5));
        }
        // two deliberately mislabeled points
        labels[0] = 1;
        labels[19] = 0;
        (model, Dataset::new(feats, 2, labels, 2, "line").unwrap())
    }

    #[test]
    fn zero_samples_is_empty() {
        let (model, ds) = setup();
        let cfg = AttackConfig::new(AttackKind::Hsja);
        assert!(run_attack_batch(&model, 0, &ds, &ds, &cfg, 0, Exec::Sequential).unwrap().is_empty());
    }

    #[test]
    fn records_are_adversarial_and_skip_misclassified() {
        let (model, ds) = setup();
        for kind in [AttackKind::Boundary, AttackKind::Hsja, AttackKind::Surfree] {
            let cfg = AttackConfig {
                max_queries: 600,
                ..AttackConfig::new(kind)
            };
            let recs = run_attack_batch(&model, 1, &ds, &ds, &cfg, 18, Exec::Sequential).unwrap();
            assert_eq!(recs.len(), 18);
            for r in &recs {
                assert_ne!(r.sample_id, 0);
                assert_ne!(r.sample_id, 19);
                assert_eq!(r.source_copy, 1);
                assert_ne!(model.classify(&r.x_att).unwrap(), r.true_label);
                assert!(r.queries <= cfg.max_queries);
                assert!(r.x_att.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn exhaustion_reported() {
        let (model, ds) = setup();
        let cfg = AttackConfig::new(AttackKind::Boundary);
        let err = run_attack_batch(&model, 0, &ds, &ds, &cfg, 19, Exec::Sequential).unwrap_err();
        assert_eq!(err, AttackError::DatasetExhausted { wanted: 19, found: 18 });
    }

    #[test]
    fn parallel_matches_sequential() {
        let (model, ds) = setup();
        let cfg = AttackConfig {
            max_queries: 400,
            seed: 11,
            ..AttackConfig::new(AttackKind::Surfree)
        };
        let a = run_attack_batch(&model, 0, &ds, &ds, &cfg, 10, Exec::Sequential).unwrap();
        let b = run_attack_batch(&model, 0, &ds, &ds, &cfg, 10, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn every_query_stays_in_box() {
        let (model, ds) = setup();
        for kind in [AttackKind::Boundary, AttackKind::Hsja, AttackKind::Surfree] {
            let cfg = AttackConfig {
                max_queries: 800,
                ..AttackConfig::new(kind)
            };
            for id in [3, 8, 14] {
                let mut oracle = HardLabelOracle::new(&model).watch_bounds(0.0, 1.0);
                let mut rng = ChaCha8Rng::seed_from_u64(id as u64);
                attack_one(&mut oracle, ds.row(id), ds.label(id), &ds, &cfg, &mut rng).unwrap();
                assert_eq!(oracle.out_of_bounds(), 0, "{kind} sample {id}");
            }
        }
    }
}
