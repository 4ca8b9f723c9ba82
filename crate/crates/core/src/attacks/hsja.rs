//! HopSkipJump: boundary projection, Monte-Carlo estimate of the boundary
//! normal from label signs, geometric step along it, repeat.

use rand::Rng;

use super::{
    bisect, clip, dist, gaussian_unit, norm, run_attack, AdversarialRecord, AttackConfig, Probe, Result, Tracker,
};
use crate::datax::Dataset;
use crate::separation::{HardLabelOracle, OracleError};

pub fn hsja<R: Rng + ?Sized>(
    oracle: &mut HardLabelOracle<'_>,
    x: &[f64],
    true_label: usize,
    donors: &Dataset,
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<AdversarialRecord> {
    run_attack(oracle, x, true_label, donors, cfg, rng, |probe, tracker, rng| {
        iterate(probe, tracker, x, cfg, rng)
    })
}

/// Unit estimate of the direction into the adversarial region at a boundary
/// point, from `probes` random unit perturbations of radius `delta`.
pub fn estimate_gradient_direction<R: Rng + ?Sized>(
    oracle: &mut HardLabelOracle<'_>,
    boundary_point: &[f64],
    true_label: usize,
    delta: f64,
    probes: usize,
    bounds: (f64, f64),
    rng: &mut R,
) -> std::result::Result<Vec<f64>, OracleError> {
    let mut probe = Probe {
        oracle,
        true_label,
        bounds,
        origin: 0,
    };
    estimate(&mut probe, boundary_point, delta, probes, rng)
}

fn estimate<R: Rng + ?Sized>(
    probe: &mut Probe<'_, '_>,
    at: &[f64],
    delta: f64,
    probes: usize,
    rng: &mut R,
) -> std::result::Result<Vec<f64>, OracleError> {
    let dim = at.len();
    let mut dirs = Vec::with_capacity(probes);
    let mut signs = Vec::with_capacity(probes);
    for _ in 0..probes {
        let u = gaussian_unit(dim, rng);
        let mut p: Vec<f64> = at.iter().zip(&u).map(|(a, ui)| a + delta * ui).collect();
        clip(&mut p, probe.bounds);
        let eff: Vec<f64> = p.iter().zip(at).map(|(pi, a)| (pi - a) / delta).collect();
        signs.push(if probe.is_adversarial(&p)? { 1.0 } else { -1.0 });
        dirs.push(eff);
    }
    let mean = signs.iter().sum::<f64>() / probes as f64;
    // baseline subtraction unless every probe agreed
    let baseline = if mean.abs() == 1.0 { 0.0 } else { mean };
    let mut grad = vec![0.0; dim];
    for (u, s) in dirs.iter().zip(&signs) {
        for (g, ui) in grad.iter_mut().zip(u) {
            *g += (s - baseline) * ui;
        }
    }
    let n = norm(&grad);
    if n > 0.0 {
        grad.iter_mut().for_each(|g| *g /= n);
    }
    Ok(grad)
}

fn iterate<R: Rng + ?Sized>(
    probe: &mut Probe<'_, '_>,
    tracker: &mut Tracker,
    x: &[f64],
    cfg: &AttackConfig,
    rng: &mut R,
) -> std::result::Result<(), OracleError> {
    let p = &cfg.hsja;
    let dim = x.len() as f64;
    let (lo, hi) = probe.bounds;
    let mut current = tracker.best.clone();
    let mut d = tracker.best_l2;
    for t in 1..=p.max_iterations.unwrap_or(usize::MAX) {
        let tf = t as f64;
        let delta = if t == 1 { 0.1 * (hi - lo).min(1.0e6) } else { p.gamma * d / dim };
        let delta = delta.max(cfg.tolerance);
        let probes = ((p.init_probes as f64 * tf.sqrt()) as usize).min(p.max_probes);
        let grad = estimate(probe, &current, delta, probes, rng)?;
        if norm(&grad) == 0.0 {
            continue;
        }

        // geometric step search, halving until adversarial
        let mut eps = d / tf.sqrt();
        let mut stepped = None;
        while eps > cfg.tolerance {
            let mut cand: Vec<f64> = current.iter().zip(&grad).map(|(c, g)| c + eps * g).collect();
            clip(&mut cand, probe.bounds);
            if probe.is_adversarial(&cand)? {
                stepped = Some(cand);
                break;
            }
            eps /= 2.0;
        }
        let Some(cand) = stepped else { break };

        current = bisect(probe, x, &cand, cfg.tolerance)?;
        d = dist(&current, x);
        tracker.offer(current.clone(), probe.spent());
        if tracker.reached_target() {
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::testutil::linear_setup;
    use crate::attacks::dot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_oracle_near_optimal() {
        let (model, donors, mut cfg) = linear_setup();
        cfg.kind = crate::attacks::AttackKind::Hsja;
        let mut oracle = HardLabelOracle::new(&model).with_budget(cfg.max_queries);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rec = hsja(&mut oracle, &[-1.0, 0.0], 0, &donors, &cfg, &mut rng).unwrap();
        assert!(rec.l2 <= 1.05, "distortion {}", rec.l2);
        assert!(rec.l2 <= rec.history[0].1);
    }

    #[test]
    fn gradient_estimate_aligns_with_normal() {
        let (model, _, cfg) = linear_setup();
        let mut oracle = HardLabelOracle::new(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = estimate_gradient_direction(&mut oracle, &[0.0, 0.3], 0, 0.01, 200, cfg.bounds, &mut rng).unwrap();
        assert!(dot(&g, &[1.0, 0.0]) >= 0.8);
        assert_eq!(oracle.queries(), 200);
    }

    #[test]
    fn fixed_seed_same_trajectory() {
        let (model, donors, cfg) = linear_setup();
        let run = |seed| {
            let mut oracle = HardLabelOracle::new(&model).with_budget(1500);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            hsja(&mut oracle, &[-1.0, 0.0], 0, &donors, &cfg, &mut rng).unwrap()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3).history, run(4).history);
    }
}
