//! Boundary attack: a rejection-sampling random walk along the decision
//! boundary that shrinks the distance to the original input.
//!
//! Each step proposes an orthogonal (spherical) move that keeps the distance
//! to `x`, then a source move toward `x`. Both step sizes adapt to their
//! recent success rates.

use rand::Rng;

use super::{
    clip, dist, dot, gaussian_unit, run_attack, AdversarialRecord, AttackConfig, Probe, Result, Tracker,
};
use crate::datax::Dataset;
use crate::separation::{HardLabelOracle, OracleError};

struct StepSize {
    value: f64,
    hits: usize,
    trials: usize,
}

impl StepSize {
    fn new(value: f64) -> Self {
        Self { value, hits: 0, trials: 0 }
    }

    fn record(&mut self, hit: bool, window: usize, grow: f64, shrink: f64, cap: f64) {
        self.trials += 1;
        self.hits += usize::from(hit);
        if self.trials == window {
            let rate = self.hits as f64 / window as f64;
            if rate > 0.5 {
                self.value = (self.value * grow).min(cap);
            } else if rate < 0.2 {
                self.value *= shrink;
            }
            self.hits = 0;
            self.trials = 0;
        }
    }
}

pub fn boundary_attack<R: Rng + ?Sized>(
    oracle: &mut HardLabelOracle<'_>,
    x: &[f64],
    true_label: usize,
    donors: &Dataset,
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<AdversarialRecord> {
    run_attack(oracle, x, true_label, donors, cfg, rng, |probe, tracker, rng| {
        walk(probe, tracker, x, cfg, rng)
    })
}

fn walk<R: Rng + ?Sized>(
    probe: &mut Probe<'_, '_>,
    tracker: &mut Tracker,
    x: &[f64],
    cfg: &AttackConfig,
    rng: &mut R,
) -> std::result::Result<(), OracleError> {
    let p = &cfg.boundary;
    let dim = x.len();
    let mut spherical = StepSize::new(p.spherical_step);
    let mut source = StepSize::new(p.source_step);
    for _ in 0..p.max_iterations.unwrap_or(usize::MAX) {
        let current = tracker.best.clone();
        let d = tracker.best_l2;
        if d <= cfg.tolerance {
            break;
        }
        let to_source: Vec<f64> = x.iter().zip(&current).map(|(a, b)| (a - b) / d).collect();

        // orthogonal perturbation of length spherical * d
        let mut eta = gaussian_unit(dim, rng);
        let along = dot(&eta, &to_source);
        for (e, s) in eta.iter_mut().zip(&to_source) {
            *e -= along * s;
        }
        let en = dot(&eta, &eta).sqrt();
        if en < 1e-12 {
            continue;
        }
        let mut sph: Vec<f64> = current
            .iter()
            .zip(&eta)
            .map(|(c, e)| c + spherical.value * d * e / en)
            .collect();
        // back onto the sphere of radius d around x
        let r = dist(&sph, x);
        for (s, xi) in sph.iter_mut().zip(x) {
            *s = xi + (*s - xi) * d / r;
        }
        clip(&mut sph, probe.bounds);

        let sph_adv = probe.is_adversarial(&sph)?;
        spherical.record(sph_adv, p.window, p.grow, p.shrink, 1.0);
        if !sph_adv {
            continue;
        }

        let mut cand: Vec<f64> = sph
            .iter()
            .zip(x)
            .map(|(s, xi)| s + source.value * (xi - s))
            .collect();
        clip(&mut cand, probe.bounds);
        let cand_adv = probe.is_adversarial(&cand)?;
        source.record(cand_adv, p.window, p.grow, p.shrink, 0.5);
        let spent = probe.spent();
        if cand_adv {
            tracker.offer(cand, spent);
        } else {
            // the spherical point itself is still a valid (equal-distance) iterate
            tracker.offer(sph, spent);
        }
        if tracker.reached_target() {
            break;
        }
    }
    Ok(())
}
