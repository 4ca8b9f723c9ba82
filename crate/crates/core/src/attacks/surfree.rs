//! SurFree: gradient-free search along circular arcs.
//!
//! With `u` the unit direction from `x` to the current adversarial point
//! (distance `d`) and `v` a fresh unit direction orthogonal to `u`, the
//! points `z(theta) = x + d cos(theta) (cos(theta) u + sin(theta) v)` trace
//! the circle whose diameter is `[x, x_adv]`. Moving along it by `theta`
//! shrinks the distance to `d cos(theta)`, so the attack looks for the
//! largest angle that still lands on the adversarial side.

use std::collections::VecDeque;
use std::f64::consts::FRAC_PI_2;

use rand::Rng;

use super::{bisect, clip, dot, gaussian_unit, norm, run_attack, AdversarialRecord, AttackConfig, Probe, Result, Tracker};
use crate::datax::Dataset;
use crate::separation::{HardLabelOracle, OracleError};

pub fn surfree<R: Rng + ?Sized>(
    oracle: &mut HardLabelOracle<'_>,
    x: &[f64],
    true_label: usize,
    donors: &Dataset,
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<AdversarialRecord> {
    run_attack(oracle, x, true_label, donors, cfg, rng, |probe, tracker, rng| {
        search(probe, tracker, x, cfg, rng)
    })
}

fn arc_point(x: &[f64], u: &[f64], v: &[f64], d: f64, theta: f64, bounds: (f64, f64)) -> Vec<f64> {
    let (c, s) = (theta.cos(), theta.sin());
    let mut z: Vec<f64> = x
        .iter()
        .zip(u.iter().zip(v))
        .map(|(xi, (ui, vi))| xi + d * c * (c * ui + s * vi))
        .collect();
    clip(&mut z, bounds);
    z
}

/// Unit vector orthogonal to `u` and, when possible, to the remembered
/// directions.
fn fresh_direction<R: Rng + ?Sized>(u: &[f64], memory: &mut VecDeque<Vec<f64>>, rng: &mut R) -> Option<Vec<f64>> {
    for _ in 0..2 {
        let mut v = gaussian_unit(u.len(), rng);
        for basis in std::iter::once(u).chain(memory.iter().map(Vec::as_slice)) {
            let a = dot(&v, basis);
            v.iter_mut().zip(basis).for_each(|(vi, b)| *vi -= a * b);
        }
        // memory vectors are not orthogonal to u; project u out once more
        let a = dot(&v, u);
        v.iter_mut().zip(u).for_each(|(vi, b)| *vi -= a * b);
        let n = norm(&v);
        if n > 1e-9 {
            v.iter_mut().for_each(|vi| *vi /= n);
            return Some(v);
        }
        // the remembered directions span everything orthogonal to u
        memory.clear();
    }
    None
}

fn search<R: Rng + ?Sized>(
    probe: &mut Probe<'_, '_>,
    tracker: &mut Tracker,
    x: &[f64],
    cfg: &AttackConfig,
    rng: &mut R,
) -> std::result::Result<(), OracleError> {
    let p = &cfg.surfree;
    let mut theta_max = p.theta_max;
    let mut memory: VecDeque<Vec<f64>> = VecDeque::new();
    for _ in 0..p.max_iterations.unwrap_or(usize::MAX) {
        let d = tracker.best_l2;
        if d <= cfg.tolerance {
            break;
        }
        let u: Vec<f64> = tracker.best.iter().zip(x).map(|(b, xi)| (b - xi) / d).collect();
        let Some(v) = fresh_direction(&u, &mut memory, rng) else { break };
        memory.push_back(v.clone());
        while memory.len() > p.memory {
            memory.pop_front();
        }

        // walk outward on both sides until the label flips back
        let step = theta_max / p.angles as f64;
        let mut found: Option<(f64, f64)> = None; // (adversarial angle, first failing angle)
        for sign in [1.0, -1.0] {
            let mut last_adv = None;
            let mut fail = None;
            for k in 1..=p.angles {
                let theta = sign * step * k as f64;
                if probe.is_adversarial(&arc_point(x, &u, &v, d, theta, probe.bounds))? {
                    last_adv = Some(theta);
                } else {
                    fail = Some(theta);
                    break;
                }
            }
            if let Some(a) = last_adv {
                let f = fail.unwrap_or(sign * (step * (p.angles + 1) as f64).min(FRAC_PI_2));
                found = Some((a, f));
                break;
            }
        }

        let Some((mut good, mut bad)) = found else {
            theta_max *= 0.7;
            if theta_max < 1e-9 {
                theta_max = p.theta_max;
            }
            continue;
        };
        let reached_edge = (good.abs() - theta_max).abs() < 1e-12;

        for _ in 0..p.refine_steps {
            let mid = 0.5 * (good + bad);
            if probe.is_adversarial(&arc_point(x, &u, &v, d, mid, probe.bounds))? {
                good = mid;
            } else {
                bad = mid;
            }
        }

        let z = arc_point(x, &u, &v, d, good, probe.bounds);
        let z = bisect(probe, x, &z, cfg.tolerance)?;
        tracker.offer(z, probe.spent());
        if tracker.reached_target() {
            break;
        }
        if reached_edge {
            theta_max = (theta_max * 1.5).min(FRAC_PI_2 - 1e-3);
        }
    }
    Ok(())
}
