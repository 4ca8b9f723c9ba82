//! Hard-label (decision-based) black-box attacks.
//!
//! Every attack sees the model only through a [`HardLabelOracle`]: it can
//! ask for the predicted class of a point and nothing else. All attacks are
//! untargeted (success means any label other than the true one) and keep
//! every queried point inside the configured box.

mod batch;
mod boundary;
mod hsja;
mod surfree;

pub use batch::run_attack_batch;
pub use boundary::boundary_attack;
pub use hsja::{estimate_gradient_direction, hsja};
pub use surfree::surfree;

use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datax::Dataset;
use crate::netcore::NetError;
use crate::separation::{Classify, HardLabelOracle, OracleError};

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("no misclassified starting point found")]
    InitFailure,
    #[error("input is not classified as its true label {0}")]
    NotCorrectlyClassified(usize),
    #[error("adversarial point lost its adversarial label on re-verification")]
    LostAdversariality,
    #[error("only {found} of {wanted} samples could be attacked successfully")]
    DatasetExhausted { wanted: usize, found: usize },
    #[error("invalid attack configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

pub type Result<T> = std::result::Result<T, AttackError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Boundary,
    Hsja,
    Surfree,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Boundary => "boundary",
            AttackKind::Hsja => "hsja",
            AttackKind::Surfree => "surfree",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "boundary" => Some(AttackKind::Boundary),
            "hsja" => Some(AttackKind::Hsja),
            "surfree" => Some(AttackKind::Surfree),
            _ => None,
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundaryParams {
    pub spherical_step: f64,
    pub source_step: f64,
    /// Step multiplier when the recent success rate is above 0.5.
    pub grow: f64,
    /// Step multiplier when the recent success rate is below 0.2.
    pub shrink: f64,
    /// Trials per step-size adaptation window.
    pub window: usize,
    /// Iteration cap; unset runs until the query budget is spent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
}

impl Default for BoundaryParams {
    fn default() -> Self {
        Self {
            spherical_step: 0.01,
            source_step: 0.01,
            grow: 1.5,
            shrink: 0.5,
            window: 10,
            max_iterations: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HsjaParams {
    pub init_probes: usize,
    pub max_probes: usize,
    /// Probe radius scale; the radius is `gamma * distortion / d` after the
    /// first iteration.
    pub gamma: f64,
    /// Iteration cap; unset runs until the query budget is spent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
}

impl Default for HsjaParams {
    fn default() -> Self {
        Self {
            init_probes: 100,
            max_probes: 1000,
            gamma: 1.0,
            max_iterations: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurfreeParams {
    /// Angles tried per side on each arc search.
    pub angles: usize,
    /// Bisection steps refining the best angle.
    pub refine_steps: usize,
    /// Initial largest search angle, radians.
    pub theta_max: f64,
    /// Previously used directions kept for orthogonalization.
    pub memory: usize,
    /// Iteration cap; unset runs until the query budget is spent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
}

impl Default for SurfreeParams {
    fn default() -> Self {
        Self {
            angles: 16,
            refine_steps: 10,
            theta_max: 0.5,
            memory: 10,
            max_iterations: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub max_queries: u64,
    /// Stop as soon as the distortion drops to this value.
    pub target_l2: Option<f64>,
    /// Bisection tolerance, in L2 units along the search segment.
    pub tolerance: f64,
    /// Feature box; every query stays inside `[lo, hi]^d`.
    pub bounds: (f64, f64),
    /// Donor samples tried before falling back to uniform random points.
    pub init_donors: usize,
    pub init_random: usize,
    /// Adversarial starting points to collect; each is bisected toward the
    /// input and the closest one wins. 1 keeps the first one found.
    pub init_candidates: usize,
    pub seed: u64,
    pub boundary: BoundaryParams,
    pub hsja: HsjaParams,
    pub surfree: SurfreeParams,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackKind::Hsja,
            max_queries: 5000,
            target_l2: None,
            tolerance: 1e-6,
            bounds: (0.0, 1.0),
            init_donors: 100,
            init_random: 100,
            init_candidates: 1,
            seed: 0,
            boundary: BoundaryParams::default(),
            hsja: HsjaParams::default(),
            surfree: SurfreeParams::default(),
        }
    }
}

impl AttackConfig {
    pub fn new(kind: AttackKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AttackError::Config(m.to_owned()));
        if self.max_queries == 0 {
            return bad("query budget must be > 0");
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be > 0");
        }
        if self.init_candidates == 0 {
            return bad("init_candidates must be > 0");
        }
        if !(self.bounds.0 < self.bounds.1) {
            return bad("bounds must satisfy lo < hi");
        }
        let b = &self.boundary;
        if !(b.spherical_step > 0.0 && b.source_step > 0.0 && b.grow > 1.0 && b.shrink > 0.0 && b.shrink < 1.0) {
            return bad("boundary step sizes must be > 0 with grow > 1 and 0 < shrink < 1");
        }
        if b.window == 0 {
            return bad("boundary window must be > 0");
        }
        let h = &self.hsja;
        if h.init_probes == 0 || h.max_probes < h.init_probes || !(h.gamma > 0.0) {
            return bad("hsja probes must be > 0 (max >= init) and gamma > 0");
        }
        let s = &self.surfree;
        if s.angles == 0 || !(s.theta_max > 0.0 && s.theta_max < std::f64::consts::FRAC_PI_2) {
            return bad("surfree needs angles > 0 and 0 < theta_max < pi/2");
        }
        Ok(())
    }
}

/// A successful attack on one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialRecord {
    pub sample_id: usize,
    pub source_copy: usize,
    pub attack: AttackKind,
    pub x: Vec<f64>,
    pub x_att: Vec<f64>,
    pub true_label: usize,
    pub attacked_label: usize,
    pub queries: u64,
    pub l2: f64,
    /// The run stopped because the query budget ran out.
    pub budget_exhausted: bool,
    /// `(queries so far, distortion)` after each accepted iterate.
    pub history: Vec<(u64, f64)>,
}

/// Linear two-class model: label 1 when `w . x + b > 0`, else 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearClassifier {
    pub fn new(w: Vec<f64>, b: f64) -> Self {
        Self { w, b }
    }

    /// Exact L2 distance from `x` to the decision hyperplane.
    pub fn distance(&self, x: &[f64]) -> f64 {
        let n = norm(&self.w);
        (dot(&self.w, x) + self.b).abs() / n
    }
}

impl Classify for LinearClassifier {
    fn input_dim(&self) -> usize {
        self.w.len()
    }

    fn classes(&self) -> usize {
        2
    }

    fn classify(&self, x: &[f64]) -> std::result::Result<usize, NetError> {
        if x.len() != self.w.len() {
            return Err(NetError::InputShape {
                expected: self.w.len(),
                got: x.len(),
            });
        }
        Ok(usize::from(dot(&self.w, x) + self.b > 0.0))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub(crate) fn clip(v: &mut [f64], (lo, hi): (f64, f64)) {
    for x in v {
        *x = x.clamp(lo, hi);
    }
}

/// `a + t (b - a)`.
pub(crate) fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

pub(crate) fn gaussian_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Tracks the attacker's view: an oracle and the label to move away from.
pub(crate) struct Probe<'a, 'm> {
    pub oracle: &'a mut HardLabelOracle<'m>,
    pub true_label: usize,
    pub bounds: (f64, f64),
    /// Oracle query count when the attack started.
    pub origin: u64,
}

impl Probe<'_, '_> {
    pub fn spent(&self) -> u64 {
        self.oracle.queries() - self.origin
    }

    pub fn is_adversarial(&mut self, x: &[f64]) -> std::result::Result<bool, OracleError> {
        Ok(self.oracle.query(x)? != self.true_label)
    }
}

/// Finds a starting point the oracle does not label `true_label`: first
/// donors of other classes (in random order), then uniform random points in
/// the box. With `init_candidates > 1` several such points are bisected
/// toward `x` and the nearest boundary point is returned.
pub fn init_adversarial<R: Rng + ?Sized>(
    oracle: &mut HardLabelOracle<'_>,
    x: &[f64],
    true_label: usize,
    donors: &Dataset,
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut candidates: Vec<usize> = (0..donors.len()).filter(|&i| donors.label(i) != true_label).collect();
    candidates.shuffle(rng);
    let origin = oracle.queries();
    let mut probe = Probe {
        oracle,
        true_label,
        bounds: cfg.bounds,
        origin,
    };
    let attempt = |probe: &mut Probe<'_, '_>, p: &[f64]| match probe.is_adversarial(p) {
        Ok(b) => Ok(b),
        Err(OracleError::BudgetExhausted(_)) => Err(AttackError::InitFailure),
        Err(e) => Err(e.into()),
    };
    let mut found = Vec::new();
    for &i in candidates.iter().take(cfg.init_donors) {
        let mut p = donors.row(i).to_vec();
        clip(&mut p, cfg.bounds);
        if attempt(&mut probe, &p)? {
            found.push(p);
            if found.len() == cfg.init_candidates {
                break;
            }
        }
    }
    let (lo, hi) = probe.bounds;
    if found.is_empty() {
        for _ in 0..cfg.init_random {
            let p: Vec<f64> = (0..x.len()).map(|_| rng.random_range(lo..hi)).collect();
            if attempt(&mut probe, &p)? {
                found.push(p);
                break;
            }
        }
    }
    if found.len() <= 1 {
        return found.pop().ok_or(AttackError::InitFailure);
    }
    let coarse = cfg.tolerance.max(INIT_TOLERANCE);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for p in found {
        let b = match bisect(&mut probe, x, &p, coarse) {
            Ok(b) => b,
            Err(OracleError::BudgetExhausted(_)) => p,
            Err(e) => return Err(e.into()),
        };
        let d = dist(x, &b);
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, b));
        }
        if probe.oracle.budget().is_some_and(|cap| probe.oracle.queries() >= cap) {
            break;
        }
    }
    Ok(best.map(|(_, b)| b).expect("at least two candidates"))
}

/// Bisection tolerance used to rank initial candidates.
const INIT_TOLERANCE: f64 = 1e-3;

/// Bisects the segment `[x_in, x_adv]` for the label change, returning the
/// adversarial end of the final bracket (within `tol` of the crossing).
pub fn binary_search_to_boundary(
    oracle: &mut HardLabelOracle<'_>,
    x_in: &[f64],
    x_adv: &[f64],
    true_label: usize,
    tol: f64,
) -> std::result::Result<Vec<f64>, OracleError> {
    let mut probe = Probe {
        oracle,
        true_label,
        bounds: (f64::NEG_INFINITY, f64::INFINITY),
        origin: 0,
    };
    bisect(&mut probe, x_in, x_adv, tol)
}

pub(crate) fn bisect(
    probe: &mut Probe<'_, '_>,
    x_in: &[f64],
    x_adv: &[f64],
    tol: f64,
) -> std::result::Result<Vec<f64>, OracleError> {
    let len = dist(x_in, x_adv);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while (hi - lo) * len > tol {
        let mid = 0.5 * (lo + hi);
        if probe.is_adversarial(&lerp(x_in, x_adv, mid))? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if hi == 1.0 {
        return Ok(x_adv.to_vec());
    }
    Ok(lerp(x_in, x_adv, hi))
}

/// Shared bookkeeping for one attack run: best point so far and history.
pub(crate) struct Tracker {
    pub best: Vec<f64>,
    pub best_l2: f64,
    pub history: Vec<(u64, f64)>,
    x: Vec<f64>,
    target: Option<f64>,
}

impl Tracker {
    pub fn new(x: &[f64], start: Vec<f64>, queries: u64, target: Option<f64>) -> Self {
        let d = dist(x, &start);
        Self {
            best: start,
            best_l2: d,
            history: vec![(queries, d)],
            x: x.to_vec(),
            target,
        }
    }

    /// Accepts `p` if it does not increase the distortion. Returns whether
    /// it was accepted.
    pub fn offer(&mut self, p: Vec<f64>, queries: u64) -> bool {
        let d = dist(&self.x, &p);
        if d <= self.best_l2 {
            self.best = p;
            self.best_l2 = d;
            self.history.push((queries, d));
            true
        } else {
            false
        }
    }

    pub fn reached_target(&self) -> bool {
        self.target.is_some_and(|t| self.best_l2 <= t)
    }
}

/// Common attack skeleton: correctness check, init, boundary projection,
/// the attack-specific loop, then a re-verified record.
pub(crate) fn run_attack<R, F>(
    oracle: &mut HardLabelOracle<'_>,
    x: &[f64],
    true_label: usize,
    donors: &Dataset,
    cfg: &AttackConfig,
    rng: &mut R,
    body: F,
) -> Result<AdversarialRecord>
where
    R: Rng + ?Sized,
    F: FnOnce(&mut Probe<'_, '_>, &mut Tracker, &mut R) -> std::result::Result<(), OracleError>,
{
    cfg.validate()?;
    let start_queries = oracle.queries();
    if oracle.query(x).map_err(|e| match e {
        OracleError::BudgetExhausted(_) => AttackError::InitFailure,
        other => other.into(),
    })? != true_label
    {
        return Err(AttackError::NotCorrectlyClassified(true_label));
    }
    // cap at cfg.max_queries and hold one query back for the final
    // re-verification
    let outer_budget = oracle.budget();
    let own = start_queries + cfg.max_queries;
    let cap = outer_budget.map_or(own, |b| b.min(own));
    oracle.set_budget(Some(cap.saturating_sub(1)));
    let result = (|| -> Result<(Tracker, bool)> {
        let x0 = init_adversarial(oracle, x, true_label, donors, cfg, rng)?;
        let mut probe = Probe {
            oracle,
            true_label,
            bounds: cfg.bounds,
            origin: start_queries,
        };
        let start = match bisect(&mut probe, x, &x0, cfg.tolerance) {
            Ok(p) => p,
            Err(OracleError::BudgetExhausted(_)) => x0.clone(),
            Err(e) => return Err(e.into()),
        };
        let mut tracker = Tracker::new(x, start, probe.spent(), cfg.target_l2);
        let exhausted = if tracker.reached_target() {
            false
        } else {
            match body(&mut probe, &mut tracker, rng) {
                Ok(()) => false,
                Err(OracleError::BudgetExhausted(_)) => true,
                Err(e) => return Err(e.into()),
            }
        };
        Ok((tracker, exhausted))
    })();
    oracle.set_budget(outer_budget);
    let (tracker, exhausted) = result?;

    let attacked_label = oracle.query(&tracker.best)?;
    if attacked_label == true_label {
        return Err(AttackError::LostAdversariality);
    }
    Ok(AdversarialRecord {
        sample_id: 0,
        source_copy: 0,
        attack: cfg.kind,
        l2: tracker.best_l2,
        x: x.to_vec(),
        x_att: tracker.best,
        true_label,
        attacked_label,
        queries: oracle.queries() - start_queries,
        budget_exhausted: exhausted,
        history: tracker.history,
    })
}

/// Dispatches on `cfg.kind`.
pub fn attack_one<R: Rng + ?Sized>(
    oracle: &mut HardLabelOracle<'_>,
    x: &[f64],
    true_label: usize,
    donors: &Dataset,
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<AdversarialRecord> {
    match cfg.kind {
        AttackKind::Boundary => boundary_attack(oracle, x, true_label, donors, cfg, rng),
        AttackKind::Hsja => hsja(oracle, x, true_label, donors, cfg, rng),
        AttackKind::Surfree => surfree(oracle, x, true_label, donors, cfg, rng),
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::linear_setup;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Constant;

    impl Classify for Constant {
        fn input_dim(&self) -> usize {
            2
        }
        fn classes(&self) -> usize {
            2
        }
        fn classify(&self, _: &[f64]) -> std::result::Result<usize, NetError> {
            Ok(0)
        }
    }

    #[test]
    fn init_returns_first_valid_donor() {
        let (model, donors, cfg) = linear_setup();
        let mut oracle = HardLabelOracle::new(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = init_adversarial(&mut oracle, &[-1.0, 0.0], 0, &donors, &cfg, &mut rng).unwrap();
        assert!(p[0] > 0.0);
        assert_eq!(oracle.queries(), 1);
        assert!((0..4).any(|i| donors.row(i) == p.as_slice()));
    }

    #[test]
    fn init_keeps_the_nearest_of_several_candidates() {
        let (model, donors, cfg) = linear_setup();
        let cfg = AttackConfig {
            init_candidates: 4,
            ..cfg
        };
        let mut oracle = HardLabelOracle::new(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = init_adversarial(&mut oracle, &[-1.0, 0.0], 0, &donors, &cfg, &mut rng).unwrap();
        // every segment crosses x = 0; the donor (0.4, 0.1) crosses closest
        assert!(p[0] > 0.0 && p[0] < 2e-3, "{p:?}");
        assert!((p[1] - 0.1 / 1.4).abs() < 2e-3, "{p:?}");
        assert!(cfg.validate().is_ok());
        let zero = AttackConfig {
            init_candidates: 0,
            ..cfg
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn init_fails_on_single_class_oracle() {
        let (_, donors, cfg) = linear_setup();
        let mut oracle = HardLabelOracle::new(&Constant).with_budget(50);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            init_adversarial(&mut oracle, &[0.5, 0.5], 0, &donors, &cfg, &mut rng),
            Err(AttackError::InitFailure)
        );
        let mut unbounded = HardLabelOracle::new(&Constant);
        assert_eq!(
            init_adversarial(&mut unbounded, &[0.5, 0.5], 0, &donors, &cfg, &mut rng),
            Err(AttackError::InitFailure)
        );
        assert_eq!(unbounded.queries(), 4 + 100);
    }

    #[test]
    fn bisection_finds_hyperplane() {
        let (model, _, _) = linear_setup();
        let mut oracle = HardLabelOracle::new(&model);
        let p = binary_search_to_boundary(&mut oracle, &[-1.0, 0.0], &[1.0, 0.0], 0, 1e-6).unwrap();
        assert!(p[0] > 0.0 && p[0] < 1e-6);
        assert!((dist(&p, &[-1.0, 0.0]) - 1.0).abs() < 1e-6);
        // ceil(log2(2 / 1e-6)) = 21
        assert!(oracle.queries() <= 21 + 1);
    }

    #[test]
    fn bisection_query_bound_holds_for_many_lengths() {
        let (model, _, _) = linear_setup();
        for (k, &tol) in [1e-2, 1e-4, 1e-6, 1e-9].iter().enumerate() {
            let far = [0.5 + k as f64, 0.3];
            let near = [-0.7, 0.1];
            let mut oracle = HardLabelOracle::new(&model);
            binary_search_to_boundary(&mut oracle, &near, &far, 0, tol).unwrap();
            let bound = (dist(&near, &far) / tol).log2().ceil() as u64 + 1;
            assert!(oracle.queries() <= bound, "{} > {bound}", oracle.queries());
        }
    }

    #[test]
    fn bisection_noop_when_within_tolerance() {
        let (model, _, _) = linear_setup();
        let mut oracle = HardLabelOracle::new(&model);
        let adv = [1e-8, 0.0];
        let p = binary_search_to_boundary(&mut oracle, &[-1e-8, 0.0], &adv, 0, 1e-6).unwrap();
        assert_eq!(p, adv.to_vec());
        assert_eq!(oracle.queries(), 0);
    }

    #[test]
    fn config_validation() {
        assert!(AttackConfig::default().validate().is_ok());
        let bad = AttackConfig {
            max_queries: 0,
            ..AttackConfig::default()
        };
        assert!(bad.validate().is_err());
        let mut bad_step = AttackConfig::default();
        bad_step.boundary.spherical_step = 0.0;
        assert!(bad_step.validate().is_err());
    }

    #[test]
    fn linear_distance_is_exact() {
        let m = LinearClassifier::new(vec![3.0, 4.0], -5.0);
        assert!((m.distance(&[0.0, 0.0]) - 1.0).abs() < 1e-15);
    }
}
