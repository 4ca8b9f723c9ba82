//! Model separation: a shared classifier paired with per-copy tracers.
//!
//! A distributed copy answers with `argmax(norm(C(x)) + alpha * T_i(x))`,
//! where `norm` is per-query min-max scaling. Tracers are trained to make
//! their output on `x` and on `x + noise` as close to orthogonal as possible.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datax::{add_noise, Dataset, NoiseSpec};
use crate::exec::{derive_seed, Exec};
use crate::netcore::{
    argmax, cross_entropy_grad, Activation, AdamConfig, AdamState, DenseNet, Gradients, NetError,
};

#[derive(Debug, Error, PartialEq)]
pub enum SeparationError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("noise-sensitive loss undefined for a zero-norm output")]
    DegenerateOutput,
    #[error("vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, SeparationError>;

/// Absolute cosine similarity `|<a, b>| / (|a| |b|)`.
pub fn noise_sensitive_loss(clean: &[f64], noised: &[f64]) -> Result<f64> {
    Ok(noise_sensitive_loss_grad(clean, noised)?.0)
}

/// The loss together with its gradients with respect to both arguments.
pub fn noise_sensitive_loss_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() {
        return Err(SeparationError::LengthMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let aa = a.iter().map(|x| x * x).sum::<f64>();
    let bb = b.iter().map(|x| x * x).sum::<f64>();
    let (na, nb) = (aa.sqrt(), bb.sqrt());
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(SeparationError::DegenerateOutput);
    }
    // one rounded sqrt keeps cos(a, a) exactly 1
    let nab = (aa * bb).sqrt();
    let cos = if nab.is_finite() && nab > 0.0 { dot / nab } else { dot / (na * nb) };
    let sign = if cos >= 0.0 { 1.0 } else { -1.0 };
    let ga = a
        .iter()
        .zip(b)
        .map(|(&ai, &bi)| sign * (bi / (na * nb) - cos * ai / (na * na)))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(&ai, &bi)| sign * (ai / (na * nb) - cos * bi / (nb * nb)))
        .collect();
    Ok((cos.abs().min(1.0), ga, gb))
}

/// `(raw - min) / (max - min)`; all zeros when `max == min`.
pub fn normalize_logits(raw: &[f64]) -> Vec<f64> {
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|&v| (v - lo) / span).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TracerMode {
    NoiseSensitive,
    RandomUntrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracerConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub noise_hi: f64,
    /// Mean held-out loss at or below which training counts as converged.
    pub target_loss: f64,
}

impl Default for TracerConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            epochs: 6000,
            batch_size: 64,
            learning_rate: 1e-3,
            noise_hi: 0.03,
            target_loss: 0.1,
        }
    }
}

impl TracerConfig {
    fn validate(&self) -> Result<NoiseSpec> {
        if self.batch_size == 0 {
            return Err(SeparationError::Config("tracer batch_size must be > 0".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(SeparationError::Config("tracer learning_rate must be > 0".into()));
        }
        NoiseSpec::new(self.noise_hi).map_err(|e| SeparationError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracer {
    net: DenseNet,
    seed: u64,
    config: TracerConfig,
    trained: bool,
    /// Mean noise-sensitive loss on the held-out set, if one was given.
    heldout_loss: Option<f64>,
    converged: bool,
}

impl Tracer {
    /// A freshly initialized tracer with an RMS-normalized tanh head.
    pub fn untrained(input_dim: usize, classes: usize, seed: u64, config: TracerConfig) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend(&config.hidden);
        dims.push(classes);
        let net = DenseNet::new(&dims, Activation::Relu, Activation::RmsTanh, seed)?;
        Ok(Self {
            net,
            seed,
            config,
            trained: false,
            heldout_loss: None,
            converged: false,
        })
    }

    pub fn from_parts(net: DenseNet, seed: u64, config: TracerConfig, trained: bool) -> Self {
        Self {
            net,
            seed,
            config,
            trained,
            heldout_loss: None,
            converged: false,
        }
    }

    /// Restores a previously measured held-out loss (e.g. from a manifest).
    pub fn with_heldout_loss(mut self, loss: Option<f64>) -> Self {
        self.heldout_loss = loss;
        self.converged = loss.is_some_and(|l| l <= self.config.target_loss);
        self
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config(&self) -> &TracerConfig {
        &self.config
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn heldout_loss(&self) -> Option<f64> {
        self.heldout_loss
    }

    /// False when training ended above the target loss.
    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.net.forward(x)?)
    }

    /// Records the held-out loss and sets the convergence flag.
    pub fn evaluate_heldout(&mut self, heldout: &Dataset, noise_seed: u64) -> Result<f64> {
        let spec = self.config.validate()?;
        let loss = mean_noise_sensitive_loss(&self.net, heldout, &spec, noise_seed)?;
        self.heldout_loss = Some(loss);
        self.converged = loss <= self.config.target_loss;
        Ok(loss)
    }
}

/// Mean loss over `(x, x + noise)` pairs, one fresh noise draw per row.
pub fn mean_noise_sensitive_loss(net: &DenseNet, ds: &Dataset, spec: &NoiseSpec, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for (x, _) in ds.rows() {
        let xn = add_noise(x, spec, &mut rng);
        total += noise_sensitive_loss(&net.forward(x)?, &net.forward(&xn)?)?;
    }
    Ok(total / ds.len() as f64)
}

/// Trains a tracer on `subset` by minimizing the mean noise-sensitive loss
/// with Adam. Each row gets fresh noise every epoch.
///
/// When `heldout` is given the final held-out loss is recorded and the
/// convergence flag is set; failing to converge is not an error.
pub fn train_tracer(subset: &Dataset, heldout: Option<&Dataset>, seed: u64, config: &TracerConfig) -> Result<Tracer> {
    let spec = config.validate()?;
    let mut tracer = Tracer::untrained(subset.dim(), subset.classes(), seed, config.clone())?;
    let mut adam = AdamState::new(
        &tracer.net,
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "tracer-train", 0));
    let mut order: Vec<usize> = (0..subset.len()).collect();
    let mut grads = Gradients::zeros_like(&tracer.net);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grads.scale(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let x = subset.row(i);
                let xn = add_noise(x, &spec, &mut rng);
                let clean = tracer.net.forward_cached(x)?;
                let noised = tracer.net.forward_cached(&xn)?;
                let (_, ga, gb) = noise_sensitive_loss_grad(clean.output(), noised.output())?;
                tracer.net.backward_accumulate(&clean, &ga, scale, &mut grads)?;
                tracer.net.backward_accumulate(&noised, &gb, scale, &mut grads)?;
            }
            adam.step(&mut tracer.net, &grads)?;
        }
    }
    tracer.trained = true;
    if let Some(h) = heldout {
        tracer.evaluate_heldout(h, derive_seed(seed, "tracer-heldout", 0))?;
    }
    Ok(tracer)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-4,
            seed: 0,
        }
    }
}

/// Plain cross-entropy training with Adam; independent of any tracer.
pub fn train_classifier(ds: &Dataset, config: &ClassifierConfig) -> Result<DenseNet> {
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(SeparationError::Config(
            "classifier batch_size and learning_rate must be > 0".into(),
        ));
    }
    let mut dims = vec![ds.dim()];
    dims.extend(&config.hidden);
    dims.push(ds.classes());
    let mut net = DenseNet::new(&dims, Activation::Relu, Activation::Identity, config.seed)?;
    let mut adam = AdamState::new(
        &net,
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "classifier-train", 0));
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut grads = Gradients::zeros_like(&net);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grads.scale(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let cache = net.forward_cached(ds.row(i))?;
                let (_, g) = cross_entropy_grad(cache.output(), ds.label(i))?;
                net.backward_accumulate(&cache, &g, scale, &mut grads)?;
            }
            adam.step(&mut net, &grads)?;
        }
    }
    Ok(net)
}

/// Anything that maps an input to a single class label.
pub trait Classify: Sync {
    fn input_dim(&self) -> usize;
    fn classes(&self) -> usize;
    fn classify(&self, x: &[f64]) -> std::result::Result<usize, NetError>;
}

impl Classify for DenseNet {
    fn input_dim(&self) -> usize {
        DenseNet::input_dim(self)
    }

    fn classes(&self) -> usize {
        self.output_dim()
    }

    fn classify(&self, x: &[f64]) -> std::result::Result<usize, NetError> {
        self.predict(x)
    }
}

/// Fraction of rows of `ds` that `model` labels correctly.
pub fn accuracy<M: Classify + ?Sized>(model: &M, ds: &Dataset, exec: Exec) -> Result<f64> {
    let hits = exec.map_range(ds.len(), |i| model.classify(ds.row(i)).map(|p| p == ds.label(i)));
    let mut correct = 0usize;
    for h in hits {
        if h? {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// One distributed copy: shared classifier, private tracer, blend weight.
#[derive(Debug, Clone)]
pub struct ParallelModel {
    copy_id: usize,
    classifier: Arc<DenseNet>,
    tracer: Arc<Tracer>,
    alpha: f64,
}

impl ParallelModel {
    pub fn new(copy_id: usize, classifier: Arc<DenseNet>, tracer: Arc<Tracer>, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(SeparationError::Config(format!("alpha {alpha} must be >= 0")));
        }
        if classifier.input_dim() != tracer.net.input_dim() || classifier.output_dim() != tracer.net.output_dim() {
            return Err(SeparationError::Config(format!(
                "tracer {}->{} does not match classifier {}->{}",
                tracer.net.input_dim(),
                tracer.net.output_dim(),
                classifier.input_dim(),
                classifier.output_dim()
            )));
        }
        Ok(Self {
            copy_id,
            classifier,
            tracer,
            alpha,
        })
    }

    pub fn copy_id(&self) -> usize {
        self.copy_id
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn classifier(&self) -> &Arc<DenseNet> {
        &self.classifier
    }

    pub fn tracer(&self) -> &Arc<Tracer> {
        &self.tracer
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.copy_id, self.classifier.clone(), self.tracer.clone(), alpha)
    }

    /// `normalize_logits(C(x)) + alpha * T(x)`.
    pub fn combined_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = normalize_logits(&self.classifier.forward(x)?);
        if self.alpha != 0.0 {
            let t = self.tracer.net.forward(x)?;
            for (o, ti) in out.iter_mut().zip(t) {
                *o += self.alpha * ti;
            }
        }
        Ok(out)
    }
}

impl Classify for ParallelModel {
    fn input_dim(&self) -> usize {
        self.classifier.input_dim()
    }

    fn classes(&self) -> usize {
        self.classifier.output_dim()
    }

    fn classify(&self, x: &[f64]) -> std::result::Result<usize, NetError> {
        let logits = self.combined_logits(x).map_err(|e| match e {
            SeparationError::Net(n) => n,
            other => NetError::Layout(other.to_string()),
        })?;
        Ok(argmax(&logits))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("query budget of {0} exhausted")]
    BudgetExhausted(u64),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Label-only access to a model, with a query counter and optional budget.
pub struct HardLabelOracle<'m> {
    model: &'m dyn Classify,
    queries: u64,
    budget: Option<u64>,
    bounds: Option<(f64, f64)>,
    out_of_bounds: u64,
}

impl<'m> HardLabelOracle<'m> {
    pub fn new(model: &'m dyn Classify) -> Self {
        Self {
            model,
            queries: 0,
            budget: None,
            bounds: None,
            out_of_bounds: 0,
        }
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = Some(budget);
        self
    }

    /// Counts (but still answers) queries falling outside `[lo, hi]^d`.
    pub fn watch_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.bounds = Some((lo, hi));
        self
    }

    pub fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    pub fn classes(&self) -> usize {
        self.model.classes()
    }

    pub fn queries(&self) -> u64 {
        self.queries
    }

    pub fn budget(&self) -> Option<u64> {
        self.budget
    }

    pub fn set_budget(&mut self, budget: Option<u64>) {
        self.budget = budget;
    }

    pub fn remaining(&self) -> Option<u64> {
        self.budget.map(|b| b.saturating_sub(self.queries))
    }

    pub fn out_of_bounds(&self) -> u64 {
        self.out_of_bounds
    }

    pub fn query(&mut self, x: &[f64]) -> std::result::Result<usize, OracleError> {
        if let Some(b) = self.budget {
            if self.queries >= b {
                return Err(OracleError::BudgetExhausted(b));
            }
        }
        self.queries += 1;
        if let Some((lo, hi)) = self.bounds {
            if x.iter().any(|v| !(lo..=hi).contains(v)) {
                self.out_of_bounds += 1;
            }
        }
        Ok(self.model.classify(x)?)
    }
}
