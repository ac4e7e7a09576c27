//! Joint optimization of per-model variational posteriors and the
//! categorical model weights `q(M)`.
//!
//! Each iteration, for every model `M` independently:
//!
//! 1. draw `S` standard-normal vectors `z[1..S]`;
//! 2. estimate the ELBO gradient `Ĝ_M` and the ELBO `L̂_M` from those same
//!    draws;
//! 3. step the variational parameters along `q(M) · Ĝ_M`.
//!
//! Then, at a barrier, `q(M) ∝ exp(L̂_M + log p(M))`. During pre-training `q`
//! stays at `1/K` and only step 3 uses it. The reported weights are the mean
//! of the last `window` weight vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::family::VariationalState;
use crate::models::{subset_from_mask, GpModel, GpPriors, LogisticModel, Model, RegressionData, ZellnerModel};
use crate::optim::{OptimizerConfig, OptimizerState};

/// A finite set of candidate models with prior weights `p(M)`.
pub struct Ensemble {
    models: Vec<Box<dyn Model>>,
    prior_weights: Vec<f64>,
}

impl Ensemble {
    pub fn new(models: Vec<Box<dyn Model>>, prior_weights: Vec<f64>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::Config("an ensemble needs at least one model".into()));
        }
        if prior_weights.len() != models.len() {
            return Err(Error::Dimension { expected: models.len(), got: prior_weights.len() });
        }
        if prior_weights.iter().any(|w| !(*w > 0.0 && *w <= 1.0)) {
            return Err(Error::Config("prior model weights must lie in (0, 1]".into()));
        }
        let total: f64 = prior_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("prior model weights sum to {total}, expected 1")));
        }
        Ok(Self { models, prior_weights })
    }

    /// Equal prior weight `1/K` for every model.
    pub fn uniform(models: Vec<Box<dyn Model>>) -> Result<Self> {
        let k = models.len();
        Self::new(models, vec![1.0 / k.max(1) as f64; k])
    }

    /// Every subset of the predictors as a Zellner model (`g = n`), in
    /// bitmask order starting from the intercept-only model.
    pub fn linear_subsets(data: &RegressionData) -> Result<Self> {
        let k = data.predictor_names.len();
        let models = (0..1usize << k)
            .map(|mask| ZellnerModel::new(data, &subset_from_mask(mask, k)).map(|m| Box::new(m) as Box<dyn Model>))
            .collect::<Result<Vec<_>>>()?;
        Self::uniform(models)
    }

    /// Every subset of the predictors as a logistic model, in bitmask order.
    pub fn logistic_subsets(data: &RegressionData, prior_sd: f64) -> Result<Self> {
        let k = data.predictor_names.len();
        let models = (0..1usize << k)
            .map(|mask| {
                LogisticModel::new(data, &subset_from_mask(mask, k), prior_sd).map(|m| Box::new(m) as Box<dyn Model>)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::uniform(models)
    }

    /// GP models on the same data differing only in a fixed mean offset.
    pub fn gp_offsets(x: &[[f64; 2]], y: &[f64], offsets: &[f64], priors: GpPriors) -> Result<Self> {
        let models = offsets
            .iter()
            .map(|&off| {
                let name = if off == 0.0 { "gp".to_owned() } else { format!("gp{:+}", (off * 1e4).round() / 1e4) };
                GpModel::new(name, x.to_vec(), y.to_vec(), off).map(|m| Box::new(m.with_priors(priors)) as Box<dyn Model>)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::uniform(models)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn models(&self) -> &[Box<dyn Model>] {
        &self.models
    }

    pub fn model(&self, i: usize) -> &dyn Model {
        self.models[i].as_ref()
    }

    pub fn prior_weights(&self) -> &[f64] {
        &self.prior_weights
    }

    pub fn log_prior_weights(&self) -> Vec<f64> {
        self.prior_weights.iter().map(|w| w.ln()).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.models.iter().map(|m| m.name().to_owned()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.models.iter().position(|m| m.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VbmaConfig {
    /// Monte Carlo draws per model per iteration.
    pub samples: usize,
    pub pretrain_iters: usize,
    pub joint_iters: usize,
    /// Number of trailing weight vectors averaged into the reported `q`.
    pub window: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    /// Relative change of the moving-average ELBO below which the joint
    /// phase stops early.
    pub tolerance: f64,
    pub convergence_window: usize,
    /// Worker threads for the per-model work; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for VbmaConfig {
    fn default() -> Self {
        Self {
            samples: 10,
            pretrain_iters: 500,
            joint_iters: 200,
            window: 100,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            tolerance: 1e-4,
            convergence_window: 50,
            threads: None,
        }
    }
}

impl VbmaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Config("samples must be at least 1".into()));
        }
        if self.joint_iters == 0 {
            return Err(Error::Config("joint iterations must be at least 1".into()));
        }
        if self.window == 0 || self.window > self.joint_iters {
            return Err(Error::Config(format!(
                "averaging window must be in 1..={}, got {}",
                self.joint_iters, self.window
            )));
        }
        if self.convergence_window == 0 {
            return Err(Error::Config("convergence window must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    PreTrain,
    Joint,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::PreTrain => "pretrain",
            Phase::Joint => "joint",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    BudgetExhausted,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::BudgetExhausted => "budget-exhausted",
        }
    }
}

/// Full optimization state of an ensemble run.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    pub model_names: Vec<String>,
    pub variational: Vec<VariationalState>,
    pub optimizers: Vec<OptimizerState>,
    /// Current `q(M)`.
    pub weights: Vec<f64>,
    /// Unnormalized log weights `L̂_M + log p(M)` of the last update.
    pub log_weights: Vec<f64>,
    /// `elbo_trace[m][it]`: `L̂_M` at each iteration.
    pub elbo_trace: Vec<Vec<f64>>,
    /// `q` after each iteration.
    pub weight_trace: Vec<Vec<f64>>,
    /// Draws rejected for non-finite log densities, per model.
    pub rejections: Vec<usize>,
    pub iteration: usize,
    pub phase: Phase,
}

impl EnsembleState {
    pub fn init(ensemble: &Ensemble, optimizer: OptimizerConfig) -> Self {
        let k = ensemble.len();
        let variational: Vec<VariationalState> =
            ensemble.models().iter().map(|m| VariationalState::init(m.layout())).collect();
        let optimizers = variational.iter().map(|v| OptimizerState::new(optimizer, 2 * v.dim())).collect();
        Self {
            model_names: ensemble.names(),
            variational,
            optimizers,
            weights: vec![1.0 / k as f64; k],
            log_weights: ensemble.log_prior_weights(),
            elbo_trace: vec![Vec::new(); k],
            weight_trace: Vec::new(),
            rejections: vec![0; k],
            iteration: 0,
            phase: Phase::PreTrain,
        }
    }

    pub fn len(&self) -> usize {
        self.model_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model_names.is_empty()
    }

    /// `L̂(q) = Σ q(M) L̂_M` at iteration `it`.
    pub fn ensemble_elbo(&self, it: usize) -> f64 {
        self.weight_trace[it].iter().zip(&self.elbo_trace).map(|(q, tr)| q * tr[it]).sum()
    }

    /// Mean and standard error of the last `window` weight vectors.
    pub fn trailing_weights(&self, window: usize) -> (Vec<f64>, Vec<f64>) {
        let k = self.len();
        let w = window.min(self.weight_trace.len()).max(1);
        let tail = &self.weight_trace[self.weight_trace.len().saturating_sub(w)..];
        let n = tail.len() as f64;
        let mut mean = vec![0.0; k];
        for q in tail {
            for (m, v) in mean.iter_mut().zip(q) {
                *m += v / n;
            }
        }
        let total: f64 = mean.iter().sum();
        if total > 0.0 {
            for m in &mut mean {
                *m /= total;
            }
        }
        let se = (0..k)
            .map(|j| {
                if tail.len() < 2 {
                    return 0.0;
                }
                let var = tail.iter().map(|q| (q[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0);
                (var / n).sqrt()
            })
            .collect();
        (mean, se)
    }
}

const CHECKPOINT_MAGIC: &str = "vbma-checkpoint 1";

impl EnsembleState {
    /// Plain-text snapshot of everything needed to continue or to predict:
    /// weights, optimizer memory and variational parameters per model.
    /// Traces are not included. Floats are written in shortest round-trip
    /// form, so `from_checkpoint(to_checkpoint(s))` restores `s` exactly
    /// apart from the traces.
    pub fn to_checkpoint(&self) -> String {
        use std::fmt::Write as _;
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
        let _ = writeln!(out, "iteration = {}", self.iteration);
        let _ = writeln!(out, "phase = {}", self.phase.as_str());
        for m in 0..self.len() {
            let _ = writeln!(out, "[model {}]", self.model_names[m]);
            let _ = writeln!(out, "weight = {:?}", self.weights[m]);
            let _ = writeln!(out, "log_weight = {:?}", self.log_weights[m]);
            let _ = writeln!(out, "rejections = {}", self.rejections[m]);
            let opt = &self.optimizers[m];
            let _ = writeln!(out, "step = {}", opt.t);
            let _ = writeln!(out, "first_moment = {}", join(&opt.m));
            let _ = writeln!(out, "second_moment = {}", join(&opt.v));
            let _ = writeln!(out, "---");
            out.push_str(&self.variational[m].to_text());
        }
        out
    }

    pub fn from_checkpoint(text: &str, optimizer: OptimizerConfig) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let err = |line: usize, message: &str| Error::Parse { line: line + 1, message: message.to_owned() };
        match lines.next() {
            Some((_, l)) if l.trim() == CHECKPOINT_MAGIC => {}
            Some((i, _)) => return Err(err(i, "not a checkpoint file")),
            None => return Err(err(0, "empty checkpoint")),
        }
        let mut header = |key: &str| -> Result<String> {
            let (i, line) = lines.next().ok_or_else(|| err(0, "truncated header"))?;
            match line.split_once('=') {
                Some((k, v)) if k.trim() == key => Ok(v.trim().to_owned()),
                _ => Err(err(i, &format!("expected `{key} = ...`"))),
            }
        };
        let iteration: usize = header("iteration")?.parse().map_err(|_| err(1, "bad iteration"))?;
        let phase = match header("phase")?.as_str() {
            "pretrain" => Phase::PreTrain,
            "joint" => Phase::Joint,
            _ => return Err(err(2, "phase must be `pretrain` or `joint`")),
        };
        let mut state = Self {
            model_names: vec![],
            variational: vec![],
            optimizers: vec![],
            weights: vec![],
            log_weights: vec![],
            elbo_trace: vec![],
            weight_trace: vec![],
            rejections: vec![],
            iteration,
            phase,
        };
        let rest: Vec<(usize, &str)> = lines.collect();
        let mut pos = 0;
        while pos < rest.len() {
            let (i, line) = rest[pos];
            let name = line
                .trim()
                .strip_prefix("[model ")
                .and_then(|s| s.strip_suffix(']'))
                .ok_or_else(|| err(i, "expected `[model name]`"))?;
            pos += 1;
            let mut kv = std::collections::HashMap::new();
            while pos < rest.len() && rest[pos].1.trim() != "---" {
                let (j, l) = rest[pos];
                let (k, v) = l.split_once('=').ok_or_else(|| err(j, "expected `key = value`"))?;
                kv.insert(k.trim().to_owned(), (j, v.trim().to_owned()));
                pos += 1;
            }
            if pos == rest.len() {
                return Err(err(i, "model block without `---`"));
            }
            pos += 1;
            let mut params = String::new();
            while pos < rest.len() && !rest[pos].1.trim_start().starts_with("[model ") {
                params.push_str(rest[pos].1);
                params.push('\n');
                pos += 1;
            }
            let get = |k: &str| kv.get(k).ok_or_else(|| err(i, &format!("model `{name}` lacks `{k}`")));
            let num = |k: &str| -> Result<f64> {
                let (j, v) = get(k)?;
                v.parse().map_err(|_| err(*j, &format!("bad `{k}`")))
            };
            let list = |k: &str| -> Result<Vec<f64>> {
                let (j, v) = get(k)?;
                v.split_whitespace().map(|x| x.parse().map_err(|_| err(*j, &format!("bad `{k}`")))).collect()
            };
            let vs = VariationalState::from_text(&params)?;
            let mut opt = OptimizerState::new(optimizer, 2 * vs.dim());
            opt.t = num("step")? as u64;
            opt.m = list("first_moment")?;
            opt.v = list("second_moment")?;
            if opt.m.len() != 2 * vs.dim() || opt.v.len() != 2 * vs.dim() {
                return Err(err(i, &format!("optimizer memory of `{name}` does not match its parameters")));
            }
            state.model_names.push(name.to_owned());
            state.weights.push(num("weight")?);
            state.log_weights.push(num("log_weight")?);
            state.rejections.push(num("rejections")? as usize);
            state.variational.push(vs);
            state.optimizers.push(opt);
            state.elbo_trace.push(Vec::new());
        }
        if state.model_names.is_empty() {
            return Err(err(0, "checkpoint lists no models"));
        }
        Ok(state)
    }
}

/// `q(M) ∝ exp(L̂_M + log p(M))`, normalized in the log domain.
pub fn update_weights(elbos: &[f64], log_prior_weights: &[f64]) -> Result<Vec<f64>> {
    if elbos.len() != log_prior_weights.len() {
        return Err(Error::Dimension { expected: elbos.len(), got: log_prior_weights.len() });
    }
    let logits: Vec<f64> = elbos.iter().zip(log_prior_weights).map(|(l, p)| l + p).collect();
    softmax(&logits)
}

/// Max-subtracted softmax. Entries may be `-inf` but not all of them.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Domain("softmax input contains NaN or +inf".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Domain("every log weight is -inf".into()));
    }
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Gradient and ELBO estimates for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct GradElbo {
    /// `Ĝ_M` over the flattened variational parameters `(mu, raw)`.
    pub grad: Vec<f64>,
    /// `L̂_M`.
    pub elbo: f64,
}

/// Contribution of one standard-normal draw `z`: the gradient of
/// `log p(d, t(z,λ)) - log q(t(z,λ) | λ)` through the path `θ = t(z, λ)`
/// (the density `q(·|λ)` itself is held fixed), and the integrand value.
///
/// Returns `Ok(None)` if the log densities are not finite at this draw.
pub fn draw_contribution(model: &dyn Model, state: &VariationalState, z: &[f64]) -> Result<Option<(Vec<f64>, f64)>> {
    if z.len() != state.dim() {
        return Err(Error::Dimension { expected: state.dim(), got: z.len() });
    }
    let tape = Tape::new();
    let mu = tape.vars(&state.mu);
    let raw = tape.vars(&state.raw);
    let theta = VariationalState::reparam_vars(&mu, &raw, &state.tags, z);
    let mu_fixed: Vec<_> = state.mu.iter().map(|&v| tape.constant(v)).collect();
    let raw_fixed: Vec<_> = state.raw.iter().map(|&v| tape.constant(v)).collect();
    let log_joint = match model.log_joint(&theta) {
        Ok(v) => v,
        Err(e) if is_draw_failure(&e) => return Ok(None),
        Err(e) => return Err(e),
    };
    let objective = log_joint - VariationalState::log_q_vars(&theta, &mu_fixed, &raw_fixed, &state.tags);
    let inputs: Vec<_> = mu.iter().chain(&raw).copied().collect();
    match tape.gradient(objective, &inputs) {
        Ok(g) if objective.value().is_finite() => Ok(Some((g, objective.value()))),
        Ok(_) => Ok(None),
        Err(e) if is_draw_failure(&e) => Ok(None),
        Err(e) => Err(e),
    }
}

fn is_draw_failure(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. } | Error::Domain(_) | Error::Conditioning { .. } | Error::Decomposition { .. })
}

/// `Ĝ_M` and `L̂_M` from the given draws (all draws share the same `z`).
/// Fails if any draw yields non-finite log densities.
pub fn estimate_grad_and_elbo(model: &dyn Model, state: &VariationalState, draws: &[Vec<f64>]) -> Result<GradElbo> {
    if draws.is_empty() {
        return Err(Error::Config("at least one draw is required".into()));
    }
    let mut acc = Accumulator::new(2 * state.dim());
    for z in draws {
        match draw_contribution(model, state, z)? {
            Some((g, l)) => acc.add(&g, l),
            None => return Err(Error::NonFinite { op: format!("log density of `{}`", model.name()), node: 0 }),
        }
    }
    Ok(acc.finish())
}

struct Accumulator {
    grad: Vec<f64>,
    elbo: f64,
    count: usize,
}

impl Accumulator {
    fn new(dim: usize) -> Self {
        Self { grad: vec![0.0; dim], elbo: 0.0, count: 0 }
    }

    fn add(&mut self, g: &[f64], l: f64) {
        for (a, b) in self.grad.iter_mut().zip(g) {
            *a += b;
        }
        self.elbo += l;
        self.count += 1;
    }

    fn finish(self) -> GradElbo {
        let n = self.count as f64;
        GradElbo { grad: self.grad.into_iter().map(|g| g / n).collect(), elbo: self.elbo / n }
    }
}

/// Seed of the random substream for (`model`, `iteration`).
pub fn substream_seed(master: u64, model: usize, iteration: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(master) ^ model as u64) ^ iteration as u64)
}

/// Draws `S` accepted standard-normal batches for one model and iteration,
/// resampling draws whose log densities are not finite.
fn sample_estimate(
    model: &dyn Model,
    state: &VariationalState,
    samples: usize,
    seed: u64,
    iteration: usize,
) -> Result<(GradElbo, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = Accumulator::new(2 * state.dim());
    let mut rejected = 0;
    while acc.count < samples {
        let z: Vec<f64> = (0..state.dim()).map(|_| rng.sample(StandardNormal)).collect();
        match draw_contribution(model, state, &z)? {
            Some((g, l)) => acc.add(&g, l),
            None => {
                rejected += 1;
                if rejected > samples {
                    return Err(Error::TooManyRejections {
                        iteration,
                        model: model.name().to_owned(),
                        rejected,
                        attempted: rejected + acc.count,
                    });
                }
            }
        }
    }
    Ok((acc.finish(), rejected))
}

/// Final result of a run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: EnsembleState,
    /// Trailing-window mean of `q`.
    pub weights: Vec<f64>,
    /// Standard error of each trailing-window mean.
    pub weight_se: Vec<f64>,
    pub status: RunStatus,
}

/// A failed run, with the last consistent state.
#[derive(Debug)]
pub struct RunError {
    pub state: Box<EnsembleState>,
    pub source: Error,
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run aborted at iteration {}: {}", self.state.iteration, self.source)
    }
}

impl std::error::Error for RunError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl From<RunError> for Error {
    fn from(e: RunError) -> Self {
        e.source
    }
}

/// Runs the full pre-training and joint phases.
pub fn run(config: &VbmaConfig, ensemble: &Ensemble) -> Result<RunOutcome, RunError> {
    run_with_observer(config, ensemble, None, &mut |_| {})
}

/// Like [`run`], calling `observer` with the state every `every` iterations
/// (e.g. to write checkpoints).
pub fn run_with_observer(
    config: &VbmaConfig,
    ensemble: &Ensemble,
    every: Option<usize>,
    observer: &mut dyn FnMut(&EnsembleState),
) -> Result<RunOutcome, RunError> {
    let mut state = EnsembleState::init(ensemble, config.optimizer);
    let fail = |state: &EnsembleState, source| RunError { state: Box::new(state.clone()), source };
    if let Err(e) = config.validate() {
        return Err(fail(&state, e));
    }
    let pool = match config.threads {
        Some(n) if n > 1 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(p) => Some(p),
            Err(e) => return Err(fail(&state, Error::Config(format!("thread pool: {e}")))),
        },
        _ => None,
    };
    let serial = config.threads == Some(1);
    let k = ensemble.len();
    let log_prior = ensemble.log_prior_weights();
    let total = config.pretrain_iters + config.joint_iters;
    let mut objective = Vec::with_capacity(config.joint_iters);
    let mut status = RunStatus::BudgetExhausted;

    for it in 0..total {
        state.phase = if it < config.pretrain_iters { Phase::PreTrain } else { Phase::Joint };
        let step_weights = if state.phase == Phase::PreTrain { vec![1.0 / k as f64; k] } else { state.weights.clone() };

        let work = |m: usize| -> Result<(VariationalState, OptimizerState, f64, usize)> {
            let model = ensemble.model(m);
            let seed = substream_seed(config.seed, m, it);
            let (est, rejected) = sample_estimate(model, &state.variational[m], config.samples, seed, it)?;
            let mut vs = state.variational[m].clone();
            let mut opt = state.optimizers[m].clone();
            let mut flat = vs.to_flat();
            let g: Vec<f64> = est.grad.iter().map(|g| step_weights[m] * g).collect();
            opt.step(&mut flat, &g)?;
            vs.set_flat(&flat)?;
            Ok((vs, opt, est.elbo, rejected))
        };
        let results: Vec<Result<_>> = if serial {
            (0..k).map(work).collect()
        } else if let Some(pool) = &pool {
            pool.install(|| (0..k).into_par_iter().map(work).collect())
        } else {
            (0..k).into_par_iter().map(work).collect()
        };

        let mut elbos = Vec::with_capacity(k);
        let mut updates = Vec::with_capacity(k);
        for r in results {
            match r {
                Ok(u) => updates.push(u),
                Err(e) => return Err(fail(&state, e)),
            }
        }
        for (m, (vs, opt, elbo, rejected)) in updates.into_iter().enumerate() {
            state.variational[m] = vs;
            state.optimizers[m] = opt;
            state.rejections[m] += rejected;
            state.elbo_trace[m].push(elbo);
            elbos.push(elbo);
        }
        state.log_weights = elbos.iter().zip(&log_prior).map(|(l, p)| l + p).collect();
        if state.phase == Phase::Joint {
            match update_weights(&elbos, &log_prior) {
                Ok(q) => state.weights = q,
                Err(e) => return Err(fail(&state, e)),
            }
        }
        state.weight_trace.push(state.weights.clone());
        state.iteration = it + 1;

        if let Some(n) = every {
            if n > 0 && state.iteration % n == 0 {
                observer(&state);
            }
        }

        if state.phase == Phase::Joint {
            objective.push(state.ensemble_elbo(it));
            if objective.len() >= config.window && has_converged(&objective, config.convergence_window, config.tolerance)
            {
                status = RunStatus::Converged;
                break;
            }
        }
    }

    let (weights, weight_se) = state.trailing_weights(config.window);
    Ok(RunOutcome { state, weights, weight_se, status })
}

/// Two consecutive moving-average changes below `tol` (relative).
fn has_converged(objective: &[f64], window: usize, tol: f64) -> bool {
    let n = objective.len();
    if n < 3 * window {
        return false;
    }
    let avg = |end: usize| objective[end - window..end].iter().sum::<f64>() / window as f64;
    let (a0, a1, a2) = (avg(n), avg(n - window), avg(n - 2 * window));
    let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(f64::MIN_POSITIVE);
    rel(a0, a1) < tol && rel(a1, a2) < tol
}
