//! Reference estimates of the log evidence `log p(d | M)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::autodiff::value;
use crate::error::{Error, Result};
use crate::models::{Model, ZellnerModel, LN_2PI};
use crate::vbma::{softmax, substream_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvidenceMethod {
    /// Exact, up to the constant shared by all Zellner subset models.
    ClosedFormZellner,
    MonteCarlo,
}

impl EvidenceMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvidenceMethod::ClosedFormZellner => "closed-form-zellner",
            EvidenceMethod::MonteCarlo => "monte-carlo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvidenceEstimate {
    pub log_evidence: f64,
    pub method: EvidenceMethod,
    /// Prior draws used; 0 for the closed form.
    pub mc_samples: usize,
    /// Standard error of `log_evidence`; 0 for the closed form.
    pub std_error: f64,
}

/// Closed-form log evidence of a Zellner subset model.
///
/// With the improper `1/φ` and flat-intercept densities taken as exactly
/// `1/φ` and `1`:
///
/// ```text
/// log Z = -(n-1)/2 log 2π - ½ log n - p/2 log(1+g)
///         + lgamma((n-1)/2) - (n-1)/2 log(S/2)
/// S     = Syy - g/(1+g) · c' (Xc'Xc)^-1 c,    c = Xc'(y-ȳ)
/// ```
pub fn zellner_log_evidence(model: &ZellnerModel) -> Result<EvidenceEstimate> {
    let n = model.n() as f64;
    let p = model.p() as f64;
    let g = model.g();
    let s = zellner_residual(model)?;
    let half = 0.5 * (n - 1.0);
    let log_evidence =
        -half * LN_2PI - 0.5 * n.ln() - 0.5 * p * (1.0 + g).ln() + ln_gamma(half) - half * (0.5 * s).ln();
    Ok(EvidenceEstimate { log_evidence, method: EvidenceMethod::ClosedFormZellner, mc_samples: 0, std_error: 0.0 })
}

fn gram_solve(model: &ZellnerModel) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    let (syy, xty, gram) = model.sufficient_stats();
    let c = DVector::from_column_slice(xty);
    if model.p() == 0 {
        return Ok((syy, c, gram.clone()));
    }
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Decomposition { what: format!("X'X of subset `{}`", model.name()) })?;
    let b = chol.solve(&c);
    Ok((syy, b, chol.l()))
}

fn zellner_residual(model: &ZellnerModel) -> Result<f64> {
    let (syy, b, _) = gram_solve(model)?;
    let (_, xty, _) = model.sufficient_stats();
    let explained: f64 = b.iter().zip(xty).map(|(b, c)| b * c).sum();
    let g = model.g();
    Ok(syy - g / (1.0 + g) * explained)
}

/// Exact posterior of a Zellner subset model, for drawing reference
/// samples of `(intercept, slopes, precision)`.
#[derive(Debug, Clone)]
pub struct ZellnerPosterior {
    n: f64,
    y_mean: f64,
    x_mean: Vec<f64>,
    precision: Gamma<f64>,
    slope_mean: DVector<f64>,
    // lower Cholesky factor of Xc'Xc
    gram_chol: DMatrix<f64>,
    shrink: f64,
}

impl ZellnerPosterior {
    pub fn new(model: &ZellnerModel) -> Result<Self> {
        let n = model.n() as f64;
        let g = model.g();
        let s = zellner_residual(model)?;
        let (_, b, l) = gram_solve(model)?;
        let shrink = g / (1.0 + g);
        let precision = Gamma::new(0.5 * (n - 1.0), 2.0 / s).map_err(|e| Error::Domain(format!("posterior precision: {e}")))?;
        Ok(Self {
            n,
            y_mean: model.y_mean(),
            x_mean: model.x_mean(),
            precision,
            slope_mean: b * shrink,
            gram_chol: l,
            shrink,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let phi: f64 = rng.sample(self.precision);
        let p = self.slope_mean.len();
        let mut beta = self.slope_mean.clone();
        if p > 0 {
            // β ~ N(mean, shrink/φ · (L Lᵀ)^-1): solve Lᵀ u = z
            let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let u = self.gram_chol.transpose().solve_upper_triangular(&z).unwrap_or_else(|| DVector::zeros(p));
            beta += u * (self.shrink / phi).sqrt();
        }
        let z0: f64 = rng.sample(StandardNormal);
        let shift: f64 = self.x_mean.iter().zip(beta.iter()).map(|(m, b)| m * b).sum();
        let intercept = self.y_mean - shift + z0 / (self.n * phi).sqrt();
        std::iter::once(intercept).chain(beta.iter().copied()).chain(std::iter::once(phi)).collect()
    }
}

const MC_CHUNK: usize = 4096;

/// Plain Monte Carlo log evidence: `log mean_i p(d | θ_i)` over `draws`
/// prior draws, accumulated in the log domain. Draws whose likelihood
/// cannot be evaluated count as zero likelihood.
///
/// The result depends only on `seed` and `draws`, not on the thread count.
pub fn mc_log_evidence(model: &dyn Model, draws: usize, seed: u64) -> Result<EvidenceEstimate> {
    if !model.prior_is_proper() {
        return Err(Error::Config(format!("model `{}` has an improper prior; MC evidence is undefined", model.name())));
    }
    if draws == 0 {
        return Err(Error::Config("at least one prior draw is required".into()));
    }
    let chunks = draws.div_ceil(MC_CHUNK);
    let parts: Vec<Result<LogMoments>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, c, 0));
            let len = MC_CHUNK.min(draws - c * MC_CHUNK);
            let mut acc = LogMoments::default();
            for _ in 0..len {
                let theta = model.sample_prior(&mut rng).ok_or_else(|| Error::Config("prior cannot be sampled".into()))?;
                let ll = match value(|t| model.log_likelihood(t), &theta) {
                    Ok(v) => v,
                    Err(e) if e.is_numerical() || matches!(e, Error::Domain(_)) => f64::NEG_INFINITY,
                    Err(e) => return Err(e),
                };
                acc.push(ll);
            }
            Ok(acc)
        })
        .collect();
    let mut total = LogMoments::default();
    for part in parts {
        total.merge(&part?);
    }
    total.estimate(draws)
}

/// Running `max`, `Σ exp(l - max)` and `Σ exp(2(l - max))`.
#[derive(Debug, Clone, Copy)]
struct LogMoments {
    max: f64,
    s1: f64,
    s2: f64,
}

impl Default for LogMoments {
    fn default() -> Self {
        Self { max: f64::NEG_INFINITY, s1: 0.0, s2: 0.0 }
    }
}

impl LogMoments {
    fn push(&mut self, l: f64) {
        if l == f64::NEG_INFINITY {
            return;
        }
        if l > self.max {
            let r = (self.max - l).exp();
            self.s1 *= r;
            self.s2 *= r * r;
            self.max = l;
        }
        let w = (l - self.max).exp();
        self.s1 += w;
        self.s2 += w * w;
    }

    fn merge(&mut self, other: &LogMoments) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if other.max > self.max {
            let r = (self.max - other.max).exp();
            self.s1 = self.s1 * r + other.s1;
            self.s2 = self.s2 * r * r + other.s2;
            self.max = other.max;
        } else {
            let r = (other.max - self.max).exp();
            self.s1 += other.s1 * r;
            self.s2 += other.s2 * r * r;
        }
    }

    fn estimate(&self, n: usize) -> Result<EvidenceEstimate> {
        if self.max == f64::NEG_INFINITY {
            return Err(Error::NonFinite { op: "every prior draw has zero likelihood".into(), node: 0 });
        }
        let nf = n as f64;
        let mean = self.s1 / nf;
        let var = (self.s2 / nf - mean * mean).max(0.0) * nf / (nf - 1.0).max(1.0);
        // delta method: se(log m) = se(m) / m
        let std_error = (var / nf).sqrt() / mean;
        Ok(EvidenceEstimate {
            log_evidence: self.max + mean.ln(),
            method: EvidenceMethod::MonteCarlo,
            mc_samples: n,
            std_error,
        })
    }
}

/// `p(M | d) ∝ p(d | M) p(M)` from evidence estimates.
pub fn evidence_to_posterior(estimates: &[EvidenceEstimate], prior_weights: &[f64]) -> Result<Vec<f64>> {
    if estimates.len() != prior_weights.len() {
        return Err(Error::Dimension { expected: estimates.len(), got: prior_weights.len() });
    }
    if let Some(first) = estimates.first() {
        if estimates.iter().any(|e| e.method != first.method) {
            return Err(Error::Config(
                "closed-form Zellner evidences carry an arbitrary shared constant and cannot be mixed with proper estimates"
                    .into(),
            ));
        }
    }
    let logits: Vec<f64> = estimates.iter().zip(prior_weights).map(|(e, w)| e.log_evidence + w.ln()).collect();
    softmax(&logits)
}
