//! Concrete models: log-likelihood, log-prior, parameter layout and
//! posterior-predictive kernel for each candidate model of an ensemble.

mod gp;
mod linear;
mod logistic;
mod normal_mean;

pub use gp::{gp_kernel, GpModel, GpPriors, Jitter};
pub use linear::ZellnerModel;
pub use logistic::{LogisticModel, DEFAULT_PRIOR_SD};
pub use normal_mean::NormalMeanModel;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::family::ParamLayout;

/// Distribution parameters of the posterior-predictive kernel at one input,
/// given a fixed parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Predictive {
    /// Latent mean with latent variance, plus observation-noise variance.
    Normal { mean: f64, latent_var: f64, noise_var: f64 },
    /// Bernoulli response with success probability `p`.
    Bernoulli { p: f64 },
}

impl Predictive {
    pub fn mean(&self) -> f64 {
        match *self {
            Predictive::Normal { mean, .. } => mean,
            Predictive::Bernoulli { p } => p,
        }
    }

    /// One draw. Without `noise` the latent quantity is drawn (the
    /// regression function, or the success probability for Bernoulli).
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, noise: bool) -> f64 {
        match *self {
            Predictive::Normal { mean, latent_var, noise_var } => {
                let var = latent_var.max(0.0) + if noise { noise_var } else { 0.0 };
                if var == 0.0 {
                    mean
                } else {
                    let z: f64 = rng.sample(StandardNormal);
                    mean + var.sqrt() * z
                }
            }
            Predictive::Bernoulli { p } => {
                if noise {
                    f64::from(u8::from(rng.random::<f64>() < p))
                } else {
                    p
                }
            }
        }
    }
}

/// A candidate model `M` of an ensemble.
///
/// Log-densities are built on the caller's tape so that gradients come
/// from one reverse sweep. Priors may be improper only when every model of
/// the ensemble shares the same improper blocks.
pub trait Model: Send + Sync {
    fn name(&self) -> &str;

    fn layout(&self) -> &ParamLayout;

    fn log_likelihood<'t>(&self, theta: &[Var<'t>]) -> Result<Var<'t>>;

    fn log_prior<'t>(&self, theta: &[Var<'t>]) -> Result<Var<'t>>;

    fn log_joint<'t>(&self, theta: &[Var<'t>]) -> Result<Var<'t>> {
        self.check_dim(theta.len())?;
        Ok(self.log_likelihood(theta)? + self.log_prior(theta)?)
    }

    /// Predictive kernel parameters at each row of `x_new`.
    fn predictive(&self, theta: &[f64], x_new: &[Vec<f64>]) -> Result<Vec<Predictive>>;

    fn prior_is_proper(&self) -> bool;

    /// One draw from the prior; `None` if the prior is improper.
    fn sample_prior(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>>;

    /// Names of the predictors the model includes (empty for non-regression
    /// models).
    fn predictors(&self) -> &[String] {
        &[]
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        let expected = self.layout().len();
        if len != expected {
            return Err(Error::Dimension { expected, got: len });
        }
        Ok(())
    }
}

/// One draw from `model`'s predictive kernel at each row of `x_new`.
pub fn predictive_draw<R: Rng + ?Sized>(
    model: &dyn Model,
    theta: &[f64],
    x_new: &[Vec<f64>],
    noise: bool,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(model.predictive(theta, x_new)?.iter().map(|p| p.draw(rng, noise)).collect())
}

/// Design matrix with named candidate predictors and a response, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub predictor_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl RegressionData {
    pub fn new(predictor_names: Vec<String>, rows: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        if rows.len() != y.len() {
            return Err(Error::Dimension { expected: rows.len(), got: y.len() });
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != predictor_names.len()) {
            return Err(Error::Dimension { expected: predictor_names.len(), got: bad.len() });
        }
        Ok(Self { predictor_names, rows, y })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Columns `subset` of every row.
    pub fn select(&self, subset: &[usize]) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| subset.iter().map(|&j| r[j]).collect()).collect()
    }

    pub fn subset_name(&self, subset: &[usize]) -> String {
        if subset.is_empty() {
            "intercept".to_owned()
        } else {
            subset.iter().map(|&j| self.predictor_names[j].as_str()).collect::<Vec<_>>().join("+")
        }
    }
}

/// Predictor indices included in subset number `mask` (bit `j` set means
/// predictor `j` is included).
pub fn subset_from_mask(mask: usize, k: usize) -> Vec<usize> {
    (0..k).filter(|j| mask >> j & 1 == 1).collect()
}

pub(crate) fn pick(row: &[f64], subset: &[usize]) -> Vec<f64> {
    subset.iter().map(|&j| row[j]).collect()
}

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log density of `N(mean, sd²)` at a tape variable.
pub(crate) fn normal_log_density<'t>(x: Var<'t>, mean: f64, sd: f64) -> Var<'t> {
    -((x - mean).square() / (2.0 * sd * sd)) - (0.5 * LN_2PI + sd.ln())
}

/// Log density of `LogNormal(mean, sd²)` at a positive tape variable.
pub(crate) fn lognormal_log_density<'t>(x: Var<'t>, mean: f64, sd: f64) -> Var<'t> {
    let l = x.ln();
    -((l - mean).square() / (2.0 * sd * sd)) - (0.5 * LN_2PI + sd.ln()) - l
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn masks_enumerate_subsets() {
        assert_eq!(subset_from_mask(0, 3), Vec::<usize>::new());
        assert_eq!(subset_from_mask(0b101, 3), vec![0, 2]);
        assert_eq!(subset_from_mask(0b111, 3), vec![0, 1, 2]);
    }

    #[test]
    fn degenerate_normal_predictive_returns_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Predictive::Normal { mean: 2.5, latent_var: 0.0, noise_var: 0.0 };
        assert_eq!(p.draw(&mut rng, true), 2.5);
        let b = Predictive::Bernoulli { p: 0.3 };
        assert_eq!(b.draw(&mut rng, false), 0.3);
        let d = b.draw(&mut rng, true);
        assert!(d == 0.0 || d == 1.0);
    }
}
