use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::{normal_log_density, Model, Predictive, LN_2PI};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::family::ParamLayout;

/// `y_i ~ N(θ, σ²)` with known `σ` and prior `θ ~ N(m0, s0²)`.
///
/// Fully conjugate: the posterior is normal and the evidence is available in
/// closed form, which makes it the reference problem for checking the
/// variational machinery.
#[derive(Debug, Clone)]
pub struct NormalMeanModel {
    name: String,
    y: Vec<f64>,
    sigma: f64,
    prior_mean: f64,
    prior_sd: f64,
    layout: ParamLayout,
}

impl NormalMeanModel {
    pub fn new(y: Vec<f64>, sigma: f64, prior_mean: f64, prior_sd: f64) -> Result<Self> {
        if !(sigma > 0.0 && prior_sd > 0.0) {
            return Err(Error::Config("noise and prior standard deviations must be positive".into()));
        }
        Ok(Self {
            name: "normal-mean".into(),
            y,
            sigma,
            prior_mean,
            prior_sd,
            layout: ParamLayout::new().real("theta"),
        })
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Exact posterior `(mean, sd)` of θ.
    pub fn posterior(&self) -> (f64, f64) {
        let n = self.y.len() as f64;
        let prec = 1.0 / self.prior_sd.powi(2) + n / self.sigma.powi(2);
        let mean = (self.prior_mean / self.prior_sd.powi(2) + self.y.iter().sum::<f64>() / self.sigma.powi(2)) / prec;
        (mean, prec.sqrt().recip())
    }

    /// Exact log evidence `log p(y)`, from `p(y) = p(y|θ) p(θ) / p(θ|y)`
    /// evaluated at the posterior mean.
    pub fn log_evidence(&self) -> f64 {
        let (m, s) = self.posterior();
        let loglik: f64 =
            self.y.iter().map(|y| -0.5 * LN_2PI - self.sigma.ln() - (y - m).powi(2) / (2.0 * self.sigma.powi(2))).sum();
        let logprior = -0.5 * LN_2PI - self.prior_sd.ln() - (m - self.prior_mean).powi(2) / (2.0 * self.prior_sd.powi(2));
        let logpost = -0.5 * LN_2PI - s.ln();
        loglik + logprior - logpost
    }

    /// Analytic ELBO of a normal `q = N(mu, sd²)`:
    /// `log p(y) - KL(q || posterior)`.
    pub fn analytic_elbo(&self, mu: f64, sd: f64) -> f64 {
        let (m, s) = self.posterior();
        let kl = (s / sd).ln() + (sd * sd + (mu - m).powi(2)) / (2.0 * s * s) - 0.5;
        self.log_evidence() - kl
    }
}

impl Model for NormalMeanModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn log_likelihood<'t>(&self, theta: &[Var<'t>]) -> Result<Var<'t>> {
        self.check_dim(theta.len())?;
        let tape = theta[0].tape();
        if self.y.is_empty() {
            return Ok(tape.constant(0.0));
        }
        let terms: Vec<Var<'t>> = self.y.iter().map(|&y| normal_log_density(theta[0], y, self.sigma)).collect();
        Ok(tape.sum(&terms))
    }

    fn log_prior<'t>(&self, theta: &[Var<'t>]) -> Result<Var<'t>> {
        self.check_dim(theta.len())?;
        Ok(normal_log_density(theta[0], self.prior_mean, self.prior_sd))
    }

    fn predictive(&self, theta: &[f64], x_new: &[Vec<f64>]) -> Result<Vec<Predictive>> {
        self.check_dim(theta.len())?;
        Ok(x_new
            .iter()
            .map(|_| Predictive::Normal { mean: theta[0], latent_var: 0.0, noise_var: self.sigma * self.sigma })
            .collect())
    }

    fn prior_is_proper(&self) -> bool {
        true
    }

    fn sample_prior(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        let z: f64 = rng.sample(StandardNormal);
        Some(vec![self.prior_mean + self.prior_sd * z])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elbo_at_posterior_equals_evidence() {
        let m = NormalMeanModel::new(vec![0.3, 1.2, -0.4, 0.9], 0.8, 0.0, 2.0).unwrap();
        let (mu, sd) = m.posterior();
        assert!((m.analytic_elbo(mu, sd) - m.log_evidence()).abs() < 1e-12);
        assert!(m.analytic_elbo(mu + 0.1, sd) < m.log_evidence());
    }

    #[test]
    fn evidence_of_empty_data_is_zero() {
        let m = NormalMeanModel::new(vec![], 1.0, 0.5, 1.5).unwrap();
        assert!(m.log_evidence().abs() < 1e-12);
    }
}
