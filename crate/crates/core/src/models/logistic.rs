use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::{normal_log_density, pick, Model, Predictive, RegressionData};
use crate::autodiff::{sigmoid, Var};
use crate::error::{Error, Result};
use crate::family::ParamLayout;

/// Default prior standard deviation of every logistic coefficient
/// (variance 10).
pub const DEFAULT_PRIOR_SD: f64 = 3.162_277_660_168_379_5;

/// Logistic regression with logit link and independent `N(0, sd²)` priors on
/// the intercept and every included slope.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    name: String,
    predictors: Vec<String>,
    subset: Vec<usize>,
    layout: ParamLayout,
    // [1, x_subset...] per row
    design: Vec<Vec<f64>>,
    y: Vec<bool>,
    prior_sd: f64,
}

impl LogisticModel {
    pub fn new(data: &RegressionData, subset: &[usize], prior_sd: f64) -> Result<Self> {
        if !(prior_sd > 0.0) {
            return Err(Error::Config(format!("prior sd must be positive, got {prior_sd}")));
        }
        if subset.iter().any(|&j| j >= data.predictor_names.len()) {
            return Err(Error::Lookup("predictor index out of range".into()));
        }
        let y = data
            .y
            .iter()
            .enumerate()
            .map(|(i, &v)| match v {
                v if v == 0.0 => Ok(false),
                v if v == 1.0 => Ok(true),
                v => Err(Error::Domain(format!("response at row {i} is {v}, expected 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let design = data
            .select(subset)
            .into_iter()
            .map(|r| std::iter::once(1.0).chain(r).collect())
            .collect();
        let predictors: Vec<String> = subset.iter().map(|&j| data.predictor_names[j].clone()).collect();
        let mut layout = ParamLayout::new().real("intercept");
        for p in &predictors {
            layout = layout.real(p.clone());
        }
        Ok(Self { name: data.subset_name(subset), predictors, subset: subset.to_vec(), layout, design, y, prior_sd })
    }

    pub fn prior_sd(&self) -> f64 {
        self.prior_sd
    }

    pub fn subset(&self) -> &[usize] {
        &self.subset
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
}

impl Model for LogisticModel {
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
        // y=1: log σ(η) = -softplus(-η);  y=0: log(1-σ(η)) = -softplus(η)
        let terms: Vec<Var<'t>> = self
            .design
            .iter()
            .zip(&self.y)
            .map(|(row, &y)| {
                let eta = tape.linear_combination(0.0, row, theta);
                if y {
                    (-eta).softplus()
                } else {
                    eta.softplus()
                }
            })
            .collect();
        Ok(-tape.sum(&terms))
    }

    fn log_prior<'t>(&self, theta: &[Var<'t>]) -> Result<Var<'t>> {
        self.check_dim(theta.len())?;
        let terms: Vec<Var<'t>> = theta.iter().map(|&b| normal_log_density(b, 0.0, self.prior_sd)).collect();
        Ok(theta[0].tape().sum(&terms))
    }

    fn predictive(&self, theta: &[f64], x_new: &[Vec<f64>]) -> Result<Vec<Predictive>> {
        self.check_dim(theta.len())?;
        x_new
            .iter()
            .map(|row| {
                if self.subset.iter().any(|&j| j >= row.len()) {
                    return Err(Error::Dimension { expected: self.subset.iter().max().unwrap() + 1, got: row.len() });
                }
                let x = pick(row, &self.subset);
                let eta = theta[0] + x.iter().zip(&theta[1..]).map(|(a, b)| a * b).sum::<f64>();
                Ok(Predictive::Bernoulli { p: sigmoid(eta) })
            })
            .collect()
    }

    fn prior_is_proper(&self) -> bool {
        true
    }

    fn sample_prior(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        Some(
            (0..self.layout.len())
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    z * self.prior_sd
                })
                .collect(),
        )
    }

    fn predictors(&self) -> &[String] {
        &self.predictors
    }
}
