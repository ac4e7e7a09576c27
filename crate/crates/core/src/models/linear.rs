use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use super::{pick, Model, Predictive, RegressionData, LN_2PI};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::family::ParamLayout;

/// Linear regression `y = β0 + Σ βj xj + ε`, `ε ~ N(0, 1/φ)`, with Zellner's
/// g-prior on the slopes:
///
/// ```text
/// φ ∝ 1/φ,   β0 ∝ 1,   β | φ ~ N(0, g (Xc'Xc)^-1 / φ)
/// ```
///
/// where `Xc` is the design with column means removed.
///
/// The two improper blocks contribute `-log φ` and `0` to the log-prior. They
/// are shared by every subset model built over the same data, so the
/// unknown normalizing constant cancels in evidence ratios.
///
/// Parameter order: `intercept`, one slope per included predictor,
/// `precision`.
#[derive(Debug, Clone)]
pub struct ZellnerModel {
    name: String,
    predictors: Vec<String>,
    subset: Vec<usize>,
    layout: ParamLayout,
    g: f64,
    n: usize,
    y_mean: f64,
    // Σ (y - ȳ)²
    syy: f64,
    // X'(y - ȳ), X'1 and X'X for the included columns
    xty: Vec<f64>,
    xt1: Vec<f64>,
    xtx: DMatrix<f64>,
    // Xc'Xc
    gram: DMatrix<f64>,
    logdet_gram: f64,
}

impl ZellnerModel {
    /// Subset model over `data` with `g = n`.
    pub fn new(data: &RegressionData, subset: &[usize]) -> Result<Self> {
        Self::with_g(data, subset, data.n() as f64)
    }

    pub fn with_g(data: &RegressionData, subset: &[usize], g: f64) -> Result<Self> {
        let n = data.n();
        let p = subset.len();
        let name = data.subset_name(subset);
        if n <= p + 1 {
            return Err(Error::Config(format!("model `{name}` needs more than {} rows, got {n}", p + 1)));
        }
        if subset.iter().any(|&j| j >= data.predictor_names.len()) {
            return Err(Error::Lookup(format!("predictor index out of range in `{name}`")));
        }
        let x = data.select(subset);
        let y_mean = data.y.iter().sum::<f64>() / n as f64;
        let syy = data.y.iter().map(|y| (y - y_mean).powi(2)).sum();
        let mut xty = vec![0.0; p];
        let mut xt1 = vec![0.0; p];
        let mut xtx: DMatrix<f64> = DMatrix::zeros(p, p);
        for (row, y) in x.iter().zip(&data.y) {
            for a in 0..p {
                xty[a] += row[a] * (y - y_mean);
                xt1[a] += row[a];
                for b in 0..p {
                    xtx[(a, b)] += row[a] * row[b];
                }
            }
        }
        let gram = DMatrix::from_fn(p, p, |a, b| xtx[(a, b)] - xt1[a] * xt1[b] / n as f64);
        let logdet_gram = if p == 0 {
            0.0
        } else {
            let singular = || Error::Decomposition { what: format!("X'X of subset `{name}`") };
            let chol = gram.clone().cholesky().ok_or_else(singular)?;
            let l = chol.l();
            // exact collinearity survives Cholesky as a rounding-sized pivot
            if (0..p).any(|i| l[(i, i)].powi(2) <= 1e-10 * xtx[(i, i)]) {
                return Err(singular());
            }
            2.0 * l.diagonal().iter().map(|d: &f64| d.ln()).sum::<f64>()
        };
        let predictors: Vec<String> = subset.iter().map(|&j| data.predictor_names[j].clone()).collect();
        let mut layout = ParamLayout::new().real("intercept");
        for name in &predictors {
            layout = layout.real(name.clone());
        }
        layout = layout.positive("precision");
        Ok(Self {
            name,
            predictors,
            subset: subset.to_vec(),
            layout,
            g,
            n,
            y_mean,
            syy,
            xty,
            xt1,
            xtx,
            gram,
            logdet_gram,
        })
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Indices of the included predictors among the ensemble's candidates.
    pub fn subset(&self) -> &[usize] {
        &self.subset
    }

    /// Number of included slopes.
    pub fn p(&self) -> usize {
        self.subset.len()
    }

    /// `(Σ(y-ȳ)², Xc'(y-ȳ), Xc'Xc)`.
    pub fn sufficient_stats(&self) -> (f64, &[f64], &DMatrix<f64>) {
        (self.syy, &self.xty, &self.gram)
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    /// Column means of the included predictors.
    pub fn x_mean(&self) -> Vec<f64> {
        self.xt1.iter().map(|s| s / self.n as f64).collect()
    }

    /// Ordinary least-squares fit of the slopes on centered data and the
    /// resulting R².
    pub fn r_squared(&self) -> Result<f64> {
        if self.p() == 0 {
            return Ok(0.0);
        }
        let chol = self
            .gram
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Decomposition { what: format!("X'X of subset `{}`", self.name) })?;
        let b = chol.solve(&DVector::from_column_slice(&self.xty));
        let explained: f64 = b.iter().zip(&self.xty).map(|(b, c)| b * c).sum();
        Ok(explained / self.syy)
    }

    // βᵀ M β on the tape
    fn quad<'t>(beta: &[Var<'t>], m: &DMatrix<f64>) -> Var<'t> {
        let tape = beta[0].tape();
        let p = beta.len();
        let mut terms = Vec::with_capacity(p * (p + 1) / 2);
        for a in 0..p {
            terms.push(beta[a].square() * m[(a, a)]);
            for b in a + 1..p {
                terms.push(beta[a] * beta[b] * (2.0 * m[(a, b)]));
            }
        }
        tape.sum(&terms)
    }
}

impl Model for ZellnerModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn log_likelihood<'t>(&self, theta: &[Var<'t>]) -> Result<Var<'t>> {
        self.check_dim(theta.len())?;
        let p = self.p();
        let tape = theta[0].tape();
        let phi = theta[p + 1];
        let n = self.n as f64;
        // residual sum of squares with c = β0 - ȳ:
        // Syy - 2βᵀX'(y-ȳ) + n c² + 2c βᵀX'1 + βᵀX'Xβ
        let c = theta[0] - self.y_mean;
        let mut rss = c.square() * n + self.syy;
        if p > 0 {
            let beta = &theta[1..=p];
            let cross = tape.linear_combination(0.0, &self.xty, beta);
            let lin1 = tape.linear_combination(0.0, &self.xt1, beta);
            rss = rss - cross * 2.0 + c * lin1 * 2.0 + Self::quad(beta, &self.xtx);
        }
        Ok(phi.ln() * (0.5 * n) - phi * rss * 0.5 - 0.5 * n * LN_2PI)
    }

    fn log_prior<'t>(&self, theta: &[Var<'t>]) -> Result<Var<'t>> {
        self.check_dim(theta.len())?;
        let p = self.p();
        let phi = theta[p + 1];
        let improper = -phi.ln();
        if p == 0 {
            return Ok(improper);
        }
        let pf = p as f64;
        let beta = &theta[1..=p];
        // log N(β; 0, g (Xc'Xc)^-1 / φ)
        let slab = phi.ln() * (0.5 * pf) - phi * Self::quad(beta, &self.gram) / (2.0 * self.g)
            + (-0.5 * pf * LN_2PI - 0.5 * pf * self.g.ln() + 0.5 * self.logdet_gram);
        Ok(improper + slab)
    }

    fn predictive(&self, theta: &[f64], x_new: &[Vec<f64>]) -> Result<Vec<Predictive>> {
        self.check_dim(theta.len())?;
        let p = self.p();
        let phi = theta[p + 1];
        if phi <= 0.0 {
            return Err(Error::Domain(format!("precision must be positive, got {phi}")));
        }
        x_new
            .iter()
            .map(|row| {
                if self.subset.iter().any(|&j| j >= row.len()) {
                    return Err(Error::Dimension { expected: self.subset.iter().max().unwrap() + 1, got: row.len() });
                }
                let x = pick(row, &self.subset);
                let mean = theta[0] + x.iter().zip(&theta[1..=p]).map(|(a, b)| a * b).sum::<f64>();
                Ok(Predictive::Normal { mean, latent_var: 0.0, noise_var: 1.0 / phi })
            })
            .collect()
    }

    fn prior_is_proper(&self) -> bool {
        false
    }

    fn sample_prior(&self, _rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        None
    }

    fn predictors(&self) -> &[String] {
        &self.predictors
    }
}
