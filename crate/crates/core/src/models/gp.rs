use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::{lognormal_log_density, normal_log_density, Model, Predictive, LN_2PI};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::family::ParamLayout;

/// Squared-exponential covariance on 2-D inputs.
pub fn gp_kernel(a: [f64; 2], b: [f64; 2], eta: f64, nu1: f64, nu2: f64) -> f64 {
    let d1 = a[0] - b[0];
    let d2 = a[1] - b[1];
    eta * eta * (-(d1 * d1) / (2.0 * nu1 * nu1) - (d2 * d2) / (2.0 * nu2 * nu2)).exp()
}

/// Diagonal jitter `relative · η²`, escalated by factors of ten up to
/// `decades` times when the factorization fails.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    pub relative: f64,
    pub decades: u32,
}

impl Default for Jitter {
    fn default() -> Self {
        Self { relative: 1e-6, decades: 3 }
    }
}

impl Jitter {
    pub fn none() -> Self {
        Self { relative: 0.0, decades: 0 }
    }

    fn levels(&self) -> impl Iterator<Item = f64> + '_ {
        let escalations = if self.relative == 0.0 { 0 } else { self.decades };
        (0..=escalations).map(move |e| self.relative * 10f64.powi(e as i32))
    }
}

/// Prior settings: `β ~ N(0, beta_sd²)`; `η, ν1, ν2, σ` log-normal with the
/// given (log-mean, log-sd) pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpPriors {
    pub beta_sd: f64,
    pub eta: (f64, f64),
    pub nu: (f64, f64),
    pub sigma: (f64, f64),
}

impl Default for GpPriors {
    fn default() -> Self {
        Self { beta_sd: 0.5, eta: (0.0, 1.0), nu: (1.0, 1.0), sigma: (-1.0, 1.0) }
    }
}

/// `y_i = m + β + f(x_i) + σ ε_i` with `f ~ GP(0, k)` and `k` the
/// squared-exponential kernel; `m` is a fixed mean offset that distinguishes
/// otherwise identical candidate models. `f` is marginalized analytically.
///
/// Parameter order: `beta`, `eta`, `nu1`, `nu2`, `sigma`.
#[derive(Debug, Clone)]
pub struct GpModel {
    name: String,
    x: Vec<[f64; 2]>,
    y: Vec<f64>,
    mean_offset: f64,
    priors: GpPriors,
    jitter: Jitter,
    layout: ParamLayout,
}

struct Factor {
    chol: Cholesky<f64, Dyn>,
    kernel: DMatrix<f64>,
    jitter: f64,
}

impl GpModel {
    pub fn new(name: impl Into<String>, x: Vec<[f64; 2]>, y: Vec<f64>, mean_offset: f64) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Dimension { expected: x.len(), got: y.len() });
        }
        let layout =
            ParamLayout::new().real("beta").positive("eta").positive("nu1").positive("nu2").positive("sigma");
        Ok(Self {
            name: name.into(),
            x,
            y,
            mean_offset,
            priors: GpPriors::default(),
            jitter: Jitter::default(),
            layout,
        })
    }

    pub fn with_priors(mut self, priors: GpPriors) -> Self {
        self.priors = priors;
        self
    }

    pub fn with_jitter(mut self, jitter: Jitter) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn mean_offset(&self) -> f64 {
        self.mean_offset
    }

    pub fn priors(&self) -> &GpPriors {
        &self.priors
    }

    pub fn inputs(&self) -> &[[f64; 2]] {
        &self.x
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    fn check_hyper(theta: &[f64]) -> Result<()> {
        if theta[1..4].iter().any(|v| !(*v > 0.0)) || !(theta[4] >= 0.0) {
            return Err(Error::Domain(format!("GP scale parameters out of range: {:?}", &theta[1..5])));
        }
        Ok(())
    }

    fn factor(&self, eta: f64, nu1: f64, nu2: f64, sigma: f64) -> Result<Factor> {
        let n = self.x.len();
        let kernel = DMatrix::from_fn(n, n, |i, j| gp_kernel(self.x[i], self.x[j], eta, nu1, nu2));
        let mut last = kernel.clone();
        for rel in self.jitter.levels() {
            let jitter = rel * eta * eta;
            let mut c = kernel.clone();
            for i in 0..n {
                c[(i, i)] += sigma * sigma + jitter;
            }
            let max_diag = (0..n).map(|i| c[(i, i)]).fold(0.0, f64::max);
            if let Some(chol) = c.clone().cholesky() {
                let floor = 1e-14 * max_diag;
                if chol.l_dirty().diagonal().iter().all(|d| d * d > floor && d.is_finite()) {
                    return Ok(Factor { chol, kernel, jitter });
                }
            }
            last = c;
        }
        let min_eigenvalue = SymmetricEigen::new(last).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        Err(Error::Conditioning { min_eigenvalue })
    }

    /// Log marginal likelihood `log N(y; (m+β)1, K + σ²I)` and, optionally,
    /// its gradient with respect to `(β, η, ν1, ν2, σ)`.
    pub fn log_marginal(&self, theta: &[f64], with_grad: bool) -> Result<(f64, [f64; 5])> {
        self.check_dim(theta.len())?;
        Self::check_hyper(theta)?;
        let (beta, eta, nu1, nu2, sigma) = (theta[0], theta[1], theta[2], theta[3], theta[4]);
        let n = self.x.len();
        if n == 0 {
            return Ok((0.0, [0.0; 5]));
        }
        let f = self.factor(eta, nu1, nu2, sigma)?;
        let r = DVector::from_iterator(n, self.y.iter().map(|y| y - self.mean_offset - beta));
        let alpha = f.chol.solve(&r);
        let half_logdet: f64 = f.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        let value = -0.5 * r.dot(&alpha) - half_logdet - 0.5 * n as f64 * LN_2PI;
        if !with_grad {
            return Ok((value, [0.0; 5]));
        }
        // ∂L/∂θ = ½ tr((ααᵀ - C⁻¹) ∂C/∂θ)
        let cinv = spd_inverse(f.chol.l_dirty());
        let mut g = [0.0; 5];
        g[0] = alpha.sum();
        let (nu1_3, nu2_3) = (nu1.powi(3), nu2.powi(3));
        for j in 0..n {
            for i in 0..n {
                let w = alpha[i] * alpha[j] - cinv[(i, j)];
                let k = f.kernel[(i, j)];
                let d1 = self.x[i][0] - self.x[j][0];
                let d2 = self.x[i][1] - self.x[j][1];
                g[1] += w * 2.0 * k / eta;
                g[2] += w * k * d1 * d1 / nu1_3;
                g[3] += w * k * d2 * d2 / nu2_3;
            }
            let w = alpha[j] * alpha[j] - cinv[(j, j)];
            g[1] += w * 2.0 * f.jitter / eta;
            g[4] += w * 2.0 * sigma;
        }
        for gi in g.iter_mut().skip(1) {
            *gi *= 0.5;
        }
        Ok((value, g))
    }
}

/// `C⁻¹ = WᵀW` with `W = L⁻¹`, from the lower Cholesky factor `L` (only its
/// lower triangle is read). Both steps skip the structural zeros.
fn spd_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let ls = l.as_slice();
    let mut w = vec![0.0; n * n];
    for j in 0..n {
        // forward substitution L w = e_j, column-oriented
        let wc = &mut w[j * n..(j + 1) * n];
        wc[j] = 1.0;
        for k in j..n {
            let lk = &ls[k * n + k..(k + 1) * n];
            let v = wc[k] / lk[0];
            wc[k] = v;
            for (dst, lik) in wc[k + 1..].iter_mut().zip(&lk[1..]) {
                *dst -= v * lik;
            }
        }
    }
    let mut inv = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let b = &w[j * n + j..(j + 1) * n];
        for i in 0..=j {
            let a = &w[i * n + j..(i + 1) * n];
            let v: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            inv[(i, j)] = v;
            inv[(j, i)] = v;
        }
    }
    inv
}

impl Model for GpModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn log_likelihood<'t>(&self, theta: &[Var<'t>]) -> Result<Var<'t>> {
        self.check_dim(theta.len())?;
        let tape = theta[0].tape();
        let values: Vec<f64> = theta.iter().map(Var::value).collect();
        let (v, g) = self.log_marginal(&values, tape.is_recording())?;
        Ok(tape.custom("gp_log_marginal", theta, v, &g))
    }

    fn log_prior<'t>(&self, theta: &[Var<'t>]) -> Result<Var<'t>> {
        self.check_dim(theta.len())?;
        let p = &self.priors;
        let terms = [
            normal_log_density(theta[0], 0.0, p.beta_sd),
            lognormal_log_density(theta[1], p.eta.0, p.eta.1),
            lognormal_log_density(theta[2], p.nu.0, p.nu.1),
            lognormal_log_density(theta[3], p.nu.0, p.nu.1),
            lognormal_log_density(theta[4], p.sigma.0, p.sigma.1),
        ];
        Ok(theta[0].tape().sum(&terms))
    }

    fn predictive(&self, theta: &[f64], x_new: &[Vec<f64>]) -> Result<Vec<Predictive>> {
        self.check_dim(theta.len())?;
        Self::check_hyper(theta)?;
        let (beta, eta, nu1, nu2, sigma) = (theta[0], theta[1], theta[2], theta[3], theta[4]);
        let mean0 = self.mean_offset + beta;
        if self.x.is_empty() {
            return Ok(x_new
                .iter()
                .map(|_| Predictive::Normal { mean: mean0, latent_var: eta * eta, noise_var: sigma * sigma })
                .collect());
        }
        let f = self.factor(eta, nu1, nu2, sigma)?;
        let n = self.x.len();
        let r = DVector::from_iterator(n, self.y.iter().map(|y| y - mean0));
        let alpha = f.chol.solve(&r);
        let l = f.chol.l();
        x_new
            .iter()
            .map(|row| {
                if row.len() != 2 {
                    return Err(Error::Dimension { expected: 2, got: row.len() });
                }
                let xs = [row[0], row[1]];
                let kstar = DVector::from_iterator(n, self.x.iter().map(|&xi| gp_kernel(xi, xs, eta, nu1, nu2)));
                let v = l.solve_lower_triangular(&kstar).ok_or_else(|| Error::Decomposition {
                    what: "GP triangular solve".into(),
                })?;
                Ok(Predictive::Normal {
                    mean: mean0 + kstar.dot(&alpha),
                    latent_var: (eta * eta - v.dot(&v)).max(0.0),
                    noise_var: sigma * sigma,
                })
            })
            .collect()
    }

    fn prior_is_proper(&self) -> bool {
        true
    }

    fn sample_prior(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        let p = &self.priors;
        let mut z = || -> f64 { rng.sample(StandardNormal) };
        let beta = p.beta_sd * z();
        let eta = (p.eta.0 + p.eta.1 * z()).exp();
        let nu1 = (p.nu.0 + p.nu.1 * z()).exp();
        let nu2 = (p.nu.0 + p.nu.1 * z()).exp();
        let sigma = (p.sigma.0 + p.sigma.1 * z()).exp();
        Some(vec![beta, eta, nu1, nu2, sigma])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;

    #[test]
    fn single_point_is_scalar_gaussian() {
        let m = GpModel::new("gp", vec![[0.0, 0.0]], vec![0.0], 0.0).unwrap().with_jitter(Jitter::none());
        let (eta, sigma) = (1.3, 0.4);
        let (v, _) = m.log_marginal(&[0.0, eta, 2.0, 2.0, sigma], false).unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI * (eta * eta + sigma * sigma)).ln();
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn duplicated_input_needs_jitter() {
        let x = vec![[1.0, 1.0], [1.0, 1.0], [3.0, 0.0]];
        let y = vec![0.2, 0.2, -0.1];
        let theta = [0.0, 1.0, 1.5, 1.5, 0.0];
        let bare = GpModel::new("gp", x.clone(), y.clone(), 0.0).unwrap().with_jitter(Jitter::none());
        match bare.log_marginal(&theta, false) {
            Err(Error::Conditioning { min_eigenvalue }) => assert!(min_eigenvalue.abs() < 1e-10),
            other => panic!("expected conditioning error, got {other:?}"),
        }
        let jittered = GpModel::new("gp", x, y, 0.0).unwrap();
        assert!(jittered.log_marginal(&theta, true).unwrap().0.is_finite());
    }

    #[test]
    fn kernel_bounded_by_signal_variance() {
        let eta = 1.7;
        assert_eq!(gp_kernel([2.0, 3.0], [2.0, 3.0], eta, 1.0, 2.0), eta * eta);
        assert!(gp_kernel([2.0, 3.0], [2.0, 3.5], eta, 1.0, 2.0) < eta * eta);
    }

    #[test]
    fn interpolates_training_point_without_noise() {
        let x = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 1.0]];
        let y = vec![0.5, -0.3, 1.2, 0.0];
        let m = GpModel::new("gp", x, y, 0.0).unwrap();
        let pred = m.predictive(&[0.1, 1.0, 1.0, 1.0, 0.0], &[vec![1.0, 0.0]]).unwrap();
        match pred[0] {
            Predictive::Normal { mean, latent_var, noise_var } => {
                assert!((mean + 0.3).abs() < 1e-4, "{mean}");
                assert!(latent_var < 1e-4);
                assert_eq!(noise_var, 0.0);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn fused_gradient_matches_finite_differences() {
        let x: Vec<[f64; 2]> = (0..10).map(|i| [(i % 4) as f64, (i / 4) as f64 * 1.5]).collect();
        let y: Vec<f64> = (0..10).map(|i| ((i as f64) * 0.7).sin()).collect();
        let m = GpModel::new("gp", x, y, 0.3).unwrap();
        let d = finite_diff_check(|t| m.log_likelihood(t), &[0.2, 1.1, 1.4, 0.9, 0.35], 1e-5).unwrap();
        assert!(d < 1e-4, "{d}");
    }
}
