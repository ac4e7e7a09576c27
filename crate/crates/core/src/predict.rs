//! BMA mixture posterior, predictive draws and the summaries built on them.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evidence::ZellnerPosterior;
use crate::family::VariationalState;
use crate::models::Model;
use crate::vbma::substream_seed;

/// Anything that can produce posterior parameter draws for one model.
pub trait ParamSampler: Send + Sync {
    fn draw(&self, rng: &mut dyn RngCore) -> Vec<f64>;
}

impl ParamSampler for VariationalState {
    fn draw(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.sample(rng)
    }
}

impl ParamSampler for ZellnerPosterior {
    fn draw(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.sample(rng)
    }
}

/// `Σ_M q(M) p(θ | d, M)`, one component per model.
pub struct BmaPosterior<'a> {
    weights: Vec<f64>,
    models: Vec<&'a dyn Model>,
    samplers: Vec<&'a dyn ParamSampler>,
}

impl<'a> BmaPosterior<'a> {
    pub fn new(weights: Vec<f64>, models: Vec<&'a dyn Model>, samplers: Vec<&'a dyn ParamSampler>) -> Result<Self> {
        if models.len() != weights.len() {
            return Err(Error::Dimension { expected: weights.len(), got: models.len() });
        }
        if samplers.len() != weights.len() {
            return Err(Error::Dimension { expected: weights.len(), got: samplers.len() });
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Domain("model weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Domain(format!("model weights sum to {total}, expected 1")));
        }
        Ok(Self { weights, models, samplers })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn pick(&self) -> Result<WeightedIndex<f64>> {
        WeightedIndex::new(&self.weights).map_err(|e| Error::Domain(format!("model weights: {e}")))
    }
}

/// Predictive draws at a batch of inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDraws {
    /// `per_point[i][d]`: draw `d` at input `i`.
    pub per_point: Vec<Vec<f64>>,
    /// Model chosen for each draw.
    pub models: Vec<usize>,
}

const DRAW_CHUNK: usize = 256;

/// `n_draws` i.i.d. draws from the BMA predictive at every row of `x_new`.
///
/// Each draw picks `M ~ q`, then `θ ~ p(θ | d, M)`, then `y` at every input
/// from `p(y | θ, M)` (marginally per input). With `noise = false` the
/// draw is the predictive mean given `θ`.
pub fn bma_draw(
    posterior: &BmaPosterior<'_>,
    x_new: &[Vec<f64>],
    n_draws: usize,
    seed: u64,
    noise: bool,
) -> Result<PredictiveDraws> {
    if n_draws == 0 {
        return Err(Error::Config("at least one predictive draw is required".into()));
    }
    let pick = posterior.pick()?;
    let chunks = n_draws.div_ceil(DRAW_CHUNK);
    let parts: Vec<Result<Vec<(usize, Vec<f64>)>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, c, 1));
            let len = DRAW_CHUNK.min(n_draws - c * DRAW_CHUNK);
            (0..len)
                .map(|_| {
                    let m = pick.sample(&mut rng);
                    let theta = posterior.samplers[m].draw(&mut rng);
                    let preds = posterior.models[m].predictive(&theta, x_new)?;
                    Ok((m, preds.iter().map(|p| p.draw(&mut rng, noise)).collect()))
                })
                .collect()
        })
        .collect();
    let mut per_point = vec![Vec::with_capacity(n_draws); x_new.len()];
    let mut models = Vec::with_capacity(n_draws);
    for part in parts {
        for (m, ys) in part? {
            models.push(m);
            for (col, y) in per_point.iter_mut().zip(ys) {
                col.push(y);
            }
        }
    }
    Ok(PredictiveDraws { per_point, models })
}

/// Monte Carlo estimate of the BMA predictive mean at each input.
pub fn bma_predictive_mean(posterior: &BmaPosterior<'_>, x_new: &[Vec<f64>], n_draws: usize, seed: u64) -> Result<Vec<f64>> {
    let draws = bma_draw(posterior, x_new, n_draws, seed, false)?;
    Ok(draws.per_point.iter().map(|d| d.iter().sum::<f64>() / d.len() as f64).collect())
}

/// Bayes factor of model `i` against `j` recovered from posterior and
/// prior model weights: `(q_i / q_j) · (p_j / p_i)`.
///
/// Returns `+inf` when `q_j = 0 < q_i`; `0/0` is an error.
pub fn bayes_factor(q: &[f64], prior_weights: &[f64], i: usize, j: usize) -> Result<f64> {
    if q.len() != prior_weights.len() {
        return Err(Error::Dimension { expected: q.len(), got: prior_weights.len() });
    }
    if i >= q.len() || j >= q.len() {
        return Err(Error::Lookup(format!("model index out of range ({i}, {j}) for {} models", q.len())));
    }
    if !(prior_weights[i] > 0.0 && prior_weights[j] > 0.0) {
        return Err(Error::Domain("prior weights must be positive".into()));
    }
    if q[j] == 0.0 {
        if q[i] == 0.0 {
            return Err(Error::Domain(format!("Bayes factor of models {i} and {j} is 0/0")));
        }
        return Ok(f64::INFINITY);
    }
    Ok(q[i] / q[j] * (prior_weights[j] / prior_weights[i]))
}

/// Linear-interpolation quantile of sorted data (R type 7).
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-tail interval leaving `alpha / 2` of the draws on each side.
pub fn equal_tail_interval(draws: &[f64], alpha: f64) -> Result<(f64, f64)> {
    if draws.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("tail mass must lie in (0, 1), got {alpha}")));
    }
    let mut sorted = draws.to_vec();
    if sorted.iter().any(|v| v.is_nan()) {
        return Err(Error::Domain("draws contain NaN".into()));
    }
    sorted.sort_by(f64::total_cmp);
    Ok((quantile_sorted(&sorted, alpha / 2.0), quantile_sorted(&sorted, 1.0 - alpha / 2.0)))
}

/// Credibility levels `0.1, 0.2, …, 0.9`.
pub fn default_levels() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}

/// Fraction of `truth` values inside their equal-tail interval at each
/// credibility level.
pub fn coverage_curve(draws_per_point: &[Vec<f64>], truth: &[f64], levels: &[f64]) -> Result<Vec<f64>> {
    if truth.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if draws_per_point.len() != truth.len() {
        return Err(Error::Dimension { expected: truth.len(), got: draws_per_point.len() });
    }
    let sorted: Vec<Vec<f64>> = draws_per_point
        .iter()
        .map(|d| {
            let mut s = d.clone();
            s.sort_by(f64::total_cmp);
            s
        })
        .collect();
    levels
        .iter()
        .map(|&level| {
            if !(level > 0.0 && level < 1.0) {
                return Err(Error::Domain(format!("credibility level must lie in (0, 1), got {level}")));
            }
            let tail = 0.5 * (1.0 - level);
            let inside = sorted
                .iter()
                .zip(truth)
                .filter(|(s, y)| {
                    !s.is_empty() && quantile_sorted(s, tail) <= **y && **y <= quantile_sorted(s, 1.0 - tail)
                })
                .count();
            Ok(inside as f64 / truth.len() as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSummary {
    pub name: String,
    /// `P(β ≠ 0 | d)`: total weight of the models that include the
    /// coefficient.
    pub inclusion: f64,
    /// Draws pooled over the including models in proportion to `q`.
    pub draws: Vec<f64>,
    pub grid: Vec<f64>,
    /// Unscaled kernel density of `draws` on `grid`.
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl CoefficientSummary {
    /// Density rescaled so its maximum equals the inclusion probability.
    pub fn scaled_density(&self) -> Vec<f64> {
        let max = self.density.iter().copied().fold(0.0, f64::max);
        if max == 0.0 {
            return self.density.clone();
        }
        self.density.iter().map(|d| d / max * self.inclusion).collect()
    }
}

const KDE_GRID: usize = 200;

/// Inclusion probability and pooled posterior density of one coefficient.
pub fn coefficient_summary(
    posterior: &BmaPosterior<'_>,
    coefficient: &str,
    n_draws: usize,
    seed: u64,
) -> Result<CoefficientSummary> {
    let including: Vec<(usize, usize)> = posterior
        .models
        .iter()
        .enumerate()
        .filter_map(|(m, model)| model.layout().index_of(coefficient).map(|j| (m, j)))
        .collect();
    if including.is_empty() {
        return Err(Error::Lookup(format!("no model contains coefficient `{coefficient}`")));
    }
    let inclusion: f64 = including.iter().map(|&(m, _)| posterior.weights[m]).sum::<f64>().min(1.0);
    let mut draws = Vec::new();
    if inclusion > 0.0 && n_draws > 0 {
        let pick = WeightedIndex::new(including.iter().map(|&(m, _)| posterior.weights[m]))
            .map_err(|e| Error::Domain(format!("model weights: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(seed, 0, 2));
        draws = (0..n_draws)
            .map(|_| {
                let (m, j) = including[pick.sample(&mut rng)];
                posterior.samplers[m].draw(&mut rng)[j]
            })
            .collect();
    }
    let (grid, density, bandwidth) = kde(&draws);
    Ok(CoefficientSummary { name: coefficient.to_owned(), inclusion, draws, grid, density, bandwidth })
}

/// Silverman's rule-of-thumb bandwidth `0.9 min(sd, IQR/1.34) n^(-1/5)`.
pub fn silverman_bandwidth(draws: &[f64]) -> f64 {
    let n = draws.len();
    if n < 2 {
        return 1.0;
    }
    let mean = draws.iter().sum::<f64>() / n as f64;
    let sd = (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (n as f64).powf(-0.2);
    if h > 0.0 {
        h
    } else {
        1e-3 * (1.0 + mean.abs())
    }
}

fn kde(draws: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    if draws.is_empty() {
        return (Vec::new(), Vec::new(), 0.0);
    }
    let h = silverman_bandwidth(draws);
    let lo = draws.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = draws.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let grid: Vec<f64> = (0..KDE_GRID).map(|i| lo + (hi - lo) * i as f64 / (KDE_GRID - 1) as f64).collect();
    let norm = 1.0 / (draws.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let density = grid
        .par_iter()
        .map(|&x| draws.iter().map(|d| (-0.5 * ((x - d) / h).powi(2)).exp()).sum::<f64>() * norm)
        .collect();
    (grid, density, h)
}

/// Root-mean-square deviation of `predictions` from `truth`.
pub fn rmse(predictions: &[f64], truth: &[f64]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::Dimension { expected: truth.len(), got: predictions.len() });
    }
    if truth.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let sse: f64 = predictions.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sse / truth.len() as f64).sqrt())
}

/// Draws standard normals; shared by the test oracles of downstream crates.
pub fn standard_normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn interval_of_one_to_hundred() {
        let d: Vec<f64> = (1..=100).map(f64::from).collect();
        let (lo, hi) = equal_tail_interval(&d, 0.2).unwrap();
        assert!((lo - 10.9).abs() < 1e-12 && (hi - 90.1).abs() < 1e-12, "{lo} {hi}");
    }

    #[test]
    fn symmetric_draws_give_symmetric_interval() {
        let d: Vec<f64> = (-50..=50).map(|i| i as f64 * 0.3).collect();
        let (lo, hi) = equal_tail_interval(&d, 0.37).unwrap();
        assert!((lo + hi).abs() < 1e-12);
    }

    #[test]
    fn bayes_factor_cases() {
        assert_eq!(bayes_factor(&[0.5, 0.5], &[0.5, 0.5], 0, 1).unwrap(), 1.0);
        assert_eq!(bayes_factor(&[0.2, 0.8], &[0.2, 0.8], 0, 1).unwrap(), 1.0);
        assert!(bayes_factor(&[1.0, 0.0], &[0.5, 0.5], 0, 1).unwrap().is_infinite());
        assert!(bayes_factor(&[0.0, 0.0, 1.0], &[0.3, 0.3, 0.4], 0, 1).is_err());
    }

    proptest! {
        #[test]
        fn bayes_factor_multiplicative(q in prop::collection::vec(0.01f64..1.0, 3), p in prop::collection::vec(0.01f64..1.0, 3)) {
            let ij = bayes_factor(&q, &p, 0, 1).unwrap();
            let jk = bayes_factor(&q, &p, 1, 2).unwrap();
            let ik = bayes_factor(&q, &p, 0, 2).unwrap();
            prop_assert!((ij * jk - ik).abs() <= 1e-12 * ik.abs().max(1.0));
        }

        #[test]
        fn coverage_nondecreasing(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let draws: Vec<Vec<f64>> = (0..20).map(|_| standard_normals(&mut rng, 50)).collect();
            let truth = standard_normals(&mut rng, 20);
            let c = coverage_curve(&draws, &truth, &default_levels()).unwrap();
            for w in c.windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
        }
    }

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[1.5, 2.5, -0.5], &[1.0, 2.0, -1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn scaled_density_peaks_at_inclusion() {
        let s = CoefficientSummary {
            name: "b".into(),
            inclusion: 0.4,
            draws: vec![],
            grid: vec![0.0, 1.0, 2.0],
            density: vec![0.5, 2.0, 1.0],
            bandwidth: 1.0,
        };
        assert_eq!(s.scaled_density(), vec![0.1, 0.4, 0.2]);
    }

    #[test]
    fn kde_integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = standard_normals(&mut rng, 2000);
        let (grid, dens, _) = kde(&d);
        let step = grid[1] - grid[0];
        let area: f64 = dens.iter().sum::<f64>() * step;
        assert!((area - 1.0).abs() < 0.01, "{area}");
    }
}
