mod common;

use common::{crime_data, ks_critical_01, ks_statistic};
use proptest::prelude::*;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erf;
use vbma::family::{encode_scale, FamilyTag, VariationalState};
use vbma::models::{Model, NormalMeanModel};
use vbma::predict::*;
use vbma::vbma::{run, Ensemble, VbmaConfig};

fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    0.5 * (1.0 + erf((x - mean) / (sd * std::f64::consts::SQRT_2)))
}

struct PointMass(f64);

impl ParamSampler for PointMass {
    fn draw(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
        vec![self.0]
    }
}

fn gaussian_state(mean: f64, sd: f64) -> VariationalState {
    VariationalState::new(vec!["theta".into()], vec![FamilyTag::Normal], vec![mean], vec![encode_scale(sd * sd).unwrap()])
        .unwrap()
}

fn unit_model(sigma: f64) -> NormalMeanModel {
    NormalMeanModel::new(vec![0.0], sigma, 0.0, 1.0).unwrap()
}

#[test]
fn point_mass_mixture_mean_matches_weights() {
    let m = unit_model(1.0);
    let (a, b) = (PointMass(0.0), PointMass(1.0));
    let post = BmaPosterior::new(vec![0.3, 0.7], vec![&m, &m], vec![&a, &b]).unwrap();
    let n = 40_000;
    let mean = bma_predictive_mean(&post, &[vec![]], n, 1).unwrap()[0];
    let se = (0.21f64 / n as f64).sqrt();
    assert!((mean - 0.7).abs() < 3.0 * se, "{mean}");
}

#[test]
fn single_model_mixture_is_that_models_predictive() {
    let m = unit_model(0.5);
    let q = gaussian_state(1.2, 0.3);
    let post = BmaPosterior::new(vec![1.0], vec![&m], vec![&q]).unwrap();
    let d = bma_draw(&post, &[vec![]], 5000, 2, true).unwrap();
    let sd = (0.25f64 + 0.09).sqrt();
    let ks = ks_statistic(&d.per_point[0], |x| normal_cdf(x, 1.2, sd));
    assert!(ks < ks_critical_01(5000.0), "{ks}");
}

#[test]
fn mixture_histogram_is_close_in_total_variation() {
    let m = unit_model(0.4);
    let (qa, qb) = (gaussian_state(-1.0, 0.2), gaussian_state(2.0, 0.5));
    let post = BmaPosterior::new(vec![0.35, 0.65], vec![&m, &m], vec![&qa, &qb]).unwrap();
    let d = bma_draw(&post, &[vec![]], 50_000, 3, true).unwrap();
    let (sa, sb) = ((0.16f64 + 0.04).sqrt(), (0.16f64 + 0.25).sqrt());
    let cdf = |x: f64| 0.35 * normal_cdf(x, -1.0, sa) + 0.65 * normal_cdf(x, 2.0, sb);
    let edges: Vec<f64> = (0..=60).map(|i| -4.0 + i as f64 * 0.15).collect();
    let n = d.per_point[0].len() as f64;
    let mut tv = 0.0;
    for w in edges.windows(2) {
        let count = d.per_point[0].iter().filter(|&&y| y >= w[0] && y < w[1]).count() as f64;
        tv += (count / n - (cdf(w[1]) - cdf(w[0]))).abs();
    }
    let outside = d.per_point[0].iter().filter(|&&y| y < -4.0 || y >= 5.0).count() as f64 / n;
    tv = 0.5 * (tv + (outside - (cdf(-4.0) + 1.0 - cdf(5.0))).abs());
    assert!(tv < 0.05, "{tv}");
}

#[test]
fn calibrated_draws_give_nominal_coverage() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let points = 500;
    let mut per_point = Vec::new();
    let mut truth = Vec::new();
    for i in 0..points {
        let center = (i as f64 * 0.37).sin() * 3.0;
        let scale = 0.5 + (i % 7) as f64 * 0.2;
        let z = standard_normals(&mut rng, 2001);
        per_point.push(z[..2000].iter().map(|v| center + scale * v).collect::<Vec<f64>>());
        truth.push(center + scale * z[2000]);
    }
    let levels = default_levels();
    let cov = coverage_curve(&per_point, &truth, &levels).unwrap();
    for (l, c) in levels.iter().zip(&cov) {
        assert!((c - l).abs() <= 0.06, "level {l}: {c}");
    }
}

#[test]
fn equal_tail_interval_recovers_normal_quantiles() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z = standard_normals(&mut rng, 100_000);
    for (alpha, q) in [(0.05, 1.959964), (0.1, 1.644854), (0.5, 0.674490)] {
        let (lo, hi) = equal_tail_interval(&z, alpha).unwrap();
        assert!((lo + q).abs() < 0.02 && (hi - q).abs() < 0.02, "{alpha}: ({lo}, {hi})");
    }
}

#[test]
fn crime_imprisonment_coefficient_is_almost_always_included() {
    let rd = crime_data();
    let ens = Ensemble::linear_subsets(&rd).unwrap();
    let out = run(&VbmaConfig { seed: 2, ..VbmaConfig::default() }, &ens).unwrap();
    let models: Vec<&dyn Model> = ens.models().iter().map(|m| m.as_ref()).collect();
    let samplers: Vec<&dyn ParamSampler> = out.state.variational.iter().map(|v| v as &dyn ParamSampler).collect();
    let post = BmaPosterior::new(out.weights.clone(), models, samplers).unwrap();
    let s = coefficient_summary(&post, "Prob", 4000, 1).unwrap();
    assert!(s.inclusion >= 0.88, "{}", s.inclusion);
    assert_eq!(s.grid.len(), 200);
    let peak = s.scaled_density().into_iter().fold(0.0, f64::max);
    assert!((peak - s.inclusion).abs() < 1e-12);
    // elasticity of crime on imprisonment probability is negative
    assert!(s.draws.iter().sum::<f64>() < 0.0);
    assert!(coefficient_summary(&post, "nope", 10, 1).is_err());
}

#[test]
fn mixture_weights_must_be_a_distribution() {
    let m = unit_model(1.0);
    let a = PointMass(0.0);
    assert!(BmaPosterior::new(vec![0.4, 0.4], vec![&m, &m], vec![&a, &a]).is_err());
    assert!(BmaPosterior::new(vec![1.0], vec![&m, &m], vec![&a]).is_err());
}

proptest! {
    #[test]
    fn bayes_factors_multiply(raw in prop::collection::vec(0.01f64..1.0, 3), prior in prop::collection::vec(0.1f64..1.0, 3)) {
        let total: f64 = raw.iter().sum();
        let q: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let ptotal: f64 = prior.iter().sum();
        let p: Vec<f64> = prior.iter().map(|v| v / ptotal).collect();
        let ij = bayes_factor(&q, &p, 0, 1).unwrap();
        let jk = bayes_factor(&q, &p, 1, 2).unwrap();
        let ik = bayes_factor(&q, &p, 0, 2).unwrap();
        prop_assert!((ij * jk - ik).abs() <= 1e-10 * ik.max(1.0));
        prop_assert!((bayes_factor(&q, &p, 1, 0).unwrap() * ij - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interval_nests_with_level(seed in 0u64..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = standard_normals(&mut rng, 300);
        let (a, b) = equal_tail_interval(&z, 0.5).unwrap();
        let (c, d) = equal_tail_interval(&z, 0.1).unwrap();
        prop_assert!(c <= a && b <= d);
    }
}
