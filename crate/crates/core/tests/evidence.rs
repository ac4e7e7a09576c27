mod common;

use common::{crime_data, dense_solve, heart_data, log_sum_exp, simpson};
use vbma::evidence::*;
use vbma::models::*;
use vbma::predict::bayes_factor;
use vbma::Error;

const LN_2PI: f64 = 1.8378770664093453;

fn toy() -> RegressionData {
    let x = [-1.2, -0.4, 0.3, 0.9, 1.6];
    let y = [0.1, 0.8, 0.9, 1.9, 2.2];
    RegressionData::new(vec!["x".into()], x.iter().map(|&v| vec![v]).collect(), y.to_vec()).unwrap()
}

// ∫∫∫ Π N(y | b0 + b1 x, 1/φ) · N(b1 | 0, g/(φ Sxx)) · φ⁻¹ db0 db1 dφ
// b0 integrated in closed form, the remaining two dimensions by quadrature
// in (b1, log φ).
fn toy_evidence_by_quadrature(rd: &RegressionData, g: f64) -> f64 {
    let n = rd.n() as f64;
    let x: Vec<f64> = rd.rows.iter().map(|r| r[0]).collect();
    let xbar = x.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - xbar).powi(2)).sum();
    let inner = |b1: f64, phi: f64| -> f64 {
        let r: Vec<f64> = rd.y.iter().zip(&x).map(|(y, x)| y - b1 * x).collect();
        let rbar = r.iter().sum::<f64>() / n;
        let ss: f64 = r.iter().map(|v| (v - rbar).powi(2)).sum();
        let lik = 0.5 * n * (phi.ln() - LN_2PI) - 0.5 * phi * ss + 0.5 * (LN_2PI - (n * phi).ln());
        let prior_var = g / (phi * sxx);
        let prior = -0.5 * (LN_2PI + prior_var.ln()) - b1 * b1 / (2.0 * prior_var);
        (lik + prior).exp()
    };
    // the φ⁻¹ prior cancels the Jacobian of φ = e^u
    // conditional posterior of b1 sits within 10 likelihood sds of the
    // least-squares slope
    let bhat = rd.y.iter().zip(&x).map(|(y, x)| y * (x - xbar)).sum::<f64>() / sxx;
    let over_u = |u: f64| {
        let w = 10.0 / (u.exp() * sxx).sqrt();
        simpson(&|b1: f64| inner(b1, u.exp()), bhat - w, bhat + w, 1e-14)
    };
    simpson(&over_u, -12.0, 8.0, 1e-13).ln()
}

#[test]
fn zellner_closed_form_matches_quadrature() {
    let rd = toy();
    for g in [1.0, 5.0, 50.0] {
        let m = ZellnerModel::with_g(&rd, &[0], g).unwrap();
        let got = zellner_log_evidence(&m).unwrap().log_evidence;
        let want = toy_evidence_by_quadrature(&rd, g);
        assert!((got - want).abs() < 1e-4, "g={g}: {got} vs {want}");
    }
}

// Classic g-prior Bayes factor against the intercept-only model:
// (1+g)^((n-1-p)/2) / (1 + g(1-R²))^((n-1)/2)
fn log_bf_vs_null(rd: &RegressionData, subset: &[usize], g: f64) -> f64 {
    let n = rd.n();
    let p = subset.len();
    let nf = n as f64;
    let ybar = rd.y.iter().sum::<f64>() / nf;
    let tss: f64 = rd.y.iter().map(|y| (y - ybar).powi(2)).sum();
    if p == 0 {
        return 0.0;
    }
    let means: Vec<f64> = subset.iter().map(|&j| rd.rows.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    let xc = |i: usize, a: usize| rd.rows[i][subset[a]] - means[a];
    let gram: Vec<Vec<f64>> = (0..p).map(|a| (0..p).map(|b| (0..n).map(|i| xc(i, a) * xc(i, b)).sum()).collect()).collect();
    let c: Vec<f64> = (0..p).map(|a| (0..n).map(|i| xc(i, a) * (rd.y[i] - ybar)).sum()).collect();
    let (b, _) = dense_solve(&gram, &c);
    let r2 = b.iter().zip(&c).map(|(b, c)| b * c).sum::<f64>() / tss;
    0.5 * (nf - 1.0 - p as f64) * (1.0 + g).ln() - 0.5 * (nf - 1.0) * (1.0 + g * (1.0 - r2)).ln()
}

fn crime_exact_probs(rd: &RegressionData) -> Vec<f64> {
    let ests: Vec<EvidenceEstimate> =
        (0..8).map(|m| zellner_log_evidence(&ZellnerModel::new(rd, &subset_from_mask(m, 3)).unwrap()).unwrap()).collect();
    evidence_to_posterior(&ests, &[0.125; 8]).unwrap()
}

#[test]
fn crime_closed_form_matches_independent_bayes_factors() {
    let rd = crime_data();
    let probs = crime_exact_probs(&rd);
    let logs: Vec<f64> = (0..8).map(|m| log_bf_vs_null(&rd, &subset_from_mask(m, 3), rd.n() as f64)).collect();
    let lse = log_sum_exp(&logs);
    for m in 0..8 {
        let want = (logs[m] - lse).exp();
        assert!((probs[m] - want).abs() < 1e-10, "model {m}: {} vs {want}", probs[m]);
    }
}

#[test]
fn crime_closed_form_reproduces_published_probabilities() {
    // bitmask over (M, Prob, Ed): {Prob}=2, {Prob,Ed}=6, {M,Prob}=3, {M,Prob,Ed}=7
    let probs = crime_exact_probs(&crime_data());
    for (mask, published) in [(2, 0.58), (6, 0.17), (3, 0.11), (7, 0.07)] {
        assert!((probs[mask] - published).abs() <= 0.01, "{mask}: {} vs {published}", probs[mask]);
    }
}

#[test]
fn closed_form_is_invariant_to_shifting_the_response() {
    let rd = crime_data();
    let shifted = RegressionData::new(rd.predictor_names.clone(), rd.rows.clone(), rd.y.iter().map(|y| y + 6.7).collect()).unwrap();
    let a = crime_exact_probs(&rd);
    let b = crime_exact_probs(&shifted);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn identical_models_have_unit_bayes_factor() {
    let m = ZellnerModel::new(&crime_data(), &[]).unwrap();
    let e = zellner_log_evidence(&m).unwrap();
    let post = evidence_to_posterior(&[e, e], &[0.5, 0.5]).unwrap();
    assert_eq!(post, vec![0.5, 0.5]);
    assert_eq!(bayes_factor(&post, &[0.5, 0.5], 0, 1).unwrap(), 1.0);
}

#[test]
fn mc_evidence_matches_conjugate_value_within_three_se() {
    let m = NormalMeanModel::new(vec![0.4, 1.1, -0.2, 0.9, 0.5, 1.3], 1.0, 0.0, 2.0).unwrap();
    let e = mc_log_evidence(&m, 100_000, 5).unwrap();
    let exact = m.log_evidence();
    assert!(e.std_error > 0.0);
    assert!((e.log_evidence - exact).abs() < 3.0 * e.std_error, "{} ± {} vs {exact}", e.log_evidence, e.std_error);
}

#[test]
fn mc_standard_error_decays_at_root_n() {
    let m = NormalMeanModel::new(vec![0.4, 1.1, -0.2, 0.9, 0.5, 1.3], 1.0, 0.0, 2.0).unwrap();
    let sizes = [1_000usize, 10_000, 100_000];
    let pts: Vec<(f64, f64)> = sizes
        .iter()
        .map(|&n| {
            // average several seeds so the slope is not dominated by noise in se
            let se: f64 = (0..8).map(|s| mc_log_evidence(&m, n, 100 + s).unwrap().std_error).sum::<f64>() / 8.0;
            ((n as f64).ln(), se.ln())
        })
        .collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / 3.0;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / 3.0;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() <= 0.05, "slope {slope}");
}

#[test]
fn mc_evidence_is_thread_count_independent() {
    let m = NormalMeanModel::new(vec![0.4, 1.1], 1.0, 0.0, 2.0).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = mc_log_evidence(&m, 20_000, 9).unwrap();
    let b = pool.install(|| mc_log_evidence(&m, 20_000, 9).unwrap());
    assert_eq!(a.log_evidence.to_bits(), b.log_evidence.to_bits());
}

#[test]
fn mc_rejects_improper_priors_and_mixed_methods() {
    let rd = crime_data();
    let z = ZellnerModel::new(&rd, &[0]).unwrap();
    assert!(matches!(mc_log_evidence(&z, 100, 0), Err(Error::Config(_))));
    let nm = NormalMeanModel::new(vec![0.0], 1.0, 0.0, 1.0).unwrap();
    let a = zellner_log_evidence(&z).unwrap();
    let b = mc_log_evidence(&nm, 100, 0).unwrap();
    assert!(matches!(evidence_to_posterior(&[a, b], &[0.5, 0.5]), Err(Error::Config(_))));
}

#[test]
fn exact_posterior_sampler_matches_moments() {
    use rand::SeedableRng;
    let rd = crime_data();
    let m = ZellnerModel::new(&rd, &[1]).unwrap();
    let post = ZellnerPosterior::new(&m).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let draws: Vec<Vec<f64>> = (0..20_000).map(|_| post.sample(&mut rng)).collect();
    // slope posterior mean is g/(1+g) times the least-squares slope
    let n = rd.n() as f64;
    let x: Vec<f64> = rd.rows.iter().map(|r| r[1]).collect();
    let xbar = x.iter().sum::<f64>() / n;
    let ybar = rd.y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&rd.y).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let sxx: f64 = x.iter().map(|x| (x - xbar).powi(2)).sum();
    let want = n / (n + 1.0) * sxy / sxx;
    let slopes: Vec<f64> = draws.iter().map(|d| d[1]).collect();
    let (mean, sd) = common::mean_sd(&slopes);
    assert!((mean - want).abs() < 4.0 * sd / (slopes.len() as f64).sqrt(), "{mean} vs {want}");
}

// Plain prior-sampling MC for logistic evidence, as in the published heart
// comparison. Slow (1.5M likelihood evaluations) but well within budget.
#[test]
fn heart_mc_evidence_orders_the_top_two_models() {
    let rd = heart_data();
    let prior_sd = DEFAULT_PRIOR_SD;
    // 0-based predictor order: chol, trestbps, sex, age, thalach
    let top = LogisticModel::new(&rd, &[0, 1, 2, 4], prior_sd).unwrap();
    let full = LogisticModel::new(&rd, &[0, 1, 2, 3, 4], prior_sd).unwrap();
    let a = mc_log_evidence(&top, 750_000, 1).unwrap();
    let b = mc_log_evidence(&full, 750_000, 2).unwrap();
    let ratio = (a.log_evidence - b.log_evidence).exp();
    let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    eprintln!("heart MC ratio {ratio:.3} (log se {se:.3}); published 0.45/0.28 = {:.3}", 0.45 / 0.28);
    assert!(ratio > 1.0, "top model must beat the full model, ratio {ratio}");
    assert!((ratio.ln() - (0.45f64 / 0.28).ln()).abs() < 0.5 + 3.0 * se, "ratio {ratio}");
}
