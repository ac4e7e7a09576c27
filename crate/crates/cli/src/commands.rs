//! Subcommand implementations.

use rand::RngCore;
use vbma::data::{crime, crime_prepared, heart, heart_prepared, load_csv, synth_gp_dataset, Dataset, Preparation, Rows, Schema};
use vbma::evidence::{evidence_to_posterior, mc_log_evidence, zellner_log_evidence, EvidenceEstimate, ZellnerPosterior};
use vbma::models::{subset_from_mask, GpModel, Model, RegressionData, ZellnerModel};
use vbma::predict::{bayes_factor, bma_draw, coefficient_summary, coverage_curve, equal_tail_interval, rmse, BmaPosterior, ParamSampler};
use vbma::vbma::{run_with_observer, substream_seed, Ensemble, EnsembleState};
use vbma::{Error, Result};

use crate::artifacts::{check_stamp, list, num, parse_table, read_weights, OutDir, Stamp, Table};
use crate::config::RunConfig;
use crate::svg::{Chart, Series};

const MAX_SUBSET_PREDICTORS: usize = 12;

// Substream tags of the non-fit subcommands, far above any iteration count
// so they never coincide with the optimizer's streams.
const PREDICT_STREAM: usize = 1 << 40;
const ORACLE_STREAM: usize = (1 << 40) + 1;
const COEFFICIENT_STREAM: usize = (1 << 40) + 2;
const EVIDENCE_STREAM: usize = (1 << 40) + 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Zellner,
    Logistic,
    Gp,
}

impl Family {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "zellner" => Ok(Family::Zellner),
            "logistic" => Ok(Family::Logistic),
            "gp" => Ok(Family::Gp),
            other => Err(Error::Config(format!("unknown model family `{other}` (zellner, logistic, gp)"))),
        }
    }
}

/// Data and candidate models as declared by the configuration.
struct Study {
    family: Family,
    data: Dataset,
    ensemble: Ensemble,
    /// The same candidates as concrete types, for the closed-form oracle.
    zellner: Vec<ZellnerModel>,
}

fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    let d = &cfg.file.data;
    let split_seed = d.split_seed.unwrap_or(cfg.seed());
    let split = |base: Dataset| -> Result<Dataset> {
        match d.split {
            Some(f) => base.split(f, split_seed),
            None => Ok(base),
        }
    };
    match d.source.as_str() {
        "crime" => crime_prepared(&split(crime())?),
        "heart" => heart_prepared(&split(heart())?),
        "synth" => {
            if d.split.is_some() {
                return Err(Error::Config("the synthetic lattice has a fixed frontier split; remove [data] split".into()));
            }
            synth_gp_dataset(&cfg.file.synth.spec(), synth_seed(cfg))
        }
        "csv" => {
            if d.predictors.is_empty() {
                return Err(Error::Config("[data] predictors must list at least one column".into()));
            }
            let response = d.response.clone().ok_or_else(|| Error::Config("[data] response is required".into()))?;
            let base = load_csv(cfg.data_path()?, &Schema::new(d.predictors.clone(), response))?;
            split(base)?.prepare(&Preparation { log: d.log.clone(), center: d.center.clone() })
        }
        other => Err(Error::Config(format!("unknown data source `{other}` (crime, heart, synth, csv)"))),
    }
}

fn synth_seed(cfg: &RunConfig) -> u64 {
    cfg.file.synth.seed.unwrap_or(cfg.seed())
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn lattice_points(rows: Vec<Vec<f64>>) -> Result<Vec<[f64; 2]>> {
    rows.into_iter()
        .map(|r| match r[..] {
            [a, b] => Ok([a, b]),
            _ => Err(Error::Config(format!("gp models need exactly two predictors, got {}", r.len()))),
        })
        .collect()
}

fn load_study(cfg: &RunConfig) -> Result<Study> {
    let family = Family::parse(&cfg.file.model.family)?;
    let data = load_data(cfg)?;
    let train = data.regression_data(Rows::Train)?;
    let m = &cfg.file.model;
    let k = train.predictor_names.len();
    if family != Family::Gp && k > MAX_SUBSET_PREDICTORS {
        return Err(Error::Config(format!("{k} predictors give 2^{k} subset models; at most {MAX_SUBSET_PREDICTORS} are supported")));
    }
    let mut zellner = Vec::new();
    let ensemble = match family {
        Family::Zellner => {
            let g = m.g.unwrap_or(train.n() as f64);
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("g must be positive, got {g}")));
            }
            zellner = zellner_subsets(&train, g)?;
            Ensemble::uniform(zellner.iter().map(|z| Box::new(z.clone()) as Box<dyn Model>).collect())?
        }
        Family::Logistic => {
            if !(m.prior_sd > 0.0 && m.prior_sd.is_finite()) {
                return Err(Error::Config(format!("prior_sd must be positive, got {}", m.prior_sd)));
            }
            Ensemble::logistic_subsets(&train, m.prior_sd)?
        }
        Family::Gp => {
            let x = lattice_points(data.rows(Rows::Train))?;
            let y = data.responses(Rows::Train);
            let unit = match m.offset_unit.as_str() {
                "absolute" => 1.0,
                "response-sd" => sample_sd(&y),
                other => return Err(Error::Config(format!("unknown offset unit `{other}` (absolute, response-sd)"))),
            };
            if m.offsets.is_empty() {
                return Err(Error::Config("[model] offsets must list at least one offset".into()));
            }
            let offsets: Vec<f64> = m.offsets.iter().map(|o| o * unit).collect();
            Ensemble::gp_offsets(&x, &y, &offsets, m.gp_priors())?
        }
    };
    Ok(Study { family, data, ensemble, zellner })
}

fn zellner_subsets(train: &RegressionData, g: f64) -> Result<Vec<ZellnerModel>> {
    let k = train.predictor_names.len();
    (0..1usize << k).map(|mask| ZellnerModel::with_g(train, &subset_from_mask(mask, k), g)).collect()
}

fn stamp(cfg: &RunConfig) -> Stamp {
    Stamp { seed: cfg.seed(), config_hash: cfg.file.hash() }
}

fn zellner_exact(study: &Study) -> Result<Vec<EvidenceEstimate>> {
    study.zellner.iter().map(zellner_log_evidence).collect()
}

fn model_index(study: &Study, name: &str) -> Result<usize> {
    study.ensemble.index_of(name).ok_or_else(|| {
        Error::Lookup(format!("no model named `{name}`; candidates are {}", study.ensemble.names().join(", ")))
    })
}

/// Weights from `weights.csv`, checked against the current configuration.
fn fitted_weights(cfg: &RunConfig, out: &OutDir, study: &Study) -> Result<Vec<f64>> {
    let text = out.read("weights.csv", "fit")?;
    check_stamp(&text, "weights.csv", &stamp(cfg))?;
    let (names, q) = read_weights(&text)?;
    if names != study.ensemble.names() {
        return Err(Error::Config("weights.csv lists different models than the configuration; rerun `vbma fit`".into()));
    }
    Ok(q)
}

fn fitted_state(cfg: &RunConfig, out: &OutDir) -> Result<EnsembleState> {
    let text = out.read("checkpoint.txt", "fit")?;
    check_stamp(&text, "checkpoint.txt", &stamp(cfg))?;
    EnsembleState::from_checkpoint(&text, cfg.file.vbma.optimizer_config()?)
}

fn checkpoint_text(stamp: &Stamp, state: &EnsembleState) -> String {
    let mut s = stamp.comment();
    s.push_str(&state.to_checkpoint());
    s
}

pub fn fit(cfg: &RunConfig) -> Result<()> {
    let study = load_study(cfg)?;
    let core = cfg.file.vbma.to_core(cfg.threads)?;
    let stamp = stamp(cfg);
    let mut out = OutDir::create(&cfg.out)?;

    let every = cfg.file.vbma.checkpoint_every;
    let mut observer_error = None;
    let result = {
        let mut observe = |state: &EnsembleState| {
            if observer_error.is_none() {
                if let Err(e) = out.write("checkpoint.txt", &checkpoint_text(&stamp, state)) {
                    observer_error = Some(e);
                }
            }
        };
        run_with_observer(&core, &study.ensemble, (every > 0).then_some(every), &mut observe)
    };
    if let Some(e) = observer_error {
        return Err(e);
    }
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            out.write("checkpoint.txt", &checkpoint_text(&stamp, &e.state))?;
            eprintln!("last consistent state written to {}", out.path("checkpoint.txt").display());
            return Err(e.into());
        }
    };
    let state = &outcome.state;
    let names = study.ensemble.names();

    let mut weights = Table::new(&stamp, &["model", "q", "se", "rejections", "status"]);
    for m in 0..names.len() {
        weights.row(&[
            names[m].clone(),
            num(outcome.weights[m]),
            num(outcome.weight_se[m]),
            state.rejections[m].to_string(),
            outcome.status.as_str().into(),
        ]);
    }
    out.write("weights.csv", &weights.into_string())?;

    let mut trace = Table::new(&stamp, &["iteration", "phase", "model", "elbo", "q"]);
    let pretrain = cfg.file.vbma.pretrain_iters;
    for it in 0..state.iteration {
        let phase = if it < pretrain { "pretrain" } else { "joint" };
        for m in 0..names.len() {
            trace.row(&[(it + 1).to_string(), phase.into(), names[m].clone(), num(state.elbo_trace[m][it]), num(state.weight_trace[it][m])]);
        }
        trace.row(&[(it + 1).to_string(), phase.into(), "ensemble".into(), num(state.ensemble_elbo(it)), num(1.0)]);
    }
    out.write("elbo_trace.csv", &trace.into_string())?;
    out.write("checkpoint.txt", &checkpoint_text(&stamp, state))?;

    if cfg.svg {
        let series = names
            .iter()
            .enumerate()
            .map(|(m, name)| Series {
                label: name.clone(),
                points: state.elbo_trace[m].iter().enumerate().map(|(i, v)| ((i + 1) as f64, *v)).collect(),
                dashed: false,
            })
            .chain(std::iter::once(Series {
                label: "ensemble".into(),
                points: (0..state.iteration).map(|i| ((i + 1) as f64, state.ensemble_elbo(i))).collect(),
                dashed: true,
            }))
            .collect();
        let chart = Chart { title: "ELBO per iteration".into(), x_label: "iteration".into(), y_label: "ELBO".into(), series, spikes: vec![] };
        out.write("elbo_trace.svg", &chart.render(&stamp.line()))?;
    }

    println!("{}", stamp.line());
    println!("{} after {} iterations", outcome.status.as_str(), state.iteration);
    for m in 0..names.len() {
        println!("{:<24} q = {:.4} (se {:.4})", names[m], outcome.weights[m], outcome.weight_se[m]);
    }
    report_written(&out);
    Ok(())
}

pub fn evidence(cfg: &RunConfig) -> Result<()> {
    let study = load_study(cfg)?;
    let stamp = stamp(cfg);
    let mut out = OutDir::create(&cfg.out)?;
    let estimates = if study.family == Family::Zellner {
        zellner_exact(&study)?
    } else {
        let draws = cfg.file.evidence.draws;
        (0..study.ensemble.len())
            .map(|m| mc_log_evidence(study.ensemble.model(m), draws, substream_seed(cfg.seed(), m, EVIDENCE_STREAM)))
            .collect::<Result<Vec<_>>>()?
    };
    let post = evidence_to_posterior(&estimates, study.ensemble.prior_weights())?;
    let names = study.ensemble.names();
    let mut t = Table::new(&stamp, &["model", "method", "log_evidence", "se", "posterior_prob"]);
    for m in 0..names.len() {
        let e = &estimates[m];
        t.row(&[names[m].clone(), e.method.as_str().into(), num(e.log_evidence), num(e.std_error), num(post[m])]);
    }
    out.write("evidence.csv", &t.into_string())?;
    println!("{}", stamp.line());
    for m in 0..names.len() {
        println!("{:<24} log Z = {:.4} (se {:.4})  p(M|d) = {:.4}", names[m], estimates[m].log_evidence, estimates[m].std_error, post[m]);
    }
    report_written(&out);
    Ok(())
}

/// Log evidences from an earlier `vbma evidence` run, if one exists for
/// this configuration.
fn stored_log_evidence(cfg: &RunConfig, out: &OutDir, study: &Study) -> Result<Option<Vec<f64>>> {
    let Ok(text) = std::fs::read_to_string(out.path("evidence.csv")) else {
        return Ok(None);
    };
    if check_stamp(&text, "evidence.csv", &stamp(cfg)).is_err() {
        return Ok(None);
    }
    let (header, rows) = parse_table(&text)?;
    let col = header.iter().position(|h| h == "log_evidence").ok_or_else(|| Error::Parse { line: 2, message: "evidence table lacks `log_evidence`".into() })?;
    let values = rows
        .iter()
        .enumerate()
        .map(|(i, r)| r[col].parse::<f64>().map_err(|_| Error::Parse { line: i + 3, message: format!("bad log evidence `{}`", r[col]) }))
        .collect::<Result<Vec<_>>>()?;
    Ok((values.len() == study.ensemble.len()).then_some(values))
}

pub fn bf(cfg: &RunConfig, first: &str, second: &str) -> Result<()> {
    let study = load_study(cfg)?;
    let stamp = stamp(cfg);
    let mut out = OutDir::create(&cfg.out)?;
    let (i, j) = (model_index(&study, first)?, model_index(&study, second)?);
    let q = fitted_weights(cfg, &out, &study)?;
    let vbma_bf = bayes_factor(&q, study.ensemble.prior_weights(), i, j)?;
    let (oracle, source) = if study.family == Family::Zellner {
        let e = zellner_exact(&study)?;
        ((e[i].log_evidence - e[j].log_evidence).exp(), "closed-form")
    } else if let Some(logz) = stored_log_evidence(cfg, &out, &study)? {
        ((logz[i] - logz[j]).exp(), "evidence.csv")
    } else {
        (f64::NAN, "none")
    };
    let mut t = Table::new(&stamp, &["first", "second", "bf_vbma", "bf_oracle", "oracle_source"]);
    t.row(&[first.into(), second.into(), num(vbma_bf), num(oracle), source.into()]);
    out.write("bf.csv", &t.into_string())?;
    println!("{}", stamp.line());
    println!("BF({first} : {second}) = {vbma_bf:.4} (vbma), {} ({source})", if oracle.is_nan() { "NA".to_owned() } else { format!("{oracle:.4}") });
    report_written(&out);
    Ok(())
}

/// Inputs and observed responses to predict at: the test rows, or every
/// row when the data has no test split.
fn prediction_rows(data: &Dataset) -> (Vec<usize>, Vec<Vec<f64>>, Vec<f64>) {
    let rows = if data.rows(Rows::Test).is_empty() { Rows::All } else { Rows::Test };
    let index = data
        .tags()
        .iter()
        .enumerate()
        .filter(|(_, t)| rows == Rows::All || **t == vbma::data::SplitTag::Test)
        .map(|(i, _)| i)
        .collect();
    (index, data.rows(rows), data.responses(rows))
}

fn level_label(level: f64) -> String {
    format!("{}", level)
}

pub fn predict(cfg: &RunConfig) -> Result<()> {
    let study = load_study(cfg)?;
    let stamp = stamp(cfg);
    let mut out = OutDir::create(&cfg.out)?;
    let q = fitted_weights(cfg, &out, &study)?;
    let state = fitted_state(cfg, &out)?;
    let p = &cfg.file.predict;
    let models: Vec<&dyn Model> = study.ensemble.models().iter().map(|m| m.as_ref()).collect();
    let samplers: Vec<&dyn ParamSampler> = state.variational.iter().map(|v| v as &dyn ParamSampler).collect();
    let posterior = BmaPosterior::new(q, models, samplers)?;

    let (index, x, y) = prediction_rows(&study.data);
    let draws = bma_draw(&posterior, &x, p.draws, substream_seed(cfg.seed(), 0, PREDICT_STREAM), p.noise)?;
    let names = study.data.predictor_names().to_vec();
    let mut header: Vec<String> = vec!["row".into()];
    header.extend(names.iter().cloned());
    header.push("observed".into());
    header.push("mean".into());
    for l in &p.levels {
        header.push(format!("lower_{}", level_label(*l)));
        header.push(format!("upper_{}", level_label(*l)));
    }
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::new(&stamp, &header_ref);
    for (r, d) in draws.per_point.iter().enumerate() {
        let mut row = vec![index[r].to_string()];
        row.extend(x[r].iter().map(|v| num(*v)));
        row.push(num(y[r]));
        row.push(num(d.iter().sum::<f64>() / d.len() as f64));
        for &l in &p.levels {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::Config(format!("credibility level must lie in (0, 1), got {l}")));
            }
            let (lo, hi) = equal_tail_interval(d, 1.0 - l)?;
            row.push(num(lo));
            row.push(num(hi));
        }
        t.row(&row);
    }
    out.write("predict.csv", &t.into_string())?;

    let coefficients: Vec<String> = match study.family {
        Family::Gp => study.ensemble.model(0).layout().names().map(str::to_owned).collect(),
        _ => names.clone(),
    };
    let mut summary = Table::new(&stamp, &["coefficient", "inclusion", "mean", "sd", "bandwidth"]);
    let mut density = Table::new(&stamp, &["coefficient", "x", "density", "scaled_density"]);
    for (c, name) in coefficients.iter().enumerate() {
        let s = coefficient_summary(&posterior, name, p.coefficient_draws, substream_seed(cfg.seed(), c, COEFFICIENT_STREAM))?;
        let (mean, sd) = if s.draws.len() >= 2 {
            let m = s.draws.iter().sum::<f64>() / s.draws.len() as f64;
            (m, sample_sd(&s.draws))
        } else {
            (f64::NAN, f64::NAN)
        };
        summary.row(&[name.clone(), num(s.inclusion), num(mean), num(sd), num(s.bandwidth)]);
        let scaled = s.scaled_density();
        for g in 0..s.grid.len() {
            density.row(&[name.clone(), num(s.grid[g]), num(s.density[g]), num(scaled[g])]);
        }
        if cfg.svg {
            let chart = Chart {
                title: format!("posterior of {name}"),
                x_label: name.clone(),
                y_label: "probability / scaled density".into(),
                series: vec![Series { label: format!("P(included) = {:.3}", s.inclusion), points: s.grid.iter().copied().zip(scaled).collect(), dashed: false }],
                spikes: if s.inclusion < 1.0 { vec![(0.0, 1.0 - s.inclusion)] } else { vec![] },
            };
            out.write(&format!("coefficient_{name}.svg"), &chart.render(&stamp.line()))?;
        }
    }
    out.write("coefficients.csv", &summary.into_string())?;
    out.write("coefficient_density.csv", &density.into_string())?;

    println!("{}", stamp.line());
    println!("{} prediction points, {} draws each", x.len(), p.draws);
    report_written(&out);
    Ok(())
}

/// A degenerate sampler that always returns the same parameters.
struct FixedParams(Vec<f64>);

impl ParamSampler for FixedParams {
    fn draw(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
        self.0.clone()
    }
}

pub fn coverage(cfg: &RunConfig) -> Result<()> {
    let study = load_study(cfg)?;
    let stamp = stamp(cfg);
    let mut out = OutDir::create(&cfg.out)?;
    let p = &cfg.file.predict;
    if p.levels.is_empty() {
        return Err(Error::Config("[predict] levels is empty; coverage needs at least one level".into()));
    }
    let x = study.data.rows(Rows::Test);
    let y = study.data.responses(Rows::Test);
    if x.is_empty() {
        return Err(Error::Config("coverage needs held-out rows; set [data] split or use source = \"synth\"".into()));
    }
    let q = fitted_weights(cfg, &out, &study)?;
    let state = fitted_state(cfg, &out)?;
    let models: Vec<&dyn Model> = study.ensemble.models().iter().map(|m| m.as_ref()).collect();
    let samplers: Vec<&dyn ParamSampler> = state.variational.iter().map(|v| v as &dyn ParamSampler).collect();
    let posterior = BmaPosterior::new(q, models.clone(), samplers)?;
    let seed = cfg.seed();
    let draws = bma_draw(&posterior, &x, p.draws, substream_seed(seed, 0, PREDICT_STREAM), p.noise)?;
    let vbma_cov = coverage_curve(&draws.per_point, &y, &p.levels)?;
    let vbma_mean: Vec<f64> = draws.per_point.iter().map(|d| d.iter().sum::<f64>() / d.len() as f64).collect();
    let vbma_rmse = rmse(&vbma_mean, &y)?;

    let oracle_seed = substream_seed(seed, 0, ORACLE_STREAM);
    let (oracle_cov, oracle_rmse, oracle_name) = match study.family {
        Family::Zellner => {
            let exact = evidence_to_posterior(&zellner_exact(&study)?, study.ensemble.prior_weights())?;
            let post = study.zellner.iter().map(ZellnerPosterior::new).collect::<Result<Vec<_>>>()?;
            let samplers: Vec<&dyn ParamSampler> = post.iter().map(|s| s as &dyn ParamSampler).collect();
            let oracle = BmaPosterior::new(exact, models, samplers)?;
            let d = bma_draw(&oracle, &x, p.draws, oracle_seed, p.noise)?;
            let mean: Vec<f64> = d.per_point.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
            (coverage_curve(&d.per_point, &y, &p.levels)?, rmse(&mean, &y)?, "exact")
        }
        Family::Gp if cfg.file.data.source == "synth" => {
            let t = cfg.file.synth.spec().truth;
            let train = lattice_points(study.data.rows(Rows::Train))?;
            let truth_model = GpModel::new("truth", train, study.data.responses(Rows::Train), 0.0)?;
            let fixed = FixedParams(vec![t.beta, t.eta, t.nu1, t.nu2, t.sigma]);
            let oracle = BmaPosterior::new(vec![1.0], vec![&truth_model as &dyn Model], vec![&fixed as &dyn ParamSampler])?;
            let d = bma_draw(&oracle, &x, p.draws, oracle_seed, p.noise)?;
            let mean: Vec<f64> = d.per_point.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
            (coverage_curve(&d.per_point, &y, &p.levels)?, rmse(&mean, &y)?, "true-hyperparameters")
        }
        _ => (vec![f64::NAN; p.levels.len()], f64::NAN, "none"),
    };

    let mut t = Table::new(&stamp, &["level", "coverage_vbma", "coverage_oracle"]);
    for (l, level) in p.levels.iter().enumerate() {
        t.row(&[num(*level), num(vbma_cov[l]), num(oracle_cov[l])]);
    }
    out.write("coverage.csv", &t.into_string())?;
    let mut r = Table::new(&stamp, &["predictor", "rmse", "points"]);
    r.row(&["vbma".into(), num(vbma_rmse), x.len().to_string()]);
    r.row(&[oracle_name.into(), num(oracle_rmse), x.len().to_string()]);
    out.write("rmse.csv", &r.into_string())?;

    if cfg.svg {
        let diag = Series { label: "nominal".into(), points: vec![(0.0, 0.0), (1.0, 1.0)], dashed: true };
        let curve = |label: &str, cov: &[f64]| Series {
            label: label.into(),
            points: p.levels.iter().copied().zip(cov.iter().copied()).collect(),
            dashed: false,
        };
        let mut series = vec![diag, curve("vbma", &vbma_cov)];
        if oracle_name != "none" {
            series.push(curve(oracle_name, &oracle_cov));
        }
        let chart = Chart { title: "predictive coverage".into(), x_label: "credibility level".into(), y_label: "empirical coverage".into(), series, spikes: vec![] };
        out.write("coverage.svg", &chart.render(&stamp.line()))?;
    }

    println!("{}", stamp.line());
    println!("levels        {}", list(&p.levels));
    println!("vbma          {}", list(&vbma_cov));
    println!("{oracle_name:<13} {}", list(&oracle_cov));
    println!("rmse vbma = {vbma_rmse:.4}, {oracle_name} = {oracle_rmse:.4} over {} held-out points", x.len());
    report_written(&out);
    Ok(())
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let stamp = Stamp { seed: synth_seed(cfg), config_hash: cfg.file.hash() };
    let mut out = OutDir::create(&cfg.out)?;
    let data = synth_gp_dataset(&cfg.file.synth.spec(), synth_seed(cfg))?;
    let mut text = stamp.comment();
    text.push_str(&data.to_csv_string()?);
    out.write("synth.csv", &text)?;
    println!("{}", stamp.line());
    println!("{} points ({} held out)", data.n(), data.rows(Rows::Test).len());
    report_written(&out);
    Ok(())
}

fn report_written(out: &OutDir) {
    for p in out.written() {
        println!("wrote {}", p.display());
    }
}
