//! Mean-field variational families.
//!
//! Real-valued parameters get a normal factor, positive parameters a
//! log-normal factor. Each factor is described by a location `mu` and an
//! unconstrained value `raw` whose softplus, `log(e^raw + 1)`, is the
//! variance of the (log-)normal. The optimizer works on `(mu, raw)` directly.
//!
//! Note: the map `raw = log(e^v - 1)` is the encoder and softplus the
//! decoder; the decoded value is a variance, not a standard deviation.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{softplus, Var};
use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Variance used when a state is created with default initialization.
pub const DEFAULT_INITIAL_VARIANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    Real,
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyTag {
    Normal,
    LogNormal,
}

impl FamilyTag {
    pub fn for_support(support: Support) -> Self {
        match support {
            Support::Real => FamilyTag::Normal,
            Support::Positive => FamilyTag::LogNormal,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            FamilyTag::Normal => "normal",
            FamilyTag::LogNormal => "lognormal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(FamilyTag::Normal),
            "lognormal" => Ok(FamilyTag::LogNormal),
            other => Err(Error::Config(format!("unknown variational family `{other}`"))),
        }
    }
}

/// One named coordinate of a model's parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub support: Support,
}

/// Named, flat parameter layout of a model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamLayout {
    params: Vec<ParamSpec>,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn real(mut self, name: impl Into<String>) -> Self {
        self.params.push(ParamSpec { name: name.into(), support: Support::Real });
        self
    }

    pub fn positive(mut self, name: impl Into<String>) -> Self {
        self.params.push(ParamSpec { name: name.into(), support: Support::Positive });
        self
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn tags(&self) -> Vec<FamilyTag> {
        self.params.iter().map(|p| FamilyTag::for_support(p.support)).collect()
    }
}

/// Softplus decoder: unconstrained value to (positive) variance.
pub fn decode_scale(raw: f64) -> f64 {
    softplus(raw)
}

/// Inverse of [`decode_scale`]: `log(e^v - 1)`, computed stably.
pub fn encode_scale(variance: f64) -> Result<f64> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::Domain(format!("scale must be positive and finite, got {variance}")));
    }
    Ok(if variance > 30.0 { variance + (-(-variance).exp()).ln_1p() } else { variance.exp_m1().ln() })
}

/// Variational parameters of one model: per-coordinate location and
/// unconstrained scale, plus the family of each coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub names: Vec<String>,
    pub tags: Vec<FamilyTag>,
    pub mu: Vec<f64>,
    pub raw: Vec<f64>,
}

impl VariationalState {
    /// Default initialization: `mu = 0` everywhere (median 1 for log-normal
    /// coordinates) and variance [`DEFAULT_INITIAL_VARIANCE`].
    pub fn init(layout: &ParamLayout) -> Self {
        let raw0 = encode_scale(DEFAULT_INITIAL_VARIANCE).expect("positive constant");
        Self {
            names: layout.names().map(str::to_owned).collect(),
            tags: layout.tags(),
            mu: vec![0.0; layout.len()],
            raw: vec![raw0; layout.len()],
        }
    }

    pub fn new(names: Vec<String>, tags: Vec<FamilyTag>, mu: Vec<f64>, raw: Vec<f64>) -> Result<Self> {
        let n = tags.len();
        for len in [names.len(), mu.len(), raw.len()] {
            if len != n {
                return Err(Error::Dimension { expected: n, got: len });
            }
        }
        Ok(Self { names, tags, mu, raw })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn variance(&self, i: usize) -> f64 {
        decode_scale(self.raw[i])
    }

    pub fn std_dev(&self, i: usize) -> f64 {
        self.variance(i).sqrt()
    }

    /// Flattened variational parameter vector `(mu, raw)`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.mu.iter().chain(&self.raw).copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let d = self.dim();
        if flat.len() != 2 * d {
            return Err(Error::Dimension { expected: 2 * d, got: flat.len() });
        }
        self.mu.copy_from_slice(&flat[..d]);
        self.raw.copy_from_slice(&flat[d..]);
        Ok(())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: len });
        }
        Ok(())
    }

    /// `t(z, λ)`: maps a standard-normal vector to a draw from the family.
    pub fn reparam_sample(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_len(z.len())?;
        Ok((0..self.dim())
            .map(|i| {
                let u = z[i] * self.std_dev(i) + self.mu[i];
                match self.tags[i] {
                    FamilyTag::Normal => u,
                    FamilyTag::LogNormal => u.exp(),
                }
            })
            .collect())
    }

    /// Draws one parameter vector.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.reparam_sample(&z).expect("length matches by construction")
    }

    /// Log density of the family at `theta`.
    pub fn log_q(&self, theta: &[f64]) -> Result<f64> {
        self.check_len(theta.len())?;
        let mut total = 0.0;
        for i in 0..self.dim() {
            let var = self.variance(i);
            let (u, jac) = match self.tags[i] {
                FamilyTag::Normal => (theta[i], 0.0),
                FamilyTag::LogNormal => {
                    if theta[i] <= 0.0 {
                        return Err(Error::Domain(format!(
                            "log-normal coordinate `{}` must be positive, got {}",
                            self.names[i], theta[i]
                        )));
                    }
                    let l = theta[i].ln();
                    (l, l)
                }
            };
            total += -0.5 * (2.0 * PI * var).ln() - (u - self.mu[i]).powi(2) / (2.0 * var) - jac;
        }
        Ok(total)
    }

    /// Differentiable `t(z, λ)` where `mu` and `raw` are tape variables.
    pub fn reparam_vars<'t>(mu: &[Var<'t>], raw: &[Var<'t>], tags: &[FamilyTag], z: &[f64]) -> Vec<Var<'t>> {
        (0..tags.len())
            .map(|i| {
                let u = raw[i].softplus().sqrt() * z[i] + mu[i];
                match tags[i] {
                    FamilyTag::Normal => u,
                    FamilyTag::LogNormal => u.exp(),
                }
            })
            .collect()
    }

    /// Differentiable log density where `theta`, `mu` and `raw` are all
    /// tape variables (any of them may be constants).
    pub fn log_q_vars<'t>(theta: &[Var<'t>], mu: &[Var<'t>], raw: &[Var<'t>], tags: &[FamilyTag]) -> Var<'t> {
        let tape = theta[0].tape();
        let terms: Vec<Var<'t>> = (0..tags.len())
            .map(|i| {
                let var = raw[i].softplus();
                match tags[i] {
                    FamilyTag::Normal => {
                        -(var.ln() * 0.5) - (theta[i] - mu[i]).square() / (var * 2.0) - HALF_LN_2PI
                    }
                    FamilyTag::LogNormal => {
                        let l = theta[i].ln();
                        -(var.ln() * 0.5) - (l - mu[i]).square() / (var * 2.0) - HALF_LN_2PI - l
                    }
                }
            })
            .collect();
        tape.sum(&terms)
    }

    /// Flat key-value text block: one line per coordinate,
    /// `name = family mu raw`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.dim() {
            let _ = writeln!(out, "{} = {} {:?} {:?}", self.names[i], self.tags[i].as_str(), self.mu[i], self.raw[i]);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut state = Self { names: vec![], tags: vec![], mu: vec![], raw: vec![] };
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: &str| Error::Parse { line: lineno + 1, message: m.to_owned() };
            let (name, rest) = line.split_once('=').ok_or_else(|| err("expected `name = family mu raw`"))?;
            let fields: Vec<&str> = rest.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(err("expected three fields after `=`"));
            }
            state.names.push(name.trim().to_owned());
            state.tags.push(FamilyTag::parse(fields[0])?);
            state.mu.push(fields[1].parse().map_err(|_| err("bad location"))?);
            state.raw.push(fields[2].parse().map_err(|_| err("bad scale"))?);
        }
        Ok(state)
    }
}
