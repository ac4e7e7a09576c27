//! Run configuration: file sections, command-line overrides and the hash
//! stamped into every artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vbma::data::{GpTruth, LatticeSpec};
use vbma::models::{GpPriors, DEFAULT_PRIOR_SD};
use vbma::optim::{OptimizerConfig, OptimizerKind, Schedule};
use vbma::vbma::VbmaConfig;
use vbma::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub vbma: VbmaSection,
    pub predict: PredictSection,
    pub evidence: EvidenceSection,
    pub synth: SynthSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// `crime`, `heart`, `synth` or `csv`.
    pub source: String,
    pub path: Option<String>,
    pub predictors: Vec<String>,
    pub response: Option<String>,
    pub log: Vec<String>,
    pub center: Vec<String>,
    /// Training fraction of a random split; absent means no split.
    pub split: Option<f64>,
    pub split_seed: Option<u64>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: "crime".into(),
            path: None,
            predictors: vec![],
            response: None,
            log: vec![],
            center: vec![],
            split: None,
            split_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// `zellner`, `logistic` or `gp`.
    pub family: String,
    pub g: Option<f64>,
    pub prior_sd: f64,
    pub offsets: Vec<f64>,
    /// `absolute` or `response-sd`.
    pub offset_unit: String,
    pub beta_sd: f64,
    pub eta: [f64; 2],
    pub nu: [f64; 2],
    pub sigma: [f64; 2],
}

impl Default for ModelSection {
    fn default() -> Self {
        let p = GpPriors::default();
        Self {
            family: "zellner".into(),
            g: None,
            prior_sd: DEFAULT_PRIOR_SD,
            offsets: vec![0.0, 2.0],
            offset_unit: "response-sd".into(),
            beta_sd: p.beta_sd,
            eta: [p.eta.0, p.eta.1],
            nu: [p.nu.0, p.nu.1],
            sigma: [p.sigma.0, p.sigma.1],
        }
    }
}

impl ModelSection {
    pub fn gp_priors(&self) -> GpPriors {
        GpPriors {
            beta_sd: self.beta_sd,
            eta: (self.eta[0], self.eta[1]),
            nu: (self.nu[0], self.nu[1]),
            sigma: (self.sigma[0], self.sigma[1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VbmaSection {
    pub seed: u64,
    pub samples: usize,
    pub pretrain_iters: usize,
    pub joint_iters: usize,
    pub window: usize,
    pub optimizer: String,
    /// Defaults to 0.05 for Adam and SGA, 0.01 for RMSprop.
    pub step_size: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub decay: f64,
    pub eps: f64,
    pub tolerance: f64,
    pub convergence_window: usize,
    /// Write the checkpoint every this many iterations; 0 = only at the end.
    pub checkpoint_every: usize,
}

impl Default for VbmaSection {
    fn default() -> Self {
        let c = VbmaConfig::default();
        Self {
            seed: c.seed,
            samples: c.samples,
            pretrain_iters: c.pretrain_iters,
            joint_iters: c.joint_iters,
            window: c.window,
            optimizer: "adam".into(),
            step_size: None,
            beta1: 0.9,
            beta2: 0.999,
            decay: 0.9,
            eps: 1e-8,
            tolerance: c.tolerance,
            convergence_window: c.convergence_window,
            checkpoint_every: 0,
        }
    }
}

impl VbmaSection {
    pub fn optimizer_config(&self) -> Result<OptimizerConfig> {
        let kind = match self.optimizer.as_str() {
            "adam" => OptimizerKind::Adam { beta1: self.beta1, beta2: self.beta2, eps: self.eps },
            "rmsprop" => OptimizerKind::RmsProp { decay: self.decay, eps: self.eps },
            "sga" => OptimizerKind::Sga,
            other => return Err(Error::Config(format!("unknown optimizer `{other}` (adam, rmsprop, sga)"))),
        };
        let rho = self.step_size.unwrap_or(if matches!(kind, OptimizerKind::RmsProp { .. }) { 0.01 } else { 0.05 });
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Config(format!("step size must be positive, got {rho}")));
        }
        Ok(OptimizerConfig { kind, schedule: Schedule::Constant(rho) })
    }

    pub fn to_core(&self, threads: Option<usize>) -> Result<VbmaConfig> {
        let cfg = VbmaConfig {
            samples: self.samples,
            pretrain_iters: self.pretrain_iters,
            joint_iters: self.joint_iters,
            window: self.window,
            seed: self.seed,
            optimizer: self.optimizer_config()?,
            tolerance: self.tolerance,
            convergence_window: self.convergence_window,
            threads,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictSection {
    pub draws: usize,
    pub levels: Vec<f64>,
    /// Include observation noise in predictive draws.
    pub noise: bool,
    pub coefficient_draws: usize,
}

impl Default for PredictSection {
    fn default() -> Self {
        Self { draws: 2000, levels: vbma::predict::default_levels(), noise: true, coefficient_draws: 4000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvidenceSection {
    /// Prior draws per model for Monte Carlo evidence.
    pub draws: usize,
}

impl Default for EvidenceSection {
    fn default() -> Self {
        Self { draws: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    /// Lattice draw seed; defaults to the run seed.
    pub seed: Option<u64>,
    pub side: usize,
    pub test_columns: usize,
    pub beta: f64,
    pub eta: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub sigma: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = LatticeSpec::default();
        Self {
            seed: None,
            side: s.side,
            test_columns: s.test_columns,
            beta: s.truth.beta,
            eta: s.truth.eta,
            nu1: s.truth.nu1,
            nu2: s.truth.nu2,
            sigma: s.truth.sigma,
        }
    }
}

impl SynthSection {
    pub fn spec(&self) -> LatticeSpec {
        LatticeSpec {
            side: self.side,
            test_columns: self.test_columns,
            truth: GpTruth { beta: self.beta, eta: self.eta, nu1: self.nu1, nu2: self.nu2, sigma: self.sigma },
        }
    }
}

/// Values given on the command line or through `VBMA_*` variables; each
/// replaces the corresponding file value when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub optimizer: Option<String>,
    pub step_size: Option<f64>,
    pub samples: Option<usize>,
    pub pretrain_iters: Option<usize>,
    pub joint_iters: Option<usize>,
    pub window: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config `{}`: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config: {}", e.message().trim())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        let v = &mut self.vbma;
        if let Some(x) = o.seed {
            v.seed = x;
        }
        if let Some(x) = &o.optimizer {
            v.optimizer = x.clone();
        }
        if let Some(x) = o.step_size {
            v.step_size = Some(x);
        }
        if let Some(x) = o.samples {
            v.samples = x;
        }
        if let Some(x) = o.pretrain_iters {
            v.pretrain_iters = x;
        }
        if let Some(x) = o.joint_iters {
            v.joint_iters = x;
        }
        if let Some(x) = o.window {
            v.window = x;
        }
    }

    /// Canonical text of the resolved configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of [`FileConfig::canonical`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Everything a subcommand needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub file: FileConfig,
    /// Directory of the config file, against which relative data paths
    /// are resolved.
    pub base_dir: PathBuf,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub svg: bool,
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.file.vbma.seed
    }

    pub fn data_path(&self) -> Result<PathBuf> {
        let p = self.file.data.path.as_ref().ok_or_else(|| Error::Config("[data] path is required for source = \"csv\"".into()))?;
        let p = PathBuf::from(p);
        Ok(if p.is_absolute() { p } else { self.base_dir.join(p) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(FileConfig::parse("").unwrap(), FileConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = FileConfig::parse("[vbma]\nsamplez = 3\n").unwrap_err();
        assert!(err.to_string().contains("samplez"), "{err}");
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut c = FileConfig::default();
        c.vbma.seed = 42;
        c.model.family = "gp".into();
        assert_eq!(FileConfig::parse(&c.canonical()).unwrap(), c);
    }

    #[test]
    fn overrides_change_the_hash() {
        let a = FileConfig::default();
        let mut b = a.clone();
        b.apply(&Overrides { seed: Some(1), ..Overrides::default() });
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), FileConfig::default().hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn optimizer_names() {
        let mut v = VbmaSection::default();
        assert!(v.optimizer_config().is_ok());
        v.optimizer = "adagrad".into();
        assert!(v.optimizer_config().is_err());
    }
}
