//! Stochastic-gradient ascent: plain Robbins–Monro steps, Adam and RMSprop.
//!
//! All optimizers ASCEND: the update moves in the direction of the gradient.

use crate::error::{Error, Result};

/// Step-size sequence `ρ_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant(f64),
    /// `ρ_t = a / (b + t)^kappa`, `t = 1, 2, ...`
    Polynomial { a: f64, b: f64, kappa: f64 },
}

impl Schedule {
    pub fn rate(&self, t: u64) -> f64 {
        match *self {
            Schedule::Constant(rho) => rho,
            Schedule::Polynomial { a, b, kappa } => a / (b + t as f64).powf(kappa),
        }
    }
}

/// Whether the schedule satisfies `Σ ρ_t = ∞` and `Σ ρ_t² < ∞`.
///
/// Constant schedules fail the second condition; they are still usable.
pub fn robbins_monro_check(schedule: &Schedule) -> bool {
    match *schedule {
        Schedule::Constant(_) => false,
        Schedule::Polynomial { a, kappa, .. } => a > 0.0 && kappa > 0.5 && kappa <= 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sga,
    Adam { beta1: f64, beta2: f64, eps: f64 },
    RmsProp { decay: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn rmsprop() -> Self {
        OptimizerKind::RmsProp { decay: 0.9, eps: 1e-8 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sga => "sga",
            OptimizerKind::Adam { .. } => "adam",
            OptimizerKind::RmsProp { .. } => "rmsprop",
        }
    }
}

/// Optimizer choice together with its step-size schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub schedule: Schedule,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(0.05)
    }
}

impl OptimizerConfig {
    pub fn adam(rho: f64) -> Self {
        Self { kind: OptimizerKind::adam(), schedule: Schedule::Constant(rho) }
    }

    pub fn rmsprop(rho: f64) -> Self {
        Self { kind: OptimizerKind::rmsprop(), schedule: Schedule::Constant(rho) }
    }

    /// Parses `adam`, `rmsprop` or `sga` with the given constant step size.
    pub fn from_name(name: &str, rho: f64) -> Result<Self> {
        let kind = match name {
            "adam" => OptimizerKind::adam(),
            "rmsprop" => OptimizerKind::rmsprop(),
            "sga" => OptimizerKind::Sga,
            other => return Err(Error::Config(format!("unknown optimizer `{other}`"))),
        };
        Ok(Self { kind, schedule: Schedule::Constant(rho) })
    }
}

/// Per-coordinate optimizer memory for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    /// First moment (Adam only).
    pub m: Vec<f64>,
    /// Second moment (Adam) or mean-square accumulator (RMSprop).
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, dim: usize) -> Self {
        Self { config, m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }

    /// One ascent step on `params` along `grad`. A non-finite gradient is
    /// rejected and leaves both `params` and the state untouched.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != grad.len() {
            return Err(Error::Dimension { expected: params.len(), got: grad.len() });
        }
        if params.len() != self.v.len() {
            return Err(Error::Dimension { expected: self.v.len(), got: params.len() });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite { op: format!("gradient coordinate {i}"), node: i });
        }
        self.t += 1;
        let rho = self.config.schedule.rate(self.t);
        match self.config.kind {
            OptimizerKind::Sga => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p += rho * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t.min(i32::MAX as u64) as i32);
                let c2 = 1.0 - beta2.powi(self.t.min(i32::MAX as u64) as i32);
                for i in 0..params.len() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    params[i] += rho * m_hat / (v_hat.sqrt() + eps);
                }
            }
            OptimizerKind::RmsProp { decay, eps } => {
                for i in 0..params.len() {
                    self.v[i] = decay * self.v[i] + (1.0 - decay) * grad[i] * grad[i];
                    params[i] += rho * grad[i] / (self.v[i].sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn adam_first_step_is_signed_step_size() {
        let mut st = OptimizerState::new(
            OptimizerConfig { kind: OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 0.0 }, schedule: Schedule::Constant(0.1) },
            3,
        );
        let mut p = vec![1.0, 1.0, 1.0];
        st.step(&mut p, &[0.003, -250.0, 7.0]).unwrap();
        assert!((p[0] - 1.1).abs() < 1e-12);
        assert!((p[1] - 0.9).abs() < 1e-12);
        assert!((p[2] - 1.1).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        for cfg in [OptimizerConfig::adam(0.05), OptimizerConfig::rmsprop(0.01), OptimizerConfig::from_name("sga", 0.1).unwrap()] {
            let mut st = OptimizerState::new(cfg, 2);
            let mut p = vec![0.5, -2.0];
            st.step(&mut p, &[0.0, 0.0]).unwrap();
            assert_eq!(p, vec![0.5, -2.0]);
        }
    }

    #[test]
    fn adam_climbs_concave_quadratic() {
        let mut st = OptimizerState::new(OptimizerConfig::adam(0.1), 1);
        let mut p = vec![0.0];
        for _ in 0..1000 {
            let g = -2.0 * (p[0] - 3.0);
            st.step(&mut p, &[g]).unwrap();
        }
        assert!((p[0] - 3.0).abs() < 0.01, "{}", p[0]);
    }

    #[test]
    fn rmsprop_climbs_concave_quadratic() {
        let mut st = OptimizerState::new(OptimizerConfig::rmsprop(0.01), 1);
        let mut p = vec![0.0];
        for _ in 0..2000 {
            let g = -2.0 * (p[0] - 3.0);
            st.step(&mut p, &[g]).unwrap();
        }
        assert!((p[0] - 3.0).abs() < 0.02, "{}", p[0]);
    }

    #[test]
    fn non_finite_gradient_rejected_without_state_change() {
        let mut st = OptimizerState::new(OptimizerConfig::adam(0.05), 2);
        let mut p = vec![1.0, 2.0];
        st.step(&mut p, &[0.5, 0.5]).unwrap();
        let before = (st.clone(), p.clone());
        assert!(st.step(&mut p, &[f64::NAN, 1.0]).is_err());
        assert_eq!(before, (st, p));
    }

    #[test]
    fn robbins_monro_schedules() {
        assert!(robbins_monro_check(&Schedule::Polynomial { a: 1.0, b: 0.0, kappa: 1.0 }));
        assert!(!robbins_monro_check(&Schedule::Polynomial { a: 1.0, b: 0.0, kappa: 2.0 }));
        assert!(!robbins_monro_check(&Schedule::Constant(0.05)));
        assert!(robbins_monro_check(&Schedule::Polynomial { a: 0.5, b: 10.0, kappa: 0.7 }));
        assert!(!robbins_monro_check(&Schedule::Polynomial { a: 0.5, b: 10.0, kappa: 0.5 }));
    }

    #[test]
    fn decaying_schedule_rates() {
        let s = Schedule::Polynomial { a: 1.0, b: 0.0, kappa: 1.0 };
        assert_eq!(s.rate(1), 1.0);
        assert_eq!(s.rate(4), 0.25);
    }

    proptest! {
        #[test]
        fn adam_first_step_scale_invariant(g in prop::collection::vec(-1e3f64..1e3, 1..6), scale in 0.1f64..100.0) {
            prop_assume!(g.iter().all(|x| x.abs() > 1e-3));
            let mut a = OptimizerState::new(OptimizerConfig::adam(0.05), g.len());
            let mut b = a.clone();
            let mut pa = vec![0.0; g.len()];
            let mut pb = pa.clone();
            a.step(&mut pa, &g).unwrap();
            let gs: Vec<f64> = g.iter().map(|x| x * scale).collect();
            b.step(&mut pb, &gs).unwrap();
            for (x, y) in pa.iter().zip(&pb) {
                prop_assert!((x - y).abs() <= 1e-6 * x.abs());
            }
        }

        #[test]
        fn second_moment_nonnegative_and_counter_increments(gs in prop::collection::vec(-10.0f64..10.0, 1..50)) {
            let mut st = OptimizerState::new(OptimizerConfig::adam(0.05), 1);
            let mut p = vec![0.0];
            for (k, g) in gs.iter().enumerate() {
                st.step(&mut p, &[*g]).unwrap();
                prop_assert_eq!(st.t, k as u64 + 1);
                prop_assert!(st.v[0] >= 0.0);
            }
        }
    }
}
