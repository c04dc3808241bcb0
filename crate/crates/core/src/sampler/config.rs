use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mgrf_prior::Reformulation;
use crate::pc_prior::PcRhoPrior;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    NonSpatial,
    BaseSpatial,
    Mgrf,
    MgrfPca,
    Rsr,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] =
        [ModelKind::NonSpatial, ModelKind::BaseSpatial, ModelKind::Mgrf, ModelKind::MgrfPca, ModelKind::Rsr];

    /// Row label used in comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::NonSpatial => "Non-spatial",
            ModelKind::BaseSpatial => "Base spatial",
            ModelKind::Mgrf => "MGRF spatial",
            ModelKind::MgrfPca => "MGRF-PCA spatial",
            ModelKind::Rsr => "RSR",
        }
    }

    pub fn is_spatial(self) -> bool {
        self != ModelKind::NonSpatial
    }

    /// Whether the covariate field hierarchy (μ_z, θ_z, ρ) is part of the model.
    pub fn has_z_hierarchy(self) -> bool {
        matches!(self, ModelKind::Mgrf | ModelKind::MgrfPca)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcSettings {
    pub w: u32,
    #[serde(rename = "U")]
    pub u: f64,
    pub a: f64,
}

impl Default for PcSettings {
    fn default() -> Self {
        Self { w: 2, u: 0.8, a: 0.05 }
    }
}

impl PcSettings {
    pub fn build(&self) -> Result<PcRhoPrior> {
        PcRhoPrior::new(self.w, self.u, self.a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Priors {
    pub mu_beta0: f64,
    pub sigma2_beta0: f64,
    /// Slope prior means; a single value is broadcast to every slope.
    pub mu_beta: Vec<f64>,
    /// Slope prior variances; a single value is broadcast to every slope.
    pub sigma2_beta: Vec<f64>,
    pub ig_shape: f64,
    pub ig_rate: f64,
    pub theta_tau_box: [f64; 2],
    pub theta_kappa_box: [f64; 2],
    pub mu_mu_z: f64,
    pub sigma2_mu_z: f64,
    pub pc: PcSettings,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            mu_beta0: 0.0,
            sigma2_beta0: 100f64.powi(4),
            mu_beta: vec![0.0],
            sigma2_beta: vec![100f64.powi(2)],
            ig_shape: 0.001,
            ig_rate: 0.001,
            theta_tau_box: [-10.0, 0.0],
            theta_kappa_box: [1.0, 5.0],
            mu_mu_z: 0.0,
            sigma2_mu_z: 1.0,
            pc: PcSettings::default(),
        }
    }
}

impl Priors {
    fn broadcast(v: &[f64], b: usize, what: &str) -> Result<Vec<f64>> {
        match v.len() {
            1 => Ok(vec![v[0]; b]),
            n if n == b => Ok(v.to_vec()),
            n => Err(Error::Config(format!("{what} has {n} entries for {b} slopes"))),
        }
    }

    /// Prior mean and variance of `(β₀, β)` for `b` slopes.
    pub fn beta_prior(&self, b: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut mean = vec![self.mu_beta0];
        mean.extend(Self::broadcast(&self.mu_beta, b, "mu_beta")?);
        let mut var = vec![self.sigma2_beta0];
        var.extend(Self::broadcast(&self.sigma2_beta, b, "sigma2_beta")?);
        Ok((mean, var))
    }

    pub fn in_box(&self, theta: &[f64]) -> bool {
        theta[0] > self.theta_tau_box[0]
            && theta[0] < self.theta_tau_box[1]
            && theta[1] > self.theta_kappa_box[0]
            && theta[1] < self.theta_kappa_box[1]
    }

    pub fn box_midpoint(&self) -> [f64; 2] {
        [
            0.5 * (self.theta_tau_box[0] + self.theta_tau_box[1]),
            0.5 * (self.theta_kappa_box[0] + self.theta_kappa_box[1]),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma2_beta0", self.sigma2_beta0),
            ("ig_shape", self.ig_shape),
            ("ig_rate", self.ig_rate),
            ("sigma2_mu_z", self.sigma2_mu_z),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.sigma2_beta.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("sigma2_beta entries must be positive".into()));
        }
        for (name, b) in [("theta_tau_box", self.theta_tau_box), ("theta_kappa_box", self.theta_kappa_box)] {
            if !(b[0] < b[1]) {
                return Err(Error::Config(format!("{name} must be increasing, got {b:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self { iterations: 12_000, burn_in: 6_000, thin: 1, seed: 1 }
    }
}

impl McmcSettings {
    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(Error::Config(format!(
                "iterations ({}) must exceed burn_in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        Ok(())
    }

    pub fn is_retained(&self, t: usize) -> bool {
        t >= self.burn_in && (t - self.burn_in) % self.thin == 0
    }

    pub fn retained_count(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub model: ModelKind,
    pub reformulation: Reformulation,
    pub priors: Priors,
    pub mcmc: McmcSettings,
    /// Pin ρ instead of sampling it.
    pub fix_rho: Option<f64>,
    /// Include the intercept column in the restricted-regression constraint.
    pub rsr_constrain_intercept: bool,
    /// Adapt the Metropolis proposal scales.
    pub adapt: bool,
    pub proposal_df: f64,
    pub target_acceptance: f64,
    pub initial_proposal_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Mgrf,
            reformulation: Reformulation::II,
            priors: Priors::default(),
            mcmc: McmcSettings::default(),
            fix_rho: None,
            rsr_constrain_intercept: true,
            adapt: true,
            proposal_df: 4.0,
            target_acceptance: 0.234,
            initial_proposal_scale: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn new(model: ModelKind) -> Self {
        Self { model, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.priors.validate()?;
        self.mcmc.validate()?;
        if let Some(r) = self.fix_rho {
            if !(r.abs() < 1.0) {
                return Err(Error::Config(format!("fix_rho must lie in (-1, 1), got {r}")));
            }
        }
        if !(self.proposal_df > 0.0) {
            return Err(Error::Config("proposal_df must be positive".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Config("target_acceptance must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retained_counts() {
        let m = McmcSettings { iterations: 12_000, burn_in: 6_000, thin: 1, seed: 0 };
        assert_eq!(m.retained_count(), 6000);
        assert_eq!((0..m.iterations).filter(|&t| m.is_retained(t)).count(), 6000);
        let m = McmcSettings { iterations: 100_000, burn_in: 50_000, thin: 20, seed: 0 };
        assert_eq!(m.retained_count(), 2500);
        assert_eq!((0..m.iterations).filter(|&t| m.is_retained(t)).count(), 2500);
        assert!(McmcSettings { iterations: 10, burn_in: 10, thin: 1, seed: 0 }.validate().is_err());
    }

    #[test]
    fn beta_prior_broadcast() {
        let p = Priors::default();
        let (m, v) = p.beta_prior(2).unwrap();
        assert_eq!(m, vec![0.0; 3]);
        assert_eq!(v, vec![1e8, 1e4, 1e4]);
        let p = Priors { sigma2_beta: vec![1.0, 2.0, 3.0], ..Priors::default() };
        assert!(p.beta_prior(2).is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ModelConfig { fix_rho: Some(0.2), ..ModelConfig::new(ModelKind::Rsr) };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        let partial: ModelConfig = serde_json::from_str(r#"{"model":"BaseSpatial"}"#).unwrap();
        assert_eq!(partial.priors, Priors::default());
    }
}
