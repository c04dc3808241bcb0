use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mgrf::cli_io::ApplicationConfig;
use mgrf::mgrf_prior::Reformulation;
use mgrf::sampler::ModelConfig;
use mgrf::sim_harness::{preset_paper_multivariate, preset_paper_univariate, preset_smoke, ScenarioConfig};
use serde::{Deserialize, Serialize};

/// Contents of the `--config` TOML file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub simulate: SimulateSection,
    pub application: ApplicationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// `smoke`, `scenario4`, `paper-univariate` or `paper-multivariate`;
    /// ignored when `scenarios` is non-empty.
    pub preset: String,
    pub n_replicates: Option<usize>,
    /// Keep only scenarios whose name contains this string.
    pub filter: Option<String>,
    /// Explicit scenarios.
    pub scenarios: Vec<ScenarioConfig>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { preset: "smoke".into(), n_replicates: None, filter: None, scenarios: vec![] }
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn scenarios(&self) -> anyhow::Result<Vec<ScenarioConfig>> {
        let s = &self.simulate;
        let mut list = if !s.scenarios.is_empty() {
            s.scenarios.clone()
        } else {
            let n = s.n_replicates.unwrap_or(50);
            match s.preset.as_str() {
                "smoke" => vec![preset_smoke()],
                "scenario4" => {
                    let mut sc = ScenarioConfig::univariate(0.7, 0.1, 0.9);
                    sc.name = "scenario4".into();
                    sc.n_replicates = n;
                    vec![sc]
                }
                "paper-univariate" => preset_paper_univariate(n),
                "paper-multivariate" => preset_paper_multivariate(n),
                other => bail!("unknown preset `{other}`"),
            }
        };
        if let Some(n) = s.n_replicates {
            list.iter_mut().for_each(|sc| sc.n_replicates = n);
        }
        if let Some(f) = &s.filter {
            list.retain(|sc| sc.name.contains(f.as_str()));
        }
        Ok(list)
    }
}

/// Command-line overrides shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub reformulation: Option<Reformulation>,
    pub pc_u: Option<f64>,
    pub pc_a: Option<f64>,
    pub pc_w: Option<u32>,
    pub iters: Option<usize>,
    pub burnin: Option<usize>,
    pub thin: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ModelConfig) {
        if let Some(r) = self.reformulation {
            cfg.reformulation = r;
        }
        if let Some(u) = self.pc_u {
            cfg.priors.pc.u = u;
        }
        if let Some(a) = self.pc_a {
            cfg.priors.pc.a = a;
        }
        if let Some(w) = self.pc_w {
            cfg.priors.pc.w = w;
        }
        if let Some(i) = self.iters {
            cfg.mcmc.iterations = i;
        }
        if let Some(b) = self.burnin {
            cfg.mcmc.burn_in = b;
        }
        if let Some(t) = self.thin {
            cfg.mcmc.thin = t;
        }
        if let Some(s) = self.seed {
            cfg.mcmc.seed = s;
        }
    }

    pub fn apply_scenario(&self, sc: &mut ScenarioConfig) {
        self.apply(&mut sc.fit);
        if let Some(s) = self.seed {
            sc.seed = s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested_priors() {
        let cfg = CliConfig::from_toml(
            r#"
            seed = 7
            [simulate]
            preset = "paper-univariate"
            n_replicates = 2
            filter = "rho0.7_rg0.1_rz0.9"
            [application.fit.priors]
            sigma2_mu_z = 2.0
            [application.fit.priors.pc]
            U = 0.7
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.application.fit.priors.pc.u, 0.7);
        assert_eq!(cfg.application.fit.priors.sigma2_mu_z, 2.0);
        let sc = cfg.scenarios().unwrap();
        assert_eq!(sc.len(), 1);
        assert_eq!(sc[0].n_replicates, 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(CliConfig::from_toml("[application.fit.priors]\nsigma2_mu = 1.0\n").is_err());
        assert!(CliConfig::from_toml("[simulate]\npreset = \"nope\"\n").unwrap().scenarios().is_err());
    }
}
