//! Scenario generation, replicate execution and evaluation metrics for the
//! simulation studies.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as StdNormal};

use crate::error::{Error, Result};
use crate::mesh_fem::{assemble_fem, build_mesh, project, FemMatrices, Rect, TriMesh};
use crate::mgrf_prior::Reformulation;
use crate::sampler::{median, run_chain, ChainOutput, McmcSettings, ModelConfig, ModelKind, Observations, SpatialDesign};
use crate::sparse_la::{standard_normals, Ordering};
use crate::spde::interpretable_to_params;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Study {
    Univariate,
    Multivariate,
}

/// Declarative description of one simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub study: Study,
    /// Correlation between γ and each covariate field.
    pub rho_true: Vec<f64>,
    pub range_gamma: f64,
    /// Range of each covariate field.
    pub range_z: Vec<f64>,
    /// `(β₀, β₁, …)`.
    pub beta_true: Vec<f64>,
    pub sigma2_eps: f64,
    pub mu_z_true: f64,
    pub n_obs: usize,
    pub n_replicates: usize,
    pub mesh_nodes: usize,
    pub mesh_extension: f64,
    pub models: Vec<ModelKind>,
    /// Template for every fitted model (priors, MCMC lengths, reformulation).
    pub fit: ModelConfig,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let mut fit = ModelConfig::new(ModelKind::Mgrf);
        fit.reformulation = Reformulation::I;
        fit.priors.sigma2_mu_z = 0.1 * 0.1;
        Self {
            name: "scenario".into(),
            study: Study::Univariate,
            rho_true: vec![0.0],
            range_gamma: 0.5,
            range_z: vec![0.5],
            beta_true: vec![-1.5, 1.0],
            sigma2_eps: 0.1,
            mu_z_true: 0.0,
            n_obs: 500,
            n_replicates: 50,
            mesh_nodes: 523,
            mesh_extension: 0.2,
            models: vec![ModelKind::NonSpatial, ModelKind::BaseSpatial, ModelKind::Rsr, ModelKind::Mgrf],
            fit,
            seed: 2024,
        }
    }
}

/// PC-prior scale used by the presets for a true correlation.
pub fn default_pc_u(rho_true: f64) -> f64 {
    if (rho_true.abs() - 0.7).abs() < 1e-9 {
        0.9
    } else {
        0.5
    }
}

impl ScenarioConfig {
    /// Univariate scenario with one covariate.
    pub fn univariate(rho: f64, range_gamma: f64, range_z: f64) -> Self {
        let mut s = Self {
            name: format!("uni_rho{rho}_rg{range_gamma}_rz{range_z}"),
            rho_true: vec![rho],
            range_gamma,
            range_z: vec![range_z],
            ..Self::default()
        };
        s.fit.priors.pc.u = default_pc_u(rho);
        s
    }

    /// Two covariates with `r_z1 = 0.5`.
    pub fn multivariate(rho: [f64; 2], range_gamma: f64, range_z2: f64) -> Self {
        let mut s = Self {
            name: format!("multi_rho{}_{}_rg{range_gamma}_rz2{range_z2}", rho[0], rho[1]),
            study: Study::Multivariate,
            rho_true: rho.to_vec(),
            range_gamma,
            range_z: vec![0.5, range_z2],
            beta_true: vec![-1.5, 1.0, -0.5],
            models: vec![ModelKind::NonSpatial, ModelKind::BaseSpatial, ModelKind::Rsr, ModelKind::Mgrf, ModelKind::MgrfPca],
            ..Self::default()
        };
        let dominant = rho.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        s.fit.priors.pc.u = default_pc_u(dominant);
        s
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.range_z.len();
        if b == 0 || self.rho_true.len() != b || self.beta_true.len() != b + 1 {
            return Err(Error::Config(format!(
                "scenario {}: need matching rho_true ({}), range_z ({}) and beta_true ({}) lengths",
                self.name,
                self.rho_true.len(),
                b,
                self.beta_true.len()
            )));
        }
        if self.rho_true.iter().any(|r| !(r.abs() <= 1.0)) {
            return Err(Error::Config(format!("scenario {}: every ρ must lie in [-1, 1]", self.name)));
        }
        if self.n_replicates == 0 || self.n_obs == 0 {
            return Err(Error::Config(format!("scenario {}: need at least one replicate and observation", self.name)));
        }
        if !(self.sigma2_eps > 0.0) {
            return Err(Error::Config(format!("scenario {}: sigma2_eps must be positive", self.name)));
        }
        self.fit.validate()
    }

    pub fn mesh(&self) -> Result<TriMesh> {
        build_mesh(Rect::unit(), self.mesh_nodes, self.mesh_extension)
    }

    /// Seed of the MCMC chains fitted to replicate `r`; shared by all models.
    pub fn chain_seed(&self, replicate: usize) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(replicate as u64 + 1)
    }

    fn data_rng(&self, replicate: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(replicate as u64);
        rng
    }
}

/// Ranges crossed for γ and the covariate fields in the presets.
pub const PRESET_RANGES: [f64; 3] = [0.1, 0.5, 0.9];

/// Every scenario of the univariate study: 9 range pairs × 5 correlations.
pub fn preset_paper_univariate(n_replicates: usize) -> Vec<ScenarioConfig> {
    let mut out = Vec::new();
    for rho in [0.0, 0.3, -0.3, 0.7, -0.7] {
        for rg in PRESET_RANGES {
            for rz in PRESET_RANGES {
                out.push(ScenarioConfig { n_replicates, ..ScenarioConfig::univariate(rho, rg, rz) });
            }
        }
    }
    out
}

/// Every scenario of the two-covariate study: 9 range pairs × 3 correlation pairs.
pub fn preset_paper_multivariate(n_replicates: usize) -> Vec<ScenarioConfig> {
    let mut out = Vec::new();
    for rho in [[0.0, 0.3], [0.7, 0.3], [-0.3, 0.7]] {
        for rg in PRESET_RANGES {
            for rz in PRESET_RANGES {
                out.push(ScenarioConfig { n_replicates, ..ScenarioConfig::multivariate(rho, rg, rz) });
            }
        }
    }
    out
}

/// One small replicate of Scenario 4 with short chains.
pub fn preset_smoke() -> ScenarioConfig {
    let mut s = ScenarioConfig::univariate(0.7, 0.1, 0.9);
    s.name = "smoke".into();
    s.n_replicates = 1;
    s.n_obs = 100;
    s.mesh_nodes = 100;
    s.fit.mcmc = McmcSettings { iterations: 300, burn_in: 100, thin: 1, seed: 1 };
    s
}

/// One simulated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Replicate {
    pub locations: Vec<[f64; 2]>,
    pub observations: Observations,
    pub gamma_true: Vec<f64>,
}

/// Draw γ and the covariate fields sharing γ's driving noise:
/// `z_b = μ 1 + R_{z_b}⁻ᵀ(ρ_b u + √(1−ρ_b²) v_b)`.
pub fn generate_replicate<R: Rng + ?Sized>(
    scenario: &ScenarioConfig,
    mesh: &TriMesh,
    fem: &FemMatrices,
    rng: &mut R,
) -> Result<(Replicate, SpatialDesign)> {
    scenario.validate()?;
    let locations: Vec<[f64; 2]> = (0..scenario.n_obs).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let psi = project(mesh, &locations)?;
    let design = SpatialDesign::new(fem, psi, Ordering::FillReducing)?;
    let m = mesh.num_nodes();
    let f_gamma = design.factor(&interpretable_to_params(1.0, scenario.range_gamma)?)?;
    let u = standard_normals(m, rng);
    let gamma = f_gamma.solve_upper(&u)?;
    let mut z_fields = Vec::with_capacity(scenario.range_z.len());
    for (&r, &rho) in scenario.range_z.iter().zip(&scenario.rho_true) {
        let f_z = design.factor(&interpretable_to_params(1.0, r)?)?;
        let v = standard_normals(m, rng);
        let s = (1.0 - rho * rho).sqrt();
        let mixed: Vec<f64> = u.iter().zip(&v).map(|(a, b)| rho * a + s * b).collect();
        let mut z = f_z.solve_upper(&mixed)?;
        z.iter_mut().for_each(|x| *x += scenario.mu_z_true);
        z_fields.push(z);
    }
    let psi = design.projector();
    let covariates = z_fields.iter().map(|z| psi.apply(z)).collect::<Result<Vec<_>>>()?;
    let spatial = psi.apply(&gamma)?;
    let noise = Normal::new(0.0, scenario.sigma2_eps.sqrt()).map_err(|e| Error::Config(e.to_string()))?;
    let y = (0..scenario.n_obs)
        .map(|i| {
            let fixed: f64 =
                scenario.beta_true[0] + covariates.iter().zip(&scenario.beta_true[1..]).map(|(x, b)| b * x[i]).sum::<f64>();
            fixed + spatial[i] + noise.sample(rng)
        })
        .collect();
    let replicate = Replicate { locations, observations: Observations { y, covariates, z_fields }, gamma_true: gamma };
    Ok((replicate, design))
}

/// Closed-form CRPS of `N(mu, sigma²)` at `y`.
pub fn crps_gaussian(mu: f64, sigma: f64, y: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::NonPositiveSigma(sigma));
    }
    let std = StdNormal::standard();
    let z = (y - mu) / sigma;
    Ok(sigma * (z * (2.0 * std.cdf(z) - 1.0) + 2.0 * std.pdf(z) - 1.0 / std::f64::consts::PI.sqrt()))
}

/// Posterior summary of one parameter in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub parameter: String,
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub bias: f64,
    pub covers: bool,
}

/// Result of fitting one model to one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub scenario: String,
    pub replicate: usize,
    pub model: ModelKind,
    pub params: Vec<ParamRecord>,
    /// Mean CRPS of the in-sample Gaussian predictive.
    pub crps: f64,
    /// `Σ_b |bias(β_b)|` over the slopes.
    pub bias_bstar: f64,
    pub acceptance: Vec<(String, f64)>,
    pub max_constraint_residual: Option<f64>,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

impl CellResult {
    pub fn param(&self, name: &str) -> Option<&ParamRecord> {
        self.params.iter().find(|p| p.parameter == name)
    }

    pub fn recomputed_bias_bstar(&self) -> f64 {
        self.params.iter().filter(|p| p.parameter.starts_with("beta") && p.parameter != "beta0").map(|p| p.bias.abs()).sum()
    }
}

fn cell_from_output(scenario: &ScenarioConfig, replicate: usize, y: &[f64], out: &ChainOutput, wall: f64) -> Result<CellResult> {
    let mut truths: Vec<(String, f64)> =
        scenario.beta_true.iter().enumerate().map(|(k, b)| (format!("beta{k}"), *b)).collect();
    truths.push(("sigma2".into(), scenario.sigma2_eps));
    // With several covariates ρ refers to the aggregated field and has no
    // single true value.
    if out.model.has_z_hierarchy() && scenario.rho_true.len() == 1 {
        truths.push(("rho".into(), scenario.rho_true[0]));
    }
    let params: Vec<ParamRecord> = truths
        .into_iter()
        .filter_map(|(name, truth)| {
            let s = out.summary.get(&name)?;
            Some(ParamRecord {
                parameter: name,
                truth,
                mean: s.mean,
                sd: s.sd,
                q025: s.q025,
                q975: s.q975,
                bias: s.mean - truth,
                covers: s.covers(truth),
            })
        })
        .collect();
    let mut crps = 0.0;
    for i in 0..y.len() {
        let sd = (out.eta_var[i] + out.sigma2_mean).sqrt();
        crps += crps_gaussian(out.eta_mean[i], sd, y[i])?;
    }
    let mut cell = CellResult {
        scenario: scenario.name.clone(),
        replicate,
        model: out.model,
        params,
        crps: crps / y.len() as f64,
        bias_bstar: 0.0,
        acceptance: out.summary.acceptance.clone(),
        max_constraint_residual: out.max_constraint_residual,
        wall_time_s: wall,
        error: None,
    };
    cell.bias_bstar = cell.recomputed_bias_bstar();
    Ok(cell)
}

/// Fit every model in `scenario.models` to replicate `r`.
pub fn run_replicate(scenario: &ScenarioConfig, mesh: &TriMesh, fem: &FemMatrices, replicate: usize, models: &[ModelKind]) -> Vec<CellResult> {
    let fail = |model: ModelKind, e: Error| CellResult {
        scenario: scenario.name.clone(),
        replicate,
        model,
        params: vec![],
        crps: f64::NAN,
        bias_bstar: f64::NAN,
        acceptance: vec![],
        max_constraint_residual: None,
        wall_time_s: 0.0,
        error: Some(e.to_string()),
    };
    let mut rng = scenario.data_rng(replicate);
    let (rep, design) = match generate_replicate(scenario, mesh, fem, &mut rng) {
        Ok(v) => v,
        Err(e) => {
            let msg = e.to_string();
            return models.iter().map(|&m| fail(m, Error::Config(msg.clone()))).collect();
        }
    };
    models
        .iter()
        .map(|&model| {
            let mut cfg = ModelConfig { model, ..scenario.fit.clone() };
            cfg.mcmc.seed = scenario.chain_seed(replicate);
            let start = Instant::now();
            match run_chain(&cfg, Some(&design), &rep.observations) {
                Ok(out) => {
                    let wall = start.elapsed().as_secs_f64();
                    cell_from_output(scenario, replicate, &rep.observations.y, &out, wall).unwrap_or_else(|e| fail(model, e))
                }
                Err(e) => {
                    log::warn!("{} replicate {replicate} {}: {e}", scenario.name, model.label());
                    fail(model, e)
                }
            }
        })
        .collect()
}

/// All cells of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub scenario: ScenarioConfig,
    pub cells: Vec<CellResult>,
}

fn model_slug(model: ModelKind) -> &'static str {
    match model {
        ModelKind::NonSpatial => "nonspatial",
        ModelKind::BaseSpatial => "base",
        ModelKind::Mgrf => "mgrf",
        ModelKind::MgrfPca => "mgrf_pca",
        ModelKind::Rsr => "rsr",
    }
}

fn cell_path(dir: &Path, replicate: usize, model: ModelKind) -> PathBuf {
    dir.join(format!("rep{replicate:04}_{}.json", model_slug(model)))
}

/// Execute every (replicate × model) cell in parallel. With a cache
/// directory, finished cells are stored there and reused on the next call.
pub fn run_study(scenario: &ScenarioConfig, cache_dir: Option<&Path>) -> Result<RunResult> {
    scenario.validate()?;
    let mesh = scenario.mesh()?;
    let fem = assemble_fem(&mesh)?;
    if let Some(dir) = cache_dir {
        fs::create_dir_all(dir)?;
    }
    let cells: Vec<Vec<CellResult>> = (0..scenario.n_replicates)
        .into_par_iter()
        .map(|r| {
            let mut cached = Vec::new();
            let mut todo = Vec::new();
            for &model in &scenario.models {
                let hit = cache_dir
                    .map(|d| cell_path(d, r, model))
                    .and_then(|p| fs::read_to_string(p).ok())
                    .and_then(|text| serde_json::from_str::<CellResult>(&text).ok())
                    .filter(|c| c.error.is_none());
                match hit {
                    Some(c) => cached.push(c),
                    None => todo.push(model),
                }
            }
            let fresh = if todo.is_empty() { vec![] } else { run_replicate(scenario, &mesh, &fem, r, &todo) };
            if let Some(dir) = cache_dir {
                for c in fresh.iter().filter(|c| c.error.is_none()) {
                    if let Ok(text) = serde_json::to_string(c) {
                        if let Err(e) = fs::write(cell_path(dir, r, c.model), text) {
                            log::warn!("could not cache cell: {e}");
                        }
                    }
                }
            }
            let mut all: Vec<CellResult> = cached.into_iter().chain(fresh).collect();
            all.sort_by_key(|c| scenario.models.iter().position(|m| *m == c.model));
            all
        })
        .collect();
    Ok(RunResult { scenario: scenario.clone(), cells: cells.into_iter().flatten().collect() })
}

impl RunResult {
    pub fn cells_for(&self, model: ModelKind) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(move |c| c.model == model && c.error.is_none())
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }

    /// Median over replicates of a per-cell statistic.
    pub fn median_of<F: Fn(&CellResult) -> Option<f64>>(&self, model: ModelKind, stat: F) -> f64 {
        median(&self.cells_for(model).filter_map(stat).collect::<Vec<_>>())
    }

    pub fn median_abs_bias(&self, model: ModelKind, parameter: &str) -> f64 {
        self.median_of(model, |c| c.param(parameter).map(|p| p.bias.abs()))
    }

    pub fn median_posterior_mean(&self, model: ModelKind, parameter: &str) -> f64 {
        self.median_of(model, |c| c.param(parameter).map(|p| p.mean))
    }

    pub fn median_bias_bstar(&self, model: ModelKind) -> f64 {
        self.median_of(model, |c| Some(c.bias_bstar))
    }

    /// Tidy CSV: one row per replicate × model × parameter.
    pub fn write_tidy_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "scenario", "replicate", "model", "parameter", "truth", "mean", "sd", "q025", "q975", "bias", "covers",
            "crps", "bias_bstar", "wall_time_s", "error",
        ])?;
        for c in &self.cells {
            let common = |w: &mut csv::Writer<W>, p: Option<&ParamRecord>| {
                let f = |v: f64| v.to_string();
                w.write_record([
                    c.scenario.clone(),
                    c.replicate.to_string(),
                    c.model.label().to_string(),
                    p.map_or(String::new(), |p| p.parameter.clone()),
                    p.map_or(String::new(), |p| f(p.truth)),
                    p.map_or(String::new(), |p| f(p.mean)),
                    p.map_or(String::new(), |p| f(p.sd)),
                    p.map_or(String::new(), |p| f(p.q025)),
                    p.map_or(String::new(), |p| f(p.q975)),
                    p.map_or(String::new(), |p| f(p.bias)),
                    p.map_or(String::new(), |p| p.covers.to_string()),
                    f(c.crps),
                    f(c.bias_bstar),
                    f(c.wall_time_s),
                    c.error.clone().unwrap_or_default(),
                ])
            };
            if c.params.is_empty() {
                common(&mut w, None)?;
            }
            for p in &c.params {
                common(&mut w, Some(p))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Fraction of cells whose 95% interval for `parameter` contains the truth.
pub fn coverage_rate<'a, I: IntoIterator<Item = &'a CellResult>>(cells: I, parameter: &str) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for c in cells {
        if let Some(p) = c.param(parameter) {
            total += 1;
            hit += p.covers as usize;
        }
    }
    if total == 0 {
        f64::NAN
    } else {
        hit as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crps_symmetric_case() {
        let expected = (2f64.sqrt() - 1.0) / std::f64::consts::PI.sqrt();
        assert!((crps_gaussian(0.3, 1.0, 0.3).unwrap() - expected).abs() < 1e-14);
        assert!((crps_gaussian(0.3, 2.5, 0.3).unwrap() - 2.5 * expected).abs() < 1e-14);
        assert!(crps_gaussian(1.0, 1e-12, 1.0).unwrap() < 1e-12);
        assert!(matches!(crps_gaussian(0.0, 0.0, 1.0), Err(Error::NonPositiveSigma(_))));
    }

    #[test]
    fn presets_cover_the_full_grid() {
        let uni = preset_paper_univariate(3);
        assert_eq!(uni.len(), 45);
        assert!(uni.iter().all(|s| s.models.len() == 4 && s.n_replicates == 3));
        let s4 = uni.iter().find(|s| s.rho_true == vec![0.7] && s.range_gamma == 0.1 && s.range_z == vec![0.9]).unwrap();
        assert_eq!(s4.beta_true, vec![-1.5, 1.0]);
        assert_eq!(s4.sigma2_eps, 0.1);
        assert_eq!(s4.fit.priors.pc.u, 0.9);
        assert_eq!(preset_paper_multivariate(1).len(), 27);
    }

    #[test]
    fn coverage_extremes() {
        let cell = |lo: f64, hi: f64| CellResult {
            scenario: "s".into(),
            replicate: 0,
            model: ModelKind::Mgrf,
            params: vec![ParamRecord {
                parameter: "beta1".into(),
                truth: 1.0,
                mean: 0.5 * (lo + hi),
                sd: 1.0,
                q025: lo,
                q975: hi,
                bias: 0.0,
                covers: lo <= 1.0 && 1.0 <= hi,
            }],
            crps: 0.0,
            bias_bstar: 0.0,
            acceptance: vec![],
            max_constraint_residual: None,
            wall_time_s: 0.0,
            error: None,
        };
        let wide = vec![cell(f64::NEG_INFINITY, f64::INFINITY); 4];
        assert_eq!(coverage_rate(&wide, "beta1"), 1.0);
        let off = vec![cell(2.0, 2.0); 4];
        assert_eq!(coverage_rate(&off, "beta1"), 0.0);
    }
}
