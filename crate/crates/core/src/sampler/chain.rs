use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, ModelKind};
use super::ram::Ram;
use super::summary::{summarize, write_trace_csv, PosteriorSummary};
use crate::baselines::OrthogonalConstraint;
use crate::error::{Error, Result};
use crate::mesh_fem::{FemMatrices, Projector};
use crate::mgrf_prior::{
    aggregate_covariates, conditional_log_density, cross_transform, gmrf_log_density, Aggregation, Reformulation,
    RHO_MAX,
};
use crate::pc_prior::{fisher_z, fisher_z_inv, PcRhoPrior, BASE_MODEL_EPS};
use crate::sparse_la::{standard_normals, CholFactor, Ordering, SparseSym, SymbolicCholesky};
use crate::spde::{GmrfSpec, SpdeOperator};

/// Mesh-dependent structures shared by every chain on one set of locations.
#[derive(Debug, Clone)]
pub struct SpatialDesign {
    projector: Projector,
    op: SpdeOperator,
    symbolic: Arc<SymbolicCholesky>,
}

impl SpatialDesign {
    pub fn new(fem: &FemMatrices, projector: Projector, ordering: Ordering) -> Result<Self> {
        if projector.n_cols() != fem.c.dim() {
            return Err(Error::DimensionMismatch { expected: fem.c.dim(), found: projector.n_cols() });
        }
        let gram = projector.gram()?;
        let op = SpdeOperator::with_extra_pattern(fem, Some(&gram))?;
        let symbolic = SymbolicCholesky::analyze(op.extra().expect("extra pattern supplied"), ordering);
        Ok(Self { projector, op, symbolic })
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    pub fn operator(&self) -> &SpdeOperator {
        &self.op
    }

    pub fn num_nodes(&self) -> usize {
        self.projector.n_cols()
    }

    pub fn num_obs(&self) -> usize {
        self.projector.n_rows()
    }

    pub fn precision(&self, spec: &GmrfSpec) -> SparseSym {
        self.op.precision(spec)
    }

    /// Factor of the field precision on the shared symbolic analysis.
    pub fn factor(&self, spec: &GmrfSpec) -> Result<CholFactor> {
        self.symbolic.factor(&self.op.precision(spec))
    }

    /// Factor of `Q / scale_div + data_coef · ΨᵀΨ`.
    pub fn factor_posterior(&self, spec: &GmrfSpec, scale_div: f64, data_coef: f64) -> Result<CholFactor> {
        self.symbolic.factor(&self.op.precision_plus_extra(spec, scale_div, data_coef)?)
    }
}

/// Response and covariates of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    pub y: Vec<f64>,
    /// Covariate columns at the observation locations.
    pub covariates: Vec<Vec<f64>>,
    /// Covariate fields at the mesh nodes, used by the MGRF prior.
    pub z_fields: Vec<Vec<f64>>,
}

impl Observations {
    fn validate(&self, kind: ModelKind, design: Option<&SpatialDesign>) -> Result<()> {
        let n = self.y.len();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        for c in &self.covariates {
            if c.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: c.len() });
            }
        }
        if let Some(d) = design {
            if d.num_obs() != n {
                return Err(Error::DimensionMismatch { expected: d.num_obs(), found: n });
            }
            if kind.has_z_hierarchy() {
                if self.z_fields.is_empty() {
                    return Err(Error::Config("the MGRF prior needs at least one covariate node field".into()));
                }
                for z in &self.z_fields {
                    if z.len() != d.num_nodes() {
                        return Err(Error::DimensionMismatch { expected: d.num_nodes(), found: z.len() });
                    }
                }
            }
        }
        Ok(())
    }

    /// `[1 | X]`.
    pub fn design_matrix(&self) -> DMatrix<f64> {
        let n = self.y.len();
        DMatrix::from_fn(n, self.covariates.len() + 1, |i, j| if j == 0 { 1.0 } else { self.covariates[j - 1][i] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    /// `(β₀, β₁, …, β_B)`.
    pub beta: Vec<f64>,
    pub sigma2: f64,
    /// Spatial effect weights (γ, or γ* under the shift construction).
    pub gamma: Vec<f64>,
    /// Kriging residual with `γ* = μ_{γ|z} + √(1−ρ²) w` (reformulation II).
    pub w: Vec<f64>,
    /// Latent replica of the covariate field (reformulation II).
    pub gamma_z: Vec<f64>,
    pub mu_z: f64,
    pub theta_gamma: [f64; 2],
    pub theta_z: [f64; 2],
    pub rho: f64,
    pub rho_star: f64,
    pub iteration: usize,
}

const STREAM_MU_Z: usize = 0;
const STREAM_THETA_Z: usize = 1;
const STREAM_GAMMA_Z: usize = 2;
const STREAM_SIGMA2: usize = 3;
const STREAM_BETA: usize = 4;
const STREAM_THETA_GAMMA: usize = 5;
const STREAM_GAMMA: usize = 6;
const N_STREAMS: usize = 7;

/// Output of one chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainOutput {
    pub model: ModelKind,
    pub names: Vec<String>,
    pub iterations: Vec<usize>,
    /// Retained scalar draws, one row per retained iteration.
    pub draws: Vec<Vec<f64>>,
    pub summary: PosteriorSummary,
    pub gamma_mean: Vec<f64>,
    /// Posterior mean and variance of the linear predictor at the locations.
    pub eta_mean: Vec<f64>,
    pub eta_var: Vec<f64>,
    pub sigma2_mean: f64,
    /// Largest `‖designᵀΨγ‖_∞` over retained draws (restricted regression).
    pub max_constraint_residual: Option<f64>,
    pub pca_loadings: Option<Vec<f64>>,
}

impl ChainOutput {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.names.iter().position(|n| n == name)?;
        Some(self.draws.iter().map(|row| row[k]).collect())
    }

    pub fn write_trace_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        write_trace_csv(&self.names, &self.iterations, &self.draws, out)
    }
}

/// MCMC sampler for all model kinds.
pub struct Sampler<'a> {
    cfg: ModelConfig,
    design: Option<&'a SpatialDesign>,
    obs: Observations,
    x: DMatrix<f64>,
    xtx: DMatrix<f64>,
    beta_prior_mean: DVector<f64>,
    beta_prior_prec: DVector<f64>,
    z_star: Vec<f64>,
    loadings: Option<Vec<f64>>,
    pc: Option<PcRhoPrior>,
    constraint: Option<OrthogonalConstraint>,
    state: ChainState,
    f_gamma: Option<CholFactor>,
    f_z: Option<CholFactor>,
    ram_z: Ram,
    ram_gamma: Ram,
    rngs: Vec<ChaCha8Rng>,
    max_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl<'a> Sampler<'a> {
    pub fn new(cfg: &ModelConfig, design: Option<&'a SpatialDesign>, obs: &Observations) -> Result<Self> {
        cfg.validate()?;
        let kind = cfg.model;
        if kind.is_spatial() && design.is_none() {
            return Err(Error::Config(format!("model {} needs a spatial design", kind.label())));
        }
        let design = if kind.is_spatial() { design } else { None };
        let m = design.map_or(0, |d| d.num_nodes());
        let b = obs.covariates.len();
        let fix_rho = if kind.has_z_hierarchy() { cfg.fix_rho } else { Some(0.0) };
        let pc = match fix_rho {
            None => Some(cfg.priors.pc.build()?),
            Some(_) => None,
        };
        let rho = fix_rho.unwrap_or(0.0);
        let mid = cfg.priors.box_midpoint();
        let y = &obs.y;
        let n = y.len() as f64;
        let ybar = y.iter().sum::<f64>() / n;
        let var_y = y.iter().map(|v| (v - ybar).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let state = ChainState {
            beta: vec![0.0; b + 1],
            sigma2: if var_y > 0.0 { var_y } else { 1.0 },
            gamma: vec![0.0; m],
            w: vec![0.0; m],
            gamma_z: vec![0.0; m],
            mu_z: cfg.priors.mu_mu_z,
            theta_gamma: mid,
            theta_z: mid,
            rho,
            rho_star: fisher_z(rho)?,
            iteration: 0,
        };
        let rngs = (0..N_STREAMS)
            .map(|k| {
                let mut r = ChaCha8Rng::seed_from_u64(cfg.mcmc.seed);
                r.set_stream(k as u64);
                r
            })
            .collect();
        let gamma_dim = if fix_rho.is_some() { 2 } else { 3 };
        let mut ram_z = Ram::new(2, cfg.initial_proposal_scale, cfg.proposal_df, cfg.target_acceptance);
        let mut ram_gamma = Ram::new(gamma_dim, cfg.initial_proposal_scale, cfg.proposal_df, cfg.target_acceptance);
        ram_z.set_adapt(cfg.adapt);
        ram_gamma.set_adapt(cfg.adapt);
        let cfg = ModelConfig { fix_rho, ..cfg.clone() };
        let mut sampler = Self {
            cfg,
            design,
            obs: Observations { y: vec![], covariates: vec![], z_fields: vec![] },
            x: DMatrix::zeros(0, 0),
            xtx: DMatrix::zeros(0, 0),
            beta_prior_mean: DVector::zeros(0),
            beta_prior_prec: DVector::zeros(0),
            z_star: vec![],
            loadings: None,
            pc,
            constraint: None,
            state,
            f_gamma: None,
            f_z: None,
            ram_z,
            ram_gamma,
            rngs,
            max_residual: 0.0,
        };
        sampler.set_observations(obs)?;
        Ok(sampler)
    }

    /// Replace the data, keeping the parameter state.
    pub fn set_observations(&mut self, obs: &Observations) -> Result<()> {
        let kind = self.cfg.model;
        obs.validate(kind, self.design)?;
        if obs.covariates.len() + 1 != self.state.beta.len() {
            return Err(Error::DimensionMismatch { expected: self.state.beta.len() - 1, found: obs.covariates.len() });
        }
        self.x = obs.design_matrix();
        self.xtx = self.x.transpose() * &self.x;
        let (mean, var) = self.cfg.priors.beta_prior(obs.covariates.len())?;
        self.beta_prior_mean = DVector::from_vec(mean);
        self.beta_prior_prec = DVector::from_iterator(var.len(), var.iter().map(|v| 1.0 / v));
        if kind.has_z_hierarchy() {
            let method = if kind == ModelKind::MgrfPca { Aggregation::PcaFirst } else { Aggregation::Sum };
            let (z_star, loadings) = aggregate_covariates(&obs.z_fields, method)?;
            self.z_star = z_star;
            self.loadings = (kind == ModelKind::MgrfPca).then_some(loadings);
        }
        if kind == ModelKind::Rsr {
            let design = self.design.expect("spatial model");
            let x = if self.cfg.rsr_constrain_intercept { self.x.clone() } else { self.x.columns(1, obs.covariates.len()).into_owned() };
            self.constraint = Some(OrthogonalConstraint::new(&x, design.projector())?);
        }
        self.obs = obs.clone();
        self.refresh()
    }

    /// Recompute cached factors after the state was changed externally.
    pub fn refresh(&mut self) -> Result<()> {
        if let Some(d) = self.design {
            self.f_gamma = Some(d.factor(&GmrfSpec::from_theta(self.state.theta_gamma))?);
            if self.cfg.model.has_z_hierarchy() {
                self.f_z = Some(d.factor(&GmrfSpec::from_theta(self.state.theta_z))?);
                if self.reformulation() == Reformulation::II {
                    self.state.gamma = self.gamma_star(self.state.rho, self.f_gamma(), self.f_z(), self.state.mu_z)?;
                }
            }
        }
        Ok(())
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    /// Replace the state; cached factors are recomputed.
    pub fn set_state(&mut self, state: ChainState) -> Result<()> {
        self.state = state;
        self.refresh()
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Aggregated covariate field entering the prior.
    pub fn z_star(&self) -> &[f64] {
        &self.z_star
    }

    pub fn ram_acceptance(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        if self.cfg.model.has_z_hierarchy() {
            out.push(("theta_z".to_string(), self.ram_z.acceptance_rate()));
        }
        if self.cfg.model.is_spatial() {
            let name = if self.cfg.fix_rho.is_some() { "theta_gamma" } else { "theta_gamma_rho" };
            out.push((name.to_string(), self.ram_gamma.acceptance_rate()));
        }
        out
    }

    fn reformulation(&self) -> Reformulation {
        // Baselines never use ρ and always take the centered path.
        if self.cfg.model.has_z_hierarchy() {
            self.cfg.reformulation
        } else {
            Reformulation::I
        }
    }

    fn design(&self) -> &'a SpatialDesign {
        self.design.expect("spatial model")
    }

    fn f_gamma(&self) -> &CholFactor {
        self.f_gamma.as_ref().expect("spatial model")
    }

    fn f_z(&self) -> &CholFactor {
        self.f_z.as_ref().expect("covariate hierarchy")
    }

    fn n(&self) -> usize {
        self.obs.y.len()
    }

    fn fixed_effects(&self) -> Vec<f64> {
        (&self.x * DVector::from_column_slice(&self.state.beta)).as_slice().to_vec()
    }

    fn eta(&self) -> Result<Vec<f64>> {
        let mut eta = self.fixed_effects();
        if let Some(d) = self.design {
            for (e, g) in eta.iter_mut().zip(d.projector().apply(&self.state.gamma)?) {
                *e += g;
            }
        }
        Ok(eta)
    }

    /// `ρ T (z* − μ 1)`, exactly zero for ρ = 0.
    fn mu_cond(&self, rho: f64, f_gamma: &CholFactor, f_z: &CholFactor, mu: f64) -> Result<Vec<f64>> {
        let m = self.z_star.len();
        if rho == 0.0 {
            return Ok(vec![0.0; m]);
        }
        let centered: Vec<f64> = self.z_star.iter().map(|v| v - mu).collect();
        let mut t = cross_transform(f_gamma, f_z, &centered)?;
        t.iter_mut().for_each(|v| *v *= rho);
        Ok(t)
    }

    /// `γ* = μ_{γ|z} + √(1−ρ²) w`.
    fn gamma_star(&self, rho: f64, f_gamma: &CholFactor, f_z: &CholFactor, mu: f64) -> Result<Vec<f64>> {
        let s = (1.0 - rho * rho).sqrt();
        let mc = self.mu_cond(rho, f_gamma, f_z, mu)?;
        Ok(mc.iter().zip(&self.state.w).map(|(a, w)| a + s * w).collect())
    }

    fn log_likelihood(&self, gamma: &[f64]) -> Result<f64> {
        let fixed = self.fixed_effects();
        let spatial = self.design().projector().apply(gamma)?;
        let rss: f64 = self.obs.y.iter().zip(&fixed).zip(&spatial).map(|((y, f), s)| (y - f - s).powi(2)).sum();
        let n = self.n() as f64;
        Ok(-0.5 * n * (2.0 * PI * self.state.sigma2).ln() - 0.5 * rss / self.state.sigma2)
    }

    /// Prior log density of the centered spatial effect.
    fn gamma_prior_log_density(&self, rho: f64, f_gamma: &CholFactor, f_z: Option<&CholFactor>, gamma: &[f64]) -> Result<f64> {
        match f_z {
            Some(f_z) if rho != 0.0 => {
                conditional_log_density(rho, f_gamma, f_z, gamma, &self.z_star, self.state.mu_z)
            }
            _ => {
                let mut lp = gmrf_log_density(f_gamma, gamma)?;
                if let Some(c) = &self.constraint {
                    lp -= c.log_normalizer(f_gamma)?;
                }
                Ok(lp)
            }
        }
    }

    /// Gaussian full conditional of `μ_z`: `(mean, variance)`.
    pub fn mu_z_conditional(&self) -> Result<(f64, f64)> {
        let pr = &self.cfg.priors;
        let f_z = self.f_z();
        let m = self.z_star.len();
        let b1 = f_z.apply_lower_t(&vec![1.0; m])?;
        let bz = f_z.apply_lower_t(&self.z_star)?;
        let b1b1 = dot(&b1, &b1);
        let rho = self.state.rho;
        let (mut prec, mut num) = (1.0 / pr.sigma2_mu_z, pr.mu_mu_z / pr.sigma2_mu_z);
        match self.reformulation() {
            Reformulation::I => {
                let one_m = 1.0 - rho * rho;
                prec += b1b1 / one_m;
                num += dot(&b1, &bz) / one_m;
                if rho != 0.0 {
                    let a = self.f_gamma().apply_lower_t(&self.state.gamma)?;
                    num -= rho * dot(&b1, &a) / one_m;
                }
            }
            Reformulation::II => {
                let bg = f_z.apply_lower_t(&self.state.gamma_z)?;
                prec += 2.0 * b1b1;
                num += dot(&b1, &bz) + dot(&b1, &bg);
                if rho != 0.0 {
                    // γ* moves with μ_z through μ_{γ|z}; the likelihood is linear in μ_z.
                    let psi = self.design().projector();
                    let t1 = self.f_gamma().solve_upper(&b1)?;
                    let h: Vec<f64> = psi.apply(&t1)?.iter().map(|v| rho * v).collect();
                    let base = self.gamma_star(rho, self.f_gamma(), f_z, 0.0)?;
                    let fixed = self.fixed_effects();
                    let spatial = psi.apply(&base)?;
                    let e: Vec<f64> =
                        self.obs.y.iter().zip(&fixed).zip(&spatial).map(|((y, f), s)| y - f - s).collect();
                    prec += dot(&h, &h) / self.state.sigma2;
                    num -= dot(&h, &e) / self.state.sigma2;
                }
            }
        }
        Ok((num / prec, 1.0 / prec))
    }

    fn step_mu_z(&mut self) -> Result<()> {
        let (mean, var) = self.mu_z_conditional()?;
        let e: f64 = self.rngs[STREAM_MU_Z].sample(StandardNormal);
        self.state.mu_z = mean + var.sqrt() * e;
        if self.reformulation() == Reformulation::II {
            self.state.gamma = self.gamma_star(self.state.rho, self.f_gamma(), self.f_z(), self.state.mu_z)?;
        }
        Ok(())
    }

    fn log_target_theta_z(&self, f_z: &CholFactor) -> Result<f64> {
        let mu = self.state.mu_z;
        let zc: Vec<f64> = self.z_star.iter().map(|v| v - mu).collect();
        let mut lp = gmrf_log_density(f_z, &zc)?;
        let rho = self.state.rho;
        match self.reformulation() {
            Reformulation::I => {
                lp += self.gamma_prior_log_density(rho, self.f_gamma(), Some(f_z), &self.state.gamma)?;
            }
            Reformulation::II => {
                let gc: Vec<f64> = self.state.gamma_z.iter().map(|v| v - mu).collect();
                lp += gmrf_log_density(f_z, &gc)?;
                if rho != 0.0 {
                    lp += self.log_likelihood(&self.gamma_star(rho, self.f_gamma(), f_z, mu)?)?;
                }
            }
        }
        Ok(lp)
    }

    fn step_theta_z(&mut self) -> Result<()> {
        let mut current = self.log_target_theta_z(self.f_z())?;
        let mut x = self.state.theta_z.to_vec();
        let mut last: Option<CholFactor> = None;
        let mut failure = None;
        let mut ram = self.ram_z.clone();
        let accepted = {
            let this = &*self;
            let mut rng = this.rngs[STREAM_THETA_Z].clone();
            let acc = ram.step(&mut x, &mut current, &mut rng, |p| {
                if !this.cfg.priors.in_box(p) {
                    return None;
                }
                let f = match this.design().factor(&GmrfSpec::new(p[0], p[1])) {
                    Ok(f) => f,
                    Err(Error::NotPositiveDefinite { .. }) => return None,
                    Err(e) => {
                        failure = Some(e);
                        return None;
                    }
                };
                let lp = match this.log_target_theta_z(&f) {
                    Ok(v) => v,
                    Err(e) => {
                        failure = Some(e);
                        return None;
                    }
                };
                last = Some(f);
                Some(lp)
            });
            (acc, rng)
        };
        self.rngs[STREAM_THETA_Z] = accepted.1;
        self.ram_z = ram;
        if let Some(e) = failure {
            return Err(e);
        }
        if accepted.0 {
            self.state.theta_z = [x[0], x[1]];
            self.f_z = last;
            if self.reformulation() == Reformulation::II {
                self.state.gamma = self.gamma_star(self.state.rho, self.f_gamma(), self.f_z(), self.state.mu_z)?;
            }
        }
        Ok(())
    }

    /// Full conditional of `γ_z`: `(mean, precision)`. Under the shift
    /// construction `γ_z` is independent of `(γ*, z, y)` given `(μ_z, θ_z)`.
    pub fn gamma_z_conditional(&self) -> Result<(Vec<f64>, SparseSym)> {
        let m = self.z_star.len();
        let q = self.design().precision(&GmrfSpec::from_theta(self.state.theta_z));
        Ok((vec![self.state.mu_z; m], q))
    }

    fn step_gamma_z(&mut self) -> Result<()> {
        let m = self.z_star.len();
        let mean = vec![self.state.mu_z; m];
        self.state.gamma_z = self.f_z.as_ref().expect("covariate hierarchy").sample_gmrf(&mean, &mut self.rngs[STREAM_GAMMA_Z])?;
        Ok(())
    }

    /// Inverse-gamma full conditional of `σ²_ε`: `(shape, rate)`.
    pub fn sigma2_conditional(&self) -> Result<(f64, f64)> {
        let eta = self.eta()?;
        let rss: f64 = self.obs.y.iter().zip(&eta).map(|(y, e)| (y - e).powi(2)).sum();
        Ok((self.cfg.priors.ig_shape + 0.5 * self.n() as f64, self.cfg.priors.ig_rate + 0.5 * rss))
    }

    fn step_sigma2(&mut self) -> Result<()> {
        let (shape, rate) = self.sigma2_conditional()?;
        let g = Gamma::new(shape, 1.0).map_err(|e| Error::Config(e.to_string()))?.sample(&mut self.rngs[STREAM_SIGMA2]);
        self.state.sigma2 = rate / g;
        Ok(())
    }

    /// Gaussian full conditional of `(β₀, β)`: `(mean, precision)`.
    pub fn beta_conditional(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let mut resid = DVector::from_column_slice(&self.obs.y);
        if let Some(d) = self.design {
            resid -= DVector::from_vec(d.projector().apply(&self.state.gamma)?);
        }
        let s2 = self.state.sigma2;
        let prec = &self.xtx / s2 + DMatrix::from_diagonal(&self.beta_prior_prec);
        let rhs = self.x.transpose() * resid / s2 + self.beta_prior_prec.component_mul(&self.beta_prior_mean);
        let chol = prec.clone().cholesky().ok_or(Error::SingularConditional)?;
        Ok((chol.solve(&rhs), prec))
    }

    fn step_beta(&mut self) -> Result<()> {
        let (mean, prec) = self.beta_conditional()?;
        let chol = prec.cholesky().ok_or(Error::SingularConditional)?;
        let k = mean.len();
        let u = DVector::from_vec(standard_normals(k, &mut self.rngs[STREAM_BETA]));
        let shift = chol.l().transpose().solve_upper_triangular(&u).ok_or(Error::SingularConditional)?;
        self.state.beta = (mean + shift).as_slice().to_vec();
        Ok(())
    }

    fn log_target_theta_gamma(&self, theta: [f64; 2], rho_star: f64) -> Result<Option<(f64, CholFactor)>> {
        let rho = match self.cfg.fix_rho {
            Some(r) => r,
            None => {
                let r = fisher_z_inv(rho_star);
                if r.abs() >= 1.0 {
                    return Ok(None);
                }
                r
            }
        };
        let f_gamma = match self.design().factor(&GmrfSpec::from_theta(theta)) {
            Ok(f) => f,
            Err(Error::NotPositiveDefinite { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let mut lp = match self.reformulation() {
            Reformulation::I => {
                if rho.abs() > RHO_MAX {
                    return Ok(None);
                }
                self.gamma_prior_log_density(rho, &f_gamma, self.f_z.as_ref(), &self.state.gamma)?
            }
            Reformulation::II => {
                let mut lp = gmrf_log_density(&f_gamma, &self.state.w)?;
                let gamma = self.gamma_star(rho, &f_gamma, self.f_z(), self.state.mu_z)?;
                lp += self.log_likelihood(&gamma)?;
                lp
            }
        };
        if let Some(pc) = &self.pc {
            lp += pc.log_density_star(rho_star)?;
        }
        Ok(Some((lp, f_gamma)))
    }

    fn step_theta_gamma(&mut self) -> Result<()> {
        let fixed = self.cfg.fix_rho.is_some();
        let mut x = self.state.theta_gamma.to_vec();
        if !fixed {
            x.push(self.state.rho_star);
        }
        let (mut current, _) = self
            .log_target_theta_gamma(self.state.theta_gamma, self.state.rho_star)?
            .ok_or_else(|| Error::Config("current (theta_gamma, rho) has zero prior density".into()))?;
        let mut last: Option<CholFactor> = None;
        let mut failure = None;
        let mut ram = self.ram_gamma.clone();
        let mut rng = self.rngs[STREAM_THETA_GAMMA].clone();
        let accepted = {
            let this = &*self;
            ram.step(&mut x, &mut current, &mut rng, |p| {
                if !this.cfg.priors.in_box(p) {
                    return None;
                }
                let rho_star = if fixed { this.state.rho_star } else { p[2] };
                if !fixed && fisher_z_inv(rho_star).abs() < BASE_MODEL_EPS {
                    return None;
                }
                match this.log_target_theta_gamma([p[0], p[1]], rho_star) {
                    Ok(Some((lp, f))) => {
                        last = Some(f);
                        Some(lp)
                    }
                    Ok(None) => None,
                    Err(e) => {
                        failure = Some(e);
                        None
                    }
                }
            })
        };
        self.rngs[STREAM_THETA_GAMMA] = rng;
        self.ram_gamma = ram;
        if let Some(e) = failure {
            return Err(e);
        }
        if accepted {
            self.state.theta_gamma = [x[0], x[1]];
            if !fixed {
                self.state.rho_star = x[2];
                self.state.rho = fisher_z_inv(x[2]);
            }
            self.f_gamma = last;
            if self.reformulation() == Reformulation::II {
                self.state.gamma = self.gamma_star(self.state.rho, self.f_gamma(), self.f_z(), self.state.mu_z)?;
            }
        }
        Ok(())
    }

    /// Gaussian full conditional of the sampled spatial block: `(mean,
    /// precision factor)`. Reformulation I samples γ directly; the shift
    /// construction samples `w`.
    pub fn gamma_conditional(&self) -> Result<(Vec<f64>, CholFactor)> {
        let design = self.design();
        let psi = design.projector();
        let spec = GmrfSpec::from_theta(self.state.theta_gamma);
        let rho = self.state.rho;
        let s2 = self.state.sigma2;
        let fixed = self.fixed_effects();
        match self.reformulation() {
            Reformulation::I => {
                let one_m = 1.0 - rho * rho;
                let f_p = design.factor_posterior(&spec, one_m, 1.0 / s2)?;
                let resid: Vec<f64> = self.obs.y.iter().zip(&fixed).map(|(y, f)| (y - f) / s2).collect();
                let mut rhs = psi.apply_transpose(&resid)?;
                if rho != 0.0 {
                    let f_z = self.f_z();
                    let zc: Vec<f64> = self.z_star.iter().map(|v| v - self.state.mu_z).collect();
                    let b = f_z.apply_lower_t(&zc)?;
                    // Q_{γ|z} μ_{γ|z} = ρ R_γ R_zᵀ (z − μ 1) / (1 − ρ²)
                    let prior_term = self.f_gamma().apply_lower(&b)?;
                    for (r, p) in rhs.iter_mut().zip(&prior_term) {
                        *r += rho * p / one_m;
                    }
                }
                Ok((f_p.solve_full(&rhs)?, f_p))
            }
            Reformulation::II => {
                let s = (1.0 - rho * rho).sqrt();
                let f_p = design.factor_posterior(&spec, 1.0, s * s / s2)?;
                let mc = self.mu_cond(rho, self.f_gamma(), self.f_z(), self.state.mu_z)?;
                let shift = psi.apply(&mc)?;
                let resid: Vec<f64> =
                    self.obs.y.iter().zip(&fixed).zip(&shift).map(|((y, f), m)| s * (y - f - m) / s2).collect();
                let rhs = psi.apply_transpose(&resid)?;
                Ok((f_p.solve_full(&rhs)?, f_p))
            }
        }
    }

    fn step_gamma(&mut self) -> Result<()> {
        let (mean, f_p) = self.gamma_conditional()?;
        let draw = f_p.sample_gmrf(&mean, &mut self.rngs[STREAM_GAMMA])?;
        match self.reformulation() {
            Reformulation::I => {
                self.state.gamma = match &self.constraint {
                    Some(c) => c.apply(&draw, &f_p)?,
                    None => draw,
                };
            }
            Reformulation::II => {
                self.state.w = draw;
                self.state.gamma = self.gamma_star(self.state.rho, self.f_gamma(), self.f_z(), self.state.mu_z)?;
            }
        }
        Ok(())
    }

    /// One sweep in the order μ_z, θ_z, γ_z, σ², β, (θ_γ, ρ), γ.
    pub fn sweep(&mut self) -> Result<()> {
        let t = self.state.iteration;
        let kind = self.cfg.model;
        let run = |s: &mut Self| -> Result<()> {
            if kind.has_z_hierarchy() {
                s.step_mu_z()?;
                s.step_theta_z()?;
                if s.reformulation() == Reformulation::II {
                    s.step_gamma_z()?;
                }
            }
            s.step_sigma2()?;
            s.step_beta()?;
            if kind.is_spatial() {
                s.step_theta_gamma()?;
                s.step_gamma()?;
            }
            Ok(())
        };
        run(self).map_err(|e| e.at_iteration(t))?;
        self.state.iteration += 1;
        Ok(())
    }

    pub fn scalar_names(&self) -> Vec<String> {
        let mut names = vec!["beta0".to_string()];
        names.extend((1..self.state.beta.len()).map(|k| format!("beta{k}")));
        names.push("sigma2".to_string());
        if self.cfg.model.is_spatial() {
            names.extend(["theta_gamma_tau", "theta_gamma_kappa", "range_gamma", "sigma2_gamma"].map(String::from));
        }
        if self.cfg.model.has_z_hierarchy() {
            names.extend(["rho", "mu_z", "theta_z_tau", "theta_z_kappa", "range_z"].map(String::from));
        }
        names
    }

    pub fn scalar_values(&self) -> Vec<f64> {
        let s = &self.state;
        let mut v = s.beta.clone();
        v.push(s.sigma2);
        if self.cfg.model.is_spatial() {
            let spec = GmrfSpec::from_theta(s.theta_gamma);
            v.extend([s.theta_gamma[0], s.theta_gamma[1], spec.range(), spec.sigma2()]);
        }
        if self.cfg.model.has_z_hierarchy() {
            let spec = GmrfSpec::from_theta(s.theta_z);
            v.extend([s.rho, s.mu_z, s.theta_z[0], s.theta_z[1], spec.range()]);
        }
        v
    }

    /// Run the configured number of sweeps and summarize retained draws.
    pub fn run(mut self) -> Result<ChainOutput> {
        let mcmc = self.cfg.mcmc;
        let names = self.scalar_names();
        let m = self.design.map_or(0, |d| d.num_nodes());
        let n = self.n();
        let mut draws = Vec::with_capacity(mcmc.retained_count());
        let mut iterations = Vec::with_capacity(mcmc.retained_count());
        let mut gamma_sum = vec![0.0; m];
        let mut eta_sum = vec![0.0; n];
        let mut eta_sq = vec![0.0; n];
        let mut sigma2_sum = 0.0;
        for t in 0..mcmc.iterations {
            self.sweep()?;
            if !mcmc.is_retained(t) {
                continue;
            }
            draws.push(self.scalar_values());
            iterations.push(t);
            for (a, g) in gamma_sum.iter_mut().zip(&self.state.gamma) {
                *a += g;
            }
            for ((s, q), e) in eta_sum.iter_mut().zip(eta_sq.iter_mut()).zip(self.eta()?) {
                *s += e;
                *q += e * e;
            }
            sigma2_sum += self.state.sigma2;
            if let Some(c) = &self.constraint {
                self.max_residual = self.max_residual.max(c.residual(&self.state.gamma));
            }
        }
        let k = draws.len() as f64;
        let params = names
            .iter()
            .enumerate()
            .map(|(j, name)| summarize(name, &draws.iter().map(|r: &Vec<f64>| r[j]).collect::<Vec<_>>()))
            .collect();
        let eta_mean: Vec<f64> = eta_sum.iter().map(|s| s / k).collect();
        let eta_var = eta_sq.iter().zip(&eta_mean).map(|(q, m)| (q / k - m * m).max(0.0)).collect();
        Ok(ChainOutput {
            model: self.cfg.model,
            summary: PosteriorSummary { params, acceptance: self.ram_acceptance(), retained: draws.len() },
            names,
            iterations,
            draws,
            gamma_mean: gamma_sum.iter().map(|s| s / k).collect(),
            eta_mean,
            eta_var,
            sigma2_mean: sigma2_sum / k,
            max_constraint_residual: self.constraint.as_ref().map(|_| self.max_residual),
            pca_loadings: self.loadings.clone(),
        })
    }
}

/// Build a sampler and run it.
pub fn run_chain(cfg: &ModelConfig, design: Option<&SpatialDesign>, obs: &Observations) -> Result<ChainOutput> {
    Sampler::new(cfg, design, obs)?.run()
}
