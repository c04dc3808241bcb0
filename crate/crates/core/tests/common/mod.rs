#![allow(dead_code)]

use mgrf::mesh_fem::assemble_fem;
use mgrf::mgrf_prior::Reformulation;
use mgrf::pc_prior::fisher_z;
use mgrf::sampler::{ChainState, ModelConfig, ModelKind, Observations, Sampler, SpatialDesign};
use mgrf::sim_harness::{generate_replicate, ScenarioConfig};
use mgrf::sparse_la::CholFactor;
use mgrf::spde::GmrfSpec;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn dense_root(f: &CholFactor) -> DMatrix<f64> {
    let mut r = DMatrix::zeros(f.dim(), f.dim());
    for (i, j, v) in f.lower_entries() {
        r[(f.perm()[i], j)] = v;
    }
    r
}

pub fn dense_psi(d: &SpatialDesign) -> DMatrix<f64> {
    let psi = d.projector();
    let mut out = DMatrix::zeros(psi.n_rows(), psi.n_cols());
    for i in 0..psi.n_rows() {
        for (j, w) in psi.row(i) {
            out[(i, j)] += w;
        }
    }
    out
}

pub struct Problem {
    pub design: SpatialDesign,
    pub obs: Observations,
}

/// One simulated univariate dataset on a mesh of about `m` nodes.
pub fn problem(m: usize, n: usize, seed: u64) -> Problem {
    let mut sc = ScenarioConfig::univariate(0.7, 0.3, 0.6);
    sc.n_obs = n;
    sc.mesh_nodes = m;
    sc.mesh_extension = 0.1;
    let mesh = sc.mesh().unwrap();
    let fem = assemble_fem(&mesh).unwrap();
    let (rep, design) = generate_replicate(&sc, &mesh, &fem, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    Problem { design, obs: rep.observations }
}

/// Priors with every hyperparameter away from its default so that a
/// mix-up between them shows.
pub fn oracle_config(reformulation: Reformulation) -> ModelConfig {
    let mut cfg = ModelConfig::new(ModelKind::Mgrf);
    cfg.reformulation = reformulation;
    cfg.priors.sigma2_mu_z = 0.5;
    cfg.priors.mu_mu_z = 0.1;
    cfg.priors.sigma2_beta0 = 10.0;
    cfg.priors.sigma2_beta = vec![4.0];
    cfg.priors.mu_beta = vec![0.3];
    cfg.priors.ig_shape = 2.5;
    cfg.priors.ig_rate = 0.7;
    cfg
}

pub fn random_state(template: &ChainState, rng: &mut ChaCha8Rng, rho: f64) -> ChainState {
    let m = template.gamma.len();
    let mut uniform = |k: usize| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    ChainState {
        beta: uniform(template.beta.len()),
        sigma2: 0.3,
        gamma: uniform(m),
        w: uniform(m),
        gamma_z: uniform(m),
        mu_z: 0.2,
        theta_gamma: [-1.5, 2.2],
        theta_z: [-2.0, 1.8],
        rho,
        rho_star: fisher_z(rho).unwrap(),
        iteration: 0,
    }
}

/// Largest absolute deviation from the dense oracle, per block.
#[derive(Debug, Default, Clone, Copy)]
pub struct ConjugacyErrors {
    pub beta: f64,
    pub sigma2: f64,
    pub mu_z: f64,
    pub gamma: f64,
    pub gamma_z: f64,
}

impl ConjugacyErrors {
    pub fn max(&self) -> f64 {
        [self.beta, self.sigma2, self.mu_z, self.gamma, self.gamma_z].into_iter().fold(0.0, f64::max)
    }

    fn merge(&mut self, o: ConjugacyErrors) {
        self.beta = self.beta.max(o.beta);
        self.sigma2 = self.sigma2.max(o.sigma2);
        self.mu_z = self.mu_z.max(o.mu_z);
        self.gamma = self.gamma.max(o.gamma);
        self.gamma_z = self.gamma_z.max(o.gamma_z);
    }
}

fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

fn vmax_abs(a: &[f64], b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Accumulates `−½ Σ (a − μ b)ᵀ P (a − μ b)` as a Gaussian in the scalar μ.
#[derive(Default)]
struct ScalarGaussian {
    prec: f64,
    lin: f64,
}

impl ScalarGaussian {
    fn add(&mut self, a: &DVector<f64>, b: &DVector<f64>, p: &DMatrix<f64>) {
        let pb = p * b;
        self.prec += b.dot(&pb);
        self.lin += a.dot(&pb);
    }
}

/// Compare every Gibbs full conditional of the sampler with dense
/// brute-force conditioning at several random states.
pub fn conjugacy_errors(reformulation: Reformulation, m: usize, n: usize, seed: u64) -> ConjugacyErrors {
    let p = problem(m, n, seed);
    let cfg = oracle_config(reformulation);
    let mut s = Sampler::new(&cfg, Some(&p.design), &p.obs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let mut total = ConjugacyErrors::default();
    for rho in [0.0, 0.6, -0.85] {
        let st = random_state(s.state(), &mut rng, rho);
        s.set_state(st).unwrap();
        // Reformulation II derives γ* from w.
        let st = s.state().clone();
        total.merge(errors_at(&s, &p, &cfg, &st));
    }
    total
}

fn errors_at(s: &Sampler, p: &Problem, cfg: &ModelConfig, st: &ChainState) -> ConjugacyErrors {
    let d = &p.design;
    let spec_g = GmrfSpec::from_theta(st.theta_gamma);
    let spec_z = GmrfSpec::from_theta(st.theta_z);
    let r_g = dense_root(&d.factor(&spec_g).unwrap());
    let r_z = dense_root(&d.factor(&spec_z).unwrap());
    let q_g = d.precision(&spec_g).to_dense();
    let q_z = d.precision(&spec_z).to_dense();
    // Cross transform of the joint construction.
    let t = r_g.transpose().try_inverse().unwrap() * r_z.transpose();
    let x = p.obs.design_matrix();
    let y = DVector::from_column_slice(&p.obs.y);
    let psi = dense_psi(d);
    let z = DVector::from_column_slice(&p.obs.z_fields[0]);
    let m = z.len();
    let ones = DVector::from_element(m, 1.0);
    let beta = DVector::from_column_slice(&st.beta);
    let rho = st.rho;
    let pr = &cfg.priors;
    let s2 = st.sigma2;
    let mut e = ConjugacyErrors::default();

    // μ_z
    let mut g = ScalarGaussian::default();
    g.add(&DVector::from_element(1, pr.mu_mu_z), &DVector::from_element(1, 1.0), &DMatrix::from_element(1, 1, 1.0 / pr.sigma2_mu_z));
    g.add(&z, &ones, &q_z);
    match cfg.reformulation {
        Reformulation::I => {
            // γ − ρ T (z − μ 1) = (γ − ρ T z) − μ (−ρ T 1)
            let gamma = DVector::from_column_slice(&st.gamma);
            let a = &gamma - &t * &z * rho;
            g.add(&a, &(-(&t * &ones) * rho), &(&q_g / (1.0 - rho * rho)));
        }
        Reformulation::II => {
            g.add(&DVector::from_column_slice(&st.gamma_z), &ones, &q_z);
            let w = DVector::from_column_slice(&st.w);
            let sc = (1.0 - rho * rho).sqrt();
            let a = &y - &x * &beta - &psi * (&t * &z * rho + w * sc);
            g.add(&a, &(-(&psi * (&t * &ones)) * rho), &(DMatrix::identity(y.len(), y.len()) / s2));
        }
    }
    let (mean, var) = s.mu_z_conditional().unwrap();
    e.mu_z = (mean - g.lin / g.prec).abs().max((var - 1.0 / g.prec).abs());

    // γ (reformulation I) or w (II)
    let (prec, rhs) = match cfg.reformulation {
        Reformulation::I => {
            let q_prior = &q_g / (1.0 - rho * rho);
            let cond_mean = &t * (&z - &ones * st.mu_z) * rho;
            (&q_prior + psi.transpose() * &psi / s2, psi.transpose() * (&y - &x * &beta) / s2 + &q_prior * cond_mean)
        }
        Reformulation::II => {
            let sc = (1.0 - rho * rho).sqrt();
            let shift = &psi * (&t * (&z - &ones * st.mu_z) * rho);
            (&q_g + psi.transpose() * &psi * (sc * sc / s2), psi.transpose() * (&y - &x * &beta - shift) * (sc / s2))
        }
    };
    let want = prec.clone().cholesky().unwrap().solve(&rhs);
    let (got, f) = s.gamma_conditional().unwrap();
    let root = dense_root(&f);
    e.gamma = vmax_abs(&got, &want).max(max_abs(&(&root * root.transpose()), &prec));

    // γ_z
    if cfg.reformulation == Reformulation::II {
        let (gz_mean, gz_prec) = s.gamma_z_conditional().unwrap();
        e.gamma_z = vmax_abs(&gz_mean, &(&ones * st.mu_z)).max(max_abs(&gz_prec.to_dense(), &q_z));
    }

    // β and σ²
    let spatial = &psi * DVector::from_column_slice(&st.gamma);
    let (prior_mean, prior_var) = pr.beta_prior(1).unwrap();
    let prior_prec = DVector::from_iterator(2, prior_var.iter().map(|v| 1.0 / v));
    let prec = x.transpose() * &x / s2 + DMatrix::from_diagonal(&prior_prec);
    let rhs = x.transpose() * (&y - &spatial) / s2 + prior_prec.component_mul(&DVector::from_vec(prior_mean));
    let want = prec.clone().cholesky().unwrap().solve(&rhs);
    let (got, got_prec) = s.beta_conditional().unwrap();
    e.beta = vmax_abs(got.as_slice(), &want).max(max_abs(&got_prec, &prec));
    let resid = &y - &x * &beta - spatial;
    let (shape, rate) = s.sigma2_conditional().unwrap();
    e.sigma2 = (shape - (pr.ig_shape + 0.5 * y.len() as f64)).abs().max((rate - (pr.ig_rate + 0.5 * resid.norm_squared())).abs());
    e
}

/// Density of the correlation prior written out from its definition in the
/// variable `v` on each side of the base model: the positive side has
/// `1 − ρ = e^{−v²}`, the negative side `1 + cρ = e^{−v²}`. Returns the
/// integrand in `v` before the ½ split between the sides.
pub fn pc_oracle_side_integrand(w: u32, lambda: f64, v: f64, positive: bool) -> f64 {
    let c = (w - 1) as f64;
    let e = (-v * v).exp();
    let (neg_lr, slope) = if positive {
        let one_plus_c = 1.0 - c * (-v * v).exp_m1();
        (c * v * v - one_plus_c.ln(), (2.0 * v - 2.0 * v * e / one_plus_c).abs())
    } else {
        let one_minus = 1.0 - (-v * v).exp_m1() / c;
        (v * v - c * one_minus.ln(), (2.0 * v * e / one_minus - 2.0 * v).abs() / c)
    };
    if neg_lr <= 0.0 {
        return 0.0;
    }
    let d = neg_lr.sqrt();
    0.5 * c * slope * lambda / d * (-lambda * d).exp()
}

pub fn midpoint<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    (0..n).map(|k| f(lo + (k as f64 + 0.5) * h)).sum::<f64>() * h
}

/// Total mass of the implemented correlation prior: the implementation's
/// density where ρ is representable, the oracle in the far tails.
pub fn pc_total_mass(prior: &mgrf::pc_prior::PcRhoPrior) -> f64 {
    let (w, lambda) = (prior.w(), prior.lambda());
    let c = (w - 1) as f64;
    let cut = 5.0;
    let mut total = 0.0;
    for positive in [true, false] {
        let code = |v: f64| {
            let e = (-v * v).exp();
            let (rho, jac) =
                if positive { (-(-v * v).exp_m1(), 2.0 * v * e) } else { ((-v * v).exp_m1() / c, 2.0 * v * e / c) };
            prior.log_density(rho).map_or(0.0, f64::exp) * jac
        };
        total += midpoint(code, 0.0, cut, 200_000);
        let far = cut.max(80.0 / lambda);
        total += 0.5 * midpoint(|v| pc_oracle_side_integrand(w, lambda, v, positive), cut, far, 200_000);
    }
    total
}
