//! Comparison models: non-spatial regression, the base spatial model
//! (ρ = 0, no covariate-field hierarchy) and restricted spatial regression,
//! whose spatial effect is constrained orthogonal to the fixed effects by
//! conditioning by kriging.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mesh_fem::Projector;
use crate::sampler::{run_chain, ChainOutput, ModelConfig, ModelKind, Observations, SpatialDesign};
use crate::sparse_la::CholFactor;

fn checked_cholesky(s: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let s = (&s + s.transpose()) * 0.5;
    let scale = s.diagonal().max();
    let chol = s.cholesky().ok_or(Error::RankDeficientDesign)?;
    if chol.l().diagonal().iter().any(|d| d * d <= 1e-12 * scale) {
        return Err(Error::RankDeficientDesign);
    }
    Ok(chol)
}

/// Linear constraint `A γ = 0` with `A = designᵀ Ψ`.
#[derive(Debug, Clone)]
pub struct OrthogonalConstraint {
    // Rows of A, each an M-vector.
    rows: Vec<Vec<f64>>,
}

impl OrthogonalConstraint {
    pub fn new(design: &DMatrix<f64>, projector: &Projector) -> Result<Self> {
        if design.nrows() != projector.n_rows() {
            return Err(Error::DimensionMismatch { expected: projector.n_rows(), found: design.nrows() });
        }
        let rows = (0..design.ncols())
            .map(|k| projector.apply_transpose(design.column(k).as_slice()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_constraints(&self) -> usize {
        self.rows.len()
    }

    /// `A γ`.
    pub fn evaluate(&self, gamma: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().zip(gamma).map(|(a, g)| a * g).sum()).collect()
    }

    /// `‖A γ‖_∞`.
    pub fn residual(&self, gamma: &[f64]) -> f64 {
        self.evaluate(gamma).iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(Q⁻¹ Aᵀ, A Q⁻¹ Aᵀ)` for the factor of `Q`.
    fn projected(&self, factor: &CholFactor) -> Result<(Vec<Vec<f64>>, DMatrix<f64>)> {
        let k = self.rows.len();
        let solved = self.rows.iter().map(|r| factor.solve_full(r)).collect::<Result<Vec<_>>>()?;
        let s = DMatrix::from_fn(k, k, |i, j| self.rows[i].iter().zip(&solved[j]).map(|(a, b)| a * b).sum());
        Ok((solved, s))
    }

    /// Conditioning by kriging: `γ − Q⁻¹Aᵀ(AQ⁻¹Aᵀ)⁻¹Aγ`.
    pub fn apply(&self, gamma: &[f64], factor: &CholFactor) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Ok(gamma.to_vec());
        }
        let (solved, s) = self.projected(factor)?;
        let chol = checked_cholesky(s)?;
        let coef = chol.solve(&DVector::from_vec(self.evaluate(gamma)));
        let mut out = gamma.to_vec();
        for (c, col) in coef.iter().zip(&solved) {
            for (o, v) in out.iter_mut().zip(col) {
                *o -= c * v;
            }
        }
        Ok(out)
    }

    /// `log N(0; 0, A Q⁻¹ Aᵀ)`, the normalizer of the constrained prior.
    pub fn log_normalizer(&self, factor: &CholFactor) -> Result<f64> {
        if self.is_empty() {
            return Ok(0.0);
        }
        let (_, s) = self.projected(factor)?;
        let chol = checked_cholesky(s)?;
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let k = self.rows.len() as f64;
        Ok(-0.5 * (logdet + k * (2.0 * std::f64::consts::PI).ln()))
    }
}

/// Project `gamma_raw` onto `{γ : designᵀ Ψ γ = 0}` in the metric of `Q`.
pub fn constrain_orthogonal(
    gamma_raw: &[f64],
    factor: &CholFactor,
    design: &DMatrix<f64>,
    projector: &Projector,
) -> Result<Vec<f64>> {
    OrthogonalConstraint::new(design, projector)?.apply(gamma_raw, factor)
}

fn fit(kind: ModelKind, cfg: &ModelConfig, design: Option<&SpatialDesign>, obs: &Observations) -> Result<ChainOutput> {
    let cfg = ModelConfig { model: kind, ..cfg.clone() };
    run_chain(&cfg, design, obs)
}

pub fn fit_nonspatial(cfg: &ModelConfig, obs: &Observations) -> Result<ChainOutput> {
    fit(ModelKind::NonSpatial, cfg, None, obs)
}

pub fn fit_base(cfg: &ModelConfig, design: &SpatialDesign, obs: &Observations) -> Result<ChainOutput> {
    fit(ModelKind::BaseSpatial, cfg, Some(design), obs)
}

pub fn fit_rsr(cfg: &ModelConfig, design: &SpatialDesign, obs: &Observations) -> Result<ChainOutput> {
    fit(ModelKind::Rsr, cfg, Some(design), obs)
}
