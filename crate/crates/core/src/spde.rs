//! Matérn SPDE (α = 2, ν = 1) precision assembly and parameter maps.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh_fem::FemMatrices;
use crate::sparse_la::SparseSym;

/// Field hyperparameters on the sampler scale: `(log τ, log κ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmrfSpec {
    pub theta_tau: f64,
    pub theta_kappa: f64,
}

impl GmrfSpec {
    pub fn new(theta_tau: f64, theta_kappa: f64) -> Self {
        Self { theta_tau, theta_kappa }
    }

    pub fn from_theta(theta: [f64; 2]) -> Self {
        Self::new(theta[0], theta[1])
    }

    pub fn theta(&self) -> [f64; 2] {
        [self.theta_tau, self.theta_kappa]
    }

    pub fn tau(&self) -> f64 {
        self.theta_tau.exp()
    }

    pub fn kappa(&self) -> f64 {
        self.theta_kappa.exp()
    }

    /// Marginal variance `1 / (4π κ² τ²)`.
    pub fn sigma2(&self) -> f64 {
        1.0 / (4.0 * PI * (2.0 * (self.theta_kappa + self.theta_tau)).exp())
    }

    /// Practical range `√8 / κ`.
    pub fn range(&self) -> f64 {
        8f64.sqrt() / self.kappa()
    }
}

pub fn params_to_interpretable(spec: &GmrfSpec) -> (f64, f64) {
    (spec.sigma2(), spec.range())
}

pub fn interpretable_to_params(sigma2: f64, range: f64) -> Result<GmrfSpec> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::NonPositiveInput(format!("marginal variance {sigma2}")));
    }
    if !(range > 0.0) || !range.is_finite() {
        return Err(Error::NonPositiveInput(format!("range {range}")));
    }
    let kappa = 8f64.sqrt() / range;
    let tau = 1.0 / (4.0 * PI * kappa * kappa * sigma2).sqrt();
    Ok(GmrfSpec::new(tau.ln(), kappa.ln()))
}

/// The three FEM building blocks `C`, `G`, `G C⁻¹ G` stored on one common
/// sparsity pattern so every precision shares a symbolic factorization.
#[derive(Debug, Clone)]
pub struct SpdeOperator {
    c: SparseSym,
    g: SparseSym,
    gcg: SparseSym,
    extra: Option<SparseSym>,
}

fn g_cinv_g(g: &SparseSym, c_diag: &[f64]) -> Result<SparseSym> {
    let m = g.dim();
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    for (i, j, v) in g.iter() {
        cols[j].push((i, v));
        if i != j {
            cols[i].push((j, v));
        }
    }
    let mut trip = Vec::new();
    for (k, col) in cols.iter().enumerate() {
        for &(i, gi) in col {
            for &(j, gj) in col {
                if i >= j {
                    trip.push((i, j, gi * gj / c_diag[k]));
                }
            }
        }
    }
    SparseSym::from_triplets(m, trip)
}

impl SpdeOperator {
    pub fn new(fem: &FemMatrices) -> Result<Self> {
        Self::with_extra_pattern(fem, None)
    }

    /// Like [`SpdeOperator::new`], additionally embedding `extra` (e.g. the
    /// data term `ΨᵀΨ`) in the common pattern.
    pub fn with_extra_pattern(fem: &FemMatrices, extra: Option<&SparseSym>) -> Result<Self> {
        let gcg = g_cinv_g(&fem.g, &fem.c.diagonal())?;
        let mut mats = vec![&fem.c, &fem.g, &gcg];
        if let Some(e) = extra {
            mats.push(e);
        }
        let pattern = SparseSym::union_pattern(&mats)?;
        Ok(Self {
            c: fem.c.embed_into(&pattern)?,
            g: fem.g.embed_into(&pattern)?,
            gcg: gcg.embed_into(&pattern)?,
            extra: extra.map(|e| e.embed_into(&pattern)).transpose()?,
        })
    }

    pub fn dim(&self) -> usize {
        self.c.dim()
    }

    /// The extra matrix on the common pattern, if one was supplied.
    pub fn extra(&self) -> Option<&SparseSym> {
        self.extra.as_ref()
    }

    /// `Q = τ² (κ⁴ C + 2 κ² G + G C⁻¹ G)` on the common pattern.
    pub fn precision(&self, spec: &GmrfSpec) -> SparseSym {
        let tau2 = (2.0 * spec.theta_tau).exp();
        let k2 = (2.0 * spec.theta_kappa).exp();
        let mut q = self.c.clone();
        let out = q.values_mut();
        for (p, o) in out.iter_mut().enumerate() {
            *o = tau2 * (k2 * k2 * self.c.values()[p] + 2.0 * k2 * self.g.values()[p] + self.gcg.values()[p]);
        }
        q
    }

    /// `Q / scale_div + add_coef · extra`, the posterior-style precision.
    pub fn precision_plus_extra(&self, spec: &GmrfSpec, scale_div: f64, add_coef: f64) -> Result<SparseSym> {
        let extra = self.extra.as_ref().ok_or(Error::PatternMismatch)?;
        let q = self.precision(spec);
        SparseSym::linear_combination(&[(1.0 / scale_div, &q), (add_coef, extra)])
    }
}
