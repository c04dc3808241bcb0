//! Conditional prior of the spatial effect given a confounded covariate
//! field, with cross-correlation ρ between the two driving noises.
//!
//! Both fields share one mesh and one symbolic factorization. With Cholesky
//! roots `Q = R Rᵀ`, the cross operator is `T = R_γ⁻ᵀ R_zᵀ`, and
//!
//! ```text
//! γ | z ~ N(ρ T (z − μ_z 1), (1 − ρ²) Q_γ⁻¹).
//! ```

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse_la::{standard_normals, CholFactor, SparseSym};

/// Largest |ρ| accepted by reformulation I.
pub const RHO_MAX: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Reformulation {
    /// Closed-form conditional precision `Q_γ / (1 − ρ²)`.
    I,
    /// Shift construction through the latent replica `γ_z`; valid for all |ρ| < 1.
    #[default]
    II,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Aggregation {
    #[default]
    Sum,
    PcaFirst,
}

fn check_shared(f_gamma: &CholFactor, f_z: &CholFactor) -> Result<()> {
    if f_gamma.dim() != f_z.dim() {
        return Err(Error::DimensionMismatch { expected: f_gamma.dim(), found: f_z.dim() });
    }
    if f_gamma.perm() != f_z.perm() {
        return Err(Error::PatternMismatch);
    }
    Ok(())
}

/// `T v = R_γ⁻ᵀ R_zᵀ v`.
pub fn cross_transform(f_gamma: &CholFactor, f_z: &CholFactor, v: &[f64]) -> Result<Vec<f64>> {
    check_shared(f_gamma, f_z)?;
    f_gamma.solve_upper(&f_z.apply_lower_t(v)?)
}

fn centered(z: &[f64], mu_z: f64) -> Vec<f64> {
    z.iter().map(|v| v - mu_z).collect()
}

/// Reformulation I: `(μ_{γ|z}, Q_{γ|z})`.
pub fn conditional_moments_i(
    rho: f64,
    q_gamma: &SparseSym,
    f_gamma: &CholFactor,
    f_z: &CholFactor,
    z: &[f64],
    mu_z: f64,
) -> Result<(Vec<f64>, SparseSym)> {
    if !(rho.abs() <= RHO_MAX) {
        return Err(Error::RhoTooExtreme { rho, limit: RHO_MAX });
    }
    let mut mean = cross_transform(f_gamma, f_z, &centered(z, mu_z))?;
    mean.iter_mut().for_each(|m| *m *= rho);
    Ok((mean, q_gamma.scaled(1.0 / (1.0 - rho * rho))))
}

/// Reformulation II: `γ* = γ_raw + ρ T (z − γ_z)`.
pub fn apply_shift_ii(
    rho: f64,
    f_gamma: &CholFactor,
    f_z: &CholFactor,
    gamma_raw: &[f64],
    z: &[f64],
    gamma_z: &[f64],
) -> Result<Vec<f64>> {
    if z.len() != gamma_z.len() {
        return Err(Error::DimensionMismatch { expected: z.len(), found: gamma_z.len() });
    }
    if gamma_raw.len() != z.len() {
        return Err(Error::DimensionMismatch { expected: z.len(), found: gamma_raw.len() });
    }
    let diff: Vec<f64> = z.iter().zip(gamma_z).map(|(a, b)| a - b).collect();
    let shift = cross_transform(f_gamma, f_z, &diff)?;
    Ok(gamma_raw.iter().zip(&shift).map(|(g, s)| g + rho * s).collect())
}

/// Joint draw of `(γ, z)`: `γ = R_γ⁻ᵀ u`, `z = μ_z 1 + R_z⁻ᵀ(ρ u + √(1−ρ²) v)`.
pub fn sample_joint_pair<R: Rng + ?Sized>(
    f_gamma: &CholFactor,
    f_z: &CholFactor,
    mu_z: f64,
    rho: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_shared(f_gamma, f_z)?;
    if !(rho.abs() <= 1.0) {
        return Err(Error::OutOfSupport(rho));
    }
    let m = f_gamma.dim();
    let u = standard_normals(m, rng);
    let v = standard_normals(m, rng);
    let s = (1.0 - rho * rho).max(0.0).sqrt();
    let gamma = f_gamma.solve_upper(&u)?;
    let mixed: Vec<f64> = u.iter().zip(&v).map(|(a, b)| rho * a + s * b).collect();
    let mut z = f_z.solve_upper(&mixed)?;
    z.iter_mut().for_each(|x| *x += mu_z);
    Ok((gamma, z))
}

/// `log N(x; 0, A⁻¹)` for the factor of `A`, given the centered vector.
pub fn gmrf_log_density(f: &CholFactor, centered: &[f64]) -> Result<f64> {
    let w = f.apply_lower_t(centered)?;
    let quad: f64 = w.iter().map(|v| v * v).sum();
    Ok(0.5 * (f.logdet() - quad - f.dim() as f64 * (2.0 * PI).ln()))
}

/// `log N(γ; μ_{γ|z}, Q_{γ|z}⁻¹)` for any |ρ| < 1, computed in whitened
/// coordinates without forming the conditional precision.
pub fn conditional_log_density(
    rho: f64,
    f_gamma: &CholFactor,
    f_z: &CholFactor,
    gamma: &[f64],
    z: &[f64],
    mu_z: f64,
) -> Result<f64> {
    check_shared(f_gamma, f_z)?;
    if !(rho.abs() < 1.0) {
        return Err(Error::OutOfSupport(rho));
    }
    let a = f_gamma.apply_lower_t(gamma)?;
    let b = f_z.apply_lower_t(&centered(z, mu_z))?;
    let one_m = 1.0 - rho * rho;
    let quad: f64 = a.iter().zip(&b).map(|(x, y)| (x - rho * y).powi(2)).sum::<f64>() / one_m;
    let m = f_gamma.dim() as f64;
    Ok(0.5 * (f_gamma.logdet() - m * one_m.ln() - quad - m * (2.0 * PI).ln()))
}

/// Combine several covariate fields into one for the prior.
pub fn aggregate_covariates(z_list: &[Vec<f64>], method: Aggregation) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = z_list.first().ok_or(Error::EmptyInput)?;
    let m = first.len();
    if m == 0 {
        return Err(Error::EmptyInput);
    }
    if let Some(bad) = z_list.iter().find(|z| z.len() != m) {
        return Err(Error::DimensionMismatch { expected: m, found: bad.len() });
    }
    let k = z_list.len();
    match method {
        Aggregation::Sum => {
            let sum = (0..m).map(|i| z_list.iter().map(|z| z[i]).sum()).collect();
            Ok((sum, vec![1.0; k]))
        }
        Aggregation::PcaFirst => {
            let data = DMatrix::from_fn(m, k, |i, j| z_list[j][i]);
            let means: Vec<f64> = (0..k).map(|j| data.column(j).mean()).collect();
            let centered = DMatrix::from_fn(m, k, |i, j| data[(i, j)] - means[j]);
            let cov = centered.transpose() * &centered / (m.max(2) - 1) as f64;
            let eig = SymmetricEigen::new(cov);
            let top = eig.eigenvalues.imax();
            let mut loading: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
            let norm = loading.iter().map(|v| v * v).sum::<f64>().sqrt();
            let sign = if loading[0] < 0.0 { -1.0 } else { 1.0 };
            loading.iter_mut().for_each(|v| *v *= sign / norm);
            let scores = (0..m).map(|i| (0..k).map(|j| centered[(i, j)] * loading[j]).sum()).collect();
            Ok((scores, loading))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh_fem::{assemble_fem, build_mesh, Rect};
    use crate::sparse_la::{Ordering, SymbolicCholesky};
    use crate::spde::{interpretable_to_params, SpdeOperator};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(super) struct Pair {
        q_gamma: SparseSym,
        q_z: SparseSym,
        f_gamma: CholFactor,
        f_z: CholFactor,
    }

    fn pair(target: usize, r_gamma: f64, r_z: f64) -> Pair {
        let mesh = build_mesh(Rect::unit(), target, 0.1).unwrap();
        let op = SpdeOperator::new(&assemble_fem(&mesh).unwrap()).unwrap();
        let q_gamma = op.precision(&interpretable_to_params(1.0, r_gamma).unwrap());
        let q_z = op.precision(&interpretable_to_params(1.5, r_z).unwrap());
        let sym = SymbolicCholesky::analyze(&q_gamma, Ordering::FillReducing);
        let f_gamma = sym.factor(&q_gamma).unwrap();
        let f_z = sym.factor(&q_z).unwrap();
        Pair { q_gamma, q_z, f_gamma, f_z }
    }

    /// Dense root `R = Pᵀ L`.
    fn dense_root(f: &CholFactor) -> DMatrix<f64> {
        let mut r = DMatrix::zeros(f.dim(), f.dim());
        for (i, j, v) in f.lower_entries() {
            r[(f.perm()[i], j)] = v;
        }
        r
    }

    #[test]
    fn rho_zero_is_base_prior() {
        let p = pair(30, 0.3, 0.6);
        let z: Vec<f64> = (0..p.q_z.dim()).map(|i| (i as f64).sin()).collect();
        let (mean, q) = conditional_moments_i(0.0, &p.q_gamma, &p.f_gamma, &p.f_z, &z, 0.2).unwrap();
        assert!(mean.iter().all(|&m| m == 0.0));
        assert_eq!(q.values(), p.q_gamma.values());
        let (_, q) = conditional_moments_i(0.5, &p.q_gamma, &p.f_gamma, &p.f_z, &z, 0.2).unwrap();
        for (a, b) in q.values().iter().zip(p.q_gamma.values()) {
            assert!((a - b / 0.75).abs() <= 1e-15 * b.abs().max(1.0));
        }
        assert!(matches!(
            conditional_moments_i(0.995, &p.q_gamma, &p.f_gamma, &p.f_z, &z, 0.2),
            Err(Error::RhoTooExtreme { .. })
        ));
    }

    #[test]
    fn conditional_moments_match_dense_oracle() {
        let p = pair(36, 0.3, 0.7);
        let m = p.q_gamma.dim();
        let (rg, rz) = (dense_root(&p.f_gamma), dense_root(&p.f_z));
        assert!((&rg * rg.transpose() - p.q_gamma.to_dense()).abs().max() < 1e-8 * p.q_gamma.max_abs_diagonal());
        let sig_g_half = rg.transpose().try_inverse().unwrap();
        let sig_z_half = rz.transpose().try_inverse().unwrap();
        let z: Vec<f64> = (0..m).map(|i| 0.3 + (1.3 * i as f64).cos()).collect();
        let mu_z = 0.25;
        for rho in [-0.6, 0.3, 0.9] {
            let (mean, q) = conditional_moments_i(rho, &p.q_gamma, &p.f_gamma, &p.f_z, &z, mu_z).unwrap();
            let zc = nalgebra::DVector::from_iterator(m, z.iter().map(|v| v - mu_z));
            let expected = &sig_g_half * sig_z_half.clone().try_inverse().unwrap() * zc * rho;
            let scale = expected.amax().max(1.0);
            for i in 0..m {
                assert!((mean[i] - expected[i]).abs() < 1e-8 * scale);
            }
            let cov = q.to_dense().try_inverse().unwrap();
            let expected_cov = (&sig_g_half * sig_g_half.transpose()) * (1.0 - rho * rho);
            assert!((cov - &expected_cov).abs().max() < 1e-8 * expected_cov.amax());
        }
    }

    #[test]
    fn sign_symmetry_and_shift_identities() {
        let p = pair(30, 0.4, 0.4);
        let m = p.q_gamma.dim();
        let z: Vec<f64> = (0..m).map(|i| (0.7 * i as f64).sin()).collect();
        let (plus, q_plus) = conditional_moments_i(0.4, &p.q_gamma, &p.f_gamma, &p.f_z, &z, 0.0).unwrap();
        let (minus, q_minus) = conditional_moments_i(-0.4, &p.q_gamma, &p.f_gamma, &p.f_z, &z, 0.0).unwrap();
        assert!(plus.iter().zip(&minus).all(|(a, b)| a == &-b));
        assert_eq!(q_plus.values(), q_minus.values());

        let raw: Vec<f64> = (0..m).map(|i| (i as f64).cos()).collect();
        assert_eq!(apply_shift_ii(0.0, &p.f_gamma, &p.f_z, &raw, &z, &vec![0.0; m]).unwrap(), raw);
        assert_eq!(apply_shift_ii(0.8, &p.f_gamma, &p.f_z, &raw, &z, &z).unwrap(), raw);
    }

    #[test]
    fn cross_transform_carries_q_gamma_to_q_z() {
        let p = pair(30, 0.2, 0.8);
        let m = p.q_gamma.dim();
        let rho = 0.65;
        let mut t = DMatrix::zeros(m, m);
        for j in 0..m {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            let col = cross_transform(&p.f_gamma, &p.f_z, &e).unwrap();
            for i in 0..m {
                t[(i, j)] = rho * col[i];
            }
        }
        let lhs = t.transpose() * p.q_gamma.to_dense() * &t;
        let rhs = p.q_z.to_dense() * (rho * rho);
        assert!((lhs - &rhs).abs().max() < 1e-10 * rhs.amax());
    }

    #[test]
    fn joint_pair_degenerate_rho_one() {
        let p = pair(30, 0.3, 0.6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (gamma, z) = sample_joint_pair(&p.f_gamma, &p.f_z, 0.7, 1.0, &mut rng).unwrap();
        let a = p.f_gamma.apply_lower_t(&gamma).unwrap();
        let b = p.f_z.apply_lower_t(&centered(&z, 0.7)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn conditional_density_matches_dense_gaussian() {
        let p = pair(25, 0.3, 0.6);
        let m = p.q_gamma.dim();
        let z: Vec<f64> = (0..m).map(|i| (0.4 * i as f64).sin()).collect();
        let gamma: Vec<f64> = (0..m).map(|i| 0.1 * (0.9 * i as f64).cos()).collect();
        let rho = -0.45;
        let (mean, q) = conditional_moments_i(rho, &p.q_gamma, &p.f_gamma, &p.f_z, &z, 0.1).unwrap();
        let qd = q.to_dense();
        let diff = nalgebra::DVector::from_iterator(m, gamma.iter().zip(&mean).map(|(g, mu)| g - mu));
        let expected =
            0.5 * (qd.clone().cholesky().unwrap().determinant().ln() - (diff.transpose() * &qd * &diff)[0])
                - 0.5 * m as f64 * (2.0 * PI).ln();
        let got = conditional_log_density(rho, &p.f_gamma, &p.f_z, &gamma, &z, 0.1).unwrap();
        assert!((got - expected).abs() < 1e-8 * expected.abs().max(1.0));
    }

    #[test]
    fn aggregation() {
        let z1 = vec![1.0, -2.0, 0.5, 3.0];
        let (s, l) = aggregate_covariates(&[z1.clone()], Aggregation::Sum).unwrap();
        assert_eq!(s, z1);
        assert_eq!(l, vec![1.0]);
        let (scores, loading) = aggregate_covariates(&[z1.clone(), z1.clone()], Aggregation::PcaFirst).unwrap();
        let mean = z1.iter().sum::<f64>() / 4.0;
        let ratio = scores[0] / (z1[0] - mean);
        for (s, z) in scores.iter().zip(&z1) {
            assert!((s - ratio * (z - mean)).abs() < 1e-12);
        }
        assert!((loading[0] - loading[1]).abs() < 1e-12 && loading[0] > 0.0);
        let neg: Vec<f64> = z1.iter().map(|v| -v).collect();
        let (_, loading) = aggregate_covariates(&[neg, z1], Aggregation::PcaFirst).unwrap();
        assert!(loading[0] > 0.0 && loading[1] < 0.0);
        assert!(matches!(aggregate_covariates(&[], Aggregation::Sum), Err(Error::EmptyInput)));
    }
}
