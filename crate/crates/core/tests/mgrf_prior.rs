use mgrf::mesh_fem::{assemble_fem, build_mesh, Rect, TriMesh};
use mgrf::mgrf_prior::{aggregate_covariates, conditional_moments_i, sample_joint_pair, Aggregation};
use mgrf::sparse_la::{CholFactor, Ordering, SparseSym, SymbolicCholesky};
use mgrf::spde::{interpretable_to_params, SpdeOperator};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Pair {
    q_gamma: SparseSym,
    f_gamma: CholFactor,
    f_z: CholFactor,
}

fn pair(mesh: &TriMesh, r_gamma: f64, r_z: f64) -> Pair {
    let op = SpdeOperator::new(&assemble_fem(mesh).unwrap()).unwrap();
    let q_gamma = op.precision(&interpretable_to_params(1.0, r_gamma).unwrap());
    let q_z = op.precision(&interpretable_to_params(1.0, r_z).unwrap());
    let sym = SymbolicCholesky::analyze(&q_gamma, Ordering::FillReducing);
    Pair { f_gamma: sym.factor(&q_gamma).unwrap(), f_z: sym.factor(&q_z).unwrap(), q_gamma }
}

fn dense_root(f: &CholFactor) -> DMatrix<f64> {
    let mut r = DMatrix::zeros(f.dim(), f.dim());
    for (i, j, v) in f.lower_entries() {
        r[(f.perm()[i], j)] = v;
    }
    r
}

fn small_mesh() -> TriMesh {
    build_mesh(Rect::unit(), 30, 0.1).unwrap()
}

struct Moments {
    n: f64,
    sum_g: Vec<f64>,
    sum_z: Vec<f64>,
    sum_gz: DMatrix<f64>,
    sum_gz2: DMatrix<f64>,
    sum_gg: Vec<f64>,
    sum_zz: Vec<f64>,
}

fn collect(p: &Pair, rho: f64, draws: usize, seed: u64) -> Moments {
    let m = p.f_gamma.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mo = Moments {
        n: draws as f64,
        sum_g: vec![0.0; m],
        sum_z: vec![0.0; m],
        sum_gz: DMatrix::zeros(m, m),
        sum_gz2: DMatrix::zeros(m, m),
        sum_gg: vec![0.0; m],
        sum_zz: vec![0.0; m],
    };
    for _ in 0..draws {
        let (g, z) = sample_joint_pair(&p.f_gamma, &p.f_z, 0.0, rho, &mut rng).unwrap();
        for i in 0..m {
            mo.sum_g[i] += g[i];
            mo.sum_z[i] += z[i];
            mo.sum_gg[i] += g[i] * g[i];
            mo.sum_zz[i] += z[i] * z[i];
            for j in 0..m {
                let v = g[i] * z[j];
                mo.sum_gz[(i, j)] += v;
                mo.sum_gz2[(i, j)] += v * v;
            }
        }
    }
    mo
}

/// Fraction of cross-covariance entries within 3 standard errors of the
/// oracle, and the largest z-score.
fn cross_cov_agreement(mo: &Moments, oracle: &DMatrix<f64>) -> (f64, f64) {
    let m = oracle.nrows();
    let (mut inside, mut worst) = (0usize, 0.0f64);
    for i in 0..m {
        for j in 0..m {
            let mean = mo.sum_gz[(i, j)] / mo.n;
            let se = ((mo.sum_gz2[(i, j)] / mo.n - mean * mean) / mo.n).sqrt();
            let z = (mean - oracle[(i, j)]).abs() / se;
            inside += (z < 3.0) as usize;
            worst = worst.max(z);
        }
    }
    (inside as f64 / (m * m) as f64, worst)
}

#[test]
fn joint_pair_cross_covariance_matches_block_formula() {
    let mesh = small_mesh();
    assert!(mesh.num_nodes() <= 40);
    let p = pair(&mesh, 0.3, 0.6);
    let rho = 0.7;
    // Cov(γ, z) = ρ R_γ⁻ᵀ R_z⁻¹.
    let rg_inv_t = dense_root(&p.f_gamma).try_inverse().unwrap().transpose();
    let rz_inv = dense_root(&p.f_z).try_inverse().unwrap();
    let oracle = rg_inv_t * rz_inv * rho;
    let mo = collect(&p, rho, 100_000, 1);
    let (frac, worst) = cross_cov_agreement(&mo, &oracle);
    assert!(frac > 0.97 && worst < 5.0, "fraction {frac}, worst {worst}");
}

#[test]
fn joint_pair_independent_at_rho_zero() {
    let mesh = small_mesh();
    let p = pair(&mesh, 0.3, 0.6);
    let m = mesh.num_nodes();
    let mo = collect(&p, 0.0, 100_000, 2);
    let (frac, worst) = cross_cov_agreement(&mo, &DMatrix::zeros(m, m));
    assert!(frac > 0.97 && worst < 5.0, "fraction {frac}, worst {worst}");
}

#[test]
fn nodewise_correlation_equals_rho() {
    let mesh = small_mesh();
    // Equal ranges: then Corr(γ_m, z_m) = ρ at every node.
    let p = pair(&mesh, 0.4, 0.4);
    for rho in [-0.6, 0.3, 0.9] {
        let mo = collect(&p, rho, 100_000, 3);
        for i in 0..mesh.num_nodes() {
            let mg = mo.sum_g[i] / mo.n;
            let mz = mo.sum_z[i] / mo.n;
            let c = mo.sum_gz[(i, i)] / mo.n - mg * mz;
            let vg = mo.sum_gg[i] / mo.n - mg * mg;
            let vz = mo.sum_zz[i] / mo.n - mz * mz;
            let corr = c / (vg * vz).sqrt();
            assert!((corr - rho).abs() < 0.02, "node {i}: {corr} vs {rho}");
        }
    }
}

#[test]
fn conditional_moments_scale_and_base_case() {
    let mesh = small_mesh();
    let p = pair(&mesh, 0.3, 0.6);
    let z: Vec<f64> = (0..mesh.num_nodes()).map(|k| (k as f64 * 0.7).sin()).collect();
    let (mu, q) = conditional_moments_i(0.5, &p.q_gamma, &p.f_gamma, &p.f_z, &z, 0.2).unwrap();
    for (a, b) in q.values().iter().zip(p.q_gamma.values()) {
        assert!((a - b / 0.75).abs() <= 1e-15 * a.abs());
    }
    let (mu0, q0) = conditional_moments_i(0.0, &p.q_gamma, &p.f_gamma, &p.f_z, &z, 0.2).unwrap();
    assert!(mu0.iter().all(|&v| v == 0.0));
    assert_eq!(q0, p.q_gamma);
    let (mu_neg, _) = conditional_moments_i(-0.5, &p.q_gamma, &p.f_gamma, &p.f_z, &z, 0.2).unwrap();
    for (a, b) in mu.iter().zip(&mu_neg) {
        assert!((a + b).abs() < 1e-14);
    }
}

#[test]
fn sum_of_fields_carries_the_long_range_structure() {
    let mesh = build_mesh(Rect::unit(), 500, 0.2).unwrap();
    let short = pair(&mesh, 0.1, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // Empirical correlation between inside nodes at lags in [0.25, 0.35].
    let nodes = mesh.nodes();
    let inside: Vec<usize> = (0..nodes.len()).filter(|&k| mesh.interior_flags()[k]).collect();
    let mut pairs = Vec::new();
    for (a, &i) in inside.iter().enumerate() {
        for &j in &inside[a + 1..] {
            let d = (nodes[i][0] - nodes[j][0]).hypot(nodes[i][1] - nodes[j][1]);
            if (0.25..0.35).contains(&d) {
                pairs.push((i, j));
            }
        }
    }
    let lag_corr = |fields: &[Vec<f64>]| {
        let (mut c, mut v) = (0.0, 0.0);
        for f in fields {
            for &(i, j) in &pairs {
                c += f[i] * f[j];
                v += 0.5 * (f[i] * f[i] + f[j] * f[j]);
            }
        }
        c / v
    };
    let (mut z1s, mut z2s, mut sums) = (vec![], vec![], vec![]);
    for _ in 0..200 {
        // At ρ = 0 the two members of a pair are independent.
        let (z1, z2) = sample_joint_pair(&short.f_gamma, &short.f_z, 0.0, 0.0, &mut rng).unwrap();
        let (sum, loadings) = aggregate_covariates(&[z1.clone(), z2.clone()], Aggregation::Sum).unwrap();
        assert_eq!(loadings, vec![1.0, 1.0]);
        z1s.push(z1);
        z2s.push(z2);
        sums.push(sum);
    }
    let (c1, c2, cs) = (lag_corr(&z1s), lag_corr(&z2s), lag_corr(&sums));
    assert!(c1 < 0.1, "short-range field correlation {c1}");
    assert!(c2 > 0.3, "long-range field correlation {c2}");
    // The sum keeps about half of the long-range correlation and none of
    // the short-range one.
    assert!((cs - 0.5 * (c1 + c2)).abs() < 0.05 && cs > 0.15, "sum correlation {cs}");
}

#[test]
fn pca_of_identical_fields_is_rank_one() {
    let z: Vec<f64> = (0..50).map(|k| (k as f64 * 0.3).cos() + 0.1 * k as f64).collect();
    let (scores, loadings) = aggregate_covariates(&[z.clone(), z.clone()], Aggregation::PcaFirst).unwrap();
    let s = 1.0 / 2f64.sqrt();
    assert!((loadings[0] - s).abs() < 1e-12 && (loadings[1] - s).abs() < 1e-12);
    let mean = z.iter().sum::<f64>() / 50.0;
    for (sc, v) in scores.iter().zip(&z) {
        assert!((sc - 2.0 * s * (v - mean)).abs() < 1e-10);
    }
    let (single, l1) = aggregate_covariates(&[z.clone()], Aggregation::Sum).unwrap();
    assert_eq!(single, z);
    assert_eq!(l1, vec![1.0]);
    assert!(aggregate_covariates(&[], Aggregation::Sum).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn pca_loading_is_unit_with_nonnegative_first_entry(
        cols in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 20), 1..4),
    ) {
        let (scores, loadings) = aggregate_covariates(&cols, Aggregation::PcaFirst).unwrap();
        prop_assert_eq!(scores.len(), 20);
        prop_assert!((loadings.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-10);
        prop_assert!(loadings[0] >= 0.0);
        let mean = scores.iter().sum::<f64>() / 20.0;
        prop_assert!(mean.abs() < 1e-9);
    }
}
