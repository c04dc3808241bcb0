use super::TriMesh;
use crate::error::Result;
use crate::sparse_la::SparseSym;

/// Lumped mass matrix `C` (diagonal) and P1 stiffness matrix `G`.
#[derive(Debug, Clone)]
pub struct FemMatrices {
    pub c: SparseSym,
    pub g: SparseSym,
}

/// Gradients of the three barycentric coordinate functions, times `2·area`.
fn scaled_gradients(p: [[f64; 2]; 3]) -> [[f64; 2]; 3] {
    let mut grads = [[0.0; 2]; 3];
    for k in 0..3 {
        let a = p[(k + 1) % 3];
        let b = p[(k + 2) % 3];
        // rotate the opposite edge by -90 degrees
        grads[k] = [a[1] - b[1], b[0] - a[0]];
    }
    grads
}

pub fn assemble_fem(mesh: &TriMesh) -> Result<FemMatrices> {
    let m = mesh.num_nodes();
    let mut mass = vec![0.0; m];
    let mut stiff = Vec::with_capacity(mesh.triangles().len() * 6);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.triangle_area(t);
        let pts = [mesh.nodes()[tri[0]], mesh.nodes()[tri[1]], mesh.nodes()[tri[2]]];
        let grads = scaled_gradients(pts);
        for a in 0..3 {
            mass[tri[a]] += area / 3.0;
            for b in 0..=a {
                let dot = grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1];
                stiff.push((tri[a], tri[b], dot / (4.0 * area)));
            }
        }
    }
    Ok(FemMatrices { c: SparseSym::from_diagonal(&mass), g: SparseSym::from_triplets(m, stiff)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh_fem::{build_mesh, Rect};

    #[test]
    fn single_right_triangle() {
        let mesh = TriMesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]], Rect::unit()).unwrap();
        let fem = assemble_fem(&mesh).unwrap();
        let total: f64 = fem.c.diagonal().iter().sum();
        assert!((total - 0.5).abs() < 1e-15);
        // Known P1 stiffness of the reference triangle.
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((fem.g.get(i, j) - expected[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constants_in_stiffness_null_space() {
        let mesh = build_mesh(Rect::new(0.0, 2.0, -1.0, 0.5), 150, 0.2).unwrap();
        let fem = assemble_fem(&mesh).unwrap();
        let g1 = fem.g.matvec(&vec![1.0; mesh.num_nodes()]).unwrap();
        assert!(g1.iter().all(|v| v.abs() < 1e-10));
        let total: f64 = fem.c.diagonal().iter().sum();
        assert!((total - mesh.total_area()).abs() < 1e-10 * mesh.total_area());
        assert!(fem.c.diagonal().iter().all(|&c| c > 0.0));
    }
}
