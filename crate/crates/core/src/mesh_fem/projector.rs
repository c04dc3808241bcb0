use super::mesh::signed_area;
use super::TriMesh;
use crate::error::{Error, Result};
use crate::sparse_la::SparseSym;

/// Barycentric tolerance for locations on triangle edges.
pub const POINT_TOLERANCE: f64 = 1e-10;

/// Sparse `n × M` interpolation matrix from mesh weights to locations.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl Projector {
    pub fn n_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |p| (self.col_idx[p], self.values[p]))
    }

    /// `Ψ x` for nodal values `x`.
    pub fn apply(&self, nodal: &[f64]) -> Result<Vec<f64>> {
        if nodal.len() != self.n_cols {
            return Err(Error::DimensionMismatch { expected: self.n_cols, found: nodal.len() });
        }
        Ok((0..self.n_rows()).map(|i| self.row(i).map(|(j, w)| w * nodal[j]).sum()).collect())
    }

    /// `Ψᵀ r` for an observation-space vector `r`.
    pub fn apply_transpose(&self, obs: &[f64]) -> Result<Vec<f64>> {
        if obs.len() != self.n_rows() {
            return Err(Error::DimensionMismatch { expected: self.n_rows(), found: obs.len() });
        }
        let mut out = vec![0.0; self.n_cols];
        for (i, r) in obs.iter().enumerate() {
            for (j, w) in self.row(i) {
                out[j] += w * r;
            }
        }
        Ok(out)
    }

    /// `Ψᵀ Ψ`.
    pub fn gram(&self) -> Result<SparseSym> {
        let mut trip = Vec::new();
        for i in 0..self.n_rows() {
            let row: Vec<(usize, f64)> = self.row(i).collect();
            for &(a, wa) in &row {
                for &(b, wb) in &row {
                    if a >= b {
                        trip.push((a, b, wa * wb));
                    }
                }
            }
        }
        SparseSym::from_triplets(self.n_cols, trip)
    }
}

fn barycentric(mesh: &TriMesh, t: usize, p: [f64; 2]) -> [f64; 3] {
    let [a, b, c] = mesh.triangles()[t];
    let (pa, pb, pc) = (mesh.nodes()[a], mesh.nodes()[b], mesh.nodes()[c]);
    let area = signed_area(pa, pb, pc);
    [signed_area(p, pb, pc) / area, signed_area(pa, p, pc) / area, signed_area(pa, pb, p) / area]
}

/// Uniform bucket grid over triangle bounding boxes.
struct TriangleIndex {
    x0: f64,
    y0: f64,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl TriangleIndex {
    fn new(mesh: &TriMesh) -> Self {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for p in mesh.nodes() {
            x0 = x0.min(p[0]);
            y0 = y0.min(p[1]);
            x1 = x1.max(p[0]);
            y1 = y1.max(p[1]);
        }
        let side = (mesh.triangles().len() as f64).sqrt().ceil().max(1.0);
        let cell = ((x1 - x0).max(y1 - y0) / side).max(f64::MIN_POSITIVE);
        let nx = ((x1 - x0) / cell).floor() as usize + 1;
        let ny = ((y1 - y0) / cell).floor() as usize + 1;
        let mut index = Self { x0, y0, cell, nx, ny, buckets: vec![Vec::new(); nx * ny] };
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let pts = tri.map(|v| mesh.nodes()[v]);
            let lo = index.cell_of([
                pts.iter().map(|p| p[0]).fold(f64::MAX, f64::min) - POINT_TOLERANCE,
                pts.iter().map(|p| p[1]).fold(f64::MAX, f64::min) - POINT_TOLERANCE,
            ]);
            let hi = index.cell_of([
                pts.iter().map(|p| p[0]).fold(f64::MIN, f64::max) + POINT_TOLERANCE,
                pts.iter().map(|p| p[1]).fold(f64::MIN, f64::max) + POINT_TOLERANCE,
            ]);
            for j in lo.1..=hi.1 {
                for i in lo.0..=hi.0 {
                    index.buckets[i + nx * j].push(t);
                }
            }
        }
        index
    }

    fn cell_of(&self, p: [f64; 2]) -> (usize, usize) {
        let i = ((p[0] - self.x0) / self.cell).floor().clamp(0.0, (self.nx - 1) as f64) as usize;
        let j = ((p[1] - self.y0) / self.cell).floor().clamp(0.0, (self.ny - 1) as f64) as usize;
        (i, j)
    }
}

/// Barycentric interpolation weights of each location in its containing
/// triangle. Locations on shared edges go to the lowest-index triangle.
pub fn project(mesh: &TriMesh, locations: &[[f64; 2]]) -> Result<Projector> {
    let index = TriangleIndex::new(mesh);
    let mut row_ptr = vec![0];
    let mut col_idx = Vec::with_capacity(3 * locations.len());
    let mut values = Vec::with_capacity(3 * locations.len());
    for (k, &p) in locations.iter().enumerate() {
        let (i, j) = index.cell_of(p);
        let found = index.buckets[i + index.nx * j]
            .iter()
            .map(|&t| (t, barycentric(mesh, t, p)))
            .find(|(_, w)| w.iter().all(|&v| v >= -POINT_TOLERANCE));
        let (t, mut w) = found.ok_or(Error::PointOutsideMesh(k))?;
        w.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        let total: f64 = w.iter().sum();
        let tri = mesh.triangles()[t];
        let mut entries: Vec<(usize, f64)> = (0..3).map(|a| (tri[a], w[a] / total)).filter(|e| e.1 > 0.0).collect();
        entries.sort_unstable_by_key(|e| e.0);
        for (c, v) in entries {
            col_idx.push(c);
            values.push(v);
        }
        row_ptr.push(col_idx.len());
    }
    Ok(Projector { n_cols: mesh.num_nodes(), row_ptr, col_idx, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh_fem::{build_mesh, Rect};

    #[test]
    fn node_location_is_unit_row() {
        let mesh = build_mesh(Rect::unit(), 25, 0.0).unwrap();
        let node = mesh.nodes()[7];
        let psi = project(&mesh, &[node]).unwrap();
        let row: Vec<_> = psi.row(0).collect();
        assert_eq!(row.len(), 1);
        assert_eq!(row[0].0, 7);
        assert!((row[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn centroid_has_equal_weights() {
        let mesh = build_mesh(Rect::unit(), 25, 0.0).unwrap();
        let tri = mesh.triangles()[5];
        let c = [0, 1].map(|d| tri.iter().map(|&v| mesh.nodes()[v][d]).sum::<f64>() / 3.0);
        let psi = project(&mesh, &[c]).unwrap();
        let row: Vec<_> = psi.row(0).collect();
        assert_eq!(row.len(), 3);
        assert!(row.iter().all(|(_, w)| (w - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn outside_point_is_reported() {
        let mesh = build_mesh(Rect::unit(), 16, 0.0).unwrap();
        assert!(matches!(project(&mesh, &[[0.5, 0.5], [1.5, 0.5]]), Err(Error::PointOutsideMesh(1))));
    }

    #[test]
    fn gram_matches_dense_product() {
        let mesh = build_mesh(Rect::unit(), 16, 0.0).unwrap();
        let locs = [[0.1, 0.2], [0.5, 0.5], [0.9, 0.33], [0.0, 1.0]];
        let psi = project(&mesh, &locs).unwrap();
        let m = mesh.num_nodes();
        let mut dense = nalgebra::DMatrix::zeros(locs.len(), m);
        for i in 0..locs.len() {
            for (j, w) in psi.row(i) {
                dense[(i, j)] = w;
            }
        }
        let expected = dense.transpose() * &dense;
        let gram = psi.gram().unwrap().to_dense();
        assert!((gram - expected).abs().max() < 1e-14);
    }
}
