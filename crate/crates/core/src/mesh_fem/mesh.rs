use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self { x_min, x_max, y_min, y_max }
    }

    pub fn unit() -> Self {
        Self::new(0.0, 1.0, 0.0, 1.0)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: [f64; 2], tol: f64) -> bool {
        p[0] >= self.x_min - tol && p[0] <= self.x_max + tol && p[1] >= self.y_min - tol && p[1] <= self.y_max + tol
    }

    pub fn expanded(&self, margin: f64) -> Self {
        Self::new(self.x_min - margin, self.x_max + margin, self.y_min - margin, self.y_max + margin)
    }
}

/// Planar triangulation carrying the piecewise-linear basis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TriMesh {
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    interior: Vec<bool>,
    domain: Rect,
}

pub(crate) fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

const INTERIOR_TOL: f64 = 1e-10;

impl TriMesh {
    /// Build from explicit geometry. Clockwise triangles are reoriented;
    /// triangles with zero area are rejected.
    pub fn new(nodes: Vec<[f64; 2]>, mut triangles: Vec<[usize; 3]>, domain: Rect) -> Result<Self> {
        for (t, tri) in triangles.iter_mut().enumerate() {
            if tri.iter().any(|&v| v >= nodes.len()) {
                return Err(Error::DegenerateDomain(format!("triangle {t} references a missing node")));
            }
            let area = signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if area.abs() <= f64::EPSILON * domain.area().max(1.0) {
                return Err(Error::DegenerateDomain(format!("triangle {t} has zero area")));
            }
            if area < 0.0 {
                tri.swap(1, 2);
            }
        }
        let interior = nodes.iter().map(|&p| domain.contains(p, INTERIOR_TOL)).collect();
        Ok(Self { nodes, triangles, interior, domain })
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Whether each node lies in the inference domain (as opposed to the
    /// extension ring).
    pub fn interior_flags(&self) -> &[bool] {
        &self.interior
    }

    pub fn domain(&self) -> Rect {
        self.domain
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.nodes[a], self.nodes[b], self.nodes[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn write_nodes_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["node", "x", "y", "interior"])?;
        for (k, p) in self.nodes.iter().enumerate() {
            w.write_record([k.to_string(), p[0].to_string(), p[1].to_string(), self.interior[k].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_triangles_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["triangle", "a", "b", "c"])?;
        for (k, t) in self.triangles.iter().enumerate() {
            w.write_record([k.to_string(), t[0].to_string(), t[1].to_string(), t[2].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Structured triangulation of `domain` enlarged by an extension ring of
/// width `extension_fraction · diameter`.
///
/// Nodes sit on a grid with (nearly) equal spacing in both directions; each
/// grid cell is split along alternating diagonals. The spacing is chosen so
/// the node count is close to `target_nodes`.
pub fn build_mesh(domain: Rect, target_nodes: usize, extension_fraction: f64) -> Result<TriMesh> {
    if !(domain.width() > 0.0) || !(domain.height() > 0.0) {
        return Err(Error::DegenerateDomain(format!(
            "width {} and height {} must be positive",
            domain.width(),
            domain.height()
        )));
    }
    if target_nodes < 9 {
        return Err(Error::Config(format!("target_nodes must be at least 9, got {target_nodes}")));
    }
    if !(0.0..=1.0).contains(&extension_fraction) {
        return Err(Error::Config(format!("extension_fraction must lie in [0, 1], got {extension_fraction}")));
    }
    let outer = domain.expanded(extension_fraction * domain.diameter());
    let (w, h) = (outer.width(), outer.height());
    // (w t + 1)(h t + 1) = target, t = 1 / spacing
    let target = target_nodes as f64;
    let t = (-(w + h) + ((w + h).powi(2) + 4.0 * w * h * (target - 1.0)).sqrt()) / (2.0 * w * h);
    // Among nearby grids, take the one closest to the target node count
    // whose cells stay reasonably close to square.
    let (mut nx, mut ny) = (0, 0);
    let mut best = f64::MAX;
    let base_x = (w * t).round() as i64;
    for cx in (base_x - 2).max(2)..=(base_x + 2).max(2) {
        let ideal_y = h / (w / cx as f64);
        for cy in [ideal_y.floor() as i64, ideal_y.ceil() as i64] {
            let cy = cy.max(2);
            let aspect = (w / cx as f64) / (h / cy as f64);
            if !(0.6..=1.0 / 0.6).contains(&aspect) {
                continue;
            }
            let count = ((cx + 1) * (cy + 1)) as f64;
            if (count - target).abs() < best {
                best = (count - target).abs();
                nx = cx as usize + 1;
                ny = cy as usize + 1;
            }
        }
    }
    if nx == 0 {
        nx = ((w * t).round() as usize).max(2) + 1;
        ny = ((h * t).round() as usize).max(2) + 1;
    }

    let mut nodes = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x = outer.x_min + w * i as f64 / (nx - 1) as f64;
            let y = outer.y_min + h * j as f64 / (ny - 1) as f64;
            nodes.push([x, y]);
        }
    }
    let id = |i: usize, j: usize| i + nx * j;
    let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            if (i + j) % 2 == 0 {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            } else {
                triangles.push([a, b, d]);
                triangles.push([b, c, d]);
            }
        }
    }
    TriMesh::new(nodes, triangles, domain)
}
