//! Conforming triangulations of axis-aligned rectangles with full edge
//! topology: interior/boundary split, unit normals, lengths and element
//! adjacency.
//!
//! Conventions fixed here and relied on everywhere else:
//! - triangles are counterclockwise;
//! - each grid cell is split along its lower-left to upper-right diagonal;
//! - for an interior edge the `plus` element is the incident triangle with
//!   the smaller index, and the stored normal points from `plus` to `minus`
//!   (outward for boundary edges);
//! - the edge parameter `s in [0, 1]` runs from the endpoint with the smaller
//!   global vertex index to the larger, so both incident elements agree on it.
//!
//! A mesh is immutable after construction and safe to share across threads.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Spatial dimension; the whole crate works on planar domains.
pub const DIM: usize = 2;

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Interior,
    Boundary,
}

#[derive(Debug, Clone)]
pub struct Edge {
    /// Endpoint vertex indices, sorted ascending. The edge parameterisation
    /// runs from `vertices[0]` to `vertices[1]`.
    pub vertices: [usize; 2],
    pub kind: EdgeKind,
    /// Incident element with the smaller index (the only one on the boundary).
    pub plus: usize,
    /// Second incident element for interior edges.
    pub minus: Option<usize>,
    /// Unit normal pointing from `plus` to `minus`, outward on the boundary.
    pub normal: [f64; 2],
    /// Edge length h_e.
    pub length: f64,
}

impl Edge {
    pub fn is_interior(&self) -> bool {
        self.kind == EdgeKind::Interior
    }

    pub fn is_boundary(&self) -> bool {
        self.kind == EdgeKind::Boundary
    }
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn unit_square() -> Self {
        Rect {
            x0: 0.0,
            x1: 1.0,
            y0: 0.0,
            y1: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    /// Vertex indices per triangle, counterclockwise.
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    /// Edge index of each triangle's local edge i (between local vertices
    /// i and (i + 1) % 3).
    pub element_edges: Vec<[usize; 3]>,
}

impl Mesh {
    /// Structured triangulation of `rect` with `2 * nx * ny` triangles, each
    /// cell split along its lower-left to upper-right diagonal.
    pub fn build_structured_rect(nx: usize, ny: usize, rect: Rect) -> Result<Mesh> {
        if nx == 0 || ny == 0 {
            return Err(Error::invalid("cell counts must be at least 1"));
        }
        if !(rect.x1 > rect.x0) || !(rect.y1 > rect.y0) {
            return Err(Error::invalid("degenerate rectangle"));
        }
        let dx = (rect.x1 - rect.x0) / nx as f64;
        let dy = (rect.y1 - rect.y0) / ny as f64;
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([rect.x0 + i as f64 * dx, rect.y0 + j as f64 * dy]);
            }
        }
        let vid = |i: usize, j: usize| j * (nx + 1) + i;
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (v00, v10) = (vid(i, j), vid(i + 1, j));
                let (v11, v01) = (vid(i + 1, j + 1), vid(i, j + 1));
                // Lower-right triangle first, then upper-left.
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        Mesh::from_cells(vertices, triangles)
    }

    /// Build edge topology from raw vertices and counterclockwise triangles.
    pub fn from_cells(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Mesh> {
        let mut edge_of: HashMap<[usize; 2], usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut element_edges = vec![[usize::MAX; 3]; triangles.len()];
        for (k, tri) in triangles.iter().enumerate() {
            for local in 0..3 {
                let a = tri[local];
                let b = tri[(local + 1) % 3];
                let key = [a.min(b), a.max(b)];
                match edge_of.get(&key) {
                    Some(&e) => {
                        if edges[e].minus.is_some() {
                            return Err(Error::invalid(format!(
                                "edge {key:?} has more than two incident triangles"
                            )));
                        }
                        edges[e].minus = Some(k);
                        edges[e].kind = EdgeKind::Interior;
                        element_edges[k][local] = e;
                    }
                    None => {
                        let e = edges.len();
                        edge_of.insert(key, e);
                        edges.push(Edge {
                            vertices: key,
                            kind: EdgeKind::Boundary,
                            plus: k,
                            minus: None,
                            normal: [0.0, 0.0],
                            length: 0.0,
                        });
                        element_edges[k][local] = e;
                    }
                }
            }
        }
        let mesh = Mesh {
            vertices,
            triangles,
            edges,
            element_edges,
        };
        mesh.with_edge_geometry()
    }

    fn with_edge_geometry(mut self) -> Result<Mesh> {
        for e in 0..self.edges.len() {
            let [lo, hi] = self.edges[e].vertices;
            let a = self.vertices[lo];
            let b = self.vertices[hi];
            let t = [b[0] - a[0], b[1] - a[1]];
            let length = (t[0] * t[0] + t[1] * t[1]).sqrt();
            if length <= 0.0 {
                return Err(Error::invalid("zero-length edge"));
            }
            let plus = self.edges[e].plus;
            // Normal outward from the plus element: orient the edge tangent
            // away from the opposite vertex of the plus triangle.
            let opp = self.opposite_vertex(plus, [lo, hi])?;
            let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            let mut n = [t[1] / length, -t[0] / length];
            let to_opp = [opp[0] - mid[0], opp[1] - mid[1]];
            if n[0] * to_opp[0] + n[1] * to_opp[1] > 0.0 {
                n = [-n[0], -n[1]];
            }
            self.edges[e].normal = n;
            self.edges[e].length = length;
        }
        Ok(self)
    }

    fn opposite_vertex(&self, elem: usize, edge_verts: [usize; 2]) -> Result<Point> {
        let tri = self.triangles[elem];
        for &v in &tri {
            if v != edge_verts[0] && v != edge_verts[1] {
                return Ok(self.vertices[v]);
            }
        }
        Err(Error::internal("triangle does not contain its edge"))
    }

    /// Split every triangle into four similar children through edge
    /// midpoints. The boundary polygon is preserved exactly.
    pub fn refine_uniform(&self) -> Mesh {
        let mut vertices = self.vertices.clone();
        let mut midpoint: HashMap<[usize; 2], usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Point>| -> usize {
            let key = [a.min(b), a.max(b)];
            *midpoint.entry(key).or_insert_with(|| {
                let pa = vertices[a];
                let pb = vertices[b];
                vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for tri in &self.triangles {
            let [a, b, c] = *tri;
            let mab = mid(a, b, &mut vertices);
            let mbc = mid(b, c, &mut vertices);
            let mca = mid(c, a, &mut vertices);
            triangles.push([a, mab, mca]);
            triangles.push([mab, b, mbc]);
            triangles.push([mca, mbc, c]);
            triangles.push([mab, mbc, mca]);
        }
        Mesh::from_cells(vertices, triangles).expect("refinement of a valid mesh is valid")
    }

    pub fn n_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_boundary_edges(&self) -> usize {
        self.edges.iter().filter(|e| e.is_boundary()).count()
    }

    pub fn interior_edges(&self) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_interior())
    }

    pub fn boundary_edges(&self) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_boundary())
    }

    pub fn element_vertices(&self, k: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[k];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Columns of the affine map x = v0 + B xi from the reference triangle.
    pub fn jacobian(&self, k: usize) -> [[f64; 2]; 2] {
        let [v0, v1, v2] = self.element_vertices(k);
        [
            [v1[0] - v0[0], v2[0] - v0[0]],
            [v1[1] - v0[1], v2[1] - v0[1]],
        ]
    }

    pub fn element_area(&self, k: usize) -> f64 {
        let j = self.jacobian(k);
        0.5 * (j[0][0] * j[1][1] - j[0][1] * j[1][0])
    }

    pub fn element_diameter(&self, k: usize) -> f64 {
        let [a, b, c] = self.element_vertices(k);
        let d = |p: Point, q: Point| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        d(a, b).max(d(b, c)).max(d(c, a))
    }

    /// Mesh size h: the largest element diameter.
    pub fn mesh_size(&self) -> f64 {
        (0..self.n_elements())
            .map(|k| self.element_diameter(k))
            .fold(0.0, f64::max)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_elements()).map(|k| self.element_area(k)).sum()
    }

    pub fn ref_to_phys(&self, k: usize, xi: [f64; 2]) -> Point {
        let [v0, _, _] = self.element_vertices(k);
        let j = self.jacobian(k);
        [
            v0[0] + j[0][0] * xi[0] + j[0][1] * xi[1],
            v0[1] + j[1][0] * xi[0] + j[1][1] * xi[1],
        ]
    }

    pub fn phys_to_ref(&self, k: usize, x: Point) -> [f64; 2] {
        let [v0, _, _] = self.element_vertices(k);
        let j = self.jacobian(k);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let r = [x[0] - v0[0], x[1] - v0[1]];
        [
            (j[1][1] * r[0] - j[0][1] * r[1]) / det,
            (-j[1][0] * r[0] + j[0][0] * r[1]) / det,
        ]
    }

    /// Inverse-transpose of the jacobian, for mapping reference gradients.
    pub fn inv_jacobian_t(&self, k: usize) -> [[f64; 2]; 2] {
        let j = self.jacobian(k);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        [
            [j[1][1] / det, -j[1][0] / det],
            [-j[0][1] / det, j[0][0] / det],
        ]
    }

    /// Physical point on edge `e` at parameter `s in [0, 1]`.
    pub fn edge_point(&self, e: usize, s: f64) -> Point {
        let [lo, hi] = self.edges[e].vertices;
        let a = self.vertices[lo];
        let b = self.vertices[hi];
        [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_counts() {
        let m = Mesh::build_structured_rect(1, 1, Rect::unit_square()).unwrap();
        assert_eq!(m.n_elements(), 2);
        assert_eq!(m.n_edges(), 5);
        let interior: Vec<_> = m.interior_edges().collect();
        assert_eq!(interior.len(), 1);
        assert!((interior[0].1.length - 2f64.sqrt()).abs() < 1e-15);
        // Lower-right triangle is element 0 and must be the plus side.
        assert_eq!(interior[0].1.plus, 0);
        assert_eq!(interior[0].1.minus, Some(1));
    }

    #[test]
    fn two_by_two_counts() {
        let m = Mesh::build_structured_rect(2, 2, Rect::unit_square()).unwrap();
        assert_eq!(m.n_elements(), 8);
        assert_eq!(m.n_edges(), 16);
        assert_eq!(m.interior_edges().count(), 8);
        // Euler check.
        assert_eq!(
            m.n_edges(),
            (3 * m.n_elements() + m.n_boundary_edges()) / 2
        );
    }

    #[test]
    fn area_partition() {
        let m = Mesh::build_structured_rect(16, 16, Rect::unit_square()).unwrap();
        assert_eq!(m.n_elements(), 512);
        assert!((m.total_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(Mesh::build_structured_rect(0, 1, Rect::unit_square()).is_err());
        let degenerate = Rect {
            x0: 0.0,
            x1: 0.0,
            y0: 0.0,
            y1: 1.0,
        };
        assert!(Mesh::build_structured_rect(1, 1, degenerate).is_err());
    }

    #[test]
    fn refine_quadruples_and_halves_diameter() {
        let m = Mesh::build_structured_rect(1, 1, Rect::unit_square()).unwrap();
        let r = m.refine_uniform();
        assert_eq!(r.n_elements(), 8);
        assert!((r.mesh_size() - 0.5 * m.mesh_size()).abs() < 1e-15);
        assert!((r.total_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn refine_to_study_resolutions() {
        // 1024 triangles refine to the finest resolution used in the studies.
        let m = Mesh::build_structured_rect(16, 32, Rect::unit_square()).unwrap();
        assert_eq!(m.n_elements(), 1024);
        let r = m.refine_uniform();
        assert_eq!(r.n_elements(), 4096);
        assert!((r.refine_uniform().total_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normals_unit_and_outward_from_plus() {
        let m = Mesh::build_structured_rect(3, 2, Rect::unit_square()).unwrap();
        for (_, e) in m.edges.iter().enumerate() {
            let n = e.normal;
            assert!((n[0] * n[0] + n[1] * n[1] - 1.0).abs() < 1e-14);
            // Recompute from plus-triangle geometry: normal must point away
            // from the opposite vertex.
            let opp = m.opposite_vertex(e.plus, e.vertices).unwrap();
            let a = m.vertices[e.vertices[0]];
            let b = m.vertices[e.vertices[1]];
            let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            let dot = n[0] * (opp[0] - mid[0]) + n[1] * (opp[1] - mid[1]);
            assert!(dot < 0.0);
            if let Some(minus) = e.minus {
                assert!(e.plus < minus, "plus element must have the smaller index");
                // Symmetric adjacency: both incident triangles list the edge.
                let eid = m
                    .edges
                    .iter()
                    .position(|f| f.vertices == e.vertices)
                    .unwrap();
                assert!(m.element_edges[e.plus].contains(&eid));
                assert!(m.element_edges[minus].contains(&eid));
            }
        }
    }

    #[test]
    fn euler_formula_across_meshes() {
        for (nx, ny) in [(1, 1), (2, 3), (4, 4), (5, 2)] {
            let m = Mesh::build_structured_rect(nx, ny, Rect::unit_square()).unwrap();
            assert_eq!(
                m.n_edges(),
                (3 * m.n_elements() + m.n_boundary_edges()) / 2
            );
        }
    }

    #[test]
    fn refine_preserves_boundary_polygon() {
        let rect = Rect {
            x0: -1.0,
            x1: 2.0,
            y0: 0.5,
            y1: 1.5,
        };
        let m = Mesh::build_structured_rect(2, 2, rect).unwrap();
        let r = m.refine_uniform();
        for (_, e) in r.boundary_edges() {
            for &v in &e.vertices {
                let p = r.vertices[v];
                let on_x = (p[0] - rect.x0).abs() < 1e-15 || (p[0] - rect.x1).abs() < 1e-15;
                let on_y = (p[1] - rect.y0).abs() < 1e-15 || (p[1] - rect.y1).abs() < 1e-15;
                assert!(on_x || on_y, "boundary vertex {p:?} off the rectangle");
            }
        }
    }

    #[test]
    fn triangles_counterclockwise() {
        let m = Mesh::build_structured_rect(3, 3, Rect::unit_square()).unwrap();
        for k in 0..m.n_elements() {
            assert!(m.element_area(k) > 0.0);
        }
        let r = m.refine_uniform();
        for k in 0..r.n_elements() {
            assert!(r.element_area(k) > 0.0);
        }
    }

    #[test]
    fn reference_mapping_round_trip() {
        let m = Mesh::build_structured_rect(2, 2, Rect::unit_square()).unwrap();
        for k in 0..m.n_elements() {
            for xi in [[0.2, 0.3], [0.0, 0.0], [0.5, 0.5]] {
                let x = m.ref_to_phys(k, xi);
                let back = m.phys_to_ref(k, x);
                assert!((back[0] - xi[0]).abs() < 1e-14);
                assert!((back[1] - xi[1]).abs() < 1e-14);
            }
        }
    }
}
