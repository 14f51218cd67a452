//! The local L2 projection onto broken polynomials of one degree lower, the
//! global lifting operator that maps edge jumps into a volume field, and the
//! discrete gradient built from the two.
//!
//! The lifting is defined by
//!
//! ```text
//! int_Omega R(u) : w = sum over interior edges of int_e {w} : [[u (x) n]]
//! ```
//!
//! for every broken test field w of degree q - 1. Because the test space is
//! discontinuous, the defining identity decouples into one small mass solve
//! per element; only the two elements incident to an edge ever receive
//! contributions. Edge contributions are accumulated in ascending edge index
//! order so the result is bitwise deterministic.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::mesh::{Mesh, DIM};
use crate::quadrature::{edge_rule, triangle_rule};
use crate::space::{DGFunction, ElementField, ReferenceBasis, VectorField};

/// Matrix-valued integrand that may depend on the element, evaluated at
/// physical points. Implemented by `ElementField` and ad-hoc closures.
pub trait ElementwiseMatrixField {
    fn n_rows(&self) -> usize;
    fn eval_at(&self, elem: usize, x: [f64; 2], out: &mut [f64]);
}

impl ElementwiseMatrixField for ElementField {
    fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn eval_at(&self, elem: usize, x: [f64; 2], out: &mut [f64]) {
        let basis = ReferenceBasis::new(self.degree);
        self.eval(elem, x, &basis, out);
    }
}

/// Matrix field given by a closure of the physical point only.
pub struct SmoothMatrixField<F: Fn([f64; 2], &mut [f64])> {
    pub n_rows: usize,
    pub func: F,
}

impl<F: Fn([f64; 2], &mut [f64])> ElementwiseMatrixField for SmoothMatrixField<F> {
    fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn eval_at(&self, _elem: usize, x: [f64; 2], out: &mut [f64]) {
        (self.func)(x, out);
    }
}

/// Reference mass matrix of the degree-`r` Lagrange basis; element mass
/// matrices are `2 |K|` times this.
fn reference_mass(basis: &ReferenceBasis) -> DMatrix<f64> {
    let nb = basis.n_basis();
    let rule = triangle_rule((2 * basis.degree).min(10)).expect("supported degree");
    let mut m = DMatrix::zeros(nb, nb);
    let mut phi = vec![0.0; nb];
    for (pt, w) in rule.points.iter().zip(&rule.weights) {
        basis.eval(*pt, &mut phi);
        for i in 0..nb {
            for j in 0..nb {
                m[(i, j)] += w * phi[i] * phi[j];
            }
        }
    }
    m
}

/// Elementwise L2 projection of a matrix field onto broken polynomials of
/// degree `degree`. For degree 0 this is the element average; fields already
/// in the target space are reproduced exactly.
pub fn l2_project(
    field: &dyn ElementwiseMatrixField,
    mesh: &Arc<Mesh>,
    degree: usize,
    quad_degree: usize,
) -> Result<ElementField> {
    let n_rows = field.n_rows();
    let basis = ReferenceBasis::new(degree);
    let nb = basis.n_basis();
    let rule = triangle_rule(quad_degree)?;
    let mass = reference_mass(&basis);
    let mass_lu = mass.clone().lu();
    let mut out = ElementField::zeros(mesh.clone(), degree, n_rows);
    let mut phi = vec![0.0; nb];
    let mut val = vec![0.0; n_rows * DIM];
    for elem in 0..mesh.n_elements() {
        // 2|K| scales both sides of the mass system and cancels, so the
        // right-hand side can be accumulated on the reference element.
        let mut rhs = vec![DVector::zeros(nb); n_rows * DIM];
        for (pt, w) in rule.points.iter().zip(&rule.weights) {
            basis.eval(*pt, &mut phi);
            let x = mesh.ref_to_phys(elem, *pt);
            field.eval_at(elem, x, &mut val);
            for entry in 0..n_rows * DIM {
                for k in 0..nb {
                    rhs[entry][k] += w * val[entry] * phi[k];
                }
            }
        }
        for entry in 0..n_rows * DIM {
            let coeffs = mass_lu.solve(&rhs[entry]).expect("mass matrix is SPD");
            let (row, col) = (entry / DIM, entry % DIM);
            for node in 0..nb {
                let idx = out.entry_index(elem, node, row, col);
                out.data[idx] = coeffs[node];
            }
        }
    }
    Ok(out)
}

/// Global lifting of the jumps of `u` into a degree q-1 matrix field.
///
/// Sums over interior edges only, matching the operator's definition. When a
/// boundary datum is supplied the boundary jumps `(u - u0) (x) n` are lifted
/// as well (opt-in behaviour for Nitsche experiments, off by default).
pub fn lift(u: &DGFunction, u0: Option<&dyn VectorField>) -> Result<ElementField> {
    let mesh = &u.mesh;
    let q = u.degree;
    let out_degree = q - 1;
    let trial_basis = u.basis();
    let out_basis = ReferenceBasis::new(out_degree);
    let nb = out_basis.n_basis();
    let n = u.n_comp;
    let rule = edge_rule((2 * q).min(12))?;

    // Right-hand side per element, per test node, per matrix entry.
    let mut rhs = vec![0.0; mesh.n_elements() * nb * n * DIM];
    let rhs_index = |elem: usize, node: usize, entry: usize| (elem * nb + node) * n * DIM + entry;
    let mut phi = vec![0.0; nb];

    for (e, edge) in mesh.edges.iter().enumerate() {
        let h = edge.length;
        let normal = edge.normal;
        match edge.minus {
            Some(minus) => {
                let plus = edge.plus;
                for (s, w) in rule.points.iter().zip(&rule.weights) {
                    let x = mesh.edge_point(e, *s);
                    let up = u.evaluate_unchecked(plus, x, &trial_basis);
                    let um = u.evaluate_unchecked(minus, x, &trial_basis);
                    // {w} picks one half from each side of the edge.
                    for (side, elem) in [(0, plus), (1, minus)] {
                        let _ = side;
                        let xi = mesh.phys_to_ref(elem, x);
                        out_basis.eval(xi, &mut phi);
                        for i in 0..n {
                            let jump_i = up[i] - um[i];
                            for j in 0..DIM {
                                let jn = jump_i * normal[j];
                                for node in 0..nb {
                                    rhs[rhs_index(elem, node, i * DIM + j)] +=
                                        0.5 * w * h * phi[node] * jn;
                                }
                            }
                        }
                    }
                }
            }
            None => {
                let Some(datum) = u0 else { continue };
                let elem = edge.plus;
                let mut g = vec![0.0; n];
                for (s, w) in rule.points.iter().zip(&rule.weights) {
                    let x = mesh.edge_point(e, *s);
                    let ub = u.evaluate_unchecked(elem, x, &trial_basis);
                    datum.eval(x, &mut g);
                    let xi = mesh.phys_to_ref(elem, x);
                    out_basis.eval(xi, &mut phi);
                    for i in 0..n {
                        let jn_base = ub[i] - g[i];
                        for j in 0..DIM {
                            let jn = jn_base * normal[j];
                            for node in 0..nb {
                                rhs[rhs_index(elem, node, i * DIM + j)] += w * h * phi[node] * jn;
                            }
                        }
                    }
                }
            }
        }
    }

    // Local mass solves: M_K = 2 |K| M_ref.
    let mass_lu = reference_mass(&out_basis).lu();
    let mut out = ElementField::zeros(mesh.clone(), out_degree, n);
    for elem in 0..mesh.n_elements() {
        let scale = 2.0 * mesh.element_area(elem);
        for entry in 0..n * DIM {
            let mut b = DVector::zeros(nb);
            for node in 0..nb {
                b[node] = rhs[rhs_index(elem, node, entry)] / scale;
            }
            let coeffs = mass_lu.solve(&b).expect("mass matrix is SPD");
            let (row, col) = (entry / DIM, entry % DIM);
            for node in 0..nb {
                let idx = out.entry_index(elem, node, row, col);
                out.data[idx] = coeffs[node];
            }
        }
    }
    Ok(out)
}

/// Discrete gradient G(u) = broken gradient minus lifting.
pub fn discrete_gradient(u: &DGFunction) -> Result<ElementField> {
    let mut g = u.broken_gradient();
    let r = lift(u, None)?;
    g.axpy(-1.0, &r);
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Rect;
    use crate::space::{interpolate, tensor_jump, AffineField};
    use rand::{Rng, SeedableRng};

    fn unit_two_triangles() -> Arc<Mesh> {
        Arc::new(Mesh::build_structured_rect(1, 1, Rect::unit_square()).unwrap())
    }

    fn step_field(mesh: &Arc<Mesh>) -> DGFunction {
        let mut u = DGFunction::zeros(mesh.clone(), 1, 1);
        for node in 0..3 {
            let idx = u.coeff_index(0, 0, node);
            u.coeffs[idx] = 1.0;
        }
        u
    }

    fn random_field(mesh: &Arc<Mesh>, q: usize, n: usize, seed: u64) -> DGFunction {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut u = DGFunction::zeros(mesh.clone(), q, n);
        for c in u.coeffs.iter_mut() {
            *c = rng.gen_range(-1.0..1.0);
        }
        u
    }

    /// Dense oracle: assemble the full linear system of the defining identity
    /// with the complete broken test basis and solve it in one shot.
    fn lift_dense_oracle(u: &DGFunction) -> ElementField {
        let mesh = &u.mesh;
        let q = u.degree;
        let out_basis = ReferenceBasis::new(q - 1);
        let trial_basis = u.basis();
        let nb = out_basis.n_basis();
        let n = u.n_comp;
        let n_dof = mesh.n_elements() * nb * n * DIM;
        let dof = |elem: usize, node: usize, row: usize, col: usize| {
            ((elem * nb + node) * n + row) * DIM + col
        };
        let tri = triangle_rule(10).unwrap();
        let mut a = DMatrix::zeros(n_dof, n_dof);
        // Volume term: int R : w for every pair of basis fields.
        let mut phi = vec![0.0; nb];
        for elem in 0..mesh.n_elements() {
            let scale = 2.0 * mesh.element_area(elem);
            for (pt, w) in tri.points.iter().zip(&tri.weights) {
                out_basis.eval(*pt, &mut phi);
                for node_i in 0..nb {
                    for node_j in 0..nb {
                        let v = scale * w * phi[node_i] * phi[node_j];
                        for row in 0..n {
                            for col in 0..DIM {
                                a[(dof(elem, node_i, row, col), dof(elem, node_j, row, col))] += v;
                            }
                        }
                    }
                }
            }
        }
        let edge = edge_rule(12).unwrap();
        let mut b = DVector::zeros(n_dof);
        for (e, ed) in mesh.interior_edges() {
            let minus = ed.minus.unwrap();
            for (s, w) in edge.points.iter().zip(&edge.weights) {
                let x = mesh.edge_point(e, *s);
                let up = u.evaluate_unchecked(ed.plus, x, &trial_basis);
                let um = u.evaluate_unchecked(minus, x, &trial_basis);
                let jump = tensor_jump(&up, &um, ed.normal);
                for elem in [ed.plus, minus] {
                    let xi = mesh.phys_to_ref(elem, x);
                    out_basis.eval(xi, &mut phi);
                    for node in 0..nb {
                        for row in 0..n {
                            for col in 0..DIM {
                                b[dof(elem, node, row, col)] +=
                                    0.5 * w * ed.length * phi[node] * jump[row * DIM + col];
                            }
                        }
                    }
                }
            }
        }
        let sol = a.lu().solve(&b).unwrap();
        let mut out = ElementField::zeros(mesh.clone(), q - 1, n);
        for elem in 0..mesh.n_elements() {
            for node in 0..nb {
                for row in 0..n {
                    for col in 0..DIM {
                        let idx = out.entry_index(elem, node, row, col);
                        out.data[idx] = sol[dof(elem, node, row, col)];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn projection_fixes_constants() {
        let mesh = unit_two_triangles();
        let field = SmoothMatrixField {
            n_rows: 2,
            func: |_x: [f64; 2], out: &mut [f64]| {
                out.copy_from_slice(&[1.0, -2.0, 0.5, 3.0]);
            },
        };
        for degree in [0, 1] {
            let p = l2_project(&field, &mesh, degree, 4).unwrap();
            let basis = ReferenceBasis::new(degree);
            let mut v = vec![0.0; 4];
            for elem in 0..mesh.n_elements() {
                let x = mesh.ref_to_phys(elem, [0.3, 0.3]);
                p.eval(elem, x, &basis, &mut v);
                assert!((v[0] - 1.0).abs() < 1e-13);
                assert!((v[1] + 2.0).abs() < 1e-13);
                assert!((v[2] - 0.5).abs() < 1e-13);
                assert!((v[3] - 3.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn projection_is_identity_on_piecewise_constants() {
        // For q = 1 the stress of a broken gradient is already elementwise
        // constant, so projecting onto degree 0 must reproduce it.
        let mesh = Arc::new(Mesh::build_structured_rect(2, 2, Rect::unit_square()).unwrap());
        let u = random_field(&mesh, 1, 2, 3);
        let g = u.broken_gradient();
        let p = l2_project(&g, &mesh, 0, 2).unwrap();
        for elem in 0..mesh.n_elements() {
            for (a, b) in g.constant(elem).iter().zip(p.constant(elem)) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn projection_computes_element_means() {
        let mesh = unit_two_triangles();
        let field = SmoothMatrixField {
            n_rows: 1,
            func: |x: [f64; 2], out: &mut [f64]| {
                out[0] = x[0];
                out[1] = 0.0;
            },
        };
        let p = l2_project(&field, &mesh, 0, 2).unwrap();
        for elem in 0..mesh.n_elements() {
            let [a, b, c] = mesh.element_vertices(elem);
            let bary_x = (a[0] + b[0] + c[0]) / 3.0;
            assert!((p.constant(elem)[0] - bary_x).abs() < 1e-14);
        }
    }

    #[test]
    fn lift_of_continuous_field_vanishes() {
        let mesh = Arc::new(Mesh::build_structured_rect(2, 2, Rect::unit_square()).unwrap());
        let f = AffineField::uniaxial(0.1);
        let u = interpolate(&f, &mesh, 1, 2);
        let r = lift(&u, None).unwrap();
        assert!(r.data.iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn step_field_lift_matches_dense_oracle() {
        let mesh = unit_two_triangles();
        let u = step_field(&mesh);
        let r = lift(&u, None).unwrap();
        // Oracle value worked out from the defining identity with constant
        // tests: R = (-1, 1) on both triangles.
        for elem in 0..2 {
            let m = r.constant(elem);
            assert!((m[0] + 1.0).abs() < 1e-13, "got {m:?}");
            assert!((m[1] - 1.0).abs() < 1e-13);
        }
        let oracle = lift_dense_oracle(&u);
        for (a, b) in r.data.iter().zip(&oracle.data) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn lift_is_linear() {
        let mesh = Arc::new(Mesh::build_structured_rect(2, 2, Rect::unit_square()).unwrap());
        let u = random_field(&mesh, 1, 2, 11);
        let lambda = -2.75;
        let mut v = u.clone();
        for c in v.coeffs.iter_mut() {
            *c *= lambda;
        }
        let ru = lift(&u, None).unwrap();
        let rv = lift(&v, None).unwrap();
        for (a, b) in ru.data.iter().zip(&rv.data) {
            assert!((lambda * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lift_matches_dense_oracle_on_random_fields() {
        for (q, seed) in [(1, 5), (1, 6), (2, 7)] {
            let mesh = Arc::new(Mesh::build_structured_rect(2, 2, Rect::unit_square()).unwrap());
            let u = random_field(&mesh, q, 2, seed);
            let r = lift(&u, None).unwrap();
            let oracle = lift_dense_oracle(&u);
            for (a, b) in r.data.iter().zip(&oracle.data) {
                assert!((a - b).abs() < 1e-12, "q={q} lift {a} vs oracle {b}");
            }
        }
    }

    /// Check the defining identity against every broken test basis field.
    fn check_defining_identity(u: &DGFunction, tol: f64) {
        let mesh = &u.mesh;
        let r = lift(u, None).unwrap();
        let out_basis = ReferenceBasis::new(u.degree - 1);
        let trial_basis = u.basis();
        let nb = out_basis.n_basis();
        let tri = triangle_rule(10).unwrap();
        let edge = edge_rule(12).unwrap();
        let mut phi = vec![0.0; nb];
        let mut rv = vec![0.0; u.n_comp * DIM];
        for elem in 0..mesh.n_elements() {
            for node in 0..nb {
                for row in 0..u.n_comp {
                    for col in 0..DIM {
                        // Volume side.
                        let mut vol = 0.0;
                        let scale = 2.0 * mesh.element_area(elem);
                        for (pt, w) in tri.points.iter().zip(&tri.weights) {
                            out_basis.eval(*pt, &mut phi);
                            let x = mesh.ref_to_phys(elem, *pt);
                            r.eval(elem, x, &out_basis, &mut rv);
                            vol += scale * w * phi[node] * rv[row * DIM + col];
                        }
                        // Edge side: only this element's interior edges see
                        // the test field, with the averaging half.
                        let mut face = 0.0;
                        for &e in &mesh.element_edges[elem] {
                            let ed = &mesh.edges[e];
                            let Some(minus) = ed.minus else { continue };
                            for (s, w) in edge.points.iter().zip(&edge.weights) {
                                let x = mesh.edge_point(e, *s);
                                let up = u.evaluate_unchecked(ed.plus, x, &trial_basis);
                                let um = u.evaluate_unchecked(minus, x, &trial_basis);
                                let jump = tensor_jump(&up, &um, ed.normal);
                                let xi = mesh.phys_to_ref(elem, x);
                                out_basis.eval(xi, &mut phi);
                                face += 0.5 * w * ed.length * phi[node] * jump[row * DIM + col];
                            }
                        }
                        assert!(
                            (vol - face).abs() < tol,
                            "identity broken on elem {elem}: {vol} vs {face}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn defining_identity_random_fields() {
        let mesh = Arc::new(Mesh::build_structured_rect(2, 2, Rect::unit_square()).unwrap());
        for seed in [1, 2] {
            let u = random_field(&mesh, 1, 2, seed);
            check_defining_identity(&u, 1e-12);
        }
        let u = random_field(&mesh, 2, 2, 9);
        check_defining_identity(&u, 1e-12);
    }

    #[test]
    fn discrete_gradient_of_step_field() {
        let mesh = unit_two_triangles();
        let u = step_field(&mesh);
        let g = discrete_gradient(&u).unwrap();
        // Broken gradient vanishes, so G = -R = (1, -1) on both triangles.
        for elem in 0..2 {
            let m = g.constant(elem);
            assert!((m[0] - 1.0).abs() < 1e-13);
            assert!((m[1] + 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn discrete_gradient_of_continuous_interpolant() {
        let mesh = Arc::new(Mesh::build_structured_rect(2, 2, Rect::unit_square()).unwrap());
        let f0 = AffineField::uniaxial(0.1);
        let u = interpolate(&f0, &mesh, 1, 2);
        let g = discrete_gradient(&u).unwrap();
        for elem in 0..mesh.n_elements() {
            let m = g.constant(elem);
            assert!((m[0] - 1.0).abs() < 1e-13);
            assert!(m[1].abs() < 1e-13);
            assert!(m[2].abs() < 1e-13);
            assert!((m[3] - 1.1).abs() < 1e-13);
        }
    }

    #[test]
    fn discrete_gradient_is_linear() {
        let mesh = Arc::new(Mesh::build_structured_rect(2, 2, Rect::unit_square()).unwrap());
        let u = random_field(&mesh, 1, 2, 21);
        let v = random_field(&mesh, 1, 2, 22);
        let mut uv = u.clone();
        for (c, d) in uv.coeffs.iter_mut().zip(&v.coeffs) {
            *c += d;
        }
        let gu = discrete_gradient(&u).unwrap();
        let gv = discrete_gradient(&v).unwrap();
        let guv = discrete_gradient(&uv).unwrap();
        for ((a, b), c) in gu.data.iter().zip(&gv.data).zip(&guv.data) {
            assert!((a + b - c).abs() < 1e-12);
        }
    }

    #[test]
    fn lifting_bound_stable_under_refinement() {
        // Probe of the lifting bound: the worst ratio
        // int |R(u)|^p / jump seminorm must not grow by more than 10% after
        // one uniform refinement.
        let p = 4.0;
        let coarse = Arc::new(Mesh::build_structured_rect(2, 2, Rect::unit_square()).unwrap());
        let fine = Arc::new(coarse.refine_uniform());
        let max_ratio = |mesh: &Arc<Mesh>| -> f64 {
            let mut worst: f64 = 0.0;
            for seed in 0..200u64 {
                let u = random_field(mesh, 1, 2, 1000 + seed);
                let r = lift(&u, None).unwrap();
                let mut num = 0.0;
                for elem in 0..mesh.n_elements() {
                    let m = r.constant(elem);
                    let n2: f64 = m.iter().map(|v| v * v).sum();
                    num += mesh.element_area(elem) * n2.powf(0.5 * p);
                }
                let parts = crate::space::broken_seminorm_parts(&u, p, None).unwrap();
                if parts.interior_jump > 1e-14 {
                    worst = worst.max(num / parts.interior_jump);
                }
            }
            worst
        };
        let coarse_ratio = max_ratio(&coarse);
        let fine_ratio = max_ratio(&fine);
        assert!(coarse_ratio.is_finite() && coarse_ratio > 0.0);
        assert!(
            fine_ratio <= 1.1 * coarse_ratio,
            "lifting constant grew: {coarse_ratio} -> {fine_ratio}"
        );
    }

    #[test]
    fn discrete_gradient_weakly_converges() {
        // For smooth u, int G(I_h u) : phi approaches -int u . div phi for
        // compactly supported phi, with the error decreasing in h. The field
        // and the bump are deliberately non-polynomial and asymmetric so no
        // exact cancellation hides the interpolation error.
        let u_exact = crate::space::FnField {
            n_comp: 2,
            value: |x: [f64; 2], out: &mut [f64]| {
                out[0] = (x[0] + 0.5 * x[1]).sin();
                out[1] = (0.4 * x[0] - x[1]).cos();
            },
            gradient: |_x, _out: &mut [f64]| {},
        };
        // Bump profile vanishing on the boundary of the unit square.
        let bump = |x: [f64; 2]| {
            let gx = x[0] * (1.0 - x[0]);
            let gy = x[1] * (1.0 - x[1]);
            (gx * gy).powi(2) * (1.0 + 0.5 * x[0] + 0.25 * x[1])
        };
        let bump_grad = |x: [f64; 2]| {
            let gx = x[0] * (1.0 - x[0]);
            let gy = x[1] * (1.0 - x[1]);
            let dgx = 1.0 - 2.0 * x[0];
            let dgy = 1.0 - 2.0 * x[1];
            let lin = 1.0 + 0.5 * x[0] + 0.25 * x[1];
            [
                2.0 * gx * dgx * (gy * gy) * lin + (gx * gy).powi(2) * 0.5,
                2.0 * gy * dgy * (gx * gx) * lin + (gx * gy).powi(2) * 0.25,
            ]
        };
        let test_mats: [[f64; 4]; 3] = [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 1.0, 0.0],
            [0.3, -0.7, 0.2, 1.1],
        ];
        let tri = triangle_rule(10).unwrap();
        let mut prev_err = vec![f64::INFINITY; test_mats.len()];
        let mut mesh = Arc::new(Mesh::build_structured_rect(2, 2, Rect::unit_square()).unwrap());
        for _level in 0..3 {
            let u = interpolate(&u_exact, &mesh, 1, 2);
            let g = discrete_gradient(&u).unwrap();
            for (t, mat) in test_mats.iter().enumerate() {
                let mut lhs = 0.0;
                let mut rhs = 0.0;
                let mut val = vec![0.0; 2];
                for elem in 0..mesh.n_elements() {
                    let scale = 2.0 * mesh.element_area(elem);
                    let gm = g.constant(elem);
                    for (pt, w) in tri.points.iter().zip(&tri.weights) {
                        let x = mesh.ref_to_phys(elem, *pt);
                        let b = bump(x);
                        let db = bump_grad(x);
                        // phi = b(x) * mat, div phi rows: sum_j d_j (b mat_ij).
                        let phi: Vec<f64> = mat.iter().map(|m| b * m).collect();
                        lhs += scale
                            * w
                            * phi.iter().zip(gm.iter()).map(|(a, c)| a * c).sum::<f64>();
                        u_exact.eval(x, &mut val);
                        let div = [
                            db[0] * mat[0] + db[1] * mat[1],
                            db[0] * mat[2] + db[1] * mat[3],
                        ];
                        rhs += scale * w * (val[0] * div[0] + val[1] * div[1]);
                    }
                }
                let err = (lhs + rhs).abs();
                assert!(
                    err < prev_err[t],
                    "weak convergence probe stalled for test field {t}: {err} !< {}",
                    prev_err[t]
                );
                prev_err[t] = err;
            }
            mesh = Arc::new(mesh.refine_uniform());
        }
    }
}
