//! Analytic first variations of the discrete energies with respect to every
//! element-local coefficient, plus a finite-difference verifier.
//!
//! The face terms of the explicit form contribute, per interior edge,
//!
//! ```text
//! - int_e S({grad u}) : [[v (x) n]]
//! - int_e (dS({grad u}) [[u (x) n]]) : {grad v}
//! ```
//!
//! where dS is the rank-4 density tangent contracted against the tensor jump.
//! The projected form differentiates the one-sided stresses instead. Penalty
//! derivatives apply the product and chain rule to both factors; the
//! fractional outer powers are epsilon-regularised so the derivative at zero
//! jumps is zero (the unregularised power is not differentiable there, and
//! the symmetric kink cancels in central differences).

use crate::energy::{
    penalty_pieces, DiscreteEnergyConfig, Formulation, PenaltyKind,
};
use crate::error::{Error, Result};
use crate::mesh::DIM;
use crate::quadrature::{edge_rule, triangle_rule};
use crate::space::{DGFunction, ReferenceBasis};

/// Scratch data for one side of an edge: basis values and physical basis
/// gradients at a quadrature point.
struct SideBasis {
    phi: Vec<f64>,
    grad: Vec<f64>,
}

impl SideBasis {
    fn new(nb: usize) -> Self {
        SideBasis {
            phi: vec![0.0; nb],
            grad: vec![0.0; 2 * nb],
        }
    }

    fn fill(&mut self, u: &DGFunction, basis: &ReferenceBasis, elem: usize, x: [f64; 2]) {
        let xi = u.mesh.phys_to_ref(elem, x);
        basis.eval(xi, &mut self.phi);
        basis.eval_grad(xi, &mut self.grad);
        let jt = u.mesh.inv_jacobian_t(elem);
        for k in 0..self.phi.len() {
            let gx = self.grad[2 * k];
            let gy = self.grad[2 * k + 1];
            self.grad[2 * k] = jt[0][0] * gx + jt[0][1] * gy;
            self.grad[2 * k + 1] = jt[1][0] * gx + jt[1][1] * gy;
        }
    }
}

/// Exact derivative of the configured discrete energy with respect to every
/// DG coefficient, in the coefficient layout of `u`.
pub fn gradient(u: &DGFunction, cfg: &DiscreteEnergyConfig) -> Result<Vec<f64>> {
    cfg.validate(true)?;
    if u.degree != 1 && cfg.formulation != Formulation::Dg {
        return Err(Error::invalid(
            "projected and lifting variations are implemented for degree 1 only",
        ));
    }
    let mut out = vec![0.0; u.n_coeffs()];
    match cfg.formulation {
        Formulation::Dg => {
            add_bulk_gradient(u, cfg, &mut out)?;
            add_face_gradient_dg(u, cfg, &mut out)?;
        }
        Formulation::Projected => {
            add_bulk_gradient(u, cfg, &mut out)?;
            add_face_gradient_projected(u, cfg, &mut out)?;
        }
        Formulation::Lifting => {
            add_lifting_gradient(u, cfg, &mut out)?;
        }
    }
    add_penalty_gradient(u, cfg, &mut out)?;
    add_load_gradient(u, cfg, &mut out)?;
    Ok(out)
}

/// sum_K int S(grad u) : grad v.
fn add_bulk_gradient(u: &DGFunction, cfg: &DiscreteEnergyConfig, out: &mut [f64]) -> Result<()> {
    let mesh = &u.mesh;
    let basis = u.basis();
    let nb = u.n_basis();
    let n = u.n_comp;
    let tri = triangle_rule(cfg.tri_degree(u.degree))?;
    let mut side = SideBasis::new(nb);
    let mut stress = vec![0.0; n * DIM];
    for elem in 0..mesh.n_elements() {
        let scale = 2.0 * mesh.element_area(elem);
        for (pt, w) in tri.points.iter().zip(&tri.weights) {
            let x = mesh.ref_to_phys(elem, *pt);
            let g = u.gradient_at(elem, x, &basis);
            cfg.density.stress(&g, &mut stress);
            side.fill(u, &basis, elem, x);
            let ww = scale * w;
            for c in 0..n {
                for k in 0..nb {
                    out[u.coeff_index(elem, c, k)] += ww
                        * (stress[c * DIM] * side.grad[2 * k]
                            + stress[c * DIM + 1] * side.grad[2 * k + 1]);
                }
            }
        }
    }
    Ok(())
}

/// Face terms of the explicit form: flux S({grad u}) against [[v (x) n]] and
/// the tangent term against {grad v}.
fn add_face_gradient_dg(u: &DGFunction, cfg: &DiscreteEnergyConfig, out: &mut [f64]) -> Result<()> {
    let mesh = &u.mesh;
    let basis = u.basis();
    let nb = u.n_basis();
    let n = u.n_comp;
    let m = n * DIM;
    let rule = edge_rule(cfg.edge_deg(u.degree))?;
    let mut sides = [SideBasis::new(nb), SideBasis::new(nb)];
    let mut avg = vec![0.0; m];
    let mut stress = vec![0.0; m];
    let mut tangent = vec![0.0; m * m];
    let mut tj = vec![0.0; m];
    for (e, edge) in mesh.interior_edges() {
        let minus = edge.minus.expect("interior edge");
        let elems = [edge.plus, minus];
        let normal = edge.normal;
        let h = edge.length;
        for (s, w) in rule.points.iter().zip(&rule.weights) {
            let x = mesh.edge_point(e, *s);
            let gp = u.gradient_at(edge.plus, x, &basis);
            let gm = u.gradient_at(minus, x, &basis);
            for k in 0..m {
                avg[k] = 0.5 * (gp[k] + gm[k]);
            }
            cfg.density.stress(&avg, &mut stress);
            cfg.density.tangent(&avg, &mut tangent);
            let up = u.evaluate_unchecked(edge.plus, x, &basis);
            let um = u.evaluate_unchecked(minus, x, &basis);
            // tj = dS({grad u}) applied to [[u (x) n]].
            for kl in 0..m {
                let mut acc = 0.0;
                for i in 0..n {
                    let jump = up[i] - um[i];
                    for j in 0..DIM {
                        acc += tangent[(i * DIM + j) * m + kl] * jump * normal[j];
                    }
                }
                tj[kl] = acc;
            }
            sides[0].fill(u, &basis, edge.plus, x);
            sides[1].fill(u, &basis, minus, x);
            let ww = w * h;
            for (side_idx, &elem) in elems.iter().enumerate() {
                let sgn = if side_idx == 0 { 1.0 } else { -1.0 };
                let sb = &sides[side_idx];
                for c in 0..n {
                    let sn: f64 = (0..DIM).map(|j| stress[c * DIM + j] * normal[j]).sum();
                    for k in 0..nb {
                        let idx = u.coeff_index(elem, c, k);
                        // -int S({grad u}) : [[v (x) n]]
                        out[idx] -= ww * sn * sgn * sb.phi[k];
                        // -int (dS [[u (x) n]]) : {grad v}
                        out[idx] -= ww
                            * 0.5
                            * (tj[c * DIM] * sb.grad[2 * k] + tj[c * DIM + 1] * sb.grad[2 * k + 1]);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Face terms of the projected form at degree 1: flux {S(grad u)} against
/// [[v (x) n]], and the one-sided tangents against [[u (x) n]].
fn add_face_gradient_projected(
    u: &DGFunction,
    cfg: &DiscreteEnergyConfig,
    out: &mut [f64],
) -> Result<()> {
    let mesh = &u.mesh;
    let basis = u.basis();
    let nb = u.n_basis();
    let n = u.n_comp;
    let m = n * DIM;
    let rule = edge_rule(cfg.edge_deg(u.degree))?;
    let mut sides = [SideBasis::new(nb), SideBasis::new(nb)];
    let mut stress_side = [vec![0.0; m], vec![0.0; m]];
    let mut tangent = vec![0.0; m * m];
    let mut tj = vec![0.0; m];
    for (e, edge) in mesh.interior_edges() {
        let minus = edge.minus.expect("interior edge");
        let elems = [edge.plus, minus];
        let normal = edge.normal;
        let h = edge.length;
        for (s, w) in rule.points.iter().zip(&rule.weights) {
            let x = mesh.edge_point(e, *s);
            let grads = [
                u.gradient_at(edge.plus, x, &basis),
                u.gradient_at(minus, x, &basis),
            ];
            cfg.density.stress(&grads[0], &mut stress_side[0]);
            cfg.density.stress(&grads[1], &mut stress_side[1]);
            let up = u.evaluate_unchecked(edge.plus, x, &basis);
            let um = u.evaluate_unchecked(minus, x, &basis);
            sides[0].fill(u, &basis, edge.plus, x);
            sides[1].fill(u, &basis, minus, x);
            let ww = w * h;
            for (side_idx, &elem) in elems.iter().enumerate() {
                let sgn = if side_idx == 0 { 1.0 } else { -1.0 };
                let sb = &sides[side_idx];
                // One-sided tangent applied to the tensor jump: a variation
                // of grad v on this side perturbs only this side's stress,
                // which enters the average with weight 1/2.
                cfg.density.tangent(&grads[side_idx], &mut tangent);
                for kl in 0..m {
                    let mut acc = 0.0;
                    for i in 0..n {
                        let jump = up[i] - um[i];
                        for j in 0..DIM {
                            acc += tangent[(i * DIM + j) * m + kl] * jump * normal[j];
                        }
                    }
                    tj[kl] = acc;
                }
                for c in 0..n {
                    let sn_avg: f64 = (0..DIM)
                        .map(|j| 0.5 * (stress_side[0][c * DIM + j] + stress_side[1][c * DIM + j]) * normal[j])
                        .sum();
                    for k in 0..nb {
                        let idx = u.coeff_index(elem, c, k);
                        out[idx] -= ww * sn_avg * sgn * sb.phi[k];
                        out[idx] -= ww
                            * 0.5
                            * (tj[c * DIM] * sb.grad[2 * k] + tj[c * DIM + 1] * sb.grad[2 * k + 1]);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Variation of int W(G(u)) at degree 1: the chain rule gives
/// int S(G(u)) : G(v), and the lifting adjoint turns the R(v) part into an
/// interior-face average of the elementwise-constant stress.
fn add_lifting_gradient(u: &DGFunction, cfg: &DiscreteEnergyConfig, out: &mut [f64]) -> Result<()> {
    let mesh = &u.mesh;
    let basis = u.basis();
    let nb = u.n_basis();
    let n = u.n_comp;
    let g_field = crate::lifting::discrete_gradient(u)?;
    // Elementwise stress of the discrete gradient (constant per element).
    let mut sg = vec![vec![0.0; n * DIM]; mesh.n_elements()];
    for elem in 0..mesh.n_elements() {
        cfg.density.stress(g_field.constant(elem), &mut sg[elem]);
    }
    // Volume part int S(G) : grad v.
    let mut side = SideBasis::new(nb);
    for elem in 0..mesh.n_elements() {
        let area = mesh.element_area(elem);
        let x = mesh.ref_to_phys(elem, [1.0 / 3.0, 1.0 / 3.0]);
        side.fill(u, &basis, elem, x);
        for c in 0..n {
            for k in 0..nb {
                out[u.coeff_index(elem, c, k)] += area
                    * (sg[elem][c * DIM] * side.grad[2 * k]
                        + sg[elem][c * DIM + 1] * side.grad[2 * k + 1]);
            }
        }
    }
    // Face part -int {S(G)} : [[v (x) n]].
    let rule = edge_rule(cfg.edge_deg(u.degree))?;
    let mut phi = vec![0.0; nb];
    for (e, edge) in mesh.interior_edges() {
        let minus = edge.minus.expect("interior edge");
        let normal = edge.normal;
        let h = edge.length;
        for (s, w) in rule.points.iter().zip(&rule.weights) {
            let x = mesh.edge_point(e, *s);
            let ww = w * h;
            for (side_idx, elem) in [(0usize, edge.plus), (1, minus)] {
                let sgn = if side_idx == 0 { 1.0 } else { -1.0 };
                let xi = mesh.phys_to_ref(elem, x);
                basis.eval(xi, &mut phi);
                for c in 0..n {
                    let sn: f64 = (0..DIM)
                        .map(|j| 0.5 * (sg[edge.plus][c * DIM + j] + sg[minus][c * DIM + j]) * normal[j])
                        .sum();
                    for k in 0..nb {
                        out[u.coeff_index(elem, c, k)] -= ww * sn * sgn * phi[k];
                    }
                }
            }
        }
    }
    Ok(())
}

/// Derivatives of the raw penalty pieces: d(seminorm^p) and d(jump sum).
fn penalty_piece_derivatives(
    u: &DGFunction,
    cfg: &DiscreteEnergyConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mesh = &u.mesh;
    let basis = u.basis();
    let nb = u.n_basis();
    let n = u.n_comp;
    let p = cfg.density.exponent();
    let mut d_sem = vec![0.0; u.n_coeffs()];
    let mut d_jump = vec![0.0; u.n_coeffs()];

    // Gradient part of the seminorm: int p |grad u|^(p-2) grad u : grad v.
    let tri = triangle_rule(cfg.tri_degree(u.degree))?;
    let mut side = SideBasis::new(nb);
    for elem in 0..mesh.n_elements() {
        let scale = 2.0 * mesh.element_area(elem);
        for (pt, w) in tri.points.iter().zip(&tri.weights) {
            let x = mesh.ref_to_phys(elem, *pt);
            let g = u.gradient_at(elem, x, &basis);
            let norm2: f64 = g.iter().map(|v| v * v).sum();
            if norm2 == 0.0 {
                continue;
            }
            let factor = p * norm2.powf(0.5 * p - 1.0);
            side.fill(u, &basis, elem, x);
            let ww = scale * w * factor;
            for c in 0..n {
                for k in 0..nb {
                    out_add(
                        &mut d_sem,
                        u.coeff_index(elem, c, k),
                        ww * (g[c * DIM] * side.grad[2 * k] + g[c * DIM + 1] * side.grad[2 * k + 1]),
                    );
                }
            }
        }
    }

    // Interior jumps feed both pieces; boundary jumps only the jump sum.
    let rule = edge_rule(cfg.edge_deg(u.degree))?;
    let mut phi = vec![0.0; nb];
    let mut datum = vec![0.0; n];
    for (e, edge) in mesh.edges.iter().enumerate() {
        let h = edge.length;
        let hfac = h.powf(1.0 - p);
        match edge.minus {
            Some(minus) => {
                for (s, w) in rule.points.iter().zip(&rule.weights) {
                    let x = mesh.edge_point(e, *s);
                    let up = u.evaluate_unchecked(edge.plus, x, &basis);
                    let um = u.evaluate_unchecked(minus, x, &basis);
                    let norm2: f64 = up.iter().zip(&um).map(|(a, b)| (a - b) * (a - b)).sum();
                    if norm2 == 0.0 {
                        continue;
                    }
                    let factor = p * norm2.powf(0.5 * p - 1.0);
                    let ww = w * h * hfac * factor;
                    for (side_idx, elem) in [(0usize, edge.plus), (1, minus)] {
                        let sgn = if side_idx == 0 { 1.0 } else { -1.0 };
                        let xi = mesh.phys_to_ref(elem, x);
                        basis.eval(xi, &mut phi);
                        for c in 0..n {
                            let jc = up[c] - um[c];
                            for k in 0..nb {
                                let idx = u.coeff_index(elem, c, k);
                                let v = ww * jc * sgn * phi[k];
                                d_sem[idx] += v;
                                d_jump[idx] += v;
                            }
                        }
                    }
                }
            }
            None => {
                let elem = edge.plus;
                for (s, w) in rule.points.iter().zip(&rule.weights) {
                    let x = mesh.edge_point(e, *s);
                    let ub = u.evaluate_unchecked(elem, x, &basis);
                    cfg.u0.eval(x, &mut datum);
                    let norm2: f64 = ub.iter().zip(&datum).map(|(a, b)| (a - b) * (a - b)).sum();
                    if norm2 == 0.0 {
                        continue;
                    }
                    let factor = p * norm2.powf(0.5 * p - 1.0);
                    let ww = w * h * hfac * factor;
                    let xi = mesh.phys_to_ref(elem, x);
                    basis.eval(xi, &mut phi);
                    for c in 0..n {
                        let jc = ub[c] - datum[c];
                        for k in 0..nb {
                            d_jump[u.coeff_index(elem, c, k)] += ww * jc * phi[k];
                        }
                    }
                }
            }
        }
    }
    Ok((d_sem, d_jump))
}

#[inline]
fn out_add(v: &mut [f64], idx: usize, val: f64) {
    v[idx] += val;
}

/// alpha times the penalty derivative, with epsilon-regularised outer powers.
fn add_penalty_gradient(u: &DGFunction, cfg: &DiscreteEnergyConfig, out: &mut [f64]) -> Result<()> {
    if cfg.penalty == PenaltyKind::None {
        return Ok(());
    }
    let p = cfg.density.exponent();
    let eps = cfg.jump_epsilon;
    let pieces = penalty_pieces(u, cfg)?;
    let (d_sem, d_jump) = penalty_piece_derivatives(u, cfg)?;
    let a = 1.0 + pieces.seminorm_pow_p;
    let b = pieces.jump_sum;
    // Only the negative fractional powers are singular at zero jumps; the
    // positive ones vanish there and stay exact. This keeps the derivative
    // identically zero at jump-free fields, matching the symmetric kink.
    match cfg.penalty {
        PenaltyKind::Pen1 => {
            let c_sem = (p - 1.0) / p * a.powf(-1.0 / p) * b.powf(1.0 / p);
            let c_jump = (1.0 / p) * a.powf((p - 1.0) / p) * (b + eps).powf(1.0 / p - 1.0);
            for i in 0..out.len() {
                out[i] += cfg.alpha * (c_sem * d_sem[i] + c_jump * d_jump[i]);
            }
        }
        PenaltyKind::Pen2 => {
            let s = pieces.seminorm_pow_p;
            let c_sem = if p == 2.0 {
                0.0
            } else {
                (p - 2.0) / p * (s + eps).powf((p - 2.0) / p - 1.0) * b.powf(2.0 / p)
            };
            let c_jump =
                (1.0 + s.powf((p - 2.0) / p)) * (2.0 / p) * (b + eps).powf(2.0 / p - 1.0);
            for i in 0..out.len() {
                out[i] += cfg.alpha * (c_sem * d_sem[i] + c_jump * d_jump[i]);
            }
        }
        PenaltyKind::None => unreachable!(),
    }
    Ok(())
}

/// -int f . v.
fn add_load_gradient(u: &DGFunction, cfg: &DiscreteEnergyConfig, out: &mut [f64]) -> Result<()> {
    let Some(f) = &cfg.load else { return Ok(()) };
    let mesh = &u.mesh;
    let basis = u.basis();
    let nb = u.n_basis();
    let n = u.n_comp;
    let tri = triangle_rule(cfg.tri_degree(u.degree).max(2 * u.degree))?;
    let mut phi = vec![0.0; nb];
    let mut fv = vec![0.0; n];
    for elem in 0..mesh.n_elements() {
        let scale = 2.0 * mesh.element_area(elem);
        for (pt, w) in tri.points.iter().zip(&tri.weights) {
            basis.eval(*pt, &mut phi);
            let x = mesh.ref_to_phys(elem, *pt);
            f.eval(x, &mut fv);
            for c in 0..n {
                for k in 0..nb {
                    out[u.coeff_index(elem, c, k)] -= scale * w * fv[c] * phi[k];
                }
            }
        }
    }
    Ok(())
}

/// Worst relative discrepancy between the analytic gradient and central
/// finite differences of the energy, over coefficients where either side is
/// above 1e-10. Returns 0 when no coefficient qualifies.
pub fn fd_check(u: &DGFunction, cfg: &DiscreteEnergyConfig, step: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let analytic = gradient(u, cfg)?;
    let mut worst: f64 = 0.0;
    let mut pert = u.clone();
    for i in 0..u.n_coeffs() {
        let base = u.coeffs[i];
        pert.coeffs[i] = base + step;
        let ep = crate::energy::energy(&pert, cfg)?;
        pert.coeffs[i] = base - step;
        let em = crate::energy::energy(&pert, cfg)?;
        pert.coeffs[i] = base;
        let fd = (ep - em) / (2.0 * step);
        let g = analytic[i];
        if g.abs() <= 1e-10 && fd.abs() <= 1e-10 {
            continue;
        }
        let rel = (g - fd).abs() / g.abs().max(fd.abs());
        worst = worst.max(rel);
    }
    Ok(worst)
}
