//! Energy densities and the discrete energy functionals.
//!
//! Three functionals are provided on broken fields, all sharing the same
//! penalty machinery:
//!
//! - `energy_dg`: elementwise bulk energy minus the explicit face coupling
//!   with flux `S({grad u})` (average first, then stress), plus penalty;
//! - `energy_projected`: the same with flux `{P S(grad u)}` (stress first,
//!   projected onto degree q-1, then averaged). This is the form whose face
//!   sum equals the lifting pairing exactly;
//! - `energy_lifting`: bulk energy of the discrete gradient `W(G(u))` plus
//!   penalty;
//!
//! plus the compact rewrite `int [W(grad u) - R(u) : S(grad u)] + penalty`,
//! which agrees with the projected form up to local-solve roundoff.
//!
//! Face sums run over interior edges only; Dirichlet data enters exclusively
//! through the penalty, which sums boundary edges with jump `u - u0`. That
//! asymmetry is deliberate. Both penalty variants combine the broken
//! seminorm (interior edges only) with an all-edge jump factor:
//!
//! ```text
//! pen1 = (1 + |u|_sem^p)^((p-1)/p) * (jump factor)^(1/p)
//! pen2 = (1 + |u|_sem^(p-2))      * (jump factor)^(2/p)
//! ```

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::DIM;
use crate::quadrature::{edge_rule, triangle_rule};
use crate::space::{
    edge_degree_for, triangle_degree_for, DGFunction, ElementField, ReferenceBasis, VectorField,
};
use crate::lifting::{l2_project, lift};

/// Stored energy density W with its first two derivatives.
///
/// `stress` is the first derivative S (an N x 2 matrix), `tangent` the second
/// derivative as a (2N) x (2N) matrix acting on row-major flattened matrices.
/// `exponent` is the growth rate p of the density.
pub trait EnergyDensity: Send + Sync {
    fn exponent(&self) -> f64;
    fn eval(&self, xi: &[f64]) -> f64;
    fn stress(&self, xi: &[f64], out: &mut [f64]);
    fn tangent(&self, xi: &[f64], out: &mut [f64]);
}

/// W(F) = |F|^p with the Frobenius norm, for even integer p >= 2.
///
/// Satisfies |F|^p <= W <= 1 + |F|^p with unit constants. The stress is
/// p |F|^(p-2) F and the tangent p |F|^(p-2) I + p (p-2) |F|^(p-4) F (x) F,
/// both of which extend continuously by zero to F = 0 when p > 2.
#[derive(Debug, Clone)]
pub struct PowerDensity {
    pub p: f64,
}

impl PowerDensity {
    pub fn new(p: usize) -> Result<Self> {
        if p < 2 || p % 2 != 0 {
            return Err(Error::invalid(format!(
                "power density needs an even exponent >= 2, got {p}"
            )));
        }
        Ok(PowerDensity { p: p as f64 })
    }
}

impl EnergyDensity for PowerDensity {
    fn exponent(&self) -> f64 {
        self.p
    }

    fn eval(&self, xi: &[f64]) -> f64 {
        let n2: f64 = xi.iter().map(|v| v * v).sum();
        n2.powf(0.5 * self.p)
    }

    fn stress(&self, xi: &[f64], out: &mut [f64]) {
        let p = self.p;
        let n2: f64 = xi.iter().map(|v| v * v).sum();
        if n2 == 0.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            // p = 2 has stress 2 F, still zero at F = 0.
            return;
        }
        let factor = p * n2.powf(0.5 * p - 1.0);
        for (o, v) in out.iter_mut().zip(xi) {
            *o = factor * v;
        }
    }

    fn tangent(&self, xi: &[f64], out: &mut [f64]) {
        let p = self.p;
        let m = xi.len();
        let n2: f64 = xi.iter().map(|v| v * v).sum();
        out.iter_mut().for_each(|v| *v = 0.0);
        if n2 == 0.0 {
            if p == 2.0 {
                for i in 0..m {
                    out[i * m + i] = 2.0;
                }
            }
            return;
        }
        let iso = p * n2.powf(0.5 * p - 1.0);
        let rank1 = p * (p - 2.0) * n2.powf(0.5 * p - 2.0);
        for i in 0..m {
            out[i * m + i] += iso;
            for j in 0..m {
                out[i * m + j] += rank1 * xi[i] * xi[j];
            }
        }
    }
}

/// The standard potential W(F) = |F|^2 / 2 of the Laplace problem.
#[derive(Debug, Clone, Default)]
pub struct DirichletDensity;

impl EnergyDensity for DirichletDensity {
    fn exponent(&self) -> f64 {
        2.0
    }

    fn eval(&self, xi: &[f64]) -> f64 {
        0.5 * xi.iter().map(|v| v * v).sum::<f64>()
    }

    fn stress(&self, xi: &[f64], out: &mut [f64]) {
        out.copy_from_slice(xi);
    }

    fn tangent(&self, xi: &[f64], out: &mut [f64]) {
        let m = xi.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..m {
            out[i * m + i] = 1.0;
        }
    }
}

/// Density selection by name: "power:4", "power:6", "dirichlet", ...
pub fn density_by_name(name: &str) -> Result<Arc<dyn EnergyDensity>> {
    if name == "dirichlet" {
        return Ok(Arc::new(DirichletDensity));
    }
    if let Some(rest) = name.strip_prefix("power:") {
        let p: usize = rest
            .parse()
            .map_err(|_| Error::invalid(format!("bad power exponent in density '{name}'")))?;
        return Ok(Arc::new(PowerDensity::new(p)?));
    }
    Err(Error::invalid(format!("unknown density '{name}'")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formulation {
    /// Explicit face form with flux S({grad u}).
    Dg,
    /// Face form with flux {P S(grad u)} and Nitsche boundary data.
    Projected,
    /// Bulk energy of the discrete gradient, W(G(u)).
    Lifting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyKind {
    Pen1,
    Pen2,
    None,
}

/// Everything needed to evaluate a discrete energy on a given field.
#[derive(Clone)]
pub struct DiscreteEnergyConfig {
    pub density: Arc<dyn EnergyDensity>,
    pub formulation: Formulation,
    pub penalty: PenaltyKind,
    /// Penalty weight alpha; must be positive when a penalty is active.
    pub alpha: f64,
    /// Dirichlet datum imposed through the penalty.
    pub u0: Arc<dyn VectorField>,
    /// Optional external load, entering as -int f . u.
    pub load: Option<Arc<dyn VectorField>>,
    /// Quadrature degrees; `None` picks exact rules for even integer p.
    pub triangle_degree: Option<usize>,
    pub edge_degree: Option<usize>,
    /// Regularisation added inside the fractional penalty powers when
    /// differentiating only; energies are reported unregularised.
    pub jump_epsilon: f64,
}

impl DiscreteEnergyConfig {
    pub fn new(
        density: Arc<dyn EnergyDensity>,
        formulation: Formulation,
        penalty: PenaltyKind,
        alpha: f64,
        u0: Arc<dyn VectorField>,
    ) -> Self {
        DiscreteEnergyConfig {
            density,
            formulation,
            penalty,
            alpha,
            u0,
            load: None,
            triangle_degree: None,
            edge_degree: None,
            jump_epsilon: 1e-16,
        }
    }

    pub fn validate(&self, for_pen_derivatives: bool) -> Result<()> {
        let p = self.density.exponent();
        if self.penalty != PenaltyKind::None && !(self.alpha > 0.0) {
            return Err(Error::invalid("alpha must be positive with an active penalty"));
        }
        if self.penalty == PenaltyKind::Pen2 && p < 2.0 {
            return Err(Error::invalid("pen2 requires p >= 2"));
        }
        if for_pen_derivatives && self.jump_epsilon < 0.0 {
            return Err(Error::invalid("jump regularisation must be nonnegative"));
        }
        Ok(())
    }

    pub fn tri_degree(&self, q: usize) -> usize {
        self.triangle_degree
            .unwrap_or_else(|| triangle_degree_for(self.density.exponent(), q))
    }

    pub fn edge_deg(&self, q: usize) -> usize {
        self.edge_degree
            .unwrap_or_else(|| edge_degree_for(self.density.exponent(), q))
    }
}

/// The two penalty factors: the seminorm-dependent prefactor's argument and
/// the all-edge jump sum, kept raw for reuse by the first variation.
pub(crate) struct PenaltyPieces {
    /// sum_K int |grad u|^p + interior jump sum (the seminorm to the p).
    pub seminorm_pow_p: f64,
    /// All-edge jump sum with boundary jumps u - u0.
    pub jump_sum: f64,
}

pub(crate) fn penalty_pieces(u: &DGFunction, cfg: &DiscreteEnergyConfig) -> Result<PenaltyPieces> {
    let p = cfg.density.exponent();
    let parts = crate::space::broken_seminorm_parts_with_rules(
        u,
        p,
        Some(cfg.u0.as_ref()),
        cfg.tri_degree(u.degree),
        cfg.edge_deg(u.degree),
    )?;
    Ok(PenaltyPieces {
        seminorm_pow_p: parts.seminorm_pow_p(),
        jump_sum: parts.interior_jump + parts.boundary_jump.unwrap_or(0.0),
    })
}

pub(crate) fn penalty_value(pieces: &PenaltyPieces, kind: PenaltyKind, p: f64) -> f64 {
    match kind {
        PenaltyKind::None => 0.0,
        PenaltyKind::Pen1 => {
            (1.0 + pieces.seminorm_pow_p).powf((p - 1.0) / p) * pieces.jump_sum.powf(1.0 / p)
        }
        PenaltyKind::Pen2 => {
            (1.0 + pieces.seminorm_pow_p.powf((p - 2.0) / p)) * pieces.jump_sum.powf(2.0 / p)
        }
    }
}

/// Penalty functional of the configured variant (without the alpha weight).
pub fn penalty(u: &DGFunction, cfg: &DiscreteEnergyConfig) -> Result<f64> {
    cfg.validate(false)?;
    if cfg.penalty == PenaltyKind::None {
        return Ok(0.0);
    }
    let pieces = penalty_pieces(u, cfg)?;
    Ok(penalty_value(&pieces, cfg.penalty, cfg.density.exponent()))
}

/// Bulk term sum_K int W(grad u).
fn bulk_energy(u: &DGFunction, grad: &ElementField, cfg: &DiscreteEnergyConfig) -> Result<f64> {
    let mesh = &u.mesh;
    let tri = triangle_rule(cfg.tri_degree(u.degree))?;
    let gbasis = ReferenceBasis::new(grad.degree);
    let mut g = vec![0.0; u.n_comp * DIM];
    let mut total = 0.0;
    for elem in 0..mesh.n_elements() {
        let scale = 2.0 * mesh.element_area(elem);
        for (pt, w) in tri.points.iter().zip(&tri.weights) {
            let x = mesh.ref_to_phys(elem, *pt);
            grad.eval(elem, x, &gbasis, &mut g);
            total += scale * w * cfg.density.eval(&g);
        }
    }
    Ok(total)
}

/// -int f . u over the mesh.
pub fn load_term(u: &DGFunction, f: &dyn VectorField, quad_degree: usize) -> Result<f64> {
    let mesh = &u.mesh;
    let tri = triangle_rule(quad_degree)?;
    let basis = u.basis();
    let mut fv = vec![0.0; u.n_comp];
    let mut total = 0.0;
    for elem in 0..mesh.n_elements() {
        let scale = 2.0 * mesh.element_area(elem);
        for (pt, w) in tri.points.iter().zip(&tri.weights) {
            let x = mesh.ref_to_phys(elem, *pt);
            let uv = u.evaluate_unchecked(elem, x, &basis);
            f.eval(x, &mut fv);
            let dot: f64 = uv.iter().zip(&fv).map(|(a, b)| a * b).sum();
            total -= scale * w * dot;
        }
    }
    Ok(total)
}

fn optional_load(u: &DGFunction, cfg: &DiscreteEnergyConfig) -> Result<f64> {
    match &cfg.load {
        Some(f) => load_term(u, f.as_ref(), cfg.tri_degree(u.degree).max(2 * u.degree)),
        None => Ok(0.0),
    }
}

/// Interior-face coupling sum_e int flux : [[u (x) n]] where the flux at each
/// quadrature point is produced by `flux_fn(elem_plus, elem_minus, x, out)`.
fn face_coupling<F>(u: &DGFunction, cfg: &DiscreteEnergyConfig, mut flux_fn: F) -> Result<f64>
where
    F: FnMut(usize, usize, [f64; 2], &mut [f64]),
{
    let mesh = &u.mesh;
    let rule = edge_rule(cfg.edge_deg(u.degree))?;
    let basis = u.basis();
    let n = u.n_comp;
    let mut flux = vec![0.0; n * DIM];
    let mut total = 0.0;
    for (e, edge) in mesh.interior_edges() {
        let minus = edge.minus.expect("interior edge");
        let normal = edge.normal;
        let h = edge.length;
        for (s, w) in rule.points.iter().zip(&rule.weights) {
            let x = mesh.edge_point(e, *s);
            let up = u.evaluate_unchecked(edge.plus, x, &basis);
            let um = u.evaluate_unchecked(minus, x, &basis);
            flux_fn(edge.plus, minus, x, &mut flux);
            let mut contraction = 0.0;
            for i in 0..n {
                let jump = up[i] - um[i];
                for j in 0..DIM {
                    contraction += flux[i * DIM + j] * jump * normal[j];
                }
            }
            total += w * h * contraction;
        }
    }
    Ok(total)
}

/// Explicit face-form energy with flux S({grad u}).
pub fn energy_dg(u: &DGFunction, cfg: &DiscreteEnergyConfig) -> Result<f64> {
    cfg.validate(false)?;
    let grad = u.broken_gradient();
    let gbasis = ReferenceBasis::new(grad.degree);
    let bulk = bulk_energy(u, &grad, cfg)?;
    let n = u.n_comp;
    let mut gp = vec![0.0; n * DIM];
    let mut gm = vec![0.0; n * DIM];
    let mut avg = vec![0.0; n * DIM];
    let face = face_coupling(u, cfg, |plus, minus, x, out| {
        grad.eval(plus, x, &gbasis, &mut gp);
        grad.eval(minus, x, &gbasis, &mut gm);
        for k in 0..n * DIM {
            avg[k] = 0.5 * (gp[k] + gm[k]);
        }
        cfg.density.stress(&avg, out);
    })?;
    let pen = penalty(u, cfg)?;
    Ok(bulk - face + cfg.alpha * pen + optional_load(u, cfg)?)
}

/// Face-form energy with flux {P S(grad u)}: stress evaluated one-sided,
/// projected onto degree q-1, then averaged. For q = 1 the projection is the
/// identity on the elementwise-constant stress.
pub fn energy_projected(u: &DGFunction, cfg: &DiscreteEnergyConfig) -> Result<f64> {
    cfg.validate(false)?;
    let grad = u.broken_gradient();
    let bulk = bulk_energy(u, &grad, cfg)?;
    let n = u.n_comp;
    let stress_field = projected_stress(u, &grad, cfg)?;
    let sbasis = ReferenceBasis::new(stress_field.degree);
    let mut sp = vec![0.0; n * DIM];
    let mut sm = vec![0.0; n * DIM];
    let face = face_coupling(u, cfg, |plus, minus, x, out| {
        stress_field.eval(plus, x, &sbasis, &mut sp);
        stress_field.eval(minus, x, &sbasis, &mut sm);
        for k in 0..n * DIM {
            out[k] = 0.5 * (sp[k] + sm[k]);
        }
    })?;
    let pen = penalty(u, cfg)?;
    Ok(bulk - face + cfg.alpha * pen + optional_load(u, cfg)?)
}

/// P S(grad u) as a broken field of degree q - 1.
fn projected_stress(
    u: &DGFunction,
    grad: &ElementField,
    cfg: &DiscreteEnergyConfig,
) -> Result<ElementField> {
    let n = u.n_comp;
    if u.degree == 1 {
        // The stress of a piecewise-constant gradient is already in the
        // target space; apply the stress nodewise.
        let mut out = ElementField::zeros(u.mesh.clone(), 0, n);
        let mut s = vec![0.0; n * DIM];
        for elem in 0..u.mesh.n_elements() {
            cfg.density.stress(grad.constant(elem), &mut s);
            let base = out.entry_index(elem, 0, 0, 0);
            out.data[base..base + n * DIM].copy_from_slice(&s);
        }
        return Ok(out);
    }
    struct StressOfGrad<'a> {
        grad: &'a ElementField,
        basis: ReferenceBasis,
        density: &'a dyn EnergyDensity,
        n: usize,
    }
    impl crate::lifting::ElementwiseMatrixField for StressOfGrad<'_> {
        fn n_rows(&self) -> usize {
            self.n
        }
        fn eval_at(&self, elem: usize, x: [f64; 2], out: &mut [f64]) {
            let mut g = vec![0.0; self.n * DIM];
            self.grad.eval(elem, x, &self.basis, &mut g);
            self.density.stress(&g, out);
        }
    }
    let field = StressOfGrad {
        grad,
        basis: ReferenceBasis::new(grad.degree),
        density: cfg.density.as_ref(),
        n,
    };
    l2_project(&field, &u.mesh, u.degree - 1, cfg.tri_degree(u.degree))
}

/// Compact rewrite int [W(grad u) - R(u) : S(grad u)] + alpha Pen - load.
/// Must agree with `energy_projected` up to quadrature/solve tolerance.
pub fn energy_compact(u: &DGFunction, cfg: &DiscreteEnergyConfig) -> Result<f64> {
    cfg.validate(false)?;
    let mesh = &u.mesh;
    let grad = u.broken_gradient();
    let lifting = lift(u, None)?;
    let gbasis = ReferenceBasis::new(grad.degree);
    let tri = triangle_rule(cfg.tri_degree(u.degree))?;
    let n = u.n_comp;
    let mut g = vec![0.0; n * DIM];
    let mut r = vec![0.0; n * DIM];
    let mut s = vec![0.0; n * DIM];
    let mut total = 0.0;
    for elem in 0..mesh.n_elements() {
        let scale = 2.0 * mesh.element_area(elem);
        for (pt, w) in tri.points.iter().zip(&tri.weights) {
            let x = mesh.ref_to_phys(elem, *pt);
            grad.eval(elem, x, &gbasis, &mut g);
            lifting.eval(elem, x, &gbasis, &mut r);
            cfg.density.stress(&g, &mut s);
            let pairing: f64 = r.iter().zip(&s).map(|(a, b)| a * b).sum();
            total += scale * w * (cfg.density.eval(&g) - pairing);
        }
    }
    let pen = penalty(u, cfg)?;
    Ok(total + cfg.alpha * pen + optional_load(u, cfg)?)
}

/// Lifting-operator energy int W(G(u)) + alpha Pen - load.
pub fn energy_lifting(u: &DGFunction, cfg: &DiscreteEnergyConfig) -> Result<f64> {
    cfg.validate(false)?;
    let mesh = &u.mesh;
    let g_field = crate::lifting::discrete_gradient(u)?;
    let gbasis = ReferenceBasis::new(g_field.degree);
    let tri = triangle_rule(cfg.tri_degree(u.degree))?;
    let n = u.n_comp;
    let mut g = vec![0.0; n * DIM];
    let mut total = 0.0;
    for elem in 0..mesh.n_elements() {
        let scale = 2.0 * mesh.element_area(elem);
        for (pt, w) in tri.points.iter().zip(&tri.weights) {
            let x = mesh.ref_to_phys(elem, *pt);
            g_field.eval(elem, x, &gbasis, &mut g);
            total += scale * w * cfg.density.eval(&g);
        }
    }
    let pen = penalty(u, cfg)?;
    Ok(total + cfg.alpha * pen + optional_load(u, cfg)?)
}

/// The energy of the configured formulation.
pub fn energy(u: &DGFunction, cfg: &DiscreteEnergyConfig) -> Result<f64> {
    match cfg.formulation {
        Formulation::Dg => energy_dg(u, cfg),
        Formulation::Projected => energy_projected(u, cfg),
        Formulation::Lifting => energy_lifting(u, cfg),
    }
}
