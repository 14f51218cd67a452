//! Experiment harness for the uniaxial tension/compression studies: scenario
//! configuration, alpha sweeps across mesh resolutions, error norms,
//! determinant diagnostics and CSV/VTK output.
//!
//! A scenario fixes the density, the strain beta of the homogeneous datum
//! `F0 = diag(1, 1 + beta)`, a penalty variant, a list of penalty weights and
//! a list of mesh resolutions (triangle counts). Every (alpha, mesh) cell of
//! the grid is solved and recorded; non-convergence is a first-class result,
//! never an error.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::energy::{density_by_name, DiscreteEnergyConfig, Formulation, PenaltyKind};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Rect, DIM};
use crate::quadrature::{edge_rule, triangle_rule};
use crate::solver::{minimize, GuessPolicy, SolveOptions, StopReason};
use crate::space::{interpolate, AffineField, DGFunction, DifferentiableField};
use crate::vtk::write_field_vtk;

fn default_alphas() -> Vec<f64> {
    vec![20.0, 40.0, 80.0, 160.0, 320.0]
}

fn default_resolutions() -> Vec<usize> {
    vec![1024, 2048, 4096]
}

fn default_tol() -> f64 {
    1e-5
}

fn default_formulation() -> String {
    "projected".to_string()
}

fn default_guess() -> String {
    "datum".to_string()
}

fn default_max_iterations() -> usize {
    20_000
}

fn default_true() -> bool {
    true
}

/// One experiment family: homogeneous boundary datum, an alpha grid and a
/// mesh family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    /// Density name: "power:4", "power:6" or "dirichlet".
    pub density: String,
    /// Optional cross-check of the density's growth exponent.
    #[serde(default)]
    pub p: Option<f64>,
    /// Strain of the datum diag(1, 1 + beta); positive is tension.
    pub beta: f64,
    /// "pen1", "pen2" or "none".
    pub penalty: String,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    /// Triangle counts; each must factor as 2 * nx * ny.
    #[serde(default = "default_resolutions")]
    pub resolutions: Vec<usize>,
    /// Solver gradient tolerance.
    #[serde(default = "default_tol")]
    pub alpha_tol: f64,
    /// "dg", "projected" or "lifting".
    #[serde(default = "default_formulation")]
    pub formulation: String,
    #[serde(default)]
    pub output_dir: Option<String>,
    /// "datum" or "zero".
    #[serde(default = "default_guess")]
    pub initial_guess: String,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Quasi-Newton acceleration for the descent iterations.
    #[serde(default = "default_true")]
    pub accelerated: bool,
    #[serde(default)]
    pub write_vtk: bool,
}

impl Scenario {
    /// Tension study of the quartic density at 10% strain.
    pub fn tension_default() -> Scenario {
        Scenario {
            density: "power:4".into(),
            p: None,
            beta: 0.1,
            penalty: "pen1".into(),
            alphas: default_alphas(),
            resolutions: default_resolutions(),
            alpha_tol: default_tol(),
            formulation: default_formulation(),
            output_dir: None,
            initial_guess: default_guess(),
            max_iterations: default_max_iterations(),
            accelerated: true,
            write_vtk: false,
        }
    }

    /// Compression study of the sextic density at 10% strain.
    pub fn compression_default() -> Scenario {
        Scenario {
            density: "power:6".into(),
            beta: -0.1,
            ..Scenario::tension_default()
        }
    }

    pub fn from_json(text: &str) -> Result<Scenario> {
        let s: Scenario = serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("bad scenario config: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta == -1.0 {
            return Err(Error::invalid("beta = -1 collapses the datum"));
        }
        let density = density_by_name(&self.density)?;
        if let Some(p) = self.p {
            if (p - density.exponent()).abs() > 1e-12 {
                return Err(Error::invalid(format!(
                    "config p = {p} disagrees with density exponent {}",
                    density.exponent()
                )));
            }
        }
        self.penalty_kind()?;
        self.formulation_kind()?;
        for &r in &self.resolutions {
            factor_triangle_count(r)?;
        }
        match self.initial_guess.as_str() {
            "datum" | "zero" => Ok(()),
            other => Err(Error::invalid(format!("unknown initial guess '{other}'"))),
        }
    }

    pub fn penalty_kind(&self) -> Result<PenaltyKind> {
        match self.penalty.as_str() {
            "pen1" => Ok(PenaltyKind::Pen1),
            "pen2" => Ok(PenaltyKind::Pen2),
            "none" => Ok(PenaltyKind::None),
            other => Err(Error::invalid(format!("unknown penalty '{other}'"))),
        }
    }

    pub fn formulation_kind(&self) -> Result<Formulation> {
        match self.formulation.as_str() {
            "dg" => Ok(Formulation::Dg),
            "projected" => Ok(Formulation::Projected),
            "lifting" => Ok(Formulation::Lifting),
            other => Err(Error::invalid(format!("unknown formulation '{other}'"))),
        }
    }

    pub fn datum(&self) -> AffineField {
        AffineField::uniaxial(self.beta)
    }

    pub fn config_for(&self, alpha: f64) -> Result<DiscreteEnergyConfig> {
        Ok(DiscreteEnergyConfig::new(
            density_by_name(&self.density)?,
            self.formulation_kind()?,
            self.penalty_kind()?,
            alpha,
            Arc::new(self.datum()),
        ))
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            max_iterations: self.max_iterations,
            gradient_tolerance: self.alpha_tol,
            accelerated: self.accelerated,
            initial_guess: match self.initial_guess.as_str() {
                "zero" => GuessPolicy::Zero,
                _ => GuessPolicy::InterpolatedDatum,
            },
            ..SolveOptions::default()
        }
    }
}

/// Resolve a triangle count 2 * nx * ny into the most nearly square (nx, ny)
/// factorisation; powers of two land on the familiar families
/// (1024 -> 16 x 32, 2048 -> 32 x 32, 4096 -> 32 x 64).
pub fn factor_triangle_count(count: usize) -> Result<(usize, usize)> {
    if count == 0 || count % 2 != 0 {
        return Err(Error::invalid(format!(
            "triangle count {count} is not of the form 2 * nx * ny"
        )));
    }
    let half = count / 2;
    let mut nx = (half as f64).sqrt().floor() as usize;
    while nx >= 1 {
        if half % nx == 0 {
            return Ok((nx, half / nx));
        }
        nx -= 1;
    }
    Err(Error::invalid(format!("cannot factor {count}")))
}

pub fn mesh_for_triangle_count(count: usize) -> Result<Mesh> {
    let (nx, ny) = factor_triangle_count(count)?;
    Mesh::build_structured_rect(nx, ny, Rect::unit_square())
}

/// Broken L1 and W^{1,1} distances between a DG field and a smooth exact
/// solution: the W^{1,1} value adds the elementwise gradient misfit and the
/// unscaled interior jump integrals to the L1 part.
pub fn error_norms(u: &DGFunction, exact: &dyn DifferentiableField) -> Result<(f64, f64)> {
    let mesh = &u.mesh;
    let basis = u.basis();
    let gbasis = crate::space::ReferenceBasis::new(u.degree - 1);
    let grad = u.broken_gradient();
    let tri = triangle_rule(6)?;
    let mut l1 = 0.0;
    let mut grad_term = 0.0;
    let mut val = vec![0.0; u.n_comp];
    let mut gval = vec![0.0; u.n_comp * DIM];
    let mut gu = vec![0.0; u.n_comp * DIM];
    for elem in 0..mesh.n_elements() {
        let scale = 2.0 * mesh.element_area(elem);
        for (pt, w) in tri.points.iter().zip(&tri.weights) {
            let x = mesh.ref_to_phys(elem, *pt);
            let uv = u.evaluate_unchecked(elem, x, &basis);
            exact.eval(x, &mut val);
            let d2: f64 = uv.iter().zip(&val).map(|(a, b)| (a - b) * (a - b)).sum();
            l1 += scale * w * d2.sqrt();
            grad.eval(elem, x, &gbasis, &mut gu);
            exact.grad(x, &mut gval);
            let g2: f64 = gu.iter().zip(&gval).map(|(a, b)| (a - b) * (a - b)).sum();
            grad_term += scale * w * g2.sqrt();
        }
    }
    let rule = edge_rule(6)?;
    let mut jump_term = 0.0;
    for (e, edge) in mesh.interior_edges() {
        let h = edge.length;
        for (s, w) in rule.points.iter().zip(&rule.weights) {
            let (up, um) = u.trace_pair(e, *s)?;
            let j2: f64 = up.iter().zip(&um).map(|(a, b)| (a - b) * (a - b)).sum();
            jump_term += w * h * j2.sqrt();
        }
    }
    Ok((l1, l1 + grad_term + jump_term))
}

/// Determinant of the constant per-element deformation gradient.
pub fn det_grad_field(u: &DGFunction) -> Result<Vec<f64>> {
    if u.n_comp != DIM || u.degree != 1 {
        return Err(Error::invalid(
            "det field needs a two-component degree-1 field",
        ));
    }
    let grad = u.broken_gradient();
    Ok((0..u.mesh.n_elements())
        .map(|elem| {
            let g = grad.constant(elem);
            g[0] * g[3] - g[1] * g[2]
        })
        .collect())
}

/// One (alpha, mesh) cell of the sweep grid.
#[derive(Debug, Clone, Serialize)]
pub struct RunRow {
    pub alpha: f64,
    pub n_triangles: usize,
    pub converged: bool,
    pub iterations: usize,
    pub energy: f64,
    pub err_l1: f64,
    pub err_w11: f64,
    pub det_min: f64,
    pub det_max: f64,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub scenario: Scenario,
    pub rows: Vec<RunRow>,
    /// Per-element determinant field of every row, in row order.
    pub det_fields: Vec<Vec<f64>>,
}

pub fn csv_header() -> &'static str {
    "alpha,n_triangles,converged,iterations,energy,err_L1,err_W11,det_min,det_max"
}

pub fn csv_string(record: &RunRecord) -> String {
    let mut out = String::from(csv_header());
    out.push('\n');
    for r in &record.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.alpha,
            r.n_triangles,
            r.converged,
            r.iterations,
            r.energy,
            r.err_l1,
            r.err_w11,
            r.det_min,
            r.det_max
        );
    }
    out
}

/// Run the full (alpha x mesh) grid of a scenario. Individual run divergence
/// is recorded in the row, not raised. Writes CSV (and per-run VTK when
/// requested) under the scenario's output directory.
pub fn run_scenario(s: &Scenario) -> Result<RunRecord> {
    s.validate()?;
    let mut rows = Vec::new();
    let mut det_fields = Vec::new();
    let exact = s.datum();
    let out_dir: Option<PathBuf> = s.output_dir.as_ref().map(PathBuf::from);
    if let Some(dir) = &out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::internal(format!("mkdir failed: {e}")))?;
    }
    for &resolution in &s.resolutions {
        let mesh = Arc::new(mesh_for_triangle_count(resolution)?);
        for &alpha in &s.alphas {
            let cfg = s.config_for(alpha)?;
            let opts = s.solve_options();
            let report = minimize(&mesh, &cfg, &opts)?;
            let diverged = report.reason == StopReason::Diverged;
            let (err_l1, err_w11, dets) = if diverged {
                (f64::NAN, f64::NAN, vec![f64::NAN; mesh.n_elements()])
            } else {
                let (l1, w11) = error_norms(&report.solution, &exact)?;
                (l1, w11, det_grad_field(&report.solution)?)
            };
            let det_min = dets.iter().cloned().fold(f64::INFINITY, f64::min);
            let det_max = dets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            log::info!(
                "run alpha={alpha} n_triangles={resolution} converged={} iterations={} err_W11={err_w11:.3e}",
                report.converged,
                report.iterations
            );
            if let Some(dir) = &out_dir {
                if s.write_vtk && !diverged {
                    let path = dir.join(format!("run_a{alpha}_n{resolution}.vtk"));
                    write_field_vtk(&report.solution, &path)?;
                }
            }
            rows.push(RunRow {
                alpha,
                n_triangles: resolution,
                converged: report.converged,
                iterations: report.iterations,
                energy: *report.energy_history.last().unwrap(),
                err_l1,
                err_w11,
                det_min,
                det_max,
            });
            det_fields.push(dets);
        }
    }
    let record = RunRecord {
        scenario: s.clone(),
        rows,
        det_fields,
    };
    if let Some(dir) = &out_dir {
        fs::write(dir.join("results.csv"), csv_string(&record))
            .map_err(|e| Error::internal(format!("csv write failed: {e}")))?;
    }
    Ok(record)
}

/// The smooth non-affine benchmark deformation used by the refinement study.
pub fn limsup_benchmark_field() -> impl DifferentiableField {
    crate::space::FnField {
        n_comp: 2,
        value: |x: [f64; 2], out: &mut [f64]| {
            out[0] = x[0] + 0.1 * x[0] * x[0];
            out[1] = x[1] + 0.1 * x[1] * x[1];
        },
        gradient: |x: [f64; 2], out: &mut [f64]| {
            out.copy_from_slice(&[1.0 + 0.2 * x[0], 0.0, 0.0, 1.0 + 0.2 * x[1]]);
        },
    }
}

#[derive(Debug, Clone)]
pub struct LimsupRow {
    pub n_triangles: usize,
    pub discrete_energy: f64,
    pub gap: f64,
}

/// Refinement study of the discrete energy of the nodal interpolant of a
/// smooth deformation against the continuous energy (computed by degree-8
/// quadrature of the exact gradient on the finest mesh).
pub fn limsup_study(levels: usize, alpha: f64) -> Result<Vec<LimsupRow>> {
    let field = limsup_benchmark_field();
    let density = density_by_name("power:4")?;
    let mut meshes = vec![Arc::new(Mesh::build_structured_rect(
        2,
        2,
        Rect::unit_square(),
    )?)];
    for _ in 0..levels {
        let next = meshes.last().unwrap().refine_uniform();
        meshes.push(Arc::new(next));
    }
    // Continuous-energy oracle on the finest mesh.
    let finest = meshes.last().unwrap();
    let tri = triangle_rule(8)?;
    let mut exact_energy = 0.0;
    let mut g = vec![0.0; 4];
    for elem in 0..finest.n_elements() {
        let scale = 2.0 * finest.element_area(elem);
        for (pt, w) in tri.points.iter().zip(&tri.weights) {
            let x = finest.ref_to_phys(elem, *pt);
            field.grad(x, &mut g);
            exact_energy += scale * w * density.eval(&g);
        }
    }
    let mut rows = Vec::new();
    for mesh in &meshes {
        let u = interpolate(&field, mesh, 1, 2);
        let cfg = DiscreteEnergyConfig::new(
            density.clone(),
            Formulation::Projected,
            PenaltyKind::Pen1,
            alpha,
            Arc::new(FieldAdapter(limsup_benchmark_field())),
        );
        let e_h = crate::energy::energy(&u, &cfg)?;
        rows.push(LimsupRow {
            n_triangles: mesh.n_elements(),
            discrete_energy: e_h,
            gap: (e_h - exact_energy).abs(),
        });
    }
    Ok(rows)
}

/// Wraps a concrete differentiable field as a plain vector field.
struct FieldAdapter<F: DifferentiableField>(F);

impl<F: DifferentiableField> crate::space::VectorField for FieldAdapter<F> {
    fn n_comp(&self) -> usize {
        self.0.n_comp()
    }
    fn eval(&self, x: [f64; 2], out: &mut [f64]) {
        self.0.eval(x, out);
    }
}
