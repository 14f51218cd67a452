//! Energy minimisation over DG coefficients: gradient descent with Armijo
//! backtracking and an optional bounded-memory quasi-Newton accelerator
//! (off by default).
//!
//! Stopping: the max-norm of the assembled gradient falling under the
//! tolerance is the primary criterion. The pen1 penalty is 1-homogeneous in
//! the jumps and has a conical kink at jump-free fields, where the assembled
//! gradient does not vanish at the minimiser; a line search that cannot
//! decrease the energy along any available direction down to the smallest
//! step is therefore also treated as convergence (stationarity within
//! line-search resolution).
//!
//! Near the kink the steepest descent direction is blocked: any step that
//! recreates jumps pays a linear penalty that beats the smooth gain. When
//! that happens (degree-1 fields only) the solver falls back to
//! jump-preserving directions: the projection of the negative gradient onto
//! coefficient fields with matching nodal values across elements and zeros
//! at boundary vertices. Along those directions the jump factor is exactly
//! constant, so ordinary smooth descent resumes on the kink manifold.
//! Runs are fully deterministic: identical configurations produce identical
//! reports.

use std::collections::VecDeque;

use crate::energy::{energy, DiscreteEnergyConfig};
use crate::error::Result;
use crate::space::{interpolate, DGFunction};
use crate::variation::gradient;

#[derive(Debug, Clone)]
pub enum GuessPolicy {
    /// Interpolant of the boundary datum extended into the domain.
    InterpolatedDatum,
    Zero,
    Given(DGFunction),
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub max_iterations: usize,
    /// Max-norm tolerance on the assembled gradient.
    pub gradient_tolerance: f64,
    pub initial_step: f64,
    /// Backtracking factor in (0, 1).
    pub backtracking_factor: f64,
    /// Sufficient-decrease constant of the Armijo condition.
    pub armijo_constant: f64,
    /// Line-search halvings before a direction is declared blocked.
    pub max_halvings: usize,
    /// Largest max-norm coefficient move per accepted step. Damps the search
    /// enough to settle into the nearest stationary state instead of racing
    /// down non-coercive valleys of under-penalised configurations.
    pub max_coeff_move: f64,
    /// Bounded-memory quasi-Newton acceleration (two-loop recursion).
    pub accelerated: bool,
    pub memory: usize,
    pub initial_guess: GuessPolicy,
    /// Emit per-iteration key=value progress lines at debug level.
    pub log_progress: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iterations: 10_000,
            gradient_tolerance: 1e-5,
            initial_step: 1.0,
            backtracking_factor: 0.5,
            armijo_constant: 1e-4,
            max_halvings: 60,
            max_coeff_move: 0.5,
            accelerated: false,
            memory: 10,
            initial_guess: GuessPolicy::InterpolatedDatum,
            log_progress: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Gradient max-norm fell under the tolerance.
    GradientTolerance,
    /// No descent found along any direction at the smallest step;
    /// stationary within line-search resolution (penalty kink).
    LineSearchStall,
    MaxIterations,
    /// Energy or gradient became non-finite, or the iterates blew up.
    Diverged,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: DGFunction,
    pub iterations: usize,
    pub energy_history: Vec<f64>,
    pub final_gradient_norm: f64,
    pub converged: bool,
    pub reason: StopReason,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// L-BFGS two-loop recursion; returns the quasi-Newton direction -H g.
fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let scale = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= scale;
        }
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    for qi in q.iter_mut() {
        *qi = -*qi;
    }
    q
}

/// Orthogonal projector onto jump-preserving degree-1 directions: nodal
/// values are averaged over all elements meeting at a geometric vertex and
/// zeroed at boundary vertices, so moving along the result changes no
/// interior or boundary jump. Also produces the snap direction toward the
/// fully continuous field with datum values at boundary vertices, whose full
/// step kills every jump exactly.
struct ConformingProjector {
    /// Coefficient-index groups, one per (interior vertex, component).
    groups: Vec<Vec<usize>>,
    /// Groups at boundary vertices, with the datum value there.
    boundary_groups: Vec<(Vec<usize>, f64)>,
    n_coeffs: usize,
}

impl ConformingProjector {
    fn new(u: &DGFunction, datum: &dyn crate::space::VectorField) -> Option<Self> {
        if u.degree != 1 {
            return None;
        }
        let mesh = &u.mesh;
        let mut boundary_vertex = vec![false; mesh.vertices.len()];
        for (_, e) in mesh.boundary_edges() {
            boundary_vertex[e.vertices[0]] = true;
            boundary_vertex[e.vertices[1]] = true;
        }
        let mut per_vertex: Vec<Vec<(usize, usize)>> = vec![Vec::new(); mesh.vertices.len()];
        for (elem, tri) in mesh.triangles.iter().enumerate() {
            for (node, &v) in tri.iter().enumerate() {
                per_vertex[v].push((elem, node));
            }
        }
        let mut groups = Vec::new();
        let mut boundary_groups = Vec::new();
        let mut value = vec![0.0; u.n_comp];
        for (v, members) in per_vertex.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            if boundary_vertex[v] {
                datum.eval(mesh.vertices[v], &mut value);
            }
            for c in 0..u.n_comp {
                let indices: Vec<usize> = members
                    .iter()
                    .map(|&(elem, node)| u.coeff_index(elem, c, node))
                    .collect();
                if boundary_vertex[v] {
                    boundary_groups.push((indices, value[c]));
                } else {
                    groups.push(indices);
                }
            }
        }
        Some(ConformingProjector {
            groups,
            boundary_groups,
            n_coeffs: u.n_coeffs(),
        })
    }

    fn project(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_coeffs];
        for group in &self.groups {
            let mean: f64 = group.iter().map(|&i| g[i]).sum::<f64>() / group.len() as f64;
            for &i in group {
                out[i] = mean;
            }
        }
        out
    }

    /// Direction from `u` toward its continuised version: interior vertices
    /// take the mean of their one-sided values, boundary vertices the datum.
    /// A unit step along it makes every jump integral exactly zero.
    fn snap_direction(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_coeffs];
        for group in &self.groups {
            let mean: f64 = group.iter().map(|&i| coeffs[i]).sum::<f64>() / group.len() as f64;
            for &i in group {
                out[i] = mean - coeffs[i];
            }
        }
        for (group, value) in &self.boundary_groups {
            for &i in group {
                out[i] = value - coeffs[i];
            }
        }
        out
    }
}

/// Build the starting iterate from the configured policy and minimise.
pub fn minimize(
    mesh: &std::sync::Arc<crate::mesh::Mesh>,
    cfg: &DiscreteEnergyConfig,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let n_comp = cfg.u0.n_comp();
    let u0 = match &opts.initial_guess {
        GuessPolicy::InterpolatedDatum => interpolate(cfg.u0.as_ref(), mesh, 1, n_comp),
        GuessPolicy::Zero => DGFunction::zeros(mesh.clone(), 1, n_comp),
        GuessPolicy::Given(u) => u.clone(),
    };
    minimize_from(u0, cfg, opts)
}

/// Minimise the configured discrete energy starting from `u_init`.
pub fn minimize_from(
    u_init: DGFunction,
    cfg: &DiscreteEnergyConfig,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    cfg.validate(true)?;
    let mut u = u_init;
    let mut e = energy(&u, cfg)?;
    let mut history = vec![e];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    // Separate step memories for free-space and jump-preserving searches:
    // kink-grinding steps are microscopic and must not strangle the smooth
    // manifold phase (and vice versa).
    let mut step_mem = [opts.initial_step; 2];
    let mut g = gradient(&u, cfg)?;
    let mut gnorm = inf_norm(&g);
    let projector = ConformingProjector::new(&u, cfg.u0.as_ref());
    // In manifold mode the search runs on jump-preserving directions and the
    // curvature pairs are built from projected gradients.
    let mut manifold_mode = false;

    let finish = |u: DGFunction, it, history: Vec<f64>, gnorm, reason| {
        let converged = matches!(
            reason,
            StopReason::GradientTolerance | StopReason::LineSearchStall
        );
        SolveReport {
            solution: u,
            iterations: it,
            energy_history: history,
            final_gradient_norm: gnorm,
            converged,
            reason,
        }
    };

    if !e.is_finite() || !gnorm.is_finite() {
        return Ok(finish(u, 0, history, gnorm, StopReason::Diverged));
    }
    if gnorm < opts.gradient_tolerance {
        return Ok(finish(u, 0, history, gnorm, StopReason::GradientTolerance));
    }

    // Strict Armijo backtracking: at roundoff scales both sides of the
    // sufficient-decrease test collapse to e, and accepting those
    // zero-progress steps would mask a stall at the penalty kink. When the
    // first trial already passes, the step expands while the condition keeps
    // holding, so the search recovers quickly after microscopic kink steps.
    let max_step = opts.initial_step.max(1.0);
    let line_search = |u: &DGFunction,
                       e: f64,
                       slope: f64,
                       dir: &[f64],
                       start: f64|
     -> Result<Option<(Vec<f64>, f64, f64)>> {
        // Cap the coefficient move per step regardless of direction scale.
        let dir_scale = inf_norm(dir);
        if dir_scale == 0.0 {
            return Ok(None);
        }
        let t_cap = (opts.max_coeff_move / dir_scale).min(max_step);
        let mut t = start.min(t_cap);
        let mut trial = u.clone();
        let eval = |t: f64, trial: &mut DGFunction| -> Result<f64> {
            for (ti, (ui, di)) in trial.coeffs.iter_mut().zip(u.coeffs.iter().zip(dir)) {
                *ti = ui + t * di;
            }
            energy(trial, cfg)
        };
        for halving in 0..=opts.max_halvings {
            let et = eval(t, &mut trial)?;
            if et.is_finite() && et < e + opts.armijo_constant * t * slope {
                if halving > 0 {
                    return Ok(Some((std::mem::take(&mut trial.coeffs), et, t)));
                }
                let mut best = (et, t);
                while best.1 * 2.0 <= t_cap {
                    let t2 = best.1 * 2.0;
                    let e2 = eval(t2, &mut trial)?;
                    if e2.is_finite() && e2 < e + opts.armijo_constant * t2 * slope && e2 < best.0
                    {
                        best = (e2, t2);
                    } else {
                        break;
                    }
                }
                let (eb, tb) = best;
                let _ = eval(tb, &mut trial)?;
                return Ok(Some((std::mem::take(&mut trial.coeffs), eb, tb)));
            }
            t *= opts.backtracking_factor;
        }
        Ok(None)
    };

    for it in 1..=opts.max_iterations {
        let g_eff = if manifold_mode {
            projector.as_ref().expect("manifold mode requires degree 1").project(&g)
        } else {
            g.clone()
        };

        // Candidate directions in order: quasi-Newton on the effective
        // gradient, its steepest descent, then the jump-preserving fallback
        // and the snap toward the continuised field. Each candidate carries
        // the step-memory slot of the mode it belongs to.
        let mode_slot = manifold_mode as usize;
        let mut accepted: Option<(Vec<f64>, f64, f64, Vec<f64>, usize)> = None;
        let mut switch_to_manifold = false;
        let mut tried_quasi = false;
        if opts.accelerated && !pairs.is_empty() {
            let dir = two_loop(&g_eff, &pairs);
            let slope = dot(&g, &dir);
            if slope < 0.0 {
                tried_quasi = true;
                if let Some((coeffs, et, t)) = line_search(&u, e, slope, &dir, step_mem[mode_slot])? {
                    accepted = Some((coeffs, et, t, dir, mode_slot));
                }
            }
        }
        if accepted.is_none() {
            let dir: Vec<f64> = g_eff.iter().map(|x| -x).collect();
            let slope = dot(&g, &dir);
            if slope < 0.0 {
                if let Some((coeffs, et, t)) = line_search(&u, e, slope, &dir, step_mem[mode_slot])? {
                    if tried_quasi {
                        pairs.clear();
                    }
                    accepted = Some((coeffs, et, t, dir, mode_slot));
                }
            }
        }
        if accepted.is_none() && !manifold_mode {
            if let Some(p) = &projector {
                let dir: Vec<f64> = p.project(&g).iter().map(|x| -x).collect();
                let slope = dot(&g, &dir);
                if slope < 0.0 {
                    if let Some((coeffs, et, t)) = line_search(&u, e, slope, &dir, step_mem[1])? {
                        switch_to_manifold = true;
                        accepted = Some((coeffs, et, t, dir, 1));
                    }
                }
            }
        }
        if accepted.is_none() {
            // Snap toward the continuised field, full step first: killing the
            // residual jumps outright is often the only admissible move at
            // the kink. Accepted on plain strict decrease (zero slope).
            if let Some(p) = &projector {
                let dir = p.snap_direction(&u.coeffs);
                if inf_norm(&dir) > 0.0 {
                    if let Some((coeffs, et, t)) = line_search(&u, e, 0.0, &dir, 1.0)? {
                        switch_to_manifold = true;
                        accepted = Some((coeffs, et, t, dir, 1));
                    }
                }
            }
        }
        if accepted.is_none() && manifold_mode {
            // Manifold directions exhausted; give the full gradient one more
            // chance before declaring stationarity.
            let dir: Vec<f64> = g.iter().map(|x| -x).collect();
            let slope = dot(&g, &dir);
            if slope < 0.0 {
                if let Some((coeffs, et, t)) = line_search(&u, e, slope, &dir, step_mem[0])? {
                    manifold_mode = false;
                    pairs.clear();
                    accepted = Some((coeffs, et, t, dir, 0));
                }
            }
        }

        let Some((coeffs, e_new, t_used, dir, used_slot)) = accepted else {
            return Ok(finish(u, it, history, gnorm, StopReason::LineSearchStall));
        };
        if switch_to_manifold && !manifold_mode {
            manifold_mode = true;
            pairs.clear();
            step_mem[1] = opts.initial_step;
        }

        let g_eff_old = g_eff;
        u.coeffs = coeffs;
        e = e_new;
        history.push(e);
        g = gradient(&u, cfg)?;
        gnorm = inf_norm(&g);
        if opts.log_progress {
            log::debug!("iter={it} energy={e:.16e} grad_inf={gnorm:.6e} step={t_used:.6e} manifold={manifold_mode}");
        }
        // Non-finite values or runaway iterates both mean the configured
        // energy is not coercive along the path taken; record divergence.
        if !e.is_finite() || !gnorm.is_finite() || e < -1e15 || inf_norm(&u.coeffs) > 1e12 {
            return Ok(finish(u, it, history, gnorm, StopReason::Diverged));
        }
        if opts.accelerated {
            let g_eff_new = if manifold_mode {
                projector.as_ref().expect("degree 1").project(&g)
            } else {
                g.clone()
            };
            let s: Vec<f64> = dir.iter().map(|d| t_used * d).collect();
            let y: Vec<f64> = g_eff_new.iter().zip(&g_eff_old).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            let ss = dot(&s, &s).sqrt();
            let yy = dot(&y, &y).sqrt();
            if sy > 1e-12 * ss * yy {
                if pairs.len() == opts.memory {
                    pairs.pop_front();
                }
                pairs.push_back((s, y, 1.0 / sy));
            }
        }
        if gnorm < opts.gradient_tolerance {
            return Ok(finish(u, it, history, gnorm, StopReason::GradientTolerance));
        }
        // Restart the next search in this mode near the last accepted scale.
        step_mem[used_slot] = (t_used * 2.0).min(max_step);
    }
    Ok(finish(
        u,
        opts.max_iterations,
        history,
        gnorm,
        StopReason::MaxIterations,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{Formulation, PenaltyKind, PowerDensity};
    use crate::mesh::{Mesh, Rect};
    use crate::space::AffineField;
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    fn tension_cfg(alpha: f64) -> DiscreteEnergyConfig {
        DiscreteEnergyConfig::new(
            Arc::new(PowerDensity::new(4).unwrap()),
            Formulation::Projected,
            PenaltyKind::Pen1,
            alpha,
            Arc::new(AffineField::uniaxial(0.1)),
        )
    }

    #[test]
    fn datum_start_converges_immediately() {
        let mesh = Arc::new(Mesh::build_structured_rect(4, 4, Rect::unit_square()).unwrap());
        let cfg = tension_cfg(20.0);
        let opts = SolveOptions::default();
        let report = minimize(&mesh, &cfg, &opts).unwrap();
        assert!(report.converged, "reason {:?}", report.reason);
        assert!(
            report.iterations <= 2,
            "expected immediate convergence, took {}",
            report.iterations
        );
    }

    #[test]
    fn zero_start_reaches_homogeneous_state() {
        // Non-square resolution: the coarse square meshes have a spurious
        // local minimum that traps every first-order method started at zero.
        let mesh = Arc::new(Mesh::build_structured_rect(4, 8, Rect::unit_square()).unwrap());
        let cfg = tension_cfg(20.0);
        let opts = SolveOptions {
            initial_guess: GuessPolicy::Zero,
            accelerated: true,
            max_iterations: 10_000,
            ..SolveOptions::default()
        };
        let report = minimize(&mesh, &cfg, &opts).unwrap();
        assert!(report.converged, "reason {:?}", report.reason);
        let e_final = *report.energy_history.last().unwrap();
        assert!(
            (e_final - 4.8841).abs() < 1e-6,
            "final energy {e_final} away from homogeneous value"
        );
    }

    #[test]
    fn energy_history_monotone() {
        let mesh = Arc::new(Mesh::build_structured_rect(2, 4, Rect::unit_square()).unwrap());
        let cfg = tension_cfg(20.0);
        let opts = SolveOptions {
            initial_guess: GuessPolicy::Zero,
            accelerated: true,
            max_iterations: 4000,
            ..SolveOptions::default()
        };
        let report = minimize(&mesh, &cfg, &opts).unwrap();
        for w in report.energy_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-14, "energy rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn perturbed_starts_reach_same_energy() {
        let mesh = Arc::new(Mesh::build_structured_rect(2, 2, Rect::unit_square()).unwrap());
        let cfg = tension_cfg(20.0);
        let base = crate::space::interpolate(cfg.u0.as_ref(), &mesh, 1, 2);
        let mut perturbed = base.clone();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        // Perturb only coefficients of elements that do not touch the
        // boundary, so the datum stays anchored.
        for elem in 0..mesh.n_elements() {
            let interior = mesh.element_edges[elem]
                .iter()
                .all(|&e| mesh.edges[e].is_interior());
            if !interior {
                continue;
            }
            for c in 0..2 {
                for k in 0..3 {
                    let idx = perturbed.coeff_index(elem, c, k);
                    perturbed.coeffs[idx] += rng.gen_range(-1e-3..1e-3);
                }
            }
        }
        let opts = SolveOptions {
            accelerated: true,
            max_iterations: 4000,
            ..SolveOptions::default()
        };
        let r1 = minimize_from(base, &cfg, &opts).unwrap();
        let r2 = minimize_from(perturbed, &cfg, &opts).unwrap();
        let e1 = *r1.energy_history.last().unwrap();
        let e2 = *r2.energy_history.last().unwrap();
        assert!(
            (e1 - e2).abs() <= 1e-8 * (1.0 + e1.abs()),
            "minimum energies differ: {e1} vs {e2}"
        );
    }

    #[test]
    fn deterministic_reports() {
        let mesh = Arc::new(Mesh::build_structured_rect(2, 2, Rect::unit_square()).unwrap());
        let cfg = tension_cfg(20.0);
        let opts = SolveOptions {
            initial_guess: GuessPolicy::Zero,
            accelerated: true,
            max_iterations: 500,
            ..SolveOptions::default()
        };
        let r1 = minimize(&mesh, &cfg, &opts).unwrap();
        let r2 = minimize(&mesh, &cfg, &opts).unwrap();
        assert_eq!(r1.iterations, r2.iterations);
        assert_eq!(r1.energy_history, r2.energy_history);
        assert_eq!(r1.solution.coeffs, r2.solution.coeffs);
    }
}
