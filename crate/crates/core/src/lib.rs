//! Discontinuous Galerkin energy minimisation for nonlinear variational
//! problems on triangulated planar domains.
//!
//! The crate provides structured triangulations with full edge topology,
//! broken polynomial fields with traces, jumps and lifting operators, the
//! discrete energy functionals with both jump penalties and Nitsche-type
//! boundary data, their analytic first variations, a descent solver, and an
//! experiment harness for the uniaxial tension/compression studies.

pub mod energy;
pub mod error;
pub mod experiments;
pub mod lifting;
pub mod mesh;
pub mod quadrature;
pub mod solver;
pub mod space;
pub mod variation;
pub mod vtk;

pub use energy::{
    density_by_name, energy, energy_compact, energy_dg, energy_lifting, energy_projected,
    load_term, penalty, DirichletDensity, DiscreteEnergyConfig, EnergyDensity, Formulation,
    PenaltyKind, PowerDensity,
};
pub use error::{Error, Result};
pub use experiments::{det_grad_field, error_norms, run_scenario, RunRecord, RunRow, Scenario};
pub use lifting::{discrete_gradient, l2_project, lift};
pub use mesh::{Edge, EdgeKind, Mesh, Point, Rect, DIM};
pub use quadrature::{edge_rule, triangle_rule, EdgeRule, TriangleRule};
pub use solver::{minimize, minimize_from, GuessPolicy, SolveOptions, SolveReport, StopReason};
pub use space::{
    broken_seminorm, broken_seminorm_parts, interpolate, tensor_jump, AffineField, DGFunction,
    DifferentiableField, ElementField, FnField, ReferenceBasis, SeminormParts, VectorField,
};
pub use variation::{fd_check, gradient};
