//! Interior Helmholtz problem with per-wall impedance boundaries.

pub mod assembly;
pub mod banded;
pub mod modal;
pub mod observe;
pub mod solver;

pub use assembly::{assemble, CsrMatrix, SystemMatrices};
pub use modal::{analytic_rigid_box_response, rigid_box_eigenfrequencies};
pub use observe::{add_noise, simulate_observation, ObservationVector, Simulator, SIXTH_OCTAVE_63_500};
pub use solver::{FieldSolution, HelmholtzSolver};
