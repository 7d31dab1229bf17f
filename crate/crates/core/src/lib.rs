//! Nonlinear displaced number states: closed-form construction, a
//! truncated-operator oracle, and nonclassicality diagnostics.

pub mod deformation;
pub mod numerics;
pub mod observables;
pub mod oracle;
pub mod states;

pub use deformation::{DeformationKind, HalfInteger, NonlinearityFunction};
pub use observables::{mandel_q, wigner_grid, wigner_point, GridAxis, MandelResult, PhaseSpaceGrid};
pub use oracle::{OperatorMatrix, OracleReport};
pub use states::{build, ConstructionMode, Family, FockVector, StateError, StateSpec, Truncation};
