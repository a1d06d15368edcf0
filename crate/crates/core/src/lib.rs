//! Randomised eigenpath traversal: spectral calculus for normal operator
//! paths, Liouville / Poisson-jump / phase-randomisation dynamics, gap-adapted
//! schedules and evaluators for the corresponding infidelity bounds.

// `!(x > 0.0)` style guards must reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod paths;
pub mod random;
pub mod schedules;
pub mod spectral;
pub mod stochastic;

pub use error::{Error, Result};
pub use linalg::{CMatrix, CVector, MatrixJson, SpectralDecomposition, VectorJson, C64};
pub use paths::{
    GapModel, GapProfile, GroverInstance, LinearPath, OperatorPath, PathKind, QlspInstance, SharedPath,
    TrotterOrder,
};
pub use schedules::{BoundReport, Schedule, TheoremId};
pub use spectral::{ProjectorPair, SpectralWindow, WindowRule};
pub use dynamics::{Cost, DensityMatrix, Generator, GeneratorKind, Phi, RunResult, StepPolicy};
pub use stochastic::{MonteCarloResult, PoissonRealization, TrajectoryRecord};
