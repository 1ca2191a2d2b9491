//! Generalized block-term tensor decompositions (mixed Tucker and (Lr,1)
//! terms) for group data analysis: models, a nonlinear least-squares solver
//! suite with matrix-free Hessians, group constraints, and the
//! classification and clustering pipeline built on the fitted models.

pub mod analysis;
pub mod constraints;
pub mod init;
pub mod io;
pub mod krylov;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod optim;
pub mod tensor;

pub(crate) mod kernels;

pub use model::{
    build_glro, build_gtld, init_random, BlockTermModel, GroupFlavor, GroupSpec,
    LrBlock, ParamVector, TuckerBlock, VectorRole,
};
pub use constraints::{
    fit_constrained, orth_project, project_model, simplex_box_project, ConstraintScheme,
    MultiplierState, PenaltyForm,
};
pub use init::{initialize, InitStrategy};
pub use objective::{HessianMode, HessianOperator, ResidualState};
pub use optim::{
    als_sweep, minimize, minimize_projected, ConvergenceTrace, Method, OptimizerConfig, Status,
};
pub use tensor::{DenseTensor, ModePermutation};
