//! Discrete Helmholtz-type decompositions.
//!
//! [`mixed`] splits vector fields on the plate cell into gradients,
//! divergence-free fields and constants. [`second_order`] splits symmetric
//! matrix fields on the torus into Hessians, cofactor-solenoidal fields and
//! constants.

pub mod mixed;
pub mod second_order;

pub use mixed::{
    decompose_mixed, orthogonality_report, MixedDecomposition, MixedField, MixedGrid,
    OrthogonalityReport,
};
pub use second_order::{
    decompose_second_order_2d, div_cof_residual, spectral_hessian, BandLimitedField, FourierMode,
    ScalarField2D, SecondOrderSplit, SymField2D,
};
