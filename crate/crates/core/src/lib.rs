//! Direction of a linear causal relation between two multi-dimensional
//! variables, decided by whether renormalized covariance traces are
//! multiplicative.
//!
//! For a hypothesis `X → Y` with structure matrix `A` (`Y = AX + E`), an
//! input covariance chosen independently of `A` typically satisfies
//! `τ(A C Aᵀ) ≈ τ(C) τ(A Aᵀ)`, where `τ` is the trace divided by the dimension.
//! The backward model systematically violates this. [`trace_core::delta`]
//! measures the violation and [`inference`] turns the two directional values
//! into a verdict.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common case.

pub mod error;
pub mod estimation;
pub mod imaging;
pub mod inference;
pub mod orbit;
pub mod random;
pub mod scalar;
pub mod seed;
pub mod simulation;
pub mod trace_core;

pub use error::{Error, Result};
pub use estimation::{
    load_paired_csv, pseudo_inverse, regression_matrices, second_moments, CovPack, Divisor, PairedDataset,
    SampleCount,
};
pub use inference::{
    decide, infer_from_covpack, infer_from_exact, infer_from_samples, CausalVerdict, Decision,
    InferenceConfig,
};
pub use orbit::{
    concentration_probe, haar_orthogonal, orbit_typicality, GroupKind, TransformationGroup,
    TypicalityReport,
};
pub use scalar::Real;
pub use trace_core::{
    anisotropy, cov_z_inv_z, cov_z_inv_z_pseudo, delta, gaussian_relative_entropy,
    normalized_trace, spectrum, CovMatrix, EigenvalueSpectrum, StructureMatrix,
};

pub type CovMatrix64 = CovMatrix<f64>;
pub type CovMatrix32 = CovMatrix<f32>;
pub type StructureMatrix64 = StructureMatrix<f64>;
pub type StructureMatrix32 = StructureMatrix<f32>;
pub type EigenvalueSpectrum64 = EigenvalueSpectrum<f64>;
pub type EigenvalueSpectrum32 = EigenvalueSpectrum<f32>;
pub type PairedDataset64 = PairedDataset<f64>;
pub type PairedDataset32 = PairedDataset<f32>;
pub type CovPack64 = CovPack<f64>;
pub type CovPack32 = CovPack<f32>;
