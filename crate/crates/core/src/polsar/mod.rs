//! Polarimetric data model: coherency matrices, scenes, synthetic Wishart
//! scenes and patch handling.

mod coherency;
mod patch;
mod scene;
mod synth;

pub use coherency::{
    hermitian_eigenvalues, pixel_features, validate_coherency, CoherencyIssue, CoherencyMatrix, Mat3, Regularized,
    ValidationReport, SINGULAR_LOAD, SINGULAR_REL_TOL,
};
pub(crate) use coherency::trace_product;
pub use patch::{
    extract_patch, patch_mean_coherency, reflect_index, rotate180, PatchTensor, Standardizer, CHANNELS,
};
pub use scene::{LabelMap, PolSarScene};
pub use synth::{sample_wishart, synth_scene, three_class_covariances, Region, SyntheticSceneSpec, WishartFactor};
