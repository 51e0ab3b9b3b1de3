//! Small numerical kernels shared by the geometric modules.

pub mod band;
pub mod fd;
pub mod jet;
pub mod quad;

pub use band::BandMatrix;
