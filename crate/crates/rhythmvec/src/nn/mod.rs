//! Minimal f64 neural-network toolkit: dense matrices, a reverse-mode tape,
//! a shared Transformer encoder, and Adam. Deliberately dependency-free so
//! seeded runs are reproducible down to the bit.

pub mod adam;
pub mod mat;
pub mod params;
pub mod tape;
pub mod transformer;

pub use adam::Adam;
pub use mat::Mat;
pub use params::{glorot, BoundParams, ParamSet};
pub use tape::{NodeId, Tape};
