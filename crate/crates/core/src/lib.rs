//! Content-based 3D medical image retrieval engine and benchmark harness.
//!
//! The crate ingests precomputed per-slice embeddings and voxel label
//! volumes, builds exact nearest-neighbor indexes at the slice and volume
//! level, runs slice-based, volume-based and multi-modal retrieval,
//! extracts lesion morphology from 3D masks, and evaluates retrieval
//! quality with P@k and Average Precision.

pub mod embedding;
pub mod error;
pub mod eval;
pub mod hu;
pub mod index;
pub mod labelvol;
pub mod lesion;
pub mod manifest;
pub mod multimodal;
pub mod ranking;
pub mod slice2d;
pub mod slice_retrieval;
pub mod synth;
pub mod util;
pub mod volume_retrieval;

pub use error::{Error, Result};
