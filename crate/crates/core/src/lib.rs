//! Quality-aware multi-sample multimodal fusion.
//!
//! Two fusion blocks build a multimodal embedding from a variable number of
//! samples per modality. Per-sample quality scores weight samples within a
//! modality, and per-modality quality scores weight modalities. Both kinds of
//! score are learned only through the recognition objective.

pub mod autodiff;
pub mod checkpoint;
mod binio;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fusion;
pub mod losses;
pub mod nn;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
