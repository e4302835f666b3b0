//! Text-conditioned joint diffusion over periodic crystals.
//!
//! The library covers the full pipeline at desk scale:
//!
//! - [`crystal`]: unit-cell data model, periodic geometry, symmetry
//!   transforms, and dataset I/O (JSON-Lines plus a minimal CIF subset);
//! - [`prompts`]: short-prompt template generation/parsing and deterministic
//!   text embeddings (hash encoder or externally computed vectors);
//! - [`schedule`]: DDPM beta schedules, exponential sigma schedules, and
//!   absorbing-state discrete transition matrices;
//! - [`diffusion`]: forward corruption, wrapped-normal score targets, and
//!   the three loss terms (lattice / type / coordinate);
//! - [`denoiser`]: the text-fused periodic-equivariant message-passing
//!   network with hand-written backward pass;
//! - [`engine`]: training loop, predictor-corrector sampler, checkpoints;
//! - [`eval`]: structure matching, validity, coverage, EMD property
//!   statistics, and prompt-correctness checks.

pub mod crystal;
pub mod denoiser;
pub mod diffusion;
pub mod elements;
pub mod engine;
pub mod error;
pub mod eval;
pub mod formula;
pub mod prompts;
pub mod schedule;
pub mod toydata;
pub mod util;

pub use error::{Error, ErrorClass, Result};
