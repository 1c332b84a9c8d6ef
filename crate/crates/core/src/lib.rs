//! Semi-amortized variational inference on DAG-structured latents.
//!
//! Four solvers share one model contract ([`models::LatentModel`]):
//! simultaneous partial-gradient ascent ([`savi::solve_bao`]), the nested
//! two-level scheme ([`savi::solve_2_level`]), the exact recursive DAG scheme
//! ([`savi::solve_dag`]) and its linear-cost approximation
//! ([`savi::solve_approx_dag`]). [`alloc`] applies them to a toy codec.

pub mod alloc;
pub mod diff;
pub mod error;
pub mod graph;
pub mod models;
pub mod savi;
pub mod values;
pub mod verify;

pub use error::{Error, Result};
pub use graph::{LatentDag, NodeId, TopoOrder};
pub use values::{LatentValues, Layout};
