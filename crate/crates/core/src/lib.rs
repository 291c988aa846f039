//! Linear noise approximation of chemical reaction networks and
//! structure-preserving model reduction of the resulting linear SDEs.

pub mod balance;
pub mod expr;
pub mod gramian;
pub mod linalg;
pub mod matclass;
pub mod network;
pub mod ode;
pub mod realization;
pub mod simulate;
pub mod timescale;

pub use linalg::{Matrix, Vector};
pub use network::{LnaModel, ReactionNetwork};
pub use realization::Realization;
