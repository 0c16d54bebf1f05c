//! Recovers a physically meaningful RC network (admittance matrix `S` and
//! capacitances `G`) from an identified state-space model.
//!
//! The pipeline diagonalizes `A_hat`, solves for the scaling `(D, G)`,
//! selects an orthogonal factor `Q`, and assembles `T = P Q sqrt(G)` with
//! `S = G T^-1 A_hat T` symmetric and, ideally, Metzler.

pub mod error;
pub mod graph;
pub mod io;
pub mod linalg;
mod lm;
pub mod lp;
pub mod metzler;
pub mod model;
pub mod netgen;
pub mod pipeline;
pub mod rotation;
pub mod scaling;

pub use error::{Error, Result};
pub use model::StateSpaceModel;
