//! Numerical toolkit for Musielak-Orlicz Hardy spaces of closed differential
//! forms on periodic grids.

pub mod atoms;
pub mod bmo;
pub mod decompose;
pub mod error;
pub mod factorize;
pub mod fixtures;
pub mod forms;
pub mod grid;
pub mod growth;
pub mod maximal;
pub mod primitive;
pub mod tent;

pub use error::{Error, Result};
pub use forms::Form;
pub use grid::{Ball, Grid};
pub use growth::{AdmissibleTriple, GrowthFunction};
