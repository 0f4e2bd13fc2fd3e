//! Deformations of finite metric measure spaces by radial densities:
//! sphericalization, flattening and inversion, together with the doubling,
//! perfectness and Besov-energy estimates that they preserve.

pub mod analysis;
pub mod apsp;
pub mod besov;
pub mod cli;
pub mod deform;
pub mod density;
pub mod error;
pub mod generators;
pub mod io;
pub mod space;
pub mod verify;
