//! Market equilibrium and spatial pricing for a platform that serves
//! ride-sourcing trips, on-demand parcel delivery and flexible parcel
//! delivery with the same driver fleet.

pub mod ctmc;
pub mod equilibrium;
pub mod error;
pub mod first_passage;
pub mod linalg;
pub mod market;
pub mod matching;
pub mod matrix;
pub mod mc;
pub mod optimizer;
pub mod scenario;

pub use error::{Error, Result};
pub use matrix::Matrix;
