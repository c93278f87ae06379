//! CP and PARAFAC2 factorizations of third-order time-evolving data, with
//! simulated evolving-network datasets, recovery metrics and sliding-window
//! fALFF features.

mod als;
pub mod cp;
pub mod error;
pub mod experiment;
pub mod falff;
pub mod io;
pub mod metrics;
pub mod numerics;
pub mod parafac2;
pub mod simgen;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{frobenius_norm, khatri_rao, reconstruct_cp, reconstruct_parafac2, DenseTensor3, FactorMatrix};
