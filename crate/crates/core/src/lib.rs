pub mod autodiff;
pub mod error;
pub mod formula;
pub mod harness;
pub mod modal;
pub mod sde;
pub mod training;

pub use error::{Error, Result};
