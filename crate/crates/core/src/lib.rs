pub mod analytic;
pub mod autodiff;
pub mod checks;
pub mod envs;
pub mod error;
pub mod estimators;
pub mod optim;
pub mod policy;
pub mod runconfig;
pub mod training;

pub use error::{Error, Result};
