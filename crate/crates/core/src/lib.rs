//! Calibration of computer models against field data with on-site
//! Gaussian-process surrogates.
//!
//! One small GP per field site emulates the simulator over the calibration
//! parameters `u` only. The block structure this induces in the joint
//! Kennedy–O'Hagan covariance lets the likelihood and posterior predictive
//! be evaluated with `N_F × N_F` dense algebra after a one-off
//! factorization of each site's surrogate.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calib;
pub mod cli;
pub mod design;
pub mod error;
pub mod gp;
pub mod io;
pub mod koh;
pub mod linalg;
pub mod optim;
pub mod oss;
pub mod pipeline;
pub mod seeds;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
