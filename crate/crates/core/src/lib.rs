//! Lagrange-coded federated training of polynomial integer networks.
//!
//! Clients secret-share their quantized datasets with Lagrange coding over a
//! prime field, compute gradients directly on the shares, and the server
//! recovers the exact gradient of the global mini-batch by interpolation as
//! long as enough clients respond.

pub mod carrier;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod fedsim;
pub mod field;
pub mod fxp;
pub mod lcc;
pub mod matrix;
pub mod oracle;
pub mod pinn;
pub mod verify;

pub use error::{Error, Result};
