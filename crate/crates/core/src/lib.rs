//! Verify-then-execute harness around an opaque manipulation policy.
//!
//! The crate bundles a deterministic grid manipulation simulator with
//! injectable faults, an embedding-keyed episodic memory, a from-scratch MLP
//! failure verifier, and the controller loop that ties them together:
//! retrieve, propose, verify, then execute or recover.

pub mod bench;
pub mod controller;
pub mod error;
pub mod memory;
pub mod model;
pub mod nn;
pub mod par;
pub mod policy;
pub mod sim;
pub mod util;
pub mod verifier;

pub use error::{Error, Result};
