#![no_std]

extern crate alloc;

pub mod error;
pub mod graph;
pub mod linalg;
pub mod observability;
pub mod sim;
pub mod sysmodel;
pub mod zda;

pub use error::{Error, Result};
