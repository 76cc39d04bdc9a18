#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod biped;
pub mod cli;
pub mod controllers;
pub mod error;
pub mod impactor;
pub mod protocol;
pub mod sim;

pub use error::{Error, Result};
