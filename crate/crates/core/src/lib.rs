#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod detector;
pub mod dynamics;
pub mod error;
pub mod foliation;
pub mod integrator;
pub mod output;
pub mod pendulum;
pub mod scan;
pub mod section;
pub mod unperturbed;

pub use error::{Error, Result};
