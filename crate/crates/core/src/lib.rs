//! Finite-element simulation of subdiffusive tumour growth.
//!
//! The tumour volume fraction obeys a time-fractional reaction-diffusion
//! equation coupled to quasi-static linear elasticity and to integer-order
//! equations for nutrient and chemotherapy. Time is discretised with
//! Grünwald-Letnikov convolution quadrature, space with P1 elements.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod error;
pub mod fem;
pub mod fodeoracle;
pub mod fracquad;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod observe;
pub mod output;
pub mod stepper;
pub mod verify;

pub use error::{Error, Result};
