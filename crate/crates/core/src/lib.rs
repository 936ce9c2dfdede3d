//! Invertible, semantics-aware embeddings of propositional formulae.
//!
//! The crate covers the whole pipeline: formula syntax and random
//! generation ([`logic`]), the Boolean semantic kernel and kernel-PCA
//! context vectors ([`kernel`]), a small reverse-mode differentiation engine
//! ([`autodiff`]), the graph VAE with its grammar-constrained decoder
//! ([`model`]), training ([`train`]) and the evaluation protocols ([`eval`]).

// `!(x > 0.0)` style checks reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod binio;
pub mod error;
pub mod eval;
pub mod kernel;
pub mod logic;
pub mod model;
pub mod par;
pub mod rng;
pub mod train;

pub use error::{Error, ParseError, Result};
