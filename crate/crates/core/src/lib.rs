//! Discriminative span analysis of synthetic-vs-real embedding displacements.
//!
//! Given paired embeddings of real and synthetic samples, the rows
//! `target_i − source_i` form a difference matrix `D`. A linear probe trained
//! on real data gives a classifier direction `w`. The discriminative span is
//! the fraction of `w` that the (truncated) row space of `D` can express,
//! estimated with least squares, ridge, NNLS and L1 solvers.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arith;
pub mod linalg;
pub mod probe;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod solvers;
pub mod span;
pub mod stats;
pub mod tensorio;
