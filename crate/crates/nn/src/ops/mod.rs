//! Forward and backward kernels. Everything here operates on plain tensors;
//! [`crate::Tape`] wires them into a differentiable graph.

pub mod basic;
pub mod conv;
pub mod norm;
pub mod pool;
