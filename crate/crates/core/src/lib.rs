#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod archive;
pub mod asymptotics;
pub mod boundary_ops;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod sampling;
pub mod specfun;
pub mod validation;
pub mod volume_ops;
