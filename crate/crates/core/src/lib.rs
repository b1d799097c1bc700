//! Simulation core for federated learning over vehicular networks.
//!
//! Everything here is allocation-only (`no_std` + `alloc`): vehicle mobility,
//! CAM/CPM generation and fusion into a road traffic topology graph, trajectory
//! and latency forecasting, the MLP learning substrate, and the client
//! selection policies. File formats, configuration, parallel execution and the
//! experiment loop live in the `v2xfl` crate.
#![no_std]
#![forbid(unsafe_code)]
// `!(x > 0.0)` also rejects NaN, which is the point of those checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod fl;
pub mod forecast;
pub mod geometry;
pub mod mobility;
pub mod rng;
pub mod selection;
pub mod v2x;

pub use crate::error::{Error, Result};
pub use crate::geometry::{Rect, Vec2};
