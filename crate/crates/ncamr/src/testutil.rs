//! Shared mesh fixtures for unit tests (re-exported from [`crate::meshgen`]).

pub use crate::meshgen::{
    indirect_pair, pinwheel_mesh, quad_grid, single_hanging_pair, two_quads,
};
