//! Linear phase-space maps for noncommutative quantum mechanics.
//!
//! Noncommutative coordinates and momenta are built from ordinary ones by a
//! linear map `x̂ = Ax + Bp`, `p̂ = Cx + Dp`. The crate checks which maps
//! reproduce a prescribed deformed bracket algebra, solves the resulting
//! polynomial constraints in two and three dimensions, and propagates a
//! charged particle in a constant magnetic field through the map.

pub mod algebra;
pub mod cli;
pub mod dynamics;
pub mod nc2d;
pub mod nc3d;
pub mod numeric;
pub mod par;

pub use algebra::{
    bracket_table, extended_map, sw_map, sw_obstruction, verify_deformation, BracketTable, DeformationParams,
    PhaseSpaceMap, ResidualReport,
};
pub use par::Execution;
