pub mod constants;
pub mod error;
pub mod geometry;
pub mod isosolver;
pub mod lab;
pub mod lattice;
pub mod metric;
pub mod percolation;
pub mod stats;
pub mod wulff;

pub use error::{Error, Result};
pub use lattice::{Axis, BoxLattice, Edge, Point, Rect};
