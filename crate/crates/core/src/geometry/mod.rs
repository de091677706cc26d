mod circuit;
mod curve;
mod simplify;

pub use circuit::*;
pub use curve::*;
pub use simplify::*;
