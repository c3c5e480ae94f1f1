pub mod dataset;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod mesh;
pub mod nn;
pub mod retrieval;
pub mod seed;
pub mod train;
