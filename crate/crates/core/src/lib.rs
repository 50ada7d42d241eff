pub mod baseline;
pub mod dataset;
pub mod factor;
pub mod geometry;
pub mod graph;
pub mod loss;
pub mod optimize;
pub mod solver;
pub mod synth;
pub mod tree;
