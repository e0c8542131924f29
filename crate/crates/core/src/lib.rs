pub mod autodiff;
pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod harness;
pub mod init;
pub mod losses;
pub mod params;
pub mod renderer;
pub mod rng;
pub mod scene;
pub mod synthgen;
pub mod training;
