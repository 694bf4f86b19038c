pub mod attribution;
pub mod dataset;
pub mod digits;
pub mod error;
pub mod experiment;
pub mod imageio;
pub mod model;
pub mod nn;
pub mod plot;
pub mod rng;
pub mod sim;
pub mod stats;
