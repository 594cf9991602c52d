pub mod engine;
pub mod image;
pub mod noise;
pub mod rng;
pub mod metrics;
pub mod pipeline;
pub mod desk;
pub mod io;
pub mod theory;
pub mod gradcheck;
