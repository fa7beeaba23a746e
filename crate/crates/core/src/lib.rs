pub mod dynamics;
pub mod error;
pub mod fields;
pub mod model;
pub mod montecarlo;
pub mod potentials;
pub mod sampling;
