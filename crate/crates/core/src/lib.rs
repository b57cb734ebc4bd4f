pub mod accountant;
pub mod cli;
pub mod data;
pub mod dpsgd;
pub mod labeldp;
pub mod metrics;
pub mod model;
pub mod rng;
