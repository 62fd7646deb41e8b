//! Day-ahead scheduling and loss-minimizing power flow for radial
//! distribution feeders.

pub mod admm;
pub mod gmm;
pub mod grid;
pub mod pipeline;
pub mod scheduler;
pub mod socp;
