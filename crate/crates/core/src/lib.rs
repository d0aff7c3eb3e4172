pub mod checks;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod domain_solver;
pub mod fastmath;
pub mod flow;
pub mod geometry;
pub mod kernel;
pub mod reconstruct3d;
pub mod sim;
