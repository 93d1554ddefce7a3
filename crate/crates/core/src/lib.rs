pub mod error;
pub mod network;
pub mod problem;
pub mod rng;
pub mod stats;
pub mod io;
pub mod ode;
pub mod oracle;
pub mod sa;
pub mod experiments;
pub mod cli;
pub mod config;
