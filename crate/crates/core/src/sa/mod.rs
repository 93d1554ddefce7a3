//! The stochastic-approximation recursion: step sizes, noise channels, the synchronous
//! update, metric traces and Monte Carlo campaigns.

pub mod noise;
pub mod run;
pub mod schedule;
pub mod state;
pub mod step;
pub mod trace;

pub use noise::{AdditiveNoise, GradientNoise, NoiseConfig, NoiseRealization};
pub use run::{MonteCarloReport, MonteCarloSummary, PathResult, Simulation, DEFAULT_CADENCE, DIVERGENCE_GUARD};
pub use schedule::{step_size, StepSchedule};
pub use state::NetworkState;
pub use step::{aggregate_noise, sa_step, sa_step_with};
pub use trace::{Trace, TraceRecord, TRACE_HEADER};
