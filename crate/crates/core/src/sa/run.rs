//! Single sample paths and Monte Carlo campaigns.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::network::{mean_laplacian, sample_graph, validate_mean, GraphModel, MeanLaplacian};
use crate::problem::{Matrix, ProblemSpec};
use crate::rng::{path_seed, Channel, StepStreams};
use crate::stats;

use super::noise::NoiseConfig;
use super::schedule::StepSchedule;
use super::state::NetworkState;
use super::step::sa_step;
use super::trace::{average_traces, Trace, TraceRecord};

/// Runs are aborted once `‖S(k)‖` exceeds this.
pub const DIVERGENCE_GUARD: f64 = 1e12;
pub const DEFAULT_CADENCE: usize = 10;

/// Immutable description of a simulation: instance, graph law, noise and step sizes.
#[derive(Clone, Debug)]
pub struct Simulation {
    problem: ProblemSpec,
    model: GraphModel,
    mean: MeanLaplacian,
    noise: NoiseConfig,
    schedule: StepSchedule,
    cadence: usize,
    initial: Option<NetworkState>,
    reference: Option<Matrix>,
    track: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct PathResult {
    pub seed: u64,
    pub trace: Trace,
    pub final_state: NetworkState,
}

impl Simulation {
    /// Fails when the graph model is not connected in mean or the configuration is invalid.
    pub fn new(problem: ProblemSpec, model: GraphModel, noise: NoiseConfig, schedule: StepSchedule) -> Result<Self> {
        if model.n() != problem.n() {
            return Err(invalid(format!(
                "graph model has {} nodes but the problem has {} agents",
                model.n(),
                problem.n()
            )));
        }
        noise.validate()?;
        schedule.validate()?;
        let mean = mean_laplacian(&model);
        let report = validate_mean(&mean);
        if !report.pass {
            return Err(Error::Assumption {
                index: 3,
                name: "connectivity in mean",
                detail: format!("s2 = {:.3e}, symmetry defect = {:.3e}", report.s2, report.symmetry_defect),
            });
        }
        Ok(Self {
            problem,
            model,
            mean,
            noise,
            schedule,
            cadence: DEFAULT_CADENCE,
            initial: None,
            reference: None,
            track: Vec::new(),
        })
    }

    pub fn with_cadence(mut self, cadence: usize) -> Result<Self> {
        if cadence == 0 {
            return Err(invalid("cadence must be >= 1"));
        }
        self.cadence = cadence;
        Ok(self)
    }

    pub fn with_initial(mut self, initial: NetworkState) -> Result<Self> {
        initial.check_against(&self.problem)?;
        self.initial = Some(initial);
        Ok(self)
    }

    /// Reference allocation `X*` for the distance metric.
    pub fn with_reference(mut self, x_star: Matrix) -> Result<Self> {
        if x_star.shape() != (self.problem.n(), self.problem.m()) {
            return Err(invalid("reference allocation shape mismatch"));
        }
        self.reference = Some(x_star);
        Ok(self)
    }

    /// Allocation components `(agent, component)` recorded in every trace record.
    pub fn with_tracking(mut self, track: Vec<(usize, usize)>) -> Result<Self> {
        if track.iter().any(|&(i, c)| i >= self.problem.n() || c >= self.problem.m()) {
            return Err(invalid("tracked component out of range"));
        }
        self.track = track;
        Ok(self)
    }

    pub fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    pub fn model(&self) -> &GraphModel {
        &self.model
    }

    pub fn mean_laplacian(&self) -> &MeanLaplacian {
        &self.mean
    }

    pub fn noise(&self) -> &NoiseConfig {
        &self.noise
    }

    pub fn schedule(&self) -> &StepSchedule {
        &self.schedule
    }

    pub fn cadence(&self) -> usize {
        self.cadence
    }

    pub fn track(&self) -> &[(usize, usize)] {
        &self.track
    }

    pub fn initial_state(&self) -> Result<NetworkState> {
        match &self.initial {
            Some(s) => Ok(s.clone()),
            None => NetworkState::initial(&self.problem),
        }
    }

    fn record(&self, state: &NetworkState) -> TraceRecord {
        TraceRecord::measure(
            state.k,
            self.schedule.step_size(state.k),
            state,
            &self.problem,
            &self.mean.matrix,
            self.reference.as_ref(),
            &self.track,
        )
    }

    /// One sample path of `iterations` synchronous rounds. Deterministic in `seed`.
    pub fn run_path(&self, iterations: usize, seed: u64) -> Result<PathResult> {
        if iterations == 0 {
            return Err(invalid("iterations must be >= 1"));
        }
        let mut state = self.initial_state()?;
        let start = state.k;
        let initial = self.record(&state);
        let mut records = Vec::with_capacity(iterations.div_ceil(self.cadence));
        for step in 0..iterations {
            let k = start + step;
            let alpha = self.schedule.step_size(k);
            let streams = StepStreams::new(seed, k as u64);
            let graph = sample_graph(&self.model, &mut streams.rng(Channel::Graph, 0, 0));
            let (next, _) = sa_step(&state, &self.problem, &graph, &self.noise, alpha, &streams)?;
            state = next;
            let norm = state.norm();
            if !(norm <= DIVERGENCE_GUARD) {
                return Err(Error::Diverged {
                    iteration: state.k,
                    norm,
                });
            }
            if (step + 1) % self.cadence == 0 || step + 1 == iterations {
                records.push(self.record(&state));
            }
        }
        Ok(PathResult {
            seed,
            trace: Trace {
                cadence: self.cadence,
                initial,
                records,
            },
            final_state: state,
        })
    }

    /// `paths` independent sample paths; path `p` runs with [`path_seed`]`(master_seed, p)`.
    /// `threads = 0` uses the global rayon pool size. The result does not depend on `threads`.
    pub fn monte_carlo(&self, iterations: usize, paths: usize, master_seed: u64, threads: usize) -> Result<MonteCarloReport> {
        if paths == 0 {
            return Err(invalid("paths must be >= 1"));
        }
        if iterations == 0 {
            return Err(invalid("iterations must be >= 1"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| invalid(format!("thread pool: {e}")))?;
        let results: Vec<Result<PathResult>> = pool.install(|| {
            (0..paths)
                .into_par_iter()
                .map(|p| self.run_path(iterations, path_seed(master_seed, p as u64)))
                .collect()
        });
        let mut ok = Vec::new();
        let mut diverged = Vec::new();
        for (p, r) in results.into_iter().enumerate() {
            match r {
                Ok(res) => ok.push((p, res)),
                Err(Error::Diverged { iteration, norm }) => diverged.push(DivergedPath {
                    path: p,
                    iteration,
                    norm,
                }),
                Err(e) => return Err(e),
            }
        }
        let traces: Vec<&Trace> = ok.iter().map(|(_, r)| &r.trace).collect();
        let mean_trace = average_traces(&traces);
        let finals = ok
            .iter()
            .map(|(p, r)| PathFinal {
                path: *p,
                seed: r.seed,
                initial: r.trace.initial.clone(),
                last: r.trace.last().clone(),
            })
            .collect();
        Ok(MonteCarloReport {
            paths,
            iterations,
            master_seed,
            diverged,
            mean_trace,
            finals,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DivergedPath {
    pub path: usize,
    pub iteration: usize,
    pub norm: f64,
}

/// First and last records of one Monte Carlo path.
#[derive(Clone, Debug, Serialize)]
pub struct PathFinal {
    pub path: usize,
    pub seed: u64,
    pub initial: TraceRecord,
    pub last: TraceRecord,
}

#[derive(Clone, Debug)]
pub struct MonteCarloReport {
    pub paths: usize,
    pub iterations: usize,
    pub master_seed: u64,
    pub diverged: Vec<DivergedPath>,
    /// Average over non-diverged paths; `None` if every path diverged.
    pub mean_trace: Option<Trace>,
    pub finals: Vec<PathFinal>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Spread {
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
}

impl Spread {
    pub fn of(xs: &[f64]) -> Self {
        Self {
            mean: stats::mean(xs),
            median: stats::median(xs),
            p90: stats::quantile(xs, 0.9),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FinalSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dist: Option<Spread>,
    pub obj: Spread,
    pub consensus: Spread,
    pub balance: Spread,
    pub state_norm: Spread,
}

#[derive(Clone, Debug, Serialize)]
pub struct MonteCarloSummary {
    pub paths: usize,
    pub diverged: usize,
    #[serde(rename = "final")]
    pub final_metrics: FinalSummary,
}

/// Summary of final-iteration metrics over the given per-path records.
pub fn summarize(paths: usize, diverged: usize, finals: &[TraceRecord]) -> MonteCarloSummary {
    let col = |f: &dyn Fn(&TraceRecord) -> f64| -> Vec<f64> { finals.iter().map(f).collect() };
    let dist = if finals.iter().all(|r| r.dist.is_some()) && !finals.is_empty() {
        Some(Spread::of(&col(&|r| r.dist.unwrap_or(f64::NAN))))
    } else {
        None
    };
    MonteCarloSummary {
        paths,
        diverged,
        final_metrics: FinalSummary {
            dist,
            obj: Spread::of(&col(&|r| r.obj)),
            consensus: Spread::of(&col(&|r| r.consensus)),
            balance: Spread::of(&col(&|r| r.balance)),
            state_norm: Spread::of(&col(&|r| r.state_norm)),
        },
    }
}

impl MonteCarloReport {
    pub fn summary(&self) -> MonteCarloSummary {
        let lasts: Vec<TraceRecord> = self.finals.iter().map(|f| f.last.clone()).collect();
        summarize(self.paths, self.diverged.len(), &lasts)
    }
}
