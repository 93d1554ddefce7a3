//! Three-period demand-response instances and the two Monte Carlo experiments built on them.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::io::{rows, write_json, GraphDoc, ProblemDoc};
use crate::network::{validate_model, GraphModel};
use crate::oracle::{solve_dual, OracleSolution, DUAL_MAX_ITER, DUAL_TOL};
use crate::problem::{random_spd, AgentSpec, LocalSet, Matrix, ObjectiveSpec, ProblemSpec, Vector};
use crate::rng::{path_seed, sub_seed};
use crate::sa::run::{summarize, MonteCarloSummary};
use crate::sa::{MonteCarloReport, NetworkState, NoiseConfig, Simulation, StepSchedule, TraceRecord};

pub const AGENTS: usize = 10;
pub const PERIODS: usize = 3;
pub const TEMPLATE_ROWS: usize = 12;
pub const QUANTITIES: [&str; 6] = ["total", "ramp_12", "ramp_23", "level_1", "level_2", "level_3"];
const MAX_ATTEMPTS: usize = 100;

/// Coefficient rows of the six two-sided quantities: total, two ramps, three levels.
fn quantity_rows() -> [[f64; PERIODS]; 6] {
    [
        [1.0, 1.0, 1.0],
        [1.0, -1.0, 0.0],
        [0.0, 1.0, -1.0],
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
    ]
}

/// The 12×3 template: for quantity `t`, row `2t` is `−q_t` (lower bound) and row `2t+1` is `q_t`.
pub fn constraint_template() -> Matrix {
    let q = quantity_rows();
    Matrix::from_fn(TEMPLATE_ROWS, PERIODS, |r, c| {
        let sign = if r % 2 == 0 { -1.0 } else { 1.0 };
        sign * q[r / 2][c]
    })
}

/// `(total, p1 − p2, p2 − p3, p1, p2, p3)`.
pub fn template_quantities(p: &Vector) -> [f64; 6] {
    let q = quantity_rows();
    std::array::from_fn(|t| (0..PERIODS).map(|c| q[t][c] * p[c]).sum())
}

/// Right-hand side `l` for the template from two-sided bounds `lo ≤ q(p) ≤ hi`.
pub fn template_bounds(lo: &[f64; 6], hi: &[f64; 6]) -> Vector {
    Vector::from_fn(TEMPLATE_ROWS, |r, _| if r % 2 == 0 { -lo[r / 2] } else { hi[r / 2] })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DemandResponseSpec {
    pub seed: u64,
    /// Generation schedule `P^g_i`, one row per aggregator.
    pub generation: Vec<Vec<f64>>,
    /// Nominal demand profile used to place the bounds; meets the balance constraint.
    pub nominal: Vec<Vec<f64>>,
    /// Per-agent lower/upper bounds on [`QUANTITIES`].
    pub lower: Vec<[f64; 6]>,
    pub upper: Vec<[f64; 6]>,
    pub noise: NoiseConfig,
}

/// Random demand-response instance with `n = 10` aggregators over `T = 3` periods.
///
/// A nominal profile `p_i ~ U[1,3]³` is drawn first; `P^g_i` is `p_i` plus a zero-sum
/// perturbation in `[−0.5, 0.5]`, and every template quantity gets bounds at
/// `q(p_i) ∓ U[0.5, 1.5]`. The nominal profile is then a strictly feasible point of the
/// coupled problem. `Q_i` has eigenvalues in `[0.5, 5]` and `c_i ~ U[−1, 1]³`.
pub fn demand_response_instance(seed: u64) -> Result<(ProblemSpec, DemandResponseSpec)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let template = constraint_template();
    let mut last_err = String::new();
    for _ in 0..MAX_ATTEMPTS {
        let nominal: Vec<Vector> = (0..AGENTS)
            .map(|_| Vector::from_fn(PERIODS, |_, _| rng.gen_range(1.0..=3.0)))
            .collect();
        let shifts: Vec<Vector> = (0..AGENTS)
            .map(|_| Vector::from_fn(PERIODS, |_, _| rng.gen_range(-0.5..=0.5)))
            .collect();
        let mean_shift = shifts.iter().fold(Vector::zeros(PERIODS), |a, s| a + s) / AGENTS as f64;
        let mut agents = Vec::with_capacity(AGENTS);
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        let mut generation = Vec::new();
        let mut failed = false;
        for i in 0..AGENTS {
            let q = random_spd(&mut rng, PERIODS, 0.5, 5.0);
            let c = Vector::from_fn(PERIODS, |_, _| rng.gen_range(-1.0..=1.0));
            let qn = template_quantities(&nominal[i]);
            let lo: [f64; 6] = std::array::from_fn(|t| qn[t] - rng.gen_range(0.5..=1.5));
            let hi: [f64; 6] = std::array::from_fn(|t| qn[t] + rng.gen_range(0.5..=1.5));
            let gen = &nominal[i] + &shifts[i] - &mean_shift;
            let set = match LocalSet::polyhedron(template.clone(), template_bounds(&lo, &hi)) {
                Ok(s) => s,
                Err(e) => {
                    last_err = e.to_string();
                    failed = true;
                    break;
                }
            };
            agents.push(AgentSpec::new(ObjectiveSpec::quadratic(q, c)?, set, gen.clone())?);
            lower.push(lo);
            upper.push(hi);
            generation.push(gen.iter().cloned().collect());
        }
        if failed {
            continue;
        }
        let problem = ProblemSpec::new(agents)?;
        let nominal_m = Matrix::from_fn(AGENTS, PERIODS, |i, c| nominal[i][c]);
        let balance = (Vector::from_fn(PERIODS, |c, _| nominal_m.column(c).sum()) - problem.total_resource()).amax();
        if problem.max_violation(&nominal_m) >= 0.0 || balance > 1e-9 {
            last_err = format!("nominal profile not strictly feasible (balance gap {balance:.2e})");
            continue;
        }
        let spec = DemandResponseSpec {
            seed,
            generation,
            nominal: rows(&nominal_m),
            lower,
            upper,
            noise: NoiseConfig::demand_response(),
        };
        return Ok((problem, spec));
    }
    Err(Error::GenerationFailure {
        attempts: MAX_ATTEMPTS,
        reason: last_err,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    pub pool_size: usize,
    pub p_lo: f64,
    pub p_hi: f64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            pool_size: 30,
            p_lo: 0.05,
            p_hi: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub paths: usize,
    pub rounds: usize,
    pub iterations: usize,
    pub cadence: usize,
    /// 0 = all available cores.
    pub threads: usize,
    pub schedule: StepSchedule,
    pub noise: NoiseConfig,
    pub pool: PoolConfig,
    /// 0-based agent indices whose allocation component is tracked.
    pub tracked_agents: Vec<usize>,
    pub tracked_component: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 1,
            paths: 200,
            rounds: 100,
            iterations: 8000,
            cadence: 10,
            threads: 0,
            schedule: StepSchedule::default(),
            noise: NoiseConfig::demand_response(),
            pool: PoolConfig::default(),
            tracked_agents: vec![0, 1, 2],
            tracked_component: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.cadence == 0 {
            return Err(invalid("iterations and cadence must be >= 1"));
        }
        if self.pool.pool_size == 0 || !(0.0 <= self.pool.p_lo && self.pool.p_lo <= self.pool.p_hi && self.pool.p_hi <= 1.0) {
            return Err(invalid("graph pool needs pool_size >= 1 and 0 <= p_lo <= p_hi <= 1"));
        }
        self.schedule.validate()?;
        self.noise.validate()
    }

    fn track(&self) -> Vec<(usize, usize)> {
        self.tracked_agents.iter().map(|&i| (i, self.tracked_component)).collect()
    }

    fn pool_model(&self, seed: u64) -> Result<GraphModel> {
        GraphModel::erdos_renyi_pool(AGENTS, self.pool.pool_size, self.pool.p_lo, self.pool.p_hi, seed)
    }
}

/// Inputs of an Experiment-1 run; [`Experiment1Setup::demand_response`] gives the default.
#[derive(Clone, Debug)]
pub struct Experiment1Setup {
    pub problem: ProblemSpec,
    pub spec: Option<DemandResponseSpec>,
    pub model: GraphModel,
    /// Start state of every path; the default start when absent.
    pub initial: Option<NetworkState>,
}

impl Experiment1Setup {
    /// Instance and graph pool drawn from sub-seeds of the master seed.
    pub fn demand_response(config: &ExperimentConfig) -> Result<Self> {
        let (problem, spec) = demand_response_instance(sub_seed(config.master_seed, "instance", 0))?;
        let model = config.pool_model(sub_seed(config.master_seed, "pool", 0))?;
        Ok(Self {
            problem,
            spec: Some(spec),
            model,
            initial: None,
        })
    }
}

pub struct Experiment1Report {
    pub config: ExperimentConfig,
    pub setup: Experiment1Setup,
    pub oracle: OracleSolution,
    pub optimal_value: f64,
    pub monte_carlo: MonteCarloReport,
    pub track: Vec<(usize, usize)>,
}

pub fn experiment1(config: &ExperimentConfig) -> Result<Experiment1Report> {
    config.validate()?;
    run_experiment1(config, Experiment1Setup::demand_response(config)?)
}

/// Monte Carlo over `config.paths` paths on a fixed instance and graph law, measured against
/// the oracle solution.
pub fn run_experiment1(config: &ExperimentConfig, setup: Experiment1Setup) -> Result<Experiment1Report> {
    config.validate()?;
    let oracle = solve_dual(&setup.problem, DUAL_TOL, DUAL_MAX_ITER)?;
    let track: Vec<_> = config
        .track()
        .into_iter()
        .filter(|&(i, c)| i < setup.problem.n() && c < setup.problem.m())
        .collect();
    let mut sim = Simulation::new(setup.problem.clone(), setup.model.clone(), config.noise, config.schedule)?
        .with_cadence(config.cadence)?
        .with_reference(oracle.x_star.clone())?
        .with_tracking(track.clone())?;
    if let Some(s) = &setup.initial {
        sim = sim.with_initial(s.clone())?;
    }
    let monte_carlo = sim.monte_carlo(config.iterations, config.paths, config.master_seed, config.threads)?;
    Ok(Experiment1Report {
        optimal_value: setup.problem.objective_value(&oracle.x_star),
        config: config.clone(),
        setup,
        oracle,
        monte_carlo,
        track,
    })
}

/// `{problem, demand_response?}` as written to `instance.json`.
#[derive(Serialize, Deserialize)]
pub struct InstanceDoc {
    pub problem: ProblemDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand_response: Option<DemandResponseSpec>,
}

impl Experiment1Report {
    pub fn summary(&self) -> MonteCarloSummary {
        self.monte_carlo.summary()
    }

    /// `experiment.json`, `instance.json`, `graph.json`, `oracle.json`, `trace_mean.csv`,
    /// `allocations_mean.csv`, `final_metrics.csv`, `summary.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("experiment.json"), &self.config)?;
        write_json(
            &dir.join("instance.json"),
            &InstanceDoc {
                problem: ProblemDoc::from_problem(&self.setup.problem)?,
                demand_response: self.setup.spec.clone(),
            },
        )?;
        write_json(&dir.join("graph.json"), &GraphDoc::from_model(&self.setup.model))?;
        write_json(&dir.join("oracle.json"), &self.oracle.to_doc())?;
        write_json(&dir.join("summary.json"), &self.summary())?;
        if let Some(mean) = &self.monte_carlo.mean_trace {
            mean.write_csv(BufWriter::new(File::create(dir.join("trace_mean.csv"))?))?;
            mean.write_tracked_csv(BufWriter::new(File::create(dir.join("allocations_mean.csv"))?), &self.track)?;
        }
        let mut w = BufWriter::new(File::create(dir.join("final_metrics.csv"))?);
        writeln!(w, "path,seed,dist,obj,consensus,balance,state_norm")?;
        for f in &self.monte_carlo.finals {
            let r = &f.last;
            let dist = r.dist.map(|d| d.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                f.path, f.seed, dist, r.obj, r.consensus, r.balance, r.state_norm
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Metrics of one Experiment-2 round.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoundResult {
    pub round: usize,
    pub instance_seed: u64,
    pub pool_seed: u64,
    pub path_seed: u64,
    /// Graph pools rejected by model validation before this round's pool was accepted.
    pub resamples: usize,
    pub optimal_value: f64,
    pub initial: TraceRecord,
    /// First recorded iteration; the reference for indexes that vanish at `k = 0`.
    pub first: TraceRecord,
    pub last: TraceRecord,
}

impl RoundResult {
    pub fn relative_dist(&self) -> f64 {
        match (self.last.dist, self.initial.dist) {
            (Some(a), Some(b)) if b > 0.0 => a / b,
            _ => f64::NAN,
        }
    }

    /// Ratio of a final index to its initial value, or to the first recorded value when the
    /// initial value is zero (the consensus index starts at zero because `Λ(0) = 0`).
    pub fn relative(&self, pick: fn(&TraceRecord) -> f64) -> f64 {
        let base = pick(&self.initial);
        let base = if base > 0.0 { base } else { pick(&self.first) };
        pick(&self.last) / base
    }

    pub fn objective_gap(&self) -> f64 {
        (self.last.obj - self.optimal_value).abs()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Histogram {
    pub index: String,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub const HISTOGRAM_BINS: usize = 20;

/// Log-spaced histogram over `[min, max]` of the positive values; non-positive values are
/// counted in the first bin.
pub fn log_histogram(index: &str, values: &[f64], bins: usize) -> Histogram {
    let pos: Vec<f64> = values.iter().cloned().filter(|v| *v > 0.0 && v.is_finite()).collect();
    let (mut lo, mut hi) = pos
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if pos.is_empty() {
        lo = 1e-16;
        hi = 1.0;
    }
    if hi <= lo {
        lo /= 10f64.sqrt();
        hi *= 10f64.sqrt();
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    let edges: Vec<f64> = (0..=bins)
        .map(|b| match b {
            0 => lo,
            b if b == bins => hi,
            b => (llo + (lhi - llo) * b as f64 / bins as f64).exp(),
        })
        .collect();
    let mut counts = vec![0; bins];
    for &v in values {
        if v.is_nan() {
            continue;
        }
        let b = if v <= lo {
            0
        } else {
            (((v.ln() - llo) / (lhi - llo) * bins as f64) as usize).min(bins - 1)
        };
        counts[b] += 1;
    }
    Histogram {
        index: index.to_string(),
        edges,
        counts,
    }
}

impl Histogram {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bin_lo,bin_hi,count")?;
        for (b, c) in self.counts.iter().enumerate() {
            writeln!(w, "{},{},{}", self.edges[b], self.edges[b + 1], c)?;
        }
        Ok(())
    }
}

pub struct Experiment2Report {
    pub config: ExperimentConfig,
    pub rounds: Vec<RoundResult>,
    pub histograms: Vec<Histogram>,
    pub resampled: usize,
}

fn run_round(config: &ExperimentConfig, round: usize) -> Result<RoundResult> {
    let instance_seed = sub_seed(config.master_seed, "instance", round as u64);
    let (problem, _) = demand_response_instance(instance_seed)?;
    let mut resamples = 0;
    let (model, pool_seed) = loop {
        let seed = sub_seed(sub_seed(config.master_seed, "pool", round as u64), "resample", resamples as u64);
        match config.pool_model(seed) {
            Ok(m) if validate_model(&m).pass => break (m, seed),
            Ok(_) | Err(Error::GenerationFailure { .. }) if resamples < MAX_ATTEMPTS => resamples += 1,
            Ok(_) => {
                return Err(Error::GenerationFailure {
                    attempts: MAX_ATTEMPTS,
                    reason: "no graph pool passed validation".into(),
                })
            }
            Err(e) => return Err(e),
        }
    };
    let oracle = solve_dual(&problem, DUAL_TOL, DUAL_MAX_ITER)?;
    let sim = Simulation::new(problem.clone(), model, config.noise, config.schedule)?
        .with_cadence(config.cadence)?
        .with_reference(oracle.x_star.clone())?;
    let seed = path_seed(config.master_seed, round as u64);
    let path = sim.run_path(config.iterations, seed)?;
    Ok(RoundResult {
        round,
        instance_seed,
        pool_seed,
        path_seed: seed,
        resamples,
        optimal_value: problem.objective_value(&oracle.x_star),
        first: path.trace.records.first().cloned().unwrap_or_else(|| path.trace.initial.clone()),
        last: path.trace.last().clone(),
        initial: path.trace.initial,
    })
}

/// One fresh instance, graph pool and sample path per round; final metrics binned into
/// log-spaced histograms.
pub fn experiment2(config: &ExperimentConfig) -> Result<Experiment2Report> {
    config.validate()?;
    if config.rounds == 0 {
        return Err(invalid("rounds must be >= 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    let rounds = pool.install(|| {
        (0..config.rounds)
            .into_par_iter()
            .map(|r| run_round(config, r))
            .collect::<Result<Vec<_>>>()
    })?;
    let col = |f: &dyn Fn(&RoundResult) -> f64| -> Vec<f64> { rounds.iter().map(f).collect() };
    let histograms = vec![
        log_histogram("dist", &col(&|r| r.last.dist.unwrap_or(f64::NAN)), HISTOGRAM_BINS),
        log_histogram("obj_gap", &col(&|r| r.objective_gap()), HISTOGRAM_BINS),
        log_histogram("consensus", &col(&|r| r.last.consensus), HISTOGRAM_BINS),
        log_histogram("balance", &col(&|r| r.last.balance), HISTOGRAM_BINS),
    ];
    Ok(Experiment2Report {
        resampled: rounds.iter().map(|r| r.resamples).sum(),
        config: config.clone(),
        rounds,
        histograms,
    })
}

impl Experiment2Report {
    pub fn summary(&self) -> MonteCarloSummary {
        let lasts: Vec<TraceRecord> = self.rounds.iter().map(|r| r.last.clone()).collect();
        summarize(self.rounds.len(), 0, &lasts)
    }

    /// `experiment.json`, `rounds.csv`, `hist_<index>.csv`, `summary.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("experiment.json"), &self.config)?;
        write_json(
            &dir.join("summary.json"),
            &serde_json::json!({
                "rounds": self.rounds.len(),
                "resampled_pools": self.resampled,
                "final": self.summary().final_metrics,
            }),
        )?;
        let mut w = BufWriter::new(File::create(dir.join("rounds.csv"))?);
        writeln!(
            w,
            "round,instance_seed,pool_seed,path_seed,resamples,dist0,dist,obj_gap,consensus0,consensus,balance0,balance"
        )?;
        for r in &self.rounds {
            let consensus0 = if r.initial.consensus > 0.0 { r.initial.consensus } else { r.first.consensus };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.round,
                r.instance_seed,
                r.pool_seed,
                r.path_seed,
                r.resamples,
                r.initial.dist.unwrap_or(f64::NAN),
                r.last.dist.unwrap_or(f64::NAN),
                r.objective_gap(),
                consensus0,
                r.last.consensus,
                r.initial.balance,
                r.last.balance
            )?;
        }
        w.flush()?;
        for h in &self.histograms {
            h.write_csv(BufWriter::new(File::create(dir.join(format!("hist_{}.csv", h.index)))?))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_reproduces_quantities_row_by_row() {
        let r = constraint_template();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = Vector::from_fn(3, |_, _| rng.gen_range(-5.0..5.0));
            let q = template_quantities(&p);
            let rp = &r * &p;
            assert_eq!(q[0], p[0] + p[1] + p[2]);
            assert_eq!(q[1], p[0] - p[1]);
            assert_eq!(q[2], p[1] - p[2]);
            for t in 0..6 {
                assert_eq!(rp[2 * t], -q[t]);
                assert_eq!(rp[2 * t + 1], q[t]);
            }
        }
    }

    #[test]
    fn instance_shape_and_certification() {
        let (p, spec) = demand_response_instance(11).unwrap();
        assert_eq!((p.n(), p.m()), (10, 3));
        for a in p.agents() {
            let (r, l) = a.set.constraint_rows();
            assert_eq!((r.nrows(), r.ncols(), l.len()), (12, 3, 12));
            assert!(a.set.interior_slack() > 1e-6);
        }
        let nominal = crate::io::matrix_from_rows(&spec.nominal).unwrap();
        assert!(p.max_violation(&nominal) < 0.0);
        let (q, _) = demand_response_instance(11).unwrap();
        assert_eq!(ProblemDoc::from_problem(&p).unwrap().agents[3].c, ProblemDoc::from_problem(&q).unwrap().agents[3].c);
    }

    #[test]
    fn histogram_bins_cover_values() {
        let h = log_histogram("x", &[1e-3, 1e-2, 1e-1, 1.0], 20);
        assert_eq!(h.counts.iter().sum::<usize>(), 4);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[19], 1);
        let one = log_histogram("x", &[0.5], 20);
        assert_eq!(one.counts.iter().sum::<usize>(), 1);
    }
}
