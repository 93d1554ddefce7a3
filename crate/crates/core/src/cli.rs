//! Command-line front end: `validate`, `solve`, `run`, `mc`, `ode`, `report`.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{load_config, Config, Resolved};
use crate::error::{Error, Result};
use crate::experiments::{experiment2, log_histogram, run_experiment1, Experiment1Setup, InstanceDoc, HISTOGRAM_BINS};
use crate::io::{read_json, write_json, AtomicDir, GraphDoc, ProblemDoc};
use crate::network::{mean_laplacian, validate_model};
use crate::ode::{equilibrium_construct, equilibrium_residual, flow, lyapunov_violation};
use crate::oracle::{kkt_check, solve_dual, OracleSolution, DUAL_MAX_ITER};
use crate::rng::path_seed;
use crate::sa::run::summarize;
use crate::sa::state::StateDoc;
use crate::sa::{NetworkState, Simulation, Trace, TraceRecord, TRACE_HEADER};

/// `println!` that ignores a closed stdout (e.g. piped into `head`).
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "rasa", version, about = "Distributed resource allocation over random networks by stochastic approximation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// JSON configuration file (defaults apply when omitted)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    cadence: Option<usize>,
    /// Override a config field, e.g. `--set schedule.beta=0.7`
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the standing assumptions for a configuration
    Validate(Common),
    /// Solve the instance centrally and certify the KKT conditions
    Solve(Common),
    /// Run one sample path
    Run(Common),
    /// Monte Carlo campaign; with `--rounds`, fresh instance and graph pool per round
    Mc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Integrate the mean ODE with projected Euler steps
    Ode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Regenerate summaries of an output directory from its stored traces
    Report {
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Provenance written to every output directory.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub overrides: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
}

fn overrides(common: &Common, extra: &[(&str, Option<String>)]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects PATH=VALUE, got `{s}`")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    let flags = [
        ("run.seed", common.seed.map(|v| v.to_string())),
        ("run.paths", common.paths.map(|v| v.to_string())),
        ("run.iterations", common.iters.map(|v| v.to_string())),
        ("run.threads", common.threads.map(|v| v.to_string())),
        ("run.cadence", common.cadence.map(|v| v.to_string())),
    ];
    for (k, v) in flags.iter().cloned().chain(extra.iter().map(|(k, v)| (*k, v.clone()))) {
        if let Some(v) = v {
            out.push((k.to_string(), v));
        }
    }
    Ok(out)
}

struct Context {
    subcommand: &'static str,
    common: Common,
    overrides: Vec<(String, String)>,
    config: Config,
    echo: Value,
}

impl Context {
    fn new(subcommand: &'static str, common: Common, extra: &[(&str, Option<String>)]) -> Result<Self> {
        let overrides = overrides(&common, extra)?;
        let (config, echo) = load_config(common.config.as_deref(), &overrides)?;
        Ok(Self {
            subcommand,
            common,
            overrides,
            config,
            echo,
        })
    }

    fn out_dir(&self) -> PathBuf {
        self.common
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("rasa-{}", self.subcommand)))
    }

    /// Stages an output directory with `manifest.json` and `config.json`.
    fn stage(&self, experiment: Option<&str>) -> Result<AtomicDir> {
        let out = self.out_dir();
        let dir = AtomicDir::create(&out)?;
        write_json(
            &dir.path().join("manifest.json"),
            &RunManifest {
                subcommand: self.subcommand.to_string(),
                version: VERSION.to_string(),
                config: self.common.config.clone(),
                out,
                seed: self.config.run.seed,
                overrides: self.overrides.clone(),
                experiment: experiment.map(str::to_string),
            },
        )?;
        write_json(&dir.path().join("config.json"), &self.echo)?;
        Ok(dir)
    }
}

fn write_instance(dir: &Path, resolved: &Resolved) -> Result<()> {
    write_json(
        &dir.join("instance.json"),
        &InstanceDoc {
            problem: ProblemDoc::from_problem(&resolved.problem)?,
            demand_response: resolved.demand_response.clone(),
        },
    )?;
    write_json(&dir.join("graph.json"), &GraphDoc::from_model(&resolved.model))
}

fn oracle(cfg: &Config, resolved: &Resolved) -> Result<OracleSolution> {
    solve_dual(&resolved.problem, cfg.run.tol, DUAL_MAX_ITER)
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn cmd_validate(ctx: Context) -> Result<i32> {
    let mut checks = Vec::new();
    let mut record = |name: &'static str, r: Result<String>| -> Result<bool> {
        match r {
            Ok(detail) => {
                checks.push(Check { name, pass: true, detail });
                Ok(true)
            }
            Err(e @ (Error::Assumption { .. } | Error::Infeasible(_) | Error::ConvergenceFailure { .. })) => {
                checks.push(Check {
                    name,
                    pass: false,
                    detail: e.to_string(),
                });
                Ok(false)
            }
            Err(e) => Err(e),
        }
    };
    let problem = match ctx.config.resolve_problem() {
        Ok((p, _)) => {
            let slack = p.agents().iter().map(|a| a.set.interior_slack()).fold(f64::INFINITY, f64::min);
            record("assumption 1 (strict convexity)", Ok(format!("{} quadratic objectives are strictly convex", p.n())))?;
            record("assumption 2 (nonempty interior)", Ok(format!("smallest certified interior slack {slack:.3e}")))?;
            Some(p)
        }
        Err(e @ Error::Assumption { index: 1, .. }) => {
            record("assumption 1 (strict convexity)", Err(e))?;
            None
        }
        Err(e @ Error::Assumption { index: 2, .. }) => {
            record("assumption 2 (nonempty interior)", Err(e))?;
            None
        }
        Err(e) => return Err(e),
    };
    let n = problem
        .as_ref()
        .map(|p| p.n())
        .or_else(|| ctx.config.problem.as_ref().map(|p| p.n))
        .or_else(|| ctx.config.graph.as_ref().map(|g| g.n));
    if let Some(n) = n {
        let model = ctx.config.resolve_graph(n)?;
        let report = validate_model(&model);
        let detail = format!("s2 = {:.3e}, symmetry defect = {:.3e}", report.s2, report.symmetry_defect);
        let r = if report.pass {
            Ok(detail)
        } else {
            Err(Error::Assumption {
                index: 3,
                name: "connectivity in mean",
                detail,
            })
        };
        record("assumption 3 (connectivity in mean)", r)?;
    }
    if let Some(p) = &problem {
        let r = solve_dual(p, ctx.config.run.tol, DUAL_MAX_ITER).and_then(|s| {
            let k = kkt_check(p, &s.x_star, &s.lambda_star, 1e-6)?;
            if k.pass {
                Ok(format!("KKT residuals: stationarity {:.2e}, balance {:.2e}", k.stationarity, k.balance))
            } else {
                Err(Error::Infeasible(format!(
                    "no certified solution: stationarity {:.2e}, balance {:.2e}, feasibility {:.2e}",
                    k.stationarity, k.balance, k.feasibility
                )))
            }
        });
        record("coupled feasibility", r)?;
    }
    let pass = checks.iter().all(|c| c.pass);
    for c in &checks {
        out!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let report = json!({ "pass": pass, "checks": checks });
    out!("{}", serde_json::to_string(&report)?);
    if ctx.common.out.is_some() {
        let dir = ctx.stage(None)?;
        write_json(&dir.path().join("validation.json"), &report)?;
        dir.commit()?;
    }
    Ok(if pass { 0 } else { 1 })
}

fn cmd_solve(ctx: Context) -> Result<i32> {
    let resolved = ctx.config.resolve()?;
    let sol = oracle(&ctx.config, &resolved)?;
    let kkt = kkt_check(&resolved.problem, &sol.x_star, &sol.lambda_star, 1e-6)?;
    let dir = ctx.stage(None)?;
    write_instance(dir.path(), &resolved)?;
    write_json(&dir.path().join("oracle.json"), &sol.to_doc())?;
    write_json(&dir.path().join("kkt.json"), &kkt)?;
    let out = dir.commit()?;
    out!(
        "objective {:.12e}, dual residual {:.2e}, kkt {} -> {}",
        resolved.problem.objective_value(&sol.x_star),
        sol.dual_residual,
        if kkt.pass { "pass" } else { "FAIL" },
        out.display()
    );
    Ok(if kkt.pass { 0 } else { 1 })
}

fn initial_state(cfg: &Config) -> Result<Option<NetworkState>> {
    cfg.run.initial.as_ref().map(StateDoc::to_state).transpose()
}

fn simulation(cfg: &Config, resolved: &Resolved, sol: &OracleSolution) -> Result<Simulation> {
    let track = cfg
        .run
        .tracked_agents
        .iter()
        .map(|&i| (i, cfg.run.tracked_component))
        .filter(|&(i, c)| i < resolved.problem.n() && c < resolved.problem.m())
        .collect();
    let mut sim = Simulation::new(resolved.problem.clone(), resolved.model.clone(), cfg.noise, cfg.schedule)?
        .with_cadence(cfg.run.cadence)?
        .with_reference(sol.x_star.clone())?
        .with_tracking(track)?;
    if let Some(s) = initial_state(cfg)? {
        sim = sim.with_initial(s)?;
    }
    Ok(sim)
}

fn cmd_run(ctx: Context) -> Result<i32> {
    let resolved = ctx.config.resolve()?;
    let sol = oracle(&ctx.config, &resolved)?;
    let sim = simulation(&ctx.config, &resolved, &sol)?;
    // same stream as path 0 of a Monte Carlo campaign with this seed
    let path = sim.run_path(ctx.config.run.iterations, path_seed(ctx.config.run.seed, 0))?;
    let dir = ctx.stage(None)?;
    write_instance(dir.path(), &resolved)?;
    write_json(&dir.path().join("oracle.json"), &sol.to_doc())?;
    path.trace.write_csv(BufWriter::new(File::create(dir.path().join("trace.csv"))?))?;
    path.trace
        .write_tracked_csv(BufWriter::new(File::create(dir.path().join("allocations.csv"))?), sim.track())?;
    write_json(&dir.path().join("final_state.json"), &StateDoc::from(&path.final_state))?;
    write_json(&dir.path().join("summary.json"), &summarize(1, 0, &[path.trace.last().clone()]))?;
    let out = dir.commit()?;
    let last = path.trace.last();
    out!(
        "k = {}: dist {:.4e}, consensus {:.4e}, balance {:.4e} -> {}",
        last.k,
        last.dist.unwrap_or(f64::NAN),
        last.consensus,
        last.balance,
        out.display()
    );
    Ok(0)
}

fn cmd_mc(ctx: Context) -> Result<i32> {
    let exp = ctx.config.experiment();
    if ctx.config.run.rounds.is_some() {
        if ctx.config.problem.is_some() || ctx.config.instance_seed.is_some() {
            return Err(Error::Config(
                "the per-round experiment draws a fresh instance every round; drop `problem`/`instance_seed`".into(),
            ));
        }
        let report = experiment2(&exp)?;
        let dir = ctx.stage(Some("rounds"))?;
        report.write(dir.path())?;
        let out = dir.commit()?;
        let ok = report.rounds.iter().filter(|r| r.relative_dist() < 0.2).count();
        out!(
            "{} rounds, {} with relative distance < 0.2, {} pools resampled -> {}",
            report.rounds.len(),
            ok,
            report.resampled,
            out.display()
        );
        return Ok(0);
    }
    let resolved = ctx.config.resolve()?;
    let setup = Experiment1Setup {
        problem: resolved.problem,
        spec: resolved.demand_response,
        model: resolved.model,
        initial: initial_state(&ctx.config)?,
    };
    let report = run_experiment1(&exp, setup)?;
    let dir = ctx.stage(Some("paths"))?;
    report.write(dir.path())?;
    let out = dir.commit()?;
    let s = report.summary();
    out!(
        "{} paths ({} diverged): final mean dist {:.4e} -> {}",
        s.paths,
        s.diverged,
        s.final_metrics.dist.as_ref().map_or(f64::NAN, |d| d.mean),
        out.display()
    );
    Ok(0)
}

fn cmd_ode(ctx: Context) -> Result<i32> {
    let resolved = ctx.config.resolve()?;
    let sol = oracle(&ctx.config, &resolved)?;
    let lbar = mean_laplacian(&resolved.model).matrix;
    let eq = equilibrium_construct(&resolved.problem, &lbar, &sol)?;
    let s0 = match initial_state(&ctx.config)? {
        Some(s) => s,
        None => NetworkState::initial(&resolved.problem)?,
    };
    let (h, steps, cadence) = (ctx.config.run.h, ctx.config.run.steps, ctx.config.run.cadence);
    let f = flow(&s0, &resolved.problem, &lbar, h, steps, Some(&eq), cadence)?;
    let violation = lyapunov_violation(&f.lyapunov, 1e-10);
    let dir = ctx.stage(None)?;
    write_instance(dir.path(), &resolved)?;
    write_json(&dir.path().join("oracle.json"), &sol.to_doc())?;
    write_json(&dir.path().join("equilibrium.json"), &StateDoc::from(&eq.state))?;
    let mut w = BufWriter::new(File::create(dir.path().join("flow.csv"))?);
    writeln!(w, "{TRACE_HEADER},lyapunov")?;
    let csv = f.trace.to_csv_string();
    for (line, rec) in csv.lines().skip(1).zip(f.trace.all()) {
        writeln!(w, "{line},{}", f.lyapunov[rec.k - s0.k])?;
    }
    w.flush()?;
    drop(w);
    let summary = json!({
        "h": h,
        "steps": steps,
        "equilibrium_residual": eq.residual,
        "final_residual": equilibrium_residual(&f.final_state, &resolved.problem, &lbar)?,
        "final_dist": (&f.final_state.x - &sol.x_star).norm(),
        "lyapunov_initial": f.lyapunov.first(),
        "lyapunov_final": f.lyapunov.last(),
        "lyapunov_monotone": violation.is_none(),
        "first_violation": violation,
    });
    write_json(&dir.path().join("summary.json"), &summary)?;
    let out = dir.commit()?;
    out!(
        "t = {}: dist {:.4e}, lyapunov {} -> {}",
        h * steps as f64,
        (&f.final_state.x - &sol.x_star).norm(),
        if violation.is_none() { "non-increasing" } else { "INCREASED" },
        out.display()
    );
    Ok(if violation.is_none() { 0 } else { 1 })
}

fn read_records(path: &Path) -> Result<Vec<TraceRecord>> {
    let f = BufReader::new(File::open(path)?);
    let mut lines = f.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    let cols: Vec<&str> = header.split(',').collect();
    let idx = |name: &str| cols.iter().position(|c| *c == name);
    let (Some(obj), Some(cons), Some(bal), Some(norm)) = (idx("obj"), idx("consensus"), idx("balance"), idx("state_norm")) else {
        return Err(Error::Config(format!("{}: missing metric columns", path.display())));
    };
    let dist = idx("dist");
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let num = |i: usize| -> Result<f64> {
            f.get(i)
                .ok_or_else(|| Error::Config(format!("{}: short row", path.display())))?
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        };
        out.push(TraceRecord {
            k: 0,
            alpha: 0.0,
            dist: match dist {
                Some(i) if !f.get(i).map_or(true, |s| s.is_empty()) => Some(num(i)?),
                _ => None,
            },
            obj: num(obj)?,
            consensus: num(cons)?,
            balance: num(bal)?,
            state_norm: num(norm)?,
            tracked: Vec::new(),
        });
    }
    Ok(out)
}

fn cmd_report(dir: PathBuf, out: Option<PathBuf>) -> Result<i32> {
    let manifest: RunManifest = read_json(&dir.join("manifest.json"))?;
    let target = out.unwrap_or_else(|| dir.clone());
    fs::create_dir_all(&target)?;
    match (manifest.subcommand.as_str(), manifest.experiment.as_deref()) {
        ("run", _) => {
            let trace = Trace::read_csv(BufReader::new(File::open(dir.join("trace.csv"))?), 1)?;
            write_json(&target.join("summary.json"), &summarize(1, 0, &[trace.last().clone()]))?;
        }
        ("mc", Some("paths")) => {
            let finals = read_records(&dir.join("final_metrics.csv"))?;
            let prev: Value = read_json(&dir.join("summary.json")).unwrap_or(Value::Null);
            let paths = prev.get("paths").and_then(Value::as_u64).map_or(finals.len(), |p| p as usize);
            write_json(&target.join("summary.json"), &summarize(paths, paths - finals.len(), &finals))?;
        }
        ("mc", Some("rounds")) => {
            let text = fs::read_to_string(dir.join("rounds.csv"))?;
            let mut lines = text.lines();
            let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
            let rows: Vec<Vec<f64>> = lines
                .filter(|l| !l.trim().is_empty())
                .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap_or(f64::NAN)).collect())
                .collect();
            for name in ["dist", "obj_gap", "consensus", "balance"] {
                let c = header
                    .iter()
                    .position(|h| *h == name)
                    .ok_or_else(|| Error::Config(format!("rounds.csv: missing column {name}")))?;
                let vals: Vec<f64> = rows.iter().map(|r| r[c]).collect();
                log_histogram(name, &vals, HISTOGRAM_BINS)
                    .write_csv(BufWriter::new(File::create(target.join(format!("hist_{name}.csv")))?))?;
            }
        }
        ("ode", _) => {
            let recs = read_records(&dir.join("flow.csv"))?;
            write_json(&target.join("flow_summary.json"), &summarize(1, 0, &recs[recs.len().saturating_sub(1)..]))?;
        }
        (other, _) => {
            return Err(Error::Config(format!("nothing to report for a `{other}` directory")));
        }
    }
    out!("report written to {}", target.display());
    Ok(0)
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Validate(c) => cmd_validate(Context::new("validate", c, &[])?),
        Command::Solve(c) => cmd_solve(Context::new("solve", c, &[])?),
        Command::Run(c) => cmd_run(Context::new("run", c, &[])?),
        Command::Mc { common, rounds } => {
            cmd_mc(Context::new("mc", common, &[("run.rounds", rounds.map(|r| r.to_string()))])?)
        }
        Command::Ode { common, h, steps } => cmd_ode(Context::new(
            "ode",
            common,
            &[("run.h", h.map(|v| v.to_string())), ("run.steps", steps.map(|v| v.to_string()))],
        )?),
        Command::Report { dir, out } => cmd_report(dir, out),
    }
}

/// Entry point; returns the process exit code (0 ok, 1 numerical failure, 2 configuration error).
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            let doc = json!({ "error": { "kind": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() } });
            eprintln!("{doc}");
            e.exit_code()
        }
    }
}
