//! Run configuration: one JSON document with sections `{problem | instance_seed, graph,
//! noise, schedule, run}`, with command-line overrides applied by dotted path.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::experiments::{demand_response_instance, DemandResponseSpec, ExperimentConfig, PoolConfig};
use crate::io::{GraphDoc, GraphDocKind, ProblemDoc};
use crate::network::GraphModel;
use crate::problem::ProblemSpec;
use crate::rng::sub_seed;
use crate::sa::state::StateDoc;
use crate::sa::{NoiseConfig, StepSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub paths: usize,
    /// Set for the per-round experiment (fresh instance and pool every round).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    pub iterations: usize,
    pub cadence: usize,
    pub threads: usize,
    /// Flow step and step count for `ode`.
    pub h: f64,
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<StateDoc>,
    pub tracked_agents: Vec<usize>,
    pub tracked_component: usize,
    /// Dual residual tolerance of the oracle.
    pub tol: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 1,
            paths: 200,
            rounds: None,
            iterations: 8000,
            cadence: 10,
            threads: 0,
            h: 1e-3,
            steps: 100_000,
            initial: None,
            tracked_agents: vec![0, 1, 2],
            tracked_component: 0,
            tol: 1e-8,
        }
    }
}

fn demand_response_noise() -> NoiseConfig {
    NoiseConfig::demand_response()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemDoc>,
    /// Seed of a generated demand-response instance (used when `problem` is absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphDoc>,
    #[serde(default = "demand_response_noise")]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub schedule: StepSchedule,
    #[serde(default)]
    pub run: RunSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            problem: None,
            instance_seed: None,
            graph: None,
            noise: NoiseConfig::demand_response(),
            schedule: StepSchedule::default(),
            run: RunSection::default(),
        }
    }
}

/// Parses `value` (JSON if possible, otherwise a string) into `root` at `path`.
pub fn set_path(root: &mut Value, path: &str, value: &str) -> Result<()> {
    let parsed = serde_json::from_str::<Value>(value).unwrap_or_else(|_| Value::String(value.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override path `{path}`")));
    }
    for (i, part) in parts.iter().enumerate() {
        if !cur.is_object() {
            if cur.is_null() {
                *cur = Value::Object(Default::default());
            } else {
                return Err(Error::Config(format!(
                    "override `{path}`: `{}` is not an object",
                    parts[..i].join(".")
                )));
            }
        }
        let obj = cur.as_object_mut().expect("object");
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!()
}

/// Parses a config document and applies `overrides` (`(dotted.path, value)` pairs) in order.
pub fn parse_config(text: &str, source: &str, overrides: &[(String, String)]) -> Result<(Config, Value)> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("{source}: {e}")))?;
    if !value.is_object() {
        return Err(Error::Config(format!("{source}: top level must be an object")));
    }
    for (path, v) in overrides {
        set_path(&mut value, path, v)?;
    }
    match serde_json::from_value::<Config>(value.clone()) {
        Ok(cfg) => Ok((cfg, value)),
        Err(e) => {
            // field errors carry line and column only when parsed from the original text
            let located = serde_json::from_str::<Config>(text).err();
            let msg = match located {
                Some(l) if overrides.is_empty() => l.to_string(),
                _ => e.to_string(),
            };
            Err(Error::Config(format!("{source}: {msg}")))
        }
    }
}

pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<(Config, Value)> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            parse_config(&text, &p.display().to_string(), overrides)
        }
        None => parse_config("{}", "<defaults>", overrides),
    }
}

/// The problem and graph law a configuration describes.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub problem: ProblemSpec,
    pub demand_response: Option<DemandResponseSpec>,
    pub model: GraphModel,
}

impl Config {
    pub fn resolve_problem(&self) -> Result<(ProblemSpec, Option<DemandResponseSpec>)> {
        match (&self.problem, self.instance_seed) {
            (Some(_), Some(_)) => Err(Error::Config("give either `problem` or `instance_seed`, not both".into())),
            (Some(doc), None) => Ok((doc.to_problem()?, None)),
            (None, seed) => {
                let seed = seed.unwrap_or_else(|| sub_seed(self.run.seed, "instance", 0));
                let (p, s) = demand_response_instance(seed)?;
                Ok((p, Some(s)))
            }
        }
    }

    /// Pool parameters from an Erdős–Rényi `graph` section, defaults otherwise.
    pub fn pool(&self) -> PoolConfig {
        let mut pool = PoolConfig::default();
        if let Some(g) = self.graph.as_ref().filter(|g| matches!(g.kind, GraphDocKind::ErdosRenyiPool)) {
            pool.pool_size = g.pool_size.unwrap_or(pool.pool_size);
            pool.p_lo = g.p_lo.unwrap_or(pool.p_lo);
            pool.p_hi = g.p_hi.unwrap_or(pool.p_hi);
        }
        pool
    }

    pub fn resolve_graph(&self, n: usize) -> Result<GraphModel> {
        let default_seed = sub_seed(self.run.seed, "pool", 0);
        match &self.graph {
            Some(doc) => {
                if doc.n != n {
                    return Err(Error::Config(format!("graph.n = {} but the problem has {n} agents", doc.n)));
                }
                let mut doc = doc.clone();
                if doc.seed.is_none() {
                    doc.seed = Some(default_seed);
                }
                doc.to_model()
            }
            None => {
                let pool = self.pool();
                GraphModel::erdos_renyi_pool(n, pool.pool_size, pool.p_lo, pool.p_hi, default_seed)
            }
        }
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let (problem, demand_response) = self.resolve_problem()?;
        let model = self.resolve_graph(problem.n())?;
        Ok(Resolved {
            problem,
            demand_response,
            model,
        })
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            master_seed: self.run.seed,
            paths: self.run.paths,
            rounds: self.run.rounds.unwrap_or(0),
            iterations: self.run.iterations,
            cadence: self.run.cadence,
            threads: self.run.threads,
            schedule: self.schedule,
            noise: self.noise,
            pool: self.pool(),
            tracked_agents: self.run.tracked_agents.clone(),
            tracked_component: self.run.tracked_component,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_the_demand_response_setting() {
        let (cfg, _) = parse_config("{}", "t", &[]).unwrap();
        let e = cfg.experiment();
        let d = ExperimentConfig::default();
        assert_eq!((e.paths, e.iterations, e.cadence), (d.paths, d.iterations, d.cadence));
        assert_eq!(e.noise, d.noise);
        assert_eq!(e.schedule, d.schedule);
        assert_eq!(e.pool, d.pool);
    }

    #[test]
    fn overrides_by_dotted_path() {
        let over = vec![
            ("run.seed".to_string(), "7".to_string()),
            ("schedule.beta".to_string(), "0.8".to_string()),
            ("noise.gradient".to_string(), r#"{"kind":"none"}"#.to_string()),
        ];
        let (cfg, _) = parse_config(r#"{"schedule":{"kind":"power","a":1,"beta":0.6}}"#, "t", &over).unwrap();
        assert_eq!(cfg.run.seed, 7);
        assert_eq!(cfg.schedule, StepSchedule::Power { a: 1.0, beta: 0.8 });
        assert_eq!(cfg.noise.gradient, crate::sa::GradientNoise::None);
    }

    #[test]
    fn parse_errors_name_location() {
        let err = parse_config("{\n  \"run\": {\"sed\": 1}\n}", "cfg.json", &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sed") && msg.contains("line 2"), "{msg}");
        assert_eq!(err.exit_code(), 2);
        assert!(parse_config("{\"run\": ", "cfg.json", &[]).is_err());
    }

    #[test]
    fn problem_and_seed_are_exclusive() {
        let p = crate::problem::random_instance(1, 2, 1, crate::problem::SetKind::Box).unwrap();
        let cfg = Config {
            problem: Some(ProblemDoc::from_problem(&p).unwrap()),
            instance_seed: Some(3),
            ..Config::default()
        };
        assert!(matches!(cfg.resolve(), Err(Error::Config(_))));
    }
}
