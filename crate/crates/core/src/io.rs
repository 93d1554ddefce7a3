//! JSON documents for problem instances and graph models, plus small file helpers.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{GraphKind, GraphModel, GraphSample};
use crate::problem::{AgentSpec, LocalSet, Matrix, ObjectiveKind, ObjectiveSpec, ProblemSpec, Vector};

/// Prefixes an error with the offending field; assumption violations keep their variant.
fn at(field: String, e: Error) -> Error {
    match e {
        Error::Assumption { index, name, detail } => Error::Assumption {
            index,
            name,
            detail: format!("{field}: {detail}"),
        },
        e => Error::Config(format!("{field}: {e}")),
    }
}

pub fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if rows.iter().any(|x| x.len() != c) {
        return Err(Error::Config("ragged matrix rows".into()));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// A matrix given either as nested rows or as a flat row-major array.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixDoc {
    Rows(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

impl MatrixDoc {
    pub fn from_matrix(m: &Matrix) -> Self {
        MatrixDoc::Rows(rows(m))
    }

    /// Flat arrays need the column count; it is inferred for square matrices.
    pub fn to_matrix(&self, cols: Option<usize>, what: &str) -> Result<Matrix> {
        match self {
            MatrixDoc::Rows(r) => matrix_from_rows(r).map_err(|_| Error::Config(format!("{what}: ragged rows"))),
            MatrixDoc::Flat(v) => {
                let c = match cols {
                    Some(c) => c,
                    None => {
                        let s = (v.len() as f64).sqrt().round() as usize;
                        if s * s != v.len() {
                            return Err(Error::Config(format!("{what}: flat array of length {} is not square", v.len())));
                        }
                        s
                    }
                };
                if c == 0 || v.len() % c != 0 {
                    return Err(Error::Config(format!("{what}: flat array length {} not a multiple of {c}", v.len())));
                }
                Ok(Matrix::from_row_slice(v.len() / c, c, v))
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetDoc {
    Unconstrained,
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Polyhedron {
        #[serde(rename = "R")]
        r: MatrixDoc,
        l: Vec<f64>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentDoc {
    #[serde(rename = "Q")]
    pub q: MatrixDoc,
    pub c: Vec<f64>,
    pub set: SetDoc,
    pub d: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDoc {
    pub n: usize,
    pub m: usize,
    pub agents: Vec<AgentDoc>,
}

impl ProblemDoc {
    /// Fails for custom objectives, which have no serialized form.
    pub fn from_problem(p: &ProblemSpec) -> Result<Self> {
        let agents = p
            .agents()
            .iter()
            .map(|a| {
                let ObjectiveKind::Quadratic { q, c } = a.objective.kind() else {
                    return Err(Error::Config("custom objectives cannot be serialized".into()));
                };
                let set = match &a.set {
                    LocalSet::Unconstrained { .. } => SetDoc::Unconstrained,
                    LocalSet::Box { lo, hi } => SetDoc::Box {
                        lo: lo.iter().cloned().collect(),
                        hi: hi.iter().cloned().collect(),
                    },
                    LocalSet::Polyhedron(ph) => SetDoc::Polyhedron {
                        r: MatrixDoc::from_matrix(ph.r()),
                        l: ph.l().iter().cloned().collect(),
                    },
                };
                Ok(AgentDoc {
                    q: MatrixDoc::from_matrix(q),
                    c: c.iter().cloned().collect(),
                    set,
                    d: a.resource.iter().cloned().collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n: p.n(),
            m: p.m(),
            agents,
        })
    }

    pub fn to_problem(&self) -> Result<ProblemSpec> {
        if self.agents.len() != self.n {
            return Err(Error::Config(format!(
                "problem.n = {} but {} agents listed",
                self.n,
                self.agents.len()
            )));
        }
        let m = self.m;
        let agents = self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let field = |f: &str| format!("problem.agents[{i}].{f}");
                let vec = |v: &[f64], f: &str| -> Result<Vector> {
                    if v.len() != m {
                        return Err(Error::Config(format!("{}: expected {m} entries, got {}", field(f), v.len())));
                    }
                    Ok(Vector::from_row_slice(v))
                };
                let q = a.q.to_matrix(Some(m), &field("Q"))?;
                if q.shape() != (m, m) {
                    return Err(Error::Config(format!("{}: expected {m}x{m}", field("Q"))));
                }
                let objective = ObjectiveSpec::quadratic(q, vec(&a.c, "c")?)
                    .map_err(|e| at(field("Q"), e))?;
                let set = match &a.set {
                    SetDoc::Unconstrained => LocalSet::unconstrained(m),
                    SetDoc::Box { lo, hi } => LocalSet::boxed(vec(lo, "set.lo")?, vec(hi, "set.hi")?)
                        .map_err(|e| at(field("set"), e))?,
                    SetDoc::Polyhedron { r, l } => {
                        let r = r.to_matrix(Some(m), &field("set.R"))?;
                        if r.ncols() != m || r.nrows() != l.len() {
                            return Err(Error::Config(format!("{}: R must be {}x{m}", field("set"), l.len())));
                        }
                        LocalSet::polyhedron(r, Vector::from_row_slice(l))
                            .map_err(|e| at(field("set"), e))?
                    }
                };
                AgentSpec::new(objective, set, vec(&a.d, "d")?)
            })
            .collect::<Result<Vec<_>>>()?;
        ProblemSpec::new(agents)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphDocKind {
    FixedPool,
    ErdosRenyiPool,
    Gossip,
    Broadcast,
}

/// `{n, kind, graphs, p_lo, p_hi, pool_size}`. An Erdős–Rényi pool without `graphs`
/// is generated from `seed`; gossip and broadcast take their support from `graphs[0]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDoc {
    pub n: usize,
    pub kind: GraphDocKind,
    #[serde(default)]
    pub graphs: Vec<MatrixDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl GraphDoc {
    pub fn from_model(model: &GraphModel) -> Self {
        let adj = |gs: &[GraphSample]| gs.iter().map(|g| MatrixDoc::from_matrix(g.adjacency())).collect();
        let mut doc = GraphDoc {
            n: model.n(),
            kind: GraphDocKind::FixedPool,
            graphs: Vec::new(),
            p_lo: None,
            p_hi: None,
            pool_size: None,
            seed: None,
        };
        match model.kind() {
            GraphKind::FixedPool { graphs } => doc.graphs = adj(graphs),
            GraphKind::ErdosRenyiPool {
                pool_size,
                p_lo,
                p_hi,
                graphs,
            } => {
                doc.kind = GraphDocKind::ErdosRenyiPool;
                doc.graphs = adj(graphs);
                doc.p_lo = Some(*p_lo);
                doc.p_hi = Some(*p_hi);
                doc.pool_size = Some(*pool_size);
            }
            GraphKind::Gossip { support } => {
                doc.kind = GraphDocKind::Gossip;
                doc.graphs = adj(std::slice::from_ref(support));
            }
            GraphKind::Broadcast { base } => {
                doc.kind = GraphDocKind::Broadcast;
                doc.graphs = adj(std::slice::from_ref(base));
            }
        }
        doc
    }

    pub fn to_model(&self) -> Result<GraphModel> {
        let graphs = self
            .graphs
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let a = g.to_matrix(Some(self.n), &format!("graph.graphs[{i}]"))?;
                if a.shape() != (self.n, self.n) {
                    return Err(Error::Config(format!("graph.graphs[{i}]: expected {0}x{0}", self.n)));
                }
                GraphSample::from_adjacency(a).map_err(|e| Error::Config(format!("graph.graphs[{i}]: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let first = || {
            graphs
                .first()
                .cloned()
                .ok_or_else(|| Error::Config("graph.graphs: support graph required".into()))
        };
        match self.kind {
            GraphDocKind::FixedPool => GraphModel::fixed_pool(graphs),
            GraphDocKind::ErdosRenyiPool => {
                let p_lo = self.p_lo.unwrap_or(0.05);
                let p_hi = self.p_hi.unwrap_or(0.1);
                if graphs.is_empty() {
                    GraphModel::erdos_renyi_pool(
                        self.n,
                        self.pool_size.unwrap_or(30),
                        p_lo,
                        p_hi,
                        self.seed.unwrap_or(0),
                    )
                } else {
                    GraphModel::erdos_renyi_from_graphs(p_lo, p_hi, graphs)
                }
            }
            GraphDocKind::Gossip => GraphModel::gossip(first()?),
            GraphDocKind::Broadcast => GraphModel::broadcast(first()?),
        }
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Output directory that becomes visible at `target` only once [`AtomicDir::commit`] runs.
pub struct AtomicDir {
    staging: PathBuf,
    target: PathBuf,
    done: bool,
}

impl AtomicDir {
    pub fn create(target: &Path) -> Result<Self> {
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent)?;
        let name = target
            .file_name()
            .ok_or_else(|| Error::Config(format!("bad output path {}", target.display())))?
            .to_string_lossy()
            .into_owned();
        let staging = parent.join(format!(".{name}.tmp-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir(&staging)?;
        Ok(Self {
            staging,
            target: target.to_path_buf(),
            done: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.staging
    }

    /// Replaces any existing directory at the target.
    pub fn commit(mut self) -> Result<PathBuf> {
        if self.target.exists() {
            fs::remove_dir_all(&self.target)?;
        }
        fs::rename(&self.staging, &self.target)?;
        self.done = true;
        Ok(self.target.clone())
    }
}

impl Drop for AtomicDir {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{random_instance, SetKind};

    #[test]
    fn problem_round_trip() {
        for kind in [SetKind::Unconstrained, SetKind::Box, SetKind::Polyhedron] {
            let p = random_instance(3, 4, 2, kind).unwrap();
            let doc = ProblemDoc::from_problem(&p).unwrap();
            let text = serde_json::to_string(&doc).unwrap();
            let back: ProblemDoc = serde_json::from_str(&text).unwrap();
            let q = back.to_problem().unwrap();
            let x = p.resources();
            assert_eq!(p.objective_value(&x), q.objective_value(&x));
            assert_eq!(p.max_violation(&x), q.max_violation(&x));
        }
    }

    #[test]
    fn flat_and_nested_matrices_agree() {
        let a: MatrixDoc = serde_json::from_str("[1, 2, 3, 4]").unwrap();
        let b: MatrixDoc = serde_json::from_str("[[1, 2], [3, 4]]").unwrap();
        assert_eq!(a.to_matrix(None, "Q").unwrap(), b.to_matrix(None, "Q").unwrap());
        let c: MatrixDoc = serde_json::from_str("[1, 2, 3]").unwrap();
        assert!(c.to_matrix(None, "Q").is_err());
    }

    #[test]
    fn bad_fields_are_named() {
        let text = r#"{"n":2,"m":1,"agents":[
            {"Q":[[1]],"c":[0],"set":{"kind":"unconstrained"},"d":[1]},
            {"Q":[[-1]],"c":[0],"set":{"kind":"unconstrained"},"d":[0]}]}"#;
        let doc: ProblemDoc = serde_json::from_str(text).unwrap();
        let err = doc.to_problem().unwrap_err().to_string();
        assert!(err.contains("agents[1].Q") && err.contains("assumption 1"), "{err}");
    }

    #[test]
    fn graph_round_trip() {
        let model = GraphModel::erdos_renyi_pool(6, 5, 0.3, 0.5, 1).unwrap();
        let doc = GraphDoc::from_model(&model);
        let back: GraphDoc = serde_json::from_str(&serde_json::to_string(&doc).unwrap()).unwrap();
        assert_eq!(back.to_model().unwrap(), model);
    }

    #[test]
    fn atomic_dir_appears_on_commit() {
        let tmp = tempfile::tempdir().unwrap();
        let target = tmp.path().join("out");
        let dir = AtomicDir::create(&target).unwrap();
        fs::write(dir.path().join("a.txt"), "x").unwrap();
        assert!(!target.exists());
        dir.commit().unwrap();
        assert!(target.join("a.txt").exists());
    }
}
