//! Random communication graphs: per-draw adjacency and Laplacian, mean Laplacian and
//! the connectivity-in-mean check.

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::problem::Matrix;

/// Minimum number of draws for Monte Carlo mean-Laplacian estimates.
pub const MIN_MONTE_CARLO_DRAWS: usize = 100_000;

const POOL_ATTEMPTS: usize = 100;

/// One realization of the communication graph. `adjacency[(i, j)] = 1` when agent `i`
/// receives from agent `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSample {
    adjacency: Matrix,
    laplacian: Matrix,
}

impl GraphSample {
    pub fn from_adjacency(adjacency: Matrix) -> Result<Self> {
        if !adjacency.is_square() || adjacency.nrows() == 0 {
            return Err(invalid("adjacency must be a nonempty square matrix"));
        }
        if adjacency.iter().any(|&a| a != 0.0 && a != 1.0) {
            return Err(invalid("adjacency entries must be 0 or 1"));
        }
        let laplacian = laplacian(&adjacency)?;
        Ok(Self {
            adjacency,
            laplacian,
        })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            adjacency: Matrix::zeros(n, n),
            laplacian: Matrix::zeros(n, n),
        }
    }

    pub fn complete(n: usize) -> Self {
        Self::from_adjacency(Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 }))
            .expect("complete graph is valid")
    }

    /// Undirected path `0 - 1 - ... - (n-1)`.
    pub fn path(n: usize) -> Self {
        Self::from_adjacency(Matrix::from_fn(n, n, |i, j| {
            if i.abs_diff(j) == 1 {
                1.0
            } else {
                0.0
            }
        }))
        .expect("path graph is valid")
    }

    /// Undirected cycle over `n >= 3` nodes.
    pub fn ring(n: usize) -> Self {
        Self::from_adjacency(Matrix::from_fn(n, n, |i, j| {
            let d = i.abs_diff(j);
            if d == 1 || (n > 2 && d == n - 1) {
                1.0
            } else {
                0.0
            }
        }))
        .expect("ring graph is valid")
    }

    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn laplacian(&self) -> &Matrix {
        &self.laplacian
    }

    pub fn is_symmetric(&self) -> bool {
        self.adjacency == self.adjacency.transpose()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().filter(|&&a| a != 0.0).count()
    }
}

/// `Deg − A` with `Deg = diag(row sums of A)`.
pub fn laplacian(adjacency: &Matrix) -> Result<Matrix> {
    if !adjacency.is_square() {
        return Err(invalid("adjacency must be square"));
    }
    let n = adjacency.nrows();
    if (0..n).any(|i| adjacency[(i, i)] != 0.0) {
        return Err(invalid("adjacency must have a zero diagonal"));
    }
    let mut l = -adjacency.clone();
    for i in 0..n {
        l[(i, i)] = adjacency.row(i).sum();
    }
    Ok(l)
}

#[derive(Clone, Debug, PartialEq)]
pub enum GraphKind {
    /// Uniform draw from a fixed list of graphs (possibly directed).
    FixedPool { graphs: Vec<GraphSample> },
    /// Pool of undirected G(n, p) graphs with `p` uniform in `[p_lo, p_hi]` per graph,
    /// realized once at construction; draws are uniform over the pool.
    ErdosRenyiPool {
        pool_size: usize,
        p_lo: f64,
        p_hi: f64,
        graphs: Vec<GraphSample>,
    },
    /// One undirected edge of the support graph, uniformly at random, per step.
    Gossip { support: GraphSample },
    /// One node wakes uniformly at random and its base-graph neighbours receive from it.
    Broadcast { base: GraphSample },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphModel {
    n: usize,
    kind: GraphKind,
    edges: Vec<(usize, usize)>,
}

impl GraphModel {
    pub fn fixed_pool(graphs: Vec<GraphSample>) -> Result<Self> {
        let n = pool_size_check(&graphs)?;
        Ok(Self {
            n,
            kind: GraphKind::FixedPool { graphs },
            edges: Vec::new(),
        })
    }

    pub fn single(graph: GraphSample) -> Self {
        Self::fixed_pool(vec![graph]).expect("single graph pool is valid")
    }

    /// Draws `pool_size` undirected G(n, p) graphs, resampling the pool until its union
    /// graph is connected.
    pub fn erdos_renyi_pool(n: usize, pool_size: usize, p_lo: f64, p_hi: f64, seed: u64) -> Result<Self> {
        if n < 2 || pool_size == 0 {
            return Err(invalid("erdos-renyi pool needs n >= 2 and pool_size >= 1"));
        }
        if !(0.0 <= p_lo && p_lo <= p_hi && p_hi <= 1.0) {
            return Err(invalid(format!("edge probability range [{p_lo}, {p_hi}] invalid")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..POOL_ATTEMPTS {
            let graphs: Vec<GraphSample> = (0..pool_size)
                .map(|_| {
                    let p = if p_hi > p_lo { rng.gen_range(p_lo..=p_hi) } else { p_lo };
                    erdos_renyi(&mut rng, n, p)
                })
                .collect();
            if union_connected(&graphs) {
                return Ok(Self {
                    n,
                    kind: GraphKind::ErdosRenyiPool {
                        pool_size,
                        p_lo,
                        p_hi,
                        graphs,
                    },
                    edges: Vec::new(),
                });
            }
        }
        Err(Error::GenerationFailure {
            attempts: POOL_ATTEMPTS,
            reason: "no graph pool with a connected union".into(),
        })
    }

    /// Rebuilds an already realized Erdős–Rényi pool (e.g. from a stored file).
    pub fn erdos_renyi_from_graphs(p_lo: f64, p_hi: f64, graphs: Vec<GraphSample>) -> Result<Self> {
        let n = pool_size_check(&graphs)?;
        if graphs.iter().any(|g| !g.is_symmetric()) {
            return Err(invalid("erdos-renyi pool graphs must be undirected"));
        }
        Ok(Self {
            n,
            kind: GraphKind::ErdosRenyiPool {
                pool_size: graphs.len(),
                p_lo,
                p_hi,
                graphs,
            },
            edges: Vec::new(),
        })
    }

    pub fn gossip(support: GraphSample) -> Result<Self> {
        if !support.is_symmetric() {
            return Err(invalid("gossip support graph must be undirected"));
        }
        let edges = undirected_edges(&support);
        if edges.is_empty() {
            return Err(invalid("gossip support graph has no edges"));
        }
        Ok(Self {
            n: support.n(),
            kind: GraphKind::Gossip { support },
            edges,
        })
    }

    pub fn broadcast(base: GraphSample) -> Result<Self> {
        if !base.is_symmetric() {
            return Err(invalid("broadcast base graph must be undirected"));
        }
        Ok(Self {
            n: base.n(),
            kind: GraphKind::Broadcast { base },
            edges: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> &GraphKind {
        &self.kind
    }

    /// The finite list of graphs this model draws from uniformly, if it is a pool.
    pub fn pool(&self) -> Option<&[GraphSample]> {
        match &self.kind {
            GraphKind::FixedPool { graphs } | GraphKind::ErdosRenyiPool { graphs, .. } => Some(graphs),
            _ => None,
        }
    }
}

fn pool_size_check(graphs: &[GraphSample]) -> Result<usize> {
    let Some(first) = graphs.first() else {
        return Err(invalid("graph pool is empty"));
    };
    let n = first.n();
    if graphs.iter().any(|g| g.n() != n) {
        return Err(invalid("graph pool mixes node counts"));
    }
    Ok(n)
}

fn erdos_renyi<R: Rng>(rng: &mut R, n: usize, p: f64) -> GraphSample {
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < p {
                a[(i, j)] = 1.0;
                a[(j, i)] = 1.0;
            }
        }
    }
    GraphSample::from_adjacency(a).expect("generated adjacency is valid")
}

fn undirected_edges(g: &GraphSample) -> Vec<(usize, usize)> {
    let n = g.n();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if g.adjacency[(i, j)] != 0.0 {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Connectivity of the union graph, ignoring edge direction.
pub fn union_connected(graphs: &[GraphSample]) -> bool {
    let Some(first) = graphs.first() else { return false };
    let n = first.n();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if !seen[j] && graphs.iter().any(|g| g.adjacency[(i, j)] != 0.0 || g.adjacency[(j, i)] != 0.0) {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// One i.i.d. draw from the model.
pub fn sample_graph<R: Rng + ?Sized>(model: &GraphModel, rng: &mut R) -> GraphSample {
    match &model.kind {
        GraphKind::FixedPool { graphs } | GraphKind::ErdosRenyiPool { graphs, .. } => {
            graphs[rng.gen_range(0..graphs.len())].clone()
        }
        GraphKind::Gossip { .. } => {
            let (i, j) = model.edges[rng.gen_range(0..model.edges.len())];
            let mut a = Matrix::zeros(model.n, model.n);
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
            GraphSample::from_adjacency(a).expect("gossip draw is valid")
        }
        GraphKind::Broadcast { base } => {
            let speaker = rng.gen_range(0..model.n);
            let mut a = Matrix::zeros(model.n, model.n);
            for receiver in 0..model.n {
                if base.adjacency[(receiver, speaker)] != 0.0 {
                    a[(receiver, speaker)] = 1.0;
                }
            }
            GraphSample::from_adjacency(a).expect("broadcast draw is valid")
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum MeanMethod {
    Exact,
    MonteCarlo { draws: usize },
}

/// Expected Laplacian of a graph model.
#[derive(Clone, Debug)]
pub struct MeanLaplacian {
    pub matrix: Matrix,
    /// Entrywise standard errors of a Monte Carlo estimate.
    pub standard_error: Option<Matrix>,
    pub method: MeanMethod,
}

impl MeanLaplacian {
    pub fn exact(matrix: Matrix) -> Self {
        Self {
            matrix,
            standard_error: None,
            method: MeanMethod::Exact,
        }
    }

    pub fn max_standard_error(&self) -> Option<f64> {
        self.standard_error.as_ref().map(|s| s.amax())
    }

    /// Weighted adjacency `−offdiag(L̄)` of the mean graph.
    pub fn mean_adjacency(&self) -> Matrix {
        let n = self.matrix.nrows();
        Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { -self.matrix[(i, j)] })
    }
}

/// Closed-form mean Laplacian. Pools average their members; gossip averages the
/// single-edge Laplacians of the support; broadcast gives `L_base / n`.
pub fn mean_laplacian(model: &GraphModel) -> MeanLaplacian {
    let n = model.n;
    match &model.kind {
        GraphKind::FixedPool { graphs } | GraphKind::ErdosRenyiPool { graphs, .. } => {
            let sum = graphs.iter().fold(Matrix::zeros(n, n), |acc, g| acc + &g.laplacian);
            MeanLaplacian::exact(sum / graphs.len() as f64)
        }
        GraphKind::Gossip { .. } => {
            let w = 1.0 / model.edges.len() as f64;
            let mut l = Matrix::zeros(n, n);
            for &(i, j) in &model.edges {
                l[(i, i)] += w;
                l[(j, j)] += w;
                l[(i, j)] -= w;
                l[(j, i)] -= w;
            }
            MeanLaplacian::exact(l)
        }
        GraphKind::Broadcast { base } => MeanLaplacian::exact(&base.laplacian / n as f64),
    }
}

/// Monte Carlo estimate of the mean Laplacian with entrywise standard errors.
pub fn mean_laplacian_monte_carlo<R: Rng + ?Sized>(model: &GraphModel, draws: usize, rng: &mut R) -> MeanLaplacian {
    let n = model.n;
    let mut sum = Matrix::zeros(n, n);
    let mut sum2 = Matrix::zeros(n, n);
    for _ in 0..draws {
        let g = sample_graph(model, rng);
        sum += &g.laplacian;
        sum2 += g.laplacian.component_mul(&g.laplacian);
    }
    let k = draws as f64;
    let mean = &sum / k;
    let se = Matrix::from_fn(n, n, |i, j| {
        let var = (sum2[(i, j)] / k - mean[(i, j)].powi(2)).max(0.0) * k / (k - 1.0).max(1.0);
        (var / k).sqrt()
    });
    MeanLaplacian {
        matrix: mean,
        standard_error: Some(se),
        method: MeanMethod::MonteCarlo { draws },
    }
}

/// Second-smallest eigenvalue of a symmetric matrix.
pub fn algebraic_connectivity(l: &Matrix) -> Result<f64> {
    if !l.is_square() || l.nrows() < 2 {
        return Err(invalid("algebraic connectivity needs a square matrix of size >= 2"));
    }
    let defect = symmetry_defect(l);
    if defect > 1e-9 {
        return Err(invalid(format!("matrix is not symmetric (defect {defect:.3e})")));
    }
    let sym = (l + l.transpose()) * 0.5;
    let mut eig: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().cloned().collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig[1])
}

pub fn symmetry_defect(l: &Matrix) -> f64 {
    (l - l.transpose()).amax()
}

/// Outcome of the connectivity-in-mean check.
#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub symmetry_defect: f64,
    pub s2: f64,
    pub standard_error: Option<f64>,
    pub method: MeanMethod,
    pub pass: bool,
}

/// Mean Laplacian must be symmetric with a positive second-smallest eigenvalue.
pub fn validate_mean(mean: &MeanLaplacian) -> ValidationReport {
    let defect = symmetry_defect(&mean.matrix);
    let sym = (&mean.matrix + mean.matrix.transpose()) * 0.5;
    let s2 = algebraic_connectivity(&sym).unwrap_or(f64::NAN);
    let se = mean.max_standard_error();
    let pass = match mean.method {
        MeanMethod::Exact => defect < 1e-8 && s2 > 1e-8,
        MeanMethod::MonteCarlo { .. } => {
            let se = se.unwrap_or(0.0);
            defect < 1e-8 + 6.0 * se && s2 > 3.0 * se
        }
    };
    ValidationReport {
        symmetry_defect: defect,
        s2,
        standard_error: se,
        method: mean.method,
        pass,
    }
}

pub fn validate_model(model: &GraphModel) -> ValidationReport {
    validate_mean(&mean_laplacian(model))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k2() -> GraphSample {
        GraphSample::complete(2)
    }

    #[test]
    fn laplacian_examples() {
        assert_eq!(k2().laplacian(), &Matrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        assert_eq!(GraphSample::empty(3).laplacian(), &Matrix::zeros(3, 3));
        let p3 = GraphSample::path(3);
        assert_eq!(
            p3.laplacian(),
            &Matrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0])
        );
        let mut bad = Matrix::zeros(2, 2);
        bad[(0, 0)] = 1.0;
        assert!(laplacian(&bad).is_err());
    }

    #[test]
    fn connectivity_examples() {
        assert!((algebraic_connectivity(k2().laplacian()).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(algebraic_connectivity(&Matrix::zeros(3, 3)).unwrap(), 0.0);
        // path on 3 nodes has spectrum {0, 1, 3}
        assert!((algebraic_connectivity(GraphSample::path(3).laplacian()).unwrap() - 1.0).abs() < 1e-12);
        let asym = Matrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 0.0]);
        assert!(algebraic_connectivity(&asym).is_err());
    }

    #[test]
    fn mean_laplacian_examples() {
        let pool = GraphModel::fixed_pool(vec![GraphSample::empty(2), k2()]).unwrap();
        let m = mean_laplacian(&pool);
        assert_eq!(m.matrix, Matrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]));
        let single = GraphModel::single(GraphSample::path(3));
        assert_eq!(&mean_laplacian(&single).matrix, GraphSample::path(3).laplacian());
        let gossip = GraphModel::gossip(GraphSample::complete(3)).unwrap();
        let g = mean_laplacian(&gossip).matrix;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!((g[(i, j)] + 1.0 / 3.0).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn sampling_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let single = GraphModel::single(GraphSample::path(4));
        for _ in 0..10 {
            assert_eq!(&sample_graph(&single, &mut rng), &GraphSample::path(4));
        }
        let er = GraphModel::erdos_renyi_pool(10, 30, 0.05, 0.1, 1).unwrap();
        for _ in 0..50 {
            let g = sample_graph(&er, &mut rng);
            for i in 0..10 {
                assert_eq!(g.adjacency()[(i, i)], 0.0);
            }
            assert!(g.adjacency().iter().all(|&a| a == 0.0 || a == 1.0));
        }
        let gossip = GraphModel::gossip(GraphSample::complete(3)).unwrap();
        for _ in 0..20 {
            let g = sample_graph(&gossip, &mut rng);
            assert_eq!(g.edge_count(), 2);
            assert!(g.is_symmetric());
            let eig = SymmetricEigen::new(g.laplacian().clone()).eigenvalues;
            assert_eq!(eig.iter().filter(|e| e.abs() > 1e-12).count(), 1);
        }
    }

    #[test]
    fn validation_examples() {
        let er = GraphModel::erdos_renyi_pool(10, 30, 0.05, 0.1, 7).unwrap();
        assert!(union_connected(er.pool().unwrap()));
        assert!(validate_model(&er).pass);
        let empty = GraphModel::single(GraphSample::empty(4));
        let r = validate_model(&empty);
        assert!(!r.pass);
        assert_eq!(r.s2, 0.0);
        assert!(validate_model(&GraphModel::gossip(GraphSample::path(5)).unwrap()).pass);
        assert!(validate_model(&GraphModel::broadcast(GraphSample::ring(5)).unwrap()).pass);
    }

    #[test]
    fn broadcast_mean_matches_monte_carlo() {
        let model = GraphModel::broadcast(GraphSample::ring(5)).unwrap();
        let exact = mean_laplacian(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mc = mean_laplacian_monte_carlo(&model, MIN_MONTE_CARLO_DRAWS, &mut rng);
        let se = mc.standard_error.as_ref().unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let tol = 4.0 * se[(i, j)] + 1e-12;
                assert!((mc.matrix[(i, j)] - exact.matrix[(i, j)]).abs() <= tol);
            }
        }
        // per-draw broadcast graphs are directed, the mean is not
        assert!(validate_mean(&mc).pass);
    }

    #[test]
    fn directed_pool_with_symmetric_mean_passes() {
        let mut a = Matrix::zeros(2, 2);
        a[(0, 1)] = 1.0;
        let fwd = GraphSample::from_adjacency(a.clone()).unwrap();
        let back = GraphSample::from_adjacency(a.transpose()).unwrap();
        assert!(!fwd.is_symmetric());
        let model = GraphModel::fixed_pool(vec![fwd.clone(), back]).unwrap();
        assert!(validate_model(&model).pass);
        assert!(!validate_model(&GraphModel::single(fwd)).pass);
    }
}
