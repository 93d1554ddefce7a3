//! Allocation problem instances: local objectives, local feasibility sets with
//! exact Euclidean projections, local resources and KKT stationarity residuals.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Sweep cap for the halfspace projection before it falls back to the least-distance solve.
pub const PROJECTION_MAX_SWEEPS: usize = 500;
/// Exit tolerance on both sweep displacement and constraint violation.
pub const PROJECTION_TOL: f64 = 1e-10;
/// Minimum Chebyshev slack accepted as a certified interior point.
pub const INTERIOR_SLACK: f64 = 1e-6;

const INTERIOR_ITERS: usize = 4_000;
const GENERATION_ATTEMPTS: usize = 100;

/// A differentiable convex objective supplied as a gradient oracle.
pub trait SmoothObjective: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &Vector) -> f64;
    fn gradient(&self, x: &Vector) -> Vector;
    /// Global Lipschitz constant of the gradient.
    fn lipschitz(&self) -> f64;
}

#[derive(Clone, Debug)]
pub enum ObjectiveKind {
    /// `f(x) = xᵀQx + cᵀx` with `Q` symmetric positive definite.
    Quadratic { q: Matrix, c: Vector },
    Custom(Arc<dyn SmoothObjective>),
}

#[derive(Clone, Debug)]
pub struct ObjectiveSpec {
    kind: ObjectiveKind,
    lipschitz_hint: Option<f64>,
    lipschitz: f64,
}

impl ObjectiveSpec {
    /// Builds a strictly convex quadratic; rejects asymmetric or non-positive-definite `q`.
    pub fn quadratic(q: Matrix, c: Vector) -> Result<Self> {
        let m = c.len();
        if m == 0 || q.nrows() != m || q.ncols() != m {
            return Err(invalid(format!(
                "quadratic objective: Q is {}x{} but c has length {m}",
                q.nrows(),
                q.ncols()
            )));
        }
        let scale = q.amax().max(1.0);
        let asym = (&q - q.transpose()).amax();
        if asym > 1e-9 * scale {
            return Err(invalid(format!(
                "quadratic objective: Q is not symmetric (defect {asym:.3e})"
            )));
        }
        let eig = SymmetricEigen::new(q.clone()).eigenvalues;
        let lo = eig.min();
        let hi = eig.max();
        if !(lo > 0.0) {
            return Err(Error::Assumption {
                index: 1,
                name: "strict convexity",
                detail: format!("Q has eigenvalue {lo:.6e} <= 0"),
            });
        }
        Ok(Self {
            kind: ObjectiveKind::Quadratic { q, c },
            lipschitz_hint: None,
            lipschitz: 2.0 * hi,
        })
    }

    pub fn custom(objective: Arc<dyn SmoothObjective>) -> Self {
        let lipschitz = objective.lipschitz();
        Self {
            kind: ObjectiveKind::Custom(objective),
            lipschitz_hint: None,
            lipschitz,
        }
    }

    /// Attaches an upper bound on the gradient Lipschitz constant; it must dominate the true one.
    pub fn with_lipschitz_hint(mut self, hint: f64) -> Result<Self> {
        if !(hint >= 0.0) {
            return Err(invalid("lipschitz hint must be >= 0"));
        }
        if self.lipschitz > hint * (1.0 + 1e-12) {
            return Err(invalid(format!(
                "lipschitz hint {hint} below gradient Lipschitz constant {}",
                self.lipschitz
            )));
        }
        self.lipschitz_hint = Some(hint);
        Ok(self)
    }

    pub fn kind(&self) -> &ObjectiveKind {
        &self.kind
    }

    pub fn lipschitz_hint(&self) -> Option<f64> {
        self.lipschitz_hint
    }

    /// Lipschitz constant of the gradient (`2·λmax(Q)` for quadratics).
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            ObjectiveKind::Quadratic { c, .. } => c.len(),
            ObjectiveKind::Custom(o) => o.dim(),
        }
    }

    pub fn value(&self, x: &Vector) -> f64 {
        match &self.kind {
            ObjectiveKind::Quadratic { q, c } => x.dot(&(q * x)) + c.dot(x),
            ObjectiveKind::Custom(o) => o.value(x),
        }
    }

    pub(crate) fn gradient_unchecked(&self, x: &Vector) -> Vector {
        match &self.kind {
            ObjectiveKind::Quadratic { q, c } => 2.0 * (q * x) + c,
            ObjectiveKind::Custom(o) => o.gradient(x),
        }
    }

    /// Returns a copy with every term multiplied by `gamma`.
    pub fn scaled(&self, gamma: f64) -> Result<Self> {
        match &self.kind {
            ObjectiveKind::Quadratic { q, c } => Self::quadratic(q * gamma, c * gamma),
            ObjectiveKind::Custom(_) => Err(invalid("cannot scale a custom objective")),
        }
    }
}

/// Exact gradient of `obj` at `x`.
pub fn grad(obj: &ObjectiveSpec, x: &Vector) -> Result<Vector> {
    if x.len() != obj.dim() {
        return Err(invalid(format!(
            "gradient: x has length {} but objective dimension is {}",
            x.len(),
            obj.dim()
        )));
    }
    Ok(obj.gradient_unchecked(x))
}

/// `{x : Rx <= l}` with a certified strictly feasible point.
#[derive(Clone, Debug)]
pub struct Polyhedron {
    r: Matrix,
    l: Vector,
    row_norms2: Vec<f64>,
    interior: Vector,
    slack: f64,
}

impl Polyhedron {
    pub fn new(r: Matrix, l: Vector) -> Result<Self> {
        if r.nrows() != l.len() || r.nrows() == 0 || r.ncols() == 0 {
            return Err(invalid(format!(
                "polyhedron: R is {}x{} but l has length {}",
                r.nrows(),
                r.ncols(),
                l.len()
            )));
        }
        if r.iter().chain(l.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("polyhedron: non-finite entries"));
        }
        let row_norms2: Vec<f64> = (0..r.nrows()).map(|j| r.row(j).norm_squared()).collect();
        if let Some(j) = row_norms2.iter().position(|&v| v == 0.0) {
            return Err(invalid(format!("polyhedron: row {j} of R is zero")));
        }
        let mut poly = Self {
            interior: Vector::zeros(r.ncols()),
            r,
            l,
            row_norms2,
            slack: f64::NEG_INFINITY,
        };
        let (point, slack) = poly.chebyshev_point()?;
        if slack <= INTERIOR_SLACK {
            return Err(Error::Assumption {
                index: 2,
                name: "nonempty interior",
                detail: format!("best slack {slack:.3e} <= {INTERIOR_SLACK:.0e}"),
            });
        }
        poly.interior = point;
        poly.slack = slack;
        Ok(poly)
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    pub fn l(&self) -> &Vector {
        &self.l
    }

    /// Certified strictly feasible point and its normalized slack.
    pub fn interior_point(&self) -> (&Vector, f64) {
        (&self.interior, self.slack)
    }

    fn dim(&self) -> usize {
        self.r.ncols()
    }

    fn normalized_slack(&self, x: &Vector) -> (f64, usize) {
        let mut worst = f64::INFINITY;
        let mut arg = 0;
        for j in 0..self.r.nrows() {
            let s = (self.l[j] - self.r.row(j).dot(&x.transpose())) / self.row_norms2[j].sqrt();
            if s < worst {
                worst = s;
                arg = j;
            }
        }
        (worst, arg)
    }

    /// Maximizes the normalized slack `min_j (l_j - r_j x)/|r_j|` by subgradient ascent
    /// started from the projection of the origin.
    fn chebyshev_point(&self) -> Result<(Vector, f64)> {
        let start = self
            .project(&Vector::zeros(self.dim()))
            .map_err(|e| Error::Infeasible(format!("polyhedron appears empty: {e}")))?;
        let mut x = start;
        let (mut s, mut j) = self.normalized_slack(&x);
        let mut best = (x.clone(), s);
        let step0 = 0.5 * (1.0 + x.amax()).min(10.0);
        for t in 0..INTERIOR_ITERS {
            let step = step0 / ((t + 1) as f64).sqrt();
            let norm = self.row_norms2[j].sqrt();
            for k in 0..x.len() {
                x[k] -= step * self.r[(j, k)] / norm;
            }
            (s, j) = self.normalized_slack(&x);
            if s > best.1 {
                best = (x.clone(), s);
            }
        }
        Ok(best)
    }

    fn max_violation(&self, x: &Vector) -> f64 {
        (0..self.r.nrows())
            .map(|j| self.r.row(j).dot(&x.transpose()) - self.l[j])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Dual coordinate ascent over the halfspaces (Dykstra's scheme specialised to
    /// halfspaces), with an exact face solve whenever the multiplier support changes.
    fn project(&self, y: &Vector) -> Result<Vector> {
        if self.max_violation(y) <= 0.0 {
            return Ok(y.clone());
        }
        let p = self.r.nrows();
        let mut mu = vec![0.0; p];
        let mut x = y.clone();
        let mut last_support: Vec<usize> = Vec::new();
        for sweep in 1..=PROJECTION_MAX_SWEEPS {
            let mut change2 = 0.0;
            for j in 0..p {
                let row = self.r.row(j);
                let viol = row.dot(&x.transpose()) - self.l[j];
                let step = (viol / self.row_norms2[j]).max(-mu[j]);
                if step != 0.0 {
                    mu[j] += step;
                    for k in 0..x.len() {
                        x[k] -= step * row[k];
                    }
                    change2 += step * step * self.row_norms2[j];
                }
            }
            let mu_max = mu.iter().cloned().fold(0.0, f64::max);
            let support: Vec<usize> = (0..p).filter(|&j| mu[j] > 1e-12 * (1.0 + mu_max)).collect();
            if support != last_support || sweep % 16 == 0 {
                if let Some(exact) = self.solve_face(y, &support) {
                    return Ok(exact);
                }
                last_support = support;
            }
            if change2.sqrt() <= PROJECTION_TOL && self.max_violation(&x) <= PROJECTION_TOL {
                return Ok(x);
            }
        }
        // stalls on degenerate vertices (more active rows than dimensions)
        match self.least_distance(y) {
            Some(exact) => Ok(exact),
            None => Err(Error::NumericalFailure {
                routine: "polyhedral projection",
                residual: self.max_violation(&x).max(0.0),
                iterations: PROJECTION_MAX_SWEEPS,
            }),
        }
    }

    /// Projection as a least-distance problem `min |u| s.t. R u <= l - R y`, solved through
    /// its nonnegative least-squares dual.
    fn least_distance(&self, y: &Vector) -> Option<Vector> {
        let (p, m) = (self.r.nrows(), self.dim());
        let h = &self.r * y - &self.l;
        let e = Matrix::from_fn(m + 1, p, |a, j| if a < m { -self.r[(j, a)] } else { h[j] });
        let mut f = Vector::zeros(m + 1);
        f[m] = 1.0;
        let w = nnls(&e, &f)?;
        let res = &e * &w - &f;
        if res[m].abs() < 1e-300 {
            return None;
        }
        let u = Vector::from_fn(m, |a, _| -res[a] / res[m]);
        let x = y + u;
        let w_max = w.amax();
        let support: Vec<usize> = (0..p).filter(|&j| w[j] > 1e-12 * w_max).collect();
        if let Some(exact) = self.solve_face(y, &support) {
            return Some(exact);
        }
        let scale = 1.0 + y.amax() + self.l.amax();
        (self.max_violation(&x) <= 1e-9 * scale).then_some(x)
    }

    /// Projects `y` onto the affine face `{R_A x = l_A}` and accepts the result only if it
    /// satisfies the full KKT system of the projection problem.
    fn solve_face(&self, y: &Vector, support: &[usize]) -> Option<Vector> {
        if support.is_empty() || support.len() > self.dim() {
            return None;
        }
        let ra = Matrix::from_fn(support.len(), self.dim(), |a, k| self.r[(support[a], k)]);
        let la = Vector::from_iterator(support.len(), support.iter().map(|&j| self.l[j]));
        let gram = &ra * ra.transpose();
        let chol = Cholesky::new(gram)?;
        let nu = chol.solve(&(&ra * y - la));
        if nu.iter().any(|&v| !v.is_finite() || v < -1e-12 * (1.0 + nu.amax())) {
            return None;
        }
        let x = y - ra.transpose() * nu;
        let xn = x.amax();
        for j in 0..self.r.nrows() {
            let v = self.r.row(j).dot(&x.transpose()) - self.l[j];
            let scale = 1.0 + self.l[j].abs() + self.row_norms2[j].sqrt() * xn;
            if v > 1e-11 * scale {
                return None;
            }
        }
        Some(x)
    }
}

/// Lawson–Hanson nonnegative least squares `min |A w - b|, w >= 0`.
fn nnls(a: &Matrix, b: &Vector) -> Option<Vector> {
    let p = a.ncols();
    let tol = 1e-12 * (1.0 + a.amax()) * (1.0 + b.amax());
    let mut w = Vector::zeros(p);
    let mut passive = vec![false; p];
    let solve = |passive: &[bool]| -> Option<Vector> {
        let idx: Vec<usize> = (0..p).filter(|&j| passive[j]).collect();
        let ap = Matrix::from_fn(a.nrows(), idx.len(), |r, c| a[(r, idx[c])]);
        let sol = ap.svd(true, true).solve(b, 1e-14).ok()?;
        let mut full = Vector::zeros(p);
        for (c, &j) in idx.iter().enumerate() {
            full[j] = sol[c];
        }
        Some(full)
    };
    for _ in 0..3 * p + 10 {
        let grad = a.transpose() * (b - a * &w);
        let Some(j) = (0..p).filter(|&j| !passive[j] && grad[j] > tol).max_by(|&i, &k| grad[i].total_cmp(&grad[k])) else {
            return Some(w);
        };
        passive[j] = true;
        for _ in 0..3 * p + 10 {
            let s = solve(&passive)?;
            if (0..p).all(|k| !passive[k] || s[k] > 0.0) {
                w = s;
                break;
            }
            let alpha = (0..p)
                .filter(|&k| passive[k] && s[k] <= 0.0)
                .map(|k| w[k] / (w[k] - s[k]))
                .fold(f64::INFINITY, f64::min);
            w += (s - &w) * alpha;
            for k in 0..p {
                if passive[k] && w[k] <= tol {
                    passive[k] = false;
                    w[k] = 0.0;
                }
            }
        }
    }
    None
}

#[derive(Clone, Debug)]
pub enum LocalSet {
    Unconstrained { dim: usize },
    Box { lo: Vector, hi: Vector },
    Polyhedron(Polyhedron),
}

impl LocalSet {
    pub fn unconstrained(dim: usize) -> Self {
        LocalSet::Unconstrained { dim }
    }

    pub fn boxed(lo: Vector, hi: Vector) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(invalid("box: lo and hi must have equal nonzero length"));
        }
        if lo.iter().zip(hi.iter()).any(|(a, b)| !(a <= b)) {
            return Err(invalid("box: lo must be <= hi componentwise"));
        }
        Ok(LocalSet::Box { lo, hi })
    }

    pub fn polyhedron(r: Matrix, l: Vector) -> Result<Self> {
        Polyhedron::new(r, l).map(LocalSet::Polyhedron)
    }

    pub fn dim(&self) -> usize {
        match self {
            LocalSet::Unconstrained { dim } => *dim,
            LocalSet::Box { lo, .. } => lo.len(),
            LocalSet::Polyhedron(p) => p.dim(),
        }
    }

    /// Largest normalized slack of a known interior point; infinite for the whole space.
    pub fn interior_slack(&self) -> f64 {
        match self {
            LocalSet::Unconstrained { .. } => f64::INFINITY,
            LocalSet::Box { lo, hi } => (hi - lo).min() / 2.0,
            LocalSet::Polyhedron(p) => p.slack,
        }
    }

    /// Largest constraint violation at `x` (non-positive when feasible).
    pub fn violation(&self, x: &Vector) -> f64 {
        match self {
            LocalSet::Unconstrained { .. } => f64::NEG_INFINITY,
            LocalSet::Box { lo, hi } => (0..x.len())
                .map(|k| (lo[k] - x[k]).max(x[k] - hi[k]))
                .fold(f64::NEG_INFINITY, f64::max),
            LocalSet::Polyhedron(p) => p.max_violation(x),
        }
    }

    /// Inequality rows `Rx <= l` describing the set (none for the whole space).
    pub fn constraint_rows(&self) -> (Matrix, Vector) {
        match self {
            LocalSet::Unconstrained { dim } => (Matrix::zeros(0, *dim), Vector::zeros(0)),
            LocalSet::Box { lo, hi } => {
                let m = lo.len();
                let mut r = Matrix::zeros(2 * m, m);
                let mut l = Vector::zeros(2 * m);
                for k in 0..m {
                    r[(k, k)] = 1.0;
                    l[k] = hi[k];
                    r[(m + k, k)] = -1.0;
                    l[m + k] = -lo[k];
                }
                (r, l)
            }
            LocalSet::Polyhedron(p) => (p.r.clone(), p.l.clone()),
        }
    }

    pub(crate) fn project_unchecked(&self, y: &Vector) -> Result<Vector> {
        match self {
            LocalSet::Unconstrained { .. } => Ok(y.clone()),
            LocalSet::Box { lo, hi } => Ok(Vector::from_fn(y.len(), |k, _| y[k].clamp(lo[k], hi[k]))),
            LocalSet::Polyhedron(p) => p.project(y),
        }
    }
}

/// Euclidean projection of `y` onto `set`.
pub fn project(set: &LocalSet, y: &Vector) -> Result<Vector> {
    if y.len() != set.dim() {
        return Err(invalid(format!(
            "projection: point has length {} but set dimension is {}",
            y.len(),
            set.dim()
        )));
    }
    set.project_unchecked(y)
}

/// Membership test with an absolute tolerance band on every defining inequality.
pub fn contains(set: &LocalSet, x: &Vector, tol: f64) -> bool {
    x.len() == set.dim() && set.violation(x) <= tol
}

#[derive(Clone, Debug)]
pub struct AgentSpec {
    pub objective: ObjectiveSpec,
    pub set: LocalSet,
    pub resource: Vector,
}

impl AgentSpec {
    pub fn new(objective: ObjectiveSpec, set: LocalSet, resource: Vector) -> Result<Self> {
        let m = resource.len();
        if objective.dim() != m || set.dim() != m {
            return Err(invalid(format!(
                "agent dimensions disagree: objective {}, set {}, resource {m}",
                objective.dim(),
                set.dim()
            )));
        }
        Ok(Self {
            objective,
            set,
            resource,
        })
    }

    pub fn dim(&self) -> usize {
        self.resource.len()
    }
}

/// `‖x − P_Ω(x − (∇f(x) − λ))‖`; zero exactly when `λ − ∇f(x)` lies in the normal cone at `x`.
pub fn stationarity_residual(agent: &AgentSpec, x: &Vector, lambda: &Vector) -> Result<f64> {
    if lambda.len() != agent.dim() {
        return Err(invalid("stationarity residual: multiplier dimension mismatch"));
    }
    if !contains(&agent.set, x, 1e-6) {
        return Err(invalid(format!(
            "stationarity residual: x violates the local set by {:.3e}",
            agent.set.violation(x)
        )));
    }
    let g = grad(&agent.objective, x)?;
    let probe = x - (g - lambda);
    let p = agent.set.project_unchecked(&probe)?;
    Ok((x - p).norm())
}

#[derive(Clone, Debug)]
pub struct ProblemSpec {
    n: usize,
    m: usize,
    agents: Vec<AgentSpec>,
}

impl ProblemSpec {
    pub fn new(agents: Vec<AgentSpec>) -> Result<Self> {
        let n = agents.len();
        if n < 2 {
            return Err(invalid(format!("problem needs at least 2 agents, got {n}")));
        }
        let m = agents[0].dim();
        if m == 0 {
            return Err(invalid("allocation dimension must be >= 1"));
        }
        if let Some(i) = agents.iter().position(|a| a.dim() != m) {
            return Err(invalid(format!("agent {i} has dimension {} != {m}", agents[i].dim())));
        }
        Ok(Self { n, m, agents })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn agents(&self) -> &[AgentSpec] {
        &self.agents
    }

    /// Stacked resources `D` as an `n × m` matrix (row `i` is `d_i`).
    pub fn resources(&self) -> Matrix {
        Matrix::from_fn(self.n, self.m, |i, k| self.agents[i].resource[k])
    }

    pub fn total_resource(&self) -> Vector {
        self.agents
            .iter()
            .fold(Vector::zeros(self.m), |acc, a| acc + &a.resource)
    }

    /// `Σ f_i(x_i)` for an `n × m` allocation.
    pub fn objective_value(&self, x: &Matrix) -> f64 {
        self.agents
            .iter()
            .enumerate()
            .map(|(i, a)| a.objective.value(&row_vector(x, i)))
            .sum()
    }

    /// Row-wise gradient `∇f(X)`.
    pub fn gradient(&self, x: &Matrix) -> Matrix {
        let mut g = Matrix::zeros(self.n, self.m);
        for (i, a) in self.agents.iter().enumerate() {
            g.set_row(i, &a.objective.gradient_unchecked(&row_vector(x, i)).transpose());
        }
        g
    }

    /// Row-wise projection onto `Ω = Π Ω_i`.
    pub fn project_rows(&self, y: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(self.n, self.m);
        for (i, a) in self.agents.iter().enumerate() {
            out.set_row(i, &a.set.project_unchecked(&row_vector(y, i))?.transpose());
        }
        Ok(out)
    }

    /// Largest per-agent set violation of an allocation.
    pub fn max_violation(&self, x: &Matrix) -> f64 {
        self.agents
            .iter()
            .enumerate()
            .map(|(i, a)| a.set.violation(&row_vector(x, i)))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_lipschitz(&self) -> f64 {
        self.agents
            .iter()
            .map(|a| a.objective.lipschitz())
            .fold(0.0, f64::max)
    }

    /// Copy with every objective scaled by `gamma`.
    pub fn scaled(&self, gamma: f64) -> Result<Self> {
        let agents = self
            .agents
            .iter()
            .map(|a| AgentSpec::new(a.objective.scaled(gamma)?, a.set.clone(), a.resource.clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(agents)
    }
}

pub(crate) fn row_vector(x: &Matrix, i: usize) -> Vector {
    x.row(i).transpose()
}

/// Kind of local set produced by [`random_instance`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Unconstrained,
    Box,
    Polyhedron,
}

/// `Uᵀ diag(e) U` with a Haar-ish random orthogonal `U` and eigenvalues uniform in `[lo, hi]`.
pub(crate) fn random_spd<R: Rng>(rng: &mut R, m: usize, lo: f64, hi: f64) -> Matrix {
    let g = Matrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let u = g.qr().q();
    let d = Matrix::from_diagonal(&Vector::from_fn(m, |_, _| rng.gen_range(lo..=hi)));
    let q = u.transpose() * d * u;
    (&q + q.transpose()) * 0.5
}

fn uniform_vec<R: Rng>(rng: &mut R, m: usize, lo: f64, hi: f64) -> Vector {
    Vector::from_fn(m, |_, _| rng.gen_range(lo..=hi))
}

/// Random quadratic instance: SPD `Q_i` with eigenvalues in `[0.5, 5]`, `c_i, d_i` in `[-1, 1]^m`,
/// and local sets built around a nominal allocation that meets the coupling constraint.
pub fn random_instance(seed: u64, n: usize, m: usize, sets: SetKind) -> Result<ProblemSpec> {
    if n < 2 || m < 1 {
        return Err(invalid(format!("random instance needs n >= 2 and m >= 1 (got n={n}, m={m})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_err = String::new();
    for _ in 0..GENERATION_ATTEMPTS {
        match try_random_instance(&mut rng, n, m, sets) {
            Ok(p) => return Ok(p),
            Err(e) => last_err = e.to_string(),
        }
    }
    Err(Error::GenerationFailure {
        attempts: GENERATION_ATTEMPTS,
        reason: last_err,
    })
}

fn try_random_instance(rng: &mut ChaCha8Rng, n: usize, m: usize, sets: SetKind) -> Result<ProblemSpec> {
    let resources: Vec<Vector> = (0..n).map(|_| uniform_vec(rng, m, -1.0, 1.0)).collect();
    // nominal allocation: resources plus a zero-sum perturbation
    let mut shifts: Vec<Vector> = (0..n).map(|_| uniform_vec(rng, m, -0.5, 0.5)).collect();
    let mean = shifts.iter().fold(Vector::zeros(m), |a, s| a + s) / n as f64;
    for s in shifts.iter_mut() {
        *s -= &mean;
    }
    let mut agents = Vec::with_capacity(n);
    for i in 0..n {
        let q = random_spd(rng, m, 0.5, 5.0);
        let c = uniform_vec(rng, m, -1.0, 1.0);
        let nominal = &resources[i] + &shifts[i];
        let set = match sets {
            SetKind::Unconstrained => LocalSet::unconstrained(m),
            SetKind::Box => {
                let below = uniform_vec(rng, m, 0.5, 1.5);
                let above = uniform_vec(rng, m, 0.5, 1.5);
                LocalSet::boxed(&nominal - below, &nominal + above)?
            }
            SetKind::Polyhedron => {
                let p = 2 * m + 2;
                let r = Matrix::from_fn(p, m, |_, _| rng.sample::<f64, _>(StandardNormal));
                let l = Vector::from_fn(p, |j, _| {
                    r.row(j).dot(&nominal.transpose()) + rng.gen_range(0.5..=1.5)
                });
                LocalSet::polyhedron(r, l)?
            }
        };
        if !contains(&set, &nominal, 0.0) {
            return Err(Error::Infeasible("nominal allocation outside its set".into()));
        }
        agents.push(AgentSpec::new(ObjectiveSpec::quadratic(q, c)?, set, resources[i].clone())?);
    }
    ProblemSpec::new(agents)
}
