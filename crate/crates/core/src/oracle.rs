//! Centralized ground truth for the allocation problem.
//!
//! [`solve_dual`] runs gradient ascent on the concave dual of the single coupling
//! constraint; each agent's inner problem `min_{x∈Ω_i} f_i(x) − λᵀx` is solved by
//! projected gradient, finished with an exact face solve for quadratic objectives.
//! Once the dual residual is below tolerance a few Newton steps on the piecewise-affine
//! dual gradient polish `λ*` to rounding level when every inner solution sits on an
//! identifiable face. [`kkt_check`] certifies any `(X, λ)` pair independently.

use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::problem::{row_vector, AgentSpec, LocalSet, Matrix, ObjectiveKind, ProblemSpec, Vector};

pub const DUAL_TOL: f64 = 1e-8;
pub const INNER_TOL: f64 = 1e-10;
pub const INNER_MAX_ITER: usize = 1_000_000;
pub const DUAL_MAX_ITER: usize = 100_000;

const ACTIVE_TOL: f64 = 1e-9;
const NEWTON_STEPS: usize = 20;

#[derive(Clone, Debug)]
pub struct OracleSolution {
    pub x_star: Matrix,
    pub lambda_star: Vector,
    /// `‖Σ x_i(λ*) − Σ d_i‖`.
    pub dual_residual: f64,
    pub stationarity_residuals: Vec<f64>,
    pub iterations_used: usize,
    /// Every agent has at least one active local constraint; `λ*` may then be non-unique.
    pub all_agents_active: bool,
    /// Dual objective after each accepted step.
    pub dual_values: Vec<f64>,
}

impl OracleSolution {
    pub fn to_doc(&self) -> SolutionDoc {
        SolutionDoc {
            x: crate::io::rows(&self.x_star),
            lambda: self.lambda_star.iter().cloned().collect(),
            residuals: ResidualDoc {
                dual: self.dual_residual,
                stationarity: self.stationarity_residuals.clone(),
            },
            iterations: self.iterations_used,
            all_agents_active: self.all_agents_active,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualDoc {
    pub dual: f64,
    pub stationarity: Vec<f64>,
}

/// JSON form: `{X (row-major), lambda, residuals, iterations}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolutionDoc {
    #[serde(rename = "X")]
    pub x: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub residuals: ResidualDoc,
    pub iterations: usize,
    #[serde(default)]
    pub all_agents_active: bool,
}

impl SolutionDoc {
    pub fn to_solution(&self) -> Result<OracleSolution> {
        Ok(OracleSolution {
            x_star: crate::io::matrix_from_rows(&self.x)?,
            lambda_star: Vector::from_vec(self.lambda.clone()),
            dual_residual: self.residuals.dual,
            stationarity_residuals: self.residuals.stationarity.clone(),
            iterations_used: self.iterations,
            all_agents_active: self.all_agents_active,
            dual_values: Vec::new(),
        })
    }
}

/// Inner minimizer with the local sensitivity `dx/dλ` when it is available.
#[derive(Clone, Debug)]
struct InnerSolution {
    x: Vector,
    jacobian: Option<Matrix>,
}

fn pg_residual(agent: &AgentSpec, x: &Vector, lambda: &Vector, step: f64) -> Result<f64> {
    let g = agent.objective.gradient_unchecked(x) - lambda;
    let p = agent.set.project_unchecked(&(x - step * g))?;
    Ok((x - p).norm())
}

fn active_rows(rows: &Matrix, bounds: &Vector, x: &Vector) -> Vec<usize> {
    (0..rows.nrows())
        .filter(|&j| (rows.row(j).dot(&x.transpose()) - bounds[j]).abs() <= ACTIVE_TOL * (1.0 + bounds[j].abs()))
        .collect()
}

/// Minimizes `xᵀQx + cᵀx − λᵀx` on the face `{R_A x = l_A}` and accepts the point only if it
/// is feasible for every row and the face multipliers are nonnegative.
fn quadratic_face(
    q: &Matrix,
    c: &Vector,
    rows: &Matrix,
    bounds: &Vector,
    active: &[usize],
    lambda: &Vector,
) -> Option<InnerSolution> {
    let m = c.len();
    let a = active.len();
    let mut kkt = DMatrix::<f64>::zeros(m + a, m + a);
    kkt.view_mut((0, 0), (m, m)).copy_from(&(2.0 * q));
    for (r, &j) in active.iter().enumerate() {
        for k in 0..m {
            kkt[(m + r, k)] = rows[(j, k)];
            kkt[(k, m + r)] = rows[(j, k)];
        }
    }
    let mut rhs = DMatrix::<f64>::zeros(m + a, 1 + m);
    for k in 0..m {
        rhs[(k, 0)] = lambda[k] - c[k];
        rhs[(k, 1 + k)] = 1.0;
    }
    for (r, &j) in active.iter().enumerate() {
        rhs[(m + r, 0)] = bounds[j];
    }
    let sol = match kkt.clone().lu().solve(&rhs) {
        Some(s) if s.iter().all(|v| v.is_finite()) => s,
        _ => SVD::new(kkt, true, true).solve(&rhs, 1e-12).ok()?,
    };
    let x = Vector::from_fn(m, |k, _| sol[(k, 0)]);
    let mu_scale = 1.0 + (0..a).map(|r| sol[(m + r, 0)].abs()).fold(0.0, f64::max);
    if (0..a).any(|r| sol[(m + r, 0)] < -1e-10 * mu_scale) {
        return None;
    }
    let xn = x.amax();
    for j in 0..rows.nrows() {
        let v = rows.row(j).dot(&x.transpose()) - bounds[j];
        if !(v <= 1e-11 * (1.0 + bounds[j].abs() + rows.row(j).norm() * xn)) {
            return None;
        }
    }
    let jacobian = Matrix::from_fn(m, m, |r, k| sol[(r, 1 + k)]);
    Some(InnerSolution {
        x,
        jacobian: Some(jacobian),
    })
}

fn inner_solve(agent: &AgentSpec, lambda: &Vector, tol: f64, warm: Option<&Vector>) -> Result<InnerSolution> {
    let m = agent.dim();
    let step = 1.0 / agent.objective.lipschitz().max(f64::MIN_POSITIVE);
    let (rows, bounds) = agent.set.constraint_rows();
    let quad = match agent.objective.kind() {
        ObjectiveKind::Quadratic { q, c } => Some((q, c)),
        ObjectiveKind::Custom(_) => None,
    };
    let face = |x: &Vector| -> Result<Option<InnerSolution>> {
        let Some((q, c)) = quad else { return Ok(None) };
        let act = active_rows(&rows, &bounds, x);
        if act.len() > m {
            return Ok(None);
        }
        match quadratic_face(q, c, &rows, &bounds, &act, lambda) {
            Some(s) if pg_residual(agent, &s.x, lambda, step)? < tol => Ok(Some(s)),
            _ => Ok(None),
        }
    };
    let mut x = agent
        .set
        .project_unchecked(&warm.cloned().unwrap_or_else(|| Vector::zeros(m)))?;
    let mut res = f64::INFINITY;
    for it in 0..INNER_MAX_ITER {
        let g = agent.objective.gradient_unchecked(&x) - lambda;
        let next = agent.set.project_unchecked(&(&x - step * g))?;
        res = (&x - &next).norm();
        if it % 4 == 0 || res < tol {
            if let Some(s) = face(&next)? {
                return Ok(s);
            }
        }
        if res < tol {
            return Ok(InnerSolution { x, jacobian: None });
        }
        x = next;
    }
    Err(Error::ConvergenceFailure {
        routine: "inner minimization",
        residual: res,
        iterations: INNER_MAX_ITER,
        best: x.iter().cloned().collect(),
    })
}

/// `argmin_{x∈Ω} f(x) − λᵀx`, stopping when the projected-gradient residual with step
/// `1/L` drops below `tol`.
pub fn inner_min(agent: &AgentSpec, lambda: &Vector, tol: f64) -> Result<Vector> {
    if !(tol > 0.0) {
        return Err(invalid("inner minimization tolerance must be > 0"));
    }
    if lambda.len() != agent.dim() {
        return Err(invalid("inner minimization: multiplier dimension mismatch"));
    }
    inner_solve(agent, lambda, tol, None).map(|s| s.x)
}

struct DualPoint {
    lambda: Vector,
    inner: Vec<InnerSolution>,
    value: f64,
    gradient: Vector,
}

fn evaluate_dual(problem: &ProblemSpec, lambda: Vector, warm: Option<&[InnerSolution]>) -> Result<DualPoint> {
    let total = problem.total_resource();
    let mut inner = Vec::with_capacity(problem.n());
    let mut value = lambda.dot(&total);
    let mut sum_x = Vector::zeros(problem.m());
    for (i, agent) in problem.agents().iter().enumerate() {
        let w = warm.map(|w| &w[i].x);
        let s = inner_solve(agent, &lambda, INNER_TOL, w)?;
        value += agent.objective.value(&s.x) - lambda.dot(&s.x);
        sum_x += &s.x;
        inner.push(s);
    }
    Ok(DualPoint {
        gradient: total - sum_x,
        lambda,
        inner,
        value,
    })
}

/// Centralized solution of the allocation problem by dual gradient ascent.
///
/// Steps are `a_t / (t+1)^0.6` along `Σd − Σx(λ)`, with `a_t` found by backtracking from
/// `2·a_{t−1}` until the Armijo condition on the dual value holds.
pub fn solve_dual(problem: &ProblemSpec, tol: f64, max_iter: usize) -> Result<OracleSolution> {
    if !(tol > 0.0) {
        return Err(invalid("dual tolerance must be > 0"));
    }
    let mut cur = evaluate_dual(problem, Vector::zeros(problem.m()), None)?;
    let mut values = vec![cur.value];
    let mut scale = 1.0;
    let mut iterations = 0;
    while cur.gradient.norm() >= tol {
        if iterations >= max_iter {
            return Err(Error::ConvergenceFailure {
                routine: "dual ascent",
                residual: cur.gradient.norm(),
                iterations,
                best: cur.lambda.iter().cloned().collect(),
            });
        }
        let decay = ((iterations + 1) as f64).powf(-0.6);
        let d2 = cur.gradient.norm_squared();
        let mut trial_scale = 2.0 * scale;
        let accepted = loop {
            let s = trial_scale * decay;
            let cand = evaluate_dual(problem, &cur.lambda + s * &cur.gradient, Some(&cur.inner))?;
            let rounding = 1e-13 * (1.0 + cur.value.abs());
            let armijo = cand.value >= cur.value + 0.5 * s * d2;
            let flat = (cand.value - cur.value).abs() <= rounding && cand.gradient.norm() < cur.gradient.norm();
            if armijo || flat {
                break Some(cand);
            }
            trial_scale *= 0.5;
            if trial_scale < 1e-30 {
                break None;
            }
        };
        let Some(next) = accepted else {
            return Err(Error::ConvergenceFailure {
                routine: "dual ascent line search",
                residual: cur.gradient.norm(),
                iterations,
                best: cur.lambda.iter().cloned().collect(),
            });
        };
        scale = trial_scale;
        cur = next;
        values.push(cur.value);
        iterations += 1;
    }
    for _ in 0..NEWTON_STEPS {
        if cur.gradient.norm() < 1e-14 * (1.0 + problem.total_resource().norm()) {
            break;
        }
        let Some(hess) = cur
            .inner
            .iter()
            .map(|s| s.jacobian.clone())
            .try_fold(Matrix::zeros(problem.m(), problem.m()), |acc, j| j.map(|j| acc + j))
        else {
            break;
        };
        let Ok(dir) = SVD::new(hess, true, true).solve(&cur.gradient, 1e-12) else { break };
        let cand = evaluate_dual(problem, &cur.lambda + dir, Some(&cur.inner))?;
        if cand.gradient.norm() < cur.gradient.norm() && cand.value >= cur.value - 1e-13 * (1.0 + cur.value.abs()) {
            cur = cand;
            values.push(cur.value);
        } else {
            break;
        }
    }
    finish(problem, cur, iterations, values)
}

fn finish(problem: &ProblemSpec, point: DualPoint, iterations: usize, values: Vec<f64>) -> Result<OracleSolution> {
    let (n, m) = (problem.n(), problem.m());
    let x_star = Matrix::from_fn(n, m, |i, k| point.inner[i].x[k]);
    let stationarity = problem
        .agents()
        .iter()
        .enumerate()
        .map(|(i, a)| raw_stationarity(a, &row_vector(&x_star, i), &point.lambda))
        .collect::<Result<Vec<_>>>()?;
    let all_active = problem.agents().iter().enumerate().all(|(i, a)| {
        let (rows, bounds) = a.set.constraint_rows();
        !active_rows(&rows, &bounds, &row_vector(&x_star, i)).is_empty()
    });
    Ok(OracleSolution {
        x_star,
        lambda_star: point.lambda.clone(),
        dual_residual: point.gradient.norm(),
        stationarity_residuals: stationarity,
        iterations_used: iterations,
        all_agents_active: all_active,
        dual_values: values,
    })
}

/// Stationarity residual without the membership precondition.
fn raw_stationarity(agent: &AgentSpec, x: &Vector, lambda: &Vector) -> Result<f64> {
    let g = agent.objective.gradient_unchecked(x);
    let p = agent.set.project_unchecked(&(x - (g - lambda)))?;
    Ok((x - p).norm())
}

#[derive(Clone, Debug, Serialize)]
pub struct KktReport {
    pub stationarity: f64,
    pub per_agent_stationarity: Vec<f64>,
    pub balance: f64,
    pub feasibility: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Residuals of the KKT system at `(X, λ)`: max per-agent stationarity residual, balance
/// `‖Σx_i − Σd_i‖`, and max set violation. Passes iff all three are below `tol`.
pub fn kkt_check(problem: &ProblemSpec, x: &Matrix, lambda: &Vector, tol: f64) -> Result<KktReport> {
    if x.shape() != (problem.n(), problem.m()) || lambda.len() != problem.m() {
        return Err(invalid("kkt check: dimension mismatch"));
    }
    let per_agent = problem
        .agents()
        .iter()
        .enumerate()
        .map(|(i, a)| raw_stationarity(a, &row_vector(x, i), lambda))
        .collect::<Result<Vec<_>>>()?;
    let stationarity = per_agent.iter().cloned().fold(0.0, f64::max);
    let sum_x = Vector::from_fn(problem.m(), |k, _| x.column(k).sum());
    let balance = (sum_x - problem.total_resource()).norm();
    let feasibility = problem.max_violation(x).max(0.0);
    Ok(KktReport {
        stationarity,
        per_agent_stationarity: per_agent,
        balance,
        feasibility,
        tol,
        pass: stationarity < tol && balance < tol && feasibility < tol,
    })
}

/// Exhaustive grid search for two scalar agents with box sets: `x₂ = Σd − x₁`.
pub fn brute_force_tiny(problem: &ProblemSpec, grid_step: f64) -> Result<OracleSolution> {
    if problem.n() > 2 || problem.m() != 1 {
        return Err(invalid("brute force oracle needs n <= 2 and m = 1"));
    }
    if !(grid_step > 0.0) {
        return Err(invalid("grid step must be > 0"));
    }
    let bounds = |a: &AgentSpec| match &a.set {
        LocalSet::Box { lo, hi } => Ok((lo[0], hi[0])),
        _ => Err(invalid("brute force oracle needs box sets")),
    };
    let [a1, a2] = problem.agents() else { unreachable!() };
    let (lo1, hi1) = bounds(a1)?;
    let (lo2, hi2) = bounds(a2)?;
    let total = problem.total_resource()[0];
    let lo = lo1.max(total - hi2);
    let hi = hi1.min(total - lo2);
    if lo > hi {
        return Err(Error::Infeasible(format!(
            "no x1 in [{lo1}, {hi1}] with x2 = {total} - x1 in [{lo2}, {hi2}]"
        )));
    }
    let cost = |x1: f64| {
        a1.objective.value(&Vector::from_element(1, x1)) + a2.objective.value(&Vector::from_element(1, total - x1))
    };
    let count = ((hi - lo) / grid_step).floor() as usize;
    let mut best = (lo, cost(lo));
    for k in 1..=count + 1 {
        let x1 = if k == count + 1 { hi } else { lo + k as f64 * grid_step };
        let c = cost(x1);
        if c < best.1 {
            best = (x1, c);
        }
    }
    let x1 = best.0;
    let x2 = total - x1;
    let lambda = if x1 > lo1 && x1 < hi1 {
        a1.objective.gradient_unchecked(&Vector::from_element(1, x1))[0]
    } else if x2 > lo2 && x2 < hi2 {
        a2.objective.gradient_unchecked(&Vector::from_element(1, x2))[0]
    } else {
        f64::NAN
    };
    let x_star = Matrix::from_row_slice(2, 1, &[x1, x2]);
    let lambda_star = Vector::from_element(1, lambda);
    let stationarity = if lambda.is_finite() {
        vec![
            raw_stationarity(a1, &Vector::from_element(1, x1), &lambda_star)?,
            raw_stationarity(a2, &Vector::from_element(1, x2), &lambda_star)?,
        ]
    } else {
        vec![f64::NAN; 2]
    };
    Ok(OracleSolution {
        x_star,
        lambda_star,
        dual_residual: 0.0,
        stationarity_residuals: stationarity,
        iterations_used: count + 2,
        all_agents_active: !(x1 > lo1 && x1 < hi1) && !(x2 > lo2 && x2 < hi2),
        dual_values: Vec::new(),
    })
}
