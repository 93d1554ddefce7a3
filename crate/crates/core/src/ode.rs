//! Deterministic mean dynamics of the recursion: the drift `J(S)`, its projected Euler
//! flow on `Φ = Ω × R^{mn} × R^{mn}`, equilibria built from a KKT pair, and the
//! Lyapunov function `½‖S − S*‖²`.

use nalgebra::{SymmetricEigen, SVD};

use crate::error::{invalid, Error, Result};
use crate::oracle::OracleSolution;
use crate::problem::{Matrix, ProblemSpec, Vector};
use crate::sa::{NetworkState, Trace, TraceRecord, DIVERGENCE_GUARD};

/// Probe step used by [`equilibrium_residual`].
pub const RESIDUAL_PROBE: f64 = 1e-6;
/// Singular values below this are treated as zero in the pseudoinverse.
pub const PINV_CUTOFF: f64 = 1e-10;
pub const EQUILIBRIUM_TOL: f64 = 1e-8;

/// The three blocks of `J(S)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftEvaluation {
    pub dx: Matrix,
    pub dlambda: Matrix,
    pub dz: Matrix,
}

impl DriftEvaluation {
    pub fn norm(&self) -> f64 {
        (self.dx.norm_squared() + self.dlambda.norm_squared() + self.dz.norm_squared()).sqrt()
    }
}

/// `dX = −∇f(X) + Λ`, `dΛ = −L̄(Λ + Z) + D − X`, `dZ = L̄Λ`.
pub fn drift(state: &NetworkState, problem: &ProblemSpec, mean_laplacian: &Matrix) -> Result<DriftEvaluation> {
    state.check_against(problem)?;
    let n = problem.n();
    if mean_laplacian.shape() != (n, n) {
        return Err(invalid("mean Laplacian size does not match agent count"));
    }
    let dx = -problem.gradient(&state.x) + &state.lambda;
    let dlambda = -(mean_laplacian * (&state.lambda + &state.z)) + problem.resources() - &state.x;
    let dz = mean_laplacian * &state.lambda;
    Ok(DriftEvaluation { dx, dlambda, dz })
}

/// `S⁺ = P_Φ(S + h·J(S))`: the X block is projected onto `Ω`, the others are left free.
pub fn projected_euler_step(
    state: &NetworkState,
    problem: &ProblemSpec,
    mean_laplacian: &Matrix,
    h: f64,
) -> Result<NetworkState> {
    if !(h > 0.0) {
        return Err(invalid(format!("step h = {h} must be > 0")));
    }
    let j = drift(state, problem, mean_laplacian)?;
    Ok(NetworkState {
        x: problem.project_rows(&(&state.x + h * j.dx))?,
        lambda: &state.lambda + h * j.dlambda,
        z: &state.z + h * j.dz,
        k: state.k + 1,
    })
}

/// `½‖S − S*‖²`.
pub fn lyapunov(state: &NetworkState, equilibrium: &NetworkState) -> Result<f64> {
    if state.shape() != equilibrium.shape() {
        return Err(invalid("lyapunov: state shapes differ"));
    }
    Ok(0.5 * state.distance(equilibrium).powi(2))
}

/// `‖S − P_Φ(S + h₀J(S))‖ / h₀` with `h₀ = 1e-6`.
pub fn equilibrium_residual(state: &NetworkState, problem: &ProblemSpec, mean_laplacian: &Matrix) -> Result<f64> {
    let next = projected_euler_step(state, problem, mean_laplacian, RESIDUAL_PROBE)?;
    Ok(state.distance(&next) / RESIDUAL_PROBE)
}

#[derive(Clone, Debug)]
pub struct Equilibrium {
    pub state: NetworkState,
    pub lambda_star: Vector,
    pub residual: f64,
}

/// Builds `S* = (X*, 1 ⊗ λ*, Z*)` with `Z*` the minimum-norm solution of `L̄Z = D − X*`.
pub fn equilibrium_construct(
    problem: &ProblemSpec,
    mean_laplacian: &Matrix,
    solution: &OracleSolution,
) -> Result<Equilibrium> {
    equilibrium_from_pair(problem, mean_laplacian, &solution.x_star, &solution.lambda_star)
}

pub fn equilibrium_from_pair(
    problem: &ProblemSpec,
    mean_laplacian: &Matrix,
    x_star: &Matrix,
    lambda_star: &Vector,
) -> Result<Equilibrium> {
    let (n, m) = (problem.n(), problem.m());
    if x_star.shape() != (n, m) || lambda_star.len() != m || mean_laplacian.shape() != (n, n) {
        return Err(invalid("equilibrium construction: dimension mismatch"));
    }
    let rhs = problem.resources() - x_star;
    let z = min_norm_solve(mean_laplacian, &rhs)?;
    let gap = (mean_laplacian * &z - &rhs).norm();
    if gap > 1e-6 {
        return Err(Error::Inconsistent(format!(
            "D - X* is not in the range of the mean Laplacian (gap {gap:.3e}); the allocation does not balance"
        )));
    }
    let lambda = Matrix::from_fn(n, m, |_, k| lambda_star[k]);
    let state = NetworkState::new(x_star.clone(), lambda, z)?;
    let residual = equilibrium_residual(&state, problem, mean_laplacian)?;
    Ok(Equilibrium {
        state,
        lambda_star: lambda_star.clone(),
        residual,
    })
}

/// Minimum-norm solution of `L Z = B`. A symmetric connected `L` goes through the
/// nonsingular `L + 11ᵀ/n`, whose solution is orthogonal to `1` whenever `1ᵀB = 0`;
/// anything else through the SVD pseudoinverse.
fn min_norm_solve(l: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    let n = l.nrows();
    let balanced = rhs.row_sum().amax() <= 1e-9 * (1.0 + rhs.amax());
    if balanced && (l - l.transpose()).amax() <= 1e-12 * (1.0 + l.amax()) {
        let aug = l + Matrix::from_element(n, n, 1.0 / n as f64);
        if let Some(mut z) = aug.clone().lu().solve(rhs) {
            // one refinement pass
            if let Some(dz) = aug.lu().solve(&(rhs - l * &z)) {
                z += dz;
            }
            let mean = z.row_mean();
            for mut row in z.row_iter_mut() {
                row -= &mean;
            }
            if z.iter().all(|v| v.is_finite()) {
                return Ok(z);
            }
        }
    }
    let pinv = SVD::new(l.clone(), true, true)
        .pseudo_inverse(PINV_CUTOFF)
        .map_err(|e| invalid(format!("pseudoinverse: {e}")))?;
    Ok(pinv * rhs)
}

/// Step-size bound `h·(2·max l_c + 2‖L̄‖) < 1`.
pub fn max_stable_step(problem: &ProblemSpec, mean_laplacian: &Matrix) -> f64 {
    let lnorm = SymmetricEigen::new((mean_laplacian + mean_laplacian.transpose()) * 0.5)
        .eigenvalues
        .amax();
    1.0 / (2.0 * problem.max_lipschitz() + 2.0 * lnorm)
}

#[derive(Clone, Debug)]
pub struct FlowResult {
    /// States at `t = 0, cadence, 2·cadence, …` and the final step.
    pub states: Vec<NetworkState>,
    /// `V(S_t)` for every `t = 0..=steps` when an equilibrium was supplied.
    pub lyapunov: Vec<f64>,
    /// Metric records at the same instants as `states`; `alpha` carries `h`.
    pub trace: Trace,
    pub final_state: NetworkState,
}

/// Integrates the projected ODE with `steps` projected Euler steps of size `h`.
pub fn flow(
    state0: &NetworkState,
    problem: &ProblemSpec,
    mean_laplacian: &Matrix,
    h: f64,
    steps: usize,
    equilibrium: Option<&Equilibrium>,
    cadence: usize,
) -> Result<FlowResult> {
    let bound = max_stable_step(problem, mean_laplacian);
    if !(h > 0.0 && h < bound) {
        return Err(invalid(format!("flow step h = {h} outside the stable range (0, {bound:.3e})")));
    }
    let cadence = cadence.max(1);
    let reference = equilibrium.map(|e| &e.state.x);
    let measure = |s: &NetworkState| TraceRecord::measure(s.k, h, s, problem, mean_laplacian, reference, &[]);
    let mut state = state0.clone();
    state.check_against(problem)?;
    let mut lyap = Vec::with_capacity(if equilibrium.is_some() { steps + 1 } else { 0 });
    if let Some(e) = equilibrium {
        lyap.push(lyapunov(&state, &e.state)?);
    }
    let initial = measure(&state);
    let mut states = vec![state.clone()];
    let mut records = Vec::new();
    for t in 0..steps {
        state = projected_euler_step(&state, problem, mean_laplacian, h)?;
        let norm = state.norm();
        if !(norm <= DIVERGENCE_GUARD) {
            return Err(Error::Diverged {
                iteration: state.k,
                norm,
            });
        }
        if let Some(e) = equilibrium {
            lyap.push(lyapunov(&state, &e.state)?);
        }
        if (t + 1) % cadence == 0 || t + 1 == steps {
            states.push(state.clone());
            records.push(measure(&state));
        }
    }
    Ok(FlowResult {
        states,
        lyapunov: lyap,
        trace: Trace {
            cadence,
            initial,
            records,
        },
        final_state: state,
    })
}

/// First index `t` with `V(t+1) > V(t) + slack·(1 + V(t))`, if any.
pub fn lyapunov_violation(series: &[f64], slack: f64) -> Option<usize> {
    series
        .windows(2)
        .position(|w| w[1] > w[0] + slack * (1.0 + w[0]))
}
