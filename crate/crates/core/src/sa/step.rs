//! One synchronous round of the distributed recursion.

use crate::error::{invalid, Result};
use crate::network::GraphSample;
use crate::problem::{row_vector, Matrix, ProblemSpec, Vector};
use crate::rng::StepStreams;

use super::noise::{draw_realization, NoiseConfig, NoiseRealization};
use super::state::NetworkState;

/// One round with noise drawn from `streams`. Returns the new state and the realization used.
pub fn sa_step(
    state: &NetworkState,
    problem: &ProblemSpec,
    graph: &GraphSample,
    noise: &NoiseConfig,
    alpha: f64,
    streams: &StepStreams,
) -> Result<(NetworkState, NoiseRealization)> {
    let real = draw_realization(noise, &state.x, graph.adjacency(), streams);
    let next = sa_step_with(state, problem, graph.adjacency(), alpha, &real)?;
    Ok((next, real))
}

/// One round with explicit noise values over an arbitrary (possibly weighted) adjacency.
///
/// For every agent `i`, from the time-`k` state:
///
/// ```text
/// x_i⁺ = P_Ωi( x_i + α(−(∇f_i(x_i) + ν_i) + λ_i) )
/// λ_i⁺ = λ_i + α( d_i + δ_i − x_i − Σ_j a_ij(λ_i − λ_j − ζ_ij) − Σ_j a_ij(z_i − z_j − ε_ij) )
/// z_i⁺ = z_i + α Σ_j a_ij(λ_i − λ_j − ζ_ij)
/// ```
///
/// The same `ζ_ij` enters both the `λ` and the `z` line.
pub fn sa_step_with(
    state: &NetworkState,
    problem: &ProblemSpec,
    adjacency: &Matrix,
    alpha: f64,
    noise: &NoiseRealization,
) -> Result<NetworkState> {
    state.check_against(problem)?;
    let (n, m) = state.shape();
    if adjacency.shape() != (n, n) {
        return Err(invalid("adjacency size does not match agent count"));
    }
    if !(alpha > 0.0) {
        return Err(invalid(format!("step size {alpha} must be > 0")));
    }
    let mut next = NetworkState {
        x: Matrix::zeros(n, m),
        lambda: Matrix::zeros(n, m),
        z: Matrix::zeros(n, m),
        k: state.k + 1,
    };
    let mut lam_disagree = vec![0.0; m];
    let mut z_disagree = vec![0.0; m];
    for (i, agent) in problem.agents().iter().enumerate() {
        let xi = row_vector(&state.x, i);
        let g = agent.objective.gradient_unchecked(&xi);
        let probe = Vector::from_fn(m, |k, _| {
            xi[k] + alpha * (-(g[k] + noise.nu[(i, k)]) + state.lambda[(i, k)])
        });
        next.x.set_row(i, &agent.set.project_unchecked(&probe)?.transpose());

        lam_disagree.iter_mut().for_each(|v| *v = 0.0);
        z_disagree.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            let a = adjacency[(i, j)];
            if a == 0.0 {
                continue;
            }
            let zeta = noise.zeta(i, j);
            let eps = noise.eps(i, j);
            for k in 0..m {
                lam_disagree[k] += a * (state.lambda[(i, k)] - (state.lambda[(j, k)] + zeta[k]));
                z_disagree[k] += a * (state.z[(i, k)] - (state.z[(j, k)] + eps[k]));
            }
        }
        for k in 0..m {
            let observed_resource = agent.resource[k] + noise.delta[(i, k)];
            next.lambda[(i, k)] = state.lambda[(i, k)]
                + alpha * (observed_resource - state.x[(i, k)] - lam_disagree[k] - z_disagree[k]);
            next.z[(i, k)] = state.z[(i, k)] + alpha * lam_disagree[k];
        }
    }
    Ok(next)
}

/// The aggregate noise `ξ = (−ν, e₁ + e₂, e₃)` of the compact recursion relative to the
/// mean Laplacian, where `e₁ = (L̄ − L)(Λ + Z)`, `e₂ = ζ + δ + ε`, `e₃ = (L − L̄)Λ − ζ`.
pub fn aggregate_noise(
    state: &NetworkState,
    laplacian: &Matrix,
    mean_laplacian: &Matrix,
    adjacency: &Matrix,
    noise: &NoiseRealization,
) -> (Matrix, Matrix, Matrix) {
    let zeta = noise.aggregated_zeta(adjacency);
    let eps = noise.aggregated_eps(adjacency);
    let diff = mean_laplacian - laplacian;
    let e1 = &diff * (&state.lambda + &state.z);
    let e2 = &zeta + &noise.delta + &eps;
    let e3 = -(&diff * &state.lambda) - &zeta;
    (-noise.nu.clone(), e1 + e2, e3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{mean_laplacian, GraphModel};
    use crate::ode::drift;
    use crate::problem::{random_instance, AgentSpec, LocalSet, ObjectiveSpec, SetKind};

    fn scalar_pair() -> ProblemSpec {
        // f_1 = x², f_2 = 2x² + x, d = (1, -0.5)
        let a1 = AgentSpec::new(
            ObjectiveSpec::quadratic(Matrix::from_element(1, 1, 1.0), Vector::from_element(1, 0.0)).unwrap(),
            LocalSet::unconstrained(1),
            Vector::from_element(1, 1.0),
        )
        .unwrap();
        let a2 = AgentSpec::new(
            ObjectiveSpec::quadratic(Matrix::from_element(1, 1, 2.0), Vector::from_element(1, 1.0)).unwrap(),
            LocalSet::boxed(Vector::from_element(1, -1.0), Vector::from_element(1, 0.2)).unwrap(),
            Vector::from_element(1, -0.5),
        )
        .unwrap();
        ProblemSpec::new(vec![a1, a2]).unwrap()
    }

    #[test]
    fn hand_computed_two_agent_step() {
        let p = scalar_pair();
        let s = NetworkState::new(
            Matrix::from_row_slice(2, 1, &[0.5, 0.1]),
            Matrix::from_row_slice(2, 1, &[1.0, -2.0]),
            Matrix::from_row_slice(2, 1, &[0.3, 0.7]),
        )
        .unwrap();
        let adj = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let mut real = NoiseRealization::zeros(2, 1);
        real.nu = Matrix::from_row_slice(2, 1, &[0.2, -0.4]);
        real.delta = Matrix::from_row_slice(2, 1, &[0.1, 0.05]);
        real.set_zeta(0, 1, &[0.3]);
        real.set_zeta(1, 0, &[-0.1]);
        real.set_eps(0, 1, &[0.2]);
        real.set_eps(1, 0, &[0.4]);
        let alpha = 0.5;
        let out = sa_step_with(&s, &p, &adj, alpha, &real).unwrap();
        // agent 1: grad = 1.0, probe = 0.5 + 0.5(-(1.0+0.2) + 1.0) = 0.4
        assert!((out.x[(0, 0)] - 0.4).abs() < 1e-15);
        // agent 2: grad = 4*0.1 + 1 = 1.4, probe = 0.1 + 0.5(-(1.4-0.4) - 2) = -1.4 -> clamp -1
        assert_eq!(out.x[(1, 0)], -1.0);
        // agent 1: lam_dis = 1 - (-2 + 0.3) = 2.7, z_dis = 0.3 - (0.7 + 0.2) = -0.6
        // λ⁺ = 1 + 0.5(1.1 - 0.5 - 2.7 + 0.6) = 0.25, z⁺ = 0.3 + 0.5*2.7 = 1.65
        assert!((out.lambda[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((out.z[(0, 0)] - 1.65).abs() < 1e-15);
        // agent 2: lam_dis = -2 - (1 - 0.1) = -2.9, z_dis = 0.7 - (0.3 + 0.4) = 0
        // λ⁺ = -2 + 0.5(-0.45 - 0.1 + 2.9 - 0) = -0.825, z⁺ = 0.7 - 1.45 = -0.75
        assert!((out.lambda[(1, 0)] + 0.825).abs() < 1e-15);
        assert!((out.z[(1, 0)] + 0.75).abs() < 1e-15);
        assert_eq!(out.k, 1);
    }

    #[test]
    fn pointwise_fixed_point_on_empty_graph() {
        let p = random_instance(4, 4, 2, SetKind::Unconstrained).unwrap();
        let x = p.resources();
        let lambda = p.gradient(&x);
        let s = NetworkState::new(x, lambda, Matrix::from_element(4, 2, 0.3)).unwrap();
        let out = sa_step_with(&s, &p, &Matrix::zeros(4, 4), 0.7, &NoiseRealization::zeros(4, 2)).unwrap();
        assert!((&out.x - &s.x).amax() < 1e-15);
        assert!((&out.lambda - &s.lambda).amax() < 1e-15);
        assert_eq!(out.z, s.z);
    }

    #[test]
    fn compact_form_matches_drift_plus_aggregate_noise() {
        let p = random_instance(8, 5, 2, SetKind::Unconstrained).unwrap();
        let model = GraphModel::erdos_renyi_pool(5, 6, 0.3, 0.6, 2).unwrap();
        let lbar = mean_laplacian(&model).matrix;
        let g = &model.pool().unwrap()[1];
        let s = NetworkState::new(
            Matrix::from_fn(5, 2, |i, k| (i as f64 - 2.0) * 0.3 + k as f64),
            Matrix::from_fn(5, 2, |i, k| (i * k) as f64 * 0.1),
            Matrix::from_fn(5, 2, |i, k| (i + k) as f64 * -0.2),
        )
        .unwrap();
        let streams = StepStreams::new(99, 3);
        let (next, real) = sa_step(&s, &p, g, &NoiseConfig::demand_response(), 0.05, &streams).unwrap();
        let j = drift(&s, &p, &lbar).unwrap();
        let (xi_x, xi_l, xi_z) = aggregate_noise(&s, g.laplacian(), &lbar, g.adjacency(), &real);
        let alpha = 0.05;
        assert!((&next.x - (&s.x + alpha * (&j.dx + xi_x))).amax() < 1e-12);
        assert!((&next.lambda - (&s.lambda + alpha * (&j.dlambda + xi_l))).amax() < 1e-12);
        assert!((&next.z - (&s.z + alpha * (&j.dz + xi_z))).amax() < 1e-12);
    }
}
