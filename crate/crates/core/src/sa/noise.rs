//! The four noise processes: gradient observation noise ν, resource observation noise δ,
//! and the channel noises ζ (on received multipliers) and ε (on received auxiliaries).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::problem::{Matrix, Vector};
use crate::rng::{Channel, StepStreams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GradientNoise {
    #[default]
    None,
    /// i.i.d. `N(0, σ²)` per component.
    Gaussian { sigma: f64 },
    /// `ν = 2Ψx + θ` with fresh `Ψ_ab ~ N(0, σ_Ψ²)` and `θ_a ~ N(0, σ_θ²)` every step: the
    /// gradient error of the sampled objective `xᵀ(Q + Ψ)x + (c + θ)ᵀx`.
    SampledQuadratic { sigma_psi: f64, sigma_theta: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdditiveNoise {
    #[default]
    None,
    /// i.i.d. `N(0, σ²)` per component.
    Gaussian { sigma: f64 },
}

impl AdditiveNoise {
    pub fn sigma(&self) -> f64 {
        match *self {
            AdditiveNoise::None => 0.0,
            AdditiveNoise::Gaussian { sigma } => sigma,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    #[serde(default)]
    pub gradient: GradientNoise,
    #[serde(default)]
    pub resource: AdditiveNoise,
    #[serde(default)]
    pub channel_lambda: AdditiveNoise,
    #[serde(default)]
    pub channel_z: AdditiveNoise,
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self::default()
    }

    /// Demand-response setting: sampled-quadratic gradient noise with variance 0.5 entries,
    /// unit-covariance resource and channel noise.
    pub fn demand_response() -> Self {
        let s = 0.5f64.sqrt();
        Self {
            gradient: GradientNoise::SampledQuadratic {
                sigma_psi: s,
                sigma_theta: s,
            },
            resource: AdditiveNoise::Gaussian { sigma: 1.0 },
            channel_lambda: AdditiveNoise::Gaussian { sigma: 1.0 },
            channel_z: AdditiveNoise::Gaussian { sigma: 1.0 },
        }
    }

    pub fn is_noiseless(&self) -> bool {
        *self == Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let mut sigmas = vec![
            self.resource.sigma(),
            self.channel_lambda.sigma(),
            self.channel_z.sigma(),
        ];
        match self.gradient {
            GradientNoise::None => {}
            GradientNoise::Gaussian { sigma } => sigmas.push(sigma),
            GradientNoise::SampledQuadratic { sigma_psi, sigma_theta } => {
                sigmas.push(sigma_psi);
                sigmas.push(sigma_theta);
            }
        }
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(invalid("noise standard deviations must be finite and >= 0"));
        }
        Ok(())
    }
}

fn gaussian_vec<R: Rng>(rng: &mut R, m: usize, sigma: f64) -> Vector {
    Vector::from_fn(m, |_, _| sigma * rng.sample::<f64, _>(StandardNormal))
}

/// One draw of the gradient noise at allocation `x`.
pub fn draw_gradient_noise<R: Rng>(noise: &GradientNoise, x: &Vector, rng: &mut R) -> Vector {
    let m = x.len();
    match *noise {
        GradientNoise::None => Vector::zeros(m),
        GradientNoise::Gaussian { sigma } => gaussian_vec(rng, m, sigma),
        GradientNoise::SampledQuadratic { sigma_psi, sigma_theta } => {
            let psi = Matrix::from_fn(m, m, |_, _| sigma_psi * rng.sample::<f64, _>(StandardNormal));
            let theta = gaussian_vec(rng, m, sigma_theta);
            2.0 * (psi * x) + theta
        }
    }
}

/// One draw of an additive noise vector.
pub fn draw_additive<R: Rng>(noise: &AdditiveNoise, m: usize, rng: &mut R) -> Vector {
    match *noise {
        AdditiveNoise::None => Vector::zeros(m),
        AdditiveNoise::Gaussian { sigma } => gaussian_vec(rng, m, sigma),
    }
}

/// Constant `c` with `E‖ν‖² ≤ c(1 + ‖x‖²)` for allocations of dimension `m`.
pub fn gradient_noise_bound(noise: &GradientNoise, m: usize) -> f64 {
    let m = m as f64;
    match *noise {
        GradientNoise::None => 0.0,
        GradientNoise::Gaussian { sigma } => m * sigma * sigma,
        // E‖2Ψx‖² = 4 m σ_Ψ² ‖x‖², E‖θ‖² = m σ_θ²
        GradientNoise::SampledQuadratic { sigma_psi, sigma_theta } => {
            (4.0 * m * sigma_psi * sigma_psi).max(m * sigma_theta * sigma_theta)
        }
    }
}

/// Exact `E‖ν‖²` at allocation `x`.
pub fn gradient_noise_second_moment(noise: &GradientNoise, x: &Vector) -> f64 {
    let m = x.len() as f64;
    match *noise {
        GradientNoise::None => 0.0,
        GradientNoise::Gaussian { sigma } => m * sigma * sigma,
        GradientNoise::SampledQuadratic { sigma_psi, sigma_theta } => {
            4.0 * m * sigma_psi * sigma_psi * x.norm_squared() + m * sigma_theta * sigma_theta
        }
    }
}

/// All noise values used by one synchronous round.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRealization {
    n: usize,
    m: usize,
    /// Row `i` is `ν_i`.
    pub nu: Matrix,
    /// Row `i` is `δ_i`.
    pub delta: Matrix,
    zeta: Vec<f64>,
    eps: Vec<f64>,
}

impl NoiseRealization {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            nu: Matrix::zeros(n, m),
            delta: Matrix::zeros(n, m),
            zeta: vec![0.0; n * n * m],
            eps: vec![0.0; n * n * m],
        }
    }

    /// `ζ_ij`: noise on `λ_j` as received by agent `i`.
    pub fn zeta(&self, i: usize, j: usize) -> &[f64] {
        let o = (i * self.n + j) * self.m;
        &self.zeta[o..o + self.m]
    }

    /// `ε_ij`: noise on `z_j` as received by agent `i`.
    pub fn eps(&self, i: usize, j: usize) -> &[f64] {
        let o = (i * self.n + j) * self.m;
        &self.eps[o..o + self.m]
    }

    pub fn set_zeta(&mut self, i: usize, j: usize, v: &[f64]) {
        let o = (i * self.n + j) * self.m;
        self.zeta[o..o + self.m].copy_from_slice(v);
    }

    pub fn set_eps(&mut self, i: usize, j: usize, v: &[f64]) {
        let o = (i * self.n + j) * self.m;
        self.eps[o..o + self.m].copy_from_slice(v);
    }

    /// `ζ_i = Σ_j a_ij ζ_ij` stacked as rows.
    pub fn aggregated_zeta(&self, adjacency: &Matrix) -> Matrix {
        self.aggregate(adjacency, &self.zeta)
    }

    /// `ε_i = Σ_j a_ij ε_ij` stacked as rows.
    pub fn aggregated_eps(&self, adjacency: &Matrix) -> Matrix {
        self.aggregate(adjacency, &self.eps)
    }

    fn aggregate(&self, adjacency: &Matrix, data: &[f64]) -> Matrix {
        let mut out = Matrix::zeros(self.n, self.m);
        for i in 0..self.n {
            for j in 0..self.n {
                let a = adjacency[(i, j)];
                if a != 0.0 {
                    let o = (i * self.n + j) * self.m;
                    for k in 0..self.m {
                        out[(i, k)] += a * data[o + k];
                    }
                }
            }
        }
        out
    }
}

/// Draws every noise value for one round. Channel noise is drawn only on present edges,
/// each `(i, j)` from its own stream.
pub fn draw_realization(noise: &NoiseConfig, x: &Matrix, adjacency: &Matrix, streams: &StepStreams) -> NoiseRealization {
    let (n, m) = x.shape();
    let mut real = NoiseRealization::zeros(n, m);
    for i in 0..n {
        if noise.gradient != GradientNoise::None {
            let xi = x.row(i).transpose();
            let mut rng = streams.rng(Channel::Gradient, i, 0);
            real.nu.set_row(i, &draw_gradient_noise(&noise.gradient, &xi, &mut rng).transpose());
        }
        if noise.resource != AdditiveNoise::None {
            let mut rng = streams.rng(Channel::Resource, i, 0);
            real.delta.set_row(i, &draw_additive(&noise.resource, m, &mut rng).transpose());
        }
        for j in 0..n {
            if adjacency[(i, j)] == 0.0 {
                continue;
            }
            if noise.channel_lambda != AdditiveNoise::None {
                let mut rng = streams.rng(Channel::Lambda, i, j);
                real.set_zeta(i, j, draw_additive(&noise.channel_lambda, m, &mut rng).as_slice());
            }
            if noise.channel_z != AdditiveNoise::None {
                let mut rng = streams.rng(Channel::Auxiliary, i, j);
                real.set_eps(i, j, draw_additive(&noise.channel_z, m, &mut rng).as_slice());
            }
        }
    }
    real
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noise_bound_dominates_second_moment() {
        let g = GradientNoise::SampledQuadratic {
            sigma_psi: 0.5f64.sqrt(),
            sigma_theta: 0.5f64.sqrt(),
        };
        let c = gradient_noise_bound(&g, 3);
        for scale in [0.0, 1.0, 10.0] {
            let x = Vector::from_element(3, scale / 3f64.sqrt());
            assert!(gradient_noise_second_moment(&g, &x) <= c * (1.0 + x.norm_squared()) + 1e-12);
        }
    }

    #[test]
    fn no_noise_draws_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Vector::from_element(2, 1.0);
        assert_eq!(draw_gradient_noise(&GradientNoise::None, &x, &mut rng), Vector::zeros(2));
        assert_eq!(draw_additive(&AdditiveNoise::None, 2, &mut rng), Vector::zeros(2));
    }

    #[test]
    fn channel_noise_only_on_edges() {
        let mut adj = Matrix::zeros(3, 3);
        adj[(0, 1)] = 1.0;
        let cfg = NoiseConfig::demand_response();
        let r = draw_realization(&cfg, &Matrix::zeros(3, 2), &adj, &StepStreams::new(1, 0));
        assert!(r.zeta(0, 1).iter().any(|v| *v != 0.0));
        assert!(r.zeta(1, 0).iter().all(|v| *v == 0.0));
        assert!(r.eps(0, 2).iter().all(|v| *v == 0.0));
        let agg = r.aggregated_zeta(&adj);
        assert_eq!(agg.row(0).iter().cloned().collect::<Vec<_>>(), r.zeta(0, 1).to_vec());
    }
}
