use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::problem::{Matrix, ProblemSpec};

/// Full algorithm state `S = (X, Λ, Z)`; row `i` of each block belongs to agent `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState {
    pub x: Matrix,
    pub lambda: Matrix,
    pub z: Matrix,
    pub k: usize,
}

impl NetworkState {
    pub fn new(x: Matrix, lambda: Matrix, z: Matrix) -> Result<Self> {
        if x.shape() != lambda.shape() || x.shape() != z.shape() {
            return Err(invalid("state blocks must share one n x m shape"));
        }
        Ok(Self { x, lambda, z, k: 0 })
    }

    /// `X = P_Ω(0)`, `Λ = Z = 0`.
    pub fn initial(problem: &ProblemSpec) -> Result<Self> {
        let (n, m) = (problem.n(), problem.m());
        Ok(Self {
            x: problem.project_rows(&Matrix::zeros(n, m))?,
            lambda: Matrix::zeros(n, m),
            z: Matrix::zeros(n, m),
            k: 0,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.x.shape()
    }

    /// Euclidean norm of the stacked state.
    pub fn norm(&self) -> f64 {
        (self.x.norm_squared() + self.lambda.norm_squared() + self.z.norm_squared()).sqrt()
    }

    pub fn distance(&self, other: &NetworkState) -> f64 {
        ((&self.x - &other.x).norm_squared()
            + (&self.lambda - &other.lambda).norm_squared()
            + (&self.z - &other.z).norm_squared())
        .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.lambda.iter()).chain(self.z.iter()).all(|v| v.is_finite())
    }

    pub(crate) fn check_against(&self, problem: &ProblemSpec) -> Result<()> {
        if self.shape() != (problem.n(), problem.m()) {
            return Err(invalid(format!(
                "state shape {:?} does not match problem ({}, {})",
                self.shape(),
                problem.n(),
                problem.m()
            )));
        }
        Ok(())
    }
}

/// Row-major JSON form of a state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateDoc {
    pub k: usize,
    #[serde(rename = "X")]
    pub x: Vec<Vec<f64>>,
    #[serde(rename = "Lambda")]
    pub lambda: Vec<Vec<f64>>,
    #[serde(rename = "Z")]
    pub z: Vec<Vec<f64>>,
}

impl From<&NetworkState> for StateDoc {
    fn from(s: &NetworkState) -> Self {
        Self {
            k: s.k,
            x: crate::io::rows(&s.x),
            lambda: crate::io::rows(&s.lambda),
            z: crate::io::rows(&s.z),
        }
    }
}

impl StateDoc {
    pub fn to_state(&self) -> Result<NetworkState> {
        let mut s = NetworkState::new(
            crate::io::matrix_from_rows(&self.x)?,
            crate::io::matrix_from_rows(&self.lambda)?,
            crate::io::matrix_from_rows(&self.z)?,
        )?;
        s.k = self.k;
        Ok(s)
    }
}
