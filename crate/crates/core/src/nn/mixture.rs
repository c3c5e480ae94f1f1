use partforge_autodiff::ops::logsumexp_slice;
use partforge_autodiff::Tape;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::MixtureVars;

#[derive(Debug, Error, PartialEq)]
pub enum MixtureError {
    #[error("mixture has no modes")]
    Empty,
    #[error("mode {mode}: expected dimension {expected}, got {got}")]
    Dimension { mode: usize, expected: usize, got: usize },
    #[error("mode {mode}, dimension {dim}: sigma {value} is not positive")]
    NonPositiveSigma { mode: usize, dim: usize, value: f64 },
    #[error("weights must be non-negative and sum to one (sum {0})")]
    Weights(f64),
}

/// Diagonal Gaussian mixture over the embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    /// Log-weights; kept separately from `phi` so tiny weights stay exact.
    pub log_phi: Vec<f64>,
    pub phi: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

impl GaussianMixture {
    /// Builds a mixture from weights, checking every invariant.
    pub fn new(phi: Vec<f64>, mu: Vec<Vec<f64>>, sigma: Vec<Vec<f64>>) -> Result<Self, MixtureError> {
        let m = Self {
            log_phi: phi.iter().map(|p| p.ln()).collect(),
            phi,
            mu,
            sigma,
        };
        m.validate()?;
        Ok(m)
    }

    pub(super) fn from_tape(tape: &Tape, v: &MixtureVars) -> Self {
        let rows = |t: &partforge_autodiff::Tensor| -> Vec<Vec<f64>> {
            (0..t.shape()[0]).map(|r| t.row_slice(r).to_vec()).collect()
        };
        Self {
            log_phi: tape.value(v.log_phi).data().to_vec(),
            phi: tape.value(v.phi).data().to_vec(),
            mu: rows(tape.value(v.mu)),
            sigma: rows(tape.value(v.sigma)),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.phi.len()
    }

    pub fn dim(&self) -> usize {
        self.mu.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), MixtureError> {
        let k = self.phi.len();
        if k == 0 {
            return Err(MixtureError::Empty);
        }
        let d = self.dim();
        if self.log_phi.len() != k || self.mu.len() != k || self.sigma.len() != k {
            return Err(MixtureError::Dimension {
                mode: k,
                expected: k,
                got: self.mu.len().min(self.sigma.len()),
            });
        }
        for mode in 0..k {
            for rows in [&self.mu, &self.sigma] {
                if rows[mode].len() != d {
                    return Err(MixtureError::Dimension {
                        mode,
                        expected: d,
                        got: rows[mode].len(),
                    });
                }
            }
            for (dim, &value) in self.sigma[mode].iter().enumerate() {
                if !(value > 0.0) {
                    return Err(MixtureError::NonPositiveSigma { mode, dim, value });
                }
            }
        }
        let sum: f64 = self.phi.iter().sum();
        if self.phi.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(MixtureError::Weights(sum));
        }
        Ok(())
    }

    /// Per-mode log-densities `log φ_k + log N(y; μ_k, σ_k)`.
    pub fn component_log_densities(&self, y: &[f64]) -> Vec<f64> {
        let d = y.len() as f64;
        (0..self.n_modes())
            .map(|k| {
                let mut acc = 0.0;
                for ((&yd, &m), &s) in y.iter().zip(&self.mu[k]).zip(&self.sigma[k]) {
                    let z = (yd - m) / s;
                    acc += 0.5 * z * z + s.ln();
                }
                self.log_phi[k] - acc - 0.5 * d * LN_2PI
            })
            .collect()
    }

    /// Negative log-likelihood of `y`, evaluated in log space.
    pub fn nll(&self, y: &[f64]) -> Result<f64, MixtureError> {
        self.validate()?;
        if y.len() != self.dim() {
            return Err(MixtureError::Dimension {
                mode: 0,
                expected: self.dim(),
                got: y.len(),
            });
        }
        Ok(-logsumexp_slice(&self.component_log_densities(y)))
    }

    /// Mixture density at `y` (may underflow to zero far from every mode).
    pub fn density(&self, y: &[f64]) -> Result<f64, MixtureError> {
        Ok((-self.nll(y)?).exp())
    }

    /// Draws a mode by weight, then a point from its diagonal Gaussian.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Vec<f64>) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut mode = self.n_modes() - 1;
        for (k, &p) in self.phi.iter().enumerate() {
            acc += p;
            if u < acc {
                mode = k;
                break;
            }
        }
        let point = self.mu[mode]
            .iter()
            .zip(&self.sigma[mode])
            .map(|(&m, &s)| {
                let z: f64 = StandardNormal.sample(rng);
                m + s * z
            })
            .collect();
        (mode, point)
    }
}
