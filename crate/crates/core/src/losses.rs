//! Training objectives, as plain values and as tape expressions.

use partforge_autodiff::ops::logsumexp_slice;
use partforge_autodiff::{Tape, TensorError, Var};
use thiserror::Error;

use crate::geometry::{distance, Point3};
use crate::nn::{GaussianMixture, MixtureError, MixtureVars};

/// Contrastive margin.
pub const MARGIN: f64 = 10.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("log-sum-exp of an empty list")]
    Empty,
    #[error(transparent)]
    Mixture(#[from] MixtureError),
}

/// `max(x) + ln Σ exp(x − max(x))`.
pub fn logsumexp(values: &[f64]) -> Result<f64, LossError> {
    if values.is_empty() {
        return Err(LossError::Empty);
    }
    Ok(logsumexp_slice(values))
}

/// Energy of `y` under the mixture: its negative log-likelihood.
pub fn gmm_nll(mix: &GaussianMixture, y: &[f64]) -> Result<f64, LossError> {
    Ok(mix.nll(y)?)
}

/// Tape version of [`gmm_nll`]; `y` is a `[1, D]` row. Returns `[1, 1]`.
pub fn gmm_nll_tape(tape: &mut Tape, mix: &MixtureVars, y: Var) -> Result<Var, TensorError> {
    let (k, d) = {
        let s = tape.value(mix.mu).shape();
        (s[0], s[1])
    };
    let diff = tape.sub(mix.mu, y)?;
    let z = tape.div(diff, mix.sigma)?;
    let z2 = tape.square(z);
    let half = tape.scale(z2, 0.5);
    let log_sigma = tape.log(mix.sigma);
    let per_dim = tape.add(half, log_sigma)?;
    let per_mode = tape.sum_axis(per_dim, 1)?;
    let per_mode = tape.reshape(per_mode, &[1, k])?;
    let scores = tape.sub(mix.log_phi, per_mode)?;
    let scores = tape.add_scalar(scores, -0.5 * d as f64 * LN_2PI);
    let lse = tape.logsumexp(scores)?;
    Ok(tape.scale(lse, -1.0))
}

/// `max(m + e_pos − e_neg, 0)`.
pub fn contrastive_loss(e_pos: f64, e_neg: f64, margin: f64) -> f64 {
    (margin + e_pos - e_neg).max(0.0)
}

/// Tape version of [`contrastive_loss`]. At exactly zero the hinge counts as
/// inactive and passes no gradient.
pub fn contrastive_tape(tape: &mut Tape, e_pos: Var, e_neg: Var, margin: f64) -> Result<Var, TensorError> {
    let d = tape.sub(e_pos, e_neg)?;
    let shifted = tape.add_scalar(d, margin);
    Ok(tape.relu(shifted))
}

/// Squared Euclidean distance.
pub fn placement_loss(predicted: Point3, target: Point3) -> f64 {
    (0..3).map(|k| (predicted[k] - target[k]).powi(2)).sum()
}

/// Euclidean distance, the reported placement error.
pub fn placement_error(predicted: Point3, target: Point3) -> f64 {
    distance(predicted, target)
}

/// Tape version of [`placement_loss`] for `[1, 3]` rows.
pub fn placement_loss_tape(tape: &mut Tape, predicted: Var, target: Var) -> Result<Var, TensorError> {
    let d = tape.sub(predicted, target)?;
    let sq = tape.square(d);
    Ok(tape.sum(sq))
}
