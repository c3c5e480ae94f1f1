//! Central finite-difference gradient checking.
//!
//! The checker only ever evaluates the forward pass of the closure it is
//! given; the analytic gradient it compares against comes from a single
//! [`Tape::backward`] call.

use crate::params::{BoundParams, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Denominator floor for the relative error.
    pub floor: f64,
    /// Check at most this many entries per parameter tensor (evenly strided);
    /// `None` checks all of them.
    pub max_entries_per_tensor: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-4,
            max_entries_per_tensor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Entries whose perturbation crossed a relu/max/clamp branch.
    pub skipped: usize,
    pub max_rel_error: f64,
    /// `(tensor name, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares tape gradients of `loss_fn` with central differences over the
/// entries of `params`. `loss_fn` must build a scalar loss on the tape from
/// the bound parameters and be a deterministic function of them.
pub fn check_gradients<F>(params: &ParamSet, cfg: &GradCheckConfig, mut loss_fn: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &BoundParams) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = loss_fn(&mut tape, &bound)?;
    let grads = tape.backward(loss)?;
    let analytic = bound.gradients(&tape, &grads);
    let base_signature = tape.branch_signature();

    let mut eval = |p: &ParamSet| -> Result<(f64, u64)> {
        let mut t = Tape::new();
        let b = p.bind_frozen(&mut t);
        let l = loss_fn(&mut t, &b)?;
        Ok((t.value(l).item(), t.branch_signature()))
    };

    let mut report = GradCheckReport {
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let mut work = params.clone();
    for ti in 0..params.len() {
        let n = params.tensor(ti).len();
        let stride = match cfg.max_entries_per_tensor {
            Some(k) if k > 0 && n > k => n.div_ceil(k),
            _ => 1,
        };
        for j in (0..n).step_by(stride) {
            let orig = params.tensor(ti).data()[j];
            work.tensor_mut(ti).data_mut()[j] = orig + cfg.step;
            let (plus, sig_plus) = eval(&work)?;
            work.tensor_mut(ti).data_mut()[j] = orig - cfg.step;
            let (minus, sig_minus) = eval(&work)?;
            work.tensor_mut(ti).data_mut()[j] = orig;
            if sig_plus != base_signature || sig_minus != base_signature {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[ti].data()[j];
            let err = relative_error(a, numeric, cfg.floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((params.name(ti).to_string(), j, a, numeric));
            }
        }
    }
    Ok(report)
}
