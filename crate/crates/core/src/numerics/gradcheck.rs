//! Central-difference verification of tape gradients.

use super::{ParamId, ParamSet, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

/// Compares the tape gradient of `objective` with central differences over every
/// entry of every parameter in `params`.
///
/// The relative error of one entry is `|a - n| / max(1, |a|, |n|)`, which stays
/// meaningful when both derivatives are close to zero.
pub fn grad_check<F>(params: &ParamSet, objective: F, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    grad_check_subset(params, &params.ids().collect::<Vec<_>>(), objective, eps, tol)
}

/// As [`grad_check`], restricted to the listed parameters.
pub fn grad_check_subset<F>(
    params: &ParamSet,
    ids: &[ParamId],
    objective: F,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let eval = |ps: &ParamSet| -> Result<f64> {
        let mut tape = Tape::with_params(ps);
        let loss = objective(&mut tape)?;
        let v = tape.value(loss).data()[0];
        if !v.is_finite() {
            return Err(Error::Verification("objective is not finite".into()));
        }
        Ok(v)
    };

    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::with_params(params);
        let loss = objective(&mut tape)?;
        if !tape.value(loss).data()[0].is_finite() {
            return Err(Error::Verification("objective is not finite".into()));
        }
        let grads = tape.backward(loss)?;
        ids.iter()
            .map(|&id| match grads.param(id) {
                Some(g) => g.data().to_vec(),
                None => vec![0.0; params.get(id).len()],
            })
            .collect()
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
        tol,
    };
    for (k, &id) in ids.iter().enumerate() {
        for i in 0..params.get(id).len() {
            let orig = params.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + eps;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig - eps;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[k][i];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((params.name(id).to_string(), i));
                }
            }
            report.entries_checked += 1;
        }
    }
    Ok(report)
}
