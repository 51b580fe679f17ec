//! Central finite-difference verification of analytic gradients.

use super::params::ParamSet;
use super::tape::DiffError;
use crate::Mat;

/// Outcome for one parameter.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checks: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.max_rel_err < self.tolerance)
    }

    /// One line per parameter, suitable for CLI output.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.max_rel_err < self.tolerance { "ok" } else { "FAIL" };
            out.push_str(&format!(
                "{:<28} max_rel_err {:>12.3e}  max_abs_err {:>12.3e}  {}\n",
                c.name, c.max_rel_err, c.max_abs_err, status
            ));
        }
        out
    }
}

/// Result of one loss evaluation: the scalar loss, and analytic parameter
/// gradients when requested.
pub type LossEval = (f64, Option<Vec<Mat>>);

/// Compares analytic gradients with central differences for every entry of
/// every parameter. `loss_fn` must be deterministic in the parameter values.
///
/// Relative error uses `|a - n| / max(|a|, |n|, 1e-3)`; the floor keeps
/// finite-difference roundoff noise on near-zero gradients from dominating.
pub fn finite_diff_check<F>(
    params: &ParamSet,
    eps: f64,
    tolerance: f64,
    mut loss_fn: F,
) -> Result<GradCheckReport, DiffError>
where
    F: FnMut(&ParamSet, bool) -> Result<LossEval, DiffError>,
{
    let (_, grads) = loss_fn(params, true)?;
    let grads = grads.expect("loss_fn must return gradients when requested");
    assert_eq!(grads.len(), params.len());

    let mut work = params.clone();
    let mut checks = Vec::with_capacity(params.len());
    for idx in 0..params.len() {
        let name = params.at(idx).name.clone();
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        let dim = params.at(idx).value.raw_dim();
        let rows = dim[0];
        let cols = dim[1];
        for i in 0..rows {
            for j in 0..cols {
                let orig = work.at(idx).value[[i, j]];
                work.at_mut(idx).value[[i, j]] = orig + eps;
                let (lp, _) = loss_fn(&work, false)?;
                work.at_mut(idx).value[[i, j]] = orig - eps;
                let (lm, _) = loss_fn(&work, false)?;
                work.at_mut(idx).value[[i, j]] = orig;
                let numeric = (lp - lm) / (2.0 * eps);
                let analytic = grads[idx][[i, j]];
                let abs = (analytic - numeric).abs();
                let rel = abs / analytic.abs().max(numeric.abs()).max(1e-3);
                max_abs = max_abs.max(abs);
                max_rel = max_rel.max(rel);
            }
        }
        checks.push(ParamCheck { name, max_rel_err: max_rel, max_abs_err: max_abs });
    }
    Ok(GradCheckReport { checks, tolerance })
}
