use serde::Serialize;

use super::{grad_total_loss, total_loss, EmbeddingTable, TrainerConfig};
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor, so near-zero gradients are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteDiffReport {
    pub max_rel_error: f64,
    /// Flat index and name of the worst coordinate.
    pub worst_index: usize,
    pub worst_param: String,
    pub analytic: f64,
    pub numeric: f64,
    pub params_checked: usize,
}

/// Compares `grad_total_loss` with central differences of `total_loss` over
/// every parameter.
pub fn finite_diff_check(
    table: &EmbeddingTable,
    batch: &[(usize, usize)],
    cfg: &TrainerConfig,
) -> Result<FiniteDiffReport> {
    let (_, grad) = grad_total_loss(table, batch, cfg)?;
    finite_diff_against(table, batch, cfg, &grad)
}

/// As [`finite_diff_check`] but against a caller-supplied gradient.
pub fn finite_diff_against(
    table: &EmbeddingTable,
    batch: &[(usize, usize)],
    cfg: &TrainerConfig,
    grad: &EmbeddingTable,
) -> Result<FiniteDiffReport> {
    let mut probe = table.clone();
    let mut report = FiniteDiffReport {
        max_rel_error: f64::NEG_INFINITY,
        worst_index: 0,
        worst_param: table.param_name(0),
        analytic: grad.param(0),
        numeric: f64::NAN,
        params_checked: table.num_params(),
    };
    for k in 0..table.num_params() {
        let orig = table.param(k);
        *probe.param_mut(k) = orig + FD_STEP;
        let up = total_loss(&probe, batch, cfg)?.total;
        *probe.param_mut(k) = orig - FD_STEP;
        let down = total_loss(&probe, batch, cfg)?.total;
        *probe.param_mut(k) = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let analytic = grad.param(k);
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        // NaN compares false, so force it to be reported.
        if err > report.max_rel_error || err.is_nan() {
            report = FiniteDiffReport {
                max_rel_error: if err.is_nan() { f64::INFINITY } else { err },
                worst_index: k,
                worst_param: table.param_name(k),
                analytic,
                numeric,
                params_checked: table.num_params(),
            };
            if err.is_nan() {
                break;
            }
        }
    }
    Ok(report)
}
