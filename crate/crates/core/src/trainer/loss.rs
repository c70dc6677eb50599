//! Loss and hand-derived gradients.
//!
//! Partial derivatives are taken treating each point's space and time
//! coordinates as independent; the time coordinate is then folded back into
//! the space gradient through `dt/ds = s / t` before passing through the
//! exponential map.

use serde::{Deserialize, Serialize};

use super::{EmbeddingTable, TrainerConfig};
use crate::error::{HypeError, Result};
use crate::lorentz::{
    acosh1p, aperture_from_norm, cosh_excess, dot, exp_map_origin_slice, Curvature, LorentzPoint,
};

/// Below this `sqrt(c) * |x_space|` a text is treated as sitting at the
/// origin, where the cone covers everything and the loss is zero.
const APEX_EPS: f64 = 1e-12;
/// Below this `sinh(sqrt(c) d)` two points are treated as coincident: the
/// distance gradient is set to zero and the exterior angle is skipped.
const COINCIDENT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contrastive: f64,
    pub entailment: f64,
    /// `contrastive + lambda_entail * entailment`
    pub total: f64,
}

/// Scales every tangent parameter by alpha and maps it onto the manifold.
pub fn forward_points(table: &EmbeddingTable, curv: Curvature) -> (Vec<LorentzPoint>, Vec<LorentzPoint>) {
    let texts = (0..table.texts())
        .map(|i| exp_map_origin_slice(&table.scaled_text(i), curv))
        .collect();
    let images = (0..table.images())
        .map(|i| exp_map_origin_slice(&table.scaled_image(i), curv))
        .collect();
    (texts, images)
}

pub fn total_loss(table: &EmbeddingTable, batch: &[(usize, usize)], cfg: &TrainerConfig) -> Result<LossBreakdown> {
    Ok(evaluate(table, batch, cfg, false)?.0)
}

/// Loss and its gradient with respect to every parameter of `table`.
pub fn grad_total_loss(
    table: &EmbeddingTable,
    batch: &[(usize, usize)],
    cfg: &TrainerConfig,
) -> Result<(LossBreakdown, EmbeddingTable)> {
    let (loss, grad) = evaluate(table, batch, cfg, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

fn check_batch(table: &EmbeddingTable, batch: &[(usize, usize)], cfg: &TrainerConfig) -> Result<()> {
    if batch.is_empty() {
        return Err(HypeError::InvalidArgument("empty batch".into()));
    }
    if table.dim != cfg.dim {
        return Err(HypeError::InvalidArgument(format!(
            "table dim {} does not match config dim {}",
            table.dim, cfg.dim
        )));
    }
    for &(t, i) in batch {
        if t >= table.texts() || i >= table.images() {
            return Err(HypeError::InvalidInput(format!("batch pair ({t}, {i}) is out of range")));
        }
    }
    Ok(())
}

/// Distance and `d(distance)/dz` where `z = -c<x,y>_L`.
fn distance_and_slope(x: &LorentzPoint, y: &LorentzPoint, curv: Curvature) -> (f64, f64) {
    let delta = cosh_excess(x.space(), x.time(), y.space(), y.time(), curv.value());
    let d = acosh1p(delta) / curv.sqrt();
    let sinh = (delta * (2.0 + delta)).sqrt();
    let slope = if sinh <= COINCIDENT_EPS * (1.0 + delta) {
        0.0
    } else {
        1.0 / (curv.sqrt() * sinh)
    };
    (d, slope)
}

/// Upstream gradient for one point, space and time treated independently.
#[derive(Clone)]
struct PointGrad {
    space: Vec<f64>,
    time: f64,
}

impl PointGrad {
    fn zeros(dim: usize) -> Self {
        PointGrad {
            space: vec![0.0; dim],
            time: 0.0,
        }
    }
}

/// Entailment hinge for one pair, accumulating `scale * dL/d(coords)` when
/// gradients are requested.
fn entailment_term(
    x: &LorentzPoint,
    y: &LorentzPoint,
    cfg: &TrainerConfig,
    grads: Option<(&mut PointGrad, &mut PointGrad, f64)>,
) -> f64 {
    let c = cfg.curvature.value();
    let (xs, xt, ys, yt) = (x.space(), x.time(), y.space(), y.time());
    let rho = dot(xs, xs).sqrt();
    if cfg.curvature.sqrt() * rho < APEX_EPS {
        return 0.0;
    }
    let delta = cosh_excess(xs, xt, ys, yt, c);
    let w = -(1.0 + delta);
    let s = (delta * (2.0 + delta)).sqrt();
    if s <= COINCIDENT_EPS * (1.0 + delta) {
        return 0.0;
    }
    let num = yt + xt * w;
    let den = rho * s;
    let q = num / den;
    let ext = q.clamp(-1.0, 1.0).acos();
    let aper = aperture_from_norm(rho, cfg.curvature, cfg.cone);
    let loss = ext - aper;
    if loss <= 0.0 {
        return 0.0;
    }
    if let Some((gx, gy, scale)) = grads {
        let n = xs.len();
        if q.abs() < 1.0 {
            let dext_dq = -1.0 / (1.0 - q * q).sqrt();
            let a = scale * dext_dq / den;
            // dq = (dN - q dD) / D
            let ws = w / s;
            for j in 0..n {
                let dn_dxs = xt * c * ys[j];
                let dd_dxs = xs[j] / rho * s + rho * ws * c * ys[j];
                gx.space[j] += a * (dn_dxs - q * dd_dxs);
                let dn_dys = xt * c * xs[j];
                let dd_dys = rho * ws * c * xs[j];
                gy.space[j] += a * (dn_dys - q * dd_dys);
            }
            let dn_dxt = w - c * xt * yt;
            let dd_dxt = -rho * ws * c * yt;
            gx.time += a * (dn_dxt - q * dd_dxt);
            let dn_dyt = 1.0 - c * xt * xt;
            let dd_dyt = -rho * ws * c * xt;
            gy.time += a * (dn_dyt - q * dd_dyt);
        }
        let arg = 2.0 * cfg.cone.k() / (cfg.curvature.sqrt() * rho);
        if arg < 1.0 {
            // d asin(arg) / d xs = -arg / (rho^2 sqrt(1 - arg^2)) * xs
            let f = scale * arg / (rho * rho * (1.0 - arg * arg).sqrt());
            for j in 0..n {
                gx.space[j] += f * xs[j];
            }
        }
    }
    loss
}

/// `(sinh t / t, (t cosh t - sinh t) / t^3)` with series for small `t`.
fn exp_map_coefficients(theta: f64) -> (f64, f64) {
    if theta < 1e-2 {
        let t2 = theta * theta;
        (1.0 + t2 / 6.0 + t2 * t2 / 120.0, 1.0 / 3.0 + t2 / 30.0 + t2 * t2 / 840.0)
    } else {
        let (sh, ch) = (theta.sinh(), theta.cosh());
        (sh / theta, (theta * ch - sh) / (theta * theta * theta))
    }
}

/// Pulls a point gradient back to the scaled tangent `u = alpha * v`.
fn backprop_exp_map(u: &[f64], point: &LorentzPoint, g: &PointGrad, curv: Curvature) -> Vec<f64> {
    let c = curv.value();
    let theta = curv.sqrt() * dot(u, u).sqrt();
    let (gf, h) = exp_map_coefficients(theta);
    let t = point.time();
    let total: Vec<f64> = g
        .space
        .iter()
        .zip(point.space())
        .map(|(&gs, &s)| gs + g.time * s / t)
        .collect();
    let ug = dot(u, &total);
    total
        .iter()
        .zip(u)
        .map(|(&gs, &ui)| gf * gs + c * h * ug * ui)
        .collect()
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn evaluate(
    table: &EmbeddingTable,
    batch: &[(usize, usize)],
    cfg: &TrainerConfig,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<EmbeddingTable>)> {
    check_batch(table, batch, cfg)?;
    let curv = cfg.curvature;
    let b = batch.len();
    let bf = b as f64;
    let tau = table.temperature();
    let (texts, images) = forward_points(table, curv);

    let mut dist = vec![0.0; b * b];
    let mut slope = vec![0.0; b * b];
    for (r, &(t, _)) in batch.iter().enumerate() {
        for (col, &(_, i)) in batch.iter().enumerate() {
            let (d, s) = distance_and_slope(&texts[t], &images[i], curv);
            dist[r * b + col] = d;
            slope[r * b + col] = s;
        }
    }
    let logit = |r: usize, col: usize| -dist[r * b + col] / tau;

    let row_lse: Vec<f64> = (0..b).map(|r| log_sum_exp((0..b).map(|col| logit(r, col)))).collect();
    let col_lse: Vec<f64> = (0..b).map(|col| log_sum_exp((0..b).map(|r| logit(r, col)))).collect();
    let row_ce: f64 = (0..b).map(|r| row_lse[r] - logit(r, r)).sum::<f64>() / bf;
    let col_ce: f64 = (0..b).map(|col| col_lse[col] - logit(col, col)).sum::<f64>() / bf;
    let contrastive = 0.5 * (row_ce + col_ce);

    let mut text_grads = vec![PointGrad::zeros(table.dim); if want_grad { table.texts() } else { 0 }];
    let mut image_grads = vec![PointGrad::zeros(table.dim); if want_grad { table.images() } else { 0 }];

    let mut entail_sum = 0.0;
    let lambda = cfg.lambda_entail;
    for &(t, i) in batch {
        let grads = if want_grad && lambda != 0.0 {
            Some((&mut text_grads[t], &mut image_grads[i], lambda / bf))
        } else {
            None
        };
        entail_sum += entailment_term(&texts[t], &images[i], cfg, grads);
    }
    let entailment = entail_sum / bf;
    let loss = LossBreakdown {
        contrastive,
        entailment,
        total: contrastive + lambda * entailment,
    };
    if !want_grad {
        return Ok((loss, None));
    }

    let mut grad = table.zeros_like();
    let c = curv.value();
    for (r, &(t, _)) in batch.iter().enumerate() {
        for (col, &(_, i)) in batch.iter().enumerate() {
            let diag = if r == col { 1.0 } else { 0.0 };
            let p_row = (logit(r, col) - row_lse[r]).exp();
            let p_col = (logit(r, col) - col_lse[col]).exp();
            let g_logit = ((p_row - diag) + (p_col - diag)) / (2.0 * bf);
            let d = dist[r * b + col];
            // logit = -d exp(-log_tau)
            grad.log_temperature += g_logit * d / tau;
            let g_z = -g_logit / tau * slope[r * b + col];
            if g_z == 0.0 {
                continue;
            }
            // z = -c (xs.ys - xt yt)
            let (x, y) = (&texts[t], &images[i]);
            let (gx, gy) = (&mut text_grads[t], &mut image_grads[i]);
            for j in 0..table.dim {
                gx.space[j] -= g_z * c * y.space()[j];
                gy.space[j] -= g_z * c * x.space()[j];
            }
            gx.time += g_z * c * y.time();
            gy.time += g_z * c * x.time();
        }
    }

    let alpha = table.alpha();
    let mut g_log_alpha = 0.0;
    for (k, g) in text_grads.iter().enumerate() {
        let u = table.scaled_text(k);
        let gu = backprop_exp_map(&u, &texts[k], g, curv);
        g_log_alpha += dot(&u, &gu);
        for (dst, v) in grad.text_params[k * table.dim..(k + 1) * table.dim].iter_mut().zip(&gu) {
            *dst = alpha * v;
        }
    }
    for (k, g) in image_grads.iter().enumerate() {
        let u = table.scaled_image(k);
        let gu = backprop_exp_map(&u, &images[k], g, curv);
        g_log_alpha += dot(&u, &gu);
        for (dst, v) in grad.image_params[k * table.dim..(k + 1) * table.dim].iter_mut().zip(&gu) {
            *dst = alpha * v;
        }
    }
    grad.log_alpha = g_log_alpha;
    Ok((loss, Some(grad)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lorentz::ConeParams;

    fn fixture_table() -> (EmbeddingTable, TrainerConfig) {
        let cfg = TrainerConfig {
            dim: 2,
            ..TrainerConfig::default()
        };
        let table = EmbeddingTable {
            dim: 2,
            text_params: vec![0.5, 0.25, -0.75, 1.0, 1.5, -0.5, 0.25, -1.25],
            image_params: vec![1.0, 0.5, -1.5, 2.0, 2.0, -1.0, -0.5, -2.0],
            log_alpha: 0.5f64.sqrt().ln(),
            log_temperature: 0.07f64.ln(),
        };
        (table, cfg)
    }

    #[test]
    fn matches_reference_implementation() {
        // Values from an independent arbitrary-precision evaluation.
        let (table, cfg) = fixture_table();
        let batch = [(0, 0), (1, 1), (2, 2), (3, 3)];
        let l = total_loss(&table, &batch, &cfg).unwrap();
        let close = |a: f64, b: f64| assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-3), "{a} vs {b}");
        close(l.contrastive, 0.0012768371911085377);
        close(l.entailment, 0.38323177430017149);
        close(l.total, 0.38450861149128003);
    }

    #[test]
    fn single_pair_has_no_contrastive_term() {
        let (table, cfg) = fixture_table();
        let l = total_loss(&table, &[(1, 2)], &cfg).unwrap();
        assert_eq!(l.contrastive, 0.0);
        let (texts, images) = forward_points(&table, cfg.curvature);
        let le = crate::lorentz::entailment_loss(&texts[1], &images[2], cfg.curvature, cfg.cone).unwrap();
        assert!((l.entailment - le).abs() < 1e-14);
    }

    #[test]
    fn uniform_logits_give_log_batch() {
        let cfg = TrainerConfig {
            dim: 2,
            ..TrainerConfig::default()
        };
        let mut table = EmbeddingTable::init(1, 1, &cfg);
        table.text_params = vec![0.0, 0.0];
        let l = total_loss(&table, &[(0, 0), (0, 0), (0, 0)], &cfg).unwrap();
        assert!((l.contrastive - 3f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn zero_parameters_are_finite() {
        let cfg = TrainerConfig {
            dim: 3,
            ..TrainerConfig::default()
        };
        let mut table = EmbeddingTable::init(2, 2, &cfg);
        table.text_params.iter_mut().for_each(|v| *v = 0.0);
        table.image_params.iter_mut().for_each(|v| *v = 0.0);
        let (forward_t, _) = forward_points(&table, cfg.curvature);
        assert_eq!(forward_t[0].space(), &[0.0, 0.0, 0.0]);
        let (l, g) = grad_total_loss(&table, &[(0, 0), (1, 1)], &cfg).unwrap();
        assert!(l.total.is_finite());
        assert!((0..g.num_params()).all(|k| g.param(k).is_finite()));
    }

    #[test]
    fn lambda_zero_is_contrastive_only() {
        let (table, mut cfg) = fixture_table();
        let batch = [(0, 0), (1, 1), (2, 2), (3, 3)];
        cfg.lambda_entail = 0.0;
        let (l, g0) = grad_total_loss(&table, &batch, &cfg).unwrap();
        assert_eq!(l.total, l.contrastive);
        // Contrastive gradient is independent of the cone constant.
        cfg.cone = ConeParams::new(0.3).unwrap();
        let (_, g1) = grad_total_loss(&table, &batch, &cfg).unwrap();
        assert_eq!(g0, g1);
    }

    #[test]
    fn aligned_single_pair_has_zero_gradient() {
        // Image further out along the text's ray: inside the cone, and a
        // one-element batch has no contrastive term.
        let cfg = TrainerConfig {
            dim: 2,
            ..TrainerConfig::default()
        };
        let table = EmbeddingTable {
            dim: 2,
            text_params: vec![1.0, 0.5],
            image_params: vec![2.0, 1.0],
            log_alpha: 0.0,
            log_temperature: 0.07f64.ln(),
        };
        let (l, g) = grad_total_loss(&table, &[(0, 0)], &cfg).unwrap();
        assert_eq!(l.total, 0.0);
        assert!((0..g.num_params()).all(|k| g.param(k) == 0.0), "{g:?}");
    }

    #[test]
    fn points_lie_on_manifold() {
        let (table, cfg) = fixture_table();
        let (t, i) = forward_points(&table, cfg.curvature);
        for p in t.iter().chain(&i) {
            assert!(p.manifold_residual(cfg.curvature) < 1e-12);
        }
    }

    #[test]
    fn doubled_alpha_doubles_radius() {
        let (mut table, cfg) = fixture_table();
        let origin = LorentzPoint::origin(2, cfg.curvature);
        let d = |p: &LorentzPoint| -crate::lorentz::neg_lorentz_distance(&origin, p, cfg.curvature).unwrap();
        let before = d(&forward_points(&table, cfg.curvature).0[1]);
        table.log_alpha += 2f64.ln();
        let after = d(&forward_points(&table, cfg.curvature).0[1]);
        assert!((after - 2.0 * before).abs() < 1e-12);
    }
}
