//! Lorentz (hyperboloid) model kernels.
//!
//! Points live on the upper sheet of `{x : <x,x>_L = -1/c}` where
//! `<x,y>_L = <x_space, y_space> - x_time * y_time`. Only the tangent space at
//! the origin `O = [0, sqrt(1/c)]` is used, so the exponential map has a
//! closed form that depends on the tangent norm alone.
//!
//! Everything here accumulates in `f64`. Inputs that arrive as `f32` (shard
//! storage) are widened before any arithmetic.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{HypeError, Result};

/// Below this value of `sqrt(c) * |v|` the exponential map uses the limit
/// `sinh(t) / t -> 1`.
const EXP_MAP_SERIES_EPS: f64 = 1e-12;

/// Relative tolerance on `|c<x,x>_L + 1|` for accepting a point as on-manifold.
pub const MANIFOLD_TOL: f64 = 1e-6;

/// Above this value of `-c<x,y>_L` the direct form is accurate; below it the
/// chordal form avoids cancellation near `x = y`.
const DIRECT_FORM_THRESHOLD: f64 = 2.0;

/// Curvature magnitude. The manifold has constant curvature `-c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Curvature(f64);

impl Curvature {
    pub fn new(c: f64) -> Result<Self> {
        if c.is_finite() && c > 0.0 {
            Ok(Curvature(c))
        } else {
            Err(HypeError::InvalidArgument(format!(
                "curvature must be positive and finite, got {c}"
            )))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn sqrt(self) -> f64 {
        self.0.sqrt()
    }
}

impl Default for Curvature {
    fn default() -> Self {
        Curvature(1.0)
    }
}

impl TryFrom<f64> for Curvature {
    type Error = HypeError;

    fn try_from(c: f64) -> Result<Self> {
        Curvature::new(c)
    }
}

impl From<Curvature> for f64 {
    fn from(c: Curvature) -> f64 {
        c.0
    }
}

/// Half-aperture constant `K` of the entailment cone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ConeParams {
    k: f64,
}

impl ConeParams {
    pub const DEFAULT_K: f64 = 0.1;

    pub fn new(k: f64) -> Result<Self> {
        if k.is_finite() && k > 0.0 {
            Ok(ConeParams { k })
        } else {
            Err(HypeError::InvalidArgument(format!(
                "aperture constant must be positive and finite, got {k}"
            )))
        }
    }

    #[inline]
    pub fn k(self) -> f64 {
        self.k
    }
}

impl Default for ConeParams {
    fn default() -> Self {
        ConeParams {
            k: Self::DEFAULT_K,
        }
    }
}

impl TryFrom<f64> for ConeParams {
    type Error = HypeError;

    fn try_from(k: f64) -> Result<Self> {
        ConeParams::new(k)
    }
}

impl From<ConeParams> for f64 {
    fn from(p: ConeParams) -> f64 {
        p.k
    }
}

/// Euclidean vector: a space component or a tangent vector at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceVector(Vec<f64>);

impl SpaceVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(HypeError::InvalidInput(
                "space vector must have at least one coordinate".into(),
            ));
        }
        if let Some(i) = coords.iter().position(|v| !v.is_finite()) {
            return Err(HypeError::InvalidInput(format!(
                "non-finite coordinate {} at index {i}",
                coords[i]
            )));
        }
        Ok(SpaceVector(coords))
    }

    pub fn from_f32(coords: &[f32]) -> Result<Self> {
        Self::new(coords.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn zeros(n: usize) -> Self {
        SpaceVector(vec![0.0; n.max(1)])
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for SpaceVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A point on the hyperboloid.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzPoint {
    space: Vec<f64>,
    time: f64,
}

impl LorentzPoint {
    /// Builds a point from raw coordinates without checking manifold
    /// membership (the curvature is not known here). Use [`lift`] when only
    /// the space component is trusted.
    pub fn from_parts(space: Vec<f64>, time: f64) -> Result<Self> {
        if space.is_empty() {
            return Err(HypeError::InvalidInput("empty space component".into()));
        }
        if !time.is_finite() || time <= 0.0 || space.iter().any(|v| !v.is_finite()) {
            return Err(HypeError::InvalidInput(
                "point coordinates must be finite with positive time".into(),
            ));
        }
        Ok(LorentzPoint { space, time })
    }

    /// The hyperboloid origin `[0, sqrt(1/c)]` in `n` space dimensions.
    pub fn origin(n: usize, curv: Curvature) -> Self {
        LorentzPoint {
            space: vec![0.0; n.max(1)],
            time: (1.0 / curv.value()).sqrt(),
        }
    }

    #[inline]
    pub fn space(&self) -> &[f64] {
        &self.space
    }

    #[inline]
    pub fn time(&self) -> f64 {
        self.time
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.space.len()
    }

    pub fn space_norm(&self) -> f64 {
        dot(&self.space, &self.space).sqrt()
    }

    /// `|c<x,x>_L + 1|`, zero for an exact manifold point.
    pub fn manifold_residual(&self, curv: Curvature) -> f64 {
        let inner = dot(&self.space, &self.space) - self.time * self.time;
        (curv.value() * inner + 1.0).abs()
    }

    pub fn is_on_manifold(&self, curv: Curvature) -> bool {
        let scale = 1.0 + curv.value() * (dot(&self.space, &self.space) + self.time * self.time);
        self.manifold_residual(curv) <= MANIFOLD_TOL * scale
    }

    pub fn into_parts(self) -> (Vec<f64>, f64) {
        (self.space, self.time)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four independent lanes let the compiler vectorize; the combination
    // order is fixed so results do not depend on the caller.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Squared Euclidean distance between two space components.
#[inline]
fn diff_sq(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        let d0 = a[j] - b[j];
        let d1 = a[j + 1] - b[j + 1];
        let d2 = a[j + 2] - b[j + 2];
        let d3 = a[j + 3] - b[j + 3];
        acc[0] += d0 * d0;
        acc[1] += d1 * d1;
        acc[2] += d2 * d2;
        acc[3] += d3 * d3;
    }
    let mut tail = 0.0;
    for j in 4 * chunks..a.len() {
        let d = a[j] - b[j];
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn check_dims(x: &LorentzPoint, y: &LorentzPoint) -> Result<()> {
    if x.dim() == y.dim() {
        Ok(())
    } else {
        Err(HypeError::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            x.dim(),
            y.dim()
        )))
    }
}

fn check_on_manifold(x: &LorentzPoint, curv: Curvature, what: &str) -> Result<()> {
    if x.is_on_manifold(curv) {
        Ok(())
    } else {
        Err(HypeError::InvalidInput(format!(
            "{what} is off the manifold (residual {:.3e})",
            x.manifold_residual(curv)
        )))
    }
}

/// Time coordinate of the manifold point with the given space component.
#[inline]
pub fn time_from_space(space: &[f64], curv: Curvature) -> f64 {
    (1.0 / curv.value() + dot(space, space)).sqrt()
}

/// Completes a space component with its time coordinate.
pub fn lift(space: &SpaceVector, curv: Curvature) -> LorentzPoint {
    LorentzPoint {
        time: time_from_space(space.as_slice(), curv),
        space: space.as_slice().to_vec(),
    }
}

/// `<x,y>_L`.
pub fn lorentz_inner(x: &LorentzPoint, y: &LorentzPoint) -> Result<f64> {
    check_dims(x, y)?;
    Ok(dot(&x.space, &y.space) - x.time * y.time)
}

/// `sqrt(|<x,x>_L|)`.
pub fn lorentz_norm(x: &LorentzPoint) -> f64 {
    (dot(&x.space, &x.space) - x.time * x.time).abs().sqrt()
}

/// Factor `sinh(sqrt(c)|v|) / (sqrt(c)|v|)` applied to a tangent vector.
#[inline]
pub(crate) fn exp_map_factor(norm: f64, curv: Curvature) -> f64 {
    let theta = curv.sqrt() * norm;
    if theta < EXP_MAP_SERIES_EPS {
        1.0
    } else {
        theta.sinh() / theta
    }
}

/// Exponential map at the origin applied to a tangent vector.
pub fn exp_map_origin(v: &SpaceVector, curv: Curvature) -> LorentzPoint {
    exp_map_origin_slice(v.as_slice(), curv)
}

pub(crate) fn exp_map_origin_slice(v: &[f64], curv: Curvature) -> LorentzPoint {
    let factor = exp_map_factor(dot(v, v).sqrt(), curv);
    let space: Vec<f64> = v.iter().map(|&x| factor * x).collect();
    LorentzPoint {
        time: time_from_space(&space, curv),
        space,
    }
}

/// Exponential map of an `f32` tangent vector, widened to `f64` first.
pub fn exp_map_origin_f32(v: &[f32], curv: Curvature) -> Result<LorentzPoint> {
    Ok(exp_map_origin(&SpaceVector::from_f32(v)?, curv))
}

/// `δ = -c<x,y>_L - 1 >= 0` for two manifold points, computed from the
/// Lorentzian chord when the points are close.
#[inline]
pub(crate) fn cosh_excess(xs: &[f64], xt: f64, ys: &[f64], yt: f64, c: f64) -> f64 {
    let z = -c * (dot(xs, ys) - xt * yt);
    if z > DIRECT_FORM_THRESHOLD {
        z - 1.0
    } else {
        let dt = xt - yt;
        (0.5 * c * (diff_sq(xs, ys) - dt * dt)).max(0.0)
    }
}

/// `arccosh(1 + δ)` without cancellation for small `δ`.
#[inline]
pub(crate) fn acosh1p(delta: f64) -> f64 {
    if delta > 1.0 {
        (1.0 + delta).acosh()
    } else {
        (delta + (delta * (2.0 + delta)).sqrt()).ln_1p()
    }
}

#[inline]
pub(crate) fn distance_kernel(xs: &[f64], xt: f64, ys: &[f64], yt: f64, curv: Curvature) -> f64 {
    acosh1p(cosh_excess(xs, xt, ys, yt, curv.value())) / curv.sqrt()
}

/// Negative geodesic distance `-sqrt(1/c) * arccosh(-c<x,y>_L)`.
pub fn neg_lorentz_distance(x: &LorentzPoint, y: &LorentzPoint, curv: Curvature) -> Result<f64> {
    check_dims(x, y)?;
    check_on_manifold(x, curv, "first point")?;
    check_on_manifold(y, curv, "second point")?;
    Ok(-distance_kernel(&x.space, x.time, &y.space, y.time, curv))
}

#[inline]
pub(crate) fn aperture_from_norm(space_norm: f64, curv: Curvature, cone: ConeParams) -> f64 {
    let arg = 2.0 * cone.k() / (curv.sqrt() * space_norm);
    // Covers the origin too: 2K/0 = inf.
    if arg < 1.0 {
        arg.asin()
    } else {
        FRAC_PI_2
    }
}

/// Half-aperture of the entailment cone rooted at `x`.
pub fn half_aperture(x: &LorentzPoint, curv: Curvature, cone: ConeParams) -> f64 {
    aperture_from_norm(x.space_norm(), curv, cone)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Degenerate {
    ApexAtOrigin,
    Coincident,
}

impl Degenerate {
    pub(crate) fn into_error(self) -> HypeError {
        match self {
            Degenerate::ApexAtOrigin => HypeError::DegenerateGeometry(
                "exterior angle is undefined for a cone apex at the origin".into(),
            ),
            Degenerate::Coincident => HypeError::DegenerateGeometry(
                "exterior angle is undefined for coincident points".into(),
            ),
        }
    }
}

/// Minimum `sqrt(c) * |x_space|` for a usable cone apex.
const APEX_EPS: f64 = 1e-12;
/// Minimum relative `sqrt((c<x,y>)^2 - 1)` separating distinct points.
const COINCIDENT_EPS: f64 = 1e-12;

/// Exterior angle at `x` given precomputed `|x_space|`.
#[inline]
pub(crate) fn exterior_angle_kernel(
    xs: &[f64],
    xt: f64,
    x_norm: f64,
    ys: &[f64],
    yt: f64,
    curv: Curvature,
) -> std::result::Result<f64, Degenerate> {
    let c = curv.value();
    if curv.sqrt() * x_norm < APEX_EPS {
        return Err(Degenerate::ApexAtOrigin);
    }
    let delta = cosh_excess(xs, xt, ys, yt, c);
    // c<x,y>_L = -(1 + δ), so (c<x,y>_L)^2 - 1 = δ(2 + δ).
    let w = -(1.0 + delta);
    let sinh_dist = (delta * (2.0 + delta)).sqrt();
    if sinh_dist <= COINCIDENT_EPS * (1.0 + delta) {
        return Err(Degenerate::Coincident);
    }
    let num = yt + xt * w;
    let den = x_norm * sinh_dist;
    Ok((num / den).clamp(-1.0, 1.0).acos())
}

/// Angle at `x` between the geodesic continuing the ray from the origin
/// through `x` and the geodesic from `x` to `y`.
///
/// Returns a value in `[0, pi]`: 0 when `y` lies further out on the same
/// ray, `pi` when `y` lies between the origin and `x`.
pub fn exterior_angle(x: &LorentzPoint, y: &LorentzPoint, curv: Curvature) -> Result<f64> {
    check_dims(x, y)?;
    exterior_angle_kernel(&x.space, x.time, x.space_norm(), &y.space, y.time, curv)
        .map_err(Degenerate::into_error)
}

/// Exterior angle recomputed from side lengths with the hyperbolic law of
/// cosines. Shares no arithmetic with [`exterior_angle`] beyond the distance
/// function; used to cross-check it.
pub fn angle_oracle(x: &LorentzPoint, y: &LorentzPoint, curv: Curvature) -> Result<f64> {
    check_dims(x, y)?;
    if curv.sqrt() * x.space_norm() < APEX_EPS {
        return Err(Degenerate::ApexAtOrigin.into_error());
    }
    let origin = LorentzPoint::origin(x.dim(), curv);
    let a = -neg_lorentz_distance(&origin, x, curv)?;
    let b = -neg_lorentz_distance(&origin, y, curv)?;
    let s = -neg_lorentz_distance(x, y, curv)?;
    let sc = curv.sqrt();
    let denom = (sc * a).sinh() * (sc * s).sinh();
    if denom <= 0.0 || s * sc < APEX_EPS {
        return Err(Degenerate::Coincident.into_error());
    }
    let cos_vertex = ((sc * a).cosh() * (sc * s).cosh() - (sc * b).cosh()) / denom;
    Ok(PI - cos_vertex.clamp(-1.0, 1.0).acos())
}

#[inline]
pub(crate) fn entailment_loss_kernel(
    xs: &[f64],
    xt: f64,
    x_norm: f64,
    x_aperture: f64,
    ys: &[f64],
    yt: f64,
    curv: Curvature,
) -> std::result::Result<f64, Degenerate> {
    let ext = exterior_angle_kernel(xs, xt, x_norm, ys, yt, curv)?;
    Ok((ext - x_aperture).max(0.0))
}

/// Hinge of the exterior angle against the half-aperture of `text`'s cone.
/// Zero exactly when `image` lies inside the cone.
pub fn entailment_loss(
    text: &LorentzPoint,
    image: &LorentzPoint,
    curv: Curvature,
    cone: ConeParams,
) -> Result<f64> {
    check_dims(text, image)?;
    let norm = text.space_norm();
    let aper = aperture_from_norm(norm, curv, cone);
    entailment_loss_kernel(&text.space, text.time, norm, aper, &image.space, image.time, curv)
        .map_err(Degenerate::into_error)
}
