//! Built-in numerical checks: geometry identities, the exterior angle
//! against an independent law-of-cosines oracle, and analytic trainer
//! gradients against finite differences.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::lorentz::{
    angle_oracle, entailment_loss, exp_map_origin, exterior_angle, half_aperture, neg_lorentz_distance,
    ConeParams, Curvature, LorentzPoint, SpaceVector,
};
use crate::trainer::{finite_diff_check, EmbeddingTable, TrainerConfig};

pub const CURVATURES: [f64; 3] = [0.25, 1.0, 4.0];
pub const GEOMETRY_DIMS: [usize; 2] = [2, 16];
/// Largest `sqrt(c) * |v|` drawn by the geometry suite. A double-precision
/// hyperboloid point at geodesic radius `r` carries a representation error
/// of about `cosh(r)^2 * 2^-52` in `c<x,x>_L`, so much larger radii cannot
/// meet an absolute residual bound of 1e-9.
pub const MAX_RADIUS: f64 = 5.0;

pub const MANIFOLD_TOL: f64 = 1e-9;
pub const IDENTITY_TOL: f64 = 1e-12;
pub const ISOMETRY_TOL: f64 = 1e-9;
pub const ORACLE_TOL: f64 = 1e-6;
pub const GRADIENT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    /// Worst observed error, in the same units as `tolerance`.
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    fn new(name: impl Into<String>, tolerance: f64) -> Self {
        CheckResult {
            name: name.into(),
            cases: 0,
            failures: 0,
            max_error: 0.0,
            tolerance,
        }
    }

    fn record(&mut self, err: f64) {
        self.cases += 1;
        // NaN counts as a failure.
        if err.is_nan() || err > self.tolerance {
            self.failures += 1;
        }
        if err > self.max_error || err.is_nan() {
            self.max_error = if err.is_nan() { f64::INFINITY } else { err };
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {}/{} cases within {:.0e} (worst {:.3e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases - self.failures,
            self.cases,
            self.tolerance,
            self.max_error
        )
    }
}

fn curvature(c: f64) -> Curvature {
    Curvature::new(c).expect("suite curvatures are valid")
}

/// Gaussian direction scaled to a uniform norm in `[0, max_norm]`.
fn random_tangent(rng: &mut ChaCha8Rng, dim: usize, max_norm: f64) -> SpaceVector {
    let dir: Vec<f64> = (0..dim).map(|_| Distribution::<f64>::sample(&StandardNormal, rng)).collect();
    let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let norm = rng.gen_range(0.0..=max_norm);
    SpaceVector::new(dir.iter().map(|v| v * norm / len).collect()).expect("finite tangent")
}

/// Manifold membership, distance identity and symmetry, and radial isometry
/// over `points` seeded random points for every curvature and dimension.
pub fn geometry_suite(points: usize, seed: u64) -> Vec<CheckResult> {
    let mut manifold = CheckResult::new("manifold residual", MANIFOLD_TOL);
    let mut identity = CheckResult::new("distance identity and symmetry", IDENTITY_TOL);
    let mut isometry = CheckResult::new("radial isometry", ISOMETRY_TOL);
    for (ci, &c) in CURVATURES.iter().enumerate() {
        let curv = curvature(c);
        for (di, &dim) in GEOMETRY_DIMS.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((ci * 16 + di) as u64) << 32);
            let origin = LorentzPoint::origin(dim, curv);
            let max_norm = MAX_RADIUS / curv.sqrt();
            let mut prev: Option<LorentzPoint> = None;
            for _ in 0..points {
                let v = random_tangent(&mut rng, dim, max_norm);
                let x = exp_map_origin(&v, curv);
                manifold.record(x.manifold_residual(curv));
                manifold.record(crate::lorentz::lift(&v, curv).manifold_residual(curv));
                let radial = -neg_lorentz_distance(&origin, &x, curv).expect("on manifold");
                isometry.record((radial - v.norm()).abs());
                let self_d = neg_lorentz_distance(&x, &x, curv).expect("on manifold");
                identity.record(self_d.abs());
                if let Some(y) = &prev {
                    let a = neg_lorentz_distance(&x, y, curv).expect("on manifold");
                    let b = neg_lorentz_distance(y, &x, curv).expect("on manifold");
                    identity.record((a - b).abs());
                }
                prev = Some(x);
            }
        }
    }
    vec![manifold, identity, isometry]
}

/// Exterior angle against the law-of-cosines oracle, and the entailment
/// loss against the hinge composed from the oracle, on seeded pairs.
///
/// Pairs are drawn away from the degenerate configurations (coincident
/// points, apex near the origin, nearly collinear triangles) where the
/// oracle itself loses precision.
pub fn oracle_suite(pairs: usize, seed: u64) -> Vec<CheckResult> {
    let mut angle = CheckResult::new("exterior angle vs oracle (relative)", ORACLE_TOL);
    let mut loss = CheckResult::new("entailment loss vs oracle (relative)", ORACLE_TOL);
    let cone = ConeParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drawn = 0;
    while drawn < pairs {
        let c = CURVATURES[rng.gen_range(0..CURVATURES.len())];
        let dim = GEOMETRY_DIMS[rng.gen_range(0..GEOMETRY_DIMS.len())];
        let curv = curvature(c);
        let scale = 1.0 / curv.sqrt();
        let x = exp_map_origin(&random_tangent(&mut rng, dim, 3.0 * scale), curv);
        let y = exp_map_origin(&random_tangent(&mut rng, dim, 3.0 * scale), curv);
        let sep = -neg_lorentz_distance(&x, &y, curv).expect("on manifold") * curv.sqrt();
        if curv.sqrt() * x.space_norm() < 0.1 || sep < 0.1 {
            continue;
        }
        let oracle = angle_oracle(&x, &y, curv).expect("non-degenerate pair");
        if !(0.05..=std::f64::consts::PI - 0.05).contains(&oracle) {
            continue;
        }
        drawn += 1;
        let got = exterior_angle(&x, &y, curv).expect("non-degenerate pair");
        angle.record((got - oracle).abs() / oracle);
        let want = (oracle - half_aperture(&x, curv, cone)).max(0.0);
        let got = entailment_loss(&x, &y, curv, cone).expect("non-degenerate pair");
        loss.record((got - want).abs() / want.max(1e-3));
    }
    vec![angle, loss]
}

pub const GRADIENT_DIMS: [usize; 2] = [2, 8];
pub const GRADIENT_BATCHES: [usize; 2] = [2, 8];

/// Finite-difference gradient check on `per_shape` seeded configurations
/// for each (dimension, batch size) shape.
pub fn gradient_suite(per_shape: usize, seed: u64) -> CheckResult {
    let mut check = CheckResult::new("trainer gradient vs finite differences", GRADIENT_TOL);
    for &dim in &GRADIENT_DIMS {
        for &batch in &GRADIENT_BATCHES {
            for k in 0..per_shape {
                let cfg = TrainerConfig {
                    dim,
                    seed: seed.wrapping_add((dim * 1000 + batch * 10 + k) as u64),
                    ..TrainerConfig::default()
                };
                let mut table = EmbeddingTable::init(batch, batch, &cfg);
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                table.log_temperature = rng.gen_range(0.05f64..0.5).ln();
                table.log_alpha = rng.gen_range(0.3f64..1.5).ln();
                // Each text pairs with a different image; a shifted pairing
                // keeps some entailment hinges active.
                let pairs: Vec<(usize, usize)> = (0..batch).map(|i| (i, (i + k) % batch)).collect();
                let err = finite_diff_check(&table, &pairs, &cfg)
                    .map(|r| r.max_rel_error)
                    .unwrap_or(f64::INFINITY);
                check.record(err);
            }
        }
    }
    check
}

#[derive(Debug, Clone, Serialize)]
pub struct SelfCheckReport {
    pub checks: Vec<CheckResult>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|c| c.passed()).count()
    }

    pub fn total(&self) -> usize {
        self.checks.len()
    }

    pub fn all_passed(&self) -> bool {
        self.passed() == self.total()
    }
}

/// Every suite at its standard size.
pub fn run_selfcheck(seed: u64) -> SelfCheckReport {
    let mut checks = geometry_suite(10_000, seed);
    checks.extend(oracle_suite(1_000, seed));
    checks.push(gradient_suite(5, seed));
    SelfCheckReport { checks }
}
