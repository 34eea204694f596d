//! 4D-scan refinement and polar BEV projection.
//!
//! A static world point observed from a platform moving with velocity `v`
//! returns Doppler `-v·d`, where `d` is the unit direction to the point.
//! Ego-velocity is recovered by 3-point RANSAC over that model followed by a
//! least-squares refit on the inlier set. Refinement then drops dynamic
//! returns (large Doppler residual), extreme values in height and RCS, and
//! the ground-return layer, before the surviving points are projected into an
//! RCS polar BEV raster and max-pooled over consecutive frames.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan::{FourDScan, PolarGrid, PolarImage, RadarPoint};

/// A ground layer must be this many times denser than the scan's average
/// height density before the band around the fitted level is removed. Without
/// a guard the percentile fit would keep "finding" ground in already-clean
/// scans and removal would never reach a fixed point.
const GROUND_LAYER_DENSITY_RATIO: f64 = 3.0;

/// Minimum fraction of points in the candidate ground band.
const GROUND_LAYER_MIN_FRACTION: f64 = 0.12;

/// Minimum static points before ground fitting is attempted.
const GROUND_FIT_MIN_POINTS: usize = 20;

/// Percentile of static-point heights taken as the ground level.
const GROUND_PERCENTILE: f64 = 0.05;

/// Platform velocity estimated from Doppler returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoVelocity {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub inlier_count: usize,
    pub inlier_ratio: f64,
}

impl EgoVelocity {
    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.vx, self.vy, self.vz)
    }

    /// Doppler residual of a point under this velocity: `doppler + v·d`.
    /// Zero for a perfectly static return.
    pub fn residual(&self, p: &RadarPoint) -> f64 {
        let d = p.direction();
        p.doppler + self.vx * d[0] + self.vy * d[1] + self.vz * d[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemovalConfig {
    pub z_min: f64,
    pub z_max: f64,
    pub rcs_min: f64,
    pub rcs_max: f64,
    /// Residual bound (m/s) separating static from dynamic returns.
    pub doppler_residual_threshold: f64,
    pub ransac_iterations: usize,
    /// Keep points more than this far above the fitted ground level (m).
    pub ground_z_threshold: f64,
}

impl Default for RemovalConfig {
    fn default() -> Self {
        RemovalConfig {
            z_min: -2.0,
            z_max: 10.0,
            rcs_min: -20.0,
            rcs_max: 40.0,
            doppler_residual_threshold: 0.25,
            ransac_iterations: 100,
            ground_z_threshold: 0.3,
        }
    }
}

impl RemovalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.z_min >= self.z_max {
            return Err(Error::Config("z_min must be below z_max".into()));
        }
        if self.rcs_min >= self.rcs_max {
            return Err(Error::Config("rcs_min must be below rcs_max".into()));
        }
        if self.doppler_residual_threshold <= 0.0 || self.ground_z_threshold <= 0.0 {
            return Err(Error::Config("removal thresholds must be positive".into()));
        }
        if self.ransac_iterations == 0 {
            return Err(Error::Config("ransac_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationConfig {
    /// Number of consecutive frames max-pooled into one image.
    pub k: usize,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig { k: 5 }
    }
}

impl AggregationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("aggregation window k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Solve `d_i · v = -doppler_i` for the sample rows; `None` when the
/// direction matrix is numerically singular.
fn solve_three_point(points: [&RadarPoint; 3]) -> Option<Vector3<f64>> {
    let rows: Vec<[f64; 3]> = points.iter().map(|p| p.direction()).collect();
    let a = Matrix3::from_rows(&[
        nalgebra::RowVector3::new(rows[0][0], rows[0][1], rows[0][2]),
        nalgebra::RowVector3::new(rows[1][0], rows[1][1], rows[1][2]),
        nalgebra::RowVector3::new(rows[2][0], rows[2][1], rows[2][2]),
    ]);
    let b = Vector3::new(-points[0].doppler, -points[1].doppler, -points[2].doppler);
    let lu = a.lu();
    if lu.determinant().abs() < 1e-9 {
        return None;
    }
    lu.solve(&b)
}

/// Least-squares refit of `v` on a point subset via the 3x3 normal equations.
/// Fails when the inlier directions span fewer than three dimensions.
fn refit_least_squares(points: &[&RadarPoint]) -> Result<Vector3<f64>> {
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for p in points {
        let d = p.direction();
        let dv = Vector3::new(d[0], d[1], d[2]);
        ata += dv * dv.transpose();
        atb += dv * (-p.doppler);
    }
    let eig = ata.symmetric_eigenvalues();
    let min_eig = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_eig = eig.iter().cloned().fold(0.0f64, f64::max);
    if min_eig <= 1e-9 * max_eig.max(1.0) {
        return Err(Error::DegenerateGeometry(
            "inlier directions have rank below 3; velocity unobservable".into(),
        ));
    }
    ata.lu()
        .solve(&atb)
        .ok_or_else(|| Error::DegenerateGeometry("normal equations singular".into()))
}

/// 3-point RANSAC followed by a least-squares refit on all inliers.
/// Deterministic for a fixed seed.
pub fn estimate_ego_velocity(
    scan: &FourDScan,
    cfg: &RemovalConfig,
    seed: u64,
) -> Result<EgoVelocity> {
    cfg.validate()?;
    let n = scan.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "ego-velocity estimation needs at least 3 points, scan has {n}"
        )));
    }
    let points: Vec<&RadarPoint> = scan.points.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best_inliers: Vec<usize> = Vec::new();

    for _ in 0..cfg.ransac_iterations {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        let k = rng.gen_range(0..n);
        if i == j || j == k || i == k {
            continue;
        }
        let Some(v) = solve_three_point([points[i], points[j], points[k]]) else {
            continue;
        };
        let cand = EgoVelocity { vx: v.x, vy: v.y, vz: v.z, inlier_count: 0, inlier_ratio: 0.0 };
        let inliers: Vec<usize> = (0..n)
            .filter(|&idx| cand.residual(points[idx]).abs() < cfg.doppler_residual_threshold)
            .collect();
        if inliers.len() > best_inliers.len() {
            best_inliers = inliers;
        }
    }

    if best_inliers.len() < 3 {
        return Err(Error::DegenerateGeometry(
            "ransac found no 3-point consensus; scan may be dominated by moving objects".into(),
        ));
    }

    let inlier_points: Vec<&RadarPoint> = best_inliers.iter().map(|&i| points[i]).collect();
    let v = refit_least_squares(&inlier_points)?;
    let refined = EgoVelocity {
        vx: v.x,
        vy: v.y,
        vz: v.z,
        inlier_count: 0,
        inlier_ratio: 0.0,
    };
    // Re-score with the refined velocity so the reported ratio matches it.
    let final_inliers = (0..n)
        .filter(|&idx| refined.residual(points[idx]).abs() < cfg.doppler_residual_threshold)
        .count();
    Ok(EgoVelocity {
        inlier_count: final_inliers,
        inlier_ratio: final_inliers as f64 / n as f64,
        ..refined
    })
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Drop dynamic returns, extreme heights/RCS, and the ground layer.
///
/// The ground stage fits the ground level as the low percentile of static
/// heights and removes everything within `ground_z_threshold` of it or below,
/// but only while a dense layer actually sits at that level; the stage
/// repeats until nothing changes, which makes the whole operation idempotent.
pub fn remove_unreliable(scan: &FourDScan, ego: &EgoVelocity, cfg: &RemovalConfig) -> FourDScan {
    let t = cfg.doppler_residual_threshold;
    let mut kept: Vec<RadarPoint> = scan
        .points
        .iter()
        .filter(|p| ego.residual(p).abs() < t)
        .filter(|p| p.z >= cfg.z_min && p.z <= cfg.z_max)
        .filter(|p| p.rcs >= cfg.rcs_min && p.rcs <= cfg.rcs_max)
        .cloned()
        .collect();

    loop {
        if kept.len() < GROUND_FIT_MIN_POINTS {
            break;
        }
        let mut zs: Vec<f64> = kept.iter().map(|p| p.z).collect();
        zs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ground = percentile(&zs, GROUND_PERCENTILE);
        let band_halfwidth = cfg.ground_z_threshold;
        let band = zs
            .iter()
            .filter(|&&z| (z - ground).abs() <= band_halfwidth)
            .count() as f64;
        // A real ground return is a thin dense layer: require the band to be
        // markedly denser than the scan's overall height distribution.
        let span = zs[zs.len() - 1] - zs[0];
        if span <= 4.0 * band_halfwidth {
            break;
        }
        let expected_uniform = kept.len() as f64 * (2.0 * band_halfwidth / span);
        if band < GROUND_LAYER_DENSITY_RATIO * expected_uniform
            || band < GROUND_LAYER_MIN_FRACTION * kept.len() as f64
        {
            break;
        }
        let cutoff = ground + cfg.ground_z_threshold;
        let before = kept.len();
        kept.retain(|p| p.z > cutoff);
        if kept.len() == before {
            break;
        }
    }

    FourDScan { timestamp: scan.timestamp, points: kept }
}

/// Project a refined scan into an RCS polar BEV raster.
///
/// A point lands on range bin `floor(sqrt(x^2+y^2) * H / rho_max)` and
/// azimuth bin `floor((1 - 2/phi * atan2(y, x)) * W / 2)`; points outside the
/// grid are discarded and bin collisions keep the strongest encoded value.
/// Pixels hold `2*rcs + c` clamped below at zero (zero marks "no return").
pub fn project_polar(scan: &FourDScan, grid: &PolarGrid, c: f64) -> PolarImage {
    let mut img = PolarImage::zeros(*grid, scan.timestamp);
    let h = grid.h as f64;
    let w2 = grid.w as f64 / 2.0;
    for p in &scan.points {
        let r = (p.planar_range() * h / grid.rho_max).floor();
        if r < 0.0 || r >= h {
            continue;
        }
        let az = p.y.atan2(p.x);
        let theta = ((1.0 - 2.0 / grid.phi * az) * w2).floor();
        if theta < 0.0 || theta >= grid.w as f64 {
            continue;
        }
        let encoded = (2.0 * p.rcs + c).max(0.0);
        let (ri, ti) = (r as usize, theta as usize);
        if encoded > img.at(ri, ti) {
            img.set(ri, ti, encoded);
        }
    }
    img
}

/// Element-wise max over `K` consecutive frames; the result carries the last
/// frame's timestamp.
pub fn aggregate_temporal(images: &[PolarImage]) -> Result<PolarImage> {
    let first = images
        .first()
        .ok_or_else(|| Error::InsufficientData("temporal aggregation over empty sequence".into()))?;
    for img in images.iter().skip(1) {
        if img.grid != first.grid {
            return Err(Error::Shape("temporal aggregation requires one shared grid".into()));
        }
    }
    let mut pixels = first.pixels.clone();
    for img in images.iter().skip(1) {
        for (dst, &src) in pixels.iter_mut().zip(img.pixels.iter()) {
            if src > *dst {
                *dst = src;
            }
        }
    }
    Ok(PolarImage {
        grid: first.grid,
        timestamp: images.last().unwrap().timestamp,
        pixels,
    })
}
