//! Spinning-radar synchronization: full-circle rescaling, multi-view
//! generation, and cross-sensor RCS calibration.
//!
//! Spinning-radar pixels hold return power while 4D-radar pixels hold RCS,
//! both in half-dB steps; on the dB scale the two differ by a constant once
//! the cosecant-squared beam profile cancels the range dependence. That
//! constant is recovered by jointly fitting a per-frame offset `k_i` between
//! timestamp-matched image pairs under a Huber loss with a smoothness chain
//! `lambda * sum (k_j - k_{j-1})^2`, solved by iteratively reweighted least
//! squares; each IRLS step solves the tridiagonal normal system exactly. The
//! final correction is the mean of the per-frame offsets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan::{PolarGrid, PolarImage, SpinningScan};

/// Sliding-window views over a full-circle polar image.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewSet {
    pub views: Vec<PolarImage>,
    /// Azimuth stride between consecutive view starts, in columns.
    pub delta: usize,
    pub source_timestamp: f64,
}

impl MultiViewSet {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Huber transition point, half-dB units.
    pub delta_huber: f64,
    /// Smoothness weight coupling consecutive per-frame offsets.
    pub lambda_smooth: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the summed absolute change of the offsets.
    pub tolerance: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            delta_huber: 2.0,
            lambda_smooth: 0.1,
            max_iterations: 100,
            tolerance: 1e-9,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta_huber <= 0.0 {
            return Err(Error::Config("delta_huber must be positive".into()));
        }
        if self.lambda_smooth < 0.0 {
            return Err(Error::Config("lambda_smooth must be non-negative".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if self.tolerance <= 0.0 {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Converged per-frame offsets `k_i`, half-dB units.
    pub per_frame_k: Vec<f64>,
    /// Mean of the per-frame offsets; the correction applied downstream.
    pub c_corr: f64,
    /// Final value of the joint objective.
    pub final_loss: f64,
    pub iterations_used: usize,
    /// Objective value after each IRLS step; non-increasing.
    pub objective_trace: Vec<f64>,
}

pub fn huber_loss(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// IRLS weight: the quadratic majorizer of the Huber loss at `r`.
pub fn huber_weight(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        1.0
    } else {
        delta / a
    }
}

/// Bilinearly resample a spinning sweep onto the shared polar raster,
/// widening the azimuth axis to cover the full circle (`H x 3W` when the
/// view span is 120 degrees). Sampling wraps in azimuth and clamps in range.
pub fn rescale_spinning(scan: &SpinningScan, grid: &PolarGrid) -> Result<PolarImage> {
    let factor = std::f64::consts::TAU / grid.phi;
    let out_w_f = factor * grid.w as f64;
    let out_w = out_w_f.round() as usize;
    if (out_w_f - out_w as f64).abs() > 1e-6 || out_w == 0 {
        return Err(Error::Config(format!(
            "view span {} does not tile the circle into whole columns",
            grid.phi
        )));
    }
    let out_h = grid.h;
    let nr = scan.range_bins;
    let na = scan.azimuth_bins;
    let full_grid = PolarGrid::new(out_h, out_w, grid.rho_max, std::f64::consts::TAU)?;
    let mut img = PolarImage::zeros(full_grid, scan.timestamp);

    for i in 0..out_h {
        // Center-aligned mapping: the identity when sizes match.
        let src_r = ((i as f64 + 0.5) * nr as f64 / out_h as f64 - 0.5).clamp(0.0, (nr - 1) as f64);
        let r0 = src_r.floor() as usize;
        let r1 = (r0 + 1).min(nr - 1);
        let fr = src_r - r0 as f64;
        for j in 0..out_w {
            let src_a = (j as f64 + 0.5) * na as f64 / out_w as f64 - 0.5;
            let src_a = src_a.rem_euclid(na as f64);
            let a0 = src_a.floor() as usize % na;
            let a1 = (a0 + 1) % na;
            let fa = src_a - src_a.floor();
            let v00 = scan.at(r0, a0) as f64;
            let v01 = scan.at(r0, a1) as f64;
            let v10 = scan.at(r1, a0) as f64;
            let v11 = scan.at(r1, a1) as f64;
            let v = v00 * (1.0 - fr) * (1.0 - fa)
                + v01 * (1.0 - fr) * fa
                + v10 * fr * (1.0 - fa)
                + v11 * fr * fa;
            img.set(i, j, v.max(0.0));
        }
    }
    Ok(img)
}

/// Slice a full-circle image into `w_full / delta` views of `view_width`
/// columns, window starts striding by `delta` and wrapping circularly.
pub fn generate_multiview(
    full: &PolarImage,
    view_width: usize,
    delta: usize,
) -> Result<MultiViewSet> {
    let w_full = full.grid.w;
    if delta == 0 || w_full % delta != 0 {
        return Err(Error::Config(format!(
            "multi-view stride {delta} does not divide the full width {w_full}"
        )));
    }
    if view_width == 0 || view_width > w_full {
        return Err(Error::Config(format!(
            "view width {view_width} must lie in 1..={w_full}"
        )));
    }
    let n_v = w_full / delta;
    let view_phi = full.grid.phi * view_width as f64 / w_full as f64;
    let view_grid = PolarGrid::new(full.grid.h, view_width, full.grid.rho_max, view_phi)?;
    let mut views = Vec::with_capacity(n_v);
    for j in 0..n_v {
        let start = j * delta;
        let mut view = PolarImage::zeros(view_grid, full.timestamp);
        for r in 0..full.grid.h {
            for u in 0..view_width {
                let col = (start + u) % w_full;
                view.set(r, u, full.at(r, col));
            }
        }
        views.push(view);
    }
    Ok(MultiViewSet { views, delta, source_timestamp: full.timestamp })
}

/// Add the RCS correction to every valid pixel; zero ("no return") pixels
/// stay zero and results clamp at zero from below.
pub fn apply_rcs_correction(view: &PolarImage, c_corr: f64) -> PolarImage {
    assert!(c_corr.is_finite(), "correction must be finite");
    let pixels = view
        .pixels
        .iter()
        .map(|&p| if p == 0.0 { 0.0 } else { (p + c_corr).max(0.0) })
        .collect();
    PolarImage { grid: view.grid, timestamp: view.timestamp, pixels }
}

/// Solve a tridiagonal system in place via the Thomas algorithm.
/// `lower[0]` and `upper[n-1]` are ignored.
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        if i < n - 1 {
            c[i] = upper[i] / m;
        }
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        let next = x[i + 1];
        x[i] -= c[i] * next;
    }
    x
}

fn objective(residuals: &[Vec<f64>], k: &[f64], cfg: &CalibrationConfig) -> f64 {
    let mut j = 0.0;
    for (i, rs) in residuals.iter().enumerate() {
        let mut s = 0.0;
        for &e in rs {
            s += huber_loss(e - k[i], cfg.delta_huber);
        }
        j += s / rs.len() as f64;
    }
    for w in k.windows(2) {
        j += cfg.lambda_smooth * (w[1] - w[0]).powi(2);
    }
    j
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Jointly fit per-frame offsets between 4D and spinning polar images.
///
/// For each pair only pixels valid in both images contribute (nonzero in
/// both). Minimizes the mean Huber loss of `I_4D - (M + k_i)` per frame plus
/// the smoothness chain, via IRLS with an exact tridiagonal solve per step.
pub fn calibrate_rcs(
    pairs: &[(PolarImage, PolarImage)],
    cfg: &CalibrationConfig,
) -> Result<CalibrationResult> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::InsufficientData("calibration needs at least one image pair".into()));
    }

    // Residual bases e = I_4D - M over the valid-pixel overlap of each pair.
    let mut residuals: Vec<Vec<f64>> = Vec::with_capacity(pairs.len());
    for (i, (fourd, spin)) in pairs.iter().enumerate() {
        if fourd.grid.h != spin.grid.h || fourd.grid.w != spin.grid.w {
            return Err(Error::Shape(format!(
                "calibration pair {i} mixes grids {}x{} and {}x{}",
                fourd.grid.h, fourd.grid.w, spin.grid.h, spin.grid.w
            )));
        }
        let rs: Vec<f64> = fourd
            .pixels
            .iter()
            .zip(spin.pixels.iter())
            .filter(|(&a, &b)| a != 0.0 && b != 0.0)
            .map(|(&a, &b)| a - b)
            .collect();
        if rs.is_empty() {
            return Err(Error::EmptyOverlap { frame: i });
        }
        residuals.push(rs);
    }

    let n = residuals.len();
    let mut k: Vec<f64> = residuals
        .iter()
        .map(|rs| median(&mut rs.clone()))
        .collect();
    let mut trace = vec![objective(&residuals, &k, cfg)];
    let mut converged_at = None;

    for iter in 0..cfg.max_iterations {
        // Weighted normal equations: the Huber majorizer contributes
        // mean weights and weighted residual means; the smoothness chain
        // couples neighbors with -2*lambda off-diagonals.
        let mut diag = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for i in 0..n {
            let rs = &residuals[i];
            let inv = 1.0 / rs.len() as f64;
            let mut wsum = 0.0;
            let mut wesum = 0.0;
            for &e in rs {
                let w = huber_weight(e - k[i], cfg.delta_huber);
                wsum += w;
                wesum += w * e;
            }
            diag[i] = wsum * inv;
            rhs[i] = wesum * inv;
            if i > 0 {
                diag[i] += 2.0 * cfg.lambda_smooth;
                lower[i] = -2.0 * cfg.lambda_smooth;
            }
            if i < n - 1 {
                diag[i] += 2.0 * cfg.lambda_smooth;
                upper[i] = -2.0 * cfg.lambda_smooth;
            }
        }
        let new_k = if n == 1 {
            vec![rhs[0] / diag[0]]
        } else {
            solve_tridiagonal(&lower, &diag, &upper, &rhs)
        };

        let change: f64 = new_k.iter().zip(k.iter()).map(|(a, b)| (a - b).abs()).sum();
        k = new_k;
        let j = objective(&residuals, &k, cfg);
        debug_assert!(
            j <= trace.last().unwrap() + 1e-9 * (1.0 + trace.last().unwrap().abs()),
            "IRLS objective increased: {} -> {}",
            trace.last().unwrap(),
            j
        );
        trace.push(j);

        if change < cfg.tolerance {
            converged_at = Some(iter + 1);
            break;
        }
    }

    let Some(iterations_used) = converged_at else {
        return Err(Error::CalibrationDiverged { iterations: cfg.max_iterations, last_k: k });
    };

    let c_corr = k.iter().sum::<f64>() / n as f64;
    Ok(CalibrationResult {
        c_corr,
        final_loss: *trace.last().unwrap(),
        per_frame_k: k,
        iterations_used,
        objective_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::TAU;

    fn view_grid(h: usize, w: usize) -> PolarGrid {
        PolarGrid::new(h, w, 100.0, TAU / 3.0).unwrap()
    }

    #[test]
    fn rescale_identity_when_sizes_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = 8;
        let w = 8; // full circle = 24 columns
        let power: Vec<f32> = (0..h * 24).map(|_| rng.gen_range(0.0f32..60.0)).collect();
        let scan = SpinningScan::new(2.0, h, 24, 100.0 / h as f64, power.clone()).unwrap();
        let img = rescale_spinning(&scan, &view_grid(h, w)).unwrap();
        assert_eq!(img.grid.w, 24);
        for (out, src) in img.pixels.iter().zip(power.iter()) {
            assert!((out - *src as f64).abs() < 1e-12);
        }
        assert_eq!(img.timestamp, 2.0);
    }

    #[test]
    fn rescale_preserves_constants() {
        let scan = SpinningScan::new(0.0, 5, 11, 1.0, vec![7.5; 55]).unwrap();
        let img = rescale_spinning(&scan, &view_grid(16, 10)).unwrap();
        assert!(img.pixels.iter().all(|&p| (p - 7.5).abs() < 1e-12));
    }

    #[test]
    fn rescale_matches_naive_bilinear_oracle() {
        // 8x8 ramp up to 16x16 on a full-circle grid.
        let nr = 8;
        let na = 8;
        let power: Vec<f32> = (0..nr * na).map(|i| (i / na + i % na) as f32).collect();
        let scan = SpinningScan::new(0.0, nr, na, 1.0, power.clone()).unwrap();
        let grid = PolarGrid::new(16, 16, 8.0, TAU).unwrap();
        let img = rescale_spinning(&scan, &grid).unwrap();
        assert_eq!(img.grid.h, 16);
        assert_eq!(img.grid.w, 16);

        for i in 0..16usize {
            for j in 0..16usize {
                let sr = ((i as f64 + 0.5) * nr as f64 / 16.0 - 0.5).clamp(0.0, (nr - 1) as f64);
                let sa = ((j as f64 + 0.5) * na as f64 / 16.0 - 0.5).rem_euclid(na as f64);
                let (r0, a0) = (sr.floor() as usize, sa.floor() as usize % na);
                let (r1, a1) = ((r0 + 1).min(nr - 1), (a0 + 1) % na);
                let (fr, fa) = (sr - sr.floor(), sa - sa.floor());
                let val = |r: usize, a: usize| power[r * na + a] as f64;
                let expect = val(r0, a0) * (1.0 - fr) * (1.0 - fa)
                    + val(r0, a1) * (1.0 - fr) * fa
                    + val(r1, a0) * fr * (1.0 - fa)
                    + val(r1, a1) * fr * fa;
                assert!((img.at(i, j) - expect).abs() < 1e-9);
            }
        }
    }

    fn full_image(h: usize, w_full: usize, seed: u64) -> PolarImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = PolarGrid::new(h, w_full, 100.0, TAU).unwrap();
        let pixels = (0..h * w_full).map(|_| rng.gen_range(0.0f64..80.0)).collect();
        PolarImage::new(grid, 0.5, pixels).unwrap()
    }

    #[test]
    fn thirty_six_views_at_default_stride() {
        let full = full_image(4, 576, 2);
        let set = generate_multiview(&full, 192, 16).unwrap();
        assert_eq!(set.len(), 36);
        assert!(set.views.iter().all(|v| v.grid.w == 192 && v.grid.h == 4));
        assert!((set.views[0].grid.phi - TAU / 3.0).abs() < 1e-12);
    }

    #[test]
    fn stride_equal_to_full_width_gives_single_view() {
        let full = full_image(3, 24, 3);
        let set = generate_multiview(&full, 8, 24).unwrap();
        assert_eq!(set.len(), 1);
        for r in 0..3 {
            for u in 0..8 {
                assert_eq!(set.views[0].at(r, u), full.at(r, u));
            }
        }
    }

    #[test]
    fn views_match_direct_window_extraction() {
        let full = full_image(5, 48, 4);
        let set = generate_multiview(&full, 16, 4).unwrap();
        assert_eq!(set.len(), 12);
        for (j, view) in set.views.iter().enumerate() {
            for r in 0..5 {
                for u in 0..16 {
                    assert_eq!(view.at(r, u), full.at(r, (j * 4 + u) % 48));
                }
            }
        }
    }

    #[test]
    fn circular_shift_reindexes_views() {
        let full = full_image(4, 48, 5);
        let delta = 4;
        let set = generate_multiview(&full, 16, delta).unwrap();
        // Shifting the full image left by delta relabels view j as view j+1.
        let shifted = full.shift_columns(-(delta as i64));
        let set2 = generate_multiview(&shifted, 16, delta).unwrap();
        for j in 0..set.len() {
            assert_eq!(set2.views[j].pixels, set.views[(j + 1) % set.len()].pixels);
        }
    }

    #[test]
    fn non_dividing_stride_is_config_error() {
        let full = full_image(2, 48, 6);
        assert!(matches!(generate_multiview(&full, 16, 7), Err(Error::Config(_))));
    }

    #[test]
    fn correction_identity_add_and_sentinel() {
        let grid = PolarGrid::new(1, 3, 10.0, TAU).unwrap();
        let img = PolarImage::new(grid, 0.0, vec![10.0, 0.0, 4.0]).unwrap();
        assert_eq!(apply_rcs_correction(&img, 0.0).pixels, img.pixels);
        assert_eq!(apply_rcs_correction(&img, 3.0).pixels, vec![13.0, 0.0, 7.0]);
        assert_eq!(apply_rcs_correction(&img, 5.0).pixels[1], 0.0);
        // Clamp from below: a correction larger than the value floors at 0.
        assert_eq!(apply_rcs_correction(&img, -6.0).pixels, vec![4.0, 0.0, 0.0]);
    }

    #[test]
    fn correction_commutes_with_multiview() {
        let full = full_image(3, 24, 7);
        let corrected_then_sliced =
            generate_multiview(&apply_rcs_correction(&full, 2.5), 8, 4).unwrap();
        let sliced_then_corrected: Vec<PolarImage> = generate_multiview(&full, 8, 4)
            .unwrap()
            .views
            .iter()
            .map(|v| apply_rcs_correction(v, 2.5))
            .collect();
        for (a, b) in corrected_then_sliced.views.iter().zip(sliced_then_corrected.iter()) {
            assert_eq!(a.pixels, b.pixels);
        }
    }

    #[test]
    fn huber_loss_hand_values() {
        assert!((huber_loss(0.5, 1.0) - 0.125).abs() < 1e-15);
        assert!((huber_loss(2.0, 1.0) - 1.5).abs() < 1e-15);
        assert!((huber_loss(-2.0, 1.0) - 1.5).abs() < 1e-15);
    }

    /// Pair whose 4D image equals the spinning image plus `offset` wherever
    /// both are valid.
    fn offset_pair(h: usize, w: usize, offset: f64, seed: u64) -> (PolarImage, PolarImage) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = PolarGrid::new(h, w, 100.0, TAU / 3.0).unwrap();
        let mut spin = PolarImage::zeros(grid, 0.0);
        let mut fourd = PolarImage::zeros(grid, 0.0);
        for r in 0..h {
            for t in 0..w {
                if rng.gen_bool(0.6) {
                    let v = rng.gen_range(5.0f64..60.0);
                    spin.set(r, t, v);
                    fourd.set(r, t, v + offset);
                }
            }
        }
        (fourd, spin)
    }

    #[test]
    fn exact_offset_recovery() {
        let pairs: Vec<_> = (0..6).map(|i| offset_pair(12, 16, 3.0, i)).collect();
        let cfg = CalibrationConfig::default();
        let res = calibrate_rcs(&pairs, &cfg).unwrap();
        for k in &res.per_frame_k {
            assert!((k - 3.0).abs() < 1e-7, "k = {k}");
        }
        assert!((res.c_corr - 3.0).abs() < 1e-7);
        assert!(res.final_loss < 1e-10);
    }

    /// Convex 1D minimization oracle used for the lambda = 0 check.
    fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
        let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        while (b - a).abs() > tol {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = f(d);
            }
        }
        0.5 * (a + b)
    }

    fn noisy_pairs(n: usize, seed: u64) -> Vec<(PolarImage, PolarImage)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let true_k = 3.0 + rng.gen_range(-0.2f64..0.2);
                let (mut fourd, spin) = offset_pair(16, 24, true_k, seed * 100 + i as u64);
                // 5% outlier pixels at +20 half-dB.
                for idx in 0..fourd.pixels.len() {
                    if fourd.pixels[idx] > 0.0 && rng.gen_bool(0.05) {
                        fourd.pixels[idx] += 20.0;
                    }
                }
                (fourd, spin)
            })
            .collect()
    }

    #[test]
    fn lambda_zero_matches_per_frame_golden_section() {
        let pairs = noisy_pairs(8, 11);
        let cfg = CalibrationConfig { lambda_smooth: 0.0, ..Default::default() };
        let res = calibrate_rcs(&pairs, &cfg).unwrap();
        for (i, (fourd, spin)) in pairs.iter().enumerate() {
            let es: Vec<f64> = fourd
                .pixels
                .iter()
                .zip(spin.pixels.iter())
                .filter(|(&a, &b)| a != 0.0 && b != 0.0)
                .map(|(&a, &b)| a - b)
                .collect();
            let frame_loss = |k: f64| {
                es.iter().map(|&e| huber_loss(e - k, cfg.delta_huber)).sum::<f64>() / es.len() as f64
            };
            let oracle = golden_section(frame_loss, -30.0, 40.0, 1e-10);
            assert!(
                (res.per_frame_k[i] - oracle).abs() < 1e-6,
                "frame {i}: irls {} vs golden-section {oracle}",
                res.per_frame_k[i]
            );
        }
    }

    #[test]
    fn outlier_robust_recovery_vs_clean_least_squares_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 10;
        let mut pairs = Vec::new();
        let mut clean_means = Vec::new();
        for i in 0..n {
            let true_k = 3.0 + rng.gen_range(-0.2f64..0.2);
            let (fourd, spin) = offset_pair(16, 24, true_k, 500 + i as u64);
            // Outlier-free least-squares oracle: grid-search the quadratic
            // per-frame loss, which lands on the residual mean.
            let es: Vec<f64> = fourd
                .pixels
                .iter()
                .zip(spin.pixels.iter())
                .filter(|(&a, &b)| a != 0.0 && b != 0.0)
                .map(|(&a, &b)| a - b)
                .collect();
            let sq = |k: f64| es.iter().map(|&e| (e - k).powi(2)).sum::<f64>();
            let mut best = (-30.0, sq(-30.0));
            let mut k = -30.0;
            while k <= 40.0 {
                let v = sq(k);
                if v < best.1 {
                    best = (k, v);
                }
                k += 0.001;
            }
            clean_means.push(best.0);

            let mut noisy = fourd;
            for idx in 0..noisy.pixels.len() {
                if noisy.pixels[idx] > 0.0 && rng.gen_bool(0.05) {
                    noisy.pixels[idx] += 20.0;
                }
            }
            pairs.push((noisy, spin));
        }
        // One-sided gross outliers bias a Huber fit by about delta*f/(1-f);
        // a transition point well below the outlier magnitude keeps that
        // bias inside the tolerance. Inlier residuals here are exact, so a
        // small delta costs nothing.
        let cfg = CalibrationConfig { delta_huber: 0.5, ..Default::default() };
        let res = calibrate_rcs(&pairs, &cfg).unwrap();
        let oracle_c = clean_means.iter().sum::<f64>() / n as f64;
        assert!(
            (res.c_corr - oracle_c).abs() < 0.05,
            "c_corr {} vs oracle {oracle_c}",
            res.c_corr
        );
    }

    #[test]
    fn objective_trace_is_non_increasing() {
        let pairs = noisy_pairs(10, 31);
        let res = calibrate_rcs(&pairs, &CalibrationConfig::default()).unwrap();
        for w in res.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0].abs()));
        }
        assert!(res.iterations_used >= 1);
    }

    #[test]
    fn large_lambda_flattens_offsets() {
        let mut pairs = Vec::new();
        for i in 0..6 {
            pairs.push(offset_pair(16, 24, 2.0 + i as f64 * 0.5, 900 + i as u64));
        }
        let strong = calibrate_rcs(
            &pairs,
            &CalibrationConfig { lambda_smooth: 1e7, ..Default::default() },
        )
        .unwrap();
        let spread = strong
            .per_frame_k
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &k| (lo.min(k), hi.max(k)));
        assert!(spread.1 - spread.0 < 1e-3, "spread {:?}", spread);

        let weak =
            calibrate_rcs(&pairs, &CalibrationConfig { lambda_smooth: 0.0, ..Default::default() })
                .unwrap();
        let spread_weak = weak
            .per_frame_k
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &k| (lo.min(k), hi.max(k)));
        assert!(spread_weak.1 - spread_weak.0 > 1.0);
    }

    #[test]
    fn empty_overlap_names_frame() {
        let grid = PolarGrid::new(2, 2, 10.0, TAU / 3.0).unwrap();
        let good = offset_pair(2, 2, 1.0, 77);
        let fourd = PolarImage::new(grid, 0.0, vec![5.0, 5.0, 0.0, 0.0]).unwrap();
        let spin = PolarImage::new(grid, 0.0, vec![0.0, 0.0, 4.0, 4.0]).unwrap();
        match calibrate_rcs(&[good, (fourd, spin)], &CalibrationConfig::default()) {
            Err(Error::EmptyOverlap { frame }) => assert_eq!(frame, 1),
            other => panic!("expected empty-overlap error, got {other:?}"),
        }
    }

    #[test]
    fn non_convergence_carries_last_iterate() {
        let pairs = noisy_pairs(6, 41);
        let cfg = CalibrationConfig { max_iterations: 1, tolerance: 1e-15, ..Default::default() };
        match calibrate_rcs(&pairs, &cfg) {
            Err(Error::CalibrationDiverged { iterations, last_k }) => {
                assert_eq!(iterations, 1);
                assert_eq!(last_k.len(), 6);
                assert!(last_k.iter().all(|k| k.is_finite()));
            }
            other => panic!("expected divergence error, got {other:?}"),
        }
    }
}
