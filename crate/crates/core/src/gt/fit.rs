//! Robust smoothing of lifted lane points.
//!
//! [`smooth_fit`] gates outliers against local cubic window fits at
//! 3x the median absolute deviation, then evaluates a moving
//! least-squares cubic of x(y) and z(y) on the fixed output grid. Point
//! sets that are not a function of y (large curvature, U-turns) go
//! through [`fit_with_rotation`]: the set is rotated so its principal
//! direction aligns with +y, checked for one-to-one-ness, fitted there
//! and rotated back.

use nalgebra::{DMatrix, DVector};

use super::GtError;
use crate::geometry::GroundPoint;
use crate::lane::Lane3D;

/// Least-squares polynomial fit val(t) of the given degree; returns the
/// coefficients lowest order first.
fn polyfit(ts: &[f64], vals: &[f64], degree: usize) -> Vec<f64> {
    debug_assert!(ts.len() > degree);
    // Center and scale for conditioning.
    let t0 = ts.iter().sum::<f64>() / ts.len() as f64;
    let scale = ts.iter().map(|t| (t - t0).abs()).fold(0.0f64, f64::max).max(1e-9);
    let a = DMatrix::from_fn(ts.len(), degree + 1, |i, j| ((ts[i] - t0) / scale).powi(j as i32));
    let b = DVector::from_column_slice(vals);
    let svd = a.svd(true, true);
    let sol = svd.solve(&b, 1e-12).expect("svd solve");
    // Expand back to coefficients in t: val(t) = sum c_j ((t - t0)/scale)^j.
    // Callers only evaluate through `polyval`, so keep the centered form.
    let mut out = vec![t0, scale];
    out.extend(sol.iter());
    out
}

fn polyval(coeffs: &[f64], t: f64) -> f64 {
    let (t0, scale) = (coeffs[0], coeffs[1]);
    let x = (t - t0) / scale;
    let mut acc = 0.0;
    for &c in coeffs[2..].iter().rev() {
        acc = acc * x + c;
    }
    acc
}

/// Leading eigenvector of the 2x2 covariance [[sxx, sxy], [sxy, syy]],
/// oriented so the y component is non-negative.
pub(crate) fn principal_direction(sxx: f64, sxy: f64, syy: f64) -> (f64, f64) {
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let lambda = tr / 2.0 + disc;
    let (mut dx, mut dy) = if sxy.abs() > 1e-12 {
        (lambda - syy, sxy)
    } else if sxx >= syy {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let norm = (dx * dx + dy * dy).sqrt();
    if norm > 0.0 {
        dx /= norm;
        dy /= norm;
    }
    if dy < 0.0 || (dy == 0.0 && dx < 0.0) {
        dx = -dx;
        dy = -dy;
    }
    (dx, dy)
}

// Lateral structure per 1 m longitudinal bin: spliced clouds carry
// near-duplicate y values with centimeter-level lateral scatter, so the
// detectors look at bin means and in-bin spreads instead of adjacent
// point pairs.
const BIN_H: f64 = 1.0;
const SPREAD_GATE: f64 = 1.5;
const SLOPE_GATE: f64 = 3.0;

fn bin_stats(points: &[GroundPoint]) -> Vec<(f64, f64, f64)> {
    // (y center, x mean, x spread), ascending in y, non-empty bins only.
    let y0 = points.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let mut bins: std::collections::BTreeMap<i64, Vec<f64>> = Default::default();
    for p in points {
        bins.entry(((p.y - y0) / BIN_H).floor() as i64).or_default().push(p.x);
    }
    bins.into_iter()
        .map(|(k, xs)| {
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let spread = if xs.len() < 2 {
                0.0
            } else {
                xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    - xs.iter().cloned().fold(f64::INFINITY, f64::min)
            };
            (y0 + (k as f64 + 0.5) * BIN_H, mean, spread)
        })
        .collect()
}

/// Whether x is (numerically) a single-valued function of y: no
/// longitudinal bin may span a lateral range wider than measurement
/// scatter explains. Interleaved branches fail decisively.
pub fn is_function_of_y(points: &[GroundPoint]) -> bool {
    crate::lane::single_valued_in_y(points)
}

/// Routing predicate for the fitting stage: wide in-bin spread (branch
/// structure or a near-lateral tangent) or a steep bin-to-bin slope
/// means a direct x(y) fit would fail, so the rotated fit is used.
pub fn needs_rotation(points: &[GroundPoint]) -> bool {
    let bins = bin_stats(points);
    if bins.iter().any(|&(_, _, spread)| spread >= SPREAD_GATE) {
        return true;
    }
    bins.windows(2).any(|w| {
        let dy = w[1].0 - w[0].0;
        (w[1].1 - w[0].1).abs() > SLOPE_GATE * dy
    })
}

// Reject points whose residual against a local cubic window fit exceeds
// the median residual by 3x the median absolute deviation (plus a 1 mm
// floor so exact data never self-rejects).
fn mad_outlier_mask(ys: &[f64], xs: &[f64], zs: &[f64]) -> Vec<bool> {
    let n = ys.len();
    let half = 4usize;
    let mut residuals = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        let (wy, wx, wz) = (&ys[lo..hi], &xs[lo..hi], &zs[lo..hi]);
        let degree = 3.min(wy.len() - 1);
        let cx = polyfit(wy, wx, degree);
        let cz = polyfit(wy, wz, degree);
        let rx = xs[i] - polyval(&cx, ys[i]);
        let rz = zs[i] - polyval(&cz, ys[i]);
        residuals.push((rx * rx + rz * rz).sqrt());
    }
    let mut sorted = residuals.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = sorted[n / 2];
    let mut dev: Vec<f64> = residuals.iter().map(|r| (r - med).abs()).collect();
    dev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mad = dev[n / 2];
    let gate = med + 3.0 * mad + 1e-3;
    residuals.iter().map(|&r| r <= gate).collect()
}

/// Sort by y and drop points failing the local-window MAD residual
/// gate. Used as a prepass before routing: wild lifted points would
/// otherwise masquerade as curvature structure.
pub fn reject_outliers(lane: &Lane3D) -> Result<Lane3D, GtError> {
    if lane.points.len() < 4 {
        return Err(GtError::DegenerateLane(format!(
            "outlier gate needs >= 4 points, got {}",
            lane.points.len()
        )));
    }
    let mut order: Vec<usize> = (0..lane.points.len()).collect();
    order.sort_by(|&a, &b| lane.points[a].y.partial_cmp(&lane.points[b].y).unwrap());
    let ys: Vec<f64> = order.iter().map(|&i| lane.points[i].y).collect();
    let xs: Vec<f64> = order.iter().map(|&i| lane.points[i].x).collect();
    let zs: Vec<f64> = order.iter().map(|&i| lane.points[i].z).collect();
    let keep = mad_outlier_mask(&ys, &xs, &zs);
    let kept = keep.iter().filter(|&&k| k).count();
    if kept < 4 {
        return Err(GtError::DegenerateLane(format!(
            "only {kept} points survive outlier rejection"
        )));
    }
    let mut out = lane.clone();
    out.points = Vec::with_capacity(kept);
    out.visibility = Vec::with_capacity(kept);
    for (slot, &i) in order.iter().enumerate() {
        if keep[slot] {
            out.points.push(lane.points[i]);
            out.visibility.push(lane.visibility[i]);
        }
    }
    Ok(out)
}

/// Outlier-gated least-squares cubic fit of x(y) and z(y), resampled at
/// `step_m` over the surviving y span. Visibility of the resampled
/// points follows the visible y span of the input.
pub fn smooth_fit(lane: &Lane3D, step_m: f64) -> Result<Lane3D, GtError> {
    if lane.points.len() < 4 {
        return Err(GtError::DegenerateLane(format!(
            "smooth fit needs >= 4 points, got {}",
            lane.points.len()
        )));
    }
    let mut order: Vec<usize> = (0..lane.points.len()).collect();
    order.sort_by(|&a, &b| lane.points[a].y.partial_cmp(&lane.points[b].y).unwrap());
    let ys: Vec<f64> = order.iter().map(|&i| lane.points[i].y).collect();
    let xs: Vec<f64> = order.iter().map(|&i| lane.points[i].x).collect();
    let zs: Vec<f64> = order.iter().map(|&i| lane.points[i].z).collect();
    let vis: Vec<bool> = order.iter().map(|&i| lane.visibility[i]).collect();

    let keep = mad_outlier_mask(&ys, &xs, &zs);
    let kept = keep.iter().filter(|&&k| k).count();
    if kept < 4 {
        return Err(GtError::DegenerateLane(format!(
            "only {kept} points survive outlier rejection"
        )));
    }
    let ky: Vec<f64> = ys.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| *v).collect();
    let kx: Vec<f64> = xs.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| *v).collect();
    let kz: Vec<f64> = zs.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| *v).collect();

    let vis_span = {
        let mut span: Option<(f64, f64)> = None;
        for ((&y, &v), &k) in ys.iter().zip(&vis).zip(&keep) {
            if v && k {
                span = Some(match span {
                    None => (y, y),
                    Some((lo, hi)) => (lo.min(y), hi.max(y)),
                });
            }
        }
        span
    };

    // Moving local cubic fit: windows large enough to smooth noise, small
    // enough to follow curvature a single global cubic cannot.
    let half_window = 6.0f64.max(4.0 * step_m);
    let min_pts = 8usize.min(kept);
    let eval_local = |vals: &[f64], y: f64| -> f64 {
        let lo = ky.partition_point(|&t| t < y - half_window);
        let hi = ky.partition_point(|&t| t <= y + half_window);
        let (mut lo, mut hi) = (lo, hi);
        while hi - lo < min_pts {
            if lo > 0 {
                lo -= 1;
            }
            if hi < ky.len() && hi - lo < min_pts {
                hi += 1;
            }
            if lo == 0 && hi == ky.len() {
                break;
            }
        }
        let degree = 3.min(hi - lo - 1);
        let c = polyfit(&ky[lo..hi], &vals[lo..hi], degree);
        polyval(&c, y)
    };

    // Resample on the absolute step grid covering the surviving span, so
    // output positions are stable round numbers.
    let (y0, y1) = (ky[0], *ky.last().unwrap());
    let first = (y0 / step_m).ceil() as i64;
    let last = (y1 / step_m).floor() as i64;
    let mut points = Vec::new();
    let mut visibility = Vec::new();
    for k in first..=last {
        let y = k as f64 * step_m;
        points.push(GroundPoint::new(eval_local(&kx, y), y, eval_local(&kz, y)));
        visibility.push(match vis_span {
            Some((lo, hi)) => y >= lo - 1e-9 && y <= hi + 1e-9,
            None => false,
        });
    }
    if points.len() < 2 {
        return Err(GtError::DegenerateLane("resampled span too short".into()));
    }
    Ok(Lane3D {
        points,
        visibility,
        category: lane.category,
        track_id: lane.track_id,
        importance_slot: lane.importance_slot,
    })
}

/// Fit a point set that is not a function of y: rotate its principal
/// direction onto +y, verify one-to-one-ness there, smooth, rotate back.
pub fn fit_with_rotation(lane: &Lane3D, step_m: f64) -> Result<Lane3D, GtError> {
    if lane.points.len() < 4 {
        return Err(GtError::DegenerateLane(format!(
            "rotation fit needs >= 4 points, got {}",
            lane.points.len()
        )));
    }
    let n = lane.points.len() as f64;
    let mx = lane.points.iter().map(|p| p.x).sum::<f64>() / n;
    let my = lane.points.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in &lane.points {
        let (dx, dy) = (p.x - mx, p.y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let (dx, dy) = principal_direction(sxx, sxy, syy);
    // Rotate so (dx, dy) lands on (0, 1).
    let angle = std::f64::consts::FRAC_PI_2 - dy.atan2(dx);
    let (s, c) = angle.sin_cos();
    let fwd = |p: &GroundPoint| {
        let (px, py) = (p.x - mx, p.y - my);
        GroundPoint::new(c * px - s * py, s * px + c * py, p.z)
    };
    let back = |p: &GroundPoint| {
        GroundPoint::new(c * p.x + s * p.y + mx, -s * p.x + c * p.y + my, p.z)
    };

    let mut rotated = lane.clone();
    rotated.points = lane.points.iter().map(fwd).collect();

    if !is_function_of_y(&rotated.points) {
        return Err(GtError::StillMultivalued { track_id: lane.track_id });
    }
    let fitted = smooth_fit(&rotated, step_m)?;
    let mut out = fitted.clone();
    out.points = fitted.points.iter().map(back).collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lane::LaneCategory;

    fn lane_from(points: Vec<GroundPoint>) -> Lane3D {
        let n = points.len();
        Lane3D {
            points,
            visibility: vec![true; n],
            category: LaneCategory::SingleWhiteDash,
            track_id: 1,
            importance_slot: None,
        }
    }

    fn cubic_lane(n: usize) -> Lane3D {
        let f = |y: f64| 1.5 + 0.03 * y - 4e-4 * y * y + 2e-6 * y * y * y;
        let g = |y: f64| 0.2 + 0.01 * y - 1e-5 * y * y;
        lane_from(
            (0..n)
                .map(|k| {
                    let y = 2.0 + k as f64 * (96.0 / n as f64);
                    GroundPoint::new(f(y), y, g(y))
                })
                .collect(),
        )
    }

    #[test]
    fn exact_cubic_recovered() {
        let lane = cubic_lane(50);
        let fitted = smooth_fit(&lane, 0.5).unwrap();
        let f = |y: f64| 1.5 + 0.03 * y - 4e-4 * y * y + 2e-6 * y * y * y;
        let g = |y: f64| 0.2 + 0.01 * y - 1e-5 * y * y;
        for p in &fitted.points {
            assert!((p.x - f(p.y)).abs() < 1e-9, "x at y={}: {} vs {}", p.y, p.x, f(p.y));
            assert!((p.z - g(p.y)).abs() < 1e-9);
        }
    }

    #[test]
    fn single_outlier_rejected() {
        let mut lane = cubic_lane(50);
        let clean = smooth_fit(&lane, 0.5).unwrap();
        // 5 m lateral outlier in the middle.
        lane.points[25].x += 5.0;
        let gated = smooth_fit(&lane, 0.5).unwrap();
        for (a, b) in clean.points.iter().zip(&gated.points) {
            assert!((a.x - b.x).abs() < 1e-3, "fit moved by {}", (a.x - b.x).abs());
            assert!((a.z - b.z).abs() < 1e-3);
        }
    }

    #[test]
    fn too_few_points_rejected() {
        let lane = lane_from(vec![
            GroundPoint::on_ground(0.0, 1.0),
            GroundPoint::on_ground(0.0, 2.0),
            GroundPoint::on_ground(0.0, 3.0),
        ]);
        assert!(matches!(smooth_fit(&lane, 0.5), Err(GtError::DegenerateLane(_))));
        assert!(matches!(fit_with_rotation(&lane, 0.5), Err(GtError::DegenerateLane(_))));
    }

    #[test]
    fn visibility_span_carries_over() {
        let mut lane = cubic_lane(50);
        // Only the middle y range is visible.
        for (p, v) in lane.points.iter().zip(lane.visibility.iter_mut()) {
            *v = p.y >= 30.0 && p.y <= 60.0;
        }
        // The span of input points actually marked visible.
        let lo = lane
            .points
            .iter()
            .zip(&lane.visibility)
            .filter(|(_, &v)| v)
            .map(|(p, _)| p.y)
            .fold(f64::INFINITY, f64::min);
        let hi = lane
            .points
            .iter()
            .zip(&lane.visibility)
            .filter(|(_, &v)| v)
            .map(|(p, _)| p.y)
            .fold(f64::NEG_INFINITY, f64::max);
        let fitted = smooth_fit(&lane, 0.5).unwrap();
        for (p, &v) in fitted.points.iter().zip(&fitted.visibility) {
            assert_eq!(v, p.y >= lo - 1e-9 && p.y <= hi + 1e-9, "y {}", p.y);
        }
    }

    #[test]
    fn axis_aligned_lane_rotation_is_identity() {
        let lane = lane_from(
            (0..20).map(|k| GroundPoint::on_ground(2.0, 5.0 * k as f64 + 3.0)).collect(),
        );
        let fitted = fit_with_rotation(&lane, 1.0).unwrap();
        for p in &fitted.points {
            assert!((p.x - 2.0).abs() < 1e-9);
        }
        // Principal direction of a y-aligned set is +y, so the rotation
        // angle is zero up to sign.
        let (dx, dy) = principal_direction(0.0, 0.0, 25.0);
        assert_eq!((dx, dy), (0.0, 1.0));
    }

    #[test]
    fn quarter_circle_fits_within_2cm() {
        let r = 20.0;
        // Quarter arc from (20, 30) bending to (0, 50): multivalued in
        // neither axis after rotation by the principal direction.
        let lane = lane_from(
            (0..=60)
                .map(|k| {
                    let a = std::f64::consts::FRAC_PI_2 * k as f64 / 60.0;
                    GroundPoint::new(r * a.cos(), 30.0 + r * a.sin(), 0.3)
                })
                .collect(),
        );
        assert!(needs_rotation(&lane.points), "vertical-tangent arc must route to rotation");
        let fitted = fit_with_rotation(&lane, 0.5).unwrap();
        assert!(fitted.points.len() > 10);
        for p in &fitted.points {
            let dist_to_arc = ((p.x.powi(2) + (p.y - 30.0).powi(2)).sqrt() - r).abs();
            assert!(dist_to_arc < 0.02, "deviation {dist_to_arc} at ({}, {})", p.x, p.y);
            assert!((p.z - 0.3).abs() < 1e-6);
        }
    }

    #[test]
    fn full_circle_is_still_multivalued() {
        let lane = lane_from(
            (0..80)
                .map(|k| {
                    let a = std::f64::consts::TAU * k as f64 / 80.0;
                    GroundPoint::new(15.0 * a.cos(), 40.0 + 15.0 * a.sin(), 0.0)
                })
                .collect(),
        );
        assert!(matches!(
            fit_with_rotation(&lane, 0.5),
            Err(GtError::StillMultivalued { track_id: 1 })
        ));
    }

    #[test]
    fn function_of_y_detector() {
        let straight: Vec<GroundPoint> =
            (0..30).map(|k| GroundPoint::on_ground(0.1 * k as f64, k as f64)).collect();
        assert!(is_function_of_y(&straight));
        let uturn: Vec<GroundPoint> = (0..=40)
            .map(|k| {
                let a = std::f64::consts::PI * k as f64 / 40.0;
                GroundPoint::on_ground(8.0 * a.cos(), 30.0 + 8.0 * a.sin())
            })
            .collect();
        assert!(!is_function_of_y(&uturn));
    }
}
