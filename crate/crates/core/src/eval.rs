//! Error metrics against ground truth.

use std::f64::consts::TAU;

use nalgebra::{Point2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MapError, Result};
use crate::geometry::{compound_diff, wrap_angle, Pose};
use crate::graph::PoseGraph;
use crate::icp::ConstraintMode;
use crate::loop_closure::{LoopClosure, LoopClosureConfig};
use crate::polygon::{remove_self_intersections, CleanupReport, MapPolygon};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub e_trans: Option<f64>,
    pub e_rot: Option<f64>,
    pub delta_a: Option<f64>,
    /// Set when the estimated polygon needed self-intersection cleanup.
    pub cleanup: Option<CleanupReport>,
    pub circumference: Option<f64>,
    pub seed: u64,
    pub loop_closure: LoopClosureConfig,
    pub gamma: (f64, f64),
    pub mode: ConstraintMode,
}

/// Mean squared translational and rotational discrepancy of the relative
/// transforms along every graph edge, estimate against truth.
pub fn relative_error(estimated: &PoseGraph, truth: &[Pose]) -> Result<(f64, f64)> {
    let est = estimated.vertices();
    if est.len() != truth.len() {
        return Err(MapError::LengthMismatch(format!(
            "{} estimated poses against {} true poses",
            est.len(),
            truth.len()
        )));
    }
    let (mut t, mut r, mut n) = (0.0, 0.0, 0usize);
    for e in estimated.edges() {
        let xi = compound_diff(&est[e.i], &est[e.j]).as_pose();
        let xi_true = compound_diff(&truth[e.i], &truth[e.j]).as_pose();
        let d = compound_diff(&xi_true, &xi);
        t += d.translation().norm_squared();
        r += wrap_angle(d.dphi).powi(2);
        n += 1;
    }
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    Ok((t / n as f64, r / n as f64))
}

/// `1 − IoU` without any alignment.
pub fn area_error_fixed(estimate: &MapPolygon, truth: &MapPolygon) -> f64 {
    (1.0 - estimate.iou(truth)).clamp(0.0, 1.0)
}

fn aligned(estimate: &MapPolygon, truth_centroid: Point2<f64>, angle: f64, shift: Vector2<f64>) -> MapPolygon {
    let c = estimate.centroid();
    estimate.transformed(angle, c, truth_centroid - c + shift)
}

/// `1 − IoU` after the best rigid alignment of `estimate` onto `truth`.
///
/// Centroids are matched first. The rotation is chosen on a 360-step grid and
/// refined by golden-section search; a final compass search over rotation and
/// translation polishes the result.
pub fn area_error(estimate: &MapPolygon, truth: &MapPolygon) -> f64 {
    let tc = truth.centroid();
    let score = |angle: f64, shift: Vector2<f64>| aligned(estimate, tc, angle, shift).iou(truth);
    let grid = 360;
    let step = TAU / grid as f64;
    let (k_best, mut best) = (0..grid)
        .into_par_iter()
        .map(|k| (k, score(k as f64 * step, Vector2::zeros())))
        .reduce(|| (0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a });
    let mut angle = k_best as f64 * step;

    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (angle - step, angle + step);
    let (mut x1, mut x2) = (b - ratio * (b - a), a + ratio * (b - a));
    let (mut f1, mut f2) = (score(x1, Vector2::zeros()), score(x2, Vector2::zeros()));
    while b - a > 1e-7 {
        if f1 > f2 {
            b = x2;
            (x2, f2) = (x1, f1);
            x1 = b - ratio * (b - a);
            f1 = score(x1, Vector2::zeros());
        } else {
            a = x1;
            (x1, f1) = (x2, f2);
            x2 = a + ratio * (b - a);
            f2 = score(x2, Vector2::zeros());
        }
    }
    let mid = 0.5 * (a + b);
    let fm = score(mid, Vector2::zeros());
    if fm > best {
        (angle, best) = (mid, fm);
    }

    let mut shift = Vector2::zeros();
    let mut h = 0.02 * truth.area().sqrt();
    let mut turn = step / 4.0;
    while h > 1e-6 * truth.area().sqrt() {
        let mut moved = false;
        let moves = [
            (0.0, Vector2::new(h, 0.0)),
            (0.0, Vector2::new(-h, 0.0)),
            (0.0, Vector2::new(0.0, h)),
            (0.0, Vector2::new(0.0, -h)),
            (turn, Vector2::zeros()),
            (-turn, Vector2::zeros()),
        ];
        for (da, ds) in moves {
            let s = score(angle + da, shift + ds);
            if s > best {
                (best, angle, shift, moved) = (s, angle + da, shift + ds, true);
            }
        }
        if !moved {
            h /= 2.0;
            turn /= 2.0;
        }
    }
    (1.0 - best).clamp(0.0, 1.0)
}

/// Polygon of one lap of the graph's vertex chain.
///
/// The lap runs between the loop closure whose path distance is closest to
/// `circumference`; without closures it is the first `circumference` meters
/// of the chain.
pub fn polygon_from_graph(
    g: &PoseGraph,
    closures: &[LoopClosure],
    circumference: f64,
) -> Result<(MapPolygon, CleanupReport)> {
    let v = g.vertices();
    let (i, j) = match closures
        .iter()
        .filter(|c| c.j < v.len())
        .min_by(|a, b| (a.u_ij - circumference).abs().total_cmp(&(b.u_ij - circumference).abs()))
    {
        Some(c) => (c.i, c.j),
        None => {
            if circumference.is_nan() || circumference <= 0.0 {
                return Err(MapError::LapExtraction("no closures and no circumference".into()));
            }
            let mut acc = 0.0;
            let end = (1..v.len()).find(|&k| {
                acc += (v[k].position() - v[k - 1].position()).norm();
                acc >= circumference
            });
            match end {
                Some(j) => (0, j),
                None => return Err(MapError::LapExtraction("path is shorter than one lap".into())),
            }
        }
    };
    if j < i + 3 {
        return Err(MapError::LapExtraction(format!("lap {i}..{j} has too few vertices")));
    }
    let pts: Vec<Point2<f64>> = v[i..j].iter().map(|p| Point2::from(p.position())).collect();
    remove_self_intersections(&pts)
}
