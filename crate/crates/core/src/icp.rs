//! Loop-closure constraints from 2-D point-to-point ICP on path neighborhoods.

use nalgebra::{Matrix3, Point2, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MapError, Result};
use crate::geometry::{rotation, wrap_angle, Pose, RelativeMeasurement, RelativePose};
use crate::loop_closure::{LoopClosure, OrientationProfile};

/// Smallest comparison error used to scale a closure covariance.
pub const C_FLOOR: f64 = 1e-6;

/// Path points around an anchor pose, in the anchor's frame.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodCloud {
    pub points: Vec<Point2<f64>>,
}

/// Samples the path every `spacing` meters of arc length within `±l_nh` of
/// breakpoint `center` and expresses the samples in the frame of the center
/// pose.
pub fn extract_cloud(
    path: &[Pose],
    profile: &OrientationProfile,
    center: usize,
    l_nh: f64,
    spacing: f64,
) -> Result<NeighborhoodCloud> {
    let l = profile.lengths();
    if center >= l.len() || l[center] - l_nh < -1e-9 || l[center] + l_nh > profile.total_length() + 1e-9 {
        return Err(MapError::NeighborhoodOutOfRange { center });
    }
    if spacing.is_nan() || spacing <= 0.0 {
        return Err(MapError::InvalidConfig(format!("spacing must be > 0, got {spacing}")));
    }
    let src = profile.source_indices();
    let anchor = path[src[center]];
    let count = (2.0 * l_nh / spacing + 1e-9).floor() as usize + 1;
    let half = (count - 1) as f64 * spacing / 2.0;
    let points = (0..count)
        .map(|k| {
            let s = (l[center] - half + k as f64 * spacing).clamp(0.0, profile.total_length());
            let seg = l.partition_point(|x| *x <= s).clamp(1, l.len() - 1);
            let (a, b) = (path[src[seg - 1]].position(), path[src[seg]].position());
            let f = (s - l[seg - 1]) / (l[seg] - l[seg - 1]);
            let world = a + (b - a) * f;
            Point2::from(anchor.inverse_transform_point(&world))
        })
        .collect::<Vec<_>>();
    if points.len() < 3 {
        return Err(MapError::InsufficientData {
            needed: 3,
            got: points.len(),
        });
    }
    Ok(NeighborhoodCloud { points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpConfig {
    pub max_iters: usize,
    /// meters
    pub tol: f64,
    /// meters
    pub spacing: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-6,
            spacing: 0.25,
        }
    }
}

/// Rigid transform `x ↦ R(beta)·x + t` found by [`icp`].
#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub beta: f64,
    pub t: Vector2<f64>,
    /// Mean nearest-neighbor distance after alignment.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Mean residual of every accepted iterate, starting with the identity.
    pub history: Vec<f64>,
}

fn nearest(p: &Point2<f64>, cloud: &[Point2<f64>]) -> (usize, f64) {
    cloud
        .iter()
        .enumerate()
        .map(|(k, q)| (k, (q - p).norm_squared()))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .map(|(k, d)| (k, d.sqrt()))
        .unwrap()
}

fn correspondences(a: &[Point2<f64>], b: &[Point2<f64>], beta: f64, t: &Vector2<f64>) -> (Vec<(usize, f64)>, f64) {
    let r = rotation(beta);
    let nn: Vec<(usize, f64)> = a.iter().map(|p| nearest(&(r * p + t), b)).collect();
    let mean = nn.iter().map(|x| x.1).sum::<f64>() / nn.len() as f64;
    (nn, mean)
}

/// Least-squares rotation and translation taking `src` onto `dst`.
pub fn fit_rigid(src: &[Point2<f64>], dst: &[Point2<f64>]) -> (f64, Vector2<f64>) {
    let n = src.len() as f64;
    let cs = src.iter().fold(Vector2::zeros(), |acc, p| acc + p.coords) / n;
    let cd = dst.iter().fold(Vector2::zeros(), |acc, p| acc + p.coords) / n;
    let (mut sin_sum, mut cos_sum) = (0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let (s, d) = (s.coords - cs, d.coords - cd);
        sin_sum += s.x * d.y - s.y * d.x;
        cos_sum += s.x * d.x + s.y * d.y;
    }
    let beta = sin_sum.atan2(cos_sum);
    (beta, cd - rotation(beta) * cs)
}

/// Aligns `a` onto `b`: finds `β, t` with `R(β)·a + t ≈ b`.
///
/// Correspondences are single nearest neighbors; pairs farther apart than
/// three times the current mean residual are left out of the fit. Stops when
/// the correspondences repeat, the mean residual changes by less than `tol`,
/// or after `max_iters` fits. An iterate that would raise the residual is not
/// accepted.
pub fn icp(a: &NeighborhoodCloud, b: &NeighborhoodCloud, max_iters: usize, tol: f64) -> Result<IcpResult> {
    if a.points.is_empty() || b.points.is_empty() {
        return Err(MapError::InsufficientData { needed: 1, got: 0 });
    }
    let (mut beta, mut t) = (0.0, Vector2::zeros());
    let (mut nn, mut residual) = correspondences(&a.points, &b.points, beta, &t);
    let mut history = vec![residual];
    let mut converged = residual == 0.0;
    let mut iterations = 0;
    while !converged && iterations < max_iters {
        iterations += 1;
        let cap = 3.0 * residual;
        let (src, dst): (Vec<_>, Vec<_>) = nn
            .iter()
            .enumerate()
            .filter(|(_, (_, d))| *d <= cap)
            .map(|(k, (q, _))| (a.points[k], b.points[*q]))
            .unzip();
        if src.len() < 2 {
            break;
        }
        let (nb, nt) = fit_rigid(&src, &dst);
        let (next_nn, next_res) = correspondences(&a.points, &b.points, nb, &nt);
        if next_res > residual {
            converged = true;
            break;
        }
        let stable = next_nn.iter().zip(&nn).all(|(x, y)| x.0 == y.0);
        converged = stable || residual - next_res < tol;
        beta = nb;
        t = nt;
        nn = next_nn;
        residual = next_res;
        history.push(residual);
    }
    Ok(IcpResult {
        beta: wrap_angle(beta),
        t,
        residual,
        iterations,
        converged,
        history,
    })
}

/// Closure measurement with covariance `diag(γ₁, γ₁, γ₂)·max(C_ij, C_FLOOR)`.
pub fn closure_constraint(beta: f64, t: Vector2<f64>, c_ij: f64, gamma1: f64, gamma2: f64) -> Result<RelativeMeasurement> {
    if !(gamma1 > 0.0 && gamma2 > 0.0) {
        return Err(MapError::InvalidConfig(format!(
            "gamma1 and gamma2 must be > 0, got {gamma1}, {gamma2}"
        )));
    }
    let c = c_ij.max(C_FLOOR);
    RelativeMeasurement::new(
        RelativePose::new(t.x, t.y, beta),
        Matrix3::from_diagonal(&Vector3::new(gamma1 * c, gamma1 * c, gamma2 * c)),
    )
}

/// How closure measurements are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintMode {
    /// Zero-mean measurements: the two poses are asserted to coincide.
    Original,
    /// ICP alignment of the two neighborhoods.
    #[default]
    Adjusted,
}

/// Fills in the constraint of every closure. Closures whose neighborhood
/// cannot be sampled are dropped.
pub fn attach_constraints(
    path: &[Pose],
    profile: &OrientationProfile,
    closures: &[LoopClosure],
    l_nh: f64,
    gamma: (f64, f64),
    mode: ConstraintMode,
    icp_cfg: &IcpConfig,
) -> Result<Vec<LoopClosure>> {
    let src = profile.source_indices();
    let index_of = |v: usize| src.binary_search(&v).ok();
    let out: Vec<Result<Option<LoopClosure>>> = closures
        .par_iter()
        .map(|c| {
            let (beta, t) = match mode {
                ConstraintMode::Original => (0.0, Vector2::zeros()),
                ConstraintMode::Adjusted => {
                    let (Some(pi), Some(pj)) = (index_of(c.i), index_of(c.j)) else {
                        return Ok(None);
                    };
                    let (ci, cj) = match (
                        extract_cloud(path, profile, pi, l_nh, icp_cfg.spacing),
                        extract_cloud(path, profile, pj, l_nh, icp_cfg.spacing),
                    ) {
                        (Ok(ci), Ok(cj)) => (ci, cj),
                        _ => return Ok(None),
                    };
                    // the j-frame cloud mapped into the i frame gives p_j seen from p_i
                    let r = icp(&cj, &ci, icp_cfg.max_iters, icp_cfg.tol)?;
                    (r.beta, r.t)
                }
            };
            let measurement = closure_constraint(beta, t, c.c_ij, gamma.0, gamma.1)?;
            Ok(Some(LoopClosure {
                constraint: Some(measurement),
                ..*c
            }))
        })
        .collect();
    out.into_iter()
        .filter_map(|r| r.transpose())
        .collect()
}
