//! Planar pose algebra.
//!
//! Headings are kept in the half-open interval `[-π, π)`; every constructor
//! wraps its angle argument.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{MapError, Result};

/// Wraps an angle into `[-π, π)`.
///
/// Odd multiples of π map to `-π`.
pub fn wrap_angle(a: f64) -> f64 {
    if (-PI..PI).contains(&a) {
        return a;
    }
    let w = (a + PI).rem_euclid(TAU) - PI;
    // rem_euclid may round up to exactly TAU for tiny negative inputs
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Planar rotation by `phi`.
pub fn rotation(phi: f64) -> Matrix2<f64> {
    let (s, c) = phi.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Robot pose: position in meters, heading in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, phi: f64) -> Self {
        Self {
            x,
            y,
            phi: wrap_angle(phi),
        }
    }

    pub fn origin() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.phi)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.phi.is_finite()
    }

    /// Maps a point given in this pose's frame into the world frame.
    pub fn transform_point(&self, p: &Vector2<f64>) -> Vector2<f64> {
        rotation(self.phi) * p + self.position()
    }

    /// Maps a world point into this pose's frame.
    pub fn inverse_transform_point(&self, p: &Vector2<f64>) -> Vector2<f64> {
        rotation(self.phi).transpose() * (p - self.position())
    }
}

impl From<[f64; 3]> for Pose {
    fn from(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

impl From<Pose> for [f64; 3] {
    fn from(p: Pose) -> Self {
        [p.x, p.y, p.phi]
    }
}

/// Mean of a relative pose measurement, expressed in the frame of the first pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct RelativePose {
    pub dx: f64,
    pub dy: f64,
    pub dphi: f64,
}

impl RelativePose {
    pub fn new(dx: f64, dy: f64, dphi: f64) -> Self {
        Self {
            dx,
            dy,
            dphi: wrap_angle(dphi),
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn translation(&self) -> Vector2<f64> {
        Vector2::new(self.dx, self.dy)
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.dx, self.dy, self.dphi)
    }

    /// Treats the increment as a pose of the second frame inside the first.
    pub fn as_pose(&self) -> Pose {
        Pose::new(self.dx, self.dy, self.dphi)
    }
}

impl From<[f64; 3]> for RelativePose {
    fn from(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

impl From<RelativePose> for [f64; 3] {
    fn from(r: RelativePose) -> Self {
        [r.dx, r.dy, r.dphi]
    }
}

/// A relative pose measurement with its noise covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeMeasurement {
    pub mean: RelativePose,
    cov: Matrix3<f64>,
}

impl RelativeMeasurement {
    pub fn new(mean: RelativePose, cov: Matrix3<f64>) -> Result<Self> {
        check_covariance(&cov)?;
        Ok(Self { mean, cov })
    }

    pub fn cov(&self) -> &Matrix3<f64> {
        &self.cov
    }

    /// Inverse covariance. Always exists because the covariance is SPD.
    pub fn information(&self) -> Matrix3<f64> {
        self.cov
            .cholesky()
            .map(|c| c.inverse())
            .expect("covariance validated as SPD on construction")
    }
}

/// Checks symmetry (relative tolerance 1e-9) and positive definiteness.
pub fn check_covariance(cov: &Matrix3<f64>) -> Result<()> {
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(MapError::InvalidCovariance("non-finite entry".into()));
    }
    let scale = cov.amax().max(f64::MIN_POSITIVE);
    if (cov - cov.transpose()).amax() > 1e-9 * scale {
        return Err(MapError::InvalidCovariance("not symmetric".into()));
    }
    match cov.cholesky() {
        Some(c) if c.l_dirty().diagonal().iter().all(|d| *d > 0.0) => Ok(()),
        _ => Err(MapError::InvalidCovariance("not positive definite".into())),
    }
}

/// Relative pose of `pj` seen from `pi`: `[R_iᵀ (x_j − x_i), wrap(φ_j − φ_i)]`.
pub fn compound_diff(pi: &Pose, pj: &Pose) -> RelativePose {
    let d = rotation(pi.phi).transpose() * (pj.position() - pi.position());
    RelativePose::new(d.x, d.y, pj.phi - pi.phi)
}

/// Applies an increment expressed in the frame of `pi`; inverse of [`compound_diff`].
pub fn compound_apply(pi: &Pose, xi: &RelativePose) -> Pose {
    let p = pi.position() + rotation(pi.phi) * xi.translation();
    Pose::new(p.x, p.y, pi.phi + xi.dphi)
}
