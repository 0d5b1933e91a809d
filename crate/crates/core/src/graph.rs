//! Pose graph with odometric and loop-closing edges.

use std::collections::HashSet;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{MapError, Result};
use crate::geometry::{compound_diff, wrap_angle, Pose, RelativeMeasurement, RelativePose};
use crate::loop_closure::LoopClosure;

/// Lower bound applied to every diagonal entry of an odometric covariance.
pub const ODOM_VARIANCE_FLOOR: f64 = 1e-8;

/// Gains of the odometry motion model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdomNoiseParams {
    /// rotation noise from rotation
    pub alpha1: f64,
    /// rotation noise from translation
    pub alpha2: f64,
    /// translation noise from translation
    pub alpha3: f64,
    /// translation noise from rotation
    pub alpha4: f64,
}

impl Default for OdomNoiseParams {
    /// Values calibrated for a Viking MI 422P lawn mower.
    fn default() -> Self {
        Self {
            alpha1: 0.0849,
            alpha2: 0.0412,
            alpha3: 0.0316,
            alpha4: 0.0173,
        }
    }
}

impl OdomNoiseParams {
    pub fn uniform(alpha: f64) -> Self {
        Self {
            alpha1: alpha,
            alpha2: alpha,
            alpha3: alpha,
            alpha4: alpha,
        }
    }

    pub fn zero() -> Self {
        Self::uniform(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha1, self.alpha2, self.alpha3, self.alpha4];
        if all.iter().all(|a| a.is_finite() && *a >= 0.0) {
            Ok(())
        } else {
            Err(MapError::InvalidConfig(format!("noise gains must be >= 0: {self:?}")))
        }
    }

    /// Variance of the translation noise for one increment.
    pub fn translation_variance(&self, delta_t: f64, delta_r: f64) -> f64 {
        self.alpha3 * delta_t + self.alpha4 * delta_r
    }

    /// Variance of the rotation noise for one increment.
    pub fn rotation_variance(&self, delta_t: f64, delta_r: f64) -> f64 {
        self.alpha1 * delta_r + self.alpha2 * delta_t
    }
}

/// Diagonal odometric covariance for one step starting at `prev`.
///
/// The translational entries are `|cos φ|·σ²_T` and `|sin φ|·σ²_T`; all three
/// entries are floored at [`ODOM_VARIANCE_FLOOR`].
pub fn odom_covariance(prev: &Pose, delta_t: f64, delta_r: f64, a: &OdomNoiseParams) -> Matrix3<f64> {
    let trans = a.translation_variance(delta_t, delta_r);
    let rot = a.rotation_variance(delta_t, delta_r);
    Matrix3::from_diagonal(&Vector3::new(
        (prev.phi.cos() * trans).abs().max(ODOM_VARIANCE_FLOOR),
        (prev.phi.sin() * trans).abs().max(ODOM_VARIANCE_FLOOR),
        rot.max(ODOM_VARIANCE_FLOOR),
    ))
}

/// Translation and rotation magnitude of the step between two poses.
pub fn step_magnitudes(a: &Pose, b: &Pose) -> (f64, f64) {
    (
        (b.position() - a.position()).norm(),
        wrap_angle(b.phi - a.phi).abs(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub measurement: RelativeMeasurement,
}

impl Edge {
    pub fn mean(&self) -> &RelativePose {
        &self.measurement.mean
    }
}

/// Directed pose graph: `N + 1` vertices, `N` odometric edges between
/// consecutive vertices and `M` loop-closing edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphFile", into = "GraphFile")]
pub struct PoseGraph {
    vertices: Vec<Pose>,
    odom_edges: Vec<Edge>,
    lc_edges: Vec<Edge>,
}

impl PoseGraph {
    /// Builds the odometric chain over a path.
    pub fn build(path: &[Pose], noise: &OdomNoiseParams) -> Result<Self> {
        if path.len() < 2 {
            return Err(MapError::TooFewPoses {
                needed: 2,
                got: path.len(),
            });
        }
        let odom_edges = path
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let (dt, dr) = step_magnitudes(&w[0], &w[1]);
                let cov = odom_covariance(&w[0], dt, dr, noise);
                Ok(Edge {
                    i: k,
                    j: k + 1,
                    measurement: RelativeMeasurement::new(compound_diff(&w[0], &w[1]), cov)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            vertices: path.to_vec(),
            odom_edges,
            lc_edges: Vec::new(),
        })
    }

    /// Assembles a graph from parts, checking the structural invariants.
    pub fn from_parts(vertices: Vec<Pose>, odom_edges: Vec<Edge>, lc_edges: Vec<Edge>) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(MapError::TooFewPoses {
                needed: 2,
                got: vertices.len(),
            });
        }
        if odom_edges.len() != vertices.len() - 1 {
            return Err(MapError::LengthMismatch(format!(
                "{} vertices need {} odometric edges, got {}",
                vertices.len(),
                vertices.len() - 1,
                odom_edges.len()
            )));
        }
        for (k, e) in odom_edges.iter().enumerate() {
            if e.i != k || e.j != k + 1 {
                return Err(MapError::InvalidClosure {
                    i: e.i,
                    j: e.j,
                    reason: format!("odometric edge {k} must connect {k} and {}", k + 1),
                });
            }
        }
        let g = Self {
            vertices,
            odom_edges,
            lc_edges: Vec::new(),
        };
        g.with_loop_edges(lc_edges)
    }

    /// Returns a new graph with additional loop-closing edges.
    pub fn with_loop_edges(&self, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let mut seen: HashSet<(usize, usize)> = self.lc_edges.iter().map(|e| (e.i, e.j)).collect();
        let mut lc_edges = self.lc_edges.clone();
        for e in edges {
            let bad = |reason: &str| MapError::InvalidClosure {
                i: e.i,
                j: e.j,
                reason: reason.to_string(),
            };
            if e.j >= self.vertices.len() {
                return Err(bad("index out of range"));
            }
            if e.i >= e.j {
                return Err(bad("requires i < j"));
            }
            if e.j == e.i + 1 {
                return Err(bad("consecutive vertices are already linked by odometry"));
            }
            if !seen.insert((e.i, e.j)) {
                return Err(bad("duplicate pair"));
            }
            lc_edges.push(e);
        }
        Ok(Self {
            vertices: self.vertices.clone(),
            odom_edges: self.odom_edges.clone(),
            lc_edges,
        })
    }

    /// Adds one loop edge per closure. Every closure needs a constraint.
    pub fn add_loop_closures(&self, closures: &[LoopClosure]) -> Result<Self> {
        let edges = closures
            .iter()
            .map(|c| {
                let measurement = c.constraint.ok_or_else(|| MapError::InvalidClosure {
                    i: c.i,
                    j: c.j,
                    reason: "no constraint attached".into(),
                })?;
                Ok(Edge { i: c.i, j: c.j, measurement })
            })
            .collect::<Result<Vec<_>>>()?;
        self.with_loop_edges(edges)
    }

    /// Same edges, different vertex estimates.
    pub fn with_vertices(&self, vertices: Vec<Pose>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(MapError::LengthMismatch(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        Ok(Self {
            vertices,
            odom_edges: self.odom_edges.clone(),
            lc_edges: self.lc_edges.clone(),
        })
    }

    pub fn vertices(&self) -> &[Pose] {
        &self.vertices
    }

    pub fn odom_edges(&self) -> &[Edge] {
        &self.odom_edges
    }

    pub fn lc_edges(&self) -> &[Edge] {
        &self.lc_edges
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.odom_edges.iter().chain(self.lc_edges.iter())
    }

    /// Number of odometric edges.
    pub fn n(&self) -> usize {
        self.odom_edges.len()
    }

    /// Number of loop-closing edges.
    pub fn m(&self) -> usize {
        self.lc_edges.len()
    }

    /// Path length along the vertex chain between `i` and `j` (`i ≤ j`).
    pub fn chain_length(&self, i: usize, j: usize) -> f64 {
        self.vertices[i..=j]
            .windows(2)
            .map(|w| (w[1].position() - w[0].position()).norm())
            .sum()
    }
}

#[derive(Serialize, Deserialize)]
struct EdgeFile {
    i: usize,
    j: usize,
    mean: [f64; 3],
    cov: [f64; 9],
}

/// On-disk layout of a [`PoseGraph`].
#[derive(Serialize, Deserialize)]
struct GraphFile {
    vertices: Vec<Pose>,
    odom_edges: Vec<EdgeFile>,
    lc_edges: Vec<EdgeFile>,
}

impl From<&Edge> for EdgeFile {
    fn from(e: &Edge) -> Self {
        let c = e.measurement.cov();
        let mut cov = [0.0; 9];
        for r in 0..3 {
            for k in 0..3 {
                cov[3 * r + k] = c[(r, k)];
            }
        }
        Self {
            i: e.i,
            j: e.j,
            mean: e.measurement.mean.into(),
            cov,
        }
    }
}

impl TryFrom<EdgeFile> for Edge {
    type Error = MapError;

    fn try_from(e: EdgeFile) -> Result<Self> {
        let cov = Matrix3::from_row_slice(&e.cov);
        Ok(Self {
            i: e.i,
            j: e.j,
            measurement: RelativeMeasurement::new(e.mean.into(), cov)?,
        })
    }
}

impl From<PoseGraph> for GraphFile {
    fn from(g: PoseGraph) -> Self {
        Self {
            vertices: g.vertices.clone(),
            odom_edges: g.odom_edges.iter().map(EdgeFile::from).collect(),
            lc_edges: g.lc_edges.iter().map(EdgeFile::from).collect(),
        }
    }
}

impl TryFrom<GraphFile> for PoseGraph {
    type Error = MapError;

    fn try_from(f: GraphFile) -> Result<Self> {
        let odom = f.odom_edges.into_iter().map(Edge::try_from).collect::<Result<Vec<_>>>()?;
        let lc = f.lc_edges.into_iter().map(Edge::try_from).collect::<Result<Vec<_>>>()?;
        PoseGraph::from_parts(f.vertices, odom, lc)
    }
}
