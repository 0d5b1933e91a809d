//! Shape-based loop closure detection on the accumulated orientation profile.

use std::collections::VecDeque;
use std::f64::consts::{PI, TAU};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MapError, Result};
use crate::geometry::{wrap_angle, Pose, RelativeMeasurement};

/// Accumulated heading over accumulated path length.
///
/// `θ(x) = φ_i` for `l_{i-1} ≤ x < l_i`; outside `[0, l_N)` the profile is
/// clamped to its end values.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationProfile {
    lengths: Vec<f64>,
    values: Vec<f64>,
    source: Vec<usize>,
    dropped: usize,
}

impl OrientationProfile {
    /// Breakpoints `l_0 = 0 < l_1 < … < l_N`.
    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    /// Unwrapped headings `φ_0 … φ_N`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Path index of each breakpoint.
    pub fn source_indices(&self) -> &[usize] {
        &self.source
    }

    /// Zero-length segments skipped while building.
    pub fn dropped_segments(&self) -> usize {
        self.dropped
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        *self.lengths.last().unwrap()
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = self.lengths.partition_point(|l| *l <= x);
        self.values[k.min(self.values.len() - 1)]
    }
}

/// Builds the orientation profile of a path. Consecutive duplicate positions
/// are skipped; their heading change is carried into the next segment.
pub fn build_profile(path: &[Pose]) -> Result<OrientationProfile> {
    if path.len() < 2 {
        return Err(MapError::TooFewPoses {
            needed: 2,
            got: path.len(),
        });
    }
    let mut lengths = vec![0.0];
    let mut values = vec![path[0].phi];
    let mut source = vec![0];
    let mut dropped = 0;
    let mut last = path[0];
    for (k, p) in path.iter().enumerate().skip(1) {
        let seg = (p.position() - last.position()).norm();
        if seg == 0.0 {
            dropped += 1;
            continue;
        }
        lengths.push(lengths.last().unwrap() + seg);
        values.push(values.last().unwrap() + wrap_angle(p.phi - last.phi));
        source.push(k);
        last = *p;
    }
    if dropped > 0 {
        warn!("orientation profile: dropped {dropped} zero-length segments");
    }
    if lengths.len() < 2 {
        return Err(MapError::TooFewPoses {
            needed: 2,
            got: lengths.len(),
        });
    }
    Ok(OrientationProfile {
        lengths,
        values,
        source,
        dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopClosureConfig {
    /// Neighborhood half-length in meters.
    pub l_nh: f64,
    pub c_min: f64,
    /// Feasibility threshold in `[0, π]`.
    pub phi_cycle: f64,
    #[serde(default = "default_m_eval")]
    pub m_eval: usize,
}

fn default_m_eval() -> usize {
    50
}

impl LoopClosureConfig {
    pub fn new(l_nh: f64, c_min: f64, phi_cycle: f64) -> Self {
        Self {
            l_nh,
            c_min,
            phi_cycle,
            m_eval: default_m_eval(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l_nh.is_finite() && self.l_nh > 0.0) {
            return Err(MapError::InvalidConfig(format!("l_nh must be > 0, got {}", self.l_nh)));
        }
        if !(self.c_min.is_finite() && self.c_min > 0.0) {
            return Err(MapError::InvalidConfig(format!("c_min must be > 0, got {}", self.c_min)));
        }
        if !(0.0..=PI).contains(&self.phi_cycle) {
            return Err(MapError::InvalidConfig(format!(
                "phi_cycle must lie in [0, pi], got {}",
                self.phi_cycle
            )));
        }
        if self.m_eval < 2 {
            return Err(MapError::InvalidConfig("m_eval must be >= 2".into()));
        }
        Ok(())
    }
}

/// A detected loop-closing vertex pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopClosure {
    /// Path (vertex) indices, `i < j`.
    pub i: usize,
    pub j: usize,
    pub c_ij: f64,
    /// Path distance between the two vertices.
    pub u_ij: f64,
    /// Unwrapped heading difference `φ_j − φ_i`.
    pub dphi_ij: f64,
    #[serde(skip)]
    pub constraint: Option<RelativeMeasurement>,
}

/// Comparison errors between all pairs of breakpoints whose neighborhoods lie
/// inside the recorded path. Valid breakpoints form the contiguous index
/// range `first..first + size`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonMatrix {
    first: usize,
    size: usize,
    data: Vec<f64>,
}

impl ComparisonMatrix {
    /// `C_ij`, or `None` when either neighborhood leaves the path.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let range = self.first..self.first + self.size;
        if range.contains(&i) && range.contains(&j) {
            Some(self.data[(i - self.first) * self.size + (j - self.first)])
        } else {
            None
        }
    }

    pub fn valid_range(&self) -> std::ops::Range<usize> {
        self.first..self.first + self.size
    }

    /// True when no breakpoint has a complete neighborhood.
    pub fn is_empty(&self) -> bool {
        self.size == 0
    }
}

/// Offsets of the evaluation points, evenly spread over `[-L, L]`.
fn eval_offsets(l_nh: f64, m: usize) -> Vec<f64> {
    (0..m)
        .map(|k| -l_nh + 2.0 * l_nh * k as f64 / (m - 1) as f64)
        .collect()
}

/// Mean absolute difference of the baseline-shifted neighborhood profiles.
pub fn comparison_matrix(profile: &OrientationProfile, cfg: &LoopClosureConfig) -> Result<ComparisonMatrix> {
    cfg.validate()?;
    let l = profile.lengths();
    let total = profile.total_length();
    let first = l.partition_point(|x| *x < cfg.l_nh);
    let end = l.partition_point(|x| *x <= total - cfg.l_nh);
    let size = end.saturating_sub(first);
    if size == 0 {
        warn!(
            "neighborhood half-length {} exceeds half the path length {}",
            cfg.l_nh,
            total
        );
        return Ok(ComparisonMatrix {
            first,
            size: 0,
            data: Vec::new(),
        });
    }
    let offsets = eval_offsets(cfg.l_nh, cfg.m_eval);
    let m = offsets.len();
    let shapes: Vec<f64> = (first..end)
        .flat_map(|i| {
            let base = profile.values()[i];
            offsets.iter().map(move |x| profile.eval(l[i] + x) - base)
        })
        .collect();
    let mut data = vec![0.0; size * size];
    data.par_chunks_mut(size).enumerate().for_each(|(a, row)| {
        let sa = &shapes[a * m..(a + 1) * m];
        for (b, c) in row.iter_mut().enumerate() {
            let sb = &shapes[b * m..(b + 1) * m];
            *c = sa.iter().zip(sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / m as f64;
        }
    });
    Ok(ComparisonMatrix { first, size, data })
}

/// Minimum over a sliding window `[l_k − r, l_k + r]` of `vals`, indexed
/// like `pos` (sorted ascending).
fn window_min(vals: &[f64], pos: &[f64], r: f64) -> Vec<f64> {
    let n = vals.len();
    let mut out = vec![f64::INFINITY; n];
    let mut dq: VecDeque<usize> = VecDeque::new();
    let mut hi = 0;
    for k in 0..n {
        while hi < n && pos[hi] <= pos[k] + r {
            while dq.back().is_some_and(|&b| vals[b] >= vals[hi]) {
                dq.pop_back();
            }
            dq.push_back(hi);
            hi += 1;
        }
        while dq.front().is_some_and(|&f| pos[f] < pos[k] - r) {
            dq.pop_front();
        }
        out[k] = dq.front().map_or(f64::INFINITY, |&f| vals[f]);
    }
    out
}

/// Local minima of `C` below `c_min` with path distance `u ≥ 2·L_NH`.
///
/// A pair is a local minimum when no pair with `u ≥ L_NH` within `L_NH` of
/// path length along both axes has a smaller error. Minima that still share a
/// window are thinned greedily, keeping the smallest error.
pub fn detect_closures(
    matrix: &ComparisonMatrix,
    profile: &OrientationProfile,
    cfg: &LoopClosureConfig,
) -> Vec<LoopClosure> {
    if matrix.is_empty() {
        return Vec::new();
    }
    let (first, n) = (matrix.first, matrix.size);
    let l = &profile.lengths()[first..first + n];
    // pairs closer than 2·L_NH cannot close a loop, but those beyond L_NH
    // still compete in the minimum test so that a basin cut off by the
    // distance limit does not leave a minimum on its edge
    let masked = |a: usize, b: usize| {
        if b > a && l[b] - l[a] >= cfg.l_nh {
            matrix.data[a * n + b]
        } else {
            f64::INFINITY
        }
    };
    let admissible = |a: usize, b: usize| b > a && l[b] - l[a] >= 2.0 * cfg.l_nh;
    let row_min: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|a| {
            let row: Vec<f64> = (0..n).map(|b| masked(a, b)).collect();
            window_min(&row, l, cfg.l_nh)
        })
        .collect();
    let mut candidates: Vec<(usize, usize, f64)> = (0..n)
        .into_par_iter()
        .flat_map_iter(|b| {
            let col: Vec<f64> = (0..n).map(|a| row_min[a][b]).collect();
            let win = window_min(&col, l, cfg.l_nh);
            let (masked, admissible) = (&masked, &admissible);
            (0..n).filter_map(move |a| {
                let c = masked(a, b);
                (admissible(a, b) && c < cfg.c_min && c <= win[a]).then_some((a, b, c))
            })
        })
        .collect();
    candidates.sort_by(|x, y| x.2.total_cmp(&y.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
    let mut kept: Vec<(usize, usize, f64)> = Vec::new();
    for cand in candidates {
        let near = kept.iter().any(|k| {
            (l[k.0] - l[cand.0]).abs() <= cfg.l_nh && (l[k.1] - l[cand.1]).abs() <= cfg.l_nh
        });
        if !near {
            kept.push(cand);
        }
    }
    kept.sort_by_key(|k| (k.0, k.1));
    let src = profile.source_indices();
    let phi = profile.values();
    kept.into_iter()
        .map(|(a, b, c)| {
            let (pa, pb) = (a + first, b + first);
            LoopClosure {
                i: src[pa],
                j: src[pb],
                c_ij: c,
                u_ij: profile.lengths()[pb] - profile.lengths()[pa],
                dphi_ij: phi[pb] - phi[pa],
                constraint: None,
            }
        })
        .collect()
}

/// Rejects pairs whose heading difference is near an odd multiple of π:
/// passes iff `|π − mod(Δφ, 2π)| > φ_cycle`. `φ_cycle = 0` turns the check off.
pub fn feasibility_check(closure: &LoopClosure, phi_cycle: f64) -> bool {
    phi_cycle <= 0.0 || (PI - closure.dphi_ij.rem_euclid(TAU)).abs() > phi_cycle
}

/// Profile, comparison matrix, local minima and feasibility filter in one go.
pub fn find_closures(path: &[Pose], cfg: &LoopClosureConfig) -> Result<(OrientationProfile, Vec<LoopClosure>)> {
    let profile = build_profile(path)?;
    let matrix = comparison_matrix(&profile, cfg)?;
    let closures = detect_closures(&matrix, &profile, cfg)
        .into_iter()
        .filter(|c| feasibility_check(c, cfg.phi_cycle))
        .collect();
    Ok((profile, closures))
}
