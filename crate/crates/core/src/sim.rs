//! Boundary-following trajectory simulation with odometry noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{MapError, Result};
use crate::geometry::{compound_apply, compound_diff, Pose, RelativePose};
use crate::graph::OdomNoiseParams;
use crate::polygon::MapPolygon;

/// Name of the pseudo-random generator behind every seeded draw.
pub const RNG_NAME: &str = "ChaCha8";

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub map: MapPolygon,
    /// m/s
    pub speed: f64,
    /// Hz
    pub sample_rate: f64,
    /// s
    pub duration: f64,
    pub noise: OdomNoiseParams,
    #[serde(default)]
    pub noise_scaling: NoiseScaling,
    /// rad/s. A sample whose heading change exceeds one tick of turning at
    /// this rate is treated as several odometry ticks.
    #[serde(default = "default_turn_rate")]
    pub turn_rate: f64,
    pub seed: u64,
}

fn default_turn_rate() -> f64 {
    1.0
}

/// How per-increment noise variance grows with the motion of one sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseScaling {
    /// `α₁δ_R + α₂δ_T`: variance proportional to the motion.
    Linear,
    /// `α₁δ_R² + α₂δ_T²` per odometry tick: standard deviation proportional
    /// to the motion.
    #[default]
    Quadratic,
}

impl SimConfig {
    pub fn new(map: MapPolygon) -> Self {
        Self {
            map,
            speed: 0.3,
            sample_rate: 20.0,
            duration: 2000.0,
            noise: OdomNoiseParams::default(),
            noise_scaling: NoiseScaling::Quadratic,
            turn_rate: default_turn_rate(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("speed", self.speed),
            ("sample_rate", self.sample_rate),
            ("duration", self.duration),
            ("turn_rate", self.turn_rate),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(MapError::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        self.noise.validate()
    }
}

/// Recorded or simulated drive. `true_poses` is absent for real logs.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub timestamps: Vec<f64>,
    pub true_poses: Option<Vec<Pose>>,
    pub measured_poses: Vec<Pose>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.timestamps.len();
        if self.measured_poses.len() != n || self.true_poses.as_ref().is_some_and(|t| t.len() != n) {
            return Err(MapError::LengthMismatch("trajectory columns differ in length".into()));
        }
        if let Some(k) = self.timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(MapError::InvalidConfig(format!(
                "timestamps not strictly increasing at sample {}",
                k + 1
            )));
        }
        Ok(())
    }
}

/// Position and outgoing heading at arc length `s` along the closed boundary.
fn boundary_pose(map: &MapPolygon, cumulative: &[f64], s: f64) -> Pose {
    let perimeter = *cumulative.last().unwrap();
    let s = s.rem_euclid(perimeter);
    // segment k covers [cumulative[k], cumulative[k + 1])
    let k = cumulative.partition_point(|c| *c <= s).saturating_sub(1).min(map.len() - 1);
    let a = map.vertices()[k];
    let b = map.vertices()[(k + 1) % map.len()];
    let dir = b - a;
    let len = dir.norm();
    let p = a + dir * ((s - cumulative[k]) / len);
    Pose::new(p.x, p.y, dir.y.atan2(dir.x))
}

/// Ground-truth poses of a robot tracing the polygon counter-clockwise at
/// constant speed, starting at the first vertex. Heading is the direction of
/// the current edge; at a vertex it is the outgoing edge's direction.
pub fn wall_follow(cfg: &SimConfig) -> Result<(Vec<f64>, Vec<Pose>)> {
    cfg.validate()?;
    let map = &cfg.map;
    let mut cumulative = Vec::with_capacity(map.len() + 1);
    cumulative.push(0.0);
    for (a, b) in map.edges() {
        let len = (b - a).norm();
        if len == 0.0 {
            return Err(MapError::DegeneratePolygon("zero-length edge".into()));
        }
        cumulative.push(cumulative.last().unwrap() + len);
    }
    let dt = 1.0 / cfg.sample_rate;
    let steps = (cfg.duration * cfg.sample_rate + 1e-9).floor() as usize;
    let mut timestamps: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    if cfg.duration - timestamps[steps] > 1e-9 * cfg.duration {
        timestamps.push(cfg.duration);
    }
    let poses = timestamps
        .iter()
        .map(|t| boundary_pose(map, &cumulative, cfg.speed * t))
        .collect();
    Ok((timestamps, poses))
}

/// Dead-reckons a noisy copy of `true_poses`.
///
/// Each increment is split into a translation `δ_T` and a rotation `δ_R`.
/// The rotation error is applied first, so it also turns the direction of
/// the following translation (rotate-then-translate). Translation variance
/// is built from `α₃, α₄` and rotation variance from `α₁, α₂` as set by
/// `scaling`. Under quadratic scaling an increment turning by more than
/// `max_tick_turn` counts as `⌈δ_R / max_tick_turn⌉` equal ticks.
pub fn corrupt(
    true_poses: &[Pose],
    noise: &OdomNoiseParams,
    scaling: NoiseScaling,
    max_tick_turn: f64,
    seed: u64,
) -> Result<Vec<Pose>> {
    if true_poses.len() < 2 {
        return Err(MapError::TooFewPoses {
            needed: 2,
            got: true_poses.len(),
        });
    }
    noise.validate()?;
    if max_tick_turn.is_nan() || max_tick_turn <= 0.0 {
        return Err(MapError::InvalidConfig(format!("max_tick_turn must be > 0, got {max_tick_turn}")));
    }
    let mut rng = seeded_rng(seed);
    let mut measured = Vec::with_capacity(true_poses.len());
    measured.push(true_poses[0]);
    for w in true_poses.windows(2) {
        let xi = compound_diff(&w[0], &w[1]);
        let noisy = perturb_increment(&xi, noise, scaling, max_tick_turn, &mut rng);
        let next = compound_apply(measured.last().unwrap(), &noisy);
        measured.push(next);
    }
    Ok(measured)
}

/// Translation and rotation noise variances of one increment.
pub fn increment_variances(
    delta_t: f64,
    delta_r: f64,
    noise: &OdomNoiseParams,
    scaling: NoiseScaling,
    max_tick_turn: f64,
) -> (f64, f64) {
    match scaling {
        NoiseScaling::Linear => (
            noise.translation_variance(delta_t, delta_r),
            noise.rotation_variance(delta_t, delta_r),
        ),
        NoiseScaling::Quadratic => {
            let ticks = (delta_r / max_tick_turn).ceil().max(1.0);
            (
                (noise.alpha3 * delta_t * delta_t + noise.alpha4 * delta_r * delta_r) / ticks,
                (noise.alpha1 * delta_r * delta_r + noise.alpha2 * delta_t * delta_t) / ticks,
            )
        }
    }
}

pub(crate) fn perturb_increment(
    xi: &RelativePose,
    noise: &OdomNoiseParams,
    scaling: NoiseScaling,
    max_tick_turn: f64,
    rng: &mut ChaCha8Rng,
) -> RelativePose {
    let delta_t = xi.translation().norm();
    let delta_r = xi.dphi.abs();
    let zt: f64 = StandardNormal.sample(rng);
    let zr: f64 = StandardNormal.sample(rng);
    let (vt, vr) = increment_variances(delta_t, delta_r, noise, scaling, max_tick_turn);
    let eps_t = zt * vt.sqrt();
    let eps_r = zr * vr.sqrt();
    if eps_t == 0.0 && eps_r == 0.0 {
        return *xi;
    }
    let heading = if delta_t > 0.0 { xi.dy.atan2(xi.dx) } else { 0.0 };
    let (s, c) = (heading + eps_r).sin_cos();
    let d = delta_t + eps_t;
    RelativePose::new(d * c, d * s, xi.dphi + eps_r)
}

/// Ground truth plus noisy odometry for one configuration.
pub fn simulate(cfg: &SimConfig) -> Result<Trajectory> {
    let (timestamps, true_poses) = wall_follow(cfg)?;
    let tick_turn = cfg.turn_rate / cfg.sample_rate;
    let measured_poses = corrupt(&true_poses, &cfg.noise, cfg.noise_scaling, tick_turn, cfg.seed)?;
    Ok(Trajectory {
        timestamps,
        true_poses: Some(true_poses),
        measured_poses,
    })
}
