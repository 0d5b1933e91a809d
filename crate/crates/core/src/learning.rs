//! Two-stage meta-parameter learning: loop-closure detection parameters
//! first, then the loop-closure covariance scales.

use std::f64::consts::{PI, TAU};

use log::{info, warn};
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::bayes_opt::{bo_minimize, BoConfig, BoResult, Dimension, SearchSpace};
use crate::error::{MapError, Result};
use crate::geometry::Pose;
use crate::gmm::{estimate_circumference, nll, select_model, EmConfig, GmmModel};
use crate::graph::{OdomNoiseParams, PoseGraph};
use crate::icp::{attach_constraints, closure_constraint, ConstraintMode, IcpConfig};
use crate::loop_closure::{find_closures, LoopClosure, LoopClosureConfig, OrientationProfile};
use crate::optimizer::{optimize, SolverConfig};

/// All five mapping meta-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaParameters {
    pub l_nh: f64,
    pub c_min: f64,
    pub phi_cycle: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl MetaParameters {
    pub fn new(lc: &LoopClosureConfig, gamma: (f64, f64)) -> Self {
        Self {
            l_nh: lc.l_nh,
            c_min: lc.c_min,
            phi_cycle: lc.phi_cycle,
            gamma1: gamma.0,
            gamma2: gamma.1,
        }
    }

    pub fn loop_closure(&self) -> LoopClosureConfig {
        LoopClosureConfig::new(self.l_nh, self.c_min, self.phi_cycle)
    }

    pub fn gamma(&self) -> (f64, f64) {
        (self.gamma1, self.gamma2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnConfig {
    pub stage1: BoConfig,
    pub stage2: BoConfig,
    pub em: EmConfig,
    /// Variance floor for the orientation-difference mixture (rad²).
    pub phi_variance_floor: f64,
    pub weight_floor: f64,
    pub m_min: usize,
    /// More closures than this is treated like too few.
    pub m_max: usize,
    /// `None` derives the upper bound from the path.
    pub l_nh_bounds: Option<(f64, f64)>,
    pub c_min_bounds: (f64, f64),
    pub phi_cycle_bounds: (f64, f64),
    pub gamma_bounds: (f64, f64),
    pub mode: ConstraintMode,
    pub icp: IcpConfig,
    pub solver: SolverConfig,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            stage1: BoConfig::default(),
            stage2: BoConfig::default(),
            em: EmConfig::default(),
            phi_variance_floor: 1e-4,
            weight_floor: 0.05,
            m_min: 3,
            m_max: 1000,
            l_nh_bounds: None,
            c_min_bounds: (0.01, 3.0),
            phi_cycle_bounds: (0.0, PI),
            gamma_bounds: (1e-4, 10.0),
            mode: ConstraintMode::Adjusted,
            icp: IcpConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

/// Lap length guessed from the net heading change: a simple closed boundary
/// turns by `2π` per lap.
pub fn lap_length_estimate(profile: &OrientationProfile) -> Option<f64> {
    let values = profile.values();
    let turned = (values.last()? - values.first()?).abs();
    (turned >= TAU * 0.9).then(|| profile.total_length() / (turned / TAU))
}

/// Default `L_NH` search interval: `[2, 0.45 · lap length]`, or `[2, 60]`
/// when no full lap is visible.
pub fn default_l_nh_bounds(profile: &OrientationProfile) -> (f64, f64) {
    match lap_length_estimate(profile) {
        Some(lap) if 0.45 * lap > 4.0 => (2.0, 0.45 * lap),
        _ => (2.0, 60.0),
    }
}

/// Stage-1 cost and everything it was computed from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stage1Eval {
    pub nll_u: f64,
    pub nll_phi: f64,
    pub m: usize,
    pub cost: f64,
    pub circumference: f64,
    pub u_model: GmmModel,
    pub phi_model: GmmModel,
    /// NLL against component count for the `u` fit.
    pub u_history: Vec<(usize, f64)>,
    pub closures: Vec<LoopClosure>,
}

/// `−L_u − L_φ − ln M` for one choice of detection parameters.
///
/// Fewer than `m_min` or more than `m_max` closures is an error, which the
/// optimizer records as a penalty.
pub fn stage1_cost(theta: &LoopClosureConfig, path: &[Pose], cfg: &LearnConfig, seed: u64) -> Result<Stage1Eval> {
    let (_, closures) = find_closures(path, theta)?;
    stage1_from_closures(closures, cfg, seed)
}

pub fn stage1_from_closures(closures: Vec<LoopClosure>, cfg: &LearnConfig, seed: u64) -> Result<Stage1Eval> {
    let m = closures.len();
    if m < cfg.m_min.max(1) {
        return Err(MapError::TooFewClosures {
            needed: cfg.m_min.max(1),
            got: m,
        });
    }
    if m > cfg.m_max {
        return Err(MapError::TooManyClosures { limit: cfg.m_max, got: m });
    }
    let us: Vec<f64> = closures.iter().map(|c| c.u_ij).collect();
    let dphis: Vec<f64> = closures.iter().map(|c| c.dphi_ij).collect();
    let u_sel = select_model(&us, seed, &cfg.em)?;
    let phi_em = EmConfig {
        variance_floor: cfg.phi_variance_floor,
        ..cfg.em
    };
    let phi_sel = select_model(&dphis, seed, &phi_em)?;
    let nll_u = nll(&u_sel.model, &us);
    let nll_phi = nll(&phi_sel.model, &dphis);
    let circumference = estimate_circumference(&u_sel.model, cfg.weight_floor)?;
    Ok(Stage1Eval {
        nll_u,
        nll_phi,
        m,
        cost: nll_u + nll_phi - (m as f64).ln(),
        circumference,
        u_model: u_sel.model,
        phi_model: phi_sel.model,
        u_history: u_sel.history,
        closures,
    })
}

/// Fixed inputs of the stage-2 cost.
#[derive(Debug, Clone)]
pub struct Stage2Problem {
    /// Odometry-only graph.
    pub graph: PoseGraph,
    /// Closures with constraints attached at `γ = (1, 1)`.
    pub closures: Vec<LoopClosure>,
    pub circumference: f64,
}

impl Stage2Problem {
    pub fn new(
        path: &[Pose],
        noise: &OdomNoiseParams,
        profile: &OrientationProfile,
        closures: &[LoopClosure],
        l_nh: f64,
        circumference: f64,
        cfg: &LearnConfig,
    ) -> Result<Self> {
        if circumference.is_nan() || circumference <= 0.0 {
            return Err(MapError::InvalidConfig(format!("circumference must be > 0, got {circumference}")));
        }
        let graph = PoseGraph::build(path, noise)?;
        let closures = attach_constraints(path, profile, closures, l_nh, (1.0, 1.0), cfg.mode, &cfg.icp)?;
        Ok(Self {
            graph,
            closures,
            circumference,
        })
    }

    /// The closures with covariances rescaled for `gamma`.
    pub fn closures_with(&self, gamma: (f64, f64)) -> Result<Vec<LoopClosure>> {
        self.closures
            .iter()
            .map(|c| {
                let mean = c.constraint.expect("attached").mean;
                let constraint = closure_constraint(mean.dphi, Vector2::new(mean.dx, mean.dy), c.c_ij, gamma.0, gamma.1)?;
                Ok(LoopClosure {
                    constraint: Some(constraint),
                    ..*c
                })
            })
            .collect()
    }

    /// Optimized graph for `gamma`.
    pub fn optimized(&self, gamma: (f64, f64), solver: &SolverConfig) -> Result<PoseGraph> {
        let g = self.graph.add_loop_closures(&self.closures_with(gamma)?)?;
        Ok(optimize(&g, solver)?.graph)
    }
}

/// `|U − Û|`, with `Û` re-estimated from path distances along the optimized
/// chain between the same closure pairs.
pub fn stage2_cost(gamma: (f64, f64), problem: &Stage2Problem, cfg: &LearnConfig, seed: u64) -> Result<f64> {
    let g = problem.optimized(gamma, &cfg.solver)?;
    let us: Vec<f64> = problem.closures.iter().map(|c| g.chain_length(c.i, c.j)).collect();
    let sel = select_model(&us, seed, &cfg.em)?;
    let u_hat = estimate_circumference(&sel.model, cfg.weight_floor)?;
    Ok((problem.circumference - u_hat).abs())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnResult {
    pub params: MetaParameters,
    pub circumference: f64,
    pub stage1: BoResult,
    pub stage2: BoResult,
    pub stage1_names: Vec<String>,
    pub stage2_names: Vec<String>,
}

pub fn stage1_space(profile: &OrientationProfile, cfg: &LearnConfig) -> Result<SearchSpace> {
    let (lo, hi) = cfg.l_nh_bounds.unwrap_or_else(|| default_l_nh_bounds(profile));
    SearchSpace::new(vec![
        Dimension::linear("l_nh", lo, hi),
        Dimension::linear("c_min", cfg.c_min_bounds.0, cfg.c_min_bounds.1),
        Dimension::linear("phi_cycle", cfg.phi_cycle_bounds.0, cfg.phi_cycle_bounds.1),
    ])
}

pub fn stage2_space(cfg: &LearnConfig) -> Result<SearchSpace> {
    SearchSpace::new(vec![
        Dimension::log("gamma1", cfg.gamma_bounds.0, cfg.gamma_bounds.1),
        Dimension::log("gamma2", cfg.gamma_bounds.0, cfg.gamma_bounds.1),
    ])
}

/// Runs both learning stages on a reduced measured path.
pub fn learn(path: &[Pose], noise: &OdomNoiseParams, cfg: &LearnConfig, seed: u64) -> Result<LearnResult> {
    let profile = crate::loop_closure::build_profile(path)?;
    match lap_length_estimate(&profile) {
        Some(lap) if profile.total_length() >= 2.0 * lap => {}
        _ => warn!("path seems to cover fewer than two laps"),
    }
    let space1 = stage1_space(&profile, cfg)?;
    let stage1 = bo_minimize(
        |th| stage1_cost(&LoopClosureConfig::new(th[0], th[1], th[2]), path, cfg, seed).map(|e| e.cost),
        &space1,
        &cfg.stage1,
        seed,
        &[],
    )?;
    let lc = LoopClosureConfig::new(stage1.best[0], stage1.best[1], stage1.best[2]);
    let eval1 = stage1_cost(&lc, path, cfg, seed)?;
    info!(
        "stage 1: l_nh {:.2}, c_min {:.3}, phi_cycle {:.3}, {} closures, U {:.2}",
        lc.l_nh, lc.c_min, lc.phi_cycle, eval1.m, eval1.circumference
    );

    let problem = Stage2Problem::new(path, noise, &profile, &eval1.closures, lc.l_nh, eval1.circumference, cfg)?;
    let space2 = stage2_space(cfg)?;
    let stage2 = bo_minimize(
        |g| stage2_cost((g[0], g[1]), &problem, cfg, seed),
        &space2,
        &cfg.stage2,
        seed.wrapping_add(1),
        &[vec![1.0, 1.0]],
    )?;
    let gamma = (stage2.best[0], stage2.best[1]);
    info!("stage 2: gamma ({:.4}, {:.4}), cost {:.4}", gamma.0, gamma.1, stage2.best_cost);
    Ok(LearnResult {
        params: MetaParameters::new(&lc, gamma),
        circumference: eval1.circumference,
        stage1_names: space1.dims.iter().map(|d| d.name.clone()).collect(),
        stage2_names: space2.dims.iter().map(|d| d.name.clone()).collect(),
        stage1,
        stage2,
    })
}
