//! Stage orchestration: configuration, artifacts on disk and provenance.
//!
//! Every stage reads its inputs from the output directory and writes its
//! artifacts there, so `full` is exactly the stages run one after another.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{MapError, Result};
use crate::eval::{area_error, polygon_from_graph, relative_error, EvalReport};
use crate::geometry::Pose;
use crate::gmm::{estimate_circumference, select_model, EmConfig};
use crate::graph::{OdomNoiseParams, PoseGraph};
use crate::icp::{attach_constraints, ConstraintMode, IcpConfig};
use crate::io::{
    ingest_recorded, reduce_path, write_histogram_csv, write_json, write_matrix_csv, write_nll_csv,
    write_polygons_csv, write_trace_csv, write_trajectory, ReducedPath,
};
use crate::learning::{learn, LearnConfig, LearnResult, MetaParameters};
use crate::loop_closure::{build_profile, comparison_matrix, detect_closures, feasibility_check, LoopClosure, LoopClosureConfig};
use crate::maps::BundledMap;
use crate::optimizer::{optimize, IterationRecord, SolverConfig};
use crate::polygon::MapPolygon;
use crate::sim::{simulate, NoiseScaling, SimConfig, Trajectory};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const LEARNED_FILE: &str = "learned.json";
pub const STAGE1_TRACE_FILE: &str = "stage1_trace.csv";
pub const STAGE2_TRACE_FILE: &str = "stage2_trace.csv";
pub const CLOSURES_FILE: &str = "closures.json";
pub const MATRIX_FILE: &str = "comparison_matrix.csv";
pub const HISTOGRAM_FILE: &str = "u_histogram.csv";
pub const NLL_FILE: &str = "nll_vs_k.csv";
pub const GRAPH_FILE: &str = "graph.json";
pub const EVAL_FILE: &str = "eval.json";
pub const POLYGONS_FILE: &str = "polygons.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[serde(alias = "sim")]
    Simulate,
    Detect,
    Optimize,
    Learn,
    #[serde(alias = "eval")]
    Evaluate,
    #[default]
    Full,
}

impl FromStr for Mode {
    type Err = MapError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim" | "simulate" => Ok(Mode::Simulate),
            "detect" => Ok(Mode::Detect),
            "optimize" => Ok(Mode::Optimize),
            "learn" => Ok(Mode::Learn),
            "eval" | "evaluate" => Ok(Mode::Evaluate),
            "full" => Ok(Mode::Full),
            _ => Err(MapError::InvalidConfig(format!("unknown mode '{s}'"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Simulate => "sim",
            Mode::Detect => "detect",
            Mode::Optimize => "optimize",
            Mode::Learn => "learn",
            Mode::Evaluate => "eval",
            Mode::Full => "full",
        };
        f.write_str(s)
    }
}

/// A bundled map by name or an explicit vertex list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MapSpec {
    Bundled(BundledMap),
    Vertices { vertices: MapPolygon },
}

impl MapSpec {
    pub fn polygon(&self) -> MapPolygon {
        match self {
            MapSpec::Bundled(m) => m.polygon(),
            MapSpec::Vertices { vertices } => vertices.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSettings {
    pub speed: f64,
    pub sample_rate: f64,
    pub duration: f64,
    pub noise: OdomNoiseParams,
    pub noise_scaling: NoiseScaling,
    pub turn_rate: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        let base = SimConfig::new(BundledMap::Square.polygon());
        Self {
            speed: base.speed,
            sample_rate: base.sample_rate,
            duration: base.duration,
            noise: base.noise,
            noise_scaling: base.noise_scaling,
            turn_rate: base.turn_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReduceSettings {
    pub min_spacing: f64,
    pub min_turn: f64,
}

impl Default for ReduceSettings {
    fn default() -> Self {
        Self {
            min_spacing: 0.5,
            min_turn: 0.1,
        }
    }
}

/// Fixed detection parameters, or `"learn"` to take all five meta-parameters
/// from the learn stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LoopClosureSetting {
    Learn(LearnTag),
    Fixed(LoopClosureConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnTag {
    Learn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Recorded trajectory CSV used instead of simulating.
    pub input: Option<PathBuf>,
    pub map: Option<MapSpec>,
    pub sim: SimSettings,
    pub reduce: ReduceSettings,
    pub loop_closure: LoopClosureSetting,
    pub gamma: (f64, f64),
    pub baseline: ConstraintMode,
    pub icp: IcpConfig,
    pub solver: SolverConfig,
    pub em: EmConfig,
    pub learn: LearnConfig,
    /// Every `matrix_stride`-th vertex in each direction goes to the matrix CSV.
    pub matrix_stride: usize,
    pub histogram_bin: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Full,
            seed: 0,
            out_dir: PathBuf::from("out"),
            input: None,
            map: None,
            sim: SimSettings::default(),
            reduce: ReduceSettings::default(),
            loop_closure: LoopClosureSetting::Learn(LearnTag::Learn),
            gamma: (1.0, 1.0),
            baseline: ConstraintMode::Adjusted,
            icp: IcpConfig::default(),
            solver: SolverConfig::default(),
            em: EmConfig::default(),
            learn: LearnConfig::default(),
            matrix_stride: 4,
            histogram_bin: 1.0,
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| MapError::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(input) = &self.input {
            if !input.is_file() {
                return Err(MapError::InvalidConfig(format!("input file {} does not exist", input.display())));
            }
            if self.mode == Mode::Simulate {
                return Err(MapError::InvalidConfig("sim mode cannot be combined with an input file".into()));
            }
        } else if self.map.is_none() && matches!(self.mode, Mode::Simulate | Mode::Full) {
            return Err(MapError::InvalidConfig("simulation needs a map".into()));
        }
        if let LoopClosureSetting::Fixed(lc) = &self.loop_closure {
            lc.validate()?;
        }
        if !(self.gamma.0 > 0.0 && self.gamma.1 > 0.0) {
            return Err(MapError::InvalidConfig(format!("gamma must be positive, got {:?}", self.gamma)));
        }
        if !(self.reduce.min_spacing > 0.0 && self.reduce.min_turn > 0.0) {
            return Err(MapError::InvalidConfig("reduce settings must be positive".into()));
        }
        if self.histogram_bin.is_nan() || self.histogram_bin <= 0.0 {
            return Err(MapError::InvalidConfig("histogram_bin must be positive".into()));
        }
        self.solver.validate()?;
        if let Some(map) = &self.map {
            self.sim_config(map.polygon()).validate()?;
        }
        Ok(())
    }

    fn sim_config(&self, map: MapPolygon) -> SimConfig {
        SimConfig {
            map,
            speed: self.sim.speed,
            sample_rate: self.sim.sample_rate,
            duration: self.sim.duration,
            noise: self.sim.noise,
            noise_scaling: self.sim.noise_scaling,
            turn_rate: self.sim.turn_rate,
            seed: self.seed,
        }
    }

    fn learn_config(&self) -> LearnConfig {
        LearnConfig {
            mode: self.baseline,
            icp: self.icp,
            solver: self.solver,
            em: self.em,
            ..self.learn
        }
    }

    /// Header lines for artifacts. Neither the mode nor the output directory
    /// appear, so a stage writes the same bytes alone and inside `full`.
    pub fn provenance(&self, stage: &str) -> Result<Vec<String>> {
        let mut cfg = serde_json::to_value(self)?;
        if let Some(obj) = cfg.as_object_mut() {
            obj.remove("mode");
            obj.remove("out_dir");
        }
        Ok(vec![
            format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
            format!("stage={stage} seed={}", self.seed),
            format!("config={cfg}"),
        ])
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

#[derive(Serialize, Deserialize)]
struct Provenanced<T> {
    provenance: Vec<String>,
    #[serde(flatten)]
    data: T,
}

fn write_artifact<T: Serialize>(cfg: &PipelineConfig, stage: &str, name: &str, data: T) -> Result<PathBuf> {
    let path = cfg.out(name);
    write_json(
        &path,
        &Provenanced {
            provenance: cfg.provenance(stage)?,
            data,
        },
    )?;
    Ok(path)
}

fn read_artifact<T: for<'de> Deserialize<'de>>(cfg: &PipelineConfig, name: &str, producer: &str) -> Result<T> {
    let path = cfg.out(name);
    if !path.is_file() {
        return Err(MapError::InvalidConfig(format!(
            "{} not found; run the {producer} stage first",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(&path)?;
    let p: Provenanced<T> = serde_json::from_str(&text)?;
    Ok(p.data)
}

/// Wraps a stage error with the stage name.
fn in_stage<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ (MapError::InvalidConfig(_) | MapError::Stage { .. }) => e,
        e => MapError::Stage {
            stage,
            source: Box::new(e),
        },
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosureArtifact {
    pub loop_closure: LoopClosureConfig,
    pub circumference: Option<f64>,
    pub vertices: usize,
    pub closures: Vec<LoopClosure>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphArtifact {
    pub gamma: (f64, f64),
    pub mode: ConstraintMode,
    pub converged: bool,
    pub objective: Vec<f64>,
    pub iterations: Vec<IterationRecord>,
    pub graph: PoseGraph,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnedArtifact {
    pub params: MetaParameters,
    pub circumference: f64,
    pub stage1_best_cost: f64,
    pub stage2_best_cost: f64,
}

fn load_trajectory(cfg: &PipelineConfig) -> Result<Trajectory> {
    match &cfg.input {
        Some(path) => ingest_recorded(path),
        None => {
            let path = cfg.out(TRAJECTORY_FILE);
            if !path.is_file() {
                return Err(MapError::InvalidConfig(format!(
                    "{} not found; run the sim stage first or set an input file",
                    path.display()
                )));
            }
            ingest_recorded(&path)
        }
    }
}

fn reduced(cfg: &PipelineConfig, traj: &Trajectory) -> ReducedPath {
    reduce_path(&traj.measured_poses, cfg.reduce.min_spacing, cfg.reduce.min_turn)
}

/// Detection parameters and `γ` in effect.
fn meta_parameters(cfg: &PipelineConfig) -> Result<(LoopClosureConfig, (f64, f64))> {
    match cfg.loop_closure {
        LoopClosureSetting::Fixed(lc) => Ok((lc, cfg.gamma)),
        LoopClosureSetting::Learn(_) => {
            let learned: LearnedArtifact = read_artifact(cfg, LEARNED_FILE, "learn")?;
            Ok((learned.params.loop_closure(), learned.params.gamma()))
        }
    }
}

pub fn stage_simulate(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let map = cfg
        .map
        .as_ref()
        .ok_or_else(|| MapError::InvalidConfig("simulation needs a map".into()))?;
    let traj = in_stage("sim", simulate(&cfg.sim_config(map.polygon())))?;
    let path = cfg.out(TRAJECTORY_FILE);
    write_trajectory(&path, &traj, &cfg.provenance("sim")?)?;
    info!("sim: {} samples", traj.len());
    Ok(vec![path])
}

pub fn stage_learn(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let traj = load_trajectory(cfg)?;
    let red = reduced(cfg, &traj);
    let result: LearnResult = in_stage("learn", learn(&red.poses, &cfg.sim.noise, &cfg.learn_config(), cfg.seed))?;
    let prov = cfg.provenance("learn")?;
    let names1: Vec<&str> = result.stage1_names.iter().map(String::as_str).collect();
    let names2: Vec<&str> = result.stage2_names.iter().map(String::as_str).collect();
    write_trace_csv(&cfg.out(STAGE1_TRACE_FILE), &names1, &result.stage1.trace, &prov)?;
    write_trace_csv(&cfg.out(STAGE2_TRACE_FILE), &names2, &result.stage2.trace, &prov)?;
    let learned = LearnedArtifact {
        params: result.params,
        circumference: result.circumference,
        stage1_best_cost: result.stage1.best_cost,
        stage2_best_cost: result.stage2.best_cost,
    };
    Ok(vec![
        write_artifact(cfg, "learn", LEARNED_FILE, learned)?,
        cfg.out(STAGE1_TRACE_FILE),
        cfg.out(STAGE2_TRACE_FILE),
    ])
}

pub fn stage_detect(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let traj = load_trajectory(cfg)?;
    let red = reduced(cfg, &traj);
    let (lc, _) = meta_parameters(cfg)?;
    let (profile, matrix, closures) = in_stage("detect", (|| {
        let profile = build_profile(&red.poses)?;
        let matrix = comparison_matrix(&profile, &lc)?;
        let closures: Vec<LoopClosure> = detect_closures(&matrix, &profile, &lc)
            .into_iter()
            .filter(|c| feasibility_check(c, lc.phi_cycle))
            .collect();
        Ok((profile, matrix, closures))
    })())?;
    let us: Vec<f64> = closures.iter().map(|c| c.u_ij).collect();
    let prov = cfg.provenance("detect")?;
    let mut history = Vec::new();
    let circumference = if us.is_empty() {
        None
    } else {
        let sel = in_stage("detect", select_model(&us, cfg.seed, &cfg.em))?;
        history = sel.history;
        estimate_circumference(&sel.model, cfg.learn.weight_floor).ok()
    };
    write_matrix_csv(&cfg.out(MATRIX_FILE), &matrix, &profile, cfg.matrix_stride, &prov)?;
    write_histogram_csv(&cfg.out(HISTOGRAM_FILE), &us, cfg.histogram_bin, &prov)?;
    write_nll_csv(&cfg.out(NLL_FILE), &history, &prov)?;
    info!("detect: {} closures, U {:?}", closures.len(), circumference);
    let artifact = ClosureArtifact {
        loop_closure: lc,
        circumference,
        vertices: red.poses.len(),
        closures,
    };
    Ok(vec![
        write_artifact(cfg, "detect", CLOSURES_FILE, artifact)?,
        cfg.out(MATRIX_FILE),
        cfg.out(HISTOGRAM_FILE),
        cfg.out(NLL_FILE),
    ])
}

pub fn stage_optimize(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let traj = load_trajectory(cfg)?;
    let red = reduced(cfg, &traj);
    let (_, gamma) = meta_parameters(cfg)?;
    let detected: ClosureArtifact = read_artifact(cfg, CLOSURES_FILE, "detect")?;
    if detected.vertices != red.poses.len() {
        return Err(MapError::InvalidConfig(format!(
            "{} was written for {} vertices, the trajectory reduces to {}",
            CLOSURES_FILE,
            detected.vertices,
            red.poses.len()
        )));
    }
    let result = in_stage("optimize", (|| {
        let profile = build_profile(&red.poses)?;
        let closures = attach_constraints(
            &red.poses,
            &profile,
            &detected.closures,
            detected.loop_closure.l_nh,
            gamma,
            cfg.baseline,
            &cfg.icp,
        )?;
        let g = PoseGraph::build(&red.poses, &cfg.sim.noise)?.add_loop_closures(&closures)?;
        optimize(&g, &cfg.solver)
    })())?;
    info!("optimize: {} iterations, converged {}", result.log.len(), result.converged);
    let artifact = GraphArtifact {
        gamma,
        mode: cfg.baseline,
        converged: result.converged,
        objective: result.history,
        iterations: result.log,
        graph: result.graph,
    };
    Ok(vec![write_artifact(cfg, "optimize", GRAPH_FILE, artifact)?])
}

pub fn stage_evaluate(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let traj = load_trajectory(cfg)?;
    let truth_all = traj
        .true_poses
        .as_ref()
        .ok_or_else(|| MapError::MissingTruth("the trajectory has no ground-truth columns".into()))?;
    let red = reduced(cfg, &traj);
    let truth: Vec<Pose> = red.indices.iter().map(|&i| truth_all[i]).collect();
    let detected: ClosureArtifact = read_artifact(cfg, CLOSURES_FILE, "detect")?;
    let optimized: GraphArtifact = read_artifact(cfg, GRAPH_FILE, "optimize")?;
    let (e_trans, e_rot) = in_stage("eval", relative_error(&optimized.graph, &truth))?;
    let circumference = detected.circumference;
    let mut files = Vec::new();
    let (mut delta_a, mut cleanup) = (None, None);
    if let Some(map) = &cfg.map {
        let truth_poly = map.polygon();
        let (estimate, report) = in_stage(
            "eval",
            polygon_from_graph(
                &optimized.graph,
                &detected.closures,
                circumference.unwrap_or_else(|| truth_poly.perimeter()),
            ),
        )?;
        delta_a = Some(area_error(&estimate, &truth_poly));
        cleanup = report.triggered().then_some(report);
        let path = cfg.out(POLYGONS_FILE);
        write_polygons_csv(&path, &[("estimate", &estimate), ("truth", &truth_poly)], &cfg.provenance("eval")?)?;
        files.push(path);
    }
    let report = EvalReport {
        e_trans: Some(e_trans),
        e_rot: Some(e_rot),
        delta_a,
        cleanup,
        circumference,
        seed: cfg.seed,
        loop_closure: detected.loop_closure,
        gamma: optimized.gamma,
        mode: optimized.mode,
    };
    info!("eval: E_trans {e_trans:.3e}, E_rot {e_rot:.3e}, delta_A {delta_a:?}");
    files.insert(0, write_artifact(cfg, "eval", EVAL_FILE, report)?);
    Ok(files)
}

/// Runs the configured mode and returns the written files.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let learns = matches!(cfg.loop_closure, LoopClosureSetting::Learn(_));
    match cfg.mode {
        Mode::Simulate => stage_simulate(cfg),
        Mode::Detect => stage_detect(cfg),
        Mode::Optimize => stage_optimize(cfg),
        Mode::Learn => stage_learn(cfg),
        Mode::Evaluate => stage_evaluate(cfg),
        Mode::Full => {
            let mut files = Vec::new();
            if cfg.input.is_none() {
                files.extend(stage_simulate(cfg)?);
            }
            if learns {
                files.extend(stage_learn(cfg)?);
            }
            files.extend(stage_detect(cfg)?);
            files.extend(stage_optimize(cfg)?);
            let has_truth = match &cfg.input {
                None => true,
                Some(_) => load_trajectory(cfg)?.true_poses.is_some(),
            };
            if has_truth {
                files.extend(stage_evaluate(cfg)?);
            }
            Ok(files)
        }
    }
}
