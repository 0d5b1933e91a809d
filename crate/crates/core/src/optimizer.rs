//! Levenberg-Marquardt pose-graph optimization.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{MapError, Result};
use crate::geometry::{compound_diff, rotation, wrap_angle, Pose, RelativePose};
use crate::graph::PoseGraph;
use crate::sparse::{BlockCholesky, BlockMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub step_tol: f64,
    pub damping_init: f64,
    pub damping_scale: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            step_tol: 1e-8,
            damping_init: 1e-4,
            damping_scale: 10.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iters > 0
            && self.step_tol > 0.0
            && self.damping_init > 0.0
            && self.damping_scale > 1.0;
        if ok {
            Ok(())
        } else {
            Err(MapError::InvalidConfig(format!("invalid solver settings: {self:?}")))
        }
    }
}

/// `(p_j ⊖ p_i) − ξ̂` with the angle part wrapped.
pub fn edge_residual(pi: &Pose, pj: &Pose, meas: &RelativePose) -> Vector3<f64> {
    let d = compound_diff(pi, pj);
    Vector3::new(d.dx - meas.dx, d.dy - meas.dy, wrap_angle(d.dphi - meas.dphi))
}

/// Jacobians of [`edge_residual`] with respect to `p_i` and `p_j`.
pub fn edge_jacobians(pi: &Pose, pj: &Pose) -> (Matrix3<f64>, Matrix3<f64>) {
    let rt = rotation(pi.phi).transpose();
    let d = pj.position() - pi.position();
    let (s, c) = pi.phi.sin_cos();
    let drt = nalgebra::Matrix2::new(-s, c, -c, -s) * d;
    let ji = Matrix3::new(
        -rt[(0, 0)], -rt[(0, 1)], drt.x,
        -rt[(1, 0)], -rt[(1, 1)], drt.y,
        0.0, 0.0, -1.0,
    );
    let jj = Matrix3::new(
        rt[(0, 0)], rt[(0, 1)], 0.0,
        rt[(1, 0)], rt[(1, 1)], 0.0,
        0.0, 0.0, 1.0,
    );
    (ji, jj)
}

/// Weighted sum of squared residuals over all edges.
pub fn objective(g: &PoseGraph) -> f64 {
    let v = g.vertices();
    g.edges()
        .map(|e| {
            let r = edge_residual(&v[e.i], &v[e.j], e.mean());
            (r.transpose() * e.measurement.information() * r)[0]
        })
        .sum()
}

fn objective_with(g: &PoseGraph, info: &[Matrix3<f64>], v: &[Pose]) -> f64 {
    g.edges()
        .zip(info)
        .map(|(e, w)| {
            let r = edge_residual(&v[e.i], &v[e.j], e.mean());
            (r.transpose() * w * r)[0]
        })
        .sum()
}

fn check_connected(g: &PoseGraph) -> Result<()> {
    let n = g.vertices().len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut components = n;
    for e in g.edges() {
        let (a, b) = (find(&mut parent, e.i), find(&mut parent, e.j));
        if a != b {
            parent[a] = b;
            components -= 1;
        }
    }
    if components == 1 {
        Ok(())
    } else {
        Err(MapError::DisconnectedGraph)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub damping: f64,
    pub step_norm: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub graph: PoseGraph,
    /// Objective at the start and after every accepted step.
    pub history: Vec<f64>,
    pub log: Vec<IterationRecord>,
    pub converged: bool,
}

/// Minimizes the weighted residuals with vertex 0 held fixed.
///
/// Each step solves `(H + λ·D) δ = −b` with `D` the diagonal of `H`, its
/// two translation entries replaced by their mean; a step is accepted only if it
/// lowers the objective, after which `λ` shrinks by `damping_scale`,
/// otherwise `λ` grows by the same factor and the step is retried.
pub fn optimize(g: &PoseGraph, cfg: &SolverConfig) -> Result<OptimizeResult> {
    cfg.validate()?;
    check_connected(g)?;
    let info: Vec<Matrix3<f64>> = g.edges().map(|e| e.measurement.information()).collect();
    let n = g.vertices().len() - 1;
    let mut poses = g.vertices().to_vec();
    let mut f = objective_with(g, &info, &poses);
    let mut history = vec![f];
    let mut log = Vec::new();
    let mut lambda = cfg.damping_init;
    let mut converged = f == 0.0;
    let mut iter = 0;
    while !converged && iter < cfg.max_iters {
        iter += 1;
        let mut h = BlockMatrix::new(n);
        let mut b = vec![Vector3::zeros(); n];
        for (e, w) in g.edges().zip(&info) {
            let (pi, pj) = (&poses[e.i], &poses[e.j]);
            let r = edge_residual(pi, pj, e.mean());
            let (ji, jj) = edge_jacobians(pi, pj);
            let wr = w * r;
            if e.i > 0 {
                h.add(e.i - 1, e.i - 1, &(ji.transpose() * w * ji));
                b[e.i - 1] += ji.transpose() * wr;
            }
            if e.j > 0 {
                h.add(e.j - 1, e.j - 1, &(jj.transpose() * w * jj));
                b[e.j - 1] += jj.transpose() * wr;
            }
            if e.i > 0 && e.j > 0 {
                h.add(e.j - 1, e.i - 1, &(jj.transpose() * w * ji));
            }
        }
        // the translation entries share their mean so the damping commutes with rotations
        let diag: Vec<Matrix3<f64>> = (0..n)
            .map(|k| {
                let d = h.diagonal(k).diagonal();
                let xy = 0.5 * (d.x + d.y);
                Matrix3::from_diagonal(&Vector3::new(xy, xy, d.z))
            })
            .collect();
        let rhs: Vec<Vector3<f64>> = b.iter().map(|v| -v).collect();
        let mut accepted = false;
        let mut factored = false;
        while lambda < 1e16 {
            let mut damped = h.clone();
            for (k, d) in diag.iter().enumerate() {
                *damped.diagonal_mut(k) += d * lambda;
            }
            let step = match BlockCholesky::factor(&damped) {
                Ok(chol) => {
                    factored = true;
                    chol.solve(&rhs)
                }
                Err(_) => {
                    lambda *= cfg.damping_scale;
                    continue;
                }
            };
            let step_norm = step.iter().map(|s| s.xy().norm().max(s.z.abs())).fold(0.0, f64::max);
            let mut trial = poses.clone();
            for (k, s) in step.iter().enumerate() {
                let p = &poses[k + 1];
                trial[k + 1] = Pose::new(p.x + s.x, p.y + s.y, p.phi + s.z);
            }
            let ft = objective_with(g, &info, &trial);
            if ft < f {
                poses = trial;
                f = ft;
                history.push(f);
                lambda = (lambda / cfg.damping_scale).max(1e-12);
                log.push(IterationRecord {
                    iter,
                    objective: f,
                    damping: lambda,
                    step_norm,
                });
                accepted = true;
                converged = step_norm < cfg.step_tol || f == 0.0;
                break;
            }
            if step_norm < cfg.step_tol {
                // no representable improvement left
                converged = true;
                break;
            }
            lambda *= cfg.damping_scale;
        }
        if !accepted {
            if !factored {
                return Err(MapError::SingularSystem);
            }
            // no damping yields a decrease: a local minimum
            converged = true;
            break;
        }
    }
    Ok(OptimizeResult {
        graph: g.with_vertices(poses)?,
        history,
        log,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{compound_apply, RelativeMeasurement};
    use crate::graph::{Edge, OdomNoiseParams};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn meas(dx: f64, dy: f64, dphi: f64, cov: Matrix3<f64>) -> RelativeMeasurement {
        RelativeMeasurement::new(RelativePose::new(dx, dy, dphi), cov).unwrap()
    }

    fn edge(i: usize, j: usize, m: RelativeMeasurement) -> Edge {
        Edge { i, j, measurement: m }
    }

    /// Square of side 2 sampled at its corners plus the return to start,
    /// turned by 0.3 rad so that no heading is axis-aligned.
    fn square_truth() -> Vec<Pose> {
        use std::f64::consts::FRAC_PI_2;
        let turn = Pose::new(0.0, 0.0, 0.3);
        [(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0), (0.0, 0.0)]
            .iter()
            .enumerate()
            .map(|(k, (x, y))| {
                let local = Pose::new(*x, *y, (k % 4) as f64 * FRAC_PI_2);
                compound_apply(&turn, &RelativePose::new(local.x, local.y, local.phi))
            })
            .collect()
    }

    #[test]
    fn objective_examples() {
        let v = vec![Pose::origin(), Pose::new(1.0, 0.0, 0.0)];
        let g = PoseGraph::from_parts(v.clone(), vec![edge(0, 1, meas(0.0, 0.0, 0.0, Matrix3::identity()))], vec![]).unwrap();
        assert_abs_diff_eq!(objective(&g), 1.0, epsilon = 1e-15);
        let g = PoseGraph::from_parts(
            v.clone(),
            vec![edge(0, 1, meas(0.0, 0.0, 0.0, Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0))))],
            vec![],
        )
        .unwrap();
        assert_abs_diff_eq!(objective(&g), 0.25, epsilon = 1e-15);
        let g = PoseGraph::from_parts(v, vec![edge(0, 1, meas(1.0, 0.0, 0.0, Matrix3::identity()))], vec![]).unwrap();
        assert_eq!(objective(&g), 0.0);
    }

    #[test]
    fn consistent_graph_is_left_alone() {
        let truth = square_truth();
        let g = PoseGraph::build(&truth, &OdomNoiseParams::default()).unwrap();
        let r = optimize(&g, &SolverConfig::default()).unwrap();
        assert_eq!(r.history, vec![0.0]);
        assert_eq!(r.graph.vertices(), g.vertices());
        assert!(r.converged);
    }

    fn perturbed_square() -> (PoseGraph, Vec<Pose>) {
        let truth = square_truth();
        let g = PoseGraph::build(&truth, &OdomNoiseParams::default()).unwrap();
        let lc = edge(0, 4, meas(0.0, 0.0, 0.0, Matrix3::from_diagonal_element(1e-3)));
        let g = g.with_loop_edges([lc]).unwrap();
        let mut guess = truth.clone();
        guess[1] = Pose::new(2.3, -0.2, 1.4);
        guess[2] = Pose::new(2.4, 2.5, 3.3);
        guess[3] = Pose::new(-0.3, 2.2, -1.7);
        guess[4] = Pose::new(0.5, -0.6, 0.3);
        (g.with_vertices(guess).unwrap(), truth)
    }

    fn rel_error(g: &PoseGraph, truth: &[Pose]) -> f64 {
        let v = g.vertices();
        g.edges()
            .map(|e| {
                let a = compound_diff(&v[e.i], &v[e.j]);
                let b = compound_diff(&truth[e.i], &truth[e.j]);
                (a.translation() - b.translation()).norm_squared() + wrap_angle(a.dphi - b.dphi).powi(2)
            })
            .sum()
    }

    #[test]
    fn perturbed_square_improves() {
        let (g, truth) = perturbed_square();
        let r = optimize(&g, &SolverConfig::default()).unwrap();
        assert!(r.history.last().unwrap() < &r.history[0]);
        assert!(rel_error(&r.graph, &truth) < rel_error(&g, &truth));
        assert!(*r.history.last().unwrap() < 1e-12);
        for (p, t) in r.graph.vertices().iter().zip(&truth) {
            assert_abs_diff_eq!(p.x, t.x, epsilon = 1e-6);
            assert_abs_diff_eq!(p.y, t.y, epsilon = 1e-6);
        }
    }

    #[test]
    fn covariance_scaling_keeps_argmin() {
        let (g, _) = perturbed_square();
        let scaled = PoseGraph::from_parts(
            g.vertices().to_vec(),
            g.odom_edges()
                .iter()
                .map(|e| edge(e.i, e.j, meas(e.mean().dx, e.mean().dy, e.mean().dphi, e.measurement.cov() * 7.0)))
                .collect(),
            g.lc_edges()
                .iter()
                .map(|e| edge(e.i, e.j, meas(e.mean().dx, e.mean().dy, e.mean().dphi, e.measurement.cov() * 7.0)))
                .collect(),
        )
        .unwrap();
        assert_abs_diff_eq!(objective(&scaled) * 7.0, objective(&g), epsilon = 1e-6 * objective(&g));
        let a = optimize(&g, &SolverConfig::default()).unwrap();
        let b = optimize(&scaled, &SolverConfig::default()).unwrap();
        for (p, q) in a.graph.vertices().iter().zip(b.graph.vertices()) {
            assert_abs_diff_eq!(p.x, q.x, epsilon = 1e-6);
            assert_abs_diff_eq!(p.y, q.y, epsilon = 1e-6);
            assert_abs_diff_eq!(wrap_angle(p.phi - q.phi), 0.0, epsilon = 1e-6);
        }
    }

    /// Random chain with noisy odometry and a few loop edges.
    pub(crate) fn random_graph(seed: u64, n: usize) -> PoseGraph {
        use rand::Rng;
        let mut rng = crate::sim::seeded_rng(seed);
        let mut truth = vec![Pose::origin()];
        for _ in 1..n {
            let xi = RelativePose::new(rng.random_range(0.2..1.0), rng.random_range(-0.2..0.2), rng.random_range(-0.5..0.5));
            truth.push(compound_apply(truth.last().unwrap(), &xi));
        }
        let noisy: Vec<Pose> = truth
            .iter()
            .map(|p| Pose::new(p.x + rng.random_range(-0.3..0.3), p.y + rng.random_range(-0.3..0.3), p.phi + rng.random_range(-0.2..0.2)))
            .collect();
        let g = PoseGraph::build(&noisy, &OdomNoiseParams::default()).unwrap();
        let mut loops = Vec::new();
        for k in 0..3 {
            let i = rng.random_range(0..n / 2);
            let j = n / 2 + k + rng.random_range(0..n / 2 - 3);
            let d = compound_diff(&truth[i], &truth[j]);
            loops.push(edge(i, j, meas(d.dx, d.dy, d.dphi, Matrix3::from_diagonal_element(0.01))));
        }
        loops.sort_by_key(|e| (e.i, e.j));
        loops.dedup_by_key(|e| (e.i, e.j));
        let start: Vec<Pose> = noisy
            .iter()
            .map(|p| Pose::new(p.x + rng.random_range(-0.5..0.5), p.y + rng.random_range(-0.5..0.5), p.phi + rng.random_range(-0.3..0.3)))
            .collect();
        g.with_loop_edges(loops).unwrap().with_vertices(start).unwrap()
    }

    #[test]
    fn history_is_strictly_decreasing() {
        for seed in 0..20 {
            let g = random_graph(seed, 30);
            let r = optimize(&g, &SolverConfig::default()).unwrap();
            for w in r.history.windows(2) {
                assert!(w[1] < w[0]);
            }
            assert_eq!(r.log.len() + 1, r.history.len());
        }
    }

    #[test]
    fn chain_graphs_are_connected() {
        let g = random_graph(1, 10);
        assert!(check_connected(&g).is_ok());
    }

    fn numeric_jacobian(pi: &Pose, pj: &Pose, meas: &RelativePose, wrt_j: bool) -> Matrix3<f64> {
        let h = 1e-6;
        let mut jac = Matrix3::zeros();
        for c in 0..3 {
            let bump = |p: &Pose, s: f64| {
                let mut v = p.to_vector();
                v[c] += s;
                Pose { x: v[0], y: v[1], phi: v[2] }
            };
            let (plus, minus) = if wrt_j {
                (edge_residual(pi, &bump(pj, h), meas), edge_residual(pi, &bump(pj, -h), meas))
            } else {
                (edge_residual(&bump(pi, h), pj, meas), edge_residual(&bump(pi, -h), pj, meas))
            };
            let mut col = (plus - minus) / (2.0 * h);
            col[2] = wrap_angle(plus[2] - minus[2]) / (2.0 * h);
            jac.set_column(c, &col);
        }
        jac
    }

    fn pose_strategy() -> impl Strategy<Value = Pose> {
        (-20.0..20.0f64, -20.0..20.0f64, -3.0..3.0f64).prop_map(|(x, y, p)| Pose::new(x, y, p))
    }

    proptest! {
        #[test]
        fn jacobian_matches_finite_differences(pi in pose_strategy(), pj in pose_strategy(), m in pose_strategy()) {
            let meas = RelativePose::new(m.x * 0.1, m.y * 0.1, m.phi);
            let (ji, jj) = edge_jacobians(&pi, &pj);
            let ni = numeric_jacobian(&pi, &pj, &meas, false);
            let nj = numeric_jacobian(&pi, &pj, &meas, true);
            let scale = ji.amax().max(1.0);
            prop_assert!((ji - ni).amax() / scale < 1e-5);
            prop_assert!((jj - nj).amax() / jj.amax().max(1.0) < 1e-5);
        }
    }
}
