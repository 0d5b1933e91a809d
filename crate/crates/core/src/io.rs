//! Trajectory files, path reduction and plot-data export.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::bayes_opt::TraceRow;
use crate::error::{MapError, Result};
use crate::geometry::{wrap_angle, Pose};
use crate::loop_closure::{ComparisonMatrix, OrientationProfile};
use crate::polygon::MapPolygon;
use crate::sim::Trajectory;

const FULL_HEADER: [&str; 7] = ["t", "x_true", "y_true", "phi_true", "x_meas", "y_meas", "phi_meas"];
const MEASURED_HEADER: [&str; 4] = ["t", "x_meas", "y_meas", "phi_meas"];

/// Opens `path` for writing and emits one `# ` comment line per provenance
/// entry.
fn create_with_header(path: &Path, provenance: &[String]) -> Result<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(path)?);
    for line in provenance {
        for l in line.lines() {
            writeln!(w, "# {l}")?;
        }
    }
    Ok(w)
}

fn csv_writer(path: &Path, provenance: &[String]) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create_with_header(path, provenance)?))
}

pub fn write_trajectory(path: &Path, traj: &Trajectory, provenance: &[String]) -> Result<()> {
    traj.validate()?;
    let mut w = csv_writer(path, provenance)?;
    match &traj.true_poses {
        Some(truth) => {
            w.write_record(FULL_HEADER)?;
            for ((t, p), m) in traj.timestamps.iter().zip(truth).zip(&traj.measured_poses) {
                w.serialize((t, p.x, p.y, p.phi, m.x, m.y, m.phi))?;
            }
        }
        None => {
            w.write_record(MEASURED_HEADER)?;
            for (t, m) in traj.timestamps.iter().zip(&traj.measured_poses) {
                w.serialize((t, m.x, m.y, m.phi))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory CSV. The `*_true` columns are optional; `#` lines are
/// ignored. Timestamps must increase strictly.
pub fn ingest_recorded(path: &Path) -> Result<Trajectory> {
    let name = path.display().to_string();
    let parse_err = |line: usize, msg: String| MapError::Parse {
        path: name.clone(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |n: &str| headers.iter().position(|h| h == n);
    let header_line = headers.position().map_or(1, |p| p.line() as usize);
    let measured: Vec<usize> = MEASURED_HEADER
        .iter()
        .map(|n| col(n).ok_or_else(|| parse_err(header_line, format!("missing column '{n}'"))))
        .collect::<Result<_>>()?;
    let truth_cols: Vec<Option<usize>> = FULL_HEADER[1..4].iter().map(|n| col(n)).collect();
    let has_truth = match truth_cols.iter().filter(|c| c.is_some()).count() {
        0 => false,
        3 => true,
        _ => return Err(parse_err(header_line, "incomplete set of *_true columns".into())),
    };

    let mut traj = Trajectory {
        timestamps: Vec::new(),
        true_poses: has_truth.then(Vec::new),
        measured_poses: Vec::new(),
    };
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |k: usize| -> Result<f64> {
            let s = rec.get(k).ok_or_else(|| parse_err(line, format!("missing field {}", k + 1)))?;
            let v: f64 = s.parse().map_err(|_| parse_err(line, format!("'{s}' is not a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(line, format!("non-finite value '{s}'")))
            }
        };
        let t = field(measured[0])?;
        if traj.timestamps.last().is_some_and(|prev| t <= *prev) {
            return Err(parse_err(line, format!("timestamp {t} does not increase")));
        }
        traj.timestamps.push(t);
        traj.measured_poses
            .push(Pose::new(field(measured[1])?, field(measured[2])?, field(measured[3])?));
        if let Some(truth) = traj.true_poses.as_mut() {
            let c: Vec<usize> = truth_cols.iter().map(|c| c.unwrap()).collect();
            truth.push(Pose::new(field(c[0])?, field(c[1])?, field(c[2])?));
        }
    }
    if traj.is_empty() {
        return Err(parse_err(header_line, "no samples".into()));
    }
    Ok(traj)
}

/// Dominant points of a path: indices into the input and the kept poses.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedPath {
    pub indices: Vec<usize>,
    pub poses: Vec<Pose>,
}

/// Keeps a pose once the arc length since the last kept pose reaches
/// `min_spacing` or the heading has turned by `min_turn` since then. The
/// first and last poses are always kept.
pub fn reduce_path(poses: &[Pose], min_spacing: f64, min_turn: f64) -> ReducedPath {
    let mut indices = Vec::new();
    if poses.is_empty() {
        return ReducedPath {
            indices,
            poses: Vec::new(),
        };
    }
    indices.push(0);
    let (mut dist, mut turn) = (0.0, 0.0);
    for k in 1..poses.len() {
        dist += (poses[k].position() - poses[k - 1].position()).norm();
        turn += wrap_angle(poses[k].phi - poses[k - 1].phi);
        if dist >= min_spacing || turn.abs() >= min_turn || k == poses.len() - 1 {
            indices.push(k);
            (dist, turn) = (0.0, 0.0);
        }
    }
    let kept = indices.iter().map(|&k| poses[k]).collect();
    ReducedPath { indices, poses: kept }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// `(s_i, s_j, C_ij)` triples on every `stride`-th valid breakpoint, with
/// arc lengths `s` along the profile.
pub fn write_matrix_csv(
    path: &Path,
    matrix: &ComparisonMatrix,
    profile: &OrientationProfile,
    stride: usize,
    provenance: &[String],
) -> Result<()> {
    let mut w = csv_writer(path, provenance)?;
    w.write_record(["s_i", "s_j", "c"])?;
    let l = profile.lengths();
    for i in matrix.valid_range().step_by(stride.max(1)) {
        for j in matrix.valid_range().step_by(stride.max(1)) {
            if let Some(c) = matrix.get(i, j) {
                w.serialize((l[i], l[j], c))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Histogram of loop-closure path distances with bins of `bin_width`
/// starting at 0.
pub fn write_histogram_csv(path: &Path, values: &[f64], bin_width: f64, provenance: &[String]) -> Result<()> {
    let mut w = csv_writer(path, provenance)?;
    w.write_record(["bin_start", "bin_end", "count"])?;
    let top = values.iter().copied().fold(0.0, f64::max);
    let bins = (top / bin_width).floor() as usize + 1;
    let mut counts = vec![0usize; bins];
    for v in values {
        counts[((v.max(0.0) / bin_width).floor() as usize).min(bins - 1)] += 1;
    }
    for (k, c) in counts.iter().enumerate() {
        w.serialize((k as f64 * bin_width, (k + 1) as f64 * bin_width, c))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_nll_csv(path: &Path, history: &[(usize, f64)], provenance: &[String]) -> Result<()> {
    let mut w = csv_writer(path, provenance)?;
    w.write_record(["k", "nll"])?;
    for row in history {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Vertex lists of named polygons, one `(name, index, x, y)` row per vertex.
pub fn write_polygons_csv(path: &Path, polygons: &[(&str, &MapPolygon)], provenance: &[String]) -> Result<()> {
    let mut w = csv_writer(path, provenance)?;
    w.write_record(["polygon", "index", "x", "y"])?;
    for (name, poly) in polygons {
        for (k, v) in poly.vertices().iter().enumerate() {
            w.serialize((name, k, v.x, v.y))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv(path: &Path, names: &[&str], trace: &[TraceRow], provenance: &[String]) -> Result<()> {
    let mut w = csv_writer(path, provenance)?;
    let mut header = vec!["iter"];
    header.extend_from_slice(names);
    header.extend(["cost", "incumbent_cost", "penalized"]);
    w.write_record(&header)?;
    for row in trace {
        let mut rec = vec![row.iter.to_string()];
        rec.extend(row.theta.iter().map(|v| v.to_string()));
        rec.extend([
            row.cost.to_string(),
            row.incumbent_cost.to_string(),
            row.penalized.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::OdomNoiseParams;
    use crate::maps::BundledMap;
    use crate::sim::{simulate, SimConfig};
    use std::fs;

    fn small_run() -> Trajectory {
        let mut cfg = SimConfig::new(BundledMap::Square.polygon());
        cfg.duration = 20.0;
        cfg.seed = 3;
        simulate(&cfg).unwrap()
    }

    #[test]
    fn trajectory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("traj.csv");
        let traj = small_run();
        write_trajectory(&p, &traj, &["seed: 3".into()]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# seed: 3\nt,x_true,y_true,phi_true,x_meas,y_meas,phi_meas\n"));
        assert_eq!(ingest_recorded(&p).unwrap(), traj);
    }

    #[test]
    fn measured_only_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        let mut traj = small_run();
        traj.true_poses = None;
        write_trajectory(&p, &traj, &[]).unwrap();
        let back = ingest_recorded(&p).unwrap();
        assert!(back.true_poses.is_none());
        assert_eq!(back.measured_poses, traj.measured_poses);
    }

    #[test]
    fn bad_rows_report_their_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "# note\nt,x_meas,y_meas,phi_meas\n0,0,0,0\n0.05,0.1,abc,0\n").unwrap();
        match ingest_recorded(&p) {
            Err(MapError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        fs::write(&p, "t,x_meas,y_meas,phi_meas\n0,0,0,0\n0,0.1,0,0\n").unwrap();
        match ingest_recorded(&p) {
            Err(MapError::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("increase"));
            }
            other => panic!("{other:?}"),
        }
        fs::write(&p, "t,x_meas,y_meas\n0,0,0\n").unwrap();
        assert!(matches!(ingest_recorded(&p), Err(MapError::Parse { line: 1, .. })));
    }

    #[test]
    fn recorded_spacing_before_reduction() {
        let traj = small_run();
        let d = (traj.true_poses.as_ref().unwrap()[1].position() - traj.true_poses.as_ref().unwrap()[0].position()).norm();
        assert!((d - 0.015).abs() < 1e-12);
    }

    #[test]
    fn reduction_examples() {
        let line: Vec<Pose> = (0..=160).map(|k| Pose::new(k as f64 * 0.25, 0.0, 0.0)).collect();
        let r = reduce_path(&line, 1.0, 0.1);
        assert_eq!(r.poses.len(), 41);
        assert_eq!(r.indices[1], 4);
        let r = reduce_path(&line, 100.0, 0.1);
        assert_eq!(r.indices, vec![0, 160]);
        assert_eq!(reduce_path(&line[..1], 1.0, 0.1).indices, vec![0]);
        let turn = vec![Pose::new(0.0, 0.0, 0.0), Pose::new(0.01, 0.0, 0.0), Pose::new(0.01, 0.0, 0.2), Pose::new(0.02, 0.0, 0.2), Pose::new(0.03, 0.0, 0.2)];
        assert_eq!(reduce_path(&turn, 1.0, 0.1).indices, vec![0, 2, 4]);
    }

    #[test]
    fn default_reduction_of_a_full_run() {
        let mut cfg = SimConfig::new(BundledMap::Apartment.polygon());
        cfg.noise = OdomNoiseParams::zero();
        let traj = simulate(&cfg).unwrap();
        assert_eq!(traj.len(), 40001);
        let r = reduce_path(&traj.measured_poses, 0.5, 0.1);
        // 600 m at 0.5 m plus a handful of corner points
        assert!((1200..1300).contains(&r.poses.len()), "{}", r.poses.len());
    }

    #[test]
    fn plot_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        write_histogram_csv(&p, &[0.5, 1.5, 1.7, 9.9], 1.0, &[]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 11);
        assert!(text.contains("1.0,2.0,2\n"));
        let p = dir.path().join("n.csv");
        write_nll_csv(&p, &[(1, 10.0), (2, 4.5)], &["x".into()]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "# x\nk,nll\n1,10.0\n2,4.5\n");
    }
}
