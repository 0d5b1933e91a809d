//! Simple planar polygons: area, exact intersection area of non-convex
//! polygons, and removal of self-intersection loops.

use nalgebra::{Point2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{MapError, Result};
use crate::geometry::rotation;

type P2 = Point2<f64>;

fn cross(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Signed shoelace area; positive for counter-clockwise vertex order.
pub fn signed_area(pts: &[P2]) -> f64 {
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    0.5 * (0..n)
        .map(|k| {
            let a = pts[k];
            let b = pts[(k + 1) % n];
            a.x * b.y - a.y * b.x
        })
        .sum::<f64>()
}

/// Closed simple polygon with counter-clockwise vertex order. The closing
/// edge from the last vertex back to the first is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct MapPolygon {
    vertices: Vec<P2>,
}

impl TryFrom<Vec<[f64; 2]>> for MapPolygon {
    type Error = MapError;

    fn try_from(v: Vec<[f64; 2]>) -> Result<Self> {
        Self::new(v.into_iter().map(|[x, y]| P2::new(x, y)).collect())
    }
}

impl From<MapPolygon> for Vec<[f64; 2]> {
    fn from(p: MapPolygon) -> Self {
        p.vertices.iter().map(|v| [v.x, v.y]).collect()
    }
}

impl MapPolygon {
    /// Validates and normalizes the vertex list. A repeated closing vertex is
    /// dropped; clockwise input is reversed.
    pub fn new(mut vertices: Vec<P2>) -> Result<Self> {
        if vertices.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(MapError::DegeneratePolygon("non-finite vertex".into()));
        }
        vertices.dedup_by(|a, b| (*a - *b).norm() == 0.0);
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(MapError::DegeneratePolygon(format!(
                "{} distinct vertices",
                vertices.len()
            )));
        }
        let area = signed_area(&vertices);
        let scale = bbox_diagonal(&vertices);
        if area.abs() <= 1e-12 * scale * scale {
            return Err(MapError::DegeneratePolygon("zero area".into()));
        }
        if let Some((i, j)) = first_crossing(&vertices) {
            return Err(MapError::DegeneratePolygon(format!(
                "edges {i} and {j} intersect"
            )));
        }
        if area < 0.0 {
            vertices.reverse();
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned rectangle with its lower-left corner at `(x0, y0)`.
    pub fn rectangle(x0: f64, y0: f64, width: f64, height: f64) -> Result<Self> {
        Self::new(vec![
            P2::new(x0, y0),
            P2::new(x0 + width, y0),
            P2::new(x0 + width, y0 + height),
            P2::new(x0, y0 + height),
        ])
    }

    pub fn vertices(&self) -> &[P2] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn perimeter(&self) -> f64 {
        self.edges().map(|(a, b)| (b - a).norm()).sum()
    }

    /// Area centroid.
    pub fn centroid(&self) -> P2 {
        let n = self.vertices.len();
        let (mut cx, mut cy) = (0.0, 0.0);
        for k in 0..n {
            let a = self.vertices[k];
            let b = self.vertices[(k + 1) % n];
            let w = a.x * b.y - b.x * a.y;
            cx += (a.x + b.x) * w;
            cy += (a.y + b.y) * w;
        }
        let a6 = 6.0 * self.area();
        P2::new(cx / a6, cy / a6)
    }

    pub fn edges(&self) -> impl Iterator<Item = (P2, P2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |k| (self.vertices[k], self.vertices[(k + 1) % n]))
    }

    /// Rotates by `angle` about `pivot`, then translates by `t`.
    pub fn transformed(&self, angle: f64, pivot: P2, t: Vector2<f64>) -> Self {
        let r = rotation(angle);
        let vertices = self
            .vertices
            .iter()
            .map(|p| pivot + r * (p - pivot) + t)
            .collect();
        // rigid motions preserve simplicity and orientation
        Self { vertices }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            vertices: self.vertices.iter().map(|p| P2::from(p.coords * factor)).collect(),
        }
    }

    /// Point location relative to the polygon; boundary tolerance `eps`.
    pub fn locate(&self, p: &P2, eps: f64) -> Location {
        for (a, b) in self.edges() {
            if point_segment_distance(p, &a, &b) <= eps {
                return Location::Boundary(b - a);
            }
        }
        if winding_number(&self.vertices, p) != 0 {
            Location::Inside
        } else {
            Location::Outside
        }
    }

    pub fn contains(&self, p: &P2) -> bool {
        winding_number(&self.vertices, p) != 0
    }

    /// Exact area of `self ∩ other` for simple (possibly non-convex) polygons.
    pub fn intersection_area(&self, other: &MapPolygon) -> f64 {
        let scale = bbox_diagonal(&self.vertices).max(bbox_diagonal(&other.vertices));
        let eps = 1e-10 * scale;
        // The boundary of A ∩ B is made of the pieces of ∂A inside B and of
        // ∂B inside A; overlapping collinear pieces count once when both
        // polygons run along them in the same direction.
        let area = boundary_integral(self, other, eps, true) + boundary_integral(other, self, eps, false);
        area.clamp(0.0, self.area().min(other.area()))
    }

    pub fn union_area(&self, other: &MapPolygon) -> f64 {
        self.area() + other.area() - self.intersection_area(other)
    }

    /// Intersection over union.
    pub fn iou(&self, other: &MapPolygon) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Where a point lies relative to a polygon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Location {
    Inside,
    Outside,
    /// On an edge with the given direction.
    Boundary(Vector2<f64>),
}

fn bbox_diagonal(pts: &[P2]) -> f64 {
    let (mut lo, mut hi) = (Vector2::repeat(f64::INFINITY), Vector2::repeat(f64::NEG_INFINITY));
    for p in pts {
        lo = lo.inf(&p.coords);
        hi = hi.sup(&p.coords);
    }
    (hi - lo).norm().max(f64::MIN_POSITIVE)
}

fn point_segment_distance(p: &P2, a: &P2, b: &P2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn winding_number(pts: &[P2], p: &P2) -> i32 {
    let n = pts.len();
    let mut wn = 0;
    for k in 0..n {
        let a = pts[k];
        let b = pts[(k + 1) % n];
        let side = cross(&(b - a), &(p - a));
        if a.y <= p.y {
            if b.y > p.y && side > 0.0 {
                wn += 1;
            }
        } else if b.y <= p.y && side < 0.0 {
            wn -= 1;
        }
    }
    wn
}

/// Parameters along `a0→a1` where it meets segment `b0→b1`, including the
/// ends of a collinear overlap.
fn split_params(a0: &P2, a1: &P2, b0: &P2, b1: &P2, eps: f64, out: &mut Vec<f64>) {
    let r = a1 - a0;
    let s = b1 - b0;
    let denom = cross(&r, &s);
    let qp = b0 - a0;
    let rr = r.norm_squared();
    if rr == 0.0 {
        return;
    }
    let rlen = rr.sqrt();
    if denom.abs() <= 1e-14 * rlen * s.norm().max(f64::MIN_POSITIVE) {
        // parallel: only collinear overlaps matter
        if cross(&qp, &r).abs() / rlen > eps {
            return;
        }
        for q in [b0, b1] {
            let t = (q - a0).dot(&r) / rr;
            if t > 0.0 && t < 1.0 {
                out.push(t);
            }
        }
        return;
    }
    let t = cross(&qp, &s) / denom;
    let u = cross(&qp, &r) / denom;
    let tol_t = eps / rlen;
    let tol_u = eps / s.norm();
    if t >= -tol_t && t <= 1.0 + tol_t && u >= -tol_u && u <= 1.0 + tol_u {
        out.push(t.clamp(0.0, 1.0));
    }
}

/// Green's-theorem integral of `½(x dy − y dx)` over the pieces of `a`'s
/// boundary that lie inside `b`.
fn boundary_integral(a: &MapPolygon, b: &MapPolygon, eps: f64, count_shared: bool) -> f64 {
    let mut total = 0.0;
    let mut ts = Vec::new();
    for (p0, p1) in a.edges() {
        ts.clear();
        ts.push(0.0);
        ts.push(1.0);
        for (q0, q1) in b.edges() {
            split_params(&p0, &p1, &q0, &q1, eps, &mut ts);
        }
        ts.sort_by(|x, y| x.total_cmp(y));
        ts.dedup_by(|x, y| (*x - *y).abs() < 1e-14);
        let dir = p1 - p0;
        for w in ts.windows(2) {
            let s0 = p0 + dir * w[0];
            let s1 = p0 + dir * w[1];
            if (s1 - s0).norm() <= eps {
                continue;
            }
            let mid = P2::from((s0.coords + s1.coords) * 0.5);
            let take = match b.locate(&mid, eps) {
                Location::Inside => true,
                Location::Outside => false,
                Location::Boundary(edge_dir) => count_shared && edge_dir.dot(&dir) > 0.0,
            };
            if take {
                total += 0.5 * (s0.x * s1.y - s1.x * s0.y);
            }
        }
    }
    total
}

fn segments_intersect(a0: &P2, a1: &P2, b0: &P2, b1: &P2) -> Option<P2> {
    let r = a1 - a0;
    let s = b1 - b0;
    let denom = cross(&r, &s);
    let qp = b0 - a0;
    if denom == 0.0 {
        if cross(&qp, &r) != 0.0 {
            return None;
        }
        // collinear: report the first overlapping endpoint
        let rr = r.norm_squared();
        if rr == 0.0 {
            return None;
        }
        let t0 = qp.dot(&r) / rr;
        let t1 = (b1 - a0).dot(&r) / rr;
        let (lo, hi) = (t0.min(t1), t0.max(t1));
        if hi < 0.0 || lo > 1.0 {
            return None;
        }
        return Some(a0 + r * lo.max(0.0));
    }
    let t = cross(&qp, &s) / denom;
    let u = cross(&qp, &r) / denom;
    if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
        Some(a0 + r * t)
    } else {
        None
    }
}

/// First pair of non-adjacent edges `(i, j)`, `i < j`, that touch or cross.
fn first_crossing(pts: &[P2]) -> Option<(usize, usize)> {
    first_crossing_point(pts).map(|(i, j, _)| (i, j))
}

fn first_crossing_point(pts: &[P2]) -> Option<(usize, usize, P2)> {
    let n = pts.len();
    for i in 0..n {
        let (a0, a1) = (pts[i], pts[(i + 1) % n]);
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (b0, b1) = (pts[j], pts[(j + 1) % n]);
            if let Some(x) = segments_intersect(&a0, &a1, &b0, &b1) {
                return Some((i, j, x));
            }
        }
    }
    None
}

/// What [`remove_self_intersections`] had to do.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleanupReport {
    pub loops_removed: usize,
    /// Largest removed loop as a fraction of the kept polygon's area.
    pub max_removed_fraction: f64,
}

impl CleanupReport {
    pub fn triggered(&self) -> bool {
        self.loops_removed > 0
    }
}

/// Splits a closed vertex ring at each crossing and keeps the larger of the
/// two resulting loops until no crossing remains.
pub fn remove_self_intersections(points: &[P2]) -> Result<(MapPolygon, CleanupReport)> {
    let mut pts: Vec<P2> = points.to_vec();
    pts.dedup_by(|a, b| (*a - *b).norm() == 0.0);
    if pts.len() > 1 && pts.first() == pts.last() {
        pts.pop();
    }
    let mut report = CleanupReport::default();
    let mut removed_areas = Vec::new();
    while pts.len() >= 3 {
        let Some((i, j, x)) = first_crossing_point(&pts) else {
            break;
        };
        let n = pts.len();
        let mut inner = vec![x];
        inner.extend_from_slice(&pts[i + 1..=j]);
        let mut outer = vec![x];
        outer.extend_from_slice(&pts[j + 1..n]);
        outer.extend_from_slice(&pts[..=i]);
        for ring in [&mut inner, &mut outer] {
            ring.dedup_by(|a, b| (*a - *b).norm() <= 1e-12);
            if ring.len() > 1 && (ring[0] - ring[ring.len() - 1]).norm() <= 1e-12 {
                ring.pop();
            }
        }
        let (ai, ao) = (signed_area(&inner).abs(), signed_area(&outer).abs());
        let (keep, dropped) = if ai > ao { (inner, ao) } else { (outer, ai) };
        if keep.len() >= pts.len() {
            // no progress possible (degenerate overlap); give up on this ring
            return Err(MapError::DegeneratePolygon("unresolvable self-overlap".into()));
        }
        removed_areas.push(dropped);
        report.loops_removed += 1;
        pts = keep;
    }
    let poly = MapPolygon::new(pts)?;
    let area = poly.area();
    report.max_removed_fraction = removed_areas.iter().fold(0.0f64, |m, a| m.max(a / area));
    Ok((poly, report))
}
