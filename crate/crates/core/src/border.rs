//! Border feature detection and simplification.
//!
//! Feature points are found with the two-pass IPAN99 scheme: a point is a
//! candidate when some inscribed triangle with both arms in `[d_min, d_max]`
//! opens at most `alpha_max`; candidates then survive only if no candidate
//! within `d_max` of arc length is sharper.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{self, dist, Containment, Point2};

#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    points: Vec<Point2>,
    closed: bool,
}

impl Polyline {
    pub fn new(points: Vec<Point2>, closed: bool) -> Result<Self> {
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Geometry("non-finite polyline coordinate".into()));
        }
        if closed && points.len() < 3 {
            return Err(Error::Geometry(format!(
                "closed polyline needs 3 points, got {}",
                points.len()
            )));
        }
        if points.len() < 2 {
            return Err(Error::Geometry("polyline needs at least 2 points".into()));
        }
        let n = points.len();
        let pairs = if closed { n } else { n - 1 };
        if let Some(i) = (0..pairs).find(|&i| points[i] == points[(i + 1) % n]) {
            return Err(Error::Geometry(format!(
                "consecutive duplicate points at index {i}"
            )));
        }
        Ok(Polyline { points, closed })
    }

    pub fn closed(points: Vec<Point2>) -> Result<Self> {
        Self::new(points, true)
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    fn edge_count(&self) -> usize {
        if self.closed {
            self.points.len()
        } else {
            self.points.len() - 1
        }
    }

    pub fn perimeter(&self) -> f64 {
        let n = self.points.len();
        (0..self.edge_count())
            .map(|i| dist(self.points[i], self.points[(i + 1) % n]))
            .sum()
    }

    pub fn mean_edge_length(&self) -> f64 {
        self.perimeter() / self.edge_count() as f64
    }

    /// Cumulative arc length at every vertex, starting from 0 at vertex 0.
    fn arc_positions(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.points.len());
        let mut acc = 0.0;
        s.push(0.0);
        for w in self.points.windows(2) {
            acc += dist(w[0], w[1]);
            s.push(acc);
        }
        s
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Polyline> {
        Polyline::new(indices.iter().map(|&i| self.points[i]).collect(), self.closed)
    }
}

/// IPAN99 detector parameters. Lengths are in the polyline's units, the
/// angle in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CornerParams {
    pub d_min: f64,
    pub d_max: f64,
    pub alpha_max: f64,
}

impl CornerParams {
    pub fn new(d_min: f64, d_max: f64, alpha_max: f64) -> Result<Self> {
        let cp = CornerParams {
            d_min,
            d_max,
            alpha_max,
        };
        cp.validate()?;
        Ok(cp)
    }

    fn validate(&self) -> Result<()> {
        if !(self.d_min > 0.0 && self.d_min <= self.d_max && self.d_max.is_finite()) {
            return Err(Error::Geometry(format!(
                "need 0 < d_min <= d_max, got {} and {}",
                self.d_min, self.d_max
            )));
        }
        if !(self.alpha_max > 0.0 && self.alpha_max < 180.0) {
            return Err(Error::Geometry(format!(
                "alpha_max must lie in (0, 180), got {}",
                self.alpha_max
            )));
        }
        Ok(())
    }

    /// 2x and 10x the mean edge length, 160 degrees.
    pub fn scale_default(b: &Polyline) -> Self {
        let h = b.mean_edge_length();
        CornerParams {
            d_min: 2.0 * h,
            d_max: 10.0 * h,
            alpha_max: 160.0,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        CornerParams {
            d_min: self.d_min * factor,
            d_max: self.d_max * factor,
            alpha_max: self.alpha_max,
        }
    }
}

/// A detected feature point; `sharpness` is `180 - opening angle` in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corner {
    pub index: usize,
    pub sharpness: f64,
}

/// Feature points with their sharpness, sorted by index.
pub fn detect_features(b: &Polyline, cp: &CornerParams) -> Result<Vec<Corner>> {
    if !b.is_closed() || b.len() < 3 {
        return Err(Error::Geometry("corner detection needs a closed polyline".into()));
    }
    cp.validate()?;
    let pts = b.points();
    let n = pts.len();
    let alpha_max = cp.alpha_max.to_radians();

    // pass 1: sharpest admissible triangle at every vertex
    let mut candidates = Vec::new();
    let mut fwd = Vec::new();
    let mut bwd = Vec::new();
    for i in 0..n {
        arm_directions(pts, i, cp, true, &mut fwd);
        if fwd.is_empty() {
            continue;
        }
        arm_directions(pts, i, cp, false, &mut bwd);
        if bwd.is_empty() {
            continue;
        }
        fwd.sort_by(f64::total_cmp);
        let alpha = bwd
            .iter()
            .map(|&theta| nearest_angle_gap(&fwd, theta))
            .fold(f64::INFINITY, f64::min);
        if alpha <= alpha_max {
            candidates.push(Corner {
                index: i,
                sharpness: 180.0 - alpha.to_degrees(),
            });
        }
    }

    // pass 2: non-maximum suppression over arc distance
    let arc = b.arc_positions();
    let perimeter = b.perimeter();
    let arc_dist = |i: usize, j: usize| {
        let d = (arc[i] - arc[j]).abs();
        d.min(perimeter - d)
    };
    let m = candidates.len();
    let mut keep = Vec::new();
    'outer: for (c, cand) in candidates.iter().enumerate() {
        for dir in [1isize, -1] {
            for step in 1..m {
                let o = (c as isize + dir * step as isize).rem_euclid(m as isize) as usize;
                if o == c {
                    break;
                }
                let other = &candidates[o];
                if arc_dist(cand.index, other.index) > cp.d_max {
                    break;
                }
                let beats = other.sharpness > cand.sharpness
                    || (other.sharpness == cand.sharpness && other.index < cand.index);
                if beats {
                    continue 'outer;
                }
            }
        }
        keep.push(*cand);
    }
    Ok(keep)
}

/// Indices of the IPAN99 feature points, sorted and duplicate-free.
pub fn detect_corners(b: &Polyline, cp: &CornerParams) -> Result<Vec<usize>> {
    Ok(detect_features(b, cp)?.into_iter().map(|c| c.index).collect())
}

/// Directions (radians) from vertex `i` to the admissible arm endpoints
/// walking forward or backward; the walk stops at the first point beyond
/// `d_max`.
fn arm_directions(pts: &[Point2], i: usize, cp: &CornerParams, forward: bool, out: &mut Vec<f64>) {
    out.clear();
    let n = pts.len();
    let p = pts[i];
    for step in 1..n / 2 {
        let j = if forward { (i + step) % n } else { (i + n - step) % n };
        let d = dist(p, pts[j]);
        if d > cp.d_max {
            break;
        }
        if d >= cp.d_min {
            out.push((pts[j][1] - p[1]).atan2(pts[j][0] - p[0]));
        }
    }
}

/// Smallest unsigned angle between `theta` and any direction in `sorted`.
fn nearest_angle_gap(sorted: &[f64], theta: f64) -> f64 {
    let gap = |phi: f64| {
        let d = (theta - phi).abs() % (2.0 * PI);
        d.min(2.0 * PI - d)
    };
    let pos = sorted.partition_point(|&phi| phi < theta);
    let last = sorted.len() - 1;
    let mut best = gap(sorted[pos.min(last)]);
    best = best.min(gap(sorted[pos.saturating_sub(1)]));
    // wrap-around neighbours
    best.min(gap(sorted[0])).min(gap(sorted[last]))
}

/// Number of border vertices to aim for given the sparse-point count:
/// `floor(ratio * n_sparse)` clamped to `[8, n_sparse]`, never below 3.
pub fn default_target(n_sparse: usize, ratio: f64) -> usize {
    let t = (ratio * n_sparse as f64).floor() as usize;
    t.max(8).min(n_sparse).max(3)
}

/// Indices (into `b`) of the simplified polygon's vertices, in input order.
///
/// The detector starts at [`CornerParams::scale_default`] and widens its arm
/// lengths by 1.5x while more than `target_count` features survive and the
/// arms stay under a quarter of the perimeter. Remaining excess features are
/// trimmed to the `target_count` sharpest; fewer than 3 features fall back
/// to uniform subsampling.
pub fn simplify_border_indices(b: &Polyline, target_count: usize) -> Result<Vec<usize>> {
    if target_count < 3 {
        return Err(Error::Geometry(format!("target count {target_count} is below 3")));
    }
    if !b.is_closed() {
        return Err(Error::Geometry("border must be closed".into()));
    }
    let n = b.len();
    if n <= target_count {
        return Ok((0..n).collect());
    }
    let base = CornerParams::scale_default(b);
    let limit = b.perimeter() / 4.0;
    let mut scale = 1.0;
    let mut features = detect_features(b, &base)?;
    while features.len() > target_count && base.d_max * scale * 1.5 <= limit {
        scale *= 1.5;
        features = detect_features(b, &base.scaled(scale))?;
    }
    let mut indices: Vec<usize> = if features.len() > target_count {
        features.sort_by(|a, b| b.sharpness.total_cmp(&a.sharpness).then(a.index.cmp(&b.index)));
        features.truncate(target_count);
        features.into_iter().map(|c| c.index).collect()
    } else if features.len() < 3 {
        (0..target_count).map(|k| k * n / target_count).collect()
    } else {
        features.into_iter().map(|c| c.index).collect()
    };
    indices.sort_unstable();
    indices.dedup();
    let poly: Vec<Point2> = indices.iter().map(|&i| b.points()[i]).collect();
    if !geometry::is_simple_polygon(&poly) {
        return Err(Error::Geometry(format!(
            "simplified border with {} vertices self-intersects",
            poly.len()
        )));
    }
    Ok(indices)
}

/// Simplifies a dense closed border to a polygon through its feature points.
pub fn simplify_border(b: &Polyline, target_count: usize) -> Result<Polyline> {
    let idx = simplify_border_indices(b, target_count)?;
    b.subset(&idx)
}

/// Grows a simplified border (given as sorted indices into `original`) until
/// every point of `inside` lies strictly inside it. Each step re-inserts the
/// original vertex farthest from the chord that cuts a point off. Returns
/// the enlarged index list; every vertex is still an original vertex.
pub fn enclose_points(original: &Polyline, indices: &[usize], inside: &[Point2]) -> Result<Vec<usize>> {
    let pts = original.points();
    let n = pts.len();
    let mut idx = indices.to_vec();
    loop {
        let poly: Vec<Point2> = idx.iter().map(|&i| pts[i]).collect();
        let Some(&offender) = inside
            .iter()
            .find(|&&q| geometry::locate_in_polygon(q, &poly) != Containment::Inside)
        else {
            break;
        };
        let m = idx.len();
        let chain = |k: usize| -> Vec<usize> {
            let (a, b) = (idx[k], idx[(k + 1) % m]);
            let len = (b + n - a) % n;
            (0..=len).map(|s| (a + s) % n).collect()
        };
        // prefer the pocket between a chord and its original chain that
        // actually holds the point; fall back to the nearest chord
        let mut edge = None;
        for k in 0..m {
            let c = chain(k);
            if c.len() > 2 {
                let pocket: Vec<Point2> = c.iter().map(|&i| pts[i]).collect();
                if geometry::locate_in_polygon(offender, &pocket) != Containment::Outside {
                    edge = Some(k);
                    break;
                }
            }
        }
        let edge = match edge {
            Some(k) => k,
            None => (0..m)
                .filter(|&k| chain(k).len() > 2)
                .min_by(|&a, &b| {
                    let da = geometry::point_segment_distance(offender, poly[a], poly[(a + 1) % m]);
                    let db = geometry::point_segment_distance(offender, poly[b], poly[(b + 1) % m]);
                    da.total_cmp(&db)
                })
                .ok_or_else(|| {
                    Error::Geometry(format!("point {offender:?} lies outside the border"))
                })?,
        };
        let c = chain(edge);
        let (a, b) = (pts[c[0]], pts[*c.last().unwrap()]);
        let far = c[1..c.len() - 1]
            .iter()
            .copied()
            .max_by(|&i, &j| {
                geometry::point_segment_distance(pts[i], a, b)
                    .total_cmp(&geometry::point_segment_distance(pts[j], a, b))
            })
            .unwrap();
        idx.push(far);
        idx.sort_unstable();
    }
    let poly: Vec<Point2> = idx.iter().map(|&i| pts[i]).collect();
    if !geometry::is_simple_polygon(&poly) {
        return Err(Error::Geometry("enlarged border self-intersects".into()));
    }
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn square(per_side: usize) -> Vec<Point2> {
        let mut pts = Vec::new();
        let corners = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        for c in 0..4 {
            let (a, b) = (corners[c], corners[(c + 1) % 4]);
            for s in 0..per_side {
                let t = s as f64 / per_side as f64;
                pts.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        }
        pts
    }

    #[test]
    fn square_corners() {
        let b = Polyline::closed(square(100)).unwrap();
        let cp = CornerParams::scale_default(&b);
        assert_eq!(detect_corners(&b, &cp).unwrap(), vec![0, 100, 200, 300]);
    }

    #[test]
    fn circle_has_no_corners() {
        let pts: Vec<Point2> = (0..1000)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / 1000.0;
                [a.cos(), a.sin()]
            })
            .collect();
        let b = Polyline::closed(pts).unwrap();
        let cp = CornerParams {
            alpha_max: 150.0,
            ..CornerParams::scale_default(&b)
        };
        assert!(detect_corners(&b, &cp).unwrap().is_empty());
    }

    #[test]
    fn star_has_ten_corners() {
        // 5-spike star, 100 samples per edge
        let verts: Vec<Point2> = (0..10)
            .map(|k| {
                let r = if k % 2 == 0 { 1.0 } else { 0.45 };
                let a = PI / 2.0 + PI * k as f64 / 5.0;
                [r * a.cos(), r * a.sin()]
            })
            .collect();
        let mut pts = Vec::new();
        for k in 0..10 {
            let (a, b) = (verts[k], verts[(k + 1) % 10]);
            for s in 0..100 {
                let t = s as f64 / 100.0;
                pts.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        }
        // brute-force scan: vertices where the edge direction turns
        let n = pts.len();
        let oracle: Vec<usize> = (0..n)
            .filter(|&i| {
                let d0 = geometry::sub(pts[i], pts[(i + n - 1) % n]);
                let d1 = geometry::sub(pts[(i + 1) % n], pts[i]);
                geometry::cross(d0, d1).abs() > 1e-9 * dist(pts[i], pts[(i + 1) % n]).powi(2)
            })
            .collect();
        assert_eq!(oracle.len(), 10);
        let b = Polyline::closed(pts).unwrap();
        let got = detect_corners(&b, &CornerParams::scale_default(&b)).unwrap();
        assert_eq!(got, oracle);
    }

    #[test]
    fn simplify_is_identity_below_target() {
        let b = Polyline::closed(square(2)).unwrap();
        assert_eq!(simplify_border(&b, 8).unwrap(), b);
        assert!(simplify_border(&b, 2).is_err());
    }

    #[test]
    fn simplify_square_gives_corners() {
        let b = Polyline::closed(square(100)).unwrap();
        let s = simplify_border(&b, 8).unwrap();
        assert_eq!(s.points(), &[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
    }

    #[test]
    fn smooth_border_falls_back_to_subsampling() {
        let pts: Vec<Point2> = (0..600)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / 600.0;
                [a.cos(), a.sin()]
            })
            .collect();
        let b = Polyline::closed(pts).unwrap();
        let idx = simplify_border_indices(&b, 12).unwrap();
        assert_eq!(idx, (0..12).map(|k| k * 50).collect::<Vec<_>>());
    }

    #[test]
    fn default_target_clamps() {
        assert_eq!(default_target(98, 0.5), 49);
        assert_eq!(default_target(33, 0.5), 16);
        assert_eq!(default_target(10, 0.5), 8);
        assert_eq!(default_target(5, 0.5), 5);
        assert_eq!(default_target(1, 0.5), 3);
        assert_eq!(default_target(100, 2.0), 100);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(Polyline::closed(vec![[0., 0.], [1., 0.]]).is_err());
        assert!(Polyline::closed(vec![[0., 0.], [1., 0.], [1., 0.], [0., 1.]]).is_err());
        assert!(Polyline::closed(vec![[0., 0.], [1., 0.], [0., 0.]]).is_err());
        let open = Polyline::new(vec![[0., 0.], [1., 0.], [1., 1.]], false).unwrap();
        let cp = CornerParams::new(0.1, 0.5, 150.0).unwrap();
        assert!(detect_corners(&open, &cp).is_err());
        assert!(CornerParams::new(0.5, 0.1, 150.0).is_err());
        assert!(CornerParams::new(0.1, 0.5, 180.0).is_err());
    }

    #[test]
    fn enclose_restores_cut_off_points() {
        // square with a bump on the bottom side; simplification drops it
        let mut pts = square(20);
        pts[10] = [0.5, -0.3];
        let b = Polyline::closed(pts).unwrap();
        let idx = vec![0, 20, 40, 60];
        let stations = [[0.5, -0.1], [0.5, 0.5]];
        let grown = enclose_points(&b, &idx, &stations).unwrap();
        assert!(grown.contains(&10));
        let poly: Vec<Point2> = grown.iter().map(|&i| b.points()[i]).collect();
        for s in stations {
            assert_eq!(geometry::locate_in_polygon(s, &poly), Containment::Inside);
        }
    }
}
