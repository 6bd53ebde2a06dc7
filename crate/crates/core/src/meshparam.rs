//! Triangulation, mean value parametrization and parameter merging.
//!
//! Vertices are numbered stations first, then border vertices in
//! counter-clockwise order, so a station's vertex index equals its input
//! index.

use serde::{Deserialize, Serialize};
use spade::{ConstrainedDelaunayTriangulation, Triangulation};

use crate::border::Polyline;
use crate::error::{Error, Result};
use crate::geometry::{self, Containment, Point2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VertexTag {
    Station,
    Border,
}

#[derive(Clone, Debug)]
pub struct TriangleMesh {
    positions: Vec<Point2>,
    tags: Vec<VertexTag>,
    faces: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    boundary: Vec<usize>,
}

impl TriangleMesh {
    pub fn positions(&self) -> &[Point2] {
        &self.positions
    }

    pub fn tags(&self) -> &[VertexTag] {
        &self.tags
    }

    /// Counter-clockwise vertex triples.
    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Unique undirected edges, each stored as `[lo, hi]`.
    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    /// Border vertices in counter-clockwise order.
    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn station_count(&self) -> usize {
        self.tags.iter().filter(|&&t| t == VertexTag::Station).count()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.binary_search(&[a.min(b), a.max(b)]).is_ok()
    }

    fn vertex_faces(&self) -> Vec<Vec<usize>> {
        let mut vf = vec![Vec::new(); self.positions.len()];
        for (f, tri) in self.faces.iter().enumerate() {
            for &v in tri {
                vf[v].push(f);
            }
        }
        vf
    }
}

/// Constrained Delaunay triangulation of the stations and border vertices,
/// keeping only the faces inside the border.
pub fn constrained_delaunay(stations: &[Point2], border: &Polyline) -> Result<TriangleMesh> {
    let mut ring: Vec<Point2> = border.points().to_vec();
    if !geometry::is_simple_polygon(&ring) {
        return Err(Error::Geometry("border is not a simple polygon".into()));
    }
    if geometry::signed_area2(&ring) < 0.0 {
        ring.reverse();
    }
    for (i, &s) in stations.iter().enumerate() {
        if s.iter().any(|c| !c.is_finite()) {
            return Err(Error::Input(format!("station {i} has a non-finite coordinate")));
        }
        match geometry::locate_in_polygon(s, &ring) {
            Containment::Inside => {}
            Containment::Boundary => {
                return Err(Error::Input(format!("station {i} lies on the border")))
            }
            Containment::Outside => {
                return Err(Error::Input(format!("station {i} lies outside the border")))
            }
        }
    }
    let mut sorted: Vec<(Point2, usize)> = stations.iter().copied().zip(0..).collect();
    sorted.sort_by(|a, b| a.0[0].total_cmp(&b.0[0]).then(a.0[1].total_cmp(&b.0[1])));
    if let Some(w) = sorted.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Input(format!(
            "stations {} and {} share a position",
            w[0].1, w[1].1
        )));
    }

    let positions: Vec<Point2> = stations.iter().chain(ring.iter()).copied().collect();
    let ns = stations.len();
    let mut tags = vec![VertexTag::Station; ns];
    tags.extend(std::iter::repeat_n(VertexTag::Border, ring.len()));

    let mut cdt = ConstrainedDelaunayTriangulation::<spade::Point2<f64>>::new();
    let mut handles = Vec::with_capacity(positions.len());
    for p in &positions {
        let h = cdt
            .insert(spade::Point2::new(p[0], p[1]))
            .map_err(|e| Error::Input(format!("cannot triangulate point {p:?}: {e:?}")))?;
        handles.push(h);
    }
    if cdt.num_vertices() != positions.len() {
        return Err(Error::Input("duplicate vertex positions".into()));
    }
    let nb = ring.len();
    for k in 0..nb {
        cdt.add_constraint(handles[ns + k], handles[ns + (k + 1) % nb]);
    }
    if cdt.num_vertices() != positions.len() {
        return Err(Error::Geometry("border constraints had to be split".into()));
    }
    let mut vertex_of = vec![usize::MAX; positions.len()];
    for (i, h) in handles.iter().enumerate() {
        vertex_of[h.index()] = i;
    }

    let mut faces = Vec::new();
    for f in cdt.inner_faces() {
        let [a, b, c] = f.vertices().map(|v| vertex_of[v.fix().index()]);
        let (pa, pb, pc) = (positions[a], positions[b], positions[c]);
        let centroid = [(pa[0] + pb[0] + pc[0]) / 3.0, (pa[1] + pb[1] + pc[1]) / 3.0];
        if geometry::locate_in_polygon(centroid, &ring) != Containment::Inside {
            continue;
        }
        let o = geometry::orient(pa, pb, pc);
        faces.push(if o >= 0.0 { [a, b, c] } else { [a, c, b] });
    }
    faces.sort_unstable();

    let mut edges: Vec<[usize; 2]> = faces
        .iter()
        .flat_map(|t| [[t[0], t[1]], [t[1], t[2]], [t[2], t[0]]])
        .map(|[a, b]| [a.min(b), a.max(b)])
        .collect();
    edges.sort_unstable();
    edges.dedup();

    let mesh = TriangleMesh {
        positions,
        tags,
        faces,
        edges,
        boundary: (ns..ns + nb).collect(),
    };
    for k in 0..nb {
        let (a, b) = (ns + k, ns + (k + 1) % nb);
        if !mesh.has_edge(a, b) {
            return Err(Error::Topology(format!("border edge {a}-{b} missing from mesh")));
        }
    }
    Ok(mesh)
}

/// Per-vertex parameter pairs `(u, v)`, indexed like the mesh vertices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamAssignment {
    pub params: Vec<Point2>,
}

impl ParamAssignment {
    pub fn distinct_count(&self, axis: usize) -> usize {
        let mut vals: Vec<f64> = self.params.iter().map(|p| p[axis]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        vals.len()
    }
}

/// Mean value parametrization onto the unit square.
///
/// Four boundary corners are chosen by farthest-point selection and mapped to
/// the square's corners; the boundary arcs between them are spread along the
/// sides by chord length. Interior vertices solve the Floater system
/// `r_i = sum_j lambda_ij r_j`.
pub fn mean_value_param(mesh: &TriangleMesh) -> Result<ParamAssignment> {
    let nv = mesh.vertex_count();
    let bnd = mesh.boundary();
    let nb = bnd.len();
    if nb < 4 {
        return Err(Error::Topology(format!(
            "a quad domain needs at least 4 boundary vertices, got {nb}"
        )));
    }
    let pos = mesh.positions();
    let mut params = vec![[f64::NAN; 2]; nv];

    let corners = pick_corners(pos, bnd);
    for side in 0..4 {
        let (start, end) = (corners[side], corners[(side + 1) % 4]);
        let len = (end + nb - start) % nb;
        let arc: Vec<usize> = (0..=len).map(|s| bnd[(start + s) % nb]).collect();
        let mut cum = vec![0.0; arc.len()];
        for s in 1..arc.len() {
            cum[s] = cum[s - 1] + geometry::dist(pos[arc[s - 1]], pos[arc[s]]);
        }
        let total = cum[arc.len() - 1];
        for s in 0..arc.len() - 1 {
            let t = if s == 0 { 0.0 } else { cum[s] / total };
            params[arc[s]] = match side {
                0 => [t, 0.0],
                1 => [1.0, t],
                2 => [1.0 - t, 1.0],
                _ => [0.0, 1.0 - t],
            };
        }
    }

    let is_boundary = {
        let mut b = vec![false; nv];
        bnd.iter().for_each(|&i| b[i] = true);
        b
    };
    let interior: Vec<usize> = (0..nv).filter(|&i| !is_boundary[i]).collect();
    if interior.is_empty() {
        return Ok(ParamAssignment { params });
    }
    let slot = {
        let mut s = vec![usize::MAX; nv];
        interior.iter().enumerate().for_each(|(k, &i)| s[i] = k);
        s
    };

    let weights = mean_value_weights(mesh);
    let n = interior.len();
    let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
    let mut rhs = nalgebra::DMatrix::<f64>::zeros(n, 2);
    for (k, &i) in interior.iter().enumerate() {
        let row = &weights[i];
        if row.is_empty() {
            return Err(Error::Topology(format!("vertex {i} is not part of any face")));
        }
        a[(k, k)] = 1.0;
        for &(j, lambda) in row {
            if is_boundary[j] {
                rhs[(k, 0)] += lambda * params[j][0];
                rhs[(k, 1)] += lambda * params[j][1];
            } else {
                a[(k, slot[j])] -= lambda;
            }
        }
    }
    let lu = a.clone().lu();
    let mut x = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Topology("mean value system is singular (disconnected mesh?)".into()))?;
    // a couple of refinement sweeps pin the residual well below 1e-10
    for _ in 0..3 {
        let r = &rhs - &a * &x;
        if r.amax() <= 1e-14 {
            break;
        }
        if let Some(dx) = lu.solve(&r) {
            x += dx;
        }
    }
    let residual = (&rhs - &a * &x).amax();
    if !(residual <= 1e-10) {
        return Err(Error::Numerical(format!(
            "mean value system residual {residual:e} above 1e-10"
        )));
    }
    for (k, &i) in interior.iter().enumerate() {
        let (u, v) = (x[(k, 0)], x[(k, 1)]);
        if !(u > 0.0 && u < 1.0 && v > 0.0 && v < 1.0) {
            return Err(Error::Parametrization(format!(
                "interior vertex {i} mapped onto the domain boundary ({u}, {v})"
            )));
        }
        params[i] = [u, v];
    }
    Ok(ParamAssignment { params })
}

/// Normalized Floater weights `lambda_ij` for every vertex, as
/// `(neighbour, weight)` lists sorted by neighbour.
pub fn mean_value_weights(mesh: &TriangleMesh) -> Vec<Vec<(usize, f64)>> {
    let pos = mesh.positions();
    let mut raw: Vec<Vec<(usize, f64)>> = vec![Vec::new(); pos.len()];
    for tri in mesh.faces() {
        for c in 0..3 {
            let (i, j, k) = (tri[c], tri[(c + 1) % 3], tri[(c + 2) % 3]);
            let a = geometry::sub(pos[j], pos[i]);
            let b = geometry::sub(pos[k], pos[i]);
            let (la, lb) = (a[0].hypot(a[1]), b[0].hypot(b[1]));
            let half_tan = geometry::cross(a, b).abs() / (la * lb + a[0] * b[0] + a[1] * b[1]);
            raw[i].push((j, half_tan / la));
            raw[i].push((k, half_tan / lb));
        }
    }
    raw.into_iter()
        .map(|mut row| {
            row.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len() / 2);
            for (j, w) in row {
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += w,
                    _ => merged.push((j, w)),
                }
            }
            let total: f64 = merged.iter().map(|e| e.1).sum();
            merged.iter_mut().for_each(|e| e.1 /= total);
            merged
        })
        .collect()
}

/// Positions in `bnd` of four well-spread corners, in cycle order, starting
/// with the one closest to the bottom-left.
fn pick_corners(pos: &[Point2], bnd: &[usize]) -> [usize; 4] {
    let nb = bnd.len();
    let centroid = bnd.iter().fold([0.0, 0.0], |acc, &i| {
        [acc[0] + pos[i][0] / nb as f64, acc[1] + pos[i][1] / nb as f64]
    });
    let d = |a: usize, p: Point2| geometry::dist(pos[bnd[a]], p);
    let argmax = |score: &dyn Fn(usize) -> f64| {
        (0..nb).fold(0, |best, k| if score(k) > score(best) { k } else { best })
    };
    let mut chosen = vec![argmax(&|k| d(k, centroid))];
    while chosen.len() < 4 {
        let next = argmax(&|k| {
            if chosen.contains(&k) {
                f64::NEG_INFINITY
            } else {
                chosen.iter().map(|&c| d(k, pos[bnd[c]])).fold(f64::INFINITY, f64::min)
            }
        });
        chosen.push(next);
    }
    chosen.sort_unstable();
    let key = |k: usize| pos[bnd[k]][0] + pos[bnd[k]][1];
    let first = (0..4).fold(0, |best, c| if key(chosen[c]) < key(chosen[best]) { c } else { best });
    [0, 1, 2, 3].map(|s| chosen[(first + s) % 4])
}

/// `sign(det[r_j - r_i; r_k - r_i])`.
pub fn orientation_sign(ri: Point2, rj: Point2, rk: Point2) -> i8 {
    let det = geometry::orient(ri, rj, rk);
    if det > 0.0 {
        1
    } else if det < 0.0 {
        -1
    } else {
        0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeCounts {
    pub committed: usize,
    pub withdrawn: usize,
}

/// One merge sweep along `u` (bound `c1`) and then `v` (bound `c2`).
///
/// Distinct values are scanned in increasing order; each value closer than
/// the bound to its (possibly already merged) predecessor is snapped onto
/// it. The values 0 and 1 never move and nothing is snapped onto 0. A snap
/// is withdrawn when it changes the orientation sign of any face touching a
/// moved vertex or lands two stations on the same parameter pair.
pub fn merge_params(
    pa: &ParamAssignment,
    mesh: &TriangleMesh,
    c1: f64,
    c2: f64,
) -> (ParamAssignment, MergeCounts) {
    let mut out = pa.clone();
    let vertex_faces = mesh.vertex_faces();
    let mut counts = merge_axis(&mut out.params, mesh, &vertex_faces, 0, c1);
    let v = merge_axis(&mut out.params, mesh, &vertex_faces, 1, c2);
    counts.committed += v.committed;
    counts.withdrawn += v.withdrawn;
    (out, counts)
}

fn merge_axis(
    params: &mut [Point2],
    mesh: &TriangleMesh,
    vertex_faces: &[Vec<usize>],
    axis: usize,
    bound: f64,
) -> MergeCounts {
    let mut counts = MergeCounts::default();
    let mut order: Vec<usize> = (0..params.len()).collect();
    order.sort_by(|&a, &b| params[a][axis].total_cmp(&params[b][axis]).then(a.cmp(&b)));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &i in &order {
        match groups.last_mut() {
            Some(g) if params[g[0]][axis] == params[i][axis] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    let stations: Vec<usize> = (0..params.len())
        .filter(|&i| mesh.tags()[i] == VertexTag::Station)
        .collect();
    let faces = mesh.faces();

    let mut current = params[groups[0][0]][axis];
    for group in groups.iter().skip(1) {
        let value = params[group[0]][axis];
        if current == 0.0 || value == 1.0 || !((value - current).abs() < bound) {
            current = value;
            continue;
        }
        let mut touched: Vec<usize> = group.iter().flat_map(|&v| vertex_faces[v].iter().copied()).collect();
        touched.sort_unstable();
        touched.dedup();
        let before: Vec<i8> = touched
            .iter()
            .map(|&f| face_sign(params, faces[f]))
            .collect();
        for &v in group {
            params[v][axis] = current;
        }
        let flips = touched
            .iter()
            .zip(&before)
            .any(|(&f, &s)| face_sign(params, faces[f]) != s);
        let collides = !flips
            && group.iter().any(|&v| {
                mesh.tags()[v] == VertexTag::Station
                    && stations.iter().any(|&s| s != v && params[s] == params[v])
            });
        if flips || collides {
            for &v in group {
                params[v][axis] = value;
            }
            counts.withdrawn += 1;
            current = value;
        } else {
            counts.committed += 1;
        }
    }
    counts
}

fn face_sign(params: &[Point2], f: [usize; 3]) -> i8 {
    orientation_sign(params[f[0]], params[f[1]], params[f[2]])
}

/// Merged parameter grid `U_bar x V_bar` with each station's cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub u_bar: Vec<f64>,
    pub v_bar: Vec<f64>,
    pub station_cells: Vec<(usize, usize)>,
}

impl ParamGrid {
    pub fn from_assignment(pa: &ParamAssignment, mesh: &TriangleMesh) -> Result<Self> {
        let axis_values = |axis: usize| {
            let mut vals: Vec<f64> = pa.params.iter().map(|p| p[axis]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            vals
        };
        let (u_bar, v_bar) = (axis_values(0), axis_values(1));
        let mut station_cells = Vec::new();
        for (i, p) in pa.params.iter().enumerate() {
            if mesh.tags()[i] != VertexTag::Station {
                continue;
            }
            let cu = u_bar.binary_search_by(|x| x.total_cmp(&p[0])).expect("value present");
            let cv = v_bar.binary_search_by(|x| x.total_cmp(&p[1])).expect("value present");
            station_cells.push((cu, cv));
        }
        let mut seen = station_cells.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Parametrization("two stations share a grid cell".into()));
        }
        Ok(ParamGrid {
            u_bar,
            v_bar,
            station_cells,
        })
    }

    pub fn station_params(&self) -> Vec<Point2> {
        self.station_cells
            .iter()
            .map(|&(i, j)| [self.u_bar[i], self.v_bar[j]])
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationOptions {
    pub max_iters: usize,
    pub growth: f64,
    /// Stop once both distinct counts are at or below this.
    pub cap: usize,
}

impl PerturbationOptions {
    /// Growth 2, 10 iterations, cap at 70% of the station count.
    pub fn for_stations(n_stations: usize) -> Self {
        PerturbationOptions {
            max_iters: 10,
            growth: 2.0,
            cap: ((n_stations as f64 * 0.7).floor() as usize).max(2),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub bound: f64,
    pub u_count: usize,
    pub v_count: usize,
    pub committed: usize,
    pub withdrawn: usize,
}

#[derive(Clone, Debug)]
pub struct Perturbation {
    pub grid: ParamGrid,
    pub params: ParamAssignment,
    pub initial_counts: (usize, usize),
    pub history: Vec<IterationStats>,
}

/// Smallest Euclidean distance between two vertices' parameters.
pub fn min_param_distance(pa: &ParamAssignment) -> f64 {
    let mut pts = pa.params.clone();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let mut best = f64::INFINITY;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            if pts[j][0] - pts[i][0] >= best {
                break;
            }
            best = best.min(geometry::dist(pts[i], pts[j]));
        }
    }
    best
}

/// Iterated merging with bounds starting at half the minimum parameter
/// distance and multiplied by `growth` after every sweep.
pub fn perturbation_loop(
    pa: &ParamAssignment,
    mesh: &TriangleMesh,
    opts: &PerturbationOptions,
) -> Result<Perturbation> {
    if opts.max_iters < 1 || !(opts.growth > 1.0) {
        return Err(Error::Config(format!(
            "perturbation needs max_iters >= 1 and growth > 1, got {} and {}",
            opts.max_iters, opts.growth
        )));
    }
    // rejects station collisions up front
    ParamGrid::from_assignment(pa, mesh)?;
    let l = min_param_distance(pa);
    if !(l > 0.0) {
        return Err(Error::Parametrization("two vertices share a parameter pair".into()));
    }
    let mut bound = 0.5 * l;
    let mut current = pa.clone();
    let initial_counts = (current.distinct_count(0), current.distinct_count(1));
    let (mut uc, mut vc) = initial_counts;
    let mut history = Vec::new();
    for _ in 0..opts.max_iters {
        if uc <= opts.cap && vc <= opts.cap {
            break;
        }
        let (next, counts) = merge_params(&current, mesh, bound, bound);
        current = next;
        uc = current.distinct_count(0);
        vc = current.distinct_count(1);
        history.push(IterationStats {
            bound,
            u_count: uc,
            v_count: vc,
            committed: counts.committed,
            withdrawn: counts.withdrawn,
        });
        bound *= opts.growth;
    }
    let grid = ParamGrid::from_assignment(&current, mesh)?;
    Ok(Perturbation {
        grid,
        params: current,
        initial_counts,
        history,
    })
}

/// Maps parameter-domain points back to input coordinates by barycentric
/// interpolation inside the containing parametric triangle.
pub struct ParamPreimage<'a> {
    mesh: &'a TriangleMesh,
    params: &'a ParamAssignment,
}

impl<'a> ParamPreimage<'a> {
    pub fn new(mesh: &'a TriangleMesh, params: &'a ParamAssignment) -> Self {
        ParamPreimage { mesh, params }
    }

    pub fn locate(&self, uv: Point2) -> Point2 {
        let r = &self.params.params;
        let pos = self.mesh.positions();
        let mut best = (f64::NEG_INFINITY, [0.0; 3], [0usize; 3]);
        for &f in self.mesh.faces() {
            let (a, b, c) = (r[f[0]], r[f[1]], r[f[2]]);
            let area = geometry::orient(a, b, c);
            if area == 0.0 {
                continue;
            }
            let l0 = geometry::orient(uv, b, c) / area;
            let l1 = geometry::orient(a, uv, c) / area;
            let l2 = 1.0 - l0 - l1;
            let worst = l0.min(l1).min(l2);
            if worst > best.0 {
                best = (worst, [l0, l1, l2], f);
            }
            if worst >= 0.0 {
                break;
            }
        }
        let (_, mut l, f) = best;
        if best.0 < 0.0 {
            // outside every face (rounding at the domain edge): clamp
            l.iter_mut().for_each(|x| *x = x.max(0.0));
            let s: f64 = l.iter().sum();
            l.iter_mut().for_each(|x| *x /= s);
        }
        let mut out = [0.0; 2];
        for c in 0..3 {
            out[0] += l[c] * pos[f[c]][0];
            out[1] += l[c] * pos[f[c]][1];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_border() -> Polyline {
        Polyline::closed(vec![[0., 0.], [1., 0.], [1., 1.], [0., 1.]]).unwrap()
    }

    #[test]
    fn orientation_examples() {
        assert_eq!(orientation_sign([0., 0.], [1., 0.], [0., 1.]), 1);
        assert_eq!(orientation_sign([0., 0.], [0., 1.], [1., 0.]), -1);
        assert_eq!(orientation_sign([0., 0.], [1., 1.], [2., 2.]), 0);
    }

    #[test]
    fn cdt_keeps_border_edges() {
        let stations = [[0.3, 0.3], [0.7, 0.4], [0.5, 0.8]];
        let mesh = constrained_delaunay(&stations, &square_border()).unwrap();
        for k in 0..4 {
            assert!(mesh.has_edge(3 + k, 3 + (k + 1) % 4));
        }
        assert_eq!(mesh.faces().len(), 2 * 3 + 4 - 2);
        for f in mesh.faces() {
            let p = mesh.positions();
            assert!(geometry::orient(p[f[0]], p[f[1]], p[f[2]]) > 0.0);
        }
    }

    #[test]
    fn cdt_rejects_bad_stations() {
        let b = square_border();
        assert!(matches!(constrained_delaunay(&[[1.5, 0.5]], &b), Err(Error::Input(_))));
        assert!(matches!(constrained_delaunay(&[[1.0, 0.5]], &b), Err(Error::Input(_))));
        assert!(matches!(
            constrained_delaunay(&[[0.5, 0.5], [0.5, 0.5]], &b),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn clockwise_border_is_reoriented() {
        let b = Polyline::closed(vec![[0., 0.], [0., 1.], [1., 1.], [1., 0.]]).unwrap();
        let mesh = constrained_delaunay(&[[0.4, 0.6]], &b).unwrap();
        assert!(geometry::signed_area2(&mesh.boundary().iter().map(|&i| mesh.positions()[i]).collect::<Vec<_>>()) > 0.0);
    }

    #[test]
    fn symmetric_single_vertex_maps_to_center() {
        let mesh = constrained_delaunay(&[[0.5, 0.5]], &square_border()).unwrap();
        let pa = mean_value_param(&mesh).unwrap();
        assert!((pa.params[0][0] - 0.5).abs() < 1e-14);
        assert!((pa.params[0][1] - 0.5).abs() < 1e-14);
        let corners: Vec<Point2> = (1..5).map(|i| pa.params[i]).collect();
        assert_eq!(corners, vec![[0., 0.], [1., 0.], [1., 1.], [0., 1.]]);
    }

    #[test]
    fn triangle_border_is_rejected_for_quads() {
        let b = Polyline::closed(vec![[0., 0.], [1., 0.], [0., 1.]]).unwrap();
        let mesh = constrained_delaunay(&[[0.2, 0.2]], &b).unwrap();
        assert!(matches!(mean_value_param(&mesh), Err(Error::Topology(_))));
    }

    fn toy_mesh(params: Vec<Point2>, faces: Vec<[usize; 3]>, stations: usize) -> TriangleMesh {
        let n = params.len();
        let mut tags = vec![VertexTag::Station; stations];
        tags.extend(std::iter::repeat_n(VertexTag::Border, n - stations));
        TriangleMesh {
            positions: params,
            tags,
            faces,
            edges: Vec::new(),
            boundary: (stations..n).collect(),
        }
    }

    #[test]
    fn merge_hand_trace() {
        // u-values {0, 0.40, 0.41, 1}; no faces, no flips possible
        let params = vec![[0.40, 0.2], [0.41, 0.7], [0.0, 0.5], [1.0, 0.5]];
        let mesh = toy_mesh(params.clone(), vec![], 2);
        let pa = ParamAssignment { params };
        let (out, counts) = merge_params(&pa, &mesh, 0.05, 1e-9);
        assert_eq!(out.params[1][0], 0.40);
        assert_eq!(out.distinct_count(0), 3);
        assert_eq!(counts.committed, 1);
    }

    #[test]
    fn tiny_bounds_change_nothing() {
        let params = vec![[0.3, 0.2], [0.6, 0.7], [0.0, 0.5], [1.0, 0.5]];
        let mesh = toy_mesh(params.clone(), vec![[2, 0, 1]], 2);
        let pa = ParamAssignment { params };
        let (out, counts) = merge_params(&pa, &mesh, 1e-3, 1e-3);
        assert_eq!(out, pa);
        assert_eq!(counts, MergeCounts::default());
    }

    #[test]
    fn flip_inducing_merge_is_withdrawn() {
        // vertex 2 sits between 0 and 1 in u; snapping it onto u(0) flips
        // triangle (0, 2, 1), snapping 1 onto u(2) afterwards does not
        let params = vec![[0.50, 0.20], [0.52, 0.80], [0.515, 0.50], [0.0, 0.0], [1.0, 1.0]];
        let mesh = toy_mesh(params.clone(), vec![[0, 2, 1]], 3);
        let pa = ParamAssignment { params };
        assert_eq!(orientation_sign(pa.params[0], pa.params[2], pa.params[1]), 1);
        let (out, counts) = merge_params(&pa, &mesh, 0.016, 1e-9);
        assert_eq!(out.params[2], pa.params[2]);
        assert_eq!(out.params[1], [0.515, 0.80]);
        assert_eq!(counts, MergeCounts { committed: 1, withdrawn: 1 });
        assert_eq!(orientation_sign(out.params[0], out.params[2], out.params[1]), 1);
    }

    #[test]
    fn boundary_values_are_immutable() {
        let params = vec![[0.01, 0.5], [0.99, 0.5], [0.0, 0.2], [1.0, 0.2]];
        let mesh = toy_mesh(params.clone(), vec![], 2);
        let pa = ParamAssignment { params };
        let (out, _) = merge_params(&pa, &mesh, 0.5, 1e-9);
        assert_eq!(out.params[0][0], 0.01);
        assert_eq!(out.params[2][0], 0.0);
        assert_eq!(out.params[3][0], 1.0);
        // 0.99 merges onto 0.01 only through the chain; 0.99 - 0.01 > 0.5
        assert_eq!(out.params[1][0], 0.99);
    }

    #[test]
    fn station_collisions_are_withdrawn() {
        let params = vec![[0.40, 0.5], [0.41, 0.5], [0.0, 0.2], [1.0, 0.2]];
        let mesh = toy_mesh(params.clone(), vec![], 2);
        let pa = ParamAssignment { params };
        let (out, counts) = merge_params(&pa, &mesh, 0.05, 0.05);
        assert_eq!(out, pa);
        assert_eq!(counts.withdrawn, 1);
    }

    #[test]
    fn preimage_inverts_parametrization() {
        let stations = [[0.3, 0.3], [0.7, 0.4], [0.5, 0.8]];
        let mesh = constrained_delaunay(&stations, &square_border()).unwrap();
        let pa = mean_value_param(&mesh).unwrap();
        let map = ParamPreimage::new(&mesh, &pa);
        for (i, s) in stations.iter().enumerate() {
            let back = map.locate(pa.params[i]);
            assert!(geometry::dist(back, *s) < 1e-12);
        }
        let corner = map.locate([1.0, 1.0]);
        assert!(geometry::dist(corner, [1.0, 1.0]) < 1e-12);
    }
}
