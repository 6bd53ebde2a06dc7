//! Synthetic inputs and independent oracles shared by the integration tests.
#![allow(dead_code)]

use kpi_core::bspline::KnotVector;
use kpi_core::geometry::{self, Containment, Point2};
use kpi_core::kpi::FitRow;
use kpi_core::pipeline::Dataset;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn regular_polygon(n: usize, radius: f64) -> Vec<Point2> {
    (0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            [radius * a.cos(), radius * a.sin()]
        })
        .collect()
}

/// Uniform rejection sample strictly inside `poly`, at least `margin` away
/// from its boundary.
pub fn scatter_inside(rng: &mut ChaCha8Rng, poly: &[Point2], n: usize, margin: f64) -> Vec<Point2> {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in poly {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])];
        if geometry::locate_in_polygon(p, poly) == Containment::Inside
            && geometry::distance_to_polygon(p, poly) > margin
        {
            out.push(p);
        }
    }
    out
}

pub fn field(x: f64, y: f64, t: f64) -> f64 {
    (3.0 * x).sin() * (2.0 * y).cos() + t * t
}

/// Stations scattered in a regular 20-gon with readings of [`field`] at
/// uniform times in `[0, 1]`.
pub fn synthetic_dataset(rng: &mut ChaCha8Rng, n_stations: usize, steps: usize) -> Dataset {
    let border = regular_polygon(20, 1.0);
    let stations = scatter_inside(rng, &border, n_stations, 1e-3);
    let times: Vec<f64> = (0..steps).map(|k| k as f64 / (steps - 1) as f64).collect();
    Dataset {
        station_ids: (0..n_stations).map(|i| format!("s{i}")).collect(),
        readings: stations.iter().map(|p| times.iter().map(|&t| field(p[0], p[1], t)).collect()).collect(),
        stations,
        border,
    }
}

/// Gaussian elimination with complete pivoting.
pub fn full_pivot_solve(a: Vec<Vec<f64>>, b: Vec<f64>) -> Vec<f64> {
    full_pivot_solve_checked(a, b, 0.0).expect("singular oracle system")
}

/// Complete-pivoting solve that gives up when the last pivot falls below
/// `rel_tol` times the first, i.e. when the system is numerically singular.
pub fn full_pivot_solve_checked(mut a: Vec<Vec<f64>>, mut b: Vec<f64>, rel_tol: f64) -> Option<Vec<f64>> {
    let n = b.len();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let (mut pr, mut pc, mut best) = (col, col, 0.0);
        for r in col..n {
            for c in col..n {
                if a[r][c].abs() > best {
                    (pr, pc, best) = (r, c, a[r][c].abs());
                }
            }
        }
        if best == 0.0 || (col > 0 && best <= rel_tol * a[0][0].abs()) {
            return None;
        }
        a.swap(col, pr);
        b.swap(col, pr);
        for row in a.iter_mut() {
            row.swap(col, pc);
        }
        perm.swap(col, pc);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut y = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * y[c]).sum();
        y[r] = (b[r] - s) / a[r][r];
    }
    let mut x = vec![0.0; n];
    for (i, &p) in perm.iter().enumerate() {
        x[p] = y[i];
    }
    Some(x)
}

/// `N_{i,p}(u)` from the recursive definition, with the right end of the
/// domain attached to the last nonempty span.
pub fn naive_basis(knots: &[f64], p: usize, i: usize, u: f64) -> f64 {
    if p == 0 {
        let (a, b) = (knots[i], knots[i + 1]);
        let last_span = b == *knots.last().unwrap() && a < b && u == b;
        return if (a <= u && u < b) || last_span { 1.0 } else { 0.0 };
    }
    let mut out = 0.0;
    let d1 = knots[i + p] - knots[i];
    if d1 > 0.0 {
        out += (u - knots[i]) / d1 * naive_basis(knots, p - 1, i, u);
    }
    let d2 = knots[i + p + 1] - knots[i + 1];
    if d2 > 0.0 {
        out += (knots[i + p + 1] - u) / d2 * naive_basis(knots, p - 1, i + 1, u);
    }
    out
}

pub fn naive_basis_row(kv: &KnotVector, u: f64) -> Vec<f64> {
    (0..kv.control_count()).map(|i| naive_basis(kv.knots(), kv.degree(), i, u)).collect()
}

/// Controls from `[2 A^T A, C^T; C, 0]` solved by complete pivoting
/// (scalar rows only).
pub fn dense_kkt_oracle(row: &FitRow, kv: &KnotVector) -> Vec<f64> {
    dense_kkt_oracle_checked(row, kv, 0.0).expect("singular oracle system")
}

/// The oracle solution, or `None` when the KKT matrix is numerically
/// singular and the constrained minimizer is not unique.
pub fn dense_kkt_oracle_checked(row: &FitRow, kv: &KnotVector, rel_tol: f64) -> Option<Vec<f64>> {
    let n = kv.control_count();
    let params = row.params();
    let flags = row.key_flags();
    let keys: Vec<usize> = (0..params.len()).filter(|&i| flags[i]).collect();
    let k = keys.len();
    let mut m = vec![vec![0.0; n + k]; n + k];
    let mut rhs = vec![0.0; n + k];
    for i in (0..params.len()).filter(|&i| !flags[i]) {
        let r = naive_basis_row(kv, params[i]);
        for p in 0..n {
            for q in 0..n {
                m[p][q] += 2.0 * r[p] * r[q];
            }
            rhs[p] += 2.0 * r[p] * row.point(i)[0];
        }
    }
    for (s, &i) in keys.iter().enumerate() {
        let r = naive_basis_row(kv, params[i]);
        for p in 0..n {
            m[n + s][p] = r[p];
            m[p][n + s] = r[p];
        }
        rhs[n + s] = row.point(i)[0];
    }
    full_pivot_solve_checked(m, rhs, rel_tol).map(|x| x[..n].to_vec())
}

/// Least-squares objective of the normal-equations solution `A^T A x = A^T b`.
pub fn normal_equations_objective(row: &FitRow, kv: &KnotVector) -> f64 {
    let n = kv.control_count();
    let params = row.params();
    let rows: Vec<Vec<f64>> = params.iter().map(|&u| naive_basis_row(kv, u)).collect();
    let mut ata = vec![vec![0.0; n]; n];
    let mut atb = vec![0.0; n];
    for (r, basis) in rows.iter().enumerate() {
        for p in 0..n {
            for q in 0..n {
                ata[p][q] += basis[p] * basis[q];
            }
            atb[p] += basis[p] * row.point(r)[0];
        }
    }
    let x = full_pivot_solve(ata, atb);
    rows.iter()
        .enumerate()
        .map(|(r, basis)| {
            let fit: f64 = basis.iter().zip(&x).map(|(b, c)| b * c).sum();
            (fit - row.point(r)[0]).powi(2)
        })
        .sum()
}

/// Random parameters in `[0, 1]` including both ends, strictly increasing.
pub fn random_params(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let mut u: Vec<f64> = (0..m.saturating_sub(2)).map(|_| rng.gen_range(0.001..0.999)).collect();
    u.push(0.0);
    u.push(1.0);
    u.sort_by(f64::total_cmp);
    u.dedup();
    u
}

/// Writes `stations.csv`, `readings.csv` and `border.csv` into `dir`.
pub fn write_dataset(dir: &std::path::Path, ds: &Dataset) {
    let mut s = String::from("id,x,y\n");
    for (id, p) in ds.station_ids.iter().zip(&ds.stations) {
        s += &format!("{id},{:e},{:e}\n", p[0], p[1]);
    }
    std::fs::write(dir.join("stations.csv"), s).unwrap();
    let mut r = String::from("station_id,step_index,value\n");
    for (id, series) in ds.station_ids.iter().zip(&ds.readings) {
        for (k, v) in series.iter().enumerate() {
            r += &format!("{id},{k},{v:e}\n");
        }
    }
    std::fs::write(dir.join("readings.csv"), r).unwrap();
    let mut b = String::from("x,y\n");
    for p in &ds.border {
        b += &format!("{:e},{:e}\n", p[0], p[1]);
    }
    std::fs::write(dir.join("border.csv"), b).unwrap();
}
