//! Constrained curve fitting: curves that interpolate key points exactly and
//! approximate the rest in the least-squares sense, and the three-level
//! lofting that turns a gridded dataset into a trivariate volume.
//!
//! Each curve solves
//!
//! ```text
//! minimize  sum over non-key i of |Q_i - C(u_i)|^2
//! subject to C(u_j) = Q_j for every key j
//! ```
//!
//! Keys first get their own knot spans (midpoint insertion), which makes the
//! constraint rows independent. When the reduced problem has a unique
//! minimizer it is obtained from the KKT system
//! `[2 A^T A, C^T; C, 0] [x; l] = [2 A^T b; d]`. Otherwise the minimizer with
//! the smallest second-difference energy of the control polygon is returned,
//! which keeps constant data mapped to constant controls.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bspline::{approximation_knots, BSplineCurve, BSplineVolume, KnotVector};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::kriging::GriddedDataset;
use crate::linalg::FullSvd;

/// Singular values below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KpiOptions {
    /// Initial control count as a fraction of the parameter count, before
    /// key refinement adds knots.
    pub control_ratio: f64,
    pub key_tol: f64,
    /// Keys closer than this cannot be separated by refinement.
    pub min_span: f64,
    pub condition_warn: f64,
    pub exec: Execution,
}

impl Default for KpiOptions {
    fn default() -> Self {
        KpiOptions {
            control_ratio: 0.5,
            key_tol: 1e-10,
            min_span: 1e-9,
            condition_warn: 1e12,
            exec: Execution::Parallel,
        }
    }
}

impl KpiOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.control_ratio > 0.0 && self.control_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "control ratio {} must lie in (0, 1]",
                self.control_ratio
            )));
        }
        for (name, v) in [
            ("key tolerance", self.key_tol),
            ("minimum span", self.min_span),
            ("condition threshold", self.condition_warn),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Points along one parameter axis, some of which are keys.
#[derive(Clone, Debug, PartialEq)]
pub struct FitRow {
    params: Vec<f64>,
    dim: usize,
    points: Vec<f64>,
    key_flags: Vec<bool>,
}

impl FitRow {
    /// `points` holds `dim` values per parameter. Parameters must increase
    /// strictly from 0 to 1.
    pub fn new(params: Vec<f64>, dim: usize, points: Vec<f64>, key_flags: Vec<bool>) -> Result<Self> {
        let m = params.len();
        if m == 0 || dim == 0 || points.len() != m * dim || key_flags.len() != m {
            return Err(Error::Size(format!(
                "fit row with {m} params, {} values of dim {dim}, {} flags",
                points.len(),
                key_flags.len()
            )));
        }
        if params[0] != 0.0 || params[m - 1] != 1.0 || params.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Size(
                "fit row parameters must increase strictly from 0 to 1".into(),
            ));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Size("fit row has non-finite values".into()));
        }
        Ok(FitRow {
            params,
            dim,
            points,
            key_flags,
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn key_flags(&self) -> &[bool] {
        &self.key_flags
    }

    pub fn key_params(&self) -> Vec<f64> {
        self.params
            .iter()
            .zip(&self.key_flags)
            .filter(|(_, &k)| k)
            .map(|(&u, _)| u)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// Unique minimizer from the KKT system.
    Kkt,
    /// Unique minimizer via the constraint null space (reduced problem too
    /// ill-conditioned for the KKT matrix).
    NullSpace,
    /// Minimizers form an affine set; the smoothest one was taken.
    TieBreak,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KpiCurve {
    pub curve: BSplineCurve,
    pub key_params: Vec<f64>,
    /// Max abs deviation at key points.
    pub residual_key: f64,
    /// Sum of squared deviations at non-key points.
    pub residual_lsq: f64,
    /// Condition number of the reduced least-squares Hessian.
    pub condition: f64,
    pub method: SolveMethod,
    pub warnings: Vec<String>,
}

/// Starting knot vector for `params`: `ceil(ratio * m)` controls, clamped to
/// `[degree + 1, m]`.
pub fn initial_knots(params: &[f64], degree: usize, control_ratio: f64) -> Result<KnotVector> {
    let m = params.len();
    if m < degree + 1 {
        return Err(Error::Size(format!(
            "{m} parameters cannot carry a degree-{degree} curve"
        )));
    }
    let n = ((control_ratio * m as f64).ceil() as usize).clamp(degree + 1, m);
    approximation_knots(params, degree, n)
}

/// Inserts span midpoints until no knot span holds two key parameters.
pub fn refine_knots_for_keys(kv: &KnotVector, key_params: &[f64], min_span: f64) -> Result<KnotVector> {
    let mut keys = key_params.to_vec();
    keys.sort_by(f64::total_cmp);
    for w in keys.windows(2) {
        if w[1] - w[0] < min_span {
            return Err(Error::Feasibility(format!(
                "key parameters {} and {} are closer than {min_span}",
                w[0], w[1]
            )));
        }
    }
    let mut kv = kv.clone();
    loop {
        let spans = keys.iter().map(|&u| kv.find_span(u)).collect::<Result<Vec<_>>>()?;
        let Some(w) = spans.windows(2).position(|w| w[0] == w[1]) else {
            return Ok(kv);
        };
        let s = spans[w];
        let (a, b) = (kv.knots()[s], kv.knots()[s + 1]);
        kv = kv.with_knot(0.5 * (a + b))?;
    }
}

/// Control indices whose basis functions can be nonzero at any key
/// parameter: the union of the span windows.
pub fn propagate_keys(kv: &KnotVector, key_params: &[f64]) -> Result<BTreeSet<usize>> {
    let mut out = BTreeSet::new();
    for &u in key_params {
        out.extend(kv.span_window(u)?);
    }
    Ok(out)
}

/// Refines the initial knots for the row's keys and solves.
pub fn fit_kpi_curve(row: &FitRow, degree: usize, opts: &KpiOptions) -> Result<KpiCurve> {
    let kv = initial_knots(row.params(), degree, opts.control_ratio)?;
    let kv = refine_knots_for_keys(&kv, &row.key_params(), opts.min_span)?;
    fit_with_knots(row, &kv, opts)
}

/// Solves the constrained fit on a fixed knot vector.
pub fn fit_with_knots(row: &FitRow, kv: &KnotVector, opts: &KpiOptions) -> Result<KpiCurve> {
    let n = kv.control_count();
    let d = row.dim();
    let keys: Vec<usize> = (0..row.params.len()).filter(|&i| row.key_flags[i]).collect();
    let free: Vec<usize> = (0..row.params.len()).filter(|&i| !row.key_flags[i]).collect();
    let collocate = |idx: &[usize]| -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let mut a = DMatrix::zeros(idx.len(), n);
        let mut b = DMatrix::zeros(idx.len(), d);
        for (r, &i) in idx.iter().enumerate() {
            let basis = kv.basis_funs(row.params[i])?;
            let first = basis.first_index();
            for (c, &v) in basis.values.iter().enumerate() {
                a[(r, first + c)] = v;
            }
            for (c, &v) in row.point(i).iter().enumerate() {
                b[(r, c)] = v;
            }
        }
        Ok((a, b))
    };
    let (a, b) = collocate(&free)?;
    let (c, dk) = collocate(&keys)?;

    let c_svd = FullSvd::new(&c);
    if c_svd.rank(RANK_TOL) < keys.len() {
        return Err(Error::Feasibility(format!(
            "{} key constraints are linearly dependent on {n} controls",
            keys.len()
        )));
    }
    let x_part = c_svd.solve(&dk, RANK_TOL);
    let z = c_svd.null_space(RANK_TOL);
    let reduced = &a * &z;
    let r_svd = FullSvd::new(&reduced);
    let free_dims = z.ncols();
    let r_rank = r_svd.rank(RANK_TOL);
    let condition = if free_dims == 0 {
        1.0
    } else if r_rank < free_dims {
        f64::INFINITY
    } else {
        (r_svd.max_singular() / r_svd.singular[free_dims - 1]).powi(2)
    };

    let mut warnings = Vec::new();
    let (x, method) = if free_dims == 0 {
        (x_part, SolveMethod::Kkt)
    } else if r_rank < free_dims {
        (tie_break(&a, &b, &x_part, &z, &r_svd), SolveMethod::TieBreak)
    } else if condition <= opts.condition_warn {
        (kkt_solve(&a, &b, &c, &dk)?, SolveMethod::Kkt)
    } else {
        warnings.push(format!("reduced Hessian condition {condition:.3e}"));
        let y = r_svd.solve(&(&b - &a * &x_part), RANK_TOL);
        (&x_part + &z * y, SolveMethod::NullSpace)
    };
    // pull the null-space paths back onto the key constraints
    let x = match method {
        SolveMethod::Kkt => x,
        _ => {
            let drift = &c * &x - &dk;
            x - c_svd.solve(&drift, RANK_TOL)
        }
    };

    let residual_key = if keys.is_empty() {
        0.0
    } else {
        (&c * &x - &dk).amax()
    };
    if !(residual_key <= opts.key_tol) {
        return Err(Error::Numerical(format!(
            "key residual {residual_key:.3e} exceeds {:.1e}",
            opts.key_tol
        )));
    }
    let residual_lsq = (&a * &x - &b).norm_squared();
    let mut controls = Vec::with_capacity(n * d);
    for i in 0..n {
        controls.extend(x.row(i).iter());
    }
    Ok(KpiCurve {
        curve: BSplineCurve::new(kv.clone(), d, controls)?,
        key_params: row.key_params(),
        residual_key,
        residual_lsq,
        condition,
        method,
        warnings,
    })
}

fn kkt_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, dk: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, k) = (a.ncols(), c.nrows());
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&(2.0 * a.transpose() * a));
    kkt.view_mut((0, n), (n, k)).copy_from(&c.transpose());
    kkt.view_mut((n, 0), (k, n)).copy_from(c);
    let mut rhs = DMatrix::zeros(n + k, b.ncols());
    rhs.view_mut((0, 0), (n, b.ncols())).copy_from(&(2.0 * a.transpose() * b));
    rhs.view_mut((n, 0), (k, b.ncols())).copy_from(dk);
    let lu = kkt.clone().lu();
    let mut sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular KKT system".into()))?;
    // one step of iterative refinement
    let residual = &rhs - &kkt * &sol;
    if let Some(delta) = lu.solve(&residual) {
        sol += delta;
    }
    Ok(sol.rows(0, n).into_owned())
}

/// Among all minimizers `x_part + Z (y_ls + W w)` picks the one with the
/// least second-difference energy of the controls.
fn tie_break(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    x_part: &DMatrix<f64>,
    z: &DMatrix<f64>,
    r_svd: &FullSvd,
) -> DMatrix<f64> {
    let y = r_svd.solve(&(b - a * x_part), RANK_TOL);
    let x0 = x_part + z * y;
    let n = x0.nrows();
    let order = if n >= 3 { 2 } else { 1 };
    if n <= order {
        return x0;
    }
    let mut diff = DMatrix::zeros(n - order, n);
    for i in 0..n - order {
        if order == 2 {
            diff[(i, i)] = 1.0;
            diff[(i, i + 1)] = -2.0;
            diff[(i, i + 2)] = 1.0;
        } else {
            diff[(i, i)] = -1.0;
            diff[(i, i + 1)] = 1.0;
        }
    }
    let free = z * r_svd.null_space(RANK_TOL);
    let g = &diff * &free;
    let w = FullSvd::new(&g).solve(&(-(&diff * &x0)), RANK_TOL);
    x0 + free * w
}

/// One lofting level: rows sharing `params`, grouped so that rows with the
/// same key pattern are solved together (columns side by side).
struct LevelGroup {
    keys: Vec<bool>,
    /// `params.len() x width`.
    data: DMatrix<f64>,
}

struct LevelFit {
    kv: KnotVector,
    /// One `controls x width` block per group.
    controls: Vec<DMatrix<f64>>,
    warnings: Vec<String>,
    methods: Vec<SolveMethod>,
}

fn fit_level(
    level: usize,
    params: &[f64],
    degree: usize,
    groups: &[LevelGroup],
    opts: &KpiOptions,
) -> Result<LevelFit> {
    let base = initial_knots(params, degree, opts.control_ratio).map_err(|e| e.context(format!("level {level}")))?;
    let key_sets: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| (0..params.len()).filter(|&i| g.keys[i]).map(|i| params[i]).collect())
        .collect();
    let refined = exec::try_map_indexed(opts.exec, groups.len(), |g| {
        refine_knots_for_keys(&base, &key_sets[g], opts.min_span)
            .map_err(|e| e.context(format!("level {level} row {g}")))
    })?;
    let mut kv = base;
    for r in &refined {
        kv = kv.union(r)?;
    }
    let fits = exec::try_map_indexed(opts.exec, groups.len(), |g| {
        let group = &groups[g];
        let width = group.data.ncols();
        let mut points = Vec::with_capacity(group.data.len());
        for i in 0..params.len() {
            points.extend(group.data.row(i).iter());
        }
        let row = FitRow::new(params.to_vec(), width, points, group.keys.clone())?;
        fit_with_knots(&row, &kv, opts).map_err(|e| e.context(format!("level {level} row {g}")))
    })?;
    let mut warnings = Vec::new();
    let mut methods = Vec::new();
    let controls = fits
        .into_iter()
        .enumerate()
        .map(|(g, fit)| {
            warnings.extend(fit.warnings.iter().map(|w| format!("level {level} row {g}: {w}")));
            methods.push(fit.method);
            let width = fit.curve.dim();
            DMatrix::from_row_slice(fit.curve.control_count(), width, fit.curve.controls())
        })
        .collect();
    Ok(LevelFit {
        kv,
        controls,
        warnings,
        methods,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeFit {
    pub volume: BSplineVolume,
    pub warnings: Vec<String>,
    /// Rows per level solved by each method, `[kkt, null_space, tie_break]`.
    pub method_counts: [[usize; 3]; 3],
}

/// Lofts `grid` into a volume of the given degrees: curves along `u` through
/// the grid, along `v` through their controls, then along `t`. Every station
/// cell is interpolated at every time step.
pub fn fit_volume(grid: &GriddedDataset, degrees: [usize; 3], opts: &KpiOptions) -> Result<VolumeFit> {
    opts.validate()?;
    grid.validate()?;
    let [mu, mv, mt] = grid.shape();
    let dim = grid.dim;
    for (axis, (&m, &p)) in [mu, mv, mt].iter().zip(&degrees).enumerate() {
        if p == 0 || m < p + 1 {
            return Err(Error::Size(format!(
                "axis {axis}: {m} grid parameters for degree {p}"
            )));
        }
    }
    let stations: Vec<(usize, usize)> = (0..mu)
        .flat_map(|i| (0..mv).map(move |j| (i, j)))
        .filter(|&(i, j)| grid.is_key(i, j))
        .collect();
    let width = mt * dim;

    // level 1: one group per v index, columns (k, component)
    let groups1: Vec<LevelGroup> = (0..mv)
        .map(|j| LevelGroup {
            keys: (0..mu).map(|i| grid.is_key(i, j)).collect(),
            data: DMatrix::from_fn(mu, width, |i, col| grid.value(i, j, col / dim)[col % dim]),
        })
        .collect();
    let l1 = fit_level(1, &grid.u_bar, degrees[0], &groups1, opts)?;
    let nu = l1.kv.control_count();

    // level 2: one group per u control, keys from propagation along u
    let mut keys2 = vec![vec![false; mv]; nu];
    for &(i, j) in &stations {
        for a in l1.kv.span_window(grid.u_bar[i])? {
            keys2[a][j] = true;
        }
    }
    let groups2: Vec<LevelGroup> = (0..nu)
        .map(|a| LevelGroup {
            keys: keys2[a].clone(),
            data: DMatrix::from_fn(mv, width, |j, col| l1.controls[j][(a, col)]),
        })
        .collect();
    let l2 = fit_level(2, &grid.v_bar, degrees[1], &groups2, opts)?;
    let nv = l2.kv.control_count();

    // level 3: rows (a, b); keyed rows interpolate every time sample
    let mut keyed3 = vec![false; nu * nv];
    for (a, row) in keys2.iter().enumerate() {
        for (j, _) in row.iter().enumerate().filter(|(_, &k)| k) {
            for b in l2.kv.span_window(grid.v_bar[j])? {
                keyed3[a * nv + b] = true;
            }
        }
    }
    let mut members: BTreeMap<bool, Vec<usize>> = BTreeMap::new();
    for (r, &k) in keyed3.iter().enumerate() {
        members.entry(!k).or_default().push(r);
    }
    let (flags3, rows3): (Vec<bool>, Vec<Vec<usize>>) = members.into_iter().map(|(nk, r)| (!nk, r)).unzip();
    let groups3: Vec<LevelGroup> = flags3
        .iter()
        .zip(&rows3)
        .map(|(&keyed, rows)| LevelGroup {
            keys: vec![keyed; mt],
            data: DMatrix::from_fn(mt, rows.len() * dim, |k, col| {
                let r = rows[col / dim];
                l2.controls[r / nv][(r % nv, k * dim + col % dim)]
            }),
        })
        .collect();
    let l3 = fit_level(3, &grid.t_bar, degrees[2], &groups3, opts)?;
    let nt = l3.kv.control_count();

    let mut controls = vec![0.0; nu * nv * nt * dim];
    for (g, rows) in rows3.iter().enumerate() {
        let block = &l3.controls[g];
        for (slot, &r) in rows.iter().enumerate() {
            for c in 0..nt {
                for e in 0..dim {
                    controls[(r * nt + c) * dim + e] = block[(c, slot * dim + e)];
                }
            }
        }
    }

    let mut warnings = Vec::new();
    let mut method_counts = [[0usize; 3]; 3];
    for (lvl, level) in [&l1, &l2, &l3].into_iter().enumerate() {
        warnings.extend(level.warnings.iter().cloned());
        for m in &level.methods {
            method_counts[lvl][*m as usize] += 1;
        }
    }
    for w in &warnings {
        warn!("{w}");
    }
    Ok(VolumeFit {
        volume: BSplineVolume::new(l1.kv, l2.kv, l3.kv, dim, controls)?,
        warnings,
        method_counts,
    })
}
