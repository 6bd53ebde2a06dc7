//! Ordinary Kriging onto the merged parameter grid.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::geometry::{dist, Point2};
use crate::meshparam::ParamGrid;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariogramKind {
    #[default]
    Spherical,
    Exponential,
    Gaussian,
}

impl std::str::FromStr for VariogramKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spherical" => Ok(VariogramKind::Spherical),
            "exponential" => Ok(VariogramKind::Exponential),
            "gaussian" => Ok(VariogramKind::Gaussian),
            other => Err(Error::Config(format!("unknown variogram kind `{other}`"))),
        }
    }
}

/// Isotropic variogram `gamma(h) = nugget + (sill - nugget) * shape(h / range)`
/// for `h > 0`, and `gamma(0) = 0`. Exponential and Gaussian use the
/// practical range (95% of the partial sill is reached at `range`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariogramModel {
    pub kind: VariogramKind,
    pub nugget: f64,
    pub sill: f64,
    pub range: f64,
}

impl VariogramModel {
    pub fn new(kind: VariogramKind, nugget: f64, sill: f64, range: f64) -> Result<Self> {
        let m = VariogramModel {
            kind,
            nugget,
            sill,
            range,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if !(self.nugget >= 0.0 && self.sill > 0.0 && self.nugget <= self.sill && self.range > 0.0)
            || !self.range.is_finite()
            || !self.sill.is_finite()
        {
            return Err(Error::Numerical(format!("invalid variogram model {self:?}")));
        }
        Ok(())
    }

    fn shape(kind: VariogramKind, x: f64) -> f64 {
        match kind {
            VariogramKind::Spherical => {
                if x >= 1.0 {
                    1.0
                } else {
                    1.5 * x - 0.5 * x * x * x
                }
            }
            VariogramKind::Exponential => 1.0 - (-3.0 * x).exp(),
            VariogramKind::Gaussian => 1.0 - (-3.0 * x * x).exp(),
        }
    }

    pub fn gamma(&self, h: f64) -> f64 {
        if h == 0.0 {
            return 0.0;
        }
        self.nugget + (self.sill - self.nugget) * Self::shape(self.kind, h / self.range)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariogramBin {
    /// Mean pair distance in the bin.
    pub lag: f64,
    pub gamma: f64,
    pub count: usize,
}

/// Binned semivariogram `gamma(h) = sum (z_i - z_j)^2 / (2 N(h))` over
/// pairs with `0 < h <= max_lag`; empty bins are omitted.
pub fn empirical_semivariogram(
    positions: &[Point2],
    values: &[f64],
    n_bins: usize,
    max_lag: f64,
) -> Result<Vec<VariogramBin>> {
    if positions.len() != values.len() {
        return Err(Error::Size("positions and values differ in length".into()));
    }
    if positions.len() < 2 || n_bins == 0 || !(max_lag > 0.0) {
        return Err(Error::Size(format!(
            "semivariogram needs >= 2 points, >= 1 bin and a positive lag ({} points, {n_bins} bins)",
            positions.len()
        )));
    }
    if positions.iter().all(|p| *p == positions[0]) {
        return Err(Error::Geometry("all sample positions coincide".into()));
    }
    let width = max_lag / n_bins as f64;
    let mut sum_sq = vec![0.0; n_bins];
    let mut sum_h = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            let h = dist(positions[i], positions[j]);
            if h == 0.0 || h > max_lag {
                continue;
            }
            let b = ((h / width) as usize).min(n_bins - 1);
            let d = values[i] - values[j];
            sum_sq[b] += d * d;
            sum_h[b] += h;
            count[b] += 1;
        }
    }
    Ok((0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| VariogramBin {
            lag: sum_h[b] / count[b] as f64,
            gamma: sum_sq[b] / (2.0 * count[b] as f64),
            count: count[b],
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Fitted,
    /// No spatial structure was found; the model is a pure nugget.
    NuggetOnly,
    /// Too few bins to fit; a default model was used.
    Default,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariogramFit {
    pub model: VariogramModel,
    /// Pair-count weighted RMS misfit.
    pub residual: f64,
    pub status: FitStatus,
}

/// Weighted least-squares fit of nugget, sill and range (weights = pair
/// counts). Nugget and partial sill are solved in closed form for each
/// trial range; the range comes from a log grid followed by golden-section
/// refinement.
pub fn fit_variogram(bins: &[VariogramBin], kind: VariogramKind) -> Result<VariogramFit> {
    if bins.len() < 3 {
        return Err(Error::Size(format!(
            "variogram fit needs >= 3 non-empty bins, got {}",
            bins.len()
        )));
    }
    let max_lag = bins.iter().map(|b| b.lag).fold(0.0, f64::max);
    let total_w: f64 = bins.iter().map(|b| b.count as f64).sum();
    let mean_gamma = bins.iter().map(|b| b.count as f64 * b.gamma).sum::<f64>() / total_w;
    let max_gamma = bins.iter().map(|b| b.gamma).fold(0.0, f64::max);

    let objective = |range: f64| -> (f64, f64, f64) {
        let (nugget, psill) = best_linear_part(bins, kind, range);
        let sse: f64 = bins
            .iter()
            .map(|b| {
                let g = nugget + psill * VariogramModel::shape(kind, b.lag / range);
                b.count as f64 * (b.gamma - g).powi(2)
            })
            .sum();
        (sse, nugget, psill)
    };

    let (lo, hi) = (max_lag / 50.0, 4.0 * max_lag);
    let steps = 80;
    let grid: Vec<f64> = (0..=steps)
        .map(|s| lo * (hi / lo).powf(s as f64 / steps as f64))
        .collect();
    let best = (0..=steps)
        .min_by(|&a, &b| objective(grid[a]).0.total_cmp(&objective(grid[b]).0))
        .unwrap();
    let (mut a, mut b) = (grid[best.saturating_sub(1)].ln(), grid[(best + 1).min(steps)].ln());
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if objective(c.exp()).0 < objective(d.exp()).0 {
            b = d;
        } else {
            a = c;
        }
    }
    let range = (0.5 * (a + b)).exp();
    let (sse, nugget, psill) = objective(range);

    if !(psill > 1e-12 * max_gamma.max(f64::MIN_POSITIVE)) {
        let level = if mean_gamma > 0.0 { mean_gamma } else { 1.0 };
        let residual = (bins
            .iter()
            .map(|b| b.count as f64 * (b.gamma - mean_gamma).powi(2))
            .sum::<f64>()
            / total_w)
            .sqrt();
        return Ok(VariogramFit {
            model: VariogramModel::new(kind, level, level, max_lag.max(f64::MIN_POSITIVE))?,
            residual,
            status: FitStatus::NuggetOnly,
        });
    }
    Ok(VariogramFit {
        model: VariogramModel::new(kind, nugget, nugget + psill, range)?,
        residual: (sse / total_w).sqrt(),
        status: FitStatus::Fitted,
    })
}

/// Non-negative weighted LS for `(nugget, psill)` at a fixed range.
fn best_linear_part(bins: &[VariogramBin], kind: VariogramKind, range: f64) -> (f64, f64) {
    let (mut sw, mut sf, mut sff, mut sg, mut sfg) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for b in bins {
        let w = b.count as f64;
        let f = VariogramModel::shape(kind, b.lag / range);
        sw += w;
        sf += w * f;
        sff += w * f * f;
        sg += w * b.gamma;
        sfg += w * f * b.gamma;
    }
    let sse = |n: f64, p: f64| {
        bins.iter()
            .map(|b| {
                let g = n + p * VariogramModel::shape(kind, b.lag / range);
                b.count as f64 * (b.gamma - g).powi(2)
            })
            .sum::<f64>()
    };
    let mut candidates = vec![(0.0, if sff > 0.0 { (sfg / sff).max(0.0) } else { 0.0 }), (sg / sw, 0.0)];
    let det = sw * sff - sf * sf;
    if det.abs() > 1e-14 * sw * sff {
        let n = (sff * sg - sf * sfg) / det;
        let p = (sw * sfg - sf * sg) / det;
        if n >= 0.0 && p >= 0.0 {
            candidates.push((n, p));
        }
    }
    candidates
        .into_iter()
        .min_by(|a, b| sse(a.0, a.1).total_cmp(&sse(b.0, b.1)))
        .unwrap()
}

/// Spherical model spanning the data when no fit is possible.
pub fn default_model(values: &[f64], max_lag: f64) -> VariogramModel {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    VariogramModel {
        kind: VariogramKind::Spherical,
        nugget: 0.0,
        sill: if var > 0.0 { var } else { 1.0 },
        range: max_lag.max(f64::MIN_POSITIVE),
    }
}

/// Factored ordinary Kriging system for one set of samples.
pub struct OrdinaryKriging {
    positions: Vec<Point2>,
    values: Vec<f64>,
    model: VariogramModel,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl OrdinaryKriging {
    /// Builds and factors `[Gamma 1; 1^T 0]`. Duplicate positions are merged
    /// by averaging their values.
    pub fn new(positions: &[Point2], values: &[f64], model: VariogramModel) -> Result<Self> {
        model.validate()?;
        if positions.is_empty() || positions.len() != values.len() {
            return Err(Error::Size("Kriging needs matching, non-empty samples".into()));
        }
        let (positions, values) = dedup_average(positions, values);
        let n = positions.len();
        let mut a = DMatrix::<f64>::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in 0..i {
                let g = model.gamma(dist(positions[i], positions[j]));
                a[(i, j)] = g;
                a[(j, i)] = g;
            }
            a[(i, n)] = 1.0;
            a[(n, i)] = 1.0;
        }
        let lu = a.lu();
        if !lu.is_invertible() || crate::linalg::pivot_ratio(&lu) > 1e15 {
            return Err(Error::Numerical("singular Kriging system".into()));
        }
        Ok(OrdinaryKriging {
            positions,
            values,
            model,
            lu,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.positions.len()
    }

    /// Kriging weights `lambda` (summing to one) and the multiplier `mu`.
    pub fn weights(&self, query: Point2) -> Result<(Vec<f64>, f64)> {
        let n = self.positions.len();
        let mut rhs = DVector::<f64>::zeros(n + 1);
        for (i, p) in self.positions.iter().enumerate() {
            rhs[i] = self.model.gamma(dist(*p, query));
        }
        rhs[n] = 1.0;
        let x = self
            .lu
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular Kriging system".into()))?;
        Ok((x.rows(0, n).iter().copied().collect(), x[n]))
    }

    pub fn predict(&self, query: Point2) -> Result<f64> {
        let (w, _) = self.weights(query)?;
        Ok(w.iter().zip(&self.values).map(|(w, z)| w * z).sum())
    }
}

fn dedup_average(positions: &[Point2], values: &[f64]) -> (Vec<Point2>, Vec<f64>) {
    let mut order: Vec<usize> = (0..positions.len()).collect();
    order.sort_by(|&a, &b| {
        positions[a][0]
            .total_cmp(&positions[b][0])
            .then(positions[a][1].total_cmp(&positions[b][1]))
            .then(a.cmp(&b))
    });
    let mut out_p: Vec<Point2> = Vec::with_capacity(positions.len());
    let mut sums: Vec<(f64, usize)> = Vec::with_capacity(positions.len());
    for i in order {
        if out_p.last() == Some(&positions[i]) {
            let s = sums.last_mut().unwrap();
            s.0 += values[i];
            s.1 += 1;
        } else {
            out_p.push(positions[i]);
            sums.push((values[i], 1));
        }
    }
    let out_v = sums.into_iter().map(|(s, c)| s / c as f64).collect();
    (out_p, out_v)
}

/// Single ordinary Kriging prediction.
pub fn krige(positions: &[Point2], values: &[f64], model: &VariogramModel, query: Point2) -> Result<f64> {
    OrdinaryKriging::new(positions, values, *model)?.predict(query)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KrigingSpace {
    /// Krige in the `(u, v)` parameter domain.
    #[default]
    Param,
    /// Krige in input coordinates at each grid cell's pre-image.
    Geo,
}

impl std::str::FromStr for KrigingSpace {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "param" => Ok(KrigingSpace::Param),
            "geo" => Ok(KrigingSpace::Geo),
            other => Err(Error::Config(format!("unknown kriging space `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KrigingOptions {
    pub kind: VariogramKind,
    pub n_bins: usize,
    /// `None` means half the diagonal of the sample domain.
    pub max_lag: Option<f64>,
    pub exec: Execution,
}

impl Default for KrigingOptions {
    fn default() -> Self {
        KrigingOptions {
            kind: VariogramKind::Spherical,
            n_bins: 12,
            max_lag: None,
            exec: Execution::Parallel,
        }
    }
}

/// Values `Q[i][j][k]` on `U_bar x V_bar x T_bar` plus the station mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GriddedDataset {
    pub u_bar: Vec<f64>,
    pub v_bar: Vec<f64>,
    pub t_bar: Vec<f64>,
    pub dim: usize,
    /// Row-major over `(i, j, k)`, `dim` values per entry.
    pub values: Vec<f64>,
    /// Row-major over `(i, j)`.
    pub key_mask: Vec<bool>,
    #[serde(default)]
    pub variograms: Vec<VariogramFit>,
}

impl GriddedDataset {
    pub fn shape(&self) -> [usize; 3] {
        [self.u_bar.len(), self.v_bar.len(), self.t_bar.len()]
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        ((i * self.v_bar.len() + j) * self.t_bar.len() + k) * self.dim
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> &[f64] {
        let at = self.index(i, j, k);
        &self.values[at..at + self.dim]
    }

    pub fn is_key(&self, i: usize, j: usize) -> bool {
        self.key_mask[i * self.v_bar.len() + j]
    }

    pub fn validate(&self) -> Result<()> {
        let [nu, nv, nt] = self.shape();
        if self.dim == 0 || self.values.len() != nu * nv * nt * self.dim || self.key_mask.len() != nu * nv {
            return Err(Error::Size("gridded dataset shape mismatch".into()));
        }
        for axis in [&self.u_bar, &self.v_bar, &self.t_bar] {
            if axis.is_empty()
                || axis[0] != 0.0
                || axis[axis.len() - 1] != 1.0
                || axis.windows(2).any(|w| w[1] <= w[0])
            {
                return Err(Error::Size(
                    "grid parameters must increase strictly from 0 to 1".into(),
                ));
            }
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite grid value".into()));
        }
        Ok(())
    }
}

/// Uniform time parameters `k / (K - 1)`.
pub fn uniform_times(steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..steps)
            .map(|k| if k + 1 == steps { 1.0 } else { k as f64 / (steps - 1) as f64 })
            .collect(),
    }
}

/// Kriging grid in parameter space: samples sit at the station parameters.
pub fn build_grid(
    pg: &ParamGrid,
    readings: &[Vec<f64>],
    t_bar: &[f64],
    opts: &KrigingOptions,
) -> Result<GriddedDataset> {
    let station_params = pg.station_params();
    build_grid_with(pg, &station_params, |uv| uv, readings, t_bar, opts)
}

/// General grid builder: `sample_positions[s]` is where station `s` sits in
/// the Kriging space and `cell_position` maps a grid parameter pair into
/// that space. Key cells copy the readings verbatim.
pub fn build_grid_with<F>(
    pg: &ParamGrid,
    sample_positions: &[Point2],
    cell_position: F,
    readings: &[Vec<f64>],
    t_bar: &[f64],
    opts: &KrigingOptions,
) -> Result<GriddedDataset>
where
    F: Fn(Point2) -> Point2 + Sync,
{
    let ns = pg.station_cells.len();
    if readings.len() != ns || sample_positions.len() != ns {
        return Err(Error::Ingestion(format!(
            "{} stations in the grid, {} reading series, {} positions",
            ns,
            readings.len(),
            sample_positions.len()
        )));
    }
    if ns == 0 {
        return Err(Error::Ingestion("no stations".into()));
    }
    let nt = t_bar.len();
    for (s, series) in readings.iter().enumerate() {
        if series.len() != nt {
            return Err(Error::Ingestion(format!(
                "station {s} has {} readings, expected {nt}",
                series.len()
            )));
        }
        if let Some(k) = series.iter().position(|v| !v.is_finite()) {
            return Err(Error::Ingestion(format!("station {s} reading {k} is not finite")));
        }
    }
    let (nu, nv) = (pg.u_bar.len(), pg.v_bar.len());
    let mut key_of = vec![usize::MAX; nu * nv];
    for (s, &(i, j)) in pg.station_cells.iter().enumerate() {
        key_of[i * nv + j] = s;
    }
    let cells: Vec<(usize, Point2)> = (0..nu * nv)
        .filter(|&c| key_of[c] == usize::MAX)
        .map(|c| (c, cell_position([pg.u_bar[c / nv], pg.v_bar[c % nv]])))
        .collect();

    let max_lag = opts.max_lag.unwrap_or_else(|| {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in sample_positions.iter().chain(cells.iter().map(|c| &c.1)) {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        0.5 * dist(lo, hi)
    });

    let per_step = exec::try_map_indexed(opts.exec, nt, |k| -> Result<(Vec<f64>, VariogramFit)> {
        let z: Vec<f64> = readings.iter().map(|r| r[k]).collect();
        let fit = step_variogram(sample_positions, &z, opts.n_bins, max_lag, opts.kind)?;
        if fit.status != FitStatus::Fitted {
            warn!("time step {k}: variogram fell back to {:?}", fit.status);
        }
        let ok = OrdinaryKriging::new(sample_positions, &z, fit.model)?;
        let mut out = vec![0.0; nu * nv];
        for &(c, q) in &cells {
            out[c] = ok.predict(q)?;
        }
        for (c, &s) in key_of.iter().enumerate() {
            if s != usize::MAX {
                out[c] = z[s];
            }
        }
        Ok((out, fit))
    })?;

    let mut values = vec![0.0; nu * nv * nt];
    for (k, (step, _)) in per_step.iter().enumerate() {
        for (c, &v) in step.iter().enumerate() {
            values[c * nt + k] = v;
        }
    }
    let grid = GriddedDataset {
        u_bar: pg.u_bar.clone(),
        v_bar: pg.v_bar.clone(),
        t_bar: t_bar.to_vec(),
        dim: 1,
        values,
        key_mask: key_of.iter().map(|&s| s != usize::MAX).collect(),
        variograms: per_step.into_iter().map(|(_, f)| f).collect(),
    };
    grid.validate()?;
    Ok(grid)
}

fn step_variogram(
    positions: &[Point2],
    z: &[f64],
    n_bins: usize,
    max_lag: f64,
    kind: VariogramKind,
) -> Result<VariogramFit> {
    let fallback = || VariogramFit {
        model: VariogramModel {
            kind,
            ..default_model(z, max_lag)
        },
        residual: f64::NAN,
        status: FitStatus::Default,
    };
    if positions.len() < 2 {
        return Ok(fallback());
    }
    let bins = match empirical_semivariogram(positions, z, n_bins, max_lag) {
        Ok(b) => b,
        Err(Error::Geometry(_)) => return Ok(fallback()),
        Err(e) => return Err(e),
    };
    match fit_variogram(&bins, kind) {
        Ok(fit) => Ok(fit),
        Err(Error::Size(_)) => Ok(fallback()),
        Err(e) => Err(e),
    }
}
