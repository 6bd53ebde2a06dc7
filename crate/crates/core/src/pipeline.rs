//! Batch orchestration: CSV ingestion, the border → mesh → merge → Kriging
//! → lofting chain, persistence and plot-ready extraction.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::border::{self, Polyline};
use crate::bspline::{BSplineVolume, KnotVector};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{self, Containment, Point2};
use crate::kpi::{self, KpiOptions};
use crate::kriging::{self, GriddedDataset, KrigingOptions, KrigingSpace, VariogramKind};
use crate::meshparam::{self, ParamPreimage, PerturbationOptions};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub degrees: [usize; 3],
    /// Border vertex target as a fraction of the station count.
    pub border_ratio: f64,
    pub merge_growth: f64,
    pub merge_max_iters: usize,
    /// `None` means 70% of the station count.
    pub merge_cap: Option<usize>,
    pub variogram: VariogramKind,
    pub variogram_bins: usize,
    pub variogram_max_lag: Option<f64>,
    pub kriging_space: KrigingSpace,
    pub control_ratio: f64,
    pub key_tolerance: f64,
    pub min_span: f64,
    pub condition_warning: f64,
    pub execution: Execution,
    pub stations: Option<PathBuf>,
    pub readings: Option<PathBuf>,
    pub border: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let kpi = KpiOptions::default();
        let kr = KrigingOptions::default();
        PipelineConfig {
            degrees: [3, 3, 3],
            border_ratio: 0.5,
            merge_growth: 2.0,
            merge_max_iters: 10,
            merge_cap: None,
            variogram: kr.kind,
            variogram_bins: kr.n_bins,
            variogram_max_lag: None,
            kriging_space: KrigingSpace::Param,
            control_ratio: kpi.control_ratio,
            key_tolerance: kpi.key_tol,
            min_span: kpi.min_span,
            condition_warning: kpi.condition_warn,
            execution: Execution::Parallel,
            stations: None,
            readings: None,
            border: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: cannot parse `{value}` for `{key}`")))
}

impl PipelineConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unknown keys and
    /// repeated keys are rejected. Relative paths are kept as written.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected `key = value`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {line}: `{key}` given twice")));
            }
            match key {
                "degree_u" => cfg.degrees[0] = parse_value(key, value, line)?,
                "degree_v" => cfg.degrees[1] = parse_value(key, value, line)?,
                "degree_t" => cfg.degrees[2] = parse_value(key, value, line)?,
                "border_ratio" => cfg.border_ratio = parse_value(key, value, line)?,
                "merge_growth" => cfg.merge_growth = parse_value(key, value, line)?,
                "merge_max_iters" => cfg.merge_max_iters = parse_value(key, value, line)?,
                "merge_cap" => cfg.merge_cap = Some(parse_value(key, value, line)?),
                "variogram" => cfg.variogram = value.parse()?,
                "variogram_bins" => cfg.variogram_bins = parse_value(key, value, line)?,
                "variogram_max_lag" => cfg.variogram_max_lag = Some(parse_value(key, value, line)?),
                "kriging_space" => cfg.kriging_space = value.parse()?,
                "control_ratio" => cfg.control_ratio = parse_value(key, value, line)?,
                "key_tolerance" => cfg.key_tolerance = parse_value(key, value, line)?,
                "min_span" => cfg.min_span = parse_value(key, value, line)?,
                "condition_warning" => cfg.condition_warning = parse_value(key, value, line)?,
                "execution" => {
                    cfg.execution = match value {
                        "parallel" => Execution::Parallel,
                        "sequential" => Execution::Sequential,
                        other => {
                            return Err(Error::Config(format!(
                                "line {line}: unknown execution `{other}`"
                            )))
                        }
                    }
                }
                "stations" => cfg.stations = Some(PathBuf::from(value)),
                "readings" => cfg.readings = Some(PathBuf::from(value)),
                "border" => cfg.border = Some(PathBuf::from(value)),
                "output_dir" => cfg.output_dir = PathBuf::from(value),
                other => return Err(Error::Config(format!("line {line}: unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside resolve against its
    /// directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.stations, &mut cfg.readings, &mut cfg.border].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (axis, &p) in ["u", "v", "t"].iter().zip(&self.degrees) {
            if !(1..=7).contains(&p) {
                return Err(Error::Config(format!("degree_{axis} = {p} must lie in 1..=7")));
            }
        }
        if !(self.border_ratio > 0.0 && self.border_ratio <= 10.0) {
            return Err(Error::Config(format!("border_ratio {} must lie in (0, 10]", self.border_ratio)));
        }
        if !(self.merge_growth > 1.0 && self.merge_growth <= 100.0) {
            return Err(Error::Config(format!("merge_growth {} must lie in (1, 100]", self.merge_growth)));
        }
        if !(1..=1000).contains(&self.merge_max_iters) {
            return Err(Error::Config("merge_max_iters must lie in 1..=1000".into()));
        }
        if self.merge_cap == Some(0) {
            return Err(Error::Config("merge_cap must be positive".into()));
        }
        if !(1..=1000).contains(&self.variogram_bins) {
            return Err(Error::Config("variogram_bins must lie in 1..=1000".into()));
        }
        if let Some(l) = self.variogram_max_lag {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("variogram_max_lag {l} must be positive")));
            }
        }
        self.kpi_options().validate()
    }

    pub fn kpi_options(&self) -> KpiOptions {
        KpiOptions {
            control_ratio: self.control_ratio,
            key_tol: self.key_tolerance,
            min_span: self.min_span,
            condition_warn: self.condition_warning,
            exec: self.execution,
        }
    }

    pub fn kriging_options(&self) -> KrigingOptions {
        KrigingOptions {
            kind: self.variogram,
            n_bins: self.variogram_bins,
            max_lag: self.variogram_max_lag,
            exec: self.execution,
        }
    }

    fn input_path<'a>(&'a self, p: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        p.as_deref()
            .ok_or_else(|| Error::Config(format!("no `{name}` path configured")))
    }

    /// Ingests the three configured input files.
    pub fn ingest(&self) -> Result<Dataset> {
        ingest(
            self.input_path(&self.stations, "stations")?,
            self.input_path(&self.readings, "readings")?,
            self.input_path(&self.border, "border")?,
        )
    }
}

/// Validated inputs: station positions, a complete station x step reading
/// matrix and the border polygon.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub station_ids: Vec<String>,
    pub stations: Vec<Point2>,
    /// `readings[s][k]` for station `s` at step `k`.
    pub readings: Vec<Vec<f64>>,
    pub border: Vec<Point2>,
}

impl Dataset {
    pub fn time_steps(&self) -> usize {
        self.readings.first().map_or(0, Vec::len)
    }
}

#[derive(Deserialize)]
struct StationRow {
    id: String,
    x: f64,
    y: f64,
}

#[derive(Deserialize)]
struct ReadingRow {
    station_id: String,
    step_index: usize,
    value: f64,
}

#[derive(Deserialize)]
struct BorderRow {
    x: f64,
    y: f64,
}

/// Rows of a headed CSV file with their 1-based line numbers.
fn read_csv<T: serde::de::DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<(u64, T)>> {
    let name = path.display();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Ingestion(format!("{name}: {e}")))?;
    let found = rdr
        .headers()
        .map_err(|e| Error::Ingestion(format!("{name}: {e}")))?
        .clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::Ingestion(format!(
            "{name}: expected header `{}`, found `{}`",
            header.join(","),
            found.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Ingestion(format!("{name} row {line}: {e}"))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .deserialize(Some(&found))
            .map_err(|e| Error::Ingestion(format!("{name} row {line}: {e}")))?;
        out.push((line, row));
    }
    Ok(out)
}

/// Reads and cross-checks the station, reading and border files.
pub fn ingest(stations_path: &Path, readings_path: &Path, border_path: &Path) -> Result<Dataset> {
    let station_rows: Vec<(u64, StationRow)> = read_csv(stations_path, &["id", "x", "y"])?;
    let sname = stations_path.display();
    if station_rows.is_empty() {
        return Err(Error::Ingestion(format!("{sname}: no stations")));
    }
    let mut index = HashMap::new();
    let mut station_ids = Vec::new();
    let mut stations = Vec::new();
    let mut station_lines = Vec::new();
    for (line, r) in station_rows {
        if !(r.x.is_finite() && r.y.is_finite()) {
            return Err(Error::Ingestion(format!("{sname} row {line}: non-finite coordinate")));
        }
        if index.insert(r.id.clone(), stations.len()).is_some() {
            return Err(Error::Ingestion(format!("{sname} row {line}: duplicate station id `{}`", r.id)));
        }
        station_ids.push(r.id);
        stations.push([r.x, r.y]);
        station_lines.push(line);
    }

    let rname = readings_path.display();
    let reading_rows: Vec<(u64, ReadingRow)> =
        read_csv(readings_path, &["station_id", "step_index", "value"])?;
    let steps = reading_rows.iter().map(|(_, r)| r.step_index + 1).max().unwrap_or(0);
    if steps == 0 {
        return Err(Error::Ingestion(format!("{rname}: no readings")));
    }
    let mut readings = vec![vec![f64::NAN; steps]; stations.len()];
    let mut filled = vec![vec![false; steps]; stations.len()];
    for (line, r) in reading_rows {
        let s = *index.get(&r.station_id).ok_or_else(|| {
            Error::Ingestion(format!("{rname} row {line}: unknown station id `{}`", r.station_id))
        })?;
        if !r.value.is_finite() {
            return Err(Error::Ingestion(format!("{rname} row {line}: non-finite value")));
        }
        if std::mem::replace(&mut filled[s][r.step_index], true) {
            return Err(Error::Ingestion(format!(
                "{rname} row {line}: duplicate reading for station `{}` step {}",
                r.station_id, r.step_index
            )));
        }
        readings[s][r.step_index] = r.value;
    }
    for (s, row) in filled.iter().enumerate() {
        if let Some(k) = row.iter().position(|&f| !f) {
            return Err(Error::Ingestion(format!(
                "{rname}: station `{}` has no reading for step {k}",
                station_ids[s]
            )));
        }
    }

    let bname = border_path.display();
    let mut border: Vec<Point2> = read_csv::<BorderRow>(border_path, &["x", "y"])?
        .into_iter()
        .map(|(_, r)| [r.x, r.y])
        .collect();
    if border.len() > 3 && border.first() == border.last() {
        border.pop();
    }
    if border.len() < 3 {
        return Err(Error::Ingestion(format!("{bname}: a border needs at least 3 vertices")));
    }
    if border.iter().flatten().any(|c| !c.is_finite()) || !geometry::is_simple_polygon(&border) {
        return Err(Error::Ingestion(format!("{bname}: border is not a simple polygon")));
    }
    for (s, &p) in stations.iter().enumerate() {
        if geometry::locate_in_polygon(p, &border) != Containment::Inside {
            return Err(Error::Ingestion(format!(
                "{sname} row {}: station `{}` is not strictly inside the border",
                station_lines[s], station_ids[s]
            )));
        }
    }
    Ok(Dataset {
        station_ids,
        stations,
        readings,
        border,
    })
}

/// Summary of one pipeline run. Residuals are recomputed from the volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub stations: usize,
    pub time_steps: usize,
    pub border_vertices_input: usize,
    pub border_vertices: usize,
    pub mesh_vertices: usize,
    pub mesh_faces: usize,
    pub params_initial: [usize; 2],
    pub params_merged: [usize; 2],
    pub merge_iterations: usize,
    pub grid_dims: [usize; 3],
    pub control_dims: [usize; 3],
    pub max_residual: f64,
    pub mean_residual: f64,
    /// Per level `[kkt, null_space, tie_break]` row counts.
    pub solve_methods: [[usize; 3]; 3],
    pub variogram_fallbacks: usize,
    pub warnings: Vec<String>,
    /// Wall-clock seconds per stage; not persisted so reports stay
    /// reproducible.
    #[serde(skip)]
    pub timings: Vec<(String, f64)>,
}

/// Grid, station cells and ids persisted next to the volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDocument {
    pub format_version: u32,
    pub station_ids: Vec<String>,
    pub grid: GriddedDataset,
    pub station_cells: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct FitOutput {
    pub volume: BSplineVolume,
    pub grid: GridDocument,
    pub report: RunReport,
}

fn stage<T>(name: &'static str, timings: &mut Vec<(String, f64)>, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| e.in_stage(name));
    let secs = start.elapsed().as_secs_f64();
    info!("stage {name}: {secs:.3}s");
    timings.push((name.to_string(), secs));
    out
}

/// Runs every stage and returns the volume with its grid and report.
pub fn run_pipeline(cfg: &PipelineConfig, ds: &Dataset) -> Result<FitOutput> {
    cfg.validate()?;
    let n = ds.stations.len();
    let steps = ds.time_steps();
    if steps < cfg.degrees[2] + 1 {
        return Err(Error::Config(format!(
            "degree_t = {} needs at least {} time steps, got {steps}",
            cfg.degrees[2],
            cfg.degrees[2] + 1
        )));
    }
    let mut timings = Vec::new();
    let mut warnings = Vec::new();

    let border = stage("border", &mut timings, || {
        let original = Polyline::closed(ds.border.clone())?;
        let target = border::default_target(n, cfg.border_ratio);
        let idx = border::simplify_border_indices(&original, target)?;
        let idx = border::enclose_points(&original, &idx, &ds.stations)?;
        let mut pts: Vec<Point2> = idx.iter().map(|&i| original.points()[i]).collect();
        if pts.len() == 3 {
            split_longest_edge(&mut pts);
        }
        Polyline::closed(pts)
    })?;
    let mesh = stage("mesh", &mut timings, || {
        meshparam::constrained_delaunay(&ds.stations, &border)
    })?;
    let initial = stage("parametrize", &mut timings, || meshparam::mean_value_param(&mesh))?;
    let pert = stage("merge", &mut timings, || {
        let mut opts = PerturbationOptions::for_stations(n);
        opts.growth = cfg.merge_growth;
        opts.max_iters = cfg.merge_max_iters;
        if let Some(cap) = cfg.merge_cap {
            opts.cap = cap;
        }
        meshparam::perturbation_loop(&initial, &mesh, &opts)
    })?;
    let pg = &pert.grid;
    for (axis, (len, p)) in [(pg.u_bar.len(), cfg.degrees[0]), (pg.v_bar.len(), cfg.degrees[1])]
        .into_iter()
        .enumerate()
    {
        if len < p + 1 {
            return Err(Error::Config(format!(
                "degree {p} along axis {axis} needs at least {} distinct parameters, the merged grid has {len}",
                p + 1
            )));
        }
    }

    let t_bar = kriging::uniform_times(steps);
    let grid = stage("kriging", &mut timings, || {
        let kopts = cfg.kriging_options();
        match cfg.kriging_space {
            KrigingSpace::Param => kriging::build_grid(pg, &ds.readings, &t_bar, &kopts),
            KrigingSpace::Geo => {
                let pre = ParamPreimage::new(&mesh, &pert.params);
                kriging::build_grid_with(pg, &ds.stations, |uv| pre.locate(uv), &ds.readings, &t_bar, &kopts)
            }
        }
    })?;
    let variogram_fallbacks = grid
        .variograms
        .iter()
        .filter(|f| f.status != kriging::FitStatus::Fitted)
        .count();
    if variogram_fallbacks > 0 {
        warnings.push(format!("{variogram_fallbacks} time steps used a fallback variogram"));
    }
    let fit = stage("lofting", &mut timings, || kpi::fit_volume(&grid, cfg.degrees, &cfg.kpi_options()))?;
    warnings.extend(fit.warnings.iter().cloned());

    let doc = GridDocument {
        format_version: FORMAT_VERSION,
        station_ids: ds.station_ids.clone(),
        grid,
        station_cells: pg.station_cells.clone(),
    };
    let (max_residual, mean_residual) = station_residuals(&fit.volume, &doc)?;
    let report = RunReport {
        format_version: FORMAT_VERSION,
        stations: n,
        time_steps: steps,
        border_vertices_input: ds.border.len(),
        border_vertices: border.len(),
        mesh_vertices: mesh.vertex_count(),
        mesh_faces: mesh.faces().len(),
        params_initial: [pert.initial_counts.0, pert.initial_counts.1],
        params_merged: [pg.u_bar.len(), pg.v_bar.len()],
        merge_iterations: pert.history.len(),
        grid_dims: doc.grid.shape(),
        control_dims: fit.volume.dims(),
        max_residual,
        mean_residual,
        solve_methods: fit.method_counts,
        variogram_fallbacks,
        warnings,
        timings,
    };
    Ok(FitOutput {
        volume: fit.volume,
        grid: doc,
        report,
    })
}

/// The parametrization needs four boundary vertices for the square's corners.
fn split_longest_edge(pts: &mut Vec<Point2>) {
    let n = pts.len();
    let k = (0..n)
        .max_by(|&a, &b| {
            let la = geometry::dist(pts[a], pts[(a + 1) % n]);
            let lb = geometry::dist(pts[b], pts[(b + 1) % n]);
            la.total_cmp(&lb)
        })
        .unwrap();
    let (a, b) = (pts[k], pts[(k + 1) % n]);
    pts.insert(k + 1, [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
}

/// Max and mean absolute deviation of the volume from the station readings
/// at every grid time.
pub fn station_residuals(vol: &BSplineVolume, doc: &GridDocument) -> Result<(f64, f64)> {
    let g = &doc.grid;
    let (mut max, mut sum, mut count) = (0.0f64, 0.0, 0usize);
    for &(i, j) in &doc.station_cells {
        for (k, &t) in g.t_bar.iter().enumerate() {
            let got = vol.eval(g.u_bar[i], g.v_bar[j], t)?;
            for (a, b) in got.iter().zip(g.value(i, j, k)) {
                let r = (a - b).abs();
                max = max.max(r);
                sum += r;
                count += 1;
            }
        }
    }
    Ok((max, if count == 0 { 0.0 } else { sum / count as f64 }))
}

/// Writes every float with 17 significant digits.
struct SeventeenDigits;

impl serde_json::ser::Formatter for SeventeenDigits {
    fn write_f64<W: ?Sized + std::io::Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        write!(w, "{value:.16e}")
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SeventeenDigits);
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct VolumeDocument {
    format_version: u32,
    degrees: [usize; 3],
    dims: [usize; 3],
    value_dim: usize,
    knots_u: Vec<f64>,
    knots_v: Vec<f64>,
    knots_t: Vec<f64>,
    /// Row-major over `(i, j, k)`, one array per control point.
    control_points: Vec<Vec<f64>>,
}

pub fn volume_to_json(vol: &BSplineVolume) -> Result<Vec<u8>> {
    let [ku, kv, kt] = vol.knot_vectors();
    let doc = VolumeDocument {
        format_version: FORMAT_VERSION,
        degrees: vol.degrees(),
        dims: vol.dims(),
        value_dim: vol.dim(),
        knots_u: ku.knots().to_vec(),
        knots_v: kv.knots().to_vec(),
        knots_t: kt.knots().to_vec(),
        control_points: vol.controls().chunks(vol.dim()).map(<[f64]>::to_vec).collect(),
    };
    to_json(&doc)
}

pub fn volume_from_json(bytes: &[u8]) -> Result<BSplineVolume> {
    let doc: VolumeDocument = serde_json::from_slice(bytes)?;
    if doc.format_version != FORMAT_VERSION {
        return Err(Error::Input(format!("unsupported volume format {}", doc.format_version)));
    }
    let ku = KnotVector::new(doc.degrees[0], doc.knots_u)?;
    let kv = KnotVector::new(doc.degrees[1], doc.knots_v)?;
    let kt = KnotVector::new(doc.degrees[2], doc.knots_t)?;
    if doc.control_points.iter().any(|c| c.len() != doc.value_dim) {
        return Err(Error::Input("control point with the wrong value dimension".into()));
    }
    let vol = BSplineVolume::new(ku, kv, kt, doc.value_dim, doc.control_points.concat())?;
    if vol.dims() != doc.dims {
        return Err(Error::Input(format!(
            "volume dims {:?} disagree with the knot vectors ({:?})",
            doc.dims,
            vol.dims()
        )));
    }
    Ok(vol)
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn save_volume(path: &Path, vol: &BSplineVolume) -> Result<()> {
    write_atomic(path, &volume_to_json(vol)?)
}

pub fn load_volume(path: &Path) -> Result<BSplineVolume> {
    volume_from_json(&fs::read(path)?)
}

pub fn save_grid(path: &Path, doc: &GridDocument) -> Result<()> {
    write_atomic(path, &to_json(doc)?)
}

pub fn load_grid(path: &Path) -> Result<GridDocument> {
    let doc: GridDocument = serde_json::from_slice(&fs::read(path)?)?;
    if doc.format_version != FORMAT_VERSION {
        return Err(Error::Input(format!("unsupported grid format {}", doc.format_version)));
    }
    doc.grid.validate()?;
    if doc.station_cells.len() != doc.station_ids.len() {
        return Err(Error::Input("station ids and cells differ in count".into()));
    }
    Ok(doc)
}

pub fn save_report(path: &Path, report: &RunReport) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(report)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn load_report(path: &Path) -> Result<RunReport> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub const VOLUME_FILE: &str = "volume.json";
pub const GRID_FILE: &str = "grid.json";
pub const REPORT_FILE: &str = "report.json";

/// Persists volume, grid and report into `dir`.
pub fn save_outputs(dir: &Path, out: &FitOutput) -> Result<()> {
    save_volume(&dir.join(VOLUME_FILE), &out.volume)?;
    save_grid(&dir.join(GRID_FILE), &out.grid)?;
    save_report(&dir.join(REPORT_FILE), &out.report)
}

/// Reloads the volume and grid from `dir` and recomputes the residuals.
pub fn recompute_report(dir: &Path) -> Result<(f64, f64)> {
    let vol = load_volume(&dir.join(VOLUME_FILE))?;
    let doc = load_grid(&dir.join(GRID_FILE))?;
    station_residuals(&vol, &doc)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceSample {
    pub u: f64,
    pub v: f64,
    pub value: Vec<f64>,
}

fn uniform_axis(res: usize) -> Vec<f64> {
    kriging::uniform_times(res)
}

/// `res_u x res_v` uniform evaluation of the time slice at `t`.
pub fn sample_surface(vol: &BSplineVolume, t: f64, res_u: usize, res_v: usize) -> Result<Vec<SurfaceSample>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain { value: t });
    }
    if res_u == 0 || res_v == 0 {
        return Err(Error::Input("sampling resolution must be positive".into()));
    }
    let (us, vs) = (uniform_axis(res_u), uniform_axis(res_v));
    let mut out = Vec::with_capacity(res_u * res_v);
    for &u in &us {
        for &v in &vs {
            out.push(SurfaceSample {
                u,
                v,
                value: vol.eval(u, v, t)?,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IsoMarker {
    pub v: f64,
    pub value: Vec<f64>,
    /// Station reading rather than a Kriging estimate.
    pub key: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IsoCurve {
    pub u: f64,
    pub t: f64,
    /// `(v, value)` samples along the curve.
    pub points: Vec<(f64, Vec<f64>)>,
    /// Grid values of the nearest grid row at the nearest grid time.
    pub markers: Vec<IsoMarker>,
}

fn nearest(axis: &[f64], x: f64) -> usize {
    (0..axis.len())
        .min_by(|&a, &b| (axis[a] - x).abs().total_cmp(&(axis[b] - x).abs()))
        .unwrap_or(0)
}

/// Samples `v -> M(u, v, t)` and collects the grid row's points for overlay.
pub fn extract_iso_u_curve(vol: &BSplineVolume, grid: &GriddedDataset, u: f64, t: f64, res: usize) -> Result<IsoCurve> {
    for x in [u, t] {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain { value: x });
        }
    }
    if res == 0 {
        return Err(Error::Input("curve resolution must be positive".into()));
    }
    let points = uniform_axis(res)
        .into_iter()
        .map(|v| Ok((v, vol.eval(u, v, t)?)))
        .collect::<Result<Vec<_>>>()?;
    let (i, k) = (nearest(&grid.u_bar, u), nearest(&grid.t_bar, t));
    let markers = (0..grid.v_bar.len())
        .map(|j| IsoMarker {
            v: grid.v_bar[j],
            value: grid.value(i, j, k).to_vec(),
            key: grid.is_key(i, j),
        })
        .collect();
    Ok(IsoCurve { u, t, points, markers })
}

fn fmt_f64(x: &f64) -> String {
    format!("{x:.16e}")
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(row).map_err(fail)?;
    }
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

fn value_header(prefix: &[&str], dim: usize) -> Vec<String> {
    let mut h: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    if dim == 1 {
        h.push("value".into());
    } else {
        h.extend((0..dim).map(|c| format!("value_{c}")));
    }
    h
}

/// CSV with columns `u,v,value`.
pub fn write_surface_csv(path: &Path, samples: &[SurfaceSample]) -> Result<()> {
    let dim = samples.first().map_or(1, |s| s.value.len());
    let rows = samples
        .iter()
        .map(|s| [s.u, s.v].iter().chain(&s.value).map(fmt_f64).collect());
    write_atomic(path, &csv_bytes(&value_header(&["u", "v"], dim), rows)?)
}

/// Two CSV files: the curve (`v,value`) and the markers (`v,value,key`).
pub fn write_iso_csv(curve_path: &Path, markers_path: &Path, iso: &IsoCurve) -> Result<()> {
    let dim = iso.points.first().map_or(1, |p| p.1.len());
    let rows = iso
        .points
        .iter()
        .map(|(v, val)| std::iter::once(v).chain(val).map(fmt_f64).collect());
    write_atomic(curve_path, &csv_bytes(&value_header(&["v"], dim), rows)?)?;
    let mut header = value_header(&["v"], dim);
    header.push("key".into());
    let rows = iso
        .markers
        .iter()
        .map(|m| {
            let mut r: Vec<String> = std::iter::once(&m.v).chain(&m.value).map(fmt_f64).collect();
            r.push(if m.key { "1" } else { "0" }.into());
            r
        });
    write_atomic(markers_path, &csv_bytes(&header, rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let cfg = PipelineConfig::parse("# comment\ndegree_u = 2\nvariogram = gaussian # trailing\n\nexecution=sequential\n").unwrap();
        assert_eq!(cfg.degrees, [2, 3, 3]);
        assert_eq!(cfg.variogram, VariogramKind::Gaussian);
        assert_eq!(cfg.execution, Execution::Sequential);
        assert!(matches!(PipelineConfig::parse("degree_u = 0"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::parse("colour = red"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::parse("degree_u = 2\ndegree_u = 3"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::parse("degree_u"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::parse("merge_growth = 1"), Err(Error::Config(_))));
    }

    #[test]
    fn volume_json_round_trip_is_exact() {
        let ku = KnotVector::new(2, vec![0., 0., 0., 0.3, 1., 1., 1.]).unwrap();
        let kv = KnotVector::uniform(1, 3).unwrap();
        let kt = KnotVector::uniform(1, 2).unwrap();
        let n = 4 * 3 * 2;
        let controls: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).sin() / 3.0 + 1e-300 * i as f64).collect();
        let vol = BSplineVolume::new(ku, kv, kt, 1, controls).unwrap();
        let bytes = volume_to_json(&vol).unwrap();
        let back = volume_from_json(&bytes).unwrap();
        assert_eq!(back, vol);
        assert_eq!(volume_to_json(&back).unwrap(), bytes);
    }

    #[test]
    fn surface_sampling_of_constant_volume() {
        let kv = KnotVector::uniform(2, 4).unwrap();
        let vol = BSplineVolume::new(kv.clone(), kv.clone(), kv, 1, vec![1.25; 64]).unwrap();
        let s = sample_surface(&vol, 0.4, 5, 3).unwrap();
        assert_eq!(s.len(), 15);
        assert!(s.iter().all(|p| (p.value[0] - 1.25).abs() < 1e-14));
        assert!(matches!(sample_surface(&vol, 1.5, 5, 3), Err(Error::Domain { .. })));
    }

    #[test]
    fn longest_edge_split() {
        let mut pts = vec![[0., 0.], [4., 0.], [0., 1.]];
        split_longest_edge(&mut pts);
        assert_eq!(pts, vec![[0., 0.], [4., 0.], [2., 0.5], [0., 1.]]);
    }
}
