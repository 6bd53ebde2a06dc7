use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kpi_core::pipeline::{self, PipelineConfig};
use kpi_core::Error;
use log::{error, info};

/// Exact interpolation of scattered station time series with B-spline volumes.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = PipelineConfig::from_file(&self.config)?;
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole pipeline and write volume.json, grid.json, report.json.
    Fit(Common),
    /// Ingest and validate the inputs without fitting.
    Validate(Common),
    /// Evaluate time slices of a fitted volume on a uniform (u, v) grid.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Time parameter in [0, 1]; repeat for several snapshots.
        #[arg(long = "t", required = true)]
        times: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        res_u: usize,
        #[arg(long, default_value_t = 100)]
        res_v: usize,
    },
    /// Extract an iso-u curve with the grid row's key and non-key points.
    Iso {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "station", required_unless_present = "station")]
        u: Option<f64>,
        /// Use the u parameter of this station.
        #[arg(long)]
        station: Option<String>,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 200)]
        res: usize,
    },
    /// Reload the volume, recompute the station residuals and compare them
    /// with the stored report.
    Report(Common),
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Validate(common) => {
            let cfg = common.load()?;
            let ds = cfg.ingest()?;
            info!(
                "valid: {} stations, {} time steps, {} border vertices",
                ds.stations.len(),
                ds.time_steps(),
                ds.border.len()
            );
        }
        Command::Fit(common) => {
            let cfg = common.load()?;
            let ds = cfg.ingest()?;
            let out = pipeline::run_pipeline(&cfg, &ds)?;
            pipeline::save_outputs(&cfg.output_dir, &out)?;
            let r = &out.report;
            info!(
                "grid {:?}, controls {:?}, max residual {:.3e}",
                r.grid_dims, r.control_dims, r.max_residual
            );
            for w in &r.warnings {
                log::warn!("{w}");
            }
        }
        Command::Sample {
            common,
            times,
            res_u,
            res_v,
        } => {
            let cfg = common.load()?;
            let vol = pipeline::load_volume(&cfg.output_dir.join(pipeline::VOLUME_FILE))?;
            for (i, &t) in times.iter().enumerate() {
                let samples = pipeline::sample_surface(&vol, t, res_u, res_v)?;
                let path = cfg.output_dir.join(format!("surface_{i}.csv"));
                pipeline::write_surface_csv(&path, &samples)?;
                info!("t = {t}: wrote {}", path.display());
            }
        }
        Command::Iso {
            common,
            u,
            station,
            t,
            res,
        } => {
            let cfg = common.load()?;
            let dir = &cfg.output_dir;
            let vol = pipeline::load_volume(&dir.join(pipeline::VOLUME_FILE))?;
            let doc = pipeline::load_grid(&dir.join(pipeline::GRID_FILE))?;
            let u = match (u, station) {
                (Some(u), _) => u,
                (None, Some(id)) => {
                    let s = doc
                        .station_ids
                        .iter()
                        .position(|x| *x == id)
                        .ok_or_else(|| Error::Input(format!("unknown station `{id}`")))?;
                    doc.grid.u_bar[doc.station_cells[s].0]
                }
                (None, None) => unreachable!("clap requires --u or --station"),
            };
            let iso = pipeline::extract_iso_u_curve(&vol, &doc.grid, u, t, res)?;
            pipeline::write_iso_csv(&dir.join("iso_curve.csv"), &dir.join("iso_markers.csv"), &iso)?;
            info!("iso-u curve at u = {u}, t = {t}: {} markers", iso.markers.len());
        }
        Command::Report(common) => {
            let cfg = common.load()?;
            let dir = &cfg.output_dir;
            let stored = pipeline::load_report(&dir.join(pipeline::REPORT_FILE))?;
            let (max, mean) = pipeline::recompute_report(dir)?;
            let check = format!(
                "{{\"max_residual\": {max:e}, \"mean_residual\": {mean:e}, \"matches_report\": {}}}\n",
                max == stored.max_residual && mean == stored.mean_residual
            );
            pipeline::write_atomic(&dir.join("report_check.json"), check.as_bytes())?;
            if max != stored.max_residual || mean != stored.mean_residual {
                return Err(Error::Numerical(format!(
                    "recomputed residuals ({max:e}, {mean:e}) differ from the report ({:e}, {:e})",
                    stored.max_residual, stored.mean_residual
                )));
            }
            info!("residuals reproduced: max {max:.3e}, mean {mean:.3e}");
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_validation() {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
