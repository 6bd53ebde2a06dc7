use std::f64::consts::TAU;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kpi_core::geometry::Point2;
use kpi_core::kpi::{fit_volume, KpiOptions};
use kpi_core::kriging::{build_grid, KrigingOptions};
use kpi_core::meshparam::ParamGrid;
use kpi_core::pipeline::{run_pipeline, Dataset, PipelineConfig};
use kpi_core::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn dataset(n: usize, steps: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let border: Vec<Point2> = (0..20)
        .map(|i| {
            let a = i as f64 * TAU / 20.0;
            [a.cos(), a.sin()]
        })
        .collect();
    // well inside the inscribed circle of the 20-gon
    let mut stations = Vec::with_capacity(n);
    while stations.len() < n {
        let p = [rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)];
        if p[0] * p[0] + p[1] * p[1] < 0.9 * 0.9 {
            stations.push(p);
        }
    }
    let readings = stations
        .iter()
        .map(|p: &Point2| {
            (0..steps)
                .map(|k| {
                    let t = k as f64 / (steps - 1) as f64;
                    (3.0 * p[0]).sin() * (2.0 * p[1]).cos() + t * t
                })
                .collect()
        })
        .collect();
    Dataset {
        station_ids: (0..n).map(|i| format!("s{i}")).collect(),
        stations,
        readings,
        border,
    }
}

fn bench(c: &mut Criterion) {
    let ds = dataset(100, 10);
    let out = run_pipeline(&PipelineConfig::default(), &ds).expect("pipeline runs");
    let grid = out.grid.grid;
    let pg = ParamGrid {
        u_bar: grid.u_bar.clone(),
        v_bar: grid.v_bar.clone(),
        station_cells: out.grid.station_cells.clone(),
    };

    let mut kriging = c.benchmark_group("build_grid");
    kriging.sample_size(10);
    for (name, exec) in MODES {
        let opts = KrigingOptions {
            exec,
            ..KrigingOptions::default()
        };
        kriging.bench_with_input(BenchmarkId::from_parameter(name), &opts, |b, opts| {
            b.iter(|| build_grid(&pg, &ds.readings, &grid.t_bar, opts).unwrap())
        });
    }
    kriging.finish();

    let mut lofting = c.benchmark_group("fit_volume");
    lofting.sample_size(10);
    for (name, exec) in MODES {
        let opts = KpiOptions {
            exec,
            ..KpiOptions::default()
        };
        lofting.bench_with_input(BenchmarkId::from_parameter(name), &opts, |b, opts| {
            b.iter(|| fit_volume(&grid, [3, 3, 3], opts).unwrap())
        });
    }
    lofting.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
