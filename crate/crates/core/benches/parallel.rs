use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use flexframe::compare::{compare_tables, CompareSpec, CsvTable};
use flexframe::factory::{make_plate_surrogate, PlateSurrogate};
use flexframe::loads::{LoadEntry, LoadFrame, LoadSpec, TimeSeries};
use flexframe::model::{build_modal_system, compute_modes};
use flexframe::par::Execution;
use flexframe::rotation::{rotation_exp, LogRotation, MarkerTriad};
use flexframe::sweep::{run_sweep, SweepCase};
use flexframe::synthesis::{transform_state_with, SimParams};
use nalgebra::{DVector, Vector3};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn sweep(c: &mut Criterion) {
    let model = make_plate_surrogate().unwrap();
    let basis = compute_modes(&model, PlateSurrogate::N_FLEX).unwrap();
    let system = build_modal_system(&model, &basis, &[0.05]).unwrap();
    let coords = model.node_coords();
    let [r, p, q] = PlateSurrogate::markers();
    let triad = MarkerTriad::from_coords(r, p, q, coords[r], coords[p], coords[q]).unwrap();
    let t_end = 0.02;
    let cases: Vec<SweepCase> = (1..=8)
        .map(|k| {
            let f = 10.0 * k as f64;
            let loads = LoadSpec::new(vec![LoadEntry::new(
                PlateSurrogate::load_node(),
                Vector3::new(1.0, 0.0, 1.0),
                TimeSeries::new(vec![(0.0, f), (t_end, f)]).unwrap(),
                LoadFrame::Global,
            )
            .unwrap()]);
            SweepCase {
                label: format!("{f} N"),
                params: SimParams::new(triad.clone(), loads, 1e-4, t_end),
            }
        })
        .collect();
    let mut g = c.benchmark_group("sweep_8_cases");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| run_sweep(&model, &system, black_box(&cases), exec)));
    }
    g.finish();
}

fn transform(c: &mut Criterion) {
    let r = rotation_exp(&LogRotation::from_vector(&Vector3::new(0.1, -0.2, 0.3)));
    let mut g = c.benchmark_group("transform_state");
    for nodes in [1_000usize, 20_000, 200_000] {
        let x = DVector::from_fn(3 * nodes, |i, _| (i as f64).sin());
        let v = DVector::from_fn(3 * nodes, |i, _| (i as f64).cos());
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(name, nodes), &nodes, |b, _| {
                b.iter(|| transform_state_with(exec, &r, black_box(&x), black_box(&v)))
            });
        }
    }
    g.finish();
}

fn table(rows: usize, cols: usize, shift: f64) -> CsvTable {
    let mut text = (0..cols).map(|j| format!("c{j}")).collect::<Vec<_>>().join(",");
    text.push('\n');
    for i in 0..rows {
        let line: Vec<String> = (0..cols).map(|j| format!("{}", ((i * cols + j) as f64 * 1e-3).sin() + shift)).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    CsvTable::from_reader(text.as_bytes(), "bench").unwrap()
}

fn compare(c: &mut Criterion) {
    let a = table(20_000, 96, 0.0);
    let b = table(20_000, 96, 1e-9);
    let spec = CompareSpec {
        rel_rms: Some(1e-6),
        ..Default::default()
    };
    let mut g = c.benchmark_group("compare_96_columns");
    for (name, exec) in MODES {
        g.bench_function(name, |bch| bch.iter(|| compare_tables(black_box(&a), black_box(&b), &spec, exec)));
    }
    g.finish();
}

criterion_group!(benches, sweep, transform, compare);
criterion_main!(benches);
