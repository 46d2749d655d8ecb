use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use radarpc_core::cfar::CfarDetector;
use radarpc_core::cube::render_frame;
use radarpc_core::metrics::{chamfer_brute_force, chamfer_positions};
use radarpc_core::net::build_network;
use radarpc_core::*;

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n).map(|_| [0, 1, 2].map(|_| rng.random_range(-20.0..20.0))).collect()
}

fn chamfer(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("chamfer");
    for n in [100, 500, 2000] {
        let (a, b) = (cloud(&mut rng, n), cloud(&mut rng, n));
        group.bench_with_input(BenchmarkId::new("kdtree", n), &n, |bench, _| {
            bench.iter(|| chamfer_positions(black_box(&a), black_box(&b)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("brute_force", n), &n, |bench, _| {
            bench.iter(|| chamfer_brute_force(black_box(&a), black_box(&b)).unwrap())
        });
    }
    group.finish();
}

fn scene(geometry: &CellGeometry) -> SceneSpec {
    SceneSampler { frame_count: 3, ..SceneSampler::default() }.sample(geometry, 7).unwrap()
}

fn cfar(c: &mut Criterion) {
    let mut group = c.benchmark_group("cfar");
    for (name, g) in [("compact", CellGeometry::compact()), ("desk", CellGeometry::desk_default())] {
        let cube = render_frame(&scene(&g), &g, 0).unwrap();
        for variant in [CfarVariant::Ca, CfarVariant::Os] {
            let det = CfarDetector::new(CfarConfig::new(variant)).unwrap();
            group.bench_function(format!("{variant:?}/{name}"), |b| b.iter(|| det.detect(black_box(&cube)).unwrap()));
        }
    }
    group.finish();
}

fn forward(c: &mut Criterion) {
    let g = CellGeometry::compact();
    let s = scene(&g);
    let frames: Vec<RadarCubePair> = (0..3).map(|f| render_frame(&s, &g, f).unwrap()).collect();
    let mut group = c.benchmark_group("forward");
    group.sample_size(20);
    for k in [0, 4] {
        let net = build_network(&NetworkConfig { temporal_layers: k, ..Default::default() }, &g).unwrap();
        group.bench_function(format!("compact/K{k}"), |b| b.iter(|| net.forward(black_box(&frames)).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, chamfer, cfar, forward);
criterion_main!(benches);
