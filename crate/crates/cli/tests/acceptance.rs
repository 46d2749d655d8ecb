//! The ten acceptance criteria, run in order. Prints one line per
//! criterion and exits non-zero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use radarpc_core::cfar::{ca_alpha, CfarDetector};
use radarpc_core::cube::render_frame;
use radarpc_core::grid::{grid_to_pointcloud, voxelize};
use radarpc_core::io;
use radarpc_core::metrics::{chamfer_brute_force, chamfer_positions, evaluate_run, misalignment_demo};
use radarpc_core::net::gradcheck::{check_focal, check_operators};
use radarpc_core::net::{build_network, focal_loss, infer, train};
use radarpc_core::net::loss::focal_from_probability;
use radarpc_core::report::{SweepRow, CellStatus};
use radarpc_core::*;

type Verdict = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok { Ok(()) } else { Err(msg.into()) }
}

fn within_time(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, format!("took {t:.1?}, limit {limit:?}"))
}

fn random_cloud(rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let n = rng.random_range(1..=500);
    (0..n).map(|_| [0, 1, 2].map(|_| rng.random_range(-25.0..25.0))).collect()
}

fn metric_exactness() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (a, b) = (random_cloud(&mut rng), random_cloud(&mut rng));
        let fast = chamfer_positions(&a, &b).map_err(|e| e.to_string())?;
        let slow = chamfer_brute_force(&a, &b).map_err(|e| e.to_string())?;
        worst = worst.max((fast - slow).abs());
        ensure(chamfer_positions(&a, &a).unwrap() == 0.0, "CD(S,S) != 0")?;
        let back = chamfer_positions(&b, &a).unwrap();
        ensure((fast - back).abs() <= 1e-12 * fast.max(1.0), format!("asymmetric: {fast} vs {back}"))?;
    }
    ensure(worst <= 1e-9, format!("k-d tree deviates from brute force by {worst:e}"))?;
    within_time(start, Duration::from_secs(30))?;
    Ok(format!("max |kd - brute| = {worst:.1e} over 100 pairs in {:.1?}", start.elapsed()))
}

fn focal_correctness() -> Verdict {
    let mut worst_ce: f64 = 0.0;
    for i in 0..2001 {
        let z = -20.0 + 0.02 * i as f64;
        for y in [false, true] {
            let ce = if y { (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            let (l, _) = focal_loss(&[z], &[y], 0.5, 0.0).unwrap();
            worst_ce = worst_ce.max((l - 0.5 * ce).abs() / ce.max(1e-300));
        }
    }
    ensure(worst_ce <= 1e-14, format!("0.5 x CE mismatch {worst_ce:e}"))?;
    let grad = [check_focal(11, 0.99, 2.0), check_focal(12, 0.5, 0.0), check_focal(13, 0.25, 1.0)]
        .iter()
        .map(|c| c.max_rel_error)
        .fold(0.0, f64::max);
    ensure(grad < 1e-5, format!("gradient relative error {grad:e}"))?;
    let hand = focal_from_probability(0.6, true, 0.99, 2.0);
    ensure((hand - 0.080915).abs() <= 1e-6, format!("FL(0.6) = {hand}"))?;
    Ok(format!("CE reduction rel err {worst_ce:.1e}, grad rel err {grad:.1e}, FL(0.6) = {hand:.6}"))
}

fn autodiff_integrity() -> Verdict {
    let start = Instant::now();
    let checks = check_operators(7);
    let failing: Vec<String> =
        checks.iter().filter(|c| !(c.max_rel_error < 1e-4)).map(|c| format!("{} {:e}", c.name, c.max_rel_error)).collect();
    ensure(failing.is_empty(), failing.join(", "))?;
    within_time(start, Duration::from_secs(120))?;
    let worst = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(format!("{} operators, max rel err {worst:.1e}, {:.1?}", checks.len(), start.elapsed()))
}

fn cfar_calibration() -> Verdict {
    let start = Instant::now();
    let g = CellGeometry::desk_default();
    let a16 = ca_alpha(16, 1e-3);
    ensure((a16 - 8.639).abs() < 1e-3, format!("closed-form alpha {a16}"))?;
    let mut measured = Vec::new();
    for v in [CfarVariant::Ca, CfarVariant::Soca, CfarVariant::Goca, CfarVariant::Os] {
        let det = CfarDetector::new(CfarConfig::new(v)).map_err(|e| e.to_string())?;
        let (mut hits, mut tested, mut frame) = (0usize, 0usize, 0u64);
        while tested < 10_000_000 {
            let cube = render_frame(&SceneSpec::empty(500 + frame, 1), &g, 0).map_err(|e| e.to_string())?;
            let mask = det.detect_mask(&cube).map_err(|e| e.to_string())?;
            hits += mask.count();
            tested += mask.tested;
            frame += 1;
        }
        let pfa = hits as f64 / tested as f64;
        ensure((pfa / 1e-3 - 1.0).abs() <= 0.2, format!("{v:?} measured pfa {pfa:.3e}"))?;
        measured.push(format!("{v:?} {pfa:.3e}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let small = CellGeometry::compact();
    for _ in 0..20 {
        let power = Array3::from_shape_simple_fn(small.cube_dims(), || rng.random_range(0.0f32..10.0));
        let cube = RadarCubePair {
            power,
            elevation: Array3::zeros(small.cube_dims()),
            geometry: small,
            frame_id: 0,
            timestamp: 0.0,
        };
        let alpha = rng.random_range(1.0..10.0);
        let mask = |v, c: &RadarCubePair| {
            CfarDetector::with_fixed_alpha(CfarConfig::new(v), alpha).unwrap().detect_mask(c).unwrap().detections
        };
        let (goca, ca, soca) = (mask(CfarVariant::Goca, &cube), mask(CfarVariant::Ca, &cube), mask(CfarVariant::Soca, &cube));
        let nested = goca.iter().zip(&ca).zip(&soca).all(|((g, c), s)| (!*g || *c) && (!*c || *s));
        ensure(nested, "GOCA ⊆ CA ⊆ SOCA violated")?;
        let mut scaled = cube.clone();
        scaled.power.mapv_inplace(|p| p * 37.5);
        ensure(mask(CfarVariant::Ca, &scaled) == ca, "CA-CFAR not scale invariant")?;
    }
    within_time(start, Duration::from_secs(180))?;
    Ok(format!("alpha(16) = {a16:.4}; {}; {:.1?}", measured.join(", "), start.elapsed()))
}

fn misalignment() -> Verdict {
    let g = CellGeometry::desk_default();
    let mut grid = OccupancyGrid::empty(g, 0);
    for r in (10..60).step_by(5) {
        for a in 30..34 {
            grid.occupancy[(r, a, 8)] = true;
        }
    }
    let cloud = grid_to_pointcloud(&grid, None, None).map_err(|e| e.to_string())?;
    let m = misalignment_demo(&cloud, 1.5 * g.range_axis().width(), &g).map_err(|e| e.to_string())?;
    ensure(m.p_d_shifted == 0.0, format!("P_d of shifted cloud {}", m.p_d_shifted))?;
    ensure(m.bcd_shifted < m.bcd_far, format!("BCD shifted {} vs decoy {}", m.bcd_shifted, m.bcd_far))?;
    Ok(format!(
        "shifted: P_d {} P_fa {:.1e} BCD {:.3} m; decoy BCD {:.3} m",
        m.p_d_shifted, m.p_fa_shifted, m.bcd_shifted, m.bcd_far
    ))
}

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden")
}

fn round_trips() -> Verdict {
    let tiny = CellGeometry {
        range_bins: 4,
        azimuth_bins: 4,
        elevation_bins: 4,
        doppler_bins: 2,
        range_extent: Extent::new(1.0, 9.0),
        azimuth_extent: Extent::new(-0.8, 0.8),
        elevation_extent: Extent::new(-0.4, 0.4),
        doppler_extent: Extent::new(-1.0, 1.0),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let check = |grid: &OccupancyGrid| -> Result<(), String> {
        let cloud = grid_to_pointcloud(grid, None, None).map_err(|e| e.to_string())?;
        let back = voxelize(&cloud, &grid.geometry);
        ensure(back.dropped == 0 && &back.grid == grid, "voxelize(grid_to_pointcloud(g)) != g")?;
        ensure(&io::decode_grid(&io::encode_grid(grid)).map_err(|e| e.to_string())? == grid, "grid bytes")?;
        let c2 = io::decode_pointcloud(&io::encode_pointcloud(&cloud)).map_err(|e| e.to_string())?;
        ensure(c2 == cloud, "point cloud bytes")
    };
    for _ in 0..1000 {
        let bits: u64 = rng.random();
        let occupancy = Array3::from_shape_fn(tiny.grid_dims(), |(r, a, e)| bits >> (r * 16 + a * 4 + e) & 1 == 1);
        check(&OccupancyGrid { occupancy, geometry: tiny, frame_id: bits })?;
    }
    let desk = CellGeometry::desk_default();
    for i in 0..100 {
        let density = rng.random_range(0.0..0.2);
        let occupancy = Array3::from_shape_simple_fn(desk.grid_dims(), || rng.random_bool(density));
        check(&OccupancyGrid { occupancy, geometry: desk, frame_id: i })?;
    }
    let compact = CellGeometry::compact();
    let scene = SceneSampler::default().sample(&compact, 3).map_err(|e| e.to_string())?;
    let cube = render_frame(&scene, &compact, 2).map_err(|e| e.to_string())?;
    ensure(io::decode_cube(&io::encode_cube(&cube)).map_err(|e| e.to_string())? == cube, "cube bytes")?;
    let net = build_network(&NetworkConfig { temporal_layers: 2, ..Default::default() }, &compact).unwrap();
    let net2 = io::decode_checkpoint(&io::encode_checkpoint(&net)).map_err(|e| e.to_string())?;
    ensure(net2.params == net.params && net2.config == net.config, "checkpoint")?;
    let mut golden = 0;
    for name in ["cube.rdc", "grid.rog", "cloud.rpc", "checkpoint.rck", "manifest.json"] {
        let bytes = std::fs::read(golden_dir().join(name)).map_err(|e| format!("{name}: {e}"))?;
        let again = match name {
            "cube.rdc" => io::encode_cube(&io::decode_cube(&bytes).map_err(|e| e.to_string())?),
            "grid.rog" => io::encode_grid(&io::decode_grid(&bytes).map_err(|e| e.to_string())?),
            "cloud.rpc" => io::encode_pointcloud(&io::decode_pointcloud(&bytes).map_err(|e| e.to_string())?),
            "checkpoint.rck" => io::encode_checkpoint(&io::decode_checkpoint(&bytes).map_err(|e| e.to_string())?),
            _ => {
                let text = String::from_utf8(bytes.clone()).map_err(|e| e.to_string())?;
                io::RunManifest::from_json(&text).map_err(|e| e.to_string())?.to_json().into_bytes()
            }
        };
        ensure(again == bytes, format!("golden {name} not reproduced byte for byte"))?;
        golden += 1;
    }
    Ok(format!("1000 small + 100 full-size grids, cube/cloud/grid/checkpoint bytes, {golden} golden files"))
}

/// Training setup shared by the learning criteria.
fn train_config() -> TrainConfig {
    TrainConfig { learning_rate: 1e-2, seed: 3, ..TrainConfig::default() }
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool").install(f)
}

fn learning_capability() -> Verdict {
    let start = Instant::now();
    let g = CellGeometry::compact();
    let sampler = SceneSampler { frame_count: 1, ..SceneSampler::default() };
    let train_set = Dataset::synthesize(&sampler, &g, 200, 1000).map_err(|e| e.to_string())?;
    let test_set = Dataset::synthesize(&sampler, &g, 50, 9000).map_err(|e| e.to_string())?;
    let cfg = NetworkConfig { backbone_blocks: 2, temporal_layers: 0, seed: 7, ..NetworkConfig::default() };
    let (net, history) = single_threaded(|| {
        let net = build_network(&cfg, &g).map_err(|e| e.to_string())?;
        train(net, &train_set, None, &train_config()).map_err(|e| e.to_string())
    })?;
    let elapsed = start.elapsed();
    let (first, last) = (history.initial().unwrap().train_focal, history.last().unwrap().train_focal);
    let preds: Vec<OccupancyGrid> =
        test_set.sequences.iter().flat_map(|s| infer(&net, &s.cubes).unwrap().grids).collect();
    let gts: Vec<OccupancyGrid> = test_set.all_gt_grids().cloned().collect();
    let net_rep = evaluate_run(&preds, &gts, &g).map_err(|e| e.to_string())?;
    let det = CfarDetector::new(CfarConfig::default()).map_err(|e| e.to_string())?;
    let cfar: Vec<OccupancyGrid> = test_set.all_cubes().map(|c| det.detect(c).unwrap()).collect();
    let cfar_rep = evaluate_run(&cfar, &gts, &g).map_err(|e| e.to_string())?;
    let a = net_rep.aggregate;
    let (p_d, p_fa, bcd) = (a.p_d.unwrap_or(0.0), a.p_fa.unwrap_or(1.0), a.bcd.unwrap_or(f64::INFINITY));
    let cfar_bcd = cfar_rep.aggregate.bcd.unwrap_or(f64::INFINITY);
    let summary = format!(
        "focal {first:.4} -> {last:.4} ({:.1}%), held-out P_d {p_d:.3} P_fa {p_fa:.4} BCD {bcd:.3} m vs CA-CFAR {cfar_bcd:.3} m, train {elapsed:.1?}",
        100.0 * last / first
    );
    ensure(last <= 0.1 * first, format!("loss ratio too high: {summary}"))?;
    ensure(p_d >= 0.9, format!("P_d below 0.9: {summary}"))?;
    ensure(p_fa <= 0.01, format!("P_fa above 0.01: {summary}"))?;
    ensure(bcd < cfar_bcd, format!("BCD not below CFAR: {summary}"))?;
    ensure(elapsed < Duration::from_secs(600), format!("too slow: {summary}"))?;
    Ok(summary)
}

fn temporal_coherence() -> Verdict {
    let g = CellGeometry::compact();
    let sampler = SceneSampler { frame_count: 5, flicker_probability: 0.3, ..SceneSampler::default() };
    let train_set = Dataset::synthesize(&sampler, &g, 40, 2000).map_err(|e| e.to_string())?;
    let test_set = Dataset::synthesize(&sampler, &g, 10, 8000).map_err(|e| e.to_string())?;
    let gts: Vec<OccupancyGrid> = test_set.all_gt_grids().cloned().collect();
    let mean_bcd = |k: usize| -> Result<f64, String> {
        let cfg = NetworkConfig { backbone_blocks: 2, temporal_layers: k, seed: 7, ..NetworkConfig::default() };
        let net = build_network(&cfg, &g).map_err(|e| e.to_string())?;
        let tc = TrainConfig { seed: 3, ..TrainConfig::default() };
        let (net, _) = train(net, &train_set, None, &tc).map_err(|e| e.to_string())?;
        let preds: Vec<OccupancyGrid> =
            test_set.sequences.iter().flat_map(|s| infer(&net, &s.cubes).unwrap().grids).collect();
        let rep = evaluate_run(&preds, &gts, &g).map_err(|e| e.to_string())?;
        rep.aggregate.bcd.ok_or_else(|| format!("K={k}: every prediction empty"))
    };
    let (k0, k4) = (mean_bcd(0)?, mean_bcd(4)?);
    let summary = format!("mean BCD K=0 {k0:.3} m, K=4 {k4:.3} m");
    ensure(k4 < k0, summary.clone())?;
    Ok(summary)
}

fn empty_cloud_accounting() -> Verdict {
    let g = CellGeometry::compact();
    let data = Dataset::synthesize(&SceneSampler::default(), &g, 2, 77).map_err(|e| e.to_string())?;
    let net = build_network(&NetworkConfig { temporal_layers: 4, ..Default::default() }, &g).unwrap().zeroed();
    let mut preds = Vec::new();
    for s in &data.sequences {
        let window = s.window_indices(1, 3).into_iter().map(|i| s.cubes[i].clone()).collect::<Vec<_>>();
        let logits = net.forward(&window).map_err(|e| e.to_string())?;
        ensure(logits.iter().all(|z| 1.0 / (1.0 + (-z).exp()) == 0.5), "sigmoid != 0.5")?;
        let out = infer(&net, &s.cubes).map_err(|e| e.to_string())?;
        ensure(out.empty_fraction == 1.0, "inference reports non-empty frames")?;
        preds.extend(out.grids);
    }
    let gts: Vec<OccupancyGrid> = data.all_gt_grids().cloned().collect();
    let rep = evaluate_run(&preds, &gts, &g).map_err(|e| e.to_string())?;
    ensure(rep.empty_frame_fraction == 1.0, format!("empty_frame_fraction {}", rep.empty_frame_fraction))?;
    ensure(rep.aggregate.bcd.is_none() && rep.per_frame.iter().all(|f| f.bcd.is_none()), "BCD reported for empty clouds")?;
    let row = SweepRow::from_report(4, 2, net.parameter_count(), &rep);
    ensure(row.status == CellStatus::Inconclusive, format!("sweep status {:?}", row.status))?;
    let csv = radarpc_core::report::sweep_to_csv(&[row]);
    ensure(csv.lines().nth(1).is_some_and(|l| l.ends_with(",,1,inconclusive")), format!("sweep row {csv:?}"))?;
    Ok(format!("{} frames empty, BCD undefined, sweep cell inconclusive", rep.per_frame.len()))
}

fn radarpc(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_radarpc"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), format!("radarpc {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let tree = |run: &str| -> Result<Vec<(String, Vec<u8>)>, String> {
        let d = tmp.path().join(run);
        std::fs::create_dir_all(&d).map_err(|e| e.to_string())?;
        radarpc(&["generate", "--geometry", "compact", "--scenes", "4", "--frames", "3", "--seed", "5", "--out-dir", "data"], &d)?;
        radarpc(&["train", "--dataset", "data", "--epochs", "2", "--seed", "5", "--out-dir", "train"], &d)?;
        radarpc(
            &["sweep", "--dataset", "data", "--backbones", "1,2", "--temporal", "0,2", "--epochs", "1", "--seed", "5", "--out-dir", "sweep"],
            &d,
        )?;
        let mut files = Vec::new();
        for rel in ["data/manifest.json", "train/history.csv", "train/model.rck", "sweep/sweep.csv", "sweep/sweep.svg"] {
            files.push((rel.to_string(), std::fs::read(d.join(rel)).map_err(|e| format!("{rel}: {e}"))?));
        }
        Ok(files)
    };
    let (a, b) = (tree("a")?, tree("b")?);
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        ensure(x == y, format!("{name} differs between identical runs"))?;
    }
    Ok(format!("generate/train/sweep twice: {} outputs byte-identical", a.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("metric exactness", metric_exactness),
        ("focal loss correctness", focal_correctness),
        ("autodiff integrity", autodiff_integrity),
        ("CFAR calibration", cfar_calibration),
        ("misalignment property", misalignment),
        ("round trips", round_trips),
        ("learning capability", learning_capability),
        ("temporal coherence", temporal_coherence),
        ("empty-cloud accounting", empty_cloud_accounting),
        ("determinism", determinism),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let start = Instant::now();
        let verdict = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match verdict {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{:.1?}]", i + 1, start.elapsed()),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why} [{:.1?}]", i + 1, start.elapsed());
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
