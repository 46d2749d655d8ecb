use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use radarpc_core::cfar::{project_to_grid, CfarDetector, CALIBRATION_SEED};
use radarpc_core::io::{self, DetectorRef, FileEntry, FileKind, RunManifest};
use radarpc_core::metrics::{evaluate_run, MetricsReport, Provenance};
use radarpc_core::net::{build_network, infer as run_network, train as fit, History};
use radarpc_core::report::{self, SweepRow, SWEEP_HEADER};
use radarpc_core::*;

use crate::run::{self, load_json, load_or_default, runtime, usage, ManifestDraft, Outcome};
use crate::{CfarArgs, EvalArgs, GenerateArgs, InferArgs, NetArgs, ReportArgs, SweepArgs, TrainArgs};

const PRED_DIR: &str = "preds";
const REPORT_FILE: &str = "report.csv";
const CHECKPOINT_FILE: &str = "model.rck";

fn load_dataset(dir: &Path) -> Outcome<(Dataset, RunManifest)> {
    let manifest = io::read_manifest(&dir.join(io::MANIFEST_FILE))?;
    Ok((io::read_dataset(dir)?, manifest))
}

fn scene_hash(data: &Dataset) -> String {
    let scenes: Vec<&SceneSpec> = data.sequences.iter().map(|s| &s.scene).collect();
    io::scenes_hash(&scenes)
}

/// Writes one predicted grid per frame of `data`, in dataset order.
fn write_predictions(dir: &Path, data: &Dataset, preds: &[OccupancyGrid]) -> Outcome<Vec<FileEntry>> {
    data.frames()
        .into_iter()
        .zip(preds)
        .map(|((s, f), grid)| {
            let rel = format!("{PRED_DIR}/{}.rog", io::frame_stem(s, f));
            let sha256 = io::write_grid(&dir.join(&rel), grid)?;
            Ok(FileEntry { path: rel, sha256, kind: FileKind::PredGrid, sequence: Some(s), frame: Some(f) })
        })
        .collect()
}

fn score(data: &Dataset, preds: &[OccupancyGrid], provenance: Provenance) -> Outcome<MetricsReport> {
    let gts: Vec<OccupancyGrid> = data.all_gt_grids().cloned().collect();
    Ok(evaluate_run(preds, &gts, &data.geometry).map_err(runtime)?.with_provenance(provenance))
}

fn print_summary(report: &MetricsReport) {
    let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    let a = report.aggregate;
    println!(
        "frames={} p_d={} p_fa={} bcd_m={} empty_frame_fraction={:.3}",
        report.per_frame.len(),
        f(a.p_d),
        f(a.p_fa),
        f(a.bcd),
        report.empty_frame_fraction
    );
}

pub fn generate(a: &GenerateArgs) -> Outcome {
    let geometry = run::geometry(&a.geometry)?;
    let seed = a.common.seed.unwrap_or(0);
    let data = if let Some(path) = &a.scene {
        let mut scene: SceneSpec = load_json(path)?;
        if let Some(s) = a.common.seed {
            scene.seed = s;
        }
        if let Some(n) = a.frames {
            scene.frame_count = n;
        }
        scene.validate(&geometry).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        Dataset::from_scenes(vec![scene], &geometry).map_err(runtime)?
    } else {
        let mut sampler: SceneSampler = load_or_default(a.sampler.as_deref())?;
        if let Some(n) = a.frames {
            sampler.frame_count = n;
        }
        if let Some(p) = a.flicker {
            sampler.flicker_probability = p;
        }
        Dataset::synthesize(&sampler, &geometry, a.scenes, seed).map_err(usage)?
    };
    let files = io::write_dataset(&a.common.out_dir, &data)?;
    ManifestDraft {
        command: "generate",
        scene_spec_hash: scene_hash(&data),
        detector: DetectorRef::GroundTruth,
        geometry,
        seed,
        files,
    }
    .write(&a.common.out_dir)?;
    println!("wrote {} frames in {} sequences to {}", data.frame_count(), data.sequences.len(), a.common.out_dir.display());
    Ok(())
}

pub fn cfar(a: &CfarArgs) -> Outcome {
    let config: CfarConfig = load_or_default(a.config.as_deref())?;
    let seed = a.common.seed.unwrap_or(CALIBRATION_SEED);
    let detector = CfarDetector::calibrated_with(config, seed).map_err(usage)?;
    let (data, _) = load_dataset(&a.dataset)?;
    let (mut hits, mut tested) = (0usize, 0usize);
    let mut preds = Vec::with_capacity(data.frame_count());
    for cube in data.all_cubes() {
        let mask = detector.detect_mask(cube).map_err(runtime)?;
        hits += mask.count();
        tested += mask.tested;
        preds.push(project_to_grid(&mask.detections, cube));
    }
    let out = &a.common.out_dir;
    let mut files = write_predictions(out, &data, &preds)?;
    let provenance = Provenance { detector: format!("cfar-{:?}", config.variant), config_hash: config.digest() };
    let report = score(&data, &preds, provenance)?;
    files.push(run::write_text(out, REPORT_FILE, &report::metrics_to_csv(&report), FileKind::Report)?);
    ManifestDraft {
        command: "cfar",
        scene_spec_hash: scene_hash(&data),
        detector: DetectorRef::Cfar { config },
        geometry: data.geometry,
        seed,
        files,
    }
    .write(out)?;
    println!("alpha={:.4} tested_cells={tested} cell_pfa={:.4e}", detector.alpha(), hits as f64 / tested.max(1) as f64);
    print_summary(&report);
    Ok(())
}

fn configs(n: &NetArgs, seed: Option<u64>) -> Outcome<(NetworkConfig, TrainConfig)> {
    let mut net: NetworkConfig = load_or_default(n.net_cfg.as_deref())?;
    let mut tc: TrainConfig = load_or_default(n.train_cfg.as_deref())?;
    if let Some(c) = n.channels {
        net.base_channels = c;
    }
    if let Some(e) = n.epochs {
        tc.epochs = e;
    }
    if let Some(s) = seed {
        net.seed = s;
        tc.seed = s;
    }
    tc.validate().map_err(usage)?;
    Ok((net, tc))
}

fn train_one(
    net_cfg: &NetworkConfig,
    tc: &TrainConfig,
    data: &Dataset,
    validation: Option<&Dataset>,
) -> Result<(Network, History), String> {
    let net = build_network(net_cfg, &data.geometry).map_err(|e| e.to_string())?;
    fit(net, data, validation, tc).map_err(|e| e.to_string())
}

pub fn train(a: &TrainArgs) -> Outcome {
    let (mut net_cfg, tc) = configs(&a.net, a.common.seed)?;
    if let Some(b) = a.blocks {
        net_cfg.backbone_blocks = b;
    }
    if let Some(k) = a.temporal {
        net_cfg.temporal_layers = k;
    }
    net_cfg.validate().map_err(usage)?;
    let (data, _) = load_dataset(&a.dataset)?;
    let validation = a.validation.as_deref().map(load_dataset).transpose()?.map(|(d, _)| d);
    let (net, history) = train_one(&net_cfg, &tc, &data, validation.as_ref()).map_err(|e| runtime(anyhow::anyhow!(e)))?;
    let out = &a.common.out_dir;
    let sha256 = io::write_checkpoint(&out.join(CHECKPOINT_FILE), &net)?;
    let files = vec![
        FileEntry { path: CHECKPOINT_FILE.into(), sha256: sha256.clone(), kind: FileKind::Checkpoint, sequence: None, frame: None },
        run::write_text(out, "history.csv", &history.to_csv(), FileKind::History)?,
    ];
    ManifestDraft {
        command: "train",
        scene_spec_hash: scene_hash(&data),
        detector: DetectorRef::Network { checkpoint: CHECKPOINT_FILE.into(), sha256 },
        geometry: data.geometry,
        seed: tc.seed,
        files,
    }
    .write(out)?;
    if let (Some(first), Some(last)) = (history.initial(), history.last()) {
        println!(
            "parameters={} initial_focal={:.6} final_focal={:.6}",
            net.parameter_count(),
            first.train_focal,
            last.train_focal
        );
    }
    Ok(())
}

fn predict(net: &Network, data: &Dataset) -> Result<Vec<OccupancyGrid>, String> {
    let mut preds = Vec::with_capacity(data.frame_count());
    for s in &data.sequences {
        preds.extend(run_network(net, &s.cubes).map_err(|e| e.to_string())?.grids);
    }
    Ok(preds)
}

pub fn infer(a: &InferArgs) -> Outcome {
    let bytes = io::read_bytes(&a.checkpoint)?;
    let net = io::decode_checkpoint(&bytes)
        .map_err(|e| usage(format!("{}: {e}", a.checkpoint.display())))?;
    let (data, _) = load_dataset(&a.dataset)?;
    if !data.geometry.same_binning(&net.geometry) {
        return Err(usage(format!("{}: geometry differs from the checkpoint's", a.dataset.display())));
    }
    let preds = predict(&net, &data).map_err(|e| runtime(anyhow::anyhow!(e)))?;
    let out = &a.common.out_dir;
    let mut files = write_predictions(out, &data, &preds)?;
    let sha256 = io::sha256_hex(&bytes);
    let provenance = Provenance { detector: "network".into(), config_hash: sha256[..16].to_string() };
    let report = score(&data, &preds, provenance)?;
    files.push(run::write_text(out, REPORT_FILE, &report::metrics_to_csv(&report), FileKind::Report)?);
    ManifestDraft {
        command: "infer",
        scene_spec_hash: scene_hash(&data),
        detector: DetectorRef::Network { checkpoint: a.checkpoint.display().to_string(), sha256 },
        geometry: data.geometry,
        seed: a.common.seed.unwrap_or(0),
        files,
    }
    .write(out)?;
    print_summary(&report);
    Ok(())
}

fn provenance_of(detector: &DetectorRef) -> Provenance {
    match detector {
        DetectorRef::GroundTruth => Provenance { detector: "ground_truth".into(), config_hash: String::new() },
        DetectorRef::Cfar { config } => {
            Provenance { detector: format!("cfar-{:?}", config.variant), config_hash: config.digest() }
        }
        DetectorRef::Network { sha256, .. } => {
            Provenance { detector: "network".into(), config_hash: sha256.chars().take(16).collect() }
        }
    }
}

pub fn eval(a: &EvalArgs) -> Outcome {
    let pm = io::read_manifest(&a.pred_dir.join(io::MANIFEST_FILE))?;
    let gm = io::read_manifest(&a.gt_dir.join(io::MANIFEST_FILE))?;
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for g in gm.files_of(FileKind::GtGrid) {
        let p = pm
            .files_of(FileKind::PredGrid)
            .find(|p| (p.sequence, p.frame) == (g.sequence, g.frame))
            .ok_or_else(|| {
                runtime(anyhow::anyhow!(
                    "{}: no prediction for ground truth {}",
                    a.pred_dir.join(io::MANIFEST_FILE).display(),
                    g.path
                ))
            })?;
        preds.push(io::read_grid(&a.pred_dir.join(&p.path))?);
        gts.push(io::read_grid(&a.gt_dir.join(&g.path))?);
    }
    let report =
        evaluate_run(&preds, &gts, &gm.geometry).map_err(runtime)?.with_provenance(provenance_of(&pm.detector));
    let path = a.out.clone().unwrap_or_else(|| a.common.out_dir.join(REPORT_FILE));
    io::write_bytes(&path, report::metrics_to_csv(&report).as_bytes())?;
    print_summary(&report);
    Ok(())
}

pub fn sweep(a: &SweepArgs) -> Outcome {
    let (base_net, tc) = configs(&a.net, a.common.seed)?;
    if a.backbones.is_empty() || a.temporal.is_empty() {
        return Err(usage("--backbones and --temporal need at least one value"));
    }
    let (data, _) = load_dataset(&a.dataset)?;
    let (train_set, eval_set) = match &a.validation {
        Some(v) => (data, load_dataset(v)?.0),
        None => {
            if !(a.holdout > 0.0 && a.holdout < 1.0) {
                return Err(usage("--holdout must lie in (0, 1)"));
            }
            let n = data.sequences.len();
            let held = ((n as f64 * a.holdout).round() as usize).max(1);
            if held >= n {
                return Err(usage(format!("{}: too few sequences to hold out {held}", a.dataset.display())));
            }
            data.split_at(n - held)
        }
    };
    let out = &a.common.out_dir;
    let mut rows = Vec::new();
    let mut files = Vec::new();
    for &k in &a.temporal {
        for &b in &a.backbones {
            let cfg = NetworkConfig { backbone_blocks: b, temporal_layers: k, ..base_net };
            let cell = format!("cells/K{k}_B{b}");
            let outcome = catch_unwind(AssertUnwindSafe(|| -> Result<_, String> {
                cfg.validate().map_err(|e| e.to_string())?;
                let (net, history) = train_one(&cfg, &tc, &train_set, None)?;
                let preds = predict(&net, &eval_set)?;
                Ok((net, history, preds))
            }))
            .unwrap_or_else(|_| Err("panicked".into()));
            let row = match outcome {
                Ok((net, history, preds)) => {
                    let provenance = Provenance { detector: format!("network-K{k}-B{b}"), config_hash: String::new() };
                    let rep = score(&eval_set, &preds, provenance)?;
                    let rel = format!("{cell}/{CHECKPOINT_FILE}");
                    let sha256 = io::write_checkpoint(&out.join(&rel), &net)?;
                    files.push(FileEntry { path: rel, sha256, kind: FileKind::Checkpoint, sequence: None, frame: None });
                    files.push(run::write_text(out, &format!("{cell}/history.csv"), &history.to_csv(), FileKind::History)?);
                    files.push(run::write_text(out, &format!("{cell}/{REPORT_FILE}"), &report::metrics_to_csv(&rep), FileKind::Report)?);
                    SweepRow::from_report(k, b, net.parameter_count(), &rep)
                }
                Err(msg) => SweepRow::failed(k, b, msg),
            };
            println!("K={k} B={b} {:?}", row.status);
            rows.push(row);
        }
    }
    files.push(run::write_text(out, "sweep.csv", &report::sweep_to_csv(&rows), FileKind::Report)?);
    let svg = report::sweep_bar_chart(&rows, "Mean BCD per cell");
    files.push(run::write_text(out, "sweep.svg", &svg, FileKind::Plot)?);
    ManifestDraft {
        command: "sweep",
        scene_spec_hash: scene_hash(&train_set),
        detector: DetectorRef::Network { checkpoint: String::new(), sha256: String::new() },
        geometry: train_set.geometry,
        seed: tc.seed,
        files,
    }
    .write(out)?;
    Ok(())
}

pub fn report(a: &ReportArgs) -> Outcome {
    let bytes = io::read_bytes(&a.input)?;
    let text = String::from_utf8(bytes).map_err(|_| usage(format!("{}: not UTF-8", a.input.display())))?;
    let stem = a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    let bad = |e: radarpc_core::metrics::MetricsError| usage(format!("{}: {e}", a.input.display()));
    let (svg, rel) = if text.starts_with(SWEEP_HEADER) {
        let rows = report::sweep_from_csv(&text).map_err(bad)?;
        (report::sweep_bar_chart(&rows, "Mean BCD per cell"), format!("{stem}.svg"))
    } else if text.starts_with("# radarpc metrics") || text.starts_with(report::METRICS_HEADER) {
        let rep = report::metrics_from_csv(&text).map_err(bad)?;
        (report::bcd_line_plot(&rep, "BCD per frame"), format!("{stem}_bcd.svg"))
    } else {
        return Err(usage(format!("{}: neither a metrics nor a sweep CSV", a.input.display())));
    };
    let path = a.common.out_dir.join(&rel);
    io::write_bytes(&path, svg.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}
