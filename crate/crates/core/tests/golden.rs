//! Byte-exact reference files for every binary and JSON format.
//!
//! Run with `RADARPC_BLESS=1` to rewrite the files after a deliberate
//! format change.

use std::path::PathBuf;

use ndarray::Array3;
use radarpc_core::io::{self, DetectorRef, FileEntry, FileKind, RunManifest};
use radarpc_core::net::build_network;
use radarpc_core::*;

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn geometry() -> CellGeometry {
    CellGeometry {
        range_bins: 3,
        azimuth_bins: 2,
        elevation_bins: 3,
        doppler_bins: 2,
        range_extent: Extent::new(1.0, 4.0),
        azimuth_extent: Extent::new(-0.5, 0.5),
        elevation_extent: Extent::new(-0.25, 0.25),
        doppler_extent: Extent::new(-2.0, 2.0),
    }
}

fn cube() -> RadarCubePair {
    let g = geometry();
    RadarCubePair {
        power: Array3::from_shape_fn(g.cube_dims(), |(r, a, d)| (r * 4 + a * 2 + d) as f32 * 0.25),
        elevation: Array3::from_shape_fn(g.cube_dims(), |(r, a, d)| (r as f32 - 1.0) * 0.1 + (a + d) as f32 * 0.01),
        geometry: g,
        frame_id: 7,
        timestamp: 0.7,
    }
}

fn grid() -> OccupancyGrid {
    let g = geometry();
    let occupancy = Array3::from_shape_fn(g.grid_dims(), |(r, a, e)| (r + 2 * a + e) % 3 == 0);
    OccupancyGrid { occupancy, geometry: g, frame_id: 7 }
}

fn cloud() -> PointCloud {
    PointCloud::from_xyz(&[[1.0, 2.0, 3.0], [-0.5, 0.25, 8.0], [4.0, -4.0, 0.0]], 7)
}

fn network() -> Network {
    let cfg = NetworkConfig { backbone_blocks: 1, base_channels: 2, groupnorm_groups: 1, seed: 5, ..Default::default() };
    build_network(&cfg, &geometry()).unwrap()
}

fn manifest() -> RunManifest {
    RunManifest {
        run_id: "generate-0123456789abcdef".into(),
        scene_spec_hash: "00ff".into(),
        detector: DetectorRef::Cfar { config: CfarConfig::default() },
        geometry: geometry(),
        created_at: "1970-01-01T00:00:00Z".into(),
        tool_version: "0.1.0".into(),
        seed: 3,
        files: vec![FileEntry {
            path: "cubes/seq0000_frame0000.rdc".into(),
            sha256: io::sha256_hex(&io::encode_cube(&cube())),
            kind: FileKind::Cube,
            sequence: Some(0),
            frame: Some(0),
        }],
    }
}

fn check(name: &str, bytes: &[u8]) {
    let path = golden_dir().join(name);
    if std::env::var_os("RADARPC_BLESS").is_some() {
        io::write_bytes(&path, bytes).unwrap();
    }
    let expected = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == bytes, "{name} differs from its golden file");
}

#[test]
fn cube_matches_golden() {
    let bytes = io::encode_cube(&cube());
    check("cube.rdc", &bytes);
    assert_eq!(io::decode_cube(&bytes).unwrap(), cube());
}

#[test]
fn grid_matches_golden() {
    let bytes = io::encode_grid(&grid());
    check("grid.rog", &bytes);
    assert_eq!(io::decode_grid(&bytes).unwrap(), grid());
}

#[test]
fn pointcloud_matches_golden() {
    let bytes = io::encode_pointcloud(&cloud());
    check("cloud.rpc", &bytes);
    assert_eq!(io::decode_pointcloud(&bytes).unwrap(), cloud());
}

#[test]
fn checkpoint_matches_golden() {
    let bytes = io::encode_checkpoint(&network());
    check("checkpoint.rck", &bytes);
    let back = io::decode_checkpoint(&bytes).unwrap();
    assert_eq!(back.params, network().params);
    assert_eq!(back.config, network().config);
}

#[test]
fn manifest_matches_golden() {
    let text = manifest().to_json();
    check("manifest.json", text.as_bytes());
    assert_eq!(RunManifest::from_json(&text).unwrap(), manifest());
}

#[test]
fn golden_files_decode_to_fixtures() {
    let read = |n: &str| std::fs::read(golden_dir().join(n)).unwrap();
    assert_eq!(io::decode_cube(&read("cube.rdc")).unwrap(), cube());
    assert_eq!(io::decode_grid(&read("grid.rog")).unwrap(), grid());
    assert_eq!(io::decode_pointcloud(&read("cloud.rpc")).unwrap(), cloud());
    assert_eq!(io::encode_checkpoint(&io::decode_checkpoint(&read("checkpoint.rck")).unwrap()), read("checkpoint.rck"));
}
