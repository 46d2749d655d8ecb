use ndarray::Array3;
use proptest::prelude::*;

use radarpc_core::cfar::{ca_alpha, CfarDetector};
use radarpc_core::grid::{grid_to_pointcloud, voxelize};
use radarpc_core::io;
use radarpc_core::metrics::{chamfer_brute_force, chamfer_positions, detection_stats};
use radarpc_core::net::{focal_loss, focal_term};
use radarpc_core::*;

fn small_geometry() -> CellGeometry {
    CellGeometry {
        range_bins: 4,
        azimuth_bins: 4,
        elevation_bins: 4,
        doppler_bins: 3,
        range_extent: Extent::new(1.0, 9.0),
        azimuth_extent: Extent::new(-0.8, 0.8),
        elevation_extent: Extent::new(-0.4, 0.4),
        doppler_extent: Extent::new(-3.0, 3.0),
    }
}

fn grid_from_bits(g: CellGeometry, bits: &[bool], frame_id: u64) -> OccupancyGrid {
    let occupancy = Array3::from_shape_vec(g.grid_dims(), bits.to_vec()).unwrap();
    OccupancyGrid { occupancy, geometry: g, frame_id }
}

fn point() -> impl Strategy<Value = [f64; 3]> {
    [-30.0..30.0f64, -30.0..30.0f64, -30.0..30.0f64]
}

fn cloud(max: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(point(), 1..max)
}

fn cube(g: CellGeometry, power: Vec<f32>, frame_id: u64) -> RadarCubePair {
    let ext = g.elevation_extent;
    let elevation = Array3::from_shape_fn(g.cube_dims(), |(r, a, d)| {
        let t = ((r * 7 + a * 3 + d) % 11) as f64 / 11.0;
        (ext.min + t * ext.span()) as f32
    });
    RadarCubePair {
        power: Array3::from_shape_vec(g.cube_dims(), power).unwrap(),
        elevation,
        geometry: g,
        frame_id,
        timestamp: frame_id as f64 * 0.1,
    }
}

fn cfar_geometry() -> CellGeometry {
    CellGeometry { range_bins: 40, azimuth_bins: 3, doppler_bins: 4, ..small_geometry() }
}

fn cfar_cube() -> impl Strategy<Value = RadarCubePair> {
    let g = cfar_geometry();
    let n = g.range_bins * g.azimuth_bins * g.doppler_bins;
    prop::collection::vec(0.0f32..20.0, n).prop_map(move |p| cube(g, p, 0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grid_survives_pointcloud_round_trip(bits in prop::collection::vec(any::<bool>(), 64), frame in any::<u64>()) {
        let grid = grid_from_bits(small_geometry(), &bits, frame);
        let cloud = grid_to_pointcloud(&grid, None, None).unwrap();
        prop_assert_eq!(cloud.len(), grid.count());
        let back = voxelize(&cloud, &small_geometry());
        prop_assert_eq!(back.dropped, 0);
        prop_assert_eq!(back.grid, grid);
    }

    #[test]
    fn pointcloud_rows_keep_voxel_centre_norm(bits in prop::collection::vec(any::<bool>(), 64)) {
        let g = small_geometry();
        let grid = grid_from_bits(g, &bits, 0);
        let cloud = grid_to_pointcloud(&grid, None, None).unwrap();
        let ranges: Vec<usize> = grid.occupancy.indexed_iter().filter(|(_, v)| **v).map(|((r, _, _), _)| r).collect();
        for (i, r) in ranges.into_iter().enumerate() {
            let p = cloud.xyz(i);
            let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            prop_assert!((norm - g.range_axis().center(r)).abs() < 1e-5);
        }
    }

    #[test]
    fn chamfer_matches_brute_force(a in cloud(120), b in cloud(120)) {
        let fast = chamfer_positions(&a, &b).unwrap();
        let slow = chamfer_brute_force(&a, &b).unwrap();
        prop_assert!((fast - slow).abs() <= 1e-9, "{} vs {}", fast, slow);
    }

    #[test]
    fn chamfer_is_symmetric_and_zero_on_self(a in cloud(80), b in cloud(80)) {
        prop_assert_eq!(chamfer_positions(&a, &a).unwrap(), 0.0);
        let ab = chamfer_positions(&a, &b).unwrap();
        let ba = chamfer_positions(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn chamfer_is_translation_invariant(a in cloud(60), b in cloud(60), t in point()) {
        let shift = |c: &[[f64; 3]]| c.iter().map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]]).collect::<Vec<_>>();
        let d0 = chamfer_positions(&a, &b).unwrap();
        let d1 = chamfer_positions(&shift(&a), &shift(&b)).unwrap();
        prop_assert!((d0 - d1).abs() <= 1e-9 * d0.max(1.0));
    }

    #[test]
    fn chamfer_of_single_points_is_twice_their_distance(p in point(), q in point()) {
        let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
        prop_assert!((chamfer_positions(&[p], &[q]).unwrap() - 2.0 * d).abs() <= 1e-9 * d.max(1.0));
    }

    #[test]
    fn detection_counts_partition_the_grid(a in prop::collection::vec(any::<bool>(), 64), b in prop::collection::vec(any::<bool>(), 64)) {
        let g = small_geometry();
        let s = detection_stats(&grid_from_bits(g, &a, 0), &grid_from_bits(g, &b, 0)).unwrap();
        let tn = a.iter().zip(&b).filter(|(p, t)| !**p && !**t).count();
        prop_assert_eq!(s.tp + s.fp + s.fn_ + tn, 64);
        if let Some(pd) = s.p_d { prop_assert!((0.0..=1.0).contains(&pd)); }
        if let Some(pfa) = s.p_fa { prop_assert!((0.0..=1.0).contains(&pfa)); }
    }

    #[test]
    fn cfar_is_scale_invariant(c in cfar_cube(), k in 0usize..3) {
        let scale = [0.5f32, 4.0, 64.0][k];
        let det = CfarDetector::new(CfarConfig::default()).unwrap();
        let mut scaled = c.clone();
        scaled.power.mapv_inplace(|v| v * scale);
        prop_assert_eq!(det.detect_mask(&c).unwrap(), det.detect_mask(&scaled).unwrap());
    }

    #[test]
    fn cfar_variants_nest_at_equal_alpha(c in cfar_cube(), alpha in 1.0f64..12.0) {
        let mask = |v| {
            let cfg = CfarConfig::new(v);
            CfarDetector::with_fixed_alpha(cfg, alpha).unwrap().detect_mask(&c).unwrap().detections
        };
        let (goca, ca, soca) = (mask(CfarVariant::Goca), mask(CfarVariant::Ca), mask(CfarVariant::Soca));
        for ((g, a), s) in goca.iter().zip(ca.iter()).zip(soca.iter()) {
            prop_assert!(!*g || *a);
            prop_assert!(!*a || *s);
        }
    }

    #[test]
    fn cfar_detections_shrink_as_alpha_grows(c in cfar_cube(), lo in 1.0f64..6.0, step in 0.1f64..6.0) {
        for v in [CfarVariant::Ca, CfarVariant::Os] {
            let cfg = CfarConfig::new(v);
            let loose = CfarDetector::with_fixed_alpha(cfg, lo).unwrap().detect_mask(&c).unwrap().detections;
            let tight = CfarDetector::with_fixed_alpha(cfg, lo + step).unwrap().detect_mask(&c).unwrap().detections;
            for (t, l) in tight.iter().zip(loose.iter()) {
                prop_assert!(!*t || *l);
            }
        }
    }

    #[test]
    fn focal_loss_is_non_negative_and_decreases_toward_the_label(z in -30.0f64..30.0, y in any::<bool>(), alpha in 0.01f64..0.99, gamma in 0.0f64..4.0) {
        let (l, g) = focal_term(z, y, alpha, gamma);
        prop_assert!(l >= 0.0);
        if y { prop_assert!(g <= 0.0) } else { prop_assert!(g >= 0.0) }
    }

    #[test]
    fn focal_reduces_to_half_cross_entropy(z in -20.0f64..20.0, y in any::<bool>()) {
        let ce = if y { (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        let (l, _) = focal_loss(&[z], &[y], 0.5, 0.0).unwrap();
        prop_assert!((l - 0.5 * ce).abs() <= 1e-12 * ce.max(1.0));
    }

    #[test]
    fn cube_bytes_round_trip(power in prop::collection::vec(0.0f32..1e6, 48), frame in any::<u64>()) {
        let c = cube(small_geometry(), power, frame);
        prop_assert_eq!(io::decode_cube(&io::encode_cube(&c)).unwrap(), c);
    }

    #[test]
    fn grid_bytes_round_trip(bits in prop::collection::vec(any::<bool>(), 64), frame in any::<u64>()) {
        let g = grid_from_bits(small_geometry(), &bits, frame);
        let bytes = io::encode_grid(&g);
        prop_assert_eq!(io::decode_grid(&bytes).unwrap(), g);
    }

    #[test]
    fn pointcloud_bytes_round_trip(pts in prop::collection::vec(point(), 0..50), frame in any::<u64>()) {
        let mut c = PointCloud::from_xyz(&pts, frame);
        c.points.mapv_inplace(|v| (v * 3.0).round() / 3.0);
        prop_assert_eq!(io::decode_pointcloud(&io::encode_pointcloud(&c)).unwrap(), c);
    }

    #[test]
    fn truncated_grid_bytes_are_rejected(bits in prop::collection::vec(any::<bool>(), 64), cut in 1usize..20) {
        let bytes = io::encode_grid(&grid_from_bits(small_geometry(), &bits, 0));
        prop_assert!(io::decode_grid(&bytes[..bytes.len() - cut]).is_err());
    }
}

#[test]
fn closed_form_alpha_for_sixteen_cells() {
    let a = ca_alpha(16, 1e-3);
    let oracle = 16.0 * (1e-3f64.powf(-1.0 / 16.0) - 1.0);
    assert!((a - oracle).abs() < 1e-12);
    assert!((a - 8.639).abs() < 1e-3);
}
