use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use super::{BinAxis, CellGeometry, CubeError, RadarCubePair, SceneSpec, Target};
use crate::grid::{cartesian_to_spherical, voxelize, FeatureLayout, OccupancyGrid, PointCloud};

const RADAR_STREAM: u64 = 0;
const TRUTH_STREAM: u64 = 1;

fn frame_rng(seed: u64, frame: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame.wrapping_mul(2).wrapping_add(stream));
    rng
}

/// Renders every frame of `spec`. Frames are independent and rendered in
/// parallel; the output does not depend on scheduling.
pub fn render_radar_frames(
    spec: &SceneSpec,
    geometry: &CellGeometry,
) -> Result<Vec<RadarCubePair>, CubeError> {
    spec.validate(geometry)?;
    Ok((0..spec.frame_count as u64)
        .into_par_iter()
        .map(|f| render_frame_unchecked(spec, geometry, f))
        .collect())
}

/// Renders a single frame of `spec`.
pub fn render_frame(
    spec: &SceneSpec,
    geometry: &CellGeometry,
    frame_id: u64,
) -> Result<RadarCubePair, CubeError> {
    spec.validate(geometry)?;
    Ok(render_frame_unchecked(spec, geometry, frame_id))
}

/// Cells of one axis touched by `[lo, hi]` with their coverage weight.
///
/// A single touched cell gets weight 1. Otherwise interior cells get 1 and
/// the two end cells the covered fraction of their width.
fn axis_weights(axis: BinAxis, lo: f64, hi: f64) -> Vec<(usize, f64)> {
    let lo = lo.clamp(axis.extent.min, axis.extent.max);
    let hi = hi.clamp(axis.extent.min, axis.extent.max);
    let (b_lo, b_hi) = (axis.bin_clamped(lo), axis.bin_clamped(hi));
    if b_lo == b_hi {
        return vec![(b_lo, 1.0)];
    }
    let w = axis.width();
    (b_lo..=b_hi)
        .filter_map(|b| {
            let weight = if b == b_lo || b == b_hi {
                let (c0, c1) = axis.edges(b);
                ((hi.min(c1) - lo.max(c0)) / w).clamp(0.0, 1.0)
            } else {
                1.0
            };
            (weight > 0.0).then_some((b, weight))
        })
        .collect()
}

struct Footprint {
    range: Vec<(usize, f64)>,
    azimuth: Vec<(usize, f64)>,
    doppler: usize,
    /// Elevation seen in each entry of `range`.
    elevation: Vec<f64>,
}

fn footprint(target: &Target, spec: &SceneSpec, geometry: &CellGeometry, frame: u64) -> Footprint {
    let t = spec.frame_time(frame);
    let c = target.center_at(t, spec.ego_velocity);
    let h = target.half_extents;

    // Closest point of the box to the sensor gives the near range.
    let closest = [0, 1, 2].map(|k| 0f64.clamp(c[k] - h[k], c[k] + h[k]));
    let r_lo = (closest[0].powi(2) + closest[1].powi(2) + closest[2].powi(2)).sqrt();
    let mut r_hi = 0f64;
    let (mut az_lo, mut az_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for corner in 0..8 {
        let p = [0, 1, 2].map(|k| c[k] + if corner >> k & 1 == 1 { h[k] } else { -h[k] });
        let (r, az, _) = cartesian_to_spherical(p);
        r_hi = r_hi.max(r);
        az_lo = az_lo.min(az);
        az_hi = az_hi.max(az);
    }
    let (_, _, el_c) = cartesian_to_spherical(c);
    let v = target.observed_radial_velocity(t, spec.ego_velocity);
    let range = axis_weights(geometry.range_axis(), r_lo, r_hi);
    // Surface points at slant range r sit at height c.z, hence elevation asin(z / r).
    let elevation = range
        .iter()
        .map(|&(b, _)| {
            let r = geometry.range_axis().center(b).max(r_lo).min(r_hi);
            if r > 0.0 && h[2] == 0.0 { (c[2] / r).clamp(-1.0, 1.0).asin() } else { el_c }
        })
        .map(|e| e.clamp(geometry.elevation_extent.min, geometry.elevation_extent.max))
        .collect();
    Footprint {
        range,
        azimuth: axis_weights(geometry.azimuth_axis(), az_lo, az_hi),
        doppler: geometry.doppler_axis().bin_clamped(v),
        elevation,
    }
}

fn render_frame_unchecked(spec: &SceneSpec, geometry: &CellGeometry, frame: u64) -> RadarCubePair {
    let mut rng = frame_rng(spec.seed, frame, RADAR_STREAM);
    let dims = geometry.cube_dims();

    // Draw order is fixed: flicker, noise power, noise elevation.
    let present: Vec<bool> = spec
        .targets
        .iter()
        .map(|t| rng.random::<f64>() >= t.flicker_probability)
        .collect();
    let noise = Exp::new(1.0 / spec.noise_mean_power).expect("validated noise power");
    let mut power: Array3<f64> = Array3::from_shape_simple_fn(dims, || noise.sample(&mut rng));
    let ext = geometry.elevation_extent;
    let mut elevation: Array3<f64> =
        Array3::from_shape_simple_fn(dims, || rng.random_range(ext.min..ext.max));

    let mut owner_power: Array3<f64> = Array3::zeros(dims);
    for (target, _) in spec.targets.iter().zip(&present).filter(|(_, p)| **p) {
        let fp = footprint(target, spec, geometry, frame);
        for (&(r, wr), &el) in fp.range.iter().zip(&fp.elevation) {
            for &(a, wa) in &fp.azimuth {
                let added = target.reflectivity * wr * wa;
                let idx = (r, a, fp.doppler);
                power[idx] += added;
                if added > owner_power[idx] {
                    owner_power[idx] = added;
                    elevation[idx] = el;
                }
            }
        }
    }

    RadarCubePair {
        power: power.mapv(|v| v as f32),
        elevation: elevation.mapv(|v| v as f32),
        geometry: *geometry,
        frame_id: frame,
        timestamp: spec.frame_time(frame),
    }
}

/// Renders the LiDAR-like reference for every frame: a surface-sampled
/// point cloud and its voxelisation. Flicker does not apply here.
pub fn render_ground_truth(
    spec: &SceneSpec,
    geometry: &CellGeometry,
) -> Result<Vec<(PointCloud, OccupancyGrid)>, CubeError> {
    spec.validate(geometry)?;
    Ok((0..spec.frame_count as u64)
        .into_par_iter()
        .map(|f| render_truth_unchecked(spec, geometry, f))
        .collect())
}

pub fn render_ground_truth_frame(
    spec: &SceneSpec,
    geometry: &CellGeometry,
    frame_id: u64,
) -> Result<(PointCloud, OccupancyGrid), CubeError> {
    spec.validate(geometry)?;
    Ok(render_truth_unchecked(spec, geometry, frame_id))
}

fn render_truth_unchecked(
    spec: &SceneSpec,
    geometry: &CellGeometry,
    frame: u64,
) -> (PointCloud, OccupancyGrid) {
    let mut rng = frame_rng(spec.seed, frame, TRUTH_STREAM);
    let t = spec.frame_time(frame);
    let mut rows: Vec<[f32; 4]> = Vec::new();
    for target in &spec.targets {
        let c = target.center_at(t, spec.ego_velocity);
        let h = target.half_extents;
        let power = target.reflectivity as f32;
        let before = rows.len();
        // Each face is normal to axis `k`, at offset ±h[k], spanning the
        // other two axes.
        for k in 0..3 {
            let (u, v) = ((k + 1) % 3, (k + 2) % 3);
            let area = 4.0 * h[u] * h[v];
            let n = (area * target.surface_point_density).round() as usize;
            for sign in [-1.0, 1.0] {
                for _ in 0..n {
                    let mut p = c;
                    p[k] += sign * h[k];
                    p[u] += h[u] * rng.random_range(-1.0..=1.0);
                    p[v] += h[v] * rng.random_range(-1.0..=1.0);
                    rows.push([p[0] as f32, p[1] as f32, p[2] as f32, power]);
                }
            }
        }
        if rows.len() == before {
            rows.push([c[0] as f32, c[1] as f32, c[2] as f32, power]);
        }
    }
    let mut points = Array2::zeros((rows.len(), 4));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            points[(i, j)] = *v;
        }
    }
    let cloud = PointCloud { points, layout: FeatureLayout::Lidar, frame_id: frame };
    let grid = voxelize(&cloud, geometry).grid;
    (cloud, grid)
}
