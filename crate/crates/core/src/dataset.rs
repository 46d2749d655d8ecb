//! Paired radar/ground-truth sequences used for training and evaluation.

use rayon::prelude::*;

use crate::cube::{render_ground_truth, render_radar_frames, CellGeometry, CubeError, RadarCubePair};
use crate::cube::{SceneSampler, SceneSpec};
use crate::grid::{OccupancyGrid, PointCloud};

/// One rendered scene: radar frames with their time-aligned references.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub scene: SceneSpec,
    pub cubes: Vec<RadarCubePair>,
    pub gt_clouds: Vec<PointCloud>,
    pub gt_grids: Vec<OccupancyGrid>,
}

impl Sequence {
    pub fn render(scene: SceneSpec, geometry: &CellGeometry) -> Result<Self, CubeError> {
        let cubes = render_radar_frames(&scene, geometry)?;
        let (gt_clouds, gt_grids) = render_ground_truth(&scene, geometry)?.into_iter().unzip();
        Ok(Self { scene, cubes, gt_clouds, gt_grids })
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    /// Frame indices of the window of `size` frames centered on `center`,
    /// replicating the first or last frame past either end.
    pub fn window_indices(&self, center: usize, size: usize) -> Vec<usize> {
        let half = (size / 2) as isize;
        let last = self.len() as isize - 1;
        (-half..=half).map(|o| (center as isize + o).clamp(0, last) as usize).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub geometry: CellGeometry,
    pub sequences: Vec<Sequence>,
}

impl Dataset {
    /// Samples `scenes` random scenes and renders them. Scene `i` is drawn
    /// from seed `seed + i`, so a dataset's prefix does not depend on its
    /// length.
    pub fn synthesize(
        sampler: &SceneSampler,
        geometry: &CellGeometry,
        scenes: usize,
        seed: u64,
    ) -> Result<Self, CubeError> {
        let sequences = (0..scenes as u64)
            .into_par_iter()
            .map(|i| Sequence::render(sampler.sample(geometry, seed.wrapping_add(i))?, geometry))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { geometry: *geometry, sequences })
    }

    pub fn from_scenes(scenes: Vec<SceneSpec>, geometry: &CellGeometry) -> Result<Self, CubeError> {
        let sequences = scenes
            .into_par_iter()
            .map(|s| Sequence::render(s, geometry))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { geometry: *geometry, sequences })
    }

    pub fn frame_count(&self) -> usize {
        self.sequences.iter().map(Sequence::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_count() == 0
    }

    /// `(sequence, frame)` for every frame in order.
    pub fn frames(&self) -> Vec<(usize, usize)> {
        self.sequences
            .iter()
            .enumerate()
            .flat_map(|(s, seq)| (0..seq.len()).map(move |f| (s, f)))
            .collect()
    }

    /// Splits whole sequences: the first `train` go left, the rest right.
    pub fn split_at(mut self, train: usize) -> (Dataset, Dataset) {
        let rest = self.sequences.split_off(train.min(self.sequences.len()));
        (Dataset { geometry: self.geometry, sequences: self.sequences }, Dataset { geometry: self.geometry, sequences: rest })
    }

    pub fn all_cubes(&self) -> impl Iterator<Item = &RadarCubePair> {
        self.sequences.iter().flat_map(|s| s.cubes.iter())
    }

    pub fn all_gt_grids(&self) -> impl Iterator<Item = &OccupancyGrid> {
        self.sequences.iter().flat_map(|s| s.gt_grids.iter())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_replicate_edges() {
        let g = CellGeometry::compact();
        let seq = Sequence::render(SceneSpec::empty(1, 4), &g).unwrap();
        assert_eq!(seq.window_indices(0, 3), vec![0, 0, 1]);
        assert_eq!(seq.window_indices(3, 3), vec![2, 3, 3]);
        assert_eq!(seq.window_indices(2, 1), vec![2]);
        assert_eq!(seq.window_indices(1, 5), vec![0, 0, 1, 2, 3]);
    }

    #[test]
    fn prefix_is_stable() {
        let g = CellGeometry::compact();
        let s = SceneSampler { frame_count: 2, ..SceneSampler::default() };
        let a = Dataset::synthesize(&s, &g, 2, 9).unwrap();
        let b = Dataset::synthesize(&s, &g, 3, 9).unwrap();
        assert_eq!(a.sequences[..], b.sequences[..2]);
        assert_eq!(b.frame_count(), 6);
        let (l, r) = b.split_at(1);
        assert_eq!((l.frame_count(), r.frame_count()), (2, 4));
    }
}
