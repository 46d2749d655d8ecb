/// Static 3-d tree over a point set, answering exact nearest-neighbour
/// queries by squared Euclidean distance.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    point: usize,
    axis: u8,
    left: Option<u32>,
    right: Option<u32>,
}

impl KdTree {
    pub fn build(points: &[[f64; 3]]) -> Self {
        let mut tree = Self { points: points.to_vec(), nodes: Vec::with_capacity(points.len()) };
        let mut idx: Vec<usize> = (0..points.len()).collect();
        tree.build_rec(&mut idx, 0);
        tree
    }

    fn build_rec(&mut self, idx: &mut [usize], depth: usize) -> Option<u32> {
        if idx.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let mid = idx.len() / 2;
        let pts = &self.points;
        idx.select_nth_unstable_by(mid, |a, b| pts[*a][axis].total_cmp(&pts[*b][axis]));
        let slot = self.nodes.len();
        self.nodes.push(Node { point: idx[mid], axis: axis as u8, left: None, right: None });
        let (lo, rest) = idx.split_at_mut(mid);
        let left = self.build_rec(lo, depth + 1);
        let right = self.build_rec(&mut rest[1..], depth + 1);
        self.nodes[slot].left = left;
        self.nodes[slot].right = right;
        Some(slot as u32)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Squared distance from `q` to its nearest point, `None` on an empty tree.
    pub fn nearest_sq(&self, q: [f64; 3]) -> Option<f64> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = f64::INFINITY;
        self.search(0, q, &mut best);
        Some(best)
    }

    fn search(&self, node: u32, q: [f64; 3], best: &mut f64) {
        let n = self.nodes[node as usize];
        let d = squared_distance(self.points[n.point], q);
        if d < *best {
            *best = d;
        }
        let axis = n.axis as usize;
        let diff = q[axis] - self.points[n.point][axis];
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        if let Some(c) = near {
            self.search(c, q, best);
        }
        if let Some(c) = far {
            if diff * diff <= *best {
                self.search(c, q, best);
            }
        }
    }
}

#[inline]
pub fn squared_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}
