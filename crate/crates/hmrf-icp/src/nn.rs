//! Exact nearest-neighbor search over the fixed cloud.
//!
//! The index is a kd-tree with a fully deterministic build (splits ordered by
//! coordinate, then point index) and a deterministic tie rule: among
//! equidistant candidates the lowest fixed-point index wins. Queries are
//! exact, never approximate, so the returned distances are true minima.

use crate::geometry::{FixedCloud, Point3, StructuredCloud};
use thiserror::Error;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("cannot build an index over an empty cloud")]
    EmptyCloud,
    #[error("free cloud has no valid points")]
    NoValidPoints,
}

enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// Spatial index over a [`FixedCloud`].
pub struct NnIndex {
    points: Vec<Point3>,
    // Permutation of original fixed-cloud indices; leaves reference ranges.
    order: Vec<usize>,
    root: Node,
}

fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

fn coord(p: &Point3, axis: usize) -> f64 {
    match axis {
        0 => p.x,
        1 => p.y,
        _ => p.z,
    }
}

impl NnIndex {
    /// Builds the index in O(n log n) expected time.
    pub fn build(fixed: &FixedCloud) -> Result<Self, NnError> {
        if fixed.is_empty() {
            return Err(NnError::EmptyCloud);
        }
        let points = fixed.points.clone();
        let mut order: Vec<usize> = (0..points.len()).collect();
        let root = Self::build_node(&points, &mut order, 0);
        Ok(Self {
            points,
            order,
            root,
        })
    }

    /// `order` is the sub-slice being organized; `offset` is its position in
    /// the full permutation so leaves can reference global ranges.
    fn build_node(points: &[Point3], order: &mut [usize], offset: usize) -> Node {
        let len = order.len();
        if len <= LEAF_SIZE {
            return Node::Leaf {
                start: offset,
                end: offset + len,
            };
        }
        // Split on the axis of largest spread.
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in order.iter() {
            for axis in 0..3 {
                let c = coord(&points[i], axis);
                lo[axis] = lo[axis].min(c);
                hi[axis] = hi[axis].max(c);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap())
            .unwrap();
        if hi[axis] - lo[axis] == 0.0 {
            // All points coincide; no useful split.
            return Node::Leaf {
                start: offset,
                end: offset + len,
            };
        }
        let mid = len / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            coord(&points[a], axis)
                .partial_cmp(&coord(&points[b], axis))
                .unwrap()
                .then_with(|| a.cmp(&b))
        });
        let value = coord(&points[order[mid]], axis);
        let (left_slice, right_slice) = order.split_at_mut(mid);
        let left = Box::new(Self::build_node(points, left_slice, offset));
        let right = Box::new(Self::build_node(points, right_slice, offset + mid));
        Node::Split {
            axis,
            value,
            left,
            right,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Exact nearest neighbor of `q`: the fixed-point index minimizing the
    /// Euclidean distance, lowest index on ties, plus that distance.
    pub fn nearest(&self, q: &Point3) -> (usize, f64) {
        self.nearest_impl(q, usize::MAX)
    }

    /// Nearest neighbor ignoring the entry with fixed-point index `skip`.
    /// Returns distance infinity for a single-point index.
    pub(crate) fn nearest_excluding(&self, q: &Point3, skip: usize) -> (usize, f64) {
        self.nearest_impl(q, skip)
    }

    fn nearest_impl(&self, q: &Point3, skip: usize) -> (usize, f64) {
        let mut best_d2 = f64::INFINITY;
        let mut best_id = usize::MAX;
        self.search(&self.root, q, skip, &mut best_d2, &mut best_id);
        (best_id, best_d2.sqrt())
    }

    fn search(&self, node: &Node, q: &Point3, skip: usize, best_d2: &mut f64, best_id: &mut usize) {
        match node {
            Node::Leaf { start, end } => {
                for &id in &self.order[*start..*end] {
                    if id == skip {
                        continue;
                    }
                    let d2 = dist2(q, &self.points[id]);
                    if d2 < *best_d2 || (d2 == *best_d2 && id < *best_id) {
                        *best_d2 = d2;
                        *best_id = id;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let qc = coord(q, *axis);
                let diff = qc - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, skip, best_d2, best_id);
                // Descend on equality too, so equidistant candidates across
                // the plane still get index-based tie-breaking.
                if diff * diff <= *best_d2 {
                    self.search(far, q, skip, best_d2, best_id);
                }
            }
        }
    }
}

/// Closest-point indices and distances, one entry per valid free pixel in
/// row-major order. `width`/`height` carry the generating lattice so that
/// downstream consumers can rebuild neighbor relations.
#[derive(Debug, Clone)]
pub struct Correspondences {
    pub width: usize,
    pub height: usize,
    /// Lattice index (v * width + u) of each valid pixel.
    pub pixels: Vec<usize>,
    /// Index into the fixed cloud of the closest point.
    pub indices: Vec<usize>,
    /// Euclidean distance to that closest point, in meters.
    pub distances: Vec<f64>,
}

impl Correspondences {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Queries the index once per valid pixel of `free`. Results are identical
/// to calling [`NnIndex::nearest`] point by point.
pub fn batch_nearest(index: &NnIndex, free: &StructuredCloud) -> Result<Correspondences, NnError> {
    let n = free.valid_count();
    if n == 0 {
        return Err(NnError::NoValidPoints);
    }
    let mut pixels = Vec::with_capacity(n);
    let mut indices = Vec::with_capacity(n);
    let mut distances = Vec::with_capacity(n);
    for (i, (p, v)) in free.points.iter().zip(free.valid.iter()).enumerate() {
        if !*v {
            continue;
        }
        let (idx, d) = index.nearest(p);
        pixels.push(i);
        indices.push(idx);
        distances.push(d);
    }
    Ok(Correspondences {
        width: free.width,
        height: free.height,
        pixels,
        indices,
        distances,
    })
}
