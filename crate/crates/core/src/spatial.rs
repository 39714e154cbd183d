//! Exact k-d tree over 3D points with axis-aligned node bounds.
//!
//! Used for nearest-neighbor queries (ADD-S inner minimum) and for the
//! farthest-pair search behind [`crate::geometry::diameter`]. Every query is
//! exact: pruning only discards subtrees whose bounding box provably cannot
//! beat the current best.

use crate::geometry::Vec3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    index: Vec<usize>,
    nodes: Vec<Node>,
}

#[inline]
pub(crate) fn dist_sq(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

fn bounds(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = points[0];
    let mut hi = points[0];
    for p in &points[1..] {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

fn box_min_dist_sq(lo: &Vec3, hi: &Vec3, q: &Vec3) -> f64 {
    let mut d = 0.0;
    for k in 0..3 {
        let e = if q[k] < lo[k] {
            lo[k] - q[k]
        } else if q[k] > hi[k] {
            q[k] - hi[k]
        } else {
            0.0
        };
        d += e * e;
    }
    d
}

fn box_max_dist_sq(a_lo: &Vec3, a_hi: &Vec3, b_lo: &Vec3, b_hi: &Vec3) -> f64 {
    let mut d = 0.0;
    for k in 0..3 {
        let e = (a_hi[k] - b_lo[k]).abs().max((b_hi[k] - a_lo[k]).abs());
        d += e * e;
    }
    d
}

impl KdTree {
    /// Builds a tree over `points`. Panics on an empty slice.
    pub fn build(points: &[Vec3]) -> Self {
        assert!(!points.is_empty(), "k-d tree needs at least one point");
        let mut tree = KdTree {
            points: points.to_vec(),
            index: (0..points.len()).collect(),
            nodes: Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1),
        };
        tree.build_node(0, points.len());
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let (lo, hi) = bounds(&self.points[start..end]);
        let id = self.nodes.len();
        self.nodes.push(Node {
            lo,
            hi,
            start,
            end,
            children: None,
        });
        if end - start > LEAF_SIZE {
            let extent = hi - lo;
            let axis = extent.imax();
            let mid = start + (end - start) / 2;
            // sort the range by the split axis, keeping the index permutation in step
            let mut pairs: Vec<(Vec3, usize)> = self.points[start..end]
                .iter()
                .copied()
                .zip(self.index[start..end].iter().copied())
                .collect();
            pairs.select_nth_unstable_by(mid - start, |a, b| a.0[axis].total_cmp(&b.0[axis]));
            for (k, (p, i)) in pairs.into_iter().enumerate() {
                self.points[start + k] = p;
                self.index[start + k] = i;
            }
            let left = self.build_node(start, mid);
            let right = self.build_node(mid, end);
            self.nodes[id].children = Some((left, right));
        }
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Returns `(original_index, squared_distance)` of the nearest point.
    /// Ties go to the smallest original index.
    pub fn nearest(&self, q: &Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_in(0, q, &mut best);
        best
    }

    fn nearest_in(&self, id: usize, q: &Vec3, best: &mut (usize, f64)) {
        let node = &self.nodes[id];
        if box_min_dist_sq(&node.lo, &node.hi, q) > best.1 {
            return;
        }
        match node.children {
            None => {
                for k in node.start..node.end {
                    let d = dist_sq(&self.points[k], q);
                    let i = self.index[k];
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Some((l, r)) => {
                let dl = box_min_dist_sq(&self.nodes[l].lo, &self.nodes[l].hi, q);
                let dr = box_min_dist_sq(&self.nodes[r].lo, &self.nodes[r].hi, q);
                if dl <= dr {
                    self.nearest_in(l, q, best);
                    self.nearest_in(r, q, best);
                } else {
                    self.nearest_in(r, q, best);
                    self.nearest_in(l, q, best);
                }
            }
        }
    }

    /// Exact maximum squared distance between any two indexed points.
    pub fn farthest_pair_sq(&self) -> f64 {
        // seed the bound with a double sweep from the first point
        let p0 = self.points[0];
        let far = |q: &Vec3| {
            self.points
                .iter()
                .map(|p| (dist_sq(p, q), *p))
                .fold((0.0, *q), |a, b| if b.0 > a.0 { b } else { a })
        };
        let (_, a) = far(&p0);
        let (d, _) = far(&a);
        let mut best = d;
        self.farthest_in(0, 0, &mut best);
        best
    }

    fn farthest_in(&self, a: usize, b: usize, best: &mut f64) {
        let na = &self.nodes[a];
        let nb = &self.nodes[b];
        if box_max_dist_sq(&na.lo, &na.hi, &nb.lo, &nb.hi) <= *best {
            return;
        }
        match (na.children, nb.children) {
            (None, None) => {
                for i in na.start..na.end {
                    for j in nb.start..nb.end {
                        let d = dist_sq(&self.points[i], &self.points[j]);
                        if d > *best {
                            *best = d;
                        }
                    }
                }
            }
            (Some((al, ar)), None) => {
                self.farthest_in(al, b, best);
                self.farthest_in(ar, b, best);
            }
            (None, Some((bl, br))) => {
                self.farthest_in(a, bl, best);
                self.farthest_in(a, br, best);
            }
            (Some((al, ar)), Some((bl, br))) => {
                if a == b {
                    self.farthest_in(al, al, best);
                    self.farthest_in(al, ar, best);
                    self.farthest_in(ar, ar, best);
                } else {
                    self.farthest_in(al, bl, best);
                    self.farthest_in(al, br, best);
                    self.farthest_in(ar, bl, best);
                    self.farthest_in(ar, br, best);
                }
            }
        }
    }
}
