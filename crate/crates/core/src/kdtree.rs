//! Exact nearest-neighbor search over planar points.
//!
//! A static, implicitly stored 2-d tree: the point indices are permuted so that
//! every subrange `[lo, hi)` has its splitting point at `(lo + hi) / 2`. The
//! splitting axis is the one with the larger extent in that subrange.
//!
//! Ties are resolved towards the lowest point index, so query results never
//! depend on how the tree happened to be built.

use alloc::vec::Vec;

#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<[f64; 2]>,
    order: Vec<u32>,
    axis: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

impl Neighbor {
    pub fn distance(&self) -> f64 {
        crate::math::sqrt(self.dist_sq)
    }

    #[inline]
    fn precedes(&self, dist_sq: f64, index: usize) -> bool {
        self.dist_sq < dist_sq || (self.dist_sq == dist_sq && self.index < index)
    }
}

impl KdTree {
    pub fn build(points: &[[f64; 2]]) -> Self {
        assert!(points.len() < u32::MAX as usize);
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut axis = alloc::vec![0u8; points.len()];
        build_range(points, &mut order, &mut axis, 0, points.len());
        Self { points: points.to_vec(), order, axis }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// Exact nearest neighbor, or `None` on an empty tree.
    pub fn nearest(&self, q: [f64; 2]) -> Option<Neighbor> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = Neighbor { index: usize::MAX, dist_sq: f64::INFINITY };
        self.nearest_in(q, 0, self.points.len(), &mut best);
        Some(best)
    }

    fn nearest_in(&self, q: [f64; 2], lo: usize, hi: usize, best: &mut Neighbor) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid] as usize;
        let p = self.points[idx];
        let d = dist_sq(p, q);
        if !best.precedes(d, idx) {
            *best = Neighbor { index: idx, dist_sq: d };
        }
        let ax = self.axis[mid] as usize;
        let diff = q[ax] - p[ax];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.nearest_in(q, near.0, near.1, best);
        // `<=` keeps equidistant candidates with a lower index reachable
        if diff * diff <= best.dist_sq {
            self.nearest_in(q, far.0, far.1, best);
        }
    }

    /// The `k` nearest neighbors ordered by distance then index.
    pub fn k_nearest(&self, q: [f64; 2], k: usize) -> Vec<Neighbor> {
        let mut out = Vec::with_capacity(k + 1);
        if k > 0 {
            self.knn_in(q, k, 0, self.points.len(), &mut out);
        }
        out
    }

    fn knn_in(&self, q: [f64; 2], k: usize, lo: usize, hi: usize, out: &mut Vec<Neighbor>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid] as usize;
        let p = self.points[idx];
        let d = dist_sq(p, q);
        if out.len() < k || !out[k - 1].precedes(d, idx) {
            let pos = out.partition_point(|n| n.precedes(d, idx));
            out.insert(pos, Neighbor { index: idx, dist_sq: d });
            out.truncate(k);
        }
        let ax = self.axis[mid] as usize;
        let diff = q[ax] - p[ax];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.knn_in(q, k, near.0, near.1, out);
        if out.len() < k || diff * diff <= out[k - 1].dist_sq {
            self.knn_in(q, k, far.0, far.1, out);
        }
    }
}

#[inline]
fn dist_sq(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

fn build_range(points: &[[f64; 2]], order: &mut [u32], axis: &mut [u8], lo: usize, hi: usize) {
    if hi - lo <= 1 {
        return;
    }
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for &i in &order[lo..hi] {
        let p = points[i as usize];
        for a in 0..2 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
    }
    let ax = usize::from(max[1] - min[1] > max[0] - min[0]);
    let mid = (lo + hi) / 2;
    order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
        points[a as usize][ax].total_cmp(&points[b as usize][ax]).then(a.cmp(&b))
    });
    axis[mid] = ax as u8;
    build_range(points, order, axis, lo, mid);
    build_range(points, order, axis, mid + 1, hi);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_nearest(pts: &[[f64; 2]], q: [f64; 2]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in pts.iter().enumerate() {
            let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn two_points() {
        let t = KdTree::build(&[[0.0, 0.0], [2.0, 0.0]]);
        let n = t.nearest([0.4, 0.0]).unwrap();
        assert_eq!(n.index, 0);
        assert!((n.distance() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn tie_goes_to_lowest_index() {
        let t = KdTree::build(&[[0.0, 0.0], [2.0, 0.0]]);
        assert_eq!(t.nearest([1.0, 0.0]).unwrap().index, 0);
        let t = KdTree::build(&[[2.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.0, -1.0]]);
        assert_eq!(t.nearest([1.0, 0.0]).unwrap().index, 0);
        // duplicates
        let pts = alloc::vec![[1.0, 1.0]; 17];
        assert_eq!(KdTree::build(&pts).nearest([0.0, 0.0]).unwrap().index, 0);
    }

    #[test]
    fn empty_tree() {
        assert!(KdTree::build(&[]).nearest([0.0, 0.0]).is_none());
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<[f64; 2]> =
            (0..1000).map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]).collect();
        let t = KdTree::build(&pts);
        for _ in 0..100 {
            let q = [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)];
            let n = t.nearest(q).unwrap();
            let (bi, bd) = brute_nearest(&pts, q);
            assert_eq!(n.index, bi);
            assert_eq!(n.dist_sq, bd);
        }
    }

    #[test]
    fn knn_matches_sorted_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // grid points produce many exact ties
        let mut pts: Vec<[f64; 2]> =
            (0..300).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        for i in 0..10 {
            for j in 0..10 {
                pts.push([i as f64 * 0.25, j as f64 * 0.25]);
            }
        }
        let t = KdTree::build(&pts);
        for _ in 0..50 {
            let q = [
                rng.random_range(0..10) as f64 * 0.125,
                rng.random_range(0..10) as f64 * 0.125,
            ];
            let mut all: Vec<(f64, usize)> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2), i))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let got: Vec<usize> = t.k_nearest(q, 20).iter().map(|n| n.index).collect();
            let want: Vec<usize> = all[..20].iter().map(|x| x.1).collect();
            assert_eq!(got, want);
        }
    }
}
