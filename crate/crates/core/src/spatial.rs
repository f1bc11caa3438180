//! Uniform grid-hash index for nearest-neighbor queries.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rustc_hash::FxHashMap;

use crate::geometry::{dist2, Aabb, Point};

type Cell = [i64; 3];

/// Immutable point index bucketing points into cubic cells.
///
/// Queries visit cells in growing Chebyshev shells around the query cell and
/// stop once no unvisited shell can hold a closer point, so results are exact.
#[derive(Debug, Clone)]
pub struct PointIndex {
    points: Vec<Point>,
    cell_size: f64,
    cells: FxHashMap<Cell, (u32, u32)>,
    order: Vec<u32>,
    lo: Cell,
    hi: Cell,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    index: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PointIndex {
    /// Build with a cell size picked from the bounding box and point count,
    /// assuming points sample a surface.
    pub fn new(points: Vec<Point>) -> Self {
        let cell = match Aabb::from_points(&points) {
            Some(bb) if bb.diagonal() > 0.0 => {
                2.0 * bb.diagonal() / (points.len() as f64).sqrt().max(1.0)
            }
            _ => 1.0,
        };
        Self::with_cell_size(points, cell)
    }

    pub fn with_cell_size(points: Vec<Point>, cell_size: f64) -> Self {
        assert!(cell_size > 0.0 && cell_size.is_finite());
        let keys: Vec<Cell> = points.iter().map(|p| cell_of(p, cell_size)).collect();
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        order.sort_by_key(|&i| (keys[i as usize], i));
        let mut cells = FxHashMap::default();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        let mut start = 0usize;
        while start < order.len() {
            let key = keys[order[start] as usize];
            let mut end = start + 1;
            while end < order.len() && keys[order[end] as usize] == key {
                end += 1;
            }
            cells.insert(key, (start as u32, end as u32));
            for a in 0..3 {
                lo[a] = lo[a].min(key[a]);
                hi[a] = hi[a].max(key[a]);
            }
            start = end;
        }
        Self {
            points,
            cell_size,
            cells,
            order,
            lo,
            hi,
        }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn bucket(&self, key: &Cell) -> &[u32] {
        match self.cells.get(key) {
            Some(&(s, e)) => &self.order[s as usize..e as usize],
            None => &[],
        }
    }

    /// Visit every cell in Chebyshev shell `r` around `c`, clipped to the
    /// occupied key range. Returns false when the shell misses the range.
    fn visit_shell(&self, c: &Cell, r: i64, mut f: impl FnMut(&[u32])) -> bool {
        let lo: [i64; 3] = std::array::from_fn(|a| (c[a] - r).max(self.lo[a]));
        let hi: [i64; 3] = std::array::from_fn(|a| (c[a] + r).min(self.hi[a]));
        if (0..3).any(|a| lo[a] > hi[a]) {
            return false;
        }
        for i in lo[0]..=hi[0] {
            let on_x = (i - c[0]).abs() == r;
            for j in lo[1]..=hi[1] {
                let on_xy = on_x || (j - c[1]).abs() == r;
                if on_xy {
                    for k in lo[2]..=hi[2] {
                        f(self.bucket(&[i, j, k]));
                    }
                } else {
                    for k in [c[2] - r, c[2] + r] {
                        if k >= lo[2] && k <= hi[2] {
                            f(self.bucket(&[i, j, k]));
                        }
                        if r == 0 {
                            break;
                        }
                    }
                }
            }
        }
        true
    }

    /// Largest shell radius that can still intersect the occupied key range.
    fn max_shell(&self, c: &Cell) -> i64 {
        (0..3)
            .map(|a| (c[a] - self.lo[a]).abs().max((self.hi[a] - c[a]).abs()))
            .max()
            .unwrap_or(0)
    }

    /// Nearest point as `(index, squared distance)`; ties resolve to the lower index.
    pub fn nearest(&self, q: &Point) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let c = cell_of(q, self.cell_size);
        let mut best = Candidate {
            d2: f64::INFINITY,
            index: u32::MAX,
        };
        let max_r = self.max_shell(&c);
        for r in 0..=max_r {
            self.visit_shell(&c, r, |bucket| {
                for &i in bucket {
                    let cand = Candidate {
                        d2: dist2(q, &self.points[i as usize]),
                        index: i,
                    };
                    if cand < best {
                        best = cand;
                    }
                }
            });
            let reach = r as f64 * self.cell_size;
            if best.index != u32::MAX && best.d2 < reach * reach {
                break;
            }
        }
        Some((best.index as usize, best.d2))
    }

    /// The `k` nearest points sorted by distance (fewer if the index is smaller).
    pub fn knn(&self, q: &Point, k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let c = cell_of(q, self.cell_size);
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        let max_r = self.max_shell(&c);
        for r in 0..=max_r {
            self.visit_shell(&c, r, |bucket| {
                for &i in bucket {
                    let cand = Candidate {
                        d2: dist2(q, &self.points[i as usize]),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            });
            let reach = r as f64 * self.cell_size;
            if heap.len() == k && heap.peek().unwrap().d2 < reach * reach {
                break;
            }
        }
        let mut out: Vec<(usize, f64)> = heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| (c.index as usize, c.d2))
            .collect();
        out.truncate(k);
        out
    }

    /// Indices of all points within `radius` (closed ball), in ascending index order.
    pub fn within(&self, q: &Point, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if self.points.is_empty() || radius < 0.0 {
            return out;
        }
        let r2 = radius * radius;
        let lo = cell_of(&(q - nalgebra::Vector3::repeat(radius)), self.cell_size);
        let hi = cell_of(&(q + nalgebra::Vector3::repeat(radius)), self.cell_size);
        for i in lo[0].max(self.lo[0])..=hi[0].min(self.hi[0]) {
            for j in lo[1].max(self.lo[1])..=hi[1].min(self.hi[1]) {
                for k in lo[2].max(self.lo[2])..=hi[2].min(self.hi[2]) {
                    for &p in self.bucket(&[i, j, k]) {
                        if dist2(q, &self.points[p as usize]) <= r2 {
                            out.push(p as usize);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Distance to the nearest indexed point, or infinity when empty.
    pub fn distance(&self, q: &Point) -> f64 {
        self.nearest(q).map_or(f64::INFINITY, |(_, d2)| d2.sqrt())
    }
}

fn cell_of(p: &Point, size: f64) -> Cell {
    [
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Point::new(rng.random(), rng.random(), rng.random::<f64>() * 0.1))
            .collect()
    }

    fn brute(points: &[Point], q: &Point) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = dist2(q, p);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn nearest_matches_scan() {
        let pts = random_points(500, 1);
        let idx = PointIndex::new(pts.clone());
        let queries = random_points(200, 2);
        for q in queries.iter().chain([Point::new(5.0, -3.0, 2.0)].iter()) {
            assert_eq!(idx.nearest(q).unwrap(), brute(&pts, q));
        }
    }

    #[test]
    fn knn_matches_sort() {
        let pts = random_points(300, 3);
        let idx = PointIndex::with_cell_size(pts.clone(), 0.05);
        for q in random_points(50, 4) {
            let mut all: Vec<(usize, f64)> =
                pts.iter().enumerate().map(|(i, p)| (i, dist2(&q, p))).collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            assert_eq!(idx.knn(&q, 7), all[..7].to_vec());
        }
    }

    #[test]
    fn within_is_closed_ball() {
        let pts = vec![Point::origin(), Point::new(1.0, 0.0, 0.0)];
        let idx = PointIndex::with_cell_size(pts, 0.3);
        assert_eq!(idx.within(&Point::origin(), 1.0), vec![0, 1]);
        assert_eq!(idx.within(&Point::origin(), 0.999), vec![0]);
    }
}
