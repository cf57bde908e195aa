use super::{GeometryError, GeometryResult, Vec3};

pub const DEFAULT_LEAF_SIZE: usize = 16;

/// One k-NN result: point index and Euclidean distance to the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Balanced k-d tree over a fixed position array.
///
/// Results are ordered by `(squared distance, index)`, so equidistant points
/// come back lowest index first and agree exactly with a brute-force scan.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<[f64; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    leaf_size: usize,
}

#[inline]
pub(crate) fn squared_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl SpatialIndex {
    pub fn build(points: &[Vec3]) -> Self {
        Self::with_leaf_size(points, DEFAULT_LEAF_SIZE)
    }

    pub fn with_leaf_size(points: &[Vec3], leaf_size: usize) -> Self {
        let leaf_size = leaf_size.max(1);
        let points: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            Self::build_node(&points, &mut order, 0, points.len(), leaf_size, &mut nodes);
        }
        Self {
            points,
            order,
            nodes,
            leaf_size,
        }
    }

    fn build_node(
        points: &[[f64; 3]],
        order: &mut [usize],
        start: usize,
        end: usize,
        leaf_size: usize,
        nodes: &mut Vec<Node>,
    ) -> usize {
        let id = nodes.len();
        if end - start <= leaf_size {
            nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(points[i][a]);
                hi[a] = hi[a].max(points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] - lo[axis] <= 0.0 {
            // all coincident
            nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = points[order[mid]][axis];
        nodes.push(Node::Split {
            axis,
            value,
            left: 0,
            right: 0,
        });
        let left = Self::build_node(points, order, start, mid, leaf_size, nodes);
        let right = Self::build_node(points, order, mid, end, leaf_size, nodes);
        nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn point(&self, index: usize) -> Vec3 {
        let p = self.points[index];
        Vec3::new(p[0], p[1], p[2])
    }

    /// The `min(k, N)` nearest points, ascending by distance then index.
    pub fn knn(&self, query: &Vec3, k: usize) -> GeometryResult<Vec<Neighbor>> {
        if k == 0 {
            return Err(GeometryError::InvalidParameter("k must be at least 1".into()));
        }
        Ok(self
            .knn_squared(query, k)?
            .into_iter()
            .map(|(index, d2)| Neighbor {
                index,
                distance: d2.sqrt(),
            })
            .collect())
    }

    /// Same as [`SpatialIndex::knn`] but returns squared distances.
    pub fn knn_squared(&self, query: &Vec3, k: usize) -> GeometryResult<Vec<(usize, f64)>> {
        if self.points.is_empty() {
            return Err(GeometryError::EmptyIndex);
        }
        let q = [query.x, query.y, query.z];
        let k = k.min(self.points.len());
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.search(0, &q, k, &mut best);
        Ok(best.into_iter().map(|(d2, i)| (i, d2)).collect())
    }

    /// Nearest point as `(index, squared distance)`.
    pub fn nearest(&self, query: &Vec3) -> GeometryResult<(usize, f64)> {
        Ok(self.knn_squared(query, 1)?[0])
    }

    fn search(&self, node: usize, q: &[f64; 3], k: usize, best: &mut Vec<(f64, usize)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = squared_distance(&self.points[i], q);
                    let key = (d2, i);
                    if best.len() == k {
                        let worst = best[k - 1];
                        if !lex_less(key, worst) {
                            continue;
                        }
                        best.pop();
                    }
                    let pos = best.partition_point(|&e| lex_less(e, key));
                    best.insert(pos, key);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, best);
                // `<=` keeps equidistant candidates on the far side reachable
                if best.len() < k || diff * diff <= best[k - 1].0 {
                    self.search(far, q, k, best);
                }
            }
        }
    }
}

#[inline]
fn lex_less(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute(points: &[Vec3], q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let dx = p.x - q.x;
                let dy = p.y - q.y;
                let dz = p.z - q.z;
                (i, dx * dx + dy * dy + dz * dz)
            })
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn three_points_on_a_line() {
        let pts = vec![Vec3::zeros(), Vec3::x(), Vec3::new(3.0, 0.0, 0.0)];
        let idx = SpatialIndex::build(&pts);
        let r = idx.knn(&Vec3::new(0.9, 0.0, 0.0), 2).unwrap();
        assert_eq!(r.iter().map(|n| n.index).collect::<Vec<_>>(), vec![1, 0]);
        assert!((r[0].distance - 0.1).abs() < 1e-12);
        assert!((r[1].distance - 0.9).abs() < 1e-12);
    }

    #[test]
    fn exact_hit() {
        let pts = vec![Vec3::zeros(), Vec3::x(), Vec3::new(3.0, 0.0, 0.0)];
        let idx = SpatialIndex::build(&pts);
        let r = idx.knn(&Vec3::new(3.0, 0.0, 0.0), 1).unwrap();
        assert_eq!(r, vec![Neighbor { index: 2, distance: 0.0 }]);
    }

    #[test]
    fn empty_index_is_an_error() {
        let idx = SpatialIndex::build(&[]);
        assert_eq!(idx.knn(&Vec3::zeros(), 1), Err(GeometryError::EmptyIndex));
    }

    #[test]
    fn k_larger_than_n_returns_all() {
        let pts = vec![Vec3::zeros(), Vec3::x()];
        let idx = SpatialIndex::build(&pts);
        assert_eq!(idx.knn(&Vec3::zeros(), 10).unwrap().len(), 2);
    }

    #[test]
    fn random_queries_match_brute_force() {
        let mut rng = crate::rng::rng(42);
        let pts: Vec<Vec3> = (0..200)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let idx = SpatialIndex::with_leaf_size(&pts, 4);
        for _ in 0..50 {
            let q = Vec3::new(rng.random(), rng.random(), rng.random());
            assert_eq!(idx.knn_squared(&q, 5).unwrap(), brute(&pts, &q, 5));
        }
    }

    #[test]
    fn ties_break_toward_lowest_index() {
        // integer lattice: many exactly equidistant candidates
        let mut pts = Vec::new();
        for x in 0..5 {
            for y in 0..5 {
                for z in 0..5 {
                    pts.push(Vec3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        pts.reverse();
        let idx = SpatialIndex::with_leaf_size(&pts, 3);
        for q in [Vec3::new(2.0, 2.0, 2.0), Vec3::new(0.5, 0.5, 0.5), Vec3::new(2.5, 1.0, 4.0)] {
            for k in [1, 4, 7, 27] {
                assert_eq!(idx.knn_squared(&q, k).unwrap(), brute(&pts, &q, k));
            }
        }
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            raw in proptest::collection::vec((-4i32..4, -4i32..4, -4i32..4), 1..300),
            q in (-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0),
            k in 1usize..12,
            leaf in 1usize..20,
        ) {
            // coarse integer coordinates make duplicates and ties common
            let pts: Vec<Vec3> = raw.iter().map(|&(x, y, z)| Vec3::new(x as f64 * 0.5, y as f64 * 0.5, z as f64 * 0.5)).collect();
            let q = Vec3::new(q.0, q.1, q.2);
            let idx = SpatialIndex::with_leaf_size(&pts, leaf);
            prop_assert_eq!(idx.knn_squared(&q, k).unwrap(), brute(&pts, &q, k));
        }
    }
}
