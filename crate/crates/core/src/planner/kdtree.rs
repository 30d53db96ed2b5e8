//! Incremental k-d tree over C-space points.
//!
//! Node ids are insertion order, which the tie-breaking rules below rely on:
//! nearest-neighbour ties resolve to the lowest id, exactly matching a
//! linear scan over the same points.

/// Spatial index over points in [0,1]^d supporting insertion, exact nearest
/// neighbour and radius queries.
#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    coords: Vec<f64>,
    nodes: Vec<KdNode>,
    root: i64,
}

#[derive(Debug, Clone)]
struct KdNode {
    left: i64,
    right: i64,
    split_dim: usize,
}

impl KdTree {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0);
        KdTree {
            dim,
            coords: Vec::new(),
            nodes: Vec::new(),
            root: -1,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn point(&self, id: usize) -> &[f64] {
        &self.coords[id * self.dim..(id + 1) * self.dim]
    }

    fn dist2(&self, id: usize, query: &[f64]) -> f64 {
        self.point(id)
            .iter()
            .zip(query)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Insert a point; returns its id (insertion index).
    pub fn insert(&mut self, point: &[f64]) -> usize {
        assert_eq!(point.len(), self.dim, "point dimension mismatch");
        let id = self.nodes.len();
        self.coords.extend_from_slice(point);
        if self.root < 0 {
            self.root = id as i64;
            self.nodes.push(KdNode {
                left: -1,
                right: -1,
                split_dim: 0,
            });
            return id;
        }
        let mut cur = self.root as usize;
        loop {
            let sd = self.nodes[cur].split_dim;
            let go_left = point[sd] < self.point(cur)[sd];
            let child = if go_left {
                self.nodes[cur].left
            } else {
                self.nodes[cur].right
            };
            if child < 0 {
                let next_sd = (sd + 1) % self.dim;
                self.nodes.push(KdNode {
                    left: -1,
                    right: -1,
                    split_dim: next_sd,
                });
                if go_left {
                    self.nodes[cur].left = id as i64;
                } else {
                    self.nodes[cur].right = id as i64;
                }
                return id;
            }
            cur = child as usize;
        }
    }

    /// Exact nearest neighbour; equidistant points resolve to the lowest id.
    pub fn nearest(&self, query: &[f64]) -> usize {
        assert!(!self.is_empty(), "nearest neighbour of an empty tree");
        assert_eq!(query.len(), self.dim);
        let mut best_id = usize::MAX;
        let mut best_d2 = f64::INFINITY;
        // (node, squared distance from query to the node's splitting plane
        // along the path taken); far branches are revisited lazily.
        let mut stack: Vec<(usize, f64)> = vec![(self.root as usize, 0.0)];
        while let Some((node, plane_d2)) = stack.pop() {
            // Equal distances must still be explored so ties resolve by id.
            if plane_d2 > best_d2 {
                continue;
            }
            let d2 = self.dist2(node, query);
            if d2 < best_d2 || (d2 == best_d2 && node < best_id) {
                best_d2 = d2;
                best_id = node;
            }
            let sd = self.nodes[node].split_dim;
            let diff = query[sd] - self.point(node)[sd];
            let (near, far) = if diff < 0.0 {
                (self.nodes[node].left, self.nodes[node].right)
            } else {
                (self.nodes[node].right, self.nodes[node].left)
            };
            if far >= 0 {
                stack.push((far as usize, diff * diff));
            }
            if near >= 0 {
                stack.push((near as usize, 0.0));
            }
        }
        best_id
    }

    /// All ids within (inclusive) `radius` of the query, sorted ascending.
    pub fn within_radius(&self, query: &[f64], radius: f64) -> Vec<usize> {
        assert_eq!(query.len(), self.dim);
        let mut out = Vec::new();
        if self.is_empty() || radius < 0.0 {
            return out;
        }
        let r2 = radius * radius;
        let mut stack: Vec<usize> = vec![self.root as usize];
        while let Some(node) = stack.pop() {
            if self.dist2(node, query) <= r2 {
                out.push(node);
            }
            let sd = self.nodes[node].split_dim;
            let diff = query[sd] - self.point(node)[sd];
            let (near, far) = if diff < 0.0 {
                (self.nodes[node].left, self.nodes[node].right)
            } else {
                (self.nodes[node].right, self.nodes[node].left)
            };
            if near >= 0 {
                stack.push(near as usize);
            }
            if far >= 0 && diff * diff <= r2 {
                stack.push(far as usize);
            }
        }
        out.sort_unstable();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn linear_nearest(points: &[Vec<f64>], query: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d2 = f64::INFINITY;
        for (i, p) in points.iter().enumerate() {
            let d2: f64 = p.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best_d2 {
                best_d2 = d2;
                best = i;
            }
        }
        best
    }

    #[test]
    fn single_node() {
        let mut tree = KdTree::new(2);
        tree.insert(&[0.5, 0.5]);
        assert_eq!(tree.nearest(&[0.9, 0.1]), 0);
    }

    #[test]
    fn duplicates_resolve_to_lowest_id() {
        let mut tree = KdTree::new(2);
        tree.insert(&[0.2, 0.2]);
        tree.insert(&[0.5, 0.5]);
        tree.insert(&[0.5, 0.5]);
        tree.insert(&[0.5, 0.5]);
        assert_eq!(tree.nearest(&[0.51, 0.5]), 1);
    }

    /// Linear-scan oracle over random points and queries, in 2 and 4 dims.
    #[test]
    fn matches_linear_scan() {
        for dim in [2usize, 4] {
            let mut rng = crate::seed::rng(100 + dim as u64);
            let mut tree = KdTree::new(dim);
            let mut points = Vec::new();
            for _ in 0..1000 {
                let p: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
                tree.insert(&p);
                points.push(p);
            }
            for _ in 0..1000 {
                let q: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
                assert_eq!(tree.nearest(&q), linear_nearest(&points, &q));
            }
        }
    }

    #[test]
    fn radius_query_matches_filter() {
        let mut rng = crate::seed::rng(7);
        let mut tree = KdTree::new(2);
        let mut points = Vec::new();
        for _ in 0..500 {
            let p: Vec<f64> = (0..2).map(|_| rng.gen::<f64>()).collect();
            tree.insert(&p);
            points.push(p);
        }
        for _ in 0..200 {
            let q: Vec<f64> = (0..2).map(|_| rng.gen::<f64>()).collect();
            let r = rng.gen::<f64>() * 0.2;
            let got = tree.within_radius(&q, r);
            let expected: Vec<usize> = points
                .iter()
                .enumerate()
                .filter(|(_, p)| {
                    let d2: f64 = p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
                    d2 <= r * r
                })
                .map(|(i, _)| i)
                .collect();
            assert_eq!(got, expected);
        }
    }
}
