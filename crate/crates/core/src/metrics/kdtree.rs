//! Exact nearest-neighbour search over 3D points.

use nalgebra::Vector3;

const LEAF_SIZE: usize = 8;

#[inline]
pub fn squared_distance(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: Box<Node>, right: Box<Node> },
}

pub struct KdTree {
    points: Vec<Vector3<f64>>,
    root: Option<Node>,
}

impl KdTree {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let mut points = points.to_vec();
        let root = if points.is_empty() { None } else { Some(build(&mut points, 0)) };
        KdTree { points, root }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Stored points, in tree order; indices returned by [`KdTree::nearest`] refer to this slice.
    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    /// Squared distance from `q` to its nearest point, `None` for an empty tree.
    pub fn nearest_squared(&self, q: &Vector3<f64>) -> Option<f64> {
        self.nearest(q).map(|(_, d)| d)
    }

    /// Index (into [`KdTree::points`]) and squared distance of the nearest point.
    pub fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        let root = self.root.as_ref()?;
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(root, q, &mut best);
        Some(best)
    }

    fn search(&self, node: &Node, q: &Vector3<f64>, best: &mut (usize, f64)) {
        match node {
            Node::Leaf { start, end } => {
                for (i, p) in self.points[*start..*end].iter().enumerate() {
                    let d = squared_distance(p, q);
                    if d < best.1 {
                        *best = (start + i, d);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[*axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build(points: &mut [Vector3<f64>], offset: usize) -> Node {
    if points.len() <= LEAF_SIZE {
        return Node::Leaf { start: offset, end: offset + points.len() };
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points.iter() {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let extent = hi - lo;
    let axis = extent.imax();
    if extent[axis] == 0.0 {
        return Node::Leaf { start: offset, end: offset + points.len() };
    }
    let mid = points.len() / 2;
    points.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
    let value = points[mid][axis];
    // left holds coordinates <= value, right holds >= value
    let (l, r) = points.split_at_mut(mid);
    Node::Split {
        axis,
        value,
        left: Box::new(build(l, offset)),
        right: Box::new(build(r, offset + mid)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_linear_scan_with_duplicates() {
        let mut pts = Vec::new();
        for i in 0..400 {
            let f = i as f64;
            pts.push(Vector3::new((f * 0.37).sin(), 0.0, ((f * 0.11).cos() * 4.0).round() / 4.0));
        }
        pts.extend(std::iter::repeat(Vector3::new(0.5, 0.0, 0.5)).take(50));
        let tree = KdTree::new(&pts);
        for j in 0..200 {
            let f = j as f64;
            let q = Vector3::new((f * 0.91).cos() * 1.2, (f * 0.3).sin() * 0.1, (f * 0.07).sin());
            let brute = pts.iter().map(|p| squared_distance(p, &q)).fold(f64::INFINITY, f64::min);
            assert_eq!(tree.nearest_squared(&q), Some(brute));
        }
    }

    #[test]
    fn empty_tree() {
        assert_eq!(KdTree::new(&[]).nearest_squared(&Vector3::zeros()), None);
    }
}
