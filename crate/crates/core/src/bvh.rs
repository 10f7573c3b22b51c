//! Bounding volume hierarchy over triangles: closest-point queries and a
//! hierarchical (dipole far-field) generalized winding number.

use std::f64::consts::PI;

use crate::mesh::TriangleMesh;
use crate::Vec3;

const LEAF_SIZE: usize = 4;
/// Far-field criterion: a node is approximated when the query is farther
/// than this multiple of the node radius from its area centroid.
const WINDING_BETA: f64 = 3.0;

#[derive(Debug, Clone)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    /// Children, or `None` for leaves covering `order[start..end]`.
    children: Option<(usize, usize)>,
    start: usize,
    end: usize,
    /// Sum of `area * unit normal` (half cross products).
    dipole: Vec3,
    centroid: Vec3,
    radius: f64,
}

#[derive(Debug, Clone)]
pub struct TriangleBvh {
    tris: Vec<[Vec3; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// Result of a closest-point query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestHit {
    pub distance: f64,
    pub face: usize,
    pub point: Vec3,
}

impl TriangleBvh {
    pub fn new(mesh: &TriangleMesh) -> Self {
        let tris: Vec<[Vec3; 3]> = (0..mesh.faces.len()).map(|f| mesh.corners(f)).collect();
        let mut bvh = Self {
            order: (0..tris.len()).collect(),
            tris,
            nodes: Vec::new(),
        };
        if !bvh.tris.is_empty() {
            bvh.build(0, bvh.tris.len());
        }
        bvh
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        let mut dipole = Vec3::zeros();
        let mut weighted = Vec3::zeros();
        let mut area = 0.0;
        for &t in &self.order[start..end] {
            let [a, b, c] = self.tris[t];
            for p in [a, b, c] {
                lo = lo.inf(&p);
                hi = hi.sup(&p);
            }
            let cross = (b - a).cross(&(c - a));
            let ar = 0.5 * cross.norm();
            dipole += 0.5 * cross;
            weighted += (a + b + c) / 3.0 * ar;
            area += ar;
        }
        let centroid = if area > 0.0 { weighted / area } else { (lo + hi) * 0.5 };
        let mut radius: f64 = 0.0;
        for &t in &self.order[start..end] {
            for p in self.tris[t] {
                radius = radius.max((p - centroid).norm());
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            lo,
            hi,
            children: None,
            start,
            end,
            dipole,
            centroid,
            radius,
        });
        if end - start > LEAF_SIZE {
            let axis = (hi - lo).imax();
            let mid = (start + end) / 2;
            let tris = &self.tris;
            let key = |t: usize| tris[t][0][axis] + tris[t][1][axis] + tris[t][2][axis];
            self.order[start..end]
                .select_nth_unstable_by(mid - start, |&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
            let left = self.build(start, mid);
            let right = self.build(mid, end);
            self.nodes[id].children = Some((left, right));
        }
        id
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    /// Closest surface point within `max_distance` (use `f64::INFINITY` for
    /// an unbounded search).
    pub fn closest(&self, q: &Vec3, max_distance: f64) -> Option<ClosestHit> {
        if self.tris.is_empty() {
            return None;
        }
        let mut best = (max_distance * max_distance, None::<(usize, Vec3)>);
        self.closest_rec(0, q, &mut best);
        best.1.map(|(face, point)| ClosestHit {
            distance: best.0.sqrt(),
            face,
            point,
        })
    }

    fn box_dist2(node: &Node, q: &Vec3) -> f64 {
        let d = (node.lo - q).sup(&Vec3::zeros()).sup(&(q - node.hi));
        d.norm_squared()
    }

    fn closest_rec(&self, id: usize, q: &Vec3, best: &mut (f64, Option<(usize, Vec3)>)) {
        let node = &self.nodes[id];
        match node.children {
            None => {
                for &t in &self.order[node.start..node.end] {
                    let p = closest_point_on_triangle(q, &self.tris[t]);
                    let d2 = (p - q).norm_squared();
                    if d2 < best.0 || (d2 == best.0 && best.1.is_some_and(|(f, _)| t < f)) {
                        *best = (d2, Some((t, p)));
                    }
                }
            }
            Some((l, r)) => {
                let dl = Self::box_dist2(&self.nodes[l], q);
                let dr = Self::box_dist2(&self.nodes[r], q);
                let ((n1, d1), (n2, d2)) = if dl <= dr { ((l, dl), (r, dr)) } else { ((r, dr), (l, dl)) };
                if d1 <= best.0 {
                    self.closest_rec(n1, q, best);
                }
                if d2 <= best.0 {
                    self.closest_rec(n2, q, best);
                }
            }
        }
    }

    /// Generalized winding number with far-field dipole approximation.
    pub fn winding_number(&self, q: &Vec3) -> f64 {
        if self.tris.is_empty() {
            return 0.0;
        }
        self.winding_rec(0, q) / (4.0 * PI)
    }

    fn winding_rec(&self, id: usize, q: &Vec3) -> f64 {
        let node = &self.nodes[id];
        let d = node.centroid - q;
        let dist = d.norm();
        if node.children.is_some() && dist > WINDING_BETA * node.radius {
            return node.dipole.dot(&d) / (dist * dist * dist);
        }
        match node.children {
            None => self.order[node.start..node.end]
                .iter()
                .map(|&t| solid_angle(q, &self.tris[t]))
                .sum(),
            Some((l, r)) => self.winding_rec(l, q) + self.winding_rec(r, q),
        }
    }

    /// Exact winding number by summing every triangle's solid angle.
    pub fn winding_number_exact(&self, q: &Vec3) -> f64 {
        self.tris.iter().map(|t| solid_angle(q, t)).sum::<f64>() / (4.0 * PI)
    }
}

/// Signed solid angle of a triangle seen from `q` (positive when `q` is on
/// the back side of a counter-clockwise triangle).
pub fn solid_angle(q: &Vec3, tri: &[Vec3; 3]) -> f64 {
    let a = tri[0] - q;
    let b = tri[1] - q;
    let c = tri[2] - q;
    let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
    let det = a.dot(&b.cross(&c));
    let denom = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
    2.0 * det.atan2(denom)
}

/// Closest point on a triangle (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle(p: &Vec3, tri: &[Vec3; 3]) -> Vec3 {
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use rand::{Rng, SeedableRng};

    #[test]
    fn closest_matches_brute_force() {
        let m = fixtures::torus(0.3, 0.1, 30, 14);
        let bvh = TriangleBvh::new(&m);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let q = Vec3::from_fn(|_, _| rng.random_range(-0.6..0.6));
            let hit = bvh.closest(&q, f64::INFINITY).unwrap();
            let brute = (0..m.faces.len())
                .map(|f| (closest_point_on_triangle(&q, &m.corners(f)) - q).norm())
                .fold(f64::INFINITY, f64::min);
            assert!((hit.distance - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn bounded_search_misses_far_points() {
        let m = fixtures::icosphere(0.1, 2);
        let bvh = TriangleBvh::new(&m);
        assert!(bvh.closest(&Vec3::new(0.4, 0.0, 0.0), 0.1).is_none());
        assert!(bvh.closest(&Vec3::new(0.15, 0.0, 0.0), 0.1).is_some());
    }

    #[test]
    fn winding_inside_outside() {
        let m = fixtures::torus(0.3, 0.1, 40, 20);
        let bvh = TriangleBvh::new(&m);
        let inside = Vec3::new(0.3, 0.0, 0.0);
        let hole = Vec3::zeros();
        assert!((bvh.winding_number_exact(&inside) - 1.0).abs() < 1e-9);
        assert!(bvh.winding_number_exact(&hole).abs() < 1e-9);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let q = Vec3::from_fn(|_, _| rng.random_range(-0.5..0.5));
            let fast = bvh.winding_number(&q);
            let exact = bvh.winding_number_exact(&q);
            assert!((fast - exact).abs() < 0.05, "{fast} vs {exact}");
        }
    }
}
