use std::cmp::Reverse;
use std::collections::BinaryHeap;

use nalgebra::{Matrix3, SymmetricEigen};

use super::OrientedPointCloud;
use crate::kdtree::KdTree;
use crate::{Error, Result, Vec3};

pub const DEFAULT_NORMAL_K: usize = 16;

/// PCA normals over k nearest neighbors, oriented consistently by
/// propagation along a minimum spanning tree of the k-NN graph
/// (edge cost `1 - |n_i . n_j|`). Each tree root is the point farthest from
/// the centroid and points away from it.
///
/// The seed only breaks ties in the orientation pass; results are fully
/// determined by `(points, k, seed)`.
pub fn estimate_normals(points: &[Vec3], k: usize, seed: u64) -> Result<OrientedPointCloud> {
    if k < 3 {
        return Err(Error::InvalidArgument(format!("k = {k}, need at least 3")));
    }
    if points.len() < k + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} points, need at least k + 1 = {}",
            points.len(),
            k + 1
        )));
    }
    let tree = KdTree::new(points);
    let neighborhoods: Vec<Vec<usize>> = points
        .iter()
        .map(|p| tree.knn(p, k + 1).into_iter().map(|(i, _)| i).collect())
        .collect();

    let mut normals = Vec::with_capacity(points.len());
    for (i, nbrs) in neighborhoods.iter().enumerate() {
        let centroid = nbrs.iter().map(|&j| points[j]).sum::<Vec3>() / nbrs.len() as f64;
        let mut cov = Matrix3::zeros();
        for &j in nbrs {
            let d = points[j] - centroid;
            cov += d * d.transpose();
        }
        let eig = SymmetricEigen::new(cov);
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let (l0, l1, l2) = (
            eig.eigenvalues[idx[0]],
            eig.eigenvalues[idx[1]],
            eig.eigenvalues[idx[2]],
        );
        if !(l2 > 0.0) || l1 <= 1e-12 * l2 {
            return Err(Error::Degenerate(format!(
                "neighborhood of point {i} is rank deficient (eigenvalues {l0:e}, {l1:e}, {l2:e})"
            )));
        }
        normals.push(eig.eigenvectors.column(idx[0]).normalize());
    }

    orient(points, &neighborhoods, &mut normals, seed);
    OrientedPointCloud::new(points.to_vec(), normals)
}

fn orient(points: &[Vec3], neighborhoods: &[Vec<usize>], normals: &mut [Vec3], seed: u64) {
    let n = points.len();
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, nbrs) in neighborhoods.iter().enumerate() {
        for &j in nbrs {
            if j != i {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
        list.dedup();
    }
    let centroid = points.iter().sum::<Vec3>() / n as f64;
    // Roots are visited farthest-first; the seed rotates ties among equal
    // distances only.
    let mut roots: Vec<usize> = (0..n).collect();
    roots.sort_by(|&a, &b| {
        let da = (points[a] - centroid).norm_squared();
        let db = (points[b] - centroid).norm_squared();
        db.total_cmp(&da)
            .then_with(|| (a as u64 ^ seed).cmp(&(b as u64 ^ seed)))
    });

    let mut visited = vec![false; n];
    for &root in &roots {
        if visited[root] {
            continue;
        }
        if normals[root].dot(&(points[root] - centroid)) < 0.0 {
            normals[root] = -normals[root];
        }
        visited[root] = true;
        // Prim's algorithm; heap keys are (cost bits, target, parent).
        let mut heap = BinaryHeap::new();
        let push_edges = |heap: &mut BinaryHeap<_>, from: usize, normals: &[Vec3], visited: &[bool]| {
            for &to in &adjacency[from] {
                if !visited[to] {
                    let cost = 1.0 - normals[from].dot(&normals[to]).abs();
                    heap.push(Reverse((cost.max(0.0).to_bits(), to, from)));
                }
            }
        };
        push_edges(&mut heap, root, normals, &visited);
        while let Some(Reverse((_, to, from))) = heap.pop() {
            if visited[to] {
                continue;
            }
            visited[to] = true;
            if normals[to].dot(&normals[from]) < 0.0 {
                normals[to] = -normals[to];
            }
            push_edges(&mut heap, to, normals, &visited);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kdtree::KdTree;
    use rand::{Rng, SeedableRng};

    #[test]
    fn plane_normals_are_consistent() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec3> = (0..400)
            .map(|_| Vec3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, 0.0))
            .collect();
        let cloud = estimate_normals(&pts, 8, 0).unwrap();
        let sign = cloud.normals[0].z.signum();
        for n in &cloud.normals {
            assert!((n.z - sign).abs() < 1e-9, "{n:?}");
        }
    }

    #[test]
    fn sphere_normals_are_radial() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Vec3> = (0..10_000)
            .map(|_| {
                let v = Vec3::new(
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                );
                v.normalize()
            })
            .collect();
        let cloud = estimate_normals(&pts, 16, 0).unwrap();
        let mean_deg = cloud
            .points
            .iter()
            .zip(&cloud.normals)
            .map(|(p, n)| n.dot(&p.normalize()).clamp(-1.0, 1.0).acos().to_degrees())
            .sum::<f64>()
            / pts.len() as f64;
        assert!(mean_deg < 5.0, "mean deviation {mean_deg} deg");

        // Sign consistency across the k-NN graph.
        let tree = KdTree::new(&cloud.points);
        for (i, p) in cloud.points.iter().enumerate() {
            for (j, _) in tree.knn(p, 17) {
                assert!(cloud.normals[i].dot(&cloud.normals[j]) > 0.0);
            }
        }
    }

    #[test]
    fn collinear_points_are_rejected() {
        let pts: Vec<Vec3> = (0..4).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(estimate_normals(&pts, 3, 0), Err(Error::Degenerate(_))));
        let three: Vec<Vec3> = (0..3).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert!(estimate_normals(&three, 3, 0).is_err());
    }

    #[test]
    fn small_k_is_an_error() {
        let pts: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, (i * i) as f64, 0.0)).collect();
        assert!(matches!(estimate_normals(&pts, 2, 0), Err(Error::InvalidArgument(_))));
    }
}
