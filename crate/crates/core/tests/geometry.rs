use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xgen_core::bvh::TriangleBvh;
use xgen_core::crossfield::{alignment_deviation, rotate_about};
use xgen_core::fixtures;
use xgen_core::grid::vertex_position;
use xgen_core::mesh::{reference_tangent, sample_surface, TriangleMesh};
use xgen_core::tsdf::{compute_tsdf, marching_cubes};
use xgen_core::Vec3;

fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

#[test]
fn deviation_stays_in_range_over_a_million_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let hi = 2f64.sqrt() - 1.0;
    for _ in 0..1_000_000 {
        let n = unit(&mut rng);
        let t = reference_tangent(&n);
        let mu = rotate_about(&t, &n, rng.random_range(0.0..std::f64::consts::TAU));
        let nu = n.cross(&mu);
        let alpha = rotate_about(&t, &n, rng.random_range(0.0..std::f64::consts::TAU));
        let d = alignment_deviation(&alpha, &mu, &nu);
        assert!((0.0..=hi + 1e-12).contains(&d), "{d}");
    }
}

fn closed_fixtures() -> Vec<(&'static str, TriangleMesh)> {
    vec![
        ("sphere", fixtures::icosphere(0.35, 3)),
        ("cube", fixtures::cube(0.6, 8)),
        ("cylinder", fixtures::cylinder(0.25, 0.6, 32, 12, true)),
        ("torus", fixtures::torus(0.3, 0.1, 32, 16)),
    ]
}

#[test]
fn tsdf_sign_matches_exact_winding_on_random_vertices() {
    let r = 32u32;
    for (name, mesh) in closed_fixtures() {
        let grid = compute_tsdf(&mesh, r, 0.1).unwrap();
        let bvh = TriangleBvh::new(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut checked = 0;
        while checked < 10_000 {
            let c = [0, 1, 2].map(|_| rng.random_range(0..r as i64));
            let v = grid.at(c);
            if v == 0.0 {
                continue;
            }
            let inside = bvh.winding_number_exact(&vertex_position(c, r)) > 0.5;
            assert_eq!(v < 0.0, inside, "{name} at {c:?}: value {v}");
            checked += 1;
        }
    }
}

fn edge_use(mesh: &TriangleMesh) -> HashMap<(usize, usize), usize> {
    let mut count = HashMap::new();
    for f in &mesh.faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    count
}

#[test]
fn extracted_surfaces_are_closed() {
    for (name, mesh) in closed_fixtures() {
        let grid = compute_tsdf(&mesh, 32, 0.1).unwrap();
        let mc = marching_cubes(&grid).unwrap();
        let bad = edge_use(&mc).values().filter(|&&n| n != 2).count();
        assert_eq!(bad, 0, "{name}: {bad} edges not shared by two triangles");
    }
}

/// Largest distance from samples on `a` to the surface `b`.
fn one_sided_hausdorff(a: &TriangleMesh, b: &TriangleMesh, samples: usize) -> f64 {
    let bvh = TriangleBvh::new(b);
    let cloud = sample_surface(a, samples, 3).unwrap();
    cloud
        .points
        .iter()
        .map(|p| bvh.closest(p, f64::INFINITY).unwrap().distance)
        .fold(0.0, f64::max)
}

#[test]
fn tsdf_round_trip_stays_within_one_cell() {
    let r = 32u32;
    let cell = 1.0 / r as f64;
    for (name, mesh) in closed_fixtures() {
        let first = marching_cubes(&compute_tsdf(&mesh, r, 0.1).unwrap()).unwrap();
        let second = marching_cubes(&compute_tsdf(&first, r, 0.1).unwrap()).unwrap();
        let h = one_sided_hausdorff(&first, &second, 5000).max(one_sided_hausdorff(&second, &first, 5000));
        assert!(h < cell, "{name}: Hausdorff {h} vs cell {cell}");
    }
}
