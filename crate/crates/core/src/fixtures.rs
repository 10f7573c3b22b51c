//! Procedural meshes used as test fixtures and demo inputs.

use std::collections::HashMap;
use std::f64::consts::TAU;

use crate::mesh::{QuadMesh, TriangleMesh};
use crate::Vec3;

/// Subdivided icosahedron with analytic normals.
pub fn icosphere(radius: f64, subdivisions: usize) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec3>| {
            let key = if a < b { (a, b) } else { (b, a) };
            *midpoint.entry(key).or_insert_with(|| {
                vertices.push(((vertices[a] + vertices[b]) * 0.5).normalize());
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let normals = vertices.clone();
    TriangleMesh {
        vertices: vertices.into_iter().map(|v| v * radius).collect(),
        faces,
        vertex_normals: Some(normals),
    }
}

/// Cylinder around the z axis centered at the origin. Open tubes carry
/// analytic radial normals; capped cylinders use a fan of concentric rings
/// per cap and no stored normals.
pub fn cylinder(radius: f64, height: f64, around: usize, rings: usize, capped: bool) -> TriangleMesh {
    assert!(around >= 3 && rings >= 2);
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for j in 0..rings {
        let z = -height / 2.0 + height * j as f64 / (rings - 1) as f64;
        for i in 0..around {
            let a = TAU * i as f64 / around as f64;
            vertices.push(Vec3::new(radius * a.cos(), radius * a.sin(), z));
        }
    }
    let idx = |i: usize, j: usize| j * around + (i % around);
    for j in 0..rings - 1 {
        for i in 0..around {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    if !capped {
        let normals = vertices
            .iter()
            .map(|v| Vec3::new(v.x, v.y, 0.0).normalize())
            .collect();
        return TriangleMesh {
            vertices,
            faces,
            vertex_normals: Some(normals),
        };
    }
    let spacing = height / (rings - 1) as f64;
    let cap_rings = ((radius / spacing).round() as usize).max(1);
    for (ring0, z, up) in [(0, -height / 2.0, false), (rings - 1, height / 2.0, true)] {
        // Ring 0 of the cap is the tube rim; inner rings shrink linearly.
        let mut prev: Vec<usize> = (0..around).map(|i| idx(i, ring0)).collect();
        for k in 1..cap_rings {
            let rr = radius * (cap_rings - k) as f64 / cap_rings as f64;
            let ring: Vec<usize> = (0..around)
                .map(|i| {
                    let a = TAU * i as f64 / around as f64;
                    vertices.push(Vec3::new(rr * a.cos(), rr * a.sin(), z));
                    vertices.len() - 1
                })
                .collect();
            for i in 0..around {
                let (a, b) = (prev[i], prev[(i + 1) % around]);
                let (c, d) = (ring[(i + 1) % around], ring[i]);
                if up {
                    faces.push([a, b, c]);
                    faces.push([a, c, d]);
                } else {
                    faces.push([a, c, b]);
                    faces.push([a, d, c]);
                }
            }
            prev = ring;
        }
        vertices.push(Vec3::new(0.0, 0.0, z));
        let center = vertices.len() - 1;
        for i in 0..around {
            let (a, b) = (prev[i], prev[(i + 1) % around]);
            faces.push(if up { [a, b, center] } else { [b, a, center] });
        }
    }
    TriangleMesh {
        vertices,
        faces,
        vertex_normals: None,
    }
}

/// Integer lattice points on the surface of `[0, n]^3`, the six faces split
/// into `n x n` quads each, oriented outward.
fn cube_lattice(n: usize) -> (Vec<[usize; 3]>, Vec<[usize; 4]>) {
    let mut index: HashMap<[usize; 3], usize> = HashMap::new();
    let mut coords = Vec::new();
    let mut id = |c: [usize; 3], coords: &mut Vec<[usize; 3]>| {
        *index.entry(c).or_insert_with(|| {
            coords.push(c);
            coords.len() - 1
        })
    };
    let mut quads = Vec::new();
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [0, n] {
            for i in 0..n {
                for j in 0..n {
                    let corner = |di: usize, dj: usize| {
                        let mut c = [0; 3];
                        c[axis] = side;
                        c[u] = i + di;
                        c[v] = j + dj;
                        c
                    };
                    let q = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
                    let mut f = q.map(|c| id(c, &mut coords));
                    // (u, v, axis) is right-handed, so this winding faces +axis.
                    if side == 0 {
                        f.reverse();
                    }
                    quads.push(f);
                }
            }
        }
    }
    (coords, quads)
}

/// Axis-aligned cube of edge `size` centered at the origin, `n` segments per edge.
pub fn cube(size: f64, n: usize) -> TriangleMesh {
    let quads = quad_cube(size, n);
    let mut faces = Vec::with_capacity(quads.faces.len() * 2);
    for f in &quads.faces {
        faces.push([f[0], f[1], f[2]]);
        faces.push([f[0], f[2], f[3]]);
    }
    TriangleMesh {
        vertices: quads.vertices,
        faces,
        vertex_normals: None,
    }
}

pub fn quad_cube(size: f64, n: usize) -> QuadMesh {
    assert!(n >= 1);
    let (coords, faces) = cube_lattice(n);
    let vertices = coords
        .iter()
        .map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64) * (size / n as f64) - Vec3::repeat(size / 2.0))
        .collect();
    QuadMesh { vertices, faces }
}

/// Torus around the z axis: major radius `major`, tube radius `minor`.
pub fn torus(major: f64, minor: f64, around: usize, tube: usize) -> TriangleMesh {
    let q = quad_torus(major, minor, around, tube);
    let mut faces = Vec::with_capacity(q.faces.len() * 2);
    for f in &q.faces {
        faces.push([f[0], f[1], f[2]]);
        faces.push([f[0], f[2], f[3]]);
    }
    let normals = q
        .vertices
        .iter()
        .map(|p| {
            let ring = Vec3::new(p.x, p.y, 0.0).normalize() * major;
            (p - ring).normalize()
        })
        .collect();
    TriangleMesh {
        vertices: q.vertices,
        faces,
        vertex_normals: Some(normals),
    }
}

pub fn quad_torus(major: f64, minor: f64, around: usize, tube: usize) -> QuadMesh {
    let mut vertices = Vec::with_capacity(around * tube);
    for i in 0..around {
        let u = TAU * i as f64 / around as f64;
        for j in 0..tube {
            let v = TAU * j as f64 / tube as f64;
            let r = major + minor * v.cos();
            vertices.push(Vec3::new(r * u.cos(), r * u.sin(), minor * v.sin()));
        }
    }
    let idx = |i: usize, j: usize| (i % around) * tube + (j % tube);
    let mut faces = Vec::with_capacity(around * tube);
    for i in 0..around {
        for j in 0..tube {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    QuadMesh { vertices, faces }
}

/// Square `[-size/2, size/2]^2` in the z = 0 plane with `n x n` cells.
pub fn plane_grid(n: usize, size: f64) -> TriangleMesh {
    let q = quad_grid(n, size);
    let mut faces = Vec::with_capacity(q.faces.len() * 2);
    for f in &q.faces {
        faces.push([f[0], f[1], f[2]]);
        faces.push([f[0], f[2], f[3]]);
    }
    let normals = vec![Vec3::z(); q.vertices.len()];
    TriangleMesh {
        vertices: q.vertices,
        faces,
        vertex_normals: Some(normals),
    }
}

pub fn quad_grid(n: usize, size: f64) -> QuadMesh {
    let h = size / n as f64;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push(Vec3::new(i as f64 * h - size / 2.0, j as f64 * h - size / 2.0, 0.0));
        }
    }
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let mut faces = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    QuadMesh { vertices, faces }
}
