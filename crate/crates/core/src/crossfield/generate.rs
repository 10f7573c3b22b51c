//! Curvature-aligned 4-RoSy smoothing used as the ground-truth field.
//!
//! Each vertex stores `z = exp(4iθ)`, with `θ` measured from its principal
//! direction `dir_max`. The energy is
//!
//! `E = w Σ_edges (1 - Re(z_v conj(z_u) exp(-4iρ_uv))) + Σ_v a_v (1 - Re z_v)`
//!
//! where `ρ_uv` is the change of basis angle under minimal-rotation transport
//! and `a_v` the anisotropy. Iterations are Jacobi updates followed by a
//! backtracking step so the energy never increases.

use nalgebra::Complex;

use super::{angle_in_basis, transport, CrossFieldSample, FieldOnMesh, SiteKind};
use crate::mesh::{CurvatureFrame, TriangleMesh};
use crate::{Error, Result};

pub const DEFAULT_GT_ITERATIONS: usize = 50;
pub const DEFAULT_SMOOTH_WEIGHT: f64 = 1.0;

const MAX_HALVINGS: usize = 20;

/// Generated field plus the energy before the first and after every iteration.
#[derive(Debug, Clone)]
pub struct GtField {
    pub field: FieldOnMesh,
    pub energy: Vec<f64>,
}

struct Edge {
    u: usize,
    v: usize,
    /// `exp(4iρ_uv)`: maps a 4th-power value in u's basis to v's basis.
    rot: Complex<f64>,
}

fn energy(z: &[Complex<f64>], edges: &[Edge], aniso: &[f64], w: f64) -> f64 {
    let smooth: f64 = edges.iter().map(|e| 1.0 - (z[e.v] * (z[e.u] * e.rot).conj()).re).sum();
    let align: f64 = z.iter().zip(aniso).map(|(z, a)| a * (1.0 - z.re)).sum();
    w * smooth + align
}

fn normalized(c: Complex<f64>) -> Option<Complex<f64>> {
    let n = c.norm();
    (n > 1e-12).then(|| c / n)
}

pub fn generate_gt_field(
    mesh: &TriangleMesh,
    frames: &[CurvatureFrame],
    iterations: usize,
    smooth_weight: f64,
) -> Result<GtField> {
    if frames.len() != mesh.vertices.len() {
        return Err(Error::InvalidArgument(format!(
            "{} frames for {} vertices",
            frames.len(),
            mesh.vertices.len()
        )));
    }
    if !(smooth_weight >= 0.0) {
        return Err(Error::InvalidArgument(format!("smooth weight {smooth_weight}")));
    }
    let edge_faces = mesh.edge_faces();
    let mut bad: Vec<(usize, usize)> = edge_faces
        .iter()
        .filter(|(_, f)| f.len() > 2)
        .map(|(e, _)| *e)
        .collect();
    if !bad.is_empty() {
        bad.sort_unstable();
        return Err(Error::NonManifold { edges: bad });
    }
    let mut keys: Vec<(usize, usize)> = edge_faces.into_keys().collect();
    keys.sort_unstable();
    let mut edges = Vec::with_capacity(keys.len());
    for (u, v) in keys {
        let (fu, fv) = (&frames[u], &frames[v]);
        let moved = transport(&fu.dir_max, &fu.normal, &fv.normal).ok_or_else(|| {
            Error::Degenerate(format!("antipodal normals across edge ({u}, {v})"))
        })?;
        let rho = angle_in_basis(&moved, &fv.dir_max, &fv.normal);
        edges.push(Edge {
            u,
            v,
            rot: Complex::from_polar(1.0, 4.0 * rho),
        });
    }
    let aniso: Vec<f64> = frames.iter().map(|f| f.anisotropy).collect();

    let mut z = vec![Complex::new(1.0, 0.0); frames.len()];
    let mut e_old = energy(&z, &edges, &aniso, smooth_weight);
    let mut history = vec![e_old];
    let mut target = vec![Complex::new(0.0, 0.0); z.len()];
    let mut trial = z.clone();
    for _ in 0..iterations {
        for (t, a) in target.iter_mut().zip(&aniso) {
            *t = Complex::new(*a, 0.0);
        }
        for e in &edges {
            target[e.v] += z[e.u] * e.rot * smooth_weight;
            target[e.u] += z[e.v] * e.rot.conj() * smooth_weight;
        }
        let proposal: Vec<Complex<f64>> = z
            .iter()
            .zip(&target)
            .map(|(old, t)| normalized(*t).unwrap_or(*old))
            .collect();
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            for ((out, old), new) in trial.iter_mut().zip(&z).zip(&proposal) {
                *out = normalized(old + (new - old) * step).unwrap_or(*old);
            }
            let e_new = energy(&trial, &edges, &aniso, smooth_weight);
            if e_new <= e_old {
                std::mem::swap(&mut z, &mut trial);
                e_old = e_new;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        history.push(e_old);
        if !accepted {
            break;
        }
    }
    debug_assert!(history.windows(2).all(|w| w[1] <= w[0]));

    let samples = frames
        .iter()
        .zip(&z)
        .map(|(f, z)| {
            let theta = z.arg() / 4.0;
            let alpha = super::rotate_about(&f.dir_max, &f.normal, theta);
            CrossFieldSample::new(f.point, f.normal, alpha.normalize())
        })
        .collect();
    Ok(GtField {
        field: FieldOnMesh {
            site: SiteKind::Vertex,
            samples,
        },
        energy: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crossfield::alignment_deviation;
    use crate::fixtures;
    use crate::mesh::principal_curvatures;
    use crate::Vec3;

    #[test]
    fn cylinder_aligns_with_axis() {
        let mesh = fixtures::cylinder(0.3, 0.9, 64, 40, false);
        let frames = principal_curvatures(&mesh).unwrap();
        let gt = generate_gt_field(&mesh, &frames, 50, 1.0).unwrap();
        assert!(gt.energy.windows(2).all(|w| w[1] <= w[0]));
        let mean: f64 = gt
            .field
            .samples
            .iter()
            .map(|s| {
                let axial = Vec3::z();
                let circ = s.normal.cross(&axial);
                alignment_deviation(&s.alpha, &axial, &circ)
            })
            .sum::<f64>()
            / gt.field.samples.len() as f64;
        assert!(mean < 0.02, "{mean}");
    }

    #[test]
    fn plane_is_a_fixed_point() {
        let mesh = fixtures::plane_grid(10, 0.8);
        let frames = principal_curvatures(&mesh).unwrap();
        let gt = generate_gt_field(&mesh, &frames, 20, 1.0).unwrap();
        for (s, f) in gt.field.samples.iter().zip(&frames) {
            assert!((s.alpha - f.dir_max).norm() < 1e-9);
        }
        assert!(gt.energy[0] < 1e-9);
    }

    #[test]
    fn sphere_energy_is_monotone() {
        let mesh = fixtures::icosphere(0.4, 3);
        let frames = principal_curvatures(&mesh).unwrap();
        let gt = generate_gt_field(&mesh, &frames, 100, 1.0).unwrap();
        assert!(gt.energy.windows(2).all(|w| w[1] <= w[0]));
        assert!(gt.energy.last().unwrap() < &gt.energy[0]);
        for s in &gt.field.samples {
            s.validate().unwrap();
        }
    }

    #[test]
    fn non_manifold_edges_are_listed() {
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, -1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let mesh = TriangleMesh::new(v, vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]]).unwrap();
        let frames: Vec<CurvatureFrame> = (0..5)
            .map(|i| CurvatureFrame::new(mesh.vertices[i], Vec3::z(), Vec3::x(), 0.0, 0.0))
            .collect();
        match generate_gt_field(&mesh, &frames, 1, 1.0) {
            Err(Error::NonManifold { edges }) => assert_eq!(edges, vec![(0, 1)]),
            other => panic!("{other:?}"),
        }
    }
}
