//! Geometry substrate for learned cross-field generation.
//!
//! The crate covers everything around the network that is not learned:
//!
//! - [`mesh`]: triangle/quad meshes, point clouds, OBJ/PLY I/O, normalization,
//!   surface sampling, PCA normal estimation and quadric-fit curvature frames.
//! - [`grid`]: integer-keyed sparse voxel grids, quantization, key pyramids and
//!   trilinear feature queries.
//! - [`tsdf`]: truncated signed distance grids, thin-shell sampling and
//!   marching cubes.
//! - [`crossfield`]: 4-RoSy cross fields, tangent projection, the alignment
//!   measure, a curvature-aligned ground-truth generator and singularity indices.
//! - [`metrics`]: angular error for fields and the quad-mesh quality metrics.
//!
//! All positions live in normalized shape space, the cube `[-0.5, 0.5]^3`.

pub mod bvh;
pub mod crossfield;
pub mod error;
pub mod fixtures;
pub mod grid;
pub mod kdtree;
pub mod mesh;
pub mod metrics;
pub mod tsdf;

pub mod binio;

pub use error::{Error, Result};

/// Double precision 3-vector used for all geometry.
pub type Vec3 = nalgebra::Vector3<f64>;

/// Writes `path` through a sibling temporary file and a rename, so readers
/// never observe a partially written artifact.
pub fn write_atomic<E>(
    path: impl AsRef<std::path::Path>,
    write: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> std::result::Result<(), E>,
) -> Result<()>
where
    Error: From<E>,
{
    use std::io::Write;
    let path = path.as_ref();
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    let result = (|| -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        write(&mut w)?;
        w.flush()?;
        w.get_ref().sync_all()?;
        Ok(())
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(e);
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
