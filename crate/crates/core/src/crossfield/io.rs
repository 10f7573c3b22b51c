//! `XFLD` v1 field files: site tag u8, ground-truth flag u8, count u64, then
//! per site point, normal and alpha as f32 triples, followed by mu and nu when
//! the flag is set. All values little-endian; beta is rebuilt as alpha × n.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use super::{CrossFieldSample, FieldOnMesh, SiteKind};
use crate::binio::{self, LeReader};
use crate::{Error, Result, Vec3};

pub const FIELD_FORMAT_VERSION: u32 = 1;

fn put(w: &mut impl Write, v: &Vec3) -> std::io::Result<()> {
    for x in v.iter() {
        binio::write_f32(w, *x as f32)?;
    }
    Ok(())
}

fn get(r: &mut LeReader<impl Read>, field: &str) -> Result<Vec3> {
    Ok(Vec3::new(r.f32(field)? as f64, r.f32(field)? as f64, r.f32(field)? as f64))
}

pub fn write_field_to(field: &FieldOnMesh, w: &mut impl Write) -> Result<()> {
    let gt = field.has_gt();
    if !gt && field.samples.iter().any(|s| s.gt_mu.is_some()) {
        return Err(Error::InvalidArgument(
            "ground truth must be present on all samples or none".into(),
        ));
    }
    w.write_all(b"XFLD")?;
    binio::write_u32(w, FIELD_FORMAT_VERSION)?;
    binio::write_u8(w, field.site.tag())?;
    binio::write_u8(w, gt as u8)?;
    binio::write_u64(w, field.samples.len() as u64)?;
    for s in &field.samples {
        put(w, &s.point)?;
        put(w, &s.normal)?;
        put(w, &s.alpha)?;
        if let (true, Some(mu), Some(nu)) = (gt, s.gt_mu, s.gt_nu) {
            put(w, &mu)?;
            put(w, &nu)?;
        }
    }
    Ok(())
}

pub fn write_field(field: &FieldOnMesh, path: impl AsRef<Path>) -> Result<()> {
    crate::write_atomic(path, |w| write_field_to(field, w))
}

pub fn read_field_from(r: impl Read) -> Result<FieldOnMesh> {
    let mut r = LeReader::new(r, "field");
    r.magic(b"XFLD")?;
    let version = r.u32("version")?;
    if version != FIELD_FORMAT_VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let tag = r.u8("site tag")?;
    let site = SiteKind::from_tag(tag).ok_or_else(|| r.error(format!("bad site tag {tag}")))?;
    let gt = match r.u8("ground-truth flag")? {
        0 => false,
        1 => true,
        x => return Err(r.error(format!("bad ground-truth flag {x}"))),
    };
    let count = r.u64("count")?;
    let mut samples = Vec::with_capacity(count.min(1 << 24) as usize);
    for _ in 0..count {
        let mut s = CrossFieldSample::new(get(&mut r, "point")?, get(&mut r, "normal")?, get(&mut r, "alpha")?);
        if gt {
            s = s.with_gt(get(&mut r, "mu")?, get(&mut r, "nu")?);
        }
        samples.push(s);
    }
    Ok(FieldOnMesh { site, samples })
}

pub fn read_field(path: impl AsRef<Path>) -> Result<FieldOnMesh> {
    read_field_from(BufReader::new(File::open(path)?))
}
