//! OBJ (`v`/`f` records) and PLY (ascii and binary little-endian) readers and
//! writers. Only the geometry subsets used by the pipeline are supported.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{split_quad, OrientedPointCloud, QuadMesh, TriangleMesh};
use crate::{write_atomic, Error, Result, Vec3};

/// Raw polygon soup from an OBJ file, indices already zero-based.
#[derive(Debug, Clone, Default)]
pub struct ObjData {
    pub vertices: Vec<Vec3>,
    pub polygons: Vec<Vec<usize>>,
    /// 1-based source line of each polygon.
    pub polygon_lines: Vec<usize>,
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default()
}

/// Loads a triangle mesh from `.obj` or `.ply`. Quads are split along the
/// shorter diagonal, larger polygons are fan-triangulated.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let (vertices, polygons) = match extension(path).as_str() {
        "obj" => {
            let data = read_obj(BufReader::new(File::open(path)?), path)?;
            (data.vertices, data.polygons)
        }
        "ply" => {
            let ply = read_ply(path)?;
            (ply.points, ply.faces)
        }
        other => return Err(Error::UnsupportedFormat(format!("mesh extension {other:?}"))),
    };
    let mut faces = Vec::with_capacity(polygons.len());
    for poly in &polygons {
        match poly.len() {
            3 => faces.push([poly[0], poly[1], poly[2]]),
            4 => faces.extend(split_quad(&vertices, [poly[0], poly[1], poly[2], poly[3]])),
            _ => {
                for k in 1..poly.len() - 1 {
                    faces.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
        }
    }
    TriangleMesh::new(vertices, faces)
}

/// Loads a pure quad mesh from `.obj`; any non-quad face is an error.
pub fn load_quad_mesh(path: impl AsRef<Path>) -> Result<QuadMesh> {
    let path = path.as_ref();
    if extension(path) != "obj" {
        return Err(Error::UnsupportedFormat(format!(
            "quad meshes are read from .obj, got {}",
            path.display()
        )));
    }
    let data = read_obj(BufReader::new(File::open(path)?), path)?;
    let mut faces = Vec::with_capacity(data.polygons.len());
    for (poly, &line) in data.polygons.iter().zip(&data.polygon_lines) {
        if poly.len() != 4 {
            return Err(Error::parse(
                path,
                line,
                format!("expected a quad, found a {}-gon", poly.len()),
            ));
        }
        faces.push([poly[0], poly[1], poly[2], poly[3]]);
    }
    QuadMesh::new(data.vertices, faces)
}

/// Parses `v` and `f` records. Face tokens may carry `/vt/vn` suffixes and
/// negative (relative) indices; index 0 is rejected.
pub fn read_obj(reader: impl BufRead, path: &Path) -> Result<ObjData> {
    let mut data = ObjData::default();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let line = line.split('#').next().unwrap_or("");
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut xyz = [0.0; 3];
                for c in &mut xyz {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| Error::parse(path, lineno, "vertex needs 3 coordinates"))?;
                    *c = tok.parse().map_err(|_| {
                        Error::parse(path, lineno, format!("bad coordinate {tok:?}"))
                    })?;
                }
                data.vertices.push(Vec3::from(xyz));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for tok in tokens {
                    let idx_str = tok.split('/').next().unwrap_or("");
                    let idx: i64 = idx_str.parse().map_err(|_| {
                        Error::parse(path, lineno, format!("bad face index {tok:?}"))
                    })?;
                    let n = data.vertices.len() as i64;
                    let resolved = match idx {
                        0 => {
                            return Err(Error::parse(
                                path,
                                lineno,
                                "face index 0 is invalid (OBJ indices are 1-based)",
                            ))
                        }
                        i if i > 0 => i - 1,
                        i => n + i,
                    };
                    if resolved < 0 || resolved >= n {
                        return Err(Error::parse(
                            path,
                            lineno,
                            format!("face index {idx} out of range ({n} vertices so far)"),
                        ));
                    }
                    poly.push(resolved as usize);
                }
                if poly.len() < 3 {
                    return Err(Error::parse(path, lineno, "face needs at least 3 vertices"));
                }
                data.polygons.push(poly);
                data.polygon_lines.push(lineno);
            }
            _ => {}
        }
    }
    Ok(data)
}

pub fn write_obj(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), |w| -> std::io::Result<()> {
        for v in &mesh.vertices {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for f in &mesh.faces {
            writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
        Ok(())
    })
}

pub fn write_quad_obj(mesh: &QuadMesh, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), |w| -> std::io::Result<()> {
        for v in &mesh.vertices {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for f in &mesh.faces {
            writeln!(w, "f {} {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1, f[3] + 1)?;
        }
        Ok(())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

/// Writes `x y z nx ny nz` float vertices.
pub fn write_ply_cloud(cloud: &OrientedPointCloud, path: impl AsRef<Path>, encoding: PlyEncoding) -> Result<()> {
    write_atomic(path.as_ref(), |w| -> std::io::Result<()> {
        let format = match encoding {
            PlyEncoding::Ascii => "ascii",
            PlyEncoding::BinaryLittleEndian => "binary_little_endian",
        };
        writeln!(w, "ply")?;
        writeln!(w, "format {format} 1.0")?;
        writeln!(w, "element vertex {}", cloud.len())?;
        for name in ["x", "y", "z", "nx", "ny", "nz"] {
            writeln!(w, "property float {name}")?;
        }
        writeln!(w, "end_header")?;
        for (p, n) in cloud.points.iter().zip(&cloud.normals) {
            let vals = [p.x, p.y, p.z, n.x, n.y, n.z].map(|v| v as f32);
            match encoding {
                PlyEncoding::Ascii => writeln!(
                    w,
                    "{} {} {} {} {} {}",
                    vals[0], vals[1], vals[2], vals[3], vals[4], vals[5]
                )?,
                PlyEncoding::BinaryLittleEndian => {
                    for v in vals {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    })
}

/// Loads `x y z nx ny nz` from a PLY file; normals are renormalized.
pub fn load_point_cloud(path: impl AsRef<Path>) -> Result<OrientedPointCloud> {
    let path = path.as_ref();
    if extension(path) != "ply" {
        return Err(Error::UnsupportedFormat(format!(
            "point clouds are read from .ply, got {}",
            path.display()
        )));
    }
    let ply = read_ply(path)?;
    let normals = ply.normals.ok_or_else(|| Error::Format {
        what: "ply",
        msg: "missing nx/ny/nz properties".into(),
    })?;
    let normals = normals
        .into_iter()
        .enumerate()
        .map(|(i, n)| {
            let len = n.norm();
            if len > 0.0 && len.is_finite() {
                Ok(n / len)
            } else {
                Err(Error::Format {
                    what: "ply",
                    msg: format!("zero normal at vertex {i}"),
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    OrientedPointCloud::new(ply.points, normals)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, ScalarType),
    List(String, ScalarType, ScalarType),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

struct PlyData {
    points: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
    faces: Vec<Vec<usize>>,
}

/// Token source over either ascii body lines or little-endian bytes.
enum Body<R> {
    Ascii { lines: std::io::Lines<R>, pending: Vec<String>, line: usize },
    Binary(R),
}

impl<R: BufRead> Body<R> {
    fn next(&mut self, ty: ScalarType, path: &Path) -> Result<f64> {
        match self {
            Body::Ascii { lines, pending, line } => {
                while pending.is_empty() {
                    let l = lines.next().ok_or_else(|| Error::Format {
                        what: "ply",
                        msg: "unexpected end of ascii body".into(),
                    })??;
                    *line += 1;
                    *pending = l.split_whitespace().rev().map(str::to_owned).collect();
                }
                let tok = pending.pop().unwrap();
                tok.parse::<f64>()
                    .map_err(|_| Error::parse(path, *line, format!("bad value {tok:?}")))
            }
            Body::Binary(r) => {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf[..ty.size()]).map_err(|_| Error::Format {
                    what: "ply",
                    msg: "truncated binary body".into(),
                })?;
                Ok(ty.decode(&buf))
            }
        }
    }
}

fn read_ply(path: &Path) -> Result<PlyData> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header_line = 0usize;
    fn read_header_line(reader: &mut BufReader<File>, header_line: &mut usize) -> Result<String> {
        let mut s = String::new();
        if reader.read_line(&mut s)? == 0 {
            return Err(Error::Format {
                what: "ply",
                msg: "unexpected end of header".into(),
            });
        }
        *header_line += 1;
        Ok(s.trim_end().to_owned())
    }
    if read_header_line(&mut reader, &mut header_line)? != "ply" {
        return Err(Error::parse(path, 1, "missing 'ply' magic"));
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let line = read_header_line(&mut reader, &mut header_line)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", other, _] => {
                return Err(Error::UnsupportedFormat(format!("ply format {other}")))
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => elements.push(Element {
                name: (*name).to_owned(),
                count: count
                    .parse()
                    .map_err(|_| Error::parse(path, header_line, "bad element count"))?,
                properties: Vec::new(),
            }),
            ["property", "list", cty, ity, name] => {
                let (c, i) = ScalarType::parse(cty)
                    .zip(ScalarType::parse(ity))
                    .ok_or_else(|| Error::parse(path, header_line, "bad list property type"))?;
                elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, header_line, "property before element"))?
                    .properties
                    .push(Property::List((*name).to_owned(), c, i));
            }
            ["property", ty, name] => {
                let t = ScalarType::parse(ty)
                    .ok_or_else(|| Error::parse(path, header_line, format!("bad type {ty}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, header_line, "property before element"))?
                    .properties
                    .push(Property::Scalar((*name).to_owned(), t));
            }
            ["end_header"] => break,
            _ => return Err(Error::parse(path, header_line, format!("unexpected header line {line:?}"))),
        }
    }
    let binary = binary.ok_or_else(|| Error::parse(path, header_line, "missing format line"))?;
    let mut body = if binary {
        Body::Binary(reader)
    } else {
        Body::Ascii {
            lines: reader.lines(),
            pending: Vec::new(),
            line: header_line,
        }
    };

    let mut data = PlyData {
        points: Vec::new(),
        normals: None,
        faces: Vec::new(),
    };
    for el in &elements {
        let scalar_index = |n: &str| {
            el.properties
                .iter()
                .position(|p| matches!(p, Property::Scalar(name, _) if name == n))
        };
        let xyz = ["x", "y", "z"].map(scalar_index);
        let nxyz = ["nx", "ny", "nz"].map(scalar_index);
        let is_vertex = el.name == "vertex";
        if is_vertex && xyz.iter().any(Option::is_none) {
            return Err(Error::Format {
                what: "ply",
                msg: "vertex element lacks x/y/z".into(),
            });
        }
        let has_normals = is_vertex && nxyz.iter().all(Option::is_some);
        let mut normals = Vec::new();
        let mut row = vec![0.0; el.properties.len()];
        for _ in 0..el.count {
            let mut list: Option<Vec<usize>> = None;
            for (pi, prop) in el.properties.iter().enumerate() {
                match prop {
                    Property::Scalar(_, ty) => row[pi] = body.next(*ty, path)?,
                    Property::List(name, cty, ity) => {
                        let n = body.next(*cty, path)? as usize;
                        let mut items = Vec::with_capacity(n);
                        for _ in 0..n {
                            items.push(body.next(*ity, path)? as usize);
                        }
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            list = Some(items);
                        }
                    }
                }
            }
            if is_vertex {
                data.points
                    .push(Vec3::new(row[xyz[0].unwrap()], row[xyz[1].unwrap()], row[xyz[2].unwrap()]));
                if has_normals {
                    normals.push(Vec3::new(
                        row[nxyz[0].unwrap()],
                        row[nxyz[1].unwrap()],
                        row[nxyz[2].unwrap()],
                    ));
                }
            }
            if let Some(face) = list {
                if face.iter().any(|&i| i >= data.points.len()) || face.len() < 3 {
                    return Err(Error::Format {
                        what: "ply",
                        msg: format!("invalid face {face:?}"),
                    });
                }
                data.faces.push(face);
            }
        }
        if has_normals {
            data.normals = Some(normals);
        }
    }
    Ok(data)
}
