//! The subset of PLY used by object model files: `ascii` and
//! `binary_little_endian` 1.0, float or double vertex coordinates, optional
//! face lists. Unknown properties and elements are read and discarded.

use crate::error::{Error, Result};
use crate::geometry::{cube_from_aabb, BoundingCube, PointSet, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct MeshModel {
    pub vertices: PointSet,
    pub faces: Option<Vec<Vec<usize>>>,
}

impl MeshModel {
    pub fn new(vertices: PointSet, faces: Option<Vec<Vec<usize>>>) -> Result<Self> {
        if let Some(faces) = &faces {
            for (f, face) in faces.iter().enumerate() {
                if let Some(&bad) = face.iter().find(|&&i| i >= vertices.len()) {
                    return Err(Error::FaceIndexOutOfRange {
                        face: f,
                        index: bad as i64,
                    });
                }
            }
        }
        Ok(MeshModel { vertices, faces })
    }
}

/// Axis-aligned bounding cube of the mesh vertices.
pub fn mesh_cube(m: &MeshModel) -> Result<BoundingCube> {
    let (lo, hi) = m.vertices.aabb();
    cube_from_aabb(&lo, &hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn is_float(self) -> bool {
        matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_start: usize,
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedHeader(msg.into())
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut next_line = || -> Option<String> {
        if pos >= bytes.len() {
            return None;
        }
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map_or(bytes.len(), |i| pos + i);
        let line = String::from_utf8_lossy(&bytes[pos..end])
            .trim_end_matches('\r')
            .to_string();
        pos = (end + 1).min(bytes.len());
        Some(line)
    };

    if next_line().as_deref().map(str::trim) != Some("ply") {
        return Err(malformed("missing `ply` magic line"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let line = next_line().ok_or_else(|| malformed("missing end_header"))?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, version] => {
                if *version != "1.0" {
                    return Err(Error::UnsupportedFormat(format!("version {version}")));
                }
                format = Some(match *fmt {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(Error::UnsupportedFormat(other.to_string())),
                });
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| malformed(format!("bad element count {count:?}")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            ["property", "list", count, item, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| malformed("property before any element"))?;
                let count = Scalar::parse(count)
                    .filter(|s| !s.is_float())
                    .ok_or_else(|| malformed(format!("bad list count type {count:?}")))?;
                let item = Scalar::parse(item)
                    .ok_or_else(|| malformed(format!("bad list item type {item:?}")))?;
                el.props.push(Property::List {
                    name: name.to_string(),
                    count,
                    item,
                });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| malformed("property before any element"))?;
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| malformed(format!("unknown property type {ty:?}")))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            ["end_header"] => break,
            _ => return Err(malformed(format!("unrecognized header line {line:?}"))),
        }
    }
    let format = format.ok_or_else(|| malformed("missing format line"))?;
    Ok(Header {
        format,
        elements,
        body_start: pos,
    })
}

/// Sequential reader over either body encoding.
enum Body<'a> {
    Ascii(std::str::SplitAsciiWhitespace<'a>),
    Binary { bytes: &'a [u8], pos: usize },
}

impl Body<'_> {
    fn read(&mut self, ty: Scalar, what: &str) -> Result<f64> {
        match self {
            Body::Ascii(tokens) => {
                let tok = tokens
                    .next()
                    .ok_or_else(|| Error::TruncatedBody(format!("ran out of values reading {what}")))?;
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::MalformedBody(format!("{tok:?} in {what} is not a number")))?;
                if !ty.is_float() && v.fract() != 0.0 {
                    return Err(Error::MalformedBody(format!("{tok:?} in {what} is not an integer")));
                }
                Ok(v)
            }
            Body::Binary { bytes, pos } => {
                let n = ty.size();
                let Some(b) = bytes.get(*pos..*pos + n) else {
                    return Err(Error::TruncatedBody(format!("ran out of bytes reading {what}")));
                };
                *pos += n;
                Ok(match ty {
                    Scalar::I8 => b[0] as i8 as f64,
                    Scalar::U8 => b[0] as f64,
                    Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
                    Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
                    Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                    Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                    Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                    Scalar::F64 => f64::from_le_bytes(b.try_into().expect("8 bytes")),
                })
            }
        }
    }
}

fn vertex_layout(el: &Element) -> Result<[usize; 3]> {
    let mut idx = [usize::MAX; 3];
    for (k, axis) in ["x", "y", "z"].iter().enumerate() {
        let i = el
            .props
            .iter()
            .position(|p| p.name() == *axis)
            .ok_or_else(|| malformed(format!("vertex element lacks property {axis}")))?;
        match el.props[i] {
            Property::Scalar { ty, .. } if ty.is_float() => idx[k] = i,
            _ => return Err(malformed(format!("vertex property {axis} must be float or double"))),
        }
    }
    Ok(idx)
}

/// Parses a PLY file. Vertex coordinates are passed through in file units.
pub fn parse_ply(bytes: &[u8]) -> Result<MeshModel> {
    let header = parse_header(bytes)?;
    let vertex_el = header
        .elements
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or_else(|| malformed("no vertex element"))?;
    let layout = vertex_layout(vertex_el)?;
    let body = &bytes[header.body_start..];
    let mut reader = match header.format {
        PlyFormat::Ascii => Body::Ascii(
            std::str::from_utf8(body)
                .map_err(|_| Error::MalformedBody("ASCII body is not UTF-8".into()))?
                .split_ascii_whitespace(),
        ),
        PlyFormat::BinaryLittleEndian => Body::Binary { bytes: body, pos: 0 },
    };

    let mut vertices = Vec::with_capacity(vertex_el.count.min(1 << 24));
    let mut faces: Option<Vec<Vec<usize>>> = None;
    for el in &header.elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        for row in 0..el.count {
            let mut xyz = [0.0; 3];
            for (p, prop) in el.props.iter().enumerate() {
                match prop {
                    Property::Scalar { ty, name } => {
                        let v = reader.read(*ty, name)?;
                        if is_vertex {
                            if let Some(k) = layout.iter().position(|&i| i == p) {
                                xyz[k] = v;
                            }
                        }
                    }
                    Property::List { count, item, name } => {
                        let n = reader.read(*count, name)?;
                        if n < 0.0 {
                            return Err(Error::MalformedBody(format!("negative list length in {name}")));
                        }
                        let mut items = Vec::with_capacity((n as usize).min(64));
                        for _ in 0..n as usize {
                            items.push(reader.read(*item, name)?);
                        }
                        if is_face && (name == "vertex_indices" || name == "vertex_index") {
                            let mut face = Vec::with_capacity(items.len());
                            for v in items {
                                if v < 0.0 {
                                    return Err(Error::FaceIndexOutOfRange { face: row, index: v as i64 });
                                }
                                face.push(v as usize);
                            }
                            faces.get_or_insert_with(Vec::new).push(face);
                        }
                    }
                }
            }
            if is_vertex {
                vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
        }
    }
    MeshModel::new(PointSet::new(vertices)?, faces)
}

/// Serializes a mesh with double-precision coordinates and `int` face indices.
pub fn write_ply(m: &MeshModel, format: PlyFormat) -> Vec<u8> {
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let mut out = format!(
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
        m.vertices.len()
    );
    if let Some(faces) = &m.faces {
        out += &format!("element face {}\nproperty list uchar int vertex_indices\n", faces.len());
    }
    out += "end_header\n";
    let mut bytes = out.into_bytes();
    let faces = m.faces.as_deref().unwrap_or(&[]);
    match format {
        PlyFormat::Ascii => {
            let mut body = String::new();
            for v in m.vertices.points() {
                body += &format!("{} {} {}\n", v.x, v.y, v.z);
            }
            for f in faces {
                body += &f.len().to_string();
                for i in f {
                    body += &format!(" {i}");
                }
                body.push('\n');
            }
            bytes.extend(body.into_bytes());
        }
        PlyFormat::BinaryLittleEndian => {
            for v in m.vertices.points() {
                for c in v.iter() {
                    bytes.extend(c.to_le_bytes());
                }
            }
            for f in faces {
                bytes.push(f.len() as u8);
                for &i in f {
                    bytes.extend((i as i32).to_le_bytes());
                }
            }
        }
    }
    bytes
}
