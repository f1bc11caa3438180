//! Point-cloud and mesh file I/O.
//!
//! Supported inputs are whitespace-separated `.xyz` (3 or 6 columns), `.ply`
//! (ascii or little-endian binary) and `.obj`. Meshes are written as `.obj`
//! text or little-endian binary `.ply` with double-precision coordinates, so a
//! binary round trip is bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{OrientedPointCloud, Point, Rgb, TriangleMesh, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointFormat {
    Xyz,
    Ply,
}

impl PointFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match extension(path).as_deref() {
            Some("xyz") | Some("txt") => Some(Self::Xyz),
            Some("ply") => Some(Self::Ply),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match extension(path).as_deref() {
            Some("obj") => Some(Self::Obj),
            Some("ply") => Some(Self::Ply),
            _ => None,
        }
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

pub fn load_point_cloud(path: &Path, format: PointFormat) -> Result<OrientedPointCloud> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    match format {
        PointFormat::Xyz => read_xyz(reader, path),
        PointFormat::Ply => {
            let ply = PlyData::read(&mut reader, path)?;
            ply.into_cloud()
        }
    }
}

/// Load with the format inferred from the file extension.
pub fn load_point_cloud_auto(path: &Path) -> Result<OrientedPointCloud> {
    let format = PointFormat::from_path(path).ok_or_else(|| {
        Error::InvalidConfig(format!("unknown point format for {}", path.display()))
    })?;
    load_point_cloud(path, format)
}

fn read_xyz(reader: impl BufRead, path: &Path) -> Result<OrientedPointCloud> {
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut columns = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(lineno + 1, format!("bad number: {e}")))?;
        if values.len() != 3 && values.len() != 6 {
            return Err(Error::parse(
                lineno + 1,
                format!("expected 3 or 6 values, found {}", values.len()),
            ));
        }
        match columns {
            None => columns = Some(values.len()),
            Some(c) if c != values.len() => {
                return Err(Error::parse(lineno + 1, "inconsistent column count"))
            }
            _ => {}
        }
        positions.push(Point::new(values[0], values[1], values[2]));
        if values.len() == 6 {
            normals.push(Vector::new(values[3], values[4], values[5]));
        }
    }
    let cloud = OrientedPointCloud::new(positions)?;
    if normals.is_empty() {
        Ok(cloud)
    } else {
        cloud.with_normals(normals)
    }
}

pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    let format = MeshFormat::from_path(path).ok_or_else(|| {
        Error::InvalidConfig(format!("unknown mesh format for {}", path.display()))
    })?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mesh = match format {
        MeshFormat::Obj => read_obj(reader, path)?,
        MeshFormat::Ply => PlyData::read(&mut reader, path)?.into_mesh()?,
    };
    mesh.validate()?;
    Ok(mesh)
}

fn read_obj(reader: impl BufRead, path: &Path) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let v: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::parse(lineno + 1, format!("bad vertex: {e}")))?;
                if v.len() != 3 {
                    return Err(Error::parse(lineno + 1, "vertex needs 3 coordinates"));
                }
                vertices.push(Point::new(v[0], v[1], v[2]));
            }
            Some("f") => {
                let mut face = Vec::new();
                for t in tokens {
                    let first = t.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|_| Error::parse(lineno + 1, format!("bad face index {t}")))?;
                    let idx = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                    if idx < 0 || idx as usize >= vertices.len() {
                        return Err(Error::parse(lineno + 1, "face index out of range"));
                    }
                    face.push(idx as u32);
                }
                if face.len() < 3 {
                    return Err(Error::parse(lineno + 1, "face needs 3 vertices"));
                }
                for k in 1..face.len() - 1 {
                    triangles.push([face[0], face[k], face[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(TriangleMesh {
        vertices,
        triangles,
        vertex_colors: None,
    })
}

pub fn save_mesh(mesh: &TriangleMesh, path: &Path, format: MeshFormat) -> Result<()> {
    mesh.validate()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = match format {
        MeshFormat::Obj => write_obj(mesh, &mut w),
        MeshFormat::Ply => write_ply_mesh(mesh, &mut w),
    };
    res.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_obj(mesh: &TriangleMesh, w: &mut impl Write) -> std::io::Result<()> {
    for (i, v) in mesh.vertices.iter().enumerate() {
        match &mesh.vertex_colors {
            Some(c) => writeln!(
                w,
                "v {} {} {} {} {} {}",
                v.x, v.y, v.z, c[i][0], c[i][1], c[i][2]
            )?,
            None => writeln!(w, "v {} {} {}", v.x, v.y, v.z)?,
        }
    }
    for t in &mesh.triangles {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

fn color_byte(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_ply_mesh(mesh: &TriangleMesh, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    for p in ["x", "y", "z"] {
        writeln!(w, "property double {p}")?;
    }
    if mesh.vertex_colors.is_some() {
        for p in ["red", "green", "blue"] {
            writeln!(w, "property uchar {p}")?;
        }
    }
    writeln!(w, "element face {}", mesh.triangles.len())?;
    writeln!(w, "property list uchar int vertex_indices")?;
    writeln!(w, "end_header")?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        for a in 0..3 {
            w.write_all(&v[a].to_le_bytes())?;
        }
        if let Some(c) = &mesh.vertex_colors {
            w.write_all(&c[i].map(color_byte))?;
        }
    }
    for t in &mesh.triangles {
        w.write_all(&[3u8])?;
        for &i in t {
            w.write_all(&(i as i32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Write a cloud as binary little-endian ply with double coordinates, plus
/// normals and colors when present.
pub fn save_point_cloud(cloud: &OrientedPointCloud, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = (|| -> std::io::Result<()> {
        writeln!(w, "ply")?;
        writeln!(w, "format binary_little_endian 1.0")?;
        writeln!(w, "element vertex {}", cloud.len())?;
        for p in ["x", "y", "z"] {
            writeln!(w, "property double {p}")?;
        }
        if cloud.normals().is_some() {
            for p in ["nx", "ny", "nz"] {
                writeln!(w, "property double {p}")?;
            }
        }
        if cloud.colors().is_some() {
            for p in ["red", "green", "blue"] {
                writeln!(w, "property uchar {p}")?;
            }
        }
        writeln!(w, "end_header")?;
        for (i, p) in cloud.positions().iter().enumerate() {
            for a in 0..3 {
                w.write_all(&p[a].to_le_bytes())?;
            }
            if let Some(n) = cloud.normals() {
                for a in 0..3 {
                    w.write_all(&n[i][a].to_le_bytes())?;
                }
            }
            if let Some(c) = cloud.colors() {
                w.write_all(&c[i].map(color_byte))?;
            }
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
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
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Self::F32 | Self::F64)
    }
}

#[derive(Debug, Clone)]
enum PropertyKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: PropertyKind,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLe,
}

/// Decoded ply contents: scalar columns of the vertex element plus face lists.
struct PlyData {
    vertex_columns: Vec<(String, Scalar, Vec<f64>)>,
    faces: Vec<Vec<u32>>,
}

impl PlyData {
    fn read(reader: &mut impl BufRead, path: &Path) -> Result<Self> {
        let (encoding, elements) = read_header(reader, path)?;
        let mut vertex_columns = Vec::new();
        let mut faces = Vec::new();
        let mut tokens = AsciiTokens::default();
        let mut record = 0usize;
        for el in &elements {
            let is_vertex = el.name == "vertex";
            let is_face = el.name == "face";
            let mut columns: Vec<Vec<f64>> = if is_vertex {
                el.properties.iter().map(|_| Vec::with_capacity(el.count)).collect()
            } else {
                Vec::new()
            };
            for _ in 0..el.count {
                record += 1;
                if encoding == Encoding::Ascii {
                    tokens.next_line(reader, path, record)?;
                }
                for (pi, prop) in el.properties.iter().enumerate() {
                    match &prop.kind {
                        PropertyKind::Scalar(s) => {
                            let v = read_value(reader, encoding, &mut tokens, *s, path, record)?;
                            if is_vertex {
                                columns[pi].push(v);
                            }
                        }
                        PropertyKind::List { count, item } => {
                            let n = read_value(reader, encoding, &mut tokens, *count, path, record)?;
                            if !(n >= 0.0 && n.fract() == 0.0) {
                                return Err(Error::parse(record, "bad list length"));
                            }
                            let mut list = Vec::with_capacity(n as usize);
                            for _ in 0..n as usize {
                                let v =
                                    read_value(reader, encoding, &mut tokens, *item, path, record)?;
                                list.push(v);
                            }
                            let is_index_list =
                                prop.name == "vertex_indices" || prop.name == "vertex_index";
                            if is_face && is_index_list {
                                if list.iter().any(|&v| v < 0.0 || v.fract() != 0.0) {
                                    return Err(Error::parse(record, "bad vertex index"));
                                }
                                faces.push(list.into_iter().map(|v| v as u32).collect());
                            }
                        }
                    }
                }
                if encoding == Encoding::Ascii && !tokens.exhausted() {
                    return Err(Error::parse(record, "trailing values in record"));
                }
            }
            if is_vertex {
                for (prop, col) in el.properties.iter().zip(columns) {
                    if let PropertyKind::Scalar(s) = prop.kind {
                        vertex_columns.push((prop.name.clone(), s, col));
                    }
                }
            }
        }
        Ok(Self {
            vertex_columns,
            faces,
        })
    }

    fn column(&self, name: &str) -> Option<&(String, Scalar, Vec<f64>)> {
        self.vertex_columns.iter().find(|(n, _, _)| n == name)
    }

    fn triple(&self, names: [&str; 3]) -> Option<Vec<[f64; 3]>> {
        let cols: Vec<&Vec<f64>> = names
            .iter()
            .map(|n| self.column(n).map(|c| &c.2))
            .collect::<Option<_>>()?;
        Some(
            (0..cols[0].len())
                .map(|i| [cols[0][i], cols[1][i], cols[2][i]])
                .collect(),
        )
    }

    fn positions(&self) -> Result<Vec<Point>> {
        let xyz = self
            .triple(["x", "y", "z"])
            .ok_or_else(|| Error::parse(0, "vertex element lacks x/y/z"))?;
        Ok(xyz.into_iter().map(|p| Point::new(p[0], p[1], p[2])).collect())
    }

    fn colors(&self) -> Option<Vec<Rgb>> {
        let scale = match self.column("red")?.1 {
            s if s.is_integer() => 1.0 / 255.0,
            _ => 1.0,
        };
        self.triple(["red", "green", "blue"])
            .map(|c| c.into_iter().map(|c| c.map(|v| (v * scale).clamp(0.0, 1.0))).collect())
    }

    fn into_cloud(self) -> Result<OrientedPointCloud> {
        let mut cloud = OrientedPointCloud::new(self.positions()?)?;
        if let Some(n) = self.triple(["nx", "ny", "nz"]) {
            cloud = cloud.with_normals(n.into_iter().map(|n| Vector::new(n[0], n[1], n[2])).collect())?;
        }
        if let Some(c) = self.colors() {
            cloud = cloud.with_colors(c)?;
        }
        Ok(cloud)
    }

    fn into_mesh(self) -> Result<TriangleMesh> {
        let vertices = self.positions()?;
        let vertex_colors = self.colors();
        let mut triangles = Vec::new();
        for (fi, face) in self.faces.iter().enumerate() {
            if face.len() < 3 {
                return Err(Error::parse(fi, "face with fewer than 3 vertices"));
            }
            for k in 1..face.len() - 1 {
                triangles.push([face[0], face[k], face[k + 1]]);
            }
        }
        Ok(TriangleMesh {
            vertices,
            triangles,
            vertex_colors,
        })
    }
}

fn read_header(reader: &mut impl BufRead, path: &Path) -> Result<(Encoding, Vec<Element>)> {
    let mut line = String::new();
    let mut lineno = 0usize;
    let mut next_line = |reader: &mut dyn BufRead, line: &mut String| -> Result<usize> {
        line.clear();
        let n = reader.read_line(line).map_err(|e| Error::io(path, e))?;
        lineno += 1;
        if n == 0 {
            return Err(Error::parse(lineno, "unexpected end of ply header"));
        }
        Ok(lineno)
    };
    let ln = next_line(reader, &mut line)?;
    if line.trim() != "ply" {
        return Err(Error::parse(ln, "missing ply magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let ln = next_line(reader, &mut line)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", _] => encoding = Some(Encoding::Ascii),
            ["format", "binary_little_endian", _] => encoding = Some(Encoding::BinaryLe),
            ["format", other, ..] => {
                return Err(Error::parse(ln, format!("unsupported ply format {other}")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| Error::parse(ln, "bad element count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", count, item, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(ln, "property before element"))?;
                let (Some(count), Some(item)) = (Scalar::parse(count), Scalar::parse(item)) else {
                    return Err(Error::parse(ln, "unknown list type"));
                };
                el.properties.push(Property {
                    name: name.to_string(),
                    kind: PropertyKind::List { count, item },
                });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(ln, "property before element"))?;
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| Error::parse(ln, format!("unknown property type {ty}")))?;
                el.properties.push(Property {
                    name: name.to_string(),
                    kind: PropertyKind::Scalar(ty),
                });
            }
            ["end_header"] => break,
            _ => return Err(Error::parse(ln, format!("unrecognized header line: {}", line.trim()))),
        }
    }
    let encoding = encoding.ok_or_else(|| Error::parse(0, "ply header lacks format line"))?;
    Ok((encoding, elements))
}

#[derive(Default)]
struct AsciiTokens {
    tokens: Vec<String>,
    pos: usize,
}

impl AsciiTokens {
    fn next_line(&mut self, reader: &mut impl BufRead, path: &Path, record: usize) -> Result<()> {
        let mut line = String::new();
        loop {
            line.clear();
            let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                return Err(Error::parse(record, "unexpected end of file"));
            }
            if !line.trim().is_empty() {
                break;
            }
        }
        self.tokens = line.split_whitespace().map(str::to_owned).collect();
        self.pos = 0;
        Ok(())
    }

    fn exhausted(&self) -> bool {
        self.pos == self.tokens.len()
    }
}

fn read_value(
    reader: &mut impl Read,
    encoding: Encoding,
    tokens: &mut AsciiTokens,
    ty: Scalar,
    path: &Path,
    record: usize,
) -> Result<f64> {
    match encoding {
        Encoding::Ascii => {
            let t = tokens
                .tokens
                .get(tokens.pos)
                .ok_or_else(|| Error::parse(record, "record has too few values"))?;
            tokens.pos += 1;
            t.parse::<f64>()
                .map_err(|_| Error::parse(record, format!("bad value {t}")))
        }
        Encoding::BinaryLe => {
            let mut buf = [0u8; 8];
            reader
                .read_exact(&mut buf[..ty.size()])
                .map_err(|e| match e.kind() {
                    std::io::ErrorKind::UnexpectedEof => {
                        Error::parse(record, "unexpected end of binary payload")
                    }
                    _ => Error::io(path, e),
                })?;
            Ok(ty.decode(&buf))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, contents: &[u8]) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, contents).unwrap();
        p
    }

    #[test]
    fn xyz_three_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.xyz", b"0 0 0\n1 0 0\n0 1 0\n");
        let c = load_point_cloud(&p, PointFormat::Xyz).unwrap();
        assert_eq!(c.len(), 3);
        assert!(c.normals().is_none());
        assert_eq!(c.positions()[1], Point::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn xyz_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "bad.xyz", b"0 0 0\n1 0\n");
        match load_point_cloud(&p, PointFormat::Xyz) {
            Err(Error::Parse { record, .. }) => assert_eq!(record, 2),
            other => panic!("unexpected {other:?}"),
        }
        let p = write(&dir, "empty.xyz", b"\n# nothing\n");
        assert!(matches!(
            load_point_cloud(&p, PointFormat::Xyz),
            Err(Error::EmptyInput)
        ));
        let missing = dir.path().join("missing.xyz");
        assert!(matches!(
            load_point_cloud(&missing, PointFormat::Xyz),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn ascii_ply_with_normals_renormalizes() {
        let dir = tempfile::tempdir().unwrap();
        let text = "ply\nformat ascii 1.0\ncomment test\nelement vertex 2\n\
                    property float x\nproperty float y\nproperty float z\n\
                    property float nx\nproperty float ny\nproperty float nz\nend_header\n\
                    0 0 0 0 0 2\n1 2 3 1 0 0\n";
        let p = write(&dir, "n.ply", text.as_bytes());
        let c = load_point_cloud(&p, PointFormat::Ply).unwrap();
        assert_eq!(c.normals().unwrap()[0], Vector::new(0.0, 0.0, 1.0));
        assert_eq!(c.positions()[1], Point::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn ascii_ply_mesh_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let text = "ply\nformat ascii 1.0\nelement vertex 4\nproperty double x\n\
                    property double y\nproperty double z\nelement face 1\n\
                    property list uchar int vertex_indices\nend_header\n\
                    0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let p = write(&dir, "q.ply", text.as_bytes());
        let m = load_mesh(&p).unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
        let truncated = &text[..text.len() - 10];
        let p = write(&dir, "t.ply", truncated.as_bytes());
        assert!(matches!(load_mesh(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn obj_single_triangle() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.obj");
        let mesh = TriangleMesh::new(
            vec![Point::origin(), Point::new(1.0, 0.0, 0.0), Point::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        save_mesh(&mesh, &p, MeshFormat::Obj).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 3);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 1);
        assert!(text.contains("f 1 2 3"));
        assert_eq!(load_mesh(&p).unwrap(), mesh);
    }

    #[test]
    fn empty_mesh_is_valid_file() {
        let dir = tempfile::tempdir().unwrap();
        for (name, fmt) in [("e.obj", MeshFormat::Obj), ("e.ply", MeshFormat::Ply)] {
            let p = dir.path().join(name);
            save_mesh(&TriangleMesh::default(), &p, fmt).unwrap();
            let m = load_mesh(&p).unwrap();
            assert!(m.vertices.is_empty() && m.triangles.is_empty());
        }
    }

    #[test]
    fn colored_ply_has_rgb_properties() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ply");
        let mut mesh = TriangleMesh::new(
            vec![Point::origin(), Point::new(1.0, 0.0, 0.0), Point::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        mesh.vertex_colors = Some(vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        save_mesh(&mesh, &p, MeshFormat::Ply).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let header = String::from_utf8_lossy(&bytes[..200]);
        for prop in ["property uchar red", "property uchar green", "property uchar blue"] {
            assert!(header.contains(prop));
        }
        assert_eq!(load_mesh(&p).unwrap().vertex_colors, mesh.vertex_colors);
    }
}
