//! Minimal PLY reader/writer: ascii and binary_little_endian, vertex positions,
//! optional `red green blue` colors and face index lists. Unknown elements and
//! properties are parsed and skipped.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use super::{DatasetError, PointCloud, SurfaceMesh};

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
    fn parse(name: &str) -> Result<Self, DatasetError> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(DatasetError::PlyHeader(format!("unknown scalar type '{other}'"))),
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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => f64::from(b[0] as i8),
            Scalar::U8 => f64::from(b[0]),
            Scalar::I16 => f64::from(i16::from_le_bytes([b[0], b[1]])),
            Scalar::U16 => f64::from(u16::from_le_bytes([b[0], b[1]])),
            Scalar::I32 => f64::from(i32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Scalar::U32 => f64::from(u32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Scalar::F32 => f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            Scalar::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        }
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
    properties: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, DatasetError> {
    let bad = |m: &str| DatasetError::PlyHeader(m.to_string());
    let mut offset = 0;
    let mut lines = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing end_header"))?;
        let line = std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8"))?;
        let line = line.trim_end_matches('\r').trim();
        offset += end + 1;
        if line == "end_header" {
            break;
        }
        lines.push(line.to_string());
    }
    let mut it = lines.into_iter();
    if it.next().as_deref() != Some("ply") {
        return Err(bad("missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in it {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _version] => {
                format = Some(match *fmt {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(DatasetError::PlyHeader(format!("unsupported format '{other}'"))),
                });
            }
            ["element", name, count] => {
                let count = count.parse().map_err(|_| bad("element count is not an integer"))?;
                elements.push(Element { name: (*name).to_string(), count, properties: Vec::new() });
            }
            ["property", "list", count, item, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                el.properties.push(Property::List {
                    name: (*name).to_string(),
                    count: Scalar::parse(count)?,
                    item: Scalar::parse(item)?,
                });
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                el.properties.push(Property::Scalar { name: (*name).to_string(), ty: Scalar::parse(ty)? });
            }
            _ => return Err(DatasetError::PlyHeader(format!("unrecognized header line '{line}'"))),
        }
    }
    let format = format.ok_or_else(|| bad("missing format line"))?;
    Ok(Header { format, elements, body_offset: offset })
}

/// Streams element records as flat value lists (list properties are flattened as count, items...).
trait RecordReader {
    fn scalar(&mut self, ty: Scalar) -> Result<f64, DatasetError>;
}

struct AsciiReader<'a> {
    tokens: std::str::SplitAsciiWhitespace<'a>,
}

impl RecordReader for AsciiReader<'_> {
    fn scalar(&mut self, _ty: Scalar) -> Result<f64, DatasetError> {
        let tok = self.tokens.next().ok_or_else(|| DatasetError::PlyBody("unexpected end of data".into()))?;
        tok.parse::<f64>().map_err(|_| DatasetError::PlyBody(format!("'{tok}' is not a number")))
    }
}

struct BinaryReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl RecordReader for BinaryReader<'_> {
    fn scalar(&mut self, ty: Scalar) -> Result<f64, DatasetError> {
        let n = ty.size();
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(DatasetError::PlyBody("unexpected end of data".into()));
        }
        let v = ty.read_le(&self.bytes[self.pos..end]);
        self.pos = end;
        Ok(v)
    }
}

struct Parsed {
    points: Vec<Vector3<f64>>,
    colors: Option<Vec<[u8; 3]>>,
    faces: Vec<Vec<u32>>,
}

fn read_body(header: &Header, reader: &mut dyn RecordReader) -> Result<Parsed, DatasetError> {
    let mut parsed = Parsed { points: Vec::new(), colors: None, faces: Vec::new() };
    let mut saw_vertex = false;
    for el in &header.elements {
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        let idx = |n: &str| el.properties.iter().position(|p| p.name() == n);
        let (xi, yi, zi) = (idx("x"), idx("y"), idx("z"));
        let rgb = (idx("red"), idx("green"), idx("blue"));
        let face_list = el
            .properties
            .iter()
            .position(|p| matches!(p, Property::List { name, .. } if name == "vertex_indices" || name == "vertex_index"));
        if is_vertex {
            saw_vertex = true;
            if xi.is_none() || yi.is_none() || zi.is_none() {
                return Err(DatasetError::PlyHeader("vertex element lacks x/y/z".into()));
            }
            parsed.points.reserve(el.count);
            if let (Some(_), Some(_), Some(_)) = rgb {
                parsed.colors = Some(Vec::with_capacity(el.count));
            }
        }
        let mut scalars = vec![0.0; el.properties.len()];
        for _ in 0..el.count {
            let mut list_items: Vec<u32> = Vec::new();
            for (pi, prop) in el.properties.iter().enumerate() {
                match prop {
                    Property::Scalar { ty, .. } => scalars[pi] = reader.scalar(*ty)?,
                    Property::List { count, item, .. } => {
                        let n = reader.scalar(*count)?;
                        if !(n >= 0.0 && n.fract() == 0.0) {
                            return Err(DatasetError::PlyBody(format!("bad list length {n}")));
                        }
                        for _ in 0..n as usize {
                            let v = reader.scalar(*item)?;
                            if is_face && Some(pi) == face_list {
                                if !(v >= 0.0 && v.fract() == 0.0 && v <= f64::from(u32::MAX)) {
                                    return Err(DatasetError::PlyBody(format!("bad vertex index {v}")));
                                }
                                list_items.push(v as u32);
                            }
                        }
                    }
                }
            }
            if is_vertex {
                let p = Vector3::new(scalars[xi.unwrap()], scalars[yi.unwrap()], scalars[zi.unwrap()]);
                parsed.points.push(p);
                if let (Some(colors), (Some(r), Some(g), Some(b))) = (parsed.colors.as_mut(), rgb) {
                    let c = |v: f64| v.clamp(0.0, 255.0) as u8;
                    colors.push([c(scalars[r]), c(scalars[g]), c(scalars[b])]);
                }
            } else if is_face && face_list.is_some() {
                parsed.faces.push(list_items);
            }
        }
    }
    if !saw_vertex {
        return Err(DatasetError::PlyHeader("no vertex element".into()));
    }
    Ok(parsed)
}

fn parse_file(path: &Path) -> Result<Parsed, DatasetError> {
    let bytes = fs::read(path).map_err(|e| DatasetError::io(path, e))?;
    let header = parse_header(&bytes)?;
    let body = &bytes[header.body_offset..];
    match header.format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| DatasetError::PlyBody("ascii body is not UTF-8".into()))?;
            read_body(&header, &mut AsciiReader { tokens: text.split_ascii_whitespace() })
        }
        PlyFormat::BinaryLittleEndian => read_body(&header, &mut BinaryReader { bytes: body, pos: 0 }),
    }
}

pub fn load_pointcloud_ply(path: &Path) -> Result<PointCloud, DatasetError> {
    let parsed = parse_file(path)?;
    PointCloud::new(parsed.points, parsed.colors)
}

/// Loads a mesh; polygon faces are fan-triangulated.
pub fn load_mesh_ply(path: &Path) -> Result<SurfaceMesh, DatasetError> {
    let parsed = parse_file(path)?;
    let mut triangles = Vec::new();
    for face in &parsed.faces {
        for i in 1..face.len().saturating_sub(1) {
            triangles.push([face[0], face[i], face[i + 1]]);
        }
    }
    SurfaceMesh::new(PointCloud::new(parsed.points, parsed.colors)?, triangles)
}

fn write_ply(path: &Path, cloud: &PointCloud, faces: &[[u32; 3]], format: PlyFormat) -> Result<(), DatasetError> {
    let mut out = Vec::new();
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let mut header = format!("ply\nformat {fmt} 1.0\nelement vertex {}\n", cloud.len());
    header.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    if !faces.is_empty() {
        header.push_str(&format!("element face {}\nproperty list uchar int vertex_indices\n", faces.len()));
    }
    header.push_str("end_header\n");
    out.extend_from_slice(header.as_bytes());

    for (i, p) in cloud.points.iter().enumerate() {
        let color = cloud.colors.as_ref().map(|c| c[i]);
        match format {
            PlyFormat::Ascii => {
                // `{:?}` prints the shortest representation that round-trips exactly
                write!(out, "{:?} {:?} {:?}", p.x, p.y, p.z).expect("write to Vec");
                if let Some([r, g, b]) = color {
                    write!(out, " {r} {g} {b}").expect("write to Vec");
                }
                out.push(b'\n');
            }
            PlyFormat::BinaryLittleEndian => {
                for v in [p.x, p.y, p.z] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                if let Some(c) = color {
                    out.extend_from_slice(&c);
                }
            }
        }
    }
    for f in faces {
        match format {
            PlyFormat::Ascii => writeln!(out, "3 {} {} {}", f[0], f[1], f[2]).expect("write to Vec"),
            PlyFormat::BinaryLittleEndian => {
                out.push(3);
                for i in f {
                    out.extend_from_slice(&(*i as i32).to_le_bytes());
                }
            }
        }
    }
    fs::write(path, out).map_err(|e| DatasetError::io(path, e))
}

pub fn save_pointcloud_ply(cloud: &PointCloud, path: &Path, format: PlyFormat) -> Result<(), DatasetError> {
    write_ply(path, cloud, &[], format)
}

pub fn save_mesh_ply(mesh: &SurfaceMesh, path: &Path, format: PlyFormat) -> Result<(), DatasetError> {
    write_ply(path, &mesh.vertices, &mesh.triangles, format)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CUBE: &str = "ply\nformat ascii 1.0\ncomment unit cube\nelement vertex 8\n\
property float x\nproperty float y\nproperty float z\nproperty float nx\nproperty float ny\nproperty float nz\n\
element face 1\nproperty list uchar int vertex_indices\nend_header\n\
0 0 0 0 0 1\n1 0 0 0 0 1\n0 1 0 0 0 1\n1 1 0 0 0 1\n0 0 1 0 0 1\n1 0 1 0 0 1\n0 1 1 0 0 1\n1 1 1 0 0 1\n4 0 1 3 2\n";

    #[test]
    fn hand_written_cube_with_normals() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("cube.ply");
        fs::write(&path, CUBE).unwrap();
        let pc = load_pointcloud_ply(&path).unwrap();
        assert_eq!(pc.len(), 8);
        assert!(pc.colors.is_none());
        for p in &pc.points {
            assert!(p.iter().all(|v| *v == 0.0 || *v == 1.0));
        }
        assert_eq!(pc.points[5], Vector3::new(1.0, 0.0, 1.0));
        let mesh = load_mesh_ply(&path).unwrap();
        assert_eq!(mesh.triangles, vec![[0, 1, 3], [0, 3, 2]]);
    }

    #[test]
    fn round_trip_both_formats() {
        let tmp = tempfile::tempdir().unwrap();
        let pts = vec![Vector3::new(0.1, -2.5, 1e-7), Vector3::new(1.0 / 3.0, 7.25, -0.0), Vector3::new(3.0, 2.0, 1.0)];
        let pc = PointCloud::new(pts, Some(vec![[1, 2, 3], [255, 0, 128], [9, 9, 9]])).unwrap();
        for format in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let path = tmp.path().join(format!("{format:?}.ply"));
            save_pointcloud_ply(&pc, &path, format).unwrap();
            assert_eq!(load_pointcloud_ply(&path).unwrap(), pc);
            let mesh = SurfaceMesh::new(pc.clone(), vec![[0, 1, 2]]).unwrap();
            save_mesh_ply(&mesh, &path, format).unwrap();
            assert_eq!(load_mesh_ply(&path).unwrap(), mesh);
        }
    }

    #[test]
    fn binary_float32_with_extra_properties() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("b.ply");
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\n\
property float z\nproperty uchar intensity\nend_header\n"
            .to_vec();
        for (v, i) in [([1.5f32, 2.0, -3.0], 7u8), ([0.25, 0.5, 0.75], 8)] {
            for c in v {
                bytes.extend_from_slice(&c.to_le_bytes());
            }
            bytes.push(i);
        }
        fs::write(&path, &bytes).unwrap();
        let pc = load_pointcloud_ply(&path).unwrap();
        assert_eq!(pc.points, vec![Vector3::new(1.5, 2.0, -3.0), Vector3::new(0.25, 0.5, 0.75)]);

        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_pointcloud_ply(&path), Err(DatasetError::PlyBody(_))));
    }

    #[test]
    fn malformed_headers() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("bad.ply");
        for text in [
            "plx\nformat ascii 1.0\nend_header\n",
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n",
            "ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n",
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty quad x\nend_header\n",
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n",
        ] {
            fs::write(&path, text).unwrap();
            assert!(matches!(load_pointcloud_ply(&path), Err(DatasetError::PlyHeader(_))), "{text}");
        }
        fs::write(&path, "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n4 5\n").unwrap();
        assert!(matches!(load_pointcloud_ply(&path), Err(DatasetError::PlyBody(_))));
    }
}
