//! Mesh input (ASCII OBJ, PLY) and PLY output.

use fenwarp_core::geom::{TriMesh, Vec3};

use crate::error::FormatError;

/// ASCII OBJ `v` and `f` records, in file order. Polygons are
/// fan-triangulated, negative indices count back from the latest vertex and
/// texture or normal references are ignored.
pub fn parse_obj(bytes: &[u8]) -> Result<TriMesh, FormatError> {
    let text = std::str::from_utf8(bytes).map_err(|_| FormatError::new("OBJ: not UTF-8"))?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let err = |m: &str| FormatError::new(format!("OBJ line {}: {m}", n + 1));
        let mut t = line.split_whitespace();
        match t.next() {
            Some("v") => {
                let c: Vec<f64> = t
                    .take(3)
                    .map(|v| v.parse().map_err(|_| err("bad coordinate")))
                    .collect::<Result<_, _>>()?;
                if c.len() != 3 {
                    return Err(err("vertex needs three coordinates"));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = t
                    .map(|v| {
                        let i: i64 = v
                            .split('/')
                            .next()
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| err("bad face index"))?;
                        let abs = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                        u32::try_from(abs).map_err(|_| err("face index out of range"))
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(err("face needs three vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(TriMesh::new(vertices, faces)?)
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
    fn parse(s: &str) -> Result<Scalar, FormatError> {
        Ok(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return Err(FormatError::new(format!("PLY: unknown scalar type {s:?}"))),
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
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(Scalar, String),
    List(Scalar, Scalar, String),
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar(_, n) | Property::List(_, _, n) => n,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Source of PLY values, binary or ASCII.
trait Values {
    fn next(&mut self, ty: Scalar) -> Result<f64, FormatError>;
}

struct BinaryLe<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Values for BinaryLe<'_> {
    fn next(&mut self, ty: Scalar) -> Result<f64, FormatError> {
        let n = ty.size();
        let b = self
            .buf
            .get(self.pos..self.pos + n)
            .ok_or_else(|| FormatError::new("PLY: truncated body"))?;
        self.pos += n;
        Ok(match ty {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b.try_into().unwrap()),
        })
    }
}

struct Ascii<'a> {
    tokens: std::str::SplitAsciiWhitespace<'a>,
}

impl Values for Ascii<'_> {
    fn next(&mut self, _ty: Scalar) -> Result<f64, FormatError> {
        let t = self.tokens.next().ok_or_else(|| FormatError::new("PLY: truncated body"))?;
        t.parse().map_err(|_| FormatError::new(format!("PLY: bad number {t:?}")))
    }
}

type RawMesh = (Vec<Vec3>, Vec<[u32; 3]>);

fn read_elements(elements: &[Element], src: &mut dyn Values) -> Result<RawMesh, FormatError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in elements {
        let pos = |name: &str| el.props.iter().position(|p| p.name() == name);
        let (xi, yi, zi) = (pos("x"), pos("y"), pos("z"));
        let li = pos("vertex_indices").or_else(|| pos("vertex_index"));
        if el.name == "vertex" && (xi.is_none() || yi.is_none() || zi.is_none()) {
            return Err(FormatError::new("PLY: vertex element lacks x, y or z"));
        }
        for _ in 0..el.count {
            let mut xyz = [0.0; 3];
            for (pi, prop) in el.props.iter().enumerate() {
                match prop {
                    Property::Scalar(ty, _) => {
                        let v = src.next(*ty)?;
                        if el.name == "vertex" {
                            for (slot, idx) in [xi, yi, zi].iter().enumerate() {
                                if *idx == Some(pi) {
                                    xyz[slot] = v;
                                }
                            }
                        }
                    }
                    Property::List(cty, ity, _) => {
                        let n = src.next(*cty)?;
                        if !(n >= 0.0) {
                            return Err(FormatError::new("PLY: negative list length"));
                        }
                        let idx = (0..n as usize).map(|_| src.next(*ity)).collect::<Result<Vec<f64>, _>>()?;
                        if el.name == "face" && li == Some(pi) {
                            if idx.len() < 3 {
                                return Err(FormatError::new("PLY: face with fewer than 3 vertices"));
                            }
                            if idx.iter().any(|&i| !(0.0..=u32::MAX as f64).contains(&i)) {
                                return Err(FormatError::new("PLY: face index out of range"));
                            }
                            for k in 1..idx.len() - 1 {
                                faces.push([idx[0] as u32, idx[k] as u32, idx[k + 1] as u32]);
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
        }
    }
    Ok((vertices, faces))
}

/// Binary little-endian or ASCII PLY with `vertex` and `face` elements.
/// Polygons are fan-triangulated; other elements and properties are skipped.
pub fn parse_ply(bytes: &[u8]) -> Result<TriMesh, FormatError> {
    let (vertices, faces) = parse_ply_raw(bytes)?;
    Ok(TriMesh::new(vertices, faces)?)
}

fn parse_ply_raw(bytes: &[u8]) -> Result<RawMesh, FormatError> {
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| FormatError::new("PLY: missing end_header"))?;
    let nl = bytes[end..]
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| FormatError::new("PLY: missing end_header newline"))?;
    let body = &bytes[end + nl + 1..];
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| FormatError::new("PLY: header is not UTF-8"))?;
    let mut lines = header.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(FormatError::new("PLY: missing magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _] => format = Some(f.to_string()),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| FormatError::new(format!("PLY: bad element count {count:?}")))?,
                props: Vec::new(),
            }),
            ["property", "list", c, i, name] => elements
                .last_mut()
                .ok_or_else(|| FormatError::new("PLY: property before element"))?
                .props
                .push(Property::List(Scalar::parse(c)?, Scalar::parse(i)?, name.to_string())),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| FormatError::new("PLY: property before element"))?
                .props
                .push(Property::Scalar(Scalar::parse(ty)?, name.to_string())),
            _ => return Err(FormatError::new(format!("PLY: unexpected header line {line:?}"))),
        }
    }
    match format.as_deref() {
        Some("binary_little_endian") => read_elements(&elements, &mut BinaryLe { buf: body, pos: 0 }),
        Some("ascii") => {
            let text = std::str::from_utf8(body).map_err(|_| FormatError::new("PLY: ASCII body is not UTF-8"))?;
            read_elements(
                &elements,
                &mut Ascii {
                    tokens: text.split_ascii_whitespace(),
                },
            )
        }
        Some(f) => Err(FormatError::new(format!("PLY: unsupported format {f}"))),
        None => Err(FormatError::new("PLY: missing format line")),
    }
}

fn ply_header(vertices: usize, faces: Option<usize>) -> String {
    let mut h = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {vertices}\nproperty float x\nproperty float y\nproperty float z\n"
    );
    if let Some(f) = faces {
        h.push_str(&format!("element face {f}\nproperty list uchar int vertex_indices\n"));
    }
    h.push_str("end_header\n");
    h
}

fn push_vertices(out: &mut Vec<u8>, pts: &[Vec3]) {
    for p in pts {
        for c in [p.x, p.y, p.z] {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
}

/// Binary PLY with `f32` coordinates and triangle faces.
pub fn encode_ply_mesh(mesh: &TriMesh) -> Vec<u8> {
    let mut out = ply_header(mesh.vertices.len(), Some(mesh.faces.len())).into_bytes();
    push_vertices(&mut out, &mesh.vertices);
    for f in &mesh.faces {
        out.push(3);
        for &i in f {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}

/// Binary PLY point cloud with `f32` coordinates.
pub fn encode_ply_points(pts: &[Vec3]) -> Vec<u8> {
    let mut out = ply_header(pts.len(), None).into_bytes();
    push_vertices(&mut out, pts);
    out
}

/// Vertices of a PLY file; faces, if any, are ignored.
pub fn parse_ply_points(bytes: &[u8]) -> Result<Vec<Vec3>, FormatError> {
    Ok(parse_ply_raw(bytes)?.0)
}
