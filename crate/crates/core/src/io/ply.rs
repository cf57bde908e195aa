use super::{parse_error, IoError, IoResult, MeshData};
use crate::geometry::Vec3;

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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
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
    props: Vec<Property>,
}

enum Value {
    Scalar(f64),
    List(Vec<f64>),
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> IoResult<Header> {
    let mut offset = 0;
    let mut line_no = 0;
    let mut next_line = |offset: &mut usize| -> IoResult<String> {
        let rest = &bytes[*offset..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_error(format!("byte {}", *offset), "unterminated header"))?;
        *offset += end + 1;
        line_no += 1;
        Ok(String::from_utf8_lossy(&rest[..end]).trim_end_matches('\r').to_string())
    };
    if next_line(&mut offset)?.trim() != "ply" {
        return Err(parse_error("line 1", "missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let line = next_line(&mut offset)?;
        let loc = format!("header byte {offset}");
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLittleEndian),
            ["format", "binary_big_endian", _] => {
                return Err(IoError::UnsupportedFeature("big-endian binary PLY".into()))
            }
            ["format", other, ..] => {
                return Err(IoError::UnsupportedFeature(format!("PLY format {other}")))
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_error(&loc, format!("bad element count {count:?}")))?,
                props: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_error(&loc, "property before element"))?;
                let count = Scalar::parse(count).ok_or_else(|| parse_error(&loc, format!("type {count}")))?;
                let item = Scalar::parse(item).ok_or_else(|| parse_error(&loc, format!("type {item}")))?;
                el.props.push(Property::List {
                    name: name.to_string(),
                    count,
                    item,
                });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_error(&loc, "property before element"))?;
                let ty = Scalar::parse(ty).ok_or_else(|| parse_error(&loc, format!("type {ty}")))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            ["end_header"] => break,
            _ => return Err(parse_error(loc, format!("unrecognized header line {line:?}"))),
        }
    }
    let format = format.ok_or_else(|| parse_error("header", "missing format line"))?;
    Ok(Header {
        format,
        elements,
        body_offset: offset,
    })
}

trait Source {
    fn scalar(&mut self, ty: Scalar, what: &str) -> IoResult<f64>;
}

struct AsciiSource<'a> {
    tokens: std::iter::Peekable<std::str::SplitWhitespace<'a>>,
    consumed: usize,
}

impl Source for AsciiSource<'_> {
    fn scalar(&mut self, _ty: Scalar, what: &str) -> IoResult<f64> {
        let tok = self
            .tokens
            .next()
            .ok_or_else(|| parse_error(format!("token {}", self.consumed), format!("unexpected end of data in {what}")))?;
        self.consumed += 1;
        tok.parse()
            .map_err(|_| parse_error(format!("token {}", self.consumed), format!("bad number {tok:?}")))
    }
}

struct BinarySource<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl Source for BinarySource<'_> {
    fn scalar(&mut self, ty: Scalar, what: &str) -> IoResult<f64> {
        let n = ty.size();
        if self.offset + n > self.bytes.len() {
            return Err(parse_error(
                format!("byte {}", self.offset),
                format!("unexpected end of data in {what}"),
            ));
        }
        let v = ty.read_le(&self.bytes[self.offset..self.offset + n]);
        self.offset += n;
        Ok(v)
    }
}

fn read_elements(header: &Header, src: &mut dyn Source) -> IoResult<MeshData> {
    let mut data = MeshData::default();
    for el in &header.elements {
        let idx = |n: &str| el.props.iter().position(|p| p.name() == n);
        let (x, y, z) = (idx("x"), idx("y"), idx("z"));
        let (nx, ny, nz) = (idx("nx"), idx("ny"), idx("nz"));
        let fi = idx("vertex_indices").or_else(|| idx("vertex_index"));
        let has_normals = nx.is_some() && ny.is_some() && nz.is_some();
        if el.name == "vertex" && has_normals {
            data.normals = Some(Vec::with_capacity(el.count));
        }
        for row in 0..el.count {
            let mut values = Vec::with_capacity(el.props.len());
            for p in &el.props {
                let what = || format!("{} {} of {} (declared {}, found {})", el.name, row, el.count, el.count, row);
                values.push(match p {
                    Property::Scalar { ty, .. } => Value::Scalar(src.scalar(*ty, &what())?),
                    Property::List { count, item, .. } => {
                        let n = src.scalar(*count, &what())?;
                        if !(n >= 0.0) {
                            return Err(parse_error(what(), "negative list length"));
                        }
                        let mut items = Vec::with_capacity(n as usize);
                        for _ in 0..n as usize {
                            items.push(src.scalar(*item, &what())?);
                        }
                        Value::List(items)
                    }
                });
            }
            let get = |i: Option<usize>| match i.map(|i| &values[i]) {
                Some(Value::Scalar(v)) => Some(*v),
                _ => None,
            };
            if el.name == "vertex" {
                let (Some(px), Some(py), Some(pz)) = (get(x), get(y), get(z)) else {
                    return Err(parse_error("vertex element", "missing x/y/z properties"));
                };
                data.vertices.push(Vec3::new(px, py, pz));
                if let Some(n) = data.normals.as_mut() {
                    n.push(Vec3::new(get(nx).unwrap(), get(ny).unwrap(), get(nz).unwrap()));
                }
            } else if el.name == "face" {
                let Some(Value::List(ids)) = fi.map(|i| &values[i]) else {
                    return Err(parse_error("face element", "missing vertex_indices list"));
                };
                if ids.len() < 3 {
                    return Err(parse_error(format!("face {row}"), "fewer than 3 indices"));
                }
                for k in 1..ids.len() - 1 {
                    data.faces.push([ids[0] as usize, ids[k] as usize, ids[k + 1] as usize]);
                }
            }
        }
    }
    Ok(data)
}

/// Parses ascii or binary little-endian PLY.
pub fn parse_ply(bytes: &[u8]) -> IoResult<MeshData> {
    let header = parse_header(bytes)?;
    let body = &bytes[header.body_offset..];
    match header.format {
        PlyFormat::Ascii => {
            let text = String::from_utf8_lossy(body);
            let mut src = AsciiSource {
                tokens: text.split_whitespace().peekable(),
                consumed: 0,
            };
            read_elements(&header, &mut src)
        }
        PlyFormat::BinaryLittleEndian => {
            let mut src = BinarySource { bytes: body, offset: 0 };
            read_elements(&header, &mut src)
        }
    }
}

/// Serializes vertices as doubles, normals when present and triangles.
pub fn write_ply_bytes(data: &MeshData, format: PlyFormat) -> Vec<u8> {
    let mut out = String::from("ply\n");
    out.push_str(match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    out.push_str(&format!("element vertex {}\n", data.vertices.len()));
    for p in ["x", "y", "z"] {
        out.push_str(&format!("property double {p}\n"));
    }
    if data.normals.is_some() {
        for p in ["nx", "ny", "nz"] {
            out.push_str(&format!("property double {p}\n"));
        }
    }
    if !data.faces.is_empty() {
        out.push_str(&format!("element face {}\n", data.faces.len()));
        out.push_str("property list uchar int vertex_indices\n");
    }
    out.push_str("end_header\n");
    let mut bytes = out.into_bytes();
    let rows = data.vertices.iter().enumerate().map(|(i, v)| {
        let mut r = vec![v.x, v.y, v.z];
        if let Some(n) = &data.normals {
            r.extend_from_slice(&[n[i].x, n[i].y, n[i].z]);
        }
        r
    });
    match format {
        PlyFormat::Ascii => {
            let mut s = String::new();
            for r in rows {
                let parts: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
                s.push_str(&parts.join(" "));
                s.push('\n');
            }
            for f in &data.faces {
                s.push_str(&format!("3 {} {} {}\n", f[0], f[1], f[2]));
            }
            bytes.extend_from_slice(s.as_bytes());
        }
        PlyFormat::BinaryLittleEndian => {
            for r in rows {
                for v in r {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
            for f in &data.faces {
                bytes.push(3);
                for &i in f {
                    bytes.extend_from_slice(&(i as i32).to_le_bytes());
                }
            }
        }
    }
    bytes
}
