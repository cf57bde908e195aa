//! Binary field checkpoint.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "DPF1"                     magic
//! u32 L                      number of layer widths
//! u32 x L                    widths, e.g. 3 128 128 128 3
//! f64                        omega0
//! f64 x 3, f64               input frame center and scale
//! per layer: f64 x (in*out)  weights, row-major [in, out]
//!            f64 x out       biases
//! u32                        CRC-32 of every preceding byte
//! ```

use std::path::Path;

use super::{read_file, write_file, IoError, IoResult};
use crate::autodiff::Tensor;
use crate::field::{DeformationField, InputFrame, Layer, DEFAULT_HIDDEN};
use crate::geometry::Vec3;

const MAGIC: &[u8; 4] = b"DPF1";

pub fn field_to_bytes(field: &DeformationField) -> Vec<u8> {
    let dims = field.architecture();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in &dims {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    let frame = field.frame();
    for v in [field.omega0(), frame.center.x, frame.center.y, frame.center.z, frame.scale] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for layer in field.layers() {
        for v in layer.weight.data().iter().chain(layer.bias.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> IoResult<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(IoError::Format(format!(
                "truncated checkpoint: needed {n} bytes for {what} at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> IoResult<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> IoResult<Vec<f64>> {
        let b = self.take(n.checked_mul(8).ok_or_else(|| IoError::Format("size overflow".into()))?, what)?;
        Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Decodes a checkpoint of any architecture.
pub fn field_from_bytes(bytes: &[u8]) -> IoResult<DeformationField> {
    if bytes.len() < 8 {
        return Err(IoError::Format(format!("truncated checkpoint: {} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(IoError::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    let mut c = Cursor { bytes, pos: 4 };
    let ndims = c.u32("dimension count")? as usize;
    if !(3..=64).contains(&ndims) {
        return Err(IoError::Format(format!("implausible layer count {ndims}")));
    }
    let dims: Vec<usize> = (0..ndims).map(|_| c.u32("dims").map(|d| d as usize)).collect::<IoResult<_>>()?;
    let head = c.f64s(5, "header")?;
    let mut layers = Vec::new();
    for w in dims.windows(2) {
        let weight = c.f64s(w[0] * w[1], "weights")?;
        let bias = c.f64s(w[1], "biases")?;
        layers.push(Layer {
            weight: Tensor::matrix(w[0], w[1], weight).map_err(|e| IoError::Format(e.to_string()))?,
            bias: Tensor::new(vec![w[1]], bias).map_err(|e| IoError::Format(e.to_string()))?,
        });
    }
    let payload_end = c.pos;
    let stored = c.u32("checksum")?;
    if c.pos != bytes.len() {
        return Err(IoError::Format(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let actual = crc32fast::hash(&bytes[..payload_end]);
    if stored != actual {
        return Err(IoError::Format(format!(
            "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    let frame = InputFrame {
        center: Vec3::new(head[1], head[2], head[3]),
        scale: head[4],
    };
    DeformationField::from_layers(layers, head[0], frame).map_err(|e| IoError::Format(e.to_string()))
}

pub fn save_field(path: &Path, field: &DeformationField) -> IoResult<()> {
    write_file(path, &field_to_bytes(field))
}

/// Loads a checkpoint of the default `3-128-128-128-3` layout.
pub fn load_field(path: &Path) -> IoResult<DeformationField> {
    let mut dims = vec![3];
    dims.extend_from_slice(&DEFAULT_HIDDEN);
    dims.push(3);
    load_field_expecting(path, &dims)
}

/// Loads a checkpoint and checks its layer widths against `expected`.
pub fn load_field_expecting(path: &Path, expected: &[usize]) -> IoResult<DeformationField> {
    let field = field_from_bytes(&read_file(path)?)?;
    let found = field.architecture();
    if found != expected {
        return Err(IoError::Format(format!(
            "architecture mismatch: checkpoint has {found:?}, expected {expected:?}"
        )));
    }
    Ok(field)
}

/// Loads a checkpoint whatever its layer widths.
pub fn load_field_any(path: &Path) -> IoResult<DeformationField> {
    field_from_bytes(&read_file(path)?)
}
