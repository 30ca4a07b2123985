//! `ORLW` parameter checkpoints.
//!
//! Layout, all little-endian:
//!
//! | field           | type            |
//! |-----------------|-----------------|
//! | magic           | `b"ORLW"`       |
//! | version         | `u16`           |
//! | layer count `L` | `u32`           |
//! | sizes           | `u32 × (L + 1)` |
//! | output tag      | `u8` (0 identity, 1 scaled tanh) |
//! | output bound    | `f64`           |
//! | parameters      | `f64 × P`, layer by layer: row-major weights then biases |

use std::path::Path;

use super::{MlpNet, OutputActivation};
use crate::error::{Error, FormatError, Result};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"ORLW";
pub const WEIGHTS_VERSION: u16 = 1;

pub fn encode_mlp(net: &MlpNet) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 8 * net.num_params());
    out.extend_from_slice(&WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(net.num_layers() as u32).to_le_bytes());
    for &s in net.sizes() {
        out.extend_from_slice(&(s as u32).to_le_bytes());
    }
    let (tag, bound) = match net.output_activation() {
        OutputActivation::Identity => (0u8, 0.0),
        OutputActivation::ScaledTanh { bound } => (1u8, bound),
    };
    out.push(tag);
    out.extend_from_slice(&bound.to_le_bytes());
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], FormatError> {
        if self.buf.len() - self.pos < n {
            return Err(FormatError::Truncated {
                expected: (self.pos + n) as u64,
                found: self.buf.len() as u64,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_mlp(bytes: &[u8]) -> std::result::Result<MlpNet, FormatError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != WEIGHTS_MAGIC {
        return Err(FormatError::BadMagic {
            expected: WEIGHTS_MAGIC,
            found: magic,
        });
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != WEIGHTS_VERSION {
        return Err(FormatError::UnsupportedVersion {
            found: version,
            supported: WEIGHTS_VERSION,
        });
    }
    let layers = r.u32()? as usize;
    if layers == 0 || layers > 64 {
        return Err(FormatError::CorruptHeader(format!("layer count {layers}")));
    }
    let sizes = (0..=layers)
        .map(|_| r.u32().map(|s| s as usize))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if sizes.iter().any(|&s| s == 0 || s > 1 << 20) {
        return Err(FormatError::CorruptHeader(format!("layer sizes {sizes:?}")));
    }
    let tag = r.take(1)?[0];
    let bound = r.f64()?;
    let output = match tag {
        0 => OutputActivation::Identity,
        1 if bound.is_finite() && bound > 0.0 => OutputActivation::ScaledTanh { bound },
        _ => return Err(FormatError::CorruptHeader(format!("output activation {tag}/{bound}"))),
    };
    let n: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    let expected = r.pos + 8 * n;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected: expected as u64,
            found: bytes.len() as u64,
        });
    }
    if bytes.len() > expected {
        return Err(FormatError::CorruptHeader(format!(
            "{} trailing bytes after parameters",
            bytes.len() - expected
        )));
    }
    let params = (0..n).map(|_| r.f64()).collect::<std::result::Result<Vec<_>, _>>()?;
    MlpNet::from_params(&sizes, output, params).map_err(|e| FormatError::CorruptHeader(e.to_string()))
}

pub fn save_mlp(net: &MlpNet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_mlp(net)).map_err(|e| Error::io(path, e))
}

pub fn load_mlp(path: impl AsRef<Path>) -> Result<MlpNet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mlp(&bytes).map_err(|e| Error::format(path, e))
}
