//! Flat binary layout for 3-D float tables.
//!
//! ```text
//! offset  size  field
//! 0       4     magic  b"TWG1"
//! 4       4     rows   u32 little-endian
//! 8       4     cols   u32 little-endian
//! 12      4     dim    u32 little-endian
//! 16      8*n   values f64 little-endian, row-major, channel last
//! ```
//!
//! Position tables are stored as `rows x cols x dim`. A token matrix with
//! `count` tokens is stored as `count x 1 x dim`.

use std::io::{Read, Write};

use ndarray::Array3;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"TWG1";
pub const HEADER_LEN: usize = 16;

pub fn encode(values: &Array3<f64>) -> Result<Vec<u8>> {
    let (rows, cols, dim) = values.dim();
    let field = |v: usize, name: &str| {
        u32::try_from(v).map_err(|_| Error::Format(format!("{name}={v} does not fit in u32")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * values.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&field(rows, "rows")?.to_le_bytes());
    out.extend_from_slice(&field(cols, "cols")?.to_le_bytes());
    out.extend_from_slice(&field(dim, "dim")?.to_le_bytes());
    for v in values.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Array3<f64>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (rows, cols, dim) = (word(4), word(8), word(12));
    let count = rows
        .checked_mul(cols)
        .and_then(|v| v.checked_mul(dim))
        .ok_or_else(|| Error::Format("shape overflows".into()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != count * 8 {
        return Err(Error::Format(format!(
            "payload is {} bytes, header {rows}x{cols}x{dim} needs {}",
            body.len(),
            count * 8
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Array3::from_shape_vec((rows, cols, dim), data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_to<W: Write>(mut w: W, values: &Array3<f64>) -> std::io::Result<()> {
    let bytes = encode(values).map_err(std::io::Error::other)?;
    w.write_all(&bytes)
}

pub fn read_from<R: Read>(mut r: R) -> std::io::Result<Array3<f64>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
