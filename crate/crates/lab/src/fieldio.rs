//! Binary field files.
//!
//! Layout, little endian: the magic `CZLF`, a `u32` format version, then
//! `d, K, n, level, boundary_mode` as `u32` (`0` periodic, `1` interior),
//! then for each level-`level` cell in index order the `n x n` value row by
//! row, each entry as `re, im` in `f64`.

use std::path::Path;

use czlab_core::algebra::CMat;
use czlab_core::field::OperatorField;
use czlab_core::grid::{BoundaryMode, DyadicDomain};
use num_complex::Complex64;

pub const MAGIC: &[u8; 4] = b"CZLF";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 6 * 4;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a field file (bad magic)")]
    Magic,
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("truncated or oversized payload: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },
    #[error("bad header: {0}")]
    Header(String),
}

fn mode_code(m: BoundaryMode) -> u32 {
    match m {
        BoundaryMode::Periodic => 0,
        BoundaryMode::Interior => 1,
    }
}

pub fn encode(f: &OperatorField) -> Vec<u8> {
    let dom = f.domain();
    let n = f.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + f.values().len() * n * n * 16);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, dom.dim(), dom.depth(), n as u32, f.level(), mode_code(dom.mode())] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for m in f.values() {
        for i in 0..n {
            for j in 0..n {
                out.extend_from_slice(&m[(i, j)].re.to_le_bytes());
                out.extend_from_slice(&m[(i, j)].im.to_le_bytes());
            }
        }
    }
    out
}

fn u32_at(bytes: &[u8], i: usize) -> u32 {
    u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("four bytes"))
}

pub fn decode(bytes: &[u8]) -> Result<OperatorField, FormatError> {
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Length { expected: HEADER_LEN, found: bytes.len() });
    }
    if &bytes[..4] != MAGIC {
        return Err(FormatError::Magic);
    }
    let version = u32_at(bytes, 0);
    if version != VERSION {
        return Err(FormatError::Version(version));
    }
    let (d, depth, n, level, mode) = (u32_at(bytes, 1), u32_at(bytes, 2), u32_at(bytes, 3) as usize, u32_at(bytes, 4), u32_at(bytes, 5));
    let mode = match mode {
        0 => BoundaryMode::Periodic,
        1 => BoundaryMode::Interior,
        m => return Err(FormatError::Header(format!("boundary mode {m}"))),
    };
    let dom = DyadicDomain::new(d, depth, mode).map_err(|e| FormatError::Header(e.to_string()))?;
    if level > depth || n == 0 || n > 64 {
        return Err(FormatError::Header(format!("level {level}, n = {n} at K = {depth}")));
    }
    let cells = dom.cell_count(level);
    let expected = HEADER_LEN + cells * n * n * 16;
    if bytes.len() != expected {
        return Err(FormatError::Length { expected, found: bytes.len() });
    }
    let mut values = Vec::with_capacity(cells);
    let mut nums = bytes[HEADER_LEN..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")));
    for _ in 0..cells {
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let re = nums.next().expect("length checked");
                let im = nums.next().expect("length checked");
                m[(i, j)] = Complex64::new(re, im);
            }
        }
        values.push(m);
    }
    OperatorField::new(dom, level, values).map_err(|e| FormatError::Header(e.to_string()))
}

pub fn write(path: &Path, f: &OperatorField) -> Result<(), FormatError> {
    Ok(std::fs::write(path, encode(f))?)
}

pub fn read(path: &Path) -> Result<OperatorField, FormatError> {
    decode(&std::fs::read(path)?)
}
