//! CGRD binary grid files and PGM previews.
//!
//! Layout: magic `CGRD`, `u8` version (1), `u8` ndim (2 or 3), one `u64` LE
//! extent per axis (slowest first), then one `f32` LE value per cell in
//! row-major order. Masks are stored with values 0.0 / 1.0.

use std::fs;
use std::path::Path;

use super::{BinaryMask, ScalarGrid, Shape};
use crate::error::{CapeError, Result};

pub const MAGIC: &[u8; 4] = b"CGRD";
pub const VERSION: u8 = 1;

pub fn encode_cgrd(grid: &ScalarGrid) -> Vec<u8> {
    let shape = grid.shape();
    let mut out = Vec::with_capacity(6 + 8 * shape.ndim() + 4 * shape.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(shape.ndim() as u8);
    for &e in shape.extents() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in grid.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_cgrd(bytes: &[u8], origin: &str) -> Result<ScalarGrid> {
    let bad = |msg: String| CapeError::format(origin, msg);
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(bad("missing CGRD magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(bad(format!("unsupported CGRD version {}", bytes[4])));
    }
    let ndim = bytes[5] as usize;
    if ndim != 2 && ndim != 3 {
        return Err(bad(format!("unsupported ndim {ndim}")));
    }
    let header = 6 + 8 * ndim;
    if bytes.len() < header {
        return Err(bad("truncated header".into()));
    }
    let extents: Vec<usize> = bytes[6..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let shape = Shape::new(&extents).map_err(|e| bad(e.to_string()))?;
    let expected = header + 4 * shape.len();
    if bytes.len() != expected {
        return Err(bad(format!(
            "expected {expected} bytes for shape {extents:?}, found {}",
            bytes.len()
        )));
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    ScalarGrid::new(shape, data).map_err(|e| bad(e.to_string()))
}

pub fn write_cgrd(path: impl AsRef<Path>, grid: &ScalarGrid) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_cgrd(grid)).map_err(|e| CapeError::io(path, e))
}

pub fn read_cgrd(path: impl AsRef<Path>) -> Result<ScalarGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CapeError::io(path, e))?;
    decode_cgrd(&bytes, &path.display().to_string())
}

pub fn write_mask_cgrd(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    write_cgrd(path, &mask.to_grid())
}

/// Reads a mask file; any value above 0.5 counts as set.
pub fn read_mask_cgrd(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let grid = read_cgrd(path)?;
    let bits = grid.data().iter().map(|&v| v > 0.5).collect();
    BinaryMask::new(grid.shape(), bits)
}

/// Binary PGM (P5) with values scaled linearly from `[0, max]` to `0..=255`.
pub fn encode_pgm(grid: &ScalarGrid) -> Result<Vec<u8>> {
    let shape = grid.shape();
    if shape.ndim() != 2 {
        return Err(CapeError::UnsupportedDimensionality(shape.ndim()));
    }
    let [_, h, w] = shape.dims();
    let max = grid.data().iter().cloned().fold(0.0f64, f64::max);
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(
        grid.data()
            .iter()
            .map(|&v| (v.max(0.0) * scale).round().min(255.0) as u8),
    );
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, grid: &ScalarGrid) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(grid)?).map_err(|e| CapeError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let g = ScalarGrid::new(Shape::new2(2, 3), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.5]).unwrap();
        let bytes = encode_cgrd(&g);
        assert_eq!(&bytes[..4], b"CGRD");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 2);
        assert_eq!(u64::from_le_bytes(bytes[6..14].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[14..22].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 22 + 6 * 4);
        assert_eq!(decode_cgrd(&bytes, "mem").unwrap(), g);
    }

    #[test]
    fn rejects_truncated_payload() {
        let g = ScalarGrid::zeros(Shape::new3(2, 2, 2));
        let mut bytes = encode_cgrd(&g);
        bytes.pop();
        assert!(matches!(
            decode_cgrd(&bytes, "x.cgrd"),
            Err(CapeError::Format { .. })
        ));
        assert!(decode_cgrd(b"NOPE\x01\x02", "x").is_err());
    }

    #[test]
    fn pgm_scales_to_byte_range() {
        let g = ScalarGrid::new(Shape::new2(1, 3), vec![0.0, 1.0, 2.0]).unwrap();
        let bytes = encode_pgm(&g).unwrap();
        assert!(bytes.starts_with(b"P5\n3 1\n255\n"));
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 128, 255]);
    }
}
