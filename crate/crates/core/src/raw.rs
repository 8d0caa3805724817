//! Little-endian raw sidecar payloads shared by the phantom, dose and
//! Q-network file formats.

use std::fs;
use std::io;
use std::path::Path;

pub fn write_f32_le(path: &Path, values: impl IntoIterator<Item = f32>) -> io::Result<()> {
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)
}

/// Reads a float32 payload. Returns `Ok(Err(byte_len))` when the byte count is
/// not a multiple of four.
pub fn read_f32_le(path: &Path) -> io::Result<Result<Vec<f32>, usize>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Ok(Err(bytes.len()));
    }
    Ok(Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()))
}

pub fn write_mask(path: &Path, mask: &[bool]) -> io::Result<()> {
    fs::write(path, mask.iter().map(|&b| u8::from(b)).collect::<Vec<_>>())
}

pub fn read_bytes(path: &Path) -> io::Result<Vec<u8>> {
    fs::read(path)
}
