//! "STFS" tensor files: magic `STFS`, u16 version, u32 dim count, u32 dims,
//! then row-major float32 payload. All integers and floats little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::TfrError;

pub const MAGIC: [u8; 4] = *b"STFS";
pub const VERSION: u16 = 1;

pub fn write_to(w: &mut impl Write, dims: &[usize], data: &[f32]) -> std::io::Result<()> {
    let expected: usize = dims.iter().product();
    if expected != data.len() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            format!("dims {dims:?} imply {expected} values, got {}", data.len()),
        ));
    }
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn encode(dims: &[usize], data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + 4 * dims.len() + 4 * data.len());
    write_to(&mut out, dims, data).expect("dims must match data length");
    out
}

fn read_u32(r: &mut impl Read) -> Result<u32, TfrError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(format_err)?;
    Ok(u32::from_le_bytes(b))
}

fn format_err(e: std::io::Error) -> TfrError {
    TfrError::Format(format!("truncated STFS data: {e}"))
}

/// Reads one tensor from `r`, leaving the reader positioned after it.
pub fn read_from(r: &mut impl Read) -> Result<(Vec<usize>, Vec<f32>), TfrError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(format_err)?;
    if magic != MAGIC {
        return Err(TfrError::Format("bad STFS magic".into()));
    }
    let mut v = [0u8; 2];
    r.read_exact(&mut v).map_err(format_err)?;
    let version = u16::from_le_bytes(v);
    if version != VERSION {
        return Err(TfrError::Format(format!("unsupported STFS version {version}")));
    }
    let ndims = read_u32(r)? as usize;
    if ndims > 16 {
        return Err(TfrError::Format(format!("implausible dim count {ndims}")));
    }
    let dims = (0..ndims)
        .map(|_| read_u32(r).map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| TfrError::Format("dims overflow".into()))?;
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes).map_err(format_err)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((dims, data))
}

pub fn decode(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>), TfrError> {
    let mut cursor = bytes;
    let out = read_from(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(TfrError::Format(format!("{} trailing bytes", cursor.len())));
    }
    Ok(out)
}

pub fn write_file(path: &Path, dims: &[usize], data: &[f32]) -> Result<(), TfrError> {
    std::fs::write(path, encode(dims, data)).map_err(|e| TfrError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn read_file(path: &Path) -> Result<(Vec<usize>, Vec<f32>), TfrError> {
    let bytes = std::fs::read(path).map_err(|e| TfrError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_exact() {
        let bytes = encode(&[1, 2], &[1.0, -2.0]);
        let mut expected = b"STFS".to_vec();
        expected.extend_from_slice(&[1, 0]);
        expected.extend_from_slice(&[2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(decode(&bytes).unwrap(), (vec![1, 2], vec![1.0, -2.0]));
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = encode(&[3], &[1.0, 2.0, 3.0]);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(decode(&bytes).is_err());
        let mut extra = encode(&[1], &[1.0]);
        extra.push(0);
        assert!(decode(&extra).is_err());
    }
}
