//! Binary tensor files: a small text header followed by a raw
//! little-endian f32 payload guarded by a CRC32.
//!
//! ```text
//! tensor-file v1
//! role=<name>
//! dtype=f32 order=le
//! shape=<d0>x<d1>x...
//! crc32=<payload crc, 8 hex digits>
//! <blank line>
//! <payload bytes>
//! ```

use std::path::Path;

use super::IoError;
use crate::tensor::Tensor;

const MAGIC: &str = "tensor-file v1";

/// Write a tensor (f64 in memory, f32 on disk) under a role name.
pub fn write_tensor(t: &Tensor, role: &str, path: &Path) -> Result<(), IoError> {
    if role.contains('\n') || role.is_empty() {
        return Err(IoError::Format("role must be a non-empty single line".into()));
    }
    let mut payload = Vec::with_capacity(t.data.len() * 4);
    for &v in &t.data {
        payload.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let crc = crc32fast::hash(&payload);
    let shape: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
    let header = format!(
        "{MAGIC}\nrole={role}\ndtype=f32 order=le\nshape={}\ncrc32={crc:08x}\n\n",
        shape.join("x")
    );
    let mut bytes = header.into_bytes();
    bytes.extend_from_slice(&payload);
    Ok(std::fs::write(path, bytes)?)
}

/// Read a tensor file back; returns the tensor and its role.
pub fn read_tensor(path: &Path) -> Result<(Tensor, String), IoError> {
    let bytes = std::fs::read(path)?;
    let split = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| IoError::Format("missing header terminator".into()))?;
    let header = std::str::from_utf8(&bytes[..split])
        .map_err(|_| IoError::Format("header is not utf-8".into()))?;
    let payload = &bytes[split + 2..];

    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(IoError::Format("bad magic".into()));
    }
    let mut role = None;
    let mut shape: Option<Vec<usize>> = None;
    let mut crc_expected = None;
    for line in lines {
        if let Some(r) = line.strip_prefix("role=") {
            role = Some(r.to_string());
        } else if let Some(s) = line.strip_prefix("shape=") {
            let dims: Result<Vec<usize>, _> = s.split('x').map(|d| d.parse::<usize>()).collect();
            shape = Some(dims.map_err(|_| IoError::Format(format!("bad shape {s:?}")))?);
        } else if let Some(c) = line.strip_prefix("crc32=") {
            crc_expected =
                Some(u32::from_str_radix(c, 16).map_err(|_| IoError::Format("bad crc".into()))?);
        } else if line == "dtype=f32 order=le" {
            // the only supported encoding
        } else {
            return Err(IoError::Format(format!("unknown header line {line:?}")));
        }
    }
    let role = role.ok_or_else(|| IoError::Format("missing role".into()))?;
    let shape = shape.ok_or_else(|| IoError::Format("missing shape".into()))?;
    let crc_expected = crc_expected.ok_or_else(|| IoError::Format("missing crc32".into()))?;

    let crc_actual = crc32fast::hash(payload);
    if crc_actual != crc_expected {
        return Err(IoError::ChecksumMismatch { expected: crc_expected, actual: crc_actual });
    }
    let want: usize = shape.iter().product::<usize>() * 4;
    if payload.len() != want {
        return Err(IoError::Format(format!(
            "payload is {} bytes, shape wants {want}",
            payload.len()
        )));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((Tensor { shape, data }, role))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tensor");
        // f32-representable values survive the f64 <-> f32 hop bit-exactly.
        let t = Tensor {
            shape: vec![2, 3],
            data: Tensor::seeded_range(3, &[2, 3], -4.0, 4.0)
                .data
                .iter()
                .map(|&v| v as f32 as f64)
                .collect(),
        };
        write_tensor(&t, "bev-query", &path).unwrap();
        let (back, role) = read_tensor(&path).unwrap();
        assert_eq!(role, "bev-query");
        assert_eq!(back, t);
        // File bytes are a fixed point of write(read(.)).
        let bytes_a = std::fs::read(&path).unwrap();
        write_tensor(&back, &role, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes_a);
    }

    #[test]
    fn truncated_payload_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tensor");
        let t = Tensor::seeded_range(5, &[4, 4], -1.0, 1.0);
        write_tensor(&t, "feat", &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_tensor(&path), Err(IoError::ChecksumMismatch { .. })));
    }

    #[test]
    fn corrupt_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tensor");
        std::fs::write(&path, b"not a tensor\n\nxxxx").unwrap();
        assert!(matches!(read_tensor(&path), Err(IoError::Format(_))));
    }
}
