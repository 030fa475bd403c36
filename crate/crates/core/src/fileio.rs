//! Shared low-level file helpers: atomic writes and the `HRFE` binary
//! embedding container used by both `.feat` and `.qfeat` files.
//!
//! `HRFE` layout, all integers little-endian:
//! magic `HRFE` (4 bytes), u32 version = 1, u32 dim, u64 count, then
//! `count` rows of `dim` little-endian float32 values.

use std::fs;
use std::path::Path;

use crate::error::{CoreError, Result};

pub(crate) const FEAT_MAGIC: &[u8; 4] = b"HRFE";
pub(crate) const FEAT_VERSION: u32 = 1;
pub(crate) const FEAT_HEADER_LEN: u64 = 20;

/// Write `bytes` to `path` via a temporary sibling file and rename, so
/// readers never observe a partially written output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, bytes).map_err(|e| CoreError::path(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CoreError::path(path, e))?;
    Ok(())
}

fn tmp_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Serialize embedding rows into the `HRFE` container.
pub(crate) fn encode_feat(dim: usize, rows: &[&[f32]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(FEAT_HEADER_LEN as usize + rows.len() * dim * 4);
    out.extend_from_slice(FEAT_MAGIC);
    out.extend_from_slice(&FEAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(rows.len() as u64).to_le_bytes());
    for row in rows {
        debug_assert_eq!(row.len(), dim);
        for v in *row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub(crate) struct FeatPayload {
    pub dim: usize,
    pub rows: Vec<Vec<f32>>,
}

/// Read and validate an `HRFE` file, reporting byte offsets on failure.
pub(crate) fn read_feat(path: &Path) -> Result<FeatPayload> {
    let bytes = fs::read(path).map_err(|e| CoreError::path(path, e))?;
    let need = |offset: u64, n: u64, what: &str| -> Result<()> {
        if (bytes.len() as u64) < offset + n {
            Err(CoreError::format(
                path,
                "byte",
                bytes.len() as u64,
                format!("truncated: {what} needs bytes [{offset}, {})", offset + n),
            ))
        } else {
            Ok(())
        }
    };

    need(0, 4, "magic")?;
    if &bytes[0..4] != FEAT_MAGIC {
        return Err(CoreError::format(path, "byte", 0, "bad magic, expected HRFE"));
    }
    need(4, 4, "version")?;
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FEAT_VERSION {
        return Err(CoreError::format(
            path,
            "byte",
            4,
            format!("unsupported version {version}, expected {FEAT_VERSION}"),
        ));
    }
    need(8, 4, "dim")?;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    need(12, 8, "count")?;
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());

    let row_bytes = dim as u64 * 4;
    let expected = FEAT_HEADER_LEN + count * row_bytes;
    if (bytes.len() as u64) != expected {
        return Err(CoreError::format(
            path,
            "byte",
            bytes.len() as u64,
            format!(
                "payload length mismatch: header promises {count} rows of dim {dim} ({expected} bytes total), file has {} bytes",
                bytes.len()
            ),
        ));
    }

    let mut rows = Vec::with_capacity(count as usize);
    let mut off = FEAT_HEADER_LEN as usize;
    for _ in 0..count {
        let mut row = Vec::with_capacity(dim);
        for _ in 0..dim {
            row.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
            off += 4;
        }
        rows.push(row);
    }
    Ok(FeatPayload { dim, rows })
}
