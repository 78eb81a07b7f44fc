//! Shared framing for the on-disk formats: a magic tag, a little-endian
//! `u64` manifest length, the UTF-8 JSON manifest, then a raw payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn write(path: &Path, magic: &[u8], manifest: &[u8], payload: &[u8]) -> Result<()> {
    let mut buf = Vec::with_capacity(magic.len() + 8 + manifest.len() + payload.len());
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    buf.extend_from_slice(manifest);
    buf.extend_from_slice(payload);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Returns `(manifest, payload)` slices of an in-memory container.
pub(crate) fn split<'a>(bytes: &'a [u8], magic: &[u8]) -> Result<(&'a [u8], &'a [u8])> {
    if bytes.len() < magic.len() || &bytes[..magic.len()] != magic {
        return Err(Error::CorruptHeader("bad magic".into()));
    }
    let rest = &bytes[magic.len()..];
    if rest.len() < 8 {
        return Err(Error::CorruptHeader("missing manifest length".into()));
    }
    let len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
    let rest = &rest[8..];
    if rest.len() < len {
        return Err(Error::CorruptHeader(format!(
            "manifest length {len} exceeds file size {}",
            rest.len()
        )));
    }
    Ok(rest.split_at(len))
}

pub(crate) fn read(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}
