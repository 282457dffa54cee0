//! `VXFT` voxel tensor files.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset size  field
//!      0    4  magic "VXFT"
//!      4    4  format version (u32) = 1
//!      8   12  dims nx, ny, nz (3 × u32)
//!     20    4  channel count (u32) = 10 + K
//!     24   48  bounds min xyz, max xyz (6 × f64)
//!     72    4  K, attention channels (u32)
//!     76    4  reserved (u32) = 0
//!     80    …  payload: f32 × nx·ny·nz·channels, channel-major, then x, y, z
//!    end    4  CRC-32 (IEEE) of the payload bytes (u32)
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::voxelizer::{channel_count, GridDims, VoxelGrid, WorkspaceBounds};

pub const MAGIC: &[u8; 4] = b"VXFT";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 80;
pub const FOOTER_LEN: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("file truncated: {0}")]
    Truncated(String),
    #[error("integrity check failed: stored CRC {stored:#010x}, computed {computed:#010x}")]
    Integrity { stored: u32, computed: u32 },
    #[error("inconsistent header: {0}")]
    Header(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Header fields of a tensor file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorHeader {
    pub version: u32,
    pub dims: [u32; 3],
    pub channels: u32,
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    pub k: u32,
}

impl TensorHeader {
    pub fn voxel_count(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }
}

pub fn payload_bytes(grid: &VoxelGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(grid.features().len() * 4);
    for v in grid.features() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// CRC-32 of the payload a grid would serialize to; doubles as a content
/// checksum.
pub fn grid_checksum(grid: &VoxelGrid) -> u32 {
    crc32fast::hash(&payload_bytes(grid))
}

pub fn encode(grid: &VoxelGrid) -> Vec<u8> {
    let d = grid.dims();
    let b = grid.bounds();
    let payload = payload_bytes(grid);
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + FOOTER_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for n in d.as_array() {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    out.extend_from_slice(&(grid.channels() as u32).to_le_bytes());
    for v in b.min().iter().chain(&b.max()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(grid.k() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    debug_assert_eq!(out.len(), HEADER_LEN);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn f64_at(b: &[u8], off: usize) -> f64 {
    f64::from_le_bytes(b[off..off + 8].try_into().unwrap())
}

pub fn decode_header(bytes: &[u8]) -> Result<TensorHeader, FormatError> {
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated(format!("{} bytes, header needs {HEADER_LEN}", bytes.len())));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let version = u32_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(FormatError::Version(version));
    }
    let header = TensorHeader {
        version,
        dims: [u32_at(bytes, 8), u32_at(bytes, 12), u32_at(bytes, 16)],
        channels: u32_at(bytes, 20),
        bounds_min: [f64_at(bytes, 24), f64_at(bytes, 32), f64_at(bytes, 40)],
        bounds_max: [f64_at(bytes, 48), f64_at(bytes, 56), f64_at(bytes, 64)],
        k: u32_at(bytes, 72),
    };
    if header.channels as usize != channel_count(header.k as usize) {
        return Err(FormatError::Header(format!(
            "{} channels inconsistent with K = {}",
            header.channels, header.k
        )));
    }
    Ok(header)
}

/// Splits a full file into header and verified payload.
pub fn decode_raw(bytes: &[u8]) -> Result<(TensorHeader, &[u8]), FormatError> {
    let header = decode_header(bytes)?;
    let payload_len = header
        .voxel_count()
        .checked_mul(header.channels as usize)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| FormatError::Header("payload size overflows".into()))?;
    let want = HEADER_LEN + payload_len + FOOTER_LEN;
    if bytes.len() != want {
        return Err(FormatError::Truncated(format!("{} bytes, expected {want}", bytes.len())));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len];
    let stored = u32_at(bytes, HEADER_LEN + payload_len);
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(FormatError::Integrity { stored, computed });
    }
    Ok((header, payload))
}

pub fn decode(bytes: &[u8]) -> Result<VoxelGrid, FormatError> {
    let (h, payload) = decode_raw(bytes)?;
    let dims = GridDims::new(h.dims[0] as usize, h.dims[1] as usize, h.dims[2] as usize)
        .map_err(|e| FormatError::Header(e.to_string()))?;
    let bounds = WorkspaceBounds::new(h.bounds_min, h.bounds_max).map_err(|e| FormatError::Header(e.to_string()))?;
    let features = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    VoxelGrid::from_features(dims, bounds, h.k as usize, features).map_err(|e| FormatError::Header(e.to_string()))
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// followed by a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_grid(path: &Path, grid: &VoxelGrid) -> Result<(), FormatError> {
    Ok(write_atomic(path, &encode(grid))?)
}

pub fn read_grid(path: &Path) -> Result<VoxelGrid, FormatError> {
    decode(&fs::read(path)?)
}
