//! On-disk image, saliency and pose formats.
//!
//! * RGB: 8-bit PNG.
//! * Depth: 16-bit grayscale PNG; meters = value × scale, 0 marks a hole.
//! * Saliency: header of three little-endian u32 `(height, width, K)` followed
//!   by `height·width·K` little-endian f32 values, pixel-major.
//! * Poses: text, one pose per line as 12 numbers (rotation rows, then
//!   translation); blank lines and `#` comments are ignored.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};

use crate::format::write_atomic;
use crate::geometry::{DepthImage, RgbImage, RigidTransform};
use crate::saliency::SaliencyMap;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("file not found: {0}")]
    Missing(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
}

impl IoError {
    fn malformed(path: &Path, reason: impl Into<String>) -> Self {
        IoError::Malformed { path: path.to_path_buf(), reason: reason.into() }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        if source.kind() == io::ErrorKind::NotFound {
            IoError::Missing(path.to_path_buf())
        } else {
            IoError::Io { path: path.to_path_buf(), source }
        }
    }
}

fn from_image_err(path: &Path, e: image::ImageError) -> IoError {
    match e {
        image::ImageError::IoError(e) => IoError::io(path, e),
        other => IoError::malformed(path, other.to_string()),
    }
}

/// `(width, height)` from the PNG header.
pub fn image_dims(path: &Path) -> Result<(usize, usize), IoError> {
    let (w, h) = image::image_dimensions(path).map_err(|e| from_image_err(path, e))?;
    Ok((w as usize, h as usize))
}

pub fn read_rgb(path: &Path) -> Result<RgbImage, IoError> {
    let img = image::open(path).map_err(|e| from_image_err(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    RgbImage::from_rgb8(w, h, img.as_raw()).map_err(|e| IoError::malformed(path, e.to_string()))
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<(), IoError> {
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, img.to_rgb8())
            .ok_or_else(|| IoError::malformed(path, "rgb buffer size"))?;
    let mut bytes = Vec::new();
    buf.write_to(&mut io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| from_image_err(path, e))?;
    write_atomic(path, &bytes).map_err(|e| IoError::io(path, e))
}

pub fn read_depth(path: &Path, meters_per_unit: f64) -> Result<DepthImage, IoError> {
    let img = image::open(path).map_err(|e| from_image_err(path, e))?;
    if img.color() != image::ColorType::L16 {
        return Err(IoError::malformed(path, format!("expected 16-bit grayscale, got {:?}", img.color())));
    }
    let img = img.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values = img.as_raw().iter().map(|&d| d as f64 * meters_per_unit).collect();
    DepthImage::from_values(w, h, values).map_err(|e| IoError::malformed(path, e.to_string()))
}

/// Quantizes metric depth; holes and depths beyond the 16-bit range become 0.
pub fn write_depth(path: &Path, depth: &DepthImage, meters_per_unit: f64) -> Result<(), IoError> {
    let (w, h) = (depth.width(), depth.height());
    let mut raw = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            let q = depth
                .get(u, v)
                .map(|d| (d / meters_per_unit).round())
                .filter(|q| *q >= 1.0 && *q <= u16::MAX as f64)
                .map_or(0, |q| q as u16);
            raw.push(q);
        }
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).ok_or_else(|| IoError::malformed(path, "depth buffer size"))?;
    let mut bytes = Vec::new();
    buf.write_to(&mut io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| from_image_err(path, e))?;
    write_atomic(path, &bytes).map_err(|e| IoError::io(path, e))
}

const SALIENCY_HEADER: usize = 12;

/// `(height, width, K)` without reading the payload.
pub fn saliency_header(path: &Path) -> Result<(usize, usize, usize), IoError> {
    use std::io::Read;
    let mut f = fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut head = [0u8; SALIENCY_HEADER];
    f.read_exact(&mut head).map_err(|_| IoError::malformed(path, "truncated saliency header"))?;
    Ok(parse_saliency_header(&head))
}

fn parse_saliency_header(b: &[u8]) -> (usize, usize, usize) {
    let r = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap()) as usize;
    (r(0), r(4), r(8))
}

pub fn read_saliency(path: &Path) -> Result<SaliencyMap, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    if bytes.len() < SALIENCY_HEADER {
        return Err(IoError::malformed(path, "truncated saliency header"));
    }
    let (h, w, k) = parse_saliency_header(&bytes);
    let want = SALIENCY_HEADER + h * w * k * 4;
    if bytes.len() != want {
        return Err(IoError::malformed(path, format!("{} bytes, expected {want} for {h}x{w}x{k}", bytes.len())));
    }
    let data = bytes[SALIENCY_HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    SaliencyMap::new(h, w, k, data).map_err(|e| IoError::malformed(path, e.to_string()))
}

pub fn write_saliency(path: &Path, map: &SaliencyMap) -> Result<(), IoError> {
    let mut bytes = Vec::with_capacity(SALIENCY_HEADER + map.data().len() * 4);
    for n in [map.height(), map.width(), map.channels()] {
        bytes.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for &v in map.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_atomic(path, &bytes).map_err(|e| IoError::io(path, e))
}

pub fn read_poses(path: &Path) -> Result<Vec<RigidTransform>, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| IoError::malformed(path, format!("line {}: {e}", lineno + 1)))?;
        if nums.len() != 12 {
            return Err(IoError::malformed(path, format!("line {}: {} numbers, expected 12", lineno + 1, nums.len())));
        }
        let rows = [
            [nums[0], nums[1], nums[2]],
            [nums[3], nums[4], nums[5]],
            [nums[6], nums[7], nums[8]],
        ];
        let pose = RigidTransform::from_rows(rows, [nums[9], nums[10], nums[11]])
            .map_err(|e| IoError::malformed(path, format!("line {}: {e}", lineno + 1)))?;
        out.push(pose);
    }
    Ok(out)
}

pub fn write_poses(path: &Path, poses: &[RigidTransform]) -> Result<(), IoError> {
    let mut text = String::from("# r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz\n");
    for p in poses {
        let r = p.rotation_rows();
        let t = p.translation();
        let nums: Vec<String> = r.iter().flatten().chain(t.iter()).map(|v| format!("{v:?}")).collect();
        text.push_str(&nums.join(" "));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes()).map_err(|e| IoError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        let d = DepthImage::from_values(3, 2, vec![0.0, 1.2345, 2.0, f64::NAN, 0.00001, 6.0]).unwrap();
        write_depth(&p, &d, 1e-4).unwrap();
        let back = read_depth(&p, 1e-4).unwrap();
        assert_eq!(back.get(0, 0), None);
        assert!((back.get(1, 0).unwrap() - 1.2345).abs() < 1e-9);
        assert_eq!(back.get(0, 1), None);
        assert_eq!(back.get(1, 1), None);
        assert!((back.get(2, 1).unwrap() - 6.0).abs() < 1e-9);
        assert_eq!(image_dims(&p).unwrap(), (3, 2));
    }

    #[test]
    fn rgb_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        let img = RgbImage::from_rgb8(2, 1, &[0, 128, 255, 10, 20, 30]).unwrap();
        write_rgb(&p, &img).unwrap();
        assert_eq!(read_rgb(&p).unwrap(), img);
        // rgb is not a depth image
        assert!(matches!(read_depth(&p, 1.0), Err(IoError::Malformed { .. })));
    }

    #[test]
    fn saliency_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        let m = SaliencyMap::new(2, 3, 2, (0..12).map(|i| i as f64 / 16.0).collect()).unwrap();
        write_saliency(&p, &m).unwrap();
        assert_eq!(saliency_header(&p).unwrap(), (2, 3, 2));
        assert_eq!(read_saliency(&p).unwrap(), m);
        let mut bytes = fs::read(&p).unwrap();
        bytes.pop();
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_saliency(&p), Err(IoError::Malformed { .. })));
        assert!(matches!(read_saliency(&dir.path().join("nope")), Err(IoError::Missing(_))));
    }

    #[test]
    fn poses_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("poses.txt");
        let poses = vec![
            RigidTransform::identity(),
            RigidTransform::look_at([0.5, -1.0, 1.0], [0.0; 3], [0.0, 0.0, 1.0]).unwrap(),
        ];
        write_poses(&p, &poses).unwrap();
        assert_eq!(read_poses(&p).unwrap(), poses);
        fs::write(&p, "1 0 0 0 1 0 0 0 1 0 0\n").unwrap();
        assert!(read_poses(&p).is_err());
    }
}
