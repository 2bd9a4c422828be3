//! Volume container format.
//!
//! Layout (little-endian throughout):
//! magic 4 bytes (`VOL1` image / `MSK1` mask), version u32, H u32, W u32,
//! Z u32, dtype u8 (0 = float32, 1 = uint16), then the payload with x varying
//! fastest, then y, then z. Arrays are stored `[z, y, x]` C-order in memory,
//! so the payload is a straight dump of the element sequence.

use std::fs;
use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};

use super::{MaskVolume, Volume};

const VOLUME_MAGIC: [u8; 4] = *b"VOL1";
const MASK_MAGIC: [u8; 4] = *b"MSK1";
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 21;
const DTYPE_F32: u8 = 0;
const DTYPE_U16: u8 = 1;
/// Voxel-count cap: keeps header-driven allocations sane.
const MAX_VOXELS: u64 = 1 << 31;

fn encode_header(magic: [u8; 4], h: usize, w: usize, z: usize, dtype: u8) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN);
    buf.extend_from_slice(&magic);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    buf.extend_from_slice(&(z as u32).to_le_bytes());
    buf.push(dtype);
    buf
}

struct Header {
    h: usize,
    w: usize,
    z: usize,
    dtype: u8,
    voxels: usize,
}

fn decode_header(bytes: &[u8], magic: [u8; 4], path: &Path) -> Result<Header> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            got: bytes.len() as u64,
        });
    }
    let found: [u8; 4] = bytes[0..4].try_into().expect("length checked");
    if found != magic {
        return Err(Error::MagicMismatch { expected: magic, found });
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().expect("length checked"));
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            supported: FORMAT_VERSION,
            found: version,
        });
    }
    let (h, w, z) = (u32_at(8) as u64, u32_at(12) as u64, u32_at(16) as u64);
    if h == 0 || w == 0 || z == 0 {
        return Err(Error::validation(
            "dims",
            format!("zero extent in {}x{}x{} ({})", h, w, z, path.display()),
        ));
    }
    let voxels = h
        .checked_mul(w)
        .and_then(|p| p.checked_mul(z))
        .filter(|&n| n <= MAX_VOXELS)
        .ok_or_else(|| Error::DimOverflow(format!("{h}x{w}x{z} exceeds {MAX_VOXELS} voxels")))?;
    Ok(Header {
        h: h as usize,
        w: w as usize,
        z: z as usize,
        dtype: bytes[20],
        voxels: voxels as usize,
    })
}

fn check_payload(bytes: &[u8], voxels: usize, elem: usize) -> Result<&[u8]> {
    let expected = HEADER_LEN as u64 + voxels as u64 * elem as u64;
    if (bytes.len() as u64) < expected {
        return Err(Error::Truncated {
            expected,
            got: bytes.len() as u64,
        });
    }
    if bytes.len() as u64 > expected {
        return Err(Error::validation(
            "payload",
            format!("{} trailing bytes past declared size", bytes.len() as u64 - expected),
        ));
    }
    Ok(&bytes[HEADER_LEN..])
}

pub fn write_volume(path: impl AsRef<Path>, vol: &Volume) -> Result<()> {
    let path = path.as_ref();
    let (h, w, z) = vol.dims();
    let mut buf = encode_header(VOLUME_MAGIC, h, w, z, DTYPE_F32);
    buf.reserve(vol.data().len() * 4);
    for v in vol.data().iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let hdr = decode_header(&bytes, VOLUME_MAGIC, path)?;
    if hdr.dtype != DTYPE_F32 {
        return Err(Error::validation(
            "dtype",
            format!("volume reader supports float32 (tag 0), file has tag {}", hdr.dtype),
        ));
    }
    let payload = check_payload(&bytes, hdr.voxels, 4)?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunked by 4")))
        .collect();
    let arr = Array3::from_shape_vec((hdr.z, hdr.h, hdr.w), data).expect("voxel count checked");
    Volume::new(arr)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &MaskVolume) -> Result<()> {
    let path = path.as_ref();
    let (h, w, z) = mask.dims();
    let mut buf = encode_header(MASK_MAGIC, h, w, z, DTYPE_U16);
    buf.reserve(mask.data().len() * 2);
    for v in mask.data().iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<MaskVolume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let hdr = decode_header(&bytes, MASK_MAGIC, path)?;
    if hdr.dtype != DTYPE_U16 {
        return Err(Error::validation(
            "dtype",
            format!("mask reader supports uint16 (tag 1), file has tag {}", hdr.dtype),
        ));
    }
    let payload = check_payload(&bytes, hdr.voxels, 2)?;
    let data: Vec<u16> = payload
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes(c.try_into().expect("chunked by 2")))
        .collect();
    let arr = Array3::from_shape_vec((hdr.z, hdr.h, hdr.w), data).expect("voxel count checked");
    MaskVolume::new(arr)
}
