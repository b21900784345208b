//! Read-only subset of single-file NIfTI-1.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::Volume;

const HEADER_SIZE: usize = 348;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn i32_at(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

/// Reads a little-endian `.nii` file holding a 3-D int16 or float32 array.
///
/// Spacing comes from `pixdim[1..3]`. The origin is `qoffset` when
/// `qform_code > 0` and zero otherwise; orientation is not applied.
/// Values are scaled by `scl_slope` / `scl_inter` when the slope is nonzero.
pub fn read_nifti_subset(path: &Path) -> Result<Volume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let unsupported = |what: String| Error::UnsupportedFeature(format!("{}: {what}", path.display()));
    if bytes.len() < HEADER_SIZE {
        return Err(Error::MalformedHeader { path: path.into(), reason: format!("only {} bytes", bytes.len()) });
    }
    let sizeof_hdr = i32_at(&bytes, 0);
    if sizeof_hdr != HEADER_SIZE as i32 {
        if sizeof_hdr.swap_bytes() == HEADER_SIZE as i32 {
            return Err(unsupported("byte order big-endian".into()));
        }
        return Err(Error::MalformedHeader { path: path.into(), reason: format!("sizeof_hdr {sizeof_hdr}") });
    }
    match &bytes[344..348] {
        b"n+1\0" => {}
        b"ni1\0" => return Err(unsupported("magic ni1 (separate header and image files)".into())),
        _ => return Err(Error::BadMagic(path.into())),
    }

    let dim: Vec<i16> = (0..8).map(|k| i16_at(&bytes, 40 + 2 * k)).collect();
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::MalformedHeader { path: path.into(), reason: format!("dim[0] = {ndim}") });
    }
    if (4..=ndim as usize).any(|k| dim[k] != 1) {
        return Err(unsupported(format!("dim {:?} (only 3-D arrays)", &dim[..=ndim as usize])));
    }
    let dims = [1, 2, 3].map(|k| if k as i16 <= ndim { dim[k] as i64 } else { 1 });
    if dims.iter().any(|&d| d <= 0) {
        return Err(Error::MalformedHeader { path: path.into(), reason: format!("dim {dims:?}") });
    }
    let dims = dims.map(|d| d as usize);

    let datatype = i16_at(&bytes, 70);
    let width = match datatype {
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => return Err(unsupported(format!("datatype {other}"))),
    };
    let pixdim = [1, 2, 3].map(|k| f32_at(&bytes, 76 + 4 * k) as f64);
    if pixdim.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
        return Err(Error::MalformedHeader { path: path.into(), reason: format!("pixdim {pixdim:?}") });
    }
    let vox_offset = f32_at(&bytes, 108);
    if !(vox_offset >= HEADER_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(Error::MalformedHeader { path: path.into(), reason: format!("vox_offset {vox_offset}") });
    }
    let slope = f32_at(&bytes, 112) as f64;
    let inter = f32_at(&bytes, 116) as f64;
    let origin = if i16_at(&bytes, 252) > 0 { [268, 272, 276].map(|o| f32_at(&bytes, o) as f64) } else { [0.0; 3] };

    let count: usize = dims.iter().product();
    let start = vox_offset as usize;
    let payload = bytes.get(start..).unwrap_or(&[]);
    if payload.len() < count * width {
        return Err(Error::SizeMismatch { path: path.into(), expected: count, found: payload.len() / width });
    }
    let raw: Vec<f64> = match datatype {
        DT_INT16 => payload[..count * 2].chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f64).collect(),
        _ => payload[..count * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
    };
    let data = if slope != 0.0 && slope.is_finite() { raw.iter().map(|v| v * slope + inter).collect() } else { raw };
    Volume::new(dims, pixdim, origin, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Minimal header built field by field from the NIfTI-1 layout.
    fn header(dims: [i16; 3], datatype: i16, bitpix: i16, pixdim: [f32; 3]) -> Vec<u8> {
        let mut h = vec![0u8; 352];
        h[0..4].copy_from_slice(&348i32.to_le_bytes());
        let dim = [3, dims[0], dims[1], dims[2], 1, 1, 1, 1];
        for (k, d) in dim.iter().enumerate() {
            h[40 + 2 * k..42 + 2 * k].copy_from_slice(&d.to_le_bytes());
        }
        h[70..72].copy_from_slice(&datatype.to_le_bytes());
        h[72..74].copy_from_slice(&bitpix.to_le_bytes());
        let pd = [1.0f32, pixdim[0], pixdim[1], pixdim[2], 0.0, 0.0, 0.0, 0.0];
        for (k, p) in pd.iter().enumerate() {
            h[76 + 4 * k..80 + 4 * k].copy_from_slice(&p.to_le_bytes());
        }
        h[108..112].copy_from_slice(&352f32.to_le_bytes());
        h[344..348].copy_from_slice(b"n+1\0");
        h
    }

    fn write(bytes: &[u8]) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.nii");
        fs::write(&p, bytes).unwrap();
        (dir, p)
    }

    #[test]
    fn float32_ones() {
        let mut b = header([4, 4, 4], 16, 32, [1.5, 2.0, 3.0]);
        for _ in 0..64 {
            b.extend_from_slice(&1f32.to_le_bytes());
        }
        let (_d, p) = write(&b);
        let v = read_nifti_subset(&p).unwrap();
        assert_eq!(v.dims(), [4, 4, 4]);
        assert_eq!(v.voxel_size(), [1.5, 2.0, 3.0]);
        assert!(v.data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn int16_scaled_x_fastest() {
        let mut b = header([3, 2, 1], 4, 16, [1.0, 1.0, 1.0]);
        b[112..116].copy_from_slice(&2f32.to_le_bytes());
        b[116..120].copy_from_slice(&(-1f32).to_le_bytes());
        for k in 0..6i16 {
            b.extend_from_slice(&k.to_le_bytes());
        }
        let (_d, p) = write(&b);
        let v = read_nifti_subset(&p).unwrap();
        assert_eq!(v.get(2, 0, 0), 3.0);
        assert_eq!(v.get(0, 1, 0), 5.0);
    }

    #[test]
    fn rejected_inputs() {
        let mut b = header([2, 2, 2], 16, 32, [1.0; 3]);
        b.extend(std::iter::repeat_n(0u8, 32));

        let mut two_file = b.clone();
        two_file[344..348].copy_from_slice(b"ni1\0");
        let (_d, p) = write(&two_file);
        assert_eq!(read_nifti_subset(&p).unwrap_err().kind(), "UnsupportedFeature");

        let mut junk = b.clone();
        junk[344..348].copy_from_slice(b"abcd");
        let (_d, p) = write(&junk);
        assert_eq!(read_nifti_subset(&p).unwrap_err().kind(), "BadMagic");

        let mut complex = b.clone();
        complex[70..72].copy_from_slice(&32i16.to_le_bytes());
        let (_d, p) = write(&complex);
        let e = read_nifti_subset(&p).unwrap_err();
        assert_eq!(e.kind(), "UnsupportedFeature");
        assert!(e.to_string().contains("datatype 32"));

        let (_d, p) = write(&b[..360]);
        assert_eq!(read_nifti_subset(&p).unwrap_err().kind(), "SizeMismatch");

        let (_d, p) = write(&b[..100]);
        assert_eq!(read_nifti_subset(&p).unwrap_err().kind(), "MalformedHeader");
    }
}
