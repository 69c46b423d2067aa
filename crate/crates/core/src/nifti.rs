//! Minimal bit-exact NIfTI-1 single-file (.nii) reader and writer.
//!
//! Scope: magic "n+1\0" only (no .hdr/.img pairs, no gzip), float32 read and
//! write, int16 read-only, endianness detected from sizeof_hdr. Orientation
//! fields (qform/sform) are parsed and carried through read-modify-write
//! untouched, but never interpreted.

use std::io::Write as _;
use std::path::Path;

use crate::volume::Volume3D;

pub const HEADER_SIZE: usize = 348;
/// Smallest valid data offset for a single-file NIfTI-1 image.
pub const MIN_VOX_OFFSET: usize = 352;

pub const DATATYPE_INT16: i16 = 4;
pub const DATATYPE_FLOAT32: i16 = 16;

#[derive(Debug, thiserror::Error)]
pub enum NiftiError {
    #[error("file is {len} bytes, smaller than the {MIN_VOX_OFFSET}-byte minimum")]
    TooSmall { len: usize },

    #[error("sizeof_hdr is {found} ({found_swapped} byte-swapped), expected 348")]
    BadSizeofHdr { found: i32, found_swapped: i32 },

    #[error("magic is {found:?}, expected \"n+1\\0\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported datatype code {code} (supported: 16 = float32, 4 = int16)")]
    UnsupportedDatatype { code: i16 },

    #[error("dim[0] = {rank} is outside 1..=7")]
    BadRank { rank: i16 },

    #[error("dim[{index}] = {extent} is not a valid extent")]
    BadExtent { index: usize, extent: i16 },

    #[error("dim[0] = {rank} but dim[{index}] = {extent} is not 1")]
    ExtraDims {
        rank: i16,
        index: usize,
        extent: i16,
    },

    #[error("vox_offset {vox_offset} is invalid for a {len}-byte file")]
    BadVoxOffset { vox_offset: f64, len: usize },

    #[error("data section truncated: need {needed} bytes at offset {offset}, file has {len}")]
    Truncated {
        needed: u64,
        offset: usize,
        len: usize,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

type Result<T> = std::result::Result<T, NiftiError>;

/// The header fields this crate reads or preserves. Everything else in the
/// 348 bytes is zeroed on write.
#[derive(Debug, Clone)]
pub struct NiftiHeader {
    pub little_endian: bool,
    pub dim: [i16; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [f32; 12],
    pub magic: [u8; 4],
}

impl Default for NiftiHeader {
    fn default() -> Self {
        Self {
            little_endian: true,
            dim: [3, 1, 1, 1, 1, 1, 1, 1],
            datatype: DATATYPE_FLOAT32,
            bitpix: 32,
            pixdim: [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            vox_offset: MIN_VOX_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            qform_code: 0,
            sform_code: 0,
            quatern: [0.0; 3],
            qoffset: [0.0; 3],
            srow: [0.0; 12],
            magic: *b"n+1\0",
        }
    }
}

fn rd_i16(b: &[u8], off: usize, le: bool) -> i16 {
    let raw = [b[off], b[off + 1]];
    if le {
        i16::from_le_bytes(raw)
    } else {
        i16::from_be_bytes(raw)
    }
}

fn rd_i32(b: &[u8], off: usize, le: bool) -> i32 {
    let raw = [b[off], b[off + 1], b[off + 2], b[off + 3]];
    if le {
        i32::from_le_bytes(raw)
    } else {
        i32::from_be_bytes(raw)
    }
}

fn rd_f32(b: &[u8], off: usize, le: bool) -> f32 {
    f32::from_bits(rd_i32(b, off, le) as u32)
}

/// Reads a single-file NIfTI-1 volume, applying the intensity affine
/// (`scl_slope`, treated as 1 when stored as 0, and `scl_inter`) and taking
/// spacing from pixdim. Dimensions above 3 must have extent 1.
pub fn read_nifti(path: &Path) -> Result<(Volume3D, NiftiHeader)> {
    let bytes = std::fs::read(path).map_err(|e| NiftiError::Io {
        context: format!("read {}", path.display()),
        source: e,
    })?;
    read_nifti_bytes(&bytes)
}

/// [`read_nifti`] on an in-memory buffer.
pub fn read_nifti_bytes(bytes: &[u8]) -> Result<(Volume3D, NiftiHeader)> {
    let len = bytes.len();
    if len < MIN_VOX_OFFSET {
        return Err(NiftiError::TooSmall { len });
    }
    let le_guess = rd_i32(bytes, 0, true);
    let be_guess = rd_i32(bytes, 0, false);
    let little_endian = if le_guess == 348 {
        true
    } else if be_guess == 348 {
        false
    } else {
        return Err(NiftiError::BadSizeofHdr {
            found: le_guess,
            found_swapped: be_guess,
        });
    };
    let le = little_endian;

    let magic: [u8; 4] = bytes[344..348].try_into().unwrap();
    if &magic != b"n+1\0" {
        return Err(NiftiError::BadMagic { found: magic });
    }

    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = rd_i16(bytes, 40 + 2 * i, le);
    }
    let rank = dim[0];
    if !(1..=7).contains(&rank) {
        return Err(NiftiError::BadRank { rank });
    }
    for i in 1..=rank as usize {
        if dim[i] < 1 {
            return Err(NiftiError::BadExtent {
                index: i,
                extent: dim[i],
            });
        }
        if i > 3 && dim[i] != 1 {
            return Err(NiftiError::ExtraDims {
                rank,
                index: i,
                extent: dim[i],
            });
        }
    }
    let shape = (
        dim[1] as usize,
        if rank >= 2 { dim[2] as usize } else { 1 },
        if rank >= 3 { dim[3] as usize } else { 1 },
    );

    let datatype = rd_i16(bytes, 70, le);
    let bytes_per: u64 = match datatype {
        DATATYPE_FLOAT32 => 4,
        DATATYPE_INT16 => 2,
        code => return Err(NiftiError::UnsupportedDatatype { code }),
    };

    let vox_offset_raw = rd_f32(bytes, 108, le);
    let vox_offset = vox_offset_raw as f64;
    if !(vox_offset.is_finite()
        && vox_offset >= MIN_VOX_OFFSET as f64
        && vox_offset <= len as f64
        && vox_offset.fract() == 0.0)
    {
        return Err(NiftiError::BadVoxOffset { vox_offset, len });
    }
    let offset = vox_offset as usize;

    let nvox = shape.0 as u64 * shape.1 as u64 * shape.2 as u64;
    let needed = nvox * bytes_per;
    if ((len - offset) as u64) < needed {
        return Err(NiftiError::Truncated {
            needed,
            offset,
            len,
        });
    }

    let scl_slope = rd_f32(bytes, 112, le);
    let scl_inter = rd_f32(bytes, 116, le);
    let slope = if scl_slope == 0.0 {
        1.0
    } else {
        scl_slope as f64
    };
    let inter = scl_inter as f64;

    let mut data = Vec::with_capacity(nvox as usize);
    match datatype {
        DATATYPE_FLOAT32 => {
            for i in 0..nvox as usize {
                let raw = rd_f32(bytes, offset + 4 * i, le) as f64;
                data.push(slope * raw + inter);
            }
        }
        _ => {
            for i in 0..nvox as usize {
                let raw = rd_i16(bytes, offset + 2 * i, le) as f64;
                data.push(slope * raw + inter);
            }
        }
    }

    let mut pixdim = [0.0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = rd_f32(bytes, 76 + 4 * i, le);
    }
    let spacing_of = |p: f32| {
        let p = p as f64;
        if p.is_finite() && p > 0.0 {
            p
        } else {
            1.0
        }
    };
    let spacing = (
        spacing_of(pixdim[1]),
        spacing_of(pixdim[2]),
        spacing_of(pixdim[3]),
    );

    let mut quatern = [0.0f32; 3];
    let mut qoffset = [0.0f32; 3];
    let mut srow = [0.0f32; 12];
    for i in 0..3 {
        quatern[i] = rd_f32(bytes, 256 + 4 * i, le);
        qoffset[i] = rd_f32(bytes, 268 + 4 * i, le);
    }
    for (i, s) in srow.iter_mut().enumerate() {
        *s = rd_f32(bytes, 280 + 4 * i, le);
    }

    let header = NiftiHeader {
        little_endian,
        dim,
        datatype,
        bitpix: rd_i16(bytes, 72, le),
        pixdim,
        vox_offset: vox_offset_raw,
        scl_slope,
        scl_inter,
        qform_code: rd_i16(bytes, 252, le),
        sform_code: rd_i16(bytes, 254, le),
        quatern,
        qoffset,
        srow,
        magic,
    };
    let volume = Volume3D::from_vec(data, shape, spacing)
        .expect("shape and data length are consistent by construction");
    Ok((volume, header))
}

fn wr_i16(b: &mut [u8], off: usize, v: i16) {
    b[off..off + 2].copy_from_slice(&v.to_le_bytes());
}

fn wr_i32(b: &mut [u8], off: usize, v: i32) {
    b[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

fn wr_f32(b: &mut [u8], off: usize, v: f32) {
    b[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

fn encode(v: &Volume3D, orientation: Option<&NiftiHeader>) -> Vec<u8> {
    let (nx, ny, nz) = v.shape();
    let (sx, sy, sz) = v.spacing();
    let mut bytes = vec![0u8; MIN_VOX_OFFSET + 4 * v.len()];
    wr_i32(&mut bytes, 0, HEADER_SIZE as i32);
    wr_i16(&mut bytes, 40, 3);
    wr_i16(&mut bytes, 42, nx as i16);
    wr_i16(&mut bytes, 44, ny as i16);
    wr_i16(&mut bytes, 46, nz as i16);
    for i in 4..8 {
        wr_i16(&mut bytes, 40 + 2 * i, 1);
    }
    wr_i16(&mut bytes, 70, DATATYPE_FLOAT32);
    wr_i16(&mut bytes, 72, 32);
    wr_f32(&mut bytes, 76, 1.0); // qfac placeholder
    wr_f32(&mut bytes, 80, sx as f32);
    wr_f32(&mut bytes, 84, sy as f32);
    wr_f32(&mut bytes, 88, sz as f32);
    wr_f32(&mut bytes, 108, MIN_VOX_OFFSET as f32);
    wr_f32(&mut bytes, 112, 1.0); // scl_slope
    wr_f32(&mut bytes, 116, 0.0); // scl_inter
    bytes[123] = 2; // spatial units: millimeters
    if let Some(h) = orientation {
        wr_i16(&mut bytes, 252, h.qform_code);
        wr_i16(&mut bytes, 254, h.sform_code);
        for i in 0..3 {
            wr_f32(&mut bytes, 256 + 4 * i, h.quatern[i]);
            wr_f32(&mut bytes, 268 + 4 * i, h.qoffset[i]);
        }
        for (i, s) in h.srow.iter().enumerate() {
            wr_f32(&mut bytes, 280 + 4 * i, *s);
        }
        wr_f32(&mut bytes, 76, h.pixdim[0]); // qfac travels with the qform
    }
    bytes[344..348].copy_from_slice(b"n+1\0");

    for (i, &value) in v.data().iter().enumerate() {
        let raw = (value as f32).to_le_bytes();
        let at = MIN_VOX_OFFSET + 4 * i;
        bytes[at..at + 4].copy_from_slice(&raw);
    }
    bytes
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let ctx = |e: std::io::Error| NiftiError::Io {
        context: format!("write {}", path.display()),
        source: e,
    };
    let mut file = std::fs::File::create(path).map_err(ctx)?;
    file.write_all(bytes).map_err(ctx)?;
    Ok(())
}

/// Writes a little-endian float32 single-file image: datatype 16, slope 1,
/// intercept 0, vox_offset 352, spacing in pixdim. Values are narrowed from
/// f64 to f32.
pub fn write_nifti(v: &Volume3D, path: &Path) -> Result<()> {
    write_bytes(path, &encode(v, None))
}

/// [`write_nifti`], but carrying over the orientation block (qform/sform and
/// qfac) of a previously read header.
pub fn write_nifti_with_header(v: &Volume3D, header: &NiftiHeader, path: &Path) -> Result<()> {
    write_bytes(path, &encode(v, Some(header)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn temp(name: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(name);
        (dir, path)
    }

    fn random_volume(shape: (usize, usize, usize), seed: u64) -> Volume3D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.0 * shape.1 * shape.2;
        let data = (0..n).map(|_| rng.random::<f64>()).collect();
        Volume3D::from_vec(data, shape, (0.5, 1.0, 2.5)).unwrap()
    }

    #[test]
    fn file_size_and_header_constants() {
        let (_d, path) = temp("t.nii");
        let v = random_volume((5, 4, 3), 1);
        write_nifti(&v, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 352 + 4 * 60);
        assert_eq!(&bytes[0..4], &[0x5C, 0x01, 0x00, 0x00]);
        assert_eq!(&bytes[344..348], b"n+1\0");
    }

    #[test]
    fn round_trip_preserves_f32_representable_values() {
        let (_d, path) = temp("rt.nii");
        let v = random_volume((6, 5, 4), 2);
        write_nifti(&v, &path).unwrap();
        let (back, header) = read_nifti(&path).unwrap();
        assert_eq!(back.shape(), v.shape());
        assert!(header.little_endian);
        // Narrowing oracle: every value should equal its f32 cast exactly.
        for (orig, read) in v.data().iter().zip(back.data()) {
            assert_eq!(*orig as f32 as f64, *read);
        }
        let (sx, sy, sz) = back.spacing();
        assert!((sx - 0.5).abs() < 1e-6 && (sy - 1.0).abs() < 1e-6 && (sz - 2.5).abs() < 1e-6);
    }

    /// Builds a big-endian float32 file byte-by-byte.
    fn build_big_endian_fixture(values: &[f32]) -> Vec<u8> {
        let mut bytes = vec![0u8; 352 + 4 * values.len()];
        bytes[0..4].copy_from_slice(&348i32.to_be_bytes());
        let dim: [i16; 8] = [3, 2, 2, 2, 1, 1, 1, 1];
        for (i, d) in dim.iter().enumerate() {
            bytes[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_be_bytes());
        }
        bytes[70..72].copy_from_slice(&16i16.to_be_bytes());
        bytes[72..74].copy_from_slice(&32i16.to_be_bytes());
        for i in 1..4 {
            bytes[76 + 4 * i..80 + 4 * i].copy_from_slice(&1.0f32.to_be_bytes());
        }
        bytes[108..112].copy_from_slice(&352.0f32.to_be_bytes());
        bytes[112..116].copy_from_slice(&1.0f32.to_be_bytes());
        bytes[344..348].copy_from_slice(b"n+1\0");
        for (i, v) in values.iter().enumerate() {
            bytes[352 + 4 * i..356 + 4 * i].copy_from_slice(&v.to_be_bytes());
        }
        bytes
    }

    #[test]
    fn swapped_endian_fixture_reads_correctly() {
        let values: Vec<f32> = (0..8).map(|i| i as f32 * 0.125).collect();
        let bytes = build_big_endian_fixture(&values);
        let (vol, header) = read_nifti_bytes(&bytes).unwrap();
        assert!(!header.little_endian);
        assert_eq!(vol.shape(), (2, 2, 2));
        for (expected, got) in values.iter().zip(vol.data()) {
            assert_eq!(*expected as f64, *got);
        }
    }

    #[test]
    fn intensity_affine_is_applied() {
        let values: Vec<f32> = vec![0.0, 0.5, 0.0, 0.5, 0.0, 0.5, 0.0, 0.5];
        let mut bytes = build_big_endian_fixture(&values);
        bytes[112..116].copy_from_slice(&2.0f32.to_be_bytes()); // scl_slope
        bytes[116..120].copy_from_slice(&1.0f32.to_be_bytes()); // scl_inter
        let (vol, _) = read_nifti_bytes(&bytes).unwrap();
        assert_eq!(vol.data()[0], 1.0);
        assert_eq!(vol.data()[1], 2.0);
    }

    #[test]
    fn zero_slope_is_treated_as_identity() {
        let values: Vec<f32> = vec![0.25; 8];
        let mut bytes = build_big_endian_fixture(&values);
        bytes[112..116].copy_from_slice(&0.0f32.to_be_bytes());
        let (vol, _) = read_nifti_bytes(&bytes).unwrap();
        assert_eq!(vol.data()[0], 0.25);
    }

    #[test]
    fn int16_reads_with_scaling() {
        let mut bytes = build_big_endian_fixture(&[0.0; 8]);
        bytes[70..72].copy_from_slice(&4i16.to_be_bytes());
        bytes[72..74].copy_from_slice(&16i16.to_be_bytes());
        bytes.truncate(352);
        for i in 0..8i16 {
            bytes.extend_from_slice(&(i * 100).to_be_bytes());
        }
        let (vol, header) = read_nifti_bytes(&bytes).unwrap();
        assert_eq!(header.datatype, DATATYPE_INT16);
        assert_eq!(vol.data()[3], 300.0);
    }

    #[test]
    fn nonzero_extension_offset_is_honored() {
        let values: Vec<f32> = (0..8).map(|i| i as f32).collect();
        let mut bytes = build_big_endian_fixture(&[]);
        bytes.truncate(352);
        bytes[108..112].copy_from_slice(&368.0f32.to_be_bytes());
        bytes.extend_from_slice(&[0xAB; 16]); // extension payload
        for v in &values {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let (vol, _) = read_nifti_bytes(&bytes).unwrap();
        assert_eq!(vol.data()[7], 7.0);
    }

    #[test]
    fn error_variants_name_the_offending_field() {
        let good = build_big_endian_fixture(&[0.0; 8]);

        let mut bad = good.clone();
        bad[346] = b'9';
        assert!(matches!(
            read_nifti_bytes(&bad),
            Err(NiftiError::BadMagic { .. })
        ));

        let mut bad = good.clone();
        bad[0..4].copy_from_slice(&349i32.to_be_bytes());
        assert!(matches!(
            read_nifti_bytes(&bad),
            Err(NiftiError::BadSizeofHdr { .. })
        ));

        let mut bad = good.clone();
        bad[70..72].copy_from_slice(&64i16.to_be_bytes());
        assert!(matches!(
            read_nifti_bytes(&bad),
            Err(NiftiError::UnsupportedDatatype { code: 64 })
        ));

        let mut bad = good.clone();
        bad[40..42].copy_from_slice(&5i16.to_be_bytes());
        bad[48..50].copy_from_slice(&3i16.to_be_bytes()); // dim[4] = 3
        assert!(matches!(
            read_nifti_bytes(&bad),
            Err(NiftiError::ExtraDims { index: 4, .. })
        ));

        let mut bad = good.clone();
        bad[108..112].copy_from_slice(&100.0f32.to_be_bytes());
        assert!(matches!(
            read_nifti_bytes(&bad),
            Err(NiftiError::BadVoxOffset { .. })
        ));

        let bad = good[..360].to_vec();
        assert!(matches!(
            read_nifti_bytes(&bad),
            Err(NiftiError::Truncated { .. })
        ));

        assert!(matches!(
            read_nifti_bytes(&good[..100]),
            Err(NiftiError::TooSmall { len: 100 })
        ));
    }

    #[test]
    fn orientation_block_survives_read_modify_write() {
        let (_d, path) = temp("orient.nii");
        let values: Vec<f32> = (0..8).map(|i| i as f32).collect();
        let mut bytes = build_big_endian_fixture(&values);
        bytes[252..254].copy_from_slice(&1i16.to_be_bytes()); // qform_code
        bytes[256..260].copy_from_slice(&0.5f32.to_be_bytes()); // quatern_b
        bytes[280..284].copy_from_slice(&(-1.0f32).to_be_bytes()); // srow_x[0]
        let (vol, header) = read_nifti_bytes(&bytes).unwrap();

        write_nifti_with_header(&vol, &header, &path).unwrap();
        let (_, reread) = read_nifti(&path).unwrap();
        assert_eq!(reread.qform_code, 1);
        assert_eq!(reread.quatern[0], 0.5);
        assert_eq!(reread.srow[0], -1.0);
    }

    #[test]
    fn header_fuzzing_never_panics() {
        let base = encode(&random_volume((4, 4, 4), 3), None);
        let mut rng = ChaCha8Rng::seed_from_u64(999);
        for _ in 0..1000 {
            let mut bytes = base.clone();
            let flips = rng.random_range(1..=8);
            for _ in 0..flips {
                let at = rng.random_range(0..bytes.len());
                bytes[at] = rng.random();
            }
            // Any Result is fine; a panic fails the test.
            let _ = read_nifti_bytes(&bytes);
        }
    }
}
