//! Volume persistence in two bit-exact formats.
//!
//! * Raw: little-endian payload in axis-0-major order plus a sidecar text
//!   header at `<path>.hdr` holding `dims`, `dtype` and `spacing`.
//! * NIfTI-1 single file (`.nii`), uncompressed, scalar int16/uint16/float32.
//!
//! NIfTI stores `dim[1]` (x) as the fastest-varying index. Volumes are mapped
//! so memory order is preserved: `dims = (dim[3], dim[2], dim[1])` and the
//! same reversal applies to `pixdim`. Axis 0 is therefore the NIfTI z axis.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::volume::Volume3D;

const NIFTI_HEADER_LEN: usize = 348;
const NIFTI_VOX_OFFSET: usize = 352;

const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const DT_UINT16: i16 = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    Int16,
    Uint16,
    Float32,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::Int16 => "int16",
            Dtype::Uint16 => "uint16",
            Dtype::Float32 => "float32",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::Int16 | Dtype::Uint16 => 2,
            Dtype::Float32 => 4,
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        match name {
            "int16" => Some(Dtype::Int16),
            "uint16" => Some(Dtype::Uint16),
            "float32" => Some(Dtype::Float32),
            _ => None,
        }
    }

    fn decode(self, bytes: &[u8]) -> Vec<f32> {
        match self {
            Dtype::Int16 => bytes
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32)
                .collect(),
            Dtype::Uint16 => bytes
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]) as f32)
                .collect(),
            Dtype::Float32 => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Raw,
    Nifti,
}

impl Format {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("nii") => Format::Nifti,
            _ => Format::Raw,
        }
    }
}

/// Sidecar header location for a raw payload.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    match Format::from_path(path) {
        Format::Nifti => load_nifti(path),
        Format::Raw => load_raw(path),
    }
}

/// Writes `v` as float32. Refuses volumes containing NaN or infinities.
pub fn save_volume(v: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    v.ensure_finite()?;
    match Format::from_path(path) {
        Format::Nifti => save_nifti(v, path),
        Format::Raw => save_raw(v, path),
    }
}

fn f32_payload(data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

// ---------------------------------------------------------------------------
// Raw + sidecar
// ---------------------------------------------------------------------------

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn raw_header_text(v: &Volume3D) -> String {
    let [d0, d1, d2] = v.dims();
    let [s0, s1, s2] = v.spacing();
    format!(
        "format = \"raw\"\nbyte_order = \"little\"\ndtype = \"float32\"\ndims = [{d0}, {d1}, {d2}]\nspacing = [{s0:?}, {s1:?}, {s2:?}]\n"
    )
}

fn save_raw(v: &Volume3D, path: &Path) -> Result<()> {
    fs::write(path, f32_payload(v.data())).map_err(|e| Error::io(path, e))?;
    write_text(&sidecar_path(path), &raw_header_text(v))
}

pub(crate) fn read_header_table(path: &Path) -> Result<toml::Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.parse::<toml::Table>()
        .map_err(|e| Error::header(path, "<syntax>", e.to_string().trim().replace('\n', " ")))
}

pub(crate) fn header_usize3(table: &toml::Table, path: &Path, field: &str) -> Result<[usize; 3]> {
    let arr = table
        .get(field)
        .ok_or_else(|| Error::header(path, field, "missing"))?
        .as_array()
        .ok_or_else(|| Error::header(path, field, "expected an array of 3 integers"))?;
    if arr.len() != 3 {
        return Err(Error::header(path, field, format!("expected 3 entries, got {}", arr.len())));
    }
    let mut out = [0usize; 3];
    for (o, item) in out.iter_mut().zip(arr) {
        let n = item
            .as_integer()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::header(path, field, format!("entry {item} is not a positive integer")))?;
        *o = n as usize;
    }
    Ok(out)
}

pub(crate) fn header_f64_3(table: &toml::Table, path: &Path, field: &str) -> Result<[f64; 3]> {
    let arr = table
        .get(field)
        .ok_or_else(|| Error::header(path, field, "missing"))?
        .as_array()
        .ok_or_else(|| Error::header(path, field, "expected an array of 3 numbers"))?;
    if arr.len() != 3 {
        return Err(Error::header(path, field, format!("expected 3 entries, got {}", arr.len())));
    }
    let mut out = [0f64; 3];
    for (o, item) in out.iter_mut().zip(arr) {
        let x = item
            .as_float()
            .or_else(|| item.as_integer().map(|i| i as f64))
            .filter(|x| *x > 0.0 && x.is_finite())
            .ok_or_else(|| Error::header(path, field, format!("entry {item} is not a positive number")))?;
        *o = x;
    }
    Ok(out)
}

pub(crate) fn header_str<'a>(table: &'a toml::Table, path: &Path, field: &str) -> Result<&'a str> {
    table
        .get(field)
        .ok_or_else(|| Error::header(path, field, "missing"))?
        .as_str()
        .ok_or_else(|| Error::header(path, field, "expected a string"))
}

fn load_raw(path: &Path) -> Result<Volume3D> {
    let hdr_path = sidecar_path(path);
    let table = read_header_table(&hdr_path)?;
    let dims = header_usize3(&table, &hdr_path, "dims")?;
    let spacing = header_f64_3(&table, &hdr_path, "spacing")?;
    let dtype_name = header_str(&table, &hdr_path, "dtype")?;
    let dtype = Dtype::from_name(dtype_name).ok_or_else(|| Error::UnsupportedDtype {
        path: hdr_path.clone(),
        dtype: dtype_name.to_string(),
    })?;
    if let Some(order) = table.get("byte_order") {
        if order.as_str() != Some("little") {
            return Err(Error::header(&hdr_path, "byte_order", format!("only \"little\" is supported, got {order}")));
        }
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = dims.iter().product::<usize>() * dtype.size();
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            dims,
            expected,
            actual: bytes.len(),
        });
    }
    Volume3D::new(dtype.decode(&bytes), dims, spacing)
}

// ---------------------------------------------------------------------------
// NIfTI-1
// ---------------------------------------------------------------------------

fn rd_i16(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn rd_i32(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn rd_f32(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn load_nifti(path: &Path) -> Result<Volume3D> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < NIFTI_HEADER_LEN {
        return Err(Error::header(
            path,
            "sizeof_hdr",
            format!("file is {} bytes, shorter than a NIfTI-1 header", bytes.len()),
        ));
    }
    let sizeof_hdr = rd_i32(&bytes, 0);
    if sizeof_hdr != NIFTI_HEADER_LEN as i32 {
        let reason = if sizeof_hdr.swap_bytes() == NIFTI_HEADER_LEN as i32 {
            "big-endian NIfTI is not supported".to_string()
        } else {
            format!("expected 348, got {sizeof_hdr}")
        };
        return Err(Error::header(path, "sizeof_hdr", reason));
    }
    if &bytes[344..348] != b"n+1\0" {
        return Err(Error::header(
            path,
            "magic",
            format!("expected single-file \"n+1\", got {:?}", String::from_utf8_lossy(&bytes[344..348])),
        ));
    }

    let ndim = rd_i16(&bytes, 40);
    if !(1..=7).contains(&ndim) {
        return Err(Error::header(path, "dim[0]", format!("expected 1..=7, got {ndim}")));
    }
    let mut nifti_dims = [1usize; 3];
    for k in 1..=7usize {
        let d = rd_i16(&bytes, 40 + 2 * k);
        let d = if k as i16 > ndim { 1 } else { d };
        if d < 1 {
            return Err(Error::header(path, &format!("dim[{k}]"), format!("must be positive, got {d}")));
        }
        if k <= 3 {
            nifti_dims[k - 1] = d as usize;
        } else if d != 1 {
            return Err(Error::header(
                path,
                &format!("dim[{k}]"),
                format!("only 3D scalar volumes are supported, got {d}"),
            ));
        }
    }

    let datatype = rd_i16(&bytes, 70);
    let dtype = match datatype {
        DT_INT16 => Dtype::Int16,
        DT_UINT16 => Dtype::Uint16,
        DT_FLOAT32 => Dtype::Float32,
        other => {
            return Err(Error::UnsupportedDtype {
                path: path.to_path_buf(),
                dtype: format!("NIfTI datatype code {other}"),
            })
        }
    };
    let bitpix = rd_i16(&bytes, 72);
    if bitpix as usize != dtype.size() * 8 {
        return Err(Error::header(
            path,
            "bitpix",
            format!("{bitpix} does not match datatype {}", dtype.name()),
        ));
    }

    let mut nifti_pixdim = [1f64; 3];
    for (k, p) in nifti_pixdim.iter_mut().enumerate() {
        let v = rd_f32(&bytes, 76 + 4 * (k + 1));
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::header(path, &format!("pixdim[{}]", k + 1), format!("must be positive, got {v}")));
        }
        *p = v as f64;
    }

    let vox_offset = rd_f32(&bytes, 108);
    if !(vox_offset.is_finite() && vox_offset >= NIFTI_HEADER_LEN as f32 && vox_offset.fract() == 0.0) {
        return Err(Error::header(path, "vox_offset", format!("invalid value {vox_offset}")));
    }
    let vox_offset = vox_offset as usize;
    let scl_slope = rd_f32(&bytes, 112);
    let scl_inter = rd_f32(&bytes, 116);

    let dims = [nifti_dims[2], nifti_dims[1], nifti_dims[0]];
    let spacing = [nifti_pixdim[2], nifti_pixdim[1], nifti_pixdim[0]];
    let expected = dims.iter().product::<usize>() * dtype.size();
    let actual = bytes.len().saturating_sub(vox_offset);
    if actual != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            dims,
            expected,
            actual,
        });
    }
    let mut data = dtype.decode(&bytes[vox_offset..]);
    if scl_slope != 0.0 && scl_slope.is_finite() {
        let inter = if scl_inter.is_finite() { scl_inter } else { 0.0 };
        if scl_slope != 1.0 || inter != 0.0 {
            for v in &mut data {
                *v = *v * scl_slope + inter;
            }
        }
    }
    Volume3D::new(data, dims, spacing)
}

fn nifti_header(v: &Volume3D) -> [u8; NIFTI_VOX_OFFSET] {
    let mut h = [0u8; NIFTI_VOX_OFFSET];
    let mut put = |off: usize, b: &[u8]| h[off..off + b.len()].copy_from_slice(b);
    put(0, &(NIFTI_HEADER_LEN as i32).to_le_bytes());
    let [d0, d1, d2] = v.dims();
    let nifti_dims = [3i16, d2 as i16, d1 as i16, d0 as i16, 1, 1, 1, 1];
    for (k, d) in nifti_dims.iter().enumerate() {
        put(40 + 2 * k, &d.to_le_bytes());
    }
    put(70, &DT_FLOAT32.to_le_bytes());
    put(72, &32i16.to_le_bytes());
    let [s0, s1, s2] = v.spacing();
    let pixdim = [1.0f32, s2 as f32, s1 as f32, s0 as f32, 1.0, 1.0, 1.0, 1.0];
    for (k, p) in pixdim.iter().enumerate() {
        put(76 + 4 * k, &p.to_le_bytes());
    }
    put(108, &(NIFTI_VOX_OFFSET as f32).to_le_bytes());
    // xyzt_units: millimetres
    put(123, &[2u8]);
    put(344, b"n+1\0");
    h
}

fn save_nifti(v: &Volume3D, path: &Path) -> Result<()> {
    if v.dims().iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::DimMismatch(format!(
            "dims {:?} exceed the NIfTI-1 limit of {}",
            v.dims(),
            i16::MAX
        )));
    }
    let mut bytes = Vec::with_capacity(NIFTI_VOX_OFFSET + v.len() * 4);
    bytes.extend_from_slice(&nifti_header(v));
    bytes.extend_from_slice(&f32_payload(v.data()));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn raw_eight_values_round_trip_in_order() {
        let dir = tmp();
        let p = dir.path().join("v.raw");
        let vals: Vec<f32> = (0..8).map(|i| i as f32 * 0.5 - 1.0).collect();
        fs::write(&p, f32_payload(&vals)).unwrap();
        write_text(
            &sidecar_path(&p),
            "dims = [2, 2, 2]\ndtype = \"float32\"\nspacing = [1, 1, 1]\n",
        )
        .unwrap();
        let v = load_volume(&p).unwrap();
        assert_eq!(v.dims(), [2, 2, 2]);
        assert_eq!(v.spacing(), [1.0; 3]);
        assert_eq!(v.data(), &vals[..]);
        assert_eq!(v.get(1, 0, 1), vals[5]);
    }

    #[test]
    fn raw_payload_short_is_size_mismatch() {
        let dir = tmp();
        let p = dir.path().join("v.raw");
        fs::write(&p, f32_payload(&[0.0; 7])).unwrap();
        write_text(&sidecar_path(&p), "dims = [2, 2, 2]\ndtype = \"float32\"\nspacing = [1, 1, 1]\n").unwrap();
        let err = load_volume(&p).unwrap_err();
        assert!(matches!(err, Error::SizeMismatch { expected: 32, actual: 28, .. }), "{err}");
        assert!(err.to_string().contains("dims/byte-count mismatch"));
        assert!(err.to_string().contains("v.raw"));
    }

    #[test]
    fn raw_int16_is_widened() {
        let dir = tmp();
        let p = dir.path().join("v.raw");
        let vals: [i16; 2] = [-1000, 1500];
        let bytes: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&p, bytes).unwrap();
        write_text(&sidecar_path(&p), "dims = [1, 1, 2]\ndtype = \"int16\"\nspacing = [0.5, 0.5, 0.5]\n").unwrap();
        let v = load_volume(&p).unwrap();
        assert_eq!(v.data(), &[-1000.0, 1500.0]);
    }

    #[test]
    fn raw_header_errors_name_the_field() {
        let dir = tmp();
        let p = dir.path().join("v.raw");
        fs::write(&p, [0u8; 8]).unwrap();
        for (hdr, field) in [
            ("dtype = \"float32\"\nspacing = [1, 1, 1]\n", "dims"),
            ("dims = [1, 1, 2]\ndtype = \"float32\"\nspacing = [1, -1, 1]\n", "spacing"),
            ("dims = [1, 2]\ndtype = \"float32\"\nspacing = [1, 1, 1]\n", "dims"),
            ("dims = [1, 1, 2]\nspacing = [1, 1, 1]\n", "dtype"),
        ] {
            write_text(&sidecar_path(&p), hdr).unwrap();
            match load_volume(&p).unwrap_err() {
                Error::MalformedHeader { field: f, .. } => assert_eq!(f, field),
                other => panic!("unexpected {other}"),
            }
        }
        write_text(&sidecar_path(&p), "dims = [1, 1, 2]\ndtype = \"float64\"\nspacing = [1, 1, 1]\n").unwrap();
        assert!(matches!(load_volume(&p).unwrap_err(), Error::UnsupportedDtype { .. }));
    }

    #[test]
    fn save_rejects_nan() {
        let dir = tmp();
        let v = Volume3D::new(vec![0.0, f32::NAN], [1, 1, 2], [1.0; 3]).unwrap();
        let err = save_volume(&v, dir.path().join("x.raw")).unwrap_err();
        assert!(err.to_string().contains("non-finite voxel"));
        assert!(save_volume(&v, dir.path().join("x.nii")).is_err());
    }

    #[test]
    fn payload_size_is_exact() {
        let dir = tmp();
        let v = Volume3D::zeros([128, 128, 128], [0.5; 3]).unwrap();
        let raw = dir.path().join("big.raw");
        let nii = dir.path().join("big.nii");
        save_volume(&v, &raw).unwrap();
        save_volume(&v, &nii).unwrap();
        let n = 128usize.pow(3) * 4;
        assert_eq!(fs::metadata(&raw).unwrap().len() as usize, n);
        assert_eq!(fs::metadata(&nii).unwrap().len() as usize, n + NIFTI_VOX_OFFSET);
    }

    #[test]
    fn nifti_scaling_is_applied() {
        let dir = tmp();
        let p = dir.path().join("s.nii");
        let v = Volume3D::new(vec![1.0, 2.0], [1, 1, 2], [1.0; 3]).unwrap();
        save_volume(&v, &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[112..116].copy_from_slice(&2.0f32.to_le_bytes());
        bytes[116..120].copy_from_slice(&(-1.0f32).to_le_bytes());
        fs::write(&p, bytes).unwrap();
        assert_eq!(load_volume(&p).unwrap().data(), &[1.0, 3.0]);
    }

    #[test]
    fn nifti_rejects_pair_files_and_unknown_dtypes() {
        let dir = tmp();
        let p = dir.path().join("s.nii");
        let v = Volume3D::new(vec![1.0, 2.0], [1, 1, 2], [1.0; 3]).unwrap();
        save_volume(&v, &p).unwrap();
        let good = fs::read(&p).unwrap();

        let mut bytes = good.clone();
        bytes[344..348].copy_from_slice(b"ni1\0");
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_volume(&p).unwrap_err(), Error::MalformedHeader { field, .. } if field == "magic"));

        let mut bytes = good.clone();
        bytes[70..72].copy_from_slice(&64i16.to_le_bytes());
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_volume(&p).unwrap_err(), Error::UnsupportedDtype { .. }));

        let mut bytes = good;
        bytes.pop();
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_volume(&p).unwrap_err(), Error::SizeMismatch { .. }));
    }
}
