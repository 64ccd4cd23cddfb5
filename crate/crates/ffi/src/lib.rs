//! C ABI over the texmask library.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `tm_*_free`. Every fallible call returns a
//! [`TmStatus`]; on failure the message is available from
//! [`tm_last_error`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use texmask::mask::{expand_mask, generate_mask, patch_scores, PatchMask, TauMode};
use texmask::metrics::{evaluate, SegPair};
use texmask::phantom::{make_phantom, PhantomSpec};
use texmask::texture::{compute_variation_map, CueNormalization, PartialGroupMode, TvmConfig, VariationMap};
use texmask::{Error, MaskConfig, Volume3D};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TmStatus {
    Ok = 0,
    NullPointer = 1,
    Io = 2,
    UnsupportedDtype = 3,
    SizeMismatch = 4,
    MalformedHeader = 5,
    NonFinite = 6,
    DimMismatch = 7,
    NotDivisible = 8,
    InvalidConfig = 9,
    GeometryOutOfBounds = 10,
    NonFiniteLoss = 11,
    BufferTooSmall = 12,
    InvalidUtf8 = 13,
    Panic = 14,
}

impl From<&Error> for TmStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => TmStatus::Io,
            Error::UnsupportedDtype { .. } => TmStatus::UnsupportedDtype,
            Error::SizeMismatch { .. } => TmStatus::SizeMismatch,
            Error::MalformedHeader { .. } => TmStatus::MalformedHeader,
            Error::NonFinite { .. } => TmStatus::NonFinite,
            Error::DimMismatch(_) => TmStatus::DimMismatch,
            Error::NotDivisible { .. } => TmStatus::NotDivisible,
            Error::InvalidConfig { .. } => TmStatus::InvalidConfig,
            Error::GeometryOutOfBounds(_) => TmStatus::GeometryOutOfBounds,
            Error::NonFiniteLoss { .. } => TmStatus::NonFiniteLoss,
        }
    }
}

/// Opaque 3D volume.
pub struct TmVolume(Volume3D);

/// Opaque texture-variation map.
pub struct TmVariationMap(VariationMap);

/// Opaque patch mask.
pub struct TmPatchMask(PatchMask);

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct TmTvmConfig {
    pub alpha: f64,
    pub stride: usize,
    pub var_window: usize,
    pub sigma: f64,
    /// When true, trailing slices form a smaller last group instead of staying zero.
    pub process_remainder: bool,
    /// When true, normalize cues over the whole volume instead of per slice.
    pub per_volume_normalization: bool,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct TmMaskConfig {
    pub patch_size: usize,
    pub mask_ratio: f64,
    pub high_var_fraction: f64,
    pub tau: f64,
    /// When true, `tau` is a quantile of the patch scores.
    pub tau_is_quantile: bool,
    pub seed: u64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct TmMaskCounts {
    pub n_patches: usize,
    pub n_high: usize,
    pub m: usize,
    pub m_h: usize,
    pub m_r: usize,
    pub tau: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct TmMetrics {
    pub dsc: f64,
    pub iou: f64,
    /// Valid only when `hd95_defined` is true.
    pub hd95: f64,
    pub hd95_defined: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), (TmStatus, String)>) -> TmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            TmStatus::Panic
        }
    }
}

fn lib(e: Error) -> (TmStatus, String) {
    ((&e).into(), e.to_string())
}

fn null(what: &str) -> (TmStatus, String) {
    (TmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (TmStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, (TmStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| (TmStatus::InvalidUtf8, "path is not valid UTF-8".into()))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), (TmStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

impl From<&TmTvmConfig> for TvmConfig {
    fn from(c: &TmTvmConfig) -> Self {
        TvmConfig {
            alpha: c.alpha,
            stride: c.stride,
            var_window: c.var_window,
            sigma: c.sigma,
            partial_group: if c.process_remainder {
                PartialGroupMode::ProcessRemainder
            } else {
                PartialGroupMode::PaperLiteralZero
            },
            cue_normalization: if c.per_volume_normalization {
                CueNormalization::PerVolume
            } else {
                CueNormalization::PerSlice
            },
        }
    }
}

impl From<&TmMaskConfig> for MaskConfig {
    fn from(c: &TmMaskConfig) -> Self {
        MaskConfig {
            patch_size: c.patch_size,
            mask_ratio: c.mask_ratio,
            high_var_fraction: c.high_var_fraction,
            tau: c.tau,
            tau_mode: if c.tau_is_quantile { TauMode::Quantile } else { TauMode::Fixed },
            seed: c.seed,
        }
    }
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn tm_tvm_config_default() -> TmTvmConfig {
    let d = TvmConfig::default();
    TmTvmConfig {
        alpha: d.alpha,
        stride: d.stride,
        var_window: d.var_window,
        sigma: d.sigma,
        process_remainder: d.partial_group == PartialGroupMode::ProcessRemainder,
        per_volume_normalization: d.cue_normalization == CueNormalization::PerVolume,
    }
}

#[no_mangle]
pub extern "C" fn tm_mask_config_default() -> TmMaskConfig {
    let d = MaskConfig::default();
    TmMaskConfig {
        patch_size: d.patch_size,
        mask_ratio: d.mask_ratio,
        high_var_fraction: d.high_var_fraction,
        tau: d.tau,
        tau_is_quantile: d.tau_mode == TauMode::Quantile,
        seed: d.seed,
    }
}

/// Copies `dims[0] * dims[1] * dims[2]` floats (axis 0 slowest) into a new volume.
///
/// # Safety
/// `data` must point to that many floats, `dims` and `spacing` to three values each.
#[no_mangle]
pub unsafe extern "C" fn tm_volume_new(
    data: *const f32,
    dims: *const usize,
    spacing: *const f64,
    out: *mut *mut TmVolume,
) -> TmStatus {
    guard(|| {
        if data.is_null() || dims.is_null() || spacing.is_null() {
            return Err(null("data, dims or spacing"));
        }
        let d = [*dims, *dims.add(1), *dims.add(2)];
        let s = [*spacing, *spacing.add(1), *spacing.add(2)];
        let n = d[0]
            .checked_mul(d[1])
            .and_then(|x| x.checked_mul(d[2]))
            .ok_or((TmStatus::DimMismatch, "dims overflow".into()))?;
        let v = Volume3D::new(std::slice::from_raw_parts(data, n).to_vec(), d, s).map_err(lib)?;
        emit(out, TmVolume(v))
    })
}

/// Loads a `.nii` file or a raw payload with its `.hdr` sidecar.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tm_volume_load(path: *const c_char, out: *mut *mut TmVolume) -> TmStatus {
    guard(|| {
        let p = path_arg(path)?;
        let v = texmask::load_volume(&p).map_err(lib)?;
        emit(out, TmVolume(v))
    })
}

/// # Safety
/// `vol` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tm_volume_save(vol: *const TmVolume, path: *const c_char) -> TmStatus {
    guard(|| {
        let v = as_ref(vol, "volume")?;
        texmask::save_volume(&v.0, path_arg(path)?).map_err(lib)
    })
}

/// # Safety
/// `vol` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tm_volume_free(vol: *mut TmVolume) {
    if !vol.is_null() {
        drop(Box::from_raw(vol));
    }
}

/// # Safety
/// `dims_out` must hold three values and `spacing_out` three (either may be null).
#[no_mangle]
pub unsafe extern "C" fn tm_volume_shape(vol: *const TmVolume, dims_out: *mut usize, spacing_out: *mut f64) -> TmStatus {
    guard(|| {
        let v = as_ref(vol, "volume")?;
        if !dims_out.is_null() {
            ptr::copy_nonoverlapping(v.0.dims().as_ptr(), dims_out, 3);
        }
        if !spacing_out.is_null() {
            ptr::copy_nonoverlapping(v.0.spacing().as_ptr(), spacing_out, 3);
        }
        Ok(())
    })
}

/// Copies the voxels into `buf`, which must hold at least `len` floats.
///
/// # Safety
/// `buf` must be writable for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn tm_volume_copy_data(vol: *const TmVolume, buf: *mut f32, len: usize) -> TmStatus {
    guard(|| {
        let v = as_ref(vol, "volume")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let n = v.0.len();
        if len < n {
            return Err((TmStatus::BufferTooSmall, format!("need {n} floats, got {len}")));
        }
        ptr::copy_nonoverlapping(v.0.data().as_ptr(), buf, n);
        Ok(())
    })
}

/// Noise-free sphere phantom centred in `dims`, with its binary label.
///
/// # Safety
/// `dims` must hold three values; `vol_out` and `label_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tm_phantom_sphere(
    dims: *const usize,
    vol_out: *mut *mut TmVolume,
    label_out: *mut *mut TmVolume,
) -> TmStatus {
    guard(|| {
        if dims.is_null() || vol_out.is_null() || label_out.is_null() {
            return Err(null("dims or outputs"));
        }
        let d = [*dims, *dims.add(1), *dims.add(2)];
        let ph = make_phantom(&PhantomSpec::standard_sphere(d)).map_err(lib)?;
        emit(vol_out, TmVolume(ph.volume))?;
        emit(label_out, TmVolume(ph.label))
    })
}

/// # Safety
/// `vol` must be a live handle, `cfg` readable (null means defaults), `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tm_variation_map_compute(
    vol: *const TmVolume,
    cfg: *const TmTvmConfig,
    out: *mut *mut TmVariationMap,
) -> TmStatus {
    guard(|| {
        let v = as_ref(vol, "volume")?;
        let cfg = cfg.as_ref().map_or_else(TvmConfig::default, TvmConfig::from);
        let map = compute_variation_map(&v.0, &cfg).map_err(lib)?;
        emit(out, TmVariationMap(map))
    })
}

/// The map as a new float volume.
///
/// # Safety
/// `map` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tm_variation_map_to_volume(map: *const TmVariationMap, out: *mut *mut TmVolume) -> TmStatus {
    guard(|| {
        let m = as_ref(map, "map")?;
        emit(out, TmVolume(m.0.to_volume().map_err(lib)?))
    })
}

/// # Safety
/// `map` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tm_variation_map_free(map: *mut TmVariationMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Pools `map` into patch scores and draws a mask.
///
/// # Safety
/// `map` must be a live handle, `cfg` readable (null means defaults), `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tm_patch_mask_generate(
    map: *const TmVariationMap,
    cfg: *const TmMaskConfig,
    out: *mut *mut TmPatchMask,
) -> TmStatus {
    guard(|| {
        let m = as_ref(map, "map")?;
        let cfg = cfg.as_ref().map_or_else(MaskConfig::default, MaskConfig::from);
        let scores = patch_scores(&m.0, cfg.patch_size).map_err(lib)?;
        emit(out, TmPatchMask(generate_mask(&scores, &cfg).map_err(lib)?))
    })
}

/// # Safety
/// `pm` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tm_patch_mask_counts(pm: *const TmPatchMask, out: *mut TmMaskCounts) -> TmStatus {
    guard(|| {
        let p = &as_ref(pm, "mask")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = TmMaskCounts {
            n_patches: p.n_patches(),
            n_high: p.n_high,
            m: p.m,
            m_h: p.m_h,
            m_r: p.m_r,
            tau: p.tau,
        };
        Ok(())
    })
}

/// Writes one byte (0 or 1) per patch, axis 0 slowest.
///
/// # Safety
/// `buf` must be writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn tm_patch_mask_copy_bits(pm: *const TmPatchMask, buf: *mut u8, len: usize) -> TmStatus {
    guard(|| {
        let p = &as_ref(pm, "mask")?.0;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let n = p.n_patches();
        if len < n {
            return Err((TmStatus::BufferTooSmall, format!("need {n} bytes, got {len}")));
        }
        for (i, &b) in p.bits.iter().enumerate() {
            *buf.add(i) = b as u8;
        }
        Ok(())
    })
}

/// Voxel-level mask (1 = masked) with unit spacing.
///
/// # Safety
/// `pm` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tm_patch_mask_expand(pm: *const TmPatchMask, out: *mut *mut TmVolume) -> TmStatus {
    guard(|| {
        let p = &as_ref(pm, "mask")?.0;
        emit(out, TmVolume(expand_mask(p).map_err(lib)?))
    })
}

/// # Safety
/// `pm` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tm_patch_mask_free(pm: *mut TmPatchMask) {
    if !pm.is_null() {
        drop(Box::from_raw(pm));
    }
}

/// Dice, IoU (smoothing `eps`) and HD95 in mm using the volumes' spacing.
///
/// # Safety
/// Both handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tm_metrics(
    pred: *const TmVolume,
    gt: *const TmVolume,
    eps: f64,
    out: *mut TmMetrics,
) -> TmStatus {
    guard(|| {
        let p = as_ref(pred, "prediction")?;
        let g = as_ref(gt, "ground truth")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = evaluate(&SegPair::new(p.0.clone(), g.0.clone()).map_err(lib)?, eps);
        *out = TmMetrics {
            dsc: r.dsc,
            iou: r.iou,
            hd95: r.hd95.unwrap_or(f64::NAN),
            hd95_defined: r.hd95.is_some(),
        };
        Ok(())
    })
}
