//! Intensity windowing, normalization and isotropic resampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume3D;

/// Standard deviations below this are treated as a constant volume.
pub const STD_GUARD: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Affine map of the HU window onto [0, 1].
    UnitRange,
    /// Subtract the mean and divide by the population standard deviation.
    ZeroMeanUnitVar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub hu_window: [f64; 2],
    pub normalization: Normalization,
    /// Isotropic output spacing in mm; `None` skips resampling. Written as
    /// `"none"` in config files.
    #[serde(with = "spacing_or_none")]
    pub target_spacing: Option<f64>,
}

mod spacing_or_none {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Value(f64),
        Word(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => Repr::Value(*x),
            None => Repr::Word("none".into()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Value(x) => Ok(Some(x)),
            Repr::Word(w) if w == "none" => Ok(None),
            Repr::Word(w) => Err(serde::de::Error::custom(format!("expected a spacing or \"none\", got \"{w}\""))),
        }
    }
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            hu_window: [-1000.0, 500.0],
            normalization: Normalization::UnitRange,
            target_spacing: Some(0.5),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.hu_window;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::config("hu_window", format!("need finite lo < hi, got [{lo}, {hi}]")));
        }
        if let Some(t) = self.target_spacing {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::config("target_spacing", format!("must be > 0, got {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PreprocessWarning {
    /// zero_mean_unit_var on a volume whose clipped std is below [`STD_GUARD`].
    ConstantVolume,
}

#[derive(Clone, Debug)]
pub struct Preprocessed {
    pub volume: Volume3D,
    pub warnings: Vec<PreprocessWarning>,
}

/// Clips to the HU window, then normalizes. Does not resample.
pub fn preprocess(v: &Volume3D, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    cfg.validate()?;
    v.ensure_finite()?;
    let [lo, hi] = cfg.hu_window;
    let clipped: Vec<f64> = v.data().iter().map(|&x| (x as f64).clamp(lo, hi)).collect();
    let mut warnings = Vec::new();
    let data: Vec<f32> = match cfg.normalization {
        Normalization::UnitRange => {
            let range = hi - lo;
            clipped.iter().map(|&x| ((x - lo) / range) as f32).collect()
        }
        Normalization::ZeroMeanUnitVar => {
            let n = clipped.len() as f64;
            let mean = clipped.iter().sum::<f64>() / n;
            let var = clipped.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            if std < STD_GUARD {
                log::warn!("constant volume under zero_mean_unit_var normalization; emitting zeros");
                warnings.push(PreprocessWarning::ConstantVolume);
                vec![0.0; clipped.len()]
            } else {
                clipped.iter().map(|&x| ((x - mean) / std) as f32).collect()
            }
        }
    };
    Ok(Preprocessed {
        volume: Volume3D::new(data, v.dims(), v.spacing())?,
        warnings,
    })
}

/// Sample positions along one axis: (lower index, upper index, fraction).
fn axis_samples(len: usize, spacing: f64, target: f64) -> Vec<(usize, usize, f64)> {
    let out_len = ((len as f64 * spacing / target).round() as usize).max(1);
    let max_pos = (len - 1) as f64;
    (0..out_len)
        .map(|j| {
            let pos = ((j as f64 + 0.5) * target / spacing - 0.5).clamp(0.0, max_pos);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Trilinear resampling onto an isotropic grid with voxel-centre alignment.
pub fn resample_isotropic(v: &Volume3D, target_spacing: f64) -> Result<Volume3D> {
    if !(target_spacing > 0.0 && target_spacing.is_finite()) {
        return Err(Error::config("target_spacing", format!("must be > 0, got {target_spacing}")));
    }
    let dims = v.dims();
    let spacing = v.spacing();
    let ax: Vec<Vec<(usize, usize, f64)>> = (0..3)
        .map(|a| axis_samples(dims[a], spacing[a], target_spacing))
        .collect();
    let out_dims = [ax[0].len(), ax[1].len(), ax[2].len()];
    let at = |a: usize, b: usize, c: usize| v.get(a, b, c) as f64;
    let mut data = Vec::with_capacity(out_dims.iter().product());
    for &(a0, a1, ta) in &ax[0] {
        for &(b0, b1, tb) in &ax[1] {
            for &(c0, c1, tc) in &ax[2] {
                let c00 = lerp(at(a0, b0, c0), at(a0, b0, c1), tc);
                let c01 = lerp(at(a0, b1, c0), at(a0, b1, c1), tc);
                let c10 = lerp(at(a1, b0, c0), at(a1, b0, c1), tc);
                let c11 = lerp(at(a1, b1, c0), at(a1, b1, c1), tc);
                let c0v = lerp(c00, c01, tb);
                let c1v = lerp(c10, c11, tb);
                data.push(lerp(c0v, c1v, ta) as f32);
            }
        }
    }
    Volume3D::new(data, out_dims, [target_spacing; 3])
}

/// Zero-pads each axis up to the next multiple of `multiple`. Returns the
/// padded volume and the original dims.
pub fn pad_to_multiple(v: &Volume3D, multiple: usize) -> Result<(Volume3D, [usize; 3])> {
    if multiple == 0 {
        return Err(Error::config("patch_size", "must be positive"));
    }
    let dims = v.dims();
    let padded = dims.map(|d| d.div_ceil(multiple) * multiple);
    if padded == dims {
        return Ok((v.clone(), dims));
    }
    let out = Volume3D::from_fn(padded, v.spacing(), |a, b, c| {
        if a < dims[0] && b < dims[1] && c < dims[2] {
            v.get(a, b, c)
        } else {
            0.0
        }
    })?;
    Ok((out, dims))
}
