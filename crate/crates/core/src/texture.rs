//! Texture-variation map: per-slice gradient and variance cues, combined,
//! max-pooled over groups of consecutive slices, smoothed and normalized.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{gaussian_blur_3d, normalize_with, slice_gradient, slice_variance, Plane};
use crate::volume::Volume3D;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartialGroupMode {
    /// Trailing slices that do not fill a whole group stay zero.
    PaperLiteralZero,
    /// Trailing slices form a smaller final group.
    ProcessRemainder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueNormalization {
    /// Min-max of each slice's own gradient / variance map.
    PerSlice,
    /// Min-max over all processed slices of the volume.
    PerVolume,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TvmConfig {
    /// Weight of the gradient cue; `1 - alpha` goes to the variance cue.
    pub alpha: f64,
    /// Number of consecutive slices per group.
    pub stride: usize,
    /// Odd mean-filter window for the variance cue.
    pub var_window: usize,
    /// Gaussian sigma in voxels; 0 disables smoothing.
    pub sigma: f64,
    pub partial_group: PartialGroupMode,
    pub cue_normalization: CueNormalization,
}

impl Default for TvmConfig {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            stride: 4,
            var_window: 5,
            sigma: 1.0,
            partial_group: PartialGroupMode::PaperLiteralZero,
            cue_normalization: CueNormalization::PerSlice,
        }
    }
}

impl TvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("alpha", format!("must be in [0, 1], got {}", self.alpha)));
        }
        if self.stride == 0 {
            return Err(Error::config("stride", "must be >= 1"));
        }
        if self.var_window < 3 || self.var_window.is_multiple_of(2) {
            return Err(Error::config("var_window", format!("must be odd and >= 3, got {}", self.var_window)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("sigma", format!("must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Raw and normalized cues of one slice.
#[derive(Clone, Debug)]
pub struct SliceCues {
    pub grad: Plane,
    pub var: Plane,
    pub grad_norm: Plane,
    pub var_norm: Plane,
}

impl SliceCues {
    /// Gradient magnitude and local variance of `slice`. The slice is shifted
    /// by its minimum first; both cues are shift invariant, and the shift keeps
    /// constant slices exactly zero.
    pub fn compute(slice: &Plane, var_window: usize) -> Self {
        let (lo, _) = slice.min_max();
        let shifted = Plane::new(slice.rows, slice.cols, slice.data.iter().map(|v| v - lo).collect());
        let grad = slice_gradient(&shifted);
        let var = slice_variance(&shifted, var_window);
        let grad_norm = grad.normalized();
        let var_norm = var.normalized();
        Self {
            grad,
            var,
            grad_norm,
            var_norm,
        }
    }

    fn renormalize(&mut self, grad_range: (f64, f64), var_range: (f64, f64)) {
        self.grad_norm = normalize_with(&self.grad, grad_range.0, grad_range.1);
        self.var_norm = normalize_with(&self.var, var_range.0, var_range.1);
    }

    pub fn combine(&self, alpha: f64) -> Plane {
        let data = self
            .grad_norm
            .data
            .iter()
            .zip(&self.var_norm.data)
            .map(|(&g, &v)| alpha * g + (1.0 - alpha) * v)
            .collect();
        Plane::new(self.grad.rows, self.grad.cols, data)
    }
}

/// `alpha * G_hat + (1 - alpha) * V_hat` for a single slice.
pub fn slice_variation(slice: &Plane, cfg: &TvmConfig) -> Result<Plane> {
    cfg.validate()?;
    Ok(SliceCues::compute(slice, cfg.var_window).combine(cfg.alpha))
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariationMap {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub data: Vec<f32>,
    pub normalized: bool,
}

impl VariationMap {
    pub fn to_volume(&self) -> Result<Volume3D> {
        Volume3D::new(self.data.clone(), self.dims, self.spacing)
    }

    /// Wraps a stored map. Values must lie in [0, 1].
    pub fn from_volume(v: &Volume3D) -> Result<Self> {
        v.ensure_finite()?;
        if let Some(bad) = v.data().iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::config(
                "variation_map",
                format!("values must be in [0, 1], found {bad}"),
            ));
        }
        Ok(Self {
            dims: v.dims(),
            spacing: v.spacing(),
            data: v.data().to_vec(),
            normalized: true,
        })
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }
}

/// Slice index ranges of the groups that receive a value.
pub fn slice_groups(depth: usize, stride: usize, mode: PartialGroupMode) -> Vec<std::ops::Range<usize>> {
    let mut groups = Vec::new();
    let mut z = 0;
    while z < depth {
        if z + stride <= depth {
            groups.push(z..z + stride);
        } else if mode == PartialGroupMode::ProcessRemainder {
            groups.push(z..depth);
        }
        z += stride;
    }
    groups
}

/// Full texture-variation map of `v`.
///
/// Groups are evaluated in parallel; each group writes only its own slices,
/// so the result does not depend on scheduling.
pub fn compute_variation_map(v: &Volume3D, cfg: &TvmConfig) -> Result<VariationMap> {
    cfg.validate()?;
    v.ensure_finite()?;
    let [depth, rows, cols] = v.dims();
    let plane_len = rows * cols;
    let groups = slice_groups(depth, cfg.stride, cfg.partial_group);

    let slice_plane = |z: usize| Plane::from_f32(rows, cols, v.slice(z));

    let group_maps: Vec<Plane> = match cfg.cue_normalization {
        CueNormalization::PerSlice => groups
            .par_iter()
            .map(|g| {
                g.clone()
                    .map(|z| SliceCues::compute(&slice_plane(z), cfg.var_window).combine(cfg.alpha))
                    .reduce(elementwise_max)
                    .expect("groups are non-empty")
            })
            .collect(),
        CueNormalization::PerVolume => {
            let mut cues: Vec<Vec<SliceCues>> = groups
                .par_iter()
                .map(|g| {
                    g.clone()
                        .map(|z| SliceCues::compute(&slice_plane(z), cfg.var_window))
                        .collect()
                })
                .collect();
            let fold = |sel: fn(&SliceCues) -> &Plane| {
                cues.iter().flatten().map(|c| sel(c).min_max()).fold(
                    (f64::INFINITY, f64::NEG_INFINITY),
                    |(lo, hi), (a, b)| (lo.min(a), hi.max(b)),
                )
            };
            let grad_range = fold(|c| &c.grad);
            let var_range = fold(|c| &c.var);
            cues.par_iter_mut()
                .map(|g| {
                    g.iter_mut()
                        .map(|c| {
                            c.renormalize(grad_range, var_range);
                            c.combine(cfg.alpha)
                        })
                        .reduce(elementwise_max)
                        .expect("groups are non-empty")
                })
                .collect()
        }
    };

    let mut acc = vec![0.0f64; depth * plane_len];
    for (g, map) in groups.iter().zip(&group_maps) {
        for z in g.clone() {
            acc[z * plane_len..(z + 1) * plane_len].copy_from_slice(&map.data);
        }
    }

    if cfg.sigma > 0.0 {
        acc = gaussian_blur_3d(&acc, v.dims(), cfg.sigma);
    }
    let max = acc.iter().copied().fold(0.0f64, f64::max);
    if max > 0.0 {
        for x in &mut acc {
            *x /= max;
        }
    }
    Ok(VariationMap {
        dims: v.dims(),
        spacing: v.spacing(),
        data: acc.into_iter().map(|x| x as f32).collect(),
        normalized: true,
    })
}

fn elementwise_max(mut a: Plane, b: Plane) -> Plane {
    for (x, y) in a.data.iter_mut().zip(b.data) {
        *x = x.max(y);
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(alpha: f64, stride: usize, sigma: f64) -> TvmConfig {
        TvmConfig {
            alpha,
            stride,
            var_window: 3,
            sigma,
            ..TvmConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(TvmConfig::default().validate().is_ok());
        assert!(TvmConfig { alpha: 1.5, ..TvmConfig::default() }.validate().is_err());
        assert!(TvmConfig { var_window: 4, ..TvmConfig::default() }.validate().is_err());
        assert!(TvmConfig { var_window: 1, ..TvmConfig::default() }.validate().is_err());
        assert!(TvmConfig { stride: 0, ..TvmConfig::default() }.validate().is_err());
        assert!(TvmConfig { sigma: -1.0, ..TvmConfig::default() }.validate().is_err());
    }

    #[test]
    fn slice_variation_constant_and_alpha_one() {
        let flat = Plane::new(3, 3, vec![2.0; 9]);
        assert!(slice_variation(&flat, &cfg(0.6, 1, 0.0)).unwrap().data.iter().all(|&x| x == 0.0));

        let p = Plane::new(3, 3, (1..=9).map(|x| x as f64).collect());
        let out = slice_variation(&p, &cfg(1.0, 1, 0.0)).unwrap();
        assert_eq!(out, slice_gradient(&p).normalized());
    }

    #[test]
    fn slice_variation_matches_recombination() {
        let p = Plane::new(3, 3, (1..=9).map(|x| x as f64).collect());
        let g = slice_gradient(&p).normalized();
        let v = slice_variance(&p, 3).normalized();
        let out = slice_variation(&p, &cfg(0.6, 1, 0.0)).unwrap();
        for i in 0..9 {
            assert!((out.data[i] - (0.6 * g.data[i] + 0.4 * v.data[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_volume_gives_zero_map() {
        let v = Volume3D::filled([4, 5, 6], [1.0; 3], -300.0).unwrap();
        let m = compute_variation_map(&v, &TvmConfig::default()).unwrap();
        assert!(m.data.iter().all(|&x| x == 0.0));
        assert!(m.normalized);
    }

    #[test]
    fn group_broadcast_at_zero_sigma() {
        // slice 0 constant, slice 1 textured; stride 2 ties them together
        let v = Volume3D::from_fn([4, 5, 5], [1.0; 3], |z, r, c| match z {
            1 | 3 => ((r * 7 + c * 3) % 5) as f32,
            _ => 1.0,
        })
        .unwrap();
        let m = compute_variation_map(&v, &cfg(0.6, 2, 0.0)).unwrap();
        let s = 25;
        assert_eq!(m.data[0..s], m.data[s..2 * s]);
        assert_eq!(m.data[2 * s..3 * s], m.data[3 * s..4 * s]);
        assert!(m.data[0..s].iter().any(|&x| x > 0.0));
    }

    #[test]
    fn partial_group_modes() {
        let v = Volume3D::from_fn([5, 4, 4], [1.0; 3], |z, r, c| ((z + r * c) % 3) as f32).unwrap();
        let lit = compute_variation_map(&v, &cfg(0.5, 2, 0.0)).unwrap();
        assert!(lit.data[4 * 16..].iter().all(|&x| x == 0.0));
        let rem = compute_variation_map(
            &v,
            &TvmConfig {
                partial_group: PartialGroupMode::ProcessRemainder,
                ..cfg(0.5, 2, 0.0)
            },
        )
        .unwrap();
        assert!(rem.data[4 * 16..].iter().any(|&x| x > 0.0));
        assert_eq!(lit.data[..4 * 16], rem.data[..4 * 16]);
        assert_eq!(slice_groups(5, 2, PartialGroupMode::PaperLiteralZero), vec![0..2, 2..4]);
        assert_eq!(slice_groups(5, 2, PartialGroupMode::ProcessRemainder), vec![0..2, 2..4, 4..5]);
    }

    #[test]
    fn max_is_one_when_textured() {
        let v = Volume3D::from_fn([6, 8, 8], [1.0; 3], |z, r, c| ((z * 5 + r * 3 + c) % 7) as f32).unwrap();
        let m = compute_variation_map(&v, &cfg(0.6, 2, 1.0)).unwrap();
        assert_eq!(m.max(), 1.0);
        assert!(m.data.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn per_volume_normalization_runs() {
        let v = Volume3D::from_fn([4, 6, 6], [1.0; 3], |z, r, c| ((z + 1) * (r * c % 4)) as f32).unwrap();
        let c = TvmConfig {
            cue_normalization: CueNormalization::PerVolume,
            ..cfg(0.6, 2, 0.0)
        };
        let m = compute_variation_map(&v, &c).unwrap();
        assert_eq!(m.max(), 1.0);
        let per_slice = compute_variation_map(&v, &cfg(0.6, 2, 0.0)).unwrap();
        assert_ne!(m.data, per_slice.data);
    }
}
