//! Texture-guided patch masking.
//!
//! The variation map is average-pooled onto a grid of non-overlapping cubic
//! patches. Of `m = floor(r * N_p)` masks, `m_h = min(floor(beta * m), N_h)`
//! go to patches scoring above `tau` (drawn without replacement), and the
//! remaining `m_r = m - m_h` are drawn from every patch not yet masked.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::texture::VariationMap;
use crate::volume::Volume3D;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauMode {
    /// `tau` is an absolute threshold on the [0, 1] score scale.
    Fixed,
    /// `tau` is a quantile in [0, 1]; the threshold is that quantile of the
    /// volume's patch scores.
    Quantile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub patch_size: usize,
    pub mask_ratio: f64,
    pub high_var_fraction: f64,
    pub tau: f64,
    pub tau_mode: TauMode,
    pub seed: u64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            patch_size: 16,
            mask_ratio: 0.75,
            high_var_fraction: 0.65,
            tau: 0.5,
            tau_mode: TauMode::Fixed,
            seed: 0,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::config("patch_size", "must be positive"));
        }
        for (field, v) in [
            ("mask_ratio", self.mask_ratio),
            ("high_var_fraction", self.high_var_fraction),
            ("tau", self.tau),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(field, format!("must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Patch grid dims for `dims`, or the first axis not divisible by `patch_size`.
pub fn patch_grid(dims: [usize; 3], patch_size: usize) -> Result<[usize; 3]> {
    if patch_size == 0 {
        return Err(Error::config("patch_size", "must be positive"));
    }
    for (axis, &len) in dims.iter().enumerate() {
        if len % patch_size != 0 {
            return Err(Error::NotDivisible { axis, len, patch_size });
        }
    }
    Ok(dims.map(|d| d / patch_size))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchScores {
    pub grid_dims: [usize; 3],
    pub patch_size: usize,
    /// Mean map value per patch, axis-0-major over the grid.
    pub scores: Vec<f64>,
}

impl PatchScores {
    pub fn n_patches(&self) -> usize {
        self.scores.len()
    }

    /// Threshold actually applied for `cfg`.
    pub fn resolve_tau(&self, cfg: &MaskConfig) -> f64 {
        match cfg.tau_mode {
            TauMode::Fixed => cfg.tau,
            TauMode::Quantile => {
                let mut sorted = self.scores.clone();
                sorted.sort_by(f64::total_cmp);
                let n = sorted.len();
                let rank = ((cfg.tau * n as f64).ceil() as usize).clamp(1, n);
                sorted[rank - 1]
            }
        }
    }

    pub fn is_high(&self, i: usize, tau: f64) -> bool {
        self.scores[i] > tau
    }

    pub fn high_indices(&self, tau: f64) -> Vec<usize> {
        (0..self.scores.len()).filter(|&i| self.scores[i] > tau).collect()
    }

    pub fn n_high(&self, tau: f64) -> usize {
        self.scores.iter().filter(|&&u| u > tau).count()
    }
}

/// Average-pools `map` over non-overlapping cubic patches.
pub fn patch_scores(map: &VariationMap, patch_size: usize) -> Result<PatchScores> {
    let grid = patch_grid(map.dims, patch_size)?;
    let [_, d1, d2] = map.dims;
    let [g0, g1, g2] = grid;
    let mut sums = vec![0.0f64; g0 * g1 * g2];
    for (idx, &v) in map.data.iter().enumerate() {
        let i2 = idx % d2;
        let i1 = (idx / d2) % d1;
        let i0 = idx / (d1 * d2);
        let p = ((i0 / patch_size) * g1 + i1 / patch_size) * g2 + i2 / patch_size;
        sums[p] += v as f64;
    }
    let n = (patch_size * patch_size * patch_size) as f64;
    Ok(PatchScores {
        grid_dims: grid,
        patch_size,
        scores: sums.into_iter().map(|s| s / n).collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchMask {
    pub grid_dims: [usize; 3],
    pub patch_size: usize,
    pub bits: Vec<bool>,
    /// Patches chosen in the high-variation phase, ascending.
    pub high_phase: Vec<usize>,
    pub m: usize,
    pub m_h: usize,
    pub m_r: usize,
    pub n_high: usize,
    pub tau: f64,
}

impl PatchMask {
    pub fn n_patches(&self) -> usize {
        self.bits.len()
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn voxel_dims(&self) -> [usize; 3] {
        self.grid_dims.map(|g| g * self.patch_size)
    }
}

/// Mask counts `(m, m_h, m_r)` for `n_patches` patches of which `n_high` are high.
pub fn mask_counts(n_patches: usize, n_high: usize, ratio: f64, beta: f64) -> (usize, usize, usize) {
    let m = (ratio * n_patches as f64).floor() as usize;
    let m = m.min(n_patches);
    let m_h = ((beta * m as f64).floor() as usize).min(n_high);
    (m, m_h, m - m_h)
}

/// Draws a patch mask. Identical `(scores, cfg)` give identical masks.
///
/// Sampling order: shuffle the ascending high-variation indices and take the
/// first `m_h`; then shuffle the ascending indices of all still-unmasked
/// patches and take the first `m_r`. Both shuffles share one stream seeded
/// from `cfg.seed`.
pub fn generate_mask(scores: &PatchScores, cfg: &MaskConfig) -> Result<PatchMask> {
    cfg.validate()?;
    let n = scores.n_patches();
    let tau = scores.resolve_tau(cfg);
    let mut high = scores.high_indices(tau);
    let n_high = high.len();
    let (m, m_h, m_r) = mask_counts(n, n_high, cfg.mask_ratio, cfg.high_var_fraction);

    let mut rng = StreamRng::new(cfg.seed);
    let mut bits = vec![false; n];
    rng.shuffle(&mut high);
    let mut high_phase: Vec<usize> = high[..m_h].to_vec();
    for &i in &high_phase {
        bits[i] = true;
    }
    high_phase.sort_unstable();

    let mut rest: Vec<usize> = (0..n).filter(|&i| !bits[i]).collect();
    rng.shuffle(&mut rest);
    for &i in &rest[..m_r] {
        bits[i] = true;
    }

    Ok(PatchMask {
        grid_dims: scores.grid_dims,
        patch_size: scores.patch_size,
        bits,
        high_phase,
        m,
        m_h,
        m_r,
        n_high,
        tau,
    })
}

/// Per-voxel copy of patch-level flags over the full voxel grid.
pub fn expand_patch_bits(bits: &[bool], grid_dims: [usize; 3], patch_size: usize) -> Vec<bool> {
    let dims = grid_dims.map(|g| g * patch_size);
    let mut out = Vec::with_capacity(dims.iter().product());
    for a in 0..dims[0] {
        for b in 0..dims[1] {
            for c in 0..dims[2] {
                let idx = ((a / patch_size) * grid_dims[1] + b / patch_size) * grid_dims[2] + c / patch_size;
                out.push(bits[idx]);
            }
        }
    }
    out
}

/// Voxel-level binary mask (1 inside masked patches), unit spacing.
pub fn expand_mask(pm: &PatchMask) -> Result<Volume3D> {
    let data = expand_patch_bits(&pm.bits, pm.grid_dims, pm.patch_size)
        .into_iter()
        .map(|b| if b { 1.0 } else { 0.0 })
        .collect();
    Volume3D::new(data, pm.voxel_dims(), [1.0; 3])
}

/// Patch bits of a voxel mask: a patch is on when more than half its voxels are.
pub fn pool_mask(mask: &Volume3D, patch_size: usize) -> Result<Vec<bool>> {
    let grid = patch_grid(mask.dims(), patch_size)?;
    let [_, d1, d2] = mask.dims();
    let mut counts = vec![0usize; grid.iter().product()];
    for (idx, &v) in mask.data().iter().enumerate() {
        if v > 0.5 {
            let i2 = idx % d2;
            let i1 = (idx / d2) % d1;
            let i0 = idx / (d1 * d2);
            counts[((i0 / patch_size) * grid[1] + i1 / patch_size) * grid[2] + i2 / patch_size] += 1;
        }
    }
    let half = patch_size.pow(3) / 2;
    Ok(counts.into_iter().map(|c| c > half).collect())
}

/// `I * (1 - M)`: voxels where the mask is on are zeroed.
pub fn apply_mask(v: &Volume3D, mask: &Volume3D) -> Result<Volume3D> {
    v.same_dims(mask, "apply_mask volume vs mask")?;
    let data = v
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&x, &m)| if m > 0.5 { 0.0 } else { x })
        .collect();
    Volume3D::new(data, v.dims(), v.spacing())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverageReport {
    pub n_patches: usize,
    pub n_high: usize,
    pub m: usize,
    pub masked_high: usize,
    /// Share of masked patches that are high-variation.
    pub masked_high_fraction: Option<f64>,
    /// Share of high-variation patches that are masked.
    pub high_coverage: Option<f64>,
    pub mean_score_masked: Option<f64>,
    pub mean_score_unmasked: Option<f64>,
}

pub fn mask_coverage_stats(pm: &PatchMask, scores: &PatchScores, tau: f64) -> Result<CoverageReport> {
    if pm.grid_dims != scores.grid_dims || pm.bits.len() != scores.scores.len() {
        return Err(Error::DimMismatch(format!(
            "patch mask grid {:?} vs score grid {:?}",
            pm.grid_dims, scores.grid_dims
        )));
    }
    let ratio = |num: f64, den: usize| (den > 0).then(|| num / den as f64);
    let (mut masked_high, mut n_high, mut m) = (0usize, 0usize, 0usize);
    let (mut sum_masked, mut sum_unmasked) = (0.0f64, 0.0f64);
    for (&bit, &u) in pm.bits.iter().zip(&scores.scores) {
        let high = u > tau;
        n_high += high as usize;
        if bit {
            m += 1;
            masked_high += high as usize;
            sum_masked += u;
        } else {
            sum_unmasked += u;
        }
    }
    let n = pm.bits.len();
    Ok(CoverageReport {
        n_patches: n,
        n_high,
        m,
        masked_high,
        masked_high_fraction: ratio(masked_high as f64, m),
        high_coverage: ratio(masked_high as f64, n_high),
        mean_score_masked: ratio(sum_masked, m),
        mean_score_unmasked: ratio(sum_unmasked, n - m),
    })
}
