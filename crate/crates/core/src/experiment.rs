//! Texture-guided versus random masking over seed sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::Result;
use crate::mask::{expand_mask, expand_patch_bits, generate_mask, mask_coverage_stats, patch_scores, CoverageReport, MaskConfig, PatchScores};
use crate::texture::{compute_variation_map, TvmConfig};
use crate::train::{pretrain_toy, TrainConfig};
use crate::volume::Volume3D;

#[derive(Clone, Debug)]
pub struct CompareConfig {
    pub ratios: Vec<f64>,
    pub betas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub tvm: TvmConfig,
    /// Template for patch size and threshold; ratio, beta and seed are swept.
    pub mask: MaskConfig,
    /// Toy pretraining per row; `steps == 0` skips it.
    pub train: TrainConfig,
}

#[derive(Clone, Debug)]
pub struct CompareRow {
    pub volume: String,
    pub ratio: f64,
    pub beta: f64,
    pub seed: u64,
    pub m_h: usize,
    pub m_r: usize,
    pub tau: f64,
    pub coverage: CoverageReport,
    pub final_loss: Option<f64>,
}

pub struct Prepared {
    pub name: String,
    pub volume: Volume3D,
    pub scores: PatchScores,
}

pub fn prepare(volumes: &[(String, Volume3D)], tvm: &TvmConfig, patch_size: usize) -> Result<Vec<Prepared>> {
    volumes
        .par_iter()
        .map(|(name, v)| {
            let map = compute_variation_map(v, tvm)?;
            Ok(Prepared {
                name: name.clone(),
                volume: v.clone(),
                scores: patch_scores(&map, patch_size)?,
            })
        })
        .collect()
}

/// One row per (volume, ratio, beta, seed), sorted in that order.
pub fn compare_masking(volumes: &[(String, Volume3D)], cfg: &CompareConfig) -> Result<Vec<CompareRow>> {
    let prepared = prepare(volumes, &cfg.tvm, cfg.mask.patch_size)?;
    let mut jobs = Vec::new();
    for (vi, _) in prepared.iter().enumerate() {
        for &r in &cfg.ratios {
            for &b in &cfg.betas {
                for &s in &cfg.seeds {
                    jobs.push((vi, r, b, s));
                }
            }
        }
    }
    let mut rows: Vec<CompareRow> = jobs
        .par_iter()
        .map(|&(vi, ratio, beta, seed)| {
            let p = &prepared[vi];
            let mcfg = MaskConfig {
                mask_ratio: ratio,
                high_var_fraction: beta,
                seed,
                ..cfg.mask.clone()
            };
            let pm = generate_mask(&p.scores, &mcfg)?;
            let coverage = mask_coverage_stats(&pm, &p.scores, pm.tau)?;
            let final_loss = if cfg.train.steps > 0 {
                let out = pretrain_toy(std::slice::from_ref(&p.volume), &cfg.tvm, &mcfg, &cfg.train)?;
                out.loss_trace.last().copied()
            } else {
                None
            };
            Ok(CompareRow {
                volume: p.name.clone(),
                ratio,
                beta,
                seed,
                m_h: pm.m_h,
                m_r: pm.m_r,
                tau: pm.tau,
                coverage,
                final_loss,
            })
        })
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| {
        a.volume
            .cmp(&b.volume)
            .then(a.ratio.total_cmp(&b.ratio))
            .then(a.beta.total_cmp(&b.beta))
            .then(a.seed.cmp(&b.seed))
    });
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

pub fn rows_tsv(rows: &[CompareRow]) -> String {
    let mut s = String::from(
        "volume\tratio\tbeta\tseed\tn_patches\tn_high\ttau\tm\tm_h\tm_r\tmasked_high\tmasked_high_fraction\thigh_coverage\tmean_score_masked\tmean_score_unmasked\tfinal_loss\n",
    );
    for r in rows {
        let c = &r.coverage;
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.volume,
            r.ratio,
            r.beta,
            r.seed,
            c.n_patches,
            c.n_high,
            r.tau,
            c.m,
            r.m_h,
            r.m_r,
            c.masked_high,
            opt(c.masked_high_fraction),
            opt(c.high_coverage),
            opt(c.mean_score_masked),
            opt(c.mean_score_unmasked),
            opt(r.final_loss),
        );
    }
    s
}

#[derive(Clone, Debug)]
pub struct SummaryRow {
    pub volume: String,
    pub ratio: f64,
    pub beta: f64,
    pub n_seeds: usize,
    pub mean_score_masked: Option<f64>,
    pub masked_high_fraction: Option<f64>,
    pub final_loss: Option<f64>,
}

fn mean(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Means over seeds for every (volume, ratio, beta).
pub fn summarize(rows: &[CompareRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, u64, u64), Vec<&CompareRow>> = BTreeMap::new();
    for r in rows {
        // ratio and beta are non-negative, so bit patterns sort like values
        groups
            .entry((r.volume.clone(), r.ratio.to_bits(), r.beta.to_bits()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((volume, ratio, beta), g)| SummaryRow {
            volume,
            ratio: f64::from_bits(ratio),
            beta: f64::from_bits(beta),
            n_seeds: g.len(),
            mean_score_masked: mean(g.iter().map(|r| r.coverage.mean_score_masked)),
            masked_high_fraction: mean(g.iter().map(|r| r.coverage.masked_high_fraction)),
            final_loss: mean(g.iter().map(|r| r.final_loss)),
        })
        .collect()
}

pub fn summary_tsv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("volume\tratio\tbeta\tn_seeds\tmean_score_masked\tmasked_high_fraction\tfinal_loss\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.volume,
            r.ratio,
            r.beta,
            r.n_seeds,
            opt(r.mean_score_masked),
            opt(r.masked_high_fraction),
            opt(r.final_loss)
        );
    }
    s
}

/// Voxel mask for one (volume, ratio, beta, seed) draw together with the
/// per-voxel high-variation region, for rendering.
pub fn mask_and_highlight(p: &Prepared, mask_cfg: &MaskConfig) -> Result<(Volume3D, Vec<bool>, usize)> {
    let pm = generate_mask(&p.scores, mask_cfg)?;
    let mask = expand_mask(&pm)?.with_spacing(p.volume.spacing())?;
    let high: Vec<bool> = (0..pm.n_patches()).map(|i| p.scores.is_high(i, pm.tau)).collect();
    let voxels = expand_patch_bits(&high, pm.grid_dims, pm.patch_size);
    Ok((mask, voxels, pm.m))
}
