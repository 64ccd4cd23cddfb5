//! Overlap and boundary metrics for binary 3D masks.
//!
//! HD95 uses surface voxels (foreground voxels with at least one 6-neighbour
//! outside the set; the volume border counts as outside) and the nearest-rank
//! 95th percentile of spacing-aware surface-to-surface distances.

use crate::error::{Error, Result};
use crate::volume::Volume3D;

pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct SegPair {
    pub prediction: Volume3D,
    pub ground_truth: Volume3D,
    pub spacing: [f64; 3],
}

impl SegPair {
    pub fn new(prediction: Volume3D, ground_truth: Volume3D) -> Result<Self> {
        prediction.same_dims(&ground_truth, "prediction vs ground truth")?;
        if prediction.spacing() != ground_truth.spacing() {
            return Err(Error::DimMismatch(format!(
                "spacing {:?} vs {:?}",
                prediction.spacing(),
                ground_truth.spacing()
            )));
        }
        let spacing = prediction.spacing();
        Ok(Self {
            prediction,
            ground_truth,
            spacing,
        })
    }

    /// `(TP, T, P)` with `T = |G|`, `P = |P|`.
    pub fn counts(&self) -> (usize, usize, usize) {
        let (mut tp, mut t, mut p) = (0, 0, 0);
        for (&a, &b) in self.prediction.data().iter().zip(self.ground_truth.data()) {
            let (pa, gb) = (a > 0.5, b > 0.5);
            tp += (pa && gb) as usize;
            p += pa as usize;
            t += gb as usize;
        }
        (tp, t, p)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub dsc: f64,
    pub iou: f64,
    /// `None` when either mask is empty.
    pub hd95: Option<f64>,
}

impl MetricsReport {
    pub fn to_tsv(&self) -> String {
        let hd = self.hd95.map_or_else(|| "undefined".to_string(), |h| format!("{h:.6}"));
        format!("metric\tvalue\ndsc\t{:.9}\niou\t{:.9}\nhd95_mm\t{hd}\n", self.dsc, self.iou)
    }
}

pub fn dsc(pair: &SegPair, eps: f64) -> f64 {
    let (tp, t, p) = pair.counts();
    (2.0 * tp as f64 + eps) / ((t + p) as f64 + eps)
}

pub fn iou(pair: &SegPair, eps: f64) -> f64 {
    let (tp, t, p) = pair.counts();
    (tp as f64 + eps) / ((t + p - tp) as f64 + eps)
}

pub fn evaluate(pair: &SegPair, eps: f64) -> MetricsReport {
    MetricsReport {
        dsc: dsc(pair, eps),
        iou: iou(pair, eps),
        hd95: hd95(pair),
    }
}

/// Surface voxels of a binary volume under 6-connectivity.
pub fn surface(mask: &Volume3D) -> Vec<bool> {
    let [d0, d1, d2] = mask.dims();
    let on = |a: usize, b: usize, c: usize| mask.get(a, b, c) > 0.5;
    let mut out = vec![false; mask.len()];
    for a in 0..d0 {
        for b in 0..d1 {
            for c in 0..d2 {
                if !on(a, b, c) {
                    continue;
                }
                let interior = a > 0
                    && a + 1 < d0
                    && b > 0
                    && b + 1 < d1
                    && c > 0
                    && c + 1 < d2
                    && on(a - 1, b, c)
                    && on(a + 1, b, c)
                    && on(a, b - 1, c)
                    && on(a, b + 1, c)
                    && on(a, b, c - 1)
                    && on(a, b, c + 1);
                out[mask.index(a, b, c)] = !interior;
            }
        }
    }
    out
}

/// 1D lower-envelope squared distance transform along one line
/// (Felzenszwalb-Huttenlocher). `f[q] = min_p ((q - p) * s)^2 + g[p]`.
fn edt_line(g: &[f64], s: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = g.len();
    v.clear();
    z.clear();
    let s2 = s * s;
    for q in 0..n {
        if !g[q].is_finite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let qf = q as f64;
                    let pf = p as f64;
                    let cross = ((g[q] + s2 * qf * qf) - (g[p] + s2 * pf * pf)) / (2.0 * s2 * (qf - pf));
                    if cross <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(cross);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = (q as f64 - p as f64) * s;
        *o = d * d + g[p];
    }
}

/// Squared Euclidean distance (mm^2) from every voxel to the nearest `true`
/// voxel of `seeds`. Axes are processed 2, 1, 0.
pub fn squared_distance_transform(seeds: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let mut f: Vec<f64> = seeds.iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
    let strides = [dims[1] * dims[2], dims[2], 1];
    let (mut v, mut z) = (Vec::new(), Vec::new());
    for axis in [2usize, 1, 0] {
        let len = dims[axis];
        let stride = strides[axis];
        let mut line = vec![0.0; len];
        let mut out = vec![0.0; len];
        for base in 0..f.len() {
            if !(base / stride).is_multiple_of(len) {
                continue;
            }
            for (i, l) in line.iter_mut().enumerate() {
                *l = f[base + i * stride];
            }
            edt_line(&line, spacing[axis], &mut out, &mut v, &mut z);
            for (i, o) in out.iter().enumerate() {
                f[base + i * stride] = *o;
            }
        }
    }
    f
}

/// Nearest-rank 95th percentile of `values` (sorted in place).
pub fn percentile95(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let rank = (95 * n).div_ceil(100).max(1);
    values[rank - 1]
}

fn directed_hd95(from: &[bool], to: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> f64 {
    let dist2 = squared_distance_transform(to, dims, spacing);
    let mut d: Vec<f64> = from
        .iter()
        .zip(&dist2)
        .filter(|(&s, _)| s)
        .map(|(_, &d2)| d2.sqrt())
        .collect();
    percentile95(&mut d)
}

/// Symmetric HD95 in mm; `None` if either mask is empty.
pub fn hd95(pair: &SegPair) -> Option<f64> {
    let (_, t, p) = pair.counts();
    if t == 0 || p == 0 {
        return None;
    }
    let dims = pair.prediction.dims();
    let sp = surface(&pair.prediction);
    let sg = surface(&pair.ground_truth);
    let a = directed_hd95(&sp, &sg, dims, pair.spacing);
    let b = directed_hd95(&sg, &sp, dims, pair.spacing);
    Some(a.max(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(dims: [usize; 3], spacing: [f64; 3], on: &[[usize; 3]]) -> Volume3D {
        let mut v = Volume3D::zeros(dims, spacing).unwrap();
        for &[a, b, c] in on {
            v.set(a, b, c, 1.0);
        }
        v
    }

    fn block(dims: [usize; 3], lo: [usize; 3], hi: [usize; 3]) -> Volume3D {
        Volume3D::from_fn(dims, [1.0; 3], |a, b, c| {
            (a >= lo[0] && a < hi[0] && b >= lo[1] && b < hi[1] && c >= lo[2] && c < hi[2]) as u8 as f32
        })
        .unwrap()
    }

    #[test]
    fn identical_masks() {
        let g = block([6, 6, 6], [1, 1, 1], [4, 5, 4]);
        let pair = SegPair::new(g.clone(), g).unwrap();
        assert!((dsc(&pair, DEFAULT_EPS) - 1.0).abs() < 1e-12);
        assert!((iou(&pair, DEFAULT_EPS) - 1.0).abs() < 1e-12);
        assert_eq!(hd95(&pair), Some(0.0));
    }

    #[test]
    fn disjoint_dsc_is_tiny() {
        let g = block([4, 4, 4], [0, 0, 0], [2, 2, 2]);
        let p = block([4, 4, 4], [2, 2, 2], [4, 4, 4]);
        let pair = SegPair::new(p, g).unwrap();
        let d = dsc(&pair, 1e-8);
        assert!((d - 1e-8 / (16.0 + 1e-8)).abs() < 1e-20);
        assert!((d - 6.25e-10).abs() < 1e-15);
    }

    #[test]
    fn half_overlap() {
        let g = block([4, 4, 4], [0, 0, 0], [1, 4, 4]);
        let p = block([4, 4, 4], [0, 0, 2], [2, 4, 4]);
        let pair = SegPair::new(p, g).unwrap();
        assert_eq!(pair.counts(), (8, 16, 16));
        assert!((dsc(&pair, 1e-8) - 0.5).abs() < 1e-9);
        assert!((iou(&pair, 1e-8) - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn single_voxels_along_axis_zero() {
        let sp = [0.5, 1.0, 1.0];
        let p = mask([6, 3, 3], sp, &[[0, 1, 1]]);
        let g = mask([6, 3, 3], sp, &[[3, 1, 1]]);
        assert_eq!(hd95(&SegPair::new(p, g).unwrap()), Some(1.5));
    }

    #[test]
    fn empty_is_undefined() {
        let e = Volume3D::zeros([3, 3, 3], [1.0; 3]).unwrap();
        let g = block([3, 3, 3], [0, 0, 0], [1, 1, 1]);
        assert_eq!(hd95(&SegPair::new(e.clone(), g).unwrap()), None);
        let pair = SegPair::new(e.clone(), e).unwrap();
        assert_eq!(hd95(&pair), None);
        assert_eq!(dsc(&pair, 1e-8), 1.0);
    }

    #[test]
    fn surface_of_solid_block() {
        let g = block([5, 5, 5], [0, 0, 0], [5, 5, 5]);
        assert_eq!(surface(&g).iter().filter(|&&b| b).count(), 125 - 27);
    }

    #[test]
    fn percentile_nearest_rank() {
        let mut v: Vec<f64> = (1..=20).map(|x| x as f64).collect();
        assert_eq!(percentile95(&mut v), 19.0);
        let mut v = vec![3.0];
        assert_eq!(percentile95(&mut v), 3.0);
        let mut v: Vec<f64> = (1..=100).rev().map(|x| x as f64).collect();
        assert_eq!(percentile95(&mut v), 95.0);
    }

    #[test]
    fn mismatched_spacing_rejected() {
        let a = Volume3D::zeros([2, 2, 2], [1.0; 3]).unwrap();
        let b = Volume3D::zeros([2, 2, 2], [2.0, 1.0, 1.0]).unwrap();
        assert!(SegPair::new(a, b).is_err());
    }
}
