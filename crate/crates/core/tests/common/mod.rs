//! Reference implementations written directly from the definitions, sharing
//! no code with the library. Slow on purpose.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use texmask::Volume3D;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_volume(r: &mut ChaCha8Rng, dims: [usize; 3], lo: f32, hi: f32) -> Volume3D {
    let n = dims.iter().product();
    let data = (0..n).map(|_| r.random_range(lo..hi)).collect();
    Volume3D::new(data, dims, [1.0; 3]).unwrap()
}

fn clamp_get(data: &[f64], rows: usize, cols: usize, r: isize, c: isize) -> f64 {
    let r = r.max(0).min(rows as isize - 1) as usize;
    let c = c.max(0).min(cols as isize - 1) as usize;
    data[r * cols + c]
}

pub fn sobel_oracle(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    const SX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    const SY: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let (mut gx, mut gy) = (0.0, 0.0);
            for i in 0..3 {
                for j in 0..3 {
                    let v = clamp_get(data, rows, cols, r as isize + i as isize - 1, c as isize + j as isize - 1);
                    gx += SX[i][j] * v;
                    gy += SY[i][j] * v;
                }
            }
            out[r * cols + c] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

/// `E[x^2] - E[x]^2` over a `w x w` replicate-padded window, clamped at 0.
pub fn variance_oracle(data: &[f64], rows: usize, cols: usize, w: usize) -> Vec<f64> {
    let h = (w / 2) as isize;
    let n = (w * w) as f64;
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let (mut s, mut s2) = (0.0, 0.0);
            for dr in -h..=h {
                for dc in -h..=h {
                    let v = clamp_get(data, rows, cols, r as isize + dr, c as isize + dc);
                    s += v;
                    s2 += v * v;
                }
            }
            let mean = s / n;
            out[r * cols + c] = (s2 / n - mean * mean).max(0.0);
        }
    }
    out
}

fn minmax_normalize(x: &[f64]) -> Vec<f64> {
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo > 0.0 {
        x.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; x.len()]
    }
}

/// Slice score `alpha * norm(G) + (1 - alpha) * norm(V)`.
pub fn slice_variation_oracle(data: &[f64], rows: usize, cols: usize, alpha: f64, w: usize) -> Vec<f64> {
    let g = minmax_normalize(&sobel_oracle(data, rows, cols));
    let v = minmax_normalize(&variance_oracle(data, rows, cols, w));
    g.iter().zip(&v).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect()
}

/// Texture-variation map, line by line:
/// for z in 0, s, 2s, ...: if z + s <= D, take the element-wise max of the
/// slice scores of z..z+s and assign it to each of those slices; then blur
/// with a 3D Gaussian (direct, non-separable sum) and divide by the max.
pub fn tvm_oracle(v: &Volume3D, alpha: f64, s: usize, w: usize, sigma: f64, remainder: bool) -> Vec<f64> {
    let [d, rows, cols] = v.dims();
    let plane = rows * cols;
    let mut u = vec![0.0f64; d * plane];
    let mut z = 0;
    while z < d {
        let end = if z + s <= d {
            z + s
        } else if remainder {
            d
        } else {
            break;
        };
        let mut group = vec![0.0f64; plane];
        for k in z..end {
            let slice: Vec<f64> = v.data()[k * plane..(k + 1) * plane].iter().map(|&x| x as f64).collect();
            let sv = slice_variation_oracle(&slice, rows, cols, alpha, w);
            for (g, x) in group.iter_mut().zip(sv) {
                *g = g.max(x);
            }
        }
        for k in z..end {
            u[k * plane..(k + 1) * plane].copy_from_slice(&group);
        }
        z += s;
    }
    if sigma > 0.0 {
        let rad = (3.0 * sigma).ceil() as isize;
        let w1: Vec<f64> = (-rad..=rad).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
        let total: f64 = w1.iter().sum();
        let w1: Vec<f64> = w1.iter().map(|x| x / total).collect();
        let dims = [d as isize, rows as isize, cols as isize];
        let at = |a: isize, b: isize, c: isize| {
            let a = a.clamp(0, dims[0] - 1) as usize;
            let b = b.clamp(0, dims[1] - 1) as usize;
            let c = c.clamp(0, dims[2] - 1) as usize;
            u[(a * rows + b) * cols + c]
        };
        let mut blurred = vec![0.0; u.len()];
        for a in 0..dims[0] {
            for b in 0..dims[1] {
                for c in 0..dims[2] {
                    let mut acc = 0.0;
                    for i in -rad..=rad {
                        for j in -rad..=rad {
                            for k in -rad..=rad {
                                let wt = w1[(i + rad) as usize] * w1[(j + rad) as usize] * w1[(k + rad) as usize];
                                acc += wt * at(a + i, b + j, c + k);
                            }
                        }
                    }
                    blurred[((a * dims[1] + b) * dims[2] + c) as usize] = acc;
                }
            }
        }
        u = blurred;
    }
    let max = u.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        for x in &mut u {
            *x /= max;
        }
    }
    u
}

fn is_surface(m: &[bool], dims: [usize; 3], a: usize, b: usize, c: usize) -> bool {
    let idx = |a: usize, b: usize, c: usize| (a * dims[1] + b) * dims[2] + c;
    if !m[idx(a, b, c)] {
        return false;
    }
    let p = [a as isize, b as isize, c as isize];
    for axis in 0..3 {
        for step in [-1isize, 1] {
            let mut q = p;
            q[axis] += step;
            if q[axis] < 0 || q[axis] >= dims[axis] as isize {
                return true;
            }
            if !m[idx(q[0] as usize, q[1] as usize, q[2] as usize)] {
                return true;
            }
        }
    }
    false
}

fn surface_points(m: &[bool], dims: [usize; 3]) -> Vec<[usize; 3]> {
    let mut pts = Vec::new();
    for a in 0..dims[0] {
        for b in 0..dims[1] {
            for c in 0..dims[2] {
                if is_surface(m, dims, a, b, c) {
                    pts.push([a, b, c]);
                }
            }
        }
    }
    pts
}

/// Squared distance accumulated axis 2 first, then 1, then 0.
fn dist2(p: [usize; 3], q: [usize; 3], s: [f64; 3]) -> f64 {
    let d = |k: usize| (p[k] as f64 - q[k] as f64) * s[k];
    let d2 = d(2) * d(2);
    let d1 = d(1) * d(1) + d2;
    d(0) * d(0) + d1
}

fn directed(from: &[[usize; 3]], to: &[[usize; 3]], s: [f64; 3]) -> f64 {
    let mut ds: Vec<f64> = from
        .iter()
        .map(|&p| to.iter().map(|&q| dist2(p, q, s)).fold(f64::INFINITY, f64::min).sqrt())
        .collect();
    ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = ds.len();
    let mut rank = (95 * n + 99) / 100;
    if rank == 0 {
        rank = 1;
    }
    ds[rank - 1]
}

/// All-pairs surface-distance HD95.
pub fn hd95_oracle(p: &[bool], g: &[bool], dims: [usize; 3], s: [f64; 3]) -> Option<f64> {
    if !p.iter().any(|&x| x) || !g.iter().any(|&x| x) {
        return None;
    }
    let sp = surface_points(p, dims);
    let sg = surface_points(g, dims);
    Some(directed(&sp, &sg, s).max(directed(&sg, &sp, s)))
}

/// Straight-line forward pass of the patch autoencoder.
///
/// Per patch (voxels axis-0-major inside the patch), with `x` the patch
/// input where masked voxels take the token value when `token` is set:
/// `y = Wd^T relu(We^T x + be) + bd`.
#[allow(clippy::too_many_arguments)]
pub fn forward_oracle(
    enc_w: &[f64],
    enc_b: &[f64],
    dec_w: &[f64],
    dec_b: &[f64],
    token: Option<&[f64]>,
    patch: usize,
    embed: usize,
    input: &Volume3D,
    mask: &Volume3D,
) -> Vec<f64> {
    let [d0, d1, d2] = input.dims();
    let p = patch * patch * patch;
    let mut out = vec![f64::NAN; input.len()];
    for g0 in (0..d0).step_by(patch) {
        for g1 in (0..d1).step_by(patch) {
            for g2 in (0..d2).step_by(patch) {
                let mut ids = Vec::new();
                for a in 0..patch {
                    for b in 0..patch {
                        for c in 0..patch {
                            ids.push(((g0 + a) * d1 + (g1 + b)) * d2 + (g2 + c));
                        }
                    }
                }
                let x: Vec<f64> = ids
                    .iter()
                    .enumerate()
                    .map(|(k, &i)| match token {
                        Some(t) if mask.data()[i] > 0.5 => t[k],
                        _ => input.data()[i] as f64,
                    })
                    .collect();
                let mut h = vec![0.0; embed];
                for e in 0..embed {
                    let mut a = enc_b[e];
                    for k in 0..p {
                        a += enc_w[k * embed + e] * x[k];
                    }
                    h[e] = if a > 0.0 { a } else { 0.0 };
                }
                for k in 0..p {
                    let mut y = dec_b[k];
                    for e in 0..embed {
                        y += dec_w[e * p + k] * h[e];
                    }
                    out[ids[k]] = y;
                }
            }
        }
    }
    out
}

pub fn masked_mse_oracle(pred: &[f64], target: &Volume3D, mask: &Volume3D, eps: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..pred.len() {
        let m = if mask.data()[i] > 0.5 { 1.0 } else { 0.0 };
        let d = pred[i] - target.data()[i] as f64;
        num += m * d * d;
        den += m;
    }
    num / (den + eps)
}

/// Random binary volume with roughly `fill` of the voxels on.
pub fn random_binary(r: &mut ChaCha8Rng, dims: [usize; 3], spacing: [f64; 3], fill: f64) -> Volume3D {
    let n = dims.iter().product();
    let data = (0..n).map(|_| if r.random_bool(fill) { 1.0 } else { 0.0 }).collect();
    Volume3D::new(data, dims, spacing).unwrap()
}

pub fn as_bools(v: &Volume3D) -> Vec<bool> {
    v.data().iter().map(|&x| x > 0.5).collect()
}
