//! Per-patch affine-ReLU-affine autoencoder with a learned mask token, and
//! the masked reconstruction loss `sum(M * (y - T)^2) / (sum(M) + eps)`.
//!
//! Weights are stored as `f32`; forward and backward evaluate in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{apply_mask, patch_grid};
use crate::rng::StreamRng;
use crate::volume::Volume3D;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskInput {
    /// Masked voxels are replaced by the learned token.
    Token,
    /// Masked voxels are fed as zeros (`I * (1 - M)` literally).
    Zero,
}

/// Parameter set. The same shape carries gradients and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct MaeWeights<T> {
    /// patch_voxels x embed_dim, row-major.
    pub enc_w: Vec<T>,
    pub enc_b: Vec<T>,
    /// embed_dim x patch_voxels, row-major.
    pub dec_w: Vec<T>,
    pub dec_b: Vec<T>,
    pub mask_token: Vec<T>,
}

impl<T: Copy + Default> MaeWeights<T> {
    pub fn zeros(patch_voxels: usize, embed_dim: usize) -> Self {
        Self {
            enc_w: vec![T::default(); patch_voxels * embed_dim],
            enc_b: vec![T::default(); embed_dim],
            dec_w: vec![T::default(); embed_dim * patch_voxels],
            dec_b: vec![T::default(); patch_voxels],
            mask_token: vec![T::default(); patch_voxels],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.enc_w
            .iter()
            .chain(&self.enc_b)
            .chain(&self.dec_w)
            .chain(&self.dec_b)
            .chain(&self.mask_token)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.enc_w
            .iter_mut()
            .chain(&mut self.enc_b)
            .chain(&mut self.dec_w)
            .chain(&mut self.dec_b)
            .chain(&mut self.mask_token)
    }

    pub fn len(&self) -> usize {
        self.enc_w.len() + self.enc_b.len() + self.dec_w.len() + self.dec_b.len() + self.mask_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl MaeWeights<f32> {
    pub fn to_f64(&self) -> MaeWeights<f64> {
        let c = |v: &[f32]| v.iter().map(|&x| x as f64).collect();
        MaeWeights {
            enc_w: c(&self.enc_w),
            enc_b: c(&self.enc_b),
            dec_w: c(&self.dec_w),
            dec_b: c(&self.dec_b),
            mask_token: c(&self.mask_token),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyMaeModel {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub mask_input: MaskInput,
    pub weights: MaeWeights<f32>,
}

impl ToyMaeModel {
    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`; mask token starts at zero.
    pub fn new(patch_size: usize, embed_dim: usize, seed: u64) -> Result<Self> {
        if patch_size == 0 || embed_dim == 0 {
            return Err(Error::config("embed_dim", "patch_size and embed_dim must be positive"));
        }
        let p = patch_size.pow(3);
        let mut w = MaeWeights::zeros(p, embed_dim);
        let mut rng = StreamRng::new(seed);
        let enc_bound = 1.0 / (p as f64).sqrt();
        let dec_bound = 1.0 / (embed_dim as f64).sqrt();
        for x in w.enc_w.iter_mut().chain(&mut w.enc_b) {
            *x = rng.uniform(-enc_bound, enc_bound) as f32;
        }
        for x in w.dec_w.iter_mut().chain(&mut w.dec_b) {
            *x = rng.uniform(-dec_bound, dec_bound) as f32;
        }
        Ok(Self {
            patch_size,
            embed_dim,
            mask_input: MaskInput::Token,
            weights: w,
        })
    }

    pub fn patch_voxels(&self) -> usize {
        self.patch_size.pow(3)
    }

    fn check_shapes(&self) -> Result<()> {
        let p = self.patch_voxels();
        let e = self.embed_dim;
        let w = &self.weights;
        let ok = w.enc_w.len() == p * e
            && w.enc_b.len() == e
            && w.dec_w.len() == e * p
            && w.dec_b.len() == p
            && w.mask_token.len() == p;
        if !ok {
            return Err(Error::config("weights", "weight shapes inconsistent with patch_size and embed_dim"));
        }
        Ok(())
    }
}

/// Inputs and outputs of one reconstruction pass, all on the same grid.
#[derive(Clone, Debug)]
pub struct ReconBatch {
    /// Masked input `I * (1 - M)`.
    pub input: Volume3D,
    pub target: Volume3D,
    pub mask: Volume3D,
    pub prediction: Volume3D,
}

impl ReconBatch {
    pub fn prepare(model: &ToyMaeModel, target: &Volume3D, mask: &Volume3D) -> Result<Self> {
        let input = apply_mask(target, mask)?;
        let prediction = forward(model, &input, mask)?;
        Ok(Self {
            input,
            target: target.clone(),
            mask: mask.clone(),
            prediction,
        })
    }

    pub fn loss(&self, eps: f64) -> Result<f64> {
        masked_mse(&self.prediction, &self.target, &self.mask, eps)
    }
}

/// Voxel indices of each patch, patch-major, voxels axis-0-major within a patch.
fn patch_layout(dims: [usize; 3], patch_size: usize) -> Result<Vec<Vec<usize>>> {
    let grid = patch_grid(dims, patch_size)?;
    let [_, d1, d2] = dims;
    let mut out = Vec::with_capacity(grid.iter().product());
    for g0 in 0..grid[0] {
        for g1 in 0..grid[1] {
            for g2 in 0..grid[2] {
                let mut idx = Vec::with_capacity(patch_size.pow(3));
                for a in 0..patch_size {
                    for b in 0..patch_size {
                        for c in 0..patch_size {
                            let i0 = g0 * patch_size + a;
                            let i1 = g1 * patch_size + b;
                            let i2 = g2 * patch_size + c;
                            idx.push((i0 * d1 + i1) * d2 + i2);
                        }
                    }
                }
                out.push(idx);
            }
        }
    }
    Ok(out)
}

struct PatchActs {
    x: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    y: Vec<f64>,
}

fn patch_forward(
    w: &MaeWeights<f64>,
    embed_dim: usize,
    mask_input: MaskInput,
    input: &[f32],
    mask: &[f32],
    idx: &[usize],
) -> PatchActs {
    let p = idx.len();
    let x: Vec<f64> = idx
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            if mask_input == MaskInput::Token && mask[i] > 0.5 {
                w.mask_token[k]
            } else {
                input[i] as f64
            }
        })
        .collect();
    let mut pre = w.enc_b.clone();
    for (k, &xk) in x.iter().enumerate() {
        if xk != 0.0 {
            let row = &w.enc_w[k * embed_dim..(k + 1) * embed_dim];
            for (a, &wk) in pre.iter_mut().zip(row) {
                *a += xk * wk;
            }
        }
    }
    let hidden: Vec<f64> = pre.iter().map(|&a| a.max(0.0)).collect();
    let mut y = w.dec_b.clone();
    for (e, &h) in hidden.iter().enumerate() {
        if h != 0.0 {
            let row = &w.dec_w[e * p..(e + 1) * p];
            for (yk, &wk) in y.iter_mut().zip(row) {
                *yk += h * wk;
            }
        }
    }
    PatchActs { x, pre, hidden, y }
}

/// `f64` prediction for arbitrary weights on the model's architecture.
pub fn forward_f64(
    weights: &MaeWeights<f64>,
    model: &ToyMaeModel,
    input: &Volume3D,
    mask: &Volume3D,
) -> Result<Vec<f64>> {
    model.check_shapes()?;
    input.same_dims(mask, "forward input vs mask")?;
    let layout = patch_layout(input.dims(), model.patch_size)?;
    let mut out = vec![0.0; input.len()];
    for idx in &layout {
        let acts = patch_forward(weights, model.embed_dim, model.mask_input, input.data(), mask.data(), idx);
        for (&i, &y) in idx.iter().zip(&acts.y) {
            out[i] = y;
        }
    }
    Ok(out)
}

pub fn forward(model: &ToyMaeModel, input: &Volume3D, mask: &Volume3D) -> Result<Volume3D> {
    let y = forward_f64(&model.weights.to_f64(), model, input, mask)?;
    Volume3D::new(y.into_iter().map(|v| v as f32).collect(), input.dims(), input.spacing())
}

fn masked_mse_slices(pred: impl Iterator<Item = f64>, target: &[f32], mask: &[f32], eps: f64) -> f64 {
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for ((y, &t), &m) in pred.zip(target).zip(mask) {
        if m > 0.5 {
            let d = y - t as f64;
            num += d * d;
            den += 1.0;
        }
    }
    num / (den + eps)
}

pub fn masked_mse(prediction: &Volume3D, target: &Volume3D, mask: &Volume3D, eps: f64) -> Result<f64> {
    prediction.same_dims(target, "masked_mse prediction vs target")?;
    prediction.same_dims(mask, "masked_mse prediction vs mask")?;
    check_eps(eps)?;
    Ok(masked_mse_slices(
        prediction.data().iter().map(|&v| v as f64),
        target.data(),
        mask.data(),
        eps,
    ))
}

/// Loss on an `f64` prediction; used by the trainer and gradient checks.
pub fn masked_mse_f64(prediction: &[f64], target: &Volume3D, mask: &Volume3D, eps: f64) -> Result<f64> {
    target.same_dims(mask, "masked_mse target vs mask")?;
    if prediction.len() != target.len() {
        return Err(Error::DimMismatch("masked_mse prediction length".into()));
    }
    check_eps(eps)?;
    Ok(masked_mse_slices(prediction.iter().copied(), target.data(), mask.data(), eps))
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::config("loss_eps", format!("must be > 0, got {eps}")));
    }
    Ok(())
}

/// dL/dy for every voxel. Exactly zero wherever the mask is off.
pub fn loss_grad_wrt_prediction(prediction: &[f64], target: &Volume3D, mask: &Volume3D, eps: f64) -> Result<Vec<f64>> {
    target.same_dims(mask, "loss gradient target vs mask")?;
    check_eps(eps)?;
    let den = mask.count_on() as f64 + eps;
    Ok(prediction
        .iter()
        .zip(target.data())
        .zip(mask.data())
        .map(|((&y, &t), &m)| if m > 0.5 { 2.0 * (y - t as f64) / den } else { 0.0 })
        .collect())
}

/// Loss and exact gradients of `masked_mse(forward(input, mask), target, mask)`.
///
/// Patches are reduced in a fixed sequential order.
pub fn backward(
    model: &ToyMaeModel,
    input: &Volume3D,
    target: &Volume3D,
    mask: &Volume3D,
    eps: f64,
) -> Result<(f64, MaeWeights<f64>)> {
    model.check_shapes()?;
    input.same_dims(target, "backward input vs target")?;
    input.same_dims(mask, "backward input vs mask")?;
    check_eps(eps)?;
    let w = model.weights.to_f64();
    let e_dim = model.embed_dim;
    let p = model.patch_voxels();
    let layout = patch_layout(input.dims(), model.patch_size)?;
    let den = mask.count_on() as f64 + eps;
    let (mdata, tdata) = (mask.data(), target.data());

    let mut grad = MaeWeights::<f64>::zeros(p, e_dim);
    let mut num = 0.0f64;
    let mut g_y = vec![0.0; p];
    let mut g_a = vec![0.0; e_dim];
    for idx in &layout {
        if !idx.iter().any(|&i| mdata[i] > 0.5) {
            continue;
        }
        let acts = patch_forward(&w, e_dim, model.mask_input, input.data(), mdata, idx);
        for (k, &i) in idx.iter().enumerate() {
            g_y[k] = if mdata[i] > 0.5 {
                let d = acts.y[k] - tdata[i] as f64;
                num += d * d;
                2.0 * d / den
            } else {
                0.0
            };
        }
        for (gb, &g) in grad.dec_b.iter_mut().zip(&g_y) {
            *gb += g;
        }
        for e in 0..e_dim {
            let row = &w.dec_w[e * p..(e + 1) * p];
            let grow = &mut grad.dec_w[e * p..(e + 1) * p];
            let h = acts.hidden[e];
            let mut gh = 0.0;
            for k in 0..p {
                grow[k] += h * g_y[k];
                gh += row[k] * g_y[k];
            }
            g_a[e] = if acts.pre[e] > 0.0 { gh } else { 0.0 };
            grad.enc_b[e] += g_a[e];
        }
        for k in 0..p {
            let row = &w.enc_w[k * e_dim..(k + 1) * e_dim];
            let grow = &mut grad.enc_w[k * e_dim..(k + 1) * e_dim];
            let xk = acts.x[k];
            let mut gx = 0.0;
            for e in 0..e_dim {
                grow[e] += xk * g_a[e];
                gx += row[e] * g_a[e];
            }
            if model.mask_input == MaskInput::Token && mdata[idx[k]] > 0.5 {
                grad.mask_token[k] += gx;
            }
        }
    }
    Ok((num / den, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_model(patch: usize, embed: usize) -> ToyMaeModel {
        ToyMaeModel {
            patch_size: patch,
            embed_dim: embed,
            mask_input: MaskInput::Token,
            weights: MaeWeights::zeros(patch.pow(3), embed),
        }
    }

    fn ramp(dims: [usize; 3]) -> Volume3D {
        Volume3D::from_fn(dims, [1.0; 3], |a, b, c| ((a * 7 + b * 3 + c) % 11) as f32 / 5.0 - 1.0).unwrap()
    }

    #[test]
    fn zero_weights_predict_zero() {
        let m = zero_model(2, 3);
        let v = ramp([4, 4, 4]);
        let mask = Volume3D::zeros([4, 4, 4], [1.0; 3]).unwrap();
        assert!(forward(&m, &v, &mask).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_config_is_relu() {
        let p = 8;
        let mut m = zero_model(2, p);
        for k in 0..p {
            m.weights.enc_w[k * p + k] = 1.0;
            m.weights.dec_w[k * p + k] = 1.0;
        }
        let v = ramp([4, 2, 6]);
        let mask = Volume3D::zeros(v.dims(), [1.0; 3]).unwrap();
        let out = forward(&m, &v, &mask).unwrap();
        for (o, i) in out.data().iter().zip(v.data()) {
            assert_eq!(*o, i.max(0.0));
        }
    }

    #[test]
    fn masked_mse_cases() {
        let t = Volume3D::new(vec![0.0, 0.0, 5.0, 1.0], [1, 1, 4], [1.0; 3]).unwrap();
        let y = Volume3D::new(vec![1.0, 3.0, 0.0, 9.0], [1, 1, 4], [1.0; 3]).unwrap();
        let m = Volume3D::new(vec![1.0, 1.0, 0.0, 0.0], [1, 1, 4], [1.0; 3]).unwrap();
        let l = masked_mse(&y, &t, &m, 1e-8).unwrap();
        assert!((l - 10.0 / (2.0 + 1e-8)).abs() < 1e-12);
        assert!((l - 5.0).abs() < 1e-6);
        let none = Volume3D::zeros([1, 1, 4], [1.0; 3]).unwrap();
        assert_eq!(masked_mse(&y, &t, &none, 1e-8).unwrap(), 0.0);
        assert_eq!(masked_mse(&t, &t, &m, 1e-8).unwrap(), 0.0);
        assert!(masked_mse(&y, &t, &m, 0.0).is_err());
    }

    #[test]
    fn zero_mask_gives_zero_gradients() {
        let m = ToyMaeModel::new(2, 4, 1).unwrap();
        let v = ramp([4, 4, 4]);
        let mask = Volume3D::zeros([4, 4, 4], [1.0; 3]).unwrap();
        let (loss, g) = backward(&m, &v, &v, &mask, 1e-8).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn backward_loss_matches_forward_loss() {
        let m = ToyMaeModel::new(2, 5, 3).unwrap();
        let t = ramp([4, 4, 4]);
        let mask = Volume3D::from_fn([4, 4, 4], [1.0; 3], |a, _, c| if a < 2 && c >= 2 { 1.0 } else { 0.0 }).unwrap();
        let input = apply_mask(&t, &mask).unwrap();
        let (loss, _) = backward(&m, &input, &t, &mask, 1e-8).unwrap();
        let y = forward_f64(&m.weights.to_f64(), &m, &input, &mask).unwrap();
        let l2 = masked_mse_f64(&y, &t, &mask, 1e-8).unwrap();
        assert!((loss - l2).abs() <= 1e-12 * l2.max(1.0));
    }

    #[test]
    fn init_within_bounds() {
        let m = ToyMaeModel::new(2, 4, 9).unwrap();
        let b_enc = 1.0 / (8f32).sqrt();
        let b_dec = 1.0 / 2.0;
        assert!(m.weights.enc_w.iter().all(|x| x.abs() <= b_enc));
        assert!(m.weights.dec_w.iter().all(|x| x.abs() <= b_dec));
        assert!(m.weights.mask_token.iter().all(|&x| x == 0.0));
        assert_eq!(m, ToyMaeModel::new(2, 4, 9).unwrap());
    }

    #[test]
    fn non_divisible_rejected() {
        let m = zero_model(4, 2);
        let v = Volume3D::zeros([4, 4, 6], [1.0; 3]).unwrap();
        assert!(matches!(forward(&m, &v, &v), Err(Error::NotDivisible { axis: 2, .. })));
    }
}
