//! Toy masked-reconstruction pretraining.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_text;
use crate::mask::{apply_mask, expand_mask, generate_mask, patch_scores, MaskConfig, PatchScores};
use crate::recon::{backward, MaeWeights, MaskInput, ToyMaeModel};
use crate::texture::{compute_variation_map, TvmConfig};
use crate::volume::Volume3D;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Optimizer {
    Sgd,
    /// Adam with decoupled weight decay.
    AdamW {
        beta1: f64,
        beta2: f64,
        weight_decay: f64,
        eps: f64,
    },
}

impl Optimizer {
    pub fn adamw_default() -> Self {
        Optimizer::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.05,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub optimizer: Optimizer,
    pub loss_eps: f64,
    pub embed_dim: usize,
    pub init_seed: u64,
    pub mask_input: MaskInput,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            steps: 200,
            optimizer: Optimizer::Sgd,
            loss_eps: 1e-8,
            embed_dim: 16,
            init_seed: 0,
            mask_input: MaskInput::Token,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", format!("must be finite and >= 0, got {}", self.learning_rate)));
        }
        if !(self.loss_eps > 0.0 && self.loss_eps.is_finite()) {
            return Err(Error::config("loss_eps", format!("must be > 0, got {}", self.loss_eps)));
        }
        if self.embed_dim == 0 {
            return Err(Error::config("embed_dim", "must be positive"));
        }
        if let Optimizer::AdamW { beta1, beta2, weight_decay, eps } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && weight_decay >= 0.0 && eps > 0.0) {
                return Err(Error::config("optimizer", "adamw needs beta1, beta2 in [0, 1), weight_decay >= 0, eps > 0"));
            }
        }
        Ok(())
    }
}

pub struct OptimizerState {
    step: u64,
    m: MaeWeights<f64>,
    v: MaeWeights<f64>,
}

impl OptimizerState {
    pub fn new(model: &ToyMaeModel) -> Self {
        let p = model.patch_voxels();
        Self {
            step: 0,
            m: MaeWeights::zeros(p, model.embed_dim),
            v: MaeWeights::zeros(p, model.embed_dim),
        }
    }

    pub fn apply(&mut self, opt: &Optimizer, lr: f64, model: &mut ToyMaeModel, grad: &MaeWeights<f64>) {
        self.step += 1;
        match *opt {
            Optimizer::Sgd => {
                for (w, g) in model.weights.iter_mut().zip(grad.iter()) {
                    *w = (*w as f64 - lr * g) as f32;
                }
            }
            Optimizer::AdamW {
                beta1,
                beta2,
                weight_decay,
                eps,
            } => {
                let bc1 = 1.0 - beta1.powi(self.step as i32);
                let bc2 = 1.0 - beta2.powi(self.step as i32);
                for (((w, g), m), v) in model
                    .weights
                    .iter_mut()
                    .zip(grad.iter())
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                    let wf = *w as f64;
                    *w = (wf - lr * (update + weight_decay * wf)) as f32;
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ToyMaeModel,
    /// Masked loss at each step, measured before that step's update.
    pub loss_trace: Vec<f64>,
}

/// Trains a fresh toy model. Every step draws a new mask for each volume with
/// seed `mask_cfg.seed + step` and takes one full-batch update on the mean
/// masked loss over all volumes.
pub fn pretrain_toy(
    volumes: &[Volume3D],
    tvm_cfg: &TvmConfig,
    mask_cfg: &MaskConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if volumes.is_empty() {
        return Err(Error::config("volumes", "need at least one volume"));
    }
    tvm_cfg.validate()?;
    mask_cfg.validate()?;
    train_cfg.validate()?;
    let scores: Vec<PatchScores> = volumes
        .iter()
        .map(|v| patch_scores(&compute_variation_map(v, tvm_cfg)?, mask_cfg.patch_size))
        .collect::<Result<_>>()?;

    let mut model = ToyMaeModel::new(mask_cfg.patch_size, train_cfg.embed_dim, train_cfg.init_seed)?;
    model.mask_input = train_cfg.mask_input;
    let mut state = OptimizerState::new(&model);
    let mut trace = Vec::with_capacity(train_cfg.steps);
    let n = volumes.len() as f64;

    for step in 0..train_cfg.steps {
        let cfg = MaskConfig {
            seed: mask_cfg.seed.wrapping_add(step as u64),
            ..mask_cfg.clone()
        };
        let mut total = 0.0;
        let mut grad = MaeWeights::<f64>::zeros(model.patch_voxels(), model.embed_dim);
        for (v, s) in volumes.iter().zip(&scores) {
            let mask = expand_mask(&generate_mask(s, &cfg)?)?.with_spacing(v.spacing())?;
            let input = apply_mask(v, &mask)?;
            let (loss, g) = backward(&model, &input, v, &mask, train_cfg.loss_eps)?;
            total += loss;
            for (a, b) in grad.iter_mut().zip(g.iter()) {
                *a += b / n;
            }
        }
        let loss = total / n;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        trace.push(loss);
        state.apply(&train_cfg.optimizer, train_cfg.learning_rate, &mut model, &grad);
        if model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
    }
    Ok(TrainOutcome {
        model,
        loss_trace: trace,
    })
}

/// Writes weights as one little-endian f32 blob (enc_w, enc_b, dec_w, dec_b,
/// mask_token) plus a `<path>.hdr` text header describing the layout.
pub fn save_weights(model: &ToyMaeModel, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = model.weights.iter().flat_map(|w| w.to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let p = model.patch_voxels();
    let e = model.embed_dim;
    let header = format!(
        "format = \"toy_mae_weights\"\nbyte_order = \"little\"\ndtype = \"float32\"\npatch_size = {}\nembed_dim = {e}\nmask_input = \"{}\"\nlayout = [\"enc_w\", \"enc_b\", \"dec_w\", \"dec_b\", \"mask_token\"]\nshapes = [[{p}, {e}], [{e}], [{e}, {p}], [{p}], [{p}]]\n",
        model.patch_size,
        match model.mask_input {
            MaskInput::Token => "token",
            MaskInput::Zero => "zero",
        }
    );
    write_text(&crate::io::sidecar_path(path), &header)
}

pub fn loss_trace_tsv(trace: &[f64]) -> String {
    let mut s = String::from("step\tloss\n");
    for (i, l) in trace.iter().enumerate() {
        s.push_str(&format!("{i}\t{l:.9e}\n"));
    }
    s
}
