//! Novel-token fine-tuning: only the added rows move.

use serde::{Deserialize, Serialize};

use crate::adam::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::refmodel::{Extension, TrainingInstance};
use crate::stimuli::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamMoments {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamMoments {
    fn default() -> Self {
        AdamMoments {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FineTuneConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub adam: AdamMoments,
    /// Seed for novel-row initialization.
    #[serde(default)]
    pub seed: u64,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_epochs() -> usize {
    10
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            lr: default_lr(),
            epochs: default_epochs(),
            adam: AdamMoments::default(),
            seed: 0,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("fine-tuning lr {} must be finite and nonnegative", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("fine-tuning epochs must be at least 1".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.lr,
            beta1: self.adam.beta1,
            beta2: self.adam.beta2,
            eps: self.adam.eps,
            weight_decay: 0.0,
        }
    }
}

/// One instance per occurrence of a novel name: that occurrence becomes the
/// masked target, everything else stays as written. Sentence order, then
/// position order. `target_id` indexes `novel_names`.
pub fn build_instances(sentences: &[TokenSequence], novel_names: &[String]) -> Result<Vec<TrainingInstance>> {
    let mut out = Vec::new();
    for (si, s) in sentences.iter().enumerate() {
        let before = out.len();
        for (pos, tok) in s.tokens.iter().enumerate() {
            if let Some(id) = novel_names.iter().position(|n| n == tok) {
                out.push(TrainingInstance {
                    tokens: s.masked_at(pos),
                    target_position: pos,
                    target_id: id,
                });
            }
        }
        if out.len() == before {
            return Err(Error::Training(format!(
                "sentence {si} (`{s}`) contains no novel token"
            )));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneReport {
    /// Loss before each of the `epochs` updates.
    pub losses: Vec<f64>,
    pub instances: usize,
}

/// Exactly `cfg.epochs` full-batch Adam steps on the overlay's novel rows,
/// starting from fresh optimizer state.
pub fn run_finetune(ext: &mut Extension<'_>, sentences: &[TokenSequence], cfg: &FineTuneConfig) -> Result<FineTuneReport> {
    cfg.validate()?;
    let instances = build_instances(sentences, ext.novel_names())?;
    let nv = ext.rows.vectors.len();
    let mut adam = Adam::new(nv + ext.rows.bias.len(), cfg.adam());
    let mut flat: Vec<f64> = ext.rows.vectors.iter().chain(&ext.rows.bias).copied().collect();
    let mut flat_grads = Vec::with_capacity(flat.len());
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (loss, grads) = ext.mlm_loss_and_grads(&instances)?;
        if !loss.is_finite() || grads.vectors.iter().chain(&grads.bias).any(|g| !g.is_finite()) {
            return Err(Error::Divergence { epoch, loss });
        }
        losses.push(loss);
        flat_grads.clear();
        flat_grads.extend(grads.vectors.iter().chain(&grads.bias));
        adam.step(&mut flat, &flat_grads);
        ext.rows.vectors.copy_from_slice(&flat[..nv]);
        ext.rows.bias.copy_from_slice(&flat[nv..]);
    }
    Ok(FineTuneReport {
        losses,
        instances: instances.len(),
    })
}
