//! Linear probes that classify a novel token's learned vector.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::adam::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::eval::finetuned_verb;
use crate::finetune::FineTuneConfig;
use crate::refmodel::MaskedLm;
use crate::stimuli::{AlternationSpec, FrameSide};

/// Default size of the high-frequency out-class list.
pub const DEFAULT_WORDLIST_SIZE: usize = 150;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Entries taken from the top of a word-list out-class source.
    #[serde(default = "default_wordlist_size")]
    pub wordlist_size: usize,
}

fn default_lr() -> f64 {
    1e-1
}
fn default_epochs() -> usize {
    20
}
fn default_wordlist_size() -> usize {
    DEFAULT_WORDLIST_SIZE
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            lr: default_lr(),
            epochs: default_epochs(),
            wordlist_size: default_wordlist_size(),
        }
    }
}

/// Two-way linear classifier; row `k` of `weights` scores class `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub dim: usize,
    /// `[2, dim]`.
    pub weights: Vec<f64>,
    pub bias: [f64; 2],
}

impl LinearProbe {
    pub fn zeros(dim: usize) -> Self {
        LinearProbe {
            dim,
            weights: vec![0.0; 2 * dim],
            bias: [0.0; 2],
        }
    }

    pub fn logits(&self, x: &[f64]) -> [f64; 2] {
        let (w0, w1) = self.weights.split_at(self.dim);
        [
            crate::refmodel::linalg::dot(w0, x) + self.bias[0],
            crate::refmodel::linalg::dot(w1, x) + self.bias[1],
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub vectors: Vec<Vec<f64>>,
    /// 1 for in-class, 0 for out-class.
    pub labels: Vec<u8>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Embeddings of `inclass` (label 1) followed by `outclass` (label 0).
pub fn make_dataset(model: &MaskedLm, inclass: &[String], outclass: &[String]) -> Result<LabeledSet> {
    if inclass.is_empty() || outclass.is_empty() {
        return Err(Error::Input("probe needs nonempty in-class and out-class lists".into()));
    }
    let ins: BTreeSet<&String> = inclass.iter().collect();
    if let Some(w) = outclass.iter().find(|w| ins.contains(w)) {
        return Err(Error::Input(format!("`{w}` is listed as both in-class and out-class")));
    }
    let mut vectors = Vec::with_capacity(inclass.len() + outclass.len());
    let mut labels = Vec::with_capacity(vectors.capacity());
    for (words, label) in [(inclass, 1u8), (outclass, 0u8)] {
        for w in words {
            vectors.push(model.embedding_of(w)?);
            labels.push(label);
        }
    }
    Ok(LabeledSet { vectors, labels })
}

/// Full-batch Adam on mean softmax cross-entropy from a zero-initialized
/// probe. Returns the probe and its final training accuracy.
pub fn train_probe(data: &LabeledSet, cfg: &ProbeConfig) -> Result<(LinearProbe, f64)> {
    if !data.labels.contains(&0) || !data.labels.contains(&1) {
        return Err(Error::Input("probe training data needs both labels".into()));
    }
    if cfg.epochs == 0 || !cfg.lr.is_finite() || cfg.lr < 0.0 {
        return Err(Error::Config("probe needs epochs >= 1 and lr >= 0".into()));
    }
    let dim = data.vectors[0].len();
    if data.vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::Input("probe vectors differ in length".into()));
    }
    let mut probe = LinearProbe::zeros(dim);
    let mut adam = Adam::new(2 * dim + 2, AdamConfig::with_lr(cfg.lr));
    let mut flat = vec![0.0; 2 * dim + 2];
    let scale = 1.0 / data.len() as f64;
    for _ in 0..cfg.epochs {
        let mut grads = vec![0.0; 2 * dim + 2];
        for (x, &y) in data.vectors.iter().zip(&data.labels) {
            let l = probe.logits(x);
            let p1 = softmax2(l);
            // dL/dlogit_k = p_k - [y == k]
            let g1 = (p1 - f64::from(y)) * scale;
            let g0 = -g1;
            for (c, xc) in x.iter().enumerate() {
                grads[c] += g0 * xc;
                grads[dim + c] += g1 * xc;
            }
            grads[2 * dim] += g0;
            grads[2 * dim + 1] += g1;
        }
        adam.step(&mut flat, &grads);
        probe.weights.copy_from_slice(&flat[..2 * dim]);
        probe.bias = [flat[2 * dim], flat[2 * dim + 1]];
    }
    let correct = data
        .vectors
        .iter()
        .zip(&data.labels)
        .filter(|(x, y)| classify(&probe, x).map(|(l, _)| l == **y).unwrap_or(false))
        .count();
    Ok((probe, correct as f64 / data.len() as f64))
}

/// Class-1 probability of a two-logit softmax.
fn softmax2(l: [f64; 2]) -> f64 {
    1.0 / (1.0 + (l[0] - l[1]).exp())
}

/// Label (ties go to 0) and class-1 softmax score.
pub fn classify(probe: &LinearProbe, x: &[f64]) -> Result<(u8, f64)> {
    if x.len() != probe.dim {
        return Err(Error::Input(format!(
            "vector of length {} for a probe of width {}",
            x.len(),
            probe.dim
        )));
    }
    let l = probe.logits(x);
    Ok((u8::from(l[1] > l[0]), softmax2(l)))
}

/// Where the probe's out-class examples come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutclassSource {
    /// The alternation's own distractor verbs.
    Distractor,
    /// A frequency-ordered word list.
    WordList(Vec<String>),
}

impl OutclassSource {
    pub fn label(&self) -> &'static str {
        match self {
            OutclassSource::Distractor => "distractor",
            OutclassSource::WordList(_) => "wordlist",
        }
    }

    /// Out-class words for `spec`: the distractors, or the top of the list with
    /// the spec's own in-class verbs pruned.
    pub fn words_for(&self, spec: &AlternationSpec, limit: usize) -> Vec<String> {
        match self {
            OutclassSource::Distractor => spec.distractor_verbs.clone(),
            OutclassSource::WordList(list) => list
                .iter()
                .filter(|w| !spec.inclass_verbs.contains(w))
                .take(limit)
                .cloned()
                .collect(),
        }
    }
}

/// Parses a word list: one word per line, blank lines skipped.
pub fn parse_word_list(text: &str) -> Vec<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrial {
    pub alternation_id: String,
    pub train_frame: FrameSide,
    pub seed: u64,
    pub score: f64,
    pub inclass: bool,
    pub train_accuracy: f64,
}

/// A probe trained for one alternation and out-class source.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedProbe {
    pub probe: LinearProbe,
    pub train_accuracy: f64,
}

pub fn fit_probe(model: &MaskedLm, spec: &AlternationSpec, source: &OutclassSource, cfg: &ProbeConfig) -> Result<TrainedProbe> {
    let out = source.words_for(spec, cfg.wordlist_size);
    let data = make_dataset(model, &spec.inclass_verbs, &out)?;
    let (probe, train_accuracy) = train_probe(&data, cfg)?;
    Ok(TrainedProbe { probe, train_accuracy })
}

/// Fine-tunes a fresh novel verb on `train_frame` and classifies its vector.
pub fn probe_trial(
    model: &MaskedLm,
    spec: &AlternationSpec,
    train_frame: FrameSide,
    trained: &TrainedProbe,
    ft: &FineTuneConfig,
    seed: u64,
) -> Result<ProbeTrial> {
    let ext = finetuned_verb(model, spec, train_frame, ft, seed)?;
    let v = ext.embedding_of(&ext.novel_names()[0])?;
    let (label, score) = classify(&trained.probe, &v)?;
    Ok(ProbeTrial {
        alternation_id: spec.id.clone(),
        train_frame,
        seed,
        score,
        inclass: label == 1,
        train_accuracy: trained.train_accuracy,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeExperiment {
    pub trials: Vec<ProbeTrial>,
    /// Fraction of seeds whose novel verb was labeled in-class.
    pub accuracy: f64,
    pub train_accuracy: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn probe_experiment(
    model: &MaskedLm,
    spec: &AlternationSpec,
    train_frame: FrameSide,
    source: &OutclassSource,
    cfg: &ProbeConfig,
    ft: &FineTuneConfig,
    seeds: &[u64],
) -> Result<ProbeExperiment> {
    if seeds.is_empty() {
        return Err(Error::Input("probe experiment needs at least one seed".into()));
    }
    let trained = fit_probe(model, spec, source, cfg)?;
    let trials = seeds
        .iter()
        .map(|&s| probe_trial(model, spec, train_frame, &trained, ft, s))
        .collect::<Result<Vec<_>>>()?;
    let accuracy = trials.iter().filter(|t| t.inclass).count() as f64 / trials.len() as f64;
    Ok(ProbeExperiment {
        trials,
        accuracy,
        train_accuracy: trained.train_accuracy,
    })
}
