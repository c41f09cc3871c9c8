//! Probability-contrast tests on fine-tuned novel tokens.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finetune::{run_finetune, FineTuneConfig};
use crate::refmodel::{Extension, MaskedLm};
use crate::stimuli::{
    out_class_frames, render, render_query, selectional_sentence, selectional_sentences, AlternationSpec, FrameSide,
    SelectionalCondition, SelectionalNetwork, TokenSequence, SELECTIONAL_VERB_POSITION,
};
use crate::vocab::{Vocabulary, MASK};

/// Negative natural-log probability of `token` at the masked `position`.
pub fn surprisal(ext: &Extension<'_>, seq: &TokenSequence, position: usize, token: &str) -> Result<f64> {
    Ok(-ext.log_probability(seq, position, token)?)
}

/// A novel token name absent from `vocab`, derived from `stem`.
pub fn fresh_name(vocab: &Vocabulary, stem: &str) -> String {
    let mut name = stem.to_string();
    let mut i = 0;
    while vocab.contains(&name) {
        i += 1;
        name = format!("{stem}{i}");
    }
    name
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternationTrial {
    pub alternation_id: String,
    pub train_frame: FrameSide,
    pub seed: u64,
    pub p_in: f64,
    pub p_out_mean: f64,
    pub correct: bool,
}

/// Fine-tunes a fresh novel verb on `spec`'s `train_frame` and compares its
/// probability in the sister frame with its mean probability across out-class
/// frames.
pub fn alternation_trial(
    model: &MaskedLm,
    battery: &[AlternationSpec],
    spec: &AlternationSpec,
    train_frame: FrameSide,
    cfg: &FineTuneConfig,
    seed: u64,
) -> Result<AlternationTrial> {
    let outs = out_class_frames(battery, &spec.id, train_frame)?;
    if outs.is_empty() {
        return Err(Error::Input(format!(
            "alternation `{}` has no out-class frames in this battery",
            spec.id
        )));
    }
    let ext = finetuned_verb(model, spec, train_frame, cfg, seed)?;
    let name = &ext.novel_names()[0];
    let vocab = model.vocabulary();
    let probability = |frame| -> Result<f64> {
        let (q, pos) = render_query(frame, name, vocab)?;
        ext.token_probability(&q, pos, name)
    };
    let p_in = probability(spec.frame(train_frame.sister()))?;
    let mut total = 0.0;
    for f in &outs {
        total += probability(f)?;
    }
    let p_out_mean = total / outs.len() as f64;
    Ok(AlternationTrial {
        alternation_id: spec.id.clone(),
        train_frame,
        seed,
        p_in,
        p_out_mean,
        correct: p_in > p_out_mean,
    })
}

/// An overlay holding one novel verb fine-tuned on the rendered `train_frame`.
pub fn finetuned_verb<'m>(
    model: &'m MaskedLm,
    spec: &AlternationSpec,
    train_frame: FrameSide,
    cfg: &FineTuneConfig,
    seed: u64,
) -> Result<Extension<'m>> {
    let vocab = model.vocabulary();
    let name = fresh_name(vocab, "wug");
    let sentence = render(spec.frame(train_frame), &name, vocab)?;
    let mut ext = model.overlay();
    ext.extend_vocab(std::slice::from_ref(&name), seed)?;
    run_finetune(&mut ext, &[sentence], cfg)?;
    Ok(ext)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionalTrial {
    pub seed: u64,
    /// Mean verb surprisal (nats) in attested-in, unattested-in, unattested-out order.
    pub surprisal: [f64; 3],
    /// attested-in < unattested-in, attested-in < unattested-out,
    /// unattested-in < unattested-out.
    pub flags: [bool; 3],
}

impl SelectionalTrial {
    pub fn from_surprisals(seed: u64, surprisal: [f64; 3]) -> Self {
        let [ai, ui, uo] = surprisal;
        SelectionalTrial {
            seed,
            surprisal,
            flags: [ai < ui, ai < uo, ui < uo],
        }
    }
}

/// Names of the three selectional contrasts, in flag order.
pub const CONTRASTS: [&str; 3] = ["attested-in<unattested-in", "attested-in<unattested-out", "unattested-in<unattested-out"];

/// Fine-tunes all network tokens on the attested sentences, then measures the
/// verb's mean surprisal per condition: averaged over each verb's sentences,
/// then over verbs.
pub fn selectional_trial(model: &MaskedLm, net: &SelectionalNetwork, cfg: &FineTuneConfig, seed: u64) -> Result<SelectionalTrial> {
    net.validate()?;
    let mut ext = model.overlay();
    ext.extend_vocab(&net.token_names(), seed)?;
    run_finetune(&mut ext, &selectional_sentences(net, SelectionalCondition::AttestedIn), cfg)?;
    let mut means = [0.0; 3];
    for (ci, cond) in SelectionalCondition::ALL.into_iter().enumerate() {
        let mut per_verb: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (v, n) in net.pairs(cond) {
            let verb = &net.verbs[v];
            let q = selectional_sentence(MASK, &net.nouns[n]);
            per_verb
                .entry(v)
                .or_default()
                .push(surprisal(&ext, &q, SELECTIONAL_VERB_POSITION, verb)?);
        }
        let verb_means: Vec<f64> = per_verb.values().map(|s| s.iter().sum::<f64>() / s.len() as f64).collect();
        means[ci] = verb_means.iter().sum::<f64>() / verb_means.len() as f64;
    }
    Ok(SelectionalTrial::from_surprisals(seed, means))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymmetryRow {
    pub alternation_id: String,
    pub train_frame: FrameSide,
    pub successes: u64,
    pub n: u64,
    pub accuracy: f64,
    pub below_baseline: bool,
    /// Accuracy of the same alternation trained on the other frame, if present.
    pub sister_accuracy: Option<f64>,
}

/// Accuracy per (alternation, training frame), flagging rows below 0.5.
pub fn asymmetry_report(trials: &[AlternationTrial]) -> Result<Vec<AsymmetryRow>> {
    if trials.is_empty() {
        return Err(Error::Input("no trials to summarize".into()));
    }
    let mut groups: BTreeMap<(&str, FrameSide), (u64, u64)> = BTreeMap::new();
    for t in trials {
        let g = groups.entry((&t.alternation_id, t.train_frame)).or_default();
        g.0 += u64::from(t.correct);
        g.1 += 1;
    }
    let acc = |k: &(&str, FrameSide)| groups.get(k).map(|(s, n)| *s as f64 / *n as f64);
    Ok(groups
        .iter()
        .map(|(&(id, side), &(successes, n))| {
            let accuracy = successes as f64 / n as f64;
            AsymmetryRow {
                alternation_id: id.to_string(),
                train_frame: side,
                successes,
                n,
                accuracy,
                below_baseline: accuracy < 0.5,
                sister_accuracy: acc(&(id, side.sister())),
            }
        })
        .collect())
}
