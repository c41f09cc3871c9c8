//! Masked-LM pretraining of the reference model.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{log_softmax_at, softmax_in_place};
use super::network::{GradSink, Layout, Network, NovelRows, Tok};
use super::{MaskedLm, ModelConfig};
use crate::adam::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::stimuli::TokenSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak learning rate; decays linearly to zero over training.
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Standard deviation of the initial token and position embeddings.
    pub embedding_std: f64,
    /// Applied to the trained model with [`MaskedLm::with_embedding_scale`].
    /// Values below 1 shrink the embedding space relative to a fixed
    /// fine-tuning step without changing any prediction.
    #[serde(default = "unit_scale")]
    pub embedding_scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

fn is_positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        let nonnegative = self.weight_decay.is_finite() && self.weight_decay >= 0.0;
        if !is_positive(self.learning_rate) || !is_positive(self.embedding_std) || !nonnegative {
            return Err(Error::Config(
                "learning_rate and embedding_std must be positive, weight_decay nonnegative".into(),
            ));
        }
        if !is_positive(self.embedding_scale) {
            return Err(Error::Config("embedding_scale must be positive and finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Mean masked-token cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
}

/// Chooses masked content positions: each independently at `rate`, and one
/// uniformly random content position when none was drawn.
pub fn choose_masks<R: Rng>(content: &[usize], rate: f64, rng: &mut R) -> Vec<usize> {
    let mut picked: Vec<usize> = content.iter().copied().filter(|_| rng.random::<f64>() < rate).collect();
    if picked.is_empty() && !content.is_empty() {
        picked.push(content[rng.random_range(0..content.len())]);
    }
    picked
}

struct Prepared {
    ids: Vec<usize>,
    /// Positions (in the unwrapped sentence) of content words.
    content: Vec<usize>,
}

fn prepare(corpus: &[TokenSequence], config: &ModelConfig) -> Result<Vec<Prepared>> {
    if corpus.is_empty() {
        return Err(Error::Training("empty pretraining corpus".into()));
    }
    corpus
        .iter()
        .map(|s| {
            if s.len() + 2 > config.max_sequence_length {
                return Err(Error::Overlength {
                    len: s.len() + 2,
                    max: config.max_sequence_length,
                });
            }
            let ids = s
                .tokens
                .iter()
                .map(|t| config.vocabulary.require(t))
                .collect::<Result<Vec<_>>>()?;
            let content = s
                .tokens
                .iter()
                .enumerate()
                .filter(|(_, t)| config.is_content(t))
                .map(|(i, _)| i)
                .collect();
            Ok(Prepared { ids, content })
        })
        .collect()
}

/// Trains a fresh model on `corpus`. Deterministic for fixed inputs.
pub fn pretrain(
    corpus: &[TokenSequence],
    config: &ModelConfig,
    pcfg: &PretrainConfig,
    seed: u64,
) -> Result<(MaskedLm, PretrainReport)> {
    config.validate()?;
    pcfg.validate()?;
    let data = prepare(corpus, config)?;
    let layout = Layout::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = layout.init(pcfg.embedding_std, &mut rng);
    let adam_cfg = AdamConfig {
        weight_decay: pcfg.weight_decay,
        ..AdamConfig::with_lr(pcfg.learning_rate)
    };
    let mut adam = Adam::new(layout.total, adam_cfg)
        .with_decay_ranges(layout.matrices().into_iter().map(|s| s.range()).collect());

    let steps_per_epoch = data.len().div_ceil(pcfg.batch_size);
    let total_steps = (steps_per_epoch * pcfg.epochs) as f64;
    let vocab = &config.vocabulary;
    let (mask, start, end) = (vocab.mask_id(), vocab.start_id(), vocab.end_id());
    let d = layout.d;
    let no_novel = NovelRows::new(d);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = vec![0.0; layout.total];
    let mut epoch_losses = Vec::with_capacity(pcfg.epochs);

    for epoch in 0..pcfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_targets = 0usize;
        for batch in order.chunks(pcfg.batch_size) {
            grads.fill(0.0);
            let mut n_targets = 0usize;
            let mut batch_loss = 0.0;
            let net = Network {
                layout: &layout,
                params: &params,
                novel: &no_novel,
            };
            for &si in batch {
                let sent = &data[si];
                let masked = choose_masks(&sent.content, config.mlm_mask_rate, &mut rng);
                if masked.is_empty() {
                    continue;
                }
                let mut toks: Vec<Tok> = Vec::with_capacity(sent.ids.len() + 2);
                toks.push(Tok::Base(start));
                toks.extend(sent.ids.iter().map(|&i| Tok::Base(i)));
                toks.push(Tok::Base(end));
                for &p in &masked {
                    toks[p + 1] = Tok::Base(mask);
                }
                let cache = net.encode(&toks);
                let mut dhidden = vec![0.0; toks.len() * d];
                let mut sink = GradSink {
                    base: Some(&mut grads),
                    novel: None,
                };
                for &p in &masked {
                    let hidden = &cache.hidden[(p + 1) * d..(p + 2) * d];
                    let hc = net.head(hidden);
                    let target = sent.ids[p];
                    batch_loss -= log_softmax_at(&hc.logits, target);
                    let mut dlogits = hc.logits.clone();
                    softmax_in_place(&mut dlogits);
                    dlogits[target] -= 1.0;
                    let dh = net.head_backward(&hc, hidden, &dlogits, &mut sink);
                    dhidden[(p + 1) * d..(p + 2) * d].copy_from_slice(&dh);
                }
                net.encoder_backward(&cache, dhidden, &mut sink);
                n_targets += masked.len();
            }
            if n_targets == 0 {
                continue;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: batch_loss,
                });
            }
            let scale = 1.0 / n_targets as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            let progress = adam.steps() as f64 / total_steps;
            let lr = pcfg.learning_rate * (1.0 - progress);
            adam.step_with_lr(&mut params, &grads, lr);
            epoch_loss += batch_loss;
            epoch_targets += n_targets;
        }
        epoch_losses.push(epoch_loss / epoch_targets.max(1) as f64);
    }
    let final_loss = *epoch_losses.last().expect("at least one epoch");
    let model = MaskedLm::from_params(config.clone(), params)?;
    let model = if pcfg.embedding_scale == 1.0 {
        model
    } else {
        model.with_embedding_scale(pcfg.embedding_scale)?
    };
    Ok((
        model,
        PretrainReport {
            epoch_losses,
            final_loss,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::Vocabulary;

    fn toy() -> (Vec<TokenSequence>, ModelConfig) {
        let corpus: Vec<TokenSequence> = (0..40)
            .map(|i| {
                let (v, n) = if i % 2 == 0 { ("eat", "food") } else { ("read", "book") };
                TokenSequence::from_text(&format!("the cat will {v} the {n}"))
            })
            .collect();
        let config = ModelConfig {
            n_layers: 1,
            n_heads: 2,
            model_dim: 16,
            ffn_dim: 32,
            max_sequence_length: 12,
            vocabulary: Vocabulary::with_reserved(
                ["the", "will", "cat", "eat", "read", "food", "book"].map(String::from),
            )
            .unwrap(),
            mlm_mask_rate: 0.3,
            closed_class_words: vec!["the".into(), "will".into()],
        };
        (corpus, config)
    }

    fn pcfg(epochs: usize) -> PretrainConfig {
        PretrainConfig {
            epochs,
            batch_size: 8,
            learning_rate: 1e-2,
            weight_decay: 0.01,
            embedding_std: 0.1,
            embedding_scale: 1.0,
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (corpus, config) = toy();
        let (a, ra) = pretrain(&corpus, &config, &pcfg(2), 5).unwrap();
        let (b, rb) = pretrain(&corpus, &config, &pcfg(2), 5).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(ra, rb);
        let (c, _) = pretrain(&corpus, &config, &pcfg(2), 6).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn loss_falls_on_a_learnable_corpus() {
        let (corpus, config) = toy();
        let (model, report) = pretrain(&corpus, &config, &pcfg(120), 1).unwrap();
        assert!(report.final_loss < 0.5 * report.epoch_losses[0], "{report:?}");
        let s = TokenSequence::from_text("the cat will eat the [MASK]");
        let food = model.token_probability(&s, 5, "food").unwrap();
        let book = model.token_probability(&s, 5, "book").unwrap();
        assert!(food > book);
    }

    #[test]
    fn rejects_bad_corpora() {
        let (_, config) = toy();
        assert!(matches!(pretrain(&[], &config, &pcfg(1), 0), Err(Error::Training(_))));
        let oov = vec![TokenSequence::from_text("the dog")];
        assert!(matches!(
            pretrain(&oov, &config, &pcfg(1), 0),
            Err(Error::UnknownToken(_))
        ));
        let long = vec![TokenSequence::new(vec!["the".into(); 11])];
        assert!(matches!(
            pretrain(&long, &config, &pcfg(1), 0),
            Err(Error::Overlength { .. })
        ));
    }

    #[test]
    fn masking_always_picks_some_content() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let m = choose_masks(&[1, 4, 6], 0.15, &mut rng);
            assert!(!m.is_empty());
            assert!(m.iter().all(|p| [1, 4, 6].contains(p)));
        }
        assert!(choose_masks(&[], 0.5, &mut rng).is_empty());
    }
}
