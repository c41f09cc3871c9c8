//! Reference masked-LM backend: a small transformer encoder with a tied
//! masked-LM head, plus a per-run overlay that owns added novel tokens.

pub mod checkpoint;
pub mod linalg;
pub mod network;
pub mod pretrain;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stimuli::TokenSequence;
use crate::vocab::{Vocabulary, MASK, RESERVED};

use linalg::{log_softmax_at, softmax_in_place};
use network::{GradSink, Layout, Network, NovelGrads, NovelRows, Tok};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use pretrain::{pretrain, PretrainConfig, PretrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    /// Longest input, counting the start and end tokens.
    pub max_sequence_length: usize,
    pub vocabulary: Vocabulary,
    pub mlm_mask_rate: f64,
    /// Function words; every other non-reserved token is a content word.
    #[serde(default)]
    pub closed_class_words: Vec<String>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_layers == 0 || self.n_heads == 0 || self.model_dim == 0 || self.ffn_dim == 0 {
            return bad("layer, head and width counts must be positive".into());
        }
        if !self.model_dim.is_multiple_of(self.n_heads) {
            return bad(format!(
                "model_dim {} is not divisible by n_heads {}",
                self.model_dim, self.n_heads
            ));
        }
        if self.max_sequence_length < 3 {
            return bad("max_sequence_length must leave room for the start and end tokens".into());
        }
        if !(self.mlm_mask_rate > 0.0 && self.mlm_mask_rate <= 1.0) {
            return bad(format!("mlm_mask_rate {} outside (0, 1]", self.mlm_mask_rate));
        }
        for w in &self.closed_class_words {
            self.vocabulary.require(w)?;
        }
        Ok(())
    }

    /// Whether `token` is a content word that pretraining may mask.
    pub fn is_content(&self, token: &str) -> bool {
        !RESERVED.contains(&token) && !self.closed_class_words.iter().any(|w| w == token)
    }
}

/// One masked prediction of a novel token.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingInstance {
    pub tokens: TokenSequence,
    /// Index into `tokens` (start token excluded); must hold `[MASK]`.
    pub target_position: usize,
    /// Index of the novel token among the overlay's added tokens.
    pub target_id: usize,
}

/// A pretrained model. Immutable once built; share it read-only across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedLm {
    pub config: ModelConfig,
    pub layout: Layout,
    params: Vec<f64>,
}

impl MaskedLm {
    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(MaskedLm {
            config,
            layout,
            params,
        })
    }

    /// An untrained model: embeddings drawn at `embedding_std`, dense layers
    /// scaled by fan-in, unit gains and zero biases.
    pub fn initialized(config: ModelConfig, embedding_std: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        if !(embedding_std > 0.0 && embedding_std.is_finite()) {
            return Err(Error::Config(format!("embedding_std {embedding_std} must be positive")));
        }
        let layout = Layout::new(&config);
        let params = layout.init(embedding_std, &mut ChaCha8Rng::seed_from_u64(seed));
        Self::from_params(config, params)
    }

    /// The same function with token and position embeddings multiplied by
    /// `factor` and the head layer-norm gain and bias divided by it. The
    /// embedding layer norm absorbs the input scale and the head compensates
    /// on the output side, so only the parameterization changes.
    pub fn with_embedding_scale(&self, factor: f64) -> Result<MaskedLm> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::Config(format!("embedding scale {factor} must be positive and finite")));
        }
        let mut params = self.params.clone();
        let lay = &self.layout;
        for s in [lay.tok_emb, lay.pos_emb] {
            params[s.range()].iter_mut().for_each(|x| *x *= factor);
        }
        for s in [lay.head_ln_g, lay.head_ln_b] {
            params[s.range()].iter_mut().for_each(|x| *x /= factor);
        }
        MaskedLm::from_params(self.config.clone(), params)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.config.vocabulary
    }

    /// A fresh overlay with no novel tokens.
    pub fn overlay(&self) -> Extension<'_> {
        Extension {
            model: self,
            rows: NovelRows::new(self.config.model_dim),
        }
    }

    pub fn forward(&self, seq: &TokenSequence) -> Result<Vec<Vec<f64>>> {
        self.overlay().forward(seq)
    }

    pub fn token_probability(&self, seq: &TokenSequence, position: usize, token: &str) -> Result<f64> {
        self.overlay().token_probability(seq, position, token)
    }

    pub fn embedding_of(&self, token: &str) -> Result<Vec<f64>> {
        let id = self.vocabulary().require(token)?;
        let d = self.config.model_dim;
        Ok(self.params[self.layout.tok_emb.off + id * d..][..d].to_vec())
    }

    /// Per-dimension mean and standard deviation of the input embedding rows.
    pub fn embedding_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.config.model_dim;
        let v = self.layout.vocab;
        let emb = &self.params[self.layout.tok_emb.range()];
        let mut mean = vec![0.0; d];
        for row in emb.chunks_exact(d) {
            linalg::axpy(1.0, row, &mut mean);
        }
        mean.iter_mut().for_each(|m| *m /= v as f64);
        let mut var = vec![0.0; d];
        for row in emb.chunks_exact(d) {
            for c in 0..d {
                var[c] += (row[c] - mean[c]).powi(2);
            }
        }
        let std = var.iter().map(|s| (s / v as f64).sqrt()).collect();
        (mean, std)
    }
}

/// Novel tokens layered over a frozen [`MaskedLm`]. Owns all mutable state of
/// one fine-tuning run.
#[derive(Debug, Clone)]
pub struct Extension<'m> {
    model: &'m MaskedLm,
    pub rows: NovelRows,
}

impl<'m> Extension<'m> {
    pub fn model(&self) -> &'m MaskedLm {
        self.model
    }

    pub fn vocab_size(&self) -> usize {
        self.model.layout.vocab + self.rows.len()
    }

    pub fn novel_names(&self) -> &[String] {
        &self.rows.names
    }

    pub fn novel_id(&self, name: &str) -> Option<usize> {
        self.rows.names.iter().position(|n| n == name)
    }

    /// Index of `token` in the full (base then novel) output distribution.
    pub fn output_index(&self, token: &str) -> Result<usize> {
        if let Some(id) = self.model.vocabulary().id(token) {
            return Ok(id);
        }
        self.novel_id(token)
            .map(|i| self.model.layout.vocab + i)
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    /// Adds one tied row per name, each coordinate drawn from a normal with
    /// that dimension's base-embedding mean and standard deviation; bias 0.
    pub fn extend_vocab(&mut self, names: &[String], seed: u64) -> Result<Vec<usize>> {
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(Error::Input(format!("illegal token name {name:?}")));
            }
            if self.model.vocabulary().contains(name)
                || self.novel_id(name).is_some()
                || names[..i].contains(name)
            {
                return Err(Error::NameCollision(name.clone()));
            }
        }
        let (mean, std) = self.model.embedding_moments();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut handles = Vec::with_capacity(names.len());
        for name in names {
            for (m, s) in mean.iter().zip(&std) {
                let x = if *s > 0.0 {
                    Normal::new(*m, *s).expect("finite moments").sample(&mut rng)
                } else {
                    *m
                };
                self.rows.vectors.push(x);
            }
            self.rows.bias.push(0.0);
            self.rows.names.push(name.clone());
            handles.push(self.rows.len() - 1);
        }
        Ok(handles)
    }

    pub fn embedding_of(&self, token: &str) -> Result<Vec<f64>> {
        match self.novel_id(token) {
            Some(i) => Ok(self.rows.row(i).to_vec()),
            None => self.model.embedding_of(token),
        }
    }

    fn network(&self) -> Network<'_> {
        Network {
            layout: &self.model.layout,
            params: &self.model.params,
            novel: &self.rows,
        }
    }

    /// Maps a sequence to network tokens, wrapped in start and end tokens.
    pub fn tokenize(&self, seq: &TokenSequence) -> Result<Vec<Tok>> {
        let max = self.model.config.max_sequence_length;
        if seq.len() + 2 > max {
            return Err(Error::Overlength {
                len: seq.len() + 2,
                max,
            });
        }
        let vocab = self.model.vocabulary();
        let mut toks = Vec::with_capacity(seq.len() + 2);
        toks.push(Tok::Base(vocab.start_id()));
        for t in &seq.tokens {
            toks.push(match vocab.id(t) {
                Some(id) => Tok::Base(id),
                None => Tok::Novel(
                    self.novel_id(t)
                        .ok_or_else(|| Error::UnknownToken(t.clone()))?,
                ),
            });
        }
        toks.push(Tok::Base(vocab.end_id()));
        Ok(toks)
    }

    /// Logits over the current vocabulary at every position of `seq`.
    pub fn logits(&self, seq: &TokenSequence) -> Result<Vec<Vec<f64>>> {
        let toks = self.tokenize(seq)?;
        let net = self.network();
        let cache = net.encode(&toks);
        let d = self.model.config.model_dim;
        Ok((0..seq.len())
            .map(|i| net.head(&cache.hidden[(i + 1) * d..(i + 2) * d]).logits)
            .collect())
    }

    /// Output distribution over the current vocabulary at every position of `seq`.
    pub fn forward(&self, seq: &TokenSequence) -> Result<Vec<Vec<f64>>> {
        let mut out = self.logits(seq)?;
        out.iter_mut().for_each(|l| softmax_in_place(l));
        Ok(out)
    }

    /// Output distribution at one `[MASK]` position.
    pub fn distribution_at(&self, seq: &TokenSequence, position: usize) -> Result<Vec<f64>> {
        let mut logits = self.logits_at(seq, position)?;
        softmax_in_place(&mut logits);
        Ok(logits)
    }

    fn logits_at(&self, seq: &TokenSequence, position: usize) -> Result<Vec<f64>> {
        if seq.tokens.get(position).map(String::as_str) != Some(MASK) {
            return Err(Error::NotMasked(position));
        }
        let toks = self.tokenize(seq)?;
        let net = self.network();
        let cache = net.encode(&toks);
        let d = self.model.config.model_dim;
        Ok(net.head(&cache.hidden[(position + 1) * d..(position + 2) * d]).logits)
    }

    pub fn token_probability(&self, seq: &TokenSequence, position: usize, token: &str) -> Result<f64> {
        Ok(self.log_probability(seq, position, token)?.exp())
    }

    /// Natural-log probability of `token` at the masked `position`.
    pub fn log_probability(&self, seq: &TokenSequence, position: usize, token: &str) -> Result<f64> {
        let idx = self.output_index(token)?;
        let logits = self.logits_at(seq, position)?;
        Ok(log_softmax_at(&logits, idx))
    }

    /// Mean cross-entropy over `batch` and its gradient with respect to the
    /// novel rows only.
    pub fn mlm_loss_and_grads(&self, batch: &[TrainingInstance]) -> Result<(f64, NovelGrads)> {
        if batch.is_empty() {
            return Err(Error::Training("empty batch".into()));
        }
        let net = self.network();
        let d = self.model.config.model_dim;
        let base_v = self.model.layout.vocab;
        let scale = 1.0 / batch.len() as f64;
        let mut grads = NovelGrads::zeros(&self.rows);
        let mut loss = 0.0;
        for inst in batch {
            if inst.target_id >= self.rows.len() {
                return Err(Error::Training(format!(
                    "target id {} does not name a novel token",
                    inst.target_id
                )));
            }
            let pos = inst.target_position;
            if inst.tokens.tokens.get(pos).map(String::as_str) != Some(MASK) {
                return Err(Error::NotMasked(pos));
            }
            let toks = self.tokenize(&inst.tokens)?;
            let cache = net.encode(&toks);
            let hidden = &cache.hidden[(pos + 1) * d..(pos + 2) * d];
            let hc = net.head(hidden);
            let target = base_v + inst.target_id;
            loss -= log_softmax_at(&hc.logits, target);
            let mut dlogits = hc.logits.clone();
            softmax_in_place(&mut dlogits);
            dlogits[target] -= 1.0;
            dlogits.iter_mut().for_each(|g| *g *= scale);
            let mut sink = GradSink {
                base: None,
                novel: Some(&mut grads),
            };
            let dh = net.head_backward(&hc, hidden, &dlogits, &mut sink);
            if toks.iter().any(|t| matches!(t, Tok::Novel(_))) {
                let mut dhidden = vec![0.0; toks.len() * d];
                dhidden[(pos + 1) * d..(pos + 2) * d].copy_from_slice(&dh);
                net.encoder_backward(&cache, dhidden, &mut sink);
            }
        }
        Ok((loss * scale, grads))
    }
}

/// Resolves a training target name to its novel id, rejecting base tokens.
pub fn novel_target(ext: &Extension<'_>, name: &str) -> Result<usize> {
    if ext.model().vocabulary().contains(name) {
        return Err(Error::Training(format!(
            "target `{name}` is a base token; only novel tokens can be trained"
        )));
    }
    ext.novel_id(name)
        .ok_or_else(|| Error::UnknownToken(name.to_string()))
}
