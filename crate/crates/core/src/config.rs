//! The JSON run configuration: architecture, pretraining and experiment
//! settings in one file.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refmodel::{ModelConfig, PretrainConfig};
use crate::runner::{ExperimentConfig, StatsConfig};
use crate::synthcorpus::Grammar;
use crate::finetune::FineTuneConfig;
use crate::probe::ProbeConfig;

/// Model shape; the vocabulary comes from the grammar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub n_layers: usize,
    pub n_heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub max_sequence_length: usize,
    pub mlm_mask_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub sentences: usize,
    /// Seed for sentence sampling; the grammar itself uses the run seed.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Architecture,
    pub pretrain: PretrainConfig,
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub finetune: FineTuneConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub stats: StatsConfig,
}

impl RunConfig {
    /// The desk-scale reference configuration.
    pub fn demo() -> Self {
        RunConfig {
            model: Architecture {
                n_layers: 2,
                n_heads: 4,
                model_dim: 64,
                ffn_dim: 128,
                max_sequence_length: 16,
                mlm_mask_rate: 0.15,
            },
            pretrain: PretrainConfig {
                epochs: 20,
                batch_size: 32,
                learning_rate: 4e-3,
                weight_decay: 3.0,
                embedding_std: 0.02,
                embedding_scale: 0.3,
            },
            corpus: CorpusConfig { sentences: 5000, seed: 2 },
            master_seed: 0,
            finetune: FineTuneConfig::default(),
            probe: ProbeConfig::default(),
            stats: StatsConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.corpus.sentences == 0 {
            return Err(Error::Config("corpus.sentences must be positive".into()));
        }
        self.pretrain.validate()?;
        self.experiment().validate()
    }

    pub fn model_config(&self, grammar: &Grammar) -> Result<ModelConfig> {
        let a = &self.model;
        let cfg = ModelConfig {
            n_layers: a.n_layers,
            n_heads: a.n_heads,
            model_dim: a.model_dim,
            ffn_dim: a.ffn_dim,
            max_sequence_length: a.max_sequence_length,
            vocabulary: grammar.vocabulary()?,
            mlm_mask_rate: a.mlm_mask_rate,
            closed_class_words: grammar.spec.closed_class_words.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            master_seed: self.master_seed,
            finetune: self.finetune.clone(),
            probe: self.probe.clone(),
            stats: self.stats.clone(),
        }
    }
}
