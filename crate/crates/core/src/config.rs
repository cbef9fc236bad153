//! Run configuration: one TOML file with a section per pipeline stage.
//! Every field has a default and unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptive::AdaptiveConfig;
use crate::augment::AugmentPolicy;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::features::{HOP, L_MAX, N_FFT};
use crate::flow::{GuidanceWeights, SamplerConfig};
use crate::model::{ModelConfig, TrainSchedule};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Number of scenes rendered by `synth`.
    pub n: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self { n: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub l_max: usize,
    /// Only the 1024-point transform with hop 256 is supported.
    pub n_fft: usize,
    pub hop: usize,
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self {
            l_max: L_MAX,
            n_fft: N_FFT,
            hop: HOP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream in the run.
    pub seed: u64,
    pub corpus: CorpusSection,
    pub features: FeatureSection,
    pub augment: AugmentPolicy,
    pub model: ModelConfig,
    pub train: TrainSchedule,
    pub sampler: SamplerConfig,
    pub guidance: GuidanceWeights,
    pub adaptive: AdaptiveConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: CorpusSection::default(),
            features: FeatureSection::default(),
            augment: AugmentPolicy::default(),
            model: ModelConfig::default(),
            train: TrainSchedule::default(),
            sampler: SamplerConfig::default(),
            guidance: GuidanceWeights::default(),
            adaptive: AdaptiveConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.features.n_fft != N_FFT || self.features.hop != HOP {
            return bad(format!("only n_fft = {N_FFT} with hop = {HOP} is supported"));
        }
        if self.corpus.n == 0 {
            return bad("corpus.n must be >= 1".into());
        }
        if self.features.l_max != self.model.l_max || self.augment.l_max() != self.model.l_max {
            return bad(format!(
                "features.l_max ({}), augment levels ({}) and model.l_max ({}) must agree",
                self.features.l_max,
                self.augment.l_max(),
                self.model.l_max
            ));
        }
        if self.adaptive.l_max > self.model.l_max {
            return bad("adaptive.l_max exceeds model.l_max".into());
        }
        if self.sampler.n_steps == 0 {
            return bad("sampler.n_steps must be >= 1".into());
        }
        self.augment.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.guidance.validate()?;
        self.adaptive.validate()
    }

    /// Hex SHA-256 of the canonical JSON form with the root seed cleared;
    /// artifacts record the seed separately.
    pub fn fingerprint(&self) -> String {
        let canon = serde_json::to_vec(&Self { seed: 0, ..self.clone() }).expect("config serializes");
        hex::encode(Sha256::digest(&canon))
    }

    pub fn corpus_seed(&self) -> u64 {
        derive_seed(self.seed, "corpus")
    }

    pub fn model_seed(&self) -> u64 {
        derive_seed(self.seed, "model")
    }

    pub fn train_schedule(&self) -> TrainSchedule {
        TrainSchedule {
            seed: derive_seed(self.seed, "training"),
            ..self.train.clone()
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            seed: derive_seed(self.seed, "sampling"),
            ..self.sampler
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            seed: derive_seed(self.seed, "eval"),
            ..self.eval.clone()
        }
    }
}
