//! Experiment configuration: sectioned `key = value` text (a TOML subset).
//! Every field has a default, unknown sections and keys are rejected, and
//! serializing a parsed configuration parses back to an equal value.

use std::path::Path;

use serde::{Deserialize, Serialize};

use satforge_core::backends::{BackendConfig, BackendKind, SpeakerEvalConfig};
use satforge_core::conditioning::{ConditioningSpec, Mechanism, SiteSelection, Transform};
use satforge_core::nn::{Activation, MlpConfig};
use satforge_core::synth::{CorpusConfig, EmbeddingConfig, EmbeddingKind, Split};
use satforge_core::trainer::{SatConfig, SatPolicy, TrainConfig};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seeds: Seeds,
    pub corpus: CorpusSection,
    pub model: ModelSection,
    pub conditioning: ConditioningSection,
    pub embeddings: EmbeddingsSection,
    pub training: TrainingSection,
    pub evaluation: EvaluationSection,
}

/// The only two sources of randomness.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    /// Corpus generation, embedding jitter and trial sampling.
    pub corpus: u64,
    /// Initialization and batch order.
    pub training: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub feat_dim: usize,
    pub num_classes: usize,
    pub num_speakers: usize,
    pub utts_per_speaker: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub frame_period_sec: f64,
    pub train_speakers: usize,
    pub dev_speakers: usize,
    pub eval_speakers: usize,
    pub eval_overlap_speakers: usize,
    pub prototype_mean: f64,
    pub prototype_spread: f64,
    pub speaker_offset_std: f64,
    pub channel_factors: usize,
    pub session_channel_std: f64,
    pub session_corr: f64,
    pub session_utterances: usize,
    pub utterance_channel_std: f64,
    pub noise_min: f64,
    pub noise_max: f64,
    pub p_stay: f64,
    /// Speaker-level mean normalization of the features before training.
    pub cmn: bool,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection::from_core(&CorpusConfig::default(), true)
    }
}

impl CorpusSection {
    pub fn from_core(c: &CorpusConfig, cmn: bool) -> Self {
        CorpusSection {
            feat_dim: c.feat_dim,
            num_classes: c.num_classes,
            num_speakers: c.num_speakers,
            utts_per_speaker: c.utts_per_speaker,
            min_frames: c.min_frames,
            max_frames: c.max_frames,
            frame_period_sec: c.frame_period_sec,
            train_speakers: c.train_speakers,
            dev_speakers: c.dev_speakers,
            eval_speakers: c.eval_speakers,
            eval_overlap_speakers: c.eval_overlap_speakers,
            prototype_mean: c.prototype_mean,
            prototype_spread: c.prototype_spread,
            speaker_offset_std: c.speaker_offset_std,
            channel_factors: c.channel_factors,
            session_channel_std: c.session_channel_std,
            session_corr: c.session_corr,
            session_utterances: c.session_utterances,
            utterance_channel_std: c.utterance_channel_std,
            noise_min: c.noise_min,
            noise_max: c.noise_max,
            p_stay: c.p_stay,
            cmn,
        }
    }

    pub fn to_core(&self) -> CorpusConfig {
        CorpusConfig {
            feat_dim: self.feat_dim,
            num_classes: self.num_classes,
            num_speakers: self.num_speakers,
            utts_per_speaker: self.utts_per_speaker,
            min_frames: self.min_frames,
            max_frames: self.max_frames,
            frame_period_sec: self.frame_period_sec,
            train_speakers: self.train_speakers,
            dev_speakers: self.dev_speakers,
            eval_speakers: self.eval_speakers,
            eval_overlap_speakers: self.eval_overlap_speakers,
            prototype_mean: self.prototype_mean,
            prototype_spread: self.prototype_spread,
            speaker_offset_std: self.speaker_offset_std,
            channel_factors: self.channel_factors,
            session_channel_std: self.session_channel_std,
            session_corr: self.session_corr,
            session_utterances: self.session_utterances,
            utterance_channel_std: self.utterance_channel_std,
            noise_min: self.noise_min,
            noise_max: self.noise_max,
            p_stay: self.p_stay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub activation: String,
    pub batch_norm: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = MlpConfig::desk(1, 1);
        ModelSection {
            hidden: d.hidden,
            activation: d.activation.name().into(),
            batch_norm: d.batch_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditioningSection {
    /// `ctrl-network`, `ctrl-layer`, `ctrl-vector`, `ctrl-variable`, `ctrl-scale` or `concat`.
    pub mechanism: String,
    /// `shift`, `scale`, `shift-scale`, or `auto`: shift-scale for the
    /// control network and shift otherwise.
    pub transform: String,
    /// Control-layer activation.
    pub activation: String,
    /// `input`, `hidden`, or comma-separated site indices.
    pub sites: String,
    pub shared_units: usize,
    pub use_skip: bool,
    pub constant_scale: f64,
    /// `fine-tune-all` or `freeze-main`.
    pub policy: String,
    /// PCA width for embeddings; 0 reduces only when a mechanism needs matching widths.
    pub embedding_pca_dim: usize,
}

impl Default for ConditioningSection {
    fn default() -> Self {
        ConditioningSection {
            mechanism: "ctrl-layer".into(),
            transform: "auto".into(),
            activation: "linear".into(),
            sites: "input".into(),
            shared_units: 100,
            use_skip: true,
            constant_scale: 0.1,
            policy: SatPolicy::FineTuneAll.name().into(),
            embedding_pca_dim: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingsSection {
    /// Embedding used for adaptation and speaker evaluation.
    pub kind: String,
    /// Kinds written by `gen-data`.
    pub generate: Vec<String>,
    pub jitter_full: f64,
    pub jitter_full_noisy: f64,
    pub jitter_speaker: f64,
    pub speaker_reference_frames: usize,
    pub frame_jitter: f64,
}

impl Default for EmbeddingsSection {
    fn default() -> Self {
        let e = EmbeddingConfig::default();
        EmbeddingsSection {
            kind: EmbeddingKind::OracleFull.name().into(),
            generate: EmbeddingKind::ALL.iter().map(|k| k.name().to_string()).collect(),
            jitter_full: e.jitter_full,
            jitter_full_noisy: e.jitter_full_noisy,
            jitter_speaker: e.jitter_speaker,
            speaker_reference_frames: e.speaker_reference_frames,
            frame_jitter: e.frame_jitter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub lr: f64,
    pub lr_stage2: f64,
    pub momentum: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub patience: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingSection {
            lr: t.lr,
            lr_stage2: t.lr_stage2,
            momentum: t.momentum,
            lr_decay: t.lr_decay,
            batch_size: t.batch_size,
            epochs_stage1: t.epochs_stage1,
            epochs_stage2: t.epochs_stage2,
            patience: t.patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    /// Split reported by `eval-asr` alongside dev.
    pub split: String,
    /// Minimum-length thresholds (seconds) for FER and EER curves.
    pub min_length_thresholds: Vec<f64>,
    pub backend: String,
    /// PCA before the backend; 0 disables it.
    pub pca_dim: usize,
    /// LDA width; 0 keeps `min(dim, speakers − 1)`.
    pub lda_dim: usize,
    pub non_target_prop: f64,
    /// Contiguous speaker subsets of at most this many seconds; 0 disables them.
    pub subset_max_sec: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            split: Split::Eval.name().into(),
            min_length_thresholds: vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5],
            backend: BackendKind::LdaPlda.name().into(),
            pca_dim: 0,
            lda_dim: 0,
            non_target_prop: 0.5,
            subset_max_sec: 0.0,
        }
    }
}

fn parse_name<T: std::str::FromStr>(field: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{field}: unknown value `{value}`")))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::parse(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Every field, fully resolved.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("configuration is always representable")
    }

    /// Checks every named choice and every section's own constraints.
    pub fn validate(&self) -> Result<()> {
        self.corpus_config().validate()?;
        self.embedding_config().validate()?;
        self.train_config().validate()?;
        self.mlp_config()?;
        self.sat_config()?;
        self.embedding_kind()?;
        for k in &self.embeddings.generate {
            parse_name::<EmbeddingKind>("embeddings.generate", k)?;
        }
        self.eval_split()?;
        self.speaker_eval_config()?;
        if self
            .evaluation
            .min_length_thresholds
            .iter()
            .any(|t| !t.is_finite() || *t < 0.0)
        {
            return Err(Error::Config(
                "length thresholds must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        self.corpus.to_core()
    }

    pub fn embedding_config(&self) -> EmbeddingConfig {
        let e = &self.embeddings;
        EmbeddingConfig {
            jitter_full: e.jitter_full,
            jitter_full_noisy: e.jitter_full_noisy,
            jitter_speaker: e.jitter_speaker,
            speaker_reference_frames: e.speaker_reference_frames,
            frame_jitter: e.frame_jitter,
        }
    }

    pub fn embedding_kind(&self) -> Result<EmbeddingKind> {
        parse_name("embeddings.kind", &self.embeddings.kind)
    }

    pub fn generated_kinds(&self) -> Vec<EmbeddingKind> {
        self.embeddings.generate.iter().filter_map(|k| k.parse().ok()).collect()
    }

    pub fn mlp_config(&self) -> Result<MlpConfig> {
        Ok(MlpConfig {
            input_dim: self.corpus.feat_dim,
            hidden: self.model.hidden.clone(),
            num_classes: self.corpus.num_classes,
            activation: parse_name::<Activation>("model.activation", &self.model.activation)?,
            batch_norm: self.model.batch_norm,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            lr: t.lr,
            lr_stage2: t.lr_stage2,
            momentum: t.momentum,
            lr_decay: t.lr_decay,
            batch_size: t.batch_size,
            epochs_stage1: t.epochs_stage1,
            epochs_stage2: t.epochs_stage2,
            patience: t.patience,
            seed: self.seeds.training,
        }
    }

    pub fn conditioning_spec(&self) -> Result<ConditioningSpec> {
        let c = &self.conditioning;
        let transform: Transform = match (c.transform.as_str(), c.mechanism.as_str()) {
            ("auto", "ctrl-network") => Transform::ShiftScale,
            ("auto", _) => Transform::Shift,
            (t, _) => parse_name("conditioning.transform", t)?,
        };
        let mechanism = match c.mechanism.as_str() {
            "ctrl-network" => Mechanism::ControlNetwork {
                shared_units: c.shared_units,
                use_skip: c.use_skip,
                transform,
            },
            "ctrl-layer" => Mechanism::ControlLayer {
                activation: parse_name("conditioning.activation", &c.activation)?,
                transform,
            },
            "ctrl-vector" => Mechanism::ControlVector,
            "ctrl-variable" => Mechanism::ControlVariable,
            "ctrl-scale" => Mechanism::ConstantScale { c: c.constant_scale },
            "concat" => Mechanism::Concatenate,
            other => {
                return Err(Error::Config(format!(
                    "conditioning.mechanism: unknown value `{other}`"
                )))
            }
        };
        let sites = match c.sites.as_str() {
            "input" => SiteSelection::InputOnly,
            "hidden" => SiteSelection::AllHidden,
            list => SiteSelection::Layers(
                list.split(',')
                    .map(|s| parse_name::<usize>("conditioning.sites", s.trim()))
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(ConditioningSpec::new(mechanism, sites))
    }

    pub fn sat_config(&self) -> Result<SatConfig> {
        Ok(SatConfig {
            spec: self.conditioning_spec()?,
            policy: parse_name::<SatPolicy>("conditioning.policy", &self.conditioning.policy)?,
            embedding_pca_dim: (self.conditioning.embedding_pca_dim > 0).then_some(self.conditioning.embedding_pca_dim),
        })
    }

    pub fn eval_split(&self) -> Result<Split> {
        parse_name("evaluation.split", &self.evaluation.split)
    }

    pub fn speaker_eval_config(&self) -> Result<SpeakerEvalConfig> {
        let e = &self.evaluation;
        if !(0.0..1.0).contains(&e.non_target_prop) {
            return Err(Error::Config("evaluation.non_target_prop must be in [0, 1)".into()));
        }
        if !(e.subset_max_sec.is_finite() && e.subset_max_sec >= 0.0) {
            return Err(Error::Config("evaluation.subset_max_sec must be non-negative".into()));
        }
        Ok(SpeakerEvalConfig {
            backend: BackendConfig {
                kind: parse_name("evaluation.backend", &e.backend)?,
                pca_dim: (e.pca_dim > 0).then_some(e.pca_dim),
                lda_dim: (e.lda_dim > 0).then_some(e.lda_dim),
            },
            non_target_prop: e.non_target_prop,
            trial_seed: derived_seed(self.seeds.corpus, "trials"),
            subset_max_sec: (e.subset_max_sec > 0.0).then_some(e.subset_max_sec),
        })
    }

    /// Seed of the embedding jitter streams.
    pub fn jitter_seed(&self) -> u64 {
        derived_seed(self.seeds.corpus, "embeddings")
    }
}

/// Independent stream derived from a named seed.
pub fn derived_seed(seed: u64, purpose: &str) -> u64 {
    let mut h = satforge_core::fingerprint::Fnv64::new();
    h.update(&seed.to_le_bytes());
    h.update(purpose.as_bytes());
    h.finish()
}
