//! Seeded synthetic corpus with controllable per-speaker and per-utterance
//! attributes, and oracle embedding extractors over those attributes.
//!
//! Frame `t` of an utterance, with class label `k`, is
//! `x_t = p_k ⊙ c + o + n · g_t`: a class prototype `p_k` scaled by the
//! utterance's channel `c`, shifted by the speaker offset `o`, plus white
//! noise of level `n`. Prototypes share a common mean component, so the
//! channel also moves the utterance mean, which speaker-level mean
//! normalization cannot undo.
//!
//! Log-channel scales are driven by a few latent factors. Each speaker's
//! utterances are recorded in sessions of consecutive utterances; the
//! factors are constant within a session and follow an AR(1) chain across
//! sessions, so nearby utterances of a speaker sound alike.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::conditioning::{Embedding, EmbeddingLevel};
use crate::error::{Error, Result};
use crate::fingerprint::Fnv64;
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
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
    /// Train speakers whose later utterances are moved to the eval split.
    pub eval_overlap_speakers: usize,
    /// Magnitude of the mean component shared by all prototypes.
    pub prototype_mean: f64,
    /// Std of the class-specific prototype deviations.
    pub prototype_spread: f64,
    pub speaker_offset_std: f64,
    pub channel_factors: usize,
    /// Std of the per-dimension log-channel scale due to the session chain.
    pub session_channel_std: f64,
    /// AR(1) coefficient of the channel factors between consecutive sessions.
    pub session_corr: f64,
    /// Consecutive utterances of a speaker that share one session.
    pub session_utterances: usize,
    /// Std of the per-dimension log-channel scale drawn afresh per utterance.
    pub utterance_channel_std: f64,
    pub noise_min: f64,
    pub noise_max: f64,
    /// Self-loop probability of the label Markov chain.
    pub p_stay: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            feat_dim: 20,
            num_classes: 24,
            num_speakers: 40,
            utts_per_speaker: 30,
            min_frames: 50,
            max_frames: 400,
            frame_period_sec: 0.01,
            train_speakers: 28,
            dev_speakers: 6,
            eval_speakers: 6,
            eval_overlap_speakers: 0,
            prototype_mean: 3.0,
            prototype_spread: 1.0,
            speaker_offset_std: 0.03,
            channel_factors: 3,
            session_channel_std: 0.5,
            session_corr: 0.3,
            session_utterances: 13,
            utterance_channel_std: 0.05,
            noise_min: 0.5,
            noise_max: 1.5,
            p_stay: 0.9,
        }
    }
}

impl CorpusConfig {
    /// A corpus dominated by additive speaker offsets with no channel
    /// variation.
    pub fn additive() -> Self {
        CorpusConfig {
            speaker_offset_std: 1.5,
            session_channel_std: 0.0,
            utterance_channel_std: 0.0,
            ..CorpusConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.num_classes < 2 {
            return bad("need at least 2 classes");
        }
        if self.num_speakers < 2 {
            return bad("need at least 2 speakers");
        }
        if self.feat_dim < 2 {
            return bad("need at least 2 feature dimensions");
        }
        if self.utts_per_speaker == 0 {
            return bad("need at least 1 utterance per speaker");
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad("frame range must satisfy 1 <= min_frames <= max_frames");
        }
        if self.train_speakers + self.dev_speakers + self.eval_speakers != self.num_speakers {
            return bad("split sizes must add up to num_speakers");
        }
        if self.train_speakers == 0 {
            return bad("train split is empty");
        }
        if self.eval_overlap_speakers > self.train_speakers {
            return bad("more overlap speakers than train speakers");
        }
        if self.eval_overlap_speakers > 0 && self.utts_per_speaker < 2 {
            return bad("overlap speakers need at least 2 utterances");
        }
        if !(0.0..=1.0).contains(&self.p_stay) || !(0.0..=1.0).contains(&self.session_corr) {
            return bad("probabilities must lie in [0, 1]");
        }
        if self.session_utterances == 0 {
            return bad("sessions need at least 1 utterance");
        }
        if self.channel_factors == 0 {
            return bad("need at least 1 channel factor");
        }
        let nonneg = [
            self.prototype_mean,
            self.prototype_spread,
            self.speaker_offset_std,
            self.session_channel_std,
            self.utterance_channel_std,
            self.noise_min,
        ];
        if nonneg.iter().any(|v| !v.is_finite() || *v < 0.0)
            || self.noise_max < self.noise_min
            || !self.noise_max.is_finite()
            || self.frame_period_sec.is_nan()
            || self.frame_period_sec <= 0.0
        {
            return bad("scales must be finite and non-negative, noise_min <= noise_max");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Dev,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Eval => "eval",
        }
    }
}

impl core::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "eval" => Ok(Split::Eval),
            other => Err(Error::UnknownKind(other.into())),
        }
    }
}

/// Attributes that generated one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeLatents {
    pub speaker_id: usize,
    /// Constant across all utterances of the speaker.
    pub speaker_offset: Vec<f32>,
    /// Positive, drawn per utterance.
    pub channel_scale: Vec<f32>,
    pub noise_level: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    /// Unique across the corpus, e.g. `spk007-012`.
    pub id: String,
    pub speaker: usize,
    /// Position among the speaker's utterances in recording order.
    pub index: usize,
    pub frames: Matrix<f32>,
    pub labels: Vec<usize>,
    pub latents: AttributeLatents,
    pub duration_sec: f64,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub seed: u64,
    /// `num_classes × feat_dim`
    pub prototypes: Matrix<f32>,
    /// Offset of every speaker, indexed by speaker id.
    pub speaker_offsets: Vec<Vec<f32>>,
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub eval: Vec<Utterance>,
    /// Whether speaker-level mean normalization has been applied.
    pub cmn_applied: bool,
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Utterance] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Eval => &self.eval,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<Utterance> {
        match split {
            Split::Train => &mut self.train,
            Split::Dev => &mut self.dev,
            Split::Eval => &mut self.eval,
        }
    }

    /// All utterances tagged with their split, in split order.
    pub fn utterances(&self) -> impl Iterator<Item = (Split, &Utterance)> {
        Split::ALL
            .into_iter()
            .flat_map(move |s| self.split(s).iter().map(move |u| (s, u)))
    }

    /// Sorted, de-duplicated speaker ids of a split.
    pub fn speakers(&self, split: Split) -> Vec<usize> {
        let mut v: Vec<usize> = self.split(split).iter().map(|u| u.speaker).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn total_frames(&self, split: Split) -> usize {
        self.split(split).iter().map(Utterance::num_frames).sum()
    }

    /// Applies speaker-level mean normalization to every split.
    pub fn apply_cmn(&mut self) {
        for s in Split::ALL {
            cmn(self.split_mut(s));
        }
        self.cmn_applied = true;
    }

    /// Stable hash of everything that determines the corpus contents.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::new();
        h.update(format!("{:?}|{}|{}", self.config, self.seed, self.cmn_applied).as_bytes());
        h.finish()
    }
}

/// Generates a corpus that is a pure function of `(config, seed)`.
pub fn gen_corpus(config: &CorpusConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, k, f) = (config.feat_dim, config.num_classes, config.channel_factors);

    let common: Vec<f64> = (0..d)
        .map(|_| config.prototype_mean * rng.random_range(0.5..1.5))
        .collect();
    let prototypes = Matrix::from_fn(k, d, |_, j| {
        (common[j] + config.prototype_spread * normal(&mut rng)) as f32
    });
    // Unit-variance log-scale loadings per dimension.
    let loadings = Matrix::<f64>::from_fn(d, f, |_, _| normal(&mut rng) / Float::sqrt(f as f64));

    let speaker_offsets: Vec<Vec<f32>> = (0..config.num_speakers)
        .map(|_| {
            (0..d)
                .map(|_| (config.speaker_offset_std * normal(&mut rng)) as f32)
                .collect()
        })
        .collect();

    let mut corpus = Corpus {
        config: config.clone(),
        seed,
        prototypes,
        speaker_offsets,
        train: Vec::new(),
        dev: Vec::new(),
        eval: Vec::new(),
        cmn_applied: false,
    };

    let rho = config.session_corr;
    let innovation = Float::sqrt(1.0 - rho * rho);
    for spk in 0..config.num_speakers {
        let split = if spk < config.train_speakers {
            Split::Train
        } else if spk < config.train_speakers + config.dev_speakers {
            Split::Dev
        } else {
            Split::Eval
        };
        let mut session: Vec<f64> = (0..f).map(|_| normal(&mut rng)).collect();
        for index in 0..config.utts_per_speaker {
            if index > 0 && index % config.session_utterances == 0 {
                for z in session.iter_mut() {
                    *z = rho * *z + innovation * normal(&mut rng);
                }
            }
            let mut channel = vec![0.0f32; d];
            for (j, c) in channel.iter_mut().enumerate() {
                let session_part: f64 = (0..f).map(|q| loadings.get(j, q) * session[q]).sum();
                let log_c = config.session_channel_std * session_part + config.utterance_channel_std * normal(&mut rng);
                *c = Float::exp(log_c) as f32;
            }
            let noise_level = rng.random_range(config.noise_min..=config.noise_max) as f32;
            let latents = AttributeLatents {
                speaker_id: spk,
                speaker_offset: corpus.speaker_offsets[spk].clone(),
                channel_scale: channel,
                noise_level,
            };
            let frames_n = rng.random_range(config.min_frames..=config.max_frames);
            let utt = synth_utterance(&corpus.prototypes, latents, index, frames_n, config, &mut rng);
            let dest = if split == Split::Train
                && spk < config.eval_overlap_speakers
                && index >= config.utts_per_speaker / 2
            {
                Split::Eval
            } else {
                split
            };
            corpus.split_mut(dest).push(utt);
        }
    }
    Ok(corpus)
}

fn synth_utterance(
    prototypes: &Matrix<f32>,
    latents: AttributeLatents,
    index: usize,
    frames_n: usize,
    config: &CorpusConfig,
    rng: &mut ChaCha8Rng,
) -> Utterance {
    let (d, k) = (config.feat_dim, config.num_classes);
    let mut labels = Vec::with_capacity(frames_n);
    let mut label = rng.random_range(0..k);
    for t in 0..frames_n {
        if t > 0 && !rng.random_bool(config.p_stay) {
            label = rng.random_range(0..k);
        }
        labels.push(label);
    }
    let mut frames = Matrix::zeros(frames_n, d);
    for (t, &label) in labels.iter().enumerate() {
        let p = prototypes.row(label);
        let row = frames.row_mut(t);
        for j in 0..d {
            let g = normal(rng) as f32;
            row[j] = p[j] * latents.channel_scale[j] + latents.speaker_offset[j] + latents.noise_level * g;
        }
    }
    Utterance {
        id: format!("spk{:03}-{:03}", latents.speaker_id, index),
        speaker: latents.speaker_id,
        index,
        frames,
        labels,
        duration_sec: frames_n as f64 * config.frame_period_sec,
        latents,
    }
}

/// Subtracts each speaker's mean frame (over all of its utterances in
/// `utterances`) from every frame of that speaker.
pub fn cmn(utterances: &mut [Utterance]) {
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for u in utterances.iter() {
        let entry = sums.entry(u.speaker).or_insert_with(|| (vec![0.0; u.frames.cols()], 0));
        for t in 0..u.frames.rows() {
            for (s, &v) in entry.0.iter_mut().zip(u.frames.row(t)) {
                *s += v as f64;
            }
        }
        entry.1 += u.frames.rows();
    }
    let means: BTreeMap<usize, Vec<f32>> = sums
        .into_iter()
        .map(|(spk, (s, n))| (spk, s.iter().map(|v| (v / n as f64) as f32).collect()))
        .collect();
    for u in utterances.iter_mut() {
        let mean = &means[&u.speaker];
        for t in 0..u.frames.rows() {
            for (v, m) in u.frames.row_mut(t).iter_mut().zip(mean) {
                *v -= m;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EmbeddingKind {
    /// Speaker offset, channel and noise level with small jitter.
    OracleFull,
    /// Speaker offset only, with jitter shrinking with utterance length.
    OracleSpeaker,
    /// `OracleFull` with large jitter.
    OracleFullNoisy,
    /// Causal running estimate of `OracleFull`, one row per frame.
    OracleFrame,
}

impl EmbeddingKind {
    pub const ALL: [EmbeddingKind; 4] = [
        EmbeddingKind::OracleFull,
        EmbeddingKind::OracleSpeaker,
        EmbeddingKind::OracleFullNoisy,
        EmbeddingKind::OracleFrame,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EmbeddingKind::OracleFull => "oracle_full",
            EmbeddingKind::OracleSpeaker => "oracle_speaker",
            EmbeddingKind::OracleFullNoisy => "oracle_full_noisy",
            EmbeddingKind::OracleFrame => "oracle_frame",
        }
    }

    pub fn level(self) -> EmbeddingLevel {
        match self {
            EmbeddingKind::OracleFrame => EmbeddingLevel::Frame,
            _ => EmbeddingLevel::Utterance,
        }
    }

    /// Embedding width for features of width `feat_dim`.
    pub fn dim(self, feat_dim: usize) -> usize {
        match self {
            EmbeddingKind::OracleSpeaker => feat_dim,
            _ => 2 * feat_dim + 1,
        }
    }
}

impl core::fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for EmbeddingKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EmbeddingKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownKind(s.into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingConfig {
    pub jitter_full: f64,
    pub jitter_full_noisy: f64,
    /// Jitter of `OracleSpeaker` for an utterance of `speaker_reference_frames` frames.
    pub jitter_speaker: f64,
    pub speaker_reference_frames: usize,
    /// Std of the per-frame attribute observation behind `OracleFrame`.
    pub frame_jitter: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            jitter_full: 0.05,
            jitter_full_noisy: 0.3,
            jitter_speaker: 0.01,
            speaker_reference_frames: 200,
            frame_jitter: 1.0,
        }
    }
}

impl EmbeddingConfig {
    /// Every jitter set to zero: embeddings are the exact latents.
    pub fn exact() -> Self {
        EmbeddingConfig {
            jitter_full: 0.0,
            jitter_full_noisy: 0.0,
            jitter_speaker: 0.0,
            speaker_reference_frames: 200,
            frame_jitter: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.jitter_full,
            self.jitter_full_noisy,
            self.jitter_speaker,
            self.frame_jitter,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) || self.speaker_reference_frames == 0 {
            return Err(Error::InvalidConfig(
                "embedding jitters must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// `[speaker_offset | channel_scale | noise_level]`
pub fn attribute_vector(latents: &AttributeLatents) -> Vec<f32> {
    let mut v = latents.speaker_offset.clone();
    v.extend_from_slice(&latents.channel_scale);
    v.push(latents.noise_level);
    v
}

fn jitter_rng(jitter_seed: u64, kind: EmbeddingKind, utt_id: &str) -> ChaCha8Rng {
    let mut h = Fnv64::new();
    h.update(&jitter_seed.to_le_bytes());
    h.update(kind.name().as_bytes());
    h.update(utt_id.as_bytes());
    ChaCha8Rng::seed_from_u64(h.finish())
}

fn jittered<R: Rng>(base: &[f32], sigma: f64, rng: &mut R) -> Vec<f32> {
    base.iter().map(|&v| (v as f64 + sigma * normal(rng)) as f32).collect()
}

/// Oracle embedding of `utt`. The jitter stream depends only on
/// `(jitter_seed, kind, utt.id)`.
pub fn oracle_embedding(utt: &Utterance, kind: EmbeddingKind, config: &EmbeddingConfig, jitter_seed: u64) -> Embedding {
    let mut rng = jitter_rng(jitter_seed, kind, &utt.id);
    let vectors = match kind {
        EmbeddingKind::OracleFull => {
            Matrix::row_vector(&jittered(&attribute_vector(&utt.latents), config.jitter_full, &mut rng))
        }
        EmbeddingKind::OracleFullNoisy => Matrix::row_vector(&jittered(
            &attribute_vector(&utt.latents),
            config.jitter_full_noisy,
            &mut rng,
        )),
        EmbeddingKind::OracleSpeaker => {
            let ratio = config.speaker_reference_frames as f64 / utt.num_frames() as f64;
            let sigma = config.jitter_speaker * Float::sqrt(ratio);
            Matrix::row_vector(&jittered(&utt.latents.speaker_offset, sigma, &mut rng))
        }
        EmbeddingKind::OracleFrame => {
            let draws = frame_observations(utt, config, &mut rng);
            let mut out = Matrix::zeros(draws.rows(), draws.cols());
            let mut acc = vec![0.0f64; draws.cols()];
            for t in 0..draws.rows() {
                for (a, &v) in acc.iter_mut().zip(draws.row(t)) {
                    *a += v;
                }
                for (o, a) in out.row_mut(t).iter_mut().zip(&acc) {
                    *o = (a / (t + 1) as f64) as f32;
                }
            }
            out
        }
    };
    Embedding {
        vectors,
        level: kind.level(),
        kind: kind.name().into(),
    }
}

/// Noisy per-frame observations of the attribute vector, one row per frame.
fn frame_observations<R: Rng>(utt: &Utterance, config: &EmbeddingConfig, rng: &mut R) -> Matrix<f64> {
    let base = attribute_vector(&utt.latents);
    Matrix::from_fn(utt.num_frames(), base.len(), |_, j| {
        base[j] as f64 + config.frame_jitter * normal(rng)
    })
}

/// Utterance-level attribute estimate from the first `frames_seen` frames of
/// `utt`, consistent with row `frames_seen - 1` of the `OracleFrame` embedding.
pub fn partial_attribute_estimate(
    utt: &Utterance,
    frames_seen: usize,
    config: &EmbeddingConfig,
    jitter_seed: u64,
) -> Result<Vec<f32>> {
    if frames_seen == 0 || frames_seen > utt.num_frames() {
        return Err(Error::InvalidConfig(format!(
            "frames_seen must be in 1..={}",
            utt.num_frames()
        )));
    }
    let mut rng = jitter_rng(jitter_seed, EmbeddingKind::OracleFrame, &utt.id);
    let draws = frame_observations(utt, config, &mut rng);
    let head = draws.select_rows(&(0..frames_seen).collect::<Vec<_>>());
    Ok(head.col_means().into_iter().map(|v| v as f32).collect())
}

/// Embeddings of `kind` for every utterance of the corpus, keyed by utterance id.
pub fn embed_corpus(
    corpus: &Corpus,
    kind: EmbeddingKind,
    config: &EmbeddingConfig,
    jitter_seed: u64,
) -> BTreeMap<String, Embedding> {
    corpus
        .utterances()
        .map(|(_, u)| (u.id.clone(), oracle_embedding(u, kind, config, jitter_seed)))
        .collect()
}

/// Indices into an utterance list, divided into enrollment and test halves.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EnrollTestSplit {
    pub enroll: Vec<usize>,
    pub test: Vec<usize>,
    /// Speakers with a single utterance; left out of both halves.
    pub excluded_speakers: Vec<usize>,
}

/// Alternates each speaker's utterances (in list order) between enrollment
/// and test, so every kept speaker appears in both halves.
pub fn split_enroll_test(utterances: &[Utterance]) -> EnrollTestSplit {
    let mut by_speaker: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, u) in utterances.iter().enumerate() {
        by_speaker.entry(u.speaker).or_default().push(i);
    }
    let mut out = EnrollTestSplit::default();
    for (spk, idx) in by_speaker {
        if idx.len() < 2 {
            out.excluded_speakers.push(spk);
            continue;
        }
        for (pos, i) in idx.into_iter().enumerate() {
            if pos % 2 == 0 {
                out.enroll.push(i);
            } else {
                out.test.push(i);
            }
        }
    }
    out.enroll.sort_unstable();
    out.test.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> CorpusConfig {
        CorpusConfig {
            num_speakers: 4,
            utts_per_speaker: 4,
            min_frames: 20,
            max_frames: 40,
            train_speakers: 2,
            dev_speakers: 1,
            eval_speakers: 1,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn attributes_off_reproduce_prototypes() {
        let cfg = CorpusConfig {
            speaker_offset_std: 0.0,
            session_channel_std: 0.0,
            utterance_channel_std: 0.0,
            noise_min: 0.0,
            noise_max: 0.0,
            ..tiny()
        };
        let c = gen_corpus(&cfg, 3).unwrap();
        for (_, u) in c.utterances() {
            for (t, &k) in u.labels.iter().enumerate() {
                assert_eq!(u.frames.row(t), c.prototypes.row(k));
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(gen_corpus(&tiny(), 9).unwrap(), gen_corpus(&tiny(), 9).unwrap());
        assert_ne!(
            gen_corpus(&tiny(), 9).unwrap().train,
            gen_corpus(&tiny(), 10).unwrap().train
        );
    }

    #[test]
    fn degenerate_configs_rejected() {
        let cases = [
            CorpusConfig {
                num_classes: 1,
                ..tiny()
            },
            CorpusConfig {
                num_speakers: 0,
                train_speakers: 0,
                dev_speakers: 0,
                eval_speakers: 0,
                ..tiny()
            },
            CorpusConfig { feat_dim: 1, ..tiny() },
            CorpusConfig {
                train_speakers: 3,
                ..tiny()
            },
            CorpusConfig {
                min_frames: 0,
                ..tiny()
            },
        ];
        for cfg in cases {
            assert!(matches!(gen_corpus(&cfg, 0), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn labels_and_durations_are_consistent() {
        let c = gen_corpus(&tiny(), 1).unwrap();
        for (_, u) in c.utterances() {
            assert!(u.num_frames() >= 20 && u.num_frames() <= 40);
            assert_eq!(u.labels.len(), u.num_frames());
            assert!(u.labels.iter().all(|&l| l < 24));
            assert!((u.duration_sec - u.num_frames() as f64 * 0.01).abs() < 1e-12);
            assert!(u.latents.channel_scale.iter().all(|&s| s > 0.0));
            assert_eq!(u.latents.speaker_offset, c.speaker_offsets[u.speaker]);
        }
        assert_eq!(c.speakers(Split::Train), vec![0, 1]);
        assert_eq!(c.speakers(Split::Eval), vec![3]);
    }

    #[test]
    fn overlap_moves_late_utterances_to_eval() {
        let cfg = CorpusConfig {
            eval_overlap_speakers: 1,
            ..tiny()
        };
        let c = gen_corpus(&cfg, 1).unwrap();
        assert_eq!(c.speakers(Split::Eval), vec![0, 3]);
        assert_eq!(c.train.iter().filter(|u| u.speaker == 0).count(), 2);
    }

    #[test]
    fn speaker_means_track_offsets() {
        // Without channel variation the expected frame mean of a speaker is
        // the mean prototype (under the label distribution) plus its offset.
        let cfg = CorpusConfig {
            feat_dim: 4,
            num_classes: 3,
            num_speakers: 6,
            utts_per_speaker: 60,
            min_frames: 200,
            max_frames: 200,
            train_speakers: 6,
            dev_speakers: 0,
            eval_speakers: 0,
            speaker_offset_std: 1.0,
            session_channel_std: 0.0,
            utterance_channel_std: 0.0,
            noise_min: 1.0,
            noise_max: 1.0,
            p_stay: 0.0,
            ..CorpusConfig::default()
        };
        let c = gen_corpus(&cfg, 5).unwrap();
        for spk in 0..6 {
            let utts: Vec<&Utterance> = c.train.iter().filter(|u| u.speaker == spk).collect();
            let n: usize = utts.iter().map(|u| u.num_frames()).sum();
            assert!(n >= 10_000);
            for j in 0..4 {
                let mut sum = 0.0f64;
                let mut expected = 0.0f64;
                for u in &utts {
                    for t in 0..u.num_frames() {
                        sum += u.frames.get(t, j) as f64;
                        expected += (c.prototypes.get(u.labels[t], j) + c.speaker_offsets[spk][j]) as f64;
                    }
                }
                let stderr = 1.0 / (n as f64).sqrt();
                assert!(((sum - expected) / n as f64).abs() < 3.0 * stderr, "spk {spk} dim {j}");
            }
        }
    }

    fn speaker_mean(utts: &[Utterance], spk: usize) -> Vec<f64> {
        let mut s = vec![0.0; utts[0].frames.cols()];
        let mut n = 0;
        for u in utts.iter().filter(|u| u.speaker == spk) {
            for t in 0..u.num_frames() {
                for (a, &v) in s.iter_mut().zip(u.frames.row(t)) {
                    *a += v as f64;
                }
            }
            n += u.num_frames();
        }
        s.iter().map(|v| v / n as f64).collect()
    }

    #[test]
    fn cmn_zero_mean_and_idempotent() {
        let mut c = gen_corpus(&tiny(), 2).unwrap();
        c.apply_cmn();
        for spk in c.speakers(Split::Train) {
            assert!(speaker_mean(&c.train, spk).iter().all(|m| m.abs() < 1e-5));
        }
        let once = c.train.clone();
        cmn(&mut c.train);
        for (a, b) in once.iter().zip(&c.train) {
            for (x, y) in a.frames.data().iter().zip(b.frames.data()) {
                assert!((x - y).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn cmn_removes_offset_on_balanced_noise_free_corpus() {
        // Every utterance cycles through all classes equally often, so the
        // speaker mean is the class-average prototype plus the offset.
        let cfg = CorpusConfig {
            speaker_offset_std: 2.0,
            session_channel_std: 0.0,
            utterance_channel_std: 0.0,
            noise_min: 0.0,
            noise_max: 0.0,
            ..tiny()
        };
        let mut c = gen_corpus(&cfg, 4).unwrap();
        let k = cfg.num_classes;
        for u in c.train.iter_mut() {
            let frames = 2 * k;
            u.labels = (0..frames).map(|t| t % k).collect();
            u.frames = Matrix::from_fn(frames, cfg.feat_dim, |t, j| {
                c.prototypes.get(t % k, j) + u.latents.speaker_offset[j]
            });
        }
        cmn(&mut c.train);
        let centre = c.prototypes.col_means();
        for u in &c.train {
            for t in 0..u.num_frames() {
                for j in 0..cfg.feat_dim {
                    let want = c.prototypes.get(t % k, j) - centre[j];
                    assert!((u.frames.get(t, j) - want).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn exact_oracles() {
        let c = gen_corpus(&tiny(), 6).unwrap();
        let exact = EmbeddingConfig::exact();
        let spk0: Vec<&Utterance> = c.train.iter().filter(|u| u.speaker == 0).collect();
        let a = oracle_embedding(spk0[0], EmbeddingKind::OracleSpeaker, &exact, 1);
        for u in &spk0[1..] {
            assert_eq!(
                oracle_embedding(u, EmbeddingKind::OracleSpeaker, &exact, 1).vectors,
                a.vectors
            );
        }
        let full0 = oracle_embedding(spk0[0], EmbeddingKind::OracleFull, &exact, 1);
        let full1 = oracle_embedding(spk0[1], EmbeddingKind::OracleFull, &exact, 1);
        assert_ne!(full0.vectors, full1.vectors);
        assert_eq!(full0.dim(), 2 * 20 + 1);

        let mut twin = spk0[1].clone();
        twin.latents.channel_scale = spk0[0].latents.channel_scale.clone();
        twin.latents.noise_level = spk0[0].latents.noise_level;
        assert_eq!(
            oracle_embedding(&twin, EmbeddingKind::OracleFull, &exact, 1).vectors,
            full0.vectors
        );
    }

    #[test]
    fn jitter_is_keyed_by_utterance() {
        let c = gen_corpus(&tiny(), 6).unwrap();
        let cfg = EmbeddingConfig::default();
        let u = &c.train[0];
        let a = oracle_embedding(u, EmbeddingKind::OracleFullNoisy, &cfg, 3);
        assert_eq!(a, oracle_embedding(u, EmbeddingKind::OracleFullNoisy, &cfg, 3));
        assert_ne!(a, oracle_embedding(u, EmbeddingKind::OracleFullNoisy, &cfg, 4));
        let table = embed_corpus(&c, EmbeddingKind::OracleFullNoisy, &cfg, 3);
        assert_eq!(table[&u.id], a);
        assert_eq!(table.len(), c.train.len() + c.dev.len() + c.eval.len());
    }

    #[test]
    fn frame_oracle_matches_partial_estimate() {
        let c = gen_corpus(&tiny(), 8).unwrap();
        let cfg = EmbeddingConfig::default();
        let u = &c.dev[0];
        let e = oracle_embedding(u, EmbeddingKind::OracleFrame, &cfg, 2);
        assert_eq!(e.vectors.rows(), u.num_frames());
        assert_eq!(e.level, EmbeddingLevel::Frame);
        for t in [1, 2, 7, u.num_frames()] {
            let want = partial_attribute_estimate(u, t, &cfg, 2).unwrap();
            for (a, b) in e.vectors.row(t - 1).iter().zip(&want) {
                assert!((a - b).abs() < 1e-5);
            }
        }
        assert!(partial_attribute_estimate(u, 0, &cfg, 2).is_err());
    }

    #[test]
    fn frame_oracle_converges() {
        let cfg = CorpusConfig {
            min_frames: 400,
            max_frames: 400,
            ..tiny()
        };
        let emb = EmbeddingConfig::default();
        let checkpoints = [10usize, 40, 160, 400];
        let mut improving = 0;
        for seed in 0..3 {
            let c = gen_corpus(&cfg, seed).unwrap();
            let mut err = [0.0f64; 4];
            for u in &c.train {
                let e = oracle_embedding(u, EmbeddingKind::OracleFrame, &emb, seed);
                let truth = attribute_vector(&u.latents);
                for (slot, &t) in checkpoints.iter().enumerate() {
                    err[slot] += e
                        .vectors
                        .row(t - 1)
                        .iter()
                        .zip(&truth)
                        .map(|(a, b)| ((a - b) as f64).powi(2))
                        .sum::<f64>()
                        .sqrt();
                }
            }
            if err.windows(2).all(|w| w[1] <= w[0]) {
                improving += 1;
            }
        }
        assert!(improving >= 2);
    }

    #[test]
    fn speaker_oracle_jitter_shrinks_with_length() {
        let c = gen_corpus(&tiny(), 6).unwrap();
        let cfg = EmbeddingConfig {
            jitter_speaker: 1.0,
            speaker_reference_frames: 1,
            ..EmbeddingConfig::default()
        };
        let mut short = c.train[0].clone();
        short.frames = short.frames.select_rows(&[0]);
        let mut long = short.clone();
        long.frames = Matrix::zeros(10_000, 20);
        let dev = |u: &Utterance| {
            let e = oracle_embedding(u, EmbeddingKind::OracleSpeaker, &cfg, 0);
            e.vectors
                .data()
                .iter()
                .zip(&u.latents.speaker_offset)
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
        };
        assert!(dev(&long) < dev(&short) / 100.0);
    }

    #[test]
    fn enroll_test_partition() {
        let c = gen_corpus(&tiny(), 1).unwrap();
        let mut utts = c.train.clone();
        let s = split_enroll_test(&utts);
        assert_eq!(s.enroll.len(), 4);
        assert_eq!(s.test.len(), 4);
        let mut all: Vec<usize> = s.enroll.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..utts.len()).collect::<Vec<_>>());
        for spk in [0, 1] {
            assert!(s.enroll.iter().any(|&i| utts[i].speaker == spk));
            assert!(s.test.iter().any(|&i| utts[i].speaker == spk));
        }
        utts.truncate(5);
        let s = split_enroll_test(&utts);
        assert_eq!(s.excluded_speakers, vec![1]);
        assert_eq!(s.enroll.len() + s.test.len(), 4);
    }

    #[test]
    fn names_round_trip() {
        for k in EmbeddingKind::ALL {
            assert_eq!(k.name().parse::<EmbeddingKind>().unwrap(), k);
        }
        for s in Split::ALL {
            assert_eq!(s.name().parse::<Split>().unwrap(), s);
        }
        assert!("ivector".parse::<EmbeddingKind>().is_err());
    }
}
