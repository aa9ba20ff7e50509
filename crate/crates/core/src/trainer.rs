//! Speaker-independent training, two-stage speaker-adaptive training and
//! frame-error-rate evaluation.
//!
//! Frame error rate (misclassified frames over all frames) stands in for
//! word error rate throughout; no number produced here is a word error rate.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backends::pca_fit;
use crate::conditioning::{ConditioningSpec, Embedding};
use crate::error::{Error, Result};
use crate::fingerprint::of_debug;
use crate::matrix::Matrix;
use crate::nn::{cross_entropy_loss, Mlp, MlpConfig, Mode, ParamGroup, Sgd};
use crate::synth::{Corpus, Split, Utterance};

/// Embeddings keyed by utterance id.
pub type EmbeddingTable = BTreeMap<String, Embedding>;

/// Lower edges, in seconds, of the per-length buckets of an [`EvalReport`].
pub const LENGTH_BUCKET_EDGES_SEC: [f64; 4] = [0.0, 1.0, 2.0, 3.0];

/// Frames per forward pass during evaluation.
pub const EVAL_BATCH_FRAMES: usize = 4096;

const STAGE1_SALT: u64 = 0x51_0001;
const STAGE2_SALT: u64 = 0x5a_7002;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Stage-one learning rate.
    pub lr: f64,
    /// Stage-two learning rate.
    pub lr_stage2: f64,
    pub momentum: f64,
    /// Multiplier applied to the learning rate after an epoch without dev improvement.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    /// Consecutive epochs without dev improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            lr_stage2: 0.02,
            momentum: 0.9,
            lr_decay: 0.5,
            batch_size: 256,
            epochs_stage1: 20,
            epochs_stage2: 20,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.lr, self.lr_stage2];
        if rates.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must be in [0, 1)".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidConfig("learning-rate decay must be in (0, 1]".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch size must be at least 2".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be positive".into()));
        }
        Ok(())
    }
}

/// Which parameters move in the second training stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SatPolicy {
    /// Conditioning parameters and the main network together.
    FineTuneAll,
    /// Conditioning parameters only; the main network keeps its SI weights
    /// and batch normalization keeps its SI running statistics.
    FreezeMain,
}

impl SatPolicy {
    pub fn name(self) -> &'static str {
        match self {
            SatPolicy::FineTuneAll => "fine-tune-all",
            SatPolicy::FreezeMain => "freeze-main",
        }
    }
}

impl fmt::Display for SatPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SatPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fine-tune-all" | "fine_tune_all" => Ok(SatPolicy::FineTuneAll),
            "freeze-main" | "freeze_main" => Ok(SatPolicy::FreezeMain),
            other => Err(Error::UnknownKind(other.into())),
        }
    }
}

/// Second-stage setup.
#[derive(Debug, Clone, PartialEq)]
pub struct SatConfig {
    pub spec: ConditioningSpec,
    pub policy: SatPolicy,
    /// Reduce embeddings to this width with PCA fitted on the training
    /// split. When unset, embeddings wider than the sites of a mechanism
    /// that needs matching widths are reduced to the site width.
    pub embedding_pca_dim: Option<usize>,
}

/// Affine reduction `(e − mean) · projection` applied to every embedding row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPrep {
    pub mean: Vec<f32>,
    /// `in_dim × out_dim`
    pub projection: Matrix<f32>,
}

impl EmbeddingPrep {
    pub fn in_dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.projection.cols()
    }

    pub fn apply(&self, e: &Matrix<f32>) -> Result<Matrix<f32>> {
        if e.cols() != self.in_dim() {
            return Err(Error::Shape {
                context: "embedding width before reduction",
                expected: self.in_dim(),
                found: e.cols(),
            });
        }
        let centered = Matrix::from_fn(e.rows(), e.cols(), |i, j| e.get(i, j) - self.mean[j]);
        centered.matmul(&self.projection)
    }
}

/// A frame classifier together with the embedding preprocessing it was
/// trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticModel {
    pub mlp: Mlp<f32>,
    pub prep: Option<EmbeddingPrep>,
    /// Ties the model to the exact corpus and configuration that produced it.
    pub config_fingerprint: u64,
}

impl AcousticModel {
    pub fn is_conditioned(&self) -> bool {
        self.mlp.conditioner().is_some()
    }

    /// Conditioner input rows for `utt`, one per frame, after preprocessing.
    fn embedding_rows(&self, utt: &Utterance, table: Option<&EmbeddingTable>) -> Result<Option<Matrix<f32>>> {
        if !self.is_conditioned() {
            return Ok(None);
        }
        let table = table.ok_or_else(|| Error::MissingEmbedding("conditioned model".into()))?;
        let e = table
            .get(&utt.id)
            .ok_or_else(|| Error::MissingEmbedding(utt.id.clone()))?;
        let rows = e.rows_for(utt.num_frames())?;
        match &self.prep {
            Some(p) => p.apply(&rows).map(Some),
            None => Ok(Some(rows)),
        }
    }
}

/// Frame errors of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceErrors {
    pub id: String,
    pub speaker: usize,
    pub duration_sec: f64,
    pub frames: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LengthBucket {
    /// Inclusive lower edge.
    pub min_sec: f64,
    /// Exclusive upper edge; infinite for the last bucket.
    pub max_sec: f64,
    pub utterances: usize,
    pub frames: usize,
    pub errors: usize,
}

impl LengthBucket {
    /// `None` for an empty bucket.
    pub fn fer_percent(&self) -> Option<f64> {
        (self.frames > 0).then(|| 100.0 * self.errors as f64 / self.frames as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub split: Split,
    pub fer_percent: f64,
    pub frames: usize,
    pub errors: usize,
    pub utterances: Vec<UtteranceErrors>,
    pub buckets: Vec<LengthBucket>,
    pub config_fingerprint: u64,
    pub corpus_fingerprint: u64,
}

/// One point of a minimum-length curve.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthPoint {
    pub threshold_sec: f64,
    pub utterances: usize,
    pub frames: usize,
    pub fer_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LengthCurve {
    pub points: Vec<LengthPoint>,
    /// Thresholds that left no utterance.
    pub omitted: Vec<f64>,
}

impl EvalReport {
    fn from_utterances(
        split: Split,
        utterances: Vec<UtteranceErrors>,
        config_fingerprint: u64,
        corpus_fingerprint: u64,
    ) -> Result<Self> {
        let frames: usize = utterances.iter().map(|u| u.frames).sum();
        let errors: usize = utterances.iter().map(|u| u.errors).sum();
        if frames == 0 {
            return Err(Error::Degenerate(format!("{} split has no frames", split.name())));
        }
        let edges = LENGTH_BUCKET_EDGES_SEC;
        let buckets = edges
            .iter()
            .enumerate()
            .map(|(i, &lo)| {
                let hi = edges.get(i + 1).copied().unwrap_or(f64::INFINITY);
                let inside: Vec<&UtteranceErrors> = utterances
                    .iter()
                    .filter(|u| u.duration_sec >= lo && u.duration_sec < hi)
                    .collect();
                LengthBucket {
                    min_sec: lo,
                    max_sec: hi,
                    utterances: inside.len(),
                    frames: inside.iter().map(|u| u.frames).sum(),
                    errors: inside.iter().map(|u| u.errors).sum(),
                }
            })
            .collect();
        Ok(EvalReport {
            split,
            fer_percent: 100.0 * errors as f64 / frames as f64,
            frames,
            errors,
            utterances,
            buckets,
            config_fingerprint,
            corpus_fingerprint,
        })
    }

    /// FER over utterances at least `threshold` seconds long, per threshold.
    pub fn fer_by_min_length(&self, thresholds: &[f64]) -> LengthCurve {
        let mut curve = LengthCurve::default();
        for &th in thresholds {
            let kept: Vec<&UtteranceErrors> = self.utterances.iter().filter(|u| u.duration_sec >= th).collect();
            let frames: usize = kept.iter().map(|u| u.frames).sum();
            if frames == 0 {
                curve.omitted.push(th);
                continue;
            }
            let errors: usize = kept.iter().map(|u| u.errors).sum();
            curve.points.push(LengthPoint {
                threshold_sec: th,
                utterances: kept.len(),
                frames,
                fer_percent: 100.0 * errors as f64 / frames as f64,
            });
        }
        curve
    }
}

/// Per-epoch training record; epoch 0 is the starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's batches; `None` for epoch 0.
    pub train_loss: Option<f64>,
    pub dev_fer: f64,
}

/// A trained model with its dev report (the selection criterion) and history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: AcousticModel,
    pub dev: EvalReport,
    pub best_epoch: usize,
    pub history: Vec<EpochLog>,
}

/// FER of `model` on `split`, with eval-mode batch normalization.
pub fn eval_fer(
    model: &AcousticModel,
    corpus: &Corpus,
    split: Split,
    embeddings: Option<&EmbeddingTable>,
) -> Result<EvalReport> {
    eval_fer_batched(model, corpus, split, embeddings, EVAL_BATCH_FRAMES)
}

/// [`eval_fer`] with an explicit number of frames per forward pass. The
/// result does not depend on `batch_frames`.
pub fn eval_fer_batched(
    model: &AcousticModel,
    corpus: &Corpus,
    split: Split,
    embeddings: Option<&EmbeddingTable>,
    batch_frames: usize,
) -> Result<EvalReport> {
    if batch_frames == 0 {
        return Err(Error::InvalidConfig(
            "evaluation batch must hold at least one frame".into(),
        ));
    }
    let utts = corpus.split(split);
    let mut per_utt: Vec<UtteranceErrors> = utts
        .iter()
        .map(|u| UtteranceErrors {
            id: u.id.clone(),
            speaker: u.speaker,
            duration_sec: u.duration_sec,
            frames: u.num_frames(),
            errors: 0,
        })
        .collect();
    // Flat (utterance, frame) order, cut into batches of `batch_frames`.
    let mut owners: Vec<(usize, usize)> = Vec::new();
    for (ui, u) in utts.iter().enumerate() {
        owners.extend((0..u.num_frames()).map(|t| (ui, t)));
    }
    let emb_rows: Vec<Option<Matrix<f32>>> = utts
        .iter()
        .map(|u| model.embedding_rows(u, embeddings))
        .collect::<Result<_>>()?;
    let feat = model.mlp.config().input_dim;
    for chunk in owners.chunks(batch_frames) {
        let x = Matrix::from_fn(chunk.len(), feat, |i, j| {
            let (ui, t) = chunk[i];
            utts[ui].frames.get(t, j)
        });
        let e = if model.is_conditioned() {
            let width = emb_rows[chunk[0].0].as_ref().map_or(0, |m| m.cols());
            Some(Matrix::from_fn(chunk.len(), width, |i, j| {
                let (ui, t) = chunk[i];
                emb_rows[ui].as_ref().expect("conditioned").get(t, j)
            }))
        } else {
            None
        };
        let pred = model.mlp.predict(&x, e.as_ref())?;
        for (&(ui, t), p) in chunk.iter().zip(pred) {
            if p != utts[ui].labels[t] {
                per_utt[ui].errors += 1;
            }
        }
    }
    EvalReport::from_utterances(split, per_utt, model.config_fingerprint, corpus.fingerprint())
}

/// FER over utterances of at least each threshold's duration.
pub fn eval_fer_by_min_length(
    model: &AcousticModel,
    corpus: &Corpus,
    split: Split,
    embeddings: Option<&EmbeddingTable>,
    thresholds_sec: &[f64],
) -> Result<LengthCurve> {
    Ok(eval_fer(model, corpus, split, embeddings)?.fer_by_min_length(thresholds_sec))
}

/// Every training frame with its label and (optionally) its embedding row.
struct FrameSet {
    x: Matrix<f32>,
    labels: Vec<usize>,
    emb: Option<Matrix<f32>>,
}

fn frame_set(model: &AcousticModel, utts: &[Utterance], table: Option<&EmbeddingTable>) -> Result<FrameSet> {
    let parts: Vec<&Matrix<f32>> = utts.iter().map(|u| &u.frames).collect();
    let x = Matrix::vstack(&parts)?;
    let labels = utts.iter().flat_map(|u| u.labels.iter().copied()).collect();
    let emb = if model.is_conditioned() {
        let rows: Vec<Matrix<f32>> = utts
            .iter()
            .map(|u| model.embedding_rows(u, table).map(|e| e.expect("conditioned")))
            .collect::<Result<_>>()?;
        let refs: Vec<&Matrix<f32>> = rows.iter().collect();
        Some(Matrix::vstack(&refs)?)
    } else {
        None
    };
    Ok(FrameSet { x, labels, emb })
}

#[derive(Clone, Copy)]
struct Stage {
    lr: f64,
    epochs: usize,
    salt: u64,
    mode: Mode,
    freeze_main: bool,
}

fn run_stage(
    mut model: AcousticModel,
    corpus: &Corpus,
    table: Option<&EmbeddingTable>,
    cfg: &TrainConfig,
    stage: Stage,
) -> Result<TrainOutcome> {
    let train = frame_set(&model, corpus.split(Split::Train), table)?;
    if train.labels.len() < 2 {
        return Err(Error::Degenerate("training split needs at least 2 frames".into()));
    }
    let trainable = |g: ParamGroup| match g {
        ParamGroup::Main => !stage.freeze_main,
        ParamGroup::Conditioning => true,
        ParamGroup::Buffer => false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ stage.salt);
    let mut opt = Sgd::new(stage.lr, cfg.momentum);
    let mut grads = model.mlp.zero_grads();
    let mut best = eval_fer(&model, corpus, Split::Dev, table)?;
    let mut best_model = model.clone();
    let mut best_epoch = 0;
    let mut history = alloc::vec![EpochLog {
        epoch: 0,
        lr: stage.lr,
        train_loss: None,
        dev_fer: best.fer_percent,
    }];
    let mut order: Vec<usize> = (0..train.labels.len()).collect();
    let mut stale = 0;
    for epoch in 1..=stage.epochs {
        let lr = opt.lr;
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0f64, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let xb = train.x.select_rows(chunk);
            let eb = train.emb.as_ref().map(|e| e.select_rows(chunk));
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let diverged = |e: Error| match e {
                Error::NonFinite(_) => Error::Divergence { epoch },
                other => other,
            };
            let cache = model.mlp.forward(&xb, eb.as_ref(), stage.mode).map_err(diverged)?;
            let (loss, dlogits) = cross_entropy_loss(cache.logits(), &labels).map_err(diverged)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            model
                .mlp
                .backward_into(&cache, &dlogits, &mut grads, stage.freeze_main)?;
            if stage.mode == Mode::Train {
                model.mlp.update_running_stats(&cache);
            }
            opt.step(model.mlp.store_mut(), &grads, trainable).map_err(diverged)?;
            loss_sum += loss as f64;
            batches += 1;
        }
        let dev = eval_fer(&model, corpus, Split::Dev, table).map_err(|e| match e {
            Error::NonFinite(_) => Error::Divergence { epoch },
            other => other,
        })?;
        history.push(EpochLog {
            epoch,
            lr,
            train_loss: (batches > 0).then(|| loss_sum / batches as f64),
            dev_fer: dev.fer_percent,
        });
        if dev.fer_percent < best.fer_percent {
            best = dev;
            best_model = model.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
            opt.lr *= cfg.lr_decay;
        }
    }
    Ok(TrainOutcome {
        model: best_model,
        dev: best,
        best_epoch,
        history,
    })
}

fn check_corpus(corpus: &Corpus, model: &MlpConfig) -> Result<()> {
    if corpus.split(Split::Train).is_empty() || corpus.split(Split::Dev).is_empty() {
        return Err(Error::Degenerate(
            "training needs non-empty train and dev splits".into(),
        ));
    }
    if model.input_dim != corpus.config.feat_dim || model.num_classes != corpus.config.num_classes {
        return Err(Error::InvalidConfig(format!(
            "model maps {} features to {} classes but the corpus has {} features and {} classes",
            model.input_dim, model.num_classes, corpus.config.feat_dim, corpus.config.num_classes
        )));
    }
    Ok(())
}

/// Trains the unconditioned frame classifier on the corpus as given (apply
/// mean normalization beforehand if wanted) and returns the best-dev model.
pub fn train_si(corpus: &Corpus, model_config: &MlpConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_corpus(corpus, model_config)?;
    let fingerprint = of_debug(&("si", model_config, cfg, corpus.fingerprint()));
    let model = AcousticModel {
        mlp: Mlp::new(model_config.clone(), cfg.seed)?,
        prep: None,
        config_fingerprint: fingerprint,
    };
    run_stage(
        model,
        corpus,
        None,
        cfg,
        Stage {
            lr: cfg.lr,
            epochs: cfg.epochs_stage1,
            salt: STAGE1_SALT,
            mode: Mode::Train,
            freeze_main: false,
        },
    )
}

/// Embedding width of `table`, checked to be consistent across the corpus.
fn table_dim(corpus: &Corpus, table: &EmbeddingTable) -> Result<usize> {
    let mut dim = None;
    for (_, u) in corpus.utterances() {
        let e = table.get(&u.id).ok_or_else(|| Error::MissingEmbedding(u.id.clone()))?;
        match dim {
            None => dim = Some(e.dim()),
            Some(d) if d != e.dim() => {
                return Err(Error::Shape {
                    context: "embedding width across the table",
                    expected: d,
                    found: e.dim(),
                })
            }
            _ => {}
        }
    }
    dim.ok_or_else(|| Error::Degenerate("corpus has no utterances".into()))
}

/// PCA fitted on the utterance-level summaries of the training split.
fn fit_prep(corpus: &Corpus, table: &EmbeddingTable, out_dim: usize) -> Result<EmbeddingPrep> {
    let train = corpus.split(Split::Train);
    let in_dim = table[&train[0].id].dim();
    let x = Matrix::<f64>::from_fn(train.len(), in_dim, |i, j| table[&train[i].id].summary()[j] as f64);
    let pca = pca_fit(&x, out_dim)?;
    Ok(EmbeddingPrep {
        mean: pca.mean.iter().map(|&v| v as f32).collect(),
        projection: Matrix::from_fn(in_dim, out_dim, |i, j| pca.components.get(j, i) as f32),
    })
}

/// Chooses the embedding reduction for `sat`, rejecting incompatible widths.
fn plan_prep(si: &Mlp<f32>, corpus: &Corpus, table: &EmbeddingTable, sat: &SatConfig) -> Result<Option<EmbeddingPrep>> {
    let raw = table_dim(corpus, table)?;
    let site_dims = si.site_dims();
    let target = match sat.embedding_pca_dim {
        Some(k) => Some(k),
        None if sat.spec.mechanism.needs_matching_dims() => {
            let sites = sat.spec.sites.resolve(site_dims.len())?;
            let width = site_dims[sites[0]];
            (raw > width).then_some(width)
        }
        None => None,
    };
    let embed_dim = target.unwrap_or(raw);
    if target.is_some_and(|k| k > raw) {
        return Err(Error::Shape {
            context: "embedding reduction wider than the embedding",
            expected: raw,
            found: embed_dim,
        });
    }
    sat.spec.validate(embed_dim, &site_dims)?;
    target.map(|k| fit_prep(corpus, table, k)).transpose()
}

/// Second stage: attaches conditioning to a copy of the SI model and trains
/// it on the embeddings in `table`. The conditioned model starts out
/// computing (nearly) what the SI model computes; the best-dev model is
/// returned, which may be that starting point.
pub fn train_sat(
    si: &AcousticModel,
    corpus: &Corpus,
    table: &EmbeddingTable,
    sat: &SatConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if si.is_conditioned() {
        return Err(Error::InvalidConfig(
            "stage two starts from an unconditioned model".into(),
        ));
    }
    check_corpus(corpus, si.mlp.config())?;
    let prep = plan_prep(&si.mlp, corpus, table, sat)?;
    let embed_dim = match &prep {
        Some(p) => p.out_dim(),
        None => table_dim(corpus, table)?,
    };
    let kinds: Vec<&str> = table.values().map(|e| e.kind.as_str()).take(1).collect();
    let fingerprint = of_debug(&(
        "sat",
        si.config_fingerprint,
        sat,
        kinds,
        embed_dim,
        cfg,
        corpus.fingerprint(),
    ));
    let model = AcousticModel {
        mlp: si.mlp.with_conditioning(&sat.spec, embed_dim, cfg.seed)?,
        prep,
        config_fingerprint: fingerprint,
    };
    let freeze = sat.policy == SatPolicy::FreezeMain;
    run_stage(
        model,
        corpus,
        Some(table),
        cfg,
        Stage {
            lr: cfg.lr_stage2,
            epochs: cfg.epochs_stage2,
            salt: STAGE2_SALT,
            mode: if freeze { Mode::Eval } else { Mode::Train },
            freeze_main: freeze,
        },
    )
}

/// One row of a side-by-side comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub experiment: String,
    pub fer_percent: f64,
    /// `(baseline − this) / baseline`; `None` when the baseline FER is zero.
    pub relative_gain: Option<f64>,
}

/// Ranks named reports by FER (ties by name) against the named baseline.
/// Every report must come from the same corpus.
pub fn compare_experiments(reports: &[(String, EvalReport)], baseline: &str) -> Result<Vec<ComparisonRow>> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Degenerate("nothing to compare".into()))?;
    let corpus_fp = first.1.corpus_fingerprint;
    if let Some((_, r)) = reports.iter().find(|(_, r)| r.corpus_fingerprint != corpus_fp) {
        return Err(Error::FingerprintMismatch {
            expected: corpus_fp,
            found: r.corpus_fingerprint,
        });
    }
    let base = reports
        .iter()
        .find(|(n, _)| n == baseline)
        .ok_or_else(|| Error::InvalidConfig(format!("baseline `{baseline}` is not among the reports")))?
        .1
        .fer_percent;
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|(name, r)| ComparisonRow {
            experiment: name.clone(),
            fer_percent: r.fer_percent,
            relative_gain: (base != 0.0).then(|| (base - r.fer_percent) / base),
        })
        .collect();
    rows.sort_by(|a, b| {
        a.fer_percent
            .total_cmp(&b.fer_percent)
            .then_with(|| a.experiment.cmp(&b.experiment))
    });
    Ok(rows)
}
