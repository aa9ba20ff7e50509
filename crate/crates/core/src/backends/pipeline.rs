use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::plda::{plda_fit, plda_score, PldaModel};
use super::projection::{lda_apply, lda_fit, pca_apply, pca_fit, LdaModel, PcaModel};
use super::scoring::{cosine_score, eer, make_trials, speaker_representation, Trial, TrialSet};
use crate::conditioning::Embedding;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::synth::{split_enroll_test, Corpus, Utterance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BackendKind {
    Cosine,
    Plda,
    /// LDA projection, then cosine scoring.
    Lda,
    /// LDA projection, then PLDA scoring.
    LdaPlda,
}

impl BackendKind {
    pub const ALL: [BackendKind; 4] = [
        BackendKind::Cosine,
        BackendKind::Plda,
        BackendKind::Lda,
        BackendKind::LdaPlda,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Cosine => "cosine",
            BackendKind::Plda => "plda",
            BackendKind::Lda => "lda",
            BackendKind::LdaPlda => "lda-plda",
        }
    }

    fn uses_lda(self) -> bool {
        matches!(self, BackendKind::Lda | BackendKind::LdaPlda)
    }

    fn uses_plda(self) -> bool {
        matches!(self, BackendKind::Plda | BackendKind::LdaPlda)
    }
}

impl core::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for BackendKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BackendKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownKind(s.into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Optional PCA before everything else.
    pub pca_dim: Option<usize>,
    /// LDA output width; `None` keeps `min(dim, speakers − 1)`.
    pub lda_dim: Option<usize>,
}

impl BackendConfig {
    pub fn new(kind: BackendKind) -> Self {
        BackendConfig {
            kind,
            pca_dim: None,
            lda_dim: None,
        }
    }
}

/// A backend trained on labelled embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedBackend {
    pub kind: BackendKind,
    pub pca: Option<PcaModel>,
    pub lda: Option<LdaModel>,
    pub plda: Option<PldaModel>,
    /// Mean of the projected training data, removed before cosine scoring.
    pub center: Vec<f64>,
}

pub fn fit_backend(config: &BackendConfig, x: &Matrix<f64>, labels: &[usize]) -> Result<FittedBackend> {
    let mut data = x.clone();
    let pca = match config.pca_dim {
        Some(dim) => {
            let m = pca_fit(&data, dim)?;
            data = pca_apply(&m, &data)?;
            Some(m)
        }
        None => None,
    };
    let lda = if config.kind.uses_lda() {
        let speakers = labels.iter().collect::<alloc::collections::BTreeSet<_>>().len();
        let dim = config
            .lda_dim
            .unwrap_or_else(|| data.cols().min(speakers.saturating_sub(1)).max(1));
        let m = lda_fit(&data, labels, dim)?;
        data = lda_apply(&m, &data)?;
        Some(m)
    } else {
        None
    };
    let plda = if config.kind.uses_plda() {
        Some(plda_fit(&data, labels)?)
    } else {
        None
    };
    Ok(FittedBackend {
        kind: config.kind,
        pca,
        lda,
        plda,
        center: data.col_means(),
    })
}

impl FittedBackend {
    /// Applies the fitted projections to rows of `x`.
    pub fn transform(&self, x: &Matrix<f64>) -> Result<Matrix<f64>> {
        let mut data = x.clone();
        if let Some(p) = &self.pca {
            data = pca_apply(p, &data)?;
        }
        if let Some(l) = &self.lda {
            data = lda_apply(l, &data)?;
        }
        Ok(data)
    }

    /// Scores projected vectors; higher means more likely the same speaker.
    pub fn score(&self, enroll: &[f64], test: &[f64]) -> Result<f64> {
        match &self.plda {
            Some(p) => plda_score(p, enroll, test),
            None => {
                let c = |v: &[f64]| v.iter().zip(&self.center).map(|(a, b)| a - b).collect::<Vec<_>>();
                cosine_score(&c(enroll), &c(test))
            }
        }
    }
}

/// One recording in a speaker-recognition task.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerItem {
    pub id: String,
    pub speaker: usize,
    pub duration_sec: f64,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpeakerTask {
    pub enroll: Vec<SpeakerItem>,
    pub test: Vec<SpeakerItem>,
}

impl SpeakerTask {
    pub fn enrolled_speakers(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.enroll.iter().map(|i| i.speaker).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn test_speakers(&self) -> Vec<usize> {
        self.test.iter().map(|i| i.speaker).collect()
    }

    /// Speakers with at least one enrollment recording of `min_sec` or more.
    fn speakers_enrolled_at(&self, min_sec: f64) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .enroll
            .iter()
            .filter(|i| i.duration_sec >= min_sec)
            .map(|i| i.speaker)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Keeps trials whose test recording and at least one enrollment recording
/// of the enrolled speaker last `min_sec` or more.
pub fn filter_trials_by_min_length(trials: &TrialSet, task: &SpeakerTask, min_sec: f64) -> Result<TrialSet> {
    let enrolled = task.speakers_enrolled_at(min_sec);
    let kept: Vec<Trial> = trials
        .trials
        .iter()
        .filter(|t| task.test[t.test].duration_sec >= min_sec && enrolled.binary_search(&t.enroll).is_ok())
        .copied()
        .collect();
    if kept.is_empty() {
        return Err(Error::Degenerate(format!(
            "no trials with recordings of at least {min_sec} s"
        )));
    }
    Ok(TrialSet {
        trials: kept,
        seed: trials.seed,
        non_target_prop: trials.non_target_prop,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrial {
    pub enroll_speaker: usize,
    pub test_id: String,
    pub target: bool,
    pub score: f64,
}

/// Scores `trials`, with each speaker represented by the mean of its
/// projected enrollment embeddings of at least `min_sec`.
pub fn score_trials(
    backend: &FittedBackend,
    task: &SpeakerTask,
    trials: &TrialSet,
    min_sec: f64,
) -> Result<Vec<ScoredTrial>> {
    let project = |items: &[&SpeakerItem]| -> Result<Matrix<f64>> {
        let dim = items.first().map_or(0, |i| i.embedding.len());
        let x = Matrix::new(
            items.len(),
            dim,
            items.iter().flat_map(|i| i.embedding.iter().copied()).collect(),
        )?;
        backend.transform(&x)
    };
    let enroll: Vec<&SpeakerItem> = task.enroll.iter().filter(|i| i.duration_sec >= min_sec).collect();
    let enroll_proj = project(&enroll)?;
    let mut reps: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut rows: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
    for (k, item) in enroll.iter().enumerate() {
        rows.entry(item.speaker).or_default().push(enroll_proj.row(k));
    }
    for (spk, r) in rows {
        reps.insert(spk, speaker_representation(&r)?);
    }
    let test_refs: Vec<&SpeakerItem> = task.test.iter().collect();
    let test_proj = project(&test_refs)?;
    trials
        .trials
        .iter()
        .map(|t| {
            let rep = reps
                .get(&t.enroll)
                .ok_or_else(|| Error::Degenerate(format!("speaker {} has no enrollment", t.enroll)))?;
            Ok(ScoredTrial {
                enroll_speaker: t.enroll,
                test_id: task.test[t.test].id.clone(),
                target: t.target,
                score: backend.score(rep, test_proj.row(t.test))?,
            })
        })
        .collect()
}

pub fn eer_of(scored: &[ScoredTrial]) -> Result<f64> {
    let scores: Vec<f64> = scored.iter().map(|s| s.score).collect();
    let targets: Vec<bool> = scored.iter().map(|s| s.target).collect();
    eer(&scores, &targets)
}

/// Subset label of every recording after greedy contiguous grouping.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SubsetAssignment {
    pub labels: Vec<usize>,
    /// Recordings longer than the limit, each kept as its own subset.
    pub oversized: Vec<usize>,
    pub num_subsets: usize,
}

/// Groups each speaker's recordings, in list order, into consecutive runs
/// of at most `max_sec` total duration. Labels are dense, in order of first
/// appearance.
pub fn split_speaker_subsets(recordings: &[(usize, f64)], max_sec: f64) -> Result<SubsetAssignment> {
    if max_sec.is_nan() || max_sec <= 0.0 {
        return Err(Error::InvalidConfig("subset length must be positive".into()));
    }
    // Per speaker: (current label, accumulated seconds).
    let mut open: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    let mut out = SubsetAssignment::default();
    for (i, &(spk, dur)) in recordings.iter().enumerate() {
        let fresh = match open.get(&spk) {
            Some(&(_, acc)) => acc + dur > max_sec,
            None => true,
        };
        if fresh {
            open.insert(spk, (out.num_subsets, 0.0));
            out.num_subsets += 1;
        }
        let slot = open.get_mut(&spk).expect("inserted above");
        slot.1 += dur;
        out.labels.push(slot.0);
        if dur > max_sec {
            out.oversized.push(i);
        }
    }
    Ok(out)
}

/// Replaces the speaker of every utterance with its subset label.
pub fn relabel_subsets(utterances: &mut [Utterance], max_sec: f64) -> Result<SubsetAssignment> {
    let recs: Vec<(usize, f64)> = utterances.iter().map(|u| (u.speaker, u.duration_sec)).collect();
    let a = split_speaker_subsets(&recs, max_sec)?;
    for (u, &l) in utterances.iter_mut().zip(&a.labels) {
        u.speaker = l;
    }
    Ok(a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEvalConfig {
    pub backend: BackendConfig,
    pub non_target_prop: f64,
    pub trial_seed: u64,
    /// Relabel train and eval speakers into contiguous subsets of this length.
    pub subset_max_sec: Option<f64>,
}

impl SpeakerEvalConfig {
    pub fn new(kind: BackendKind) -> Self {
        SpeakerEvalConfig {
            backend: BackendConfig::new(kind),
            non_target_prop: 0.5,
            trial_seed: 0,
            subset_max_sec: None,
        }
    }
}

/// A prepared speaker-recognition experiment: a backend fitted on the train
/// split and trials over the eval split.
#[derive(Debug, Clone)]
pub struct SpeakerExperiment {
    pub backend: FittedBackend,
    pub task: SpeakerTask,
    pub trials: TrialSet,
    /// Utterances longer than the subset limit, by id.
    pub oversized: Vec<String>,
}

fn embedding_vector(table: &BTreeMap<String, Embedding>, id: &str) -> Result<Vec<f64>> {
    let e = table.get(id).ok_or_else(|| Error::MissingEmbedding(id.into()))?;
    Ok(e.summary().iter().map(|&v| v as f64).collect())
}

fn item(table: &BTreeMap<String, Embedding>, u: &Utterance) -> Result<SpeakerItem> {
    Ok(SpeakerItem {
        id: u.id.clone(),
        speaker: u.speaker,
        duration_sec: u.duration_sec,
        embedding: embedding_vector(table, &u.id)?,
    })
}

pub fn prepare_speaker_experiment(
    corpus: &Corpus,
    embeddings: &BTreeMap<String, Embedding>,
    config: &SpeakerEvalConfig,
) -> Result<SpeakerExperiment> {
    let mut train = corpus.train.clone();
    let mut eval = corpus.eval.clone();
    let mut oversized = Vec::new();
    if let Some(max_sec) = config.subset_max_sec {
        relabel_subsets(&mut train, max_sec)?;
        let a = relabel_subsets(&mut eval, max_sec)?;
        oversized = a.oversized.iter().map(|&i| eval[i].id.clone()).collect();
    }
    // A class seen once carries no within-class information.
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for u in &train {
        *counts.entry(u.speaker).or_default() += 1;
    }
    let train_items: Vec<SpeakerItem> = train
        .iter()
        .filter(|u| counts[&u.speaker] >= 2)
        .map(|u| item(embeddings, u))
        .collect::<Result<_>>()?;
    let dim = train_items.first().map_or(0, |i| i.embedding.len());
    let x = Matrix::new(
        train_items.len(),
        dim,
        train_items.iter().flat_map(|i| i.embedding.iter().copied()).collect(),
    )?;
    let labels: Vec<usize> = train_items.iter().map(|i| i.speaker).collect();
    let backend = fit_backend(&config.backend, &x, &labels)?;

    let halves = split_enroll_test(&eval);
    let task = SpeakerTask {
        enroll: halves
            .enroll
            .iter()
            .map(|&i| item(embeddings, &eval[i]))
            .collect::<Result<_>>()?,
        test: halves
            .test
            .iter()
            .map(|&i| item(embeddings, &eval[i]))
            .collect::<Result<_>>()?,
    };
    let trials = make_trials(
        &task.enrolled_speakers(),
        &task.test_speakers(),
        config.non_target_prop,
        config.trial_seed,
    )?;
    Ok(SpeakerExperiment {
        backend,
        task,
        trials,
        oversized,
    })
}

impl SpeakerExperiment {
    /// Scored trials restricted to recordings of at least `min_sec`.
    pub fn score(&self, min_sec: f64) -> Result<Vec<ScoredTrial>> {
        let trials = if min_sec > 0.0 {
            filter_trials_by_min_length(&self.trials, &self.task, min_sec)?
        } else {
            self.trials.clone()
        };
        score_trials(&self.backend, &self.task, &trials, min_sec)
    }

    pub fn eer(&self, min_sec: f64) -> Result<f64> {
        eer_of(&self.score(min_sec)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{embed_corpus, gen_corpus, CorpusConfig, EmbeddingConfig, EmbeddingKind};

    #[test]
    fn subset_examples() {
        let a = split_speaker_subsets(&[(0, 10.0); 7], 30.0).unwrap();
        assert_eq!(a.labels, vec![0, 0, 0, 1, 1, 1, 2]);
        let a = split_speaker_subsets(&[(0, 40.0), (0, 5.0)], 30.0).unwrap();
        assert_eq!(a.labels, vec![0, 1]);
        assert_eq!(a.oversized, vec![0]);
        let a = split_speaker_subsets(&[(0, 5.0), (1, 5.0), (0, 30.0), (1, 1.0)], 30.0).unwrap();
        assert_eq!(a.labels, vec![0, 1, 2, 1]);
    }

    fn toy_task() -> SpeakerTask {
        let it = |id: &str, speaker, duration_sec, v: [f64; 2]| SpeakerItem {
            id: id.into(),
            speaker,
            duration_sec,
            embedding: v.to_vec(),
        };
        SpeakerTask {
            enroll: alloc::vec![
                it("e0a", 0, 1.0, [1.0, 0.0]),
                it("e0b", 0, 3.0, [1.0, 0.2]),
                it("e1a", 1, 1.0, [0.0, 1.0]),
                it("e2a", 2, 3.0, [-1.0, 0.0]),
            ],
            test: alloc::vec![
                it("t0", 0, 2.5, [1.0, 0.1]),
                it("t1", 1, 3.5, [0.1, 1.0]),
                it("t2", 2, 1.5, [-1.0, 0.1]),
            ],
        }
    }

    #[test]
    fn length_filter_examples() {
        let task = toy_task();
        let trials = make_trials(&task.enrolled_speakers(), &task.test_speakers(), 0.5, 3).unwrap();
        assert_eq!(filter_trials_by_min_length(&trials, &task, 0.0).unwrap(), trials);
        assert!(filter_trials_by_min_length(&trials, &task, 10.0).is_err());
        // At 2 s: test t2 is too short and speaker 1 has no long enough enrollment.
        let f = filter_trials_by_min_length(&trials, &task, 2.0).unwrap();
        let want: Vec<Trial> = trials
            .trials
            .iter()
            .filter(|t| t.test != 2 && t.enroll != 1)
            .copied()
            .collect();
        assert_eq!(f.trials, want);
    }

    #[test]
    fn representation_uses_filtered_enrollment() {
        let task = toy_task();
        let backend = FittedBackend {
            kind: BackendKind::Cosine,
            pca: None,
            lda: None,
            plda: None,
            center: alloc::vec![0.0, 0.0],
        };
        let trials = TrialSet {
            trials: alloc::vec![Trial {
                enroll: 0,
                test: 0,
                target: true
            }],
            seed: 0,
            non_target_prop: 0.5,
        };
        let all = score_trials(&backend, &task, &trials, 0.0).unwrap()[0].score;
        let long = score_trials(&backend, &task, &trials, 2.0).unwrap()[0].score;
        let want_all = cosine_score(&[1.0, 0.1], &[1.0, 0.1]).unwrap();
        let want_long = cosine_score(&[1.0, 0.2], &[1.0, 0.1]).unwrap();
        assert_eq!(all, want_all);
        assert_eq!(long, want_long);
    }

    fn small_corpus() -> Corpus {
        let cfg = CorpusConfig {
            num_speakers: 16,
            train_speakers: 10,
            dev_speakers: 2,
            eval_speakers: 4,
            utts_per_speaker: 8,
            min_frames: 50,
            max_frames: 100,
            ..CorpusConfig::default()
        };
        gen_corpus(&cfg, 1).unwrap()
    }

    #[test]
    fn perfect_embeddings_give_zero_eer() {
        let c = small_corpus();
        let table = embed_corpus(&c, EmbeddingKind::OracleSpeaker, &EmbeddingConfig::exact(), 0);
        for kind in BackendKind::ALL {
            let mut cfg = SpeakerEvalConfig::new(kind);
            cfg.backend.lda_dim = Some(5);
            let exp = prepare_speaker_experiment(&c, &table, &cfg).unwrap();
            assert_eq!(exp.eer(0.0).unwrap(), 0.0, "{kind}");
        }
    }

    #[test]
    fn full_rank_pca_does_not_change_lda_eer() {
        let c = small_corpus();
        let table = embed_corpus(&c, EmbeddingKind::OracleFullNoisy, &EmbeddingConfig::default(), 0);
        for kind in [BackendKind::Lda, BackendKind::LdaPlda] {
            let mut plain = SpeakerEvalConfig::new(kind);
            plain.backend.lda_dim = Some(6);
            let mut with_pca = plain.clone();
            with_pca.backend.pca_dim = Some(EmbeddingKind::OracleFullNoisy.dim(20));
            let a = prepare_speaker_experiment(&c, &table, &plain)
                .unwrap()
                .eer(0.0)
                .unwrap();
            let b = prepare_speaker_experiment(&c, &table, &with_pca)
                .unwrap()
                .eer(0.0)
                .unwrap();
            assert!((a - b).abs() < 1e-6, "{kind}: {a} vs {b}");
        }
    }

    #[test]
    fn subset_relabeling_respects_limit() {
        let c = small_corpus();
        let mut eval = c.eval.clone();
        let a = relabel_subsets(&mut eval, 3.0).unwrap();
        let mut totals: BTreeMap<usize, f64> = BTreeMap::new();
        for u in &eval {
            *totals.entry(u.speaker).or_default() += u.duration_sec;
        }
        assert_eq!(totals.len(), a.num_subsets);
        assert!(totals.values().all(|&t| t <= 3.0 + 1e-9));
        let before: f64 = c.eval.iter().map(|u| u.duration_sec).sum();
        let after: f64 = totals.values().sum();
        assert!((before - after).abs() < 1e-9);
    }

    #[test]
    fn missing_embedding_is_reported() {
        let c = small_corpus();
        let mut table = embed_corpus(&c, EmbeddingKind::OracleFull, &EmbeddingConfig::default(), 0);
        table.remove(&c.eval[0].id);
        let err = prepare_speaker_experiment(&c, &table, &SpeakerEvalConfig::new(BackendKind::Cosine));
        assert!(matches!(err, Err(Error::MissingEmbedding(_))));
    }
}
