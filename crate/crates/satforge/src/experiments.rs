//! The commands behind the command line: each reads its inputs, writes its
//! outputs and a run manifest into a fresh run directory, and can be
//! replayed from that manifest alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use satforge_core::backends::prepare_speaker_experiment;
use satforge_core::fingerprint::of_debug;
use satforge_core::synth::{Corpus, EmbeddingKind, Split};
use satforge_core::trainer::{
    eval_fer, eval_fer_by_min_length, train_sat, train_si, AcousticModel, EmbeddingTable, EpochLog, TrainOutcome,
};

use crate::checkpoint::{load_model, save_model, ModelArch};
use crate::config::ExperimentConfig;
use crate::corpus_io::{embedding_path, load_corpus_dir, load_embedding_table};
use crate::error::{Error, Result};
use crate::manifest::{hex, Command, RunInfo, RunManifest};
use crate::report::{
    read_csv, write_csv, write_trials_and_scores, ComparisonRow, EerRow, FerRow, HistoryRow, EER_FILE, FER_FILE,
    HISTORY_FILE,
};

pub const MODEL_FILE: &str = "model.bin";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const FER_CURVES_FILE: &str = "fer_curves.csv";

/// Fingerprint of what the generator was asked for, before normalization.
pub fn corpus_fingerprint(cfg: &ExperimentConfig) -> u64 {
    of_debug(&(cfg.corpus_config(), cfg.seeds.corpus))
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    if dir.exists() && fs::read_dir(dir).map_err(Error::io(dir))?.next().is_some() {
        return Err(Error::Usage(format!("run directory {} is not empty", dir.display())));
    }
    fs::create_dir_all(dir).map_err(Error::io(dir))
}

/// `si` or `si-cmn`.
pub fn si_name(cfg: &ExperimentConfig) -> String {
    if cfg.corpus.cmn {
        "si-cmn".into()
    } else {
        "si".into()
    }
}

/// Conditioning, embedding kind and policy, e.g.
/// `ctrl-layer[shift,linear]@input/oracle_full/fine-tune-all`.
pub fn sat_name(cfg: &ExperimentConfig) -> Result<String> {
    let sat = cfg.sat_config()?;
    Ok(format!("{}/{}/{}", sat.spec, cfg.embedding_kind()?, sat.policy))
}

fn history_rows(history: &[EpochLog]) -> Vec<HistoryRow> {
    history
        .iter()
        .map(|h| HistoryRow {
            epoch: h.epoch,
            lr: h.lr,
            train_loss: h.train_loss,
            dev_fer: h.dev_fer,
        })
        .collect()
}

fn fer_rows(
    experiment: &str,
    stage: &str,
    model: &AcousticModel,
    corpus: &Corpus,
    splits: &[Split],
    table: Option<&EmbeddingTable>,
) -> Result<Vec<FerRow>> {
    splits
        .iter()
        .map(|&split| {
            Ok(FerRow {
                experiment: experiment.into(),
                stage: stage.into(),
                split: split.name().into(),
                threshold: 0.0,
                fer: eval_fer(model, corpus, split, table)?.fer_percent,
            })
        })
        .collect()
}

fn report_splits(cfg: &ExperimentConfig) -> Result<Vec<Split>> {
    let eval = cfg.eval_split()?;
    Ok(if eval == Split::Dev {
        vec![Split::Dev]
    } else {
        vec![Split::Dev, eval]
    })
}

fn load_table(cfg: &ExperimentConfig, corpus_dir: &Path) -> Result<EmbeddingTable> {
    let kind = cfg.embedding_kind()?;
    load_embedding_table(&embedding_path(corpus_dir, kind), kind)
}

fn finish_training(
    out: &Path,
    stage: &str,
    info: RunInfo,
    cfg: &ExperimentConfig,
    outcome: &TrainOutcome,
    corpus: &Corpus,
    table: Option<&EmbeddingTable>,
) -> Result<RunManifest> {
    save_model(&out.join(MODEL_FILE), &outcome.model)?;
    write_csv(&out.join(HISTORY_FILE), &history_rows(&outcome.history))?;
    let rows = fer_rows(
        &info.experiment,
        stage,
        &outcome.model,
        corpus,
        &report_splits(cfg)?,
        table,
    )?;
    write_csv(&out.join(FER_FILE), &rows)?;
    let manifest = RunManifest {
        run: info,
        config: cfg.clone(),
    };
    manifest.save(out)?;
    Ok(manifest)
}

/// First stage: speaker-independent training.
pub fn run_train_si(cfg: &ExperimentConfig, corpus_dir: &Path, out: &Path, name: Option<&str>) -> Result<RunManifest> {
    cfg.validate()?;
    let corpus = load_corpus_dir(cfg, corpus_dir)?;
    prepare_out_dir(out)?;
    let outcome = train_si(&corpus, &cfg.mlp_config()?, &cfg.train_config())?;
    let info = RunInfo {
        command: Command::TrainSi,
        experiment: name.map_or_else(|| si_name(cfg), str::to_string),
        corpus_dir: corpus_dir.to_path_buf(),
        model_run: None,
        corpus_fingerprint: hex(corpus_fingerprint(cfg)),
        features_fingerprint: hex(corpus.fingerprint()),
        model_fingerprint: Some(hex(outcome.model.config_fingerprint)),
        embed_dim: None,
    };
    finish_training(out, "si", info, cfg, &outcome, &corpus, None)
}

/// Architecture of the model saved in `run`.
fn model_arch(run: &RunManifest) -> Result<ModelArch> {
    let conditioning = match run.run.command {
        Command::TrainSi => None,
        Command::TrainSat => {
            let dim = run
                .run
                .embed_dim
                .ok_or_else(|| Error::Config("conditioned run does not record its embedding width".into()))?;
            Some((run.config.conditioning_spec()?, dim))
        }
        _ => return Err(Error::Config("run directory does not hold a trained model".into())),
    };
    let fp = run
        .run
        .model_fingerprint
        .as_deref()
        .and_then(|h| u64::from_str_radix(h, 16).ok())
        .ok_or_else(|| Error::Config("run does not record its model fingerprint".into()))?;
    Ok(ModelArch {
        mlp: run.config.mlp_config()?,
        conditioning,
        config_fingerprint: fp,
    })
}

pub fn load_run_model(run_dir: &Path) -> Result<(RunManifest, AcousticModel)> {
    let run = RunManifest::load(run_dir)?;
    let model = load_model(&run_dir.join(MODEL_FILE), &model_arch(&run)?)?;
    Ok((run, model))
}

/// Second stage: adaptive training from the SI model in `si_run`.
pub fn run_train_sat(
    cfg: &ExperimentConfig,
    corpus_dir: &Path,
    si_run: &Path,
    out: &Path,
    name: Option<&str>,
) -> Result<RunManifest> {
    cfg.validate()?;
    let (si_manifest, si) = load_run_model(si_run)?;
    if si_manifest.run.command != Command::TrainSi {
        return Err(Error::Config(format!(
            "{} is not a speaker-independent run",
            si_run.display()
        )));
    }
    if si_manifest.config.corpus != cfg.corpus
        || si_manifest.config.seeds.corpus != cfg.seeds.corpus
        || si_manifest.config.model != cfg.model
    {
        return Err(Error::Config(format!(
            "{} was trained with a different corpus or model configuration",
            si_run.display()
        )));
    }
    let corpus = load_corpus_dir(cfg, corpus_dir)?;
    if hex(corpus.fingerprint()) != si_manifest.run.features_fingerprint {
        return Err(Error::Config(
            "corpus features differ from the ones the SI model was trained on".into(),
        ));
    }
    let table = load_table(cfg, corpus_dir)?;
    prepare_out_dir(out)?;
    let outcome = train_sat(&si, &corpus, &table, &cfg.sat_config()?, &cfg.train_config())?;
    let embed_dim = outcome
        .model
        .mlp
        .conditioner()
        .map(|c| c.embed_dim())
        .expect("stage two yields a conditioned model");
    let info = RunInfo {
        command: Command::TrainSat,
        experiment: match name {
            Some(n) => n.into(),
            None => sat_name(cfg)?,
        },
        corpus_dir: corpus_dir.to_path_buf(),
        model_run: Some(si_run.to_path_buf()),
        corpus_fingerprint: hex(corpus_fingerprint(cfg)),
        features_fingerprint: hex(corpus.fingerprint()),
        model_fingerprint: Some(hex(outcome.model.config_fingerprint)),
        embed_dim: Some(embed_dim),
    };
    finish_training(out, "sat", info, cfg, &outcome, &corpus, Some(&table))
}

/// FER of a trained model over the configured minimum-length thresholds.
pub fn run_eval_asr(model_run: &Path, corpus_dir: &Path, out: &Path) -> Result<RunManifest> {
    let (run, model) = load_run_model(model_run)?;
    let cfg = run.config.clone();
    let corpus = load_corpus_dir(&cfg, corpus_dir)?;
    if hex(corpus.fingerprint()) != run.run.features_fingerprint {
        return Err(Error::Config(
            "corpus features differ from the ones the model was trained on".into(),
        ));
    }
    let table = if model.is_conditioned() {
        Some(load_table(&cfg, corpus_dir)?)
    } else {
        None
    };
    prepare_out_dir(out)?;
    let stage = if model.is_conditioned() { "sat" } else { "si" };
    let mut rows = Vec::new();
    for split in report_splits(&cfg)? {
        let curve = eval_fer_by_min_length(
            &model,
            &corpus,
            split,
            table.as_ref(),
            &cfg.evaluation.min_length_thresholds,
        )?;
        rows.extend(curve.points.iter().map(|p| FerRow {
            experiment: run.run.experiment.clone(),
            stage: stage.into(),
            split: split.name().into(),
            threshold: p.threshold_sec,
            fer: p.fer_percent,
        }));
    }
    write_csv(&out.join(FER_FILE), &rows)?;
    let manifest = RunManifest {
        run: RunInfo {
            command: Command::EvalAsr,
            model_run: Some(model_run.to_path_buf()),
            corpus_dir: corpus_dir.to_path_buf(),
            ..run.run
        },
        config: cfg,
    };
    manifest.save(out)?;
    Ok(manifest)
}

/// Speaker-recognition EER of the configured embedding kind and backend,
/// with trial and score files for the unfiltered trial list.
pub fn run_eval_spk(cfg: &ExperimentConfig, corpus_dir: &Path, out: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    let corpus = load_corpus_dir(cfg, corpus_dir)?;
    let kind: EmbeddingKind = cfg.embedding_kind()?;
    let table = load_table(cfg, corpus_dir)?;
    let spk = cfg.speaker_eval_config()?;
    let experiment = prepare_speaker_experiment(&corpus, &table, &spk)?;
    prepare_out_dir(out)?;
    let prefix = if spk.subset_max_sec.is_some() { "sub" } else { "spk" };
    write_trials_and_scores(out, &experiment.score(0.0)?, prefix)?;
    let name = format!("{kind}/{}", spk.backend.kind);
    let mut thresholds = cfg.evaluation.min_length_thresholds.clone();
    if !thresholds.contains(&0.0) {
        thresholds.insert(0, 0.0);
    }
    let mut rows = Vec::new();
    for th in thresholds {
        let scored = experiment.score(th)?;
        let has_both = scored.iter().any(|t| t.target) && scored.iter().any(|t| !t.target);
        if !has_both {
            continue;
        }
        rows.push(EerRow {
            experiment: name.clone(),
            kind: kind.name().into(),
            backend: spk.backend.kind.name().into(),
            subset_max_sec: spk.subset_max_sec.unwrap_or(0.0),
            threshold: th,
            trials: scored.len(),
            eer: satforge_core::backends::eer_of(&scored)?,
        });
    }
    write_csv(&out.join(EER_FILE), &rows)?;
    let manifest = RunManifest {
        run: RunInfo {
            command: Command::EvalSpk,
            experiment: name,
            corpus_dir: corpus_dir.to_path_buf(),
            model_run: None,
            corpus_fingerprint: hex(corpus_fingerprint(cfg)),
            features_fingerprint: hex(corpus.fingerprint()),
            model_fingerprint: None,
            embed_dim: None,
        },
        config: cfg.clone(),
    };
    manifest.save(out)?;
    Ok(manifest)
}

/// Reruns the command recorded in `run_dir` into `out`. `model_run`
/// replaces the recorded model directory, so a replayed SI run can feed a
/// replayed SAT run.
pub fn replay(run_dir: &Path, out: &Path, model_run: Option<&Path>) -> Result<RunManifest> {
    let m = RunManifest::load(run_dir)?;
    let model = || -> Result<PathBuf> {
        model_run
            .map(Path::to_path_buf)
            .or_else(|| m.run.model_run.clone())
            .ok_or_else(|| Error::Config("run does not record a model directory".into()))
    };
    let name = Some(m.run.experiment.as_str());
    match m.run.command {
        Command::TrainSi => run_train_si(&m.config, &m.run.corpus_dir, out, name),
        Command::TrainSat => run_train_sat(&m.config, &m.run.corpus_dir, &model()?, out, name),
        Command::EvalAsr => run_eval_asr(&model()?, &m.run.corpus_dir, out),
        Command::EvalSpk => run_eval_spk(&m.config, &m.run.corpus_dir, out),
    }
}

/// Outputs of `report`.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedReport {
    pub fer: Vec<FerRow>,
    pub fer_curves: Vec<FerRow>,
    pub eer: Vec<EerRow>,
    pub comparison: Vec<ComparisonRow>,
}

/// Merges the CSVs of several runs over one corpus. Training runs give the
/// result table and the comparison against `baseline` (by default the first
/// SI run); evaluation runs give the curves.
pub fn merge_runs(run_dirs: &[PathBuf], baseline: Option<&str>) -> Result<MergedReport> {
    if run_dirs.is_empty() {
        return Err(Error::Usage("report needs at least one run directory".into()));
    }
    let mut corpus_fp: Option<String> = None;
    let mut merged = MergedReport {
        fer: Vec::new(),
        fer_curves: Vec::new(),
        eer: Vec::new(),
        comparison: Vec::new(),
    };
    let mut first_si: Option<String> = None;
    for dir in run_dirs {
        let m = RunManifest::load(dir)?;
        match &corpus_fp {
            None => corpus_fp = Some(m.run.corpus_fingerprint.clone()),
            Some(fp) if *fp != m.run.corpus_fingerprint => {
                return Err(Error::Config(format!(
                    "{} was run on a different corpus ({} vs {fp})",
                    dir.display(),
                    m.run.corpus_fingerprint
                )))
            }
            Some(_) => {}
        }
        match m.run.command {
            Command::TrainSi | Command::TrainSat => {
                if m.run.command == Command::TrainSi && first_si.is_none() {
                    first_si = Some(m.run.experiment.clone());
                }
                merged.fer.extend(read_csv::<FerRow>(&dir.join(FER_FILE))?);
            }
            Command::EvalAsr => merged.fer_curves.extend(read_csv::<FerRow>(&dir.join(FER_FILE))?),
            Command::EvalSpk => merged.eer.extend(read_csv::<EerRow>(&dir.join(EER_FILE))?),
        }
    }
    let baseline = baseline.map(str::to_string).or(first_si);
    merged.comparison = compare(&merged.fer, baseline.as_deref());
    Ok(merged)
}

fn compare(rows: &[FerRow], baseline: Option<&str>) -> Vec<ComparisonRow> {
    let mut by_split: BTreeMap<&str, Vec<&FerRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.threshold == 0.0) {
        by_split.entry(r.split.as_str()).or_default().push(r);
    }
    let mut out = Vec::new();
    for (split, mut rs) in by_split {
        rs.sort_by(|a, b| a.fer.total_cmp(&b.fer).then_with(|| a.experiment.cmp(&b.experiment)));
        let base = baseline
            .and_then(|b| rs.iter().find(|r| r.experiment == b))
            .map(|r| r.fer);
        out.extend(rs.into_iter().map(|r| ComparisonRow {
            experiment: r.experiment.clone(),
            split: split.into(),
            fer: r.fer,
            relative_gain: base.filter(|b| *b > 0.0).map(|b| (b - r.fer) / b),
        }));
    }
    out
}

pub fn write_report(merged: &MergedReport, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(Error::io(out))?;
    write_csv(&out.join(FER_FILE), &merged.fer)?;
    write_csv(&out.join(COMPARISON_FILE), &merged.comparison)?;
    write_csv(&out.join(FER_CURVES_FILE), &merged.fer_curves)?;
    write_csv(&out.join(EER_FILE), &merged.eer)
}
