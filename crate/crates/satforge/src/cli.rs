//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::corpus_io::write_corpus_dir;
use crate::error::{Error, Result};
use crate::experiments::{merge_runs, replay, run_eval_asr, run_eval_spk, run_train_sat, run_train_si, write_report};
use crate::manifest::RunManifest;
use crate::report::{read_csv, EerRow, FerRow, EER_FILE, FER_FILE};

pub const THREADS_ENV: &str = "SATFORGE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "satforge",
    version,
    about = "Speaker-adaptive training experiments on synthetic speech features"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Generate a corpus with its embedding tables.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Replace an existing non-empty directory.
        #[arg(long)]
        force: bool,
    },
    /// Train a speaker-independent or a speaker-adaptive model.
    Train(TrainArgs),
    /// Frame error rate of a trained model by minimum recording length.
    EvalAsr {
        /// Run directory of the trained model.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Speaker-recognition equal error rate of an embedding kind.
    EvalSpk(SpkArgs),
    /// Merge the results of several runs over one corpus.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Experiment the relative gains refer to; the first SI run by default.
        #[arg(long)]
        baseline: Option<String>,
    },
    /// Repeat a run from its manifest.
    Rerun {
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Model run to use instead of the recorded one.
        #[arg(long)]
        model_run: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("stage").required(true).args(["si", "sat"])))]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Speaker-independent training.
    #[arg(long)]
    pub si: bool,
    /// Adaptive training starting from `--si-run`.
    #[arg(long, requires = "si_run")]
    pub sat: bool,
    /// Run directory of the speaker-independent model.
    #[arg(long)]
    pub si_run: Option<PathBuf>,
    #[arg(long, value_parser = ["ctrl-network", "ctrl-layer", "ctrl-vector", "ctrl-variable", "ctrl-scale", "concat"])]
    pub mechanism: Option<String>,
    #[arg(long, value_parser = ["auto", "shift", "scale", "shift-scale"])]
    pub mode: Option<String>,
    /// `input`, `hidden`, or comma-separated site indices.
    #[arg(long)]
    pub site: Option<String>,
    #[arg(long, value_parser = ["fine-tune-all", "freeze-main"])]
    pub policy: Option<String>,
    #[arg(long, value_parser = ["oracle_full", "oracle_speaker", "oracle_full_noisy", "oracle_frame"])]
    pub kind: Option<String>,
    /// Control-layer activation.
    #[arg(long, value_parser = ["linear", "relu", "sigmoid", "tanh"])]
    pub activation: Option<String>,
    /// Embedding PCA width; 0 reduces only when required.
    #[arg(long)]
    pub pca_dim: Option<usize>,
    /// Experiment name in reports.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct SpkArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = ["oracle_full", "oracle_speaker", "oracle_full_noisy", "oracle_frame"])]
    pub kind: Option<String>,
    #[arg(long, value_parser = ["cosine", "plda", "lda", "lda-plda"])]
    pub backend: Option<String>,
    /// Comma-separated minimum recording lengths in seconds.
    #[arg(long, value_delimiter = ',')]
    pub min_length: Option<Vec<f64>>,
    /// Relabel speakers into contiguous subsets of at most this many seconds.
    #[arg(long)]
    pub subset_max_sec: Option<f64>,
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn apply_train_overrides(cfg: &mut ExperimentConfig, a: &TrainArgs) {
    let c = &mut cfg.conditioning;
    let set = |slot: &mut String, v: &Option<String>| {
        if let Some(v) = v {
            *slot = v.clone();
        }
    };
    set(&mut c.mechanism, &a.mechanism);
    set(&mut c.transform, &a.mode);
    set(&mut c.sites, &a.site);
    set(&mut c.policy, &a.policy);
    set(&mut c.activation, &a.activation);
    set(&mut cfg.embeddings.kind, &a.kind);
    if let Some(d) = a.pca_dim {
        cfg.conditioning.embedding_pca_dim = d;
    }
}

/// Thread cap from the environment; every computation here is sequential,
/// so any cap of at least one is honoured.
pub fn thread_cap() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Usage(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
    }
}

fn print_fer(dir: &Path) -> Result<()> {
    for r in read_csv::<FerRow>(&dir.join(FER_FILE))? {
        println!(
            "{} {} {} min {}s: FER {:.3}%",
            r.experiment, r.stage, r.split, r.threshold, r.fer
        );
    }
    Ok(())
}

fn summary(m: &RunManifest) {
    println!("run {} ({:?})", m.run.experiment, m.run.command);
}

pub fn execute(cli: Cli) -> Result<()> {
    thread_cap()?;
    match cli.command {
        Cmd::GenData { config, out, force } => {
            let cfg = load_config(config.as_deref())?;
            let corpus = write_corpus_dir(&cfg, &out, force)?;
            println!("wrote {} utterances to {}", corpus.utterances().count(), out.display());
        }
        Cmd::Train(a) => {
            let mut cfg = load_config(a.config.as_deref())?;
            apply_train_overrides(&mut cfg, &a);
            let m = if a.si {
                run_train_si(&cfg, &a.corpus, &a.out, a.name.as_deref())?
            } else {
                let si = a.si_run.as_deref().expect("clap requires --si-run with --sat");
                run_train_sat(&cfg, &a.corpus, si, &a.out, a.name.as_deref())?
            };
            summary(&m);
            print_fer(&a.out)?;
        }
        Cmd::EvalAsr { model, corpus, out } => {
            let m = run_eval_asr(&model, &corpus, &out)?;
            summary(&m);
            print_fer(&out)?;
        }
        Cmd::EvalSpk(a) => {
            let mut cfg = load_config(a.config.as_deref())?;
            if let Some(k) = &a.kind {
                cfg.embeddings.kind = k.clone();
            }
            if let Some(b) = &a.backend {
                cfg.evaluation.backend = b.clone();
            }
            if let Some(t) = &a.min_length {
                cfg.evaluation.min_length_thresholds = t.clone();
            }
            if let Some(s) = a.subset_max_sec {
                cfg.evaluation.subset_max_sec = s;
            }
            let m = run_eval_spk(&cfg, &a.corpus, &a.out)?;
            summary(&m);
            for r in read_csv::<EerRow>(&a.out.join(EER_FILE))? {
                println!(
                    "{} min {}s: EER {:.3}% over {} trials",
                    r.experiment, r.threshold, r.eer, r.trials
                );
            }
        }
        Cmd::Report { runs, out, baseline } => {
            let merged = merge_runs(&runs, baseline.as_deref())?;
            write_report(&merged, &out)?;
            for r in &merged.comparison {
                let gain = r
                    .relative_gain
                    .map_or("-".to_string(), |g| format!("{:+.1}%", 100.0 * g));
                println!("{} {} FER {:.3}% gain {gain}", r.split, r.experiment, r.fer);
            }
        }
        Cmd::Rerun { run, out, model_run } => {
            let m = replay(&run, &out, model_run.as_deref())?;
            summary(&m);
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
