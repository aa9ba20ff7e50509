//! Corpus directories.
//!
//! ```text
//! config.toml            resolved experiment configuration
//! manifest.txt           id speaker duration split offset_norm= channel_mean= noise=
//! corpus.bin             prototypes and speaker offsets
//! blobs/<id>.bin         frames, labels, speaker_offset, channel_scale, noise_level
//! embeddings/<kind>.txt  embedding tables
//! ```
//!
//! Blobs use the tensor file format. Features are stored before mean
//! normalization; loading applies it when the configuration asks for it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use satforge_core::conditioning::{Embedding, EmbeddingLevel};
use satforge_core::synth::{embed_corpus, gen_corpus, AttributeLatents, Corpus, EmbeddingKind, Split, Utterance};
use satforge_core::trainer::EmbeddingTable;
use satforge_core::Matrix;

use crate::checkpoint::{load_tensors, save_tensors, Tensors};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.txt";
const CORPUS_FILE: &str = "corpus.bin";
const BLOB_DIR: &str = "blobs";
const EMBEDDING_DIR: &str = "embeddings";

pub fn embedding_path(dir: &Path, kind: EmbeddingKind) -> PathBuf {
    dir.join(EMBEDDING_DIR).join(format!("{}.txt", kind.name()))
}

/// One manifest line; the latent summary is informational.
pub fn manifest_line(split: Split, u: &Utterance) -> String {
    let l = &u.latents;
    let norm = l.speaker_offset.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
    let mean = l.channel_scale.iter().map(|v| *v as f64).sum::<f64>() / l.channel_scale.len().max(1) as f64;
    format!(
        "{} spk{:03} {:.2} {} offset_norm={norm:.6} channel_mean={mean:.6} noise={:.6}",
        u.id,
        u.speaker,
        u.duration_sec,
        split.name(),
        l.noise_level
    )
}

pub fn manifest_text(corpus: &Corpus) -> String {
    let mut s = String::new();
    for (split, u) in corpus.utterances() {
        let _ = writeln!(s, "{}", manifest_line(split, u));
    }
    s
}

fn is_empty_dir(dir: &Path) -> Result<bool> {
    match fs::read_dir(dir) {
        Ok(mut it) => Ok(it.next().is_none()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(true),
        Err(e) => Err(Error::io(dir)(e)),
    }
}

fn utterance_tensors(u: &Utterance) -> Tensors {
    let labels: Vec<f32> = u.labels.iter().map(|&k| k as f32).collect();
    vec![
        ("frames".into(), u.frames.clone()),
        ("labels".into(), Matrix::row_vector(&labels)),
        ("speaker_offset".into(), Matrix::row_vector(&u.latents.speaker_offset)),
        ("channel_scale".into(), Matrix::row_vector(&u.latents.channel_scale)),
        ("noise_level".into(), Matrix::row_vector(&[u.latents.noise_level])),
    ]
}

/// Generates the configured corpus and embedding tables into `dir`.
pub fn write_corpus_dir(cfg: &ExperimentConfig, dir: &Path, force: bool) -> Result<Corpus> {
    if !force && !is_empty_dir(dir)? {
        return Err(Error::Usage(format!(
            "{} exists and is not empty; pass --force to overwrite",
            dir.display()
        )));
    }
    if force && dir.exists() {
        fs::remove_dir_all(dir).map_err(Error::io(dir))?;
    }
    let corpus = gen_corpus(&cfg.corpus_config(), cfg.seeds.corpus)?;
    let blobs = dir.join(BLOB_DIR);
    fs::create_dir_all(&blobs).map_err(Error::io(&blobs))?;
    let emb_dir = dir.join(EMBEDDING_DIR);
    fs::create_dir_all(&emb_dir).map_err(Error::io(&emb_dir))?;

    write_file(&dir.join(CONFIG_FILE), cfg.to_text().as_bytes())?;
    write_file(&dir.join(MANIFEST_FILE), manifest_text(&corpus).as_bytes())?;
    save_tensors(
        &dir.join(CORPUS_FILE),
        &[
            ("prototypes".into(), corpus.prototypes.clone()),
            ("speaker_offsets".into(), rows_matrix(&corpus.speaker_offsets)),
        ],
    )?;
    for (_, u) in corpus.utterances() {
        save_tensors(&blobs.join(format!("{}.bin", u.id)), &utterance_tensors(u))?;
    }
    // Embeddings describe the recordings as generated, independent of normalization.
    for kind in cfg.generated_kinds() {
        let table = embed_corpus(&corpus, kind, &cfg.embedding_config(), cfg.jitter_seed());
        save_embedding_table(&embedding_path(dir, kind), &corpus, &table)?;
    }
    Ok(corpus)
}

fn rows_matrix(rows: &[Vec<f32>]) -> Matrix<f32> {
    let cols = rows.first().map_or(0, Vec::len);
    Matrix::new(rows.len(), cols, rows.concat()).expect("rows of equal width")
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(Error::io(path))
}

/// Reads a corpus directory, checks it against `cfg`, and applies mean
/// normalization when configured.
pub fn load_corpus_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<Corpus> {
    let stored = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
    if stored.corpus_config() != cfg.corpus_config() || stored.seeds.corpus != cfg.seeds.corpus {
        return Err(Error::Config(format!(
            "corpus in {} was generated from a different corpus configuration or seed",
            dir.display()
        )));
    }
    let corpus_config = cfg.corpus_config();
    let globals_path = dir.join(CORPUS_FILE);
    let globals = load_tensors(&globals_path)?;
    let get = |t: &Tensors, name: &str, path: &Path| -> Result<Matrix<f32>> {
        t.iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m.clone())
            .ok_or_else(|| Error::format(path, format!("tensor `{name}` is missing")))
    };
    let prototypes = get(&globals, "prototypes", &globals_path)?;
    let offsets = get(&globals, "speaker_offsets", &globals_path)?;
    let mut corpus = Corpus {
        config: corpus_config.clone(),
        seed: cfg.seeds.corpus,
        prototypes,
        speaker_offsets: (0..offsets.rows()).map(|r| offsets.row(r).to_vec()).collect(),
        train: Vec::new(),
        dev: Vec::new(),
        eval: Vec::new(),
        cmn_applied: false,
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(Error::io(&manifest_path))?;
    for (n, line) in text.lines().enumerate() {
        let bad = |msg: &str| Error::format(&manifest_path, format!("line {}: {msg}", n + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 4 {
            return Err(bad("expected `id speaker duration split ...`"));
        }
        let speaker: usize = f[1]
            .strip_prefix("spk")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad speaker"))?;
        let split: Split = f[3].parse().map_err(|_| bad("bad split"))?;
        let index: usize = f[0]
            .rsplit('-')
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad utterance id"))?;
        let blob_path = dir.join(BLOB_DIR).join(format!("{}.bin", f[0]));
        let t = load_tensors(&blob_path)?;
        let frames = get(&t, "frames", &blob_path)?;
        let labels: Vec<usize> = get(&t, "labels", &blob_path)?
            .data()
            .iter()
            .map(|&v| v as usize)
            .collect();
        if labels.len() != frames.rows() || labels.iter().any(|&k| k >= corpus_config.num_classes) {
            return Err(Error::format(&blob_path, "labels do not match the frames"));
        }
        let latents = AttributeLatents {
            speaker_id: speaker,
            speaker_offset: get(&t, "speaker_offset", &blob_path)?.data().to_vec(),
            channel_scale: get(&t, "channel_scale", &blob_path)?.data().to_vec(),
            noise_level: get(&t, "noise_level", &blob_path)?.data()[0],
        };
        let duration_sec = frames.rows() as f64 * corpus_config.frame_period_sec;
        corpus.split_mut(split).push(Utterance {
            id: f[0].to_string(),
            speaker,
            index,
            frames,
            labels,
            latents,
            duration_sec,
        });
    }
    if cfg.corpus.cmn {
        corpus.apply_cmn();
    }
    Ok(corpus)
}

/// Writes `id dim v1 … vd` lines in corpus order; frame-level embeddings
/// repeat the id once per frame.
pub fn save_embedding_table(path: &Path, corpus: &Corpus, table: &EmbeddingTable) -> Result<()> {
    let f = fs::File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(f);
    for (_, u) in corpus.utterances() {
        let e = table
            .get(&u.id)
            .ok_or_else(|| Error::format(path, format!("no embedding for `{}`", u.id)))?;
        for r in 0..e.vectors.rows() {
            write!(w, "{} {}", u.id, e.dim()).map_err(Error::io(path))?;
            for v in e.vectors.row(r) {
                write!(w, " {v:?}").map_err(Error::io(path))?;
            }
            writeln!(w).map_err(Error::io(path))?;
        }
    }
    w.flush().map_err(Error::io(path))
}

pub fn load_embedding_table(path: &Path, kind: EmbeddingKind) -> Result<EmbeddingTable> {
    let f = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Config(format!("embedding table {} does not exist", path.display())),
        _ => Error::io(path)(e),
    })?;
    let mut rows: BTreeMap<String, Vec<Vec<f32>>> = BTreeMap::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        let bad = |msg: &str| Error::format(path, format!("line {}: {msg}", n + 1));
        let mut it = line.split_whitespace();
        let id = it.next().ok_or_else(|| bad("empty line"))?;
        let dim: usize = it
            .next()
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| bad("bad dimension"))?;
        let v: Vec<f32> = it
            .map(|x| x.parse().map_err(|_| bad("bad value")))
            .collect::<Result<_>>()?;
        if v.len() != dim {
            return Err(bad("value count differs from the declared dimension"));
        }
        rows.entry(id.to_string()).or_default().push(v);
    }
    let level = kind.level();
    rows.into_iter()
        .map(|(id, r)| {
            if level == EmbeddingLevel::Utterance && r.len() != 1 {
                return Err(Error::format(path, format!("`{id}` has {} rows, expected 1", r.len())));
            }
            let vectors = Matrix::new(r.len(), r[0].len(), r.concat())?;
            Ok((
                id,
                Embedding {
                    vectors,
                    level,
                    kind: kind.name().into(),
                },
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.corpus.num_speakers = 4;
        c.corpus.train_speakers = 2;
        c.corpus.dev_speakers = 1;
        c.corpus.eval_speakers = 1;
        c.corpus.utts_per_speaker = 3;
        c.corpus.min_frames = 5;
        c.corpus.max_frames = 9;
        c
    }

    #[test]
    fn corpus_round_trips_through_a_directory() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small();
        cfg.corpus.cmn = false;
        let written = write_corpus_dir(&cfg, dir.path(), false).unwrap();
        let read = load_corpus_dir(&cfg, dir.path()).unwrap();
        assert_eq!(read, written);
        for kind in EmbeddingKind::ALL {
            let t = load_embedding_table(&embedding_path(dir.path(), kind), kind).unwrap();
            let expected = embed_corpus(&written, kind, &cfg.embedding_config(), cfg.jitter_seed());
            assert_eq!(t, expected);
        }
    }

    #[test]
    fn refuses_non_empty_directories_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        write_corpus_dir(&cfg, dir.path(), false).unwrap();
        assert!(matches!(
            write_corpus_dir(&cfg, dir.path(), false),
            Err(Error::Usage(_))
        ));
        write_corpus_dir(&cfg, dir.path(), true).unwrap();
    }

    #[test]
    fn rejects_a_different_corpus_configuration() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        write_corpus_dir(&cfg, dir.path(), false).unwrap();
        let mut other = cfg.clone();
        other.seeds.corpus += 1;
        assert!(load_corpus_dir(&other, dir.path()).is_err());
        let mut cmn_off = cfg.clone();
        cmn_off.corpus.cmn = false;
        assert!(load_corpus_dir(&cmn_off, dir.path()).is_ok());
    }
}
