//! CSV reports and speaker trial files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use satforge_core::backends::ScoredTrial;

use crate::error::{Error, Result};

pub const FER_FILE: &str = "fer.csv";
pub const EER_FILE: &str = "eer.csv";
pub const HISTORY_FILE: &str = "history.csv";
pub const TRIALS_FILE: &str = "trials.txt";
pub const SCORES_FILE: &str = "scores.txt";

/// Frame error rate of one experiment on one split, over recordings of at
/// least `threshold` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FerRow {
    pub experiment: String,
    pub stage: String,
    pub split: String,
    pub threshold: f64,
    pub fer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EerRow {
    pub experiment: String,
    pub kind: String,
    pub backend: String,
    /// 0 for genuine speakers.
    pub subset_max_sec: f64,
    pub threshold: f64,
    pub trials: usize,
    pub eer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: Option<f64>,
    pub dev_fer: f64,
}

/// Ranking of experiments on one split against a baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub experiment: String,
    pub split: String,
    pub fer: f64,
    pub relative_gain: Option<f64>,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(Error::io(path))
}

/// Rows of a CSV written by [`write_csv`]; an absent file has none.
pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn trial_rows(scored: &[ScoredTrial], enroll_prefix: &str) -> Vec<(String, String, bool, f64)> {
    let mut rows: Vec<_> = scored
        .iter()
        .map(|t| {
            (
                format!("{enroll_prefix}{:03}", t.enroll_speaker),
                t.test_id.clone(),
                t.target,
                t.score,
            )
        })
        .collect();
    rows.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
    rows
}

/// `enroll_id test_id target|nontarget` and `enroll_id test_id score`, sorted.
pub fn write_trials_and_scores(dir: &Path, scored: &[ScoredTrial], enroll_prefix: &str) -> Result<()> {
    let rows = trial_rows(scored, enroll_prefix);
    let mut trials = String::new();
    let mut scores = String::new();
    for (e, t, target, s) in &rows {
        trials.push_str(&format!("{e} {t} {}\n", if *target { "target" } else { "nontarget" }));
        scores.push_str(&format!("{e} {t} {s:?}\n"));
    }
    let tp = dir.join(TRIALS_FILE);
    fs::write(&tp, trials).map_err(Error::io(&tp))?;
    let sp = dir.join(SCORES_FILE);
    fs::write(&sp, scores).map_err(Error::io(&sp))
}

/// Reads a trial file into `(enroll_id, test_id, target)` triples.
pub fn read_trials(path: &Path) -> Result<Vec<(String, String, bool)>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    text.lines()
        .enumerate()
        .map(|(n, l)| {
            let f: Vec<&str> = l.split_whitespace().collect();
            let target = match f.as_slice() {
                [_, _, "target"] => true,
                [_, _, "nontarget"] => false,
                _ => {
                    return Err(Error::format(
                        path,
                        format!("line {}: expected `enroll test target|nontarget`", n + 1),
                    ))
                }
            };
            Ok((f[0].to_string(), f[1].to_string(), target))
        })
        .collect()
}

/// Reads a score file into `(enroll_id, test_id, score)` triples.
pub fn read_scores(path: &Path) -> Result<Vec<(String, String, f64)>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    text.lines()
        .enumerate()
        .map(|(n, l)| {
            let f: Vec<&str> = l.split_whitespace().collect();
            match f.as_slice() {
                [e, t, s] => s
                    .parse()
                    .map(|s| (e.to_string(), t.to_string(), s))
                    .map_err(|_| Error::format(path, format!("line {}: bad score", n + 1))),
                _ => Err(Error::format(
                    path,
                    format!("line {}: expected `enroll test score`", n + 1),
                )),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let rows = vec![
            FerRow {
                experiment: "ctrl-layer[shift,linear]@input".into(),
                stage: "sat".into(),
                split: "eval".into(),
                threshold: 0.5,
                fer: 12.25,
            },
            FerRow {
                experiment: "si".into(),
                stage: "si".into(),
                split: "dev".into(),
                threshold: 0.0,
                fer: 1.0 / 3.0,
            },
        ];
        write_csv(&p, &rows).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("experiment,stage,split,threshold,fer\n"));
        assert_eq!(read_csv::<FerRow>(&p).unwrap(), rows);
    }

    #[test]
    fn trial_files_round_trip_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let scored = vec![
            ScoredTrial {
                enroll_speaker: 7,
                test_id: "spk007-001".into(),
                target: true,
                score: 0.25,
            },
            ScoredTrial {
                enroll_speaker: 3,
                test_id: "spk007-001".into(),
                target: false,
                score: -1.5,
            },
        ];
        write_trials_and_scores(dir.path(), &scored, "spk").unwrap();
        let trials = read_trials(&dir.path().join(TRIALS_FILE)).unwrap();
        assert_eq!(
            trials,
            vec![
                ("spk003".into(), "spk007-001".into(), false),
                ("spk007".into(), "spk007-001".into(), true)
            ]
        );
        let scores = read_scores(&dir.path().join(SCORES_FILE)).unwrap();
        assert_eq!(scores[0].2, -1.5);
        assert_eq!(scores[1].2, 0.25);
    }
}
