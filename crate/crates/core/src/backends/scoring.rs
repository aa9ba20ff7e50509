use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            context: "cosine scoring width",
            expected: a.len(),
            found: b.len(),
        });
    }
    let na = Float::sqrt(a.iter().map(|v| v * v).sum::<f64>());
    let nb = Float::sqrt(b.iter().map(|v| v * v).sum::<f64>());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine of a zero vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Arithmetic mean of a speaker's enrollment embeddings.
pub fn speaker_representation(embeddings: &[&[f64]]) -> Result<Vec<f64>> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::Degenerate("speaker has no enrollment embeddings".into()))?;
    let mut out = vec![0.0; first.len()];
    for e in embeddings {
        if e.len() != out.len() {
            return Err(Error::Shape {
                context: "enrollment embedding width",
                expected: out.len(),
                found: e.len(),
            });
        }
        for (o, v) in out.iter_mut().zip(e.iter()) {
            *o += v;
        }
    }
    let n = embeddings.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

/// An enrolled speaker representation against one test recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Trial {
    pub enroll: usize,
    /// Index into the test list the trials were built from.
    pub test: usize,
    pub target: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSet {
    pub trials: Vec<Trial>,
    pub seed: u64,
    pub non_target_prop: f64,
}

impl TrialSet {
    pub fn num_targets(&self) -> usize {
        self.trials.iter().filter(|t| t.target).count()
    }

    pub fn num_non_targets(&self) -> usize {
        self.trials.len() - self.num_targets()
    }
}

/// One target trial per test recording; non-target trials pair sampled test
/// recordings with a uniformly drawn different enrolled speaker, so that the
/// non-target share is `non_target_prop` up to rounding.
pub fn make_trials(enrolled: &[usize], test_speakers: &[usize], non_target_prop: f64, seed: u64) -> Result<TrialSet> {
    if !(0.0..1.0).contains(&non_target_prop) {
        return Err(Error::InvalidConfig("non-target proportion must be in [0, 1)".into()));
    }
    let enrolled: Vec<usize> = enrolled.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if enrolled.len() < 2 {
        return Err(Error::Degenerate(
            "need at least 2 enrolled speakers for non-target trials".into(),
        ));
    }
    if let Some(s) = test_speakers.iter().find(|s| enrolled.binary_search(s).is_err()) {
        return Err(Error::Degenerate(alloc::format!("test speaker {s} is not enrolled")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials: Vec<Trial> = test_speakers
        .iter()
        .enumerate()
        .map(|(test, &spk)| Trial {
            enroll: spk,
            test,
            target: true,
        })
        .collect();
    let n_targets = trials.len() as f64;
    let n_non = Float::round(n_targets * non_target_prop / (1.0 - non_target_prop)) as usize;
    let mut pool: Vec<usize> = Vec::new();
    while pool.len() < n_non {
        let mut round: Vec<usize> = (0..test_speakers.len()).collect();
        round.shuffle(&mut rng);
        pool.extend(round);
    }
    pool.truncate(n_non);
    for test in pool {
        let own = test_speakers[test];
        let own_pos = enrolled.binary_search(&own).expect("checked above");
        let mut pick = rng.random_range(0..enrolled.len() - 1);
        if pick >= own_pos {
            pick += 1;
        }
        trials.push(Trial {
            enroll: enrolled[pick],
            test,
            target: false,
        });
    }
    trials.sort_unstable();
    Ok(TrialSet {
        trials,
        seed,
        non_target_prop,
    })
}

/// Equal error rate in percent. Sweeps the acceptance threshold `score ≥ θ`
/// over the sorted unique scores and `+∞`, then interpolates linearly between
/// the last operating point with `FAR > FRR` and the first with `FAR ≤ FRR`.
pub fn eer(scores: &[f64], is_target: &[bool]) -> Result<f64> {
    if scores.len() != is_target.len() {
        return Err(Error::Shape {
            context: "target flags per score",
            expected: scores.len(),
            found: is_target.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("trial scores".into()));
    }
    let n_t = is_target.iter().filter(|&&t| t).count();
    let n_n = is_target.len() - n_t;
    if n_t == 0 || n_n == 0 {
        return Err(Error::Degenerate("EER needs target and non-target trials".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // At θ = lowest score everything is accepted.
    let (mut rejected_t, mut rejected_n) = (0usize, 0usize);
    let mut prev = (1.0, 0.0);
    let mut i = 0;
    loop {
        let far = (n_n - rejected_n) as f64 / n_n as f64;
        let frr = rejected_t as f64 / n_t as f64;
        if far - frr <= 0.0 {
            return Ok(100.0 * interpolate(prev, (far, frr)));
        }
        prev = (far, frr);
        // Raise θ past the next unique score; at θ = +∞ FAR is 0 and FRR is 1,
        // so the loop returns before running out of scores.
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if is_target[order[i]] {
                rejected_t += 1;
            } else {
                rejected_n += 1;
            }
            i += 1;
        }
    }
}

/// Crossing of `FAR = FRR` on the segment between two operating points
/// `(far, frr)`, where `a` has `far > frr` and `b` has `far ≤ frr`.
pub(crate) fn interpolate(a: (f64, f64), b: (f64, f64)) -> f64 {
    let da = a.0 - a.1;
    let db = b.0 - b.1;
    if db == 0.0 {
        return b.0;
    }
    let alpha = da / (da - db);
    a.0 + alpha * (b.0 - a.0)
}
