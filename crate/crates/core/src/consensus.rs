//! Multi-scorer consensus.
//!
//! For scorer `s` at epoch `t`, the probabilistic consensus of the *other*
//! scorers is their vote count per stage divided by the largest count, so
//! the most voted stage(s) score exactly 1. A scorer's soft-agreement is the
//! mean, over scored epochs, of the consensus score of the stage it chose.
//! The consensus hypnogram is a per-epoch majority vote whose ties go to the
//! most reliable participating scorer (highest soft-agreement on the
//! recording, then lexicographic name). The soft-consensus is the empirical
//! stage distribution of a scorer set.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::staging::{scored_epochs, Hypnodensity, Hypnogram, ProbVec, Stage, N_STAGES};

pub const DEFAULT_TOP_K: usize = 4;

fn check_scorers(scorers: &[&Hypnogram], needed: usize) -> Result<usize> {
    if scorers.len() < needed {
        return Err(Error::TooFewScorers { needed, got: scorers.len() });
    }
    let t = scorers[0].len();
    if let Some(h) = scorers.iter().find(|h| h.len() != t) {
        return Err(Error::Alignment(format!("scorers have {t} and {} epochs", h.len())));
    }
    Ok(t)
}

fn check_index(s: usize, n: usize) -> Result<()> {
    if s >= n {
        return Err(Error::UnknownName(format!("scorer index {s} (have {n})")));
    }
    Ok(())
}

fn vote_counts<'a>(stages: impl Iterator<Item = &'a Stage>) -> [u32; N_STAGES] {
    let mut counts = [0u32; N_STAGES];
    for s in stages {
        if let Some(c) = s.index() {
            counts[c] += 1;
        }
    }
    counts
}

/// Vote shares of every scorer except `excluded`, scaled so the top stage
/// scores 1.
pub fn probabilistic_consensus(scorers: &[&Hypnogram], excluded: usize, t: usize) -> Result<ProbVec> {
    check_scorers(scorers, 2)?;
    check_index(excluded, scorers.len())?;
    let others = scorers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != excluded)
        .map(|(_, h)| &h.stages()[t]);
    let counts = vote_counts(others);
    let max = *counts.iter().max().expect("five stages");
    if max == 0 {
        return Err(Error::UndefinedConsensus(t));
    }
    Ok(counts.map(|c| c as f64 / max as f64))
}

/// Mean consensus credit of scorer `s` over the epochs every scorer scored.
pub fn soft_agreement(scorers: &[&Hypnogram], s: usize) -> Result<f64> {
    check_scorers(scorers, 2)?;
    check_index(s, scorers.len())?;
    let epochs = scored_epochs(scorers)?;
    let mut total = 0.0;
    for &t in &epochs {
        let z = probabilistic_consensus(scorers, s, t)?;
        let own = scorers[s].stages()[t].index().expect("epoch is scored");
        total += z[own];
    }
    Ok(total / epochs.len() as f64)
}

pub fn soft_agreements(scorers: &[&Hypnogram]) -> Result<Vec<f64>> {
    (0..scorers.len()).map(|s| soft_agreement(scorers, s)).collect()
}

/// Soft-agreement of each model's argmax hypnogram against the other models.
pub fn inter_model_soft_agreement(models: &[(String, Hypnogram)]) -> Result<Vec<(String, f64)>> {
    let refs: Vec<&Hypnogram> = models.iter().map(|(_, h)| h).collect();
    let scores = soft_agreements(&refs)?;
    Ok(models.iter().map(|(n, _)| n.clone()).zip(scores).collect())
}

/// Empirical stage distribution of the unmasked scorers at epoch `t`.
pub fn soft_consensus(scorers: &[&Hypnogram], t: usize) -> Result<ProbVec> {
    if scorers.is_empty() {
        return Err(Error::EmptyConsensusSet);
    }
    let counts = vote_counts(scorers.iter().map(|h| &h.stages()[t]));
    let n: u32 = counts.iter().sum();
    if n == 0 {
        return Err(Error::UndefinedConsensus(t));
    }
    Ok(counts.map(|c| c as f64 / n as f64))
}

/// Which scorers take part in a consensus hypnogram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConsensusMode {
    /// Every scorer except the one being evaluated.
    ExcludeOne(usize),
    /// An explicit scorer set, e.g. the dataset's k most reliable scorers.
    Set(Vec<usize>),
}

impl ConsensusMode {
    fn participants(&self, n: usize) -> Result<Vec<usize>> {
        let p: Vec<usize> = match self {
            ConsensusMode::ExcludeOne(s) => {
                check_index(*s, n)?;
                (0..n).filter(|i| i != s).collect()
            }
            ConsensusMode::Set(set) => {
                for &i in set {
                    check_index(i, n)?;
                }
                let mut set = set.clone();
                set.sort_unstable();
                set.dedup();
                set
            }
        };
        if p.len() < 2 {
            return Err(Error::TooFewScorers { needed: 2, got: p.len() });
        }
        Ok(p)
    }
}

/// Orders scorer indices by soft-agreement (descending), then by name.
fn rank_by_reliability(names: &[&str], reliability: &[f64], among: &[usize]) -> Vec<usize> {
    let mut order = among.to_vec();
    order.sort_by(|&a, &b| {
        reliability[b]
            .partial_cmp(&reliability[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| names[a].cmp(names[b]))
    });
    order
}

/// Per-recording soft-agreement of every scorer. When no epoch is scored
/// by all of them, every scorer gets 0 and ties fall through to names.
fn recording_reliability(hyps: &[&Hypnogram]) -> Result<Vec<f64>> {
    match soft_agreements(hyps) {
        Ok(r) => Ok(r),
        Err(Error::NoScoredEpochs) => Ok(vec![0.0; hyps.len()]),
        Err(e) => Err(e),
    }
}

/// Per-epoch majority vote among the participating scorers. Epochs where
/// every participant is masked stay `Mask`.
pub fn consensus_hypnogram(scorers: &[(String, Hypnogram)], mode: &ConsensusMode) -> Result<Hypnogram> {
    let hyps: Vec<&Hypnogram> = scorers.iter().map(|(_, h)| h).collect();
    let t_len = check_scorers(&hyps, 2)?;
    let participants = mode.participants(scorers.len())?;
    let names: Vec<&str> = scorers.iter().map(|(n, _)| n.as_str()).collect();
    let reliability = recording_reliability(&hyps)?;
    let ranking = rank_by_reliability(&names, &reliability, &participants);

    let stages = (0..t_len)
        .map(|t| {
            let counts = vote_counts(participants.iter().map(|&i| &hyps[i].stages()[t]));
            let top = *counts.iter().max().expect("five stages");
            if top == 0 {
                return Stage::Mask;
            }
            let tied: Vec<usize> = (0..N_STAGES).filter(|&c| counts[c] == top).collect();
            if tied.len() == 1 {
                return Stage::SCORED[tied[0]];
            }
            ranking
                .iter()
                .filter_map(|&i| hyps[i].stages()[t].index())
                .find(|c| tied.contains(c))
                .map(|c| Stage::SCORED[c])
                .expect("a tied stage was voted by some participant")
        })
        .collect();
    Hypnogram::new(stages, hyps[0].epoch_duration_s())
}

/// Everything the protocol yields for one recording and one scorer set.
#[derive(Debug, Clone)]
pub struct ConsensusResult {
    pub consensus_hypnogram: Hypnogram,
    /// Full-length; rows where every participant is masked hold a uniform
    /// placeholder and are absent from `epochs`.
    pub soft_consensus: Hypnodensity,
    /// Epochs scored by every participant.
    pub epochs: Vec<usize>,
    /// Soft-agreement of every scorer on the recording, in input order.
    pub per_scorer_soft_agreement: Vec<(String, f64)>,
    /// Participant names, most reliable first.
    pub reliability_ranking: Vec<String>,
}

pub fn consensus_result(scorers: &[(String, Hypnogram)], mode: &ConsensusMode) -> Result<ConsensusResult> {
    let consensus = consensus_hypnogram(scorers, mode)?;
    let hyps: Vec<&Hypnogram> = scorers.iter().map(|(_, h)| h).collect();
    let participants = mode.participants(scorers.len())?;
    let members: Vec<&Hypnogram> = participants.iter().map(|&i| hyps[i]).collect();
    let reliability = recording_reliability(&hyps)?;
    let names: Vec<&str> = scorers.iter().map(|(n, _)| n.as_str()).collect();

    let rows = (0..consensus.len())
        .map(|t| match soft_consensus(&members, t) {
            Ok(row) => Ok(row),
            Err(Error::UndefinedConsensus(_)) => Ok([1.0 / N_STAGES as f64; N_STAGES]),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    let epochs = scored_epochs(&members)?;

    Ok(ConsensusResult {
        soft_consensus: Hypnodensity::new(rows, consensus.epoch_duration_s())?,
        consensus_hypnogram: consensus,
        epochs,
        per_scorer_soft_agreement: names.iter().map(|n| n.to_string()).zip(reliability.iter().copied()).collect(),
        reliability_ranking: rank_by_reliability(&names, &reliability, &participants)
            .into_iter()
            .map(|i| names[i].to_string())
            .collect(),
    })
}

/// Dataset-level reliability: each scorer's mean soft-agreement over the
/// recordings it appears in, sorted descending (names break ties).
pub fn dataset_reliability<'a, I>(per_recording: I) -> Vec<(String, f64)>
where
    I: IntoIterator<Item = &'a [(String, f64)]>,
{
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for rec in per_recording {
        for (name, sa) in rec {
            let e = acc.entry(name.as_str()).or_insert((0.0, 0));
            e.0 += sa;
            e.1 += 1;
        }
    }
    let mut out: Vec<(String, f64)> = acc.into_iter().map(|(n, (s, c))| (n.to_string(), s / c as f64)).collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Names of the `k` most reliable scorers.
pub fn top_k(ranking: &[(String, f64)], k: usize) -> Vec<String> {
    ranking.iter().take(k).map(|(n, _)| n.clone()).collect()
}
