//! Soft-voting ensembles and channel fusion.

use crate::error::{Error, Result};
use crate::staging::{argmax_stage, Hypnodensity, Hypnogram, RecordingBundle, Stage, N_STAGES};

/// Ordered selection of model names from a bundle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnsembleSpec {
    member_names: Vec<String>,
}

impl EnsembleSpec {
    pub fn new(member_names: Vec<String>) -> Result<Self> {
        if member_names.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        for (i, n) in member_names.iter().enumerate() {
            if member_names[..i].contains(n) {
                return Err(Error::DuplicateName(n.clone()));
            }
        }
        Ok(EnsembleSpec { member_names })
    }

    /// Every model of the bundle, in bundle order.
    pub fn all(bundle: &RecordingBundle) -> Result<Self> {
        Self::new(bundle.models().iter().map(|(n, _)| n.clone()).collect())
    }

    pub fn member_names(&self) -> &[String] {
        &self.member_names
    }

    pub fn resolve<'a>(&self, bundle: &'a RecordingBundle) -> Result<Vec<&'a Hypnodensity>> {
        self.member_names
            .iter()
            .map(|n| bundle.model(n).ok_or_else(|| Error::UnknownName(n.clone())))
            .collect()
    }

    pub fn apply(&self, bundle: &RecordingBundle) -> Result<Hypnodensity> {
        soft_vote(&self.resolve(bundle)?)
    }
}

fn check_aligned(members: &[&Hypnodensity]) -> Result<usize> {
    let first = members.first().ok_or(Error::EmptyEnsemble)?;
    let t = first.len();
    for (m, h) in members.iter().enumerate().skip(1) {
        if h.len() != t {
            return Err(Error::Alignment(format!("member 0 has {t} epochs but member {m} has {}", h.len())));
        }
    }
    Ok(t)
}

/// Element-wise mean of the members' per-epoch distributions.
pub fn soft_vote(members: &[&Hypnodensity]) -> Result<Hypnodensity> {
    let t = check_aligned(members)?;
    // Running mean: identical members reproduce their rows exactly.
    let rows = (0..t)
        .map(|i| {
            let mut acc = *members[0].row(i);
            for (k, h) in members.iter().enumerate().skip(1) {
                let n = (k + 1) as f64;
                for (a, p) in acc.iter_mut().zip(h.row(i)) {
                    *a += (p - *a) / n;
                }
            }
            acc
        })
        .collect();
    Hypnodensity::new(rows, members[0].epoch_duration_s())
}

/// Per-epoch majority vote over the channels' argmax labels.
///
/// Ties between equally voted stages go to the stage with the larger summed
/// probability over all channels, then to the lowest stage code.
pub fn channel_majority_vote(channels: &[&Hypnodensity]) -> Result<Hypnogram> {
    let t = check_aligned(channels)?;
    let stages = (0..t)
        .map(|i| {
            let mut votes = [0usize; N_STAGES];
            let mut mass = [0.0f64; N_STAGES];
            for h in channels {
                let row = h.row(i);
                let s = argmax_stage(row).expect("fixed arity");
                votes[s.code() as usize] += 1;
                for (a, p) in mass.iter_mut().zip(row) {
                    *a += p;
                }
            }
            let top = *votes.iter().max().expect("five stages");
            let mut best: Option<usize> = None;
            for c in (0..N_STAGES).filter(|&c| votes[c] == top) {
                if best.is_none_or(|b| mass[c] > mass[b]) {
                    best = Some(c);
                }
            }
            Stage::SCORED[best.expect("at least one stage has the top count")]
        })
        .collect();
    Hypnogram::new(stages, channels[0].epoch_duration_s())
}
