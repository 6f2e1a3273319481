//! Stages, hypnograms, hypnodensities and aligned recording bundles.
//!
//! Every matrix and file in this crate orders the stage axis by the stage
//! code: W=0, N1=1, N2=2, N3=3, REM=4. `Stage::Mask` marks epochs that were
//! left unscored (or carry a non-stage annotation) and never enters a metric,
//! an ensemble or a consensus.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Number of scoreable stages.
pub const N_STAGES: usize = 5;

/// Tolerance on a hypnodensity row sum before the row is rejected.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

pub const DEFAULT_EPOCH_S: f64 = 30.0;

/// Per-stage probability (or score) vector in stage-code order.
pub type ProbVec = [f64; N_STAGES];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    W,
    N1,
    N2,
    N3,
    Rem,
    Mask,
}

impl Stage {
    pub const SCORED: [Stage; N_STAGES] = [Stage::W, Stage::N1, Stage::N2, Stage::N3, Stage::Rem];

    /// Integer code; `Mask` maps to 255.
    pub fn code(self) -> u8 {
        match self {
            Stage::W => 0,
            Stage::N1 => 1,
            Stage::N2 => 2,
            Stage::N3 => 3,
            Stage::Rem => 4,
            Stage::Mask => 255,
        }
    }

    /// Any code outside 0..=4 decodes to `Mask`.
    pub fn from_code(code: u8) -> Stage {
        Stage::SCORED.get(code as usize).copied().unwrap_or(Stage::Mask)
    }

    /// Column index into a [`ProbVec`], `None` for `Mask`.
    pub fn index(self) -> Option<usize> {
        match self {
            Stage::Mask => None,
            s => Some(s.code() as usize),
        }
    }

    pub fn is_scored(self) -> bool {
        self != Stage::Mask
    }

    pub fn is_sleep(self) -> bool {
        matches!(self, Stage::N1 | Stage::N2 | Stage::N3 | Stage::Rem)
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::W => "W",
            Stage::N1 => "N1",
            Stage::N2 => "N2",
            Stage::N3 => "N3",
            Stage::Rem => "REM",
            Stage::Mask => "MASK",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "W" => Ok(Stage::W),
            "N1" => Ok(Stage::N1),
            "N2" => Ok(Stage::N2),
            "N3" => Ok(Stage::N3),
            "REM" => Ok(Stage::Rem),
            "MASK" => Ok(Stage::Mask),
            other => Err(format!("unknown stage token {other:?}")),
        }
    }
}

pub fn one_hot(stage: Stage) -> Result<ProbVec> {
    let idx = stage.index().ok_or(Error::InvalidStage)?;
    let mut v = [0.0; N_STAGES];
    v[idx] = 1.0;
    Ok(v)
}

/// Stage with the largest entry; ties go to the lowest stage code.
pub fn argmax_stage(p: &[f64]) -> Result<Stage> {
    if p.len() != N_STAGES {
        return Err(Error::Shape { expected: N_STAGES, got: p.len() });
    }
    let mut best = 0;
    for c in 1..N_STAGES {
        if p[c] > p[best] {
            best = c;
        }
    }
    Ok(Stage::SCORED[best])
}

fn check_epoch_duration(epoch_duration_s: f64) -> Result<()> {
    if !(epoch_duration_s.is_finite() && epoch_duration_s > 0.0) {
        return Err(Error::InvalidHypnogram(format!(
            "epoch duration must be positive, got {epoch_duration_s}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypnogram {
    stages: Vec<Stage>,
    epoch_duration_s: f64,
}

impl Hypnogram {
    pub fn new(stages: Vec<Stage>, epoch_duration_s: f64) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::InvalidHypnogram("hypnogram has no epochs".into()));
        }
        check_epoch_duration(epoch_duration_s)?;
        Ok(Hypnogram { stages, epoch_duration_s })
    }

    /// Hypnogram with the default 30 s epoch.
    pub fn from_stages(stages: Vec<Stage>) -> Result<Self> {
        Self::new(stages, DEFAULT_EPOCH_S)
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn epoch_duration_s(&self) -> f64 {
        self.epoch_duration_s
    }

    /// Same stages with a different epoch duration.
    pub fn with_epoch_duration(&self, epoch_duration_s: f64) -> Result<Self> {
        Self::new(self.stages.clone(), epoch_duration_s)
    }
}

/// T×5 row-stochastic matrix of per-epoch stage probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypnodensity {
    rows: Vec<ProbVec>,
    epoch_duration_s: f64,
}

impl Hypnodensity {
    /// Validates every row (entries in [0,1], sum within 1e-6 of 1) and
    /// renormalizes it to an exact unit sum.
    pub fn new(rows: Vec<ProbVec>, epoch_duration_s: f64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidHypnodensity("hypnodensity has no epochs".into()));
        }
        check_epoch_duration(epoch_duration_s)
            .map_err(|_| Error::InvalidHypnodensity(format!("bad epoch duration {epoch_duration_s}")))?;
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(t, row)| normalize_row(row).map_err(|e| annotate_row(e, t)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Hypnodensity { rows, epoch_duration_s })
    }

    /// Row-wise one-hot encoding of a fully scored hypnogram.
    pub fn from_hypnogram(h: &Hypnogram) -> Result<Self> {
        let rows = h.stages().iter().map(|&s| one_hot(s)).collect::<Result<Vec<_>>>()?;
        Ok(Hypnodensity { rows, epoch_duration_s: h.epoch_duration_s() })
    }

    pub fn rows(&self) -> &[ProbVec] {
        &self.rows
    }

    pub fn row(&self, t: usize) -> &ProbVec {
        &self.rows[t]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn epoch_duration_s(&self) -> f64 {
        self.epoch_duration_s
    }

    /// Per-epoch argmax hypnogram.
    pub fn argmax_hypnogram(&self) -> Hypnogram {
        let stages = self.rows.iter().map(|r| argmax_stage(r).expect("row arity is fixed")).collect();
        Hypnogram { stages, epoch_duration_s: self.epoch_duration_s }
    }
}

fn annotate_row(e: Error, t: usize) -> Error {
    match e {
        Error::InvalidHypnodensity(msg) => Error::InvalidHypnodensity(format!("epoch {t}: {msg}")),
        other => other,
    }
}

/// Checks a probability row and rescales it to sum to exactly 1.
pub fn normalize_row(row: ProbVec) -> Result<ProbVec> {
    if let Some(bad) = row.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0 + ROW_SUM_TOLERANCE) {
        return Err(Error::InvalidHypnodensity(format!("entry {bad} outside [0,1]")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(Error::InvalidHypnodensity(format!("row sums to {sum}")));
    }
    // Rows already at unit sum up to rounding are kept bit-for-bit.
    if (sum - 1.0).abs() <= 8.0 * f64::EPSILON {
        return Ok(row);
    }
    let mut out = row;
    for p in out.iter_mut() {
        *p = (*p / sum).min(1.0);
    }
    Ok(out)
}

/// Scorer hypnograms and model hypnodensities for one recording, all of the
/// same length and epoch duration. Members keep their insertion order.
#[derive(Debug, Clone)]
pub struct RecordingBundle {
    recording_id: String,
    epoch_duration_s: f64,
    scorers: Vec<(String, Hypnogram)>,
    models: Vec<(String, Hypnodensity)>,
}

impl RecordingBundle {
    pub fn new(
        recording_id: impl Into<String>,
        epoch_duration_s: f64,
        scorers: Vec<(String, Hypnogram)>,
        models: Vec<(String, Hypnodensity)>,
    ) -> Result<Self> {
        check_epoch_duration(epoch_duration_s)?;
        if scorers.is_empty() && models.is_empty() {
            return Err(Error::EmptyBundle);
        }
        check_unique(scorers.iter().map(|(n, _)| n.as_str()))?;
        check_unique(models.iter().map(|(n, _)| n.as_str()))?;

        let members = scorers
            .iter()
            .map(|(n, h)| (format!("scorer {n:?}"), h.len(), h.epoch_duration_s()))
            .chain(models.iter().map(|(n, h)| (format!("model {n:?}"), h.len(), h.epoch_duration_s())));
        let mut first: Option<(String, usize)> = None;
        for (name, len, dur) in members {
            if dur != epoch_duration_s {
                return Err(Error::Alignment(format!(
                    "{name} has epoch duration {dur} s, recording uses {epoch_duration_s} s"
                )));
            }
            match &first {
                None => first = Some((name, len)),
                Some((ref_name, ref_len)) if *ref_len != len => {
                    return Err(Error::Alignment(format!(
                        "{ref_name} has {ref_len} epochs but {name} has {len}"
                    )));
                }
                _ => {}
            }
        }
        Ok(RecordingBundle { recording_id: recording_id.into(), epoch_duration_s, scorers, models })
    }

    pub fn recording_id(&self) -> &str {
        &self.recording_id
    }

    pub fn epoch_duration_s(&self) -> f64 {
        self.epoch_duration_s
    }

    pub fn n_epochs(&self) -> usize {
        self.scorers
            .first()
            .map(|(_, h)| h.len())
            .or_else(|| self.models.first().map(|(_, h)| h.len()))
            .unwrap_or(0)
    }

    pub fn scorers(&self) -> &[(String, Hypnogram)] {
        &self.scorers
    }

    pub fn models(&self) -> &[(String, Hypnodensity)] {
        &self.models
    }

    pub fn scorer(&self, name: &str) -> Option<&Hypnogram> {
        self.scorers.iter().find(|(n, _)| n == name).map(|(_, h)| h)
    }

    pub fn model(&self, name: &str) -> Option<&Hypnodensity> {
        self.models.iter().find(|(n, _)| n == name).map(|(_, h)| h)
    }

    pub fn scorer_hypnograms(&self) -> Vec<&Hypnogram> {
        self.scorers.iter().map(|(_, h)| h).collect()
    }
}

fn check_unique<'a>(names: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(Error::DuplicateName(n.to_string()));
        }
    }
    Ok(())
}

/// Epoch indices where none of the given hypnograms holds `Mask`.
///
/// Hypnograms shorter than the first are an alignment error.
pub fn scored_epochs(hypnograms: &[&Hypnogram]) -> Result<Vec<usize>> {
    let Some(first) = hypnograms.first() else {
        return Err(Error::NoScoredEpochs);
    };
    let t = first.len();
    if let Some(bad) = hypnograms.iter().find(|h| h.len() != t) {
        return Err(Error::Alignment(format!("{t} epochs vs {} epochs", bad.len())));
    }
    let idx: Vec<usize> = (0..t)
        .filter(|&i| hypnograms.iter().all(|h| h.stages()[i].is_scored()))
        .collect();
    if idx.is_empty() {
        return Err(Error::NoScoredEpochs);
    }
    Ok(idx)
}

/// Epochs of the bundle that every scorer actually scored.
pub fn mask_alignment(bundle: &RecordingBundle) -> Result<Vec<usize>> {
    if bundle.scorers().is_empty() {
        // Models never emit masks.
        return Ok((0..bundle.n_epochs()).collect());
    }
    scored_epochs(&bundle.scorer_hypnograms())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hyp(stages: &[Stage]) -> Hypnogram {
        Hypnogram::from_stages(stages.to_vec()).unwrap()
    }

    #[test]
    fn one_hot_examples() {
        assert_eq!(one_hot(Stage::W).unwrap(), [1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(one_hot(Stage::Rem).unwrap(), [0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(one_hot(Stage::Mask), Err(Error::InvalidStage)));
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax_stage(&[0.1, 0.2, 0.5, 0.1, 0.1]).unwrap(), Stage::N2);
        assert_eq!(argmax_stage(&[0.5, 0.5, 0.0, 0.0, 0.0]).unwrap(), Stage::W);
        assert_eq!(argmax_stage(&[0.2; 5]).unwrap(), Stage::W);
        assert!(matches!(argmax_stage(&[0.5, 0.5]), Err(Error::Shape { expected: 5, got: 2 })));
    }

    #[test]
    fn stage_tokens_are_case_insensitive() {
        assert_eq!("rem".parse::<Stage>().unwrap(), Stage::Rem);
        assert_eq!("n3".parse::<Stage>().unwrap(), Stage::N3);
        assert!("N4".parse::<Stage>().is_err());
        assert_eq!(Stage::from_code(7), Stage::Mask);
    }

    #[test]
    fn mask_alignment_examples() {
        use Stage::*;
        let b = RecordingBundle::new(
            "r",
            30.0,
            vec![("a".into(), hyp(&[W, N1, N2, N3])), ("b".into(), hyp(&[W, N1, N2, Rem]))],
            vec![],
        )
        .unwrap();
        assert_eq!(mask_alignment(&b).unwrap(), vec![0, 1, 2, 3]);

        let b = RecordingBundle::new(
            "r",
            30.0,
            vec![("a".into(), hyp(&[W, Mask, N2])), ("b".into(), hyp(&[W, N1, N2]))],
            vec![],
        )
        .unwrap();
        assert_eq!(mask_alignment(&b).unwrap(), vec![0, 2]);

        let b = RecordingBundle::new(
            "r",
            30.0,
            vec![("a".into(), hyp(&[Mask, N1])), ("b".into(), hyp(&[W, Mask]))],
            vec![],
        )
        .unwrap();
        assert!(matches!(mask_alignment(&b), Err(Error::NoScoredEpochs)));
    }

    #[test]
    fn bundle_rejects_misaligned_members() {
        use Stage::*;
        let model = Hypnodensity::new(vec![[0.2; 5]; 2], 30.0).unwrap();
        let err = RecordingBundle::new("r", 30.0, vec![("a".into(), hyp(&[W, N1, N2]))], vec![("m".into(), model)])
            .unwrap_err();
        assert!(matches!(err, Error::Alignment(msg) if msg.contains("\"a\"") && msg.contains("\"m\"")));
        assert!(matches!(RecordingBundle::new("r", 30.0, vec![], vec![]), Err(Error::EmptyBundle)));
        let dup = RecordingBundle::new("r", 30.0, vec![("a".into(), hyp(&[W])), ("a".into(), hyp(&[W]))], vec![]);
        assert!(matches!(dup, Err(Error::DuplicateName(_))));
    }

    #[test]
    fn hypnodensity_renormalizes_within_tolerance() {
        let h = Hypnodensity::new(vec![[0.2, 0.2, 0.2, 0.2, 0.2 + 5e-7]], 30.0).unwrap();
        assert!((h.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(Hypnodensity::new(vec![[0.5, 0.5, 0.5, 0.0, 0.0]], 30.0).is_err());
        assert!(Hypnodensity::new(vec![[-0.1, 0.6, 0.5, 0.0, 0.0]], 30.0).is_err());
        assert!(Hypnogram::new(vec![Stage::W], 0.0).is_err());
        assert!(Hypnogram::from_stages(vec![]).is_err());
    }

    fn scored_stage() -> impl Strategy<Value = Stage> {
        (0u8..5).prop_map(Stage::from_code)
    }

    proptest! {
        #[test]
        fn one_hot_then_argmax_is_identity(s in scored_stage()) {
            prop_assert_eq!(argmax_stage(&one_hot(s).unwrap()).unwrap(), s);
        }

        #[test]
        fn argmax_is_scale_invariant(raw in prop::array::uniform5(0.0f64..1.0), k in 0.01f64..100.0) {
            let sum: f64 = raw.iter().sum();
            prop_assume!(sum > 1e-9);
            let norm: Vec<f64> = raw.iter().map(|x| x / sum).collect();
            let scaled: Vec<f64> = raw.iter().map(|x| x * k).collect();
            let s2: f64 = scaled.iter().sum();
            let renorm: Vec<f64> = scaled.iter().map(|x| x / s2).collect();
            prop_assert_eq!(argmax_stage(&norm).unwrap(), argmax_stage(&renorm).unwrap());
        }

        #[test]
        fn adding_a_mask_never_grows_alignment(
            a in prop::collection::vec(scored_stage(), 1..20),
            pick in any::<prop::sample::Index>(),
        ) {
            let b: Vec<Stage> = a.iter().rev().copied().collect();
            let base = scored_epochs(&[&hyp(&a), &hyp(&b)]).unwrap();
            let mut masked = a.clone();
            masked[pick.index(a.len())] = Stage::Mask;
            let after = scored_epochs(&[&hyp(&masked), &hyp(&b)]).unwrap_or_default();
            prop_assert!(after.iter().all(|i| base.contains(i) && *i < a.len()));
            prop_assert!(after.len() <= base.len());
        }
    }
}
