//! Agreement metrics between a reference and a prediction.
//!
//! Discrete metrics work off a 5×5 [`ConfusionMatrix`] (rows = reference,
//! columns = prediction). Pooling confusion matrices across recordings
//! gives the dataset-level variants.

use std::ops::{Add, AddAssign};

use crate::error::{Error, Result};
use crate::staging::{Hypnodensity, Hypnogram, Stage, N_STAGES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    counts: [[u64; N_STAGES]; N_STAGES],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; N_STAGES]; N_STAGES]) -> Self {
        ConfusionMatrix { counts }
    }

    /// Tallies (reference, prediction) pairs, skipping any pair with a MASK.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Stage, Stage)>) -> Self {
        let mut cm = ConfusionMatrix::default();
        for (r, p) in pairs {
            if let (Some(r), Some(p)) = (r.index(), p.index()) {
                cm.counts[r][p] += 1;
            }
        }
        cm
    }

    pub fn counts(&self) -> &[[u64; N_STAGES]; N_STAGES] {
        &self.counts
    }

    pub fn get(&self, reference: Stage, prediction: Stage) -> u64 {
        match (reference.index(), prediction.index()) {
            (Some(r), Some(p)) => self.counts[r][p],
            _ => 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..N_STAGES).map(|c| self.counts[c][c]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|row| row[c]).sum()
    }

    pub fn transpose(&self) -> Self {
        let mut t = ConfusionMatrix::default();
        for r in 0..N_STAGES {
            for p in 0..N_STAGES {
                t.counts[p][r] = self.counts[r][p];
            }
        }
        t
    }
}

impl Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, rhs: Self) {
        for r in 0..N_STAGES {
            for p in 0..N_STAGES {
                self.counts[r][p] += rhs.counts[r][p];
            }
        }
    }
}

impl std::iter::Sum for ConfusionMatrix {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ConfusionMatrix::default(), Add::add)
    }
}

/// Confusion matrix over the epochs scored in both hypnograms.
pub fn confusion(reference: &Hypnogram, prediction: &Hypnogram) -> Result<ConfusionMatrix> {
    if reference.len() != prediction.len() {
        return Err(Error::Alignment(format!(
            "reference has {} epochs but prediction has {}",
            reference.len(),
            prediction.len()
        )));
    }
    let cm = ConfusionMatrix::from_pairs(reference.stages().iter().copied().zip(prediction.stages().iter().copied()));
    if cm.total() == 0 {
        return Err(Error::NoScoredEpochs);
    }
    Ok(cm)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::NoScoredEpochs);
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// F1 of one stage, `None` when the stage occurs in neither the reference
/// nor the prediction.
pub fn class_f1(cm: &ConfusionMatrix, stage: Stage) -> Result<Option<f64>> {
    let c = stage.index().ok_or(Error::InvalidStage)?;
    let tp = cm.counts[c][c];
    let fp = cm.col_sum(c) - tp;
    let fn_ = cm.row_sum(c) - tp;
    let denom = 2 * tp + fp + fn_;
    Ok((denom > 0).then(|| 2.0 * tp as f64 / denom as f64))
}

/// How macro-F1 treats a stage absent from both reference and prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AbsentClass {
    /// Leave it out of the mean.
    #[default]
    Exclude,
    /// Count it as F1 = 0.
    Zero,
}

impl std::str::FromStr for AbsentClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "exclude" => Ok(AbsentClass::Exclude),
            "zero" => Ok(AbsentClass::Zero),
            _ => Err(format!("absent-class mode must be exclude or zero, got {s:?}")),
        }
    }
}

pub fn macro_f1(cm: &ConfusionMatrix, absent: AbsentClass) -> Result<f64> {
    let f1s = Stage::SCORED.map(|s| class_f1(cm, s).expect("scored stage"));
    if f1s.iter().all(Option::is_none) {
        return Err(Error::NoScoredEpochs);
    }
    let included: Vec<f64> = match absent {
        AbsentClass::Exclude => f1s.iter().flatten().copied().collect(),
        AbsentClass::Zero => f1s.iter().map(|f| f.unwrap_or(0.0)).collect(),
    };
    Ok(included.iter().sum::<f64>() / included.len() as f64)
}

/// Unweighted Cohen's kappa with the two-marginal chance model.
pub fn cohens_kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::NoScoredEpochs);
    }
    let n = total as f64;
    let p_o = cm.trace() as f64 / n;
    let p_e = (0..N_STAGES)
        .map(|c| cm.row_sum(c) as f64 * cm.col_sum(c) as f64)
        .sum::<f64>()
        / (n * n);
    if p_e >= 1.0 {
        return Err(Error::DegenerateKappa);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape { expected: a.len(), got: b.len() });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(dot / (na * nb))
}

/// Mean per-epoch cosine similarity between two hypnodensities.
pub fn acs(model: &Hypnodensity, soft_consensus: &Hypnodensity) -> Result<f64> {
    let all: Vec<usize> = (0..model.len()).collect();
    acs_on(model, soft_consensus, &all)
}

/// [`acs`] restricted to the given epochs.
pub fn acs_on(model: &Hypnodensity, soft_consensus: &Hypnodensity, epochs: &[usize]) -> Result<f64> {
    if model.len() != soft_consensus.len() {
        return Err(Error::Alignment(format!(
            "model has {} epochs but soft-consensus has {}",
            model.len(),
            soft_consensus.len()
        )));
    }
    if epochs.is_empty() {
        return Err(Error::NoScoredEpochs);
    }
    let mut sum = 0.0;
    for &t in epochs {
        sum += cosine_similarity(model.row(t), soft_consensus.row(t))?;
    }
    Ok(sum / epochs.len() as f64)
}

/// Discrete metric bundle for one confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub n_epochs: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// `None` when kappa is degenerate.
    pub kappa: Option<f64>,
    pub class_f1: [Option<f64>; N_STAGES],
}

pub fn summarize(cm: &ConfusionMatrix, absent: AbsentClass) -> Result<MetricSummary> {
    let kappa = match cohens_kappa(cm) {
        Ok(k) => Some(k),
        Err(Error::DegenerateKappa) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricSummary {
        n_epochs: cm.total(),
        accuracy: accuracy(cm)?,
        macro_f1: macro_f1(cm, absent)?,
        kappa,
        class_f1: Stage::SCORED.map(|s| class_f1(cm, s).expect("scored stage")),
    })
}
