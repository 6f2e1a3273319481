//! Clinical sleep markers derived from a hypnogram, and marker bias.
//!
//! Conventions: sleep onset is the first sleep epoch (N1, N2, N3 or REM) and
//! sleep offset the last one. WASO counts W epochs strictly between them.
//! REM latency runs from onset to the first REM epoch. An awakening is a
//! sleep-to-W step and a transition any change of stage, both counted only
//! between consecutive epochs that are adjacent in time and both scored, so
//! a MASK gap never produces an event. Rates are per hour of the chosen
//! denominator.

use crate::error::{Error, Result};
use crate::io::ReportValue;
use crate::staging::{Hypnogram, Stage};

/// Denominator of the per-hour event rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RateDenominator {
    /// Total sleep time.
    #[default]
    Tst,
    /// Time in bed: every scored epoch, wake included.
    Tib,
}

impl std::str::FromStr for RateDenominator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tst" => Ok(RateDenominator::Tst),
            "tib" => Ok(RateDenominator::Tib),
            _ => Err(format!("rate denominator must be tst or tib, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkerReport {
    pub tst_min: f64,
    pub waso_min: f64,
    pub n1_min: f64,
    pub n2_min: f64,
    pub n3_min: f64,
    pub rem_min: f64,
    /// `None` when no REM follows sleep onset.
    pub reml_min: Option<f64>,
    pub awakenings: usize,
    pub transitions: usize,
    pub awh_per_hour: f64,
    pub trh_per_hour: f64,
}

impl MarkerReport {
    pub fn to_report(&self) -> ReportValue {
        ReportValue::object([
            ("tst_min", self.tst_min.into()),
            ("waso_min", self.waso_min.into()),
            ("n1_min", self.n1_min.into()),
            ("n2_min", self.n2_min.into()),
            ("n3_min", self.n3_min.into()),
            ("rem_min", self.rem_min.into()),
            ("reml_min", self.reml_min.into()),
            ("awakenings", self.awakenings.into()),
            ("transitions", self.transitions.into()),
            ("awh_per_hour", self.awh_per_hour.into()),
            ("trh_per_hour", self.trh_per_hour.into()),
        ])
    }
}

pub fn derive_markers(h: &Hypnogram, denominator: RateDenominator) -> Result<MarkerReport> {
    let stages = h.stages();
    let epoch_min = h.epoch_duration_s() / 60.0;
    if stages.iter().all(|s| !s.is_scored()) {
        return Err(Error::NoScoredEpochs);
    }
    let onset = stages.iter().position(|s| s.is_sleep()).ok_or(Error::NoSleep)?;
    let offset = stages.iter().rposition(|s| s.is_sleep()).expect("onset exists");

    let count = |stage: Stage| stages.iter().filter(|&&s| s == stage).count();
    let minutes = |n: usize| n as f64 * epoch_min;
    let (n1, n2, n3, rem) = (count(Stage::N1), count(Stage::N2), count(Stage::N3), count(Stage::Rem));
    let sleep_epochs = n1 + n2 + n3 + rem;
    let waso_epochs = stages[onset..=offset].iter().filter(|&&s| s == Stage::W).count();
    let reml = stages.iter().position(|&s| s == Stage::Rem).map(|i| minutes(i - onset));

    let mut awakenings = 0;
    let mut transitions = 0;
    for pair in stages.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if !(a.is_scored() && b.is_scored()) || a == b {
            continue;
        }
        transitions += 1;
        if a.is_sleep() && b == Stage::W {
            awakenings += 1;
        }
    }

    let hours = match denominator {
        RateDenominator::Tst => minutes(sleep_epochs) / 60.0,
        RateDenominator::Tib => minutes(stages.iter().filter(|s| s.is_scored()).count()) / 60.0,
    };
    Ok(MarkerReport {
        tst_min: minutes(sleep_epochs),
        waso_min: minutes(waso_epochs),
        n1_min: minutes(n1),
        n2_min: minutes(n2),
        n3_min: minutes(n3),
        rem_min: minutes(rem),
        reml_min: reml,
        awakenings,
        transitions,
        awh_per_hour: awakenings as f64 / hours,
        trh_per_hour: transitions as f64 / hours,
    })
}

/// Prediction minus reference for each marker.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerBias {
    pub tst_min: f64,
    pub waso_min: f64,
    pub n1_min: f64,
    pub n2_min: f64,
    pub n3_min: f64,
    pub rem_min: f64,
    /// `None` if either side has no REM latency.
    pub reml_min: Option<f64>,
    pub awh_per_hour: f64,
    pub trh_per_hour: f64,
}

impl MarkerBias {
    pub fn to_report(&self) -> ReportValue {
        ReportValue::object([
            ("tst_min", self.tst_min.into()),
            ("waso_min", self.waso_min.into()),
            ("n1_min", self.n1_min.into()),
            ("n2_min", self.n2_min.into()),
            ("n3_min", self.n3_min.into()),
            ("rem_min", self.rem_min.into()),
            ("reml_min", self.reml_min.into()),
            ("awh_per_hour", self.awh_per_hour.into()),
            ("trh_per_hour", self.trh_per_hour.into()),
        ])
    }
}

pub fn marker_bias(pred: &MarkerReport, reference: &MarkerReport) -> MarkerBias {
    MarkerBias {
        tst_min: pred.tst_min - reference.tst_min,
        waso_min: pred.waso_min - reference.waso_min,
        n1_min: pred.n1_min - reference.n1_min,
        n2_min: pred.n2_min - reference.n2_min,
        n3_min: pred.n3_min - reference.n3_min,
        rem_min: pred.rem_min - reference.rem_min,
        reml_min: pred.reml_min.zip(reference.reml_min).map(|(p, r)| p - r),
        awh_per_hour: pred.awh_per_hour - reference.awh_per_hour,
        trh_per_hour: pred.trh_per_hour - reference.trh_per_hour,
    }
}
