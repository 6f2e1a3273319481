//! Evaluation toolkit for probabilistic sleep-stage predictors.
//!
//! The crate covers the path from per-epoch model probabilities to reported
//! numbers: soft-voting ensembles ([`ensemble`]), multi-scorer consensus and
//! soft-agreement ([`consensus`]), discrete and probabilistic agreement
//! metrics ([`metrics`]), hypnogram-derived clinical markers ([`markers`]),
//! ensemble-uncertainty analytics and disagreement prediction
//! ([`disagreement`]), paired non-parametric comparisons ([`stats`]) and
//! expected values of fitted GAMLSS bias models ([`gamlss`]). File formats
//! live in [`io`].

pub mod consensus;
pub mod disagreement;
pub mod ensemble;
pub mod error;
pub mod gamlss;
pub mod io;
pub mod markers;
pub mod metrics;
pub mod staging;
pub mod stats;

pub use error::{Error, Result};
pub use staging::{Hypnodensity, Hypnogram, ProbVec, RecordingBundle, Stage};
