//! Ensemble uncertainty features and the logistic predictor of human
//! consensus disagreement, evaluated with leave-one-recording-out ROC-AUC.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};

use crate::ensemble::soft_vote;
use crate::error::{Error, Result};
use crate::metrics::cosine_similarity;
use crate::staging::{Hypnodensity, Hypnogram, ProbVec};
use crate::stats::midranks;

pub const DEFAULT_LAMBDA: f64 = 1e-4;
pub const DEFAULT_WINDOW_S: f64 = 60.0;
pub const MAX_NEWTON_ITERATIONS: usize = 500;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;

/// Entropy in nats; `0 ln 0` is taken as 0, so the range is `[0, ln 5]`.
pub fn shannon_entropy(p: &ProbVec) -> f64 {
    let h: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum();
    h.max(0.0)
}

/// `1 - cos` for every unordered pair `m < n`, in lexicographic pair order.
pub fn pairwise_cosine_distances(members: &[ProbVec]) -> Result<Vec<f64>> {
    if members.len() < 2 {
        return Err(Error::TooFewMembers(members.len()));
    }
    let mut out = Vec::with_capacity(members.len() * (members.len() - 1) / 2);
    for (m, a) in members.iter().enumerate() {
        for b in &members[m + 1..] {
            out.push((1.0 - cosine_similarity(a, b)?).clamp(0.0, 1.0));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochFeatures {
    pub entropy: f64,
    pub d_mean: f64,
    /// Population standard deviation of the distance set.
    pub d_std: f64,
    pub d_max: f64,
}

impl EpochFeatures {
    /// Entropy comes from `ensemble_row`, distances from the member rows.
    pub fn new(ensemble_row: &ProbVec, members: &[ProbVec]) -> Result<Self> {
        let d = pairwise_cosine_distances(members)?;
        let n = d.len() as f64;
        let d_mean = d.iter().sum::<f64>() / n;
        let d_var = d.iter().map(|x| (x - d_mean).powi(2)).sum::<f64>() / n;
        let d_max = d.iter().copied().fold(0.0, f64::max);
        Ok(EpochFeatures { entropy: shannon_entropy(ensemble_row), d_mean: d_mean.min(d_max), d_std: d_var.sqrt(), d_max })
    }

    pub fn distance_summary(&self) -> [f64; 3] {
        [self.d_mean, self.d_std, self.d_max]
    }
}

/// Per-epoch features of an ensemble: entropy of its soft vote and summary
/// statistics of the members' pairwise distances.
pub fn epoch_features(members: &[&Hypnodensity]) -> Result<Vec<EpochFeatures>> {
    if members.len() < 2 {
        return Err(Error::TooFewMembers(members.len()));
    }
    let vote = soft_vote(members)?;
    (0..vote.len())
        .map(|t| {
            let rows: Vec<ProbVec> = members.iter().map(|m| *m.row(t)).collect();
            EpochFeatures::new(vote.row(t), &rows)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalComponent {
    /// Unit eigenvector of the largest covariance eigenvalue, `d_mean` loading >= 0.
    pub loadings: [f64; 3],
    pub eigenvalue: f64,
    pub scores: Vec<f64>,
}

/// First principal component of `(d_mean, d_std, d_max)` rows.
pub fn first_principal_component(rows: &[[f64; 3]]) -> Result<PrincipalComponent> {
    if rows.len() < 2 {
        return Err(Error::TooFewMembers(rows.len()));
    }
    let n = rows.len() as f64;
    let mut mean = [0.0; 3];
    for r in rows {
        for j in 0..3 {
            mean[j] += r[j] / n;
        }
    }
    let centered: Vec<[f64; 3]> = rows.iter().map(|r| [r[0] - mean[0], r[1] - mean[1], r[2] - mean[2]]).collect();
    let mut cov = Matrix3::zeros();
    for c in &centered {
        for i in 0..3 {
            for j in 0..3 {
                cov[(i, j)] += c[i] * c[j] / (n - 1.0);
            }
        }
    }
    if cov.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateCovariance);
    }
    let eig = SymmetricEigen::new(cov);
    let top = eig.eigenvalues.imax();
    let v = eig.eigenvectors.column(top);
    let mut loadings = [v[0], v[1], v[2]];
    let pivot = loadings.iter().copied().find(|x| *x != 0.0).unwrap_or(1.0);
    if loadings[0] < 0.0 || (loadings[0] == 0.0 && pivot < 0.0) {
        loadings.iter_mut().for_each(|x| *x = -*x);
    }
    let scores = centered.iter().map(|c| c[0] * loadings[0] + c[1] * loadings[1] + c[2] * loadings[2]).collect();
    Ok(PrincipalComponent { loadings, eigenvalue: eig.eigenvalues[top], scores })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticOptions {
    pub lambda: f64,
    /// Permit a fit with zero feature columns.
    pub allow_intercept_only: bool,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions { lambda: DEFAULT_LAMBDA, allow_intercept_only: false }
    }
}

/// Logistic regression on standardized features.
///
/// The fitted objective is the mean negative log-likelihood plus
/// `lambda / 2 * |w|^2` over the standardized weights; the intercept is not
/// penalized.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub n_features: usize,
    /// Indices of the non-constant input features, in input order.
    pub kept: Vec<usize>,
    /// Constant input features, excluded from the fit.
    pub dropped: Vec<usize>,
    pub means: Vec<f64>,
    /// Population standard deviations, all > 0.
    pub stds: Vec<f64>,
    /// Standardized-space weights aligned with `kept`.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticModel {
    pub fn linear_score(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.n_features {
            return Err(Error::Shape { expected: self.n_features, got: row.len() });
        }
        let mut eta = self.intercept;
        for (k, &j) in self.kept.iter().enumerate() {
            eta += self.weights[k] * (row[j] - self.means[k]) / self.stds[k];
        }
        Ok(eta)
    }

    pub fn predict_proba(&self, row: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.linear_score(row)?))
    }

    /// Regularized objective evaluated on `rows`.
    pub fn objective(&self, rows: &[Vec<f64>], labels: &[bool], lambda: f64) -> Result<f64> {
        let mut nll = 0.0;
        for (row, &y) in rows.iter().zip(labels) {
            let eta = self.linear_score(row)?;
            nll += log1p_exp(eta) - if y { eta } else { 0.0 };
        }
        let penalty = 0.5 * lambda * self.weights.iter().map(|w| w * w).sum::<f64>();
        Ok(nll / rows.len() as f64 + penalty)
    }
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn check_matrix(rows: &[Vec<f64>], labels: &[bool]) -> Result<usize> {
    if rows.len() != labels.len() {
        return Err(Error::Shape { expected: rows.len(), got: labels.len() });
    }
    let f = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != f) {
        return Err(Error::Shape { expected: f, got: bad.len() });
    }
    Ok(f)
}

/// Damped Newton fit. Stops when the gradient norm is at most `1e-8` or
/// after 500 iterations.
pub fn fit_logistic(rows: &[Vec<f64>], labels: &[bool], options: &LogisticOptions) -> Result<LogisticModel> {
    let f = check_matrix(rows, labels)?;
    if !(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y)) {
        return Err(Error::DegenerateLabels);
    }
    if f == 0 && !options.allow_intercept_only {
        return Err(Error::Shape { expected: 1, got: 0 });
    }
    let n = rows.len() as f64;
    let (mut kept, mut dropped, mut means, mut stds) = (vec![], vec![], vec![], vec![]);
    for j in 0..f {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let sd = (rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd > 0.0 && sd.is_finite() {
            kept.push(j);
            means.push(mean);
            stds.push(sd);
        } else {
            dropped.push(j);
        }
    }
    let p = kept.len() + 1;
    // Column 0 is the intercept.
    let x = DMatrix::from_fn(rows.len(), p, |i, k| if k == 0 { 1.0 } else { (rows[i][kept[k - 1]] - means[k - 1]) / stds[k - 1] });
    let y = DVector::from_iterator(rows.len(), labels.iter().map(|&b| if b { 1.0 } else { 0.0 }));
    let lambda = options.lambda;
    let objective = |beta: &DVector<f64>| {
        let eta = &x * beta;
        let nll: f64 = eta.iter().zip(y.iter()).map(|(&e, &yi)| log1p_exp(e) - yi * e).sum();
        nll / n + 0.5 * lambda * beta.rows(1, p - 1).norm_squared()
    };

    let mut beta = DVector::zeros(p);
    let mut value = objective(&beta);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_NEWTON_ITERATIONS {
        let eta = &x * &beta;
        let mu = eta.map(sigmoid);
        let mut grad = x.transpose() * (&mu - &y) / n;
        let mut penalty = beta.clone() * lambda;
        penalty[0] = 0.0;
        grad += &penalty;
        if grad.norm() <= GRADIENT_TOLERANCE {
            converged = true;
            break;
        }
        iterations += 1;
        let w = mu.map(|m| m * (1.0 - m) / n);
        let mut hess = DMatrix::from_fn(p, p, |a, b| (0..rows.len()).map(|i| w[i] * x[(i, a)] * x[(i, b)]).sum());
        for k in 1..p {
            hess[(k, k)] += lambda;
        }
        let step = match hess.clone().cholesky() {
            Some(c) => c.solve(&grad),
            // Saturated probabilities can leave the intercept direction singular.
            None => {
                for k in 0..p {
                    hess[(k, k)] += 1e-12;
                }
                hess.lu().solve(&grad).unwrap_or_else(|| grad.clone())
            }
        };
        let mut t = 1.0;
        let mut next = &beta - &step * t;
        let mut next_value = objective(&next);
        while next_value > value && t > 1e-10 {
            t *= 0.5;
            next = &beta - &step * t;
            next_value = objective(&next);
        }
        if next_value > value {
            break;
        }
        let stalled = next == beta;
        beta = next;
        value = next_value;
        if stalled {
            break;
        }
    }
    Ok(LogisticModel {
        n_features: f,
        kept,
        dropped,
        means,
        stds,
        weights: beta.iter().skip(1).copied().collect(),
        intercept: beta[0],
        iterations,
        converged,
    })
}

/// ROC-AUC by the Mann-Whitney rank statistic; tied scores count one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape { expected: scores.len(), got: labels.len() });
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &y)| y).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureSet {
    Entropy,
    Distance,
    #[default]
    Both,
}

impl FeatureSet {
    pub fn select(self, f: &EpochFeatures) -> Vec<f64> {
        match self {
            FeatureSet::Entropy => vec![f.entropy],
            FeatureSet::Distance => f.distance_summary().to_vec(),
            FeatureSet::Both => vec![f.entropy, f.d_mean, f.d_std, f.d_max],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::Entropy => "entropy",
            FeatureSet::Distance => "distance",
            FeatureSet::Both => "both",
        }
    }
}

impl std::str::FromStr for FeatureSet {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "entropy" => Ok(FeatureSet::Entropy),
            "distance" => Ok(FeatureSet::Distance),
            "both" => Ok(FeatureSet::Both),
            _ => Err(format!("feature set must be entropy, distance or both, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordingFeatures {
    pub recording_id: String,
    pub features: Vec<EpochFeatures>,
    pub labels: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub recording_id: String,
    /// `None` when the fold was skipped.
    pub auc: Option<f64>,
    pub skip_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoroResult {
    /// Unweighted mean over the evaluated folds.
    pub mean_auc: f64,
    /// One entry per input recording, in input order.
    pub folds: Vec<Fold>,
}

/// Leave-one-recording-out ROC-AUC.
///
/// A fold is skipped, and reported, when its held-out recording or its
/// training pool lacks one of the classes.
pub fn loro_auc(recordings: &[RecordingFeatures], feature_set: FeatureSet, lambda: f64) -> Result<LoroResult> {
    if recordings.len() < 2 {
        return Err(Error::TooFewMembers(recordings.len()));
    }
    for r in recordings {
        if r.features.len() != r.labels.len() {
            return Err(Error::Alignment(format!(
                "{}: {} feature rows but {} labels",
                r.recording_id,
                r.features.len(),
                r.labels.len()
            )));
        }
    }
    let folds: Vec<Fold> = recordings.iter().enumerate().map(|(i, held)| run_fold(recordings, i, held, feature_set, lambda)).collect::<Result<_>>()?;
    let aucs: Vec<f64> = folds.iter().filter_map(|f| f.auc).collect();
    if aucs.is_empty() {
        return Err(Error::NoEvaluableFolds);
    }
    Ok(LoroResult { mean_auc: aucs.iter().sum::<f64>() / aucs.len() as f64, folds })
}

fn run_fold(recordings: &[RecordingFeatures], i: usize, held: &RecordingFeatures, feature_set: FeatureSet, lambda: f64) -> Result<Fold> {
    let skip = |reason: &str| Fold { recording_id: held.recording_id.clone(), auc: None, skip_reason: Some(reason.to_string()) };
    let has_both = |labels: &[bool]| labels.iter().any(|&y| y) && labels.iter().any(|&y| !y);
    if !has_both(&held.labels) {
        return Ok(skip("held-out recording has a single class"));
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (j, r) in recordings.iter().enumerate() {
        if j != i {
            rows.extend(r.features.iter().map(|f| feature_set.select(f)));
            labels.extend_from_slice(&r.labels);
        }
    }
    if !has_both(&labels) {
        return Ok(skip("training recordings have a single class"));
    }
    let model = fit_logistic(&rows, &labels, &LogisticOptions { lambda, allow_intercept_only: false })?;
    let scores: Vec<f64> = held.features.iter().map(|f| model.linear_score(&feature_set.select(f))).collect::<Result<_>>()?;
    Ok(Fold { recording_id: held.recording_id.clone(), auc: Some(roc_auc(&scores, &held.labels)?), skip_reason: None })
}

/// 1 where the unmasked scorers do not all agree. Epochs with fewer than two
/// unmasked scorers are labeled 0.
pub fn consensus_disagreement_labels(scorers: &[&Hypnogram]) -> Result<Vec<bool>> {
    if scorers.len() < 2 {
        return Err(Error::TooFewScorers { needed: 2, got: scorers.len() });
    }
    let t = scorers[0].len();
    if let Some(bad) = scorers.iter().find(|h| h.len() != t) {
        return Err(Error::Alignment(format!("scorer 0 has {t} epochs but another has {}", bad.len())));
    }
    Ok((0..t)
        .map(|i| {
            let mut seen = scorers.iter().map(|h| h.stages()[i]).filter(|s| s.is_scored());
            match seen.next() {
                Some(first) => seen.any(|s| s != first),
                None => false,
            }
        })
        .collect())
}

/// Flags epochs whose interval lies within `window_s` of a stage change in
/// the consensus, or touches it.
///
/// A change sits at the boundary between two adjacent scored epochs with
/// different stages; boundaries next to a MASK epoch are not changes.
pub fn transition_proximity(consensus: &Hypnogram, window_s: f64) -> Vec<bool> {
    let d = consensus.epoch_duration_s();
    let stages = consensus.stages();
    let changes: Vec<f64> = (1..stages.len())
        .filter(|&k| stages[k - 1].is_scored() && stages[k].is_scored() && stages[k - 1] != stages[k])
        .map(|k| k as f64 * d)
        .collect();
    (0..stages.len())
        .map(|t| {
            let (a, b) = (t as f64 * d, (t + 1) as f64 * d);
            changes.iter().any(|&c| {
                let dist = if c < a { a - c } else if c > b { c - b } else { 0.0 };
                dist == 0.0 || dist < window_s
            })
        })
        .collect()
}

/// CSV dump with header `epoch,entropy,d_mean,d_std,d_max,label,near_transition`.
pub fn write_feature_csv(features: &[EpochFeatures], labels: &[bool], near: &[bool]) -> Result<String> {
    if labels.len() != features.len() || near.len() != features.len() {
        return Err(Error::Alignment(format!(
            "{} feature rows, {} labels, {} proximity flags",
            features.len(),
            labels.len(),
            near.len()
        )));
    }
    let mut out = String::from("epoch,entropy,d_mean,d_std,d_max,label,near_transition\n");
    for (t, f) in features.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            t + 1,
            f.entropy,
            f.d_mean,
            f.d_std,
            f.d_max,
            u8::from(labels[t]),
            u8::from(near[t])
        ));
    }
    Ok(out)
}
