//! Subcommand implementations. Each returns one report tree; per-recording
//! failures become `skipped` or `error` entries in manifest order.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;

use hypnoeval::consensus::{consensus_hypnogram, consensus_result, dataset_reliability, inter_model_soft_agreement, soft_agreements, top_k, ConsensusMode};
use hypnoeval::disagreement::{
    consensus_disagreement_labels, epoch_features, first_principal_component, loro_auc, transition_proximity, write_feature_csv, FeatureSet, RecordingFeatures,
};
use hypnoeval::ensemble::{channel_majority_vote, EnsembleSpec};
use hypnoeval::gamlss::{load_gamlss_table, predict, CovariateProfile, Parameter};
use hypnoeval::io::{load_bundle, read_manifest, read_text, write_hypnodensity_csv, write_hypnogram_csv, Manifest, ReportValue};
use hypnoeval::markers::{derive_markers, marker_bias};
use hypnoeval::metrics::{acs_on, confusion, summarize, ConfusionMatrix, MetricSummary};
use hypnoeval::staging::{Hypnodensity, Hypnogram, RecordingBundle, Stage, N_STAGES};
use hypnoeval::stats::{adjust_family, consistency_deviation, median, wilcoxon_one_sided, Alternative, TestResult};
use hypnoeval::Error;

use crate::{AlternativeArg, Combine, DisagreeArgs, EnsembleArgs, EvaluateArgs, GamlssArgs, Gender, ManifestArgs, MarkersArgs, StatsArgs};

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Hard(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Hard(e)
    }
}

pub struct Outcome {
    pub report: ReportValue,
    pub warnings: Vec<String>,
    pub hard_errors: usize,
}

fn config<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Config(msg.into()))
}

/// Result of one recording's work item.
enum Entry<T> {
    Done(T),
    Skipped(String),
    Failed(String),
}

/// Domain conditions that make a recording unevaluable without the input
/// being wrong.
fn is_skip(e: &Error) -> bool {
    matches!(
        e,
        Error::NoScoredEpochs
            | Error::NoSleep
            | Error::TooFewPairs(_)
            | Error::TooFewScorers { .. }
            | Error::TooFewMembers(_)
            | Error::UndefinedConsensus(_)
            | Error::EmptyConsensusSet
            | Error::DegenerateLabels
    )
}

fn entry<T>(r: hypnoeval::Result<T>) -> Entry<T> {
    match r {
        Ok(v) => Entry::Done(v),
        Err(e) if is_skip(&e) => Entry::Skipped(e.to_string()),
        Err(e) => Entry::Failed(e.to_string()),
    }
}

/// Collects per-recording entries into the `recordings` array and counts
/// warnings and hard errors.
struct Collector {
    recordings: Vec<ReportValue>,
    warnings: Vec<String>,
    hard_errors: usize,
}

impl Collector {
    fn new() -> Self {
        Collector { recordings: Vec::new(), warnings: Vec::new(), hard_errors: 0 }
    }

    fn push<T>(&mut self, id: &str, e: Entry<T>, render: impl FnOnce(T) -> ReportValue) {
        let value = match e {
            Entry::Done(v) => render(v),
            Entry::Skipped(reason) => {
                self.warnings.push(format!("{id}: skipped: {reason}"));
                ReportValue::object([("recording_id", id.into()), ("skipped", reason.into())])
            }
            Entry::Failed(msg) => {
                self.hard_errors += 1;
                ReportValue::object([("recording_id", id.into()), ("error", msg.into())])
            }
        };
        self.recordings.push(value);
    }

    fn finish(self, command: &str, mut fields: Vec<(&str, ReportValue)>) -> Outcome {
        fields.push(("command", command.into()));
        fields.push(("recordings", ReportValue::List(self.recordings)));
        fields.push(("warnings", self.warnings.clone().into()));
        Outcome { report: ReportValue::object(fields), warnings: self.warnings, hard_errors: self.hard_errors }
    }
}

fn load_manifests(args: &ManifestArgs) -> Result<Vec<Manifest>, Failure> {
    let mut ids = HashSet::new();
    let mut out = Vec::new();
    for path in &args.manifests {
        let m = read_manifest(path).map_err(|e| Failure::Config(format!("manifest {}: {e}", path.display())))?;
        if m.recording_id.is_empty() || m.recording_id.contains(['/', '\\']) || m.recording_id == "." || m.recording_id == ".." {
            return config(format!("manifest {}: recording_id {:?} is not a plain name", path.display(), m.recording_id));
        }
        if !ids.insert(m.recording_id.clone()) {
            return config(format!("recording_id {:?} appears in more than one manifest", m.recording_id));
        }
        if !(m.epoch_duration_s.is_finite() && m.epoch_duration_s > 0.0) {
            return config(format!("manifest {}: epoch_duration_s must be positive", path.display()));
        }
        out.push(m);
    }
    Ok(out)
}

fn load_all(manifests: &[Manifest]) -> Vec<hypnoeval::Result<RecordingBundle>> {
    manifests.par_iter().map(load_bundle).collect()
}

fn has_model(m: &Manifest, name: &str) -> bool {
    m.models.iter().any(|e| e.name == name)
}

fn has_scorer(m: &Manifest, name: &str) -> bool {
    m.scorers.iter().any(|e| e.name == name)
}

fn check_members(manifests: &[Manifest], members: &[String], at_least: usize) -> Result<(), Failure> {
    let mut seen = HashSet::new();
    for n in members {
        if !seen.insert(n) {
            return config(format!("member {n:?} listed twice"));
        }
    }
    for m in manifests {
        for n in members {
            if !has_model(m, n) {
                return config(format!("recording {}: unknown model {n:?}", m.recording_id));
            }
        }
        let count = if members.is_empty() { m.models.len() } else { members.len() };
        if count < at_least {
            return config(format!("recording {}: need at least {at_least} ensemble member(s), got {count}", m.recording_id));
        }
    }
    Ok(())
}

fn ensemble_spec(members: &[String], bundle: &RecordingBundle) -> hypnoeval::Result<EnsembleSpec> {
    if members.is_empty() {
        EnsembleSpec::all(bundle)
    } else {
        EnsembleSpec::new(members.to_vec())
    }
}

#[derive(Debug, Clone)]
enum Source {
    Ensemble(Vec<String>),
    Model(String),
    Scorer(String),
}

impl Source {
    fn parse(s: &str, members: &[String]) -> Result<Self, Failure> {
        match s.split_once(':') {
            None if s == "ensemble" => Ok(Source::Ensemble(members.to_vec())),
            Some(("model", n)) if !n.is_empty() => Ok(Source::Model(n.to_string())),
            Some(("scorer", n)) if !n.is_empty() => Ok(Source::Scorer(n.to_string())),
            _ => config(format!("prediction source must be ensemble, model:NAME or scorer:NAME, got {s:?}")),
        }
    }

    fn check(&self, manifests: &[Manifest]) -> Result<(), Failure> {
        match self {
            Source::Ensemble(members) => check_members(manifests, members, 1),
            Source::Model(n) => match manifests.iter().find(|m| !has_model(m, n)) {
                Some(m) => config(format!("recording {}: unknown model {n:?}", m.recording_id)),
                None => Ok(()),
            },
            Source::Scorer(n) => match manifests.iter().find(|m| !has_scorer(m, n)) {
                Some(m) => config(format!("recording {}: unknown scorer {n:?}", m.recording_id)),
                None => Ok(()),
            },
        }
    }

    fn label(&self) -> String {
        match self {
            Source::Ensemble(_) => "ensemble".into(),
            Source::Model(n) => format!("model:{n}"),
            Source::Scorer(n) => format!("scorer:{n}"),
        }
    }

    /// Hard labels and, when available, the per-epoch distribution.
    fn resolve(&self, bundle: &RecordingBundle) -> hypnoeval::Result<(Hypnogram, Hypnodensity)> {
        match self {
            Source::Ensemble(members) => {
                let soft = ensemble_spec(members, bundle)?.apply(bundle)?;
                Ok((soft.argmax_hypnogram(), soft))
            }
            Source::Model(n) => {
                let soft = bundle.model(n).ok_or_else(|| Error::UnknownName(n.clone()))?.clone();
                Ok((soft.argmax_hypnogram(), soft))
            }
            Source::Scorer(n) => {
                let h = bundle.scorer(n).ok_or_else(|| Error::UnknownName(n.clone()))?.clone();
                let soft = one_hot_density(&h)?;
                Ok((h, soft))
            }
        }
    }
}

/// One-hot rows; masked epochs hold a uniform placeholder and must be
/// excluded by the caller.
fn one_hot_density(h: &Hypnogram) -> hypnoeval::Result<Hypnodensity> {
    let rows = h
        .stages()
        .iter()
        .map(|s| match s.index() {
            Some(c) => {
                let mut r = [0.0; N_STAGES];
                r[c] = 1.0;
                r
            }
            None => [1.0 / N_STAGES as f64; N_STAGES],
        })
        .collect();
    Hypnodensity::new(rows, h.epoch_duration_s())
}

#[derive(Debug, Clone)]
enum Reference {
    Consensus,
    Scorer(String),
}

impl Reference {
    fn parse(s: &str) -> Result<Self, Failure> {
        match s.split_once(':') {
            None if s == "consensus" => Ok(Reference::Consensus),
            Some(("scorer", n)) if !n.is_empty() => Ok(Reference::Scorer(n.to_string())),
            _ => config(format!("reference must be consensus or scorer:NAME, got {s:?}")),
        }
    }

    fn check(&self, manifests: &[Manifest], k: usize) -> Result<(), Failure> {
        match self {
            Reference::Consensus => {
                if k < 2 {
                    return config("--top-k must be at least 2");
                }
                match manifests.iter().find(|m| m.scorers.len() < 2) {
                    Some(m) => config(format!("recording {}: consensus needs at least 2 scorers, got {}", m.recording_id, m.scorers.len())),
                    None => Ok(()),
                }
            }
            Reference::Scorer(n) => match manifests.iter().find(|m| !has_scorer(m, n)) {
                Some(m) => config(format!("recording {}: unknown scorer {n:?}", m.recording_id)),
                None => Ok(()),
            },
        }
    }

    fn label(&self) -> String {
        match self {
            Reference::Consensus => "consensus".into(),
            Reference::Scorer(n) => format!("scorer:{n}"),
        }
    }
}

/// Dataset-level reliability over the loaded bundles, and the top-k names.
fn reliability_ranking(bundles: &[hypnoeval::Result<RecordingBundle>], k: usize) -> (Vec<(String, f64)>, Vec<String>) {
    let per_recording: Vec<Vec<(String, f64)>> = bundles
        .par_iter()
        .filter_map(|b| b.as_ref().ok())
        .filter_map(|b| {
            let hyps = b.scorer_hypnograms();
            let sa = soft_agreements(&hyps).ok()?;
            Some(b.scorers().iter().map(|(n, _)| n.clone()).zip(sa).collect())
        })
        .collect();
    let ranking = dataset_reliability(per_recording.iter().map(Vec::as_slice));
    let top = top_k(&ranking, k);
    (ranking, top)
}

/// Reference labels, distribution, evaluable epochs and the consensus
/// participants, most reliable first.
struct ResolvedReference {
    hypnogram: Hypnogram,
    soft: Hypnodensity,
    epochs: Vec<usize>,
    members: Vec<String>,
    scorer_soft_agreement: Vec<(String, f64)>,
}

fn resolve_reference(reference: &Reference, bundle: &RecordingBundle, top: &[String]) -> hypnoeval::Result<ResolvedReference> {
    match reference {
        Reference::Consensus => {
            let participants: Vec<usize> = bundle.scorers().iter().enumerate().filter(|(_, (n, _))| top.contains(n)).map(|(i, _)| i).collect();
            let r = consensus_result(bundle.scorers(), &ConsensusMode::Set(participants))?;
            Ok(ResolvedReference {
                hypnogram: r.consensus_hypnogram,
                soft: r.soft_consensus,
                epochs: r.epochs,
                members: r.reliability_ranking,
                scorer_soft_agreement: r.per_scorer_soft_agreement,
            })
        }
        Reference::Scorer(n) => {
            let h = bundle.scorer(n).ok_or_else(|| Error::UnknownName(n.clone()))?.clone();
            let epochs = (0..h.len()).filter(|&t| h.stages()[t].is_scored()).collect();
            let hyps = bundle.scorer_hypnograms();
            let sa = if hyps.len() >= 2 { soft_agreements(&hyps).unwrap_or_else(|_| vec![0.0; hyps.len()]) } else { vec![] };
            let names = bundle.scorers().iter().map(|(n, _)| n.clone());
            Ok(ResolvedReference {
                soft: one_hot_density(&h)?,
                hypnogram: h,
                epochs,
                members: vec![n.clone()],
                scorer_soft_agreement: names.zip(sa).collect(),
            })
        }
    }
}

fn pairs_map(pairs: &[(String, f64)]) -> ReportValue {
    ReportValue::Map(pairs.iter().map(|(n, v)| (n.clone(), ReportValue::Num(*v))).collect())
}

fn summary_report(s: &MetricSummary) -> Vec<(&'static str, ReportValue)> {
    let class_f1 = ReportValue::Map(Stage::SCORED.iter().zip(s.class_f1).map(|(st, f)| (st.name().to_string(), f.into())).collect());
    vec![
        ("n_epochs", (s.n_epochs as usize).into()),
        ("accuracy", s.accuracy.into()),
        ("macro_f1", s.macro_f1.into()),
        ("kappa", s.kappa.into()),
        ("class_f1", class_f1),
    ]
}

pub fn ensemble(args: &EnsembleArgs) -> Result<Outcome, Failure> {
    let manifests = load_manifests(&args.input)?;
    check_members(&manifests, &args.members, 1)?;
    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let bundles = load_all(&manifests);
    let results: Vec<_> = bundles
        .par_iter()
        .map(|b| match b {
            Ok(b) => entry(write_ensemble(b, &args.members, args.combine, &args.out_dir)),
            Err(e) => Entry::Failed(e.to_string()),
        })
        .collect();
    let mut c = Collector::new();
    for (m, r) in manifests.iter().zip(results) {
        c.push(&m.recording_id, r, |v| v);
    }
    let combine = match args.combine {
        Combine::Soft => "soft",
        Combine::ChannelMajority => "channel-majority",
    };
    Ok(c.finish("ensemble", vec![("combine", combine.into())]))
}

fn write_ensemble(bundle: &RecordingBundle, members: &[String], combine: Combine, out_dir: &Path) -> hypnoeval::Result<ReportValue> {
    let spec = ensemble_spec(members, bundle)?;
    let id = bundle.recording_id();
    let write = |path: PathBuf, text: String| -> hypnoeval::Result<String> {
        std::fs::write(&path, text).map_err(|source| Error::Io { path: path.clone(), source })?;
        Ok(path.display().to_string())
    };
    let (hypnogram, density_path) = match combine {
        Combine::Soft => {
            let soft = spec.apply(bundle)?;
            let p = write(out_dir.join(format!("{id}.hypnodensity.csv")), write_hypnodensity_csv(&soft))?;
            (soft.argmax_hypnogram(), Some(p))
        }
        Combine::ChannelMajority => (channel_majority_vote(&spec.resolve(bundle)?)?, None),
    };
    let hyp_path = write(out_dir.join(format!("{id}.hypnogram.csv")), write_hypnogram_csv(&hypnogram))?;
    Ok(ReportValue::object([
        ("recording_id", id.into()),
        ("n_epochs", hypnogram.len().into()),
        ("members", spec.member_names().to_vec().into()),
        ("hypnodensity", density_path.into()),
        ("hypnogram", hyp_path.into()),
    ]))
}

struct Evaluated {
    report: ReportValue,
    cm: ConfusionMatrix,
    acs_sum: f64,
    acs_n: usize,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<Outcome, Failure> {
    let manifests = load_manifests(&args.input)?;
    let source = Source::parse(&args.predict, &args.members)?;
    let reference = Reference::parse(&args.against)?;
    source.check(&manifests)?;
    reference.check(&manifests, args.top_k)?;
    if let (Source::Scorer(a), Reference::Scorer(b)) = (&source, &reference) {
        if a == b {
            return config("prediction and reference are the same scorer");
        }
    }

    let bundles = load_all(&manifests);
    let (ranking, top) = match reference {
        Reference::Consensus => reliability_ranking(&bundles, args.top_k),
        Reference::Scorer(_) => (vec![], vec![]),
    };
    let results: Vec<Entry<Evaluated>> = bundles
        .par_iter()
        .map(|b| match b {
            Ok(b) => entry(evaluate_one(b, &source, &reference, &top, args)),
            Err(e) => Entry::Failed(e.to_string()),
        })
        .collect();

    let mut pooled = ConfusionMatrix::default();
    let (mut acs_sum, mut acs_n) = (0.0, 0usize);
    let mut c = Collector::new();
    for (m, r) in manifests.iter().zip(results) {
        c.push(&m.recording_id, r, |e| {
            pooled += e.cm;
            acs_sum += e.acs_sum;
            acs_n += e.acs_n;
            e.report
        });
    }
    let pooled_report = match summarize(&pooled, args.absent) {
        Ok(s) => {
            let mut fields = summary_report(&s);
            fields.push(("acs", (acs_n > 0).then(|| acs_sum / acs_n as f64).into()));
            ReportValue::object(fields)
        }
        Err(_) => ReportValue::Null,
    };
    let mut fields = vec![
        ("predict", source.label().into()),
        ("against", reference.label().into()),
        ("absent_class", format!("{:?}", args.absent).to_lowercase().into()),
        ("pooled", pooled_report),
    ];
    if let Reference::Consensus = reference {
        fields.push(("top_k", args.top_k.into()));
        fields.push(("consensus_scorers", top.into()));
        fields.push(("dataset_reliability", pairs_map(&ranking)));
    }
    Ok(c.finish("evaluate", fields))
}

fn evaluate_one(bundle: &RecordingBundle, source: &Source, reference: &Reference, top: &[String], args: &EvaluateArgs) -> hypnoeval::Result<Evaluated> {
    let (pred, pred_soft) = source.resolve(bundle)?;
    let r = resolve_reference(reference, bundle, top)?;
    let cm = confusion(&r.hypnogram, &pred)?;
    let summary = summarize(&cm, args.absent)?;
    let epochs: Vec<usize> = r.epochs.iter().copied().filter(|&t| pred.stages()[t].is_scored()).collect();
    let acs = acs_on(&pred_soft, &r.soft, &epochs)?;

    let mut fields = summary_report(&summary);
    fields.push(("recording_id", bundle.recording_id().into()));
    fields.push(("acs", acs.into()));
    fields.push(("acs_epochs", epochs.len().into()));
    fields.push(("reference_scorers", r.members.into()));
    fields.push(("scorer_soft_agreement", pairs_map(&r.scorer_soft_agreement)));
    if bundle.models().len() >= 2 {
        let argmax: Vec<(String, Hypnogram)> = bundle.models().iter().map(|(n, d)| (n.clone(), d.argmax_hypnogram())).collect();
        fields.push(("inter_model_soft_agreement", pairs_map(&inter_model_soft_agreement(&argmax)?)));
    }
    Ok(Evaluated { report: ReportValue::object(fields), cm, acs_sum: acs * epochs.len() as f64, acs_n: epochs.len() })
}

pub fn markers(args: &MarkersArgs) -> Result<Outcome, Failure> {
    let manifests = load_manifests(&args.input)?;
    let source = Source::parse(&args.predict, &args.members)?;
    let reference = args.against.as_deref().map(Reference::parse).transpose()?;
    source.check(&manifests)?;
    if let Some(r) = &reference {
        r.check(&manifests, args.top_k)?;
    }
    let bundles = load_all(&manifests);
    let top = match reference {
        Some(Reference::Consensus) => reliability_ranking(&bundles, args.top_k).1,
        _ => vec![],
    };
    let results: Vec<Entry<ReportValue>> = bundles
        .par_iter()
        .map(|b| match b {
            Ok(b) => entry(markers_one(b, &source, reference.as_ref(), &top, args)),
            Err(e) => Entry::Failed(e.to_string()),
        })
        .collect();
    let mut c = Collector::new();
    for (m, r) in manifests.iter().zip(results) {
        c.push(&m.recording_id, r, |v| v);
    }
    let denominator = format!("{:?}", args.denominator).to_lowercase();
    let mut fields = vec![("predict", source.label().into()), ("denominator", denominator.into())];
    if let Some(r) = &reference {
        fields.push(("against", r.label().into()));
    }
    Ok(c.finish("markers", fields))
}

fn markers_one(bundle: &RecordingBundle, source: &Source, reference: Option<&Reference>, top: &[String], args: &MarkersArgs) -> hypnoeval::Result<ReportValue> {
    let (pred, _) = source.resolve(bundle)?;
    let pm = derive_markers(&pred, args.denominator)?;
    let mut fields = vec![("recording_id", bundle.recording_id().into()), ("prediction", pm.to_report())];
    if let Some(reference) = reference {
        let r = resolve_reference(reference, bundle, top)?;
        let rm = derive_markers(&r.hypnogram, args.denominator)?;
        fields.push(("bias", marker_bias(&pm, &rm).to_report()));
        fields.push(("reference", rm.to_report()));
        fields.push(("reference_scorers", r.members.into()));
    }
    Ok(ReportValue::object(fields))
}

struct DisagreeRecording {
    features: RecordingFeatures,
    near: Vec<bool>,
}

pub fn disagree(args: &DisagreeArgs) -> Result<Outcome, Failure> {
    let manifests = load_manifests(&args.input)?;
    check_members(&manifests, &args.members, 2)?;
    if let Some(m) = manifests.iter().find(|m| m.scorers.len() < 2) {
        return config(format!("recording {}: disagreement labels need at least 2 scorers, got {}", m.recording_id, m.scorers.len()));
    }
    if !(args.lambda.is_finite() && args.lambda >= 0.0) {
        return config("--lambda must be a finite non-negative number");
    }
    if !(args.window_s.is_finite() && args.window_s >= 0.0) {
        return config("--window-s must be a finite non-negative number of seconds");
    }
    let mut feature_sets: Vec<FeatureSet> = Vec::new();
    for s in &args.feature_sets {
        let fs: FeatureSet = s.parse().map_err(Failure::Config)?;
        if !feature_sets.contains(&fs) {
            feature_sets.push(fs);
        }
    }
    if let Some(dir) = &args.dump_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }

    let bundles = load_all(&manifests);
    let results: Vec<Entry<DisagreeRecording>> = bundles
        .par_iter()
        .map(|b| match b {
            Ok(b) => entry(disagree_one(b, args)),
            Err(e) => Entry::Failed(e.to_string()),
        })
        .collect();

    let mut done: Vec<(usize, DisagreeRecording)> = Vec::new();
    let mut entries: Vec<Entry<usize>> = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        entries.push(match r {
            Entry::Done(d) => {
                done.push((i, d));
                Entry::Done(i)
            }
            Entry::Skipped(s) => Entry::Skipped(s),
            Entry::Failed(s) => Entry::Failed(s),
        });
    }

    let evaluable: Vec<RecordingFeatures> = done.iter().map(|(_, d)| d.features.clone()).collect();
    let mut extra_warnings = Vec::new();
    let mut per_set = BTreeMap::new();
    let mut fold_aucs: BTreeMap<String, BTreeMap<&str, ReportValue>> = BTreeMap::new();
    for fs in &feature_sets {
        let summary = match loro_auc(&evaluable, *fs, args.lambda) {
            Ok(res) => {
                let skipped = res.folds.iter().filter(|f| f.auc.is_none()).count();
                for f in &res.folds {
                    let v = match (&f.auc, &f.skip_reason) {
                        (Some(a), _) => ReportValue::Num(*a),
                        (None, Some(reason)) => {
                            extra_warnings.push(format!("{}: {} fold skipped: {reason}", f.recording_id, fs.name()));
                            ReportValue::Null
                        }
                        (None, None) => ReportValue::Null,
                    };
                    fold_aucs.entry(f.recording_id.clone()).or_default().insert(fs.name(), v);
                }
                ReportValue::object([
                    ("mean_auc", res.mean_auc.into()),
                    ("evaluated_folds", (res.folds.len() - skipped).into()),
                    ("skipped_folds", skipped.into()),
                ])
            }
            Err(e) if matches!(e, Error::NoEvaluableFolds | Error::TooFewMembers(_) | Error::DegenerateLabels) => {
                extra_warnings.push(format!("{} feature set not evaluated: {e}", fs.name()));
                ReportValue::object([("mean_auc", ReportValue::Null), ("reason", e.to_string().into())])
            }
            Err(e) => return Err(Failure::Hard(anyhow::anyhow!("{} feature set: {e}", fs.name()))),
        };
        per_set.insert(fs.name().to_string(), summary);
    }

    let distances: Vec<[f64; 3]> = done.iter().flat_map(|(_, d)| d.features.features.iter().map(|f| f.distance_summary())).collect();
    let pc1 = match first_principal_component(&distances) {
        Ok(pc) => ReportValue::object([("loadings", pc.loadings.to_vec().into()), ("eigenvalue", pc.eigenvalue.into())]),
        Err(e) => {
            extra_warnings.push(format!("distance principal component not computed: {e}"));
            ReportValue::Null
        }
    };

    let mut c = Collector::new();
    let mut by_index: BTreeMap<usize, DisagreeRecording> = done.into_iter().collect();
    for (m, e) in manifests.iter().zip(entries) {
        c.push(&m.recording_id, e, |i| {
            let d = by_index.remove(&i).expect("evaluated recording");
            let n = d.features.labels.len().max(1) as f64;
            let rate = |xs: &[bool]| xs.iter().filter(|&&x| x).count() as f64 / n;
            let mean = |f: &dyn Fn(&hypnoeval::disagreement::EpochFeatures) -> f64| d.features.features.iter().map(f).sum::<f64>() / n;
            let aucs = fold_aucs.remove(&d.features.recording_id).unwrap_or_default();
            ReportValue::object([
                ("recording_id", d.features.recording_id.clone().into()),
                ("n_epochs", d.features.labels.len().into()),
                ("disagreement_rate", rate(&d.features.labels).into()),
                ("near_transition_rate", rate(&d.near).into()),
                ("mean_entropy", mean(&|f| f.entropy).into()),
                ("mean_d_mean", mean(&|f| f.d_mean).into()),
                ("auc", ReportValue::Map(aucs.into_iter().map(|(k, v)| (k.to_string(), v)).collect())),
            ])
        });
    }
    c.warnings.extend(extra_warnings);
    Ok(c.finish(
        "disagree",
        vec![
            ("lambda", args.lambda.into()),
            ("window_s", args.window_s.into()),
            ("feature_sets", ReportValue::Map(per_set)),
            ("distance_pc1", pc1),
        ],
    ))
}

fn disagree_one(bundle: &RecordingBundle, args: &DisagreeArgs) -> hypnoeval::Result<DisagreeRecording> {
    let spec = ensemble_spec(&args.members, bundle)?;
    let features = epoch_features(&spec.resolve(bundle)?)?;
    let labels = consensus_disagreement_labels(&bundle.scorer_hypnograms())?;
    let all: Vec<usize> = (0..bundle.scorers().len()).collect();
    let consensus = consensus_hypnogram(bundle.scorers(), &ConsensusMode::Set(all))?;
    let near = transition_proximity(&consensus, args.window_s);
    if let Some(dir) = &args.dump_dir {
        let path = dir.join(format!("{}.features.csv", bundle.recording_id()));
        let text = write_feature_csv(&features, &labels, &near)?;
        std::fs::write(&path, text).map_err(|source| Error::Io { path, source })?;
    }
    Ok(DisagreeRecording { features: RecordingFeatures { recording_id: bundle.recording_id().to_string(), features, labels }, near })
}

/// Parsed metric table: recording ids and one optional value per column.
struct MetricTable {
    columns: Vec<String>,
    recordings: Vec<String>,
    values: Vec<Vec<Option<f64>>>,
}

fn read_metric_table(path: &Path) -> anyhow::Result<MetricTable> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().with_context(|| format!("{}: empty table", path.display()))?;
    let cells: Vec<&str> = header.split(',').map(str::trim).collect();
    if cells.first() != Some(&"recording_id") || cells.len() < 2 {
        anyhow::bail!("{}: header must be recording_id followed by metric columns", path.display());
    }
    let columns: Vec<String> = cells[1..].iter().map(|s| s.to_string()).collect();
    let mut seen = HashSet::new();
    if let Some(dup) = columns.iter().find(|c| !seen.insert(c.as_str())) {
        anyhow::bail!("{}: duplicate column {dup:?}", path.display());
    }
    let mut recordings = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != columns.len() + 1 {
            anyhow::bail!("{}: line {}: expected {} cells, got {}", path.display(), i + 1, columns.len() + 1, cells.len());
        }
        recordings.push(cells[0].to_string());
        let row = cells[1..]
            .iter()
            .map(|c| {
                if c.is_empty() {
                    return Ok(None);
                }
                let v: f64 = c.parse().with_context(|| format!("{}: line {}: {c:?} is not a number", path.display(), i + 1))?;
                anyhow::ensure!(v.is_finite(), "{}: line {}: non-finite value", path.display(), i + 1);
                Ok(Some(v))
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        values.push(row);
    }
    Ok(MetricTable { columns, recordings, values })
}

fn test_report(r: &TestResult) -> Vec<(&'static str, ReportValue)> {
    vec![
        ("statistic", r.statistic.into()),
        ("z", r.z.into()),
        ("p_raw", r.p_raw.into()),
        ("p_adjusted", r.p_adjusted.into()),
        ("effect_r", r.effect_r.into()),
        ("n_effective", r.n_effective.into()),
        ("exact", r.exact.into()),
    ]
}

pub fn stats(args: &StatsArgs) -> Result<Outcome, Failure> {
    let alternative = match args.alternative {
        AlternativeArg::Greater => Alternative::Greater,
        AlternativeArg::Less => Alternative::Less,
    };
    let tables: Vec<MetricTable> = args.tables.iter().map(|p| read_metric_table(p)).collect::<anyhow::Result<_>>()?;
    for (t, p) in tables.iter().zip(&args.tables) {
        if !t.columns.contains(&args.candidate) {
            return config(format!("{}: no column named {:?}", p.display(), args.candidate));
        }
    }
    let mut warnings = Vec::new();
    let mut out = Vec::new();
    for (t, path) in tables.iter().zip(&args.tables) {
        let metric = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        let ci = t.columns.iter().position(|c| *c == args.candidate).expect("checked");
        let others: Vec<usize> = (0..t.columns.len()).filter(|&j| j != ci).collect();
        let mut results: Vec<hypnoeval::Result<TestResult>> = others
            .iter()
            .map(|&j| {
                let (a, b): (Vec<f64>, Vec<f64>) = t.values.iter().filter_map(|row| Some((row[ci]?, row[j]?))).unzip();
                wilcoxon_one_sided(&a, &b, alternative)
            })
            .collect();
        adjust_family(&mut results);
        let comparisons: Vec<ReportValue> = others
            .iter()
            .zip(&results)
            .map(|(&j, r)| {
                let mut fields = vec![("candidate", args.candidate.clone().into()), ("other", t.columns[j].clone().into())];
                match r {
                    Ok(r) => fields.extend(test_report(r)),
                    Err(e) => {
                        warnings.push(format!("{metric}: {} vs {}: skipped: {e}", args.candidate, t.columns[j]));
                        fields.push(("skipped", e.to_string().into()));
                    }
                }
                ReportValue::object(fields)
            })
            .collect();
        let mut fields = vec![("metric", metric.clone().into()), ("comparisons", ReportValue::List(comparisons))];
        if args.consistency {
            let mut per_column = BTreeMap::new();
            for (j, col) in t.columns.iter().enumerate() {
                let present: Vec<(&String, f64)> = t.recordings.iter().zip(&t.values).filter_map(|(id, row)| Some((id, row[j]?))).collect();
                let vals: Vec<f64> = present.iter().map(|p| p.1).collect();
                let devs = consistency_deviation(&vals);
                per_column.insert(
                    col.clone(),
                    ReportValue::object([
                        ("median", median(&vals).into()),
                        ("deviations", ReportValue::Map(present.iter().zip(devs).map(|((id, _), d)| ((*id).clone(), ReportValue::Num(d))).collect())),
                    ]),
                );
            }
            fields.push(("consistency", ReportValue::Map(per_column)));
        }
        out.push(ReportValue::object(fields));
    }
    let direction = match alternative {
        Alternative::Greater => "greater",
        Alternative::Less => "less",
    };
    let report = ReportValue::object([
        ("command", "stats".into()),
        ("alternative", direction.into()),
        ("tables", ReportValue::List(out)),
        ("warnings", warnings.clone().into()),
    ]);
    Ok(Outcome { report, warnings, hard_errors: 0 })
}

pub fn gamlss_predict(args: &GamlssArgs) -> Result<Outcome, Failure> {
    let profile = CovariateProfile::new(args.gender == Gender::Male, args.ahi, args.plmi).map_err(|e| Failure::Config(e.to_string()))?;
    let mut profile = profile;
    for (p, v) in [(Parameter::Mu, args.age_offset_mu), (Parameter::Sigma, args.age_offset_sigma)] {
        if let Some(v) = v {
            if !v.is_finite() {
                return config("age offsets must be finite");
            }
            profile = profile.with_age_offset(p, v);
        }
    }
    let text = read_text(&args.table).map_err(|e| Failure::Hard(e.into()))?;
    let table = load_gamlss_table(&text).with_context(|| format!("{}", args.table.display()))?;
    let Some(spec) = table.get(&args.outcome) else {
        let known: Vec<&str> = table.keys().map(String::as_str).collect();
        return config(format!("outcome {:?} not in table; available: {}", args.outcome, known.join(", ")));
    };
    let prediction = predict(spec, &profile).with_context(|| format!("outcome {}", args.outcome))?;
    let parameters = ReportValue::Map(
        prediction
            .parameters
            .iter()
            .map(|(p, (eta, value))| {
                let link = spec.parameters[p].link.name();
                (p.name().to_string(), ReportValue::object([("eta", (*eta).into()), ("value", (*value).into()), ("link", link.into())]))
            })
            .collect(),
    );
    let gender = match args.gender {
        Gender::Female => "female",
        Gender::Male => "male",
    };
    let report = ReportValue::object([
        ("command", "gamlss-predict".into()),
        ("outcome", args.outcome.clone().into()),
        ("family", prediction.family.name().into()),
        ("expected_value", prediction.expected.into()),
        ("parameters", parameters),
        (
            "profile",
            ReportValue::object([
                ("gender", gender.into()),
                ("ahi", args.ahi.into()),
                ("plmi", args.plmi.into()),
                ("age_offset_mu", args.age_offset_mu.into()),
                ("age_offset_sigma", args.age_offset_sigma.into()),
            ]),
        ),
    ]);
    Ok(Outcome { report, warnings: vec![], hard_errors: 0 })
}
