//! Expected values of fitted GAMLSS bias models.
//!
//! BEINF (zeros-and-ones inflated Beta) has `E[Y] = tau + (1 - nu - tau) mu`
//! with `nu = exp(eta_nu)` and `tau = exp(eta_tau)` taken directly as the
//! point masses. NORMAL has `E[Y] = mu`. Sigma is evaluated and reported but
//! never enters an expectation.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Parameter {
    Mu,
    Sigma,
    Nu,
    Tau,
}

impl Parameter {
    pub const ALL: [Parameter; 4] = [Parameter::Mu, Parameter::Sigma, Parameter::Nu, Parameter::Tau];

    pub fn name(self) -> &'static str {
        match self {
            Parameter::Mu => "mu",
            Parameter::Sigma => "sigma",
            Parameter::Nu => "nu",
            Parameter::Tau => "tau",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Parameter::ALL.into_iter().find(|p| p.name().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Beinf,
    Normal,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Beinf => "BEINF",
            Family::Normal => "NORMAL",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Family::Beinf, Family::Normal].into_iter().find(|f| f.name().eq_ignore_ascii_case(s))
    }

    /// Fixed link of each parameter; `None` if the family lacks it.
    pub fn link(self, p: Parameter) -> Option<Link> {
        match (self, p) {
            (Family::Beinf, Parameter::Mu | Parameter::Sigma) => Some(Link::Logit),
            (Family::Beinf, Parameter::Nu | Parameter::Tau) => Some(Link::Log),
            (Family::Normal, Parameter::Mu) => Some(Link::Identity),
            (Family::Normal, Parameter::Sigma) => Some(Link::Log),
            (Family::Normal, _) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Logit,
    Log,
    Identity,
}

impl Link {
    pub fn name(self) -> &'static str {
        match self {
            Link::Logit => "logit",
            Link::Log => "log",
            Link::Identity => "identity",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Link::Logit, Link::Log, Link::Identity].into_iter().find(|l| l.name().eq_ignore_ascii_case(s))
    }
}

pub fn inverse_link(link: Link, eta: f64) -> f64 {
    match link {
        Link::Logit => {
            if eta >= 0.0 {
                1.0 / (1.0 + (-eta).exp())
            } else {
                let e = eta.exp();
                e / (1.0 + e)
            }
        }
        Link::Log => eta.exp(),
        Link::Identity => eta,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub link: Link,
    pub intercept: f64,
    /// Retained terms only; a term excluded by selection is absent, not zero.
    pub coefficients: BTreeMap<String, f64>,
    /// Terms listed in the table with a blank estimate.
    pub excluded: Vec<String>,
    pub spline_offset: Option<f64>,
}

impl ParamSpec {
    pub fn new(link: Link, intercept: f64) -> Self {
        ParamSpec { link, intercept, coefficients: BTreeMap::new(), excluded: Vec::new(), spline_offset: None }
    }

    pub fn with_term(mut self, term: &str, coefficient: f64) -> Self {
        self.coefficients.insert(term.to_ascii_lowercase(), coefficient);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GamlssSpec {
    pub family: Family,
    pub parameters: BTreeMap<Parameter, ParamSpec>,
}

impl GamlssSpec {
    /// Requires mu and sigma; rejects parameters the family lacks and links
    /// other than the family's fixed ones. Missing BEINF nu or tau carries
    /// zero point mass.
    pub fn new(family: Family, parameters: BTreeMap<Parameter, ParamSpec>) -> std::result::Result<Self, String> {
        for p in [Parameter::Mu, Parameter::Sigma] {
            if !parameters.contains_key(&p) {
                return Err(format!("{} model lacks parameter {}", family.name(), p.name()));
            }
        }
        for (&p, spec) in &parameters {
            match family.link(p) {
                None => return Err(format!("{} has no parameter {}", family.name(), p.name())),
                Some(link) if link != spec.link => {
                    return Err(format!("{} {} uses the {} link, got {}", family.name(), p.name(), link.name(), spec.link.name()))
                }
                Some(_) => {}
            }
        }
        Ok(GamlssSpec { family, parameters })
    }
}

/// Covariate values keyed by lower-case term name, plus per-parameter age
/// spline contributions added to the linear predictor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CovariateProfile {
    pub values: BTreeMap<String, f64>,
    pub age_offsets: BTreeMap<Parameter, f64>,
}

impl CovariateProfile {
    /// `ahi` and `plmi` in events per hour; stored divided by 10. Female is
    /// the reference level of gender.
    pub fn new(male: bool, ahi: f64, plmi: f64) -> Result<Self> {
        for (name, v) in [("ahi", ahi), ("plmi", plmi)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidCovariate(format!("{name} must be a finite non-negative rate, got {v}")));
            }
        }
        let values = BTreeMap::from([
            ("gender".to_string(), if male { 1.0 } else { 0.0 }),
            ("ahi".to_string(), ahi / 10.0),
            ("plmi".to_string(), plmi / 10.0),
        ]);
        Ok(CovariateProfile { values, age_offsets: BTreeMap::new() })
    }

    pub fn with_age_offset(mut self, parameter: Parameter, offset: f64) -> Self {
        self.age_offsets.insert(parameter, offset);
        self
    }
}

pub fn linear_predictor(param: &ParamSpec, parameter: Parameter, profile: &CovariateProfile) -> Result<f64> {
    let mut eta = param.intercept + param.spline_offset.unwrap_or(0.0);
    for (term, coef) in &param.coefficients {
        let value = profile.values.get(term).ok_or_else(|| Error::MissingCovariate(term.clone()))?;
        eta += coef * value;
    }
    Ok(eta + profile.age_offsets.get(&parameter).copied().unwrap_or(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub family: Family,
    /// `(eta, parameter value)` for every parameter in the spec.
    pub parameters: BTreeMap<Parameter, (f64, f64)>,
    pub expected: f64,
}

pub fn predict(spec: &GamlssSpec, profile: &CovariateProfile) -> Result<Prediction> {
    let mut parameters = BTreeMap::new();
    for (&p, param) in &spec.parameters {
        let eta = linear_predictor(param, p, profile)?;
        parameters.insert(p, (eta, inverse_link(param.link, eta)));
    }
    let value = |p: Parameter| parameters.get(&p).map_or(0.0, |&(_, v)| v);
    let mu = value(Parameter::Mu);
    let expected = match spec.family {
        Family::Normal => mu,
        Family::Beinf => {
            let (nu, tau) = (value(Parameter::Nu), value(Parameter::Tau));
            if (nu + tau).is_nan() || nu + tau >= 1.0 {
                return Err(Error::InvalidInflation { nu, tau });
            }
            tau + (1.0 - nu - tau) * mu
        }
    };
    Ok(Prediction { family: spec.family, parameters, expected })
}

pub fn expected_value(spec: &GamlssSpec, profile: &CovariateProfile) -> Result<f64> {
    Ok(predict(spec, profile)?.expected)
}

#[derive(Debug, serde::Deserialize)]
struct TableRow {
    outcome: String,
    parameter: String,
    term: String,
    estimate: String,
    #[serde(default)]
    family: Option<String>,
    #[serde(default)]
    link: Option<String>,
}

#[derive(Default)]
struct Draft {
    family: Option<(Family, usize)>,
    params: BTreeMap<Parameter, DraftParam>,
}

#[derive(Default)]
struct DraftParam {
    link: Option<(Link, usize)>,
    intercept: Option<f64>,
    terms: BTreeMap<String, Option<f64>>,
    first_row: usize,
}

fn is_intercept(term: &str) -> bool {
    let t = term.trim_start_matches('(').trim_end_matches(')');
    t.eq_ignore_ascii_case("intercept")
}

/// Parses a coefficient table with columns `outcome,parameter,term,estimate`
/// and optional `family` and `link`.
///
/// A blank estimate records the term as excluded. Without a family column
/// an outcome is BEINF if it has nu or tau rows or a logit mu link, NORMAL
/// otherwise. Rows are reported by their 1-based line number.
pub fn load_gamlss_table(text: &str) -> Result<BTreeMap<String, GamlssSpec>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let schema = |row: usize, msg: String| Error::Schema { row, msg };
    let headers = reader.headers().map_err(|e| schema(1, e.to_string()))?.clone();
    for required in ["outcome", "parameter", "term", "estimate"] {
        if !headers.iter().any(|h| h == required) {
            return Err(schema(1, format!("missing column {required:?}")));
        }
    }
    let mut drafts: BTreeMap<String, Draft> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| schema(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let r: TableRow = record.deserialize(Some(&headers)).map_err(|e| schema(row, e.to_string()))?;
        if r.outcome.is_empty() {
            return Err(schema(row, "empty outcome".into()));
        }
        let parameter = Parameter::parse(&r.parameter).ok_or_else(|| schema(row, format!("unknown parameter {:?}", r.parameter)))?;
        let draft = drafts.entry(r.outcome.clone()).or_default();
        if let Some(f) = r.family.as_deref().filter(|f| !f.is_empty()) {
            let family = Family::parse(f).ok_or_else(|| schema(row, format!("unknown family {f:?}")))?;
            match draft.family {
                Some((prev, _)) if prev != family => return Err(schema(row, format!("{} declared as both {} and {}", r.outcome, prev.name(), family.name()))),
                _ => draft.family = Some((family, row)),
            }
        }
        let param = draft.params.entry(parameter).or_insert_with(|| DraftParam { first_row: row, ..Default::default() });
        param.first_row = param.first_row.min(row);
        if let Some(l) = r.link.as_deref().filter(|l| !l.is_empty()) {
            let link = Link::parse(l).ok_or_else(|| schema(row, format!("unknown link {l:?}")))?;
            match param.link {
                Some((prev, _)) if prev != link => return Err(schema(row, format!("conflicting links for {} {}", r.outcome, parameter.name()))),
                _ => param.link = Some((link, row)),
            }
        }
        let estimate = if r.estimate.is_empty() {
            None
        } else {
            let v: f64 = r.estimate.parse().map_err(|_| schema(row, format!("estimate {:?} is not a number", r.estimate)))?;
            if !v.is_finite() {
                return Err(schema(row, format!("estimate {v} is not finite")));
            }
            Some(v)
        };
        if r.term.is_empty() {
            return Err(schema(row, "empty term".into()));
        }
        if is_intercept(&r.term) {
            if param.intercept.is_some() {
                return Err(schema(row, format!("duplicate intercept for {} {}", r.outcome, parameter.name())));
            }
            param.intercept = Some(estimate.ok_or_else(|| schema(row, "intercept estimate is blank".into()))?);
        } else {
            let key = r.term.to_ascii_lowercase();
            if param.terms.insert(key, estimate).is_some() {
                return Err(schema(row, format!("duplicate term {:?} for {} {}", r.term, r.outcome, parameter.name())));
            }
        }
    }
    if drafts.is_empty() {
        return Err(Error::EmptyInput);
    }
    drafts.into_iter().map(|(outcome, draft)| finish(&outcome, draft).map(|spec| (outcome, spec))).collect()
}

fn finish(outcome: &str, draft: Draft) -> Result<GamlssSpec> {
    let inferred = || {
        let inflated = draft.params.contains_key(&Parameter::Nu) || draft.params.contains_key(&Parameter::Tau);
        let logit_mu = draft.params.get(&Parameter::Mu).and_then(|p| p.link).is_some_and(|(l, _)| l == Link::Logit);
        if inflated || logit_mu {
            Family::Beinf
        } else {
            Family::Normal
        }
    };
    let family = draft.family.map_or_else(inferred, |(f, _)| f);
    let last_row = draft.params.values().map(|p| p.first_row).max().unwrap_or(0);
    let mut parameters = BTreeMap::new();
    for (p, d) in draft.params {
        let fixed = family.link(p).ok_or_else(|| Error::Schema { row: d.first_row, msg: format!("{outcome}: {} has no parameter {}", family.name(), p.name()) })?;
        if let Some((link, row)) = d.link {
            if link != fixed {
                return Err(Error::Schema {
                    row,
                    msg: format!("{outcome}: {} {} uses the {} link, got {}", family.name(), p.name(), fixed.name(), link.name()),
                });
            }
        }
        let intercept = d.intercept.ok_or_else(|| Error::Schema { row: d.first_row, msg: format!("{outcome}: {} has no intercept row", p.name()) })?;
        let mut spec = ParamSpec::new(fixed, intercept);
        for (term, estimate) in d.terms {
            match estimate {
                Some(v) => {
                    spec.coefficients.insert(term, v);
                }
                None => spec.excluded.push(term),
            }
        }
        parameters.insert(p, spec);
    }
    GamlssSpec::new(family, parameters).map_err(|msg| Error::Schema { row: last_row, msg: format!("{outcome}: {msg}") })
}
