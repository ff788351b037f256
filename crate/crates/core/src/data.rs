//! Study-level domain types: covariate schema, regression term roles, and
//! the individual-level dataset a single study contributes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a covariate enters the design.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateKind {
    Continuous,
    /// Coded 0/1.
    Binary,
    /// Stored as an index into `levels`; `levels` is kept sorted so the
    /// dropped reference level is always the first in sort order.
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: CovariateKind,
}

impl CovariateSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: CovariateKind::Continuous }
    }

    pub fn binary(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: CovariateKind::Binary }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, levels: impl IntoIterator<Item = S>) -> Self {
        let mut levels: Vec<String> = levels.into_iter().map(Into::into).collect();
        levels.sort();
        levels.dedup();
        Self { name: name.into(), kind: CovariateKind::Categorical { levels } }
    }

    /// Sorts and dedups categorical levels in place.
    pub fn normalize(&mut self) {
        if let CovariateKind::Categorical { levels } = &mut self.kind {
            levels.sort();
            levels.dedup();
        }
    }
}

/// Checks the covariate schema: unique names, non-empty categorical levels.
pub fn validate_specs(specs: &[CovariateSpec]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for s in specs {
        if s.name.is_empty() {
            return Err(Error::Schema("covariate with empty name".into()));
        }
        if !seen.insert(s.name.as_str()) {
            return Err(Error::Schema(format!("duplicate covariate name `{}`", s.name)));
        }
        if let CovariateKind::Categorical { levels } = &s.kind {
            if levels.is_empty() {
                return Err(Error::Schema(format!("categorical covariate `{}` has no levels", s.name)));
            }
        }
    }
    Ok(())
}

/// One regression term.
///
/// Text form: `x1`, `x1^2`, `x1:x2`, and `arm` (indicators of the
/// non-reference arms, only meaningful in the missingness model).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Term {
    Main(String),
    Power(String, u32),
    Product(String, String),
    Arm,
}

impl Term {
    pub fn main(name: impl Into<String>) -> Self {
        Term::Main(name.into())
    }

    /// Covariates the term reads.
    pub fn covariates(&self) -> Vec<&str> {
        match self {
            Term::Main(a) | Term::Power(a, _) => vec![a.as_str()],
            Term::Product(a, b) => vec![a.as_str(), b.as_str()],
            Term::Arm => vec![],
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Main(a) => write!(f, "{a}"),
            Term::Power(a, p) => write!(f, "{a}^{p}"),
            Term::Product(a, b) => write!(f, "{a}:{b}"),
            Term::Arm => write!(f, "arm"),
        }
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Schema(format!("cannot parse term `{s}`"));
        if s == "arm" {
            return Ok(Term::Arm);
        }
        if let Some((a, p)) = s.split_once('^') {
            let p: u32 = p.trim().parse().map_err(|_| bad())?;
            if p == 0 || a.trim().is_empty() {
                return Err(bad());
            }
            return Ok(if p == 1 { Term::Main(a.trim().into()) } else { Term::Power(a.trim().into(), p) });
        }
        if let Some((a, b)) = s.split_once(':') {
            if a.trim().is_empty() || b.trim().is_empty() {
                return Err(bad());
            }
            return Ok(Term::Product(a.trim().into(), b.trim().into()));
        }
        if s.is_empty() {
            return Err(bad());
        }
        Ok(Term::Main(s.into()))
    }
}

impl TryFrom<String> for Term {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Term> for String {
    fn from(t: Term) -> String {
        t.to_string()
    }
}

/// Term sets for the four models fitted in a study. Every model gets an
/// implicit leading intercept.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FormulaRoles {
    pub reference_terms: Vec<Term>,
    pub blip_terms: Vec<Term>,
    pub treatment_terms: Vec<Term>,
    pub missingness_terms: Vec<Term>,
}

impl FormulaRoles {
    /// Builds roles from text terms, e.g. `&["x1", "x2", "x1^2"]`.
    pub fn parse(reference: &[&str], blip: &[&str], treatment: &[&str], missingness: &[&str]) -> Result<Self> {
        let p = |v: &[&str]| v.iter().map(|s| s.parse()).collect::<Result<Vec<Term>>>();
        Ok(Self {
            reference_terms: p(reference)?,
            blip_terms: p(blip)?,
            treatment_terms: p(treatment)?,
            missingness_terms: p(missingness)?,
        })
    }

    /// Schema checks against a covariate set.
    pub fn validate(&self, specs: &[CovariateSpec]) -> Result<()> {
        let known: BTreeMap<&str, &CovariateSpec> = specs.iter().map(|s| (s.name.as_str(), s)).collect();
        let check = |terms: &[Term], role: &str, allow_arm: bool| -> Result<()> {
            for t in terms {
                if matches!(t, Term::Arm) && !allow_arm {
                    return Err(Error::Schema(format!("`arm` is only allowed in the missingness model, found in {role}")));
                }
                for c in t.covariates() {
                    let spec = known
                        .get(c)
                        .ok_or_else(|| Error::Schema(format!("unknown covariate `{c}` in {role} term `{t}`")))?;
                    if matches!(spec.kind, CovariateKind::Categorical { .. }) && !matches!(t, Term::Main(_)) {
                        return Err(Error::Schema(format!(
                            "categorical covariate `{c}` can only enter as a main term (in {role} term `{t}`)"
                        )));
                    }
                }
            }
            Ok(())
        };
        check(&self.reference_terms, "reference", false)?;
        check(&self.blip_terms, "blip", false)?;
        check(&self.treatment_terms, "treatment", false)?;
        check(&self.missingness_terms, "missingness", true)?;

        let reference_covs: BTreeSet<&str> =
            self.reference_terms.iter().flat_map(|t| t.covariates()).collect();
        for t in &self.blip_terms {
            for c in t.covariates() {
                if !reference_covs.contains(c) {
                    return Err(Error::Schema(format!(
                        "blip covariate `{c}` does not appear in the reference model"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub subject_id: String,
    /// `None` marks a missing outcome (m_ij = 1).
    pub outcome: Option<f64>,
    /// Zero-based arm index into [`StudyDataset::arm_treatments`]; arm 0 is the
    /// study reference.
    pub arm: usize,
    /// Aligned with [`StudyDataset::covariates`]; categorical values hold the
    /// level index. `None` is a missing cell, which must be imputed before
    /// fitting.
    pub covariates: Vec<Option<f64>>,
}

impl Record {
    pub fn is_complete_case(&self) -> bool {
        self.outcome.is_some()
    }
}

/// Individual-level data of one study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyDataset {
    pub study_id: String,
    pub covariates: Vec<CovariateSpec>,
    pub rows: Vec<Record>,
    /// Global treatment labels of the arms; the first is the study reference.
    pub arm_treatments: Vec<String>,
    pub roles: FormulaRoles,
}

impl StudyDataset {
    pub fn n_arms(&self) -> usize {
        self.arm_treatments.len()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c.name == name)
    }

    /// Runs [`validate_dataset`] and turns any problem into an error.
    pub fn ensure_valid(&self) -> Result<ValidationReport> {
        let report = validate_dataset(self);
        if report.is_ok() {
            Ok(report)
        } else {
            Err(Error::InvalidData(format!("study {}: {}", self.study_id, report.problems.join("; "))))
        }
    }
}

/// A missing covariate cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingCell {
    pub row: usize,
    pub covariate: String,
}

/// Report-only dataset check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub study_id: String,
    pub n_rows: usize,
    pub arm_counts: Vec<usize>,
    pub complete_case_counts: Vec<usize>,
    pub missing_outcomes: usize,
    pub missing_covariate_cells: Vec<MissingCell>,
    pub problems: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn missing_outcome_fraction(&self) -> f64 {
        if self.n_rows == 0 {
            0.0
        } else {
            self.missing_outcomes as f64 / self.n_rows as f64
        }
    }
}

/// Inspects a dataset without failing; the returned report lists every
/// problem that would make a fit refuse it.
pub fn validate_dataset(data: &StudyDataset) -> ValidationReport {
    let g = data.n_arms();
    let mut problems = Vec::new();
    let mut arm_counts = vec![0usize; g];
    let mut complete = vec![0usize; g];
    let mut missing_cells = Vec::new();
    let mut missing_outcomes = 0;

    if data.rows.is_empty() {
        problems.push("dataset has no rows".to_string());
    }
    if g < 2 {
        problems.push(format!("study needs at least 2 arms, has {g}"));
    }
    if let Err(e) = validate_specs(&data.covariates) {
        problems.push(e.to_string());
    }
    if let Err(e) = data.roles.validate(&data.covariates) {
        problems.push(e.to_string());
    }
    let distinct: BTreeSet<&String> = data.arm_treatments.iter().collect();
    if distinct.len() != g {
        problems.push("arm treatments are not distinct".to_string());
    }

    let mut ids = BTreeSet::new();
    for (j, r) in data.rows.iter().enumerate() {
        if !ids.insert(r.subject_id.as_str()) {
            problems.push(format!("duplicate subject_id `{}`", r.subject_id));
        }
        if r.arm >= g {
            problems.push(format!("row {j}: arm index {} outside 0..{g}", r.arm));
            continue;
        }
        arm_counts[r.arm] += 1;
        match r.outcome {
            Some(y) if y.is_finite() => complete[r.arm] += 1,
            Some(_) => problems.push(format!("row {j}: non-finite outcome")),
            None => missing_outcomes += 1,
        }
        if r.covariates.len() != data.covariates.len() {
            problems.push(format!(
                "row {j}: {} covariate values for {} covariates",
                r.covariates.len(),
                data.covariates.len()
            ));
            continue;
        }
        for (c, v) in r.covariates.iter().enumerate() {
            match v {
                None => missing_cells.push(MissingCell { row: j, covariate: data.covariates[c].name.clone() }),
                Some(x) => {
                    let ok = match &data.covariates[c].kind {
                        CovariateKind::Continuous => x.is_finite(),
                        CovariateKind::Binary => *x == 0.0 || *x == 1.0,
                        CovariateKind::Categorical { levels } => {
                            x.fract() == 0.0 && *x >= 0.0 && (*x as usize) < levels.len()
                        }
                    };
                    if !ok {
                        problems.push(format!("row {j}: invalid value {x} for `{}`", data.covariates[c].name));
                    }
                }
            }
        }
    }
    if !missing_cells.is_empty() {
        problems.push(format!("{} missing covariate cells (impute before fitting)", missing_cells.len()));
    }
    if g >= 2 && !data.rows.is_empty() {
        for (k, &n) in complete.iter().enumerate() {
            if n == 0 {
                problems.push(format!("arm {k} ({}) has no complete-case rows", data.arm_treatments[k]));
            }
        }
    }
    problems.dedup();
    ValidationReport {
        study_id: data.study_id.clone(),
        n_rows: data.rows.len(),
        arm_counts,
        complete_case_counts: complete,
        missing_outcomes,
        missing_covariate_cells: missing_cells,
        problems,
    }
}
