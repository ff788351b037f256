//! File formats: individual-level CSV ingestion, simple covariate
//! imputation, the TOML run configuration, and the versioned JSON artifacts
//! passed between pipeline stages.
//!
//! Stage-one artifacts carry only summaries (and optionally draws) of the
//! blip posterior, never individual rows, so they are the only study
//! artifacts the pooling stage ever reads.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bbdwols::{BbConfig, BlipPosterior, FitMetadata};
use crate::data::{CovariateKind, CovariateSpec, FormulaRoles, Record, StudyDataset};
use crate::design::ModifierInfo;
use crate::error::{Error, Result};
use crate::netmap::TreatmentNetwork;
use crate::nma::{Diagnostic, NmaConfig, NmaPosterior, ParamSummary};

/// Version stamped into every JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;

const FIXED_COLUMNS: [&str; 4] = ["study_id", "subject_id", "treatment", "outcome"];

/// How to interpret an individual-level CSV.
#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    pub covariates: Vec<CovariateSpec>,
    pub roles: FormulaRoles,
    /// Known treatment labels; when given, arms are ordered by it with
    /// `reference` first, otherwise by first appearance.
    pub registry: Option<Vec<String>>,
    pub reference: Option<String>,
    /// Flip the sign of the outcome so that larger is better.
    pub negate_outcome: bool,
}

fn ingest_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Ingest { line, msg: msg.into() }
}

fn parse_cell(raw: &str, spec: &CovariateSpec, line: usize) -> Result<Option<f64>> {
    let s = raw.trim();
    if s.is_empty() {
        return Ok(None);
    }
    match &spec.kind {
        CovariateKind::Continuous => {
            let v: f64 = s.parse().map_err(|_| ingest_err(line, format!("`{}`: `{s}` is not numeric", spec.name)))?;
            if !v.is_finite() {
                return Err(ingest_err(line, format!("`{}`: non-finite value", spec.name)));
            }
            Ok(Some(v))
        }
        CovariateKind::Binary => match s.parse::<f64>() {
            Ok(v) if v == 0.0 || v == 1.0 => Ok(Some(v)),
            _ => Err(ingest_err(line, format!("`{}`: binary value must be 0 or 1, got `{s}`", spec.name))),
        },
        CovariateKind::Categorical { levels } => levels
            .iter()
            .position(|l| l == s)
            .map(|i| Some(i as f64))
            .ok_or_else(|| ingest_err(line, format!("`{}`: unknown level `{s}`", spec.name))),
    }
}

/// Reads every study in a CSV file. See [`ingest_reader`].
pub fn ingest_csv(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<Vec<StudyDataset>> {
    let file = std::fs::File::open(path.as_ref())?;
    ingest_reader(file, opts)
}

/// Parses `study_id, subject_id, treatment, outcome, <covariates…>`.
///
/// Empty cells are missing values. Studies are returned in order of first
/// appearance. Errors carry the 1-based line number of the offending row.
pub fn ingest_reader<R: Read>(reader: R, opts: &IngestOptions) -> Result<Vec<StudyDataset>> {
    crate::data::validate_specs(&opts.covariates)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::Headers).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for (i, want) in FIXED_COLUMNS.iter().enumerate() {
        if headers.get(i) != Some(want) {
            return Err(ingest_err(1, format!("column {} must be `{want}`", i + 1)));
        }
    }
    let extra: Vec<&str> = headers.iter().skip(FIXED_COLUMNS.len()).collect();
    // column position of every declared covariate
    let mut positions = Vec::with_capacity(opts.covariates.len());
    for spec in &opts.covariates {
        let pos = extra
            .iter()
            .position(|h| *h == spec.name)
            .ok_or_else(|| ingest_err(1, format!("covariate column `{}` missing from header", spec.name)))?;
        positions.push(FIXED_COLUMNS.len() + pos);
    }
    if let Some(reg) = &opts.registry {
        if let Some(r) = &opts.reference {
            if !reg.contains(r) {
                return Err(Error::Mapping(format!("reference `{r}` is not in the registry")));
            }
        }
    }

    struct Pending {
        rows: Vec<(Record, String)>,
        labels: Vec<String>,
        ids: BTreeMap<String, usize>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut studies: BTreeMap<String, Pending> = BTreeMap::new();

    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(k + 2);
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let study_id = field(0).to_string();
        if study_id.is_empty() {
            return Err(ingest_err(line, "empty study_id"));
        }
        let subject_id = field(1).to_string();
        if subject_id.is_empty() {
            return Err(ingest_err(line, "empty subject_id"));
        }
        let treatment = field(2).to_string();
        if let Some(reg) = &opts.registry {
            if !reg.contains(&treatment) {
                return Err(ingest_err(line, format!("unknown treatment `{treatment}`")));
            }
        } else if treatment.is_empty() {
            return Err(ingest_err(line, "empty treatment"));
        }
        let outcome = match field(3) {
            "" => None,
            s => {
                let v: f64 = s.parse().map_err(|_| ingest_err(line, format!("outcome `{s}` is not numeric")))?;
                if !v.is_finite() {
                    return Err(ingest_err(line, "non-finite outcome"));
                }
                Some(if opts.negate_outcome { -v } else { v })
            }
        };
        let covariates = opts
            .covariates
            .iter()
            .zip(&positions)
            .map(|(spec, &p)| parse_cell(field(p), spec, line))
            .collect::<Result<Vec<_>>>()?;

        let entry = studies.entry(study_id.clone()).or_insert_with(|| {
            order.push(study_id.clone());
            Pending { rows: Vec::new(), labels: Vec::new(), ids: BTreeMap::new() }
        });
        if let Some(prev) = entry.ids.insert(subject_id.clone(), line) {
            return Err(ingest_err(line, format!("duplicate subject_id `{subject_id}` in study {study_id} (first on line {prev})")));
        }
        if !entry.labels.contains(&treatment) {
            entry.labels.push(treatment.clone());
        }
        entry.rows.push((Record { subject_id, outcome, arm: 0, covariates }, treatment));
    }

    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let p = studies.remove(&id).expect("study recorded");
        let arms = arm_order(&p.labels, opts.registry.as_deref(), opts.reference.as_deref());
        let rows = p
            .rows
            .into_iter()
            .map(|(mut r, t)| {
                r.arm = arms.iter().position(|a| *a == t).expect("label collected");
                r
            })
            .collect();
        out.push(StudyDataset {
            study_id: id,
            covariates: opts.covariates.clone(),
            rows,
            arm_treatments: arms,
            roles: opts.roles.clone(),
        });
    }
    Ok(out)
}

/// Study arm order: registry order with the network reference first, or
/// first appearance without a registry (the explicit reference still
/// leads when present).
fn arm_order(labels: &[String], registry: Option<&[String]>, reference: Option<&str>) -> Vec<String> {
    let mut arms: Vec<String> = match registry {
        Some(reg) => reg.iter().filter(|t| labels.contains(t)).cloned().collect(),
        None => labels.to_vec(),
    };
    if let Some(r) = reference.or_else(|| registry.and_then(|r| r.first().map(String::as_str))) {
        if let Some(i) = arms.iter().position(|a| a == r) {
            let lead = arms.remove(i);
            arms.insert(0, lead);
        }
    }
    arms
}

/// Writes studies in the ingestion format. Numbers use the shortest
/// representation that parses back to the same bits.
pub fn write_csv<W: Write>(writer: W, studies: &[StudyDataset]) -> Result<()> {
    let first = match studies.first() {
        Some(s) => s,
        None => return Ok(()),
    };
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FIXED_COLUMNS.to_vec();
    header.extend(first.covariates.iter().map(|c| c.name.as_str()));
    w.write_record(&header)?;
    for s in studies {
        if s.covariates != first.covariates {
            return Err(Error::Schema(format!("study {} has a different covariate schema", s.study_id)));
        }
        for r in &s.rows {
            let mut rec = vec![
                s.study_id.clone(),
                r.subject_id.clone(),
                s.arm_treatments[r.arm].clone(),
                r.outcome.map(|y| y.to_string()).unwrap_or_default(),
            ];
            for (v, spec) in r.covariates.iter().zip(&s.covariates) {
                rec.push(match (v, &spec.kind) {
                    (None, _) => String::new(),
                    (Some(x), CovariateKind::Categorical { levels }) => levels[*x as usize].clone(),
                    (Some(x), _) => x.to_string(),
                });
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(path: impl AsRef<Path>, studies: &[StudyDataset]) -> Result<()> {
    write_csv(std::fs::File::create(path)?, studies)
}

/// Values filled in for one covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedColumn {
    pub covariate: String,
    pub n_imputed: usize,
    /// The value substituted (level index for categorical covariates).
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImputationReport {
    pub study_id: String,
    pub columns: Vec<ImputedColumn>,
}

impl ImputationReport {
    pub fn total(&self) -> usize {
        self.columns.iter().map(|c| c.n_imputed).sum()
    }
}

/// Single imputation within a study: mean for continuous covariates, mode
/// for binary and categorical ones (ties go to the value first in sort
/// order). Outcomes are left alone.
pub fn impute_simple(data: &StudyDataset) -> Result<(StudyDataset, ImputationReport)> {
    let mut out = data.clone();
    let mut report = ImputationReport { study_id: data.study_id.clone(), columns: Vec::new() };
    for (c, spec) in data.covariates.iter().enumerate() {
        let observed: Vec<f64> = data.rows.iter().filter_map(|r| r.covariates.get(c).copied().flatten()).collect();
        let missing = data.rows.len() - observed.len();
        if missing == 0 {
            continue;
        }
        if observed.is_empty() {
            return Err(Error::InvalidData(format!(
                "study {}: covariate `{}` is missing for every subject",
                data.study_id, spec.name
            )));
        }
        let value = match &spec.kind {
            CovariateKind::Continuous => observed.iter().sum::<f64>() / observed.len() as f64,
            CovariateKind::Binary | CovariateKind::Categorical { .. } => {
                // values are small non-negative integers for both kinds
                let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
                for v in &observed {
                    *counts.entry(*v as u64).or_default() += 1;
                }
                let best = counts.values().copied().max().unwrap_or(0);
                counts.into_iter().find(|(_, n)| *n == best).map(|(v, _)| v as f64).unwrap_or(0.0)
            }
        };
        for r in &mut out.rows {
            if r.covariates[c].is_none() {
                r.covariates[c] = Some(value);
            }
        }
        log::info!("study {}: imputed {missing} value(s) of `{}` with {value}", data.study_id, spec.name);
        report.columns.push(ImputedColumn { covariate: spec.name.clone(), n_imputed: missing, value });
    }
    Ok((out, report))
}

fn default_true() -> bool {
    true
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// One individual-level data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyEntry {
    pub path: PathBuf,
    /// Per-study override of the shared stage-one settings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_one: Option<BbConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub registry: Vec<String>,
    #[serde(default)]
    pub reference: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    #[serde(default)]
    pub negate_outcome: bool,
    #[serde(default = "default_true")]
    pub impute: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { negate_outcome: false, impute: true }
    }
}

/// Everything a pipeline run needs. The same roles apply to every study:
/// the stage-one models have to share their form for pooling to make sense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub studies: Vec<StudyEntry>,
    pub covariates: Vec<CovariateSpec>,
    pub roles: FormulaRoles,
    pub network: NetworkConfig,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub stage_one: BbConfig,
    #[serde(default)]
    pub nma: NmaConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        for c in &mut cfg.covariates {
            c.normalize();
        }
        Ok(cfg)
    }

    /// Parses a config file; relative paths are taken relative to the
    /// file's directory. Validates the result.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut cfg.studies {
            if s.path.is_relative() {
                s.path = base.join(&s.path);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.studies.is_empty() {
            return Err(Error::Config("no studies listed".into()));
        }
        for s in &self.studies {
            if !s.path.is_file() {
                return Err(Error::Config(format!("study file {} does not exist", s.path.display())));
            }
            if let Some(b) = &s.stage_one {
                b.validate()?;
            }
        }
        crate::data::validate_specs(&self.covariates)?;
        self.roles.validate(&self.covariates)?;
        if self.network.registry.is_empty() {
            return Err(Error::Config("empty treatment registry".into()));
        }
        if let Some(r) = &self.network.reference {
            if !self.network.registry.contains(r) {
                return Err(Error::Config(format!("reference `{r}` is not in the registry")));
            }
        }
        self.stage_one.validate()?;
        self.nma.validate()
    }

    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            covariates: self.covariates.clone(),
            roles: self.roles.clone(),
            registry: Some(self.network.registry.clone()),
            reference: self.network.reference.clone(),
            negate_outcome: self.ingest.negate_outcome,
        }
    }

    /// Stage-one settings for the `i`-th study entry.
    pub fn stage_one_for(&self, i: usize) -> BbConfig {
        self.studies.get(i).and_then(|s| s.stage_one.clone()).unwrap_or_else(|| self.stage_one.clone())
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn matrix_of(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Schema(format!("{what}: ragged rows (expected {ncols} columns)")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

fn check_header(version: u32, kind: &str, expected: &str) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(Error::Schema(format!("schema_version {version} is not supported (expected {SCHEMA_VERSION})")));
    }
    if kind != expected {
        return Err(Error::Schema(format!("artifact kind `{kind}`, expected `{expected}`")));
    }
    Ok(())
}

pub fn write_json<V: Serialize>(path: impl AsRef<Path>, value: &V) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Stage-one output for one study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlipArtifact {
    pub schema_version: u32,
    pub kind: String,
    pub study_id: String,
    pub arm_treatments: Vec<String>,
    pub modifiers: Vec<ModifierInfo>,
    pub names: Vec<String>,
    pub point: Vec<f64>,
    pub sd: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub meta: FitMetadata,
    pub covariates: Vec<CovariateSpec>,
    pub roles: FormulaRoles,
    #[serde(default)]
    pub imputation: Option<ImputationReport>,
    /// Resolved run configuration, when the fit came from one.
    #[serde(default)]
    pub run_config: Option<RunConfig>,
    /// `L × d` bootstrap draws (opt-in).
    #[serde(default)]
    pub draws: Option<Vec<Vec<f64>>>,
}

impl BlipArtifact {
    pub const KIND: &'static str = "blip_posterior";

    pub fn new(post: &BlipPosterior<f64>, data: &StudyDataset, include_draws: bool) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: Self::KIND.into(),
            study_id: post.study_id.clone(),
            arm_treatments: post.arm_treatments.clone(),
            modifiers: post.modifiers.clone(),
            names: post.names.clone(),
            point: post.point.iter().copied().collect(),
            sd: post.cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect(),
            cov: rows_of(&post.cov),
            meta: post.meta.clone(),
            covariates: data.covariates.clone(),
            roles: data.roles.clone(),
            imputation: None,
            run_config: None,
            draws: include_draws.then(|| rows_of(&post.draws)),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let a: Self = serde_json::from_str(&text)?;
        check_header(a.schema_version, &a.kind, Self::KIND)?;
        Ok(a)
    }

    /// Back to a posterior; without stored draws the draw matrix is empty,
    /// which is all pooling needs.
    pub fn to_posterior(&self) -> Result<BlipPosterior<f64>> {
        let d = self.point.len();
        if self.names.len() != d {
            return Err(Error::Schema(format!("{} names for {d} coordinates", self.names.len())));
        }
        let cov = matrix_of(&self.cov, d, "cov")?;
        if cov.nrows() != d {
            return Err(Error::Schema("cov is not square".into()));
        }
        let draws = match &self.draws {
            Some(rows) => matrix_of(rows, d, "draws")?,
            None => DMatrix::zeros(0, d),
        };
        Ok(BlipPosterior {
            study_id: self.study_id.clone(),
            arm_treatments: self.arm_treatments.clone(),
            modifiers: self.modifiers.clone(),
            names: self.names.clone(),
            draws,
            point: DVector::from_vec(self.point.clone()),
            cov,
            meta: self.meta.clone(),
        })
    }
}

/// Stage-two output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmaArtifact {
    pub schema_version: u32,
    pub kind: String,
    pub network: TreatmentNetwork,
    pub modifiers: Vec<ModifierInfo>,
    pub psi_names: Vec<String>,
    pub config: NmaConfig,
    pub chains: usize,
    pub draws_per_chain: usize,
    pub converged: bool,
    pub repaired_studies: Vec<String>,
    pub summaries: Vec<ParamSummary>,
    pub tau: Option<ParamSummary>,
    pub psi_diagnostics: Vec<Diagnostic>,
    pub tau_diagnostic: Option<Diagnostic>,
    #[serde(default)]
    pub run_config: Option<RunConfig>,
    /// `S × P` chain-major ψ draws (opt-in, needed for profile queries).
    #[serde(default)]
    pub psi_draws: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub tau_draws: Option<Vec<f64>>,
}

impl NmaArtifact {
    pub const KIND: &'static str = "nma_posterior";

    pub fn new(post: &NmaPosterior<f64>, include_draws: bool) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: Self::KIND.into(),
            network: post.network.clone(),
            modifiers: post.modifiers.clone(),
            psi_names: post.psi_names.clone(),
            config: post.config.clone(),
            chains: post.chains,
            draws_per_chain: post.draws_per_chain(),
            converged: post.converged,
            repaired_studies: post.repaired_studies.clone(),
            summaries: post.psi_summaries(),
            tau: post.tau_summary(),
            psi_diagnostics: post.psi_diagnostics.clone(),
            tau_diagnostic: post.tau_diagnostic,
            run_config: None,
            psi_draws: include_draws.then(|| rows_of(&post.psi_draws)),
            tau_draws: if include_draws { post.tau_draws.clone() } else { None },
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: Self = serde_json::from_str(text)?;
        check_header(a.schema_version, &a.kind, Self::KIND)?;
        Ok(a)
    }

    pub fn has_draws(&self) -> bool {
        self.psi_draws.is_some()
    }

    /// Rebuilds the posterior; needs the stored draws.
    pub fn to_posterior(&self) -> Result<NmaPosterior<f64>> {
        let rows = self
            .psi_draws
            .as_ref()
            .ok_or_else(|| Error::Schema("artifact has no ψ draws (write it with draws included)".into()))?;
        let p = self.network.psi_dim();
        if self.psi_names.len() != p || self.psi_diagnostics.len() != p {
            return Err(Error::Schema(format!("artifact does not match ψ dimension {p}")));
        }
        let psi_draws = matrix_of(rows, p, "psi_draws")?;
        if self.chains == 0 || psi_draws.nrows() != self.chains * self.draws_per_chain {
            return Err(Error::Schema("psi_draws row count does not match chains × draws_per_chain".into()));
        }
        if let Some(t) = &self.tau_draws {
            if t.len() != psi_draws.nrows() {
                return Err(Error::Schema("tau_draws length does not match psi_draws".into()));
            }
        }
        Ok(NmaPosterior {
            network: self.network.clone(),
            modifiers: self.modifiers.clone(),
            psi_names: self.psi_names.clone(),
            psi_draws,
            chains: self.chains,
            tau_draws: self.tau_draws.clone(),
            delta_draws: None,
            psi_diagnostics: self.psi_diagnostics.clone(),
            tau_diagnostic: self.tau_diagnostic,
            converged: self.converged,
            repaired_studies: self.repaired_studies.clone(),
            config: self.config.clone(),
        })
    }

    /// Forest-plot rows: every ψ coordinate, then τ if present.
    pub fn forest(&self) -> Vec<ParamSummary> {
        self.summaries.iter().cloned().chain(self.tau.clone()).collect()
    }
}

pub const FOREST_HEADER: [&str; 8] = ["parameter", "mean", "sd", "median", "lower", "upper", "rhat", "ess_bulk"];

pub fn write_forest_csv<W: Write>(writer: W, rows: &[ParamSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FOREST_HEADER)?;
    let num = |x: f64| if x.is_finite() { x.to_string() } else { String::new() };
    for r in rows {
        w.write_record([
            r.name.clone(),
            num(r.mean),
            num(r.sd),
            num(r.median),
            num(r.lower),
            num(r.upper),
            num(r.rhat),
            num(r.ess_bulk),
        ])?;
    }
    w.flush()?;
    Ok(())
}
