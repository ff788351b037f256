//! HTTP front end for a fitted network posterior.
//!
//! The loaded posterior is an immutable snapshot behind an `Arc`; handlers
//! clone the `Arc` and then work lock-free. Loading a new model replaces
//! the whole snapshot at once, so a request sees either the old or the new
//! model, never a mixture.
//!
//! Endpoints: `GET /health`, `GET /model`, `GET /summary`,
//! `POST /profile`, `POST /contrast`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use itrnma_core::design::ModifierInfo;
use itrnma_core::io::NmaArtifact;
use itrnma_core::linalg::quantile_sorted;
use itrnma_core::netmap::{NetworkSummary, TreatmentNetwork};
use itrnma_core::nma::{NmaConfig, ParamSummary};
use itrnma_core::NmaPosteriorF64;
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

/// Upper bound on the number of draws returned for density plots.
pub const MAX_SAMPLES: usize = 2000;

/// A loaded model. Never mutated after construction.
pub struct Snapshot {
    pub artifact: NmaArtifact,
    pub posterior: NmaPosteriorF64,
}

impl Snapshot {
    pub fn new(artifact: NmaArtifact) -> itrnma_core::Result<Self> {
        let posterior = artifact.to_posterior()?;
        Ok(Self { artifact, posterior })
    }
}

#[derive(Clone, Default)]
pub struct AppState {
    model: Arc<RwLock<Option<Arc<Snapshot>>>>,
}

impl AppState {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_model(snapshot: Snapshot) -> Self {
        let s = Self::default();
        s.replace(snapshot);
        s
    }

    /// Swaps in a new model atomically.
    pub fn replace(&self, snapshot: Snapshot) {
        *self.model.write().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(snapshot));
    }

    pub fn current(&self) -> Option<Arc<Snapshot>> {
        self.model.read().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

fn fail(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: msg.into() })).into_response()
}

fn no_model() -> Response {
    fail(StatusCode::SERVICE_UNAVAILABLE, "no model loaded")
}

fn unprocessable(msg: impl Into<String>) -> Response {
    fail(StatusCode::UNPROCESSABLE_ENTITY, msg)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_loaded: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelInfo {
    pub schema_version: u32,
    pub treatments: Vec<String>,
    pub reference: String,
    pub network: TreatmentNetwork,
    pub graph: NetworkSummary,
    /// Effect modifiers in profile order, with kinds and observed ranges.
    pub modifiers: Vec<ModifierInfo>,
    pub psi_names: Vec<String>,
    pub n_draws: usize,
    pub converged: bool,
    pub config: NmaConfig,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SummaryAnswer {
    pub converged: bool,
    pub psi: Vec<ParamSummary>,
    pub tau: Option<ParamSummary>,
}

/// Profile values, either in modifier order or keyed by modifier name.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum Covariates {
    Ordered(Vec<f64>),
    Named(BTreeMap<String, f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileRequest {
    pub covariates: Covariates,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TreatmentEffect {
    pub treatment: String,
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    /// Share of draws in which this treatment has the largest effect.
    pub prob_optimal: f64,
    /// Thinned draws of the effect relative to the reference.
    pub samples: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProfileAnswer {
    pub reference: String,
    /// The profile in modifier order.
    pub x: Vec<f64>,
    pub effects: Vec<TreatmentEffect>,
    /// Draws in which more than one treatment attains the maximum.
    pub tie_fraction: f64,
    pub any_tie: bool,
    pub n_draws: usize,
    pub n_samples: usize,
}

/// Modifier by position (0 is the intercept) or by name.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum ModifierRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastRequest {
    pub g: String,
    pub g_prime: String,
    #[serde(default = "intercept")]
    pub q: ModifierRef,
}

fn intercept() -> ModifierRef {
    ModifierRef::Index(0)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ContrastAnswer {
    pub g: String,
    pub g_prime: String,
    pub q: usize,
    pub modifier: String,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    /// Posterior probability that the contrast is positive.
    pub prob_positive: f64,
    /// The 95% interval excludes zero.
    pub excludes_zero: bool,
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health { status: "ok".into(), model_loaded: state.current().is_some() })
}

pub fn model_info(s: &Snapshot) -> ModelInfo {
    let a = &s.artifact;
    ModelInfo {
        schema_version: a.schema_version,
        treatments: a.network.treatments.clone(),
        reference: a.network.treatments[0].clone(),
        network: a.network.clone(),
        graph: a.network.summary(),
        modifiers: a.modifiers.clone(),
        psi_names: a.psi_names.clone(),
        n_draws: s.posterior.n_draws(),
        converged: a.converged,
        config: a.config.clone(),
    }
}

async fn model(State(state): State<AppState>) -> Response {
    match state.current() {
        Some(s) => Json(model_info(&s)).into_response(),
        None => no_model(),
    }
}

async fn summary(State(state): State<AppState>) -> Response {
    match state.current() {
        Some(s) => Json(SummaryAnswer {
            converged: s.artifact.converged,
            psi: s.artifact.summaries.clone(),
            tau: s.artifact.tau.clone(),
        })
        .into_response(),
        None => no_model(),
    }
}

/// Checks a profile against the model schema and returns it in modifier
/// order.
pub fn resolve_profile(modifiers: &[ModifierInfo], cov: &Covariates) -> Result<Vec<f64>, String> {
    use itrnma_core::design::ModifierKind;
    let x = match cov {
        Covariates::Ordered(v) => {
            if v.len() != modifiers.len() {
                return Err(format!("expected {} covariate values, got {}", modifiers.len(), v.len()));
            }
            v.clone()
        }
        Covariates::Named(map) => {
            if let Some(k) = map.keys().find(|k| !modifiers.iter().any(|m| &m.name == *k)) {
                return Err(format!("unknown covariate `{k}`"));
            }
            modifiers
                .iter()
                .map(|m| map.get(&m.name).copied().ok_or_else(|| format!("missing covariate `{}`", m.name)))
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    for (m, v) in modifiers.iter().zip(&x) {
        if !v.is_finite() {
            return Err(format!("`{}` must be finite", m.name));
        }
        if matches!(m.kind, ModifierKind::Binary | ModifierKind::Indicator { .. }) && *v != 0.0 && *v != 1.0 {
            return Err(format!("`{}` must be 0 or 1", m.name));
        }
    }
    Ok(x)
}

fn stride_for(n: usize) -> usize {
    n.div_ceil(MAX_SAMPLES).max(1)
}

/// Answers a profile query; pure function of the snapshot and `x`.
pub fn answer_profile(s: &Snapshot, x: &[f64]) -> itrnma_core::Result<ProfileAnswer> {
    let draws = s.posterior.profile(x)?;
    let probs = draws.prob_optimal();
    let n = draws.effects.nrows();
    let stride = stride_for(n);
    let effects = s
        .posterior
        .network
        .treatments
        .iter()
        .enumerate()
        .map(|(g, label)| {
            let col: Vec<f64> = draws.effects.column(g).iter().copied().collect();
            let mut sorted = col.clone();
            sorted.sort_by(f64::total_cmp);
            TreatmentEffect {
                treatment: label.clone(),
                mean: col.iter().sum::<f64>() / n as f64,
                median: quantile_sorted(&sorted, 0.5),
                lower: quantile_sorted(&sorted, 0.025),
                upper: quantile_sorted(&sorted, 0.975),
                prob_optimal: probs[g],
                samples: col.iter().step_by(stride).copied().collect(),
            }
        })
        .collect::<Vec<_>>();
    let n_samples = effects.first().map_or(0, |e| e.samples.len());
    Ok(ProfileAnswer {
        reference: s.posterior.network.treatments[0].clone(),
        x: x.to_vec(),
        effects,
        tie_fraction: draws.tie_fraction(),
        any_tie: draws.tie.iter().any(|&t| t),
        n_draws: n,
        n_samples,
    })
}

async fn profile(State(state): State<AppState>, body: Bytes) -> Response {
    let Some(s) = state.current() else { return no_model() };
    let req: ProfileRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return unprocessable(format!("malformed profile request: {e}")),
    };
    let x = match resolve_profile(&s.artifact.modifiers, &req.covariates) {
        Ok(x) => x,
        Err(e) => return unprocessable(e),
    };
    match answer_profile(&s, &x) {
        Ok(a) => Json(a).into_response(),
        Err(e) => unprocessable(e.to_string()),
    }
}

/// Answers a contrast query from all draws.
pub fn answer_contrast(s: &Snapshot, req: &ContrastRequest) -> Result<ContrastAnswer, String> {
    let q = match &req.q {
        ModifierRef::Index(i) => *i,
        ModifierRef::Name(n) if n == "(intercept)" => 0,
        ModifierRef::Name(n) => {
            s.artifact.modifiers.iter().position(|m| &m.name == n).map(|i| i + 1).ok_or_else(|| format!("unknown covariate `{n}`"))?
        }
    };
    let values: Vec<f64> =
        s.posterior.contrast(&req.g, &req.g_prime, q).map_err(|e| e.to_string())?.iter().copied().collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let lower = quantile_sorted(&sorted, 0.025);
    let upper = quantile_sorted(&sorted, 0.975);
    Ok(ContrastAnswer {
        g: req.g.clone(),
        g_prime: req.g_prime.clone(),
        q,
        modifier: if q == 0 { "(intercept)".into() } else { s.artifact.modifiers[q - 1].name.clone() },
        mean,
        sd,
        median: quantile_sorted(&sorted, 0.5),
        lower,
        upper,
        prob_positive: values.iter().filter(|&&v| v > 0.0).count() as f64 / n,
        excludes_zero: lower > 0.0 || upper < 0.0,
    })
}

async fn contrast(State(state): State<AppState>, body: Bytes) -> Response {
    let Some(s) = state.current() else { return no_model() };
    let req: ContrastRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return unprocessable(format!("malformed contrast request: {e}")),
    };
    match answer_contrast(&s, &req) {
        Ok(a) => Json(a).into_response(),
        Err(e) => unprocessable(e),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/model", get(model))
        .route("/summary", get(summary))
        .route("/profile", post(profile))
        .route("/contrast", post(contrast))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
