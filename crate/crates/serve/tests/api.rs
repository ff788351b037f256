use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use itrnma_core::design::{ModifierInfo, ModifierKind};
use itrnma_core::io::NmaArtifact;
use itrnma_core::netmap::TreatmentNetwork;
use itrnma_core::nma::{fit_summaries, Effects, NmaConfig, StudySummary};
use itrnma_serve::{router, AppState, ContrastAnswer, ModelInfo, ProfileAnswer, Snapshot, SummaryAnswer, MAX_SAMPLES};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};
use tower::ServiceExt;

/// Triangle network A–B, A–C, B–C with two modifiers (age, female).
fn fixture(effects: Effects) -> NmaArtifact {
    let reg: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
    let studies = vec![
        ("s1".to_string(), vec!["A".to_string(), "B".to_string()]),
        ("s2".to_string(), vec!["A".to_string(), "C".to_string()]),
        ("s3".to_string(), vec!["B".to_string(), "C".to_string()]),
    ];
    let net = TreatmentNetwork::from_labels(&reg, &studies, Some("A"), 2).unwrap();
    let points = [[1.0, 0.2, -0.5], [2.0, -0.3, 0.4], [1.1, -0.6, 0.8]];
    let sums: Vec<StudySummary<f64>> = studies
        .iter()
        .zip(points)
        .map(|((id, arms), p)| StudySummary {
            study_id: id.clone(),
            arm_treatments: arms.clone(),
            point: DVector::from_row_slice(&p),
            cov: DMatrix::from_diagonal(&DVector::from_element(3, 0.04)),
        })
        .collect();
    let mods = vec![
        ModifierInfo { name: "age".into(), kind: ModifierKind::Continuous, min: 18.0, max: 75.0 },
        ModifierInfo { name: "female".into(), kind: ModifierKind::Binary, min: 0.0, max: 1.0 },
    ];
    let cfg = NmaConfig { effects, chains: 4, iters: 1500, warmup: 500, seed: 9, ..NmaConfig::default() };
    let post = fit_summaries(&sums, mods, &net, &cfg).unwrap();
    NmaArtifact::new(&post, true)
}

fn app() -> (axum::Router, NmaArtifact) {
    let a = fixture(Effects::Common);
    (router(AppState::with_model(Snapshot::new(a.clone()).unwrap())), a)
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn parse<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> T {
    serde_json::from_slice(bytes).unwrap()
}

#[tokio::test]
async fn endpoints_return_503_without_model() {
    let app = router(AppState::empty());
    let (s, body) = call(&app, "GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(parse::<Value>(&body)["model_loaded"], json!(false));
    for (m, uri, b) in [
        ("GET", "/model", None),
        ("GET", "/summary", None),
        ("POST", "/profile", Some(json!({"covariates": [0.0, 0.0]}))),
        ("POST", "/contrast", Some(json!({"g": "B", "g_prime": "A"}))),
    ] {
        assert_eq!(call(&app, m, uri, b).await.0, StatusCode::SERVICE_UNAVAILABLE, "{uri}");
    }
}

#[tokio::test]
async fn model_echoes_the_loaded_artifact() {
    let (app, a) = app();
    let (s, body) = call(&app, "GET", "/model", None).await;
    assert_eq!(s, StatusCode::OK);
    let m: ModelInfo = parse(&body);
    assert_eq!(m.treatments, a.network.treatments);
    assert_eq!(m.reference, "A");
    assert_eq!(m.network, a.network);
    assert_eq!(m.modifiers, a.modifiers);
    assert_eq!(m.psi_names, a.psi_names);
    assert_eq!(m.config, a.config);
    assert_eq!(m.schema_version, a.schema_version);
    assert_eq!(m.n_draws, 4000);
}

#[tokio::test]
async fn zero_profile_gives_main_effects() {
    let (app, _) = app();
    let (_, body) = call(&app, "GET", "/summary", None).await;
    let summary: SummaryAnswer = parse(&body);
    let (s, body) = call(&app, "POST", "/profile", Some(json!({"covariates": {"age": 0.0, "female": 0.0}}))).await;
    assert_eq!(s, StatusCode::OK);
    let p: ProfileAnswer = parse(&body);
    assert_eq!(p.effects[0].treatment, "A");
    assert_eq!(p.effects[0].mean, 0.0);
    assert!(p.effects[0].samples.iter().all(|&v| v == 0.0));
    // B main effect is ψ index 0, C main effect is ψ index 3
    approx::assert_relative_eq!(p.effects[1].mean, summary.psi[0].mean, epsilon = 1e-12);
    approx::assert_relative_eq!(p.effects[2].mean, summary.psi[3].mean, epsilon = 1e-12);
    let total: f64 = p.effects.iter().map(|e| e.prob_optimal).sum();
    approx::assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    assert!(p.n_samples <= MAX_SAMPLES);
}

#[tokio::test]
async fn profiles_are_linear_in_each_covariate_per_draw() {
    let (app, a) = app();
    let delta = 2.5;
    let (_, b0) = call(&app, "POST", "/profile", Some(json!({"covariates": [40.0, 1.0]}))).await;
    let (_, b1) = call(&app, "POST", "/profile", Some(json!({"covariates": [40.0 + delta, 1.0]}))).await;
    let (p0, p1): (ProfileAnswer, ProfileAnswer) = (parse(&b0), parse(&b1));
    let draws = a.psi_draws.as_ref().unwrap();
    let stride = draws.len().div_ceil(MAX_SAMPLES);
    // g = B uses ψ column 1 for age; g = C uses column 4
    for (g, col) in [(1usize, 1usize), (2, 4)] {
        for (k, (x0, x1)) in p0.effects[g].samples.iter().zip(&p1.effects[g].samples).enumerate() {
            let psi = draws[k * stride][col];
            assert!((x1 - x0 - delta * psi).abs() < 1e-9 * (1.0 + psi.abs() * 50.0));
        }
    }
}

#[tokio::test]
async fn repeated_requests_are_identical() {
    let (app, _) = app();
    let body = json!({"covariates": [33.0, 0.0]});
    let (_, a) = call(&app, "POST", "/profile", Some(body.clone())).await;
    let (_, b) = call(&app, "POST", "/profile", Some(body)).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn invalid_profiles_are_422() {
    let (app, _) = app();
    let bad = [
        json!({"covariates": [1.0]}),
        json!({"covariates": {"age": 1.0}}),
        json!({"covariates": {"age": 1.0, "female": 0.0, "bmi": 3.0}}),
        json!({"covariates": [30.0, 0.5]}),
        json!({"x": [1.0, 0.0]}),
        json!("nonsense"),
    ];
    for b in bad {
        assert_eq!(call(&app, "POST", "/profile", Some(b.clone())).await.0, StatusCode::UNPROCESSABLE_ENTITY, "{b}");
    }
    let req = Request::builder().method("POST").uri("/profile").body(Body::from("{not json")).unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn contrast_identities() {
    let (app, _) = app();
    let (_, body) = call(&app, "GET", "/summary", None).await;
    let summary: SummaryAnswer = parse(&body);

    let (s, body) = call(&app, "POST", "/contrast", Some(json!({"g": "B", "g_prime": "B", "q": 1}))).await;
    assert_eq!(s, StatusCode::OK);
    let c: ContrastAnswer = parse(&body);
    assert_eq!((c.mean, c.lower, c.upper), (0.0, 0.0, 0.0));

    let (_, body) = call(&app, "POST", "/contrast", Some(json!({"g": "C", "g_prime": "A", "q": "age"}))).await;
    let c: ContrastAnswer = parse(&body);
    assert_eq!(c.q, 1);
    approx::assert_relative_eq!(c.mean, summary.psi[4].mean, epsilon = 1e-12);
    approx::assert_relative_eq!(c.lower, summary.psi[4].lower, epsilon = 1e-12);

    // additivity around the cycle: (C−B) + (B−A) = C−A
    let get = |g: &'static str, gp: &'static str| {
        let app = app.clone();
        async move {
            let (_, b) = call(&app, "POST", "/contrast", Some(json!({"g": g, "g_prime": gp}))).await;
            parse::<ContrastAnswer>(&b).mean
        }
    };
    let cb = get("C", "B").await;
    let ba = get("B", "A").await;
    let ca = get("C", "A").await;
    approx::assert_relative_eq!(cb + ba, ca, epsilon = 1e-10);
}

#[tokio::test]
async fn unknown_contrast_inputs_are_422() {
    let (app, _) = app();
    for b in [
        json!({"g": "XYZ", "g_prime": "A"}),
        json!({"g": "B", "g_prime": "A", "q": 7}),
        json!({"g": "B", "g_prime": "A", "q": "bmi"}),
        json!({"g": "B"}),
    ] {
        assert_eq!(call(&app, "POST", "/contrast", Some(b.clone())).await.0, StatusCode::UNPROCESSABLE_ENTITY, "{b}");
    }
}

#[tokio::test]
async fn swapping_the_model_is_atomic() {
    let state = AppState::empty();
    let app = router(state.clone());
    assert_eq!(call(&app, "GET", "/model", None).await.0, StatusCode::SERVICE_UNAVAILABLE);
    state.replace(Snapshot::new(fixture(Effects::Random)).unwrap());
    let (s, body) = call(&app, "GET", "/summary", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(parse::<SummaryAnswer>(&body).tau.is_some());
    state.replace(Snapshot::new(fixture(Effects::Common)).unwrap());
    let (_, body) = call(&app, "GET", "/summary", None).await;
    assert!(parse::<SummaryAnswer>(&body).tau.is_none());
}

#[tokio::test]
async fn cors_headers_are_set() {
    let (app, _) = app();
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/profile")
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert!(resp.headers().contains_key("access-control-allow-origin"));
}

#[test]
fn artifacts_without_draws_cannot_be_served() {
    let mut a = fixture(Effects::Common);
    a.psi_draws = None;
    assert!(Snapshot::new(a).is_err());
}
