//! Simulation laboratory: data-generating mechanisms on a small treatment
//! network, scenario runs through both stages, and performance scoring.
//!
//! The default network has four two-arm studies, two comparing `B` with
//! `A` and two comparing `C` with `A`. Each study draws its covariates from
//! `N(μ_i, 1)`. The one-modifier presets use `μ_i = 1` everywhere, so that an
//! omitted `x1²` biases unweighted regression in the same direction in every
//! study; the ten-modifier preset alternates `μ_i ∈ {0, 1}` so that studies
//! sharing a comparison differ in the correlation structure of their blip
//! estimates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbdwols::{run_bbdwols, run_qlearning, BbConfig, BlipPosterior};
use crate::data::{CovariateSpec, FormulaRoles, Record, StudyDataset};
use crate::error::{Error, Result};
use crate::linalg::mvn_from_lower;
use crate::netmap::TreatmentNetwork;
use crate::nma::{fit_nma, sigma_i, CovarianceMode, Effects, NmaConfig};
use crate::rng::{derive_seed, stream};
use crate::scalar::logistic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DgmLetter {
    A,
    B,
    C,
}

/// Data-generating mechanism.
///
/// Outcomes follow `Y = ref(x) + Σ_k 1[arm = k] δ_{ik}ᵀ(1, x_1..x_Q) + ε`
/// with `ref(x) = β_0 + Σ_j β_j x_j + β_sq x_1²`. Arm `k ≥ 1` is assigned by
/// a multinomial logit with linear predictor `α_0 + α_1 x_1 + α_2 x_2`
/// (shared by every non-reference arm), and the outcome is missing with
/// probability `logistic(γ_0 + γ_1 x_1 + γ_arm · arm)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgmSpec {
    pub name: String,
    pub letter: Option<DgmLetter>,
    pub treatments: Vec<String>,
    /// Arms of each study, study reference first.
    pub studies: Vec<Vec<String>>,
    pub n_per_study: usize,
    /// Number of covariates `x_1..x_K`.
    pub n_covariates: usize,
    /// Number of effect modifiers `Q` (the first `Q` covariates).
    pub q: usize,
    pub tau_true: f64,
    /// True ψ, layout `(ψ_{21,0..Q}, ψ_{31,0..Q}, …)`.
    pub psi: Vec<f64>,
    /// Covariate mean per study.
    pub study_means: Vec<f64>,
    pub beta_intercept: f64,
    /// Linear reference coefficients, one per covariate.
    pub beta_linear: Vec<f64>,
    pub beta_sq: f64,
    /// `(α_0, α_1, α_2)`.
    pub treatment_coefs: [f64; 3],
    /// `(γ_0, γ_1, γ_arm)`; `γ_0 = −∞` switches missingness off.
    pub missingness_coefs: [f64; 3],
    pub noise_sd: f64,
}

impl Default for DgmSpec {
    fn default() -> Self {
        Self::dgm_b()
    }
}

fn labels(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl DgmSpec {
    fn base(letter: DgmLetter, n_covariates: usize, q: usize, tau: f64) -> Self {
        let mut psi = Vec::new();
        // B − A and C − A: main effect, then interactions
        for (main, inter) in [(3.0, 2.0), (2.0, -2.0)] {
            psi.push(main);
            for j in 0..q {
                psi.push(if j == 0 { inter } else { 0.5 * inter * if j % 2 == 0 { 1.0 } else { -1.0 } });
            }
        }
        let mut beta_linear = vec![1.0, 1.0];
        beta_linear.extend((2..n_covariates).map(|j| if j % 2 == 0 { 0.5 } else { -0.5 }));
        Self {
            name: format!("dgm_{letter:?}").to_lowercase(),
            letter: Some(letter),
            treatments: labels(&["A", "B", "C"]),
            studies: vec![labels(&["A", "B"]), labels(&["A", "B"]), labels(&["A", "C"]), labels(&["A", "C"])],
            n_per_study: 500,
            n_covariates,
            q,
            tau_true: tau,
            psi,
            study_means: if q > 1 { vec![0.0, 1.0, 0.0, 1.0] } else { vec![1.0; 4] },
            beta_intercept: 0.0,
            beta_linear,
            beta_sq: 0.4,
            treatment_coefs: [-0.3, 0.3, 0.0],
            missingness_coefs: [-2.0, 0.3, 0.3],
            noise_sd: 1.0,
        }
    }

    /// Heterogeneous study blips (τ = 0.3), one effect modifier.
    pub fn dgm_a() -> Self {
        Self::base(DgmLetter::A, 2, 1, 0.3)
    }

    /// Homogeneous study blips, one effect modifier.
    pub fn dgm_b() -> Self {
        Self::base(DgmLetter::B, 2, 1, 0.0)
    }

    /// Homogeneous study blips, ten effect modifiers.
    pub fn dgm_c() -> Self {
        Self::base(DgmLetter::C, 10, 10, 0.0)
    }

    pub fn by_letter(letter: DgmLetter) -> Self {
        match letter {
            DgmLetter::A => Self::dgm_a(),
            DgmLetter::B => Self::dgm_b(),
            DgmLetter::C => Self::dgm_c(),
        }
    }

    pub fn covariate_names(&self) -> Vec<String> {
        (1..=self.n_covariates).map(|j| format!("x{j}")).collect()
    }

    pub fn network(&self) -> Result<TreatmentNetwork> {
        let studies: Vec<(String, Vec<String>)> =
            self.studies.iter().enumerate().map(|(i, arms)| (format!("study{}", i + 1), arms.clone())).collect();
        TreatmentNetwork::from_labels(&self.treatments, &studies, Some(&self.treatments[0]), self.q)
    }

    pub fn validate(&self) -> Result<()> {
        let net = self.network()?;
        if self.treatments[0] != net.treatments[0] {
            return Err(Error::Config("the first listed treatment must be the reference".into()));
        }
        if self.n_covariates < 2 || self.q < 1 || self.q > self.n_covariates {
            return Err(Error::Config("need at least 2 covariates and 1 ≤ Q ≤ K".into()));
        }
        if self.psi.len() != net.psi_dim() {
            return Err(Error::Config(format!("psi has {} entries, expected {}", self.psi.len(), net.psi_dim())));
        }
        if self.beta_linear.len() != self.n_covariates {
            return Err(Error::Config("beta_linear needs one entry per covariate".into()));
        }
        if self.study_means.len() != self.studies.len() {
            return Err(Error::Config("study_means needs one entry per study".into()));
        }
        if self.n_per_study < 10 {
            return Err(Error::Config("n_per_study must be at least 10".into()));
        }
        if !(self.tau_true >= 0.0) || !(self.noise_sd > 0.0) {
            return Err(Error::Config("tau_true must be ≥ 0 and noise_sd > 0".into()));
        }
        match self.letter {
            Some(DgmLetter::B) | Some(DgmLetter::C) if self.tau_true != 0.0 => {
                Err(Error::Config("DGMs B and C have no heterogeneity (tau_true = 0)".into()))
            }
            Some(DgmLetter::C) if self.q != 10 => Err(Error::Config("DGM C has ten effect modifiers".into())),
            Some(DgmLetter::A) | Some(DgmLetter::B) if self.q != 1 => {
                Err(Error::Config("DGMs A and B have one effect modifier".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Which outcome and weight models the analysis uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct AnalysisSpec {
    /// Leave `x1²` out of the reference model.
    pub omit_x1_squared: bool,
    /// Leave `x1` out of the treatment and missingness models.
    pub misspecify_weights: bool,
}

/// Formula roles used to analyse data from `dgm`.
pub fn analysis_roles(dgm: &DgmSpec, analysis: AnalysisSpec) -> FormulaRoles {
    let names = dgm.covariate_names();
    let mut reference: Vec<String> = names.clone();
    if !analysis.omit_x1_squared {
        reference.push("x1^2".into());
    }
    let blip: Vec<String> = names[..dgm.q].to_vec();
    let (treatment, missingness): (Vec<String>, Vec<String>) = if analysis.misspecify_weights {
        (vec!["x2".into()], vec!["arm".into()])
    } else {
        (vec!["x1".into(), "x2".into()], vec!["x1".into(), "arm".into()])
    };
    let r: Vec<&str> = reference.iter().map(String::as_str).collect();
    let b: Vec<&str> = blip.iter().map(String::as_str).collect();
    let t: Vec<&str> = treatment.iter().map(String::as_str).collect();
    let m: Vec<&str> = missingness.iter().map(String::as_str).collect();
    FormulaRoles::parse(&r, &b, &t, &m).expect("analysis roles are well formed")
}

/// One simulated network.
#[derive(Debug, Clone)]
pub struct SimulatedNetwork {
    pub network: TreatmentNetwork,
    /// Datasets carrying the correctly specified roles.
    pub datasets: Vec<StudyDataset>,
    pub psi_true: Vec<f64>,
    /// True study blips `δ_i`.
    pub delta_true: Vec<DVector<f64>>,
}

/// Draws every study of `spec` from the stream derived from `rep_seed`.
pub fn simulate_network(spec: &DgmSpec, rep_seed: u64) -> Result<SimulatedNetwork> {
    spec.validate()?;
    let net = spec.network()?;
    let psi = DVector::from_vec(spec.psi.clone());
    let roles = analysis_roles(spec, AnalysisSpec::default());
    let covariates: Vec<CovariateSpec> = spec.covariate_names().into_iter().map(CovariateSpec::continuous).collect();
    let mut datasets = Vec::with_capacity(net.studies.len());
    let mut delta_true = Vec::with_capacity(net.studies.len());
    for (i, arms) in net.studies.iter().enumerate() {
        let mut rng = stream(rep_seed, &[i as u64]);
        let v = net.v_matrix::<f64>(i)?;
        let centre = &v * &psi;
        let d = centre.len();
        let delta = if spec.tau_true > 0.0 {
            let chol = sigma_i(spec.tau_true, d).cholesky().expect("Σ_i is positive definite for τ > 0");
            mvn_from_lower(&mut rng, &centre, &chol.l())
        } else {
            centre
        };
        let n_arms = arms.arms.len();
        let w = spec.q + 1;
        let mut rows = Vec::with_capacity(spec.n_per_study);
        for j in 0..spec.n_per_study {
            let x: Vec<f64> =
                (0..spec.n_covariates).map(|_| spec.study_means[i] + rng.sample::<f64, _>(StandardNormal)).collect();
            let [a0, a1, a2] = spec.treatment_coefs;
            let eta = a0 + a1 * x[0] + a2 * x[1];
            // multinomial logit, shared predictor for non-reference arms
            let denom = 1.0 + (n_arms - 1) as f64 * eta.exp();
            let u: f64 = rng.random();
            let arm = if u < 1.0 / denom { 0 } else { 1 + (((u - 1.0 / denom) / (1.0 - 1.0 / denom)) * (n_arms - 1) as f64) as usize };
            let arm = arm.min(n_arms - 1);
            let mut mean = spec.beta_intercept + spec.beta_sq * x[0] * x[0];
            for (b, xv) in spec.beta_linear.iter().zip(&x) {
                mean += b * xv;
            }
            if arm > 0 {
                let block = delta.rows((arm - 1) * w, w);
                mean += block[0];
                for k in 0..spec.q {
                    mean += block[k + 1] * x[k];
                }
            }
            let y = mean + spec.noise_sd * rng.sample::<f64, _>(StandardNormal);
            let [g0, g1, g2] = spec.missingness_coefs;
            let p_miss = logistic(g0 + g1 * x[0] + g2 * arm as f64);
            let missing = rng.random::<f64>() < p_miss;
            rows.push(Record {
                subject_id: format!("p{j}"),
                outcome: (!missing).then_some(y),
                arm,
                covariates: x.into_iter().map(Some).collect(),
            });
        }
        datasets.push(StudyDataset {
            study_id: arms.study_id.clone(),
            covariates: covariates.clone(),
            rows,
            arm_treatments: arms.arms.iter().map(|&a| net.treatments[a].clone()).collect(),
            roles: roles.clone(),
        });
        delta_true.push(delta);
    }
    Ok(SimulatedNetwork { network: net, datasets, psi_true: spec.psi.clone(), delta_true })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StageOneMethod {
    #[default]
    Bbdwols,
    Qlearning,
}

/// Stage-two settings compared within one scenario; all variants reuse the
/// same stage-one posteriors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmaVariant {
    pub label: String,
    pub effects: Effects,
    pub covariance_mode: CovarianceMode,
    pub prior_tau_scale: f64,
}

/// One row of a scenario grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub name: String,
    pub dgm: DgmSpec,
    pub method: StageOneMethod,
    pub analysis: AnalysisSpec,
    pub reps: usize,
    pub seed: u64,
    /// Stage-one settings; `seed` is overridden per study and replication.
    pub stage_one: BbConfig,
    /// Stage-two settings; `effects`, `covariance_mode`, `prior_tau_scale`
    /// and `seed` are overridden by each variant and replication.
    pub nma: NmaConfig,
    pub variants: Vec<NmaVariant>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            dgm: DgmSpec::dgm_b(),
            method: StageOneMethod::Bbdwols,
            analysis: AnalysisSpec::default(),
            reps: 200,
            seed: 1,
            stage_one: BbConfig::default(),
            nma: NmaConfig::default(),
            variants: vec![NmaVariant {
                label: "random_full".into(),
                effects: Effects::Random,
                covariance_mode: CovarianceMode::Full,
                prior_tau_scale: 0.51,
            }],
        }
    }
}

/// What a replication contributes to scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepEstimate {
    pub psi_mean: Vec<f64>,
    pub psi_lower: Vec<f64>,
    pub psi_upper: Vec<f64>,
    pub tau_mean: Option<f64>,
    pub tau_lower: Option<f64>,
    pub tau_upper: Option<f64>,
    pub converged: bool,
}

/// Performance of one parameter across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPerf {
    pub name: String,
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub bias_mcse: f64,
    /// `100 · bias / |truth|`; `None` when the truth is zero.
    pub pct_bias: Option<f64>,
    pub pct_bias_mcse: Option<f64>,
    pub emp_se: f64,
    pub emp_se_mcse: f64,
    pub coverage: f64,
    pub coverage_mcse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub scenario: String,
    pub variant: String,
    pub n_reps: usize,
    pub n_converged: usize,
    pub n_nonconverged: usize,
    /// Replications whose fit raised an error.
    pub n_failed: usize,
    pub params: Vec<ParamPerf>,
    pub tau: Option<ParamPerf>,
}

fn perf(name: &str, truth: f64, est: &[f64], covered: &[bool]) -> ParamPerf {
    let n = est.len() as f64;
    let mean = est.iter().sum::<f64>() / n;
    let emp_se = if est.len() > 1 { (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    let bias = mean - truth;
    let bias_mcse = emp_se / n.sqrt();
    let coverage = covered.iter().filter(|&&c| c).count() as f64 / n;
    let (pct_bias, pct_bias_mcse) = if truth != 0.0 {
        (Some(100.0 * bias / truth.abs()), Some(100.0 * bias_mcse / truth.abs()))
    } else {
        (None, None)
    };
    ParamPerf {
        name: name.to_string(),
        truth,
        mean_estimate: mean,
        bias,
        bias_mcse,
        pct_bias,
        pct_bias_mcse,
        emp_se,
        emp_se_mcse: if n > 1.0 { emp_se / (2.0 * (n - 1.0)).sqrt() } else { 0.0 },
        coverage,
        coverage_mcse: (coverage * (1.0 - coverage) / n).sqrt(),
    }
}

/// Scores converged replications against the truth.
pub fn score(
    scenario: &str,
    variant: &str,
    names: &[String],
    estimates: &[RepEstimate],
    psi_true: &[f64],
    tau_true: Option<f64>,
    n_failed: usize,
) -> Result<PerfReport> {
    let ok: Vec<&RepEstimate> = estimates.iter().filter(|e| e.converged).collect();
    if ok.is_empty() {
        return Err(Error::Scoring(format!("{scenario}/{variant}: no converged replications")));
    }
    if names.len() != psi_true.len() || ok.iter().any(|e| e.psi_mean.len() != psi_true.len()) {
        return Err(Error::Scoring("estimate and truth dimensions differ".into()));
    }
    let params = (0..psi_true.len())
        .map(|k| {
            let est: Vec<f64> = ok.iter().map(|e| e.psi_mean[k]).collect();
            let cov: Vec<bool> = ok.iter().map(|e| e.psi_lower[k] <= psi_true[k] && psi_true[k] <= e.psi_upper[k]).collect();
            perf(&names[k], psi_true[k], &est, &cov)
        })
        .collect();
    let tau = match tau_true {
        Some(t) if ok.iter().all(|e| e.tau_mean.is_some()) => {
            let est: Vec<f64> = ok.iter().map(|e| e.tau_mean.unwrap()).collect();
            let cov: Vec<bool> = ok
                .iter()
                .map(|e| e.tau_lower.unwrap_or(f64::NAN) <= t && t <= e.tau_upper.unwrap_or(f64::NAN))
                .collect();
            Some(perf("tau", t, &est, &cov))
        }
        _ => None,
    };
    Ok(PerfReport {
        scenario: scenario.to_string(),
        variant: variant.to_string(),
        n_reps: estimates.len() + n_failed,
        n_converged: ok.len(),
        n_nonconverged: estimates.len() - ok.len(),
        n_failed,
        params,
        tau,
    })
}

impl PerfReport {
    pub const CSV_HEADER: [&'static str; 16] = [
        "scenario",
        "variant",
        "parameter",
        "truth",
        "mean_estimate",
        "bias",
        "bias_mcse",
        "pct_bias",
        "pct_bias_mcse",
        "emp_se",
        "emp_se_mcse",
        "coverage",
        "coverage_mcse",
        "n_converged",
        "n_nonconverged",
        "n_failed",
    ];

    /// One CSV row per parameter (τ last), with a header.
    pub fn write_csv<W: std::io::Write>(reports: &[PerfReport], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in reports {
            for p in r.params.iter().chain(r.tau.iter()) {
                w.write_record([
                    r.scenario.clone(),
                    r.variant.clone(),
                    p.name.clone(),
                    p.truth.to_string(),
                    p.mean_estimate.to_string(),
                    p.bias.to_string(),
                    p.bias_mcse.to_string(),
                    opt(p.pct_bias),
                    opt(p.pct_bias_mcse),
                    p.emp_se.to_string(),
                    p.emp_se_mcse.to_string(),
                    p.coverage.to_string(),
                    p.coverage_mcse.to_string(),
                    r.n_converged.to_string(),
                    r.n_nonconverged.to_string(),
                    r.n_failed.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn param(&self, name: &str) -> Option<&ParamPerf> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// Stage one for every study of a simulated network.
pub fn stage_one(sim: &SimulatedNetwork, scenario: &Scenario, rep_seed: u64) -> Result<Vec<BlipPosterior<f64>>> {
    let roles = analysis_roles(&scenario.dgm, scenario.analysis);
    sim.datasets
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let mut d = d.clone();
            d.roles = roles.clone();
            let cfg = BbConfig { seed: derive_seed(rep_seed, &[1, i as u64]), ..scenario.stage_one.clone() };
            match scenario.method {
                StageOneMethod::Bbdwols => run_bbdwols(&d, &cfg),
                StageOneMethod::Qlearning => run_qlearning(&d, true, &cfg),
            }
        })
        .collect()
}

fn estimate_of(post: &crate::nma::NmaPosterior<f64>) -> RepEstimate {
    let s = post.psi_summaries();
    let tau = post.tau_summary();
    RepEstimate {
        psi_mean: s.iter().map(|p| p.mean).collect(),
        psi_lower: s.iter().map(|p| p.lower).collect(),
        psi_upper: s.iter().map(|p| p.upper).collect(),
        tau_mean: tau.as_ref().map(|t| t.mean),
        tau_lower: tau.as_ref().map(|t| t.lower),
        tau_upper: tau.as_ref().map(|t| t.upper),
        converged: post.converged,
    }
}

/// Runs one replication and returns one estimate per variant.
pub fn run_replication(scenario: &Scenario, rep: usize) -> Result<Vec<RepEstimate>> {
    let rep_seed = derive_seed(scenario.seed, &[rep as u64]);
    let sim = simulate_network(&scenario.dgm, derive_seed(rep_seed, &[0]))?;
    let posts = stage_one(&sim, scenario, rep_seed)?;
    scenario
        .variants
        .iter()
        .map(|v| {
            let cfg = NmaConfig {
                effects: v.effects,
                covariance_mode: v.covariance_mode,
                prior_tau_scale: v.prior_tau_scale,
                seed: derive_seed(rep_seed, &[2]),
                ..scenario.nma.clone()
            };
            fit_nma(&posts, &sim.network, &cfg).map(|p| estimate_of(&p))
        })
        .collect()
}

/// Runs all replications of `scenario` and scores every variant.
///
/// Replications run in parallel; each derives its seed from
/// `(scenario.seed, rep)`, so results do not depend on scheduling.
pub fn run_scenario(scenario: &Scenario) -> Result<Vec<PerfReport>> {
    if scenario.variants.is_empty() {
        return Err(Error::Config("scenario has no stage-two variants".into()));
    }
    scenario.dgm.validate()?;
    let results: Vec<Result<Vec<RepEstimate>>> =
        (0..scenario.reps).into_par_iter().map(|rep| run_replication(scenario, rep)).collect();
    let mut failed = 0;
    let mut per_variant: Vec<Vec<RepEstimate>> = vec![Vec::new(); scenario.variants.len()];
    for r in results {
        match r {
            Ok(ests) => {
                for (slot, e) in per_variant.iter_mut().zip(ests) {
                    slot.push(e);
                }
            }
            Err(e) => {
                log::warn!("{}: replication failed: {e}", scenario.name);
                failed += 1;
            }
        }
    }
    let net = scenario.dgm.network()?;
    let names = net.psi_names(&scenario.dgm.covariate_names()[..scenario.dgm.q]);
    scenario
        .variants
        .iter()
        .zip(&per_variant)
        .map(|(v, ests)| {
            let tau = (v.effects == Effects::Random).then_some(scenario.dgm.tau_true);
            score(&scenario.name, &v.label, &names, ests, &scenario.dgm.psi, tau, failed)
        })
        .collect()
}

/// True study blips stacked study by study (used by diagnostics and tests).
pub fn true_blip_matrix(sim: &SimulatedNetwork) -> DMatrix<f64> {
    let d = sim.delta_true.iter().map(|v| v.len()).max().unwrap_or(0);
    DMatrix::from_fn(sim.delta_true.len(), d, |r, c| sim.delta_true[r].get(c).copied().unwrap_or(f64::NAN))
}
