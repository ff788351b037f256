//! Stage two: pooling study blip posteriors under the consistency-
//! constrained hierarchical model
//!
//! ```text
//! δ̂_i ~ MVN(δ_i, Σ̂_i),   δ_i ~ MVN(V_i ψ, Σ_i(τ)),   ψ ~ N(0, s² I),   τ ~ half-normal(σ_τ)
//! ```
//!
//! Common effects replace the second line by `δ_i = V_i ψ`, which gives a
//! conjugate Gaussian posterior that is sampled exactly. Random effects are
//! sampled by a collapsed Gibbs scheme: τ is updated by slice sampling on
//! its marginal posterior (ψ and all δ_i integrated out), then ψ | τ and
//! δ_i | ψ, τ are drawn exactly.

pub mod diagnostics;
pub mod slice;

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbdwols::BlipPosterior;
use crate::design::ModifierInfo;
use crate::error::{Error, Result};
use crate::linalg::{self, log_det, mvn_from_precision, robust_cholesky, symmetrize};
use crate::netmap::TreatmentNetwork;
use crate::rng::stream;
use crate::Scalar;

pub use diagnostics::{diagnose, Diagnostic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Effects {
    Common,
    #[default]
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    #[default]
    Full,
    /// Zero covariance between coefficients of different covariates.
    Sparse,
}

impl std::str::FromStr for Effects {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "common" => Ok(Self::Common),
            "random" => Ok(Self::Random),
            other => Err(Error::Config(format!("unknown effects `{other}` (common|random)"))),
        }
    }
}

impl std::str::FromStr for CovarianceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "sparse" => Ok(Self::Sparse),
            other => Err(Error::Config(format!("unknown covariance mode `{other}` (full|sparse)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmaConfig {
    pub effects: Effects,
    pub covariance_mode: CovarianceMode,
    /// Prior SD of every ψ coordinate.
    pub prior_psi_sd: f64,
    /// Scale σ_τ of the half-normal prior on τ.
    pub prior_tau_scale: f64,
    pub chains: usize,
    /// Iterations per chain, warmup included.
    pub iters: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Keep per-study δ_i draws (random effects only).
    pub keep_study_draws: bool,
    pub rhat_max: f64,
    pub ess_min: f64,
}

impl Default for NmaConfig {
    fn default() -> Self {
        Self {
            effects: Effects::Random,
            covariance_mode: CovarianceMode::Full,
            prior_psi_sd: 10.0,
            prior_tau_scale: 0.51,
            chains: 4,
            iters: 2000,
            warmup: 1000,
            seed: 1,
            keep_study_draws: false,
            rhat_max: 1.01,
            ess_min: 400.0,
        }
    }
}

impl NmaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.prior_psi_sd > 0.0 && self.prior_psi_sd.is_finite()) {
            return Err(Error::Config("prior_psi_sd must be positive".into()));
        }
        if !(self.prior_tau_scale > 0.0 && self.prior_tau_scale.is_finite()) {
            return Err(Error::Config("prior_tau_scale must be positive".into()));
        }
        if self.chains < 2 {
            return Err(Error::Config("at least 2 chains are needed for diagnostics".into()));
        }
        if self.warmup >= self.iters {
            return Err(Error::Config(format!("warmup {} must be below iters {}", self.warmup, self.iters)));
        }
        if self.iters - self.warmup < 4 {
            return Err(Error::Config("at least 4 retained draws per chain are needed".into()));
        }
        Ok(())
    }

    /// Retained draws per chain.
    pub fn kept(&self) -> usize {
        self.iters - self.warmup
    }
}

/// Point estimate and covariance of one study's blips, tagged with its arms.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySummary<T: Scalar> {
    pub study_id: String,
    pub arm_treatments: Vec<String>,
    pub point: DVector<T>,
    pub cov: DMatrix<T>,
}

impl<T: Scalar> From<&BlipPosterior<T>> for StudySummary<T> {
    fn from(p: &BlipPosterior<T>) -> Self {
        Self {
            study_id: p.study_id.clone(),
            arm_treatments: p.arm_treatments.clone(),
            point: p.point.clone(),
            cov: p.cov.clone(),
        }
    }
}

/// Builds the treatment network spanned by a set of study posteriors.
///
/// Without an explicit `registry`, treatments are registered in order of
/// first appearance. Without an explicit `reference`, the treatment present
/// in the most studies is used.
pub fn network_from_posteriors<T: Scalar>(
    posteriors: &[BlipPosterior<T>],
    registry: Option<&[String]>,
    reference: Option<&str>,
) -> Result<TreatmentNetwork> {
    let first = posteriors.first().ok_or_else(|| Error::Mapping("no study posteriors".into()))?;
    let q = first.q();
    let studies: Vec<(String, Vec<String>)> =
        posteriors.iter().map(|p| (p.study_id.clone(), p.arm_treatments.clone())).collect();
    let registry: Vec<String> = match registry {
        Some(r) => r.to_vec(),
        None => {
            let mut seen = Vec::new();
            for (_, arms) in &studies {
                for a in arms {
                    if !seen.contains(a) {
                        seen.push(a.clone());
                    }
                }
            }
            seen
        }
    };
    TreatmentNetwork::from_labels(&registry, &studies, reference, q)
}

/// Zeroes covariances between coefficients of different covariates
/// (index `q ≠ q′` within the `(Q+1)`-blocks), keeping same-covariate
/// covariances across arms, then clips eigenvalues at `1e−10` if that broke
/// positive semidefiniteness.
pub fn sparsify_cov<T: Scalar>(sigma: &DMatrix<T>, q: usize, _arms_minus_one: usize) -> DMatrix<T> {
    let w = q + 1;
    let mut out = DMatrix::from_fn(sigma.nrows(), sigma.ncols(), |r, c| if r % w == c % w { sigma[(r, c)] } else { T::zero() });
    symmetrize(&mut out);
    if linalg::min_eigenvalue(&out) < T::zero() {
        out = linalg::clip_eigenvalues(&out, T::lit(1e-10));
    }
    out
}

/// Heterogeneity correlation pattern: 1 on the diagonal, ½ elsewhere, so
/// that `Σ_i(τ) = τ² R`.
pub fn heterogeneity_pattern<T: Scalar>(d: usize) -> DMatrix<T> {
    DMatrix::from_fn(d, d, |r, c| if r == c { T::one() } else { T::lit(0.5) })
}

/// `Σ_i(τ)`: τ² on the diagonal and τ²/2 off it.
pub fn sigma_i<T: Scalar>(tau: T, d: usize) -> DMatrix<T> {
    heterogeneity_pattern::<T>(d) * (tau * tau)
}

/// Validated inputs of one study, ready for the likelihood.
struct Prepared<T: Scalar> {
    study_id: String,
    v: DMatrix<T>,
    delta_hat: DVector<T>,
    sigma_hat: DMatrix<T>,
    pattern: DMatrix<T>,
}

fn prepare<T: Scalar>(
    studies: &[StudySummary<T>],
    net: &TreatmentNetwork,
    mode: CovarianceMode,
) -> Result<(Vec<Prepared<T>>, Vec<String>)> {
    net.check_connected()?;
    let by_id: BTreeMap<&str, &StudySummary<T>> = studies.iter().map(|s| (s.study_id.as_str(), s)).collect();
    if by_id.len() != studies.len() {
        return Err(Error::Mapping("duplicate study id among posteriors".into()));
    }
    if studies.len() != net.studies.len() {
        return Err(Error::Mapping(format!(
            "{} posteriors supplied for a network of {} studies",
            studies.len(),
            net.studies.len()
        )));
    }
    let mut out = Vec::with_capacity(studies.len());
    let mut repaired = Vec::new();
    for (i, arms) in net.studies.iter().enumerate() {
        let s = by_id
            .get(arms.study_id.as_str())
            .ok_or_else(|| Error::Mapping(format!("no posterior for study {}", arms.study_id)))?;
        let labels: Vec<&str> = arms.arms.iter().map(|&a| net.treatments[a].as_str()).collect();
        if s.arm_treatments.iter().map(String::as_str).ne(labels.iter().copied()) {
            return Err(Error::Mapping(format!(
                "study {}: posterior arms {:?} differ from network arms {:?}",
                s.study_id, s.arm_treatments, labels
            )));
        }
        let v = net.v_matrix::<T>(i)?;
        let d = v.nrows();
        if s.point.len() != d || s.cov.shape() != (d, d) {
            return Err(Error::Mapping(format!(
                "study {}: blip dimension {} does not match (Q+1)(G_i−1) = {d}",
                s.study_id,
                s.point.len()
            )));
        }
        if s.point.iter().chain(s.cov.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("study {}: non-finite blip summary", s.study_id)));
        }
        let mut sigma_hat = match mode {
            CovarianceMode::Full => s.cov.clone(),
            CovarianceMode::Sparse => sparsify_cov(&s.cov, net.q, arms.arms.len() - 1),
        };
        let (chol, was_repaired) = robust_cholesky(&sigma_hat)?;
        if was_repaired {
            sigma_hat = chol.l() * chol.l().transpose();
            repaired.push(s.study_id.clone());
        }
        out.push(Prepared {
            study_id: s.study_id.clone(),
            v,
            delta_hat: s.point.clone(),
            sigma_hat,
            pattern: heterogeneity_pattern(d),
        });
    }
    Ok((out, repaired))
}

/// Accumulated Gaussian pieces of ψ's (conditional) posterior.
struct PsiConditional<T: Scalar> {
    chol_p: Cholesky<T, Dyn>,
    b: DVector<T>,
    /// Log marginal density of all δ̂_i given τ, up to a constant.
    log_marginal: f64,
    /// Cholesky factors of `C_i = Σ̂_i + Σ_i(τ)`.
    chol_c: Vec<Cholesky<T, Dyn>>,
}

fn psi_conditional<T: Scalar>(studies: &[Prepared<T>], tau: T, prior_sd: f64, p: usize) -> Result<PsiConditional<T>> {
    let mut prec = DMatrix::<T>::zeros(p, p);
    let mut b = DVector::<T>::zeros(p);
    let mut log_marginal = 0.0;
    let mut chol_c = Vec::with_capacity(studies.len());
    let tau2 = tau * tau;
    for s in studies {
        let c = &s.sigma_hat + &s.pattern * tau2;
        let chol = Cholesky::new(c.clone())
            .or_else(|| robust_cholesky(&c).ok().map(|(ch, _)| ch))
            .ok_or_else(|| Error::Numerical(format!("study {}: marginal covariance not positive definite", s.study_id)))?;
        let cinv_v = chol.solve(&s.v);
        let cinv_d = chol.solve(&s.delta_hat);
        prec += s.v.transpose() * &cinv_v;
        b += s.v.transpose() * &cinv_d;
        log_marginal -= 0.5 * (log_det(&chol).as_f64() + s.delta_hat.dot(&cinv_d).as_f64());
        chol_c.push(chol);
    }
    let prior_prec = T::lit(1.0 / (prior_sd * prior_sd));
    for k in 0..p {
        prec[(k, k)] += prior_prec;
    }
    symmetrize(&mut prec);
    let chol_p = Cholesky::new(prec).ok_or_else(|| Error::Numerical("ψ posterior precision not positive definite".into()))?;
    let mean = chol_p.solve(&b);
    log_marginal += -0.5 * log_det(&chol_p).as_f64() + 0.5 * b.dot(&mean).as_f64();
    Ok(PsiConditional { chol_p, b, log_marginal, chol_c })
}

/// Rejects networks whose data precision `Σ V′Σ̂⁻¹V` is rank deficient,
/// naming the ψ coordinates involved in the null space.
fn check_identifiable<T: Scalar>(studies: &[Prepared<T>], p: usize, names: &[String]) -> Result<()> {
    let mut prec = DMatrix::<f64>::zeros(p, p);
    for s in studies {
        let sh = s.sigma_hat.map(|x| x.as_f64());
        let v = s.v.map(|x| x.as_f64());
        let chol = Cholesky::new(sh).ok_or_else(|| Error::Numerical(format!("study {}: Σ̂ not positive definite", s.study_id)))?;
        prec += v.transpose() * chol.solve(&v);
    }
    symmetrize(&mut prec);
    let eig = SymmetricEigen::new(prec);
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let mut bad = Vec::new();
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev <= 1e-12 * max.max(f64::MIN_POSITIVE) {
            for (j, &c) in eig.eigenvectors.column(k).iter().enumerate() {
                if c.abs() > 1e-6 && !bad.contains(&names[j]) {
                    bad.push(names[j].clone());
                }
            }
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        bad.sort();
        Err(Error::Identifiability(format!("contrasts not estimable from the data: {}", bad.join(", "))))
    }
}

/// Per-parameter posterior summary (also the forest-plot row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    #[serde(with = "diagnostics::nonfinite")]
    pub rhat: f64,
    #[serde(with = "diagnostics::nonfinite")]
    pub ess_bulk: f64,
}

pub fn summarize(name: &str, values: &[f64], diag: Diagnostic) -> ParamSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ParamSummary {
        name: name.to_string(),
        mean,
        sd,
        median: linalg::quantile_sorted(&sorted, 0.5),
        lower: linalg::quantile_sorted(&sorted, 0.025),
        upper: linalg::quantile_sorted(&sorted, 0.975),
        rhat: diag.rhat,
        ess_bulk: diag.ess_bulk,
    }
}

/// MCMC (or exact) posterior of the meta-population blips.
#[derive(Debug, Clone, PartialEq)]
pub struct NmaPosterior<T: Scalar> {
    pub network: TreatmentNetwork,
    pub modifiers: Vec<ModifierInfo>,
    pub psi_names: Vec<String>,
    /// `S × (Q+1)(G−1)`, chain-major: rows `c·K .. (c+1)·K` belong to chain `c`.
    pub psi_draws: DMatrix<T>,
    pub chains: usize,
    /// Random effects only.
    pub tau_draws: Option<Vec<T>>,
    /// Per network study, `S × d_i` (random effects with `keep_study_draws`).
    pub delta_draws: Option<Vec<DMatrix<T>>>,
    pub psi_diagnostics: Vec<Diagnostic>,
    pub tau_diagnostic: Option<Diagnostic>,
    /// All monitored parameters meet the R-hat and ESS thresholds.
    pub converged: bool,
    /// Studies whose Σ̂ needed eigenvalue repair.
    pub repaired_studies: Vec<String>,
    pub config: NmaConfig,
}

fn by_chain(values: impl Iterator<Item = f64>, chains: usize, per_chain: usize) -> Vec<Vec<f64>> {
    let all: Vec<f64> = values.collect();
    (0..chains).map(|c| all[c * per_chain..(c + 1) * per_chain].to_vec()).collect()
}

impl<T: Scalar> NmaPosterior<T> {
    pub fn n_draws(&self) -> usize {
        self.psi_draws.nrows()
    }

    pub fn draws_per_chain(&self) -> usize {
        self.n_draws() / self.chains
    }

    pub fn psi_column(&self, k: usize) -> Vec<f64> {
        self.psi_draws.column(k).iter().map(|x| x.as_f64()).collect()
    }

    /// Summaries of every ψ coordinate, in ψ order.
    pub fn psi_summaries(&self) -> Vec<ParamSummary> {
        (0..self.psi_draws.ncols())
            .map(|k| summarize(&self.psi_names[k], &self.psi_column(k), self.psi_diagnostics[k]))
            .collect()
    }

    pub fn tau_summary(&self) -> Option<ParamSummary> {
        let tau = self.tau_draws.as_ref()?;
        let values: Vec<f64> = tau.iter().map(|x| x.as_f64()).collect();
        Some(summarize("tau", &values, self.tau_diagnostic?))
    }

    /// Per-draw contrast ψ_{gg′,q} by treatment label.
    pub fn contrast(&self, g: &str, g_prime: &str, q: usize) -> Result<DVector<T>> {
        let gi = self.network.treatment_index(g).ok_or_else(|| Error::Profile(format!("unknown treatment `{g}`")))?;
        let gj = self
            .network
            .treatment_index(g_prime)
            .ok_or_else(|| Error::Profile(format!("unknown treatment `{g_prime}`")))?;
        if q > self.network.q {
            return Err(Error::Profile(format!("covariate index {q} exceeds Q = {}", self.network.q)));
        }
        Ok(crate::netmap::consistency_contrast(&self.psi_draws, self.network.q, gi, gj, q))
    }

    /// See [`profile_effects`].
    pub fn profile(&self, x: &[T]) -> Result<ProfileDraws<T>> {
        profile_effects(&self.psi_draws, self.network.n_treatments(), self.network.q, x)
    }

    pub(crate) fn recompute_diagnostics(&mut self) {
        let k = self.draws_per_chain();
        self.psi_diagnostics =
            (0..self.psi_draws.ncols()).map(|j| diagnose(&by_chain(self.psi_column(j).into_iter(), self.chains, k))).collect();
        self.tau_diagnostic = self
            .tau_draws
            .as_ref()
            .map(|t| diagnose(&by_chain(t.iter().map(|x| x.as_f64()), self.chains, k)));
        let ok = |d: &Diagnostic| d.zero_variance || (d.rhat < self.config.rhat_max && d.ess_bulk >= self.config.ess_min);
        self.converged = self.psi_diagnostics.iter().all(ok) && self.tau_diagnostic.as_ref().is_none_or(ok);
    }
}

fn common_modifiers<T: Scalar>(posteriors: &[BlipPosterior<T>]) -> Result<Vec<ModifierInfo>> {
    let first = posteriors.first().ok_or_else(|| Error::Mapping("no study posteriors".into()))?;
    let names: Vec<&str> = first.modifiers.iter().map(|m| m.name.as_str()).collect();
    let mut merged = first.modifiers.clone();
    for p in &posteriors[1..] {
        if p.modifiers.iter().map(|m| m.name.as_str()).ne(names.iter().copied()) {
            return Err(Error::Mapping(format!(
                "study {} has effect modifiers {:?}, expected {:?}",
                p.study_id,
                p.modifiers.iter().map(|m| &m.name).collect::<Vec<_>>(),
                names
            )));
        }
        for (m, o) in merged.iter_mut().zip(&p.modifiers) {
            m.min = m.min.min(o.min);
            m.max = m.max.max(o.max);
        }
    }
    Ok(merged)
}

/// Fits common or random effects according to `cfg.effects`.
pub fn fit_nma<T: Scalar>(posteriors: &[BlipPosterior<T>], net: &TreatmentNetwork, cfg: &NmaConfig) -> Result<NmaPosterior<T>> {
    let modifiers = common_modifiers(posteriors)?;
    let studies: Vec<StudySummary<T>> = posteriors.iter().map(StudySummary::from).collect();
    fit_summaries(&studies, modifiers, net, cfg)
}

/// [`fit_nma`] on bare summaries.
pub fn fit_summaries<T: Scalar>(
    studies: &[StudySummary<T>],
    modifiers: Vec<ModifierInfo>,
    net: &TreatmentNetwork,
    cfg: &NmaConfig,
) -> Result<NmaPosterior<T>> {
    match cfg.effects {
        Effects::Common => fit_common_effects_from(studies, modifiers, net, cfg),
        Effects::Random => fit_random_effects_from(studies, modifiers, net, cfg),
    }
}

/// Exact conjugate posterior of ψ under common effects.
pub fn fit_common_effects<T: Scalar>(
    posteriors: &[BlipPosterior<T>],
    net: &TreatmentNetwork,
    cfg: &NmaConfig,
) -> Result<NmaPosterior<T>> {
    let modifiers = common_modifiers(posteriors)?;
    let studies: Vec<StudySummary<T>> = posteriors.iter().map(StudySummary::from).collect();
    fit_common_effects_from(&studies, modifiers, net, cfg)
}

/// Collapsed-Gibbs posterior of (τ, ψ, δ_i) under random effects.
pub fn fit_random_effects<T: Scalar>(
    posteriors: &[BlipPosterior<T>],
    net: &TreatmentNetwork,
    cfg: &NmaConfig,
) -> Result<NmaPosterior<T>> {
    let modifiers = common_modifiers(posteriors)?;
    let studies: Vec<StudySummary<T>> = posteriors.iter().map(StudySummary::from).collect();
    fit_random_effects_from(&studies, modifiers, net, cfg)
}

fn modifier_names(net: &TreatmentNetwork, modifiers: &[ModifierInfo]) -> Result<Vec<String>> {
    if modifiers.len() != net.q {
        return Err(Error::Mapping(format!("{} modifiers supplied for Q = {}", modifiers.len(), net.q)));
    }
    Ok(modifiers.iter().map(|m| m.name.clone()).collect())
}

/// Posterior mean and precision factor of ψ under common effects.
pub fn common_effects_gaussian<T: Scalar>(
    studies: &[StudySummary<T>],
    net: &TreatmentNetwork,
    cfg: &NmaConfig,
) -> Result<(DVector<T>, DMatrix<T>)> {
    let (prepared, _) = prepare(studies, net, cfg.covariance_mode)?;
    let p = net.psi_dim();
    check_identifiable(&prepared, p, &net.psi_names(&vec![String::new(); net.q]))?;
    let cond = psi_conditional(&prepared, T::zero(), cfg.prior_psi_sd, p)?;
    let mean = cond.chol_p.solve(&cond.b);
    let cov = cond.chol_p.inverse();
    Ok((mean, cov))
}

pub fn fit_common_effects_from<T: Scalar>(
    studies: &[StudySummary<T>],
    modifiers: Vec<ModifierInfo>,
    net: &TreatmentNetwork,
    cfg: &NmaConfig,
) -> Result<NmaPosterior<T>> {
    cfg.validate()?;
    let names = modifier_names(net, &modifiers)?;
    let psi_names = net.psi_names(&names);
    let (prepared, repaired) = prepare(studies, net, cfg.covariance_mode)?;
    let p = net.psi_dim();
    check_identifiable(&prepared, p, &psi_names)?;
    let cond = psi_conditional(&prepared, T::zero(), cfg.prior_psi_sd, p)?;
    let k = cfg.kept();
    let chains: Vec<Vec<DVector<T>>> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(cfg.seed, &[c as u64]);
            (0..k).map(|_| mvn_from_precision(&mut rng, &cond.chol_p, &cond.b)).collect()
        })
        .collect();
    let psi_draws = stack(chains.iter().flatten(), p);
    let mut post = NmaPosterior {
        network: net.clone(),
        modifiers,
        psi_names,
        psi_draws,
        chains: cfg.chains,
        tau_draws: None,
        delta_draws: None,
        psi_diagnostics: Vec::new(),
        tau_diagnostic: None,
        converged: false,
        repaired_studies: repaired,
        config: NmaConfig { effects: Effects::Common, ..cfg.clone() },
    };
    post.recompute_diagnostics();
    Ok(post)
}

fn stack<'a, T: Scalar>(rows: impl Iterator<Item = &'a DVector<T>>, p: usize) -> DMatrix<T> {
    let rows: Vec<&DVector<T>> = rows.collect();
    DMatrix::from_fn(rows.len(), p, |r, c| rows[r][c])
}

struct ChainOutput<T: Scalar> {
    psi: Vec<DVector<T>>,
    tau: Vec<T>,
    delta: Vec<Vec<DVector<T>>>,
}

fn draw_deltas<T: Scalar, R: Rng + ?Sized>(
    studies: &[Prepared<T>],
    cond: &PsiConditional<T>,
    psi: &DVector<T>,
    tau: T,
    rng: &mut R,
) -> Result<Vec<DVector<T>>> {
    let tau2 = tau * tau;
    studies
        .iter()
        .zip(&cond.chol_c)
        .map(|(s, chol)| {
            let centre = &s.v * psi;
            if tau2 == T::zero() {
                return Ok(centre);
            }
            let sig = &s.pattern * tau2;
            let resid = &s.delta_hat - &centre;
            let mean = &centre + &sig * chol.solve(&resid);
            let mut cov = &sig - &sig * chol.solve(&sig);
            symmetrize(&mut cov);
            let (lc, _) = robust_cholesky(&cov)?;
            let z = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))));
            Ok(mean + lc.l() * z)
        })
        .collect()
}

fn run_chain<T: Scalar>(studies: &[Prepared<T>], p: usize, cfg: &NmaConfig, chain: usize) -> Result<ChainOutput<T>> {
    let mut rng = stream(cfg.seed, &[chain as u64]);
    let sigma_tau = cfg.prior_tau_scale;
    let mut log_post = |t: f64| -> f64 {
        if !(t >= 0.0) || !t.is_finite() {
            return f64::NEG_INFINITY;
        }
        match psi_conditional(studies, T::lit(t), cfg.prior_psi_sd, p) {
            Ok(c) => c.log_marginal - 0.5 * (t / sigma_tau).powi(2),
            Err(_) => f64::NEG_INFINITY,
        }
    };
    // start from a prior draw
    let mut tau = (rng.sample::<f64, _>(StandardNormal) * sigma_tau).abs();
    if !log_post(tau).is_finite() {
        tau = 0.0;
    }
    let k = cfg.kept();
    let mut out = ChainOutput { psi: Vec::with_capacity(k), tau: Vec::with_capacity(k), delta: Vec::new() };
    for it in 0..cfg.iters {
        tau = slice::slice_step(tau, &mut log_post, 0.0, sigma_tau, 32, &mut rng);
        if it < cfg.warmup {
            continue;
        }
        let cond = psi_conditional(studies, T::lit(tau), cfg.prior_psi_sd, p)?;
        let psi = mvn_from_precision(&mut rng, &cond.chol_p, &cond.b);
        if cfg.keep_study_draws {
            out.delta.push(draw_deltas(studies, &cond, &psi, T::lit(tau), &mut rng)?);
        }
        out.psi.push(psi);
        out.tau.push(T::lit(tau));
    }
    Ok(out)
}

pub fn fit_random_effects_from<T: Scalar>(
    studies: &[StudySummary<T>],
    modifiers: Vec<ModifierInfo>,
    net: &TreatmentNetwork,
    cfg: &NmaConfig,
) -> Result<NmaPosterior<T>> {
    cfg.validate()?;
    let names = modifier_names(net, &modifiers)?;
    let psi_names = net.psi_names(&names);
    let (prepared, repaired) = prepare(studies, net, cfg.covariance_mode)?;
    let p = net.psi_dim();
    check_identifiable(&prepared, p, &psi_names)?;
    let outputs: Vec<ChainOutput<T>> =
        (0..cfg.chains).into_par_iter().map(|c| run_chain(&prepared, p, cfg, c)).collect::<Result<_>>()?;
    let psi_draws = stack(outputs.iter().flat_map(|o| o.psi.iter()), p);
    let tau_draws: Vec<T> = outputs.iter().flat_map(|o| o.tau.iter().copied()).collect();
    let delta_draws = cfg.keep_study_draws.then(|| {
        (0..prepared.len())
            .map(|i| stack(outputs.iter().flat_map(|o| o.delta.iter().map(move |d| &d[i])), prepared[i].v.nrows()))
            .collect()
    });
    let mut post = NmaPosterior {
        network: net.clone(),
        modifiers,
        psi_names,
        psi_draws,
        chains: cfg.chains,
        tau_draws: Some(tau_draws),
        delta_draws,
        psi_diagnostics: Vec::new(),
        tau_diagnostic: None,
        converged: false,
        repaired_studies: repaired,
        config: NmaConfig { effects: Effects::Random, ..cfg.clone() },
    };
    post.recompute_diagnostics();
    Ok(post)
}

/// Per-draw relative effects `ψ_gᵀ(1, x)` of every treatment against the
/// reference, with the per-draw optimal treatment.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileDraws<T: Scalar> {
    /// `S × G`; column 0 (reference) is identically zero.
    pub effects: DMatrix<T>,
    /// Argmax per draw; ties go to the lowest treatment index.
    pub optimal: Vec<usize>,
    /// The maximum was attained by more than one treatment.
    pub tie: Vec<bool>,
}

impl<T: Scalar> ProfileDraws<T> {
    /// Share of draws in which each treatment is optimal.
    pub fn prob_optimal(&self) -> Vec<f64> {
        let g = self.effects.ncols();
        let mut counts = vec![0usize; g];
        for &o in &self.optimal {
            counts[o] += 1;
        }
        let s = self.optimal.len().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / s).collect()
    }

    pub fn tie_fraction(&self) -> f64 {
        self.tie.iter().filter(|&&t| t).count() as f64 / self.tie.len().max(1) as f64
    }
}

/// Evaluates `ψ_gᵀ(1, x)` for every draw and treatment. `x` holds the `Q`
/// effect-modifier values; the leading 1 is added here.
pub fn profile_effects<T: Scalar>(psi_draws: &DMatrix<T>, g: usize, q: usize, x: &[T]) -> Result<ProfileDraws<T>> {
    if x.len() != q {
        return Err(Error::Profile(format!("profile has {} entries, expected Q = {q}", x.len())));
    }
    if psi_draws.ncols() != (q + 1) * (g - 1) {
        return Err(Error::Profile("ψ draws do not match the network dimensions".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Profile("profile values must be finite".into()));
    }
    let s = psi_draws.nrows();
    let w = q + 1;
    let mut effects = DMatrix::<T>::zeros(s, g);
    let mut optimal = Vec::with_capacity(s);
    let mut tie = Vec::with_capacity(s);
    for r in 0..s {
        for t in 1..g {
            let base = (t - 1) * w;
            let mut v = psi_draws[(r, base)];
            for (j, &xj) in x.iter().enumerate() {
                v += psi_draws[(r, base + 1 + j)] * xj;
            }
            effects[(r, t)] = v;
        }
        let mut best = 0;
        for t in 1..g {
            if effects[(r, t)] > effects[(r, best)] {
                best = t;
            }
        }
        let max = effects[(r, best)];
        let n_max = (0..g).filter(|&t| effects[(r, t)] == max).count();
        optimal.push(best);
        tie.push(n_max > 1);
    }
    Ok(ProfileDraws { effects, optimal, tie })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fig2_net() -> TreatmentNetwork {
        let reg: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        let studies = vec![
            ("s1".to_string(), vec!["A".to_string(), "B".to_string()]),
            ("s2".to_string(), vec!["A".to_string(), "B".to_string()]),
            ("s3".to_string(), vec!["A".to_string(), "C".to_string()]),
            ("s4".to_string(), vec!["A".to_string(), "C".to_string()]),
        ];
        TreatmentNetwork::from_labels(&reg, &studies, Some("A"), 1).unwrap()
    }

    fn modifiers(q: usize) -> Vec<ModifierInfo> {
        (1..=q)
            .map(|j| ModifierInfo { name: format!("x{j}"), kind: crate::design::ModifierKind::Continuous, min: -3.0, max: 3.0 })
            .collect()
    }

    fn summaries(net: &TreatmentNetwork) -> Vec<StudySummary<f64>> {
        net.studies
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let f = i as f64;
                StudySummary {
                    study_id: s.study_id.clone(),
                    arm_treatments: s.arms.iter().map(|&a| net.treatments[a].clone()).collect(),
                    point: DVector::from_vec(vec![1.0 + 0.1 * f, -0.5 + 0.05 * f]),
                    cov: DMatrix::from_row_slice(2, 2, &[0.04 + 0.01 * f, 0.01, 0.01, 0.02]),
                }
            })
            .collect()
    }

    #[test]
    fn sparse_two_arm_is_diagonal() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0_f64, 0.5, 0.5, 1.0]);
        let out = sparsify_cov(&s, 1, 1);
        assert_eq!(out, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]));
        assert_eq!(sparsify_cov(&out, 1, 1), out);
    }

    #[test]
    fn sparse_three_arm_pattern() {
        let d = 4;
        let a = DMatrix::from_fn(d, d, |r, c| (r + c) as f64 * 0.1 + 0.05 * (r * c) as f64);
        let s = a.transpose() * &a + DMatrix::identity(d, d);
        let out = sparsify_cov(&s, 1, 2);
        // index rule: keep (r, c) iff both refer to the same covariate
        let same_covariate = |r: usize, c: usize| [r, c].iter().map(|i| i % 2).collect::<Vec<_>>().windows(2).all(|w| w[0] == w[1]);
        for r in 0..d {
            for c in 0..d {
                let expect = if same_covariate(r, c) { s[(r, c)] } else { 0.0 };
                assert_relative_eq!(out[(r, c)], expect, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn heterogeneity_pattern_eigenvalues() {
        for d in 1..8 {
            let tau = 0.7_f64;
            let eig = SymmetricEigen::new(sigma_i(tau, d)).eigenvalues;
            let mut ev: Vec<f64> = eig.iter().copied().collect();
            ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_relative_eq!(ev[d - 1], tau * tau * (d as f64 + 1.0) / 2.0, epsilon = 1e-10);
            if d > 1 {
                assert_relative_eq!(ev[0], tau * tau / 2.0, epsilon = 1e-10);
            }
            assert!(Cholesky::new(sigma_i(tau, d)).is_some());
        }
    }

    #[test]
    fn common_effects_matches_gls() {
        let net = fig2_net();
        let studies = summaries(&net);
        let cfg = NmaConfig { effects: Effects::Common, ..Default::default() };
        let (mean, cov) = common_effects_gaussian(&studies, &net, &cfg).unwrap();
        // independent oracle: stacked GLS with the prior as pseudo-observations
        let p = net.psi_dim();
        let n: usize = studies.iter().map(|s| s.point.len()).sum::<usize>() + p;
        let mut x = DMatrix::zeros(n, p);
        let mut y = DVector::zeros(n);
        let mut w = DMatrix::zeros(n, n);
        let mut row = 0;
        for (i, s) in studies.iter().enumerate() {
            let v = net.v_matrix::<f64>(i).unwrap();
            let d = s.point.len();
            x.view_mut((row, 0), (d, p)).copy_from(&v);
            y.rows_mut(row, d).copy_from(&s.point);
            w.view_mut((row, row), (d, d)).copy_from(&s.cov.clone().try_inverse().unwrap());
            row += d;
        }
        for k in 0..p {
            x[(row + k, k)] = 1.0;
            w[(row + k, row + k)] = 1.0 / 100.0;
        }
        let lhs = x.transpose() * &w * &x;
        let rhs = x.transpose() * &w * &y;
        let oracle = lhs.clone().lu().solve(&rhs).unwrap();
        let oracle_cov = lhs.try_inverse().unwrap();
        for k in 0..p {
            assert_relative_eq!(mean[k], oracle[k], epsilon = 1e-8);
            for j in 0..p {
                assert_relative_eq!(cov[(k, j)], oracle_cov[(k, j)], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn two_identical_studies_halve_variance() {
        let reg: Vec<String> = vec!["A".into(), "B".into()];
        let one = TreatmentNetwork::from_labels(&reg, &[("s1".into(), reg.clone())], None, 1).unwrap();
        let two = TreatmentNetwork::from_labels(&reg, &[("s1".into(), reg.clone()), ("s2".into(), reg.clone())], None, 1).unwrap();
        let mk = |id: &str| StudySummary {
            study_id: id.into(),
            arm_treatments: reg.clone(),
            point: DVector::from_vec(vec![0.3_f64, 0.1]),
            cov: DMatrix::from_row_slice(2, 2, &[0.1, 0.02, 0.02, 0.05]),
        };
        let cfg = NmaConfig { effects: Effects::Common, prior_psi_sd: 1e3, ..Default::default() };
        let (m1, c1) = common_effects_gaussian(&[mk("s1")], &one, &cfg).unwrap();
        let (_, c2) = common_effects_gaussian(&[mk("s1"), mk("s2")], &two, &cfg).unwrap();
        assert_relative_eq!(m1[0], 0.3, max_relative = 1e-6);
        assert_relative_eq!(m1[1], 0.1, max_relative = 1e-6);
        for k in 0..2 {
            assert_relative_eq!(c2[(k, k)] / c1[(k, k)], 0.5, max_relative = 1e-5);
        }
    }

    #[test]
    fn unestimable_contrast_is_named() {
        // treatment C registered but compared in no study
        let v = build_v_for(&[0, 1], 3);
        let prepared = vec![Prepared {
            study_id: "s1".into(),
            v,
            delta_hat: DVector::from_vec(vec![0.3_f64, 0.1]),
            sigma_hat: DMatrix::identity(2, 2),
            pattern: heterogeneity_pattern(2),
        }];
        let names: Vec<String> = ["B-A:(intercept)", "B-A:x1", "C-A:(intercept)", "C-A:x1"].iter().map(|s| s.to_string()).collect();
        let err = check_identifiable(&prepared, 4, &names).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("C-A:x1") && !msg.contains("B-A"), "{msg}");
    }

    fn build_v_for(arms: &[usize], g: usize) -> DMatrix<f64> {
        crate::netmap::build_v(&crate::netmap::build_u(arms, g).unwrap(), 1)
    }

    #[test]
    fn profile_examples() {
        let psi = DMatrix::from_row_slice(2, 4, &[1.0_f64, 2.0, -1.0, 0.5, 0.0, 0.0, 0.0, 0.0]);
        let p = profile_effects(&psi, 3, 1, &[0.0]).unwrap();
        assert_eq!(p.effects[(0, 1)], 1.0);
        assert_eq!(p.effects[(0, 2)], -1.0);
        assert_eq!(p.optimal[0], 1);
        assert!(!p.tie[0]);
        assert_eq!(p.optimal[1], 0);
        assert!(p.tie[1]);
        assert!(profile_effects(&psi, 3, 1, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn random_effects_runs_and_is_deterministic() {
        let net = fig2_net();
        let studies = summaries(&net);
        let cfg = NmaConfig { iters: 400, warmup: 200, chains: 2, keep_study_draws: true, ..Default::default() };
        let a = fit_random_effects_from(&studies, modifiers(1), &net, &cfg).unwrap();
        let b = fit_random_effects_from(&studies, modifiers(1), &net, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_draws(), 400);
        assert!(a.tau_draws.as_ref().unwrap().iter().all(|t| *t >= 0.0));
        assert_eq!(a.delta_draws.as_ref().unwrap()[0].shape(), (400, 2));
        assert!(a.psi_draws.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn study_order_does_not_matter_for_common_effects() {
        let net = fig2_net();
        let mut studies = summaries(&net);
        let cfg = NmaConfig { effects: Effects::Common, ..Default::default() };
        let (m1, _) = common_effects_gaussian(&studies, &net, &cfg).unwrap();
        studies.reverse();
        let (m2, _) = common_effects_gaussian(&studies, &net, &cfg).unwrap();
        for k in 0..m1.len() {
            assert_relative_eq!(m1[k], m2[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn config_invariants() {
        assert!(NmaConfig { warmup: 2000, ..Default::default() }.validate().is_err());
        assert!(NmaConfig { chains: 1, ..Default::default() }.validate().is_err());
        assert!(NmaConfig::default().validate().is_ok());
    }
}
