//! Stage one: Bayesian-bootstrap dynamic weighted OLS (BBdWOLS).
//!
//! Each bootstrap iteration draws Dirichlet(1, …, 1) observation weights,
//! refits the missingness and treatment-assignment models under those
//! weights, forms the balancing weights
//! `w_j = ω_j / (π^t_j · π^m_j)`, and solves the weighted least-squares
//! problem on the complete cases. The collected blip coefficients are a
//! posterior sample for the study.
//!
//! Plain Q-learning (unweighted OLS on complete cases) is provided as the
//! comparator; its draws are the same bootstrap with all probability terms
//! set to one.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::StudyDataset;
use crate::design::{build_design, DesignMatrices, ModifierInfo};
use crate::error::{Error, Result};
use crate::glm::{fit_weighted_logistic, fit_weighted_multinomial, predict_prob, GlmOptions, ProbTarget};
use crate::linalg::{column_means, quantile, sample_cov};
use crate::rng::stream;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// All probability terms are one: plain (bootstrapped) OLS.
    Unweighted,
    /// `1 / π^t` balancing weights only.
    TreatmentOnly,
    /// `1 / (π^t · π^m)`: treatment and missing-at-random outcome weights.
    TreatmentMar,
}

/// Which missingness probability enters the MAR weight for observed rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingnessConvention {
    /// `Pr(M = 0 | x, a)`: inverse probability of being observed.
    Observed,
    /// `Pr(M = 1 | x, a)`, the literal notation of the combined weight.
    Missing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrimScope {
    /// Threshold recomputed within each bootstrap iteration.
    PerIteration,
    /// One threshold over the weights of every iteration.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointEstimate {
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BbConfig {
    /// Bootstrap iterations L.
    pub iterations: usize,
    pub seed: u64,
    pub weight_mode: WeightMode,
    pub missingness: MissingnessConvention,
    /// Weights above this empirical quantile are set to it.
    pub trim_quantile: Option<f64>,
    pub trim_scope: TrimScope,
    pub point: PointEstimate,
    /// Attempts per iteration before a degenerate resample becomes an error.
    pub max_redraws: usize,
}

impl Default for BbConfig {
    fn default() -> Self {
        Self {
            iterations: 1999,
            seed: 1,
            weight_mode: WeightMode::TreatmentMar,
            missingness: MissingnessConvention::Observed,
            trim_quantile: None,
            trim_scope: TrimScope::PerIteration,
            point: PointEstimate::Mean,
            max_redraws: 50,
        }
    }
}

impl BbConfig {
    /// 1999 iterations, or 2999 when there are ten or more blip coefficients
    /// per arm.
    pub fn default_iterations(q: usize) -> usize {
        if q + 1 >= 10 {
            2999
        } else {
            1999
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("bootstrap iterations must be at least 1".into()));
        }
        if let Some(q) = self.trim_quantile {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::Config(format!("trim quantile {q} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Bookkeeping attached to a stage-one posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub method: String,
    pub n_rows: usize,
    pub n_complete: usize,
    pub iterations: usize,
    /// Resamples discarded because the weighted design was singular.
    pub redraws: usize,
    /// More than 5% of iterations needed a redraw.
    pub degraded: bool,
    /// Weight-model fits that hit the separation cap.
    pub separated_fits: usize,
    pub config: BbConfig,
}

/// Posterior sample of one study's blip parameters
/// `δ_i = (δ_{i2}ᵀ, …, δ_{iG_i}ᵀ)ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlipPosterior<T: Scalar> {
    pub study_id: String,
    /// Global treatment labels of the arms; the first is the study reference.
    pub arm_treatments: Vec<String>,
    pub modifiers: Vec<ModifierInfo>,
    /// Coordinate names, `label:(intercept)`, `label:x1`, …
    pub names: Vec<String>,
    /// `L × (Q+1)(G_i−1)`.
    pub draws: DMatrix<T>,
    pub point: DVector<T>,
    /// Sample covariance of `draws`.
    pub cov: DMatrix<T>,
    pub meta: FitMetadata,
}

impl<T: Scalar> BlipPosterior<T> {
    pub fn q(&self) -> usize {
        self.modifiers.len()
    }

    pub fn dim(&self) -> usize {
        self.point.len()
    }
}

/// Dirichlet(1, …, 1) weights as normalised unit exponentials.
pub fn draw_dirichlet<T: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<T> {
    assert!(n >= 1, "Dirichlet dimension must be at least 1");
    let e: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| T::lit(v / total)).collect()
}

/// `w_j = ω_j / (π^t_j · π^m_j)`; absent probability vectors count as one.
pub fn compute_weights<T: Scalar>(omega: &[T], pi_t: Option<&[T]>, pi_m: Option<&[T]>) -> Vec<T> {
    omega
        .iter()
        .enumerate()
        .map(|(j, &o)| {
            let pt = pi_t.map_or(T::one(), |p| p[j]);
            let pm = pi_m.map_or(T::one(), |p| p[j]);
            o / (pt * pm)
        })
        .collect()
}

/// Caps weights of `active` rows at their empirical `q`-quantile (type 7)
/// and returns the threshold.
pub fn trim_weights<T: Scalar>(w: &mut [T], active: &[bool], q: f64) -> T {
    let vals: Vec<T> = w.iter().zip(active).filter(|(_, &a)| a).map(|(&v, _)| v).collect();
    if vals.is_empty() {
        return T::zero();
    }
    let threshold = quantile(&vals, q);
    apply_trim(w, threshold);
    threshold
}

fn apply_trim<T: Scalar>(w: &mut [T], threshold: T) {
    for v in w.iter_mut() {
        if *v > threshold {
            *v = threshold;
        }
    }
}

/// Weighted least-squares solution split into reference and blip parts.
#[derive(Debug, Clone, PartialEq)]
pub struct WlsFit<T: Scalar> {
    pub beta: DVector<T>,
    pub delta: DVector<T>,
}

fn solve_wls<T: Scalar>(x: &DMatrix<T>, y: &DVector<T>, w: &[T], missing: &[bool]) -> Result<DVector<T>> {
    let rows: Vec<usize> = (0..x.nrows()).filter(|&j| !missing[j] && w[j] > T::zero()).collect();
    let p = x.ncols();
    if rows.len() < p {
        return Err(Error::SingularDesign(format!("{} weighted complete cases for {p} coefficients", rows.len())));
    }
    let mut a = DMatrix::zeros(rows.len(), p);
    let mut b = DVector::zeros(rows.len());
    for (r, &j) in rows.iter().enumerate() {
        let s = w[j].sqrt();
        for c in 0..p {
            a[(r, c)] = x[(j, c)] * s;
        }
        b[r] = y[j] * s;
    }
    let qr = a.qr();
    let r = qr.r();
    let dmax = (0..p).map(|i| r[(i, i)].abs()).fold(T::zero(), |m, v| m.max(v));
    if !(dmax > T::zero()) || (0..p).any(|i| r[(i, i)].abs() <= dmax * T::lit(1e-10)) {
        return Err(Error::SingularDesign("weighted complete-case design is rank deficient".into()));
    }
    let qtb = qr.q().tr_mul(&b);
    r.solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::SingularDesign("triangular solve failed".into()))
}

/// Minimises `Σ_j w_j (1 − m_j)(y_j − fit_j)²` over `(β, δ)`.
pub fn weighted_wls<T: Scalar>(design: &DesignMatrices<T>, w: &[T]) -> Result<WlsFit<T>> {
    if w.len() != design.n_rows() {
        return Err(Error::InvalidData("weight vector length differs from the design".into()));
    }
    let coef = solve_wls(&design.outcome_design(), &design.y, w, &design.missing)?;
    let pr = design.x_ref.ncols();
    Ok(WlsFit { beta: coef.rows(0, pr).into_owned(), delta: coef.rows(pr, design.blip_dim()).into_owned() })
}

struct Engine<'a, T: Scalar> {
    design: &'a DesignMatrices<T>,
    x_full: DMatrix<T>,
    observed: Vec<bool>,
    cfg: &'a BbConfig,
    opts: GlmOptions,
    miss_init: Option<DVector<T>>,
    trt_init: Option<DVector<T>>,
    missing_as_bool: Vec<bool>,
}

struct Weights<T> {
    w: Vec<T>,
    separated: usize,
}

impl<'a, T: Scalar> Engine<'a, T> {
    fn new(design: &'a DesignMatrices<T>, cfg: &'a BbConfig) -> Result<Self> {
        let n = design.n_rows();
        let opts = GlmOptions::for_scalar::<T>();
        let ones = vec![T::one(); n];
        let missing_as_bool = design.missing.clone();
        let any_missing = missing_as_bool.iter().any(|&m| m);
        let miss_init = if cfg.weight_mode == WeightMode::TreatmentMar && any_missing {
            Some(fit_weighted_logistic(&design.x_miss, &missing_as_bool, &ones, None, &opts)?.coef_vector())
        } else {
            None
        };
        let trt_init = if cfg.weight_mode != WeightMode::Unweighted {
            Some(
                fit_weighted_multinomial(&design.x_trt, &design.arm, design.n_arms, &ones, None, &opts)?
                    .coef_vector(),
            )
        } else {
            None
        };
        Ok(Self {
            design,
            x_full: design.outcome_design(),
            observed: design.missing.iter().map(|m| !m).collect(),
            cfg,
            opts,
            miss_init,
            trt_init,
            missing_as_bool,
        })
    }

    /// Untrimmed weights for iteration `l`, attempt `attempt`.
    fn weights(&self, l: usize, attempt: usize) -> Result<Weights<T>> {
        let mut rng = stream(self.cfg.seed, &[l as u64, attempt as u64]);
        let n = self.design.n_rows();
        let omega: Vec<T> = draw_dirichlet(n, &mut rng);
        let mut separated = 0;
        let pi_m = match (self.cfg.weight_mode, &self.miss_init) {
            (WeightMode::TreatmentMar, Some(init)) => {
                let fit = fit_weighted_logistic(&self.design.x_miss, &self.missing_as_bool, &omega, Some(init), &self.opts)?;
                separated += fit.separated as usize;
                let target = match self.cfg.missingness {
                    MissingnessConvention::Observed => ProbTarget::Negative,
                    MissingnessConvention::Missing => ProbTarget::Positive,
                };
                Some(predict_prob(&fit, &self.design.x_miss, target))
            }
            _ => None,
        };
        let pi_t = match &self.trt_init {
            Some(init) => {
                let fit = fit_weighted_multinomial(
                    &self.design.x_trt,
                    &self.design.arm,
                    self.design.n_arms,
                    &omega,
                    Some(init),
                    &self.opts,
                )?;
                separated += fit.separated as usize;
                Some(predict_prob(&fit, &self.design.x_trt, ProbTarget::Received(&self.design.arm)))
            }
            None => None,
        };
        Ok(Weights { w: compute_weights(&omega, pi_t.as_deref(), pi_m.as_deref()), separated })
    }

    fn solve(&self, w: &[T]) -> Result<DVector<T>> {
        let coef = solve_wls(&self.x_full, &self.design.y, w, &self.design.missing)?;
        let pr = self.design.x_ref.ncols();
        Ok(coef.rows(pr, self.design.blip_dim()).into_owned())
    }

    /// One posterior draw; degenerate resamples are redrawn from the same
    /// iteration stream. Returns `(δ, redraws, separated fits)`.
    fn draw(&self, l: usize, pooled_threshold: Option<T>, first: Option<Weights<T>>) -> Result<(DVector<T>, usize, usize)> {
        let mut first = first;
        let mut separated = 0;
        for attempt in 0..=self.cfg.max_redraws {
            let weights = match first.take() {
                Some(w) => Ok(w),
                None => self.weights(l, attempt),
            };
            let mut weights = match weights {
                Ok(w) => w,
                Err(Error::SingularDesign(_)) => continue,
                Err(e) => return Err(e),
            };
            separated += weights.separated;
            match (pooled_threshold, self.cfg.trim_quantile) {
                (Some(t), _) => apply_trim(&mut weights.w, t),
                (None, Some(q)) => {
                    trim_weights(&mut weights.w, &self.observed, q);
                }
                (None, None) => {}
            }
            match self.solve(&weights.w) {
                Ok(d) => return Ok((d, attempt, separated)),
                Err(Error::SingularDesign(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(Error::SingularDesign(format!(
            "iteration {l}: {} consecutive degenerate resamples",
            self.cfg.max_redraws + 1
        )))
    }
}

fn summarize<T: Scalar>(
    data: &StudyDataset,
    design: &DesignMatrices<T>,
    draws: DMatrix<T>,
    point_override: Option<DVector<T>>,
    meta: FitMetadata,
) -> BlipPosterior<T> {
    let point = point_override.unwrap_or_else(|| match meta.config.point {
        PointEstimate::Mean => column_means(&draws),
        PointEstimate::Median => DVector::from_iterator(
            draws.ncols(),
            draws.column_iter().map(|c| quantile(c.as_slice(), 0.5)),
        ),
    });
    BlipPosterior {
        study_id: data.study_id.clone(),
        arm_treatments: data.arm_treatments.clone(),
        modifiers: design.modifiers.clone(),
        names: design.blip_names(&data.arm_treatments),
        cov: sample_cov(&draws),
        point,
        draws,
        meta,
    }
}

fn run_draws<T: Scalar>(design: &DesignMatrices<T>, cfg: &BbConfig) -> Result<(DMatrix<T>, usize, usize)> {
    let engine = Engine::new(design, cfg)?;
    let l_total = cfg.iterations;

    let results: Vec<Result<(DVector<T>, usize, usize)>> = match (cfg.trim_scope, cfg.trim_quantile) {
        (TrimScope::Pooled, Some(q)) => {
            let first: Vec<Result<Weights<T>>> = (0..l_total).into_par_iter().map(|l| engine.weights(l, 0)).collect();
            let mut pool = Vec::new();
            for w in first.iter().flatten() {
                pool.extend(w.w.iter().zip(&engine.observed).filter(|(_, &o)| o).map(|(&v, _)| v));
            }
            let threshold = if pool.is_empty() { None } else { Some(quantile(&pool, q)) };
            first
                .into_par_iter()
                .enumerate()
                .map(|(l, w)| match w {
                    Ok(w) => engine.draw(l, threshold, Some(w)),
                    Err(Error::SingularDesign(_)) => engine.draw(l, threshold, None),
                    Err(e) => Err(e),
                })
                .collect()
        }
        _ => (0..l_total).into_par_iter().map(|l| engine.draw(l, None, None)).collect(),
    };

    let dim = design.blip_dim();
    let mut draws = DMatrix::zeros(l_total, dim);
    let (mut redraws, mut separated) = (0, 0);
    for (l, r) in results.into_iter().enumerate() {
        let (d, rd, sep) = r?;
        draws.set_row(l, &d.transpose());
        redraws += rd;
        separated += sep;
    }
    Ok((draws, redraws, separated))
}

fn metadata(method: &str, design_rows: usize, n_complete: usize, cfg: &BbConfig, redraws: usize, separated: usize) -> FitMetadata {
    let degraded = redraws as f64 > 0.05 * cfg.iterations as f64;
    if degraded {
        log::warn!("{method}: {redraws} redrawn iterations out of {}", cfg.iterations);
    }
    FitMetadata {
        method: method.to_string(),
        n_rows: design_rows,
        n_complete,
        iterations: cfg.iterations,
        redraws,
        degraded,
        separated_fits: separated,
        config: cfg.clone(),
    }
}

/// Stage-one posterior of a study's blip parameters by BBdWOLS.
pub fn run_bbdwols<T: Scalar>(data: &StudyDataset, cfg: &BbConfig) -> Result<BlipPosterior<T>> {
    cfg.validate()?;
    data.ensure_valid()?;
    let design = build_design::<T>(data)?;
    let (draws, redraws, separated) = run_draws(&design, cfg)?;
    let n_complete = design.missing.iter().filter(|m| !**m).count();
    let meta = metadata("bbdwols", design.n_rows(), n_complete, cfg, redraws, separated);
    Ok(summarize(data, &design, draws, None, meta))
}

/// Q-learning comparator: the point estimate is unweighted OLS on the
/// complete cases; draws and covariance come from the Bayesian bootstrap
/// with every probability term equal to one.
///
/// With `complete_cases_only = false` the dataset must have no missing
/// outcomes.
pub fn run_qlearning<T: Scalar>(
    data: &StudyDataset,
    complete_cases_only: bool,
    cfg: &BbConfig,
) -> Result<BlipPosterior<T>> {
    cfg.validate()?;
    data.ensure_valid()?;
    let design = build_design::<T>(data)?;
    let n_complete = design.missing.iter().filter(|m| !**m).count();
    if !complete_cases_only && n_complete < design.n_rows() {
        return Err(Error::Config(format!(
            "study {}: {} missing outcomes; Q-learning needs complete cases",
            data.study_id,
            design.n_rows() - n_complete
        )));
    }
    let cfg = BbConfig { weight_mode: WeightMode::Unweighted, trim_quantile: None, ..cfg.clone() };
    let ols = weighted_wls(&design, &vec![T::one(); design.n_rows()])?;
    let (draws, redraws, separated) = run_draws(&design, &cfg)?;
    let meta = metadata("qlearning", design.n_rows(), n_complete, &cfg, redraws, separated);
    Ok(summarize(data, &design, draws, Some(ols.delta), meta))
}
