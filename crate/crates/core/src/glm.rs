//! Weighted maximum-likelihood fits of the treatment-assignment and
//! missingness models.
//!
//! Both fits are Newton / IRLS iterations with step halving, falling back
//! to a backtracking gradient-ascent step when no Newton step improves the
//! weighted log likelihood. Observation weights are rescaled internally to
//! mean one over the rows that carry weight; the maximiser does not depend
//! on that scale, but the convergence tolerance then has a fixed meaning.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::scalar::{log1p_exp, logistic};
use crate::Scalar;

/// Predicted probabilities are clipped to `[PROB_FLOOR, 1 − PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlmOptions {
    /// Convergence threshold on the max-norm of the score, with weights
    /// normalised to mean one.
    pub tol: f64,
    pub max_iter: usize,
    /// Coefficients beyond ±`coef_cap` on the logit scale are treated as
    /// separation and clamped.
    pub coef_cap: f64,
}

impl GlmOptions {
    /// Defaults scaled to the precision of `T` (1e-8 for `f64`).
    pub fn for_scalar<T: Scalar>() -> Self {
        Self { tol: (1e4 * T::eps().as_f64()).max(1e-8), max_iter: 100, coef_cap: 30.0 }
    }
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self::for_scalar::<f64>()
    }
}

/// Result of a weighted logistic or multinomial-logit fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct WeightedGlmFit<T: Scalar> {
    /// `(K − 1) × p`; row `k − 1` holds the coefficients of category `k`
    /// against category 0. A logistic fit has a single row.
    pub coefficients: DMatrix<T>,
    pub n_categories: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Max-norm of the score at the returned coefficients.
    pub gradient_norm: T,
    /// Set when coefficients had to be clamped at the cap.
    pub separated: bool,
}

impl<T: Scalar> WeightedGlmFit<T> {
    /// Coefficients stacked category by category.
    pub fn coef_vector(&self) -> DVector<T> {
        DVector::from_iterator(
            self.coefficients.len(),
            self.coefficients.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()),
        )
    }
}

/// What [`predict_prob`] returns per row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProbTarget<'a> {
    /// Probability of the category actually observed, e.g. the arm received.
    Received(&'a [usize]),
    /// Probability of category 1 of a binary model, e.g. Pr(M = 1).
    Positive,
    /// `1 − Pr(category 1)`, e.g. the probability of observing the outcome.
    Negative,
}

fn normalized_weights<T: Scalar>(w: &[T]) -> Result<Vec<T>> {
    if w.iter().any(|&v| v < T::zero() || !v.is_finite()) {
        return Err(Error::InvalidData("observation weights must be finite and nonnegative".into()));
    }
    let positive = w.iter().filter(|&&v| v > T::zero()).count();
    let total: T = w.iter().copied().fold(T::zero(), |a, b| a + b);
    if positive == 0 || !(total > T::zero()) {
        return Err(Error::InvalidData("all observation weights are zero".into()));
    }
    let scale = T::lit(positive as f64) / total;
    Ok(w.iter().map(|&v| v * scale).collect())
}

/// Rank check of the weighted design `Xᵀ diag(w) X`.
fn check_rank<T: Scalar>(x: &DMatrix<T>, w: &[T]) -> Result<()> {
    let p = x.ncols();
    let mut g = DMatrix::<T>::zeros(p, p);
    for (j, row) in x.row_iter().enumerate() {
        if w[j] == T::zero() {
            continue;
        }
        for a in 0..p {
            let wa = w[j] * row[a];
            for b in a..p {
                g[(a, b)] += wa * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            g[(a, b)] = g[(b, a)];
        }
    }
    let eig = SymmetricEigen::new(g).eigenvalues;
    let max = eig.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let min = eig.iter().copied().fold(max, |a, b| a.min(b));
    if !(max > T::zero()) || min <= max * T::lit(1e-11) {
        return Err(Error::SingularDesign(format!(
            "weighted design of {p} columns is rank deficient (eigenvalue ratio {:.3e})",
            (min / max).as_f64()
        )));
    }
    Ok(())
}

/// Multinomial-logit model state for `K ≥ 2` categories with category 0 as
/// reference. `K = 2` is ordinary logistic regression.
struct Problem<'a, T: Scalar> {
    x: &'a DMatrix<T>,
    y: &'a [usize],
    w: Vec<T>,
    k: usize,
}

impl<T: Scalar> Problem<'_, T> {
    fn p(&self) -> usize {
        self.x.ncols()
    }

    fn dim(&self) -> usize {
        (self.k - 1) * self.p()
    }

    /// Linear predictors of row `j` for categories 1..K.
    fn eta(&self, j: usize, beta: &DVector<T>, out: &mut [T]) {
        let p = self.p();
        for (c, o) in out.iter_mut().enumerate() {
            let mut s = T::zero();
            for a in 0..p {
                s += self.x[(j, a)] * beta[c * p + a];
            }
            *o = s;
        }
    }

    /// Category probabilities from linear predictors (index 0 = reference).
    fn probs(eta: &[T], out: &mut [T]) {
        let m = eta.iter().copied().fold(T::zero(), |a, b| a.max(b));
        let mut denom = (-m).exp();
        out[0] = denom;
        for (c, &e) in eta.iter().enumerate() {
            let v = (e - m).exp();
            out[c + 1] = v;
            denom += v;
        }
        for o in out.iter_mut() {
            *o /= denom;
        }
    }

    fn loglik(&self, beta: &DVector<T>) -> T {
        if self.k == 2 {
            let eta = self.x * beta;
            let mut ll = T::zero();
            for (j, &e) in eta.iter().enumerate() {
                let wj = self.w[j];
                if wj != T::zero() {
                    let obs = if self.y[j] == 1 { e } else { T::zero() };
                    ll += wj * (obs - log1p_exp(e));
                }
            }
            return ll;
        }
        let mut eta = vec![T::zero(); self.k - 1];
        let mut ll = T::zero();
        for j in 0..self.x.nrows() {
            if self.w[j] == T::zero() {
                continue;
            }
            self.eta(j, beta, &mut eta);
            let lse = if self.k == 2 {
                log1p_exp(eta[0])
            } else {
                let m = eta.iter().copied().fold(T::zero(), |a, b| a.max(b));
                let s = eta.iter().fold((-m).exp(), |acc, &e| acc + (e - m).exp());
                m + s.ln()
            };
            let obs = if self.y[j] == 0 { T::zero() } else { eta[self.y[j] - 1] };
            ll += self.w[j] * (obs - lse);
        }
        ll
    }

    /// Score and negative Hessian (Fisher information).
    fn score_info(&self, beta: &DVector<T>) -> (DVector<T>, DMatrix<T>) {
        if self.k == 2 {
            return self.score_info_binary(beta);
        }
        let (p, km1) = (self.p(), self.k - 1);
        let dim = self.dim();
        let mut grad = DVector::zeros(dim);
        let mut info = DMatrix::zeros(dim, dim);
        let mut eta = vec![T::zero(); km1];
        let mut pr = vec![T::zero(); self.k];
        for j in 0..self.x.nrows() {
            let wj = self.w[j];
            if wj == T::zero() {
                continue;
            }
            self.eta(j, beta, &mut eta);
            Self::probs(&eta, &mut pr);
            let row = self.x.row(j);
            for c in 0..km1 {
                let resid = (if self.y[j] == c + 1 { T::one() } else { T::zero() }) - pr[c + 1];
                for a in 0..p {
                    grad[c * p + a] += wj * resid * row[a];
                }
                for d in c..km1 {
                    let cov = if c == d { pr[c + 1] * (T::one() - pr[c + 1]) } else { -pr[c + 1] * pr[d + 1] };
                    let f = wj * cov;
                    if f == T::zero() {
                        continue;
                    }
                    for a in 0..p {
                        let fa = f * row[a];
                        for b in 0..p {
                            info[(c * p + a, d * p + b)] += fa * row[b];
                        }
                    }
                }
            }
        }
        for r in 0..dim {
            for c in 0..r {
                info[(r, c)] = info[(c, r)];
            }
        }
        (grad, info)
    }
}

impl<T: Scalar> Problem<'_, T> {
    /// Logistic special case with dense matrix products.
    fn score_info_binary(&self, beta: &DVector<T>) -> (DVector<T>, DMatrix<T>) {
        let eta = self.x * beta;
        let n = self.x.nrows();
        let mut resid = DVector::zeros(n);
        let mut scaled = self.x.clone();
        for j in 0..n {
            let pj = logistic(eta[j]);
            let wj = self.w[j];
            resid[j] = wj * ((if self.y[j] == 1 { T::one() } else { T::zero() }) - pj);
            let f = (wj * pj * (T::one() - pj)).sqrt();
            scaled.row_mut(j).scale_mut(f);
        }
        let grad = self.x.tr_mul(&resid);
        let mut info = scaled.tr_mul(&scaled);
        symmetrize(&mut info);
        (grad, info)
    }
}

fn max_abs<T: Scalar>(v: &DVector<T>) -> T {
    v.iter().copied().fold(T::zero(), |a, b| a.max(b.abs()))
}

fn newton<T: Scalar>(
    prob: &Problem<'_, T>,
    init: Option<&DVector<T>>,
    opts: &GlmOptions,
) -> Result<WeightedGlmFit<T>> {
    let dim = prob.dim();
    let tol = T::lit(opts.tol);
    let cap = T::lit(opts.coef_cap);
    let mut beta = match init {
        Some(b) if b.len() == dim && b.iter().all(|v| v.is_finite()) => b.clone(),
        _ => DVector::zeros(dim),
    };
    let mut ll = prob.loglik(&beta);
    let mut converged = false;
    let mut separated = false;
    let mut iterations = 0;
    let mut grad_norm = T::zero();

    while iterations < opts.max_iter {
        let (grad, info) = prob.score_info(&beta);
        grad_norm = max_abs(&grad);
        if grad_norm <= tol {
            converged = true;
            break;
        }
        iterations += 1;
        let newton_step = Cholesky::new(info.clone())
            .map(|c| c.solve(&grad))
            .filter(|s| s.iter().all(|v| v.is_finite()));
        // likelihood changes below this are rounding noise
        let noise = T::lit(16.0) * T::eps() * (T::one() + ll.abs());
        if let Some(step) = &newton_step {
            // Newton decrement below rounding noise: the line search can no
            // longer tell steps apart, but the full step is still exact to
            // second order, so take it and stop
            if grad.dot(step) <= noise {
                beta += step;
                grad_norm = max_abs(&prob.score_info(&beta).0);
                converged = true;
                break;
            }
        }
        let step = newton_step.unwrap_or_else(|| grad.clone());

        let mut accepted = false;
        let mut scale = T::one();
        for _ in 0..40 {
            let cand = &beta + &step * scale;
            let cand_ll = prob.loglik(&cand);
            if cand_ll.is_finite() && cand_ll >= ll - noise {
                beta = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= T::lit(0.5);
        }
        if !accepted {
            // gradient ascent with backtracking
            let mut lr = T::one() / (T::one() + grad_norm);
            for _ in 0..60 {
                let cand = &beta + &grad * lr;
                let cand_ll = prob.loglik(&cand);
                if cand_ll.is_finite() && cand_ll > ll {
                    beta = cand;
                    ll = cand_ll;
                    accepted = true;
                    break;
                }
                lr *= T::lit(0.5);
            }
        }
        if beta.iter().any(|v| v.abs() > cap) {
            separated = true;
            beta.apply(|v| *v = v.clamp(-cap, cap));
            grad_norm = max_abs(&prob.score_info(&beta).0);
            break;
        }
        if !accepted {
            // no ascent direction improves the likelihood at working precision
            let (grad, _) = prob.score_info(&beta);
            grad_norm = max_abs(&grad);
            converged = grad_norm <= tol.max(T::lit(1e3) * T::eps().sqrt());
            break;
        }
    }
    if separated {
        log::warn!("weighted GLM: separation detected, coefficients clamped at ±{}", opts.coef_cap);
    }
    let p = prob.p();
    let k = prob.k;
    Ok(WeightedGlmFit {
        coefficients: DMatrix::from_fn(k - 1, p, |c, a| beta[c * p + a]),
        n_categories: k,
        converged,
        iterations,
        gradient_norm: grad_norm,
        separated,
    })
}

/// Maximises `Σ_j ω_j [y_j log p_j + (1 − y_j) log(1 − p_j)]` with a logit link.
pub fn fit_weighted_logistic<T: Scalar>(
    x: &DMatrix<T>,
    y: &[bool],
    obs_weights: &[T],
    init: Option<&DVector<T>>,
    opts: &GlmOptions,
) -> Result<WeightedGlmFit<T>> {
    if y.len() != x.nrows() || obs_weights.len() != x.nrows() {
        return Err(Error::InvalidData("logistic fit: length mismatch".into()));
    }
    let w = normalized_weights(obs_weights)?;
    check_rank(x, &w)?;
    let cats: Vec<usize> = y.iter().map(|&b| b as usize).collect();
    newton(&Problem { x, y: &cats, w, k: 2 }, init, opts)
}

/// Multinomial-logit analogue with category 0 as reference. Two categories
/// dispatch to [`fit_weighted_logistic`].
pub fn fit_weighted_multinomial<T: Scalar>(
    x: &DMatrix<T>,
    category: &[usize],
    n_categories: usize,
    obs_weights: &[T],
    init: Option<&DVector<T>>,
    opts: &GlmOptions,
) -> Result<WeightedGlmFit<T>> {
    if n_categories < 2 {
        return Err(Error::InvalidData("multinomial fit needs at least 2 categories".into()));
    }
    if category.len() != x.nrows() || obs_weights.len() != x.nrows() {
        return Err(Error::InvalidData("multinomial fit: length mismatch".into()));
    }
    if let Some(&c) = category.iter().find(|&&c| c >= n_categories) {
        return Err(Error::InvalidData(format!("category {c} outside 0..{n_categories}")));
    }
    if n_categories == 2 {
        let y: Vec<bool> = category.iter().map(|&c| c == 1).collect();
        return fit_weighted_logistic(x, &y, obs_weights, init, opts);
    }
    fit_multinomial_general(x, category, n_categories, obs_weights, init, opts)
}

/// The general Newton path without the binary dispatch; exposed so the
/// two-category reduction can be checked against the logistic fit.
pub fn fit_multinomial_general<T: Scalar>(
    x: &DMatrix<T>,
    category: &[usize],
    n_categories: usize,
    obs_weights: &[T],
    init: Option<&DVector<T>>,
    opts: &GlmOptions,
) -> Result<WeightedGlmFit<T>> {
    let w = normalized_weights(obs_weights)?;
    check_rank(x, &w)?;
    newton(&Problem { x, y: category, w, k: n_categories }, init, opts)
}

/// Per-row category probabilities `N × K`.
pub fn predict_category_probs<T: Scalar>(fit: &WeightedGlmFit<T>, x: &DMatrix<T>) -> DMatrix<T> {
    let k = fit.n_categories;
    let mut out = DMatrix::zeros(x.nrows(), k);
    let eta_all = x * fit.coefficients.transpose();
    let mut pr = vec![T::zero(); k];
    for j in 0..x.nrows() {
        let eta: Vec<T> = eta_all.row(j).iter().copied().collect();
        if k == 2 {
            pr[1] = logistic(eta[0]);
            pr[0] = T::one() - pr[1];
        } else {
            Problem::<T>::probs(&eta, &mut pr);
        }
        for c in 0..k {
            out[(j, c)] = pr[c];
        }
    }
    out
}

/// Probabilities used to build inverse-probability weights, clipped to
/// `[1e-6, 1 − 1e-6]`.
pub fn predict_prob<T: Scalar>(fit: &WeightedGlmFit<T>, x: &DMatrix<T>, target: ProbTarget<'_>) -> Vec<T> {
    let probs = predict_category_probs(fit, x);
    let lo = T::lit(PROB_FLOOR);
    let hi = T::one() - lo;
    (0..x.nrows())
        .map(|j| {
            let p = match target {
                ProbTarget::Received(cats) => probs[(j, cats[j])],
                ProbTarget::Positive => probs[(j, 1)],
                ProbTarget::Negative => T::one() - probs[(j, 1)],
            };
            p.clamp(lo, hi)
        })
        .collect()
}
