//! Rank-normalised split R-hat and bulk effective sample size.
//!
//! Follows the rank-normalisation recipe: pooled draws are replaced by
//! normal scores of their ranks, chains are split in half, and the
//! classical potential-scale-reduction and Geyer initial-monotone-sequence
//! ESS are computed on the result. R-hat is the larger of the bulk value
//! and the value on folded draws `|x − median|`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Diagnostics of one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// Rank-normalised split R-hat; `+∞` when between-chain variation exists
    /// with no within-chain variation.
    #[serde(with = "nonfinite")]
    pub rhat: f64,
    #[serde(with = "nonfinite")]
    pub ess_bulk: f64,
    /// Every draw identical; R-hat is reported as 1.
    pub zero_variance: bool,
}

/// JSON has no infinities: non-finite values travel as `null` and come
/// back as `+∞`.
pub(crate) mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_some(x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Halves each chain (dropping the middle draw of odd-length chains).
pub fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    let half = n / 2;
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        out.push(c[..half].to_vec());
        out.push(c[n - half..n].to_vec());
    }
    out
}

/// Classical R-hat of already split chains.
pub fn rhat_basic(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| var(c)).collect::<Vec<_>>());
    let b = n * var(&means);
    if w <= 0.0 {
        return if b > 0.0 { f64::INFINITY } else { 1.0 };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Normal scores of pooled fractional ranks, ties averaged.
pub fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let total: usize = chains.iter().map(Vec::len).sum();
    let mut idx: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, v)| v.iter().enumerate().map(move |(i, &x)| (x, c, i)))
        .collect();
    idx.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let s = total as f64;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && idx[j + 1].0 == idx[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let z = normal.inverse_cdf((rank - 0.375) / (s + 0.25));
        for &(_, c, k) in &idx[i..=j] {
            out[c][k] = z;
        }
        i = j + 1;
    }
    out
}

/// Multi-chain ESS by Geyer's initial monotone sequence (chains already
/// split if desired).
pub fn ess_basic(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let total = (m * n) as f64;
    if n < 4 {
        return f64::NAN;
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov = |lag: usize| -> f64 {
        let mut s = 0.0;
        for (c, chain) in chains.iter().enumerate() {
            let mu = means[c];
            let mut a = 0.0;
            for t in 0..n - lag {
                a += (chain[t] - mu) * (chain[t + lag] - mu);
            }
            s += a / n as f64;
        }
        s / m as f64
    };
    let nf = n as f64;
    let mean_var = acov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += var(&means);
    }
    if var_plus <= 0.0 {
        return total;
    }
    let rho = |lag: usize| 1.0 - (mean_var - acov(lag)) / var_plus;

    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[1] = odd;
    let mut s = 1;
    while s + 4 < n && even + odd > 0.0 {
        even = rho(s + 1);
        odd = rho(s + 2);
        if even + odd >= 0.0 {
            rho_hat[s + 1] = even;
            rho_hat[s + 2] = odd;
        }
        s += 2;
    }
    let max_s = s;
    // initial monotone sequence
    let mut k = 1;
    while k + 3 <= max_s {
        let prev = rho_hat[k - 1] + rho_hat[k];
        if rho_hat[k + 1] + rho_hat[k + 2] > prev {
            rho_hat[k + 1] = prev / 2.0;
            rho_hat[k + 2] = prev / 2.0;
        }
        k += 2;
    }
    let sum: f64 = rho_hat[..max_s].iter().sum();
    let next = if max_s < n { rho_hat[max_s] } else { 0.0 };
    let tau = (-1.0 + 2.0 * sum + next).max(1.0 / total.log10());
    total / tau
}

/// R-hat and bulk ESS of one parameter from its per-chain draws.
///
/// Needs at least two chains of at least four draws.
pub fn diagnose(chains: &[Vec<f64>]) -> Diagnostic {
    assert!(chains.len() >= 2, "diagnostics need at least 2 chains");
    assert!(chains.iter().all(|c| c.len() >= 4), "diagnostics need at least 4 draws per chain");
    let first = chains[0][0];
    if chains.iter().all(|c| c.iter().all(|&x| x == first)) {
        let total = chains.iter().map(Vec::len).sum::<usize>() as f64;
        return Diagnostic { rhat: 1.0, ess_bulk: total, zero_variance: true };
    }
    let split = split_chains(chains);
    let z = rank_normalize(&split);
    let rhat_bulk = rhat_basic(&z);

    let mut pooled: Vec<f64> = split.iter().flatten().copied().collect();
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let median = crate::linalg::quantile_sorted(&pooled, 0.5);
    let folded: Vec<Vec<f64>> = split.iter().map(|c| c.iter().map(|x| (x - median).abs()).collect()).collect();
    let rhat_tail = rhat_basic(&rank_normalize(&folded));

    let within_constant = split.iter().all(|c| c.iter().all(|&x| x == c[0]));
    let ess = if within_constant { 1.0 } else { ess_basic(&z) };
    Diagnostic { rhat: rhat_bulk.max(rhat_tail), ess_bulk: ess, zero_variance: false }
}
