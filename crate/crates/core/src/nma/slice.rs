//! Univariate slice sampler with stepping-out and shrinkage, restricted to
//! a half-line `[lower, ∞)`.

use rand::Rng;
use rand_distr::Exp1;

/// One slice-sampling update of `x0` under the log density `log_f`.
///
/// `width` is the initial bracket width and `max_steps` bounds the number
/// of stepping-out expansions. `log_f` must return `-∞` outside the support.
pub fn slice_step<R: Rng + ?Sized>(
    x0: f64,
    log_f: &mut impl FnMut(f64) -> f64,
    lower: f64,
    width: f64,
    max_steps: usize,
    rng: &mut R,
) -> f64 {
    let f0 = log_f(x0);
    debug_assert!(f0.is_finite(), "slice sampler started outside the support");
    let level = f0 - rng.sample::<f64, _>(Exp1);

    let u: f64 = rng.random();
    let mut left = x0 - width * u;
    let mut right = left + width;
    let m = max_steps.max(1);
    let mut j = ((m as f64 * rng.random::<f64>()).floor() as usize).min(m - 1);
    let mut k = m - 1 - j;
    while j > 0 && left > lower && log_f(left) > level {
        left -= width;
        j -= 1;
    }
    while k > 0 && log_f(right) > level {
        right += width;
        k -= 1;
    }
    if left < lower {
        left = lower;
    }

    loop {
        let x1 = left + rng.random::<f64>() * (right - left);
        if log_f(x1) > level {
            return x1;
        }
        if x1 < x0 {
            left = x1;
        } else {
            right = x1;
        }
        if right - left <= f64::EPSILON * x0.abs().max(1e-300) {
            return x0;
        }
    }
}
