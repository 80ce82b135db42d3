//! Hard-threshold proximal operator and its quantile-driven threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How the quantile of `|d|` is turned into the prox parameter λ.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    /// The threshold `sqrt(2λ)` equals the quantile: λ = Q²/2.
    #[default]
    ThresholdIsQuantile,
    /// λ itself equals the quantile, so the threshold is `sqrt(2Q)`.
    LambdaIsQuantile,
}

/// Elementwise hard threshold: keeps `d[i]` when `|d[i]| > sqrt(2λ)`, zero otherwise.
pub fn prox_l0<T: Scalar>(d: &[T], lambda: T) -> Result<Vec<T>> {
    let mut out = d.to_vec();
    prox_l0_in_place(&mut out, lambda)?;
    Ok(out)
}

pub fn prox_l0_in_place<T: Scalar>(d: &mut [T], lambda: T) -> Result<()> {
    if !(lambda >= T::zero()) {
        return Err(Error::invalid(format!("prox parameter must be non-negative, got {lambda}")));
    }
    let threshold = (T::c(2.0) * lambda).sqrt();
    for v in d.iter_mut() {
        if !(v.abs() > threshold) {
            *v = T::zero();
        }
    }
    Ok(())
}

/// `q`-quantile by linear interpolation of the empirical distribution function:
/// with sorted values `x_1 ≤ … ≤ x_n` and `h = n·q`, returns
/// `x_⌊h⌋ + (h − ⌊h⌋)(x_⌊h⌋+1 − x_⌊h⌋)` (clamped to `x_1` / `x_n`).
///
/// Exactly `⌊n·q⌋` entries are then `≤` the quantile when values are distinct.
pub fn quantile<T: Scalar>(values: &[T], q: T) -> Result<T> {
    if values.is_empty() {
        return Err(Error::invalid("quantile of an empty set"));
    }
    if !(q > T::zero() && q < T::one()) {
        return Err(Error::invalid(format!("quantile level must lie in (0,1), got {q}")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Numerical("quantile input contains NaN".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN filtered above"));
    let n = sorted.len();
    let h = T::from_usize(n).unwrap() * q;
    let lo = h.floor();
    let frac = h - lo;
    let lo = lo.to_usize().unwrap_or(0);
    if lo == 0 {
        return Ok(sorted[0]);
    }
    if lo >= n {
        return Ok(sorted[n - 1]);
    }
    let (a, b) = (sorted[lo - 1], sorted[lo]);
    Ok(a + frac * (b - a))
}

/// λ derived from the `q`-quantile of `|d|` under `rule`.
pub fn quantile_lambda<T: Scalar>(d: &[T], q: T, rule: LambdaRule) -> Result<T> {
    let magnitudes: Vec<T> = d.iter().map(|v| v.abs()).collect();
    let qv = quantile(&magnitudes, q)?;
    Ok(match rule {
        LambdaRule::ThresholdIsQuantile => qv * qv / T::c(2.0),
        LambdaRule::LambdaIsQuantile => qv,
    })
}
