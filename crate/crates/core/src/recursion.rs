//! The intensity recursion shared by the simulator, the filter and the forecaster.
//!
//! Keeping one implementation makes the three agree bit for bit at equal inputs.

use crate::model::{CovariatePanel, ParameterVector};
use crate::weights::WeightMatrixSet;

/// Writes the linear predictor (λ for the linear link, ν for log-linear) into `out`.
///
/// `eta_lags[i-1]` is η_{t−i}, `fy_lags[j-1]` is f(Y_{t−j}) with f the count transform.
/// Covariates enter when `x` is `Some((panel, t))`.
pub(crate) fn linear_predictor(
    theta: &ParameterVector,
    w: &WeightMatrixSet,
    eta_lags: &[&[f64]],
    fy_lags: &[&[f64]],
    x: Option<(&CovariatePanel, usize)>,
    out: &mut [f64],
) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = theta.delta.value(i);
    }
    for (coefs, v) in theta.alpha.iter().zip(eta_lags) {
        for (l, &c) in coefs.iter().enumerate() {
            w.matrix(l).apply_add(c, v, out);
        }
    }
    for (coefs, v) in theta.beta.iter().zip(fy_lags) {
        for (l, &c) in coefs.iter().enumerate() {
            w.matrix(l).apply_add(c, v, out);
        }
    }
    if let Some((xp, t)) = x {
        for (k, coefs) in theta.gamma.iter().enumerate() {
            let v = xp.slice(k, t);
            for (l, &c) in coefs.iter().enumerate() {
                w.matrix(l).apply_add(c, v, out);
            }
        }
    }
}
