//! One-step-ahead prediction and forecast metrics.

use crate::error::{dim, invalid, Result};
use crate::estimate::FitResult;
use crate::likelihood::{filter_intensity, InitStrategy};
use crate::model::{CountPanel, CovariatePanel, ParameterVector};
use crate::recursion::linear_predictor;
use crate::weights::WeightMatrixSet;
use serde::{Deserialize, Serialize};

/// λ̂_{T+1} from a history Y_0…Y_T. Covariates, when the model has them, must cover T+1.
pub fn one_step_forecast(
    fit: &FitResult,
    w: &WeightMatrixSet,
    history: &CountPanel,
    x: Option<&CovariatePanel>,
) -> Result<Vec<f64>> {
    forecast_at(&fit.theta, fit, w, history, x, &fit.init)
}

/// As [`one_step_forecast`] with an explicit θ and initialization.
pub fn forecast_at(
    theta: &ParameterVector,
    fit: &FitResult,
    w: &WeightMatrixSet,
    history: &CountPanel,
    x: Option<&CovariatePanel>,
    init: &InitStrategy,
) -> Result<Vec<f64>> {
    let spec = &fit.spec;
    let len = history.len();
    if spec.m() > 0 && x.is_none_or(|x| x.len() <= len) {
        return invalid(format!("covariate row for forecast time {len} is missing"));
    }
    let state = filter_intensity(theta, spec, w, history, x, init)?;
    let p = w.p();
    let link = spec.link;
    let fy: Vec<Vec<f64>> = (1..=spec.r()).map(|j| history.row(len - j).iter().map(|&v| link.count_transform(v)).collect()).collect();
    let el: Vec<&[f64]> = (1..=spec.q()).map(|i| state.eta(len - i)).collect();
    let fl: Vec<&[f64]> = fy.iter().map(Vec::as_slice).collect();
    let mut out = vec![0.0; p];
    linear_predictor(theta, w, &el, &fl, x.filter(|_| spec.m() > 0).map(|x| (x, len)), &mut out);
    Ok(out.into_iter().map(|e| link.intensity(e)).collect())
}

/// Rolling one-step predictions λ̂_t for t = split…T with θ̂ fixed, refiltering on the
/// observed values. Returned time-major.
pub fn rolling_forecast(
    fit: &FitResult,
    w: &WeightMatrixSet,
    y: &CountPanel,
    x: Option<&CovariatePanel>,
    split: usize,
) -> Result<Vec<f64>> {
    let t0 = fit.spec.first_time();
    if split < t0 || split >= y.len() {
        return invalid(format!("forecast split must lie in [{t0}, {}]", y.len() - 1));
    }
    let state = filter_intensity(&fit.theta, &fit.spec, w, y, x, &fit.init)?;
    Ok((split..y.len()).flat_map(|t| state.intensity(t)).collect())
}

fn aligned(y: &CountPanel, lambda_hat: &[f64], skip: usize) -> Result<()> {
    if lambda_hat.len() != y.as_slice().len() {
        return dim(format!("{} predictions for {} observations", lambda_hat.len(), y.as_slice().len()));
    }
    if skip >= y.len() {
        return invalid("no time points left after the burn-in");
    }
    Ok(())
}

/// Mean squared prediction error over time points after the first `r_burn`.
pub fn mspe(y: &CountPanel, lambda_hat: &[f64], r_burn: usize) -> Result<f64> {
    aligned(y, lambda_hat, r_burn)?;
    let start = r_burn * y.p();
    let n = (y.as_slice().len() - start) as f64;
    Ok(y.as_slice()[start..].iter().zip(&lambda_hat[start..]).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n)
}

pub fn mae(y: &CountPanel, lambda_hat: &[f64]) -> Result<f64> {
    aligned(y, lambda_hat, 0)?;
    let n = y.as_slice().len() as f64;
    Ok(y.as_slice().iter().zip(lambda_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

/// Poisson log-density without the log y! term; 0·log 0 is taken as 0.
fn pois_kernel(y: f64, lambda: f64) -> f64 {
    (if y > 0.0 { y * lambda.ln() } else { 0.0 }) - lambda
}

/// Share of the null-model deviance explained by `lambda_hat`, the null being the grand mean.
pub fn explained_deviance(y: &CountPanel, lambda_hat: &[f64]) -> Result<f64> {
    aligned(y, lambda_hat, 0)?;
    if lambda_hat.iter().any(|l| !(*l > 0.0)) {
        return invalid("predictions must be positive");
    }
    let ys = y.as_slice();
    let ybar = y.mean();
    let (mut model, mut null) = (0.0, 0.0);
    for (&v, &l) in ys.iter().zip(lambda_hat) {
        let sat = pois_kernel(v, v);
        model += pois_kernel(v, l) - sat;
        null += pois_kernel(v, ybar) - sat;
    }
    if null == 0.0 {
        return Ok(if model == 0.0 { 1.0 } else { f64::NEG_INFINITY });
    }
    Ok(1.0 - model / null)
}

/// (θ̂ − θ)′(θ̂ − θ)/K.
pub fn mse_params(theta_hat: &[f64], theta_true: &[f64]) -> Result<f64> {
    if theta_hat.len() != theta_true.len() || theta_hat.is_empty() {
        return dim("parameter vectors must have equal, nonzero length");
    }
    Ok(theta_hat.iter().zip(theta_true).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / theta_hat.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastMetrics {
    pub mspe: f64,
    pub mae: f64,
    pub explained_deviance: f64,
}

pub fn metrics(y: &CountPanel, lambda_hat: &[f64]) -> Result<ForecastMetrics> {
    Ok(ForecastMetrics { mspe: mspe(y, lambda_hat, 0)?, mae: mae(y, lambda_hat)?, explained_deviance: explained_deviance(y, lambda_hat)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(v: &[f64]) -> CountPanel {
        CountPanel::new(1, v.to_vec()).unwrap()
    }

    #[test]
    fn single_cell_errors() {
        assert_eq!(mspe(&panel(&[3.0]), &[1.0], 0).unwrap(), 4.0);
        assert_eq!(mae(&panel(&[3.0]), &[1.0]).unwrap(), 2.0);
        assert_eq!(mspe(&panel(&[3.0, 5.0]), &[3.0, 5.0], 0).unwrap(), 0.0);
        assert_eq!(mspe(&panel(&[9.0, 5.0]), &[0.0, 4.0], 1).unwrap(), 1.0);
    }

    #[test]
    fn deviance_limits() {
        let y = CountPanel::new(2, vec![0.0, 2.0, 3.0, 1.0]).unwrap();
        assert_eq!(explained_deviance(&y, &[1e-300, 2.0, 3.0, 1.0]).unwrap(), 1.0);
        assert!(explained_deviance(&y, &[1.5; 4]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn parameter_mse() {
        assert_eq!(mse_params(&[1.0, 0.0, 0.0, 0.0], &[0.0; 4]).unwrap(), 0.25);
        assert!(mse_params(&[1.0], &[1.0, 2.0]).is_err());
    }
}
