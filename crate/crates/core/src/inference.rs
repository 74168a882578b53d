//! Wald tests and QIC-based model comparison.

use crate::error::{dim, invalid, Error, Result};
use crate::estimate::FitResult;
use crate::likelihood::symmetric_inverse;
use crate::model::Link;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub boundary_adjusted: bool,
}

impl WaldResult {
    pub fn rejects(&self, level: f64) -> bool {
        self.p_value < level
    }
}

/// Upper tail P(χ²_df > x).
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if !x.is_finite() {
        return 0.0;
    }
    gamma_ur(df as f64 / 2.0, x / 2.0).clamp(0.0, 1.0)
}

fn matrix_rank(c: &DMatrix<f64>) -> usize {
    let sv = c.singular_values();
    let top = sv.amax();
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > 1e-10 * top).count()
}

/// Tests H₀: Cθ = c₀ with the sandwich covariance and a χ²(rank C) reference.
pub fn wald_test(fit: &FitResult, c: &DMatrix<f64>, c0: &DVector<f64>) -> Result<WaldResult> {
    let k = fit.n_params();
    if c.ncols() != k || c.nrows() != c0.len() || c.nrows() == 0 {
        return dim(format!("contrast is {}x{} with {} targets; model has K = {k}", c.nrows(), c.ncols(), c0.len()));
    }
    let theta = DVector::from_vec(fit.theta.pack());
    let diff = c * theta - c0;
    let v = c * &fit.covariance * c.transpose();
    let v_inv = symmetric_inverse(&((&v + v.transpose()) * 0.5), "C Sigma C'")?;
    let statistic = (diff.transpose() * v_inv * &diff)[(0, 0)].max(0.0);
    let df = matrix_rank(c);
    Ok(WaldResult { statistic, df, p_value: chi2_sf(statistic, df), boundary_adjusted: false })
}

/// H₀: θₖ = 0. For the linear link the alternative is one-sided at the boundary, so the
/// reference is the ½χ²₀ + ½χ²₁ mixture and the p-value is halved.
pub fn single_param_test(fit: &FitResult, index: usize) -> Result<WaldResult> {
    let k = fit.n_params();
    if index >= k {
        return invalid(format!("parameter index {index} out of range for K = {k}"));
    }
    let var = fit.covariance[(index, index)];
    if !(var > 0.0) {
        return Err(Error::Singular { context: format!("variance of {}", fit.param_names[index]), condition: f64::INFINITY });
    }
    let th = fit.theta.pack()[index];
    let statistic = th * th / var;
    let tail = chi2_sf(statistic, 1);
    Ok(match fit.spec.link {
        Link::Linear => WaldResult { statistic, df: 1, p_value: 0.5 * tail, boundary_adjusted: true },
        Link::LogLinear => WaldResult { statistic, df: 1, p_value: tail, boundary_adjusted: false },
    })
}

/// Boundary test of several parameters jointly at zero.
///
/// Only the one-parameter mixture is available; several linear-link parameters at the
/// boundary would need a chi-bar-squared reference.
pub fn boundary_test(fit: &FitResult, indices: &[usize]) -> Result<WaldResult> {
    match indices {
        [] => invalid("no parameters to test"),
        [k] => single_param_test(fit, *k),
        _ if fit.spec.link == Link::Linear => Err(Error::Unsupported(
            "chi-bar-squared reference for joint boundary hypotheses".into(),
        )),
        _ => {
            let k = fit.n_params();
            let mut c = DMatrix::zeros(indices.len(), k);
            for (r, &i) in indices.iter().enumerate() {
                if i >= k {
                    return invalid(format!("parameter index {i} out of range for K = {k}"));
                }
                c[(r, i)] = 1.0;
            }
            wald_test(fit, &c, &DVector::zeros(indices.len()))
        }
    }
}

/// −2ℓ + 2·trace(ĜĤ⁻¹).
pub fn qic_value(loglik: f64, h: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<f64> {
    let h_inv = symmetric_inverse(h, "H")?;
    Ok(-2.0 * loglik + 2.0 * (g * h_inv).trace())
}

pub fn qic(fit: &FitResult) -> Result<f64> {
    qic_value(fit.loglik, &fit.h, &fit.g)
}

/// Indices of `fits` ordered by ascending QIC; near-ties go to the smaller model, then input order.
pub fn compare_models(fits: &[&FitResult]) -> Result<Vec<usize>> {
    if let Some(first) = fits.first() {
        if let Some(bad) = fits.iter().position(|f| f.data_fingerprint != first.data_fingerprint) {
            return invalid(format!("fit {bad} was estimated on a different dataset"));
        }
    }
    let mut order: Vec<usize> = (0..fits.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (fits[a], fits[b]);
        if (fa.qic - fb.qic).abs() < 1e-9 {
            fa.n_params().cmp(&fb.n_params()).then(a.cmp(&b))
        } else {
            fa.qic.total_cmp(&fb.qic)
        }
    });
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi2_reference_points() {
        assert!((chi2_sf(3.841458820694124, 1) - 0.05).abs() < 1e-12);
        assert_eq!(chi2_sf(0.0, 3), 1.0);
        // df = 2 is exponential: P = exp(−x/2)
        assert!((chi2_sf(4.0, 2) - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn qic_reduces_to_aic_when_g_equals_h() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        assert!((qic_value(-10.0, &h, &h).unwrap() - 24.0).abs() < 1e-12);
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 0.0]));
        let id = DMatrix::identity(2, 2);
        assert!((qic_value(0.0, &id, &g).unwrap() - 10.0).abs() < 1e-12);
    }
}
