//! Second-order moments of the first-order linear model.

use crate::error::{invalid, Error, Result};
use crate::model::{coefficient_matrices, stationary_mean, Link, ModelSpec, ParameterVector};
use crate::weights::WeightMatrixSet;
use nalgebra::{DMatrix, DVector};

/// Above this p the vec/Kronecker system (p² × p²) is replaced by doubling.
const KRONECKER_MAX_P: usize = 30;

struct FirstOrder {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    sigma: DMatrix<f64>,
}

fn first_order(
    theta: &ParameterVector,
    spec: &ModelSpec,
    w: &WeightMatrixSet,
    sigma: Option<&DMatrix<f64>>,
) -> Result<FirstOrder> {
    if spec.link != Link::Linear {
        return Err(Error::Unsupported(
            "closed-form autocovariance exists only for the linear link".into(),
        ));
    }
    if spec.q() > 1 || spec.r() != 1 {
        return Err(Error::Unsupported(format!(
            "closed-form autocovariance needs q <= 1 and r = 1, got q = {}, r = {}",
            spec.q(),
            spec.r()
        )));
    }
    let p = w.p();
    let sigma = match sigma {
        Some(s) if s.nrows() == p && s.ncols() == p => s.clone(),
        Some(s) => return invalid(format!("Sigma is {}x{}, expected {p}x{p}", s.nrows(), s.ncols())),
        None => DMatrix::from_diagonal(&stationary_mean(theta, spec, w, None)?),
    };
    let (a, mut b) = coefficient_matrices(theta, spec, w)?;
    Ok(FirstOrder {
        a: a.into_iter().next().unwrap_or_else(|| DMatrix::zeros(p, p)),
        b: b.remove(0),
        sigma,
    })
}

/// Γ(0) via the vec identity with an explicit Kronecker system (small p only).
pub fn gamma0_kronecker(
    theta: &ParameterVector,
    spec: &ModelSpec,
    w: &WeightMatrixSet,
    sigma: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let f = first_order(theta, spec, w, sigma)?;
    let p = w.p();
    let c = &f.a + &f.b;
    let lhs = DMatrix::<f64>::identity(p * p, p * p) - c.kronecker(&c);
    let q = &f.b * &f.sigma * f.b.transpose();
    let rhs = DVector::from_column_slice(q.as_slice());
    let x = lhs.lu().solve(&rhs).ok_or_else(|| Error::Singular {
        context: "I - C kron C".into(),
        condition: f64::INFINITY,
    })?;
    Ok(&f.sigma + DMatrix::from_column_slice(p, p, x.as_slice()))
}

/// Solves X = C X Cᵀ + Q by repeated squaring of C.
fn stein_doubling(c: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut x = q.clone();
    let mut ak = c.clone();
    for _ in 0..64 {
        let inc = &ak * &x * ak.transpose();
        x += &inc;
        ak = &ak * &ak;
        let scale = x.abs().max().max(f64::MIN_POSITIVE);
        if inc.abs().max() <= 1e-16 * scale && ak.abs().max() < 1e-8 {
            return Ok(x);
        }
        if !ak.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(Error::Numerical("autocovariance recursion did not converge (C not stable)".into()))
}

/// Lag-h autocovariance Γ(h) of the linear first-order model (q ≤ 1, r = 1).
///
/// `sigma` defaults to `diag(μ)`, the conditionally uncorrelated case.
pub fn autocovariance(
    theta: &ParameterVector,
    spec: &ModelSpec,
    w: &WeightMatrixSet,
    sigma: Option<&DMatrix<f64>>,
    h: usize,
) -> Result<DMatrix<f64>> {
    let g0 = if w.p() <= KRONECKER_MAX_P {
        gamma0_kronecker(theta, spec, w, sigma)?
    } else {
        let f = first_order(theta, spec, w, sigma)?;
        let q = &f.b * &f.sigma * f.b.transpose();
        &f.sigma + stein_doubling(&(&f.a + &f.b), &q)?
    };
    if h == 0 {
        return Ok(g0);
    }
    let f = first_order(theta, spec, w, sigma)?;
    let c = &f.a + &f.b;
    let mut g = &c * &g0 - &f.a * &f.sigma;
    for _ in 1..h {
        g = &c * g;
    }
    Ok(g)
}

/// Γ(0) by doubling regardless of p; exposed to cross-check the Kronecker route.
pub fn gamma0_doubling(
    theta: &ParameterVector,
    spec: &ModelSpec,
    w: &WeightMatrixSet,
    sigma: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let f = first_order(theta, spec, w, sigma)?;
    let q = &f.b * &f.sigma * f.b.transpose();
    Ok(&f.sigma + stein_doubling(&(&f.a + &f.b), &q)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Delta, InterceptKind};
    use crate::weights::GridSpec;

    fn scalar(alpha: f64, beta: f64) -> (ModelSpec, ParameterVector, WeightMatrixSet) {
        (
            ModelSpec::new(Link::Linear, InterceptKind::Homogeneous, vec![0], vec![0], vec![]),
            ParameterVector { delta: Delta::Scalar(1.0), alpha: vec![vec![alpha]], beta: vec![vec![beta]], gamma: vec![] },
            WeightMatrixSet::identity(1),
        )
    }

    #[test]
    fn scalar_closed_form() {
        let (spec, th, w) = scalar(0.0, 0.5);
        let sigma = DMatrix::from_element(1, 1, 2.0);
        let g0 = autocovariance(&th, &spec, &w, Some(&sigma), 0).unwrap()[(0, 0)];
        let g1 = autocovariance(&th, &spec, &w, Some(&sigma), 1).unwrap()[(0, 0)];
        assert!((g0 - 8.0 / 3.0).abs() < 1e-14);
        assert!((g1 - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn no_dynamics_gives_sigma() {
        let (spec, th, w) = scalar(0.0, 0.0);
        let sigma = DMatrix::from_element(1, 1, 3.0);
        assert_eq!(autocovariance(&th, &spec, &w, Some(&sigma), 0).unwrap()[(0, 0)], 3.0);
        assert_eq!(autocovariance(&th, &spec, &w, Some(&sigma), 2).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn doubling_agrees_with_kronecker() {
        let spec = ModelSpec::new(Link::Linear, InterceptKind::Homogeneous, vec![1], vec![1], vec![]);
        let th = ParameterVector {
            delta: Delta::Scalar(5.0),
            alpha: vec![vec![0.2, 0.1]],
            beta: vec![vec![0.2, 0.1]],
            gamma: vec![],
        };
        let w = WeightMatrixSet::grid_4nn(GridSpec { n: 4 }).unwrap();
        let k = gamma0_kronecker(&th, &spec, &w, None).unwrap();
        let d = gamma0_doubling(&th, &spec, &w, None).unwrap();
        assert!((&k - &d).abs().max() < 1e-10 * k.abs().max());
    }

    #[test]
    fn recursion_for_higher_lags() {
        let spec = ModelSpec::new(Link::Linear, InterceptKind::Homogeneous, vec![1], vec![1], vec![]);
        let th = ParameterVector {
            delta: Delta::Scalar(5.0),
            alpha: vec![vec![0.2, 0.1]],
            beta: vec![vec![0.2, 0.1]],
            gamma: vec![],
        };
        let w = WeightMatrixSet::grid_4nn(GridSpec { n: 3 }).unwrap();
        let (a, b) = coefficient_matrices(&th, &spec, &w).unwrap();
        let c = &a[0] + &b[0];
        for h in 2..=5 {
            let prev = autocovariance(&th, &spec, &w, None, h - 1).unwrap();
            let cur = autocovariance(&th, &spec, &w, None, h).unwrap();
            assert!((&cur - &c * &prev).abs().max() < 1e-12);
        }
    }

    #[test]
    fn unsupported_orders_and_link() {
        let spec = ModelSpec::new(Link::Linear, InterceptKind::Homogeneous, vec![], vec![0, 0], vec![]);
        let th = ParameterVector { delta: Delta::Scalar(1.0), alpha: vec![], beta: vec![vec![0.1], vec![0.1]], gamma: vec![] };
        let w = WeightMatrixSet::identity(1);
        assert!(matches!(autocovariance(&th, &spec, &w, None, 0), Err(Error::Unsupported(_))));
        let (spec, th, w) = scalar(0.1, 0.1);
        let log = ModelSpec { link: Link::LogLinear, ..spec };
        assert!(matches!(autocovariance(&th, &log, &w, None, 0), Err(Error::Unsupported(_))));
    }
}
