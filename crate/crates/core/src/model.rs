//! Model specification, parameter packing, panels and pre-flight checks.

use crate::error::{dim, invalid, Error, Result};
use crate::validation::ValidationReport;
use crate::weights::WeightMatrixSet;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Linear,
    LogLinear,
}

impl Link {
    /// Transformation applied to lagged counts: identity or `log(y + 1)`.
    #[inline]
    pub fn count_transform(self, y: f64) -> f64 {
        match self {
            Link::Linear => y,
            Link::LogLinear => y.ln_1p(),
        }
    }

    /// Maps the linear predictor to the intensity.
    #[inline]
    pub fn intensity(self, eta: f64) -> f64 {
        match self {
            Link::Linear => eta,
            Link::LogLinear => eta.exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterceptKind {
    Homogeneous,
    Inhomogeneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationarityCriterion {
    #[default]
    CoefficientSum,
    TauAdjusted,
}

/// Link, intercept structure and the spatial order at every temporal lag.
///
/// `a[i-1]` is the spatial order of feedback lag `i`, `b[j-1]` that of observation
/// lag `j`, and `s[k-1]` that of covariate `k`. Their lengths are q, r and m.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub link: Link,
    pub intercept: InterceptKind,
    #[serde(default)]
    pub a: Vec<usize>,
    #[serde(default)]
    pub b: Vec<usize>,
    #[serde(default)]
    pub s: Vec<usize>,
}

impl ModelSpec {
    pub fn new(link: Link, intercept: InterceptKind, a: Vec<usize>, b: Vec<usize>, s: Vec<usize>) -> Self {
        Self { link, intercept, a, b, s }
    }

    pub fn q(&self) -> usize {
        self.a.len()
    }

    pub fn r(&self) -> usize {
        self.b.len()
    }

    pub fn m(&self) -> usize {
        self.s.len()
    }

    pub fn n_delta(&self, p: usize) -> usize {
        match self.intercept {
            InterceptKind::Homogeneous => 1,
            InterceptKind::Inhomogeneous => p,
        }
    }

    pub fn n_alpha(&self) -> usize {
        self.a.iter().map(|x| x + 1).sum()
    }

    pub fn n_beta(&self) -> usize {
        self.b.iter().map(|x| x + 1).sum()
    }

    pub fn n_gamma(&self) -> usize {
        self.s.iter().map(|x| x + 1).sum()
    }

    /// Dimension K of the packed parameter vector.
    pub fn n_params(&self, p: usize) -> usize {
        self.n_delta(p) + self.n_alpha() + self.n_beta() + self.n_gamma()
    }

    pub fn max_order(&self) -> usize {
        self.a.iter().chain(&self.b).chain(&self.s).copied().max().unwrap_or(0)
    }

    /// First time index whose intensity enters the likelihood.
    pub fn first_time(&self) -> usize {
        self.q().max(self.r()).max(1)
    }

    /// Structural checks against a weight set (not identifiability).
    pub fn check_weights(&self, w: &WeightMatrixSet) -> Result<()> {
        let mo = self.max_order();
        if mo > w.max_order() {
            return dim(format!(
                "model uses spatial order {mo} but the weight set only reaches order {}",
                w.max_order()
            ));
        }
        Ok(())
    }

    pub fn layout(&self, p: usize) -> ParamLayout {
        ParamLayout::new(self, p)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let link = match self.link {
            Link::Linear => "linear",
            Link::LogLinear => "log-linear",
        };
        let icp = match self.intercept {
            InterceptKind::Homogeneous => "homogeneous",
            InterceptKind::Inhomogeneous => "inhomogeneous",
        };
        write!(f, "{link} {icp} (a=[{}], b=[{}], s=[{}])", join(&self.a), join(&self.b), join(&self.s))
    }
}

/// Index arithmetic for the packed order δ, α(i,ℓ), β(j,ℓ), γ(k,ℓ).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub n_delta: usize,
    alpha_start: Vec<usize>,
    beta_start: Vec<usize>,
    gamma_start: Vec<usize>,
    pub k: usize,
}

impl ParamLayout {
    pub fn new(spec: &ModelSpec, p: usize) -> Self {
        let n_delta = spec.n_delta(p);
        let mut at = n_delta;
        let mut starts = |orders: &[usize]| {
            orders
                .iter()
                .map(|o| {
                    let s = at;
                    at += o + 1;
                    s
                })
                .collect::<Vec<_>>()
        };
        let alpha_start = starts(&spec.a);
        let beta_start = starts(&spec.b);
        let gamma_start = starts(&spec.s);
        Self {
            n_delta,
            alpha_start,
            beta_start,
            gamma_start,
            k: at,
        }
    }

    /// Index of α for lag `i` (1-based) and order `l`.
    pub fn alpha(&self, i: usize, l: usize) -> usize {
        self.alpha_start[i - 1] + l
    }

    pub fn beta(&self, j: usize, l: usize) -> usize {
        self.beta_start[j - 1] + l
    }

    pub fn gamma(&self, k: usize, l: usize) -> usize {
        self.gamma_start[k - 1] + l
    }

    /// Range of the α and β coefficients (the stationarity block).
    pub fn ar_range(&self) -> std::ops::Range<usize> {
        let end = self.gamma_start.first().copied().unwrap_or(self.k);
        self.n_delta..end
    }

    pub fn gamma_range(&self) -> std::ops::Range<usize> {
        self.gamma_start.first().copied().unwrap_or(self.k)..self.k
    }

    /// Human-readable name such as `beta[1][0]` (lag 1-based, order 0-based).
    pub fn name(&self, idx: usize) -> String {
        if idx < self.n_delta {
            return if self.n_delta == 1 {
                "delta".into()
            } else {
                format!("delta[{}]", idx + 1)
            };
        }
        let groups = [("alpha", &self.alpha_start), ("beta", &self.beta_start), ("gamma", &self.gamma_start)];
        let all: Vec<(&str, usize, usize)> = groups
            .iter()
            .flat_map(|(label, starts)| starts.iter().enumerate().map(move |(n, &s)| (*label, n + 1, s)))
            .collect();
        for (g, &(label, lag, start)) in all.iter().enumerate() {
            let end = all.get(g + 1).map_or(self.k, |x| x.2);
            if (start..end).contains(&idx) {
                return format!("{label}[{lag}][{}]", idx - start);
            }
        }
        format!("theta[{idx}]")
    }
}

/// Intercept: scalar δ₀ or one value per location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Delta {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Delta {
    pub fn value(&self, i: usize) -> f64 {
        match self {
            Delta::Scalar(d) => *d,
            Delta::Vector(v) => v[i],
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Delta::Scalar(_) => 1,
            Delta::Vector(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Structured parameters. `alpha[i-1][l]` is α for lag i and spatial order l.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub delta: Delta,
    #[serde(default)]
    pub alpha: Vec<Vec<f64>>,
    #[serde(default)]
    pub beta: Vec<Vec<f64>>,
    #[serde(default)]
    pub gamma: Vec<Vec<f64>>,
}

impl ParameterVector {
    pub fn pack(&self) -> Vec<f64> {
        let head = match &self.delta {
            Delta::Scalar(d) => vec![*d],
            Delta::Vector(v) => v.clone(),
        };
        head.into_iter()
            .chain(self.alpha.iter().flatten().copied())
            .chain(self.beta.iter().flatten().copied())
            .chain(self.gamma.iter().flatten().copied())
            .collect()
    }

    pub fn unpack(flat: &[f64], spec: &ModelSpec, p: usize) -> Result<Self> {
        let k = spec.n_params(p);
        if flat.len() != k {
            return dim(format!("parameter vector has length {}, model needs {k}", flat.len()));
        }
        let nd = spec.n_delta(p);
        let delta = match spec.intercept {
            InterceptKind::Homogeneous => Delta::Scalar(flat[0]),
            InterceptKind::Inhomogeneous => Delta::Vector(flat[..nd].to_vec()),
        };
        let mut rest = &flat[nd..];
        let mut take = |orders: &[usize]| {
            orders
                .iter()
                .map(|o| {
                    let (h, t) = rest.split_at(o + 1);
                    rest = t;
                    h.to_vec()
                })
                .collect::<Vec<_>>()
        };
        let alpha = take(&spec.a);
        let beta = take(&spec.b);
        let gamma = take(&spec.s);
        Ok(Self { delta, alpha, beta, gamma })
    }

    /// Checks shapes against `spec` and the sign restriction of the linear link.
    pub fn check(&self, spec: &ModelSpec, p: usize) -> Result<()> {
        let nd = spec.n_delta(p);
        match (&self.delta, spec.intercept) {
            (Delta::Scalar(_), InterceptKind::Homogeneous) => {}
            (Delta::Vector(v), InterceptKind::Inhomogeneous) if v.len() == nd => {}
            _ => return dim(format!("intercept does not match a {:?} intercept over {p} locations", spec.intercept)),
        }
        let shape_ok = |v: &[Vec<f64>], o: &[usize]| v.len() == o.len() && v.iter().zip(o).all(|(x, o)| x.len() == o + 1);
        if !shape_ok(&self.alpha, &spec.a) || !shape_ok(&self.beta, &spec.b) || !shape_ok(&self.gamma, &spec.s) {
            return dim("coefficient lists do not match the model orders");
        }
        let flat = self.pack();
        if flat.iter().any(|x| !x.is_finite()) {
            return invalid("parameters must be finite");
        }
        if spec.link == Link::Linear {
            if let Some((i, x)) = flat.iter().enumerate().find(|(_, x)| **x < 0.0) {
                return invalid(format!(
                    "linear link requires nonnegative parameters; {} = {x}",
                    spec.layout(p).name(i)
                ));
            }
        }
        Ok(())
    }

    /// Σ|α| + Σ|β|.
    pub fn ar_abs_sum(&self) -> f64 {
        self.alpha.iter().chain(&self.beta).flatten().map(|x| x.abs()).sum()
    }
}

/// Observed counts, stored time-major: `row(t)` is the p-vector Y_t, t = 0…T.
#[derive(Debug, Clone, PartialEq)]
pub struct CountPanel {
    p: usize,
    data: Vec<f64>,
}

impl CountPanel {
    /// `data` holds `(T+1)·p` values, time-major.
    pub fn new(p: usize, data: Vec<f64>) -> Result<Self> {
        if p == 0 || data.len() % p != 0 || data.is_empty() {
            return dim(format!("{} values cannot form a panel over {p} locations", data.len()));
        }
        if let Some(pos) = data.iter().position(|y| !(y.is_finite() && *y >= 0.0 && y.fract() == 0.0)) {
            return invalid(format!(
                "count at time {} location {} is {}; counts must be nonnegative integers",
                pos / p,
                pos % p,
                data[pos]
            ));
        }
        Ok(Self { p, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return dim("ragged count rows");
        }
        Self::new(p, rows.concat())
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of time points, T + 1.
    pub fn len(&self) -> usize {
        self.data.len() / self.p
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Last time index T.
    pub fn t_max(&self) -> usize {
        self.len() - 1
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.p..(t + 1) * self.p]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Time points `range` as a new panel.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.len() || range.is_empty() {
            return dim(format!("time range {range:?} outside panel of length {}", self.len()));
        }
        Ok(Self {
            p: self.p,
            data: self.data[range.start * self.p..range.end * self.p].to_vec(),
        })
    }

    /// Applies a location permutation: new location `i` is old location `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let data = (0..self.len())
            .flat_map(|t| perm.iter().map(move |&o| self.row(t)[o]))
            .collect();
        Self { p: self.p, data }
    }
}

/// m covariate processes over the same p × (T+1) grid. `slice(k, t)` is X_{k,t}.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariatePanel {
    m: usize,
    p: usize,
    data: Vec<f64>,
}

impl CovariatePanel {
    /// `data` is ordered by time, then covariate, then location.
    pub fn new(m: usize, p: usize, data: Vec<f64>) -> Result<Self> {
        if m == 0 || p == 0 || data.len() % (m * p) != 0 || data.is_empty() {
            return dim(format!("{} values cannot form {m} covariates over {p} locations", data.len()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return invalid("covariate values must be finite");
        }
        Ok(Self { m, p, data })
    }

    /// Stacks per-covariate panels given as `[k][t][i]`.
    pub fn from_processes(procs: &[Vec<Vec<f64>>]) -> Result<Self> {
        let m = procs.len();
        let len = procs.first().map_or(0, Vec::len);
        let p = procs.first().and_then(|x| x.first()).map_or(0, Vec::len);
        if procs.iter().any(|k| k.len() != len || k.iter().any(|r| r.len() != p)) {
            return dim("covariate processes have inconsistent shapes");
        }
        let mut data = Vec::with_capacity(m * p * len);
        for t in 0..len {
            for k in procs {
                data.extend_from_slice(&k[t]);
            }
        }
        Self::new(m, p, data)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.m * self.p)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// X_{k,t} with `k` 0-based.
    pub fn slice(&self, k: usize, t: usize) -> &[f64] {
        let at = (t * self.m + k) * self.p;
        &self.data[at..at + self.p]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn slice_time(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.len() || range.is_empty() {
            return dim(format!("time range {range:?} outside covariate panel of length {}", self.len()));
        }
        let w = self.m * self.p;
        Self::new(self.m, self.p, self.data[range.start * w..range.end * w].to_vec())
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for t in 0..self.len() {
            for k in 0..self.m {
                data.extend(perm.iter().map(|&o| self.slice(k, t)[o]));
            }
        }
        Self { m: self.m, p: self.p, data }
    }
}

/// Checks that covariates, when required, are present and aligned with Y.
pub(crate) fn check_covariates(spec: &ModelSpec, p: usize, len: usize, x: Option<&CovariatePanel>) -> Result<()> {
    match (spec.m(), x) {
        (0, _) => Ok(()),
        (m, None) => invalid(format!("model has {m} covariates but none were supplied")),
        (m, Some(x)) => {
            if x.m() != m || x.p() != p {
                return dim(format!("covariate panel has m={}, p={}; model needs m={m}, p={p}", x.m(), x.p()));
            }
            if x.len() < len {
                return dim(format!("covariate panel covers {} time points, data needs {len}", x.len()));
            }
            if spec.link == Link::Linear && x.min() < 0.0 {
                return invalid("linear link requires nonnegative covariate values");
            }
            Ok(())
        }
    }
}

/// `A_i = Σ_ℓ α_iℓ W⁽ℓ⁾` and `B_j = Σ_ℓ β_jℓ W⁽ℓ⁾` as dense matrices.
pub fn coefficient_matrices(
    theta: &ParameterVector,
    spec: &ModelSpec,
    w: &WeightMatrixSet,
) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    spec.check_weights(w)?;
    theta.check_shapes(spec, w.p())?;
    let dense: Vec<DMatrix<f64>> = (0..=spec.max_order()).map(|l| w.matrix(l).to_dense()).collect();
    let combine = |coefs: &Vec<f64>| {
        coefs
            .iter()
            .enumerate()
            .fold(DMatrix::zeros(w.p(), w.p()), |acc, (l, c)| acc + &dense[l] * *c)
    };
    Ok((theta.alpha.iter().map(combine).collect(), theta.beta.iter().map(combine).collect()))
}

impl ParameterVector {
    fn check_shapes(&self, spec: &ModelSpec, p: usize) -> Result<()> {
        match self.check(spec, p) {
            Err(Error::InvalidInput(_)) => Ok(()),
            other => other,
        }
    }
}

/// Positive margin means the sufficient stationarity condition holds.
pub fn stationarity_margin(
    theta: &ParameterVector,
    w: &WeightMatrixSet,
    criterion: StationarityCriterion,
) -> f64 {
    let bound = match criterion {
        StationarityCriterion::CoefficientSum => 1.0,
        StationarityCriterion::TauAdjusted => 1.0 / w.column_sum_norm_tau().sqrt(),
    };
    bound - theta.ar_abs_sum()
}

/// Spectral norm of `Σ_i (|A_i| + |B_i|)`; below 1 is the sharper sufficient condition.
pub fn spectral_stability_norm(theta: &ParameterVector, spec: &ModelSpec, w: &WeightMatrixSet) -> Result<f64> {
    let (a, b) = coefficient_matrices(theta, spec, w)?;
    let p = w.p();
    let total = a.iter().chain(&b).fold(DMatrix::zeros(p, p), |acc, m| acc + m.abs());
    Ok(total.singular_values().iter().copied().fold(0.0, f64::max))
}

/// Pre-flight identifiability checks. `y` enables the design-rank test.
pub fn check_identifiability(
    spec: &ModelSpec,
    w: &WeightMatrixSet,
    y: Option<&CountPanel>,
    x: Option<&CovariatePanel>,
) -> ValidationReport {
    let mut rep = ValidationReport::new();
    if let Err(e) = spec.check_weights(w) {
        rep.error("order_exceeds_weights", None, None, e.to_string());
        return rep;
    }
    if spec.r() == 0 && spec.m() == 0 {
        rep.error(
            "pure_feedback",
            None,
            None,
            "no observation lags and no covariates: feedback-only models are not identifiable",
        );
    } else if spec.r() == 0 {
        rep.warning(
            "no_observation_lags",
            None,
            None,
            "model regresses on covariates only (r = 0)",
        );
    }
    if spec.m() > 0 {
        match x {
            None => rep.error("missing_covariates", None, None, "model has covariates but none were supplied"),
            Some(x) if x.m() != spec.m() || x.p() != w.p() => {
                rep.error("covariate_shape", None, None, "covariate panel shape does not match the model")
            }
            Some(x) => covariate_checks(spec, x, &mut rep),
        }
    }
    if let Some(y) = y {
        if y.p() != w.p() {
            rep.error("count_shape", None, None, "count panel and weights disagree on p");
        } else if y.len() <= spec.first_time() {
            rep.error("insufficient_observations", None, None, "too few time points for the model orders");
        } else if spec.m() == 0 || x.is_some_and(|x| x.m() == spec.m() && x.p() == w.p() && x.len() >= y.len()) {
            let (rank, cols) = design_rank(spec, w, y, x);
            if rank < cols {
                rep.error(
                    "rank_deficient",
                    None,
                    None,
                    format!("design matrix has numerical rank {rank} < {cols} columns"),
                );
            }
        }
    }
    rep
}

fn covariate_checks(spec: &ModelSpec, x: &CovariatePanel, rep: &mut ValidationReport) {
    const TOL: f64 = 1e-12;
    for k in 0..spec.m() {
        let spatially_constant = (0..x.len()).all(|t| {
            let v = x.slice(k, t);
            let scale = v.iter().map(|z| z.abs()).fold(1.0, f64::max);
            v.iter().all(|z| (z - v[0]).abs() <= TOL * scale)
        });
        if spatially_constant && spec.s[k] > 0 {
            rep.error(
                "spatially_constant_covariate",
                None,
                None,
                format!("covariate {} is constant over locations but has spatial order {}", k + 1, spec.s[k]),
            );
        }
        let time_constant = (1..x.len()).all(|t| {
            x.slice(k, t)
                .iter()
                .zip(x.slice(k, 0))
                .all(|(a, b)| (a - b).abs() <= TOL * a.abs().max(b.abs()).max(1.0))
        });
        if time_constant && spec.intercept == InterceptKind::Inhomogeneous {
            rep.error(
                "time_constant_covariate",
                None,
                None,
                format!("covariate {} is constant in time and confounded with the location intercepts", k + 1),
            );
        }
        if spec.link == Link::Linear && x.min() < 0.0 {
            rep.error("negative_covariate", None, None, "linear link requires nonnegative covariates");
        }
    }
    let bound = (0..x.len())
        .flat_map(|t| (0..x.m()).map(move |k| (k, t)))
        .map(|(k, t)| x.slice(k, t).iter().map(|z| z * z).sum::<f64>())
        .fold(0.0, f64::max);
    if !bound.is_finite() {
        rep.error("unbounded_covariate", None, None, "covariate norms are not finite");
    }
}

/// Numerical rank of the observed-regressor design, with the intercept block
/// partialled out for location-specific intercepts.
fn design_rank(spec: &ModelSpec, w: &WeightMatrixSet, y: &CountPanel, x: Option<&CovariatePanel>) -> (usize, usize) {
    const REL_TOL: f64 = 1e-8;
    const CHUNK: usize = 4096;
    let p = w.p();
    let t0 = spec.first_time();
    let times: Vec<usize> = (t0..y.len()).collect();
    let homog = spec.intercept == InterceptKind::Homogeneous;
    let nz = spec.n_beta() + spec.n_gamma();
    let ncol = nz + usize::from(homog);

    // regressor panels: column c at time t is a p-vector
    let mut fy = vec![0.0; p];
    let mut column_at = |c: usize, t: usize, out: &mut [f64]| {
        let mut c = c;
        for (j, &bj) in spec.b.iter().enumerate() {
            if c <= bj {
                for (o, v) in fy.iter_mut().zip(y.row(t - j - 1)) {
                    *o = spec.link.count_transform(*v);
                }
                w.matrix(c).apply(&fy, out);
                return;
            }
            c -= bj + 1;
        }
        for (k, &sk) in spec.s.iter().enumerate() {
            if c <= sk {
                if let Some(x) = x {
                    w.matrix(c).apply(x.slice(k, t), out);
                }
                return;
            }
            c -= sk + 1;
        }
    };

    let n = times.len();
    let mut z = DMatrix::<f64>::zeros(n * p, ncol);
    let mut buf = vec![0.0; p];
    for c in 0..nz {
        for (row, &t) in times.iter().enumerate() {
            column_at(c, t, &mut buf);
            for i in 0..p {
                z[(row * p + i, c)] = buf[i];
            }
        }
    }
    if homog {
        z.column_mut(nz).fill(1.0);
    } else {
        // within-location demeaning removes the p intercept columns
        for c in 0..nz {
            for i in 0..p {
                let mean = (0..n).map(|r| z[(r * p + i, c)]).sum::<f64>() / n as f64;
                for r in 0..n {
                    z[(r * p + i, c)] -= mean;
                }
            }
        }
    }
    for mut col in z.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    // tall-skinny QR in row blocks
    let mut r = DMatrix::<f64>::zeros(0, ncol);
    let rows = z.nrows();
    let mut start = 0;
    while start < rows {
        let end = (start + CHUNK).min(rows);
        let block = z.rows(start, end - start);
        let mut stacked = DMatrix::<f64>::zeros(r.nrows() + block.nrows(), ncol);
        stacked.rows_mut(0, r.nrows()).copy_from(&r);
        stacked.rows_mut(r.nrows(), block.nrows()).copy_from(&block);
        r = if stacked.nrows() >= ncol { stacked.qr().r() } else { stacked };
        start = end;
    }
    let sv = r.singular_values();
    let top = sv.iter().copied().fold(0.0, f64::max);
    let rank = if top == 0.0 { 0 } else { sv.iter().filter(|s| **s > REL_TOL * top).count() };
    let intercept_cols = if homog { 0 } else { p };
    (rank + intercept_cols, ncol + intercept_cols)
}

/// Stationary mean `(I − ΣA_i − ΣB_j)⁻¹(δ + γ̄)` of the linear model.
pub fn stationary_mean(
    theta: &ParameterVector,
    spec: &ModelSpec,
    w: &WeightMatrixSet,
    mean_covariate_term: Option<&[f64]>,
) -> Result<DVector<f64>> {
    if spec.link != Link::Linear {
        return Err(Error::Unsupported(
            "closed-form moments exist only for the linear link".into(),
        ));
    }
    let margin = stationarity_margin(theta, w, StationarityCriterion::CoefficientSum);
    if margin <= 0.0 {
        return invalid(format!("coefficient sum is not below 1 (margin {margin})"));
    }
    let p = w.p();
    let (a, b) = coefficient_matrices(theta, spec, w)?;
    let m = a.iter().chain(&b).fold(DMatrix::identity(p, p), |acc, x| acc - x);
    let mut rhs = DVector::from_fn(p, |i, _| theta.delta.value(i));
    if let Some(g) = mean_covariate_term {
        if g.len() != p {
            return dim(format!("covariate mean term has length {}, expected {p}", g.len()));
        }
        rhs += DVector::from_column_slice(g);
    }
    let lu = m.lu();
    lu.solve(&rhs).ok_or_else(|| Error::Singular {
        context: "I - sum(A) - sum(B)".into(),
        condition: f64::INFINITY,
    })
}
