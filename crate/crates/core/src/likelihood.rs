//! Intensity filtering, quasi-log-likelihood, analytic score and information matrices.

use crate::error::{dim, invalid, Error, Result};
use crate::model::{check_covariates, CountPanel, CovariatePanel, InterceptKind, Link, ModelSpec, ParameterVector};
use crate::recursion::linear_predictor;
use crate::weights::WeightMatrixSet;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Lower bound on λ inside logarithms and inverse weights.
pub const LAMBDA_FLOOR: f64 = 1e-10;

/// How the unobserved feedback values before the first likelihood term are set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// λ = y at the same time point (ν = log(y + 1)).
    #[default]
    FirstObs,
    /// Per-location sample mean ȳ over the whole panel (ν = log(ȳ + 1)).
    GlobalMean,
    /// λ = 0 (ν = 0).
    Zero,
    /// Explicit values on the predictor scale (λ, or ν for the log-linear link),
    /// oldest first, one p-vector per feedback lag.
    Supplied(Vec<Vec<f64>>),
}

/// Everything the filter needs besides θ, validated once.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub spec: &'a ModelSpec,
    pub w: &'a WeightMatrixSet,
    pub y: &'a CountPanel,
    pub x: Option<&'a CovariatePanel>,
    pub init: &'a InitStrategy,
}

impl<'a> Problem<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        w: &'a WeightMatrixSet,
        y: &'a CountPanel,
        x: Option<&'a CovariatePanel>,
        init: &'a InitStrategy,
    ) -> Result<Self> {
        spec.check_weights(w)?;
        let p = w.p();
        if y.p() != p {
            return dim(format!("count panel has {} locations, weights have {p}", y.p()));
        }
        let t0 = spec.first_time();
        if y.len() <= t0 {
            return Err(Error::InsufficientObservations { needed: t0 + 1, got: y.len() });
        }
        check_covariates(spec, p, y.len(), x)?;
        if let InitStrategy::Supplied(v) = init {
            if v.len() != spec.q() || v.iter().any(|r| r.len() != p) {
                return dim(format!("supplied initialization needs {} vectors of length {p}", spec.q()));
            }
            if v.iter().flatten().any(|l| !l.is_finite() || (spec.link == Link::Linear && *l < 0.0)) {
                return invalid("supplied initial values must be finite (and nonnegative for the linear link)");
            }
        }
        Ok(Self { spec, w, y, x, init })
    }

    pub fn p(&self) -> usize {
        self.w.p()
    }

    pub fn n_params(&self) -> usize {
        self.spec.n_params(self.p())
    }

    pub fn first_time(&self) -> usize {
        self.spec.first_time()
    }

    /// Number of time points entering the likelihood.
    pub fn n_eff(&self) -> usize {
        self.y.len() - self.first_time()
    }

    /// Initial η values for times t0−q … t0−1, oldest first.
    fn initial_eta(&self) -> Vec<Vec<f64>> {
        let (p, q, t0, link) = (self.p(), self.spec.q(), self.first_time(), self.spec.link);
        let to_eta = |l: f64| match link {
            Link::Linear => l,
            Link::LogLinear => l.ln_1p(),
        };
        match self.init {
            InitStrategy::FirstObs => (t0 - q..t0).map(|s| self.y.row(s).iter().map(|&v| to_eta(v)).collect()).collect(),
            InitStrategy::GlobalMean => {
                let n = self.y.len() as f64;
                let mut mean = vec![0.0; p];
                for t in 0..self.y.len() {
                    for (m, v) in mean.iter_mut().zip(self.y.row(t)) {
                        *m += v;
                    }
                }
                let row: Vec<f64> = mean.iter().map(|m| to_eta(m / n)).collect();
                vec![row; q]
            }
            InitStrategy::Zero => vec![vec![0.0; p]; q],
            InitStrategy::Supplied(v) => v.clone(),
        }
    }

    fn fy_panel(&self) -> Vec<f64> {
        let link = self.spec.link;
        self.y.as_slice().iter().map(|&v| link.count_transform(v)).collect()
    }
}

/// Filtered linear predictor (λ or ν) and, optionally, its stored derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub link: Link,
    p: usize,
    k: usize,
    t0: usize,
    /// η_t for t = 0…T; rows before t0 hold initialization values (or zero).
    eta: Vec<f64>,
    /// ∂η_t/∂θ column-major (K columns of length p) for t = t0…T, when materialized.
    deriv: Option<Vec<f64>>,
}

impl FilterState {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn first_time(&self) -> usize {
        self.t0
    }

    pub fn len(&self) -> usize {
        self.eta.len() / self.p
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }

    /// λ or ν at time t.
    pub fn eta(&self, t: usize) -> &[f64] {
        &self.eta[t * self.p..(t + 1) * self.p]
    }

    pub fn intensity(&self, t: usize) -> Vec<f64> {
        self.eta(t).iter().map(|&e| self.link.intensity(e)).collect()
    }

    /// ∂η_t/∂θ as a p×K matrix, if derivatives were materialized.
    pub fn derivative(&self, t: usize) -> Option<DMatrix<f64>> {
        let d = self.deriv.as_ref()?;
        if t < self.t0 || t >= self.len() {
            return None;
        }
        let sz = self.p * self.k;
        Some(DMatrix::from_column_slice(self.p, self.k, &d[(t - self.t0) * sz..(t - self.t0 + 1) * sz]))
    }
}

/// Ĥ, Ĝ (both averaged over the likelihood time points) and Ĥ⁻¹ĜĤ⁻¹.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoMatrices {
    pub h: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub sandwich: DMatrix<f64>,
    pub h_inv: DMatrix<f64>,
    pub n_eff: usize,
}

impl InfoMatrices {
    pub fn from_hg(h: DMatrix<f64>, g: DMatrix<f64>, n_eff: usize) -> Result<Self> {
        let h_inv = symmetric_inverse(&h, "H")?;
        let sandwich = &h_inv * &g * &h_inv;
        let sandwich = (&sandwich + sandwich.transpose()) * 0.5;
        Ok(Self { h, g, sandwich, h_inv, n_eff })
    }

    /// trace(Ĝ Ĥ⁻¹), the QIC penalty.
    pub fn trace_penalty(&self) -> f64 {
        (&self.g * &self.h_inv).trace()
    }
}

/// Inverse of a symmetric positive definite matrix, failing with its condition number.
pub fn symmetric_inverse(m: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 1e-13 * max) || !max.is_finite() {
        return Err(Error::Singular {
            context: context.into(),
            condition: if min > 0.0 { max / min } else { f64::INFINITY },
        });
    }
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v));
    Ok(&eig.eigenvectors * inv_diag * eig.eigenvectors.transpose())
}

/// What a pass should compute beyond the filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    LogLik,
    Score,
    /// Score plus the summed Fisher information Σ d′Wd and score outer products.
    Info,
}

/// Derivative storage during the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DerivMode {
    /// Keep only the q most recent derivative panels.
    #[default]
    Streaming,
    /// Keep every panel in the returned state.
    Materialized,
}

/// Output of one forward pass. Sums, not averages.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loglik: f64,
    pub score: Option<DVector<f64>>,
    pub fisher: Option<DMatrix<f64>>,
    pub outer: Option<DMatrix<f64>>,
    pub n_eff: usize,
    pub state: FilterState,
}

/// Single forward pass: filter, log-likelihood and requested derivatives.
pub fn evaluate(prob: &Problem<'_>, theta: &ParameterVector, level: Level, mode: DerivMode) -> Result<Evaluation> {
    let (spec, w) = (prob.spec, prob.w);
    let p = prob.p();
    theta.check(spec, p)?;
    let link = spec.link;
    let (q, r, t0, len) = (spec.q(), spec.r(), prob.first_time(), prob.y.len());
    let k = prob.n_params();
    let layout = spec.layout(p);
    let fy = prob.fy_panel();
    let fy_row = |t: usize| &fy[t * p..(t + 1) * p];

    let mut eta = vec![0.0; len * p];
    for (s, row) in (t0 - q..t0).zip(prob.initial_eta()) {
        eta[s * p..(s + 1) * p].copy_from_slice(&row);
    }

    let want_deriv = level >= Level::Score;
    let sz = p * k;
    let mut ring: Vec<Vec<f64>> = if want_deriv && mode == DerivMode::Streaming { vec![vec![0.0; sz]; q.max(1)] } else { Vec::new() };
    let mut store: Vec<f64> = if want_deriv && mode == DerivMode::Materialized { Vec::with_capacity((len - t0) * sz) } else { Vec::new() };
    let mut cur = if want_deriv { vec![0.0; sz] } else { Vec::new() };

    let mut loglik = 0.0;
    let mut score = DVector::zeros(if want_deriv { k } else { 0 });
    let mut fisher = DMatrix::zeros(if level == Level::Info { k } else { 0 }, if level == Level::Info { k } else { 0 });
    let mut outer = fisher.clone();
    let mut resid = vec![0.0; p];
    let mut weight = vec![0.0; p];
    let mut st = vec![0.0; k];
    let mut out = vec![0.0; p];

    for t in t0..len {
        {
            let el: Vec<&[f64]> = (1..=q).map(|i| &eta[(t - i) * p..(t - i + 1) * p]).collect();
            let fl: Vec<&[f64]> = (1..=r).map(|j| fy_row(t - j)).collect();
            linear_predictor(theta, w, &el, &fl, prob.x.map(|x| (x, t)), &mut out);
        }
        eta[t * p..(t + 1) * p].copy_from_slice(&out);
        let yt = prob.y.row(t);
        for i in 0..p {
            let e = out[i];
            match link {
                Link::Linear => {
                    let l = e.max(LAMBDA_FLOOR);
                    loglik += if yt[i] > 0.0 { yt[i] * l.ln() } else { 0.0 } - e;
                    resid[i] = yt[i] / l - 1.0;
                    weight[i] = 1.0 / l;
                }
                Link::LogLinear => {
                    let l = e.exp();
                    loglik += yt[i] * e - l;
                    resid[i] = yt[i] - l;
                    weight[i] = l;
                }
            }
        }
        if !want_deriv {
            continue;
        }

        // direct regressors
        cur.iter_mut().for_each(|v| *v = 0.0);
        match spec.intercept {
            InterceptKind::Homogeneous => cur[..p].iter_mut().for_each(|v| *v = 1.0),
            InterceptKind::Inhomogeneous => (0..p).for_each(|i| cur[i * p + i] = 1.0),
        }
        for (i, &ord) in spec.a.iter().enumerate() {
            let lagged = &eta[(t - i - 1) * p..(t - i) * p];
            for l in 0..=ord {
                let c = layout.alpha(i + 1, l);
                w.matrix(l).apply_add(1.0, lagged, &mut cur[c * p..(c + 1) * p]);
            }
        }
        for (j, &ord) in spec.b.iter().enumerate() {
            let lagged = fy_row(t - j - 1);
            for l in 0..=ord {
                let c = layout.beta(j + 1, l);
                w.matrix(l).apply_add(1.0, lagged, &mut cur[c * p..(c + 1) * p]);
            }
        }
        if let Some(x) = prob.x {
            for (kk, &ord) in spec.s.iter().enumerate() {
                for l in 0..=ord {
                    let c = layout.gamma(kk + 1, l);
                    w.matrix(l).apply_add(1.0, x.slice(kk, t), &mut cur[c * p..(c + 1) * p]);
                }
            }
        }
        // feedback through earlier derivatives; zero before t0
        for (i, coefs) in theta.alpha.iter().enumerate() {
            let lag = i + 1;
            if t < t0 + lag {
                continue;
            }
            let prev: &[f64] = match mode {
                DerivMode::Streaming => &ring[(t - lag) % q],
                DerivMode::Materialized => &store[(t - lag - t0) * sz..(t - lag - t0 + 1) * sz],
            };
            for c in 0..k {
                let src = &prev[c * p..(c + 1) * p];
                let dst = &mut cur[c * p..(c + 1) * p];
                for (l, &a) in coefs.iter().enumerate() {
                    w.matrix(l).apply_add(a, src, dst);
                }
            }
        }

        for (c, s) in st.iter_mut().enumerate() {
            *s = cur[c * p..(c + 1) * p].iter().zip(&resid).map(|(d, e)| d * e).sum();
        }
        for c in 0..k {
            score[c] += st[c];
        }
        if level == Level::Info {
            for a in 0..k {
                let da = &cur[a * p..(a + 1) * p];
                for b in a..k {
                    let db = &cur[b * p..(b + 1) * p];
                    let v: f64 = da.iter().zip(db).zip(&weight).map(|((x, y), wt)| x * y * wt).sum();
                    fisher[(a, b)] += v;
                    outer[(a, b)] += st[a] * st[b];
                }
            }
        }
        match mode {
            DerivMode::Streaming => {
                if q > 0 {
                    std::mem::swap(&mut ring[t % q], &mut cur);
                }
            }
            DerivMode::Materialized => store.extend_from_slice(&cur),
        }
    }

    if level == Level::Info {
        for a in 0..k {
            for b in 0..a {
                fisher[(a, b)] = fisher[(b, a)];
                outer[(a, b)] = outer[(b, a)];
            }
        }
    }

    Ok(Evaluation {
        loglik,
        score: want_deriv.then_some(score),
        fisher: (level == Level::Info).then_some(fisher),
        outer: (level == Level::Info).then_some(outer),
        n_eff: len - t0,
        state: FilterState {
            link,
            p,
            k,
            t0,
            eta,
            deriv: (want_deriv && mode == DerivMode::Materialized).then_some(store),
        },
    })
}

/// λ_t (or ν_t) for t = t0…T given θ.
pub fn filter_intensity(
    theta: &ParameterVector,
    spec: &ModelSpec,
    w: &WeightMatrixSet,
    y: &CountPanel,
    x: Option<&CovariatePanel>,
    init: &InitStrategy,
) -> Result<FilterState> {
    let prob = Problem::new(spec, w, y, x, init)?;
    Ok(evaluate(&prob, theta, Level::LogLik, DerivMode::Streaming)?.state)
}

/// Σ_t Σ_i (y log λ − λ) over the filtered time points.
pub fn quasi_log_lik(state: &FilterState, y: &CountPanel) -> Result<f64> {
    if y.p() != state.p || y.len() != state.len() {
        return dim("filter state and count panel are not aligned");
    }
    let mut ll = 0.0;
    for t in state.t0..state.len() {
        for (&e, &v) in state.eta(t).iter().zip(y.row(t)) {
            ll += match state.link {
                Link::Linear => (if v > 0.0 { v * e.max(LAMBDA_FLOOR).ln() } else { 0.0 }) - e,
                Link::LogLinear => v * e - e.exp(),
            };
        }
    }
    Ok(ll)
}

/// Quasi-score vector ∂ℓ/∂θ in packing order.
pub fn score(
    theta: &ParameterVector,
    spec: &ModelSpec,
    w: &WeightMatrixSet,
    y: &CountPanel,
    x: Option<&CovariatePanel>,
    init: &InitStrategy,
) -> Result<DVector<f64>> {
    let prob = Problem::new(spec, w, y, x, init)?;
    Ok(evaluate(&prob, theta, Level::Score, DerivMode::Streaming)?.score.expect("score requested"))
}

/// Ĥ and Ĝ averaged over the likelihood time points, and the sandwich.
pub fn info_matrices(
    theta: &ParameterVector,
    spec: &ModelSpec,
    w: &WeightMatrixSet,
    y: &CountPanel,
    x: Option<&CovariatePanel>,
    init: &InitStrategy,
) -> Result<InfoMatrices> {
    let prob = Problem::new(spec, w, y, x, init)?;
    info_from_problem(&prob, theta)
}

pub(crate) fn info_from_problem(prob: &Problem<'_>, theta: &ParameterVector) -> Result<InfoMatrices> {
    let ev = evaluate(prob, theta, Level::Info, DerivMode::Streaming)?;
    let n = ev.n_eff as f64;
    InfoMatrices::from_hg(ev.fisher.expect("info requested") / n, ev.outer.expect("info requested") / n, ev.n_eff)
}
