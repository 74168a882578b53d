//! Path simulation and covariate generation.

use crate::copula::{CopulaSampler, CopulaSpec};
use crate::error::{dim, invalid, Error, Result};
use crate::model::{check_covariates, stationarity_margin, CountPanel, CovariatePanel, Link, ModelSpec, ParameterVector, StationarityCriterion};
use crate::recursion::linear_predictor;
use crate::weights::WeightMatrixSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Intensities above this abort the simulation.
pub const EXPLOSION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Last time index T; the path covers t = 0…T.
    pub n_time: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    pub seed: u64,
    /// Feedback state at the start of burn-in on the predictor scale (λ, or ν for the
    /// log-linear link); one p-vector per feedback lag, most recent first.
    /// Defaults to the stationary level.
    #[serde(default)]
    pub lambda_init: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub copula: CopulaSpec,
}

fn default_burn_in() -> usize {
    100
}

impl SimulationConfig {
    pub fn new(n_time: usize, seed: u64, copula: CopulaSpec) -> Self {
        Self { n_time, burn_in: 100, seed, lambda_init: None, copula }
    }
}

/// Simulated counts with the intensities that generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPath {
    pub counts: CountPanel,
    /// λ_t for t = 0…T, time-major.
    pub intensity: Vec<f64>,
    /// The linear predictor (λ or ν) for t = 0…T, time-major.
    pub eta: Vec<f64>,
    /// λ_{T+1} given the path, when covariates for T+1 are available (or m = 0).
    pub next_intensity: Option<Vec<f64>>,
    pub link: Link,
}

impl SimulatedPath {
    pub fn p(&self) -> usize {
        self.counts.p()
    }

    pub fn intensity_row(&self, t: usize) -> &[f64] {
        let p = self.p();
        &self.intensity[t * p..(t + 1) * p]
    }

    /// Linear-predictor scale: λ for the linear link, ν = log λ otherwise.
    pub fn eta_row(&self, t: usize) -> &[f64] {
        let p = self.p();
        &self.eta[t * p..(t + 1) * p]
    }
}

/// Deterministic covariate-free level used to seed burn-in.
fn initial_eta(theta: &ParameterVector, spec: &ModelSpec, w: &WeightMatrixSet) -> Vec<f64> {
    let p = w.p();
    let delta: Vec<f64> = (0..p).map(|i| theta.delta.value(i)).collect();
    if stationarity_margin(theta, w, StationarityCriterion::CoefficientSum) <= 0.0 {
        return delta;
    }
    // fixed point of η = δ + Σ A η + Σ B f(λ(η)), with f(λ(η)) ≈ η for both links
    let mut eta = delta.clone();
    let mut next = vec![0.0; p];
    for _ in 0..1000 {
        let lags: Vec<&[f64]> = vec![eta.as_slice(); spec.q()];
        let fy: Vec<&[f64]> = vec![eta.as_slice(); spec.r()];
        linear_predictor(theta, w, &lags, &fy, None, &mut next);
        let diff = eta.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut eta, &mut next);
        if diff <= 1e-13 * eta.iter().map(|x| x.abs()).fold(1.0, f64::max) {
            break;
        }
    }
    eta
}

/// Simulates t = 0…T after a covariate-free burn-in, seeding a ChaCha8 stream from `cfg.seed`.
pub fn simulate_path(
    theta: &ParameterVector,
    spec: &ModelSpec,
    w: &WeightMatrixSet,
    x: Option<&CovariatePanel>,
    cfg: &SimulationConfig,
) -> Result<SimulatedPath> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    simulate_path_with_rng(theta, spec, w, x, cfg, &mut rng)
}

/// As [`simulate_path`] but drawing from a caller-supplied generator (`cfg.seed` unused).
pub fn simulate_path_with_rng<R: Rng + ?Sized>(
    theta: &ParameterVector,
    spec: &ModelSpec,
    w: &WeightMatrixSet,
    x: Option<&CovariatePanel>,
    cfg: &SimulationConfig,
    rng: &mut R,
) -> Result<SimulatedPath> {
    let p = w.p();
    spec.check_weights(w)?;
    theta.check(spec, p)?;
    if cfg.n_time < 1 {
        return invalid("simulation needs T >= 1");
    }
    let len = cfg.n_time + 1;
    check_covariates(spec, p, len, x)?;
    let sampler = CopulaSampler::new(cfg.copula, p)?;
    let link = spec.link;

    let start_eta: Vec<Vec<f64>> = match &cfg.lambda_init {
        Some(v) => {
            if v.is_empty() || v.iter().any(|r| r.len() != p) {
                return dim("lambda_init must hold p-vectors");
            }
            if v.iter().flatten().any(|l| !l.is_finite() || (link == Link::Linear && *l < 0.0)) {
                return invalid("lambda_init must be finite (and nonnegative for the linear link)");
            }
            (0..spec.q().max(1)).map(|i| v[i.min(v.len() - 1)].clone()).collect()
        }
        None => vec![initial_eta(theta, spec, w); spec.q().max(1)],
    };
    let start_fy: Vec<f64> = start_eta[0]
        .iter()
        .map(|&e| link.count_transform(link.intensity(e).round()))
        .collect();

    let mut eta_hist: VecDeque<Vec<f64>> = start_eta.into_iter().take(spec.q()).collect();
    let mut fy_hist: VecDeque<Vec<f64>> = (0..spec.r()).map(|_| start_fy.clone()).collect();

    let mut counts = Vec::with_capacity(len * p);
    let mut intensity = Vec::with_capacity(len * p);
    let mut eta_out = Vec::with_capacity(len * p);
    let mut eta = vec![0.0; p];
    let mut lam = vec![0.0; p];
    let mut y = vec![0.0; p];

    let step = |eta_hist: &VecDeque<Vec<f64>>, fy_hist: &VecDeque<Vec<f64>>, xt: Option<(&CovariatePanel, usize)>, out: &mut [f64]| {
        let el: Vec<&[f64]> = eta_hist.iter().map(Vec::as_slice).collect();
        let fl: Vec<&[f64]> = fy_hist.iter().map(Vec::as_slice).collect();
        linear_predictor(theta, w, &el, &fl, xt, out);
    };

    for s in 0..cfg.burn_in + len {
        let t = s.checked_sub(cfg.burn_in);
        let xt = match (t, x) {
            (Some(t), Some(xp)) if spec.m() > 0 => Some((xp, t)),
            _ => None,
        };
        step(&eta_hist, &fy_hist, xt, &mut eta);
        for (i, (l, e)) in lam.iter_mut().zip(&eta).enumerate() {
            *l = link.intensity(*e);
            if !(l.is_finite() && *l <= EXPLOSION_LIMIT) {
                return Err(Error::Explosive {
                    location: i,
                    time: t.unwrap_or(0),
                    value: *l,
                });
            }
        }
        sampler.counts(&lam, rng, &mut y);
        if t.is_some() {
            counts.extend_from_slice(&y);
            intensity.extend_from_slice(&lam);
            eta_out.extend_from_slice(&eta);
        }
        if spec.q() > 0 {
            eta_hist.pop_back();
            eta_hist.push_front(eta.clone());
        }
        if spec.r() > 0 {
            fy_hist.pop_back();
            fy_hist.push_front(y.iter().map(|&v| link.count_transform(v)).collect());
        }
    }

    let next_intensity = match x {
        _ if spec.m() == 0 => Some(None),
        Some(xp) if xp.len() > len => Some(Some((xp, len))),
        _ => None,
    }
    .map(|xt| {
        step(&eta_hist, &fy_hist, xt, &mut eta);
        eta.iter().map(|&e| link.intensity(e)).collect()
    });

    Ok(SimulatedPath {
        counts: CountPanel::new(p, counts)?,
        intensity,
        eta: eta_out,
        next_intensity,
        link,
    })
}

/// How ARMA covariate values are shifted after generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateShift {
    /// Shift up only if some value is negative (linear link).
    #[default]
    NonNegative,
    /// Subtract the sample mean (keeps log-linear intensities moderate).
    Centered,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmaCovariateConfig {
    pub ar: f64,
    pub ma: f64,
    pub burn_in: usize,
    pub shift: CovariateShift,
}

impl Default for ArmaCovariateConfig {
    fn default() -> Self {
        Self { ar: 0.5, ma: 0.3, burn_in: 100, shift: CovariateShift::NonNegative }
    }
}

/// One covariate: an independent ARMA(1,1) path with 𝒰[0,1] innovations per location.
pub fn generate_arma_covariate(p: usize, len: usize, seed: u64, cfg: &ArmaCovariateConfig) -> Result<CovariatePanel> {
    if !(cfg.ar.abs() < 1.0) || !cfg.ma.is_finite() {
        return invalid(format!("ARMA(1,1) with AR coefficient {} is not stationary", cfg.ar));
    }
    if p == 0 || len == 0 {
        return invalid("covariate panel needs p >= 1 and at least one time point");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = 0.5 * (1.0 + cfg.ma) / (1.0 - cfg.ar);
    let mut paths = vec![vec![0.0; p]; len];
    for i in 0..p {
        let mut prev_x = mean;
        let mut prev_e = 0.5;
        for s in 0..cfg.burn_in + len {
            let e: f64 = rng.random();
            let xv = cfg.ar * prev_x + e + cfg.ma * prev_e;
            prev_x = xv;
            prev_e = e;
            if s >= cfg.burn_in {
                paths[s - cfg.burn_in][i] = xv;
            }
        }
    }
    match cfg.shift {
        CovariateShift::NonNegative => {
            let lo = paths.iter().flatten().copied().fold(f64::INFINITY, f64::min);
            if lo < 0.0 {
                paths.iter_mut().flatten().for_each(|v| *v -= lo);
            }
        }
        CovariateShift::Centered => {
            let m = paths.iter().flatten().sum::<f64>() / (p * len) as f64;
            paths.iter_mut().flatten().for_each(|v| *v -= m);
        }
        CovariateShift::None => {}
    }
    CovariatePanel::from_processes(&[paths])
}
