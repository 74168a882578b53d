//! Constrained quasi-maximum-likelihood fitting.

use crate::error::{invalid, Error, Result};
use crate::likelihood::{evaluate, DerivMode, InfoMatrices, InitStrategy, Level, Problem};
use crate::model::{
    check_identifiability, CountPanel, CovariatePanel, Delta, InterceptKind, Link, ModelSpec, ParameterVector,
    StationarityCriterion,
};
use crate::optim::{maximize, Constraint, Feasible, Model, SqpOptions};
use crate::weights::WeightMatrixSet;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Components within this distance of a bound are reported as active.
pub const ACTIVE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub init: InitStrategy,
    pub criterion: StationarityCriterion,
    /// Slack ε in Σ|α| + Σ|β| ≤ bound − ε.
    pub slack: f64,
    /// Tolerance on the projected gradient ∞-norm of the per-cell mean quasi-likelihood.
    pub grad_tol: f64,
    pub max_iter: usize,
    pub multistart: usize,
    /// Seed for the perturbed extra starts.
    pub multistart_seed: u64,
    /// Box |θₖ| ≤ this for log-linear parameters.
    pub log_linear_box: f64,
    /// Skip the identifiability pre-check (still validates shapes).
    pub skip_identifiability: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            init: InitStrategy::FirstObs,
            criterion: StationarityCriterion::CoefficientSum,
            slack: 1e-6,
            grad_tol: 1e-8,
            max_iter: 500,
            multistart: 1,
            multistart_seed: 0,
            log_linear_box: 10.0,
            skip_identifiability: false,
        }
    }
}

impl FitConfig {
    fn check(&self) -> Result<()> {
        if !(self.slack > 0.0 && self.grad_tol > 0.0 && self.log_linear_box > 0.0) || self.max_iter == 0 || self.multistart == 0 {
            return invalid("fit tolerances, slack, box and counts must be positive");
        }
        Ok(())
    }
}

/// Row-major (de)serialization for matrices.
mod rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_fn(n, k, |i, j| rows[i][j]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub theta: ParameterVector,
    pub param_names: Vec<String>,
    /// Sandwich covariance of θ̂, already divided by the number of likelihood time points.
    #[serde(with = "rows")]
    pub covariance: DMatrix<f64>,
    pub std_errors: Vec<f64>,
    pub loglik: f64,
    pub qic: f64,
    /// trace(ĜĤ⁻¹).
    pub trace_penalty: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Packed indices of components within 1e-8 of a bound.
    pub active_constraints: Vec<usize>,
    pub stationarity_active: bool,
    pub n_eff: usize,
    pub n_locations: usize,
    #[serde(with = "rows")]
    pub h: DMatrix<f64>,
    #[serde(with = "rows")]
    pub g: DMatrix<f64>,
    /// SHA-256 of the count panel, used to refuse comparisons across datasets.
    pub data_fingerprint: String,
    pub init: InitStrategy,
}

impl FitResult {
    pub fn n_params(&self) -> usize {
        self.std_errors.len()
    }

    pub fn theta_packed(&self) -> Vec<f64> {
        self.theta.pack()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Hex SHA-256 over the panel shape and values.
pub fn fingerprint(y: &CountPanel) -> String {
    let mut h = Sha256::new();
    h.update((y.p() as u64).to_le_bytes());
    h.update((y.len() as u64).to_le_bytes());
    for v in y.as_slice() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Starting value whose implied stationary mean matches the sample mean.
pub fn default_start(spec: &ModelSpec, w: &WeightMatrixSet, y: &CountPanel) -> ParameterVector {
    let p = w.p();
    let n_coef = spec.n_alpha() + spec.n_beta();
    let c = if n_coef > 0 { 0.5 / n_coef as f64 } else { 0.0 };
    let sum = c * n_coef as f64;
    let level = |m: f64| match spec.link {
        Link::Linear => m * (1.0 - sum),
        Link::LogLinear => m.ln_1p() * (1.0 - sum),
    };
    let delta = match spec.intercept {
        InterceptKind::Homogeneous => Delta::Scalar(level(y.mean())),
        InterceptKind::Inhomogeneous => {
            let n = y.len() as f64;
            Delta::Vector((0..p).map(|i| level((0..y.len()).map(|t| y.row(t)[i]).sum::<f64>() / n)).collect())
        }
    };
    let fill = |o: &[usize], v: f64| o.iter().map(|&o| vec![v; o + 1]).collect();
    ParameterVector { delta, alpha: fill(&spec.a, c), beta: fill(&spec.b, c), gamma: fill(&spec.s, 0.0) }
}

/// The feasible set in packed coordinates.
struct FeasibleSet {
    link: Link,
    k: usize,
    /// Packed indices of α and β.
    ar: std::ops::Range<usize>,
    /// Right-hand side of the stationarity constraint.
    budget: f64,
    bound: f64,
}

impl FeasibleSet {
    fn new(spec: &ModelSpec, w: &WeightMatrixSet, cfg: &FitConfig) -> Self {
        let p = w.p();
        let bound = match cfg.criterion {
            StationarityCriterion::CoefficientSum => 1.0,
            StationarityCriterion::TauAdjusted => 1.0 / w.column_sum_norm_tau().sqrt(),
        };
        Self {
            link: spec.link,
            k: spec.n_params(p),
            ar: spec.layout(p).ar_range(),
            budget: bound - cfg.slack,
            bound: cfg.log_linear_box,
        }
    }

    fn unit(&self, i: usize, sign: f64) -> DVector<f64> {
        let mut v = DVector::zeros(self.k);
        v[i] = sign;
        v
    }

    fn facet(&self, x: &DVector<f64>) -> Constraint {
        let mut coef = DVector::zeros(self.k);
        for i in self.ar.clone() {
            coef[i] = if x[i] < 0.0 { -1.0 } else { 1.0 };
        }
        Constraint { coef, rhs: self.budget }
    }

    fn l1(&self, x: &DVector<f64>) -> f64 {
        self.ar.clone().map(|i| x[i].abs()).sum()
    }

    fn contains(&self, x: &DVector<f64>) -> bool {
        let box_ok = match self.link {
            Link::Linear => x.iter().all(|v| *v >= 0.0),
            Link::LogLinear => x.iter().all(|v| v.abs() <= self.bound),
        };
        box_ok && self.l1(x) <= self.budget * (1.0 + 1e-12)
    }

    /// Packed indices at a bound, and whether the stationarity constraint binds.
    fn active(&self, x: &DVector<f64>) -> (Vec<usize>, bool) {
        let at_bound = (0..self.k)
            .filter(|&i| match self.link {
                Link::Linear => x[i] <= ACTIVE_TOL,
                Link::LogLinear => x[i].abs() >= self.bound - ACTIVE_TOL,
            })
            .collect();
        (at_bound, self.l1(x) >= self.budget - ACTIVE_TOL)
    }
}

impl Feasible for FeasibleSet {
    fn base(&self, x: &DVector<f64>) -> Vec<Constraint> {
        let mut out = Vec::with_capacity(2 * self.k + 1);
        match self.link {
            Link::Linear => (0..self.k).for_each(|i| out.push(Constraint { coef: self.unit(i, -1.0), rhs: 0.0 })),
            Link::LogLinear => (0..self.k).for_each(|i| {
                out.push(Constraint { coef: self.unit(i, 1.0), rhs: self.bound });
                out.push(Constraint { coef: self.unit(i, -1.0), rhs: self.bound });
            }),
        }
        if !self.ar.is_empty() {
            out.push(self.facet(x));
            if self.link == Link::LogLinear {
                // components at zero can move either way; both facets are valid
                let zeros: Vec<usize> = self.ar.clone().filter(|&i| x[i] == 0.0).collect();
                if !zeros.is_empty() {
                    let mut f = self.facet(x);
                    zeros.iter().for_each(|&i| f.coef[i] = -1.0);
                    out.push(f);
                }
            }
        }
        out
    }

    fn violated(&self, x: &DVector<f64>) -> Option<Constraint> {
        (!self.ar.is_empty() && self.l1(x) > self.budget * (1.0 + 1e-12)).then(|| self.facet(x))
    }

    fn clean(&self, x: &mut DVector<f64>) {
        match self.link {
            // snap round-off residue at the boundary back onto it
            Link::Linear => x.iter_mut().for_each(|v| *v = if *v < 1e-14 { 0.0 } else { *v }),
            Link::LogLinear => x.iter_mut().for_each(|v| *v = v.clamp(-self.bound, self.bound)),
        }
        let s = self.l1(x);
        if s > self.budget {
            let f = self.budget / s;
            for i in self.ar.clone() {
                x[i] *= f;
            }
        }
    }
}

/// Maximizes the quasi-likelihood under the stationarity and sign/box constraints.
pub fn fit(
    spec: &ModelSpec,
    w: &WeightMatrixSet,
    y: &CountPanel,
    x: Option<&CovariatePanel>,
    cfg: &FitConfig,
) -> Result<FitResult> {
    fit_from(spec, w, y, x, cfg, None)
}

/// As [`fit`], optionally from a given start (which must be feasible).
pub fn fit_from(
    spec: &ModelSpec,
    w: &WeightMatrixSet,
    y: &CountPanel,
    x: Option<&CovariatePanel>,
    cfg: &FitConfig,
    start: Option<&ParameterVector>,
) -> Result<FitResult> {
    cfg.check()?;
    let prob = Problem::new(spec, w, y, x, &cfg.init)?;
    if !cfg.skip_identifiability {
        let rep = check_identifiability(spec, w, Some(y), x);
        if !rep.is_ok() {
            return Err(Error::Validation(rep.to_string()));
        }
    }
    let p = w.p();
    let feas = FeasibleSet::new(spec, w, cfg);
    let first = match start {
        Some(s) => {
            s.check(spec, p)?;
            DVector::from_vec(s.pack())
        }
        None => DVector::from_vec(default_start(spec, w, y).pack()),
    };
    if !feas.contains(&first) {
        return invalid("starting value violates the constraints");
    }
    let mut starts = vec![first.clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.multistart_seed);
    for _ in 1..cfg.multistart {
        let mut s = first.map(|v| v * rng.random_range(0.5..1.5));
        feas.clean(&mut s);
        starts.push(s);
    }

    let cells = (prob.n_eff() * p) as f64;
    let opts = SqpOptions { tol: cfg.grad_tol, grad_scale: 1.0 / cells, max_iter: cfg.max_iter };
    let unpack = |v: &DVector<f64>| ParameterVector::unpack(v.as_slice(), spec, p);
    let full = |v: &DVector<f64>| {
        let th = unpack(v).ok()?;
        let ev = evaluate(&prob, &th, Level::Info, DerivMode::Streaming).ok()?;
        Some(Model { value: ev.loglik, grad: ev.score?, hess: ev.fisher? })
    };
    let value = |v: &DVector<f64>| {
        let th = unpack(v).ok()?;
        evaluate(&prob, &th, Level::LogLik, DerivMode::Streaming).ok().map(|e| e.loglik)
    };

    let best = starts
        .into_iter()
        .map(|s| maximize(s, &feas, &opts, full, value))
        .max_by(|a, b| {
            (a.converged, a.value).partial_cmp(&(b.converged, b.value)).unwrap_or(std::cmp::Ordering::Equal)
        })
        .expect("at least one start");
    if !best.value.is_finite() {
        return Err(Error::Numerical("quasi-likelihood is not finite at any start".into()));
    }

    let theta = unpack(&best.x)?;
    let ev = evaluate(&prob, &theta, Level::Info, DerivMode::Streaming)?;
    let n = ev.n_eff as f64;
    let info = InfoMatrices::from_hg(ev.fisher.expect("info") / n, ev.outer.expect("info") / n, ev.n_eff)?;
    let covariance = &info.sandwich / n;
    let std_errors = covariance.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
    let trace_penalty = info.trace_penalty();
    let (active_constraints, stationarity_active) = feas.active(&best.x);
    let layout = spec.layout(p);
    Ok(FitResult {
        spec: spec.clone(),
        param_names: (0..spec.n_params(p)).map(|i| layout.name(i)).collect(),
        theta,
        covariance,
        std_errors,
        loglik: ev.loglik,
        qic: -2.0 * ev.loglik + 2.0 * trace_penalty,
        trace_penalty,
        converged: best.converged,
        iterations: best.iterations,
        gradient_norm: best.grad_norm,
        active_constraints,
        stationarity_active,
        n_eff: ev.n_eff,
        n_locations: p,
        h: info.h,
        g: info.g,
        data_fingerprint: fingerprint(y),
        init: cfg.init.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::CopulaSpec;
    use crate::simulate::{simulate_path, SimulationConfig};
    use crate::weights::GridSpec;

    fn table1_linear() -> (ModelSpec, ParameterVector, WeightMatrixSet) {
        (
            ModelSpec::new(Link::Linear, InterceptKind::Homogeneous, vec![1], vec![1], vec![]),
            ParameterVector { delta: Delta::Scalar(5.0), alpha: vec![vec![0.2, 0.1]], beta: vec![vec![0.2, 0.1]], gamma: vec![] },
            WeightMatrixSet::grid_4nn(GridSpec { n: 5 }).unwrap(),
        )
    }

    #[test]
    fn default_start_formula() {
        let (spec, _, w) = table1_linear();
        let y = CountPanel::new(25, (0..100).map(|i| if i < 50 { 12.0 } else { 13.0 }).collect()).unwrap();
        let s = default_start(&spec, &w, &y);
        assert_eq!(s.alpha, vec![vec![0.125, 0.125]]);
        assert_eq!(s.delta, Delta::Scalar(6.25));
        let z = CountPanel::new(25, vec![0.0; 50]).unwrap();
        assert_eq!(default_start(&spec, &w, &z).delta, Delta::Scalar(0.0));
        let log = ModelSpec { link: Link::LogLinear, ..spec };
        assert_eq!(default_start(&log, &w, &z).delta, Delta::Scalar(0.0));
    }

    #[test]
    fn recovers_truth_and_is_stationary_point() {
        let (spec, th, w) = table1_linear();
        let y = simulate_path(&th, &spec, &w, None, &SimulationConfig::new(400, 9, CopulaSpec::independent())).unwrap().counts;
        let f = fit(&spec, &w, &y, None, &FitConfig::default()).unwrap();
        assert!(f.converged, "gradient norm {}", f.gradient_norm);
        for (est, (truth, se)) in f.theta.pack().iter().zip(th.pack().iter().zip(&f.std_errors)) {
            assert!((est - truth).abs() < 4.0 * se, "{est} vs {truth} (se {se})");
        }
        assert!(f.active_constraints.is_empty());
        // refit from the solution reproduces it
        let g = fit_from(&spec, &w, &y, None, &FitConfig::default(), Some(&f.theta)).unwrap();
        for (a, b) in f.theta.pack().iter().zip(g.theta.pack()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn json_roundtrip() {
        let (spec, th, w) = table1_linear();
        let y = simulate_path(&th, &spec, &w, None, &SimulationConfig::new(100, 2, CopulaSpec::independent())).unwrap().counts;
        let f = fit(&spec, &w, &y, None, &FitConfig::default()).unwrap();
        let back = FitResult::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(back.theta, f.theta);
        assert_eq!(back.covariance.shape(), f.covariance.shape());
        assert_eq!(back.data_fingerprint, f.data_fingerprint);
    }

    #[test]
    fn log_linear_fit_converges() {
        let spec = ModelSpec::new(Link::LogLinear, InterceptKind::Homogeneous, vec![1], vec![1], vec![]);
        let th = ParameterVector { delta: Delta::Scalar(0.6), alpha: vec![vec![0.2, 0.1]], beta: vec![vec![0.2, 0.1]], gamma: vec![] };
        let w = WeightMatrixSet::grid_4nn(GridSpec { n: 5 }).unwrap();
        let y = simulate_path(&th, &spec, &w, None, &SimulationConfig::new(300, 4, CopulaSpec::clayton(2.0))).unwrap().counts;
        let f = fit(&spec, &w, &y, None, &FitConfig::default()).unwrap();
        assert!(f.converged);
        assert!(f.theta.ar_abs_sum() < 1.0);
    }
}
