//! Monte Carlo replication engine: simulate, fit, test and aggregate.

use crate::copula::CopulaSpec;
use crate::error::{invalid, Error, Result};
use crate::estimate::{fit, FitConfig, FitResult};
use crate::forecast::{mae, mse_params, mspe};
use crate::inference::{compare_models, single_param_test, wald_test, WaldResult};
use crate::likelihood::{filter_intensity, InitStrategy};
use crate::model::{CovariatePanel, Link, ModelSpec, ParameterVector};
use crate::simulate::{generate_arma_covariate, simulate_path, ArmaCovariateConfig, SimulatedPath, SimulationConfig};
use crate::weights::{GridSpec, WeightMatrixSet};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

/// Name recorded in reports for the per-replicate seed derivation.
pub const SEED_MIX: &str = "splitmix64";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Initialization,
    Size,
    Power,
    Anisotropy,
    Copula,
    InterceptMisspec,
    LinkMisspec,
}

/// Built-in weight sets; grids use the column-wise location numbering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightsSource {
    /// [I, W_4NN] on an n×n grid.
    Grid4nn { n: usize },
    /// [I, W_NS, W_WE] on an n×n grid.
    GridDirectional { n: usize },
    Identity { p: usize },
}

impl WeightsSource {
    pub fn build(&self) -> Result<WeightMatrixSet> {
        match *self {
            WeightsSource::Grid4nn { n } => WeightMatrixSet::grid_4nn(GridSpec::new(n)?),
            WeightsSource::GridDirectional { n } => WeightMatrixSet::grid_directional(GridSpec::new(n)?),
            WeightsSource::Identity { p } => Ok(WeightMatrixSet::identity(p)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub spec: ModelSpec,
    pub theta: ParameterVector,
    pub weights: WeightsSource,
    #[serde(default)]
    pub copula: CopulaSpec,
    /// ARMA(1,1) covariate settings; generated once and shared by all replicates.
    #[serde(default)]
    pub covariate: Option<ArmaCovariateConfig>,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

fn default_burn_in() -> usize {
    100
}

/// Initialization used when fitting; `TrueValues` takes the simulator's own feedback state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitChoice {
    #[default]
    FirstObs,
    GlobalMean,
    Zero,
    TrueValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub name: String,
    pub spec: ModelSpec,
    /// Defaults to the generator's weights.
    #[serde(default)]
    pub weights: Option<WeightsSource>,
    #[serde(default)]
    pub init: InitChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    /// θₖ = 0, boundary-adjusted for the linear link.
    Single { index: usize },
    /// Cθ = c₀ with rows of C given row by row.
    Contrast { c: Vec<Vec<f64>>, c0: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSpec {
    pub name: String,
    pub fit: String,
    pub kind: TestKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyPlan {
    pub kind: StudyKind,
    pub generator: GeneratorSpec,
    pub t_values: Vec<usize>,
    pub fits: Vec<FittedModel>,
    #[serde(default)]
    pub tests: Vec<TestSpec>,
    pub replicates: usize,
    pub master_seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub fit_config: FitConfig,
}

fn default_alpha() -> f64 {
    0.05
}

impl StudyPlan {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 || self.t_values.is_empty() || self.fits.is_empty() {
            return invalid("a study needs at least one replicate, one T and one fitted model");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return invalid("test level must lie in (0, 1)");
        }
        let w = self.generator.weights.build()?;
        self.generator.theta.check(&self.generator.spec, w.p())?;
        if (self.generator.spec.m() > 0) != self.generator.covariate.is_some() {
            return invalid("generator covariate settings do not match its model");
        }
        for f in &self.fits {
            let fw = f.weights.unwrap_or(self.generator.weights).build()?;
            if fw.p() != w.p() {
                return invalid(format!("fit '{}' has {} locations, generator has {}", f.name, fw.p(), w.p()));
            }
            f.spec.check_weights(&fw)?;
            if f.spec.m() > self.generator.spec.m() {
                return invalid(format!("fit '{}' uses more covariates than are generated", f.name));
            }
        }
        for t in &self.tests {
            let Some(f) = self.fits.iter().find(|f| f.name == t.fit) else {
                return invalid(format!("test '{}' refers to unknown fit '{}'", t.name, t.fit));
            };
            let k = f.spec.n_params(w.p());
            match &t.kind {
                TestKind::Single { index } if *index >= k => {
                    return invalid(format!("test '{}' index {index} out of range (K = {k})", t.name))
                }
                TestKind::Contrast { c, c0 } if c.len() != c0.len() || c.iter().any(|r| r.len() != k) => {
                    return invalid(format!("test '{}' contrast does not match K = {k}", t.name))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `i` at sample size `t`; depends on nothing else.
pub fn replicate_seed(master: u64, t: usize, i: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ t as u64) ^ i as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub name: String,
    pub converged: bool,
    pub error: Option<String>,
    pub iterations: usize,
    pub loglik: Option<f64>,
    pub qic: Option<f64>,
    pub theta: Vec<f64>,
    /// Parameter MSE against the generator, when the fitted model has its shape.
    pub mse: Option<f64>,
    /// In-sample one-step errors of the filtered intensities.
    pub mae: Option<f64>,
    pub mspe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRow {
    pub name: String,
    pub result: Option<WaldResult>,
    pub reject: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub t: usize,
    pub seed: u64,
    pub fits: Vec<FitRow>,
    pub tests: Vec<TestRow>,
    pub qic_winner: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitAggregate {
    pub name: String,
    pub n: usize,
    pub nonconvergence_rate: f64,
    pub mean_mse: Option<f64>,
    pub median_mse: Option<f64>,
    pub mean_theta: Vec<f64>,
    pub bias: Option<Vec<f64>>,
    pub mean_mae: Option<f64>,
    pub mean_mspe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestAggregate {
    pub name: String,
    pub n: usize,
    pub rejections: usize,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub t: usize,
    pub fits: Vec<FitAggregate>,
    pub tests: Vec<TestAggregate>,
    /// Share of replicates in which each fit had the lowest QIC.
    pub qic_preference: BTreeMap<String, f64>,
}

impl Aggregate {
    pub fn fit(&self, name: &str) -> Option<&FitAggregate> {
        self.fits.iter().find(|f| f.name == name)
    }

    pub fn test(&self, name: &str) -> Option<&TestAggregate> {
        self.tests.iter().find(|f| f.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub plan: StudyPlan,
    pub seed_derivation: String,
    pub rows: Vec<ReplicateRow>,
    pub aggregates: Vec<Aggregate>,
    /// Informational only.
    pub elapsed_seconds: f64,
}

impl StudyReport {
    pub fn aggregate(&self, t: usize) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.t == t)
    }

    /// Long-format replicate rows: `replicate,t,seed,item,metric,value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["replicate", "t", "seed", "item", "metric", "value"])?;
        for r in &self.rows {
            let mut rec = |item: &str, metric: &str, value: String| {
                out.write_record([r.replicate.to_string(), r.t.to_string(), r.seed.to_string(), item.into(), metric.into(), value])
            };
            for f in &r.fits {
                rec(&f.name, "converged", f.converged.to_string())?;
                rec(&f.name, "iterations", f.iterations.to_string())?;
                for (metric, v) in [("loglik", f.loglik), ("qic", f.qic), ("mae", f.mae), ("mspe", f.mspe), ("mse", f.mse)] {
                    if let Some(v) = v {
                        rec(&f.name, metric, v.to_string())?;
                    }
                }
                if let Some(e) = &f.error {
                    rec(&f.name, "error", e.clone())?;
                }
                for (k, v) in f.theta.iter().enumerate() {
                    rec(&f.name, &format!("theta[{k}]"), v.to_string())?;
                }
            }
            for t in &r.tests {
                if let Some(res) = t.result {
                    rec(&t.name, "statistic", res.statistic.to_string())?;
                    rec(&t.name, "p_value", res.p_value.to_string())?;
                    rec(&t.name, "reject", t.reject.unwrap_or(false).to_string())?;
                }
            }
            if let Some(wn) = &r.qic_winner {
                rec("qic", "winner", wn.clone())?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Inputs shared across replicates.
struct Prepared {
    gen_w: WeightMatrixSet,
    fit_w: Vec<WeightMatrixSet>,
    covariates: Option<CovariatePanel>,
}

fn prepare(plan: &StudyPlan) -> Result<Prepared> {
    plan.validate()?;
    let gen_w = plan.generator.weights.build()?;
    let fit_w = plan
        .fits
        .iter()
        .map(|f| f.weights.unwrap_or(plan.generator.weights).build())
        .collect::<Result<_>>()?;
    let t_max = *plan.t_values.iter().max().expect("validated");
    let covariates = match &plan.generator.covariate {
        Some(cfg) => Some(generate_arma_covariate(gen_w.p(), t_max + 2, splitmix64(plan.master_seed ^ 0xC0FF_EE00), cfg)?),
        None => None,
    };
    Ok(Prepared { gen_w, fit_w, covariates })
}

/// Covariates as seen by a fitted model: the first m series, shifted to be nonnegative
/// for a linear-link fit if needed.
fn fit_covariates(x: &CovariatePanel, spec: &ModelSpec, len: usize) -> Result<Option<CovariatePanel>> {
    if spec.m() == 0 {
        return Ok(None);
    }
    let x = x.slice_time(0..len)?;
    let (m, p) = (spec.m(), x.p());
    let mut data = Vec::with_capacity(len * m * p);
    for t in 0..len {
        for k in 0..m {
            data.extend_from_slice(x.slice(k, t));
        }
    }
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    if spec.link == Link::Linear && lo < 0.0 {
        data.iter_mut().for_each(|v| *v -= lo);
    }
    Ok(Some(CovariatePanel::new(m, p, data)?))
}

fn true_init(path: &SimulatedPath, spec: &ModelSpec) -> InitStrategy {
    let t0 = spec.first_time();
    InitStrategy::Supplied((t0 - spec.q()..t0).map(|s| path.eta_row(s).to_vec()).collect())
}

fn run_replicate(plan: &StudyPlan, prep: &Prepared, t: usize, i: usize) -> ReplicateRow {
    let seed = replicate_seed(plan.master_seed, t, i);
    let mut row = ReplicateRow { replicate: i, t, seed, fits: vec![], tests: vec![], qic_winner: None, error: None };
    let g = &plan.generator;
    let cfg = SimulationConfig { n_time: t, burn_in: g.burn_in, seed, lambda_init: None, copula: g.copula };
    let path = match simulate_path(&g.theta, &g.spec, &prep.gen_w, prep.covariates.as_ref(), &cfg) {
        Ok(p) => p,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    let y = &path.counts;
    let truth = g.theta.pack();
    let mut fitted: Vec<Option<FitResult>> = Vec::with_capacity(plan.fits.len());
    for (fm, w) in plan.fits.iter().zip(&prep.fit_w) {
        let attempt = || -> Result<(FitResult, f64, f64)> {
            let x = match &prep.covariates {
                Some(x) => fit_covariates(x, &fm.spec, y.len())?,
                None => None,
            };
            let init = match fm.init {
                InitChoice::FirstObs => InitStrategy::FirstObs,
                InitChoice::GlobalMean => InitStrategy::GlobalMean,
                InitChoice::Zero => InitStrategy::Zero,
                InitChoice::TrueValues => true_init(&path, &fm.spec),
            };
            let fc = FitConfig { init: init.clone(), ..plan.fit_config.clone() };
            let f = fit(&fm.spec, w, y, x.as_ref(), &fc)?;
            let st = filter_intensity(&f.theta, &fm.spec, w, y, x.as_ref(), &init)?;
            let t0 = st.first_time();
            let lam: Vec<f64> = (0..y.len()).flat_map(|s| if s < t0 { y.row(s).to_vec() } else { st.intensity(s) }).collect();
            Ok((f.clone(), mae(&y.slice(t0..y.len())?, &lam[t0 * y.p()..])?, mspe(y, &lam, t0)?))
        };
        match attempt() {
            Ok((f, mae_v, mspe_v)) => {
                let theta = f.theta.pack();
                let mse = (fm.spec == g.spec && theta.len() == truth.len()).then(|| mse_params(&theta, &truth).ok()).flatten();
                row.fits.push(FitRow {
                    name: fm.name.clone(),
                    converged: f.converged,
                    error: None,
                    iterations: f.iterations,
                    loglik: Some(f.loglik),
                    qic: Some(f.qic),
                    theta,
                    mse,
                    mae: Some(mae_v),
                    mspe: Some(mspe_v),
                });
                fitted.push(Some(f));
            }
            Err(e) => {
                row.fits.push(FitRow {
                    name: fm.name.clone(),
                    converged: false,
                    error: Some(e.to_string()),
                    iterations: 0,
                    loglik: None,
                    qic: None,
                    theta: vec![],
                    mse: None,
                    mae: None,
                    mspe: None,
                });
                fitted.push(None);
            }
        }
    }
    for ts in &plan.tests {
        let idx = plan.fits.iter().position(|f| f.name == ts.fit).expect("validated");
        let result = fitted[idx].as_ref().filter(|f| f.converged).and_then(|f| match &ts.kind {
            TestKind::Single { index } => single_param_test(f, *index).ok(),
            TestKind::Contrast { c, c0 } => {
                let cm = DMatrix::from_fn(c.len(), c[0].len(), |r, k| c[r][k]);
                wald_test(f, &cm, &DVector::from_column_slice(c0)).ok()
            }
        });
        row.tests.push(TestRow { name: ts.name.clone(), reject: result.map(|r| r.rejects(plan.alpha)), result });
    }
    let ok: Vec<(usize, &FitResult)> = fitted.iter().enumerate().filter_map(|(i, f)| f.as_ref().filter(|f| f.converged).map(|f| (i, f))).collect();
    if ok.len() == fitted.len() && ok.len() > 1 {
        let refs: Vec<&FitResult> = ok.iter().map(|(_, f)| *f).collect();
        if let Ok(order) = compare_models(&refs) {
            row.qic_winner = Some(plan.fits[ok[order[0]].0].name.clone());
        }
    }
    row
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn aggregate(plan: &StudyPlan, rows: &[ReplicateRow], t: usize) -> Aggregate {
    let rows: Vec<&ReplicateRow> = rows.iter().filter(|r| r.t == t).collect();
    let truth = plan.generator.theta.pack();
    let fits = plan
        .fits
        .iter()
        .enumerate()
        .map(|(fi, fm)| {
            let all: Vec<&FitRow> = rows.iter().filter_map(|r| r.fits.get(fi)).collect();
            let good: Vec<&FitRow> = all.iter().copied().filter(|f| f.converged).collect();
            let n_total = rows.len().max(1);
            let k = good.first().map_or(0, |f| f.theta.len());
            let mean_theta: Vec<f64> = (0..k).map(|j| good.iter().map(|f| f.theta[j]).sum::<f64>() / good.len() as f64).collect();
            let mses: Vec<f64> = good.iter().filter_map(|f| f.mse).collect();
            let bias = (fm.spec == plan.generator.spec && k == truth.len() && k > 0)
                .then(|| mean_theta.iter().zip(&truth).map(|(a, b)| a - b).collect());
            let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            FitAggregate {
                name: fm.name.clone(),
                n: good.len(),
                nonconvergence_rate: (n_total - good.len()) as f64 / n_total as f64,
                mean_mse: mean(mses.clone()),
                median_mse: median(mses),
                mean_theta,
                bias,
                mean_mae: mean(good.iter().filter_map(|f| f.mae).collect()),
                mean_mspe: mean(good.iter().filter_map(|f| f.mspe).collect()),
            }
        })
        .collect();
    let tests = plan
        .tests
        .iter()
        .enumerate()
        .map(|(ti, ts)| {
            let decided: Vec<bool> = rows.iter().filter_map(|r| r.tests.get(ti).and_then(|t| t.reject)).collect();
            let rejections = decided.iter().filter(|b| **b).count();
            TestAggregate {
                name: ts.name.clone(),
                n: decided.len(),
                rejections,
                rate: (!decided.is_empty()).then(|| rejections as f64 / decided.len() as f64),
            }
        })
        .collect();
    let winners: Vec<&String> = rows.iter().filter_map(|r| r.qic_winner.as_ref()).collect();
    let qic_preference = if winners.is_empty() {
        BTreeMap::new()
    } else {
        plan.fits
            .iter()
            .map(|f| (f.name.clone(), winners.iter().filter(|w| ***w == f.name).count() as f64 / winners.len() as f64))
            .collect()
    };
    Aggregate { t, fits, tests, qic_preference }
}

/// Runs every (T, replicate) pair on `jobs` worker threads. Output does not depend on `jobs`.
pub fn run_study(plan: &StudyPlan, jobs: usize) -> Result<StudyReport> {
    let start = Instant::now();
    let prep = prepare(plan)?;
    let tasks: Vec<(usize, usize)> = plan.t_values.iter().flat_map(|&t| (0..plan.replicates).map(move |i| (t, i))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    let rows: Vec<ReplicateRow> = pool.install(|| tasks.par_iter().map(|&(t, i)| run_replicate(plan, &prep, t, i)).collect());
    let aggregates = plan.t_values.iter().map(|&t| aggregate(plan, &rows, t)).collect();
    Ok(StudyReport {
        plan: plan.clone(),
        seed_derivation: SEED_MIX.into(),
        rows,
        aggregates,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Rejection rates of one test across values of one generator parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub param_index: usize,
    pub test: String,
    pub t: usize,
    pub values: Vec<f64>,
    pub rates: Vec<f64>,
    /// Largest distance between the rates and their isotonic fit in |value|.
    pub isotonic_residual: f64,
}

impl PowerCurve {
    pub fn is_monotone(&self, tol: f64) -> bool {
        self.isotonic_residual < tol
    }
}

/// Pool-adjacent-violators fit of a nondecreasing sequence.
pub fn isotonic_fit(y: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a <= b {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            blocks.push(((a * na as f64 + b * nb as f64) / (na + nb) as f64, na + nb));
        }
    }
    blocks.into_iter().flat_map(|(v, n)| std::iter::repeat_n(v, n)).collect()
}

/// Sweeps packed generator parameter `param_index` over `grid` at the plan's first T.
pub fn power_curve(plan: &StudyPlan, param_index: usize, grid: &[f64], test: &str, jobs: usize) -> Result<PowerCurve> {
    if !plan.tests.iter().any(|t| t.name == test) {
        return invalid(format!("plan has no test named '{test}'"));
    }
    let p = plan.generator.weights.build()?.p();
    let mut base = plan.generator.theta.pack();
    if param_index >= base.len() {
        return invalid(format!("parameter index {param_index} out of range"));
    }
    let t = plan.t_values[0];
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[a].abs().total_cmp(&grid[b].abs()));
    let mut values = Vec::with_capacity(grid.len());
    let mut rates = Vec::with_capacity(grid.len());
    for &gi in &order {
        base[param_index] = grid[gi];
        let mut pl = plan.clone();
        pl.t_values = vec![t];
        pl.generator.theta = ParameterVector::unpack(&base, &plan.generator.spec, p)?;
        let rep = run_study(&pl, jobs)?;
        let agg = rep.aggregate(t).and_then(|a| a.test(test)).expect("test present");
        values.push(grid[gi]);
        rates.push(agg.rate.ok_or_else(|| Error::Numerical(format!("no valid '{test}' decisions at value {}", grid[gi])))?);
    }
    let fitted = isotonic_fit(&rates);
    let isotonic_residual = rates.iter().zip(&fitted).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(PowerCurve { param_index, test: test.into(), t, values, rates, isotonic_residual })
}

/// `n` equally spaced points on [lo, hi].
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Delta, InterceptKind};

    fn tiny_plan(replicates: usize) -> StudyPlan {
        let spec = ModelSpec::new(Link::Linear, InterceptKind::Homogeneous, vec![], vec![1], vec![]);
        StudyPlan {
            kind: StudyKind::Size,
            generator: GeneratorSpec {
                spec: spec.clone(),
                theta: ParameterVector { delta: Delta::Scalar(3.0), alpha: vec![], beta: vec![vec![0.3, 0.2]], gamma: vec![] },
                weights: WeightsSource::Grid4nn { n: 3 },
                copula: CopulaSpec::clayton(2.0),
                covariate: None,
                burn_in: 50,
            },
            t_values: vec![60],
            fits: vec![FittedModel { name: "m".into(), spec, weights: None, init: InitChoice::FirstObs }],
            tests: vec![TestSpec { name: "b11".into(), fit: "m".into(), kind: TestKind::Single { index: 2 } }],
            replicates,
            master_seed: 42,
            alpha: 0.05,
            fit_config: FitConfig::default(),
        }
    }

    #[test]
    fn single_replicate_aggregates_equal_row() {
        let rep = run_study(&tiny_plan(1), 1).unwrap();
        assert_eq!(rep.rows.len(), 1);
        let agg = rep.aggregate(60).unwrap();
        let row = &rep.rows[0].fits[0];
        assert_eq!(agg.fits[0].mean_theta, row.theta);
        assert_eq!(agg.fits[0].median_mse, row.mse);
    }

    #[test]
    fn deterministic_and_replicate_independent() {
        let a = run_study(&tiny_plan(3), 1).unwrap();
        let b = run_study(&tiny_plan(3), 2).unwrap();
        assert_eq!(a.rows, b.rows);
        let c = run_study(&tiny_plan(5), 1).unwrap();
        assert_eq!(a.rows[..], c.rows[..3]);
    }

    #[test]
    fn pava() {
        assert_eq!(isotonic_fit(&[1.0, 3.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert!(isotonic_fit(&[0.2, 0.1, 0.0]).iter().all(|v| (v - 0.1).abs() < 1e-15));
    }

    #[test]
    fn plan_json_roundtrip() {
        let plan = tiny_plan(2);
        let s = serde_json::to_string(&plan).unwrap();
        assert_eq!(serde_json::from_str::<StudyPlan>(&s).unwrap(), plan);
    }
}
