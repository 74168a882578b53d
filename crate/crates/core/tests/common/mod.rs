#![allow(dead_code)]

use pstarmax::simulate::{generate_arma_covariate, ArmaCovariateConfig, CovariateShift};
use pstarmax::{
    simulate_path, CopulaSpec, CountPanel, CovariatePanel, Delta, GridSpec, InterceptKind, Link, ModelSpec,
    ParameterVector, SimulationConfig, WeightMatrixSet,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A model, a parameter value and data simulated from it.
pub struct Case {
    pub spec: ModelSpec,
    pub theta: ParameterVector,
    pub w: WeightMatrixSet,
    pub y: CountPanel,
    pub x: Option<CovariatePanel>,
}

pub fn random_case(seed: u64, q: usize, link: Link, intercept: InterceptKind, with_x: bool) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = WeightMatrixSet::grid_4nn(GridSpec::new(3).unwrap()).unwrap();
    let p = w.p();
    let r = rng.random_range(1..=2usize);
    let a: Vec<usize> = (0..q).map(|_| rng.random_range(0..=1)).collect();
    let b: Vec<usize> = (0..r).map(|_| rng.random_range(0..=1)).collect();
    let s: Vec<usize> = if with_x { vec![rng.random_range(0..=1)] } else { vec![] };
    let spec = ModelSpec::new(link, intercept, a.clone(), b.clone(), s.clone());
    let n_ar = spec.n_alpha() + spec.n_beta();
    let budget = 0.7 / n_ar as f64;
    let mut coef = |o: &[usize]| -> Vec<Vec<f64>> {
        o.iter()
            .map(|&o| {
                (0..=o)
                    .map(|_| match link {
                        Link::Linear => rng.random_range(0.2..1.0) * budget,
                        Link::LogLinear => rng.random_range(-1.0..1.0) * budget,
                    })
                    .collect()
            })
            .collect()
    };
    let alpha = coef(&a);
    let beta = coef(&b);
    let gamma: Vec<Vec<f64>> = s
        .iter()
        .map(|&o| {
            (0..=o)
                .map(|_| match link {
                    Link::Linear => rng.random_range(0.2..1.0),
                    Link::LogLinear => rng.random_range(-0.5..0.5),
                })
                .collect()
        })
        .collect();
    let mut d = || match link {
        Link::Linear => rng.random_range(1.0..4.0),
        Link::LogLinear => rng.random_range(0.2..1.2),
    };
    let delta = match intercept {
        InterceptKind::Homogeneous => Delta::Scalar(d()),
        InterceptKind::Inhomogeneous => Delta::Vector((0..p).map(|_| d()).collect()),
    };
    let theta = ParameterVector { delta, alpha, beta, gamma };
    let t = 60;
    let x = with_x.then(|| {
        let shift = match link {
            Link::Linear => CovariateShift::NonNegative,
            Link::LogLinear => CovariateShift::Centered,
        };
        generate_arma_covariate(p, t + 2, seed ^ 0xabc, &ArmaCovariateConfig { shift, ..Default::default() }).unwrap()
    });
    let cfg = SimulationConfig::new(t, seed, CopulaSpec::clayton(1.0));
    let y = simulate_path(&theta, &spec, &w, x.as_ref(), &cfg).unwrap().counts;
    Case { spec, theta, w, y, x }
}

/// Central-difference gradient of `f` at `x` with step 1e-6·(1+|xₖ|).
pub fn central_difference(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let h = 1e-6 * (1.0 + x[k].abs());
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[k] += h;
            dn[k] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

/// Worst relative disagreement between two gradients, scaled by max(1, |fd|).
pub fn max_rel_error(analytic: &[f64], fd: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(fd)
        .map(|(a, f)| (a - f).abs() / f.abs().max(1.0))
        .fold(0.0, f64::max)
}
