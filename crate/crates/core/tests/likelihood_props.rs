mod common;

use common::{central_difference, max_rel_error, random_case};
use pstarmax::likelihood::{evaluate, DerivMode, Level, Problem};
use pstarmax::{
    filter_intensity, quasi_log_lik, score, InitStrategy, InterceptKind, Link, ParameterVector,
};
use proptest::prelude::*;

fn link_of(b: bool) -> Link {
    if b { Link::Linear } else { Link::LogLinear }
}

fn intercept_of(b: bool) -> InterceptKind {
    if b { InterceptKind::Homogeneous } else { InterceptKind::Inhomogeneous }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn score_matches_finite_differences(seed in any::<u64>(), q in 0usize..=2, lin in any::<bool>(), hom in any::<bool>(), with_x in any::<bool>()) {
        let c = random_case(seed, q, link_of(lin), intercept_of(hom), with_x);
        let p = c.w.p();
        let init = InitStrategy::FirstObs;
        let an = score(&c.theta, &c.spec, &c.w, &c.y, c.x.as_ref(), &init).unwrap();
        let ll = |v: &[f64]| {
            let th = ParameterVector::unpack(v, &c.spec, p).unwrap();
            let st = filter_intensity(&th, &c.spec, &c.w, &c.y, c.x.as_ref(), &init).unwrap();
            quasi_log_lik(&st, &c.y).unwrap()
        };
        let fd = central_difference(&c.theta.pack(), ll);
        let err = max_rel_error(an.as_slice(), &fd);
        prop_assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn streaming_equals_materialized(seed in any::<u64>(), q in 0usize..=2, lin in any::<bool>()) {
        let c = random_case(seed, q, link_of(lin), InterceptKind::Homogeneous, true);
        let init = InitStrategy::GlobalMean;
        let prob = Problem::new(&c.spec, &c.w, &c.y, c.x.as_ref(), &init).unwrap();
        let a = evaluate(&prob, &c.theta, Level::Info, DerivMode::Streaming).unwrap();
        let b = evaluate(&prob, &c.theta, Level::Info, DerivMode::Materialized).unwrap();
        let (sa, sb) = (a.score.unwrap(), b.score.unwrap());
        prop_assert!((&sa - &sb).amax() <= 1e-12 * sa.amax().max(1.0));
        prop_assert!((a.fisher.unwrap() - b.fisher.unwrap()).amax() <= 1e-12);
    }

    #[test]
    fn filter_is_permutation_equivariant(seed in any::<u64>(), q in 0usize..=2, lin in any::<bool>(), perm_seed in any::<u64>()) {
        use rand::{seq::SliceRandom, SeedableRng};
        let c = random_case(seed, q, link_of(lin), InterceptKind::Homogeneous, false);
        let p = c.w.p();
        let mut perm: Vec<usize> = (0..p).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
        // permuted[i] = original[perm[i]]
        let dense: Vec<_> = c.w.matrices().iter().map(|m| {
            let d = m.to_dense();
            nalgebra::DMatrix::from_fn(p, p, |i, j| d[(perm[i], perm[j])])
        }).collect();
        let wp = pstarmax::WeightMatrixSet::from_dense(dense).unwrap();
        let yp = c.y.permuted(&perm);
        let init = InitStrategy::FirstObs;
        let a = filter_intensity(&c.theta, &c.spec, &c.w, &c.y, None, &init).unwrap();
        let b = filter_intensity(&c.theta, &c.spec, &wp, &yp, None, &init).unwrap();
        for t in a.first_time()..a.len() {
            for i in 0..p {
                prop_assert!((a.eta(t)[perm[i]] - b.eta(t)[i]).abs() <= 1e-10 * a.eta(t)[perm[i]].abs().max(1.0));
            }
        }
    }

    #[test]
    fn linear_intensity_monotone_in_beta(seed in any::<u64>(), q in 0usize..=2, bump in 0.001f64..0.05) {
        let c = random_case(seed, q, Link::Linear, InterceptKind::Homogeneous, true);
        let init = InitStrategy::FirstObs;
        let mut th = c.theta.clone();
        th.beta[0][0] += bump;
        let a = filter_intensity(&c.theta, &c.spec, &c.w, &c.y, c.x.as_ref(), &init).unwrap();
        let b = filter_intensity(&th, &c.spec, &c.w, &c.y, c.x.as_ref(), &init).unwrap();
        for t in a.first_time()..a.len() {
            for (u, v) in a.eta(t).iter().zip(b.eta(t)) {
                prop_assert!(v >= u);
            }
        }
    }

    #[test]
    fn info_matrices_symmetric_psd(seed in any::<u64>(), q in 0usize..=2, lin in any::<bool>()) {
        let c = random_case(seed, q, link_of(lin), InterceptKind::Homogeneous, false);
        let info = pstarmax::info_matrices(&c.theta, &c.spec, &c.w, &c.y, None, &InitStrategy::FirstObs).unwrap();
        for m in [&info.h, &info.g] {
            prop_assert!((m - m.transpose()).amax() < 1e-10);
            let ev = m.clone().symmetric_eigen().eigenvalues;
            prop_assert!(ev.iter().all(|&e| e > -1e-9 * m.amax()));
        }
    }
}

#[test]
fn quasi_log_lik_hand_value() {
    // two locations, two likelihood time points, no dynamics: λ is δ everywhere
    use pstarmax::{CountPanel, Delta, ModelSpec, WeightMatrixSet};
    let spec = ModelSpec::new(Link::Linear, InterceptKind::Inhomogeneous, vec![], vec![0], vec![]);
    let w = WeightMatrixSet::identity(2);
    let y = CountPanel::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0], vec![0.0, 3.0]]).unwrap();
    let th1 = ParameterVector { delta: Delta::Vector(vec![1.0, 1.0]), alpha: vec![], beta: vec![vec![0.0]], gamma: vec![] };
    let th2 = ParameterVector { delta: Delta::Vector(vec![2.0, 3.0]), ..th1.clone() };
    // λ = [[1,1],[2,3]] split across two single-step panels
    let a = quasi_log_lik(&filter_intensity(&th1, &spec, &w, &y.slice(0..2).unwrap(), None, &InitStrategy::FirstObs).unwrap(), &y.slice(0..2).unwrap()).unwrap();
    let yb = CountPanel::from_rows(&[vec![0.0, 0.0], vec![0.0, 3.0]]).unwrap();
    let b = quasi_log_lik(&filter_intensity(&th2, &spec, &w, &yb, None, &InitStrategy::FirstObs).unwrap(), &yb).unwrap();
    let expect = (1.0 * 1f64.ln() - 1.0) + (2.0 * 1f64.ln() - 1.0) + (0.0 - 2.0) + (3.0 * 3f64.ln() - 3.0);
    assert!((a + b - expect).abs() < 1e-12);
}

#[test]
fn initialization_effect_decays() {
    let c = random_case(17, 1, Link::LogLinear, InterceptKind::Homogeneous, false);
    // Table-1-like log-linear first-order coefficients
    let mut th = c.theta.clone();
    th.delta = pstarmax::Delta::Scalar(0.6);
    th.alpha = vec![vec![0.2, 0.1]];
    let spec = pstarmax::ModelSpec::new(Link::LogLinear, InterceptKind::Homogeneous, vec![1], vec![1], vec![]);
    th.beta = vec![vec![0.2, 0.1]];
    let y = pstarmax::simulate_path(&th, &spec, &c.w, None, &pstarmax::SimulationConfig::new(60, 3, pstarmax::CopulaSpec::independent())).unwrap().counts;
    let a = filter_intensity(&th, &spec, &c.w, &y, None, &InitStrategy::FirstObs).unwrap();
    let b = filter_intensity(&th, &spec, &c.w, &y, None, &InitStrategy::Zero).unwrap();
    let gap = |t: usize| a.intensity(t).iter().zip(b.intensity(t)).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    assert!(gap(1) > 0.0);
    assert!(gap(50) < 1e-6 * gap(1));
}
