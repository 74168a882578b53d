//! Sequential quadratic programming over a polyhedron, for smooth concave objectives.
//!
//! Each iteration solves `max g′d − ½ d′Hd` subject to the linear constraints with a
//! primal active-set method, then backtracks along d. H is supplied by the caller
//! (Fisher information here) and must be positive semi-definite.

use nalgebra::{DMatrix, DVector};

/// One inequality `coef′θ ≤ rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coef: DVector<f64>,
    pub rhs: f64,
}

impl Constraint {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.coef.dot(x)
    }

    pub fn slack(&self, x: &DVector<f64>) -> f64 {
        self.rhs - self.value(x)
    }
}

/// Supplies the constraints the step target must satisfy.
pub trait Feasible {
    /// Constraints valid on a region containing `x`.
    fn base(&self, x: &DVector<f64>) -> Vec<Constraint>;
    /// A constraint violated by `x`, if any (cutting planes for non-polyhedral descriptions).
    fn violated(&self, x: &DVector<f64>) -> Option<Constraint>;
    /// Pulls a point back inside after floating-point drift.
    fn clean(&self, x: &mut DVector<f64>);
}

/// Objective value, gradient and a curvature matrix at a point.
pub struct Model {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqpOptions {
    /// Stop once the projected gradient ∞-norm, multiplied by `grad_scale`, falls below this.
    pub tol: f64,
    pub grad_scale: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone)]
pub struct SqpOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Scaled ∞-norm of H·d at the last QP step (the gradient in the tangent cone).
    pub grad_norm: f64,
}

/// Maximizes a concave-ish objective. `eval_full` returns value, gradient and curvature;
/// `eval_value` returns only the value (None when undefined).
pub fn maximize<F: Feasible>(
    x0: DVector<f64>,
    feas: &F,
    opts: &SqpOptions,
    mut eval_full: impl FnMut(&DVector<f64>) -> Option<Model>,
    mut eval_value: impl FnMut(&DVector<f64>) -> Option<f64>,
) -> SqpOutcome {
    let mut x = x0;
    let mut model = match eval_full(&x) {
        Some(m) if m.value.is_finite() => m,
        _ => {
            return SqpOutcome { value: f64::NEG_INFINITY, x, converged: false, iterations: 0, grad_norm: f64::INFINITY };
        }
    };
    let mut grad_norm = f64::INFINITY;
    let mut stalls = 0;
    for iter in 0..opts.max_iter {
        let d = qp_step(&model.hess, &model.grad, &x, feas);
        let hd = &model.hess * &d;
        grad_norm = hd.amax() * opts.grad_scale;
        if grad_norm <= opts.tol {
            return SqpOutcome { x, value: model.value, converged: true, iterations: iter, grad_norm };
        }
        let slope = model.grad.dot(&d);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial = &x + &d * t;
            feas.clean(&mut trial);
            if let Some(v) = eval_value(&trial) {
                // allow rounding noise in the objective so that steps near the optimum,
                // whose true gain is below the resolution of the value, still go through
                let noise = 64.0 * f64::EPSILON * model.value.abs().max(1.0);
                if v.is_finite() && v >= model.value + 1e-4 * t * slope.max(0.0) - noise {
                    accepted = Some(trial);
                    break;
                }
            }
            t *= 0.5;
        }
        let Some(next) = accepted else {
            // no ascent along d: the objective cannot resolve further progress
            let converged = grad_norm <= 100.0 * opts.tol;
            return SqpOutcome { x, value: model.value, converged, iterations: iter + 1, grad_norm };
        };
        let prev = model.value;
        match eval_full(&next) {
            Some(m) if m.value.is_finite() => {
                x = next;
                model = m;
            }
            _ => return SqpOutcome { x, value: model.value, converged: false, iterations: iter + 1, grad_norm },
        }
        if (model.value - prev).abs() <= 1e-15 * (1.0 + prev.abs()) {
            stalls += 1;
            if stalls >= 3 {
                let converged = grad_norm <= 100.0 * opts.tol;
                return SqpOutcome { x, value: model.value, converged, iterations: iter + 1, grad_norm };
            }
        } else {
            stalls = 0;
        }
    }
    SqpOutcome { x, value: model.value, converged: false, iterations: opts.max_iter, grad_norm }
}

/// QP step from `x`, adding cutting planes until the target is feasible.
fn qp_step<F: Feasible>(h: &DMatrix<f64>, g: &DVector<f64>, x: &DVector<f64>, feas: &F) -> DVector<f64> {
    let mut cons = feas.base(x);
    for _ in 0..64 {
        let d = active_set_qp(h, g, x, &cons);
        let target = x + &d;
        match feas.violated(&target) {
            Some(c) if !cons.contains(&c) => cons.push(c),
            _ => return d,
        }
    }
    DVector::zeros(x.len())
}

/// max g′d − ½d′Hd s.t. cᵢ′(x + d) ≤ rᵢ, starting from the feasible d = 0.
pub fn active_set_qp(h: &DMatrix<f64>, g: &DVector<f64>, x: &DVector<f64>, cons: &[Constraint]) -> DVector<f64> {
    let n = x.len();
    // slack available at d = 0 (clamped: x is feasible up to drift)
    let e: Vec<f64> = cons.iter().map(|c| c.slack(x).max(0.0)).collect();
    let ridge = 1e-12 * h.diagonal().amax().max(1e-300);
    let hr = h + DMatrix::identity(n, n) * ridge;
    let mut d = DVector::zeros(n);
    let mut working: Vec<usize> = Vec::new();
    for (i, c) in cons.iter().enumerate() {
        if e[i] <= 1e-14 * (1.0 + c.rhs.abs()) && independent(cons, &working, i) {
            working.push(i);
        }
    }
    for _ in 0..(50 + 10 * cons.len()) {
        let (s, mu) = eq_qp(&hr, &(g - &hr * &d), cons, &working);
        let scale = d.amax().max(1.0);
        if s.amax() <= 1e-13 * scale {
            // stationary on the working face: drop the most negative multiplier
            match mu.iter().enumerate().filter(|(_, m)| **m < -1e-12).min_by(|a, b| a.1.total_cmp(b.1)) {
                Some((pos, _)) => {
                    working.remove(pos);
                }
                None => return d,
            }
            continue;
        }
        let mut alpha = 1.0;
        let mut block = None;
        for (i, c) in cons.iter().enumerate() {
            if working.contains(&i) {
                continue;
            }
            let cs = c.coef.dot(&s);
            if cs > 1e-14 * c.coef.amax() * s.amax() {
                let room = (e[i] - c.coef.dot(&d)).max(0.0);
                let a = room / cs;
                if a < alpha {
                    alpha = a;
                    block = Some(i);
                }
            }
        }
        d += &s * alpha;
        if let Some(i) = block {
            if independent(cons, &working, i) {
                working.push(i);
            } else {
                return d;
            }
        }
    }
    d
}

fn independent(cons: &[Constraint], working: &[usize], cand: usize) -> bool {
    if working.is_empty() {
        return true;
    }
    let n = cons[cand].coef.len();
    if working.len() >= n {
        return false;
    }
    let m = DMatrix::from_fn(n, working.len() + 1, |r, c| {
        let idx = if c < working.len() { working[c] } else { cand };
        cons[idx].coef[r]
    });
    let sv = m.singular_values();
    let top = sv.amax();
    sv.iter().all(|s| *s > 1e-10 * top)
}

/// Equality-constrained step: max r′s − ½s′Hs s.t. C_W s = 0. Returns (s, μ).
fn eq_qp(h: &DMatrix<f64>, r: &DVector<f64>, cons: &[Constraint], working: &[usize]) -> (DVector<f64>, DVector<f64>) {
    let n = h.nrows();
    let m = working.len();
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    for (j, &w) in working.iter().enumerate() {
        for i in 0..n {
            kkt[(n + j, i)] = cons[w].coef[i];
            kkt[(i, n + j)] = cons[w].coef[i];
        }
    }
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(r);
    match kkt.lu().solve(&rhs) {
        Some(sol) => (sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()),
        None => (DVector::zeros(n), DVector::zeros(m)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Box2;
    impl Feasible for Box2 {
        fn base(&self, _x: &DVector<f64>) -> Vec<Constraint> {
            vec![
                Constraint { coef: DVector::from_vec(vec![-1.0, 0.0]), rhs: 0.0 },
                Constraint { coef: DVector::from_vec(vec![0.0, -1.0]), rhs: 0.0 },
                Constraint { coef: DVector::from_vec(vec![1.0, 1.0]), rhs: 1.0 },
            ]
        }
        fn violated(&self, _x: &DVector<f64>) -> Option<Constraint> {
            None
        }
        fn clean(&self, _x: &mut DVector<f64>) {}
    }

    fn run(target: [f64; 2]) -> DVector<f64> {
        let t = DVector::from_vec(target.to_vec());
        let f = |x: &DVector<f64>| -0.5 * (x - &t).norm_squared();
        let out = maximize(
            DVector::from_vec(vec![0.1, 0.1]),
            &Box2,
            &SqpOptions { tol: 1e-12, grad_scale: 1.0, max_iter: 50 },
            |x| Some(Model { value: f(x), grad: &t - x, hess: DMatrix::identity(2, 2) }),
            |x| Some(f(x)),
        );
        assert!(out.converged);
        out.x
    }

    #[test]
    fn interior_optimum() {
        let x = run([0.2, 0.3]);
        assert!((x[0] - 0.2).abs() < 1e-12 && (x[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn bound_and_sum_constraints() {
        let x = run([-1.0, 0.5]);
        assert!(x[0].abs() < 1e-12 && (x[1] - 0.5).abs() < 1e-12);
        // projection of (1, 1) onto x + y ≤ 1
        let x = run([1.0, 1.0]);
        assert!((x[0] - 0.5).abs() < 1e-12 && (x[1] - 0.5).abs() < 1e-12);
        let x = run([2.0, -3.0]);
        assert!((x[0] - 1.0).abs() < 1e-12 && x[1].abs() < 1e-12);
    }
}
