//! Majorization-minimization engine for difference-of-concave maximization.
//!
//! Objectives of the form `concave − concave` (and constraints of the form
//! `concave − convex ≤ c`) are handled by replacing the offending concave
//! terms with their tangent planes. Tangents of concave functions are global
//! upper bounds, so the surrogate objective minorizes the true one and the
//! surrogate constraints are tighter than the true ones. Any surrogate
//! improvement is therefore a true improvement.

use std::f64::consts::LN_2;

use num_complex::Complex64;

use crate::gaussinfo::{inverse_pd, logdet2, CMatrix, HermitianPSD};
use crate::{Error, Result};

/// Tangent plane of `log2 det(·)` at a positive definite point `M0`:
/// `M ↦ log2 det M0 + tr(M0⁻¹ (M − M0)) / ln 2`.
#[derive(Debug, Clone)]
pub struct LogdetTangent {
    base: CMatrix,
    inverse: CMatrix,
    value_at_base: f64,
}

pub fn linearize_logdet(m0: &HermitianPSD) -> Result<LogdetTangent> {
    Ok(LogdetTangent {
        value_at_base: logdet2(m0)?,
        inverse: inverse_pd(m0)?,
        base: m0.matrix().clone(),
    })
}

impl LogdetTangent {
    pub fn eval(&self, m: &CMatrix) -> f64 {
        self.value_at_base + self.slope(&(m - &self.base))
    }

    /// `tr(M0⁻¹ D) / ln 2` for a Hermitian direction `D`.
    pub fn slope(&self, direction: &CMatrix) -> f64 {
        trace_product(&self.inverse, direction) / LN_2
    }

    /// Gradient of `log2 det` at the base point, `M0⁻¹ / ln 2`.
    pub fn gradient(&self) -> CMatrix {
        &self.inverse * Complex64::new(1.0 / LN_2, 0.0)
    }

    pub fn value_at_base(&self) -> f64 {
        self.value_at_base
    }

    /// `v^H M0⁻¹ v / ln 2`, the slope along the rank-one direction `v v^H`.
    pub fn rank_one_slope(&self, v: &nalgebra::DVectorView<'_, Complex64>) -> f64 {
        (v.adjoint() * &self.inverse * v)[(0, 0)].re / LN_2
    }
}

/// Real part of `tr(A B)`.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..a.ncols() {
            acc += (a[(i, j)] * b[(j, i)]).re;
        }
    }
    acc
}

/// Tangent of `log2(x)` at `x0 > 0`.
#[derive(Debug, Clone, Copy)]
pub struct LogTangent {
    pub x0: f64,
    pub value_at_base: f64,
}

impl LogTangent {
    pub fn at(x0: f64) -> Result<Self> {
        if !(x0 > 0.0) {
            return Err(Error::NotPositiveDefinite { context: "log tangent", eigenvalue: x0 });
        }
        Ok(Self { x0, value_at_base: x0.log2() })
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.value_at_base + (x - self.x0) / (self.x0 * LN_2)
    }

    pub fn slope(&self) -> f64 {
        1.0 / (self.x0 * LN_2)
    }
}

/// Convergence record of one MM run. Index 0 holds the initial point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MmTrace {
    pub objective_per_iteration: Vec<f64>,
    pub constraint_violation_per_iteration: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl MmTrace {
    /// True when no accepted iterate lowered the objective by more than `slack`.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.objective_per_iteration.windows(2).all(|w| w[1] >= w[0] - slack)
    }

    pub fn final_violation(&self) -> f64 {
        self.constraint_violation_per_iteration.last().copied().unwrap_or(0.0)
    }
}

/// A maximization problem solved by successive surrogates.
pub trait MmProblem {
    type Point: Clone;
    type Surrogate;

    /// True objective to be maximized.
    fn objective(&self, x: &Self::Point) -> f64;

    /// Largest violation of the true constraints (0 when feasible).
    fn violation(&self, x: &Self::Point) -> f64;

    /// Builds the surrogate that is tight at `x`.
    fn majorize(&self, x: &Self::Point, iteration: usize) -> Result<Self::Surrogate>;

    /// Improves the surrogate starting from `x`.
    fn solve_inner(&self, surrogate: &Self::Surrogate, x: &Self::Point) -> Result<Self::Point>;

    /// Point at fraction `t` of the way from `from` to `to`.
    fn blend(&self, from: &Self::Point, to: &Self::Point, t: f64) -> Self::Point;

    /// Iterations that must run before the relative-change test may stop.
    fn min_iterations(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmOptions {
    /// Relative objective change below which the run stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Halvings toward the previous iterate before giving up on a candidate.
    pub max_backtracks: usize,
    /// Accepted violation of the true constraints.
    pub feasibility_tol: f64,
}

impl Default for MmOptions {
    fn default() -> Self {
        Self { tol: 1e-4, max_iter: 100, max_backtracks: 30, feasibility_tol: 1e-7 }
    }
}

#[derive(Debug, Clone)]
pub struct MmOutcome<P> {
    pub point: P,
    pub objective: f64,
    pub trace: MmTrace,
    /// Set when the run stopped without meeting the tolerance.
    pub warning: Option<String>,
}

pub fn mm_solve<P: MmProblem>(
    problem: &P,
    init: P::Point,
    opts: &MmOptions,
) -> Result<MmOutcome<P::Point>> {
    let v0 = problem.violation(&init);
    if !(v0 <= opts.feasibility_tol) {
        return Err(Error::Infeasible(format!("initial point violates constraints by {v0:e}")));
    }
    let mut x = init;
    let mut f = problem.objective(&x);
    let mut trace = MmTrace {
        objective_per_iteration: vec![f],
        constraint_violation_per_iteration: vec![v0],
        ..MmTrace::default()
    };
    let mut warning = None;

    for it in 0..opts.max_iter {
        let candidate = match problem
            .majorize(&x, it)
            .and_then(|s| problem.solve_inner(&s, &x))
        {
            Ok(c) => c,
            Err(e) => {
                warning = Some(format!("inner solve failed at iteration {it}: {e}"));
                break;
            }
        };

        let mut accepted = None;
        let mut t = 1.0;
        for h in 0..=opts.max_backtracks {
            let y = if h == 0 { candidate.clone() } else { problem.blend(&x, &candidate, t) };
            let v = problem.violation(&y);
            if v <= opts.feasibility_tol {
                let fy = problem.objective(&y);
                if fy >= f {
                    accepted = Some((y, fy, v));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((y, fy, v)) = accepted else {
            if it + 1 < problem.min_iterations() {
                continue;
            }
            // No improving feasible point along the segment: stationary.
            trace.converged = true;
            break;
        };

        let change = (fy - f).abs();
        x = y;
        let prev = f;
        f = fy;
        trace.iterations += 1;
        trace.objective_per_iteration.push(f);
        trace.constraint_violation_per_iteration.push(v);
        if change <= opts.tol * prev.abs().max(1e-12) && trace.iterations >= problem.min_iterations() {
            trace.converged = true;
            break;
        }
    }
    if !trace.converged && warning.is_none() {
        warning = Some(format!("no convergence after {} iterations", opts.max_iter));
    }
    Ok(MmOutcome { point: x, objective: f, trace, warning })
}

/// Limited-memory BFGS ascent for smooth objectives defined on an open
/// domain. `f` returns the value and gradient, or `None` outside the domain;
/// the line search backtracks until it finds a point inside that satisfies
/// the Armijo condition. Stops when the relative gain of an accepted step
/// falls below `tol` twice in a row.
pub fn lbfgs_maximize<F>(mut f: F, x0: Vec<f64>, tol: f64, max_iter: usize) -> Vec<f64>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    const MEMORY: usize = 10;
    let Some((mut fx, mut gx)) = f(&x0) else { return x0 };
    let mut x = x0;
    let mut hist: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();
    let mut small = 0;
    for _ in 0..max_iter {
        // Two-loop recursion on −f, giving an ascent direction for f.
        let mut q = gx.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            axpy(&mut q, -a, y);
            alphas.push(a);
        }
        let gamma = hist.back().map_or(1.0 / norm(&gx).max(1e-12), |(s, y, _)| dot(s, y) / dot(y, y));
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            axpy(&mut q, a - b, s);
        }
        let mut dir = q;
        let mut slope = dot(&gx, &dir);
        if !(slope > 0.0) {
            hist.clear();
            dir = gx.iter().map(|g| g / norm(&gx).max(1e-12)).collect();
            slope = dot(&gx, &dir);
            if !(slope > 0.0) {
                break;
            }
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xn = x.clone();
            axpy(&mut xn, step, &dir);
            if let Some((fnew, gnew)) = f(&xn) {
                if fnew >= fx + 1e-4 * step * slope {
                    accepted = Some((xn, fnew, gnew));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            if hist.is_empty() {
                break;
            }
            hist.clear();
            continue;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gx.iter().zip(&gnew).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if hist.len() == MEMORY {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let gain = fnew - fx;
        x = xn;
        fx = fnew;
        gx = gnew;
        if gain <= tol * fx.abs().max(1e-3) {
            small += 1;
            if small >= 2 {
                break;
            }
        } else {
            small = 0;
        }
    }
    x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussinfo::testutil::{random_cmatrix, random_pd};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tangent_at_identity() {
        let t = linearize_logdet(&HermitianPSD::identity(3)).unwrap();
        assert_eq!(t.eval(&CMatrix::identity(3, 3)), 0.0);
        let m = CMatrix::identity(3, 3) * Complex64::new(2.0, 0.0);
        assert!((t.eval(&m) - 3.0 / LN_2).abs() < 1e-12);
    }

    #[test]
    fn scalar_tangent_upper_bound() {
        let t = linearize_logdet(&HermitianPSD::from_diagonal(&[2.0])).unwrap();
        let v = t.eval(&CMatrix::from_element(1, 1, Complex64::new(4.0, 0.0)));
        assert!((v - (1.0 + 2.0 / (2.0 * LN_2))).abs() < 1e-12);
        assert!((v - 2.443).abs() < 1e-3);
        assert!(v >= 2.0);
    }

    #[test]
    fn tangent_dominates_logdet() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let m0 = random_pd(&mut rng, 3);
            let m = random_pd(&mut rng, 3);
            let t = linearize_logdet(&m0).unwrap();
            assert!(t.eval(m.matrix()) >= logdet2(&m).unwrap() - 1e-12);
        }
    }

    #[test]
    fn logdet_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let m = random_pd(&mut rng, 4);
            let g = random_cmatrix(&mut rng, 4, 4);
            let dir = (&g + g.adjoint()) * Complex64::new(0.5, 0.0);
            let eps = 1e-5;
            let plus = HermitianPSD::from_raw(m.matrix() + &dir * Complex64::new(eps, 0.0));
            let minus = HermitianPSD::from_raw(m.matrix() - &dir * Complex64::new(eps, 0.0));
            let fd = (logdet2(&plus).unwrap() - logdet2(&minus).unwrap()) / (2.0 * eps);
            let an = linearize_logdet(&m).unwrap().slope(&dir);
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "{fd} vs {an}");
        }
    }

    /// Maximize `a·ln(1+x) − ln(1+b·x)` over `[0, 20]`; for `b < a < 1` the
    /// stationary point is `x* = (a − b) / (b (1 − a))`.
    struct Toy {
        a: f64,
        b: f64,
    }

    impl MmProblem for Toy {
        type Point = f64;
        type Surrogate = f64;

        fn objective(&self, x: &f64) -> f64 {
            self.a * x.ln_1p() - (self.b * x).ln_1p()
        }
        fn violation(&self, x: &f64) -> f64 {
            (-x).max(x - 20.0).max(0.0)
        }
        fn majorize(&self, x: &f64, _: usize) -> Result<f64> {
            Ok(*x)
        }
        fn solve_inner(&self, x0: &f64, _: &f64) -> Result<f64> {
            // argmax of a·ln(1+x) − b x / (1 + b x0)
            let slope = self.b / (1.0 + self.b * x0);
            Ok((self.a / slope - 1.0).clamp(0.0, 20.0))
        }
        fn blend(&self, from: &f64, to: &f64, t: f64) -> f64 {
            from + t * (to - from)
        }
    }

    #[test]
    fn toy_dc_problem_reaches_analytic_optimum() {
        let toy = Toy { a: 0.75, b: 0.25 };
        let opts = MmOptions { tol: 1e-12, max_iter: 500, ..MmOptions::default() };
        let out = mm_solve(&toy, 0.5, &opts).unwrap();
        assert!((out.point - 8.0).abs() < 1e-4, "{}", out.point);
        assert!(out.trace.is_monotone(1e-12));
        assert!(out.trace.converged);
    }

    #[test]
    fn stationary_start_converges_immediately() {
        let toy = Toy { a: 0.75, b: 0.25 };
        let out = mm_solve(&toy, 8.0, &MmOptions::default()).unwrap();
        assert_eq!(out.trace.iterations, 1);
        assert!(out.trace.converged);
        let o = &out.trace.objective_per_iteration;
        assert_eq!(o[0], o[1]);
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let toy = Toy { a: 0.75, b: 0.25 };
        assert!(matches!(mm_solve(&toy, -1.0, &MmOptions::default()), Err(Error::Infeasible(_))));
    }

    #[test]
    fn iteration_cap_sets_warning() {
        let toy = Toy { a: 0.75, b: 0.25 };
        let opts = MmOptions { tol: 0.0, max_iter: 3, ..MmOptions::default() };
        let out = mm_solve(&toy, 0.0, &opts).unwrap();
        assert_eq!(out.trace.iterations, 3);
        assert!(out.warning.is_some());
    }

    #[test]
    fn lbfgs_finds_rosenbrock_maximum() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = -((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2));
            let g = vec![2.0 * (1.0 - a) + 400.0 * a * (b - a * a), -200.0 * (b - a * a)];
            Some((v, g))
        };
        let x = lbfgs_maximize(f, vec![-1.2, 1.0], 1e-14, 2000);
        assert!((x[0] - 1.0).abs() < 1e-4 && (x[1] - 1.0).abs() < 1e-4, "{x:?}");
    }

    #[test]
    fn lbfgs_respects_domain() {
        // max ln(x) + ln(1 − x) on (0, 1)
        let f = |x: &[f64]| {
            let v = x[0];
            (v > 0.0 && v < 1.0).then(|| (v.ln() + (1.0 - v).ln(), vec![1.0 / v - 1.0 / (1.0 - v)]))
        };
        let x = lbfgs_maximize(f, vec![0.01], 1e-15, 200);
        assert!((x[0] - 0.5).abs() < 1e-6);
    }
}
