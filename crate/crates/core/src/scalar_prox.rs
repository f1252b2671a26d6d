//! Scalar thresholding `T_g(y, lam) = argmin_{x >= 0} ½(y - x)² + lam·g(x)`.
//!
//! [`solve_threshold`] is the generalized accelerating iterative scheme: it
//! locates the inflection point `a0` of `f_y`, runs an Aitken-accelerated
//! fixed-point iteration on `J1(x) = y - lam·g'(x)` when `f_y` dips below zero
//! slope past `a0`, and finally compares the candidate against `x = 0`.
//!
//! [`oracle_threshold`] is a grid search with trisection refinement that
//! shares nothing with the fixed-point path apart from `g` itself.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surrogates::Surrogate;

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Second differences below this are treated as converged.
const AITKEN_GUARD: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxProblem {
    pub y: f64,
    pub lam: f64,
    pub g: Surrogate,
    pub tol: f64,
    pub max_iter: usize,
}

impl ProxProblem {
    pub fn new(y: f64, lam: f64, g: Surrogate) -> Result<Self> {
        if !(y >= 0.0) || !y.is_finite() {
            return Err(Error::Domain(format!(
                "threshold input y = {y} must be finite and >= 0"
            )));
        }
        if !(lam > 0.0) || !lam.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "threshold weight lam = {lam} must be > 0"
            )));
        }
        Ok(ProxProblem {
            y,
            lam,
            g,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        })
    }

    pub fn with_tol(mut self, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tolerance {tol} must be > 0"
            )));
        }
        self.tol = tol;
        Ok(self)
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    /// `f_y(x) = ½(y - x)² + lam·g(x)`.
    pub fn objective(&self, x: f64) -> f64 {
        let r = self.y - x;
        0.5 * r * r + self.lam * self.g.value_unchecked(x)
    }

    /// `f_y'(x) = x - y + lam·g'(x)`.
    fn slope(&self, x: f64) -> f64 {
        x - self.y + self.lam * self.g.derivative_unchecked(x)
    }

    /// `J1(x) = y - lam·g'(x)`, clamped to `[0, y]`.
    fn j1(&self, x: f64) -> f64 {
        let v = self.y - self.lam * self.g.derivative_unchecked(x);
        if v.is_nan() {
            v
        } else {
            v.clamp(0.0, self.y)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// The candidate came from the fixed-point iteration.
    FixedPoint,
    /// `f_y` has nonnegative slope at the breakpoint; the candidate is `a0`.
    Breakpoint,
    /// Zero beat (or tied) the candidate.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxSolution {
    pub x_star: f64,
    pub iterations: usize,
    pub branch: Branch,
}

/// Largest `x >= 0` where `J1'(x) = -lam·g''(x) = 1`, or `0` if none exists.
///
/// For every supported family `g''` is negative and increasing, so the
/// equation has at most one root and each case has a closed form.
pub fn breakpoint_a0(g: &Surrogate, lam: f64) -> Result<f64> {
    if !(lam > 0.0) || !lam.is_finite() {
        return Err(Error::InvalidParameter(format!("lam = {lam} must be > 0")));
    }
    let x = match *g {
        Surrogate::Lp { p } => (lam * p * (1.0 - p)).powf(1.0 / (2.0 - p)),
        Surrogate::Geman { epsilon } => (2.0 * lam * epsilon).cbrt() - epsilon,
        Surrogate::Laplace { gamma } => gamma * (lam / (gamma * gamma)).ln(),
        Surrogate::Log { gamma } => lam.sqrt() - gamma,
        Surrogate::Logarithm { gamma } => (gamma * (lam / gamma.ln_1p()).sqrt() - 1.0) / gamma,
        Surrogate::Etp { gamma } => {
            let denom = -(-gamma).exp_m1();
            (lam * gamma * gamma / denom).ln() / gamma
        }
        Surrogate::Identity => 0.0,
    };
    Ok(x.max(0.0))
}

/// Global minimizer of `f_y` over `x >= 0`.
pub fn solve_threshold(problem: &ProxProblem) -> Result<ProxSolution> {
    let y = problem.y;
    if y == 0.0 {
        return Ok(ProxSolution {
            x_star: 0.0,
            iterations: 0,
            branch: Branch::Zero,
        });
    }
    let a0 = breakpoint_a0(&problem.g, problem.lam)?;

    let (x_hat, iterations, branch) = if a0 < y && problem.slope(a0) < 0.0 {
        // On [a0, y] J1 is increasing with slope in (0, 1), J1(a0) > a0 and
        // J1(y) <= y, so the interval is invariant and holds the only root.
        let mut x = y;
        let mut t = 0;
        loop {
            let j1 = problem.j1(x);
            let j11 = problem.j1(j1);
            let second_diff = j11 - 2.0 * j1 + x;
            if !second_diff.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite fixed-point iterate for {} at x = {x}",
                    problem.g
                )));
            }
            if second_diff.abs() <= problem.tol || second_diff.abs() < AITKEN_GUARD {
                break;
            }
            if t >= problem.max_iter {
                return Err(Error::IterationLimit { iterations: t });
            }
            let step = j1 - x;
            let accelerated = x - step * step / second_diff;
            x = if accelerated.is_finite() && accelerated >= a0 && accelerated <= y {
                accelerated
            } else {
                j1
            };
            t += 1;
        }
        (problem.j1(x), t, Branch::FixedPoint)
    } else {
        (a0.min(y), 0, Branch::Breakpoint)
    };

    if problem.objective(0.0) <= problem.objective(x_hat) {
        Ok(ProxSolution {
            x_star: 0.0,
            iterations,
            branch: Branch::Zero,
        })
    } else {
        Ok(ProxSolution {
            x_star: x_hat,
            iterations,
            branch,
        })
    }
}

/// Signed thresholding through the odd extension `T(-y) = -T(y)`.
pub fn threshold_signed(y: f64, lam: f64, g: &Surrogate) -> Result<f64> {
    let magnitude = solve_threshold(&ProxProblem::new(y.abs(), lam, *g)?)?.x_star;
    Ok(magnitude.copysign(y))
}

/// Brute-force minimizer of `f_y` over `[0, y]`: scan the grid
/// `{0, step, 2·step, ..., y}` and refine the best cell by trisection.
pub fn oracle_threshold(problem: &ProxProblem, grid_step: f64) -> Result<f64> {
    if !(grid_step > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "grid step {grid_step} must be > 0"
        )));
    }
    let y = problem.y;
    let f = |x: f64| problem.objective(x);
    let cells = (y / grid_step).ceil() as usize;
    let point = |k: usize| ((k as f64) * grid_step).min(y);

    let mut best_k = 0;
    let mut best_f = f(0.0);
    for k in 1..=cells {
        let v = f(point(k));
        if v < best_f {
            best_f = v;
            best_k = k;
        }
    }
    if best_k == 0 {
        return Ok(0.0);
    }

    let mut lo = point(best_k.saturating_sub(1));
    let mut hi = point((best_k + 1).min(cells));
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) <= f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let refined = 0.5 * (lo + hi);
    let candidate = if f(refined) < best_f {
        refined
    } else {
        point(best_k)
    };
    Ok(if f(0.0) <= f(candidate) {
        0.0
    } else {
        candidate
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn solve(g: Surrogate, y: f64, lam: f64) -> ProxSolution {
        solve_threshold(&ProxProblem::new(y, lam, g).unwrap()).unwrap()
    }

    /// Bisection for `lam·g''(x) = -1`, independent of the closed forms.
    fn a0_by_bisection(g: &Surrogate, lam: f64) -> f64 {
        let h = |x: f64| -lam * g.second_derivative_unchecked(x) - 1.0;
        let (mut lo, mut hi) = (1e-12, 1e6);
        if h(lo) <= 0.0 {
            return 0.0;
        }
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(solve(Surrogate::Identity, 3.0, 1.0).x_star, 2.0);
        assert_eq!(solve(Surrogate::Identity, 0.5, 1.0).x_star, 0.0);
        let s = solve(Surrogate::geman(1.0).unwrap(), 0.0, 1.0);
        assert_eq!((s.x_star, s.branch), (0.0, Branch::Zero));
    }

    #[test]
    fn geman_matches_fine_grid() {
        let p = ProxProblem::new(2.0, 1.0, Surrogate::geman(1.0).unwrap()).unwrap();
        let oracle = oracle_threshold(&p, 1e-6).unwrap();
        let s = solve_threshold(&p).unwrap();
        assert_eq!(s.branch, Branch::FixedPoint);
        assert!(
            (s.x_star - oracle).abs() <= 1e-5,
            "{} vs {oracle}",
            s.x_star
        );
        // root of x - 2 + 1/(x+1)^2 on [a0, 2], computed offline by bisection
        assert!((oracle - 1.8793852).abs() < 1e-6, "{oracle}");
    }

    #[test]
    fn lp_small_input_is_zero() {
        let p = ProxProblem::new(0.1, 1.0, Surrogate::lp(0.5).unwrap()).unwrap();
        assert_eq!(oracle_threshold(&p, 1e-6).unwrap(), 0.0);
        assert_eq!(solve_threshold(&p).unwrap().x_star, 0.0);
    }

    #[test]
    fn oracle_examples() {
        let p = ProxProblem::new(3.0, 1.0, Surrogate::Identity).unwrap();
        assert!((oracle_threshold(&p, 1e-4).unwrap() - 2.0).abs() <= 1e-4);
        let p = ProxProblem::new(0.01, 10.0, Surrogate::etp(3.0).unwrap()).unwrap();
        assert_eq!(oracle_threshold(&p, 1e-6).unwrap(), 0.0);
        assert_eq!(solve_threshold(&p).unwrap().x_star, 0.0);
        let p = ProxProblem::new(5.0, 0.5, Surrogate::geman(1.0).unwrap()).unwrap();
        let v = oracle_threshold(&p, 1e-5).unwrap();
        // golden value recorded from the oracle's first run
        assert!((v - 4.9860463).abs() < 1e-6, "{v}");
        assert!((solve_threshold(&p).unwrap().x_star - v).abs() < 1e-6);
        assert!(oracle_threshold(&p, 0.0).is_err());
    }

    #[test]
    fn breakpoint_examples() {
        assert_eq!(breakpoint_a0(&Surrogate::Identity, 5.0).unwrap(), 0.0);
        let geman = Surrogate::geman(1.0).unwrap();
        let a0 = breakpoint_a0(&geman, 4.0).unwrap();
        assert!((a0 - 1.0).abs() < 1e-12);
        assert!((geman.second_derivative(a0).unwrap() + 0.25).abs() < 1e-12);
        assert_eq!(
            breakpoint_a0(&Surrogate::laplace(1.0).unwrap(), 1.0).unwrap(),
            0.0
        );
        assert!(breakpoint_a0(&geman, 0.0).is_err());
    }

    #[test]
    fn breakpoint_closed_forms_match_bisection() {
        let families = [
            Surrogate::lp(0.3).unwrap(),
            Surrogate::lp(0.7).unwrap(),
            Surrogate::geman(0.4).unwrap(),
            Surrogate::laplace(0.5).unwrap(),
            Surrogate::log(0.2).unwrap(),
            Surrogate::logarithm(2.0).unwrap(),
            Surrogate::etp(1.5).unwrap(),
        ];
        for g in families {
            for lam in [0.05, 0.7, 3.0, 9.0] {
                let closed = breakpoint_a0(&g, lam).unwrap();
                let bis = a0_by_bisection(&g, lam);
                assert!(
                    (closed - bis).abs() <= 1e-8 * bis.max(1.0),
                    "{g} lam={lam}: {closed} vs {bis}"
                );
            }
        }
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(
            ProxProblem::new(-1.0, 1.0, Surrogate::Identity),
            Err(Error::Domain(_))
        ));
        assert!(ProxProblem::new(1.0, 0.0, Surrogate::Identity).is_err());
        assert!(ProxProblem::new(1.0, 1.0, Surrogate::Identity)
            .unwrap()
            .with_tol(0.0)
            .is_err());
    }

    #[test]
    fn iteration_cap_is_reported() {
        let p = ProxProblem::new(9.0, 5.0, Surrogate::log(0.1).unwrap())
            .unwrap()
            .with_tol(1e-300)
            .unwrap()
            .with_max_iter(0);
        match solve_threshold(&p) {
            Err(Error::IterationLimit { iterations }) => assert_eq!(iterations, 0),
            other => panic!("expected iteration limit, got {other:?}"),
        }
    }

    #[test]
    fn odd_extension() {
        assert_eq!(
            threshold_signed(-3.0, 1.0, &Surrogate::Identity).unwrap(),
            -2.0
        );
        assert_eq!(
            threshold_signed(3.0, 1.0, &Surrogate::Identity).unwrap(),
            2.0
        );
        let g = Surrogate::geman(1.0).unwrap();
        assert_eq!(
            threshold_signed(-2.0, 1.0, &g).unwrap(),
            -threshold_signed(2.0, 1.0, &g).unwrap()
        );
    }

    #[test]
    fn zero_branch_threshold_exists() {
        let families = [
            Surrogate::lp(0.5).unwrap(),
            Surrogate::geman(0.5).unwrap(),
            Surrogate::laplace(1.0).unwrap(),
            Surrogate::log(1.0).unwrap(),
            Surrogate::logarithm(1.0).unwrap(),
            Surrogate::etp(2.0).unwrap(),
            Surrogate::Identity,
        ];
        for g in families {
            let xs: Vec<f64> = (1..=400)
                .map(|k| solve(g, k as f64 * 0.025, 1.0).x_star)
                .collect();
            let first_nonzero = xs.iter().position(|&x| x > 0.0).expect("some nonzero");
            assert!(first_nonzero > 0, "{g}: zero region missing");
            assert!(
                xs[first_nonzero..].iter().all(|&x| x > 0.0),
                "{g}: not a threshold"
            );
        }
    }

    fn arb_surrogate() -> impl Strategy<Value = Surrogate> {
        prop_oneof![
            (0.1f64..0.9).prop_map(|p| Surrogate::lp(p).unwrap()),
            (0.1f64..3.0).prop_map(|e| Surrogate::geman(e).unwrap()),
            (0.1f64..3.0).prop_map(|g| Surrogate::laplace(g).unwrap()),
            (0.1f64..3.0).prop_map(|g| Surrogate::log(g).unwrap()),
            (0.1f64..3.0).prop_map(|g| Surrogate::logarithm(g).unwrap()),
            (0.1f64..3.0).prop_map(|g| Surrogate::etp(g).unwrap()),
            Just(Surrogate::Identity),
        ]
    }

    proptest! {
        #[test]
        fn shrinkage_bounds(g in arb_surrogate(), y in 0.0f64..10.0, lam in 0.01f64..10.0) {
            let s = solve(g, y, lam);
            prop_assert!(s.x_star >= 0.0 && s.x_star <= y);
        }

        #[test]
        fn monotone_in_y(g in arb_surrogate(), lam in 0.01f64..10.0) {
            let mut prev = 0.0;
            for k in 0..=200 {
                let x = solve(g, k as f64 * 0.05, lam).x_star;
                prop_assert!(x >= prev - 1e-9, "{g} lam={lam} y={}: {x} < {prev}", k as f64 * 0.05);
                prev = x;
            }
        }

        #[test]
        fn soft_threshold_exact(y in 0.0f64..10.0, lam in 0.01f64..10.0) {
            let s = solve(Surrogate::Identity, y, lam);
            prop_assert!((s.x_star - (y - lam).max(0.0)).abs() <= 1e-12);
        }
    }
}
