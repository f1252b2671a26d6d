//! l2,g-regularized Gaussian graphical model.
//!
//! The model maximizes
//!
//! ```text
//! log det Ω - <Σ̂, Ω> - τ Σ_j g(‖Ω̄_j‖₂)
//! ```
//!
//! where `Ω̄_j` is the part of column `j` that the penalty acts on (the rows
//! of the important set, or every off-diagonal row). Splitting `Ω` and an
//! auxiliary copy `Δ` with a quadratic coupling `λ‖Ω - Δ‖_F²` gives two block
//! problems with exact solutions: an eigenvalue-wise quadratic for `Ω` and a
//! column-wise scalar threshold for `Δ`. [`solve_ggm`] alternates them.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar_prox::{solve_threshold, ProxProblem};
use crate::surrogates::Surrogate;

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;
const PRECISION_SYMMETRY_TOL: f64 = 1e-8;
/// Minimum eigenvalue a gradient step may leave behind.
const PD_FLOOR: f64 = 1e-10;
/// Floor for `diag(Σ̂)` before inverting it into the starting point.
const DIAG_JITTER: f64 = 1e-8;

/// Which entries of each column the group penalty acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Every off-diagonal entry of every column; the important set is ignored
    /// by the penalty.
    FullOffDiag,
    /// For columns outside the important set `I`, only the rows in `I`.
    ImportantRows,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full_off_diag" | "full-off-diag" => Ok(Mode::FullOffDiag),
            "important_rows" | "important-rows" => Ok(Mode::ImportantRows),
            other => Err(Error::InvalidParameter(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GgmProblem {
    sigma_hat: DMatrix<f64>,
    important: Vec<usize>,
    in_important: Vec<bool>,
    tau: f64,
    lam: f64,
    g: Surrogate,
    mode: Mode,
}

impl GgmProblem {
    pub fn new(
        sigma_hat: DMatrix<f64>,
        important: Vec<usize>,
        tau: f64,
        lam: f64,
        g: Surrogate,
        mode: Mode,
    ) -> Result<Self> {
        let n = sigma_hat.nrows();
        if n == 0 || sigma_hat.ncols() != n {
            return Err(Error::Shape(format!(
                "covariance must be square and nonempty, got {}x{}",
                sigma_hat.nrows(),
                sigma_hat.ncols()
            )));
        }
        if sigma_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("covariance has non-finite entries".into()));
        }
        if max_asymmetry(&sigma_hat) > SYMMETRY_TOL {
            return Err(Error::Domain("covariance not symmetric".into()));
        }
        let min_eig = SymmetricEigen::new(sigma_hat.clone()).eigenvalues.min();
        if min_eig < -PSD_TOL {
            return Err(Error::Domain(format!(
                "covariance not positive semidefinite (min eigenvalue {min_eig:e})"
            )));
        }
        let mut in_important = vec![false; n];
        for &i in &important {
            if i >= n {
                return Err(Error::InvalidParameter(format!(
                    "important index {i} out of range for n = {n}"
                )));
            }
            if std::mem::replace(&mut in_important[i], true) {
                return Err(Error::InvalidParameter(format!(
                    "important index {i} repeated"
                )));
            }
        }
        if mode == Mode::ImportantRows && important.is_empty() {
            return Err(Error::InvalidParameter(
                "important_rows mode needs a nonempty important set".into(),
            ));
        }
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::InvalidParameter(format!("tau = {tau} must be >= 0")));
        }
        if !(lam > 0.0) || !lam.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda = {lam} must be > 0"
            )));
        }
        Ok(GgmProblem {
            sigma_hat: (&sigma_hat + sigma_hat.transpose()) * 0.5,
            important,
            in_important,
            tau,
            lam,
            g,
            mode,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma_hat.nrows()
    }

    pub fn sigma_hat(&self) -> &DMatrix<f64> {
        &self.sigma_hat
    }

    pub fn important(&self) -> &[usize] {
        &self.important
    }

    pub fn is_important(&self, i: usize) -> bool {
        self.in_important[i]
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn lam(&self) -> f64 {
        self.lam
    }

    pub fn surrogate(&self) -> &Surrogate {
        &self.g
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    fn with_lam(&self, lam: f64) -> Self {
        GgmProblem {
            lam,
            ..self.clone()
        }
    }

    /// Rows of column `col` covered by the group penalty, or `None` when the
    /// column is unpenalized.
    pub fn penalized_rows(&self, col: usize) -> Option<Vec<usize>> {
        match self.mode {
            Mode::ImportantRows if self.in_important[col] => None,
            Mode::ImportantRows => Some(self.important.clone()),
            Mode::FullOffDiag => Some((0..self.dim()).filter(|&r| r != col).collect()),
        }
    }

    /// Per-column group norms of `m` for columns outside the important set;
    /// `None` for important columns.
    pub fn group_norms(&self, m: &DMatrix<f64>) -> Vec<Option<f64>> {
        (0..self.dim())
            .map(|col| {
                if self.in_important[col] {
                    return None;
                }
                self.penalized_rows(col)
                    .map(|rows| column_norm(m, col, &rows))
            })
            .collect()
    }
}

fn column_norm(m: &DMatrix<f64>, col: usize, rows: &[usize]) -> f64 {
    rows.iter()
        .map(|&r| m[(r, col)] * m[(r, col)])
        .sum::<f64>()
        .sqrt()
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

/// A strictly positive definite precision matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionMatrix(DMatrix<f64>);

impl PrecisionMatrix {
    pub fn new(omega: DMatrix<f64>) -> Result<Self> {
        if omega.nrows() != omega.ncols() {
            return Err(Error::Shape("precision matrix must be square".into()));
        }
        if omega.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "precision matrix has non-finite entries".into(),
            ));
        }
        if max_asymmetry(&omega) > PRECISION_SYMMETRY_TOL {
            return Err(Error::Domain("precision matrix not symmetric".into()));
        }
        if omega.clone().cholesky().is_none() {
            return Err(Error::Domain(
                "precision matrix not positive definite".into(),
            ));
        }
        Ok(PrecisionMatrix(omega))
    }

    pub fn identity(n: usize) -> Self {
        PrecisionMatrix(DMatrix::identity(n, n))
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.0.clone()).eigenvalues.min()
    }

    pub fn log_det(&self) -> Result<f64> {
        log_det(&self.0)
    }
}

fn log_det(m: &DMatrix<f64>) -> Result<f64> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("log det of a matrix that is not positive definite".into()))?;
    Ok(2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>())
}

/// The auxiliary copy `Δ` of the precision matrix. Not necessarily symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxMatrix(DMatrix<f64>);

impl AuxMatrix {
    pub fn new(delta: DMatrix<f64>) -> Self {
        AuxMatrix(delta)
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl From<&PrecisionMatrix> for AuxMatrix {
    fn from(p: &PrecisionMatrix) -> Self {
        AuxMatrix(p.0.clone())
    }
}

/// `log det Ω - <Σ̂, Ω> - λ‖Ω - Δ‖_F² - τ Σ_j g(‖Δ̄_j‖₂)`.
pub fn penalized_objective(
    omega: &PrecisionMatrix,
    delta: &AuxMatrix,
    problem: &GgmProblem,
) -> Result<f64> {
    check_dims(problem.dim(), omega.dim(), &delta.0)?;
    let likelihood = omega.log_det()? - problem.sigma_hat.dot(&omega.0);
    let coupling = problem.lam * (&omega.0 - &delta.0).norm_squared();
    let penalty = if problem.tau == 0.0 {
        0.0
    } else {
        let norms = problem.group_norms_all(&delta.0);
        problem.tau * problem.g.group_penalty(norms)?
    };
    Ok(likelihood - coupling - penalty)
}

impl GgmProblem {
    /// Norms of every penalized group, in column order.
    fn group_norms_all<'a>(&'a self, m: &'a DMatrix<f64>) -> impl Iterator<Item = f64> + 'a {
        (0..self.dim()).filter_map(move |col| {
            self.penalized_rows(col)
                .map(|rows| column_norm(m, col, &rows))
        })
    }
}

fn check_dims(n: usize, omega_n: usize, delta: &DMatrix<f64>) -> Result<()> {
    if omega_n != n || delta.nrows() != n || delta.ncols() != n {
        return Err(Error::Shape(format!(
            "expected {n}x{n} matrices, got omega {omega_n}x{omega_n} and delta {}x{}",
            delta.nrows(),
            delta.ncols()
        )));
    }
    Ok(())
}

/// `A_s = sym(Σ̂ / 2λ - Δ)`.
fn linear_term(sigma_hat: &DMatrix<f64>, delta: &AuxMatrix, lam: f64) -> Result<DMatrix<f64>> {
    let n = sigma_hat.nrows();
    if !(lam > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda = {lam} must be > 0"
        )));
    }
    if delta.0.nrows() != n || delta.0.ncols() != n || sigma_hat.ncols() != n {
        return Err(Error::Shape(
            "covariance and auxiliary matrix dimensions differ".into(),
        ));
    }
    if delta.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "auxiliary matrix has non-finite entries".into(),
        ));
    }
    let a = sigma_hat / (2.0 * lam) - &delta.0;
    Ok((&a + a.transpose()) * 0.5)
}

/// Closed-form maximizer of `(1/2λ) log det Ω - <A_s, Ω> - ½‖Ω‖_F²`.
///
/// Stationarity `Ω⁻¹/2λ - A_s - Ω = 0` decouples in the eigenbasis of `A_s`
/// into `ω² + aω - 1/2λ = 0`, whose positive root is always taken.
pub fn update_precision_eig(
    sigma_hat: &DMatrix<f64>,
    delta: &AuxMatrix,
    lam: f64,
) -> Result<PrecisionMatrix> {
    let a_s = linear_term(sigma_hat, delta, lam)?;
    let eig = SymmetricEigen::try_new(a_s, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("eigendecomposition did not converge".into()))?;
    let c = 1.0 / (2.0 * lam);
    let omegas = eig.eigenvalues.map(|a| {
        let disc = (a * a + 4.0 * c).sqrt();
        // (-a + disc) / 2 cancels badly for large positive a
        if a > 0.0 {
            2.0 * c / (a + disc)
        } else {
            0.5 * (disc - a)
        }
    });
    let q = &eig.eigenvectors;
    let mut omega = q * DMatrix::from_diagonal(&omegas) * q.transpose();
    omega = (&omega + omega.transpose()) * 0.5;
    if omega.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite precision update".into()));
    }
    Ok(PrecisionMatrix(omega))
}

/// Settings for the projected gradient ascent precision update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientAscent {
    pub eta: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for GradientAscent {
    fn default() -> Self {
        GradientAscent {
            eta: 1.0,
            max_iter: 10_000,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionUpdate {
    pub omega: PrecisionMatrix,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
}

/// Subproblem value `(1/2λ) log det Ω - <A_s, Ω> - ½‖Ω‖_F²` together with
/// the Cholesky factor of `Ω`; `None` if `Ω` is not positive definite.
fn subproblem_eval(
    omega: &DMatrix<f64>,
    a_s: &DMatrix<f64>,
    lam: f64,
) -> Option<(f64, Cholesky<f64, Dyn>)> {
    let chol = omega.clone().cholesky()?;
    let ld = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>();
    Some((
        ld / (2.0 * lam) - a_s.dot(omega) - 0.5 * omega.norm_squared(),
        chol,
    ))
}

/// Symmetrized subproblem gradient `Ω⁻¹/2λ - A_s - Ω`.
fn subproblem_gradient(
    chol: &Cholesky<f64, Dyn>,
    omega: &DMatrix<f64>,
    a_s: &DMatrix<f64>,
    lam: f64,
) -> DMatrix<f64> {
    let g = chol.inverse() / (2.0 * lam) - a_s - omega;
    (&g + g.transpose()) * 0.5
}

/// Whether the smallest eigenvalue of symmetric `m` exceeds `floor`.
fn above_floor(m: &DMatrix<f64>, floor: f64) -> bool {
    let n = m.nrows();
    (m - DMatrix::<f64>::identity(n, n) * floor)
        .cholesky()
        .is_some()
}

/// Maximizes the precision subproblem by gradient ascent
/// `Ω ← Ω + η(Ω⁻¹/2λ - A_s - Ω)`, starting from `start`.
///
/// Each step is symmetrized; `η` is halved for that step until the iterate
/// keeps its minimum eigenvalue above `1e-10` and the subproblem objective
/// increases (Armijo condition). Stops when the gradient Frobenius norm drops
/// to `opts.tol`; running out of iterations is reported, not an error.
pub fn update_precision(
    sigma_hat: &DMatrix<f64>,
    delta: &AuxMatrix,
    lam: f64,
    opts: &GradientAscent,
    start: &PrecisionMatrix,
) -> Result<PrecisionUpdate> {
    if !(opts.eta > 0.0) || !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(
            "gradient ascent needs eta > 0 and tol > 0".into(),
        ));
    }
    let a_s = linear_term(sigma_hat, delta, lam)?;
    if start.dim() != a_s.nrows() {
        return Err(Error::Shape(
            "starting point dimension differs from covariance".into(),
        ));
    }
    let mut omega = start.0.clone();
    let (mut value, mut grad) = match subproblem_eval(&omega, &a_s, lam) {
        Some((v, chol)) => (v, subproblem_gradient(&chol, &omega, &a_s, lam)),
        None => return Err(Error::Domain("starting point not positive definite".into())),
    };
    let mut grad_norm = grad.norm();

    for it in 0..=opts.max_iter {
        if !grad_norm.is_finite() {
            return Err(Error::Numerical(
                "non-finite gradient in precision update".into(),
            ));
        }
        if grad_norm <= opts.tol {
            return Ok(PrecisionUpdate {
                omega: PrecisionMatrix(omega),
                iterations: it,
                converged: true,
                grad_norm,
            });
        }
        if it == opts.max_iter {
            break;
        }

        // Near the optimum objective differences drop below rounding noise;
        // there a step is accepted if it shrinks the gradient instead.
        let noise = 1e-13 * value.abs().max(1.0);
        let mut step = opts.eta;
        let accepted = loop {
            let mut candidate = &omega + &grad * step;
            candidate = (&candidate + candidate.transpose()) * 0.5;
            if above_floor(&candidate, PD_FLOOR) {
                if let Some((v, chol)) = subproblem_eval(&candidate, &a_s, lam) {
                    let gain = v - value;
                    if gain >= 1e-4 * step * grad_norm * grad_norm && gain > noise {
                        let g = subproblem_gradient(&chol, &candidate, &a_s, lam);
                        break Some((candidate, v, g));
                    }
                    if gain.abs() <= noise {
                        let g = subproblem_gradient(&chol, &candidate, &a_s, lam);
                        if g.norm() < grad_norm {
                            break Some((candidate, v, g));
                        }
                    }
                }
            }
            step *= 0.5;
            if step < 1e-30 {
                break None;
            }
        };
        match accepted {
            Some((next, v, g)) => {
                omega = next;
                value = v;
                grad_norm = g.norm();
                grad = g;
            }
            // no acceptable step left at machine precision
            None => {
                return Ok(PrecisionUpdate {
                    omega: PrecisionMatrix(omega),
                    iterations: it,
                    converged: false,
                    grad_norm,
                })
            }
        }
    }
    Ok(PrecisionUpdate {
        omega: PrecisionMatrix(omega),
        iterations: opts.max_iter,
        converged: false,
        grad_norm,
    })
}

/// Exact minimizer of `½‖Ω - Δ‖_F² + (τ/2λ) Σ_j g(‖Δ̄_j‖₂)` over `Δ`.
///
/// Unpenalized entries copy `Ω`; each penalized group is rescaled along its
/// own direction to the scalar threshold of its norm.
pub fn update_auxiliary(omega: &PrecisionMatrix, problem: &GgmProblem) -> Result<AuxMatrix> {
    let n = problem.dim();
    if omega.dim() != n {
        return Err(Error::Shape(format!(
            "omega is {0}x{0}, problem is {n}x{n}",
            omega.dim()
        )));
    }
    let mut delta = omega.0.clone();
    if problem.tau == 0.0 {
        return Ok(AuxMatrix(delta));
    }
    let weight = problem.tau / (2.0 * problem.lam);
    for col in 0..n {
        let Some(rows) = problem.penalized_rows(col) else {
            continue;
        };
        let norm = column_norm(&omega.0, col, &rows);
        let scale = if norm == 0.0 {
            0.0
        } else {
            let alpha = solve_threshold(&ProxProblem::new(norm, weight, problem.g)?)?.x_star;
            alpha / norm
        };
        for &r in &rows {
            delta[(r, col)] = omega.0[(r, col)] * scale;
        }
    }
    Ok(AuxMatrix(delta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionMethod {
    #[serde(alias = "gradient")]
    GradientAscent,
    #[serde(alias = "eigen")]
    EigenClosedForm,
}

impl std::str::FromStr for PrecisionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" | "gradient_ascent" => Ok(PrecisionMethod::GradientAscent),
            "eigen" | "eigen_closed_form" => Ok(PrecisionMethod::EigenClosedForm),
            other => Err(Error::InvalidParameter(format!(
                "unknown precision method `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Outer BCD sweeps.
    pub max_outer_iter: usize,
    pub eta: f64,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// Stop once `‖Ω(t+1) - Ω(t)‖_F <= outer_tol`.
    pub outer_tol: f64,
    pub precision_method: PrecisionMethod,
    /// Geometric growth factor for `λ` after each sweep; `None` keeps it fixed.
    pub continuation: Option<f64>,
    /// Record half-step objectives and minimum eigenvalues of every iterate.
    pub diagnostics: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_outer_iter: 200,
            eta: 1.0,
            inner_tol: 1e-10,
            inner_max_iter: 10_000,
            outer_tol: 1e-7,
            precision_method: PrecisionMethod::EigenClosedForm,
            continuation: None,
            diagnostics: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// Penalized objective after every half-step, starting at the initial point.
    pub half_step_objectives: Vec<f64>,
    /// Minimum eigenvalue of every precision iterate, starting at `Ω(0)`.
    pub min_eigenvalues: Vec<f64>,
    /// Whether each gradient-ascent precision update reached its tolerance.
    pub inner_converged: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub omega_star: PrecisionMatrix,
    pub delta_star: AuxMatrix,
    /// `(sweep, objective)`; sweep 0 is the starting point.
    pub objective_trace: Vec<(usize, f64)>,
    pub converged: bool,
    pub iterations: usize,
    /// `‖Ω̄*_i‖₂` for columns outside the important set, `None` inside it.
    pub group_norms: Vec<Option<f64>>,
    pub diagnostics: Option<Diagnostics>,
}

/// Block coordinate ascent on the coupled objective.
///
/// Starts from `Ω(0) = Δ(0) = diag(Σ̂)⁻¹` (diagonal floored at `1e-8`), then
/// alternates the precision and auxiliary updates for at most
/// `opts.max_outer_iter` sweeps.
pub fn solve_ggm(problem: &GgmProblem, opts: &SolverOptions) -> Result<SolverReport> {
    if let Some(rho) = opts.continuation {
        if !(rho > 1.0) || !rho.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "continuation factor {rho} must be > 1"
            )));
        }
    }
    let n = problem.dim();
    let init = DMatrix::from_diagonal(
        &problem
            .sigma_hat
            .diagonal()
            .map(|s| 1.0 / s.max(DIAG_JITTER)),
    );
    let mut omega = PrecisionMatrix(init);
    let mut delta = AuxMatrix::from(&omega);
    let mut current = problem.clone();
    let ascent = GradientAscent {
        eta: opts.eta,
        max_iter: opts.inner_max_iter,
        tol: opts.inner_tol,
    };

    let start_value = penalized_objective(&omega, &delta, &current)?;
    let mut trace = vec![(0, start_value)];
    let mut diagnostics = opts.diagnostics.then(|| Diagnostics {
        half_step_objectives: vec![start_value],
        min_eigenvalues: vec![omega.min_eigenvalue()],
        inner_converged: Vec::new(),
    });

    let mut converged = false;
    let mut iterations = 0;
    for sweep in 1..=opts.max_outer_iter {
        let next = match opts.precision_method {
            PrecisionMethod::EigenClosedForm => {
                update_precision_eig(&current.sigma_hat, &delta, current.lam)?
            }
            PrecisionMethod::GradientAscent => {
                let up =
                    update_precision(&current.sigma_hat, &delta, current.lam, &ascent, &omega)?;
                if let Some(d) = diagnostics.as_mut() {
                    d.inner_converged.push(up.converged);
                }
                up.omega
            }
        };
        if let Some(d) = diagnostics.as_mut() {
            d.min_eigenvalues.push(next.min_eigenvalue());
            d.half_step_objectives
                .push(penalized_objective(&next, &delta, &current)?);
        }
        delta = update_auxiliary(&next, &current)?;
        let value = penalized_objective(&next, &delta, &current)?;
        if let Some(d) = diagnostics.as_mut() {
            d.half_step_objectives.push(value);
        }
        trace.push((sweep, value));

        let change = (next.as_matrix() - omega.as_matrix()).norm();
        omega = next;
        iterations = sweep;
        if change <= opts.outer_tol {
            converged = true;
            break;
        }
        if let Some(rho) = opts.continuation {
            current = current.with_lam(current.lam * rho);
        }
    }

    debug_assert_eq!(omega.dim(), n);
    let group_norms = problem.group_norms(omega.as_matrix());
    Ok(SolverReport {
        omega_star: omega,
        delta_star: delta,
        objective_trace: trace,
        converged,
        iterations,
        group_norms,
        diagnostics,
    })
}
