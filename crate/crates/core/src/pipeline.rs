//! End-to-end node selection: samples → statistics → important set → GGM
//! solve → trainable set, plus planted-structure problems for validation.

use std::path::PathBuf;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ggm::{solve_ggm, GgmProblem, Mode, SolverOptions, SolverReport};
use crate::node_model::{
    replay_scores, sample_statistics, select_important, standardize_covariance, SampleSet,
};
use crate::surrogates::Surrogate;

/// How many non-important nodes join the trainable set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SelectionCriterion {
    /// The `k` largest group norms.
    Budget(usize),
    /// Every group norm strictly above the value.
    Threshold(f64),
}

impl SelectionCriterion {
    /// Exactly one of the two must be given.
    pub fn from_options(budget: Option<usize>, threshold: Option<f64>) -> Result<Self> {
        match (budget, threshold) {
            (Some(b), None) => Ok(SelectionCriterion::Budget(b)),
            (None, Some(t)) if t >= 0.0 => Ok(SelectionCriterion::Threshold(t)),
            (None, Some(t)) => Err(Error::InvalidParameter(format!(
                "threshold {t} must be >= 0"
            ))),
            _ => Err(Error::InvalidParameter(
                "give exactly one of a selection budget or a threshold".into(),
            )),
        }
    }
}

/// A partition of the nodes into important, solver-selected and frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub important_set: Vec<usize>,
    pub solver_selected: Vec<usize>,
    pub frozen: Vec<usize>,
    /// Selection score per node; `None` for important nodes.
    pub scores: Vec<Option<f64>>,
}

impl SelectionResult {
    /// Important and solver-selected nodes, ascending.
    pub fn trainable(&self) -> Vec<usize> {
        let mut t: Vec<usize> = self
            .important_set
            .iter()
            .chain(&self.solver_selected)
            .copied()
            .collect();
        t.sort_unstable();
        t
    }
}

/// Picks trainable nodes outside `important` from per-node scores
/// (`None` marks important nodes). Ties in budget mode go to the lower index.
pub fn select_from_scores(
    scores: &[Option<f64>],
    important: &[usize],
    criterion: SelectionCriterion,
) -> Result<SelectionResult> {
    let n = scores.len();
    let mut is_important = vec![false; n];
    for &i in important {
        if i >= n {
            return Err(Error::InvalidParameter(format!(
                "important index {i} out of range"
            )));
        }
        is_important[i] = true;
    }
    let candidates: Vec<(usize, f64)> = (0..n)
        .filter(|&i| !is_important[i])
        .map(|i| {
            scores[i]
                .map(|s| (i, s))
                .ok_or_else(|| Error::InvalidParameter(format!("node {i} has no selection score")))
        })
        .collect::<Result<_>>()?;

    let mut selected: Vec<usize> = match criterion {
        SelectionCriterion::Budget(b) => {
            if b > candidates.len() {
                return Err(Error::InvalidParameter(format!(
                    "budget {b} exceeds the {} non-important nodes",
                    candidates.len()
                )));
            }
            let mut ranked = candidates;
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            ranked.into_iter().take(b).map(|(i, _)| i).collect()
        }
        SelectionCriterion::Threshold(t) => {
            if !(t >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "threshold {t} must be >= 0"
                )));
            }
            candidates
                .into_iter()
                .filter(|&(_, s)| s > t)
                .map(|(i, _)| i)
                .collect()
        }
    };
    selected.sort_unstable();
    let mut important_set = important.to_vec();
    important_set.sort_unstable();
    let frozen = (0..n)
        .filter(|&i| !is_important[i] && selected.binary_search(&i).is_err())
        .collect();
    Ok(SelectionResult {
        important_set,
        solver_selected: selected,
        frozen,
        scores: (0..n)
            .map(|i| if is_important[i] { None } else { scores[i] })
            .collect(),
    })
}

/// Selection on the solver's important-rows group norms `‖Ω̄*_i‖₂`.
pub fn select_trainable(
    report: &SolverReport,
    important: &[usize],
    criterion: SelectionCriterion,
) -> Result<SelectionResult> {
    select_from_scores(&report.group_norms, important, criterion)
}

/// Full-column norms `‖Ω*_i‖₂` outside the important set.
pub fn full_column_norms(omega: &DMatrix<f64>, important: &[usize]) -> Vec<Option<f64>> {
    (0..omega.ncols())
        .map(|i| (!important.contains(&i)).then(|| omega.column(i).norm()))
        .collect()
}

/// F1 score of `selected` against `truth`.
pub fn recovery_f1(selected: &[usize], truth: &[usize]) -> f64 {
    let hits = selected.iter().filter(|i| truth.contains(i)).count() as f64;
    if selected.is_empty() && truth.is_empty() {
        return 1.0;
    }
    if hits == 0.0 {
        return 0.0;
    }
    let precision = hits / selected.len() as f64;
    let recall = hits / truth.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Parameters of a synthetic problem with known coupling structure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub n: usize,
    pub h: usize,
    pub k_connected: usize,
    pub coupling: f64,
    pub m: usize,
    pub seed: u64,
}

/// Smallest eigenvalue the planted precision is repaired to.
const PLANTED_MIN_EIGENVALUE: f64 = 0.1;
/// Planted precisions worse conditioned than this are rejected.
const PLANTED_MAX_CONDITION: f64 = 1e8;
/// Extra mean given to the important nodes so the sample mean ranks them first.
const IMPORTANT_LIFT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedProblem {
    pub omega_true: DMatrix<f64>,
    pub important: Vec<usize>,
    pub true_connected: Vec<usize>,
    pub seed: u64,
    pub m: usize,
}

/// Builds a planted precision and draws `m` node-value samples from it.
///
/// Node roles come from a seeded ChaCha8 shuffle: the first `h` nodes are
/// important, the next `k_connected` are coupled to every important node with
/// weight `±coupling`. The diagonal is raised uniformly until the minimum
/// eigenvalue is at least 0.1. Samples are `N(0, Ω⁻¹)` draws shifted by one
/// constant so every value is positive, with important nodes lifted by a
/// further `+1.0`; the shifts leave the covariance unchanged.
pub fn make_planted(spec: &PlantedSpec) -> Result<(PlantedProblem, SampleSet)> {
    let PlantedSpec {
        n,
        h,
        k_connected,
        coupling,
        m,
        seed,
    } = *spec;
    if h == 0 || h + k_connected > n {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= h and h + k_connected <= n, got h = {h}, k_connected = {k_connected}, n = {n}"
        )));
    }
    if !(coupling >= 0.0) || !coupling.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "coupling {coupling} must be finite and >= 0"
        )));
    }
    if m == 0 {
        return Err(Error::InvalidParameter(
            "sample count m must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut important = order[..h].to_vec();
    let mut connected = order[h..h + k_connected].to_vec();
    important.sort_unstable();
    connected.sort_unstable();

    let mut omega = DMatrix::<f64>::identity(n, n);
    if coupling > 0.0 {
        for &i in &important {
            for &j in &connected {
                let w = if rng.random_bool(0.5) {
                    coupling
                } else {
                    -coupling
                };
                omega[(i, j)] = w;
                omega[(j, i)] = w;
            }
        }
    }
    let eig = SymmetricEigen::new(omega.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let boost = (PLANTED_MIN_EIGENVALUE - lo).max(0.0);
    for i in 0..n {
        omega[(i, i)] += boost;
    }
    let (lo, hi) = (lo + boost, hi + boost);
    if !(lo > 0.0) || hi / lo > PLANTED_MAX_CONDITION {
        return Err(Error::Domain(format!(
            "planted precision not PD (eigenvalues in [{lo:e}, {hi:e}] after repair)"
        )));
    }

    let sigma = omega
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Domain("planted precision not PD".into()))?;
    let chol = ((&sigma + sigma.transpose()) * 0.5)
        .cholesky()
        .ok_or_else(|| Error::Domain("planted precision not PD".into()))?;
    let z = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut x = z * chol.l().transpose();
    let shift = 1.0 - x.min().min(0.0);
    for &i in &important {
        for v in x.column_mut(i).iter_mut() {
            *v += IMPORTANT_LIFT;
        }
    }
    x.add_scalar_mut(shift);

    let samples = SampleSet::unnamed(x)?;
    Ok((
        PlantedProblem {
            omega_true: omega,
            important,
            true_connected: connected,
            seed,
            m,
        },
        samples,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceMode {
    Planted,
    Dump,
}

fn default_tau() -> f64 {
    0.1
}

fn default_lambda() -> f64 {
    1.0
}

fn default_beta() -> f64 {
    0.85
}

fn default_surrogate() -> Surrogate {
    Surrogate::Geman { epsilon: 0.5 }
}

fn default_penalty_mode() -> Mode {
    Mode::ImportantRows
}

/// Pipeline configuration, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: SourceMode,
    /// Node count (planted mode).
    #[serde(default)]
    pub n: usize,
    pub h: usize,
    #[serde(default)]
    pub k_connected: usize,
    #[serde(default)]
    pub coupling: f64,
    /// Sample count (planted mode).
    #[serde(default)]
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
    /// Directory of step records (dump mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dump: Option<PathBuf>,
    #[serde(default = "default_beta")]
    pub beta1: f64,
    #[serde(default = "default_beta")]
    pub beta2: f64,
    #[serde(default = "default_surrogate")]
    pub surrogate: Surrogate,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_penalty_mode")]
    pub penalty_mode: Mode,
    #[serde(default)]
    pub solver: SolverOptions,
    pub selection: SelectionCriterion,
    /// Fit the correlation rather than the covariance of the samples.
    #[serde(default)]
    pub standardize: bool,
    /// Select on full-column norms instead of important-row norms.
    #[serde(default)]
    pub full_column_norms: bool,
}

impl PipelineConfig {
    pub fn planted(spec: PlantedSpec, selection: SelectionCriterion) -> Self {
        PipelineConfig {
            mode: SourceMode::Planted,
            n: spec.n,
            h: spec.h,
            k_connected: spec.k_connected,
            coupling: spec.coupling,
            m: spec.m,
            seed: spec.seed,
            dump: None,
            beta1: default_beta(),
            beta2: default_beta(),
            surrogate: default_surrogate(),
            tau: default_tau(),
            lambda: default_lambda(),
            penalty_mode: default_penalty_mode(),
            solver: SolverOptions::default(),
            selection,
            standardize: false,
            full_column_norms: false,
        }
    }

    pub fn planted_spec(&self) -> PlantedSpec {
        PlantedSpec {
            n: self.n,
            h: self.h,
            k_connected: self.k_connected,
            coupling: self.coupling,
            m: self.m,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub samples: SampleSet,
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub report: SolverReport,
    pub selection: SelectionResult,
    pub planted: Option<PlantedProblem>,
}

/// Runs sample statistics, important-set selection, the GGM solve and node
/// selection on samples from a planted problem or a step-record dump.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutput> {
    let (samples, planted) = match config.mode {
        SourceMode::Planted => {
            let (p, s) =
                make_planted(&config.planted_spec()).map_err(Error::in_stage("planted"))?;
            (s, Some(p))
        }
        SourceMode::Dump => {
            let dir = config.dump.as_ref().ok_or_else(|| Error::Stage {
                stage: "dump",
                source: Box::new(Error::InvalidParameter(
                    "dump mode needs a `dump` directory".into(),
                )),
            })?;
            let records = crate::io::read_dump_dir(dir).map_err(Error::in_stage("dump"))?;
            let s = replay_scores(&records, config.beta1, config.beta2)
                .map_err(Error::in_stage("scores"))?;
            (s, None)
        }
    };
    run_on_samples(config, samples, planted)
}

/// The part of [`run_pipeline`] after samples exist.
pub fn run_on_samples(
    config: &PipelineConfig,
    samples: SampleSet,
    planted: Option<PlantedProblem>,
) -> Result<PipelineOutput> {
    let (mean, cov) = sample_statistics(&samples).map_err(Error::in_stage("statistics"))?;
    let cov = if config.standardize {
        standardize_covariance(&cov)
    } else {
        cov
    };
    let important =
        select_important(mean.as_slice(), config.h).map_err(Error::in_stage("important set"))?;
    let problem = GgmProblem::new(
        cov.clone(),
        important.clone(),
        config.tau,
        config.lambda,
        config.surrogate,
        config.penalty_mode,
    )
    .map_err(Error::in_stage("solve"))?;
    let report = solve_ggm(&problem, &config.solver).map_err(Error::in_stage("solve"))?;
    let selection = if config.full_column_norms {
        let scores = full_column_norms(report.omega_star.as_matrix(), &important);
        select_from_scores(&scores, &important, config.selection)
    } else {
        select_trainable(&report, &important, config.selection)
    }
    .map_err(Error::in_stage("selection"))?;
    Ok(PipelineOutput {
        samples,
        mean: mean.iter().copied().collect(),
        covariance: cov,
        report,
        selection,
        planted,
    })
}
