use ggm_select::pipeline::{
    make_planted, recovery_f1, run_pipeline, PipelineConfig, PlantedSpec, SelectionCriterion,
};
use ggm_select::{GgmProblem, Mode, PrecisionMethod, SolverOptions, Surrogate};

fn spec(seed: u64, m: usize) -> PlantedSpec {
    PlantedSpec {
        n: 30,
        h: 3,
        k_connected: 4,
        coupling: 0.5,
        m,
        seed,
    }
}

#[test]
fn selection_partitions_the_nodes() {
    for seed in 0..5 {
        for crit in [
            SelectionCriterion::Budget(4),
            SelectionCriterion::Threshold(0.05),
        ] {
            let out = run_pipeline(&PipelineConfig::planted(spec(seed, 2000), crit)).unwrap();
            let s = &out.selection;
            let mut all: Vec<usize> = s
                .important_set
                .iter()
                .chain(&s.solver_selected)
                .chain(&s.frozen)
                .copied()
                .collect();
            all.sort_unstable();
            assert_eq!(all, (0..30).collect::<Vec<_>>(), "seed {seed}");
            for i in &s.important_set {
                assert!(s.scores[*i].is_none());
            }
            if let SelectionCriterion::Budget(b) = crit {
                assert_eq!(s.solver_selected.len(), b);
            }
        }
    }
}

#[test]
fn pipeline_is_deterministic() {
    let cfg = PipelineConfig::planted(spec(11, 1500), SelectionCriterion::Budget(4));
    let a = run_pipeline(&cfg).unwrap();
    let b = run_pipeline(&cfg).unwrap();
    assert_eq!(a.samples, b.samples);
    assert_eq!(a.selection, b.selection);
    assert_eq!(
        a.report.omega_star.as_matrix(),
        b.report.omega_star.as_matrix()
    );
    assert_eq!(a.report.objective_trace, b.report.objective_trace);
}

#[test]
fn recovery_does_not_degrade_with_more_samples() {
    let mean_f1 = |m: usize| {
        (0..10)
            .map(|seed| {
                let out = run_pipeline(&PipelineConfig::planted(
                    spec(seed, m),
                    SelectionCriterion::Budget(4),
                ))
                .unwrap();
                recovery_f1(
                    &out.selection.solver_selected,
                    &out.planted.unwrap().true_connected,
                )
            })
            .sum::<f64>()
            / 10.0
    };
    let (small, large) = (mean_f1(500), mean_f1(5000));
    assert!(
        large >= small - 0.05,
        "F1 {small} at m=500 vs {large} at m=5000"
    );
}

#[test]
fn null_problem_selects_nothing() {
    let mut null = spec(3, 2000);
    null.coupling = 0.0;
    null.k_connected = 0;
    let mut cfg = PipelineConfig::planted(null, SelectionCriterion::Budget(1));
    cfg.tau = 5.0;
    let out = run_pipeline(&cfg).unwrap();
    let mut norms: Vec<f64> = out.selection.scores.iter().flatten().copied().collect();
    norms.sort_by(f64::total_cmp);
    let median = norms[norms.len() / 2];

    cfg.selection = SelectionCriterion::Threshold(10.0 * median.max(1e-12));
    let out = run_pipeline(&cfg).unwrap();
    assert!(
        out.selection.solver_selected.is_empty(),
        "{:?}",
        out.selection.solver_selected
    );
    assert_eq!(out.selection.frozen.len(), 27);
}

#[test]
fn gradient_ascent_solver_matches_closed_form() {
    for (seed, n) in [(0u64, 8usize), (1, 20), (2, 40)] {
        let ps = PlantedSpec {
            n,
            h: 2,
            k_connected: 3,
            coupling: 0.4,
            m: 800,
            seed,
        };
        let (planted, samples) = make_planted(&ps).unwrap();
        let (_, cov) = ggm_select::node_model::sample_statistics(&samples).unwrap();
        let problem = GgmProblem::new(
            cov,
            planted.important,
            0.1,
            1.0,
            Surrogate::geman(0.5).unwrap(),
            Mode::ImportantRows,
        )
        .unwrap();
        let solve = |method| {
            let opts = SolverOptions {
                precision_method: method,
                max_outer_iter: 500,
                ..SolverOptions::default()
            };
            ggm_select::solve_ggm(&problem, &opts).unwrap()
        };
        let eig = solve(PrecisionMethod::EigenClosedForm);
        let ga = solve(PrecisionMethod::GradientAscent);
        let gap = (eig.omega_star.as_matrix() - ga.omega_star.as_matrix()).norm();
        assert!(gap <= 1e-5, "n={n}: gap {gap:e}");
    }
}

#[test]
fn connected_nodes_carry_larger_group_norms() {
    for seed in 0..5 {
        let out = run_pipeline(&PipelineConfig::planted(
            spec(seed, 4000),
            SelectionCriterion::Budget(4),
        ))
        .unwrap();
        let planted = out.planted.unwrap();
        let norms = &out.report.group_norms;
        let connected_min = planted
            .true_connected
            .iter()
            .map(|&i| norms[i].unwrap())
            .fold(f64::INFINITY, f64::min);
        let disconnected_max = (0..30)
            .filter(|i| !planted.important.contains(i) && !planted.true_connected.contains(i))
            .map(|i| norms[i].unwrap())
            .fold(0.0, f64::max);
        assert!(
            connected_min > disconnected_max,
            "seed {seed}: {connected_min} <= {disconnected_max}"
        );
    }
}

#[test]
fn config_json_round_trip_and_validation() {
    let cfg = PipelineConfig::planted(spec(7, 4000), SelectionCriterion::Budget(4));
    let text = serde_json::to_string(&cfg).unwrap();
    let back: PipelineConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string(&back).unwrap(), text);

    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["selection"] = serde_json::json!({"budget": 4, "threshold": 0.1});
    assert!(serde_json::from_value::<PipelineConfig>(v.clone()).is_err());
    v["selection"] = serde_json::json!({"budget": 4});
    v["unknown_key"] = serde_json::json!(1);
    assert!(serde_json::from_value::<PipelineConfig>(v).is_err());
}
