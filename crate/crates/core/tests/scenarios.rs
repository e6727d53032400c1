//! Scenario files through the library API.

use passopt::scenario::{self, presets, Grid, RunOptions, Scenario, ScenarioError};

#[test]
fn presets_round_trip_through_toml() {
    for name in presets::names() {
        let s = presets::get(name).unwrap();
        let text = s.to_toml_string();
        let back = Scenario::from_toml_str(&text).unwrap_or_else(|e| panic!("{name}: {e}\n{text}"));
        assert_eq!(back, s, "{name}");
    }
}

#[test]
fn unknown_keys_are_rejected_at_every_depth() {
    let src = presets::source("constrained_quadratic").unwrap();
    let src = src.replacen("[problem]", "colour = \"red\"\n[problem]", 1);
    let src = src.replacen("b = 3.0 }", "b = 3.0, slack = 1 }", 1);
    match Scenario::from_toml_str(&src) {
        Err(ScenarioError::Schema(errs)) => {
            assert!(errs.iter().any(|e| e.contains("'graph.colour'")), "{errs:?}");
            assert!(errs.iter().any(|e| e.contains("problem.constraints[1][1].slack")), "{errs:?}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn pi_on_a_constrained_problem_is_rejected() {
    let src = presets::source("constrained_1d").unwrap().replace("\"constrained\"", "\"pi-consensus\"");
    let err = Scenario::from_toml_str(&src).unwrap_err().to_string();
    assert!(err.contains("use algorithm 'constrained'"), "{err}");
}

#[test]
fn explicit_edges_are_one_based() {
    let src = r#"
name = "explicit"
[graph]
kind = "edges"
n = 3
edges = [{ i = 1, j = 2, a = 1.0, b = 2.0 }, { i = 2, j = 3, a = 1.0, b = 2.0 }]
[problem]
family = "quadratic"
dim = 1
targets = [[0.0], [1.0], [5.0]]
[algorithm]
kind = "pi-consensus"
alpha = 1.0
[init]
x = [0.0, 0.0, 0.0]
"#;
    let built = Scenario::from_toml_str(src).unwrap().build().unwrap();
    assert_eq!(built.graph.edges().len(), 2);
    assert_eq!((built.graph.edges()[1].i, built.graph.edges()[1].j), (1, 2));
    assert_eq!(built.init.stacked_x(), vec![0.0; 3]);
    let zero = src.replace("i = 1, j = 2", "i = 0, j = 2");
    assert!(Scenario::from_toml_str(&zero).unwrap_err().to_string().contains("1-based"));
}

#[test]
fn empty_grid_runs_the_base_scenario_once() {
    let mut s = presets::get("fig10_quadratic").unwrap();
    s.sim.t_end = 2.0;
    let report = scenario::sweep(&s, &Grid::parse("").unwrap(), &RunOptions::default()).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert!(report.rows[0].params.is_empty());
}

#[test]
fn seed_ensemble_reports_divergence_count() {
    let s = presets::get("fig11_naive_delay").unwrap();
    let report = scenario::sweep(&s, &Grid::parse("seed=0..9").unwrap(), &RunOptions::default()).unwrap();
    assert_eq!(report.rows.len(), 10);
    assert_eq!(report.failed, 0);
    assert_eq!(report.diverged, report.rows.iter().filter(|r| r.exit_code == 2).count());
    assert!(report.diverged >= 1, "{}", report.table());
    assert!(report.table().contains(&format!("{} diverged", report.diverged)));
}

#[test]
fn sweep_cells_are_deterministic() {
    let mut s = presets::get("fig12_quadratic").unwrap();
    s.sim.t_end = 5.0;
    let grid = Grid::parse("seed=3,4;alpha=1,2").unwrap();
    let a = scenario::sweep(&s, &grid, &RunOptions::default()).unwrap();
    let b = scenario::sweep(&s, &grid, &RunOptions::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows[3].params["seed"], 4.0);
    assert_eq!(a.rows[3].params["alpha"], 2.0);
}

#[test]
fn overrides_replace_seed_and_step() {
    let s = presets::get("fig10_quadratic").unwrap().with_overrides(Some(9), Some(0.002));
    assert_eq!((s.sim.seed, s.sim.h), (9, 0.002));
}
