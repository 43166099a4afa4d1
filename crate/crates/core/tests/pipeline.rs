//! Cross-module checks: generated data through the runner and the swarm.

use cnocpd::bench::{run, RunConfig, Termination};
use cnocpd::datagen::gen_problem;
use cnocpd::io::{model_from_text, read_tensor, write_tensor};
use cnocpd::relative_error;

fn config(text: &str) -> RunConfig {
    RunConfig::from_toml(text).unwrap()
}

#[test]
fn single_particle_swarm_tracks_the_flow() {
    let steps = 20;
    let base = "rank = 3\nproblem.kind = 'random_5x5x5_R3'\nflow.preconditioned = true\n\
                swarm.q = 1\nswarm.mutation = false\nswarm.inner.tol = 1e-300\nswarm.inner.preconditioned = true\n";
    let cno = config(&format!("{base}algorithm = 'cno'\nbudget.max_iters = 6\nswarm.inner.max_steps = {steps}\n"));
    let flow = config(&format!("{base}algorithm = 'flow'\nbudget.max_iters = {}\n", 6 * steps));
    let a = run(&cno, 4).unwrap();
    let b = run(&flow, 4).unwrap();
    assert_eq!(a.rows.len(), 6);
    for row in &a.rows {
        let twin = &b.rows[row.iter * steps];
        assert_eq!(twin.iter, row.iter * steps);
        assert_eq!(row.objective, twin.objective, "outer iteration {}", row.iter);
        assert_eq!(row.rel_error, twin.rel_error);
    }
    assert_eq!(a.final_model, b.final_model);
}

#[test]
fn every_algorithm_reduces_the_error() {
    for alg in ["cno", "flow", "dtpnn-explicit", "dtpnn-armijo", "dtpnn-semiimplicit", "barrier-flow", "hals", "mur"] {
        let cfg = config(&format!(
            "algorithm = '{alg}'\nrank = 3\nproblem.kind = 'random_6x6x6_R3'\nbudget.max_iters = 60\n\
             dtpnn.lambda = 0.02\nswarm.q = 3\nswarm.inner.max_steps = 20\n"
        ));
        let rec = run(&cfg, 1).unwrap();
        assert!(!rec.termination.is_failure(), "{alg}: {}", rec.termination);
        let first = rec.rows.first().unwrap().rel_error;
        let last = rec.final_rel_error();
        assert!(last < first || alg == "cno", "{alg}: {first} -> {last}");
        assert!(rec.final_model.is_nonnegative(), "{alg}");
    }
}

#[test]
fn target_error_stops_early() {
    let cfg = config("algorithm = 'hals'\nrank = 3\nproblem.kind = 'random_5x5x5_R3'\nbudget.max_iters = 5000\nbudget.target_error = 1e-6");
    let rec = run(&cfg, 2).unwrap();
    assert_eq!(rec.termination, Termination::TargetReached);
    assert!(rec.final_rel_error() <= 1e-6);
    assert!(rec.rows.last().unwrap().iter < 5000);
}

#[test]
fn file_problems_match_generated_ones() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.bin");
    let p = gen_problem("random_4x5x6_R2", 8).unwrap();
    write_tensor(&path, &p.tensor).unwrap();
    assert_eq!(read_tensor(&path).unwrap(), p.tensor);
    let from_file = config(&format!("algorithm = 'mur'\nrank = 2\nproblem.file = '{}'\nbudget.max_iters = 30", path.display()));
    let generated = config("algorithm = 'mur'\nrank = 2\nproblem.kind = 'random_4x5x6_R2'\nproblem.seed = 8\nbudget.max_iters = 30");
    assert_eq!(run(&from_file, 0).unwrap().to_csv(), run(&generated, 0).unwrap().to_csv());
}

#[test]
fn stored_model_reproduces_the_final_error() {
    let cfg = config("algorithm = 'dtpnn-armijo'\nrank = 10\nproblem.kind = 'caseI'\nbudget.max_iters = 15");
    let dir = tempfile::tempdir().unwrap();
    let rec = run(&cfg, 0).unwrap();
    cnocpd::bench::write_record(&rec, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("model.txt")).unwrap();
    let model = model_from_text(&text).unwrap();
    let t = gen_problem("caseI", 0).unwrap().tensor;
    assert!((relative_error(&t, &model).unwrap() - rec.final_rel_error()).abs() <= 1e-12);
}
