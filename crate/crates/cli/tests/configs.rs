//! Every shipped config parses and each of its variants runs on a tiny budget.

use std::path::PathBuf;

use cnocpd::bench::{apply_overrides, load_table, run, variants};

fn shipped() -> Vec<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    files.sort();
    files
}

#[test]
fn shipped_configs_run() {
    let files = shipped();
    assert!(files.len() >= 9);
    for file in files {
        let mut table = load_table(&file).unwrap();
        let tiny = ["budget.max_iters=2", "swarm.q=2", "swarm.inner.max_steps=2"].map(String::from);
        apply_overrides(&mut table, &tiny).unwrap();
        let vars = variants(&table).unwrap_or_else(|e| panic!("{}: {e}", file.display()));
        assert!(!vars.is_empty());
        for (label, cfg) in vars {
            if cfg.problem.kind.as_deref() == Some("medium70") && label != "flow" {
                continue;
            }
            let rec = run(&cfg, 0).unwrap_or_else(|e| panic!("{} {label}: {e}", file.display()));
            assert!(!rec.termination.is_failure(), "{} {label}: {}", file.display(), rec.termination);
        }
    }
}
