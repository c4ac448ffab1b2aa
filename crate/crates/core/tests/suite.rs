mod common;

use std::sync::Arc;

use stripwalk::environment::{EnvironmentLaw, TransitionTriple};
use stripwalk::suite::{run_suite, PropertyRegistry};

fn failures(rows: &[stripwalk::suite::PropertyResult]) -> Vec<String> {
    rows.iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{}/{}: {}", r.module, r.name, r.detail))
        .collect()
}

#[test]
fn registry_names_are_unique() {
    let reg = PropertyRegistry::builtin();
    let mut names: Vec<_> = reg.iter().map(|p| (p.module(), p.name())).collect();
    let n = names.len();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), n);
}

#[test]
fn scalar_walk_passes_every_property() {
    let mut cfg = common::config(&common::scalar_law());
    cfg.budgets.trials = 4000;
    cfg.budgets.horizon = 2000;
    cfg.budgets.velocity_trials = 100;
    let rows = run_suite(cfg).unwrap();
    assert!(failures(&rows).is_empty(), "{:#?}", failures(&rows));
}

#[test]
fn periodic_strip_passes_every_property() {
    let mut cfg = common::config(&common::periodic_law());
    cfg.budgets.trials = 4000;
    cfg.budgets.horizon = 2000;
    cfg.budgets.velocity_trials = 100;
    let rows = run_suite(cfg).unwrap();
    assert!(failures(&rows).is_empty(), "{:#?}", failures(&rows));
}

#[test]
fn iid_strip_passes_every_property() {
    let mut cfg = common::config(&common::iid_law());
    cfg.budgets.trials = 2000;
    cfg.budgets.samples = 300;
    cfg.budgets.horizon = 1000;
    cfg.budgets.velocity_trials = 100;
    let rows = run_suite(cfg).unwrap();
    assert!(failures(&rows).is_empty(), "{:#?}", failures(&rows));
}

#[test]
fn pure_right_walk_keeps_pathwise_identities() {
    let law = Arc::new(EnvironmentLaw::homogeneous(TransitionTriple::scalar(0.8, 0.0, 0.2)));
    let mut cfg = common::config(&law);
    cfg.budgets.trials = 500;
    cfg.budgets.horizon = 200;
    cfg.budgets.velocity_trials = 20;
    let rows = run_suite(cfg).unwrap();
    let get = |name: &str| rows.iter().find(|r| r.name == name).unwrap();
    assert!(get("pathwise-identities").passed);
    assert!(!get("triples-valid").passed);
}
