//! Acceptance criteria, one test each. Every test prints a single PASS/FAIL line.

use std::io::Write;
use std::sync::Mutex;

use extremal::harness::default_workers;
use extremal::suite::{run_criterion, Criterion, SuiteConfig};

/// Criteria run one at a time so the runtime budgets are not shared between them.
static SERIAL: Mutex<()> = Mutex::new(());

fn check(c: Criterion) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let cfg = SuiteConfig { seed: 0, workers: default_workers() };
    let report = run_criterion(c, &cfg).expect("criterion ran to completion");
    // written to the process stdout so the line shows even when output is captured
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", report.line()).unwrap();
    for ch in &report.checks {
        writeln!(out, "    [{}] {}: {}", if ch.passed { "ok" } else { "fail" }, ch.name, ch.detail).unwrap();
    }
    drop(out);
    assert!(report.passed, "{}", report.line());
}

#[test]
fn criterion_01_frechet_marginal() {
    check(Criterion::Frechet);
}

#[test]
fn criterion_02_pathwise_identities() {
    check(Criterion::Pathwise);
}

#[test]
fn criterion_03_product_sup_measure_factorization() {
    check(Criterion::Factorization);
}

#[test]
fn criterion_04_integrability_ladder() {
    check(Criterion::Ladder);
}

#[test]
fn criterion_05_tail_constant() {
    check(Criterion::TailConstant);
}

#[test]
fn criterion_06_decoupling_orders() {
    check(Criterion::Decoupling);
}

#[test]
fn criterion_07_product_tails() {
    check(Criterion::ProductTail);
}

#[test]
fn criterion_08_independence() {
    check(Criterion::Independence);
}

#[test]
fn criterion_09_max_infinite_divisibility() {
    check(Criterion::MaxId);
}

#[test]
fn criterion_10_regenerative_model() {
    check(Criterion::Regenerative);
}

#[test]
fn criterion_11_small_ball() {
    check(Criterion::SmallBall);
}
