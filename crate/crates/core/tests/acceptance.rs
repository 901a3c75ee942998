//! Acceptance gate: one test per release criterion, each driving the
//! corresponding verification suite with the default configuration and
//! asserting the pinned tolerances and the runtime budget. Run with
//! `--nocapture` to see the per-criterion pass/fail lines.

use qsf_core::report::Report;
use qsf_core::verify::{run_suite, VerifyConfig, SUITES};
use std::time::{Duration, Instant};

fn drive(suite: &str) -> (Report, Duration) {
    let cfg = VerifyConfig::default();
    let start = Instant::now();
    let report =
        run_suite(suite, &cfg).unwrap_or_else(|e| panic!("suite {suite} refused to run: {e}"));
    (report, start.elapsed())
}

/// Every record whose name starts with the prefix must exist, carry the
/// pinned tolerance, and pass.
fn expect_family(report: &Report, prefix: &str, tolerance: f64) {
    let hits: Vec<_> = report
        .records
        .iter()
        .filter(|r| r.name.starts_with(prefix))
        .collect();
    assert!(!hits.is_empty(), "no records named {prefix}*");
    for rec in hits {
        assert_eq!(
            rec.tolerance, tolerance,
            "{} must be pinned at {tolerance:.1e}",
            rec.name
        );
        assert!(
            rec.pass,
            "{} residual {:.3e} exceeds {tolerance:.1e}",
            rec.name, rec.residual
        );
    }
}

fn gate(index: usize, label: &str, suites: &[&str], budget_s: u64) -> Vec<Report> {
    let mut reports = Vec::new();
    let mut elapsed = Duration::ZERO;
    for suite in suites {
        let (report, dt) = drive(suite);
        elapsed += dt;
        reports.push(report);
    }
    let pass = reports.iter().all(|r| r.pass);
    println!(
        "[{index:>2}/10] {label}: {} ({:.2} s)",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    for report in &reports {
        for rec in &report.records {
            assert!(
                rec.pass,
                "{}: {} residual {:.3e} exceeds {:.1e}",
                report.command, rec.name, rec.residual, rec.tolerance
            );
        }
    }
    assert!(
        elapsed <= Duration::from_secs(budget_s),
        "{label}: {:.2} s exceeds the {budget_s} s budget",
        elapsed.as_secs_f64()
    );
    reports
}

#[test]
fn c01_q_special_function_identities() {
    let reports = gate(1, "q-special-function identities", &["qcore-identities"], 5);
    for q in ["0.3", "0.5", "0.7"] {
        expect_family(&reports[0], &format!("triple-product-q{q}"), 1e-10);
        expect_family(&reports[0], &format!("quasi-periodicity-q{q}"), 1e-10);
        expect_family(&reports[0], &format!("inversion-q{q}"), 1e-10);
        expect_family(&reports[0], &format!("q-exponential-taylor-q{q}"), 1e-10);
    }
}

#[test]
fn c02_resummation_sanity() {
    let reports = gate(2, "resummation sanity", &["resummation"], 10);
    expect_family(&reports[0], "laplace-borel-roundtrip", 1e-8);
    expect_family(&reports[0], "direction-independence", 1e-10);
    expect_family(&reports[0], "equation-residual-n2", 1e-8);
    expect_family(&reports[0], "equation-residual-n3", 1e-8);
}

#[test]
fn c03_series_connection_identity() {
    let reports = gate(3, "series connection identity", &["thomae"], 10);
    expect_family(&reports[0], "identity-n2", 1e-8);
    expect_family(&reports[0], "identity-n3", 1e-8);
}

#[test]
fn c04_main_connection_formula() {
    let reports = gate(4, "main connection formula", &["main-connection"], 30);
    for n in ["n2", "n3"] {
        for q in ["q0.3", "q0.5"] {
            expect_family(&reports[0], &format!("identity-{n}-{q}"), 1e-6);
            expect_family(&reports[0], &format!("pseudo-constancy-{n}-{q}"), 1e-9);
        }
    }
}

#[test]
fn c05_function_field_corollary() {
    let reports = gate(5, "overlap-domain corollary", &["corollary"], 10);
    expect_family(&reports[0], "identity-n2", 1e-6);
    expect_family(&reports[0], "identity-n3", 1e-6);
}

#[test]
fn c06_system_solutions() {
    let reports = gate(6, "system solutions", &["system-solutions"], 20);
    expect_family(&reports[0], "origin-residual-n3", 1e-8);
    expect_family(&reports[0], "infinity-residual-n3", 1e-8);
    for n in ["n2", "n3"] {
        expect_family(&reports[0], &format!("frame-inverse-{n}"), 1e-9);
        expect_family(&reports[0], &format!("frame-conjugation-{n}"), 1e-9);
        expect_family(&reports[0], &format!("frame-spectral-{n}"), 1e-9);
        expect_family(&reports[0], &format!("frame-border-{n}"), 1e-9);
    }
}

#[test]
fn c07_connection_matrix() {
    let reports = gate(7, "connection matrix", &["connection-matrix"], 20);
    for n in ["n2", "n3"] {
        expect_family(&reports[0], &format!("closed-vs-numeric-{n}"), 1e-6);
        expect_family(&reports[0], &format!("inverse-product-{n}"), 1e-8);
        expect_family(&reports[0], &format!("pseudo-constancy-{n}"), 1e-8);
    }
}

#[test]
fn c08_stokes_matrix() {
    let reports = gate(8, "q-Stokes matrix", &["stokes-matrix", "full-system"], 30);
    for n in ["n2", "n3"] {
        expect_family(&reports[0], &format!("closed-vs-numeric-{n}"), 1e-6);
        expect_family(&reports[0], &format!("block-structure-{n}"), 1e-8);
        expect_family(&reports[0], &format!("involution-{n}"), 1e-8);
        expect_family(&reports[1], &format!("transport-vs-minor-{n}"), 1e-6);
        expect_family(&reports[1], &format!("transported-block-{n}"), 1e-8);
        expect_family(&reports[1], &format!("original-solution-residual-{n}"), 1e-8);
    }
}

#[test]
fn c09_classical_consistency() {
    let reports = gate(9, "classical consistency", &["classical"], 10);
    for n in ["n2", "n3"] {
        expect_family(&reports[0], &format!("connection-residual-{n}"), 1e-6);
        expect_family(&reports[0], &format!("stokes-relation-{n}"), 1e-8);
        expect_family(&reports[0], &format!("equation-residual-{n}"), 1e-6);
    }
}

#[test]
fn c10_classical_limit_recovery() {
    let reports = gate(10, "classical limit recovery", &["qlimit"], 60);
    let report = &reports[0];
    for rec in &report.records {
        if rec.name.ends_with("-final") {
            assert_eq!(rec.tolerance, 5e-2, "{} final bound", rec.name);
        } else if rec.name.ends_with("-ratio") {
            assert_eq!(rec.tolerance, 0.8, "{} ratio bound", rec.name);
        } else {
            panic!("unexpected trend record {}", rec.name);
        }
    }
    for n in ["n2", "n3"] {
        expect_family(report, &format!("{n}-stokes-matrix-final"), 5e-2);
        expect_family(report, &format!("{n}-stokes-matrix-ratio"), 0.8);
        expect_family(report, &format!("{n}-origin-series-final"), 5e-2);
        expect_family(report, &format!("{n}-infinity-solution-1-final"), 5e-2);
        expect_family(report, &format!("{n}-corner-coefficient-final"), 5e-2);
    }
    for item in [
        "logq-linearization",
        "q-exponential",
        "q-gamma-half",
        "theta-power",
    ] {
        expect_family(report, &format!("basic-{item}-final"), 5e-2);
        expect_family(report, &format!("basic-{item}-ratio"), 0.8);
    }
}

#[test]
fn full_sweep_within_budget() {
    let start = Instant::now();
    let mut all = true;
    for suite in SUITES {
        let (report, _) = drive(suite);
        all &= report.pass;
    }
    let elapsed = start.elapsed();
    println!(
        "full sweep: {} ({:.2} s)",
        if all { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    assert!(all, "at least one suite failed");
    assert!(
        elapsed <= Duration::from_secs(180),
        "sweep took {:.2} s, budget is 180 s",
        elapsed.as_secs_f64()
    );
}
