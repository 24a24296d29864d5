//! Acceptance suite: one test per numbered criterion, each printing its
//! pass/fail line with measured values, plus an end-to-end run of the
//! `selftest` subcommand, which must exit 0.

use std::process::Command;

use svdq_core::selftest as st;

fn assert_criterion(r: st::CriterionResult) {
    eprintln!("{}", r.line());
    assert!(r.passed, "{}", r.line());
}

#[test]
fn criterion_01_qmax_constants() {
    assert_criterion(st::criterion_01_qmax());
}

#[test]
fn criterion_02_round_trip_bound() {
    assert_criterion(st::criterion_02_round_trip());
}

#[test]
fn criterion_03_error_decomposition_inequality() {
    assert_criterion(st::criterion_03_error_decomposition());
}

#[test]
fn criterion_04_gaussian_quantization_bound() {
    assert_criterion(st::criterion_04_gaussian_bound());
}

#[test]
fn criterion_05_truncation_optimality() {
    assert_criterion(st::criterion_05_truncation_optimality());
}

#[test]
fn criterion_06_smoothing_identity() {
    assert_criterion(st::criterion_06_smoothing_identity());
}

#[test]
fn criterion_07_branch_cancellation() {
    assert_criterion(st::criterion_07_branch_cancellation());
}

#[test]
fn criterion_08_ablation_ordering() {
    assert_criterion(st::criterion_08_ablation_ordering());
}

#[test]
fn criterion_09_gptq_correctness() {
    assert_criterion(st::criterion_09_gptq());
}

#[test]
fn criterion_10_lora_fusion_exactness() {
    assert_criterion(st::criterion_10_lora_fusion());
}

#[test]
fn criterion_11_rank_overhead_formula() {
    assert_criterion(st::criterion_11_rank_overhead());
}

#[test]
fn criterion_12_costmodel_ordering() {
    assert_criterion(st::criterion_12_costmodel_ordering());
}

#[test]
fn criterion_13_ranksweep_monotonicity() {
    assert_criterion(st::criterion_13_ranksweep_monotonicity());
}

#[test]
fn criterion_14_serialization_round_trip() {
    assert_criterion(st::criterion_14_serialization());
}

// The binary's selftest runs the same fourteen checks and must exit 0 on a
// clean checkout.
#[test]
fn criterion_14_selftest_exits_zero() {
    let output = Command::new(env!("CARGO_BIN_EXE_svdq"))
        .arg("selftest")
        .output()
        .expect("selftest runs");
    let stdout = String::from_utf8_lossy(&output.stdout);
    eprintln!("{stdout}");
    assert_eq!(stdout.lines().count(), 14, "one line per criterion");
    assert!(
        output.status.success(),
        "selftest exited {:?}",
        output.status.code()
    );
}
