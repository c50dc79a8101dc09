//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so every line is printed; exits non-zero if any criterion fails.
//! Optional arguments select criteria by id.

use std::process::ExitCode;

use cpsde::check::{self, CheckOutcome};

fn layout() -> CheckOutcome {
    let expected_atom37 = [
        "N", "CA", "C", "CB", "O", "CG", "CG1", "CG2", "OG", "OG1", "SG", "CD", "CD1", "CD2",
        "ND1", "ND2", "OD1", "OD2", "SD", "CE", "CE1", "CE2", "CE3", "NE", "NE1", "NE2", "OE1",
        "OE2", "CH2", "NH1", "NH2", "OH", "CZ", "CZ2", "CZ3", "NZ", "OXT",
    ];
    let mut outcome = check::layout_check();
    outcome.require("atom37_vocabulary", cpsde::chem::ATOM37 == expected_atom37);
    outcome
}

fn main() -> ExitCode {
    let wanted: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let on = |id: &str| wanted.is_empty() || wanted.iter().any(|w| w == id);
    let mut models = None;
    let mut failed = 0;
    let mut ran = 0;
    let mut emit = |o: CheckOutcome| {
        println!("{o}");
        ran += 1;
        if !o.passed() {
            failed += 1;
        }
    };
    if on("1") {
        emit(check::kernel_sde_consistency(20_000, 2_000, 11));
    }
    if on("2") {
        emit(check::prior_correctness(50_000, 12));
    }
    if on("3") {
        emit(check::score_exactness(13));
    }
    if on("4") {
        emit(check::equivariance_check(100, 14));
    }
    if on("5") {
        emit(check::denoiser_gradient_check(0));
    }
    if on("6") {
        emit(check::desk_training(
            models.get_or_insert_with(|| check::train_overfit(2000, 16)),
        ));
    }
    if on("7") {
        emit(check::sampling_invariants(1000, 17));
    }
    if on("8") {
        emit(check::structural_sanity(
            models.get_or_insert_with(|| check::train_overfit(2000, 16)),
            20,
            1000,
        ));
    }
    if on("9") {
        emit(layout());
    }
    if on("10") {
        emit(check::oracle_collapse(1000, 20));
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
