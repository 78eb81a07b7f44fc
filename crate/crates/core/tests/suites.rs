//! Oracle, identity, structural, determinism and complexity suites.

mod common;

use common::criteria;

#[test]
fn metrics_match_brute_force() {
    criteria::metric_oracles().unwrap();
}

#[test]
fn metric_identities() {
    criteria::identities().unwrap();
}

#[test]
fn ensemble_structure() {
    criteria::ensemble_structure().unwrap();
}

#[test]
fn runs_are_reproducible_and_files_round_trip() {
    criteria::determinism().unwrap();
}

#[test]
fn flop_counts_match_hand_sums() {
    criteria::flop_counts().unwrap();
}
