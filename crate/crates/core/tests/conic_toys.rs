mod common;

use common::toys::{catalogue, check};

#[test]
fn catalogue_has_twenty_programs() {
    assert_eq!(catalogue().len(), 20);
}

#[test]
fn every_toy_reaches_its_known_optimum() {
    let failures: Vec<String> = catalogue()
        .iter()
        .filter_map(|t| check(t).err().map(|e| format!("{}: {e}", t.name)))
        .collect();
    assert!(failures.is_empty(), "{failures:#?}");
}
