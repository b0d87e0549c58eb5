//! Holds the acceptance gate in `tests/acceptance.rs`. It lives in its own
//! package so that a failing criterion does not keep the other test suites
//! from running under `cargo test --workspace`.
