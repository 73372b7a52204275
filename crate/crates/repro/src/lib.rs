//! Acceptance checks for the reproduction live in `tests/acceptance.rs`;
//! run them with `cargo test -p ddlab-repro --test acceptance`.
