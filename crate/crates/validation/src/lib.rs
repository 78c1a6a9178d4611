//! Acceptance suite for `hbtrain`. Everything lives in `tests/acceptance.rs`;
//! run it with `cargo test -p hbtrain-validation --test acceptance`.
