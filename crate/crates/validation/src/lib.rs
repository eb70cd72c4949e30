//! Holds the `acceptance` test target; run it with
//! `cargo test -p prefalign-validation --test acceptance`.
