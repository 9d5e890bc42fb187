//! Holds the workspace acceptance suite; run it with
//! `cargo test -p densegp-validation --test acceptance`.
