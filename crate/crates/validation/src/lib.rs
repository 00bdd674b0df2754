// SPDX-License-Identifier: MIT OR Apache-2.0

//! Holds the `acceptance` test target, which checks the toolkit end to end
//! on simulated settings. Run it with
//! `cargo test -p moseg-validation --test acceptance`.
