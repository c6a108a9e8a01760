//! IO, configuration, and command plumbing for the `attwarp` binary.

pub mod exit;
