//! Process exit codes shared by every subcommand.

/// Success.
pub const OK: i32 = 0;
/// Bad invocation: unknown flags, unreadable config, invalid combinations.
pub const USAGE: i32 = 1;
/// Data problems: malformed input files, shape mismatches, empty splits.
pub const DATA: i32 = 2;
/// Numerical failure during training or evaluation (NaN loss, divergence).
pub const NUMERIC: i32 = 3;
