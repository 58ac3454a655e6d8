//! Execution-side FLOP tally.
//!
//! Every forward op on a [`Tape`](super::Tape) adds its cost to a
//! thread-local counter. The conventions match the closed-form profiler:
//! convolutions and matrix products cost 2 per multiply-accumulate; every
//! elementwise op, normalization, activation, softmax, pooling output and
//! resize output costs 1 per output element; reshapes, transposes, concat
//! and slicing cost nothing.

use std::cell::Cell;

thread_local! {
    static TALLY: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn add(n: u64) {
    TALLY.with(|t| t.set(t.get() + n));
}

pub fn reset() {
    TALLY.with(|t| t.set(0));
}

pub fn read() -> u64 {
    TALLY.with(|t| t.get())
}

/// Runs `f` and returns its result with the FLOPs it executed on this
/// thread.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let before = read();
    let out = f();
    (out, read() - before)
}
