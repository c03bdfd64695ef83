//! Hidden-label access audit.
//!
//! Training code runs inside a [`training_scope`]; evaluation code opens an
//! [`eval_scope`]. Reading an instance's true label while a training scope is
//! active and no evaluation scope is open panics. The check is compiled in
//! debug builds and whenever the `label-audit` feature is enabled.

use std::cell::Cell;

thread_local! {
    static TRAINING_DEPTH: Cell<u32> = const { Cell::new(0) };
    static EVAL_DEPTH: Cell<u32> = const { Cell::new(0) };
}

pub const ENABLED: bool = cfg!(any(debug_assertions, feature = "label-audit"));

#[must_use = "the scope ends when the guard is dropped"]
pub struct TrainingScope {
    _private: (),
}

#[must_use = "the scope ends when the guard is dropped"]
pub struct EvalScope {
    _private: (),
}

/// Forbids hidden-label reads on this thread until the guard is dropped.
pub fn training_scope() -> TrainingScope {
    TRAINING_DEPTH.with(|d| d.set(d.get() + 1));
    TrainingScope { _private: () }
}

/// Permits hidden-label reads on this thread until the guard is dropped.
pub fn eval_scope() -> EvalScope {
    EVAL_DEPTH.with(|d| d.set(d.get() + 1));
    EvalScope { _private: () }
}

impl Drop for TrainingScope {
    fn drop(&mut self) {
        TRAINING_DEPTH.with(|d| d.set(d.get() - 1));
    }
}

impl Drop for EvalScope {
    fn drop(&mut self) {
        EVAL_DEPTH.with(|d| d.set(d.get() - 1));
    }
}

/// True when a label read right now would violate the audit.
pub fn reads_forbidden() -> bool {
    TRAINING_DEPTH.with(Cell::get) > 0 && EVAL_DEPTH.with(Cell::get) == 0
}

#[inline]
pub(crate) fn check_label_read() {
    if ENABLED && reads_forbidden() {
        panic!("hidden instance label read from a training code path");
    }
}
