//! Live-allocation counter for activation matrices of one watched shape.
//!
//! The counter is thread-local and disabled until [`watch`] is called. Every
//! [`Matrix`](super::Matrix) allocation, clone and drop whose shape equals the
//! watched `(rows, cols)` updates the live count and its high-water mark.

use std::cell::Cell;

thread_local! {
    static WATCHED: Cell<Option<(usize, usize)>> = const { Cell::new(None) };
    static LIVE: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

/// Starts counting matrices of shape `rows × cols` on the current thread.
/// Counting stops when the returned guard is dropped.
pub fn watch(rows: usize, cols: usize) -> MeterGuard {
    WATCHED.with(|w| w.set(Some((rows, cols))));
    LIVE.with(|l| l.set(0));
    PEAK.with(|p| p.set(0));
    MeterGuard { _private: () }
}

/// Number of watched matrices currently alive (allocated after `watch`).
pub fn live() -> usize {
    LIVE.with(Cell::get)
}

/// Highest simultaneous live count since `watch`.
pub fn peak() -> usize {
    PEAK.with(Cell::get)
}

/// Resets the high-water mark to the current live count.
pub fn reset_peak() {
    PEAK.with(|p| p.set(live()));
}

pub struct MeterGuard {
    _private: (),
}

impl Drop for MeterGuard {
    fn drop(&mut self) {
        WATCHED.with(|w| w.set(None));
    }
}

#[inline]
pub(crate) fn on_alloc(rows: usize, cols: usize) -> bool {
    let hit = WATCHED.with(|w| w.get() == Some((rows, cols)));
    if hit {
        let now = LIVE.with(|l| {
            let v = l.get() + 1;
            l.set(v);
            v
        });
        PEAK.with(|p| p.set(p.get().max(now)));
    }
    hit
}

#[inline]
pub(crate) fn on_free() {
    LIVE.with(|l| l.set(l.get().saturating_sub(1)));
}
