//! Bump arena for decode-time activations.
//!
//! One buffer is sized up front from the worst-case footprint of the
//! largest phase. Allocation bumps an offset; `reset` returns it to zero.
//! Running out of room is an error, the buffer never grows.

use std::cell::Cell;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

/// Which part of a decode currently owns the arena.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Idle,
    Encoder,
    SkipAt,
    SkipCmlm,
    /// Sentence-lifetime state: encoder memory and decoder caches.
    Sentence,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::Idle,
        Phase::Encoder,
        Phase::SkipAt,
        Phase::SkipCmlm,
        Phase::Sentence,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Idle => "idle",
            Phase::Encoder => "encoder",
            Phase::SkipAt => "skip-at",
            Phase::SkipCmlm => "skip-cmlm",
            Phase::Sentence => "sentence",
        })
    }
}

/// Plain-old-data element types for which every bit pattern is valid.
///
/// # Safety
/// Implementors must accept any initialized byte pattern as a valid value.
pub unsafe trait ArenaElem: Copy + 'static {}

unsafe impl ArenaElem for f32 {}
unsafe impl ArenaElem for f64 {}
unsafe impl ArenaElem for u32 {}
unsafe impl ArenaElem for u64 {}
unsafe impl ArenaElem for usize {}

const ALIGN: usize = 8;

fn round_up(bytes: usize) -> usize {
    bytes.div_ceil(ALIGN) * ALIGN
}

/// Bytes an allocation of `n` elements of `U` consumes, including padding.
pub fn footprint<U>(n: usize) -> usize {
    round_up(n * std::mem::size_of::<U>())
}

pub struct Arena {
    // Backing words; kept alive for `base`, never touched directly.
    _storage: Vec<u64>,
    base: *mut u8,
    capacity: usize,
    offset: Cell<usize>,
    high_water: Cell<usize>,
    phase: Phase,
    phase_peak: [Cell<usize>; 5],
}

impl Arena {
    pub fn new(capacity: usize, phase: Phase) -> Self {
        let words = capacity.div_ceil(8);
        let mut storage = vec![0u64; words];
        let base = storage.as_mut_ptr() as *mut u8;
        Self {
            _storage: storage,
            base,
            capacity,
            offset: Cell::new(0),
            high_water: Cell::new(0),
            phase,
            phase_peak: Default::default(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn offset(&self) -> usize {
        self.offset.get()
    }

    pub fn remaining(&self) -> usize {
        self.capacity - self.offset.get()
    }

    /// Largest offset ever reached; survives resets.
    pub fn high_water(&self) -> usize {
        self.high_water.get()
    }

    /// Largest offset reached while labelled `phase`.
    pub fn phase_peak(&self, phase: Phase) -> usize {
        self.phase_peak[phase.index()].get()
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Reclaims everything and relabels the arena.
    pub fn begin(&mut self, phase: Phase) {
        self.offset.set(0);
        self.phase = phase;
    }

    /// Reclaims everything; the phase label is kept.
    pub fn reset(&mut self) {
        self.offset.set(0);
    }

    /// Bump-allocates `n` elements. Contents are whatever the region last
    /// held.
    #[allow(clippy::mut_from_ref)]
    pub fn alloc<U: ArenaElem>(&self, n: usize) -> Result<&mut [U]> {
        let bytes = footprint::<U>(n);
        let start = self.offset.get();
        if bytes > self.capacity - start {
            return Err(Error::ArenaOverflow {
                phase: self.phase,
                requested: bytes,
                remaining: self.capacity - start,
            });
        }
        let end = start + bytes;
        self.offset.set(end);
        if end > self.high_water.get() {
            self.high_water.set(end);
        }
        let peak = &self.phase_peak[self.phase.index()];
        if end > peak.get() {
            peak.set(end);
        }
        if n == 0 {
            return Ok(&mut []);
        }
        // SAFETY: [start, end) lies inside the backing words, is 8-byte
        // aligned, was handed out to nobody else since the last `reset`
        // (which needs `&mut self`), and every byte is initialized.
        unsafe {
            let ptr = self.base.add(start) as *mut U;
            Ok(std::slice::from_raw_parts_mut(ptr, n))
        }
    }

    #[allow(clippy::mut_from_ref)]
    pub fn alloc_zeroed<U: ArenaElem>(&self, n: usize) -> Result<&mut [U]> {
        let s = self.alloc::<U>(n)?;
        // SAFETY: all-zero bytes are a valid `U` per `ArenaElem`.
        unsafe { std::ptr::write_bytes(s.as_mut_ptr(), 0, n) };
        Ok(s)
    }
}

// The raw base pointer is owned exclusively by the arena.
unsafe impl Send for Arena {}

impl fmt::Debug for Arena {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Arena")
            .field("capacity", &self.capacity)
            .field("offset", &self.offset.get())
            .field("high_water", &self.high_water.get())
            .field("phase", &self.phase)
            .finish()
    }
}
