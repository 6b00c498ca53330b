//! Event data model, windowed polarity time surfaces and event files.

mod io;
mod surface;

pub use io::{
    decode_events, encode_events, read_events, read_events_csv, write_events, write_events_csv, EVENT_HEADER_LEN,
    EVENT_MAGIC, EVENT_RECORD_LEN,
};
pub use surface::{build_time_surfaces, gaussian_blur, Region, TimeSurfacePair, TimeWindow};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EventError {
    #[error("degenerate region")]
    DegenerateRegion,
    #[error("unordered stream: event {index} has t={t} us after t={prev} us")]
    UnorderedStream { index: usize, prev: u64, t: u64 },
    #[error("invalid time window [{start}, {end}) us")]
    InvalidWindow { start: u64, end: u64 },
    #[error("blur sigma must be finite and > 0, got {0}")]
    InvalidBlurSigma(f64),
    #[error("event {index} at ({x}, {y}) lies outside the {width}x{height} sensor")]
    OutOfBounds {
        index: usize,
        x: u16,
        y: u16,
        width: u16,
        height: u16,
    },
    #[error("record {index} (byte offset {offset}): invalid polarity {value}")]
    BadPolarity { index: usize, offset: u64, value: i64 },
    #[error("malformed event file at byte offset {offset}: {msg}")]
    Malformed { offset: u64, msg: String },
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sign of a brightness change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    #[inline]
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn from_sign(p: i64) -> Option<Polarity> {
        match p {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }

    pub fn opposite(self) -> Polarity {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

/// One asynchronous brightness-change sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    /// Microseconds.
    pub t: u64,
    pub p: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, p: Polarity) -> Self {
        Self { x, y, t, p }
    }
}

/// Log-intensity change required to fire one event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastModel {
    threshold: f64,
}

impl ContrastModel {
    pub fn new(threshold: f64) -> Option<Self> {
        (threshold.is_finite() && threshold > 0.0).then_some(Self { threshold })
    }

    #[inline]
    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

/// Events from one sensor, sorted by timestamp.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventStream {
    pub width: u16,
    pub height: u16,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn new(width: u16, height: u16, events: Vec<Event>) -> Result<Self, EventError> {
        let s = Self { width, height, events };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), EventError> {
        check_sorted(&self.events)?;
        for (index, e) in self.events.iter().enumerate() {
            if e.x >= self.width || e.y >= self.height {
                return Err(EventError::OutOfBounds {
                    index,
                    x: e.x,
                    y: e.y,
                    width: self.width,
                    height: self.height,
                });
            }
        }
        Ok(())
    }

    /// Events with `window.start ≤ t < window.end`.
    pub fn in_window(&self, window: TimeWindow) -> &[Event] {
        events_in_window(&self.events, window)
    }
}

/// Sub-slice of a sorted event sequence falling inside `window`.
pub fn events_in_window(events: &[Event], window: TimeWindow) -> &[Event] {
    let lo = events.partition_point(|e| e.t < window.start_us);
    let hi = events.partition_point(|e| e.t < window.end_us);
    &events[lo..hi.max(lo)]
}

pub(crate) fn check_sorted(events: &[Event]) -> Result<(), EventError> {
    for (i, w) in events.windows(2).enumerate() {
        if w[1].t < w[0].t {
            return Err(EventError::UnorderedStream {
                index: i + 1,
                prev: w[0].t,
                t: w[1].t,
            });
        }
    }
    Ok(())
}
