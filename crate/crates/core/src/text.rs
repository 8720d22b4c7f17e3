//! Character-offset helpers.
//!
//! All offsets in this crate are Unicode scalar-value indices, never bytes.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Half-open character interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CharRange {
    pub start: usize,
    pub end: usize,
}

impl CharRange {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn intersects(&self, other: &CharRange) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn contains_range(&self, other: &CharRange) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn shifted(&self, by: usize) -> CharRange {
        CharRange::new(self.start + by, self.end + by)
    }
}

impl fmt::Display for CharRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

/// Number of Unicode scalar values in `s`.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Byte offset of the `char_idx`-th character; `char_idx == char_len(s)` maps to `s.len()`.
pub fn byte_offset(s: &str, char_idx: usize) -> Option<usize> {
    if char_idx == 0 {
        return Some(0);
    }
    let mut count = 0;
    for (b, _) in s.char_indices() {
        if count == char_idx {
            return Some(b);
        }
        count += 1;
    }
    (count == char_idx).then_some(s.len())
}

/// Slice `s` by a character range. `None` when the range falls outside `s`.
pub fn char_slice(s: &str, range: CharRange) -> Option<&str> {
    if range.start > range.end {
        return None;
    }
    let start = byte_offset(s, range.start)?;
    let end = start + byte_offset(&s[start..], range.end - range.start)?;
    Some(&s[start..end])
}
