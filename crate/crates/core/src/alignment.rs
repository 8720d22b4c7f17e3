//! Subword-to-word alignment.
//!
//! A target word is mapped onto the minimal contiguous run of model tokens
//! whose character ranges cover it. Extra characters pulled in by that run
//! (a leading-space marker, fused punctuation) are counted as leakage but not
//! corrected here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{char_len, CharRange};

/// Leakage above this many characters is worth a diagnostic.
pub const SUSPICIOUS_LEAKAGE: usize = 2;

/// One model token with its character range in the scored text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredToken {
    pub piece: String,
    pub start: usize,
    pub end: usize,
    /// Natural-log probability of this token given everything before it.
    pub logprob: f64,
    pub special: bool,
    /// Probability mass of word-boundary-initial tokens in the distribution
    /// this token was predicted from. Only needed for boundary correction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_mass: Option<f64>,
}

impl ScoredToken {
    pub fn char_range(&self) -> CharRange {
        CharRange::new(self.start, self.end)
    }
}

/// A model's teacher-forced scoring of one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScoring {
    pub text: String,
    pub tokens: Vec<ScoredToken>,
    /// Boundary mass of the distribution following the final token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_boundary_mass: Option<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum AlignmentError {
    #[error("empty target range {0}")]
    EmptyTarget(CharRange),
    #[error("target {target} outside text of {text_len} characters")]
    TargetOutOfBounds { target: CharRange, text_len: usize },
    #[error("target {target}: character {uncovered} is not covered by any token (tokenizer/offset mismatch)")]
    NotCovered { target: CharRange, uncovered: usize },
    #[error("malformed token scoring: {0}")]
    InvalidTokens(String),
    #[error("{surface:?} occurrence {occurrence} not found at a word boundary")]
    SurfaceNotFound { surface: String, occurrence: usize },
}

impl TokenScoring {
    /// Check the structural invariants a backend must honour.
    pub fn validate(&self) -> Result<(), AlignmentError> {
        let bad = |msg: String| Err(AlignmentError::InvalidTokens(msg));
        let chars: Vec<char> = self.text.chars().collect();
        let mut covered = vec![false; chars.len()];
        let mut prev_end = 0;
        for (idx, tok) in self.tokens.iter().enumerate() {
            if tok.start > tok.end || tok.end > chars.len() {
                return bad(format!("token {idx} range {} outside text", tok.char_range()));
            }
            if let Some(mass) = tok.boundary_mass {
                if !(mass > 0.0 && mass <= 1.0) {
                    return bad(format!("token {idx} boundary mass {mass} outside (0, 1]"));
                }
            }
            if tok.special {
                continue;
            }
            if !tok.logprob.is_finite() || tok.logprob > 0.0 {
                return bad(format!("token {idx} logprob {} not a finite value <= 0", tok.logprob));
            }
            if tok.start < prev_end {
                return bad(format!("token {idx} range {} overlaps its predecessor", tok.char_range()));
            }
            prev_end = tok.end;
            covered[tok.start..tok.end].iter_mut().for_each(|c| *c = true);
        }
        if let Some(pos) = (0..chars.len()).find(|&i| !covered[i] && !chars[i].is_whitespace()) {
            return bad(format!("character {pos} ({:?}) not covered by any token", chars[pos]));
        }
        if let Some(mass) = self.final_boundary_mass {
            if !(mass > 0.0 && mass <= 1.0) {
                return bad(format!("final boundary mass {mass} outside (0, 1]"));
            }
        }
        Ok(())
    }

    pub fn content_tokens(&self) -> impl Iterator<Item = &ScoredToken> {
        self.tokens.iter().filter(|t| !t.special)
    }

    /// Boundary mass of the distribution at token position `idx` (`idx == len` means after the last token).
    pub fn boundary_mass_at(&self, idx: usize) -> Option<f64> {
        if idx == self.tokens.len() {
            self.final_boundary_mass
        } else {
            self.tokens.get(idx).and_then(|t| t.boundary_mass)
        }
    }
}

/// Inclusive token-index run covering a target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub first: usize,
    pub last: usize,
    pub covered: CharRange,
    /// Characters inside the span's tokens but outside the target.
    pub leakage: usize,
}

impl TokenSpan {
    pub fn is_suspicious(&self) -> bool {
        self.leakage > SUSPICIOUS_LEAKAGE
    }
}

/// Find the unique minimal contiguous token span covering `target`.
pub fn find_minimal_span(scoring: &TokenScoring, target: CharRange) -> Result<TokenSpan, AlignmentError> {
    if target.is_empty() {
        return Err(AlignmentError::EmptyTarget(target));
    }
    let text_len = char_len(&scoring.text);
    if target.end > text_len {
        return Err(AlignmentError::TargetOutOfBounds { target, text_len });
    }

    let mut hits = scoring
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.special && t.char_range().intersects(&target));
    let Some((first, _)) = hits.next() else {
        return Err(AlignmentError::NotCovered {
            target,
            uncovered: target.start,
        });
    };
    let last = hits.next_back().map_or(first, |(i, _)| i);

    let mut cursor = target.start;
    for tok in scoring.tokens[first..=last].iter().filter(|t| !t.special) {
        if tok.start > cursor {
            return Err(AlignmentError::NotCovered { target, uncovered: cursor });
        }
        cursor = cursor.max(tok.end);
    }
    if cursor < target.end {
        return Err(AlignmentError::NotCovered { target, uncovered: cursor });
    }

    let covered = CharRange::new(scoring.tokens[first].start, scoring.tokens[last].end);
    Ok(TokenSpan {
        first,
        last,
        covered,
        leakage: covered.len() - target.len(),
    })
}

/// Character range of the `occurrence`-th (0-based) word-bounded match of `surface`.
///
/// A match is word-bounded when the characters on either side are not
/// letters or digits.
pub fn locate_surface(sentence: &str, surface: &str, occurrence: usize) -> Result<CharRange, AlignmentError> {
    let not_found = || AlignmentError::SurfaceNotFound {
        surface: surface.to_owned(),
        occurrence,
    };
    let hay: Vec<char> = sentence.chars().collect();
    let needle: Vec<char> = surface.chars().collect();
    if needle.is_empty() || needle.len() > hay.len() {
        return Err(not_found());
    }
    let bounded = |i: usize| {
        let before = i == 0 || !hay[i - 1].is_alphanumeric();
        let after = i + needle.len() == hay.len() || !hay[i + needle.len()].is_alphanumeric();
        before && after
    };
    (0..=hay.len() - needle.len())
        .filter(|&i| hay[i..i + needle.len()] == needle[..] && bounded(i))
        .nth(occurrence)
        .map(|i| CharRange::new(i, i + needle.len()))
        .ok_or_else(not_found)
}
