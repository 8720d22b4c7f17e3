#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::Rng;
use surpnov_core::alignment::{find_minimal_span, locate_surface, AlignmentError, ScoredToken, TokenScoring};
use surpnov_core::text::{char_slice, CharRange};

const LETTERS: &[char] = &[
    'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'i', 'k', 'l', 'm', 'n', 'o', 'r', 's', 't', 'u', 'w', 'y', 'é', 'ß',
    'ø', 'ü', '7', 'Q',
];
const SEPARATORS: &[&str] = &[" ", " ", " ", "  ", "\n", ", ", ". ", "\t", " - ", "'", " (", ") "];

/// A synthetic tokenization with one target word.
#[derive(Debug, Clone)]
pub struct FuzzCase {
    pub scoring: TokenScoring,
    pub target: CharRange,
    pub surface: String,
    /// False when a token covering part of the target was deliberately removed.
    pub expect_covered: bool,
}

pub fn fuzz_case<R: Rng>(rng: &mut R) -> FuzzCase {
    let mut text = String::new();
    let mut len = 0;
    let mut words = Vec::new();
    if rng.random_bool(0.2) {
        let lead = *SEPARATORS.choose(rng).unwrap();
        text.push_str(lead);
        len += lead.chars().count();
    }
    let n_words = rng.random_range(1..=12);
    for w in 0..n_words {
        if w > 0 {
            let sep = *SEPARATORS.choose(rng).unwrap();
            text.push_str(sep);
            len += sep.chars().count();
        }
        let wl = rng.random_range(1..=10);
        let start = len;
        for _ in 0..wl {
            text.push(*LETTERS.choose(rng).unwrap());
        }
        len += wl;
        words.push(CharRange::new(start, len));
    }
    if rng.random_bool(0.3) {
        text.push_str(if rng.random_bool(0.5) { "." } else { " \n" });
    }
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();

    // random partition of [0, n)
    let mut tokens = Vec::new();
    if rng.random_bool(0.5) {
        tokens.push(ScoredToken {
            piece: "<s>".into(),
            start: 0,
            end: 0,
            logprob: 0.0,
            special: true,
            boundary_mass: None,
        });
    }
    let mut start = 0;
    while start < n {
        let max = rng.random_range(1..=6).min(n - start);
        let end = start + rng.random_range(1..=max);
        let piece: String = chars[start..end].iter().collect();
        let whitespace_only = piece.chars().all(char::is_whitespace);
        if !(whitespace_only && rng.random_bool(0.5)) {
            tokens.push(ScoredToken {
                piece,
                start,
                end,
                logprob: -rng.random_range(0.0..15.0),
                special: false,
                boundary_mass: None,
            });
        }
        start = end;
    }

    let target = *words.choose(rng).unwrap();
    let mut expect_covered = true;
    if rng.random_bool(0.1) {
        let hits: Vec<usize> = tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.special && t.char_range().intersects(&target))
            .map(|(i, _)| i)
            .collect();
        tokens.remove(*hits.choose(rng).unwrap());
        expect_covered = false;
    }
    FuzzCase {
        surface: char_slice(&text, target).unwrap().to_owned(),
        scoring: TokenScoring {
            text,
            tokens,
            final_boundary_mass: None,
        },
        target,
        expect_covered,
    }
}

/// Check minimality, coverage and surface reconstruction against an independent scan.
pub fn check_alignment(case: &FuzzCase) -> Result<(), String> {
    let FuzzCase {
        scoring,
        target,
        surface,
        expect_covered,
    } = case;
    let result = find_minimal_span(scoring, *target);
    if !expect_covered {
        return match result {
            Err(AlignmentError::NotCovered { .. }) => Ok(()),
            other => Err(format!("expected NotCovered, got {other:?}")),
        };
    }
    let span = result.map_err(|e| format!("alignment failed: {e}"))?;
    let toks = &scoring.tokens;

    // the tokens holding the target's first and last characters are unique
    let holding = |pos: usize| {
        toks.iter()
            .position(|t| !t.special && t.start <= pos && pos < t.end)
            .ok_or(format!("no token holds character {pos}"))
    };
    let first = holding(target.start)?;
    let last = holding(target.end - 1)?;
    if (span.first, span.last) != (first, last) {
        return Err(format!("span {}..={}, oracle {first}..={last}", span.first, span.last));
    }
    if toks[first].start > target.start || toks[last].end < target.end {
        return Err("span does not cover the target".into());
    }
    let covered = CharRange::new(toks[first].start, toks[last].end);
    if span.covered != covered || span.leakage != covered.len() - target.len() {
        return Err(format!("covered {} leakage {}", span.covered, span.leakage));
    }
    let joined: String = toks[first..=last].iter().filter(|t| !t.special).map(|t| t.piece.as_str()).collect();
    let expected = char_slice(&scoring.text, covered).ok_or("covered range out of bounds")?;
    if joined != expected {
        return Err(format!("pieces {joined:?} do not reconstruct {expected:?}"));
    }
    let inner: String = joined.chars().skip(target.start - covered.start).take(target.len()).collect();
    if &inner != surface {
        return Err(format!("reconstructed {inner:?}, surface {surface:?}"));
    }
    let found = (0..)
        .map(|occ| locate_surface(&scoring.text, surface, occ))
        .take_while(Result::is_ok)
        .any(|r| r.unwrap() == *target);
    if !found {
        return Err(format!("locate_surface never yields {target} for {surface:?}"));
    }
    Ok(())
}

/// Brute-force (wins, losses, ties) over all pairs.
pub fn pair_counts(novel: &[f64], conventional: &[f64]) -> (u64, u64, u64) {
    let (mut w, mut l, mut t) = (0, 0, 0);
    for &a in novel {
        for &b in conventional {
            if a > b {
                w += 1;
            } else if a < b {
                l += 1;
            } else {
                t += 1;
            }
        }
    }
    (w, l, t)
}
