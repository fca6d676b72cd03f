//! Candidate generation with binary filters.
//!
//! Convolution search slides every permutation of `[1; i] ++ [0; c - i]`
//! (for `2 <= i <= c - 1`) across the saliency map. Span search slides
//! centred runs of ones of odd length. Each (filter, offset) pair yields one
//! [`RawCandidate`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{SaliencyRecord, TokenSelection};

/// Largest window accepted by [`convolution_filters`]; the bank grows as `2^c`.
pub const MAX_CONVOLUTION_WINDOW: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryFilter {
    mask: Vec<bool>,
    ones_count: usize,
}

impl BinaryFilter {
    pub fn new(mask: Vec<bool>) -> Self {
        let ones_count = mask.iter().filter(|&&b| b).count();
        BinaryFilter { mask, ones_count }
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        BinaryFilter::new(bits.iter().map(|&b| b != 0).collect())
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn window(&self) -> usize {
        self.mask.len()
    }

    pub fn ones_count(&self) -> usize {
        self.ones_count
    }

    pub fn bits(&self) -> Vec<u8> {
        self.mask.iter().map(|&b| b as u8).collect()
    }

    /// Offsets within the window that the filter keeps.
    pub fn selected_offsets(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j)
    }
}

impl fmt::Display for BinaryFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.mask {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    Convolution,
    Span,
    TopK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCandidate {
    pub indices: TokenSelection,
    pub values: Vec<f64>,
    pub source: CandidateSource,
    pub window_offset: usize,
}

impl RawCandidate {
    /// Singleton candidate for token `index`.
    pub fn singleton(record: &SaliencyRecord, index: usize, source: CandidateSource) -> Self {
        RawCandidate {
            indices: std::iter::once(index).collect(),
            values: vec![record.scores()[index]],
            source,
            window_offset: index,
        }
    }
}

/// All permutations of `[1; i] ++ [0; c - i]` for `2 <= i <= c - 1`, in
/// descending lexicographic order of the mask.
pub fn convolution_filters(c: usize) -> Result<Vec<BinaryFilter>> {
    if c < 3 {
        return Err(Error::InvalidWindow {
            c,
            reason: "convolution windows need at least 3 positions",
        });
    }
    if c > MAX_CONVOLUTION_WINDOW {
        return Err(Error::InvalidWindow {
            c,
            reason: "convolution window exceeds the supported maximum of 16",
        });
    }
    // Bit (c - 1 - j) encodes position j, so descending integers are
    // descending masks.
    let filters = (0..1u32 << c)
        .rev()
        .filter(|m| (2..c as u32).contains(&m.count_ones()))
        .map(|m| BinaryFilter::new((0..c).map(|j| m >> (c - 1 - j) & 1 == 1).collect()))
        .collect();
    Ok(filters)
}

/// Centred runs of `i` ones for every odd `i <= c`, shortest first.
pub fn span_filters(c: usize) -> Result<Vec<BinaryFilter>> {
    if c.is_multiple_of(2) {
        return Err(Error::InvalidWindow {
            c,
            reason: "span windows must have odd length",
        });
    }
    let filters = (1..=c)
        .step_by(2)
        .map(|i| {
            let pad = (c - i) / 2;
            BinaryFilter::new((0..c).map(|j| j >= pad && j < pad + i).collect())
        })
        .collect();
    Ok(filters)
}

/// Slides every filter over every window offset `0..=n-c`.
///
/// All filters must share the same window length. Output is filter-major:
/// every offset of the first filter, then every offset of the second, and so
/// on.
pub fn apply_filters(
    record: &SaliencyRecord,
    filters: &[BinaryFilter],
    source: CandidateSource,
) -> Result<Vec<RawCandidate>> {
    let Some(c) = filters.first().map(BinaryFilter::window) else {
        return Ok(Vec::new());
    };
    if filters.iter().any(|f| f.window() != c) || c == 0 {
        return Err(Error::InvalidWindow {
            c,
            reason: "filters in one bank must share a non-zero window length",
        });
    }
    let n = record.len();
    if c > n {
        return Err(Error::WindowTooLarge { c, n });
    }
    let scores = record.scores();
    let mut out = Vec::with_capacity(filters.len() * (n - c + 1));
    for filter in filters {
        for offset in 0..=n - c {
            let positions: Vec<usize> = filter.selected_offsets().map(|j| offset + j).collect();
            let values = positions.iter().map(|&i| scores[i]).collect();
            out.push(RawCandidate {
                indices: TokenSelection::try_from(positions)?,
                values,
                source,
                window_offset: offset,
            });
        }
    }
    Ok(out)
}

/// Precomputed convolution and span banks, shared read-only across records.
#[derive(Debug, Clone)]
pub struct FilterBank {
    convolution: Vec<BinaryFilter>,
    span: Vec<BinaryFilter>,
}

impl FilterBank {
    pub fn new(c_conv: usize, c_span: usize) -> Result<Self> {
        Ok(FilterBank {
            convolution: convolution_filters(c_conv)?,
            span: span_filters(c_span)?,
        })
    }

    pub fn convolution(&self) -> &[BinaryFilter] {
        &self.convolution
    }

    pub fn span(&self) -> &[BinaryFilter] {
        &self.span
    }

    /// Convolution candidates, or none when the window does not fit.
    pub fn convolution_candidates(&self, record: &SaliencyRecord) -> Result<Vec<RawCandidate>> {
        fitting(apply_filters(record, &self.convolution, CandidateSource::Convolution))
    }

    /// Span candidates, or none when the window does not fit.
    pub fn span_candidates(&self, record: &SaliencyRecord) -> Result<Vec<RawCandidate>> {
        fitting(apply_filters(record, &self.span, CandidateSource::Span))
    }
}

fn fitting(result: Result<Vec<RawCandidate>>) -> Result<Vec<RawCandidate>> {
    match result {
        Err(Error::WindowTooLarge { .. }) => Ok(Vec::new()),
        other => other,
    }
}
