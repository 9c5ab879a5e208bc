//! The token canvas every decode step mutates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Integer token id. The engine never sees text.
pub type TokenId = u32;

/// Index of a cell in the canvas.
pub type Position = usize;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CanvasError {
    #[error("template spans overlap: reasoning {reasoning} and answer {answer}")]
    Overlap { reasoning: Span, answer: Span },
    #[error("{what} {span} does not fit in a canvas of length {length}")]
    Length {
        what: &'static str,
        span: Span,
        length: usize,
    },
    #[error("delimiter has {tokens} tokens but the gap between spans is {gap}")]
    DelimiterGap { tokens: usize, gap: usize },
    #[error("prefilled answer has {got} tokens, answer span holds {expected}")]
    PrefillLength { expected: usize, got: usize },
    #[error("invalid span {0}: start after end")]
    InvertedSpan(Span),
    #[error("position {position} out of range for length {length}")]
    OutOfRange { position: Position, length: usize },
    #[error("position {0} is already filled")]
    AlreadyFilled(Position),
    #[error("token {token} is outside the vocabulary of size {size}")]
    TokenOutOfVocab { token: TokenId, size: u32 },
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("cells has {cells} entries but length is {length}")]
    CellCount { cells: usize, length: usize },
    #[error("canvas length must be positive")]
    EmptyCanvas,
}

/// Vocabulary geometry. `mask_id` is a sentinel that is never a real token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vocab {
    pub size: u32,
    pub eos_id: TokenId,
    pub mask_id: TokenId,
    pub pad_id: TokenId,
}

impl Vocab {
    pub fn new(size: u32, eos_id: TokenId, pad_id: TokenId) -> Result<Self, CanvasError> {
        let v = Self {
            size,
            eos_id,
            mask_id: size,
            pad_id,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<(), CanvasError> {
        if self.size < 2 {
            return Err(CanvasError::InvalidVocab(format!(
                "size must be at least 2, got {}",
                self.size
            )));
        }
        if self.eos_id >= self.size || self.pad_id >= self.size {
            return Err(CanvasError::InvalidVocab(format!(
                "eos_id {} and pad_id {} must be below size {}",
                self.eos_id, self.pad_id, self.size
            )));
        }
        if self.mask_id < self.size {
            return Err(CanvasError::InvalidVocab(format!(
                "mask_id {} collides with a real token id (size {})",
                self.mask_id, self.size
            )));
        }
        Ok(())
    }

    pub fn contains(&self, token: TokenId) -> bool {
        token < self.size
    }
}

/// Half-open position interval `[start, end)`. Serialized as `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Span {
    pub start: Position,
    pub end: Position,
}

impl Span {
    pub const fn new(start: Position, end: Position) -> Self {
        Self { start, end }
    }

    pub const fn empty_at(at: Position) -> Self {
        Self { start: at, end: at }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, p: Position) -> bool {
        self.start <= p && p < self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        !self.is_empty() && !other.is_empty() && self.start < other.end && other.start < self.end
    }

    pub fn intersect(&self, other: &Span) -> Span {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end).max(start);
        Span { start, end }
    }

    pub fn positions(&self) -> std::ops::Range<Position> {
        self.start..self.end
    }
}

impl From<(usize, usize)> for Span {
    fn from((start, end): (usize, usize)) -> Self {
        Span { start, end }
    }
}

impl From<Span> for (usize, usize) {
    fn from(s: Span) -> Self {
        (s.start, s.end)
    }
}

impl std::fmt::Display for Span {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

/// Fixed-length canvas of cells, each masked (`None`) or filled, plus the
/// conditioning context.
///
/// Cells only ever go from masked to filled; [`MaskedSequence::fill`]
/// refuses to overwrite.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSequence")]
pub struct MaskedSequence {
    length: usize,
    cells: Vec<Option<TokenId>>,
    context: Vec<TokenId>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSequence {
    length: usize,
    cells: Vec<Option<TokenId>>,
    #[serde(default)]
    context: Vec<TokenId>,
}

impl TryFrom<RawSequence> for MaskedSequence {
    type Error = CanvasError;

    fn try_from(raw: RawSequence) -> Result<Self, Self::Error> {
        if raw.length == 0 {
            return Err(CanvasError::EmptyCanvas);
        }
        if raw.cells.len() != raw.length {
            return Err(CanvasError::CellCount {
                cells: raw.cells.len(),
                length: raw.length,
            });
        }
        Ok(Self {
            length: raw.length,
            cells: raw.cells,
            context: raw.context,
        })
    }
}

impl MaskedSequence {
    /// All-masked canvas of `length` cells.
    pub fn new(length: usize, context: Vec<TokenId>) -> Result<Self, CanvasError> {
        if length == 0 {
            return Err(CanvasError::EmptyCanvas);
        }
        Ok(Self {
            length,
            cells: vec![None; length],
            context,
        })
    }

    /// Canvas from explicit cells.
    pub fn from_cells(cells: Vec<Option<TokenId>>, context: Vec<TokenId>) -> Result<Self, CanvasError> {
        if cells.is_empty() {
            return Err(CanvasError::EmptyCanvas);
        }
        Ok(Self {
            length: cells.len(),
            cells,
            context,
        })
    }

    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    pub fn cells(&self) -> &[Option<TokenId>] {
        &self.cells
    }

    pub fn context(&self) -> &[TokenId] {
        &self.context
    }

    pub fn get(&self, p: Position) -> Option<TokenId> {
        self.cells.get(p).copied().flatten()
    }

    pub fn is_masked(&self, p: Position) -> bool {
        matches!(self.cells.get(p), Some(None))
    }

    pub fn masked_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_none()).count()
    }

    pub fn filled_count(&self) -> usize {
        self.length - self.masked_count()
    }

    /// Ascending masked positions, optionally restricted to `within`.
    pub fn masked_positions(&self, within: Option<Span>) -> Vec<Position> {
        let range = within
            .map(|s| s.intersect(&Span::new(0, self.length)))
            .unwrap_or(Span::new(0, self.length));
        range.positions().filter(|&p| self.cells[p].is_none()).collect()
    }

    /// Fills a masked cell. Filled cells are never overwritten.
    pub fn fill(&mut self, p: Position, token: TokenId) -> Result<(), CanvasError> {
        match self.cells.get_mut(p) {
            None => Err(CanvasError::OutOfRange {
                position: p,
                length: self.length,
            }),
            Some(Some(_)) => Err(CanvasError::AlreadyFilled(p)),
            Some(cell) => {
                *cell = Some(token);
                Ok(())
            }
        }
    }

    /// Checks every filled token against the vocabulary.
    pub fn validate_tokens(&self, vocab: &Vocab) -> Result<(), CanvasError> {
        for &token in self.cells.iter().flatten() {
            if !vocab.contains(token) {
                return Err(CanvasError::TokenOutOfVocab {
                    token,
                    size: vocab.size,
                });
            }
        }
        Ok(())
    }

    /// The token list when no cell is masked.
    pub fn tokens(&self) -> Option<Vec<TokenId>> {
        self.cells.iter().copied().collect()
    }

    /// Tokens in `span`, `None` where masked.
    pub fn slice(&self, span: Span) -> &[Option<TokenId>] {
        let s = span.intersect(&Span::new(0, self.length));
        &self.cells[s.start..s.end]
    }
}
