//! Reasoning template layout: `[reasoning] [delimiter] [answer]`.
//!
//! The delimiter is pre-filled and sits exactly in the gap between the two
//! spans. In posterior mode the answer is pre-filled as well, so decoding
//! samples reasoning conditioned on the answer.

use crate::canvas::{CanvasError, MaskedSequence, Position, Span, TokenId};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub reasoning_span: Span,
    #[serde(default)]
    pub delimiter_tokens: Vec<TokenId>,
    pub answer_span: Span,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefilled_answer: Option<Vec<TokenId>>,
}

impl Template {
    pub fn new(reasoning_span: Span, delimiter_tokens: Vec<TokenId>, answer_span: Span) -> Self {
        Self {
            reasoning_span,
            delimiter_tokens,
            answer_span,
            prefilled_answer: None,
        }
    }

    /// Template with the answer block pre-filled (posterior mode).
    pub fn with_answer(mut self, answer: Vec<TokenId>) -> Self {
        self.prefilled_answer = Some(answer);
        self
    }

    pub fn delimiter_span(&self) -> Span {
        Span::new(self.reasoning_span.end, self.answer_span.start)
    }

    pub fn is_answer(&self, p: Position) -> bool {
        self.answer_span.contains(p)
    }

    /// Checks the layout against a canvas of `length` cells.
    pub fn validate(&self, length: usize) -> Result<(), CanvasError> {
        for (what, span) in [("reasoning span", self.reasoning_span), ("answer span", self.answer_span)] {
            if span.start > span.end {
                return Err(CanvasError::InvertedSpan(span));
            }
            if span.end > length {
                return Err(CanvasError::Length { what, span, length });
            }
        }
        if self.reasoning_span.overlaps(&self.answer_span) || self.answer_span.start < self.reasoning_span.end {
            return Err(CanvasError::Overlap {
                reasoning: self.reasoning_span,
                answer: self.answer_span,
            });
        }
        let gap = self.answer_span.start - self.reasoning_span.end;
        if gap != self.delimiter_tokens.len() {
            return Err(CanvasError::DelimiterGap {
                tokens: self.delimiter_tokens.len(),
                gap,
            });
        }
        if let Some(answer) = &self.prefilled_answer {
            if answer.len() != self.answer_span.len() {
                return Err(CanvasError::PrefillLength {
                    expected: self.answer_span.len(),
                    got: answer.len(),
                });
            }
        }
        Ok(())
    }
}

/// Builds the initial canvas for a templated generation of `length` cells.
///
/// Delimiter tokens (and the answer, when pre-filled) start filled; every
/// other cell starts masked.
pub fn new_canvas(context: Vec<TokenId>, template: &Template, length: usize) -> Result<MaskedSequence, CanvasError> {
    template.validate(length)?;
    let mut seq = MaskedSequence::new(length, context)?;
    for (p, &t) in template.delimiter_span().positions().zip(&template.delimiter_tokens) {
        seq.fill(p, t)?;
    }
    if let Some(answer) = &template.prefilled_answer {
        for (p, &t) in template.answer_span.positions().zip(answer) {
            seq.fill(p, t)?;
        }
    }
    Ok(seq)
}
