//! The decode loop.
//!
//! Each iteration makes exactly one model call, which returns reports for
//! every masked cell. The scheduler picks positions inside the active block
//! window, tokens are chosen for them, and the step is recorded.
//!
//! With a template, decoding runs in two phases. The reasoning phase covers
//! every masked cell outside the answer span, in blocks aligned from the
//! start of the canvas. The answer phase follows, in blocks aligned from the
//! answer start. Every call also yields the answer-entropy bound H_UB (the
//! sum of masked answer-cell entropies). When early exit is enabled and
//! H_UB drops strictly below gamma during the reasoning phase, the same
//! call's reports are used to start the answer phase right away. The
//! reasoning cells still masked stay masked while the answer is decoded and
//! are filled with the pad token at the end, without model calls.

mod enumerate;
mod replay;

pub use enumerate::{induced_distribution, Outcome};
pub use replay::{replay, replay_verified};

use crate::canvas::{CanvasError, MaskedSequence, Position, Span, TokenId, Vocab};
use crate::models::{draw_token, ConditionalModel, ModelError, PositionReport, QuerySpec, SampleSpec};
use crate::policy::{DecodePolicy, PolicyError, TokenChoice};
use crate::schedulers::{self, SchedulerError, Selection};
use crate::seed;
use crate::template::{new_canvas, Template};
use crate::trace::{DecodeTrace, DecodedCell, ExitReason, StepRecord};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Model(ModelError),
    #[error("scheduler made no progress: {0}")]
    NoProgress(SchedulerError),
    #[error("inconsistent trace: {0}")]
    InconsistentTrace(String),
    #[error(transparent)]
    Canvas(#[from] CanvasError),
    #[error(transparent)]
    InvalidPolicy(#[from] PolicyError),
    #[error("conditionals undefined: the filled cells have zero probability")]
    DegenerateConditional,
    #[error("posterior decoding needs a template with a prefilled answer")]
    MissingPrefill,
    #[error("posterior decoding needs sampled token choice")]
    NotSampled,
    #[error("model vocabulary has {model} tokens, configured vocabulary has {config}")]
    VocabMismatch { model: usize, config: u32 },
}

impl From<ModelError> for EngineError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::DegenerateConditional => EngineError::DegenerateConditional,
            e => EngineError::Model(e),
        }
    }
}

/// Outcome of the early-exit test for one model call.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExitDecision {
    /// Sum of the reported answer-cell entropies, in nats.
    pub hub: f64,
    pub exit: bool,
}

/// Computes H_UB over `answer_reports` and compares it strictly with
/// `gamma`.
pub fn maybe_early_exit(answer_reports: &[PositionReport], gamma: f64) -> ExitDecision {
    let hub: f64 = answer_reports.iter().map(|r| r.entropy).sum();
    ExitDecision { hub, exit: hub < gamma }
}

/// Where the next step may decode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Plan {
    pub window: Span,
    pub block_index: usize,
    pub answer_phase: bool,
}

/// Next window, or `None` when nothing is left to decode. After an early
/// exit only answer cells count.
pub(crate) fn plan(canvas: &MaskedSequence, template: Option<&Template>, block_size: usize, exited: bool) -> Option<Plan> {
    let whole = Span::new(0, canvas.len());
    let block_size = block_size.max(1);
    let (region, exclude, answer_phase) = match template {
        None => (whole, None, false),
        Some(t) => {
            let reasoning_left = !exited
                && canvas
                    .masked_positions(None)
                    .iter()
                    .any(|&p| !t.answer_span.contains(p));
            if reasoning_left {
                (whole, Some(t.answer_span), false)
            } else {
                (t.answer_span, None, true)
            }
        }
    };
    let window = schedulers::block_window_in(canvas, region, block_size, exclude);
    if window.is_empty() {
        return None;
    }
    Some(Plan {
        window,
        block_index: (window.start - region.start) / block_size,
        answer_phase,
    })
}

/// Reports whose cells the scheduler may pick.
pub(crate) fn candidates(reports: &[PositionReport], plan: &Plan, template: Option<&Template>) -> Vec<PositionReport> {
    reports
        .iter()
        .filter(|r| plan.window.contains(r.position))
        .filter(|r| plan.answer_phase || !template.is_some_and(|t| t.answer_span.contains(r.position)))
        .cloned()
        .collect()
}

/// Reports of masked answer cells; empty without a template.
pub(crate) fn answer_reports<'r>(reports: &'r [PositionReport], template: Option<&Template>) -> Vec<&'r PositionReport> {
    match template {
        None => Vec::new(),
        Some(t) => reports.iter().filter(|r| t.answer_span.contains(r.position)).collect(),
    }
}

pub(crate) fn select(policy: &DecodePolicy, candidates: &[PositionReport]) -> Result<Selection, EngineError> {
    schedulers::select(&policy.order, candidates).map_err(EngineError::NoProgress)
}

fn greedy_cell(report: &PositionReport) -> Result<DecodedCell, EngineError> {
    let &(token, logprob) = report
        .top
        .iter()
        .find(|&&(t, _)| Some(t) == report.argmax())
        .ok_or(EngineError::DegenerateConditional)?;
    Ok(DecodedCell {
        position: report.position,
        token,
        logprob,
        entropy: report.entropy,
    })
}

/// A decode session over one canvas.
pub struct Session<'a> {
    model: &'a dyn ConditionalModel,
    canvas: MaskedSequence,
    template: Option<Template>,
    policy: DecodePolicy,
    vocab: Vocab,
}

impl<'a> Session<'a> {
    pub fn new(
        model: &'a dyn ConditionalModel,
        canvas: MaskedSequence,
        template: Option<Template>,
        policy: DecodePolicy,
        vocab: Vocab,
    ) -> Result<Self, EngineError> {
        policy.validate()?;
        vocab.validate()?;
        if model.vocab_size() != vocab.size as usize {
            return Err(EngineError::VocabMismatch {
                model: model.vocab_size(),
                config: vocab.size,
            });
        }
        if let Some(t) = &template {
            t.validate(canvas.len())?;
        }
        canvas.validate_tokens(&vocab)?;
        Ok(Self {
            model,
            canvas,
            template,
            policy,
            vocab,
        })
    }

    /// Session on a fresh templated canvas.
    pub fn from_template(
        model: &'a dyn ConditionalModel,
        context: Vec<TokenId>,
        template: Template,
        length: usize,
        policy: DecodePolicy,
        vocab: Vocab,
    ) -> Result<Self, EngineError> {
        let canvas = new_canvas(context, &template, length)?;
        Self::new(model, canvas, Some(template), policy, vocab)
    }

    pub fn canvas(&self) -> &MaskedSequence {
        &self.canvas
    }

    fn query(&self, step: usize) -> QuerySpec {
        let mut q = QuerySpec::top(if self.model.samples_server_side() {
            self.policy.top_k
        } else {
            self.model.vocab_size().max(1)
        });
        if let TokenChoice::Sampled { temperature, seed: s } = self.policy.token_choice {
            if self.model.samples_server_side() {
                q.sample = Some(SampleSpec {
                    temperature,
                    seed: seed::session_seed(s, step as u64),
                });
            }
        }
        q
    }

    fn choose(&self, report: &PositionReport, rng: &mut ChaCha8Rng) -> Result<DecodedCell, EngineError> {
        match self.policy.token_choice {
            TokenChoice::Greedy => greedy_cell(report),
            TokenChoice::Sampled { temperature, .. } => {
                let token = if self.model.samples_server_side() {
                    report.sampled.ok_or_else(|| {
                        ModelError::Protocol(format!("no sampled token at position {}", report.position))
                    })?
                } else {
                    draw_token(report, temperature, rng).ok_or(EngineError::DegenerateConditional)?
                };
                let logprob = report.logprob_of(token).ok_or_else(|| {
                    ModelError::Protocol(format!("no log-prob for token {token} at position {}", report.position))
                })?;
                Ok(DecodedCell {
                    position: report.position,
                    token,
                    logprob,
                    entropy: report.entropy,
                })
            }
        }
    }

    /// Runs the loop to completion, early exit, or the step budget.
    pub fn decode(self) -> Result<(MaskedSequence, DecodeTrace), EngineError> {
        match self.decode_partial() {
            (canvas, trace, None) => Ok((canvas, trace)),
            (_, _, Some(e)) => Err(e),
        }
    }

    /// Like [`Session::decode`], but on failure also returns the canvas and
    /// trace as they stood before the failing step.
    pub fn decode_partial(mut self) -> (MaskedSequence, DecodeTrace, Option<EngineError>) {
        let mut trace = DecodeTrace::new();
        let err = self.run(&mut trace).err();
        (self.canvas, trace, err)
    }

    fn run(&mut self, trace: &mut DecodeTrace) -> Result<(), EngineError> {
        let max_steps = self.policy.max_steps.unwrap_or_else(|| self.canvas.masked_count());
        let mut rng = seed::rng(self.policy.token_choice.seed());
        let mut exited = false;
        let template = self.template.clone();
        let template = template.as_ref();
        loop {
            let Some(mut plan) = plan(&self.canvas, template, self.policy.block_size, exited) else {
                break;
            };
            if trace.nfe >= max_steps {
                trace.exit = ExitReason::MaxSteps;
                break;
            }
            let step = trace.steps.len();
            let reports = self.model.conditionals(&self.canvas, &self.query(step))?;
            let answer = answer_reports(&reports, template);
            let hub = (!answer.is_empty()).then(|| answer.iter().map(|r| r.entropy).sum::<f64>());
            if let (Some(gamma), Some(h), false) = (self.policy.early_exit_gamma, hub, plan.answer_phase) {
                if h < gamma {
                    log::debug!("early exit at step {step}: H_UB {h} < {gamma}");
                    exited = true;
                    trace.exit = ExitReason::EarlyExit(step);
                    plan = self::plan(&self.canvas, template, self.policy.block_size, true)
                        .expect("masked answer cells remain");
                }
            }
            let cands = candidates(&reports, &plan, template);
            let selection = select(&self.policy, &cands)?;
            let mut decoded = Vec::with_capacity(selection.positions.len());
            for &p in &selection.positions {
                let report = cands.iter().find(|r| r.position == p).expect("selected from candidates");
                decoded.push(self.choose(report, &mut rng)?);
            }
            for c in &decoded {
                self.canvas.fill(c.position, c.token)?;
            }
            trace.push(StepRecord {
                decoded,
                answer_hub: hub,
                block_index: plan.block_index,
            });
        }
        if exited {
            let skipped: Vec<Position> = self.canvas.masked_positions(None);
            for &p in &skipped {
                self.canvas.fill(p, self.vocab.pad_id)?;
            }
            trace.skipped = skipped;
        }
        Ok(())
    }

    /// Samples reasoning given the prefilled answer. Returns the reasoning
    /// span tokens and the trace.
    pub fn decode_posterior(self) -> Result<(Vec<TokenId>, DecodeTrace), EngineError> {
        let template = self.template.clone().ok_or(EngineError::MissingPrefill)?;
        let answer = template.prefilled_answer.clone().ok_or(EngineError::MissingPrefill)?;
        if !matches!(self.policy.token_choice, TokenChoice::Sampled { .. }) {
            return Err(EngineError::NotSampled);
        }
        let filled: Vec<Option<TokenId>> = answer.iter().map(|&t| Some(t)).collect();
        if self.canvas.slice(template.answer_span) != filled.as_slice() {
            return Err(EngineError::MissingPrefill);
        }
        let (seq, trace) = self.decode()?;
        let reasoning = seq
            .slice(template.reasoning_span)
            .iter()
            .map(|c| c.expect("decode fills every cell"))
            .collect();
        Ok((reasoning, trace))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ExactJointModel;
    use crate::policy::OrderPolicy;

    fn vocab(size: u32) -> Vocab {
        Vocab::new(size, 0, size - 1).unwrap()
    }

    fn correlated() -> ExactJointModel {
        ExactJointModel::from_probs(2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap()
    }

    #[test]
    fn one_shot_is_one_call() {
        let m = ExactJointModel::from_probs(3, 2, vec![1.0; 8]).unwrap();
        let s = Session::new(
            &m,
            MaskedSequence::new(3, vec![]).unwrap(),
            None,
            DecodePolicy::new(OrderPolicy::FixedK(3)),
            vocab(2),
        )
        .unwrap();
        let (seq, trace) = s.decode().unwrap();
        assert_eq!(trace.nfe, 1);
        assert_eq!(seq.masked_count(), 0);
        assert_eq!(trace.steps[0].decoded.len(), 3);
    }

    #[test]
    fn early_exit_rules() {
        let r = |e: f64| PositionReport {
            position: 0,
            entropy: e,
            top: vec![],
            queried: Default::default(),
            sampled: None,
        };
        assert!(maybe_early_exit(&[r(0.0), r(0.0)], 1e-9).exit);
        let d = maybe_early_exit(&[r(2f64.ln()), r(4f64.ln())], 3.0);
        assert!((d.hub - 2.0794).abs() < 1e-4);
        assert!(!maybe_early_exit(&[r(0.0)], 0.0).exit);
    }

    #[test]
    fn posterior_errors() {
        let m = correlated();
        let t = Template::new(Span::new(0, 1), vec![], Span::new(1, 2)).with_answer(vec![1]);
        let s = Session::from_template(&m, vec![], t.clone(), 2, DecodePolicy::new(OrderPolicy::LeftToRight), vocab(2)).unwrap();
        assert!(matches!(s.decode_posterior(), Err(EngineError::NotSampled)));
        let s = Session::from_template(
            &m,
            vec![],
            Template::new(Span::new(0, 1), vec![], Span::new(1, 2)),
            2,
            DecodePolicy::new(OrderPolicy::LeftToRight).sampled(1.0, 1),
            vocab(2),
        )
        .unwrap();
        assert!(matches!(s.decode_posterior(), Err(EngineError::MissingPrefill)));
        let (r, _) = Session::from_template(&m, vec![], t, 2, DecodePolicy::new(OrderPolicy::LeftToRight).sampled(1.0, 1), vocab(2))
            .unwrap()
            .decode_posterior()
            .unwrap();
        assert_eq!(r, vec![1]);
    }

    #[test]
    fn zero_probability_answer_is_degenerate() {
        let m = ExactJointModel::from_probs(2, 2, vec![0.5, 0.0, 0.5, 0.0]).unwrap();
        let t = Template::new(Span::new(0, 1), vec![], Span::new(1, 2)).with_answer(vec![1]);
        let s = Session::from_template(&m, vec![], t, 2, DecodePolicy::new(OrderPolicy::LeftToRight).sampled(1.0, 3), vocab(2)).unwrap();
        assert!(matches!(s.decode_posterior(), Err(EngineError::DegenerateConditional)));
    }

    #[test]
    fn max_steps_stops_early() {
        let m = ExactJointModel::from_probs(3, 2, vec![1.0; 8]).unwrap();
        let s = Session::new(
            &m,
            MaskedSequence::new(3, vec![]).unwrap(),
            None,
            DecodePolicy::new(OrderPolicy::LeftToRight).with_max_steps(2),
            vocab(2),
        )
        .unwrap();
        let (seq, trace) = s.decode().unwrap();
        assert_eq!(trace.exit, ExitReason::MaxSteps);
        assert_eq!(seq.masked_count(), 1);
    }

    #[test]
    fn vocab_must_match_the_model() {
        let m = correlated();
        let r = Session::new(&m, MaskedSequence::new(2, vec![]).unwrap(), None, DecodePolicy::new(OrderPolicy::LeftToRight), vocab(3));
        assert!(matches!(r, Err(EngineError::VocabMismatch { .. })));
    }
}
