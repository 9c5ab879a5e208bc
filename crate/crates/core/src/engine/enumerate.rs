//! Exact distribution over final sequences induced by a decode policy.
//!
//! Walks the same planning, early-exit and selection code as the decode
//! loop, branching over every token the policy could choose. Greedy choice
//! follows one branch; sampled choice branches over the tempered support of
//! each selected cell, independently within a step.

use super::{answer_reports, candidates, plan, select, EngineError};
use crate::canvas::{MaskedSequence, TokenId, Vocab};
use crate::info;
use crate::models::{ConditionalModel, ModelError, QuerySpec};
use crate::policy::{DecodePolicy, TokenChoice};
use crate::template::Template;
use std::collections::BTreeMap;

/// Final cell values; cells left masked by the step budget hold `mask_id`.
pub type Outcome = Vec<TokenId>;

struct State {
    canvas: MaskedSequence,
    exited: bool,
    nfe: usize,
    prob: f64,
}

/// Enumerates the decision tree of `policy` from `canvas`. `cap` bounds the
/// number of tree nodes visited.
pub fn induced_distribution(
    model: &dyn ConditionalModel,
    canvas: &MaskedSequence,
    template: Option<&Template>,
    policy: &DecodePolicy,
    vocab: &Vocab,
    cap: usize,
) -> Result<BTreeMap<Outcome, f64>, EngineError> {
    policy.validate()?;
    let max_steps = policy.max_steps.unwrap_or_else(|| canvas.masked_count());
    let query = QuerySpec::top(model.vocab_size());
    let mut out: BTreeMap<Outcome, f64> = BTreeMap::new();
    let mut stack = vec![State {
        canvas: canvas.clone(),
        exited: false,
        nfe: 0,
        prob: 1.0,
    }];
    let mut visited = 0usize;
    while let Some(state) = stack.pop() {
        visited += 1;
        if visited > cap {
            return Err(ModelError::CapExceeded {
                size: visited as u128,
                cap: cap as u128,
            }
            .into());
        }
        let next = plan(&state.canvas, template, policy.block_size, state.exited);
        let Some(mut step_plan) = next.filter(|_| state.nfe < max_steps) else {
            let outcome: Outcome = state
                .canvas
                .cells()
                .iter()
                .enumerate()
                .map(|(p, c)| match c {
                    Some(t) => *t,
                    None if state.exited && !template.is_some_and(|t| t.answer_span.contains(p)) => vocab.pad_id,
                    None => vocab.mask_id,
                })
                .collect();
            *out.entry(outcome).or_insert(0.0) += state.prob;
            continue;
        };
        let reports = model.conditionals(&state.canvas, &query)?;
        let answer = answer_reports(&reports, template);
        let mut exited = state.exited;
        if let Some(gamma) = policy.early_exit_gamma {
            let hub: f64 = answer.iter().map(|r| r.entropy).sum();
            if !answer.is_empty() && !step_plan.answer_phase && hub < gamma {
                exited = true;
                step_plan = plan(&state.canvas, template, policy.block_size, true).expect("masked answer cells remain");
            }
        }
        let cands = candidates(&reports, &step_plan, template);
        let selection = select(policy, &cands)?;
        let options: Vec<(usize, Vec<(TokenId, f64)>)> = selection
            .positions
            .iter()
            .map(|&p| {
                let r = cands.iter().find(|r| r.position == p).expect("selected from candidates");
                let choices = match policy.token_choice {
                    TokenChoice::Greedy => r.argmax().map(|t| vec![(t, 1.0)]).unwrap_or_default(),
                    TokenChoice::Sampled { temperature, .. } => {
                        let probs: Vec<f64> = r.top.iter().map(|&(_, lp)| lp.exp()).collect();
                        let mut tempered = info::temper(&probs, temperature);
                        info::normalize(&mut tempered);
                        r.top
                            .iter()
                            .zip(tempered)
                            .filter(|(_, q)| *q > 0.0)
                            .map(|(&(t, _), q)| (t, q))
                            .collect()
                    }
                };
                (p, choices)
            })
            .collect();
        if options.iter().any(|(_, c)| c.is_empty()) {
            return Err(EngineError::DegenerateConditional);
        }
        let mut idx = vec![0usize; options.len()];
        loop {
            let mut child = state.canvas.clone();
            let mut prob = state.prob;
            for ((p, choices), &i) in options.iter().zip(&idx) {
                child.fill(*p, choices[i].0)?;
                prob *= choices[i].1;
            }
            stack.push(State {
                canvas: child,
                exited,
                nfe: state.nfe + 1,
                prob,
            });
            let mut k = options.len();
            loop {
                if k == 0 {
                    break;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < options[k].1.len() {
                    break;
                }
                idx[k] = 0;
            }
            if idx.iter().all(|&i| i == 0) {
                break;
            }
        }
    }
    Ok(out)
}
