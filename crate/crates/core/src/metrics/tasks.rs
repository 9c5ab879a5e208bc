//! Synthetic tasks with exact conditionals.
//!
//! Every instance carries its own sparse joint model, a templated starting
//! canvas and a gold answer.
//!
//! * `markov_suffix`: a five-step Markov chain with one random transition
//!   and deterministic ones elsewhere; the two answer cells are fixed
//!   functions of the chain. Once a few cells are known, most entropies
//!   collapse to zero, so thresholded parallel decoding saves calls.
//! * `noisy_copy`: reasoning cells are noisy copies of the context, with
//!   noise growing left to right; the answer copies two of the first three
//!   reasoning cells. The answer is settled long before the reasoning is.
//! * `sudoku`: 4×4 grids with some cells given as clues, weighted at
//!   random over all valid grids. Gold is the most probable completion.

use crate::canvas::{MaskedSequence, Span, TokenId, Vocab};
use crate::models::SupportJointModel;
use crate::seed;
use crate::template::{new_canvas, Template};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    MarkovSuffix,
    NoisyCopy,
    Sudoku,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::MarkovSuffix => "markov_suffix",
            TaskKind::NoisyCopy => "noisy_copy",
            TaskKind::Sudoku => "sudoku",
        })
    }
}

#[derive(Clone, Debug)]
pub struct TaskInstance {
    pub context: Vec<TokenId>,
    pub canvas: MaskedSequence,
    pub template: Template,
    pub gold: Vec<TokenId>,
    pub model: SupportJointModel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub vocab: Vocab,
    pub length: usize,
    pub template: Template,
}

const CONTENT: u32 = 4;
const DELIMITER: TokenId = 4;
const CHAIN_EOS: TokenId = 5;
const SUDOKU_FILLER: TokenId = 4;
const SUDOKU_CLUES: usize = 8;

impl SyntheticTask {
    pub fn new(kind: TaskKind) -> Self {
        match kind {
            TaskKind::MarkovSuffix | TaskKind::NoisyCopy => Self {
                kind,
                vocab: Vocab::new(6, CHAIN_EOS, CHAIN_EOS).expect("valid vocab"),
                length: 8,
                template: Template::new(Span::new(0, 5), vec![DELIMITER], Span::new(6, 8)),
            },
            TaskKind::Sudoku => Self {
                kind,
                vocab: Vocab::new(5, SUDOKU_FILLER, SUDOKU_FILLER).expect("valid vocab"),
                length: 16,
                template: Template::new(Span::new(0, 0), vec![], Span::new(0, 16)),
            },
        }
    }

    /// Instance drawn from `seed` alone.
    pub fn instance(&self, seed: u64) -> TaskInstance {
        let mut rng = seed::rng(seed);
        match self.kind {
            TaskKind::MarkovSuffix => self.markov(&mut rng),
            TaskKind::NoisyCopy => self.noisy_copy(&mut rng),
            TaskKind::Sudoku => self.sudoku(&mut rng),
        }
    }

    fn chain_instance(&self, context: Vec<TokenId>, support: Vec<(Vec<TokenId>, f64)>) -> TaskInstance {
        let model = SupportJointModel::new(self.length, self.vocab.size as usize, support).expect("task support is valid");
        let canvas = new_canvas(context.clone(), &self.template, self.length).expect("task layout is valid");
        let best = model.map_completion(&canvas).expect("support is non-empty");
        let gold = best[self.template.answer_span.start..self.template.answer_span.end].to_vec();
        TaskInstance {
            context,
            canvas,
            template: self.template.clone(),
            gold,
            model,
        }
    }

    fn markov<R: Rng>(&self, rng: &mut R) -> TaskInstance {
        let perm = |rng: &mut R| {
            let mut p: Vec<TokenId> = (0..CONTENT).collect();
            p.shuffle(rng);
            p
        };
        let mut starts: Vec<TokenId> = (0..CONTENT).collect();
        starts.shuffle(rng);
        let (a, b) = (starts[0], starts[1]);
        let branch_at = rng.gen_range(1..5usize);
        let steps: Vec<Vec<TokenId>> = (0..5).map(|_| perm(rng)).collect();
        // The alternative branch maps {a, b} onto the two tokens the main
        // branch does not reach, so the branch cell never collides.
        let main_image: Vec<TokenId> = {
            let mut x = a;
            let mut y = b;
            for s in steps.iter().take(branch_at).skip(1) {
                x = s[x as usize];
                y = s[y as usize];
            }
            vec![steps[branch_at][x as usize], steps[branch_at][y as usize]]
        };
        let mut others: Vec<TokenId> = (0..CONTENT).filter(|t| !main_image.contains(t)).collect();
        others.shuffle(rng);
        let f = perm(rng);
        let g = perm(rng);
        let mut support = Vec::new();
        for (start, w0) in [(a, 0.6), (b, 0.4)] {
            for (alt, w1) in [(false, 0.7), (true, 0.3)] {
                let mut x = vec![start];
                for (t, s) in steps.iter().enumerate().skip(1) {
                    let prev = x[t - 1];
                    let next = if t == branch_at && alt {
                        others[usize::from(start != a)]
                    } else {
                        s[prev as usize]
                    };
                    x.push(next);
                }
                x.push(DELIMITER);
                x.push(f[x[4] as usize]);
                x.push(g[x[2] as usize]);
                support.push((x, w0 * w1));
            }
        }
        self.chain_instance(Vec::new(), support)
    }

    fn noisy_copy<R: Rng>(&self, rng: &mut R) -> TaskInstance {
        let context: Vec<TokenId> = (0..5).map(|_| rng.gen_range(0..CONTENT)).collect();
        let j1 = rng.gen_range(0..2usize);
        let j2 = rng.gen_range(j1 + 1..3usize);
        let noise = |i: usize| 0.04 + 0.03 * i as f64;
        let mut support = Vec::with_capacity(1 << 10);
        for code in 0..CONTENT.pow(5) {
            let r: Vec<TokenId> = (0..5).map(|i| (code / CONTENT.pow(4 - i as u32)) % CONTENT).collect();
            let w: f64 = r
                .iter()
                .zip(&context)
                .enumerate()
                .map(|(i, (&x, &c))| if x == c { 1.0 - noise(i) } else { noise(i) / 3.0 })
                .product();
            let mut x = r.clone();
            x.push(DELIMITER);
            x.push(r[j1]);
            x.push(r[j2]);
            support.push((x, w));
        }
        self.chain_instance(context, support)
    }

    fn sudoku<R: Rng>(&self, rng: &mut R) -> TaskInstance {
        let support: Vec<(Vec<TokenId>, f64)> = sudoku_grids().iter().map(|g| (g.clone(), rng.gen::<f64>() + 0.05)).collect();
        let model = SupportJointModel::new(16, self.vocab.size as usize, support).expect("grids are valid");
        let target = model.support()[rng.gen_range(0..model.support().len())].0.clone();
        let mut cells: Vec<usize> = (0..16).collect();
        cells.shuffle(rng);
        let mut canvas = new_canvas(Vec::new(), &self.template, self.length).expect("task layout is valid");
        for &p in cells.iter().take(SUDOKU_CLUES) {
            canvas.fill(p, target[p]).expect("fresh cell");
        }
        let gold = model.map_completion(&canvas).expect("target is consistent");
        TaskInstance {
            context: Vec::new(),
            canvas,
            template: self.template.clone(),
            gold,
            model,
        }
    }
}

/// All 288 valid 4×4 grids, row-major, lexicographic.
pub fn sudoku_grids() -> &'static [Vec<TokenId>] {
    static GRIDS: OnceLock<Vec<Vec<TokenId>>> = OnceLock::new();
    GRIDS.get_or_init(|| {
        let mut out = Vec::new();
        let mut grid = vec![0; 16];
        fill_grid(&mut grid, 0, &mut out);
        out
    })
}

fn fill_grid(grid: &mut Vec<TokenId>, p: usize, out: &mut Vec<Vec<TokenId>>) {
    if p == 16 {
        out.push(grid.clone());
        return;
    }
    let (r, c) = (p / 4, p % 4);
    for v in 0..4 {
        let clash = (0..p).any(|q| {
            let (qr, qc) = (q / 4, q % 4);
            grid[q] == v && (qr == r || qc == c || (qr / 2 == r / 2 && qc / 2 == c / 2))
        });
        if !clash {
            grid[p] = v;
            fill_grid(grid, p + 1, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::info;
    use crate::models::exact::exact_marginals;

    #[test]
    fn there_are_288_grids() {
        assert_eq!(sudoku_grids().len(), 288);
    }

    #[test]
    fn instances_are_reproducible() {
        for kind in [TaskKind::MarkovSuffix, TaskKind::NoisyCopy, TaskKind::Sudoku] {
            let t = SyntheticTask::new(kind);
            let a = t.instance(42);
            let b = t.instance(42);
            assert_eq!(a.gold, b.gold);
            assert_eq!(a.canvas, b.canvas);
            assert_eq!(a.model, b.model);
            assert_eq!(a.gold.len(), t.template.answer_span.len());
        }
    }

    #[test]
    fn markov_entropies_are_zero_or_large() {
        let t = SyntheticTask::new(TaskKind::MarkovSuffix);
        for s in 0..50 {
            let inst = t.instance(s);
            assert_eq!(inst.model.support().len(), 4);
            for (_, probs) in exact_marginals(&inst.model, &inst.canvas).unwrap() {
                let h = info::entropy(&probs);
                assert!(h < 1e-12 || h > 0.6, "entropy {h}");
            }
        }
    }

    #[test]
    fn noisy_copy_gold_is_the_clean_copy() {
        let t = SyntheticTask::new(TaskKind::NoisyCopy);
        for s in 0..20 {
            let inst = t.instance(s);
            assert!(inst.gold.iter().all(|g| inst.context[..3].contains(g)));
        }
    }
}
