//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use common::{entropy, entropy_map, kl_map, product_of_marginals, tv, Dense};
use mdlm_core::engine::induced_distribution;
use mdlm_core::metrics::{benchmark, run_instance, SyntheticTask, TaskKind};
use mdlm_core::models::exact::{exact_conditionals, exact_joint_conditional, DEFAULT_ENUMERATION_CAP};
use mdlm_core::models::{train_tabular_mdlm, QuerySpec, TrainConfig};
use mdlm_core::scoring::{auc, chain_filter_score};
use mdlm_core::seed;
use mdlm_core::{new_canvas, DecodePolicy, DecodeTrace, MaskedSequence, OrderPolicy, Session, Span, Template, Vocab};
use rand::seq::SliceRandom;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::collections::BTreeMap;
use std::time::{Duration, Instant};

type Outcome = Result<String, String>;

fn vocab(v: usize) -> Vocab {
    Vocab::new(v as u32, 0, 0).unwrap()
}

/// Outcome with positive mass, drawn by weight.
fn draw<R: Rng>(d: &Dense, rng: &mut R) -> Vec<u32> {
    let mut u = rng.gen::<f64>();
    for (i, &w) in d.p.iter().enumerate() {
        if u < w {
            return d.outcome(i);
        }
        u -= w;
    }
    d.outcome(d.p.iter().rposition(|&w| w > 0.0).unwrap())
}

/// Random consistent evidence and a non-empty set A of masked cells.
fn random_case<R: Rng>(rng: &mut R) -> (Dense, Vec<Option<u32>>, Vec<usize>) {
    let l = rng.gen_range(1..=4);
    let v = rng.gen_range(2..=4);
    let d = Dense::random(rng, l, v);
    let x = draw(&d, rng);
    let keep = rng.gen_range(0..l);
    let cells: Vec<Option<u32>> = x
        .iter()
        .enumerate()
        .map(|(i, &t)| (i != keep && rng.gen_bool(0.35)).then_some(t))
        .collect();
    let a: Vec<usize> = (0..l).filter(|&i| cells[i].is_none() && (i == keep || rng.gen_bool(0.7))).collect();
    (d, cells, a)
}

fn kl_bound() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::rng(0xA1);
    let cases = 2000;
    let mut worst = f64::INFINITY;
    let mut tight = 0.0f64;
    for _ in 0..cases {
        let (d, cells, a) = random_case(&mut rng);
        let joint = d.joint_over(&cells, &a);
        let kl = kl_map(&joint, &product_of_marginals(&joint, a.len(), d.v)).ok_or("product misses joint support")?;
        let seq = MaskedSequence::from_cells(cells.clone(), vec![]).map_err(|e| e.to_string())?;
        let reports = exact_conditionals(&d.model(), &seq, &QuerySpec::top(d.v)).map_err(|e| e.to_string())?;
        let bound: f64 = reports.iter().filter(|r| a.contains(&r.position)).map(|r| r.entropy).sum();
        let margin = bound - kl;
        worst = worst.min(margin);
        if bound > 0.0 {
            tight = tight.max(kl / bound);
        }
        if margin < -1e-9 {
            return Err(format!("KL {kl} exceeds entropy sum {bound}"));
        }
    }
    let t = start.elapsed();
    if t > Duration::from_secs(60) {
        return Err(format!("took {t:?}"));
    }
    Ok(format!("{cases} cases, min margin {worst:.3e}, max KL/bound {tight:.3}, {t:.2?}"))
}

fn hub_bound() -> Outcome {
    let mut rng = seed::rng(0xA2);
    let cases = 2000;
    let mut worst = f64::INFINITY;
    for _ in 0..cases {
        let (d, cells, a) = random_case(&mut rng);
        let joint = d.joint_over(&cells, &a);
        let h_joint = entropy_map(&joint);
        let h_sum: f64 = a.iter().map(|&p| entropy(&d.conditional(&cells, p).unwrap())).sum();
        let seq = MaskedSequence::from_cells(cells, vec![]).map_err(|e| e.to_string())?;
        let lib = exact_joint_conditional(&d.model(), &seq, &a, DEFAULT_ENUMERATION_CAP).map_err(|e| e.to_string())?;
        if (lib.entropy() - h_joint).abs() > 1e-9 || (lib.marginal_entropy_sum() - h_sum).abs() > 1e-9 {
            return Err("library entropies disagree with enumeration".into());
        }
        worst = worst.min(h_sum - h_joint);
        if h_joint > h_sum + 1e-9 {
            return Err(format!("joint entropy {h_joint} > marginal sum {h_sum}"));
        }
    }
    Ok(format!("{cases} cases, min slack {worst:.3e}"))
}

fn any_order_consistency() -> Outcome {
    let mut rng = seed::rng(0xA3);
    let mut worst = 0.0f64;
    let mut runs = 0;
    for _ in 0..150 {
        let l = rng.gen_range(1..=4);
        let v = rng.gen_range(2..=3);
        let d = Dense::random(&mut rng, l, v);
        let m = d.model();
        let truth: BTreeMap<Vec<u32>, f64> = d.outcomes().filter(|(_, w)| *w > 0.0).collect();
        let init = MaskedSequence::new(l, vec![]).unwrap();
        let orders = [
            OrderPolicy::LeftToRight,
            OrderPolicy::AnyOrderMinEntropy,
            OrderPolicy::FixedK(1),
            OrderPolicy::Med { lambda: 0.0, k_max: 3 },
            OrderPolicy::Med { lambda: f64::INFINITY, k_max: 1 },
            OrderPolicy::ArMed { lambda: 0.0, k_max: 3 },
            OrderPolicy::ArMed { lambda: f64::INFINITY, k_max: 1 },
        ];
        for order in orders {
            for block in [usize::MAX, 1, 2] {
                let p = DecodePolicy::new(order).sampled(1.0, 0).with_block(block);
                let got = induced_distribution(&m, &init, None, &p, &vocab(v), 1_000_000).map_err(|e| e.to_string())?;
                let dist = tv(&got, &truth);
                worst = worst.max(dist);
                runs += 1;
                if dist >= 1e-9 {
                    return Err(format!("{} on L={l}, V={v}: TV {dist:.3e}", p.label()));
                }
            }
        }
        // A fixed random order σ, chained through the library conditionals.
        let mut sigma: Vec<usize> = (0..l).collect();
        sigma.shuffle(&mut rng);
        let mut chained: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        let mut stack = vec![(vec![None; l], 1.0, 0usize)];
        while let Some((cells, w, i)) = stack.pop() {
            if i == l {
                chained.insert(cells.iter().map(|c: &Option<u32>| c.unwrap()).collect(), w);
                continue;
            }
            let seq = MaskedSequence::from_cells(cells.clone(), vec![]).unwrap();
            let q = QuerySpec::top(v);
            let r = exact_conditionals(&m, &seq, &q).map_err(|e| e.to_string())?;
            let r = r.iter().find(|r| r.position == sigma[i]).unwrap();
            for &(t, lp) in &r.top {
                let mut next = cells.clone();
                next[sigma[i]] = Some(t);
                stack.push((next, w * lp.exp(), i + 1));
            }
        }
        let dist = tv(&chained, &truth);
        worst = worst.max(dist);
        runs += 1;
        if dist >= 1e-9 {
            return Err(format!("fixed order {sigma:?}: TV {dist:.3e}"));
        }
    }
    Ok(format!("{runs} policy/model pairs, max TV {worst:.3e}"))
}

fn posterior_correctness() -> Outcome {
    let start = Instant::now();
    let draws = 100_000;
    let t = Template::new(Span::new(0, 2), vec![], Span::new(2, 3));
    let mut rng = seed::rng(0xA4);
    let mut ps = Vec::new();
    for model_index in 0..10u64 {
        let v = 3;
        let d = Dense::random(&mut rng, 3, v);
        let m = d.model();
        let a = draw(&d, &mut rng)[2];
        let posterior = d.joint_over(&[None, None, Some(a)], &[0, 1]);
        let tpl = t.clone().with_answer(vec![a]);
        let order = if model_index % 2 == 0 { OrderPolicy::AnyOrderMinEntropy } else { OrderPolicy::LeftToRight };
        let mut counts: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
        for i in 0..draws {
            let policy = DecodePolicy::new(order).sampled(1.0, seed::session_seed(model_index, i));
            let (r, _) = Session::from_template(&m, vec![], tpl.clone(), 3, policy, vocab(v))
                .and_then(|s| s.decode_posterior())
                .map_err(|e| e.to_string())?;
            *counts.entry(r).or_insert(0) += 1;
        }
        let mut stat = 0.0;
        let mut bins = 0;
        for (k, &n) in &counts {
            if !posterior.contains_key(k) {
                return Err(format!("draw {k:?} has zero posterior mass"));
            }
            let _ = n;
        }
        for (k, &p) in &posterior {
            let e = p * draws as f64;
            let o = *counts.get(k).unwrap_or(&0) as f64;
            stat += (o - e).powi(2) / e;
            bins += 1;
        }
        let p = if bins > 1 {
            1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat)
        } else {
            1.0
        };
        ps.push(p);
    }
    let t = start.elapsed();
    let min = ps.iter().copied().fold(f64::INFINITY, f64::min);
    let detail = format!(
        "10 models × {draws} draws, p-values [{}], {t:.2?}",
        ps.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>().join(", ")
    );
    if min > 0.01 && t < Duration::from_secs(300) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn med_equivalences() -> Outcome {
    let mut rng = seed::rng(0xA5);
    let mut steps_checked = 0;
    for i in 0..100u64 {
        let l = rng.gen_range(2..=6);
        let v = rng.gen_range(2..=3);
        let d = Dense::random(&mut rng, l, v);
        let d = Dense::new(l, v, d.p.iter().map(|w| w + 1e-3).collect());
        let m = d.model();
        let init = MaskedSequence::new(l, vec![]).unwrap();
        let run = |p: DecodePolicy| -> Result<DecodeTrace, String> {
            Session::new(&m, init.clone(), None, p, vocab(v)).and_then(|s| s.decode()).map(|x| x.1).map_err(|e| e.to_string())
        };
        let json = |t: &DecodeTrace| serde_json::to_string(t).unwrap();
        let sample = |p: DecodePolicy| if i % 2 == 0 { p } else { p.sampled(1.0, i) };

        let k_max = rng.gen_range(1..=l);
        let med0 = run(sample(DecodePolicy::new(OrderPolicy::Med { lambda: 0.0, k_max })))?;
        let k1 = run(sample(DecodePolicy::new(OrderPolicy::FixedK(1))))?;
        if json(&med0) != json(&k1) {
            return Err(format!("model {i}: MED(λ=0) differs from k=1"));
        }

        let b = rng.gen_range(1..=l);
        let inf = run(sample(DecodePolicy::new(OrderPolicy::Med { lambda: f64::INFINITY, k_max: b }).with_block(b)))?;
        if inf.nfe != l.div_ceil(b) || inf.steps.iter().any(|s| s.decoded.len() != b.min(l - s.block_index * b)) {
            return Err(format!("model {i}: MED(λ=∞) took {} steps for {} blocks", inf.nfe, l.div_ceil(b)));
        }

        let lambda = rng.gen_range(0.05..1.5);
        for order in [OrderPolicy::Med { lambda, k_max }, OrderPolicy::ArMed { lambda, k_max }] {
            let t = run(sample(DecodePolicy::new(order)))?;
            for s in &t.steps {
                steps_checked += 1;
                let pos: Vec<usize> = s.positions().collect();
                if matches!(order, OrderPolicy::ArMed { .. }) && pos.windows(2).any(|w| w[1] != w[0] + 1) {
                    return Err(format!("model {i}: AR-MED step {pos:?} not contiguous"));
                }
                let fallback = s.decoded.iter().any(|c| c.entropy >= lambda);
                if fallback {
                    if s.decoded.len() != 1 {
                        return Err(format!("model {i}: fallback step decodes {} cells", s.decoded.len()));
                    }
                } else if s.entropy_sum() > lambda * k_max as f64 {
                    return Err(format!("model {i}: step entropy {} > λ·k_max", s.entropy_sum()));
                }
            }
        }
    }
    Ok(format!("100 models, {steps_checked} thresholded steps checked"))
}

fn med_speedup() -> Outcome {
    let task = SyntheticTask::new(TaskKind::MarkovSuffix);
    let med = DecodePolicy::new(OrderPolicy::Med { lambda: 0.2, k_max: 8 });
    let k1 = DecodePolicy::new(OrderPolicy::FixedK(1));
    let n = 500;
    let (report, results) = benchmark(&task, &[k1, med], n, 0xA6, 4).map_err(|e| e.to_string())?;
    let same = results[0].iter().zip(&results[1]).filter(|(a, b)| a.output == b.output).count();
    let speedup = report.rows[0].nfe / report.rows[1].nfe;
    let detail = format!(
        "NFE k=1 {:.2}, MED {:.2}, speedup {speedup:.2}×, identical outputs {same}/{n}",
        report.rows[0].nfe, report.rows[1].nfe
    );
    if speedup >= 1.5 && same == n {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn early_exit() -> Outcome {
    let task = SyntheticTask::new(TaskKind::NoisyCopy);
    let base = DecodePolicy::new(OrderPolicy::AnyOrderMinEntropy);
    let exit = base.with_early_exit(0.1);
    let n = 500;
    let (report, results) = benchmark(&task, &[base, exit], n, 0xA7, 4).map_err(|e| e.to_string())?;
    let (a, b) = (&report.rows[0], &report.rows[1]);
    let reduction = 1.0 - b.nfe / a.nfe;
    let flips = results[0].iter().zip(&results[1]).filter(|(x, y)| x.correct != y.correct).count();
    let detail = format!(
        "NFE {:.2} → {:.2} ({:.1}% fewer), acc {:.3} → {:.3}, per-instance correctness changes {flips}",
        a.nfe,
        b.nfe,
        100.0 * reduction,
        a.acc,
        b.acc
    );
    if reduction >= 0.2 && flips == 0 && a.acc == b.acc {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn chain_filtering() -> Outcome {
    // Uniform independent reasoning cells; the answer is their sum mod V
    // with probability 0.9, otherwise uniform.
    let (v, l) = (3usize, 4usize);
    let d = Dense::new(
        l,
        v,
        (0..v.pow(l as u32))
            .map(|i| {
                let x = Dense { l, v, p: vec![] }.outcome(i);
                let f = (x[0] + x[1] + x[2]) % v as u32;
                if x[3] == f {
                    0.9 + 0.1 / v as f64
                } else {
                    0.1 / v as f64
                }
            })
            .collect(),
    );
    let m = d.model();
    let t = Template::new(Span::new(0, 3), vec![], Span::new(3, 4));
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for i in 0..v.pow(3) {
        let r = Dense { l: 3, v, p: vec![] }.outcome(i);
        let implied = (r[0] + r[1] + r[2]) % v as u32;
        for gold in 0..v as u32 {
            let s = chain_filter_score(&m, &[], &t, l, &r, &[gold], 1).map_err(|e| e.to_string())?;
            if gold == implied {
                pos.push(s.mean_score);
            } else {
                neg.push(s.mean_score);
            }
        }
    }
    let a = auc(&pos, &neg);
    let detail = format!("{} consistent, {} inconsistent chains, AUC {a}", pos.len(), neg.len());
    if a == 1.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn tabular_training() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::rng(0xA8);
    let joints = [
        Dense::new(2, 2, vec![0.4, 0.1, 0.2, 0.3]),
        {
            let d = Dense::random(&mut rng, 2, 3);
            Dense::new(2, 3, d.p.iter().map(|w| w + 0.05).collect())
        },
    ];
    let mut worst = 0.0f64;
    for d in &joints {
        let data = d.model().sample(&[], 100_000, &mut rng).map_err(|e| e.to_string())?;
        let m = train_tabular_mdlm(&data, d.v, &TrainConfig::new(5, 0xA9)).map_err(|e| e.to_string())?;
        for p in 0..2 {
            let other = 1 - p;
            let patterns = std::iter::once(None).chain((0..d.v as u32).map(Some));
            for o in patterns {
                let mut cells = vec![None; 2];
                cells[other] = o;
                let truth = d.conditional(&cells, p).unwrap();
                let learned = m.conditional(&cells, p);
                for (a, b) in truth.iter().zip(&learned) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    let t = start.elapsed();
    let detail = format!("2 joints, 10^5 samples each, max abs error {worst:.4}, {t:.2?}");
    if worst < 0.02 && t < Duration::from_secs(120) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn reproducibility() -> Outcome {
    let task = SyntheticTask::new(TaskKind::Sudoku);
    let policies = [
        DecodePolicy::new(OrderPolicy::FixedK(2)).sampled(1.0, 5),
        DecodePolicy::new(OrderPolicy::Med { lambda: 0.3, k_max: 4 }).sampled(0.8, 6),
    ];
    let render = |jobs: usize| -> Result<(String, Vec<u8>), String> {
        let (report, results) = benchmark(&task, &policies, 40, 0xAA, jobs).map_err(|e| e.to_string())?;
        let mut jsonl = Vec::new();
        for r in results.iter().flatten() {
            r.trace.write_jsonl(&mut jsonl).map_err(|e| e.to_string())?;
        }
        Ok((report.to_csv().map_err(|e| e.to_string())?, jsonl))
    };
    let a = render(1)?;
    let b = render(1)?;
    let c = render(4)?;
    let single = run_instance(&task, &policies[0], 0xAA, 3).map_err(|e| e.to_string())?;
    let again = run_instance(&task, &policies[0], 0xAA, 3).map_err(|e| e.to_string())?;
    let canvas = new_canvas(vec![], &task.template, task.length).map_err(|e| e.to_string())?;
    if a == b && a == c && single == again && canvas.len() == task.length {
        Ok(format!("CSV {} bytes, JSONL {} bytes identical across runs and thread counts", a.0.len(), a.1.len()))
    } else {
        Err("outputs differ between runs".into())
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("factorization KL bound", kl_bound),
        ("answer entropy upper bound", hub_bound),
        ("any-order consistency", any_order_consistency),
        ("posterior correctness", posterior_correctness),
        ("MED equivalences", med_equivalences),
        ("MED speedup on markov_suffix", med_speedup),
        ("early exit on noisy_copy", early_exit),
        ("chain filtering AUC", chain_filtering),
        ("tabular training", tabular_training),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
