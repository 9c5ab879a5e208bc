//! Brute-force reference computations over small dense joints. Written
//! independently of the library: plain loops over every outcome.

#![allow(dead_code)]

use rand::Rng;
use std::collections::BTreeMap;

/// Dense joint over `v^l` outcomes, row-major, first cell most significant.
#[derive(Clone, Debug)]
pub struct Dense {
    pub l: usize,
    pub v: usize,
    pub p: Vec<f64>,
}

impl Dense {
    pub fn new(l: usize, v: usize, mut p: Vec<f64>) -> Self {
        let z: f64 = p.iter().sum();
        for x in &mut p {
            *x /= z;
        }
        Self { l, v, p }
    }

    pub fn random<R: Rng>(rng: &mut R, l: usize, v: usize) -> Self {
        let n = v.pow(l as u32);
        let sparse = rng.gen_bool(0.3);
        let mut p: Vec<f64> = (0..n)
            .map(|_| if sparse && rng.gen_bool(0.4) { 0.0 } else { rng.gen::<f64>().powi(3) })
            .collect();
        if p.iter().all(|&x| x == 0.0) {
            p[0] = 1.0;
        }
        Self::new(l, v, p)
    }

    pub fn outcome(&self, mut idx: usize) -> Vec<u32> {
        let mut x = vec![0u32; self.l];
        for i in (0..self.l).rev() {
            x[i] = (idx % self.v) as u32;
            idx /= self.v;
        }
        x
    }

    pub fn outcomes(&self) -> impl Iterator<Item = (Vec<u32>, f64)> + '_ {
        (0..self.p.len()).map(|i| (self.outcome(i), self.p[i]))
    }

    pub fn model(&self) -> mdlm_core::models::ExactJointModel {
        mdlm_core::models::ExactJointModel::from_probs(self.l, self.v, self.p.clone()).unwrap()
    }

    /// p(x_pos | filled cells); `None` when the evidence has zero mass.
    pub fn conditional(&self, cells: &[Option<u32>], pos: usize) -> Option<Vec<f64>> {
        let mut m = vec![0.0; self.v];
        let mut z = 0.0;
        for (x, w) in self.outcomes() {
            if agrees(cells, &x) {
                m[x[pos] as usize] += w;
                z += w;
            }
        }
        (z > 0.0).then(|| m.iter().map(|a| a / z).collect())
    }

    /// Joint over the listed positions given the filled cells.
    pub fn joint_over(&self, cells: &[Option<u32>], positions: &[usize]) -> BTreeMap<Vec<u32>, f64> {
        let mut m = BTreeMap::new();
        let mut z = 0.0;
        for (x, w) in self.outcomes() {
            if agrees(cells, &x) && w > 0.0 {
                let key: Vec<u32> = positions.iter().map(|&p| x[p]).collect();
                *m.entry(key).or_insert(0.0) += w;
                z += w;
            }
        }
        for w in m.values_mut() {
            *w /= z;
        }
        m
    }

    /// Left-to-right argmax chain, ties to the smaller token.
    pub fn greedy_left_to_right(&self) -> Vec<u32> {
        let mut cells = vec![None; self.l];
        for p in 0..self.l {
            let c = self.conditional(&cells, p).unwrap();
            cells[p] = Some(argmax(&c));
        }
        cells.into_iter().map(Option::unwrap).collect()
    }
}

pub fn agrees(cells: &[Option<u32>], x: &[u32]) -> bool {
    cells.iter().zip(x).all(|(c, t)| c.map_or(true, |c| c == *t))
}

pub fn argmax(p: &[f64]) -> u32 {
    let mut best = 0;
    for i in 1..p.len() {
        if p[i] > p[best] {
            best = i;
        }
    }
    best as u32
}

pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

pub fn entropy_map(p: &BTreeMap<Vec<u32>, f64>) -> f64 {
    p.values().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

/// KL(p ‖ q) over maps; `None` when p has mass outside q's support.
pub fn kl_map(p: &BTreeMap<Vec<u32>, f64>, q: &BTreeMap<Vec<u32>, f64>) -> Option<f64> {
    let mut kl = 0.0;
    for (k, &a) in p {
        if a <= 0.0 {
            continue;
        }
        let b = q.get(k).copied().unwrap_or(0.0);
        if b <= 0.0 {
            return None;
        }
        kl += a * (a / b).ln();
    }
    Some(kl)
}

/// Product of the marginals of a joint over `k` positions.
pub fn product_of_marginals(joint: &BTreeMap<Vec<u32>, f64>, k: usize, v: usize) -> BTreeMap<Vec<u32>, f64> {
    let mut marg = vec![vec![0.0; v]; k];
    for (key, &w) in joint {
        for i in 0..k {
            marg[i][key[i] as usize] += w;
        }
    }
    let mut out = BTreeMap::new();
    let n = v.pow(k as u32);
    for mut idx in 0..n {
        let mut key = vec![0u32; k];
        for i in (0..k).rev() {
            key[i] = (idx % v) as u32;
            idx /= v;
        }
        let w: f64 = key.iter().enumerate().map(|(i, &t)| marg[i][t as usize]).product();
        if w > 0.0 {
            out.insert(key, w);
        }
    }
    out
}

/// Total variation between two distributions keyed by outcome.
pub fn tv(p: &BTreeMap<Vec<u32>, f64>, q: &BTreeMap<Vec<u32>, f64>) -> f64 {
    let mut keys: Vec<&Vec<u32>> = p.keys().chain(q.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys
        .into_iter()
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}
