//! Entropy and divergence helpers over finite distributions, in nats.

/// Shannon entropy `-Σ p ln p` with `0 ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> f64 {
    let h: f64 = probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    // Rounding can leave a one-hot distribution at -0.0 or -1e-17.
    h.max(0.0)
}

/// `KL(p ‖ q)`. Returns `None` when `p` puts mass where `q` has none.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Option<f64> {
    debug_assert_eq!(p.len(), q.len());
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return None;
            }
            kl += pi * (pi / qi).ln();
        }
    }
    Some(kl)
}

/// Normalizes `weights` in place and returns the original total.
pub fn normalize(weights: &mut [f64]) -> f64 {
    let z: f64 = weights.iter().sum();
    if z > 0.0 {
        for w in weights.iter_mut() {
            *w /= z;
        }
    }
    z
}

/// Numerically stable `ln Σ exp(x)`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Softmax of log-weights; `-inf` entries get zero mass.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&x| (x - lse).exp()).collect()
}

/// Tempers a distribution: `p_i^(1/T)` renormalized. `T = 1` is the identity.
pub fn temper(probs: &[f64], temperature: f64) -> Vec<f64> {
    if temperature == 1.0 {
        return probs.to_vec();
    }
    let logits: Vec<f64> = probs
        .iter()
        .map(|&p| if p > 0.0 { p.ln() / temperature } else { f64::NEG_INFINITY })
        .collect();
    softmax(&logits)
}
