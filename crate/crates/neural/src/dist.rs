//! Categorical and Bernoulli factors: log-probabilities, entropies and
//! their logit gradients.

use rand::{Rng, RngCore};

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z = logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() + m;
    logits.iter().map(|l| l - z).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-probability and entropy of class `k`. Adds the gradient of
/// `a * log p_k + b * H` with respect to the logits into `dl`.
pub fn categorical_term(logits: &[f64], k: usize, a: f64, b: f64, dl: &mut [f64]) -> (f64, f64) {
    let lp = log_softmax(logits);
    let p: Vec<f64> = lp.iter().map(|x| x.exp()).collect();
    let h = -p.iter().zip(&lp).map(|(p, l)| if *p > 0.0 { p * l } else { 0.0 }).sum::<f64>();
    for j in 0..logits.len() {
        let hot = if j == k { 1.0 } else { 0.0 };
        let dh = if p[j] > 0.0 { -p[j] * (lp[j] + h) } else { 0.0 };
        dl[j] += a * (hot - p[j]) + b * dh;
    }
    (lp[k], h)
}

/// Same as [`categorical_term`] for one sigmoid logit; returns
/// `(log p, H, d/dlogit)`.
pub fn bernoulli_term(logit: f64, bit: bool, a: f64, b: f64) -> (f64, f64, f64) {
    let p = sigmoid(logit);
    let (lp1, lp0) = (-softplus(-logit), -softplus(logit));
    let h = -(p * lp1 + (1.0 - p) * lp0);
    let target = if bit { 1.0 } else { 0.0 };
    let d = a * (target - p) + b * (-logit * p * (1.0 - p));
    (if bit { lp1 } else { lp0 }, h, d)
}

pub fn sample_categorical(logits: &[f64], rng: &mut dyn RngCore) -> usize {
    let p = softmax(logits);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    // rounding left a sliver of mass past the end
    p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

/// First index of the maximum.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (k, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = k;
        }
    }
    best
}

pub fn sample_bernoulli(logit: f64, rng: &mut dyn RngCore) -> bool {
    rng.gen::<f64>() < sigmoid(logit)
}
