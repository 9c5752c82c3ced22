//! Independent reference implementations used as test oracles. They follow
//! the textbook definitions directly. The permutation test reuses the
//! crate AUC, which is itself checked against pair counting.
#![allow(dead_code)]

use x2ct_core::rng::SplitMix64;
use x2ct_core::tensor::Tensor;

pub fn random_matrix(rng: &mut SplitMix64, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

pub fn random_unit_rows(rng: &mut SplitMix64, rows: usize, cols: usize) -> Tensor {
    let mut t = random_matrix(rng, rows, cols);
    for row in t.data_mut().chunks_mut(cols) {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|x| *x /= norm);
    }
    t
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// Symmetric InfoNCE by explicit loops:
/// `-1/2 sum_i [log softmax_k(a_i.b_k / tau)_i + log softmax_k(b_i.a_k / tau)_i]`,
/// divided by n for the mean.
pub fn info_nce_loops(a: &Tensor, b: &Tensor, tau: f64, mean: bool) -> f64 {
    let n = a.shape()[0];
    let mut total = 0.0;
    for i in 0..n {
        let mut z_ab = 0.0;
        let mut z_ba = 0.0;
        for k in 0..n {
            z_ab += (dot(a.row(i), b.row(k)) / tau).exp();
            z_ba += (dot(b.row(i), a.row(k)) / tau).exp();
        }
        let pos = dot(a.row(i), b.row(i)) / tau;
        total += (z_ab.ln() - pos) + (z_ba.ln() - pos);
    }
    let total = total / 2.0;
    if mean {
        total / n as f64
    } else {
        total
    }
}

pub fn x2ct_loops(c: &Tensor, r: &Tensor, x: &Tensor, w: [f64; 3], tau: f64, mean: bool) -> f64 {
    w[0] * info_nce_loops(c, r, tau, mean) + w[1] * info_nce_loops(x, r, tau, mean) + w[2] * info_nce_loops(x, c, tau, mean)
}

fn psi(pos: f64, neg: f64) -> f64 {
    if pos > neg {
        1.0
    } else if pos == neg {
        0.5
    } else {
        0.0
    }
}

/// Pair counting over every (positive, negative) pair.
pub fn auc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
    let mut hits = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                hits += psi(scores[i], scores[j]);
                pairs += 1.0;
            }
        }
    }
    hits / pairs
}

/// Average precision from explicit ranks: an item's rank counts items with
/// a higher score, or an equal score and a lower index.
pub fn average_precision_brute(scores: &[f64], labels: &[u8]) -> f64 {
    let n = scores.len();
    let ahead = |i: usize, j: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
    let mut total = 0.0;
    let mut n_pos = 0.0;
    for i in 0..n {
        if labels[i] != 1 {
            continue;
        }
        n_pos += 1.0;
        let rank = (0..n).filter(|&j| ahead(i, j)).count() + 1;
        let pos_at_or_above = (0..n).filter(|&j| labels[j] == 1 && (j == i || ahead(i, j))).count();
        total += pos_at_or_above as f64 / rank as f64;
    }
    total / n_pos
}

/// DeLong covariance from O(n^2) structural components.
pub fn delong_naive(a: &[f64], b: &[f64], labels: &[u8]) -> [[f64; 2]; 2] {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    let (m, n) = (pos.len() as f64, neg.len() as f64);
    let comps = |s: &[f64]| {
        let v10: Vec<f64> = pos.iter().map(|&i| neg.iter().map(|&j| psi(s[i], s[j])).sum::<f64>() / n).collect();
        let v01: Vec<f64> = neg.iter().map(|&j| pos.iter().map(|&i| psi(s[i], s[j])).sum::<f64>() / m).collect();
        (v10, v01)
    };
    let cov = |x: &[f64], y: &[f64]| {
        let k = x.len() as f64;
        let mx = x.iter().sum::<f64>() / k;
        let my = y.iter().sum::<f64>() / k;
        let mut s = 0.0;
        for t in 0..x.len() {
            s += (x[t] - mx) * (y[t] - my);
        }
        s / (k - 1.0)
    };
    let (a10, a01) = comps(a);
    let (b10, b01) = comps(b);
    let e = |x10: &[f64], y10: &[f64], x01: &[f64], y01: &[f64]| cov(x10, y10) / m + cov(x01, y01) / n;
    [
        [e(&a10, &a10, &a01, &a01), e(&a10, &b10, &a01, &b01)],
        [e(&b10, &a10, &b01, &a01), e(&b10, &b10, &b01, &b01)],
    ]
}

/// Paired permutation test of the AUC difference: each item's two scores
/// are swapped with probability 1/2; returns the fraction of draws whose
/// absolute difference reaches the observed one.
pub fn permutation_p(a: &[f64], b: &[f64], labels: &[u8], draws: usize, seed: u64) -> f64 {
    let observed = (auc_pairs(a, labels) - auc_pairs(b, labels)).abs();
    let mut rng = SplitMix64::new(seed);
    let mut extreme = 0usize;
    let (mut pa, mut pb) = (a.to_vec(), b.to_vec());
    for _ in 0..draws {
        for i in 0..a.len() {
            if rng.bernoulli(0.5) {
                pa[i] = b[i];
                pb[i] = a[i];
            } else {
                pa[i] = a[i];
                pb[i] = b[i];
            }
        }
        let d = (x2ct_core::eval::auc(&pa, labels).unwrap() - x2ct_core::eval::auc(&pb, labels).unwrap()).abs();
        if d >= observed - 1e-12 {
            extreme += 1;
        }
    }
    extreme as f64 / draws as f64
}

/// Paired scores for a two-model comparison: `labels` balanced at random,
/// model a a noisy score, model b a noisier score sharing part of a's noise.
pub fn paired_scores(seed: u64, n: usize, gap: f64) -> (Vec<f64>, Vec<f64>, Vec<u8>) {
    let mut rng = SplitMix64::new(seed);
    let mut gauss = move || {
        // Box-Muller.
        let u1 = 1.0 - rng.next_f64();
        let u2 = rng.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for &y in &labels {
        let shared = gauss();
        let y = f64::from(y);
        a.push(y + shared + 0.5 * gauss());
        b.push((1.0 - gap) * y + shared + 0.5 * gauss());
    }
    (a, b, labels)
}
