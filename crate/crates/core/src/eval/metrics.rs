use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 1-based ranks with tied values sharing the mean of their positions.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share rank (i + j) / 2 + 1.
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn split_classes(scores: &[f64], labels: &[u8], op: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            op: "auc",
            left: vec![scores.len()],
            right: vec![labels.len()],
        });
    }
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &y)| y != 0).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &y)| y == 0).map(|(s, _)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::UndefinedMetric(format!("{op} needs both classes")));
    }
    Ok((pos, neg))
}

/// Mann-Whitney AUC with midranks: the probability that a random positive
/// outscores a random negative, ties counting one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = split_classes(scores, labels, "auc")?;
    let ranks = midranks(scores);
    let m = pos.len() as f64;
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &y)| y != 0).map(|(r, _)| r).sum();
    Ok((rank_sum - m * (m + 1.0) / 2.0) / (m * neg.len() as f64))
}

/// Average precision: mean over positives of the precision at each
/// positive's rank, ranking by descending score with ties in index order.
pub fn pr_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            op: "pr_auc",
            left: vec![scores.len()],
            right: vec![labels.len()],
        });
    }
    let n_pos = labels.iter().filter(|&&y| y != 0).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("pr_auc needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] != 0 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / n_pos as f64)
}

/// Standard normal CDF, Hart's double-precision rational approximation in
/// West's arrangement (absolute error around 1e-15):
///
/// * `|x| < 7.07106781186547`: `exp(-x^2/2) P(|x|) / Q(|x|)` with
///   `P = [3.52624965998911e-2, 0.700383064443688, 6.37396220353165,
///   33.912866078383, 112.079291497871, 221.213596169931, 220.206867912376]`
///   and `Q = [8.83883476483184e-2, 1.75566716318264, 16.064177579207,
///   86.7807322029461, 296.564248779674, 637.333633378831,
///   793.826512519948, 440.413735824752]` (highest degree first).
/// * otherwise a continued fraction `exp(-x^2/2) / (|x| + 1/(|x| + 2/(|x| +
///   3/(|x| + 4/(|x| + 0.65))))) / 2.506628274631`.
/// * `|x| > 37`: 0 or 1.
pub fn normal_cdf(x: f64) -> f64 {
    const P: [f64; 7] = [
        3.52624965998911e-2,
        0.700383064443688,
        6.37396220353165,
        33.912866078383,
        112.079291497871,
        221.213596169931,
        220.206867912376,
    ];
    const Q: [f64; 8] = [
        8.83883476483184e-2,
        1.75566716318264,
        16.064177579207,
        86.7807322029461,
        296.564248779674,
        637.333633378831,
        793.826512519948,
        440.413735824752,
    ];
    if x.is_nan() {
        return f64::NAN;
    }
    let a = x.abs();
    let tail = if a > 37.0 {
        0.0
    } else {
        let e = (-a * a / 2.0).exp();
        if a < 7.071_067_811_865_47 {
            let p = P.iter().fold(0.0, |acc, c| acc * a + c);
            let q = Q.iter().fold(0.0, |acc, c| acc * a + c);
            e * p / q
        } else {
            let mut b = a + 0.65;
            for k in [4.0, 3.0, 2.0, 1.0] {
                b = a + k / b;
            }
            e / b / 2.506_628_274_631
        }
    };
    if x > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatTestResult {
    pub auc_a: f64,
    pub auc_b: f64,
    pub z: f64,
    pub p_two_tailed: f64,
}

/// Structural components of one score vector: `(auc, v10, v01)`.
fn structural(scores: &[f64], labels: &[u8]) -> (f64, Vec<f64>, Vec<f64>) {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &y)| y != 0).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &y)| y == 0).map(|(s, _)| *s).collect();
    let (m, n) = (pos.len() as f64, neg.len() as f64);
    let (tx, ty) = (midranks(&pos), midranks(&neg));
    let mut combined = pos.clone();
    combined.extend_from_slice(&neg);
    let tz = midranks(&combined);
    let (tz_pos, tz_neg) = tz.split_at(pos.len());
    let auc = (tz_pos.iter().sum::<f64>() - m * (m + 1.0) / 2.0) / (m * n);
    let v10 = tz_pos.iter().zip(&tx).map(|(z, x)| (z - x) / n).collect();
    let v01 = tz_neg.iter().zip(&ty).map(|(z, y)| 1.0 - (z - y) / m).collect();
    (auc, v10, v01)
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0)
}

/// DeLong covariance of the two AUC estimates, `[[var_a, cov], [cov,
/// var_b]]`, from midrank structural components. Also returns both AUCs.
pub fn delong_covariance(scores_a: &[f64], scores_b: &[f64], labels: &[u8]) -> Result<([f64; 2], [[f64; 2]; 2])> {
    if scores_a.len() != scores_b.len() {
        return Err(Error::Dimension {
            op: "delong_test",
            left: vec![scores_a.len()],
            right: vec![scores_b.len()],
        });
    }
    let (pos, neg) = split_classes(scores_a, labels, "delong_test")?;
    if pos.len() < 2 || neg.len() < 2 {
        return Err(Error::UndefinedMetric("delong_test needs two items per class".into()));
    }
    let (auc_a, v10a, v01a) = structural(scores_a, labels);
    let (auc_b, v10b, v01b) = structural(scores_b, labels);
    let (m, n) = (pos.len() as f64, neg.len() as f64);
    let entry = |x10: &[f64], y10: &[f64], x01: &[f64], y01: &[f64]| {
        covariance(x10, y10) / m + covariance(x01, y01) / n
    };
    let s_ab = entry(&v10a, &v10b, &v01a, &v01b);
    let cov = [
        [entry(&v10a, &v10a, &v01a, &v01a), s_ab],
        [s_ab, entry(&v10b, &v10b, &v01b, &v01b)],
    ];
    Ok(([auc_a, auc_b], cov))
}

/// Two-tailed DeLong test for two correlated AUCs on the same labels.
pub fn delong_test(scores_a: &[f64], scores_b: &[f64], labels: &[u8]) -> Result<StatTestResult> {
    let ([auc_a, auc_b], s) = delong_covariance(scores_a, scores_b, labels)?;
    let var = s[0][0] + s[1][1] - 2.0 * s[0][1];
    let (z, p) = if var > 0.0 {
        let z = (auc_a - auc_b) / var.sqrt();
        (z, (2.0 * normal_cdf(-z.abs())).min(1.0))
    } else {
        (0.0, 1.0)
    };
    Ok(StatTestResult {
        auc_a,
        auc_b,
        z,
        p_two_tailed: p,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMetric {
    pub label: String,
    /// `None` when the label has a single class in this split.
    pub auc: Option<f64>,
    pub pr_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroMetrics {
    pub per_label: Vec<LabelMetric>,
    pub macro_auc: f64,
    pub macro_pr_auc: f64,
    pub skipped: Vec<String>,
}

/// Unweighted mean of per-label AUC and PR-AUC over labels that have both
/// classes. `scores` is `n x L`; `labels` holds one row per item.
pub fn macro_metrics(scores: &Tensor, labels: &[Vec<u8>], names: &[String]) -> Result<MacroMetrics> {
    let (n, l) = scores.dims2("macro_metrics")?;
    if labels.len() != n || names.len() != l || labels.iter().any(|r| r.len() != l) {
        return Err(Error::Dimension {
            op: "macro_metrics",
            left: scores.shape().to_vec(),
            right: vec![labels.len(), names.len()],
        });
    }
    let mut per_label = Vec::with_capacity(l);
    let mut skipped = Vec::new();
    for (j, name) in names.iter().enumerate() {
        let col: Vec<f64> = (0..n).map(|i| scores.data()[i * l + j]).collect();
        let y: Vec<u8> = labels.iter().map(|r| r[j]).collect();
        let metric = match auc(&col, &y) {
            Ok(a) => LabelMetric {
                label: name.clone(),
                auc: Some(a),
                pr_auc: Some(pr_auc(&col, &y)?),
            },
            Err(Error::UndefinedMetric(_)) => {
                skipped.push(name.clone());
                LabelMetric {
                    label: name.clone(),
                    auc: None,
                    pr_auc: None,
                }
            }
            Err(e) => return Err(e),
        };
        per_label.push(metric);
    }
    let used: Vec<&LabelMetric> = per_label.iter().filter(|m| m.auc.is_some()).collect();
    if used.is_empty() {
        return Err(Error::UndefinedMetric("no label has both classes".into()));
    }
    let k = used.len() as f64;
    let macro_auc = used.iter().map(|m| m.auc.unwrap()).sum::<f64>() / k;
    let macro_pr_auc = used.iter().map(|m| m.pr_auc.unwrap()).sum::<f64>() / k;
    Ok(MacroMetrics {
        per_label,
        macro_auc,
        macro_pr_auc,
        skipped,
    })
}
