use super::unit_rows;
use crate::encoders::ReportEncoder;
use crate::error::{Error, Result};
use crate::phantom::LabelSpace;
use crate::tensor::Tensor;

/// `("<Label> is present.", "No <label>.")`, matching the report templates.
pub fn prompt_pair(label: &str) -> (String, String) {
    let mut chars = label.chars();
    let capital = match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    };
    (format!("{capital} is present."), format!("No {}.", label.to_lowercase()))
}

/// Two-way softmax of `(s_pos, s_neg) / tau`, written so that swapping the
/// prompts yields exactly `1 - score`.
fn pair_softmax(s_pos: f64, s_neg: f64, tau: f64) -> f64 {
    let d = (s_pos - s_neg) / tau;
    let small = |x: f64| {
        let e = (-x).exp();
        e / (1.0 + e)
    };
    if d >= 0.0 {
        1.0 - small(d)
    } else {
        small(-d)
    }
}

/// Scores `n x L` from image embeddings and per-label prompt embeddings
/// (`L x d` each). Similarities are cosines.
pub fn zero_shot_from_prompts(images: &Tensor, positive: &Tensor, negative: &Tensor, tau: f64) -> Result<Tensor> {
    let (n, d) = images.dims2("zero_shot_scores")?;
    let (l, dp) = positive.dims2("zero_shot_scores")?;
    if dp != d || negative.shape() != positive.shape() {
        return Err(Error::Dimension {
            op: "zero_shot_scores",
            left: images.shape().to_vec(),
            right: positive.shape().to_vec(),
        });
    }
    if !(tau > 0.0) {
        return Err(Error::config("tau", "must be positive"));
    }
    let (x, p, q) = (unit_rows(images), unit_rows(positive), unit_rows(negative));
    let cos = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    let mut out = Vec::with_capacity(n * l);
    for xi in x.rows() {
        for (pl, ql) in p.rows().zip(q.rows()) {
            out.push(pair_softmax(cos(xi, pl), cos(xi, ql), tau));
        }
    }
    Tensor::new(vec![n, l], out)
}

pub fn zero_shot_scores(images: &Tensor, space: &LabelSpace, report: &ReportEncoder, tau: f64) -> Result<Tensor> {
    let (pos, neg): (Vec<String>, Vec<String>) = space.names().iter().map(|n| prompt_pair(n)).unzip();
    let ids: Vec<String> = space.names().to_vec();
    let p = report.encode_batch(ids.clone(), &pos)?.vectors;
    let q = report.encode_batch(ids, &neg)?.vectors;
    zero_shot_from_prompts(images, &p, &q, tau)
}
