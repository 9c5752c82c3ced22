use std::collections::HashMap;
use std::fmt;

use super::unit_rows;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    XtoC,
    XtoR,
    CtoR,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::XtoC => "X->C",
            Direction::XtoR => "X->R",
            Direction::CtoR => "C->R",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalResult {
    pub k: usize,
    pub recall: f64,
    pub direction: Direction,
    pub n_queries: usize,
}

/// Gallery position of each query id.
pub fn match_by_ids(query_ids: &[String], gallery_ids: &[String]) -> Result<Vec<usize>> {
    let index: HashMap<&str, usize> = gallery_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    query_ids
        .iter()
        .map(|q| {
            index
                .get(q.as_str())
                .copied()
                .ok_or_else(|| Error::format("retrieval", format!("no gallery item matches query {q}")))
        })
        .collect()
}

/// 0-based rank of each query's true match under cosine similarity: the
/// number of gallery items scoring higher, plus equal-scoring items at a
/// lower index.
pub fn match_ranks(queries: &Tensor, gallery: &Tensor, true_match: &[usize]) -> Result<Vec<usize>> {
    let (nq, d) = queries.dims2("topk_recall")?;
    let (ng, dg) = gallery.dims2("topk_recall")?;
    if d != dg || true_match.len() != nq {
        return Err(Error::Dimension {
            op: "topk_recall",
            left: queries.shape().to_vec(),
            right: gallery.shape().to_vec(),
        });
    }
    if let Some(&bad) = true_match.iter().find(|&&t| t >= ng) {
        return Err(Error::IndexOutOfRange {
            op: "topk_recall",
            index: bad,
            size: ng,
        });
    }
    let (q, g) = (unit_rows(queries), unit_rows(gallery));
    let ranks = q
        .rows()
        .zip(true_match)
        .map(|(qr, &t)| {
            let sims: Vec<f64> = g.rows().map(|gr| dot(qr, gr)).collect();
            let st = sims[t];
            sims.iter()
                .enumerate()
                .filter(|&(j, &s)| s > st || (s == st && j < t))
                .count()
        })
        .collect();
    Ok(ranks)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn recall_at(ranks: &[usize], k: usize) -> f64 {
    ranks.iter().filter(|&&r| r < k).count() as f64 / ranks.len() as f64
}

pub fn topk_recall(
    queries: &Tensor,
    gallery: &Tensor,
    true_match: &[usize],
    k: usize,
    direction: Direction,
) -> Result<RetrievalResult> {
    let ng = gallery.shape().first().copied().unwrap_or(0);
    if k == 0 || k > ng {
        return Err(Error::IndexOutOfRange {
            op: "topk_recall",
            index: k,
            size: ng,
        });
    }
    if true_match.is_empty() {
        return Err(Error::UndefinedMetric("retrieval with no queries".into()));
    }
    let ranks = match_ranks(queries, gallery, true_match)?;
    Ok(RetrievalResult {
        k,
        recall: recall_at(&ranks, k),
        direction,
        n_queries: ranks.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_ranks_first() {
        let g = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]]).unwrap();
        let q = Tensor::from_rows(&[vec![0.0, 2.0]]).unwrap();
        let r = topk_recall(&q, &g, &[1], 1, Direction::XtoC).unwrap();
        assert_eq!(r.recall, 1.0);
        assert_eq!(r.n_queries, 1);
    }

    #[test]
    fn ties_favor_lower_index() {
        let g = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let q = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(match_ranks(&q, &g, &[0, 1]).unwrap(), vec![0, 1]);
    }

    #[test]
    fn k_bounds_and_full_gallery() {
        let g = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let q = Tensor::from_rows(&[vec![0.3, -1.0], vec![-1.0, 0.2]]).unwrap();
        assert!(topk_recall(&q, &g, &[0, 1], 0, Direction::XtoR).is_err());
        assert!(topk_recall(&q, &g, &[0, 1], 3, Direction::XtoR).is_err());
        assert!(topk_recall(&q, &g, &[0, 5], 1, Direction::XtoR).is_err());
        assert_eq!(topk_recall(&q, &g, &[0, 1], 2, Direction::XtoR).unwrap().recall, 1.0);
    }

    #[test]
    fn ids_resolve_or_fail() {
        let g = vec!["b".to_string(), "a".to_string()];
        assert_eq!(match_by_ids(&["a".into(), "b".into()], &g).unwrap(), vec![1, 0]);
        assert!(match_by_ids(&["c".into()], &g).is_err());
    }
}
