use std::collections::HashMap;

use super::{Embedding, EmbeddingSet, Linear, Modality, Parameterized, NORM_EPS};
use crate::error::Result;
use crate::phantom::LabelSpace;
use crate::rng::SplitMix64;
use crate::tensor::{NodeId, Tape, Tensor};

/// Template vocabulary: one token per label name, one `no <label>` bigram per
/// label, plus `is`, `present` and a bare `no`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_label_space(space: &LabelSpace) -> Self {
        let mut tokens: Vec<String> = space.names().iter().map(|n| n.to_lowercase()).collect();
        tokens.extend(space.names().iter().map(|n| format!("no {}", n.to_lowercase())));
        tokens.extend(["is", "present", "no"].map(String::from));
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Lowercase, split on whitespace, trim punctuation. `no` followed by a
    /// label name counts as the bigram token only. Unknown words are dropped.
    pub fn counts(&self, text: &str) -> Vec<f64> {
        let words: Vec<String> = text
            .split_whitespace()
            .map(|w| {
                w.trim_matches(|c: char| !(c.is_alphanumeric() || c == '_'))
                    .to_lowercase()
            })
            .filter(|w| !w.is_empty())
            .collect();
        let mut counts = vec![0.0; self.tokens.len()];
        let mut i = 0;
        while i < words.len() {
            if words[i] == "no" && i + 1 < words.len() {
                if let Some(&j) = self.index.get(&format!("no {}", words[i + 1])) {
                    counts[j] += 1.0;
                    i += 2;
                    continue;
                }
            }
            if let Some(&j) = self.index.get(&words[i]) {
                counts[j] += 1.0;
            }
            i += 1;
        }
        counts
    }

    pub fn count_matrix<S: AsRef<str>>(&self, texts: &[S]) -> Tensor {
        let mut data = Vec::with_capacity(texts.len() * self.len());
        for t in texts {
            data.extend(self.counts(t.as_ref()));
        }
        Tensor::new(vec![texts.len(), self.len()], data).expect("sized")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportEncoder {
    pub vocab: Vocab,
    pub proj: Linear,
}

impl ReportEncoder {
    pub fn init(space: &LabelSpace, embed_dim: usize, rng: &mut SplitMix64) -> Self {
        let vocab = Vocab::from_label_space(space);
        let proj = Linear::init(vocab.len(), embed_dim, rng);
        Self { vocab, proj }
    }

    pub fn embed_dim(&self) -> usize {
        self.proj.fan_out()
    }

    /// Tape forward from a count matrix; `params` as returned by `bind`.
    pub fn forward(&self, tape: &mut Tape, params: &[NodeId], counts: NodeId) -> Result<NodeId> {
        let y = Linear::forward(tape, params[0], params[1], counts)?;
        tape.l2_normalize_rows(y, NORM_EPS)
    }

    pub fn encode_batch<S: AsRef<str>>(&self, ids: Vec<String>, texts: &[S]) -> Result<EmbeddingSet> {
        self.encode_counts(ids, &self.vocab.count_matrix(texts))
    }

    /// Embeds precomputed count rows (`n x vocab`).
    pub fn encode_counts(&self, ids: Vec<String>, counts: &Tensor) -> Result<EmbeddingSet> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let counts = tape.constant(counts.clone());
        let out = self.forward(&mut tape, &params, counts)?;
        EmbeddingSet::new(Modality::R, ids, tape.value(out).clone())
    }

    pub fn encode(&self, id: &str, text: &str) -> Result<Embedding> {
        Ok(self.encode_batch(vec![id.to_string()], &[text])?.get(0))
    }
}

impl Parameterized for ReportEncoder {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("report.w".into(), &self.proj.weight),
            ("report.b".into(), &self.proj.bias),
        ]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("report.w".into(), &mut self.proj.weight),
            ("report.b".into(), &mut self.proj.bias),
        ]
    }
}
