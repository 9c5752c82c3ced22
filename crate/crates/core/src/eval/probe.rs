use crate::error::{Error, Result};
use crate::tensor::{NodeId, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lr: 0.5,
            epochs: 300,
            l2: 1e-4,
        }
    }
}

/// One logistic regression per label over frozen embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    /// `d x L`.
    pub weights: Tensor,
    /// `L`.
    pub bias: Tensor,
}

impl ClassifierHead {
    pub fn zeros(dim: usize, labels: usize) -> Self {
        Self {
            weights: Tensor::zeros(vec![dim, labels]),
            bias: Tensor::zeros(vec![labels]),
        }
    }

    pub fn n_labels(&self) -> usize {
        self.bias.len()
    }

    /// Sigmoid probabilities, `n x L`.
    pub fn predict(&self, embeddings: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let (w, b) = (tape.constant(self.weights.clone()), tape.constant(self.bias.clone()));
        let x = tape.constant(embeddings.clone());
        let z = tape.matmul(x, w)?;
        let z = tape.add_row(z, b)?;
        let mut out = tape.value(z).clone();
        out.data_mut().iter_mut().for_each(|v| *v = crate::tensor::sigmoid(*v));
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFit {
    pub head: ClassifierHead,
    /// Training loss before each step, plus the final loss.
    pub losses: Vec<f64>,
    /// Labels with one class in the training rows; they never enter the loss.
    pub masked: Vec<usize>,
}

/// Masked mean sigmoid cross-entropy plus `l2 / 2 * ||W||^2`, recorded on
/// `tape` from nodes for the embeddings, weights and bias.
pub fn probe_loss(
    tape: &mut Tape,
    x: NodeId,
    w: NodeId,
    b: NodeId,
    targets: &Tensor,
    mask: &[f64],
    l2: f64,
) -> Result<NodeId> {
    let z = tape.matmul(x, w)?;
    let z = tape.add_row(z, b)?;
    let bce = tape.sigmoid_cross_entropy(z, targets, mask)?;
    if l2 == 0.0 {
        return Ok(bce);
    }
    let reg = tape.sum_squares(w)?;
    let reg = tape.scale(reg, l2 / 2.0)?;
    tape.add(bce, reg)
}

/// Full-batch gradient descent from a zero-initialized head.
pub fn train_linear_probe(embeddings: &Tensor, labels: &[Vec<u8>], cfg: &ProbeConfig) -> Result<ProbeFit> {
    let (n, d) = embeddings.dims2("train_linear_probe")?;
    if n == 0 || labels.len() != n {
        return Err(Error::UndefinedMetric("linear probe needs labelled items".into()));
    }
    let l = labels[0].len();
    if labels.iter().any(|r| r.len() != l) {
        return Err(Error::Dimension {
            op: "train_linear_probe",
            left: vec![n, l],
            right: labels.iter().map(Vec::len).collect(),
        });
    }
    let mut mask = vec![1.0; l];
    let mut masked = Vec::new();
    for j in 0..l {
        let pos = labels.iter().filter(|r| r[j] != 0).count();
        if pos == 0 || pos == n {
            mask[j] = 0.0;
            masked.push(j);
        }
    }
    if masked.len() == l {
        return Err(Error::UndefinedMetric("no label has both classes in the probe set".into()));
    }
    let targets = Tensor::new(
        vec![n, l],
        labels.iter().flat_map(|r| r.iter().map(|&y| f64::from(y != 0))).collect(),
    )?;

    let mut head = ClassifierHead::zeros(d, l);
    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    for step in 0..=cfg.epochs {
        let mut tape = Tape::new();
        let x = tape.constant(embeddings.clone());
        let w = tape.param(head.weights.clone());
        let b = tape.param(head.bias.clone());
        let loss = probe_loss(&mut tape, x, w, b, &targets, &mask, cfg.l2)?;
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::Divergence { epoch: step, loss: value });
        }
        losses.push(value);
        if step == cfg.epochs {
            break;
        }
        tape.backward(loss)?;
        for (p, id) in [(&mut head.weights, w), (&mut head.bias, b)] {
            let g = tape.grad(id).expect("param grad");
            p.data_mut().iter_mut().zip(g).for_each(|(v, g)| *v -= cfg.lr * g);
        }
    }
    Ok(ProbeFit { head, losses, masked })
}
